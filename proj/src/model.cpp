#include "smart/model.hpp"

#include <cmath>

#include "smart/errors.hpp"
#include "smart/tokens.hpp"

namespace smart {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(std::string("model.") + field + " must be positive");
  };
  positive(n_enc_layers, "n_enc_layers");
  positive(n_dec_layers, "n_dec_layers");
  positive(d, "d");
  positive(heads, "heads");
  positive(d_ff, "d_ff");
  positive(vocab_size, "vocab_size");
  positive(region_feature_dim, "region_feature_dim");
  if (d % heads != 0) {
    throw ConfigError("model.heads: d=" + std::to_string(d) + " is not divisible by H=" +
                      std::to_string(heads));
  }
  if (d % 2 != 0) throw ConfigError("model.d must be even for sinusoidal encodings");
  if (d_ff < d) throw ConfigError("model.d_ff must be >= model.d");
  if (max_seq_len < 2) throw ConfigError("model.max_seq_len must be >= 2");
  if (vocab_size <= static_cast<std::size_t>(tokens::kEos)) {
    throw ConfigError("model.vocab_size must cover the reserved tokens");
  }
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) {
    throw ConfigError("model.dropout_keep must be in (0, 1]");
  }
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.d = 512;
  c.heads = 8;
  c.d_ff = 2048;
  c.region_feature_dim = 2048;
  return c;
}

Tensor positional_encoding(std::size_t max_len, std::size_t d) {
  if (d % 2 != 0) throw ConfigError("positional encoding needs an even width, got d=" + std::to_string(d));
  std::vector<double> pe(max_len * d);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe[pos * d + 2 * i] = std::sin(angle);
      pe[pos * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor({max_len, d}, std::move(pe));
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p) {
  if (x.cols() != p.v.rows() || p.v.cols() != p.u.rows() || p.u.cols() != x.cols()) {
    throw ShapeError("feed_forward: x " + shape_to_string(x.shape()) + ", v " +
                     shape_to_string(p.v.shape()) + ", u " + shape_to_string(p.u.shape()));
  }
  return add_row(matmul(relu(add_row(matmul(x, p.v), p.b)), p.u), p.c);
}

Tensor add_norm(const Tensor& x, const Tensor& sublayer_out, const NormParams& p) {
  return layer_norm(add(x, sublayer_out), p.gain, p.bias);
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d;
  const std::size_t ff = d * c.d_ff + c.d_ff + c.d_ff * d + d;
  const std::size_t norm = 2 * d;
  const std::size_t attn = 4 * d * d;
  const std::size_t enc_layer = attn + memory_param_count(c).scalars + norm + ff + norm;
  const std::size_t dec_layer = 2 * attn + 3 * norm + ff;
  return c.region_feature_dim * d + d + c.vocab_size * d + c.n_enc_layers * enc_layer +
         c.n_dec_layers * dec_layer + d * c.vocab_size + c.vocab_size;
}

MemoryCount memory_param_count(const ModelConfig& c) {
  return memory_param_count(c.d, c.heads, c.memory_slots);
}

namespace {

NormParams make_norm(ParameterSet& ps, const std::string& prefix, std::size_t d) {
  return {ps.add(prefix + ".gain", Tensor::filled({d}, 1.0)),
          ps.add(prefix + ".bias", Tensor::zeros({d}))};
}

FeedForwardParams make_ff(ParameterSet& ps, const std::string& prefix, std::size_t d,
                          std::size_t d_ff, Rng& rng) {
  FeedForwardParams p;
  p.v = ps.add(prefix + ".v", glorot_uniform(d, d_ff, rng));
  p.b = ps.add(prefix + ".b", Tensor::zeros({d_ff}));
  p.u = ps.add(prefix + ".u", glorot_uniform(d_ff, d, rng));
  p.c = ps.add(prefix + ".c", Tensor::zeros({d}));
  return p;
}

Tensor first_rows(const Tensor& table, std::size_t n) {
  const auto cols = table.cols();
  std::vector<double> v(table.data().begin(), table.data().begin() + static_cast<long>(n * cols));
  return Tensor({n, cols}, std::move(v));
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.d;
  region_proj_ = params_.add("region.w", glorot_uniform(config_.region_feature_dim, d, rng));
  region_bias_ = params_.add("region.b", Tensor::zeros({d}));
  {
    std::vector<double> v(config_.vocab_size * d);
    for (double& x : v) x = rng.normal();
    word_embedding_ = params_.add("embed.words", Tensor({config_.vocab_size, d}, std::move(v)));
  }
  for (std::size_t i = 0; i < config_.n_enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    EncoderLayer layer;
    layer.self_attn = init_multi_head(params_, p + ".attn", d, config_.heads,
                                      config_.memory_slots, rng);
    layer.norm1 = make_norm(params_, p + ".norm1", d);
    layer.ff = make_ff(params_, p + ".ff", d, config_.d_ff, rng);
    layer.norm2 = make_norm(params_, p + ".norm2", d);
    encoder_.push_back(std::move(layer));
  }
  for (std::size_t i = 0; i < config_.n_dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    DecoderLayer layer;
    layer.self_attn = init_multi_head(params_, p + ".self", d, config_.heads, 0, rng);
    layer.norm1 = make_norm(params_, p + ".norm1", d);
    layer.cross_attn = init_multi_head(params_, p + ".cross", d, config_.heads, 0, rng);
    layer.norm2 = make_norm(params_, p + ".norm2", d);
    layer.ff = make_ff(params_, p + ".ff", d, config_.d_ff, rng);
    layer.norm3 = make_norm(params_, p + ".norm3", d);
    decoder_.push_back(std::move(layer));
  }
  {
    // Glorot scaled by d^-1/2: initial logits have variance ~2/(d+V), so the
    // first-step loss sits close to ln V.
    Tensor w = glorot_uniform(d, config_.vocab_size, rng);
    for (double& x : w.mutable_data()) x /= std::sqrt(static_cast<double>(d));
    out_proj_ = params_.add("out.w", w);
  }
  out_bias_ = params_.add("out.b", Tensor::zeros({config_.vocab_size}));
  positions_ = positional_encoding(config_.max_seq_len, d);
}

Tensor Model::encode(const Tensor& regions, std::span<const std::uint8_t> valid,
                     ForwardContext& ctx) const {
  if (regions.rank() != 2 || regions.rows() == 0) {
    throw InputError("encode: empty region set");
  }
  if (regions.cols() != config_.region_feature_dim) {
    throw ShapeError("encode: region features have dim " + std::to_string(regions.cols()) +
                     ", model expects " + std::to_string(config_.region_feature_dim));
  }
  const std::size_t n = regions.rows();
  AttentionMask mask;
  const AttentionMask* mask_ptr = nullptr;
  if (!valid.empty()) {
    if (valid.size() != n) throw ShapeError("encode: validity flags do not match region count");
    bool any = false;
    for (auto v : valid) any = any || v;
    if (!any) throw InputError("encode: empty region set (all regions are padding)");
    mask = AttentionMask::key_padding(n, valid);
    mask_ptr = &mask;
  }
  const double keep = config_.dropout_keep;
  Tensor x = add_row(matmul(regions, region_proj_), region_bias_);
  for (const auto& layer : encoder_) {
    Tensor a = multi_head_attention(x, x, layer.self_attn, mask_ptr);
    x = add_norm(x, dropout(a, keep, ctx.mode, ctx.next_dropout_key()), layer.norm1);
    Tensor f = feed_forward(x, layer.ff);
    x = add_norm(x, dropout(f, keep, ctx.mode, ctx.next_dropout_key()), layer.norm2);
  }
  return x;
}

Tensor Model::decode(std::span<const int> inputs, const Tensor& memory,
                     std::span<const std::uint8_t> memory_valid, ForwardContext& ctx) const {
  const std::size_t t = inputs.size();
  if (t == 0 || inputs[0] != tokens::kBos) throw InputError("decode: input must start with BOS");
  if (t > config_.max_seq_len) {
    throw InputError("decode: sequence length " + std::to_string(t) + " exceeds max_seq_len " +
                     std::to_string(config_.max_seq_len));
  }
  if (memory.rank() != 2 || memory.cols() != config_.d) {
    throw ShapeError("decode: encoder output " + shape_to_string(memory.shape()) +
                     " does not match d=" + std::to_string(config_.d));
  }
  AttentionMask self_mask = AttentionMask::causal(t);
  std::vector<std::uint8_t> token_valid(t);
  bool padded = false;
  for (std::size_t i = 0; i < t; ++i) {
    token_valid[i] = inputs[i] != tokens::kPad;
    padded = padded || !token_valid[i];
  }
  if (padded) self_mask = self_mask & AttentionMask::key_padding(t, token_valid);

  AttentionMask cross_mask;
  const AttentionMask* cross_ptr = nullptr;
  if (!memory_valid.empty()) {
    if (memory_valid.size() != memory.rows()) {
      throw ShapeError("decode: memory validity flags do not match encoder output rows");
    }
    cross_mask = AttentionMask::key_padding(t, memory_valid);
    cross_ptr = &cross_mask;
  }

  const double keep = config_.dropout_keep;
  Tensor x = add(embedding(word_embedding_, inputs), first_rows(positions_, t));
  for (const auto& layer : decoder_) {
    Tensor s = multi_head_attention(x, x, layer.self_attn, &self_mask);
    x = add_norm(x, dropout(s, keep, ctx.mode, ctx.next_dropout_key()), layer.norm1);
    Tensor c = multi_head_attention(x, memory, layer.cross_attn, cross_ptr);
    x = add_norm(x, dropout(c, keep, ctx.mode, ctx.next_dropout_key()), layer.norm2);
    Tensor f = feed_forward(x, layer.ff);
    x = add_norm(x, dropout(f, keep, ctx.mode, ctx.next_dropout_key()), layer.norm3);
  }
  return add_row(matmul(x, out_proj_), out_bias_);
}

}  // namespace smart
