#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "smart/attention.hpp"
#include "smart/ops.hpp"
#include "smart/parameters.hpp"

namespace smart {

struct ModelConfig {
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 256;
  std::size_t memory_slots = 0;  // per head, encoder self-attention only
  std::size_t vocab_size = 64;
  std::size_t max_seq_len = 20;
  std::size_t region_feature_dim = 64;
  double dropout_keep = 0.9;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  /// d=512, H=8, d_f=2048, two layers each side.
  static ModelConfig full_scale();

  bool operator==(const ModelConfig&) const = default;
};

/// Per-forward state: mode plus the dropout site counter.
struct ForwardContext {
  Mode mode = Mode::kEval;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t next_site = 0;

  DropoutKey next_dropout_key() { return {seed, step, next_site++}; }
};

struct FeedForwardParams {
  Tensor v;  // d×d_f, first affine map (x·v + b)
  Tensor b;  // d_f
  Tensor u;  // d_f×d, second affine map
  Tensor c;  // d
};

struct NormParams {
  Tensor gain;
  Tensor bias;
};

/// Sinusoidal table: PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(...).
Tensor positional_encoding(std::size_t max_len, std::size_t d);

/// u·relu(v·x + b) + c applied to every row independently.
Tensor feed_forward(const Tensor& x, const FeedForwardParams& p);

/// LayerNorm(x + sublayer_out).
Tensor add_norm(const Tensor& x, const Tensor& sublayer_out, const NormParams& p);

/// Number of scalars a model with this config holds.
std::size_t parameter_count(const ModelConfig& config);

/// Memory slot/scalar count for one encoder self-attention layer.
MemoryCount memory_param_count(const ModelConfig& config);

/// Encoder-decoder with memory-augmented encoder self-attention.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// regions: N×region_feature_dim. `valid` flags real (non-padding)
  /// regions; empty means all valid. Returns N×d.
  Tensor encode(const Tensor& regions, std::span<const std::uint8_t> valid,
                ForwardContext& ctx) const;
  Tensor encode(const Tensor& regions, ForwardContext& ctx) const {
    return encode(regions, {}, ctx);
  }

  /// Teacher-forced decoder pass. `inputs` starts with BOS and may carry
  /// trailing PAD. Returns T×vocab_size logits; row t depends only on
  /// inputs[0..t] and the encoder output.
  Tensor decode(std::span<const int> inputs, const Tensor& memory,
                std::span<const std::uint8_t> memory_valid, ForwardContext& ctx) const;
  Tensor decode(std::span<const int> inputs, const Tensor& memory, ForwardContext& ctx) const {
    return decode(inputs, memory, {}, ctx);
  }

 private:
  struct EncoderLayer {
    MultiHeadParams self_attn;
    NormParams norm1;
    FeedForwardParams ff;
    NormParams norm2;
  };
  struct DecoderLayer {
    MultiHeadParams self_attn;
    NormParams norm1;
    MultiHeadParams cross_attn;
    NormParams norm2;
    FeedForwardParams ff;
    NormParams norm3;
  };

  ModelConfig config_;
  ParameterSet params_;
  Tensor region_proj_;  // region_feature_dim×d
  Tensor region_bias_;
  Tensor word_embedding_;  // vocab×d
  Tensor out_proj_;        // d×vocab
  Tensor out_bias_;
  Tensor positions_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
};

}  // namespace smart
