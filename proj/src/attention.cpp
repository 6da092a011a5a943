#include "smart/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "smart/errors.hpp"
#include "smart/ops.hpp"

namespace smart {

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask m(n, n, false);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c <= r; ++c) m.set(r, c, true);
  return m;
}

AttentionMask AttentionMask::key_padding(std::size_t rows, std::span<const std::uint8_t> key_valid) {
  AttentionMask m(rows, key_valid.size(), false);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < key_valid.size(); ++c) m.set(r, c, key_valid[c] != 0);
  return m;
}

AttentionMask AttentionMask::with_open_columns(std::size_t extra) const {
  AttentionMask m(rows_, cols_ + extra, true);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) m.set(r, c, allowed(r, c));
  return m;
}

AttentionMask AttentionMask::operator&(const AttentionMask& other) const {
  if (rows_ != other.rows_ || cols_ != other.cols_) {
    throw ShapeError("mask shapes differ: " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                     " vs " + std::to_string(other.rows_) + "x" + std::to_string(other.cols_));
  }
  AttentionMask m = *this;
  for (std::size_t i = 0; i < allowed_.size(); ++i) m.allowed_[i] &= other.allowed_[i];
  return m;
}

Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask) {
  const auto t = scores.rows(), s = scores.cols();
  if (mask.rows() != t || mask.cols() != s) {
    throw ShapeError("mask " + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                     " does not match scores " + shape_to_string(scores.shape()));
  }
  const auto x = scores.data();
  std::vector<double> out(t * s, 0.0);
  for (std::size_t r = 0; r < t; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < s; ++c)
      if (mask.allowed(r, c)) mx = std::max(mx, x[r * s + c]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw InputError("attention query row " + std::to_string(r) + " has no attendable key");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < s; ++c) {
      if (!mask.allowed(r, c)) continue;
      out[r * s + c] = std::exp(x[r * s + c] - mx);
      total += out[r * s + c];
    }
    for (std::size_t c = 0; c < s; ++c) out[r * s + c] /= total;
  }
  apply_precision(out);
  Tensor y(scores.shape(), std::move(out));
  if (Tape::active() && scores.requires_grad()) {
    y.node()->requires_grad = true;
    Tape::active()->record("masked_softmax", y.node(), [xn = scores.node(), yn = y.node(), t, s] {
      if (!xn->requires_grad) return;
      const double f = testing::backward_fault("masked_softmax");
      xn->ensure_grad();
      const auto& yv = yn->value;
      const auto& dy = yn->grad;
      for (std::size_t r = 0; r < t; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < s; ++c) dot += dy[r * s + c] * yv[r * s + c];
        for (std::size_t c = 0; c < s; ++c) {
          xn->grad[r * s + c] += f * yv[r * s + c] * (dy[r * s + c] - dot);
        }
      }
    });
  }
  return y;
}

AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     const AttentionMask* mask) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw ShapeError("attention shapes disagree: q " + shape_to_string(q.shape()) + ", k " +
                     shape_to_string(k.shape()) + ", v " + shape_to_string(v.shape()));
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor scores = scale(matmul_transposed(q, k), inv_sqrt);
  Tensor weights = mask ? masked_softmax(scores, *mask) : softmax(scores, 1);
  return {matmul(weights, v), weights};
}

MultiHeadParams init_multi_head(ParameterSet& params, const std::string& prefix, std::size_t d,
                                std::size_t heads, std::size_t memory_slots, Rng& rng) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("model.heads: d=" + std::to_string(d) + " is not divisible by H=" +
                      std::to_string(heads));
  }
  MultiHeadParams p;
  p.heads = heads;
  p.wq = params.add(prefix + ".wq", glorot_uniform(d, d, rng));
  p.wk = params.add(prefix + ".wk", glorot_uniform(d, d, rng));
  p.wv = params.add(prefix + ".wv", glorot_uniform(d, d, rng));
  p.wo = params.add(prefix + ".wo", glorot_uniform(d, d, rng));
  if (memory_slots > 0) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(d / heads));
    auto draw = [&] {
      std::vector<double> v(memory_slots * d);
      for (double& x : v) x = rng.normal(0.0, sd);
      return Tensor({memory_slots, d}, std::move(v));
    };
    p.memory_keys = params.add(prefix + ".memory_keys", draw());
    p.memory_values = params.add(prefix + ".memory_values", draw());
  }
  return p;
}

MultiHeadParams bind_multi_head(const ParameterSet& params, const std::string& prefix,
                                std::size_t heads) {
  MultiHeadParams p;
  p.heads = heads;
  p.wq = params.get(prefix + ".wq");
  p.wk = params.get(prefix + ".wk");
  p.wv = params.get(prefix + ".wv");
  p.wo = params.get(prefix + ".wo");
  if (params.contains(prefix + ".memory_keys")) {
    p.memory_keys = params.get(prefix + ".memory_keys");
    p.memory_values = params.get(prefix + ".memory_values");
  }
  return p;
}

Tensor multi_head_attention(const Tensor& q_seq, const Tensor& kv_seq,
                            const MultiHeadParams& params, const AttentionMask* mask,
                            std::vector<Tensor>* head_weights) {
  const std::size_t d = params.d();
  if (q_seq.cols() != d || kv_seq.cols() != d) {
    throw ShapeError("multi_head_attention: inputs " + shape_to_string(q_seq.shape()) + " and " +
                     shape_to_string(kv_seq.shape()) + " do not match d=" + std::to_string(d));
  }
  const std::size_t dh = params.head_dim();
  const std::size_t m = params.memory_slots();

  Tensor q = matmul(q_seq, params.wq);
  Tensor k = matmul(kv_seq, params.wk);
  Tensor v = matmul(kv_seq, params.wv);

  AttentionMask extended;
  const AttentionMask* effective = mask;
  if (m > 0) {
    k = concat_rows(k, params.memory_keys);
    v = concat_rows(v, params.memory_values);
    extended = (mask ? *mask : AttentionMask(q_seq.rows(), kv_seq.rows())).with_open_columns(m);
    effective = &extended;
  }

  std::vector<Tensor> heads;
  heads.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    auto r = scaled_dot_attention(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh),
                                  slice_cols(v, h * dh, dh), effective);
    if (head_weights) head_weights->push_back(r.weights);
    heads.push_back(std::move(r.out));
  }
  return matmul(concat_cols(heads), params.wo);
}

MemoryCount memory_param_count(std::size_t d, std::size_t heads, std::size_t memory_slots) {
  return {2 * memory_slots * heads, 2 * memory_slots * d};
}

}  // namespace smart
