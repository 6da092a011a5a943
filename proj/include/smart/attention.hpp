#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "smart/parameters.hpp"
#include "smart/random.hpp"
#include "smart/tensor.hpp"

namespace smart {

/// Query-position × key-position boolean matrix; true = attendable.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t rows, std::size_t cols, bool value = true)
      : rows_(rows), cols_(cols), allowed_(rows * cols, value ? 1 : 0) {}

  static AttentionMask causal(std::size_t n);
  /// Every query row may attend exactly the valid keys.
  static AttentionMask key_padding(std::size_t rows, std::span<const std::uint8_t> key_valid);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool allowed(std::size_t r, std::size_t c) const { return allowed_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool value) { allowed_[r * cols_ + c] = value ? 1 : 0; }

  /// Appends `extra` always-attendable columns (memory slots).
  AttentionMask with_open_columns(std::size_t extra) const;
  /// Elementwise AND.
  AttentionMask operator&(const AttentionMask& other) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> allowed_;
};

/// Row softmax restricted to attendable entries; masked entries are exactly
/// zero. Throws InputError for a query row with nothing to attend.
Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask);

struct AttentionResult {
  Tensor out;      // T×d_h
  Tensor weights;  // T×S
};

/// softmax(q·kᵀ/√d_h) · v. A null mask means every key is attendable.
AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     const AttentionMask* mask = nullptr);

/// Projections are stored fused in input×output layout: head h owns
/// columns [h·d_h, (h+1)·d_h) of wq/wk/wv and of the memory matrices.
struct MultiHeadParams {
  std::size_t heads = 1;
  Tensor wq, wk, wv;  // d×d
  Tensor wo;          // d×d
  Tensor memory_keys;    // M×d, undefined when M == 0
  Tensor memory_values;  // M×d, undefined when M == 0

  std::size_t d() const { return wq.rows(); }
  std::size_t head_dim() const { return d() / heads; }
  std::size_t memory_slots() const { return memory_keys.defined() ? memory_keys.rows() : 0; }
};

/// Registers "<prefix>.wq|wk|wv|wo" (+ ".memory_keys|memory_values" when
/// memory_slots > 0) in `params`. Glorot-uniform projections, memory slots
/// drawn from N(0, 1/√d_h).
MultiHeadParams init_multi_head(ParameterSet& params, const std::string& prefix, std::size_t d,
                                std::size_t heads, std::size_t memory_slots, Rng& rng);

/// Rebinds handles to parameters already present in `params`.
MultiHeadParams bind_multi_head(const ParameterSet& params, const std::string& prefix,
                                std::size_t heads);

/// Multi-head attention of q_seq (T×d) over kv_seq (N×d). Memory slots, when
/// present, are appended to every head's keys/values and are always
/// attendable. `mask` covers the N ordinary keys only.
/// If `head_weights` is non-null it receives each head's T×(N+M) weights.
Tensor multi_head_attention(const Tensor& q_seq, const Tensor& kv_seq,
                            const MultiHeadParams& params, const AttentionMask* mask = nullptr,
                            std::vector<Tensor>* head_weights = nullptr);

struct MemoryCount {
  std::size_t slots = 0;    // 2·M·H key and value vectors
  std::size_t scalars = 0;  // 2·M·H·d_h == 2·M·d
};

MemoryCount memory_param_count(std::size_t d, std::size_t heads, std::size_t memory_slots);

}  // namespace smart
