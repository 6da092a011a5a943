#pragma once

#include <cstdint>
#include <span>

#include "smart/tensor.hpp"

namespace smart {

enum class Mode { kTrain, kEval };

/// Identifies one dropout call site; masks are a pure function of it.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t site = 0;
};

// All ops record themselves on the active tape when an input requires grad.

Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ without materialising the transpose.
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
/// Adds a length-n vector to every row of an m×n matrix.
Tensor add_row(const Tensor& x, const Tensor& row);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);

/// Softmax along `axis`, computed with max subtraction.
Tensor softmax(const Tensor& x, std::size_t axis);
/// Log-softmax along the last axis.
Tensor log_softmax(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

/// Inverted dropout. Identity in eval mode or when keep_prob == 1.
Tensor dropout(const Tensor& x, double keep_prob, Mode mode, DropoutKey key);

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(const Tensor& top, const Tensor& bottom);

/// Row gather: out[i] = table[ids[i]].
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// out[i] = x[i, cols[i]]; rows with a negative column are skipped.
Tensor pick(const Tensor& x, std::span<const int> cols);
/// Sum of all elements, as a scalar.
Tensor sum(const Tensor& x);

/// Counts ReLU activation-pattern flips; used by grad_check to detect
/// finite-difference probes that cross a kink.
class ReluPatternProbe {
 public:
  ReluPatternProbe();
  ~ReluPatternProbe();
  ReluPatternProbe(const ReluPatternProbe&) = delete;
  ReluPatternProbe& operator=(const ReluPatternProbe&) = delete;

  std::uint64_t signature() const { return signature_; }
  void observe(std::span<const double> pre_activation);

 private:
  std::uint64_t signature_ = 0;
  ReluPatternProbe* previous_;
};

namespace testing {
/// Scales the backward pass of the named op by `factor`; "" disables.
/// Negative-control hook for gradient checks.
void inject_backward_fault(std::string_view op, double factor = 1.01);
double backward_fault(std::string_view op);
}  // namespace testing

}  // namespace smart
