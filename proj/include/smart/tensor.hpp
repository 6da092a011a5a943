#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace smart {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Storage precision of op results. Values are always held as double; in
/// kFloat32 mode every op rounds its outputs to the nearest float.
enum class Precision { kFloat64, kFloat32 };

void set_precision(Precision p);
Precision precision();

/// Rounds in place according to the current precision.
void apply_precision(std::span<double> values);

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p) : saved_(precision()) { set_precision(p); }
  ~PrecisionScope() { set_precision(saved_); }
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major tensor. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  std::span<const double> grad() const;
  std::span<double> mutable_grad();

  bool requires_grad() const;
  void set_requires_grad(bool on);

  double item() const;
  double at(std::size_t r, std::size_t c) const;

  /// Deep copy, detached from any tape.
  Tensor clone() const;

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of differentiable operations executed while the tape is
/// active. Only ops with at least one grad-requiring input are recorded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Makes a tape the active recorder for the current thread.
  class Recording {
   public:
    explicit Recording(Tape& tape);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Tape* previous_;
  };

  /// Suspends recording for the current thread.
  class Paused {
   public:
    Paused();
    ~Paused();
    Paused(const Paused&) = delete;
    Paused& operator=(const Paused&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

  void record(std::string_view op, std::shared_ptr<detail::TensorNode> output,
              std::function<void()> backward_fn);

  std::size_t size() const { return entries_.size(); }
  std::vector<std::string> op_names() const;
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::string op;
    std::shared_ptr<detail::TensorNode> output;
    std::function<void()> backward_fn;
  };
  std::vector<Entry> entries_;

  friend void backward(Tape& tape, const Tensor& loss,
                       std::vector<std::string>* visit_log);
};

/// Reverse-mode pass. Zeroes every intermediate gradient on the tape, seeds
/// d(loss)=1 and replays entries in reverse order. Leaf gradients accumulate;
/// callers zero them (ParameterSet::zero_grad) between steps.
void backward(Tape& tape, const Tensor& loss,
              std::vector<std::string>* visit_log = nullptr);

}  // namespace smart
