#include "smart/tensor.hpp"

#include <sstream>

#include "smart/errors.hpp"

namespace smart {

namespace {
thread_local Precision g_precision = Precision::kFloat64;
thread_local Tape* g_active_tape = nullptr;
}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

void apply_precision(std::span<double> values) {
  if (g_precision != Precision::kFloat32) return;
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_to_string(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(values.size()));
  }
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
  if (requires_grad) node_->ensure_grad();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

const Shape& Tensor::shape() const {
  static const Shape kEmpty;
  return node_ ? node_->shape : kEmpty;
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= rank()) throw ShapeError("dimension index out of range for " + shape_to_string(shape()));
  return shape()[i];
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("expected a matrix, got " + shape_to_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("expected a matrix, got " + shape_to_string(shape()));
  return shape()[1];
}

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) return {};
  return node_->value;
}

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_) return {};
  node_->ensure_grad();
  return node_->grad;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_) throw UsageError("set_requires_grad on undefined tensor");
  node_->requires_grad = on;
  if (on) node_->ensure_grad();
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

Tensor Tensor::clone() const {
  if (!node_) return {};
  return Tensor(node_->shape, node_->value, false);
}

Tape::Recording::Recording(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Recording::~Recording() { g_active_tape = previous_; }

Tape::Paused::Paused() : previous_(g_active_tape) { g_active_tape = nullptr; }
Tape::Paused::~Paused() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::string_view op, std::shared_ptr<detail::TensorNode> output,
                  std::function<void()> backward_fn) {
  entries_.push_back(Entry{std::string(op), std::move(output), std::move(backward_fn)});
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.push_back(e.op);
  return names;
}

void backward(Tape& tape, const Tensor& loss, std::vector<std::string>* visit_log) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " +
                     shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw UsageError("loss is not connected to any grad-requiring tensor");
  }
  for (auto& e : tape.entries_) e.output->grad.assign(e.output->value.size(), 0.0);
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    if (visit_log) visit_log->push_back(it->op);
    it->backward_fn();
  }
}

}  // namespace smart
