#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdetr {

using Shape = std::vector<std::size_t>;

/// Operand extents that an operation cannot accept.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value that violates a documented precondition (NaN input, bad config, ...).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor of doubles.
///
/// Copies share storage. Values produced by operations are never written
/// again; only leaves (parameters) are updated in place by an optimizer.
/// Whenever an operand requires a gradient the result records how to
/// propagate one, and `backward` walks that record in reverse.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const;  // 2-D only
  std::size_t cols() const;  // 2-D only

  std::span<const double> data() const { return node_->value; }
  /// Writable storage; intended for leaves.
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  /// Accumulated gradient, or an empty span when nothing reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  /// Gradient as a tensor of the same shape (zeros when unreached).
  Tensor grad_tensor() const;
  void zero_grad() { node_->grad.clear(); }

  /// Same values, no history.
  Tensor detach() const;
  bool defined() const { return static_cast<bool>(node_); }
  const void* id() const { return node_.get(); }

  // Used by operation implementations.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::initializer_list<Tensor> inputs,
                            std::function<void(detail::Node&)> backward);
  static Tensor make_result(Shape shape, std::vector<double> values,
                            const std::vector<Tensor>& inputs,
                            std::function<void(detail::Node&)> backward);
  detail::Node& node() const { return *node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend void backward(const Tensor& loss);
};

/// Reverse sweep from a one-element loss. Gradients accumulate into every
/// reachable leaf that requires one; the recorded graph is released afterwards.
void backward(const Tensor& loss);

/// While alive, operations on this thread record no history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// While alive, every matrix product on this thread adds its MAC count to `*sink`.
class MacCounterScope {
 public:
  explicit MacCounterScope(std::uint64_t* sink);
  ~MacCounterScope();
  MacCounterScope(const MacCounterScope&) = delete;
  MacCounterScope& operator=(const MacCounterScope&) = delete;

 private:
  std::uint64_t* previous_;
};

namespace detail {
void count_macs(std::uint64_t macs);
}

}  // namespace sdetr
