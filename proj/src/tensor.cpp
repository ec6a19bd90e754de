#include "sdetr/tensor.hpp"

#include <sstream>
#include <unordered_set>
#include <utility>

namespace sdetr {

namespace {

thread_local bool tls_grad_enabled = true;
thread_local std::uint64_t* tls_mac_sink = nullptr;

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor() : Tensor(Shape{1}, {0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (shape.empty()) throw ShapeError("tensor needs at least one axis");
  if (element_count(shape) != values.size()) {
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis out of range for " + to_string(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("expected a matrix, got " + to_string(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("expected a matrix, got " + to_string(shape()));
  return node_->shape[1];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

Tensor Tensor::grad_tensor() const {
  if (node_->grad.empty()) return zeros(shape());
  return Tensor(shape(), node_->grad);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

Tensor Tensor::make_result(Shape shape, std::vector<double> values,
                           std::initializer_list<Tensor> inputs,
                           std::function<void(detail::Node&)> backward) {
  return make_result(std::move(shape), std::move(values), std::vector<Tensor>(inputs),
                     std::move(backward));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values,
                           const std::vector<Tensor>& inputs,
                           std::function<void(detail::Node&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  out.node_->leaf = false;
  if (!tls_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(inputs.size());
  for (const auto& in : inputs) out.node_->parents.push_back(in.node_);
  out.node_->backward = std::move(backward);
  return out;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a one-element loss, got " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order without recursion depth limits.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node_.get(), 0);
  seen.insert(loss.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (detail::Node* node : order) {
    if (!node->leaf) {
      node->backward = nullptr;
      node->parents.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(tls_grad_enabled) { tls_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tls_grad_enabled = previous_; }

bool grad_mode_enabled() { return tls_grad_enabled; }

MacCounterScope::MacCounterScope(std::uint64_t* sink) : previous_(tls_mac_sink) {
  tls_mac_sink = sink;
}
MacCounterScope::~MacCounterScope() { tls_mac_sink = previous_; }

namespace detail {
void count_macs(std::uint64_t macs) {
  if (tls_mac_sink != nullptr) *tls_mac_sink += macs;
}
}  // namespace detail

}  // namespace sdetr
