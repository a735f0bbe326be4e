#include "couda/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

namespace couda {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

std::string describe_shapes(const std::vector<Shape>& shapes) {
  std::string out;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (i) out += " ";
    out += to_string(shapes[i]);
  }
  return out;
}

}  // namespace

ShapeError::ShapeError(std::string op, std::vector<Shape> shapes, const std::string& detail)
    : Error(op + ": shape mismatch " + describe_shapes(shapes) + (detail.empty() ? "" : " (" + detail + ")")),
      op_(std::move(op)),
      shapes_(std::move(shapes)) {}

DomainError::DomainError(std::string op, const std::string& detail)
    : Error(op + ": " + detail), op_(std::move(op)) {}

ParseError::ParseError(const std::string& path, std::size_t line, const std::string& detail)
    : Error(path + (line ? ":" + std::to_string(line) : std::string{}) + ": " + detail), line_(line) {}

}  // namespace couda

namespace couda::diff {

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

namespace {

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void validate_shape(const Shape& shape, std::size_t count) {
  if (shape.empty() || std::find(shape.begin(), shape.end(), 0u) != shape.end()) {
    throw ShapeError("tensor", {shape}, "dimensions must be positive");
  }
  if (shape_product(shape) != count) {
    throw ShapeError("tensor", {shape}, std::to_string(count) + " values supplied");
  }
}

}  // namespace

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape, values.size());
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_product(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

detail::Node& Tensor::checked() const {
  if (!node_) throw Error("tensor: use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }
std::size_t Tensor::size() const { return checked().value.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.size() == 1 ? 1 : s[0];
}

std::size_t Tensor::cols() const { return shape().back(); }

std::span<const double> Tensor::values() const { return checked().value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item", {shape()}, "expected a single value");
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() > 2 || row >= rows() || col >= cols()) throw ShapeError("at", {shape()}, "index out of range");
  return node_->value[row * cols() + col];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }
bool Tensor::is_leaf() const { return checked().is_leaf(); }
std::string_view Tensor::op() const { return checked().op; }
bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw Error("tensor: no gradient has been accumulated");
  return node_->grad;
}

void Tensor::zero_grad() {
  auto& n = checked();
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

std::span<double> Tensor::mutable_values() {
  auto& n = checked();
  if (n.op != "leaf") throw Error("tensor: values of op '" + std::string(n.op) + "' are immutable");
  return n.value;
}

Tensor Tensor::detach(bool requires_grad) const {
  return from(shape(), std::vector<double>(values().begin(), values().end()), requires_grad);
}

void backward(const Tensor& loss) {
  if (!loss) throw Error("backward: undefined loss");
  if (loss.size() != 1) throw ShapeError("backward", {loss.shape()}, "loss must be scalar");
  if (!loss.requires_grad()) throw Error("backward: loss has no recorded graph (no input requires grad)");

  // Iterative post-order DFS; parent order is fixed by construction so the
  // resulting schedule (and therefore every floating-point sum) is deterministic.
  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
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

  for (auto* node : order) {
    if (node->is_leaf()) {
      node->grad_buffer();
    } else {
      node->grad.assign(node->value.size(), 0.0);
    }
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf() && (*it)->backward) (*it)->backward(**it);
  }
}

void zero_grads(std::span<Tensor> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

namespace {
thread_local bool recording = true;
}

NoGradGuard::NoGradGuard() : previous_(recording) { recording = false; }
NoGradGuard::~NoGradGuard() { recording = previous_; }
bool grad_enabled() noexcept { return recording; }

}  // namespace couda::diff
