#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "couda/error.hpp"

namespace couda::diff {

namespace detail {

// One vertex of the computation graph. Leaves own parameters or inputs;
// interior nodes carry a closure that pushes their gradient into parents.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const noexcept { return parents.empty(); }
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor of doubles with an optional gradient accumulator.
///
/// A Tensor is a cheap shared handle. Forward ops never modify their inputs;
/// only leaves expose mutable storage (for optimizer updates and finite
/// differences). Most ops interpret a rank-1 tensor of length n as a 1 x n matrix.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  explicit operator bool() const noexcept { return defined(); }

  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  // Matrix view: rank-1 tensors are a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool is_leaf() const;
  std::string_view op() const;

  bool has_grad() const;
  /// Gradient accumulated by backward(). Throws if none has been populated.
  std::span<const double> grad() const;
  /// Explicit reset of the accumulator; backward() never clears leaf gradients.
  void zero_grad();

  /// Writable storage of a leaf. Throws for interior nodes, which are immutable.
  std::span<double> mutable_values();

  /// A new leaf holding a copy of the values, cut off from the graph.
  Tensor detach(bool requires_grad = false) const;

  // Graph plumbing for op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  detail::Node& checked() const;
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar loss.
///
/// Every reachable leaf with requires_grad receives d(loss)/d(leaf) added to its
/// accumulator, so two calls without zero_grad() in between sum the gradients.
/// Interior gradients are recomputed from scratch on each call.
/// Throws ShapeError if the loss is not a single value and Error if the loss was
/// not produced by a recorded graph (no input required gradients).
void backward(const Tensor& loss);

/// zero_grad() over a collection of tensors.
void zero_grads(std::span<Tensor> tensors);

/// While alive, forward ops on this thread record no graph: results are
/// constants regardless of their inputs.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

}  // namespace couda::diff
