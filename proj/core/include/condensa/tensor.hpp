#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace condensa {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
};

/// Dense row-major float64 tensor. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<double> data() { return s_->data; }
  std::span<const double> data() const { return s_->data; }
  double item() const;
  double operator[](std::size_t i) const { return s_->data[i]; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }
  bool has_grad() const { return !s_->grad.empty(); }
  /// Gradient view; empty span if no backward pass has reached this tensor.
  std::span<const double> grad() const { return s_->grad; }
  /// Gradient view, allocating a zero block on first use.
  std::span<double> grad_mut();
  void zero_grad();

  Tensor clone() const;
  /// Copy of the data under a new shape, detached from any graph.
  Tensor reshaped(Shape shape) const;

  TensorStorage* storage() const noexcept { return s_.get(); }
  bool same_storage(const Tensor& other) const noexcept { return s_ == other.s_; }

 private:
  explicit Tensor(std::shared_ptr<TensorStorage> s) : s_(std::move(s)) {}
  std::shared_ptr<TensorStorage> s_;
};

struct BackwardOptions {
  /// Leaf gradients are zeroed before the pass unless this is set.
  bool accumulate = false;
};

/// Tape of differentiable operations. Nodes are appended in execution order,
/// so the tape is already topologically sorted.
class Graph {
 public:
  struct Node {
    std::string_view op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// True when any of `inputs` participates in differentiation.
  static bool needs_grad(std::initializer_list<const Tensor*> inputs);

  /// Appends an op record. `output` is marked as requiring grad.
  void record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward);

  /// Populates d(root)/d(leaf) for every grad-requiring leaf reached by the tape.
  void backward(const Tensor& root, BackwardOptions options = {});

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

}  // namespace condensa
