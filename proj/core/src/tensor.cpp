#include "condensa/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "condensa/error.hpp"

namespace condensa {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  auto s = std::make_shared<TensorStorage>();
  s->data.assign(shape_numel(shape), value);
  s->shape = std::move(shape);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  auto s = std::make_shared<TensorStorage>();
  s->shape = std::move(shape);
  s->data = std::move(data);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return s_->data[0];
}

std::span<double> Tensor::grad_mut() {
  if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0);
  return s_->grad;
}

void Tensor::zero_grad() {
  if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  auto s = std::make_shared<TensorStorage>();
  s->shape = s_->shape;
  s->data = s_->data;
  s->requires_grad = s_->requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_string(this->shape()) + " to " + shape_string(shape));
  }
  auto s = std::make_shared<TensorStorage>();
  s->shape = std::move(shape);
  s->data = s_->data;
  s->requires_grad = false;
  return Tensor(std::move(s));
}

bool Graph::needs_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

void Graph::record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
                   std::function<void()> backward) {
  output.set_requires_grad(true);
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::backward(const Tensor& root, BackwardOptions options) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward requires a scalar root, got shape " +
                        (root.defined() ? shape_string(root.shape()) : std::string("<undefined>")));
  }
  std::unordered_set<const TensorStorage*> produced;
  produced.reserve(nodes_.size());
  for (auto& node : nodes_) {
    produced.insert(node.output.storage());
    Tensor out = node.output;
    out.grad_mut();
    out.zero_grad();
  }
  for (auto& node : nodes_) {
    for (auto& in : node.inputs) {
      if (!in.defined() || !in.requires_grad() || produced.count(in.storage())) continue;
      Tensor leaf = in;
      leaf.grad_mut();
      if (!options.accumulate) leaf.zero_grad();
    }
  }
  if (!root.requires_grad()) return;
  Tensor r = root;
  if (!produced.count(root.storage()) && !options.accumulate) r.zero_grad();
  r.grad_mut()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

}  // namespace condensa
