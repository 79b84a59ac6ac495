// SPDX-License-Identifier: Apache-2.0
#include "gim/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

#include "gim/errors.hpp"

namespace gim {
namespace {

std::uint64_t next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::vector<double>& TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  impl_->data.assign(gim::numel(shape), fill);
  impl_->shape = std::move(shape);
  impl_->id = next_id();
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<TensorImpl>()) {
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  if (gim::numel(shape) != values.size())
    throw ShapeError("shape " + to_string(shape) + " holds " + std::to_string(gim::numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->id = next_id();
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values, std::string name) {
  Tensor t(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  t.impl_->is_parameter = true;
  t.impl_->name = std::move(name);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

Tensor Tensor::clone() const {
  Tensor t(impl_->shape, impl_->data);
  t.impl_->name = impl_->name;
  return t;
}

bool Graph::any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

void Graph::record(std::string_view op, std::vector<Tensor> inputs, Tensor& out,
                   BackwardFn backward, std::size_t saved_bytes, bool blocks_gradient) {
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || (t.defined() && t.requires_grad());
  if (!needs) return;
  out.set_requires_grad(!blocks_gradient);
  Node node;
  node.op = op;
  node.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs)
    if (t.defined()) node.inputs.push_back(t.shared());
  node.out = out.shared();
  node.backward = std::move(backward);
  node.saved_bytes = saved_bytes;
  nodes_.push_back(std::move(node));
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  for (Node& n : nodes_)
    if (!n.out->is_parameter) n.out->grad.clear();
  if (!loss.requires_grad()) return;
  loss.impl()->ensure_grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->out->grad.empty() || !it->out->requires_grad) continue;
    it->backward();
  }
}

std::size_t Graph::activation_bytes() const {
  std::unordered_set<const TensorImpl*> seen;
  std::size_t bytes = 0;
  auto visit = [&](const std::shared_ptr<TensorImpl>& t) {
    if (t->is_parameter || !seen.insert(t.get()).second) return;
    bytes += t->data.size() * sizeof(double);
  };
  for (const Node& n : nodes_) {
    for (const auto& in : n.inputs) visit(in);
    visit(n.out);
    bytes += n.saved_bytes;
  }
  return bytes;
}

std::size_t Graph::gradient_bytes() const {
  std::unordered_set<const TensorImpl*> seen;
  std::size_t bytes = 0;
  auto visit = [&](const std::shared_ptr<TensorImpl>& t) {
    if (!seen.insert(t.get()).second) return;
    bytes += t->grad.size() * sizeof(double);
  };
  for (const Node& n : nodes_) {
    for (const auto& in : n.inputs) visit(in);
    visit(n.out);
  }
  return bytes;
}

std::size_t Graph::parameter_bytes() const {
  std::unordered_set<const TensorImpl*> seen;
  std::size_t bytes = 0;
  for (const Node& n : nodes_)
    for (const auto& in : n.inputs)
      if (in->is_parameter && seen.insert(in.get()).second) bytes += in->data.size() * sizeof(double);
  return bytes;
}

}  // namespace gim
