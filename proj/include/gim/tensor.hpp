// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gim {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Storage behind a Tensor handle. Gradients are allocated on demand.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_parameter = false;
  std::uint64_t id = 0;
  std::string name;

  std::vector<double>& ensure_grad();
};

/// Reference-counted handle to a dense row-major float64 array.
///
/// Copies of a Tensor share storage; use clone() for a deep copy. Parameters
/// are tensors created with Tensor::parameter() and carry a stable name.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor parameter(Shape shape, std::vector<double> values, std::string name);

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> values() const { return impl_->data; }
  std::span<double> mutable_values() { return impl_->data; }
  const double* data() const { return impl_->data.data(); }
  double* mutable_data() { return impl_->data.data(); }
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_parameter() const { return impl_->is_parameter; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; all zeros when backward never reached this tensor.
  std::vector<double> grad() const;
  void zero_grad();

  std::uint64_t id() const { return impl_->id; }
  const std::string& name() const { return impl_->name; }

  Tensor clone() const;
  std::size_t bytes() const { return numel() * sizeof(double); }

  TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared() const noexcept { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so the
/// recording order is a topological order and backward walks it in reverse.
///
/// A graph is single-threaded. Tensors outlive the graph that produced them;
/// clearing or destroying the graph only drops the backward closures.
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Appends a node. The output requires grad iff any input does, unless
  /// `blocks_gradient` is set, in which case it never does.
  void record(std::string_view op, std::vector<Tensor> inputs, Tensor& out, BackwardFn backward,
              std::size_t saved_bytes = 0, bool blocks_gradient = false);

  static bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

  /// Runs reverse accumulation from a scalar loss. Intermediate gradients are
  /// reset first; leaf gradients (parameters) accumulate.
  void backward(const Tensor& loss);

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::string_view op_name(std::size_t node) const { return nodes_.at(node).op; }

  /// Bytes of non-parameter buffers the tape keeps alive for backward,
  /// including op-specific saved workspaces (e.g. im2col columns).
  std::size_t activation_bytes() const;
  /// Bytes of allocated gradient buffers on every tensor the tape touches.
  std::size_t gradient_bytes() const;
  /// Bytes of parameter tensors referenced by the tape.
  std::size_t parameter_bytes() const;

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::string_view op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> out;
    BackwardFn backward;
    std::size_t saved_bytes = 0;
  };
  std::vector<Node> nodes_;
};

}  // namespace gim
