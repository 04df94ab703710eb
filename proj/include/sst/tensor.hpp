#pragma once

// Dense 64-bit tensors with tape-ordered reverse-mode differentiation.
//
// Every op that consumes a tensor requiring gradients appends a node to the
// thread's tape. Nodes carry a monotonically increasing sequence number, so a
// node's inputs always precede it and reverse sequence order is a valid
// topological order for backward(). The tape is owned by the tensors
// themselves: once the last handle to a result is dropped, its graph is freed.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sst {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

// Backward rule of one recorded op: reads the output's data and grad and
// accumulates into the inputs captured by the closure.
using BackwardFn = std::function<void(const TensorImpl& out)>;

struct Node {
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until populated
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // producer; null for leaves

  // Grad buffer, zero-initialised on first use.
  std::span<double> grad_buffer();
};

class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<TensorImpl> impl);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), 0.0, requires_grad);
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return !impl_->node; }

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  // A new leaf holding a copy of the values, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  bool same_object(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Gradient recording switch, per thread.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result. When recording is on and any input requires grad the
/// result joins the tape with `backward` as its rule; otherwise `backward` is
/// dropped. This is the extension point for fused ops outside this header.
Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward);

// Accumulates gradients of the scalar `loss` into every requires_grad
// ancestor. Leaf grads add up across calls; intermediate grads are rebuilt.
void backward(const Tensor& loss);

}  // namespace sst
