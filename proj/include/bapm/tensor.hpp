#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bapm {

using Shape = std::vector<std::int64_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised by any op whose operands have incompatible shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool has_grad = false;
  bool requires_grad = false;
  bool is_leaf = true;
};
}  // namespace detail

/// Dense float32 array with a shared handle. Copies of a Tensor alias the
/// same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> grad();
  void clear_grad();

  Tensor clone() const;
  /// Copy of the values with no gradient tracking.
  Tensor detach() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of differentiable ops executed on the current thread.
///
/// Ops append a node whenever at least one operand requires a gradient and
/// recording is enabled. Execution order is a topological order of the graph,
/// so replaying it backwards visits every node after all of its consumers.
/// Leaf gradients accumulate across backward() calls; intermediate gradients
/// live only for the duration of one call.
class Tape {
 public:
  /// grad_in[i] is null when input i does not need a gradient; otherwise it
  /// points at a zero-initialised buffer of the input's size to add into.
  using BackwardFn =
      std::function<void(std::span<const float> grad_out, std::span<std::vector<float>*> grad_in)>;

  void record(const std::vector<Tensor>& inputs, const Tensor& output, BackwardFn fn);
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return nodes_.size(); }

  static Tape& current();

 private:
  struct Node {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
};

/// Backward pass on the current thread's tape, which is then cleared.
void backward(const Tensor& loss);

bool grad_enabled();

/// Suspends recording for its lifetime (inference, frozen feature extraction).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {
/// True when an op over these inputs must be recorded.
bool needs_record(std::initializer_list<const Tensor*> inputs);
/// Output tensor flagged as a non-leaf that requires grad.
Tensor make_result(Shape shape, bool tracked);
}  // namespace detail

}  // namespace bapm
