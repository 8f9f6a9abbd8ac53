#include "bapm/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

namespace bapm {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : impl_(std::make_shared<detail::TensorImpl>()) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  impl_->data = std::move(values);
  impl_->shape = std::move(shape);
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{1}, std::vector<float>{value}); }

const Shape& Tensor::shape() const {
  static const Shape empty;
  return impl_ ? impl_->shape : empty;
}

std::int64_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis out of range for shape " + shape_str(shape()));
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<float> Tensor::data() { return impl_->data; }
std::span<const float> Tensor::data() const { return impl_->data; }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return !impl_ || impl_->is_leaf; }

bool Tensor::has_grad() const { return impl_ && impl_->has_grad; }

std::span<const float> Tensor::grad() const {
  if (!has_grad()) return {};
  return impl_->grad;
}

std::span<float> Tensor::grad() {
  if (!has_grad()) return {};
  return impl_->grad;
}

void Tensor::clear_grad() {
  if (!impl_) return;
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
  impl_->has_grad = false;
}

Tensor Tensor::clone() const {
  Tensor out(shape(), impl_->data);
  out.impl_->requires_grad = impl_->requires_grad && impl_->is_leaf;
  return out;
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

// ---------------------------------------------------------------------------

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace detail {

bool needs_record(std::initializer_list<const Tensor*> inputs) {
  if (!t_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

Tensor make_result(Shape shape, bool tracked) {
  Tensor out(std::move(shape));
  if (tracked) {
    out.impl()->requires_grad = true;
    out.impl()->is_leaf = false;
  }
  return out;
}

}  // namespace detail

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(const std::vector<Tensor>& inputs, const Tensor& output, BackwardFn fn) {
  Node node;
  node.inputs.reserve(inputs.size());
  for (const auto& t : inputs) node.inputs.push_back(t.impl_ptr());
  node.output = output.impl_ptr();
  node.fn = std::move(fn);
  nodes_.push_back(std::move(node));
}

void Tape::clear() { nodes_.clear(); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  std::unordered_map<detail::TensorImpl*, std::vector<float>> grads;
  grads[loss.impl()] = std::vector<float>{1.0f};

  auto flush_leaf = [](detail::TensorImpl* impl, const std::vector<float>& g) {
    if (!impl->is_leaf || !impl->requires_grad) return;
    if (!impl->has_grad) {
      impl->grad.assign(impl->data.size(), 0.0f);
      impl->has_grad = true;
    }
    for (std::size_t i = 0; i < g.size(); ++i) impl->grad[i] += g[i];
  };

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto found = grads.find(it->output.get());
    if (found == grads.end()) continue;
    std::vector<float> grad_out = std::move(found->second);
    grads.erase(found);

    std::vector<std::vector<float>*> grad_in(it->inputs.size(), nullptr);
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      auto* in = it->inputs[i].get();
      if (!in || !in->requires_grad) continue;
      auto& buf = grads[in];
      if (buf.empty()) buf.assign(in->data.size(), 0.0f);
      grad_in[i] = &buf;
    }
    it->fn(grad_out, grad_in);
  }

  for (auto& [impl, g] : grads) flush_leaf(impl, g);
}

void backward(const Tensor& loss) {
  Tape& tape = Tape::current();
  tape.backward(loss);
  tape.clear();
}

}  // namespace bapm
