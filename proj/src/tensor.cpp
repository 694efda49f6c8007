#include "bayernet/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace bayernet {

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_to_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({}, {value}, requires_grad); }

TensorImpl& Tensor::impl() const {
  if (!impl_) throw UsageError("access to an undefined tensor");
  return *impl_;
}

std::int64_t Tensor::dim(std::size_t axis) const {
  const auto& s = impl().shape;
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(s));
  }
  return s[axis];
}

float Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_to_string(shape()));
  return impl().data[0];
}

float Tensor::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = impl().shape;
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for shape " + shape_to_string(s));
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[axis]) throw DimensionError("index out of range on axis " + std::to_string(axis));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl().data[static_cast<std::size_t>(flat)];
}

std::span<float> Tensor::mutable_grad() const {
  auto& t = impl();
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0f);
  return t.grad;
}

void Tensor::zero_grad() const {
  auto& t = impl();
  std::fill(t.grad.begin(), t.grad.end(), 0.0f);
}

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), impl().data, requires_grad); }

void GradTape::record(std::vector<Tensor> outputs, BackwardFn fn) {
  nodes_.push_back(Node{std::move(outputs), std::move(fn)});
}

void GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw UsageError("loss is not connected to any tensor that requires grad");

  // Intermediates start from zero so repeated passes reproduce identical
  // contributions into the leaves.
  for (auto& node : nodes_) {
    for (auto& out : node.outputs) {
      auto g = out.mutable_grad();
      std::fill(g.begin(), g.end(), 0.0f);
    }
  }
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0f;

  last_replay_count_ = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->fn();
    ++last_replay_count_;
  }
}

GradTape* GradTape::active() { return g_active_tape; }

TapeScope::TapeScope(GradTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }

NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  auto* tape = GradTape::active();
  if (!tape) throw UsageError("backward called with no active GradTape");
  tape->backward(loss);
}

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!GradTape::active()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

}  // namespace bayernet
