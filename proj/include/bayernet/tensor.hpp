#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bayernet/errors.hpp"

namespace bayernet {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
};

// Shared handle to a dense row-major float32 buffer. Copies alias the same
// storage; identity is storage identity.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t numel() const { return impl().data.size(); }

  std::span<const float> data() const { return impl().data; }
  // Parameters are the only tensors mutated in place (by optimizers).
  std::span<float> mutable_data() const { return impl().data; }
  float item() const;
  float at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool value) const { impl().requires_grad = value; }
  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const float> grad() const { return impl().grad; }
  std::span<float> mutable_grad() const;  // allocates zeros on first use
  void zero_grad() const;

  // Fresh storage with the same values and no graph history.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  const TensorImpl* id() const { return impl_.get(); }
  bool same(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<TensorImpl>& handle() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  TensorImpl& impl() const;

  std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of executed differentiable operations. Operations record
// themselves on the thread's active tape (see TapeScope); with no active tape
// they run in inference mode and keep no history.
class GradTape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::vector<Tensor> outputs, BackwardFn fn);
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void reset() { nodes_.clear(); }

  // Reverse replay from a scalar loss. Leaf gradients accumulate (+=);
  // intermediate gradients are recomputed from zero on every call.
  void backward(const Tensor& loss);

  // Number of nodes visited by the most recent backward pass.
  std::size_t last_replay_count() const { return last_replay_count_; }

  static GradTape* active();

 private:
  friend class TapeScope;

  struct Node {
    std::vector<Tensor> outputs;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  std::size_t last_replay_count_ = 0;
};

// Installs a tape as the thread's active tape for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

// Suspends recording on this thread for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape* previous_;
};

// Runs backward on the active tape.
void backward(const Tensor& loss);

// True when an op over these inputs must be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

}  // namespace bayernet
