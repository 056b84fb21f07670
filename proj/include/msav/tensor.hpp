#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace msav {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

/// Allocator that default-initializes on resize: buffers that every kernel
/// fully overwrites skip the value-init pass.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0) {
      ::new (static_cast<void*>(p)) U;
    } else {
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
  }
};

using FloatBuffer = std::vector<float, DefaultInitAllocator<float>>;

}  // namespace detail

/// Dense row-major float32 tensor. Copying a Tensor aliases the same storage
/// (shared handle); use clone() for a deep copy. A tensor created with
/// requires_grad owns a same-shape gradient buffer that backward passes
/// accumulate into.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  /// Uninitialized data buffer, for outputs a kernel fully overwrites.
  static Tensor uninitialized(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  bool requires_grad() const;

  std::span<float> data();
  std::span<const float> data() const;
  std::span<float> grad();
  std::span<const float> grad() const;

  float item() const;  // value of a single-element tensor

  void zero_grad();

  /// Deep copy of the data (gradient buffer fresh-zeroed, same requires_grad).
  Tensor clone() const;

  /// Copies data from another tensor of identical shape.
  void copy_from(const Tensor& other);

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    detail::FloatBuffer data;
    detail::FloatBuffer grad;  // non-empty iff requires_grad
    bool requires_grad = false;
  };

  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<Impl> impl_;

  friend class Tape;
};

/// Reverse-mode gradient tape. Operations append a backward rule as they
/// execute; backward() replays the rules in reverse. Gradients of tensors
/// produced by taped ops are reset at the start of each backward pass, so
/// repeated backward() calls accumulate exactly one dLoss/dLeaf each into
/// leaf tensors. A tape is single-threaded; independent tapes may run
/// concurrently.
class Tape {
 public:
  /// Registers a backward rule for `output` (most recent op last).
  void record(Tensor output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and replays all rules in reverse order.
  /// `loss` must hold exactly one element and require grad.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::shared_ptr<Tensor::Impl> output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
};

}  // namespace msav
