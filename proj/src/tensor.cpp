#include "msav/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace msav {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i > 0) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<Impl>();
  const std::size_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->data.assign(n, 0.0f);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(n, 0.0f);
  return Tensor(std::move(impl));
}

Tensor Tensor::uninitialized(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<Impl>();
  const std::size_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->data.resize(n);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(n, 0.0f);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data,
                         bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("tensor data size " +
                                std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data.assign(data.begin(), data.end());
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(impl->data.size(), 0.0f);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::size() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->data.size();
}

bool Tensor::requires_grad() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->requires_grad;
}

std::span<float> Tensor::data() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->data;
}

std::span<const float> Tensor::data() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->data;
}

std::span<float> Tensor::grad() {
  if (!impl_ || !impl_->requires_grad) {
    throw std::logic_error("tensor has no gradient buffer");
  }
  return impl_->grad;
}

std::span<const float> Tensor::grad() const {
  if (!impl_ || !impl_->requires_grad) {
    throw std::logic_error("tensor has no gradient buffer");
  }
  return impl_->grad;
}

float Tensor::item() const {
  if (size() != 1) {
    throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

void Tensor::zero_grad() {
  if (impl_ && impl_->requires_grad) {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
  }
}

Tensor Tensor::clone() const {
  if (!impl_) return Tensor();
  auto impl = std::make_shared<Impl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  if (impl->requires_grad) impl->grad.assign(impl->data.size(), 0.0f);
  return Tensor(std::move(impl));
}

void Tensor::copy_from(const Tensor& other) {
  if (!impl_ || !other.impl_) throw std::logic_error("copy_from undefined tensor");
  if (impl_->shape != other.impl_->shape) {
    throw std::invalid_argument("copy_from shape mismatch: " +
                                shape_str(impl_->shape) + " vs " +
                                shape_str(other.impl_->shape));
  }
  impl_->data = other.impl_->data;
}

void Tape::record(Tensor output, std::function<void()> backward) {
  nodes_.push_back(Node{output.impl_, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument(
        "backward requires a scalar loss, got shape " +
        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward on a loss that requires no grad");
  }
  // Grads of op outputs belong to this pass only; leaf grads accumulate
  // across passes.
  for (const Node& node : nodes_) {
    if (node.output->requires_grad) {
      std::fill(node.output->grad.begin(), node.output->grad.end(), 0.0f);
    }
  }
  loss.impl_->grad[0] += 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward();
  }
}

}  // namespace msav
