#include "drnet/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace drnet {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  DRNET_CHECK(shape_numel(shape_) == data_.size(), "tensor shape ", shape_str(shape_),
              " does not match ", data_.size(), " values");
}

std::size_t Tensor::extent(std::size_t axis) const {
  DRNET_CHECK(axis < shape_.size(), "axis ", axis, " out of range for shape ", shape_str(shape_));
  return shape_[axis];
}

double& Tensor::at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
  return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
  return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
}

double Tensor::item() const {
  DRNET_CHECK(data_.size() == 1, "item() on tensor with shape ", shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  DRNET_CHECK(shape_numel(shape) == data_.size(), "cannot reshape ", shape_str(shape_), " to ",
              shape_str(shape));
  return Tensor(std::move(shape), data_);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  DRNET_CHECK(a.shape() == b.shape(), "shape mismatch ", shape_str(a.shape()), " vs ",
              shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  DRNET_CHECK(node_, "access to undefined Var");
  return node_->value;
}

Tensor& Var::mutable_value() const {
  DRNET_CHECK(node_, "access to undefined Var");
  return node_->value;
}

void Var::set_requires_grad(bool flag) {
  DRNET_CHECK(node_, "access to undefined Var");
  node_->requires_grad = flag;
  if (!flag) node_->grad = Tensor();
}

const Tensor& Var::grad() const {
  DRNET_CHECK(has_grad(), "Var has no gradient");
  return node_->grad;
}

Tensor& Var::grad_buffer() const {
  DRNET_CHECK(node_, "access to undefined Var");
  if (node_->grad.empty()) node_->grad = Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

void Var::zero_grad() const {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

void Tape::push(std::function<void()> backward_fn) {
  if (recording_) ops_.push_back(std::move(backward_fn));
}

void Tape::backward(const Var& loss) {
  DRNET_CHECK(loss.defined() && loss.value().numel() == 1,
              "backward() requires a scalar loss, got shape ",
              loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>"));
  DRNET_CHECK(loss.requires_grad(), "backward() on a loss that does not require grad");
  DRNET_CHECK(!ops_.empty(), "backward() on an empty tape");
  Var seed = loss;
  seed.grad_buffer()[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  ops_.clear();
}

}  // namespace drnet
