#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace drnet {

/// Error raised for every contract violation in the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

#define DRNET_CHECK(cond, ...)                                   \
  do {                                                           \
    if (!(cond)) {                                               \
      throw ::drnet::Error(::drnet::detail::concat(__VA_ARGS__)); \
    }                                                            \
  } while (0)

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Feature maps use (batch, channel, row,
/// column) layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor({1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x);
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const;

  /// Value of a one-element tensor.
  double item() const;

  bool all_finite() const noexcept;
  void fill(double value);
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

/// Autodiff handle: a shared node holding a value and (lazily) its gradient.
/// Copies alias the same node. Leaves created with requires_grad=false never
/// allocate gradient storage.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const;
  Tensor& mutable_value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag);

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  const Tensor& grad() const;
  /// Gradient buffer, zero-filled on first use.
  Tensor& grad_buffer() const;
  void zero_grad() const;

  /// Constant leaf with a copy of the value.
  Var detach() const { return Var(value(), false); }

  bool same_node(const Var& other) const noexcept { return node_ == other.node_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

/// Ordered record of the backward closures of one forward pass. Replaying it
/// in reverse visits ops in reverse topological order. A tape constructed with
/// recording=false runs ops in inference mode.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return ops_.size(); }

  /// True when an op over these inputs must be recorded.
  template <typename... V>
  bool tracks(const V&... inputs) const {
    return recording_ && (inputs.requires_grad() || ...);
  }

  void push(std::function<void()> backward_fn);

  /// Seeds d(loss)/d(loss) = 1 and replays the tape; the tape is cleared
  /// afterwards.
  void backward(const Var& loss);

 private:
  bool recording_;
  std::vector<std::function<void()>> ops_;
};

}  // namespace drnet
