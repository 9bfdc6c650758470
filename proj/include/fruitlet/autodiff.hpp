#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fruitlet/precision.hpp"

namespace fruitlet {
FRUITLET_PRECISION_BEGIN
namespace ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// One recorded operation. Leaves have no inputs and no backward function.
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;  // reads this->grad, accumulates into inputs

  void ensure_grad();
};

// Handle to a dense row-major Real tensor. Copies share the same node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const Real> data() const { return node_->value; }
  std::span<Real> mutable_data() { return node_->value; }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  Real item() const;
  Real at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Two-dimensional ops take [rows x cols] tensors.
Tensor matmul(const Tensor& a, const Tensor& b);
// b may match a's shape, be a [1 x n] row, an [m x 1] column, or hold one element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real factor);
Tensor add_scalar(const Tensor& x, Real value);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, Real lo, Real hi);
Tensor softmax(const Tensor& x, int axis);
// Normalizes each row to zero mean and unit variance (no affine terms).
Tensor layer_norm(const Tensor& x, Real eps = Real(1e-5));
// Identity unless training; the mask is a pure function of (key, element index).
Tensor dropout(const Tensor& x, Real rate, bool training, uint64_t key);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// Output row r concatenates input rows indices[r*group + k] for k < group;
// an index of -1 contributes zeros.
Tensor gather_rows(const Tensor& x, std::span<const int64_t> indices, std::size_t group);

// Populates gradients of every requires_grad leaf reachable from `loss`.
void backward(const Tensor& loss);

// Stateless 64-bit mixer used for counter-based randomness.
uint64_t mix64(uint64_t x);
uint64_t mix_key(uint64_t a, uint64_t b, uint64_t c);

}  // namespace ad
FRUITLET_PRECISION_END
}  // namespace fruitlet
