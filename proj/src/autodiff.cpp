#include "fruitlet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>

#include "fruitlet/error.hpp"

namespace fruitlet {
FRUITLET_PRECISION_BEGIN
namespace ad {

namespace {

thread_local bool g_grad_enabled = true;

using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMajor>;
using ConstMapMat = Eigen::Map<const RowMajor>;

ConstMapMat as_mat(const Node& n) {
  return {n.value.data(), static_cast<Eigen::Index>(n.shape[0]), static_cast<Eigen::Index>(n.shape[1])};
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Wraps a computed value into a tensor, recording the graph edge only when
// gradients are enabled and some input needs them.
Tensor make_result(Shape shape, std::vector<Real> value, const char* op,
                   std::initializer_list<const Tensor*> inputs, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled)
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) node->inputs.push_back(t->shared());
    node->backward = std::move(bw);
  }
  return Tensor(std::move(node));
}

Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

enum class Broadcast { Same, Row, Col, Scalar };

Broadcast classify(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (b.numel() == 1) return Broadcast::Scalar;
  if (a.rank() == 2 && b.rank() == 2) {
    if (b.dim(0) == 1 && b.dim(1) == a.dim(1)) return Broadcast::Row;
    if (b.dim(1) == 1 && b.dim(0) == a.dim(0)) return Broadcast::Col;
  }
  mismatch(op, a.shape(), b.shape());
}

std::size_t b_index(Broadcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Broadcast::Same: return i;
    case Broadcast::Row: return i % cols;
    case Broadcast::Col: return i / cols;
    case Broadcast::Scalar: return 0;
  }
  return 0;
}

template <typename Fwd, typename Dfdx>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Dfdx dfdx) {
  std::vector<Real> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), op, {&x}, [dfdx](Node& self) {
    Node& a = input(self, 0);
    if (!a.requires_grad) return;
    a.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) a.grad[i] += self.grad[i] * dfdx(a.value[i], self.value[i]);
  });
}

Real stable_sigmoid(Real x) {
  if (x >= Real(0.0)) return Real(1.0) / (Real(1.0) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1.0) + e);
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), Real(0.0));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), Real(0.0), requires_grad); }

Tensor Tensor::filled(Shape shape, Real value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t mix_key(uint64_t a, uint64_t b, uint64_t c) { return mix64(mix64(mix64(a) ^ b) ^ c); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), n = b.dim(1);
  std::vector<Real> out(m * n, Real(0.0));
  if (a.dim(1) > 0) MapMat(out.data(), m, n).noalias() = as_mat(*a.node()) * as_mat(*b.node());
  return make_result({m, n}, std::move(out), "matmul", {&a, &b}, [](Node& self) {
    Node& x = input(self, 0);
    Node& y = input(self, 1);
    ConstMapMat g(self.grad.data(), self.shape[0], self.shape[1]);
    if (x.requires_grad) {
      x.ensure_grad();
      MapMat(x.grad.data(), x.shape[0], x.shape[1]).noalias() += g * as_mat(y).transpose();
    }
    if (y.requires_grad) {
      y.ensure_grad();
      MapMat(y.grad.data(), y.shape[0], y.shape[1]).noalias() += as_mat(x).transpose() * g;
    }
  });
}

namespace {

Tensor binary_add(const Tensor& a, const Tensor& b, Real sign, const char* op) {
  const Broadcast kind = classify(op, a, b);
  const std::size_t cols = a.rank() == 2 ? a.dim(1) : 1;
  std::vector<Real> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + sign * bv[b_index(kind, i, cols)];
  return make_result(a.shape(), std::move(out), op, {&a, &b}, [kind, cols, sign](Node& self) {
    Node& x = input(self, 0);
    Node& y = input(self, 1);
    if (x.requires_grad) {
      x.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i];
    }
    if (y.requires_grad) {
      y.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) y.grad[b_index(kind, i, cols)] += sign * self.grad[i];
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_add(a, b, Real(1.0), "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_add(a, b, -Real(1.0), "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast kind = classify("mul", a, b);
  const std::size_t cols = a.rank() == 2 ? a.dim(1) : 1;
  std::vector<Real> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[b_index(kind, i, cols)];
  return make_result(a.shape(), std::move(out), "mul", {&a, &b}, [kind, cols](Node& self) {
    Node& x = input(self, 0);
    Node& y = input(self, 1);
    if (x.requires_grad) {
      x.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i] * y.value[b_index(kind, i, cols)];
    }
    if (y.requires_grad) {
      y.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) y.grad[b_index(kind, i, cols)] += self.grad[i] * x.value[i];
    }
  });
}

Tensor scale(const Tensor& x, Real factor) {
  return unary(x, "scale", [factor](Real v) { return v * factor; }, [factor](Real, Real) { return factor; });
}

Tensor add_scalar(const Tensor& x, Real value) {
  return unary(x, "add_scalar", [value](Real v) { return v + value; }, [](Real, Real) { return Real(1.0); });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](Real v) { return v > Real(0.0) ? v : Real(0.0); },
               [](Real v, Real) { return v > Real(0.0) ? Real(1.0) : Real(0.0); });
}

Tensor gelu(const Tensor& x) {
  constexpr Real inv_sqrt2 = Real(0.70710678118654752);
  constexpr Real inv_sqrt_2pi = Real(0.39894228040143268);
  return unary(
      x, "gelu", [](Real v) { return Real(0.5) * v * (Real(1.0) + std::erf(v * inv_sqrt2)); },
      [](Real v, Real) {
        return Real(0.5) * (Real(1.0) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-Real(0.5) * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](Real, Real y) { return y * (Real(1.0) - y); });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1.0) / v; });
}

Tensor clamp(const Tensor& x, Real lo, Real hi) {
  return unary(x, "clamp", [lo, hi](Real v) { return std::clamp(v, lo, hi); },
               [lo, hi](Real v, Real) { return (v >= lo && v <= hi) ? Real(1.0) : Real(0.0); });
}

Tensor softmax(const Tensor& x, int axis) {
  require_rank2(x, "softmax");
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  const std::size_t m = x.dim(0), n = x.dim(1);
  // Lanes are rows for axis 1 and columns for axis 0.
  const std::size_t lanes = axis == 1 ? m : n, len = axis == 1 ? n : m;
  const std::size_t lane_stride = axis == 1 ? n : 1, step = axis == 1 ? 1 : n;
  std::vector<Real> out(x.numel());
  const auto in = x.data();
  for (std::size_t l = 0; l < lanes; ++l) {
    const std::size_t base = l * lane_stride;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, in[base + k * step]);
    double total = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      const Real e = std::exp(in[base + k * step] - mx);
      out[base + k * step] = e;
      total += e;
    }
    const Real inv = static_cast<Real>(1.0 / total);
    for (std::size_t k = 0; k < len; ++k) out[base + k * step] *= inv;
  }
  return make_result(x.shape(), std::move(out), "softmax", {&x},
                     [lanes, len, lane_stride, step](Node& self) {
                       Node& a = input(self, 0);
                       if (!a.requires_grad) return;
                       a.ensure_grad();
                       for (std::size_t l = 0; l < lanes; ++l) {
                         const std::size_t base = l * lane_stride;
                         double dot = 0.0;
                         for (std::size_t k = 0; k < len; ++k) {
                           const std::size_t i = base + k * step;
                           dot += static_cast<double>(self.grad[i]) * self.value[i];
                         }
                         for (std::size_t k = 0; k < len; ++k) {
                           const std::size_t i = base + k * step;
                           a.grad[i] += self.value[i] * (self.grad[i] - static_cast<Real>(dot));
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, Real eps) {
  require_rank2(x, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<Real> out(x.numel());
  std::vector<Real> inv_std(m);
  const auto in = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += in[r * n + c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = in[r * n + c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<Real>(is);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = static_cast<Real>((in[r * n + c] - mu) * is);
  }
  return make_result(x.shape(), std::move(out), "layer_norm", {&x}, [m, n, inv_std](Node& self) {
    Node& a = input(self, 0);
    if (!a.requires_grad) return;
    a.ensure_grad();
    for (std::size_t r = 0; r < m; ++r) {
      double g_mean = 0.0, gx_mean = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t i = r * n + c;
        g_mean += self.grad[i];
        gx_mean += static_cast<double>(self.grad[i]) * self.value[i];
      }
      g_mean /= static_cast<double>(n);
      gx_mean /= static_cast<double>(n);
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t i = r * n + c;
        a.grad[i] += static_cast<Real>(inv_std[r] * (self.grad[i] - g_mean - self.value[i] * gx_mean));
      }
    }
  });
}

Tensor dropout(const Tensor& x, Real rate, bool training, uint64_t key) {
  if (!training || rate <= Real(0.0)) return x;
  if (rate >= Real(1.0)) throw std::invalid_argument("dropout: rate must be < 1");
  const Real keep_scale = Real(1.0) / (Real(1.0) - rate);
  std::vector<Real> mask(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>(mix_key(key, i, 0x5eed) >> 11) * 0x1.0p-53;
    mask[i] = u >= rate ? keep_scale : Real(0.0);
  }
  std::vector<Real> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
  return make_result(x.shape(), std::move(out), "dropout", {&x}, [mask = std::move(mask)](Node& self) {
    Node& a = input(self, 0);
    if (!a.requires_grad) return;
    a.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) a.grad[i] += self.grad[i] * mask[i];
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add(matmul(x, weight), bias);
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_rank2(p, "concat");
  const std::size_t keep = axis == 0 ? parts[0].dim(1) : parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if ((axis == 0 ? p.dim(1) : p.dim(0)) != keep) mismatch("concat", parts[0].shape(), p.shape());
    total += p.dim(axis);
  }
  const Shape shape = axis == 0 ? Shape{total, keep} : Shape{keep, total};
  std::vector<Real> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto v = p.data();
    if (axis == 0) {
      std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(off * keep));
    } else {
      const std::size_t w = p.dim(1);
      for (std::size_t r = 0; r < keep; ++r)
        for (std::size_t c = 0; c < w; ++c) out[r * total + off + c] = v[r * w + c];
    }
    off += p.dim(axis);
  }

  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(out);
  node->op = "concat";
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& p : parts) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& p : parts) node->inputs.push_back(p.shared());
    node->backward = [axis, keep, total, offsets](Node& self) {
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        Node& a = *self.inputs[k];
        if (!a.requires_grad) continue;
        a.ensure_grad();
        if (axis == 0) {
          for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += self.grad[offsets[k] * keep + i];
        } else {
          const std::size_t w = a.shape[1];
          for (std::size_t r = 0; r < keep; ++r)
            for (std::size_t c = 0; c < w; ++c) a.grad[r * w + c] += self.grad[r * total + offsets[k] + c];
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice");
  if (axis != 0 && axis != 1) throw ShapeError("slice: axis must be 0 or 1");
  if (begin > end || end > x.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of bounds for " +
                     shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  const std::size_t om = axis == 0 ? end - begin : m, on = axis == 1 ? end - begin : n;
  const std::size_t r0 = axis == 0 ? begin : 0, c0 = axis == 1 ? begin : 0;
  std::vector<Real> out(om * on);
  const auto in = x.data();
  for (std::size_t r = 0; r < om; ++r)
    for (std::size_t c = 0; c < on; ++c) out[r * on + c] = in[(r + r0) * n + c + c0];
  return make_result({om, on}, std::move(out), "slice", {&x}, [om, on, r0, c0, n](Node& self) {
    Node& a = input(self, 0);
    if (!a.requires_grad) return;
    a.ensure_grad();
    for (std::size_t r = 0; r < om; ++r)
      for (std::size_t c = 0; c < on; ++c) a.grad[(r + r0) * n + c + c0] += self.grad[r * on + c];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (Real v : x.data()) total += v;
  return make_result({1}, {static_cast<Real>(total)}, "sum", {&x}, [](Node& self) {
    Node& a = input(self, 0);
    if (!a.requires_grad) return;
    a.ensure_grad();
    for (auto& g : a.grad) g += self.grad[0];
  });
}

Tensor sum(const Tensor& x, int axis) {
  require_rank2(x, "sum");
  if (axis != 0 && axis != 1) throw ShapeError("sum: axis must be 0 or 1");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const Shape shape = axis == 0 ? Shape{1, n} : Shape{m, 1};
  std::vector<double> acc(shape_numel(shape), 0.0);
  const auto in = x.data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) acc[axis == 0 ? c : r] += in[r * n + c];
  std::vector<Real> out(acc.begin(), acc.end());
  return make_result(shape, std::move(out), "sum_axis", {&x}, [axis, m, n](Node& self) {
    Node& a = input(self, 0);
    if (!a.requires_grad) return;
    a.ensure_grad();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) a.grad[r * n + c] += self.grad[axis == 0 ? c : r];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), Real(1.0) / static_cast<Real>(x.numel()));
}

Tensor mean(const Tensor& x, int axis) {
  const std::size_t len = x.dim(static_cast<std::size_t>(axis));
  if (len == 0) throw ShapeError("mean: empty axis in " + shape_str(x.shape()));
  return scale(sum(x, axis), Real(1.0) / static_cast<Real>(len));
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<Real> out(x.numel());
  const auto in = x.data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c * m + r] = in[r * n + c];
  return make_result({n, m}, std::move(out), "transpose", {&x}, [m, n](Node& self) {
    Node& a = input(self, 0);
    if (!a.requires_grad) return;
    a.ensure_grad();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) a.grad[r * n + c] += self.grad[c * m + r];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) mismatch("reshape", x.shape(), shape);
  std::vector<Real> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {&x}, [](Node& self) {
    Node& a = input(self, 0);
    if (!a.requires_grad) return;
    a.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) a.grad[i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const int64_t> indices, std::size_t group) {
  require_rank2(x, "gather_rows");
  if (group == 0 || indices.size() % group != 0)
    throw ShapeError("gather_rows: index count " + std::to_string(indices.size()) + " not divisible by group " +
                     std::to_string(group));
  const std::size_t rows = x.dim(0), c = x.dim(1), out_rows = indices.size() / group;
  for (int64_t idx : indices)
    if (idx < -1 || idx >= static_cast<int64_t>(rows))
      throw ShapeError("gather_rows: index " + std::to_string(idx) + " out of range for " + shape_str(x.shape()));
  std::vector<Real> out(out_rows * group * c, Real(0.0));
  const auto in = x.data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] < 0) continue;
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(indices[k] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(k * c));
  }
  std::vector<int64_t> idx(indices.begin(), indices.end());
  return make_result({out_rows, group * c}, std::move(out), "gather_rows", {&x},
                     [idx = std::move(idx), c](Node& self) {
                       Node& a = input(self, 0);
                       if (!a.requires_grad) return;
                       a.ensure_grad();
                       for (std::size_t k = 0; k < idx.size(); ++k) {
                         if (idx[k] < 0) continue;
                         Real* dst = a.grad.data() + idx[k] * c;
                         const Real* src = self.grad.data() + k * c;
                         for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
                       }
                     });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got " + (loss.defined() ? shape_str(loss.shape()) : "[]"));
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order; reversed, each node is
  // visited after every consumer has pushed its gradient.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (n->backward) n->grad.assign(n->value.size(), Real(0.0));
  root->ensure_grad();
  root->grad[0] += Real(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

}  // namespace ad
FRUITLET_PRECISION_END
}  // namespace fruitlet
