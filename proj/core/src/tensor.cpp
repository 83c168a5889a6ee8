#include "lanistr/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace lanistr {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using StridedConstMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

// Every buffer shares one alignment so Eigen peels vectorized loops identically
// from run to run; otherwise reductions can differ in the last bit.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

using BackwardFn = std::function<void(TensorImpl&)>;

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;
  bool requires_grad = false;
  // Set on tensors produced by a recorded op; cleared once backward has run.
  bool recorded = false;
  bool consumed = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  BackwardFn backward_fn;

  Buffer& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

namespace {

thread_local bool g_checked = false;

bool needs_grad(const Tensor& t) { return t.defined() && t.impl()->requires_grad; }

TensorImpl& parent(TensorImpl& self, std::size_t i) { return *self.parents[i]; }

Tensor make_result(const char* op, Shape shape, Buffer data, std::span<const Tensor> inputs,
                   BackwardFn fn);

Tensor make_result(const char* op, Shape shape, Buffer data, std::initializer_list<Tensor> inputs,
                   BackwardFn fn) {
  return make_result(op, std::move(shape), std::move(data), std::span<const Tensor>(inputs.begin(), inputs.size()),
                     std::move(fn));
}

std::string op_error(const char* op, const std::string& what) {
  return std::string(op) + ": " + what;
}

// `what` is either a message or a callable producing one, so hot paths only
// build strings on failure.
template <typename Msg>
void require(bool cond, const char* op, Msg&& what) {
  if (cond) return;
  if constexpr (std::is_invocable_v<Msg>) {
    throw Error(op_error(op, std::string(what())));
  } else {
    throw Error(op_error(op, std::string(what)));
  }
}

void require_defined(const Tensor& t, const char* op) {
  require(t.defined(), op, "undefined tensor operand");
}

}  // namespace

struct TensorAccess {
  static Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }
};

namespace {

Tensor make_result(const char* op, Shape shape, Buffer data, std::span<const Tensor> inputs,
                   BackwardFn fn) {
  if (g_checked) {
    for (double v : data) {
      if (!std::isfinite(v)) throw Error(op_error(op, "non-finite output"));
    }
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool any = false;
  for (const auto& in : inputs) any = any || needs_grad(in);
  if (any && fn) {
    impl->requires_grad = true;
    impl->recorded = true;
    for (const auto& in : inputs) impl->parents.push_back(in.shared());
    impl->backward_fn = std::move(fn);
  }
  return TensorAccess::wrap(std::move(impl));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

struct Broadcast {
  Shape out_shape;
  std::size_t n_out = 0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
};

Broadcast broadcast_shapes(const char* op, const Tensor& a, const Tensor& b) {
  require_defined(a, op);
  require_defined(b, op);
  Broadcast bc;
  if (a.shape() == b.shape() || is_suffix(b.shape(), a.shape())) {
    bc.out_shape = a.shape();
  } else if (is_suffix(a.shape(), b.shape())) {
    bc.out_shape = b.shape();
  } else {
    throw Error(op_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape())));
  }
  bc.n_out = numel(bc.out_shape);
  bc.n_a = a.size();
  bc.n_b = b.size();
  return bc;
}

// Element-wise binary op with partials da = f_a(x, y), db = f_b(x, y). With
// suffix broadcasting the smaller operand repeats in contiguous blocks, so the
// loops walk blocks instead of taking an index modulo per element.
template <typename F, typename Da, typename Db>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, F f, Da da, Db db) {
  Broadcast bc = broadcast_shapes(op, a, b);
  auto ad = a.data();
  auto bd = b.data();
  Buffer out(bc.n_out);
  const std::size_t na = bc.n_a, nb = bc.n_b;
  for (std::size_t o = 0; o < bc.n_out; o += std::min(na, nb)) {
    const double* pa = ad.data() + (na == bc.n_out ? o : 0);
    const double* pb = bd.data() + (nb == bc.n_out ? o : 0);
    double* po = out.data() + o;
    for (std::size_t j = 0, n = std::min(na, nb); j < n; ++j) po[j] = f(pa[j], pb[j]);
  }
  return make_result(op, bc.out_shape, std::move(out), {a, b}, [bc, da, db](TensorImpl& self) {
    TensorImpl& pa = parent(self, 0);
    TensorImpl& pb = parent(self, 1);
    const std::size_t na = bc.n_a, nb = bc.n_b, block = std::min(na, nb);
    const double* g = self.grad.data();
    double* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
    double* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
    for (std::size_t o = 0; o < bc.n_out; o += block) {
      const std::size_t oa = na == bc.n_out ? o : 0;
      const std::size_t ob = nb == bc.n_out ? o : 0;
      const double* xa = pa.data.data() + oa;
      const double* xb = pb.data.data() + ob;
      if (ga) {
        for (std::size_t j = 0; j < block; ++j) ga[oa + j] += g[o + j] * da(xa[j], xb[j]);
      }
      if (gb) {
        for (std::size_t j = 0; j < block; ++j) gb[ob + j] += g[o + j] * db(xa[j], xb[j]);
      }
    }
  });
}

// Element-wise unary op; the derivative sees both input and output values.
template <typename F, typename D>
Tensor unary_op(const char* op, const Tensor& x, F f, D d) {
  require_defined(x, op);
  auto xd = x.data();
  Buffer out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  return make_result(op, x.shape(), std::move(out), {x}, [d](TensorImpl& self) {
    TensorImpl& px = parent(self, 0);
    auto& gx = px.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * d(px.data[i], self.data[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_derivative(double x) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// Michelot's active-set projection onto the simplex; returns the threshold.
double simplex_threshold(std::span<const double> z) {
  std::vector<char> active(z.size(), 1);
  std::size_t count = z.size();
  double total = std::accumulate(z.begin(), z.end(), 0.0);
  double tau = (total - 1.0) / static_cast<double>(count);
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (active[i] && z[i] <= tau) {
        active[i] = 0;
        total -= z[i];
        --count;
        changed = true;
      }
    }
    if (changed) tau = (total - 1.0) / static_cast<double>(count);
  }
  return tau;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor() = default;

namespace {

Tensor leaf(Shape shape, Buffer data, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return TensorAccess::wrap(std::move(impl));
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw Error("Tensor: shape " + shape_str(shape) + " holds " + std::to_string(numel(shape)) +
                " values but " + std::to_string(data.size()) + " were given");
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data.assign(data.begin(), data.end());
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return leaf(std::move(shape), Buffer(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw Error("Tensor: access to undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape().size()) {
    throw Error("Tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::size() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!impl_) throw Error("Tensor: access to undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw Error("Tensor: access to undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (size() != 1) throw Error("Tensor::item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!impl_) throw Error("Tensor: access to undefined tensor");
  if (impl_->recorded) throw Error("Tensor: requires_grad can only be set on leaf tensors");
  impl_->requires_grad = value;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }

std::span<const double> Tensor::grad() const {
  if (!impl_) throw Error("Tensor: access to undefined tensor");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const { return leaf(shape(), impl_->data, false); }

Tensor Tensor::clone() const { return leaf(shape(), impl_->data, requires_grad()); }

void set_checked_mode(bool enabled) { g_checked = enabled; }
bool checked_mode() { return g_checked; }

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw Error("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  TensorImpl* root = loss.impl();
  if (root->consumed) throw Error("backward: graph already released; run the forward pass again");
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        if (p->consumed) throw Error("backward: graph already released; run the forward pass again");
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer();
  root->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->backward_fn) continue;
    node->grad_buffer();
    node->backward_fn(*node);
  }
  for (TensorImpl* node : order) {
    if (!node->recorded) continue;
    node->backward_fn = nullptr;
    node->parents.clear();
    node->consumed = true;
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
  // Keep the loss gradient visible to callers.
  root->grad.assign(1, 1.0);
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op("add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& x, double c) {
  return unary_op("scale", x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor sqrt(const Tensor& x) {
  return unary_op(
      "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor exp(const Tensor& x) {
  return unary_op("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary_op("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary_op("gelu", x, gelu_value, [](double v, double) { return gelu_derivative(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor glu(const Tensor& x) {
  require_defined(x, "glu");
  require(x.rank() >= 1 && x.shape().back() % 2 == 0 && x.shape().back() > 0, "glu", [&] { return "last extent must be even and positive, got " + shape_str(x.shape()); });
  const std::size_t half = x.shape().back() / 2;
  const std::size_t axis = x.rank() - 1;
  return mul(slice(x, axis, 0, half), sigmoid(slice(x, axis, half, half)));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const auto mismatch = [&] {
    return "incompatible shapes " + shape_str(sa) + " and " + shape_str(sb);
  };
  require(sa.size() >= 2 && sb.size() >= 2, "matmul", [&] { return mismatch(); });

  if (sb.size() == 2) {
    const std::size_t k = sa.back();
    require(k == sb[0], "matmul", [&] { return mismatch(); });
    const std::size_t m = sb[1];
    const std::size_t rows = a.size() / std::max<std::size_t>(k, 1);
    Shape out_shape = sa;
    out_shape.back() = m;
    Buffer out(rows * m);
    MutMap(out.data(), rows, m).noalias() = ConstMap(a.data().data(), rows, k) * ConstMap(b.data().data(), k, m);
    return make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                       [rows, k, m](TensorImpl& self) {
                         TensorImpl& pa = parent(self, 0);
                         TensorImpl& pb = parent(self, 1);
                         ConstMap g(self.grad.data(), rows, m);
                         if (pa.requires_grad) {
                           MutMap(pa.grad_buffer().data(), rows, k).noalias() +=
                               g * ConstMap(pb.data.data(), k, m).transpose();
                         }
                         if (pb.requires_grad) {
                           MutMap(pb.grad_buffer().data(), k, m).noalias() +=
                               ConstMap(pa.data.data(), rows, k).transpose() * g;
                         }
                       });
  }

  require(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[1], "matmul", [&] { return mismatch(); });
  const std::size_t batch = sa[0], n = sa[1], k = sa[2], m = sb[2];
  Buffer out(batch * n * m);
  for (std::size_t i = 0; i < batch; ++i) {
    MutMap(out.data() + i * n * m, n, m).noalias() =
        ConstMap(a.data().data() + i * n * k, n, k) * ConstMap(b.data().data() + i * k * m, k, m);
  }
  return make_result("matmul", {batch, n, m}, std::move(out), {a, b}, [batch, n, k, m](TensorImpl& self) {
    TensorImpl& pa = parent(self, 0);
    TensorImpl& pb = parent(self, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      ConstMap g(self.grad.data() + i * n * m, n, m);
      if (pa.requires_grad) {
        MutMap(pa.grad_buffer().data() + i * n * k, n, k).noalias() +=
            g * ConstMap(pb.data.data() + i * k * m, k, m).transpose();
      }
      if (pb.requires_grad) {
        MutMap(pb.grad_buffer().data() + i * k * m, k, m).noalias() +=
            ConstMap(pa.data.data() + i * n * k, n, k).transpose() * g;
      }
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_defined(x, "transpose");
  require(x.rank() >= 2, "transpose", [&] { return "needs rank >= 2, got " + shape_str(x.shape()); });
  Shape out_shape = x.shape();
  const std::size_t r = out_shape[out_shape.size() - 2];
  const std::size_t c = out_shape.back();
  std::swap(out_shape[out_shape.size() - 2], out_shape.back());
  const std::size_t batch = x.size() / std::max<std::size_t>(r * c, 1);
  Buffer out(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    MutMap(out.data() + b * r * c, c, r) = ConstMap(x.data().data() + b * r * c, r, c).transpose();
  }
  return make_result("transpose", std::move(out_shape), std::move(out), {x}, [batch, r, c](TensorImpl& self) {
    auto& gx = parent(self, 0).grad_buffer();
    for (std::size_t b = 0; b < batch; ++b) {
      MutMap(gx.data() + b * r * c, r, c) += ConstMap(self.grad.data() + b * r * c, c, r).transpose();
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  require(numel(shape) == x.size(), "reshape", [&] { return "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape); });
  Buffer out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [](TensorImpl& self) {
    auto& gx = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat", "no operands");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat", [&] { return "axis " + std::to_string(axis) + " out of range for " + shape_str(first); });
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    require(ok, "concat", [&] { return "shape mismatch " + shape_str(first) + " vs " + shape_str(s); });
    out_shape[axis] += s[axis];
  }
  const AxisSplit total = split_axis(out_shape, axis);
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * total.inner);
  const std::size_t out_row = total.len * total.inner;
  Buffer out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    auto src = parts[pi].data();
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * widths[pi]), widths[pi],
                  out.begin() + static_cast<std::ptrdiff_t>(o * out_row + offset));
    }
    offset += widths[pi];
  }

  return make_result("concat", std::move(out_shape), std::move(out), std::span<const Tensor>(parts),
                     [widths, outer = total.outer, out_row](TensorImpl& self) {
                       std::size_t off = 0;
                       for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                         TensorImpl& p = *self.parents[pi];
                         if (p.requires_grad) {
                           auto& g = p.grad_buffer();
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t j = 0; j < widths[pi]; ++j) {
                               g[o * widths[pi] + j] += self.grad[o * out_row + off + j];
                             }
                           }
                         }
                         off += widths[pi];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined(x, "slice");
  require(axis < x.rank(), "slice", [&] { return "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()); });
  require(start + length <= x.shape()[axis], "slice", [&] { return "range [" + std::to_string(start) + ", " + std::to_string(start + length) + ") exceeds " +
              shape_str(x.shape()) + " on axis " + std::to_string(axis); });
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t width = length * s.inner;
  const std::size_t row = s.len * s.inner;
  const std::size_t off = start * s.inner;
  Buffer out(s.outer * width);
  auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(o * row + off), width,
                out.begin() + static_cast<std::ptrdiff_t>(o * width));
  }
  return make_result("slice", std::move(out_shape), std::move(out), {x},
                     [outer = s.outer, width, row, off](TensorImpl& self) {
                       auto& gx = parent(self, 0).grad_buffer();
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t j = 0; j < width; ++j) gx[o * row + off + j] += self.grad[o * width + j];
                       }
                     });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  auto xd = x.data();
  const double total = std::accumulate(xd.begin(), xd.end(), 0.0);
  return make_result("sum", {}, {total}, {x}, [](TensorImpl& self) {
    auto& gx = parent(self, 0).grad_buffer();
    for (double& g : gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  require(x.size() > 0, "mean", "empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  require_defined(x, "sum_axis");
  require(axis < x.rank(), "sum_axis", [&] { return "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()); });
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Buffer out(s.outer * s.inner, 0.0);
  auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.len; ++l) {
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xd[(o * s.len + l) * s.inner + i];
    }
  }
  return make_result("sum_axis", std::move(out_shape), std::move(out), {x}, [s](TensorImpl& self) {
    auto& gx = parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t l = 0; l < s.len; ++l) {
        for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.len + l) * s.inner + i] += self.grad[o * s.inner + i];
      }
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_defined(x, "softmax");
  require(axis < x.rank(), "softmax", [&] { return "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()); });
  const AxisSplit s = split_axis(x.shape(), axis);
  auto xd = x.data();
  Buffer out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, xd[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const double e = std::exp(xd[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= z;
    }
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [s](TensorImpl& self) {
    auto& gx = parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) dot += self.grad[base + l * s.inner] * self.data[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t j = base + l * s.inner;
          gx[j] += self.data[j] * (self.grad[j] - dot);
        }
      }
    }
  });
}

Tensor sparsemax(const Tensor& x) {
  require_defined(x, "sparsemax");
  require(x.rank() >= 1 && x.shape().back() > 0, "sparsemax", [&] { return "empty input " + shape_str(x.shape()); });
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  auto xd = x.data();
  Buffer out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = xd.subspan(r * width, width);
    const double tau = simplex_threshold(row);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = std::max(row[j] - tau, 0.0);
  }
  return make_result("sparsemax", x.shape(), std::move(out), {x}, [rows, width](TensorImpl& self) {
    auto& gx = parent(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * width;
      double acc = 0.0;
      std::size_t support = 0;
      for (std::size_t j = 0; j < width; ++j) {
        if (self.data[base + j] > 0.0) {
          acc += self.grad[base + j];
          ++support;
        }
      }
      const double avg = support ? acc / static_cast<double>(support) : 0.0;
      for (std::size_t j = 0; j < width; ++j) {
        if (self.data[base + j] > 0.0) gx[base + j] += self.grad[base + j] - avg;
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  require_defined(gamma, "layer_norm");
  require_defined(beta, "layer_norm");
  require(x.rank() >= 1 && x.shape().back() > 0, "layer_norm", [&] { return "zero-length normalized axis in " + shape_str(x.shape()); });
  const std::size_t width = x.shape().back();
  require(gamma.shape() == Shape{width} && beta.shape() == Shape{width}, "layer_norm", [&] { return "affine shapes " + shape_str(gamma.shape()) + " / " + shape_str(beta.shape()) + " do not match " +
              shape_str(x.shape()); });
  const std::size_t rows = x.size() / width;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  Buffer out(x.size());
  auto xhat = std::make_shared<Buffer>(x.size());
  auto rstd = std::make_shared<Buffer>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (std::size_t j = 0; j < width; ++j) {
      const double h = (row[j] - mu) * inv;
      (*xhat)[r * width + j] = h;
      out[r * width + j] = gd[j] * h + bd[j];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                     [rows, width, xhat, rstd](TensorImpl& self) {
                       TensorImpl& px = parent(self, 0);
                       TensorImpl& pg = parent(self, 1);
                       TensorImpl& pb = parent(self, 2);
                       const double n = static_cast<double>(width);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* g = self.grad.data() + r * width;
                         const double* h = xhat->data() + r * width;
                         if (pg.requires_grad) {
                           auto& gg = pg.grad_buffer();
                           for (std::size_t j = 0; j < width; ++j) gg[j] += g[j] * h[j];
                         }
                         if (pb.requires_grad) {
                           auto& gb = pb.grad_buffer();
                           for (std::size_t j = 0; j < width; ++j) gb[j] += g[j];
                         }
                         if (px.requires_grad) {
                           auto& gx = px.grad_buffer();
                           double mean_dh = 0.0, mean_dh_h = 0.0;
                           for (std::size_t j = 0; j < width; ++j) {
                             const double dh = g[j] * pg.data[j];
                             mean_dh += dh;
                             mean_dh_h += dh * h[j];
                           }
                           mean_dh /= n;
                           mean_dh_h /= n;
                           for (std::size_t j = 0; j < width; ++j) {
                             const double dh = g[j] * pg.data[j];
                             gx[r * width + j] += (*rstd)[r] * (dh - mean_dh - h[j] * mean_dh_h);
                           }
                         }
                       }
                     });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  require_defined(a, "cosine_similarity");
  require_defined(b, "cosine_similarity");
  require(a.shape() == b.shape() && a.rank() >= 1, "cosine_similarity", [&] { return "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()); });
  const std::size_t width = a.shape().back();
  const std::size_t rows = width ? a.size() / width : 0;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  auto ad = a.data();
  auto bd = b.data();
  Buffer out(rows);
  auto norms = std::make_shared<Buffer>(2 * rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double x = ad[r * width + j], y = bd[r * width + j];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na == 0.0 || nb == 0.0) throw Error("cosine_similarity: zero-norm input at row " + std::to_string(r));
    (*norms)[2 * r] = na;
    (*norms)[2 * r + 1] = nb;
    out[r] = dot / (na * nb);
  }
  return make_result("cosine_similarity", std::move(out_shape), std::move(out), {a, b},
                     [rows, width, norms](TensorImpl& self) {
                       TensorImpl& pa = parent(self, 0);
                       TensorImpl& pb = parent(self, 1);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double na = (*norms)[2 * r], nb = (*norms)[2 * r + 1];
                         const double c = self.data[r];
                         const double g = self.grad[r];
                         const double* x = pa.data.data() + r * width;
                         const double* y = pb.data.data() + r * width;
                         if (pa.requires_grad) {
                           auto& ga = pa.grad_buffer();
                           for (std::size_t j = 0; j < width; ++j) {
                             ga[r * width + j] += g * (y[j] / (na * nb) - c * x[j] / (na * na));
                           }
                         }
                         if (pb.requires_grad) {
                           auto& gb = pb.grad_buffer();
                           for (std::size_t j = 0; j < width; ++j) {
                             gb[r * width + j] += g * (x[j] / (na * nb) - c * y[j] / (nb * nb));
                           }
                         }
                       }
                     });
}

Tensor stop_gradient(const Tensor& x) {
  require_defined(x, "stop_gradient");
  return x.detach();
}

Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& index_shape) {
  require_defined(table, "embedding");
  require(table.rank() == 2, "embedding", [&] { return "table must be [V, D], got " + shape_str(table.shape()); });
  require(numel(index_shape) == ids.size(), "embedding", [&] { return "index shape " + shape_str(index_shape) + " does not match " + std::to_string(ids.size()) + " ids"; });
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  auto td = table.data();
  Buffer out(ids.size() * width);
  std::vector<int> kept(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw Error("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  Shape out_shape = index_shape;
  out_shape.push_back(width);
  return make_result("embedding", std::move(out_shape), std::move(out), {table},
                     [kept = std::move(kept), width](TensorImpl& self) {
                       auto& gt = parent(self, 0).grad_buffer();
                       for (std::size_t i = 0; i < kept.size(); ++i) {
                         for (std::size_t j = 0; j < width; ++j) {
                           gt[static_cast<std::size_t>(kept[i]) * width + j] += self.grad[i * width + j];
                         }
                       }
                     });
}

Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_defined(x, "take_rows");
  require(x.rank() >= 1, "take_rows", "scalar operand");
  const std::size_t n_rows = x.dim(0);
  const std::size_t width = n_rows ? x.size() / n_rows : 0;
  auto xd = x.data();
  Buffer out(rows.size() * width);
  std::vector<std::size_t> kept(rows.begin(), rows.end());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < n_rows, "take_rows", [&] { return "row " + std::to_string(rows[i]) + " out of range for " + shape_str(x.shape()); });
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(rows[i] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  return make_result("take_rows", std::move(out_shape), std::move(out), {x},
                     [kept = std::move(kept), width](TensorImpl& self) {
                       auto& gx = parent(self, 0).grad_buffer();
                       for (std::size_t i = 0; i < kept.size(); ++i) {
                         for (std::size_t j = 0; j < width; ++j) gx[kept[i] * width + j] += self.grad[i * width + j];
                       }
                     });
}

Tensor masked_select(const Tensor& x, const std::vector<bool>& mask) {
  require_defined(x, "masked_select");
  require(x.rank() >= 1 && x.shape().back() > 0, "masked_select", [&] { return "empty operand " + shape_str(x.shape()); });
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  require(mask.size() == rows, "masked_select", [&] { return "mask of length " + std::to_string(mask.size()) + " for " + std::to_string(rows) + " rows"; });
  std::vector<std::size_t> picked;
  for (std::size_t r = 0; r < rows; ++r) {
    if (mask[r]) picked.push_back(r);
  }
  return take_rows(reshape(x, {rows, width}), picked);
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_defined(logits, "cross_entropy");
  require(logits.rank() == 2, "cross_entropy", [&] { return "logits must be [M, V], got " + shape_str(logits.shape()); });
  const std::size_t m = logits.dim(0), v = logits.dim(1);
  require(m == targets.size() && m > 0, "cross_entropy", [&] { return std::to_string(targets.size()) + " targets for logits " + shape_str(logits.shape()); });
  auto ld = logits.data();
  auto probs = std::make_shared<Buffer>(m * v);
  std::vector<int> kept(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    require(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < v, "cross_entropy", [&] { return "target " + std::to_string(targets[r]) + " outside [0, " + std::to_string(v) + ")"; });
    const double* row = ld.data() + r * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < v; ++j) (*probs)[r * v + j] = std::exp(row[j] - log_z);
    total += log_z - row[targets[r]];
  }
  return make_result("cross_entropy", {}, {total / static_cast<double>(m)}, {logits},
                     [m, v, probs, kept = std::move(kept)](TensorImpl& self) {
                       auto& gl = parent(self, 0).grad_buffer();
                       const double g = self.grad[0] / static_cast<double>(m);
                       for (std::size_t r = 0; r < m; ++r) {
                         for (std::size_t j = 0; j < v; ++j) {
                           const double onehot = static_cast<int>(j) == kept[r] ? 1.0 : 0.0;
                           gl[r * v + j] += g * ((*probs)[r * v + j] - onehot);
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  require_defined(x, "dropout");
  require(rate >= 0.0 && rate < 1.0, "dropout", "rate must be in [0, 1)");
  if (rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  Buffer m(x.size());
  for (double& v : m) v = keep(rng) ? s : 0.0;
  return mul(x, leaf(x.shape(), std::move(m), false));
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads) {
  const char* op = "multi_head_attention";
  require_defined(q, op);
  require_defined(k, op);
  require_defined(v, op);
  require(q.rank() == 3 && q.shape() == k.shape() && q.shape() == v.shape(), op, [&] { return "q/k/v shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()); });
  const std::size_t batch = q.dim(0), n = q.dim(1), d = q.dim(2);
  require(n_heads > 0 && d % n_heads == 0, op, [&] { return "width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) + " heads"; });
  const std::size_t dh = d / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<Buffer>(batch * n_heads * n * n);
  Buffer out(batch * n * d);
  RowMat scores(n, n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = b * n * d + h * dh;
      StridedConstMap qh(q.data().data() + off, n, dh, Eigen::OuterStride<>(d));
      StridedConstMap kh(k.data().data() + off, n, dh, Eigen::OuterStride<>(d));
      StridedConstMap vh(v.data().data() + off, n, dh, Eigen::OuterStride<>(d));
      scores.noalias() = qh * kh.transpose();
      scores *= inv_scale;
      MutMap p(probs->data() + (b * n_heads + h) * n * n, n, n);
      for (std::size_t r = 0; r < n; ++r) {
        const double mx = scores.row(r).maxCoeff();
        p.row(r) = (scores.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
      }
      StridedMap(out.data() + off, n, dh, Eigen::OuterStride<>(d)).noalias() = p * vh;
    }
  }
  return make_result(op, q.shape(), std::move(out), {q, k, v},
                     [batch, n, d, dh, n_heads, inv_scale, probs](TensorImpl& self) {
                       TensorImpl& pq = parent(self, 0);
                       TensorImpl& pk = parent(self, 1);
                       TensorImpl& pv = parent(self, 2);
                       RowMat dp(n, n);
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t h = 0; h < n_heads; ++h) {
                           const std::size_t off = b * n * d + h * dh;
                           const Eigen::OuterStride<> st(d);
                           StridedConstMap go(self.grad.data() + off, n, dh, st);
                           StridedConstMap qh(pq.data.data() + off, n, dh, st);
                           StridedConstMap kh(pk.data.data() + off, n, dh, st);
                           StridedConstMap vh(pv.data.data() + off, n, dh, st);
                           ConstMap p(probs->data() + (b * n_heads + h) * n * n, n, n);
                           if (pv.requires_grad) {
                             StridedMap(pv.grad_buffer().data() + off, n, dh, st).noalias() += p.transpose() * go;
                           }
                           if (!pq.requires_grad && !pk.requires_grad) continue;
                           dp.noalias() = go * vh.transpose();
                           for (std::size_t r = 0; r < n; ++r) {
                             const double dot = dp.row(r).dot(p.row(r));
                             dp.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
                           }
                           dp *= inv_scale;
                           if (pq.requires_grad) {
                             StridedMap(pq.grad_buffer().data() + off, n, dh, st).noalias() += dp * kh;
                           }
                           if (pk.requires_grad) {
                             StridedMap(pk.grad_buffer().data() + off, n, dh, st).noalias() += dp.transpose() * qh;
                           }
                         }
                       }
                     });
}

}  // namespace lanistr
