#pragma once

// Reverse-mode automatic differentiation over dense row-major float64 tensors.
//
// A Tensor is a cheap handle to shared storage. Operations on tensors that
// require gradients record a backward closure on the result; `backward()` on a
// scalar walks the recorded graph once in reverse topological order and then
// releases it. The graph is rebuilt on every forward pass.

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lanistr {

using Shape = std::vector<std::size_t>;

/// Raised for every contract violation inside the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Copy of the values with no graph history.
  Tensor detach() const;
  /// Fresh leaf tensor with its own storage.
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
  friend struct TensorAccess;
};

/// Reverse pass from a scalar loss. Fills `grad` on every reachable tensor that
/// requires gradients and releases the recorded graph.
void backward(const Tensor& loss);

/// Non-finite results raise an Error while checked mode is on (thread-local).
void set_checked_mode(bool enabled);
bool checked_mode();

class CheckedModeGuard {
 public:
  explicit CheckedModeGuard(bool enabled) : previous_(checked_mode()) { set_checked_mode(enabled); }
  ~CheckedModeGuard() { set_checked_mode(previous_); }
  CheckedModeGuard(const CheckedModeGuard&) = delete;
  CheckedModeGuard& operator=(const CheckedModeGuard&) = delete;

 private:
  bool previous_;
};

// Element-wise binary ops. Shapes must match, or `b`'s shape must be a suffix
// of `a`'s shape, in which case `b` is repeated over the leading extents.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor scale(const Tensor& x, double c);
Tensor neg(const Tensor& x);

// Unary ops.
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Gated linear unit over the last axis: first half ⊙ sigmoid(second half).
Tensor glu(const Tensor& x);

/// [..., N, K] x [K, M] -> [..., N, M], or batched [B, N, K] x [B, K, M].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces one axis away.
Tensor sum_axis(const Tensor& x, std::size_t axis);

Tensor softmax(const Tensor& x, std::size_t axis);
/// Row-wise Euclidean projection onto the probability simplex (last axis).
Tensor sparsemax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Row-wise cosine similarity over the last axis; vectors give a scalar.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

/// Forward identity, backward zero.
Tensor stop_gradient(const Tensor& x);

/// Looks up rows of `table` [V, D]; result shape is `index_shape` + [D].
Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& index_shape);

/// Treats `x` as [x.dim(0), rest...] and gathers the listed leading rows.
/// Repeated rows are allowed; their gradients accumulate.
Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows);

/// Rows of the flattened [R, D] view of `x` selected where `mask` is true,
/// returned as [count, D].
Tensor masked_select(const Tensor& x, const std::vector<bool>& mask);

/// Mean cross-entropy of logits [M, V] against class ids.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

/// Inverted dropout. Identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

/// Multi-head scaled dot-product attention. q, k, v: [B, N, D]; output [B, N, D].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads);

}  // namespace lanistr
