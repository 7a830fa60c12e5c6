#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rearec/diag.hpp"
#include "rearec/errors.hpp"
#include "rearec/numeric/tensor.hpp"
#include "rearec/rng.hpp"

namespace rearec::numeric {

// Reverse-mode differentiation over a dynamically built graph. Every
// operation returns a shared node holding its value; nodes whose inputs
// require gradients also hold a pullback closure. backward() runs the
// pullbacks in reverse topological order from a scalar root.
//
// Inference graphs (no gradient leaves) drop parent edges on the fly, so
// intermediate tensors are freed as soon as their consumers are built.

template <typename T>
struct Node;

template <typename T>
using Value = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  Tensor<T> val;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Value<T>> parents;
  std::function<void(Node<T>&)> pullback;

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>(val.rows(), val.cols());
    return grad;
  }
};

template <typename T>
Value<T> leaf(Tensor<T> v, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->val = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
Value<T> constant(Tensor<T> v) {
  return leaf(std::move(v), false);
}

namespace detail {

template <typename T, typename Fn>
Value<T> make_op(Tensor<T> val, std::vector<Value<T>> parents, Fn&& pullback) {
  auto n = std::make_shared<Node<T>>();
  n->val = std::move(val);
  for (const auto& p : parents) n->requires_grad |= p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->pullback = std::forward<Fn>(pullback);
  }
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

template <typename T>
Value<T> matmul(const Value<T>& a, const Value<T>& b) {
  Tensor<T> out = matmul_plain(a->val, b->val);
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) add_matmul_nt(a->ensure_grad(), n.grad, b->val);
    if (b->requires_grad) add_matmul_tn(b->ensure_grad(), a->val, n.grad);
  });
}

template <typename T>
Value<T> transpose(const Value<T>& a) {
  Tensor<T> out(a->val.cols(), a->val.rows());
  for (int i = 0; i < a->val.rows(); ++i)
    for (int j = 0; j < a->val.cols(); ++j) out.at(j, i) = a->val.at(i, j);
  return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
    Tensor<T>& g = a->ensure_grad();
    for (int i = 0; i < n.grad.rows(); ++i)
      for (int j = 0; j < n.grad.cols(); ++j) g.at(j, i) += n.grad.at(i, j);
  });
}

template <typename T>
Value<T> add(const Value<T>& a, const Value<T>& b) {
  if (!a->val.same_shape(b->val)) throw ArgumentError("add: shape mismatch");
  Tensor<T> out = a->val;
  for (size_t i = 0; i < out.size(); ++i) out[i] += b->val[i];
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) {
      Tensor<T>& g = a->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (b->requires_grad) {
      Tensor<T>& g = b->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Value<T> sub(const Value<T>& a, const Value<T>& b) {
  if (!a->val.same_shape(b->val)) throw ArgumentError("sub: shape mismatch");
  Tensor<T> out = a->val;
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b->val[i];
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) {
      Tensor<T>& g = a->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (b->requires_grad) {
      Tensor<T>& g = b->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Value<T> mul(const Value<T>& a, const Value<T>& b) {
  if (!a->val.same_shape(b->val)) throw ArgumentError("mul: shape mismatch");
  Tensor<T> out = a->val;
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b->val[i];
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) {
      Tensor<T>& g = a->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * b->val[i];
    }
    if (b->requires_grad) {
      Tensor<T>& g = b->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * a->val[i];
    }
  });
}

template <typename T>
Value<T> scale(const Value<T>& a, double s) {
  Tensor<T> out = a->val;
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(out[i] * s);
  return detail::make_op<T>(std::move(out), {a}, [a, s](Node<T>& n) {
    Tensor<T>& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += static_cast<T>(n.grad[i] * s);
  });
}

template <typename T>
Value<T> neg(const Value<T>& a) {
  return scale(a, -1.0);
}

// Broadcast-add a 1xd row to every row of an m x d matrix.
template <typename T>
Value<T> add_rows(const Value<T>& a, const Value<T>& row) {
  if (row->val.rows() != 1 || row->val.cols() != a->val.cols())
    throw ArgumentError("add_rows: row must be 1 x cols(a)");
  Tensor<T> out = a->val;
  for (int i = 0; i < out.rows(); ++i) {
    T* dst = out.row_ptr(i);
    const T* src = row->val.row_ptr(0);
    for (int j = 0; j < out.cols(); ++j) dst[j] += src[j];
  }
  return detail::make_op<T>(std::move(out), {a, row}, [a, row](Node<T>& n) {
    if (a->requires_grad) {
      Tensor<T>& g = a->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (row->requires_grad) {
      Tensor<T>& g = row->ensure_grad();
      for (int i = 0; i < n.grad.rows(); ++i) {
        const T* src = n.grad.row_ptr(i);
        T* dst = g.row_ptr(0);
        for (int j = 0; j < n.grad.cols(); ++j) dst[j] += src[j];
      }
    }
  });
}

template <typename T>
Value<T> vexp(const Value<T>& a) {
  Tensor<T> out = a->val;
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
    Tensor<T>& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.val[i];
  });
}

template <typename T>
Value<T> vlog(const Value<T>& a) {
  Tensor<T> out = a->val;
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
  return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
    Tensor<T>& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / a->val[i];
  });
}

// Elementwise max(x, floor). Gradient passes only where x > floor.
template <typename T>
Value<T> clamp_min(const Value<T>& a, double floor) {
  Tensor<T> out = a->val;
  const T f = static_cast<T>(floor);
  for (size_t i = 0; i < out.size(); ++i) out[i] = out[i] > f ? out[i] : f;
  return detail::make_op<T>(std::move(out), {a}, [a, f](Node<T>& n) {
    Tensor<T>& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i)
      if (a->val[i] > f) g[i] += n.grad[i];
  });
}

template <typename T>
Value<T> gelu(const Value<T>& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  Tensor<T> out = a->val;
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = static_cast<double>(out[i]);
    out[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
  }
  return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
    Tensor<T>& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) {
      const double x = static_cast<double>(a->val[i]);
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      g[i] += static_cast<T>(static_cast<double>(n.grad[i]) * (cdf + x * pdf));
    }
  });
}

// Row-wise softmax with optional additive mask (0 where allowed, a large
// negative constant where disallowed). Numerically stabilized by row max.
template <typename T>
Value<T> softmax_rows(const Value<T>& a, const Tensor<T>* additive_mask = nullptr) {
  if (additive_mask && !additive_mask->same_shape(a->val))
    throw ArgumentError("softmax_rows: mask shape mismatch");
  Tensor<T> out(a->val.rows(), a->val.cols());
  const int cols = a->val.cols();
  for (int i = 0; i < a->val.rows(); ++i) {
    const T* src = a->val.row_ptr(i);
    T* dst = out.row_ptr(i);
    double row_max = -1e300;
    for (int j = 0; j < cols; ++j) {
      const double z = static_cast<double>(src[j]) +
                       (additive_mask ? static_cast<double>(additive_mask->at(i, j)) : 0.0);
      if (z > row_max) row_max = z;
    }
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double z = static_cast<double>(src[j]) +
                       (additive_mask ? static_cast<double>(additive_mask->at(i, j)) : 0.0);
      const double e = std::exp(z - row_max);
      dst[j] = static_cast<T>(e);
      denom += e;
    }
    for (int j = 0; j < cols; ++j) dst[j] = static_cast<T>(static_cast<double>(dst[j]) / denom);
  }
  return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
    Tensor<T>& g = a->ensure_grad();
    const int cols = n.val.cols();
    for (int i = 0; i < n.val.rows(); ++i) {
      const T* y = n.val.row_ptr(i);
      const T* dy = n.grad.row_ptr(i);
      double inner = 0.0;
      for (int j = 0; j < cols; ++j) inner += static_cast<double>(dy[j]) * y[j];
      T* dst = g.row_ptr(i);
      for (int j = 0; j < cols; ++j)
        dst[j] += static_cast<T>(y[j] * (static_cast<double>(dy[j]) - inner));
    }
  });
}

// Row-wise log-softmax; preferred over log(softmax(.)) for loss terms.
template <typename T>
Value<T> log_softmax_rows(const Value<T>& a, const Tensor<T>* additive_mask = nullptr) {
  if (additive_mask && !additive_mask->same_shape(a->val))
    throw ArgumentError("log_softmax_rows: mask shape mismatch");
  Tensor<T> out(a->val.rows(), a->val.cols());
  const int cols = a->val.cols();
  for (int i = 0; i < a->val.rows(); ++i) {
    const T* src = a->val.row_ptr(i);
    T* dst = out.row_ptr(i);
    double row_max = -1e300;
    for (int j = 0; j < cols; ++j) {
      const double z = static_cast<double>(src[j]) +
                       (additive_mask ? static_cast<double>(additive_mask->at(i, j)) : 0.0);
      dst[j] = static_cast<T>(z);
      if (z > row_max) row_max = z;
    }
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) denom += std::exp(static_cast<double>(dst[j]) - row_max);
    const double lse = row_max + std::log(denom);
    for (int j = 0; j < cols; ++j) dst[j] = static_cast<T>(static_cast<double>(dst[j]) - lse);
  }
  return detail::make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
    Tensor<T>& g = a->ensure_grad();
    const int cols = n.val.cols();
    for (int i = 0; i < n.val.rows(); ++i) {
      const T* z = n.val.row_ptr(i);
      const T* dy = n.grad.row_ptr(i);
      double dy_sum = 0.0;
      for (int j = 0; j < cols; ++j) dy_sum += static_cast<double>(dy[j]);
      T* dst = g.row_ptr(i);
      for (int j = 0; j < cols; ++j)
        dst[j] += static_cast<T>(static_cast<double>(dy[j]) -
                                 std::exp(static_cast<double>(z[j])) * dy_sum);
    }
  });
}

// Per-row layer normalization with learned gain/bias (each 1xd).
template <typename T>
Value<T> layer_norm(const Value<T>& x, const Value<T>& gain, const Value<T>& bias,
                    double eps = 1e-5) {
  const int rows = x->val.rows(), cols = x->val.cols();
  if (gain->val.cols() != cols || bias->val.cols() != cols || gain->val.rows() != 1 ||
      bias->val.rows() != 1)
    throw ArgumentError("layer_norm: gain/bias must be 1 x cols(x)");
  Tensor<T> out(rows, cols);
  auto xhat = std::make_shared<Tensor<T>>(rows, cols);
  auto inv_sigma = std::make_shared<std::vector<double>>(rows);
  for (int i = 0; i < rows; ++i) {
    const T* src = x->val.row_ptr(i);
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += static_cast<double>(src[j]);
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double c = static_cast<double>(src[j]) - mean;
      var += c * c;
    }
    var /= cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = inv;
    T* xh = xhat->row_ptr(i);
    T* dst = out.row_ptr(i);
    for (int j = 0; j < cols; ++j) {
      const double h = (static_cast<double>(src[j]) - mean) * inv;
      xh[j] = static_cast<T>(h);
      dst[j] = static_cast<T>(h * static_cast<double>(gain->val[j]) +
                              static_cast<double>(bias->val[j]));
    }
  }
  return detail::make_op<T>(std::move(out), {x, gain, bias},
                            [x, gain, bias, xhat, inv_sigma](Node<T>& n) {
    const int rows = n.val.rows(), cols = n.val.cols();
    for (int i = 0; i < rows; ++i) {
      const T* dy = n.grad.row_ptr(i);
      const T* xh = xhat->row_ptr(i);
      if (gain->requires_grad) {
        T* gg = gain->ensure_grad().row_ptr(0);
        for (int j = 0; j < cols; ++j) gg[j] += dy[j] * xh[j];
      }
      if (bias->requires_grad) {
        T* gb = bias->ensure_grad().row_ptr(0);
        for (int j = 0; j < cols; ++j) gb[j] += dy[j];
      }
      if (x->requires_grad) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int j = 0; j < cols; ++j) {
          const double dxh = static_cast<double>(dy[j]) * gain->val[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xh[j];
        }
        mean_dxhat /= cols;
        mean_dxhat_xhat /= cols;
        T* gx = x->ensure_grad().row_ptr(i);
        const double inv = (*inv_sigma)[i];
        for (int j = 0; j < cols; ++j) {
          const double dxh = static_cast<double>(dy[j]) * gain->val[j];
          gx[j] += static_cast<T>(inv * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat));
        }
      }
    }
  });
}

// Row gather: out row i = table row index[i].
template <typename T>
Value<T> gather_rows(const Value<T>& table, std::vector<int> index) {
  Tensor<T> out(static_cast<int>(index.size()), table->val.cols());
  for (size_t i = 0; i < index.size(); ++i) {
    const int r = index[i];
    if (r < 0 || r >= table->val.rows()) throw ArgumentError("gather_rows: index out of range");
    const T* src = table->val.row_ptr(r);
    T* dst = out.row_ptr(static_cast<int>(i));
    for (int j = 0; j < out.cols(); ++j) dst[j] = src[j];
  }
  return detail::make_op<T>(std::move(out), {table},
                            [table, index = std::move(index)](Node<T>& n) {
    Tensor<T>& g = table->ensure_grad();
    for (size_t i = 0; i < index.size(); ++i) {
      const T* src = n.grad.row_ptr(static_cast<int>(i));
      T* dst = g.row_ptr(index[i]);
      for (int j = 0; j < n.grad.cols(); ++j) dst[j] += src[j];
    }
  });
}

// Mean over axis 0: m x d -> 1 x d.
template <typename T>
Value<T> mean_axis0(const Value<T>& a) {
  const int rows = a->val.rows(), cols = a->val.cols();
  if (rows == 0) throw ArgumentError("mean_axis0: empty input");
  Tensor<T> out(1, cols);
  for (int i = 0; i < rows; ++i) {
    const T* src = a->val.row_ptr(i);
    for (int j = 0; j < cols; ++j) out[j] += src[j];
  }
  for (int j = 0; j < cols; ++j) out[j] = static_cast<T>(out[j] / static_cast<T>(rows));
  return detail::make_op<T>(std::move(out), {a}, [a, rows](Node<T>& n) {
    Tensor<T>& g = a->ensure_grad();
    for (int i = 0; i < rows; ++i) {
      T* dst = g.row_ptr(i);
      for (int j = 0; j < n.grad.cols(); ++j)
        dst[j] += static_cast<T>(n.grad[j] / static_cast<T>(rows));
    }
  });
}

template <typename T>
Value<T> sum_all(const Value<T>& a) {
  double acc = 0.0;
  for (size_t i = 0; i < a->val.size(); ++i) acc += static_cast<double>(a->val[i]);
  return detail::make_op<T>(Tensor<T>::scalar(static_cast<T>(acc)), {a}, [a](Node<T>& n) {
    Tensor<T>& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0];
  });
}

template <typename T>
Value<T> dot(const Value<T>& a, const Value<T>& b) {
  if (a->val.rows() != 1 || b->val.rows() != 1 || a->val.cols() != b->val.cols())
    throw ArgumentError("dot: expects two 1xd rows of equal width");
  double acc = 0.0;
  for (size_t i = 0; i < a->val.size(); ++i)
    acc += static_cast<double>(a->val[i]) * b->val[i];
  return detail::make_op<T>(Tensor<T>::scalar(static_cast<T>(acc)), {a, b}, [a, b](Node<T>& n) {
    const T s = n.grad[0];
    if (a->requires_grad) {
      Tensor<T>& g = a->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += s * b->val[i];
    }
    if (b->requires_grad) {
      Tensor<T>& g = b->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += s * a->val[i];
    }
  });
}

template <typename T>
Value<T> concat_rows(const Value<T>& a, const Value<T>& b) {
  if (a->val.cols() != b->val.cols()) throw ArgumentError("concat_rows: width mismatch");
  Tensor<T> out(a->val.rows() + b->val.rows(), a->val.cols());
  std::copy(a->val.data().begin(), a->val.data().end(), out.data().begin());
  std::copy(b->val.data().begin(), b->val.data().end(),
            out.data().begin() + static_cast<long>(a->val.size()));
  const int split = a->val.rows();
  return detail::make_op<T>(std::move(out), {a, b}, [a, b, split](Node<T>& n) {
    if (a->requires_grad) {
      Tensor<T>& g = a->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (b->requires_grad) {
      Tensor<T>& g = b->ensure_grad();
      const size_t off = static_cast<size_t>(split) * n.grad.cols();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[off + i];
    }
  });
}

// Stack 1xd rows into an m x d matrix.
template <typename T>
Value<T> stack_rows(std::span<const Value<T>> rows) {
  if (rows.empty()) throw ArgumentError("stack_rows: empty input");
  const int cols = rows[0]->val.cols();
  Tensor<T> out(static_cast<int>(rows.size()), cols);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i]->val.rows() != 1 || rows[i]->val.cols() != cols)
      throw ArgumentError("stack_rows: all inputs must be 1xd of equal width");
    std::copy(rows[i]->val.data().begin(), rows[i]->val.data().end(),
              out.row_ptr(static_cast<int>(i)));
  }
  std::vector<Value<T>> parents(rows.begin(), rows.end());
  return detail::make_op<T>(std::move(out), std::move(parents), [](Node<T>& n) {
    for (size_t i = 0; i < n.parents.size(); ++i) {
      auto& p = n.parents[i];
      if (!p->requires_grad) continue;
      Tensor<T>& g = p->ensure_grad();
      const T* src = n.grad.row_ptr(static_cast<int>(i));
      for (int j = 0; j < n.grad.cols(); ++j) g[j] += src[j];
    }
  });
}

template <typename T>
Value<T> slice_rows(const Value<T>& a, int first, int count) {
  if (first < 0 || count < 0 || first + count > a->val.rows())
    throw ArgumentError("slice_rows: range out of bounds");
  Tensor<T> out(count, a->val.cols());
  std::copy(a->val.row_ptr(first), a->val.row_ptr(first) + out.size(), out.data().begin());
  return detail::make_op<T>(std::move(out), {a}, [a, first](Node<T>& n) {
    Tensor<T>& g = a->ensure_grad();
    T* dst = g.row_ptr(first);
    for (size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
  });
}

template <typename T>
Value<T> slice_cols(const Value<T>& a, int first, int count) {
  if (first < 0 || count < 0 || first + count > a->val.cols())
    throw ArgumentError("slice_cols: range out of bounds");
  Tensor<T> out(a->val.rows(), count);
  for (int i = 0; i < out.rows(); ++i) {
    const T* src = a->val.row_ptr(i) + first;
    T* dst = out.row_ptr(i);
    for (int j = 0; j < count; ++j) dst[j] = src[j];
  }
  return detail::make_op<T>(std::move(out), {a}, [a, first](Node<T>& n) {
    Tensor<T>& g = a->ensure_grad();
    for (int i = 0; i < n.grad.rows(); ++i) {
      const T* src = n.grad.row_ptr(i);
      T* dst = g.row_ptr(i) + first;
      for (int j = 0; j < n.grad.cols(); ++j) dst[j] += src[j];
    }
  });
}

// Concatenate equal-height blocks along columns.
template <typename T>
Value<T> concat_cols(std::span<const Value<T>> blocks) {
  if (blocks.empty()) throw ArgumentError("concat_cols: empty input");
  const int rows = blocks[0]->val.rows();
  int total = 0;
  for (const auto& b : blocks) {
    if (b->val.rows() != rows) throw ArgumentError("concat_cols: height mismatch");
    total += b->val.cols();
  }
  Tensor<T> out(rows, total);
  int off = 0;
  for (const auto& b : blocks) {
    for (int i = 0; i < rows; ++i) {
      const T* src = b->val.row_ptr(i);
      T* dst = out.row_ptr(i) + off;
      for (int j = 0; j < b->val.cols(); ++j) dst[j] = src[j];
    }
    off += b->val.cols();
  }
  std::vector<Value<T>> parents(blocks.begin(), blocks.end());
  return detail::make_op<T>(std::move(out), std::move(parents), [](Node<T>& n) {
    int off = 0;
    for (auto& p : n.parents) {
      const int w = p->val.cols();
      if (p->requires_grad) {
        Tensor<T>& g = p->ensure_grad();
        for (int i = 0; i < n.grad.rows(); ++i) {
          const T* src = n.grad.row_ptr(i) + off;
          T* dst = g.row_ptr(i);
          for (int j = 0; j < w; ++j) dst[j] += src[j];
        }
      }
      off += w;
    }
  });
}

// Select one entry of a 1xn row as a 1x1 scalar.
template <typename T>
Value<T> pick(const Value<T>& a, int index) {
  if (a->val.rows() != 1 || index < 0 || index >= a->val.cols())
    throw ArgumentError("pick: index out of range");
  return detail::make_op<T>(Tensor<T>::scalar(a->val[index]), {a}, [a, index](Node<T>& n) {
    a->ensure_grad()[static_cast<size_t>(index)] += n.grad[0];
  });
}

// Inverted dropout; identity when rate == 0.
template <typename T>
Value<T> dropout(const Value<T>& a, double rate, Rng* rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw ArgumentError("dropout: rate must be < 1");
  if (!rng) throw ArgumentError("dropout: rng required when rate > 0");
  auto mask = std::make_shared<Tensor<T>>(a->val.rows(), a->val.cols());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out = a->val;
  for (size_t i = 0; i < out.size(); ++i) {
    const T m = rng->uniform01() < rate ? T{} : keep_scale;
    (*mask)[i] = m;
    out[i] *= m;
  }
  return detail::make_op<T>(std::move(out), {a}, [a, mask](Node<T>& n) {
    Tensor<T>& g = a->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <typename T>
void backward(const Value<T>& root) {
  if (root->val.rows() != 1 || root->val.cols() != 1)
    throw ArgumentError("backward: root must be a 1x1 scalar");
  if (!root->requires_grad) return;

  // Iterative post-order topological sort.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Node<T>* child = node->parents[next_child++].get();
      if (child->requires_grad && visited.insert(child).second)
        stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] = static_cast<T>(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->pullback && !node->grad.empty()) node->pullback(*node);
  }
}

}  // namespace rearec::numeric
