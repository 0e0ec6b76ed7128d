#ifndef RELXFORGE_TENSOR_HPP_
#define RELXFORGE_TENSOR_HPP_

// Dense tensors and a tape-based reverse-mode autodiff graph. Everything is
// templated on the scalar so the same model code runs in f32 for training
// and f64 for finite-difference verification.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "relxforge/error.hpp"
#include "relxforge/rng.hpp"

namespace relxforge::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::optional<std::vector<T>> grad;

  Tensor() = default;
  explicit Tensor(Shape s, bool trainable = false)
      : shape(std::move(s)), data(numel(shape)), requires_grad(trainable) {}
  Tensor(Shape s, std::vector<T> values, bool trainable = false)
      : shape(std::move(s)), data(std::move(values)), requires_grad(trainable) {
    if (data.size() != numel(shape)) {
      throw Error(ErrorCode::kShapeMismatch,
                  "data length " + std::to_string(data.size()) + " for shape " + shape_str(shape));
    }
  }

  std::size_t size() const { return data.size(); }
  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }
};

namespace detail {

// C[m,n] (+)= op(A) * op(B); A is stored [m,k] (or [k,m] when transposed),
// B is stored [k,n] (or [n,k]). Row-major throughout.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto em = static_cast<Eigen::Index>(m);
  const auto en = static_cast<Eigen::Index>(n);
  const auto ek = static_cast<Eigen::Index>(k);
  Eigen::Map<const Mat> ma(a, trans_a ? ek : em, trans_a ? em : ek);
  Eigen::Map<const Mat> mb(b, trans_b ? en : ek, trans_b ? ek : en);
  Eigen::Map<Mat> mc(c, em, en);
  if (!accumulate) mc.setZero();
  if (!trans_a && !trans_b) {
    mc.noalias() += ma * mb;
  } else if (!trans_a && trans_b) {
    mc.noalias() += ma * mb.transpose();
  } else if (trans_a && !trans_b) {
    mc.noalias() += ma.transpose() * mb;
  } else {
    mc.noalias() += ma.transpose() * mb.transpose();
  }
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(1.0 / std::sqrt(2.0 * std::numbers::pi));
  return cdf + x * pdf;
}

}  // namespace detail

/// Records operations as they execute; backward() replays them in reverse.
/// Parameters enter through param() and receive accumulated gradients in
/// their Tensor::grad buffer. The tape is cleared after backward.
template <class T>
class Graph {
 public:
  struct Var {
    std::size_t id = std::numeric_limits<std::size_t>::max();
  };

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  const Shape& shape(Var v) const { return nodes_[v.id].shape; }
  std::span<const T> value(Var v) const { return val(v.id); }
  T item(Var v) const {
    if (numel(shape(v)) != 1) throw Error(ErrorCode::kShapeMismatch, "item() on non-scalar");
    return val(v.id)[0];
  }
  std::vector<T> to_vector(Var v) const {
    auto s = val(v.id);
    return {s.begin(), s.end()};
  }

  Var param(Tensor<T>& p) {
    Node node;
    node.shape = p.shape;
    node.external = &p.data;
    node.param = &p;
    node.needs_grad = grad_enabled_ && p.requires_grad;
    return push(std::move(node));
  }

  Var constant(Tensor<T> t) {
    Node node;
    node.shape = std::move(t.shape);
    node.value = std::move(t.data);
    return push(std::move(node));
  }

  Var constant(Shape shape, std::vector<T> values) {
    return constant(Tensor<T>(std::move(shape), std::move(values)));
  }

  // a [..., k] x b [k, n] -> [..., n]; with trans_b, b is [n, k].
  Var matmul(Var a, Var b, bool trans_b = false) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sa.empty() || sb.size() != 2) throw mismatch("matmul", sa, sb);
    const std::size_t k = sa.back();
    const std::size_t m = numel(sa) / k;
    const std::size_t n = trans_b ? sb[0] : sb[1];
    if ((trans_b ? sb[1] : sb[0]) != k) throw mismatch("matmul", sa, sb);
    Shape so = sa;
    so.back() = n;
    std::vector<T> out(m * n);
    detail::gemm(false, trans_b, m, n, k, val(a.id).data(), val(b.id).data(), out.data(), false);
    return record(std::move(so), std::move(out), {a, b}, [=, this](std::size_t self) {
      const T* dy = nodes_[self].grad.data();
      if (needs(a)) {
        detail::gemm(false, !trans_b, m, k, n, dy, val(b.id).data(), grad(a.id), true);
      }
      if (needs(b)) {
        if (trans_b) {
          detail::gemm(true, false, n, k, m, dy, val(a.id).data(), grad(b.id), true);
        } else {
          detail::gemm(true, false, k, n, m, val(a.id).data(), dy, grad(b.id), true);
        }
      }
    });
  }

  // Batched: a [N, m, k] x b [N, k, n] -> [N, m, n]; with trans_b, b is [N, n, k].
  Var bmm(Var a, Var b, bool trans_b = false) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0]) throw mismatch("bmm", sa, sb);
    const std::size_t batch = sa[0], m = sa[1], k = sa[2];
    const std::size_t n = trans_b ? sb[1] : sb[2];
    if ((trans_b ? sb[2] : sb[1]) != k) throw mismatch("bmm", sa, sb);
    std::vector<T> out(batch * m * n);
    const T* pa = val(a.id).data();
    const T* pb = val(b.id).data();
    for (std::size_t i = 0; i < batch; ++i) {
      detail::gemm(false, trans_b, m, n, k, pa + i * m * k, pb + i * k * n, out.data() + i * m * n,
                   false);
    }
    return record({batch, m, n}, std::move(out), {a, b}, [=, this](std::size_t self) {
      const T* dy = nodes_[self].grad.data();
      const T* va = val(a.id).data();
      const T* vb = val(b.id).data();
      for (std::size_t i = 0; i < batch; ++i) {
        const T* dyi = dy + i * m * n;
        if (needs(a)) {
          detail::gemm(false, !trans_b, m, k, n, dyi, vb + i * k * n, grad(a.id) + i * m * k, true);
        }
        if (needs(b)) {
          if (trans_b) {
            detail::gemm(true, false, n, k, m, dyi, va + i * m * k, grad(b.id) + i * k * n, true);
          } else {
            detail::gemm(true, false, k, n, m, va + i * m * k, dyi, grad(b.id) + i * k * n, true);
          }
        }
      }
    });
  }

  // Elementwise sum; b may also be a trailing-dims suffix of a (broadcast).
  Var add(Var a, Var b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
      throw mismatch("add", sa, sb);
    }
    const std::size_t inner = numel(sb);
    const std::size_t total = numel(sa);
    std::vector<T> out(val(a.id).begin(), val(a.id).end());
    const auto vb = val(b.id);
    for (std::size_t i = 0; i < total; i += inner) {
      for (std::size_t j = 0; j < inner; ++j) out[i + j] += vb[j];
    }
    return record(sa, std::move(out), {a, b}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      if (needs(a)) {
        T* da = grad(a.id);
        for (std::size_t i = 0; i < total; ++i) da[i] += dy[i];
      }
      if (needs(b)) {
        T* db = grad(b.id);
        for (std::size_t i = 0; i < total; i += inner) {
          for (std::size_t j = 0; j < inner; ++j) db[j] += dy[i + j];
        }
      }
    });
  }

  Var mul(Var a, Var b) {
    if (shape(a) != shape(b)) throw mismatch("mul", shape(a), shape(b));
    const std::size_t total = numel(shape(a));
    std::vector<T> out(total);
    const auto va = val(a.id);
    const auto vb = val(b.id);
    for (std::size_t i = 0; i < total; ++i) out[i] = va[i] * vb[i];
    return record(shape(a), std::move(out), {a, b}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      const auto xa = val(a.id);
      const auto xb = val(b.id);
      if (needs(a)) {
        T* da = grad(a.id);
        for (std::size_t i = 0; i < total; ++i) da[i] += dy[i] * xb[i];
      }
      if (needs(b)) {
        T* db = grad(b.id);
        for (std::size_t i = 0; i < total; ++i) db[i] += dy[i] * xa[i];
      }
    });
  }

  Var scale(Var a, T factor) {
    const std::size_t total = numel(shape(a));
    std::vector<T> out(total);
    const auto va = val(a.id);
    for (std::size_t i = 0; i < total; ++i) out[i] = va[i] * factor;
    return record(shape(a), std::move(out), {a}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      T* da = grad(a.id);
      for (std::size_t i = 0; i < total; ++i) da[i] += dy[i] * factor;
    });
  }

  Var gelu(Var a) {
    const std::size_t total = numel(shape(a));
    std::vector<T> out(total);
    const auto va = val(a.id);
    for (std::size_t i = 0; i < total; ++i) out[i] = detail::gelu(va[i]);
    return record(shape(a), std::move(out), {a}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      const auto x = val(a.id);
      T* da = grad(a.id);
      for (std::size_t i = 0; i < total; ++i) da[i] += dy[i] * detail::gelu_grad(x[i]);
    });
  }

  Var tanh(Var a) {
    const std::size_t total = numel(shape(a));
    std::vector<T> out(total);
    const auto va = val(a.id);
    for (std::size_t i = 0; i < total; ++i) out[i] = std::tanh(va[i]);
    return record(shape(a), std::move(out), {a}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      const auto y = val(self);
      T* da = grad(a.id);
      for (std::size_t i = 0; i < total; ++i) da[i] += dy[i] * (T(1) - y[i] * y[i]);
    });
  }

  // Normalizes over the last dimension, then applies gamma/beta.
  Var layer_norm(Var x, Var gamma, Var beta, T eps) {
    const Shape& sx = shape(x);
    const std::size_t n = sx.back();
    if (shape(gamma) != Shape{n} || shape(beta) != Shape{n}) {
      throw mismatch("layer_norm", sx, shape(gamma));
    }
    const std::size_t rows = numel(sx) / n;
    std::vector<T> out(rows * n);
    auto xhat = std::make_shared<std::vector<T>>(rows * n);
    auto rstd = std::make_shared<std::vector<T>>(rows);
    const auto vx = val(x.id);
    const auto g = val(gamma.id);
    const auto b = val(beta.id);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = vx.data() + r * n;
      T mean = 0;
      for (std::size_t j = 0; j < n; ++j) mean += xr[j];
      mean /= static_cast<T>(n);
      T var = 0;
      for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
      var /= static_cast<T>(n);
      const T rs = T(1) / std::sqrt(var + eps);
      (*rstd)[r] = rs;
      for (std::size_t j = 0; j < n; ++j) {
        const T h = (xr[j] - mean) * rs;
        (*xhat)[r * n + j] = h;
        out[r * n + j] = h * g[j] + b[j];
      }
    }
    return record(sx, std::move(out), {x, gamma, beta}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      const auto gv = val(gamma.id);
      T* dg = needs(gamma) ? grad(gamma.id) : nullptr;
      T* db = needs(beta) ? grad(beta.id) : nullptr;
      T* dx = needs(x) ? grad(x.id) : nullptr;
      std::vector<T> dxhat(n);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* dyr = dy.data() + r * n;
        const T* hr = xhat->data() + r * n;
        T sum_d = 0, sum_dh = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (dg) dg[j] += dyr[j] * hr[j];
          if (db) db[j] += dyr[j];
          dxhat[j] = dyr[j] * gv[j];
          sum_d += dxhat[j];
          sum_dh += dxhat[j] * hr[j];
        }
        if (dx) {
          const T inv_n = T(1) / static_cast<T>(n);
          const T rs = (*rstd)[r];
          for (std::size_t j = 0; j < n; ++j) {
            dx[r * n + j] += rs * (dxhat[j] - sum_d * inv_n - hr[j] * sum_dh * inv_n);
          }
        }
      }
    });
  }

  /// Softmax over the last dimension. With a key mask, x is [B*heads, S, S]
  /// and key_mask is [B, S]; masked keys get probability exactly 0.
  Var softmax(Var x, const std::vector<std::uint8_t>* key_mask = nullptr, std::size_t heads = 1) {
    const Shape& sx = shape(x);
    const std::size_t n = sx.back();
    const std::size_t rows = numel(sx) / n;
    if (key_mask != nullptr) {
      if (sx.size() != 3 || sx[1] != n || key_mask->size() * heads != sx[0] * n) {
        throw Error(ErrorCode::kShapeMismatch, "attention mask does not match scores " + shape_str(sx));
      }
    }
    std::vector<T> out(rows * n);
    const auto vx = val(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::uint8_t* mask =
          key_mask != nullptr ? key_mask->data() + (r / n / heads) * n : nullptr;
      const T* xr = vx.data() + r * n;
      T* yr = out.data() + r * n;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask || mask[j]) mx = std::max(mx, xr[j]);
      }
      T sum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        yr[j] = (!mask || mask[j]) ? std::exp(xr[j] - mx) : T(0);
        sum += yr[j];
      }
      const T inv = T(1) / sum;
      for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
    }
    return record(sx, std::move(out), {x}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      const auto y = val(self);
      T* dx = grad(x.id);
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += dy[r * n + j] * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          dx[r * n + j] += y[r * n + j] * (dy[r * n + j] - dot);
        }
      }
    });
  }

  // table [V, H], ids -> [ids.size(), H]
  Var embedding(Var table, const std::vector<std::int32_t>& ids) {
    const Shape& st = shape(table);
    if (st.size() != 2) throw Error(ErrorCode::kShapeMismatch, "embedding table must be 2-D");
    const std::size_t rows = st[0], h = st[1];
    for (auto id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= rows) {
        throw Error(ErrorCode::kTokenOutOfRange, "id " + std::to_string(id) + " >= " + std::to_string(rows));
      }
    }
    std::vector<T> out(ids.size() * h);
    const auto vt = val(table.id);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::copy_n(vt.data() + static_cast<std::size_t>(ids[i]) * h, h, out.data() + i * h);
    }
    return record({ids.size(), h}, std::move(out), {table}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      T* dt = grad(table.id);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        T* row = dt + static_cast<std::size_t>(ids[i]) * h;
        for (std::size_t j = 0; j < h; ++j) row[j] += dy[i * h + j];
      }
    });
  }

  // Inverted dropout; identity when p == 0.
  Var dropout(Var x, T p, Rng& rng) {
    if (p <= T(0)) return x;
    const std::size_t total = numel(shape(x));
    std::vector<T> keep(total);
    const T scale_kept = T(1) / (T(1) - p);
    for (std::size_t i = 0; i < total; ++i) keep[i] = rng.bernoulli(static_cast<double>(p)) ? T(0) : scale_kept;
    std::vector<T> out(total);
    const auto vx = val(x.id);
    for (std::size_t i = 0; i < total; ++i) out[i] = vx[i] * keep[i];
    return record(shape(x), std::move(out), {x},
                  [=, this, keep = std::move(keep)](std::size_t self) {
                    const auto& dy = nodes_[self].grad;
                    T* dx = grad(x.id);
                    for (std::size_t i = 0; i < total; ++i) dx[i] += dy[i] * keep[i];
                  });
  }

  /// Mean cross-entropy over rows whose target is not `ignore`.
  Var cross_entropy(Var logits, const std::vector<std::int32_t>& targets, std::int32_t ignore = -100) {
    const Shape& sl = shape(logits);
    if (sl.size() != 2 || sl[0] != targets.size()) {
      throw Error(ErrorCode::kShapeMismatch, "cross_entropy logits " + shape_str(sl) + " vs " +
                                                 std::to_string(targets.size()) + " targets");
    }
    const std::size_t m = sl[0], c = sl[1];
    std::size_t count = 0;
    for (auto t : targets) {
      if (t == ignore) continue;
      if (t < 0 || static_cast<std::size_t>(t) >= c) {
        throw Error(ErrorCode::kInvalidArgument, "target " + std::to_string(t) + " out of range");
      }
      ++count;
    }
    if (count == 0) throw Error(ErrorCode::kNoMaskedPositions, "no targets in cross_entropy");
    auto probs = std::make_shared<std::vector<T>>(m * c);
    const auto vl = val(logits.id);
    double total = 0;
    for (std::size_t r = 0; r < m; ++r) {
      if (targets[r] == ignore) continue;
      const T* lr = vl.data() + r * c;
      T mx = *std::max_element(lr, lr + c);
      T sum = 0;
      for (std::size_t j = 0; j < c; ++j) {
        (*probs)[r * c + j] = std::exp(lr[j] - mx);
        sum += (*probs)[r * c + j];
      }
      for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] /= sum;
      total += static_cast<double>(std::log(sum) + mx - lr[targets[r]]);
    }
    const T inv = T(1) / static_cast<T>(count);
    std::vector<T> out{static_cast<T>(total / static_cast<double>(count))};
    return record({}, std::move(out), {logits}, [=, this](std::size_t self) {
      const T g = nodes_[self].grad[0] * inv;
      T* dl = grad(logits.id);
      for (std::size_t r = 0; r < m; ++r) {
        if (targets[r] == ignore) continue;
        for (std::size_t j = 0; j < c; ++j) dl[r * c + j] += g * (*probs)[r * c + j];
        dl[r * c + static_cast<std::size_t>(targets[r])] -= g;
      }
    });
  }

  /// Mean binary cross-entropy of logits [m] against targets in {0,1}.
  Var bce_with_logits(Var logits, const std::vector<T>& targets) {
    const std::size_t m = numel(shape(logits));
    if (m != targets.size() || m == 0) {
      throw Error(ErrorCode::kShapeMismatch, "bce logits/targets length mismatch");
    }
    const auto vl = val(logits.id);
    double total = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const T x = vl[i];
      total += static_cast<double>(std::max(x, T(0)) - x * targets[i] + std::log1p(std::exp(-std::abs(x))));
    }
    std::vector<T> out{static_cast<T>(total / static_cast<double>(m))};
    return record({}, std::move(out), {logits}, [=, this](std::size_t self) {
      const T g = nodes_[self].grad[0] / static_cast<T>(m);
      const auto x = val(logits.id);
      T* dl = grad(logits.id);
      for (std::size_t i = 0; i < m; ++i) {
        const T sig = T(1) / (T(1) + std::exp(-x[i]));
        dl[i] += g * (sig - targets[i]);
      }
    });
  }

  // x [m, n] -> rows [r, n]
  Var gather_rows(Var x, const std::vector<std::size_t>& rows) {
    const Shape& sx = shape(x);
    const std::size_t n = sx.back();
    const std::size_t m = numel(sx) / n;
    for (auto r : rows) {
      if (r >= m) throw Error(ErrorCode::kShapeMismatch, "gather_rows index out of range");
    }
    std::vector<T> out(rows.size() * n);
    const auto vx = val(x.id);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(vx.data() + rows[i] * n, n, out.data() + i * n);
    }
    return record({rows.size(), n}, std::move(out), {x}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      T* dx = grad(x.id);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < n; ++j) dx[rows[i] * n + j] += dy[i * n + j];
      }
    });
  }

  // [B*S, A*D] -> [B*A, S, D]
  Var split_heads(Var x, std::size_t batch, std::size_t seq, std::size_t heads) {
    const Shape& sx = shape(x);
    const std::size_t h = sx.back();
    if (numel(sx) != batch * seq * h || h % heads != 0) throw mismatch("split_heads", sx, {batch, seq, heads});
    const std::size_t d = h / heads;
    std::vector<T> out(numel(sx));
    const auto vx = val(x.id);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < seq; ++s)
        for (std::size_t a = 0; a < heads; ++a)
          std::copy_n(vx.data() + (b * seq + s) * h + a * d, d,
                      out.data() + ((b * heads + a) * seq + s) * d);
    return record({batch * heads, seq, d}, std::move(out), {x}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      T* dx = grad(x.id);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < seq; ++s)
          for (std::size_t a = 0; a < heads; ++a) {
            const T* src = dy.data() + ((b * heads + a) * seq + s) * d;
            T* dst = dx + (b * seq + s) * h + a * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
          }
    });
  }

  // [B*A, S, D] -> [B*S, A*D]
  Var merge_heads(Var x, std::size_t batch, std::size_t heads) {
    const Shape& sx = shape(x);
    if (sx.size() != 3 || sx[0] != batch * heads) throw mismatch("merge_heads", sx, {batch, heads});
    const std::size_t seq = sx[1], d = sx[2], h = heads * d;
    std::vector<T> out(numel(sx));
    const auto vx = val(x.id);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < seq; ++s)
        for (std::size_t a = 0; a < heads; ++a)
          std::copy_n(vx.data() + ((b * heads + a) * seq + s) * d, d,
                      out.data() + (b * seq + s) * h + a * d);
    return record({batch * seq, h}, std::move(out), {x}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      T* dx = grad(x.id);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < seq; ++s)
          for (std::size_t a = 0; a < heads; ++a) {
            const T* src = dy.data() + (b * seq + s) * h + a * d;
            T* dst = dx + ((b * heads + a) * seq + s) * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
          }
    });
  }

  // Row-wise dot product: [m, n] x [m, n] -> [m]
  Var row_dot(Var a, Var b) {
    if (shape(a) != shape(b) || shape(a).size() != 2) throw mismatch("row_dot", shape(a), shape(b));
    const std::size_t m = shape(a)[0], n = shape(a)[1];
    std::vector<T> out(m);
    const auto va = val(a.id);
    const auto vb = val(b.id);
    for (std::size_t i = 0; i < m; ++i) {
      T s = 0;
      for (std::size_t j = 0; j < n; ++j) s += va[i * n + j] * vb[i * n + j];
      out[i] = s;
    }
    return record({m}, std::move(out), {a, b}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      const auto xa = val(a.id);
      const auto xb = val(b.id);
      T* da = needs(a) ? grad(a.id) : nullptr;
      T* db = needs(b) ? grad(b.id) : nullptr;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (da) da[i * n + j] += dy[i] * xb[i * n + j];
          if (db) db[i * n + j] += dy[i] * xa[i * n + j];
        }
      }
    });
  }

  // [m, p] ++ [m, q] -> [m, p + q]
  Var concat_cols(Var a, Var b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sa.size() != 2 || sb.size() != 2 || sa[0] != sb[0]) throw mismatch("concat_cols", sa, sb);
    const std::size_t m = sa[0], p = sa[1], q = sb[1];
    std::vector<T> out(m * (p + q));
    const auto va = val(a.id);
    const auto vb = val(b.id);
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(va.data() + i * p, p, out.data() + i * (p + q));
      std::copy_n(vb.data() + i * q, q, out.data() + i * (p + q) + p);
    }
    return record({m, p + q}, std::move(out), {a, b}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      T* da = needs(a) ? grad(a.id) : nullptr;
      T* db = needs(b) ? grad(b.id) : nullptr;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j)
          if (da) da[i * p + j] += dy[i * (p + q) + j];
        for (std::size_t j = 0; j < q; ++j)
          if (db) db[i * q + j] += dy[i * (p + q) + p + j];
      }
    });
  }

  Var reshape(Var x, Shape to) {
    if (numel(to) != numel(shape(x))) throw mismatch("reshape", shape(x), to);
    const auto vx = val(x.id);
    std::vector<T> out(vx.begin(), vx.end());
    const std::size_t total = out.size();
    return record(std::move(to), std::move(out), {x}, [=, this](std::size_t self) {
      const auto& dy = nodes_[self].grad;
      T* dx = grad(x.id);
      for (std::size_t i = 0; i < total; ++i) dx[i] += dy[i];
    });
  }

  Var sum(Var x) {
    const std::size_t total = numel(shape(x));
    const auto vx = val(x.id);
    T s = 0;
    for (std::size_t i = 0; i < total; ++i) s += vx[i];
    return record({}, {s}, {x}, [=, this](std::size_t self) {
      const T g = nodes_[self].grad[0];
      T* dx = grad(x.id);
      for (std::size_t i = 0; i < total; ++i) dx[i] += g;
    });
  }

  Var mean(Var x) { return scale(sum(x), T(1) / static_cast<T>(numel(shape(x)))); }

  /// Accumulates d(loss)/d(param) into every reachable parameter's grad
  /// buffer (parameters that entered the graph but do not influence the
  /// loss get zeros), then frees the tape.
  void backward(Var loss) {
    if (numel(shape(loss)) != 1) {
      throw Error(ErrorCode::kNotScalarLoss, "loss has shape " + shape_str(shape(loss)));
    }
    if (nodes_[loss.id].needs_grad) {
      grad(loss.id)[0] = T(1);
      for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (!node.backward || node.grad.empty()) continue;
        node.backward(id);
      }
    }
    for (auto& node : nodes_) {
      if (node.param == nullptr || !node.needs_grad) continue;
      auto& pg = node.param->grad;
      if (!pg || pg->size() != node.param->data.size()) pg.emplace(node.param->data.size(), T(0));
      if (!node.grad.empty()) {
        for (std::size_t i = 0; i < node.grad.size(); ++i) (*pg)[i] += node.grad[i];
      }
    }
    nodes_.clear();
  }

 private:
  struct Node {
    Shape shape;
    std::vector<T> value;
    const std::vector<T>* external = nullptr;
    Tensor<T>* param = nullptr;
    std::vector<T> grad;
    bool needs_grad = false;
    std::function<void(std::size_t)> backward;
  };

  static Error mismatch(const char* op, const Shape& a, const Shape& b) {
    return Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
  }

  std::span<const T> val(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external != nullptr ? std::span<const T>(*n.external) : std::span<const T>(n.value);
  }

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  T* grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(numel(n.shape), T(0));
    return n.grad.data();
  }

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  template <class Fn>
  Var record(Shape shape, std::vector<T> value, std::initializer_list<Var> inputs, Fn&& fn) {
    Node node;
    node.shape = std::move(shape);
    node.value = std::move(value);
    for (Var v : inputs) node.needs_grad = node.needs_grad || nodes_[v.id].needs_grad;
    if (node.needs_grad) node.backward = std::forward<Fn>(fn);
    return push(std::move(node));
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central-difference check of analytic gradients. `loss_fn` builds the
/// loss on the supplied graph and must be deterministic. Up to `samples`
/// coordinates are drawn uniformly over all parameters (all of them when
/// fewer exist). Error per coordinate: |a - n| / max(1e-8, |a| + |n|),
/// except that a coordinate whose analytic and numeric values both lie below
/// the finite-difference roundoff level (64 ulp of the loss over eps) counts
/// as agreeing on zero.
template <class T, class LossFn>
GradCheckResult grad_check(LossFn&& loss_fn, const std::vector<Tensor<T>*>& params,
                           std::size_t samples = 200, double eps = 1e-3, std::uint64_t seed = 0) {
  for (auto* p : params) p->grad.reset();
  {
    Graph<T> g;
    auto loss = loss_fn(g);
    g.backward(loss);
  }
  auto eval = [&] {
    Graph<T> g(false);
    return static_cast<double>(g.item(loss_fn(g)));
  };

  const double noise = 64.0 * std::numeric_limits<T>::epsilon() * std::max(1.0, std::abs(eval())) / eps;

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::size_t total = 0;
  for (auto* p : params) total += p->size();
  if (total <= samples) {
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t j = 0; j < params[i]->size(); ++j) coords.emplace_back(i, j);
  } else {
    Rng rng(seed);
    for (std::size_t s = 0; s < samples; ++s) {
      std::size_t flat = rng.below(total);
      std::size_t i = 0;
      while (flat >= params[i]->size()) flat -= params[i++]->size();
      coords.emplace_back(i, flat);
    }
  }

  GradCheckResult result;
  for (auto [i, j] : coords) {
    Tensor<T>& p = *params[i];
    const T saved = p.data[j];
    p.data[j] = saved + static_cast<T>(eps);
    const double up = eval();
    p.data[j] = saved - static_cast<T>(eps);
    const double down = eval();
    p.data[j] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = p.grad ? static_cast<double>((*p.grad)[j]) : 0.0;
    const bool both_zero = std::abs(analytic) < noise && std::abs(numeric) < noise;
    const double err =
        both_zero ? 0.0 : std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    ++result.checked;
    if (err > result.max_relative_error || result.checked == 1) {
      result.max_relative_error = std::max(result.max_relative_error, err);
      result.worst_param = i;
      result.worst_index = j;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace relxforge::nn

#endif  // RELXFORGE_TENSOR_HPP_
