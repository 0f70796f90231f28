#pragma once

// Differentiable primitives over Tensor<T>. Image tensors are [C,H,W].

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ddpmfus/errors.hpp"
#include "ddpmfus/tensor.hpp"

namespace ddpmfus {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// out (+)= lhs * rhs. Eigen's blocked GEMM packs its operands, so its result
// does not depend on heap alignment; its GEMV and small-product paths do.
// Those shapes fall back to an ordered loop to keep runs bit-reproducible.
template <class Out, class Lhs, class Rhs>
void product(Out&& out, const Lhs& lhs, const Rhs& rhs, bool accumulate) {
  const Eigen::Index m = out.rows(), n = out.cols(), k = lhs.cols();
  if (m > 1 && n > 1 && m + n + k >= 20) {
    if (accumulate)
      out.noalias() += lhs * rhs;
    else
      out.noalias() = lhs * rhs;
    return;
  }
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      auto acc = accumulate ? out(i, j) : typename std::decay_t<Out>::Scalar(0);
      for (Eigen::Index p = 0; p < k; ++p) acc += lhs(i, p) * rhs(p, j);
      out(i, j) = acc;
    }
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

template <class T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  require(a.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(a.shape()));
}

template <class T>
void accumulate(const std::shared_ptr<Node<T>>& node, const std::vector<T>& g) {
  if (!node->requires_grad) return;
  for (std::size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto na = a.node(), nb = b.node();
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [na, nb](const std::vector<T>& g) {
    detail::accumulate(na, g);
    detail::accumulate(nb, g);
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto na = a.node(), nb = b.node();
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [na, nb](const std::vector<T>& g) {
    detail::accumulate(na, g);
    if (nb->requires_grad)
      for (std::size_t i = 0; i < g.size(); ++i) nb->grad[i] -= g[i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto na = a.node(), nb = b.node();
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [na, nb](const std::vector<T>& g) {
    if (na->requires_grad)
      for (std::size_t i = 0; i < g.size(); ++i) na->grad[i] += g[i] * nb->data[i];
    if (nb->requires_grad)
      for (std::size_t i = 0; i < g.size(); ++i) nb->grad[i] += g[i] * na->data[i];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  auto na = a.node();
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [na, s](const std::vector<T>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) na->grad[i] += g[i] * s;
  });
}

template <class T>
Tensor<T> silu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / (T(1) + std::exp(-a[i]));
  auto na = a.node();
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [na](const std::vector<T>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      T x = na->data[i];
      T s = T(1) / (T(1) + std::exp(-x));
      na->grad[i] += g[i] * s * (T(1) + x * (T(1) - s));
    }
  });
}

/// Elementwise |a|; the subgradient at 0 is taken as 0.
template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a[i]);
  auto na = a.node();
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [na](const std::vector<T>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      T x = na->data[i];
      na->grad[i] += x > T(0) ? g[i] : (x < T(0) ? -g[i] : T(0));
    }
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  auto na = a.node();
  return Tensor<T>::make_result(Shape{1}, {acc}, {a}, [na](const std::vector<T>& g) {
    for (auto& v : na->grad) v += g[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Adds a per-leading-index bias: out[c, ...] = a[c, ...] + bias[c].
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  detail::require(a.rank() >= 1 && bias.numel() == a.dim(0),
                  "add_channel_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(a.shape()));
  const std::size_t c = a.dim(0), inner = a.numel() / std::max<std::size_t>(c, 1);
  std::vector<T> out(a.numel());
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < inner; ++i) out[k * inner + i] = a[k * inner + i] + bias[k];
  auto na = a.node(), nb = bias.node();
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, bias},
                                [na, nb, c, inner](const std::vector<T>& g) {
                                  detail::accumulate(na, g);
                                  if (nb->requires_grad)
                                    for (std::size_t k = 0; k < c; ++k) {
                                      T s = T(0);
                                      for (std::size_t i = 0; i < inner; ++i) s += g[k * inner + i];
                                      nb->grad[k] += s;
                                    }
                                });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(numel(shape) == a.numel(),
                  "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto na = a.node();
  return Tensor<T>::make_result(std::move(shape), a.vec(), {a},
                                [na](const std::vector<T>& g) { detail::accumulate(na, g); });
}

// ---------------------------------------------------------------------------
// Channel concatenation / split

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const auto& first = parts.front();
  detail::require_rank(first, 3, "concat_channels");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 3, "concat_channels");
    detail::require(p.dim(1) == first.dim(1) && p.dim(2) == first.dim(2),
                    "concat_channels: spatial mismatch " + shape_str(first.shape()) + " vs " +
                        shape_str(p.shape()));
    channels += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(channels * first.dim(1) * first.dim(2));
  std::vector<std::size_t> offsets;
  std::vector<typename Tensor<T>::NodePtr> nodes;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    nodes.push_back(p.node());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return Tensor<T>::make_result(Shape{channels, first.dim(1), first.dim(2)}, std::move(out), parts,
                                [nodes, offsets](const std::vector<T>& g) {
                                  for (std::size_t k = 0; k < nodes.size(); ++k) {
                                    if (!nodes[k]->requires_grad) continue;
                                    auto& dst = nodes[k]->grad;
                                    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[offsets[k] + i];
                                  }
                                });
}

/// Channels [begin, begin+count) of a [C,H,W] tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t begin, std::size_t count) {
  detail::require_rank(a, 3, "slice_channels");
  detail::require(begin + count <= a.dim(0), "slice_channels: range exceeds " + shape_str(a.shape()));
  const std::size_t plane = a.dim(1) * a.dim(2);
  std::vector<T> out(a.data().begin() + begin * plane, a.data().begin() + (begin + count) * plane);
  auto na = a.node();
  return Tensor<T>::make_result(Shape{count, a.dim(1), a.dim(2)}, std::move(out), {a},
                                [na, begin, plane](const std::vector<T>& g) {
                                  for (std::size_t i = 0; i < g.size(); ++i) na->grad[begin * plane + i] += g[i];
                                });
}

template <class T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& a, const std::vector<std::size_t>& sizes) {
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  detail::require(a.rank() == 3 && total == a.dim(0),
                  "split_channels: sizes do not sum to channel count of " + shape_str(a.shape()));
  std::vector<Tensor<T>> out;
  std::size_t begin = 0;
  for (auto s : sizes) {
    out.push_back(slice_channels(a, begin, s));
    begin += s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                  "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const Eigen::Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  detail::product(detail::MapMat<T>(out.data(), m, n), detail::ConstMapMat<T>(a.data().data(), m, k),
                  detail::ConstMapMat<T>(b.data().data(), k, n), false);
  auto na = a.node(), nb = b.node();
  return Tensor<T>::make_result(Shape{a.dim(0), b.dim(1)}, std::move(out), {a, b},
                                [na, nb, m, k, n](const std::vector<T>& g) {
                                  detail::ConstMapMat<T> G(g.data(), m, n);
                                  if (na->requires_grad)
                                    detail::product(detail::MapMat<T>(na->grad.data(), m, k), G,
                                                    detail::ConstMapMat<T>(nb->data.data(), k, n).transpose(), true);
                                  if (nb->requires_grad)
                                    detail::product(detail::MapMat<T>(nb->grad.data(), k, n),
                                                    detail::ConstMapMat<T>(na->data.data(), m, k).transpose(), G, true);
                                });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const Eigen::Index r = a.dim(0), c = a.dim(1);
  std::vector<T> out(a.numel());
  detail::MapMat<T>(out.data(), c, r) = detail::ConstMapMat<T>(a.data().data(), r, c).transpose();
  auto na = a.node();
  return Tensor<T>::make_result(Shape{a.dim(1), a.dim(0)}, std::move(out), {a},
                                [na, r, c](const std::vector<T>& g) {
                                  detail::MapMat<T>(na->grad.data(), r, c) +=
                                      detail::ConstMapMat<T>(g.data(), c, r).transpose();
                                });
}

/// Row-wise softmax of a [rows, cols] tensor.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  detail::require_rank(a, 2, "softmax_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.data().data() + r * cols;
    T* y = out.data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[j]);
    T s = T(0);
    for (std::size_t j = 0; j < cols; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < cols; ++j) y[j] /= s;
  }
  auto result = Tensor<T>::make_result(a.shape(), out, {a}, [na = a.node(), out, rows, cols](const std::vector<T>& g) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = out.data() + r * cols;
      const T* gy = g.data() + r * cols;
      T dot = T(0);
      for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < cols; ++j) na->grad[r * cols + j] += y[j] * (gy[j] - dot);
    }
  });
  return result;
}

/// Fully connected layer on a vector: weight [out, in], bias [out].
template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require(weight.rank() == 2 && x.numel() == weight.dim(1) && bias.numel() == weight.dim(0),
                  "dense: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                      ", bias " + shape_str(bias.shape()));
  auto col = reshape(x, Shape{weight.dim(1), 1});
  auto y = add_channel_bias(matmul(weight, col), bias);
  return reshape(y, Shape{weight.dim(0)});
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

struct ConvGeometry {
  std::size_t cin, h, w, k, stride, pad, oh, ow;
  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return oh * ow; }
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = col + ((c * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
          }
        }
      }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((c * g.k + ky) * g.k + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation. kernel is [C_out, C_in, k, k]; bias may be empty.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0) {
  detail::require_rank(input, 3, "conv2d input");
  detail::require_rank(kernel, 4, "conv2d kernel");
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
  detail::require(kernel.dim(1) == input.dim(0),
                  "conv2d: kernel " + shape_str(kernel.shape()) + " expects " +
                      std::to_string(kernel.dim(1)) + " input channels, input has " +
                      std::to_string(input.dim(0)));
  detail::require(kernel.dim(3) == k, "conv2d: kernel must be square");
  if (k % 2 == 0) throw ParameterError("conv2d: kernel size must be odd");
  const bool has_bias = bias.numel() > 0;
  detail::require(!has_bias || bias.numel() == cout, "conv2d: bias length must equal output channels");
  const std::size_t h = input.dim(1), w = input.dim(2);
  detail::require(h + 2 * padding >= k && w + 2 * padding >= k,
                  "conv2d: input " + shape_str(input.shape()) + " smaller than kernel");
  detail::ConvGeometry geo{input.dim(0), h, w, k, stride, padding,
                           (h + 2 * padding - k) / stride + 1, (w + 2 * padding - k) / stride + 1};

  const bool pointwise = (k == 1 && stride == 1 && padding == 0);
  std::vector<T> col;
  if (!pointwise) {
    col.resize(geo.rows() * geo.cols());
    detail::im2col(input.data().data(), geo, col.data());
  }
  const T* colp = pointwise ? input.data().data() : col.data();
  const Eigen::Index rows = geo.rows(), cols = geo.cols(), co = cout;

  std::vector<T> out(cout * geo.cols());
  detail::MapMat<T> O(out.data(), co, cols);
  detail::product(O, detail::ConstMapMat<T>(kernel.data().data(), co, rows), detail::ConstMapMat<T>(colp, rows, cols),
                  false);
  if (has_bias)
    for (std::size_t c = 0; c < cout; ++c) O.row(c).array() += bias[c];

  std::vector<Tensor<T>> inputs{input, kernel};
  if (has_bias) inputs.push_back(bias);
  auto nx = input.node(), nk = kernel.node(), nb = bias.node();
  return Tensor<T>::make_result(
      Shape{cout, geo.oh, geo.ow}, std::move(out), inputs,
      [nx, nk, nb, has_bias, pointwise, geo, col = std::move(col), rows, cols, co](const std::vector<T>& g) {
        detail::ConstMapMat<T> G(g.data(), co, cols);
        const T* colp = pointwise ? nx->data.data() : col.data();
        if (nk->requires_grad)
          detail::product(detail::MapMat<T>(nk->grad.data(), co, rows), G,
                          detail::ConstMapMat<T>(colp, rows, cols).transpose(), true);
        if (has_bias && nb->requires_grad)
          for (Eigen::Index c = 0; c < co; ++c) {
            T acc = T(0);
            for (Eigen::Index j = 0; j < cols; ++j) acc += G(c, j);
            nb->grad[c] += acc;
          }
        if (nx->requires_grad) {
          detail::ConstMapMat<T> K(nk->data.data(), co, rows);
          if (pointwise) {
            detail::product(detail::MapMat<T>(nx->grad.data(), rows, cols), K.transpose(), G, true);
          } else {
            std::vector<T> dcol(static_cast<std::size_t>(rows * cols));
            detail::product(detail::MapMat<T>(dcol.data(), rows, cols), K.transpose(), G, false);
            detail::col2im_add(dcol.data(), geo, nx->grad.data());
          }
        }
      });
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride = 1,
                 std::size_t padding = 0) {
  return conv2d(input, kernel, Tensor<T>(Shape{0}), stride, padding);
}

// ---------------------------------------------------------------------------
// Normalization

/// Group normalization over [C,H,W] with eps 1e-5 followed by per-channel affine.
template <class T>
Tensor<T> group_norm(const Tensor<T>& input, std::size_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta) {
  detail::require_rank(input, 3, "group_norm");
  const std::size_t c = input.dim(0), plane = input.dim(1) * input.dim(2);
  if (groups == 0 || c % groups != 0)
    throw ParameterError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                         std::to_string(groups) + " groups");
  detail::require(gamma.numel() == c && beta.numel() == c, "group_norm: affine parameters must have C entries");
  constexpr T kEps = T(1e-5);
  const std::size_t cpg = c / groups, m = cpg * plane;
  std::vector<T> xhat(input.numel()), inv_std(groups), out(input.numel());
  const T* x = input.data().data();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const T* xs = x + gi * m;
    T mu = T(0);
    for (std::size_t i = 0; i < m; ++i) mu += xs[i];
    mu /= static_cast<T>(m);
    T var = T(0);
    for (std::size_t i = 0; i < m; ++i) var += (xs[i] - mu) * (xs[i] - mu);
    var /= static_cast<T>(m);
    inv_std[gi] = T(1) / std::sqrt(var + kEps);
    for (std::size_t i = 0; i < m; ++i) xhat[gi * m + i] = (xs[i] - mu) * inv_std[gi];
  }
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i)
      out[ch * plane + i] = gamma[ch] * xhat[ch * plane + i] + beta[ch];

  auto nx = input.node(), ng = gamma.node(), nb = beta.node();
  return Tensor<T>::make_result(
      input.shape(), std::move(out), {input, gamma, beta},
      [nx, ng, nb, xhat = std::move(xhat), inv_std = std::move(inv_std), groups, cpg, plane, m](
          const std::vector<T>& g) {
        const std::size_t c = groups * cpg;
        if (ng->requires_grad || nb->requires_grad)
          for (std::size_t ch = 0; ch < c; ++ch) {
            T sg = T(0), sb = T(0);
            for (std::size_t i = 0; i < plane; ++i) {
              sg += g[ch * plane + i] * xhat[ch * plane + i];
              sb += g[ch * plane + i];
            }
            if (ng->requires_grad) ng->grad[ch] += sg;
            if (nb->requires_grad) nb->grad[ch] += sb;
          }
        if (!nx->requires_grad) return;
        std::vector<T> dxhat(m);
        for (std::size_t gi = 0; gi < groups; ++gi) {
          T s1 = T(0), s2 = T(0);
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t idx = gi * m + i;
            dxhat[i] = g[idx] * ng->data[idx / plane];
            s1 += dxhat[i];
            s2 += dxhat[i] * xhat[idx];
          }
          const T mm = static_cast<T>(m);
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t idx = gi * m + i;
            nx->grad[idx] += inv_std[gi] / mm * (mm * dxhat[i] - s1 - xhat[idx] * s2);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Resampling

/// Nearest-neighbour upsampling by an integer factor.
template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& input, std::size_t factor) {
  detail::require_rank(input, 3, "upsample_nearest");
  if (factor < 1) throw ParameterError("upsample_nearest: factor must be >= 1");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<T> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x)
        out[(ch * oh + y) * ow + x] = input[(ch * h + y / factor) * w + x / factor];
  auto nx = input.node();
  return Tensor<T>::make_result(Shape{c, oh, ow}, std::move(out), {input},
                                [nx, c, h, w, oh, ow, factor](const std::vector<T>& g) {
                                  for (std::size_t ch = 0; ch < c; ++ch)
                                    for (std::size_t y = 0; y < oh; ++y)
                                      for (std::size_t x = 0; x < ow; ++x)
                                        nx->grad[(ch * h + y / factor) * w + x / factor] +=
                                            g[(ch * oh + y) * ow + x];
                                });
}

namespace detail {

// Catmull-Rom cubic convolution kernel (a = -0.5).
template <class T>
T cubic_weight(T x) {
  constexpr T a = T(-0.5);
  x = std::abs(x);
  if (x <= T(1)) return ((a + T(2)) * x - (a + T(3))) * x * x + T(1);
  if (x < T(2)) return ((a * x - T(5) * a) * x + T(8) * a) * x - T(4) * a;
  return T(0);
}

struct CubicTaps {
  std::size_t index[4];
  double weight[4];
};

// Half-pixel-centred source taps for each output coordinate, borders replicated.
inline std::vector<CubicTaps> cubic_taps(std::size_t in_size, std::size_t scale) {
  std::vector<CubicTaps> taps(in_size * scale);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    const double u = (static_cast<double>(o) + 0.5) / static_cast<double>(scale) - 0.5;
    const double base = std::floor(u);
    const double frac = u - base;
    for (int j = 0; j < 4; ++j) {
      long idx = static_cast<long>(base) - 1 + j;
      idx = std::clamp<long>(idx, 0, static_cast<long>(in_size) - 1);
      taps[o].index[j] = static_cast<std::size_t>(idx);
      taps[o].weight[j] = cubic_weight<double>(frac - (j - 1));
    }
  }
  return taps;
}

}  // namespace detail

/// Separable bicubic upsampling by an integer factor. Not differentiable:
/// it only ever acts on observed data.
template <class T>
Tensor<T> bicubic_upsample(const Tensor<T>& input, std::size_t scale) {
  detail::require_rank(input, 3, "bicubic_upsample");
  if (scale < 1) throw ParameterError("bicubic_upsample: scale must be >= 1");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (scale == 1) return input.detach();
  const std::size_t oh = h * scale, ow = w * scale;
  const auto ty = detail::cubic_taps(h, scale);
  const auto tx = detail::cubic_taps(w, scale);
  std::vector<double> rows(h * ow);
  std::vector<T> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = input.data().data() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int j = 0; j < 4; ++j) acc += tx[x].weight[j] * static_cast<double>(src[y * w + tx[x].index[j]]);
        rows[y * ow + x] = acc;
      }
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int j = 0; j < 4; ++j) acc += ty[y].weight[j] * rows[ty[y].index[j] * ow + x];
        out[(ch * oh + y) * ow + x] = static_cast<T>(acc);
      }
  }
  return Tensor<T>(Shape{c, oh, ow}, std::move(out));
}

// ---------------------------------------------------------------------------
// Attention

/// Projections of a single-head spatial self-attention block. Weights are
/// [C,C] acting on channel vectors; biases are [C].
template <class T>
struct AttentionWeights {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

namespace detail {

template <class T>
Tensor<T> project_tokens(const Tensor<T>& tokens, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add_channel_bias(matmul(weight, tokens), bias);
}

template <class T>
void check_attention(const Tensor<T>& input, const AttentionWeights<T>& w) {
  detail::require_rank(input, 3, "self_attention");
  const std::size_t c = input.dim(0);
  for (const auto* m : {&w.wq, &w.wk, &w.wv, &w.wo})
    detail::require(m->shape() == Shape{c, c}, "self_attention: projection must be [C,C], got " + shape_str(m->shape()));
  for (const auto* b : {&w.bq, &w.bk, &w.bv, &w.bo})
    detail::require(b->numel() == c, "self_attention: bias must have C entries");
}

}  // namespace detail

/// Row-stochastic [N,N] attention matrix over the N = H*W spatial tokens.
template <class T>
Tensor<T> attention_weights(const Tensor<T>& input, const AttentionWeights<T>& w) {
  detail::check_attention(input, w);
  const std::size_t c = input.dim(0), n = input.dim(1) * input.dim(2);
  auto tokens = reshape(input, Shape{c, n});
  auto q = detail::project_tokens(tokens, w.wq, w.bq);
  auto k = detail::project_tokens(tokens, w.wk, w.bk);
  auto scores = scale(matmul(transpose(q), k), T(1) / std::sqrt(static_cast<T>(c)));
  return softmax_rows(scores);
}

/// The attention branch alone (without the residual connection).
template <class T>
Tensor<T> attention_branch(const Tensor<T>& input, const AttentionWeights<T>& w) {
  const std::size_t c = input.dim(0), n = input.dim(1) * input.dim(2);
  auto probs = attention_weights(input, w);
  auto tokens = reshape(input, Shape{c, n});
  auto v = detail::project_tokens(tokens, w.wv, w.bv);
  auto mixed = matmul(v, transpose(probs));
  auto out = detail::project_tokens(mixed, w.wo, w.bo);
  return reshape(out, input.shape());
}

/// input + attention_branch(input).
template <class T>
Tensor<T> self_attention(const Tensor<T>& input, const AttentionWeights<T>& w) {
  return add(input, attention_branch(input, w));
}

}  // namespace ddpmfus
