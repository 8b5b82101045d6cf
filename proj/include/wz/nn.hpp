#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wz/errors.hpp"
#include "wz/tensor.hpp"

// Neural-network primitives. Every forward op has an explicit backward
// counterpart returning gradients w.r.t. all differentiable inputs; the pair
// is validated against central finite differences in the test suite.
//
// Layout conventions:
//   images   [H, W, C]           row-major
//   kernels  [K, K, C_a, C_b]    conv maps C_a -> C_b; deconv with the same
//                                tensor maps C_b -> C_a (exact adjoint)
//   dense W  [d_in, d_out]       y = x W + b
//   tokens   [T, d_model]

namespace wz {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapRM = Eigen::Map<MatRM<S>>;
template <typename S>
using CMapRM = Eigen::Map<const MatRM<S>>;
template <typename S>
using VecS = Eigen::Vector<S, Eigen::Dynamic>;

namespace detail {

inline int conv_out_extent(int in, int k, int stride, int pad, const char* what) {
  if (in + 2 * pad < k)
    throw std::invalid_argument(std::string(what) + ": window " + std::to_string(k) +
                                " exceeds padded extent " + std::to_string(in + 2 * pad));
  return (in + 2 * pad - k) / stride + 1;
}

// Gathers KxKxC patches (zero padding) into a row per output position.
// Column order (kh, kw, c) matches a [K,K,C,*] kernel flattened row-major.
template <typename S>
MatRM<S> im2col(const Tensor<S>& in, int k, int stride, int pad, int h_out, int w_out) {
  const int h = in.dim(0), w = in.dim(1), c = in.dim(2);
  MatRM<S> col = MatRM<S>::Zero(static_cast<long>(h_out) * w_out, static_cast<long>(k) * k * c);
  for (int p = 0; p < h_out; ++p) {
    for (int q = 0; q < w_out; ++q) {
      const long row = static_cast<long>(p) * w_out + q;
      S* dst_row = col.data() + row * col.cols();
      for (int kh = 0; kh < k; ++kh) {
        const int y = p * stride + kh - pad;
        if (y < 0 || y >= h) continue;
        for (int kw = 0; kw < k; ++kw) {
          const int x = q * stride + kw - pad;
          if (x < 0 || x >= w) continue;
          const S* src = in.data() + (static_cast<long>(y) * w + x) * c;
          std::copy(src, src + c, dst_row + (static_cast<long>(kh) * k + kw) * c);
        }
      }
    }
  }
  return col;
}

// Adjoint of im2col: scatter-adds patch rows back onto the image grid.
template <typename S>
void col2im_add(const MatRM<S>& col, int k, int stride, int pad, int h_out, int w_out,
                Tensor<S>& image) {
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
  for (int p = 0; p < h_out; ++p) {
    for (int q = 0; q < w_out; ++q) {
      const long row = static_cast<long>(p) * w_out + q;
      const S* src_row = col.data() + row * col.cols();
      for (int kh = 0; kh < k; ++kh) {
        const int y = p * stride + kh - pad;
        if (y < 0 || y >= h) continue;
        for (int kw = 0; kw < k; ++kw) {
          const int x = q * stride + kw - pad;
          if (x < 0 || x >= w) continue;
          S* dst = image.data() + (static_cast<long>(y) * w + x) * c;
          const S* src = src_row + (static_cast<long>(kh) * k + kw) * c;
          for (int ci = 0; ci < c; ++ci) dst[ci] += src[ci];
        }
      }
    }
  }
}

template <typename S>
void check_conv_args(const Tensor<S>& input, const Tensor<S>& kernels, int stride,
                     int padding, const char* what) {
  require_rank(input, 3, what);
  require_rank(kernels, 4, what);
  if (kernels.dim(0) != kernels.dim(1))
    throw std::invalid_argument(std::string(what) + ": kernels must be square, got " +
                                shape_to_string(kernels.shape()));
  if (stride < 1) throw std::invalid_argument(std::string(what) + ": stride must be >= 1");
  if (padding < 0) throw std::invalid_argument(std::string(what) + ": padding must be >= 0");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

template <typename S>
Tensor<S> conv2d_forward(const Tensor<S>& input, const Tensor<S>& kernels, const Tensor<S>& bias,
                         int stride = 1, int padding = 0) {
  detail::check_conv_args(input, kernels, stride, padding, "conv2d_forward");
  const int k = kernels.dim(0), c_in = kernels.dim(2), c_out = kernels.dim(3);
  if (input.dim(2) != c_in)
    throw std::invalid_argument("conv2d_forward: input channels " + shape_to_string(input.shape()) +
                                " do not match kernels " + shape_to_string(kernels.shape()));
  require_shape(bias, {c_out}, "conv2d_forward bias");
  const int h_out = detail::conv_out_extent(input.dim(0), k, stride, padding, "conv2d_forward");
  const int w_out = detail::conv_out_extent(input.dim(1), k, stride, padding, "conv2d_forward");

  MatRM<S> col = detail::im2col(input, k, stride, padding, h_out, w_out);
  CMapRM<S> ker(kernels.data(), static_cast<long>(k) * k * c_in, c_out);
  Tensor<S> out({h_out, w_out, c_out});
  MapRM<S> om(out.data(), static_cast<long>(h_out) * w_out, c_out);
  om.noalias() = col * ker;
  om.rowwise() += Eigen::Map<const Eigen::RowVector<S, Eigen::Dynamic>>(bias.data(), c_out);
  return out;
}

template <typename S>
struct Conv2dGrads {
  Tensor<S> input, kernels, bias;
};

template <typename S>
Conv2dGrads<S> conv2d_backward(const Tensor<S>& upstream, const Tensor<S>& input,
                               const Tensor<S>& kernels, int stride = 1, int padding = 0) {
  detail::check_conv_args(input, kernels, stride, padding, "conv2d_backward");
  const int k = kernels.dim(0), c_in = kernels.dim(2), c_out = kernels.dim(3);
  const int h_out = detail::conv_out_extent(input.dim(0), k, stride, padding, "conv2d_backward");
  const int w_out = detail::conv_out_extent(input.dim(1), k, stride, padding, "conv2d_backward");
  require_shape(upstream, {h_out, w_out, c_out}, "conv2d_backward upstream");

  const long rows = static_cast<long>(h_out) * w_out;
  const long kc = static_cast<long>(k) * k * c_in;
  CMapRM<S> up(upstream.data(), rows, c_out);
  CMapRM<S> ker(kernels.data(), kc, c_out);
  MatRM<S> col = detail::im2col(input, k, stride, padding, h_out, w_out);

  Conv2dGrads<S> g{Tensor<S>(input.shape()), Tensor<S>(kernels.shape()), Tensor<S>({c_out})};
  MapRM<S> kg(g.kernels.data(), kc, c_out);
  kg.noalias() = col.transpose() * up;
  Eigen::Map<Eigen::RowVector<S, Eigen::Dynamic>>(g.bias.data(), c_out) = up.colwise().sum();
  MatRM<S> dcol(rows, kc);
  dcol.noalias() = up * ker.transpose();
  detail::col2im_add(dcol, k, stride, padding, h_out, w_out, g.input);
  return g;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. Ties go to the first candidate in row-major
// window scan order, so backward routes each upstream value to exactly one
// input cell.

template <typename S>
struct MaxPool2Result {
  Tensor<S> output;
  std::vector<long> argmax;  // flat input index per output element
};

template <typename S>
MaxPool2Result<S> maxpool2_forward(const Tensor<S>& input) {
  require_rank(input, 3, "maxpool2_forward");
  const int h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("maxpool2_forward: spatial extents must be even, got " +
                                shape_to_string(input.shape()));
  MaxPool2Result<S> r{Tensor<S>({h / 2, w / 2, c}), {}};
  r.argmax.resize(static_cast<std::size_t>(r.output.size()));
  long out_i = 0;
  for (int oh = 0; oh < h / 2; ++oh) {
    for (int ow = 0; ow < w / 2; ++ow) {
      for (int ci = 0; ci < c; ++ci, ++out_i) {
        S best = -std::numeric_limits<S>::infinity();
        long best_idx = -1;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const long idx = (static_cast<long>(2 * oh + dy) * w + (2 * ow + dx)) * c + ci;
            const S v = input[idx];
            if (v > best) {
              best = v;
              best_idx = idx;
            }
          }
        }
        r.output[out_i] = best;
        r.argmax[static_cast<std::size_t>(out_i)] = best_idx;
      }
    }
  }
  return r;
}

template <typename S>
Tensor<S> maxpool2_backward(const Tensor<S>& upstream, const std::vector<long>& argmax,
                            const Shape& input_shape) {
  if (static_cast<long>(argmax.size()) != upstream.size())
    throw std::invalid_argument("maxpool2_backward: argmax size does not match upstream");
  Tensor<S> g(input_shape);
  for (long i = 0; i < upstream.size(); ++i) g[argmax[static_cast<std::size_t>(i)]] += upstream[i];
  return g;
}

// ---------------------------------------------------------------------------
// Activations

template <typename S>
Tensor<S> relu_forward(const Tensor<S>& x) {
  Tensor<S> y(x.shape());
  y.array() = x.array().max(S(0));
  return y;
}

// Subgradient at 0 is taken as 0.
template <typename S>
Tensor<S> relu_backward(const Tensor<S>& upstream, const Tensor<S>& input) {
  if (!upstream.same_shape(input))
    throw std::invalid_argument("relu_backward: shape mismatch");
  Tensor<S> g(input.shape());
  g.array() = (input.array() > S(0)).select(upstream.array(), S(0));
  return g;
}

template <typename S>
Tensor<S> sigmoid_forward(const Tensor<S>& x) {
  Tensor<S> y(x.shape());
  y.array() = x.array().unaryExpr([](S v) {
    if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
    const S e = std::exp(v);
    return e / (S(1) + e);
  });
  return y;
}

template <typename S>
Tensor<S> sigmoid_backward(const Tensor<S>& upstream, const Tensor<S>& output) {
  if (!upstream.same_shape(output))
    throw std::invalid_argument("sigmoid_backward: shape mismatch");
  Tensor<S> g(output.shape());
  g.array() = upstream.array() * output.array() * (S(1) - output.array());
  return g;
}

namespace detail {
template <typename S>
void softmax_axis_extents(const Tensor<S>& t, int axis, long& outer, long& n, long& inner) {
  if (axis < 0 || axis >= t.rank())
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for " +
                                shape_to_string(t.shape()));
  n = t.dim(axis);
  inner = 1;
  for (int i = axis + 1; i < t.rank(); ++i) inner *= t.dim(i);
  outer = t.size() / (n * inner);
}
}  // namespace detail

// Max-subtracted softmax along `axis`; each slice sums to 1 within 1e-12.
template <typename S>
Tensor<S> softmax_forward(const Tensor<S>& x, int axis) {
  long outer, n, inner;
  detail::softmax_axis_extents(x, axis, outer, n, inner);
  Tensor<S> y(x.shape());
  for (long o = 0; o < outer; ++o) {
    for (long in = 0; in < inner; ++in) {
      const long base = o * n * inner + in;
      S mx = x[base];
      for (long i = 1; i < n; ++i) mx = std::max(mx, x[base + i * inner]);
      S sum = S(0);
      for (long i = 0; i < n; ++i) {
        const S e = std::exp(x[base + i * inner] - mx);
        y[base + i * inner] = e;
        sum += e;
      }
      for (long i = 0; i < n; ++i) y[base + i * inner] /= sum;
    }
  }
  return y;
}

template <typename S>
Tensor<S> softmax_backward(const Tensor<S>& upstream, const Tensor<S>& output, int axis) {
  if (!upstream.same_shape(output))
    throw std::invalid_argument("softmax_backward: shape mismatch");
  long outer, n, inner;
  detail::softmax_axis_extents(output, axis, outer, n, inner);
  Tensor<S> g(output.shape());
  for (long o = 0; o < outer; ++o) {
    for (long in = 0; in < inner; ++in) {
      const long base = o * n * inner + in;
      S dot = S(0);
      for (long i = 0; i < n; ++i) dot += upstream[base + i * inner] * output[base + i * inner];
      for (long i = 0; i < n; ++i) {
        const long idx = base + i * inner;
        g[idx] = output[idx] * (upstream[idx] - dot);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Dense layer: y = x W + b with W stored [d_in, d_out] row-major. A row-major
// [d_in, d_out] buffer read column-major is exactly W^T, which keeps both
// GEMV directions in Eigen's fast path.

template <typename S>
using CMapCM = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>>;

template <typename S>
Tensor<S> dense_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  require_rank(x, 1, "dense_forward input");
  require_rank(w, 2, "dense_forward weights");
  const int d_in = w.dim(0), d_out = w.dim(1);
  require_shape(x, {d_in}, "dense_forward input");
  require_shape(b, {d_out}, "dense_forward bias");
  Tensor<S> y({d_out});
  CMapCM<S> wt(w.data(), d_out, d_in);
  Eigen::Map<VecS<S>>(y.data(), d_out).noalias() =
      wt * Eigen::Map<const VecS<S>>(x.data(), d_in) + Eigen::Map<const VecS<S>>(b.data(), d_out);
  return y;
}

template <typename S>
struct DenseGrads {
  Tensor<S> input, weights, bias;
};

template <typename S>
DenseGrads<S> dense_backward(const Tensor<S>& upstream, const Tensor<S>& x, const Tensor<S>& w) {
  const int d_in = w.dim(0), d_out = w.dim(1);
  require_shape(upstream, {d_out}, "dense_backward upstream");
  require_shape(x, {d_in}, "dense_backward input");
  DenseGrads<S> g{Tensor<S>({d_in}), Tensor<S>(w.shape()), Tensor<S>({d_out})};
  CMapCM<S> wt(w.data(), d_out, d_in);
  Eigen::Map<const VecS<S>> up(upstream.data(), d_out);
  Eigen::Map<VecS<S>>(g.input.data(), d_in).noalias() = wt.transpose() * up;
  MapRM<S>(g.weights.data(), d_in, d_out).noalias() =
      Eigen::Map<const VecS<S>>(x.data(), d_in) * up.transpose();
  g.bias.array() = upstream.array();
  return g;
}

// Batched dense: one sample per row of X [B, d_in]. A single GEMM replaces B
// GEMVs, which is the difference between memory- and compute-bound on the
// wide layers.
template <typename S>
Tensor<S> dense_forward_batch(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  require_rank(x, 2, "dense_forward_batch input");
  require_rank(w, 2, "dense_forward_batch weights");
  const int batch = x.dim(0), d_in = w.dim(0), d_out = w.dim(1);
  require_shape(x, {batch, d_in}, "dense_forward_batch input");
  require_shape(b, {d_out}, "dense_forward_batch bias");
  Tensor<S> y({batch, d_out});
  MapRM<S> ym(y.data(), batch, d_out);
  ym.noalias() = CMapRM<S>(x.data(), batch, d_in) * CMapRM<S>(w.data(), d_in, d_out);
  ym.rowwise() += Eigen::Map<const VecS<S>>(b.data(), d_out).transpose();
  return y;
}

// Weight and bias gradients are summed over the batch; the input gradient
// keeps one row per sample.
template <typename S>
DenseGrads<S> dense_backward_batch(const Tensor<S>& upstream, const Tensor<S>& x,
                                   const Tensor<S>& w) {
  const int d_in = w.dim(0), d_out = w.dim(1);
  require_rank(x, 2, "dense_backward_batch input");
  const int batch = x.dim(0);
  require_shape(upstream, {batch, d_out}, "dense_backward_batch upstream");
  require_shape(x, {batch, d_in}, "dense_backward_batch input");
  DenseGrads<S> g{Tensor<S>({batch, d_in}), Tensor<S>(w.shape()), Tensor<S>({d_out})};
  CMapRM<S> up(upstream.data(), batch, d_out);
  CMapRM<S> xm(x.data(), batch, d_in);
  MapRM<S>(g.input.data(), batch, d_in).noalias() = up * CMapRM<S>(w.data(), d_in, d_out).transpose();
  MapRM<S>(g.weights.data(), d_in, d_out).noalias() = xm.transpose() * up;
  Eigen::Map<VecS<S>>(g.bias.data(), d_out) = up.colwise().sum().transpose();
  return g;
}

// ---------------------------------------------------------------------------
// Transposed convolution (stride-s scatter). With a shared kernel tensor
// [K, K, A, B], deconv2d_forward maps B-channel inputs to A-channel outputs
// and satisfies <conv2d(x), y> == <x, deconv2d(y)> exactly (same buffer, no
// bias). Output extent: (H-1)*stride + K.

template <typename S>
Tensor<S> deconv2d_forward(const Tensor<S>& input, const Tensor<S>& kernels, const Tensor<S>& bias,
                           int stride) {
  detail::check_conv_args(input, kernels, stride, 0, "deconv2d_forward");
  const int k = kernels.dim(0), c_out = kernels.dim(2), c_in = kernels.dim(3);
  if (input.dim(2) != c_in)
    throw std::invalid_argument("deconv2d_forward: input channels " +
                                shape_to_string(input.shape()) + " do not match kernels " +
                                shape_to_string(kernels.shape()));
  require_shape(bias, {c_out}, "deconv2d_forward bias");
  const int h = input.dim(0), w = input.dim(1);
  const int h_out = (h - 1) * stride + k, w_out = (w - 1) * stride + k;

  // M(row=(i,j), col=(kh,kw,a)) = sum_b in[i,j,b] * ker[kh,kw,a,b]
  MatRM<S> w2(c_in, static_cast<long>(k) * k * c_out);
  for (int kh = 0; kh < k; ++kh)
    for (int kw = 0; kw < k; ++kw)
      for (int a = 0; a < c_out; ++a)
        for (int b = 0; b < c_in; ++b)
          w2(b, (static_cast<long>(kh) * k + kw) * c_out + a) = kernels(kh, kw, a, b);
  CMapRM<S> in_m(input.data(), static_cast<long>(h) * w, c_in);
  MatRM<S> m = in_m * w2;

  Tensor<S> out({h_out, w_out, c_out});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const S* row = m.data() + (static_cast<long>(i) * w + j) * m.cols();
      for (int kh = 0; kh < k; ++kh) {
        S* dst = out.data() + (static_cast<long>(i * stride + kh) * w_out + j * stride) * c_out;
        const S* src = row + static_cast<long>(kh) * k * c_out;
        for (long t = 0; t < static_cast<long>(k) * c_out; ++t) dst[t] += src[t];
      }
    }
  }
  for (long p = 0; p < static_cast<long>(h_out) * w_out; ++p)
    for (int a = 0; a < c_out; ++a) out[p * c_out + a] += bias[a];
  return out;
}

template <typename S>
struct Deconv2dGrads {
  Tensor<S> input, kernels, bias;
};

template <typename S>
Deconv2dGrads<S> deconv2d_backward(const Tensor<S>& upstream, const Tensor<S>& input,
                                   const Tensor<S>& kernels, int stride) {
  const int k = kernels.dim(0), c_out = kernels.dim(2), c_in = kernels.dim(3);
  const int h = input.dim(0), w = input.dim(1);
  require_shape(upstream, {(h - 1) * stride + k, (w - 1) * stride + k, c_out},
                "deconv2d_backward upstream");

  Deconv2dGrads<S> g;
  // Input gradient is the adjoint of the scatter, i.e. a plain convolution of
  // the upstream with the same kernel tensor.
  g.input = conv2d_forward(upstream, kernels, Tensor<S>({c_in}), stride, 0);

  // colU rows correspond to input positions, columns to (kh, kw, a).
  MatRM<S> col_u = detail::im2col(upstream, k, stride, 0, h, w);
  CMapRM<S> in_m(input.data(), static_cast<long>(h) * w, c_in);
  MatRM<S> dk_perm = in_m.transpose() * col_u;  // [B, K*K*A]
  g.kernels = Tensor<S>(kernels.shape());
  for (int kh = 0; kh < k; ++kh)
    for (int kw = 0; kw < k; ++kw)
      for (int a = 0; a < c_out; ++a)
        for (int b = 0; b < c_in; ++b)
          g.kernels(kh, kw, a, b) = dk_perm(b, (static_cast<long>(kh) * k + kw) * c_out + a);

  g.bias = Tensor<S>({c_out});
  CMapRM<S> up_m(upstream.data(), upstream.size() / c_out, c_out);
  Eigen::Map<Eigen::RowVector<S, Eigen::Dynamic>>(g.bias.data(), c_out) = up_m.colwise().sum();
  return g;
}

// ---------------------------------------------------------------------------
// Scaled dot-product self-attention over a token matrix X [T, d_model]:
//   Q = X Wq, K = X Wk, V = X Wv, A = softmax(Q K^T / sqrt(d_k)), Z = A V.

template <typename S>
struct AttentionParams {
  Tensor<S> wq, wk, wv;  // each [d_model, d_k]
};

template <typename S>
struct AttentionCache {
  MatRM<S> q, k, v, attn;
};

template <typename S>
Tensor<S> self_attention_forward(const Tensor<S>& tokens, const AttentionParams<S>& p,
                                 AttentionCache<S>* cache = nullptr) {
  require_rank(tokens, 2, "self_attention_forward tokens");
  const int t = tokens.dim(0), d_model = tokens.dim(1);
  require_shape(p.wq, {d_model, p.wq.dim(1)}, "self_attention_forward wq");
  if (p.wk.shape() != p.wq.shape() || p.wv.shape() != p.wq.shape())
    throw std::invalid_argument("self_attention_forward: projection shapes differ");
  const int d_k = p.wq.dim(1);

  CMapRM<S> x(tokens.data(), t, d_model);
  CMapRM<S> wq(p.wq.data(), d_model, d_k), wk(p.wk.data(), d_model, d_k),
      wv(p.wv.data(), d_model, d_k);
  MatRM<S> q = x * wq, kk = x * wk, v = x * wv;
  MatRM<S> scores = q * kk.transpose() * (S(1) / std::sqrt(S(d_k)));
  for (int i = 0; i < t; ++i) {
    auto row = scores.row(i);
    const S mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
  Tensor<S> z({t, d_k});
  MapRM<S>(z.data(), t, d_k).noalias() = scores * v;
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(kk);
    cache->v = std::move(v);
    cache->attn = std::move(scores);
  }
  return z;
}

template <typename S>
struct AttentionGrads {
  Tensor<S> tokens, wq, wk, wv;
};

template <typename S>
AttentionGrads<S> self_attention_backward(const Tensor<S>& upstream, const Tensor<S>& tokens,
                                          const AttentionParams<S>& p,
                                          const AttentionCache<S>& cache) {
  const int t = tokens.dim(0), d_model = tokens.dim(1), d_k = p.wq.dim(1);
  require_shape(upstream, {t, d_k}, "self_attention_backward upstream");
  if (cache.attn.rows() != t || cache.v.rows() != t)
    throw std::invalid_argument("self_attention_backward: cache does not match tokens");

  CMapRM<S> x(tokens.data(), t, d_model);
  CMapRM<S> g(upstream.data(), t, d_k);
  CMapRM<S> wq(p.wq.data(), d_model, d_k), wk(p.wk.data(), d_model, d_k),
      wv(p.wv.data(), d_model, d_k);

  MatRM<S> dv = cache.attn.transpose() * g;
  MatRM<S> da = g * cache.v.transpose();
  MatRM<S> ds(t, t);
  for (int i = 0; i < t; ++i) {
    const auto a = cache.attn.row(i).array();
    const S dot = (da.row(i).array() * a).sum();
    ds.row(i) = (a * (da.row(i).array() - dot)).matrix();
  }
  const S inv_s = S(1) / std::sqrt(S(d_k));
  MatRM<S> dq = ds * cache.k * inv_s;
  MatRM<S> dk = ds.transpose() * cache.q * inv_s;

  AttentionGrads<S> out{Tensor<S>(tokens.shape()), Tensor<S>(p.wq.shape()),
                        Tensor<S>(p.wk.shape()), Tensor<S>(p.wv.shape())};
  MapRM<S>(out.wq.data(), d_model, d_k).noalias() = x.transpose() * dq;
  MapRM<S>(out.wk.data(), d_model, d_k).noalias() = x.transpose() * dk;
  MapRM<S>(out.wv.data(), d_model, d_k).noalias() = x.transpose() * dv;
  MapRM<S>(out.tokens.data(), t, d_model).noalias() =
      dq * wq.transpose() + dk * wk.transpose() + dv * wv.transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Losses

namespace detail {
template <typename S>
long masked_count(const Tensor<S>& mask) {
  long n = 0;
  for (long i = 0; i < mask.size(); ++i)
    if (mask[i] != S(0)) ++n;
  return n;
}
}  // namespace detail

// Mean Huber loss over cells where mask is nonzero. delta shares the unit of
// pred/target; predictions are compared in mph after denormalization.
template <typename S>
S huber_loss(const Tensor<S>& pred, const Tensor<S>& target, const Tensor<S>& mask, S delta) {
  if (!pred.same_shape(target) || !pred.same_shape(mask))
    throw std::invalid_argument("huber_loss: shape mismatch");
  if (!(delta > S(0))) throw std::invalid_argument("huber_loss: delta must be positive");
  const long n = detail::masked_count(mask);
  if (n == 0) throw std::invalid_argument("huber_loss: mask selects no cells");
  S acc = S(0);
  for (long i = 0; i < pred.size(); ++i) {
    if (mask[i] == S(0)) continue;
    const S r = pred[i] - target[i];
    const S a = std::abs(r);
    acc += (a <= delta) ? S(0.5) * r * r : delta * a - S(0.5) * delta * delta;
  }
  return acc / static_cast<S>(n);
}

template <typename S>
Tensor<S> huber_loss_grad(const Tensor<S>& pred, const Tensor<S>& target, const Tensor<S>& mask,
                          S delta) {
  if (!pred.same_shape(target) || !pred.same_shape(mask))
    throw std::invalid_argument("huber_loss_grad: shape mismatch");
  if (!(delta > S(0))) throw std::invalid_argument("huber_loss_grad: delta must be positive");
  const long n = detail::masked_count(mask);
  if (n == 0) throw std::invalid_argument("huber_loss_grad: mask selects no cells");
  Tensor<S> g(pred.shape());
  const S inv_n = S(1) / static_cast<S>(n);
  for (long i = 0; i < pred.size(); ++i) {
    if (mask[i] == S(0)) continue;
    const S r = pred[i] - target[i];
    g[i] = (std::abs(r) <= delta ? r : (r > S(0) ? delta : -delta)) * inv_n;
  }
  return g;
}

// Probabilities are clamped to [1e-12, 1] before the log.
template <typename S>
S cross_entropy(const Tensor<S>& probs, int label) {
  require_rank(probs, 1, "cross_entropy probs");
  if (label < 0 || label >= probs.dim(0))
    throw std::invalid_argument("cross_entropy: label out of range");
  const S p = std::min(S(1), std::max(S(1e-12), probs[label]));
  return -std::log(p);
}

// Gradient of cross_entropy(softmax(logits), label) w.r.t. the logits.
template <typename S>
Tensor<S> softmax_cross_entropy_logit_grad(const Tensor<S>& probs, int label) {
  require_rank(probs, 1, "softmax_cross_entropy_logit_grad probs");
  if (label < 0 || label >= probs.dim(0))
    throw std::invalid_argument("softmax_cross_entropy_logit_grad: label out of range");
  Tensor<S> g(probs.shape());
  g.array() = probs.array();
  g[label] -= S(1);
  return g;
}

template <typename S>
S combined_loss(S huber, S ce, S w1, S w2) {
  if (w1 < S(0) || w2 < S(0)) throw std::invalid_argument("combined_loss: negative weight");
  if (w1 == S(0) && w2 == S(0))
    throw std::invalid_argument("combined_loss: both weights are zero");
  return w1 * huber + w2 * ce;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct AdamState {
  AdamConfig config;
  long step_count = 0;
  std::vector<typename Tensor<S>::Array> m, v;
};

template <typename S>
AdamState<S> make_adam_state(const std::vector<const Tensor<S>*>& params, AdamConfig cfg = {}) {
  AdamState<S> st;
  st.config = cfg;
  for (const Tensor<S>* p : params) {
    st.m.emplace_back(Tensor<S>::Array::Zero(p->size()));
    st.v.emplace_back(Tensor<S>::Array::Zero(p->size()));
  }
  return st;
}

// One Adam step with bias correction. If any gradient value is non-finite the
// step throws and neither parameters nor moments are touched.
template <typename S>
void adam_step(const std::vector<Tensor<S>*>& params, const std::vector<const Tensor<S>*>& grads,
               AdamState<S>& st) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i]->size() != params[i]->size())
      throw std::invalid_argument("adam_step: gradient shape mismatch at index " +
                                  std::to_string(i));
    if (!grads[i]->all_finite())
      throw numeric_error("adam_step: non-finite gradient in tensor " + std::to_string(i));
  }
  ++st.step_count;
  const S b1 = static_cast<S>(st.config.beta1), b2 = static_cast<S>(st.config.beta2);
  const S lr = static_cast<S>(st.config.lr), eps = static_cast<S>(st.config.eps);
  const S bc1 = S(1) - static_cast<S>(std::pow(st.config.beta1, st.step_count));
  const S bc2 = S(1) - static_cast<S>(std::pow(st.config.beta2, st.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = st.m[i];
    auto& v = st.v[i];
    const auto& g = grads[i]->array();
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.square();
    params[i]->array() -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (64-bit only). Central differences with
// the given step; relative error uses max(|analytic|, |numeric|, 1e-2) as the
// denominator so finite-difference noise on near-zero coordinates does not
// dominate.

struct GradCheckParamReport {
  std::string name;
  double max_rel_err = 0;
  long worst_index = -1;
  double analytic = 0, numeric = 0;
  long checked = 0;
};

struct GradCheckReport {
  double step = 1e-5;
  double tolerance = 1e-4;
  bool pass = true;
  double worst_rel_err = 0;
  std::string worst_param;
  long worst_index = -1;
  std::vector<GradCheckParamReport> params;

  std::string summary() const {
    std::ostringstream os;
    os << "gradcheck " << (pass ? "PASS" : "FAIL") << ": worst rel err " << worst_rel_err;
    if (!worst_param.empty()) os << " at " << worst_param << "[" << worst_index << "]";
    os << " (tol " << tolerance << ", step " << step << ")\n";
    for (const auto& p : params)
      os << "  " << p.name << ": max rel err " << p.max_rel_err << " over " << p.checked
         << " coords (analytic " << p.analytic << ", numeric " << p.numeric << ")\n";
    return os.str();
  }
};

// `loss` must be a pure function of the parameter tensors; `analytic[i]` is
// the gradient for `params[i]`. max_coords_per_param limits work on large
// tensors by striding deterministically through the coordinates (-1 = all).
template <typename LossFn>
GradCheckReport gradcheck(LossFn&& loss,
                          const std::vector<std::pair<std::string, Tensor<double>*>>& params,
                          const std::vector<const Tensor<double>*>& analytic, double step = 1e-5,
                          double tolerance = 1e-4, long max_coords_per_param = -1) {
  if (params.size() != analytic.size())
    throw std::invalid_argument("gradcheck: params/analytic count mismatch");
  GradCheckReport rep;
  rep.step = step;
  rep.tolerance = tolerance;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& t = *params[pi].second;
    if (analytic[pi]->size() != t.size())
      throw std::invalid_argument("gradcheck: analytic gradient shape mismatch for " +
                                  params[pi].first);
    GradCheckParamReport pr;
    pr.name = params[pi].first;
    const long n = t.size();
    long count = (max_coords_per_param > 0) ? std::min(max_coords_per_param, n) : n;
    for (long ci = 0; ci < count; ++ci) {
      // Evenly strided deterministic coordinate choice.
      const long i = (count == n) ? ci : (ci * n) / count;
      const double saved = t[i];
      t[i] = saved + step;
      const double lp = loss();
      t[i] = saved - step;
      const double lm = loss();
      t[i] = saved;
      const double num = (lp - lm) / (2.0 * step);
      const double ana = (*analytic[pi])[i];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-2});
      ++pr.checked;
      if (rel > pr.max_rel_err) {
        pr.max_rel_err = rel;
        pr.worst_index = i;
        pr.analytic = ana;
        pr.numeric = num;
      }
    }
    if (pr.max_rel_err > rep.worst_rel_err) {
      rep.worst_rel_err = pr.max_rel_err;
      rep.worst_param = pr.name;
      rep.worst_index = pr.worst_index;
    }
    if (pr.max_rel_err > tolerance) rep.pass = false;
    rep.params.push_back(std::move(pr));
  }
  return rep;
}

}  // namespace wz
