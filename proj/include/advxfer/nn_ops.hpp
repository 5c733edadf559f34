#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "advxfer/gemm.hpp"
#include "advxfer/tensor.hpp"

namespace advxfer {

namespace detail {

// Unfold one CHW image into a [C*KH*KW x Hout*Wout] column matrix.
template <typename S>
void im2col(const S* img, int C, int H, int W, int KH, int stride, int pad, int Hout, int Wout,
            S* col) {
  const int ncols = Hout * Wout;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < KH; ++ki) {
      for (int kj = 0; kj < KH; ++kj) {
        S* dst = col + (static_cast<size_t>(c) * KH * KH + ki * KH + kj) * ncols;
        for (int oy = 0; oy < Hout; ++oy) {
          int iy = oy * stride - pad + ki;
          S* row = dst + static_cast<size_t>(oy) * Wout;
          if (iy < 0 || iy >= H) {
            std::fill(row, row + Wout, S(0));
            continue;
          }
          const S* src = img + (static_cast<size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wout; ++ox) {
            int ix = ox * stride - pad + kj;
            row[ox] = (ix >= 0 && ix < W) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

// Scatter a column-matrix gradient back onto the CHW image gradient.
template <typename S>
void col2im_add(const S* col, int C, int H, int W, int KH, int stride, int pad, int Hout, int Wout,
                S* img_grad) {
  const int ncols = Hout * Wout;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < KH; ++ki) {
      for (int kj = 0; kj < KH; ++kj) {
        const S* src = col + (static_cast<size_t>(c) * KH * KH + ki * KH + kj) * ncols;
        for (int oy = 0; oy < Hout; ++oy) {
          int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          S* dst = img_grad + (static_cast<size_t>(c) * H + iy) * W;
          const S* row = src + static_cast<size_t>(oy) * Wout;
          for (int ox = 0; ox < Wout; ++ox) {
            int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2D convolution, NCHW input against OIKK weights, no bias (a batchnorm
// always follows in this project's blocks).
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, int stride, int pad) {
  if (x.rank() != 4)
    throw ShapeError("conv2d: input must be NCHW, got " + dims_to_string(x.dims()));
  if (w.rank() != 4 || w.dim(2) != w.dim(3))
    throw ShapeError("conv2d: weight must be OIKK with square kernel, got " +
                     dims_to_string(w.dims()));
  if (x.dim(1) != w.dim(1))
    throw ShapeError("conv2d: input channel axis (C=" + std::to_string(x.dim(1)) +
                     ") != weight in-channel axis (I=" + std::to_string(w.dim(1)) + ")");
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: stride must be >= 1 and pad >= 0");

  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), KH = w.dim(2);
  const int Hout = (H + 2 * pad - KH) / stride + 1;
  const int Wout = (W + 2 * pad - KH) / stride + 1;
  if (Hout < 1 || Wout < 1)
    throw ShapeError("conv2d: kernel " + std::to_string(KH) + " with pad " + std::to_string(pad) +
                     " does not fit input " + dims_to_string(x.dims()));

  auto out = detail::make_interior<S>({B, O, Hout, Wout}, {x.node_ptr(), w.node_ptr()});
  const int ckk = C * KH * KH;
  const int ncols = Hout * Wout;
  const size_t colsz = static_cast<size_t>(ckk) * ncols;

  // Gradient routing is fixed at graph-build time; the column buffer is only
  // retained when the weight gradient will be needed.
  const bool need_wgrad = out->requires_grad && w.requires_grad();
  const bool need_xgrad = out->requires_grad && x.requires_grad();
  auto colbatch = std::make_shared<std::vector<S>>(colsz * B);

  const S* xv = x.values().data();
  const S* wv = w.values().data();
  S* yv = out->values.data();
#pragma omp parallel for schedule(static)
  for (int b = 0; b < B; ++b) {
    S* col = colbatch->data() + colsz * b;
    detail::im2col(xv + static_cast<size_t>(b) * C * H * W, C, H, W, KH, stride, pad, Hout, Wout,
                   col);
    gemm_nn(O, ncols, ckk, wv, col, yv + static_cast<size_t>(b) * O * ncols);
  }
  if (!need_wgrad) colbatch.reset();

  if (out->requires_grad) {
    out->backward_fn = [=](detail::Node<S>& self) {
      auto& xn = *self.parents[0];
      auto& wn = *self.parents[1];
      const S* g = self.grad.data();
      if (need_wgrad) {
        wn.ensure_grad();
        S* wg = wn.grad.data();
        const S* cb = colbatch->data();
#pragma omp parallel for schedule(static)
        for (int o = 0; o < O; ++o) {
          for (int r = 0; r < ckk; ++r) {
            S acc = S(0);
            for (int b = 0; b < B; ++b) {
              const S* grow = g + (static_cast<size_t>(b) * O + o) * ncols;
              const S* crow = cb + colsz * b + static_cast<size_t>(r) * ncols;
              for (int p = 0; p < ncols; ++p) acc += grow[p] * crow[p];
            }
            wg[static_cast<size_t>(o) * ckk + r] += acc;
          }
        }
      }
      if (need_xgrad) {
        xn.ensure_grad();
        S* xg = xn.grad.data();
        const S* wvb = wn.values.data();
#pragma omp parallel for schedule(static)
        for (int b = 0; b < B; ++b) {
          std::vector<S> dcol(colsz);
          gemm_tn(ckk, ncols, O, wvb, g + static_cast<size_t>(b) * O * ncols, dcol.data());
          detail::col2im_add(dcol.data(), C, H, W, KH, stride, pad, Hout, Wout,
                             xg + static_cast<size_t>(b) * C * H * W);
        }
      }
    };
  }
  return Tensor<S>::wrap(out);
}

// Batch normalization over NCHW. Train mode normalizes with batch statistics
// and folds them into the running stats (EMA); eval mode reads running stats
// and has no side effects. running_mean/running_var are plain leaf tensors
// mutated in place, outside the differentiable graph.
template <typename S>
Tensor<S> batchnorm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                      Tensor<S>& running_mean, Tensor<S>& running_var, bool train_mode,
                      S momentum = S(0.1), S eps = S(1e-5)) {
  if (x.rank() != 4)
    throw ShapeError("batchnorm2d: input must be NCHW, got " + dims_to_string(x.dims()));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.size() != C || beta.size() != C || running_mean.size() != C || running_var.size() != C)
    throw ShapeError("batchnorm2d: per-channel parameter length must equal channel axis C=" +
                     std::to_string(C) + ", got gamma " + dims_to_string(gamma.dims()) +
                     ", beta " + dims_to_string(beta.dims()));

  auto out = detail::make_interior<S>(x.dims(), {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()});
  const size_t plane = static_cast<size_t>(H) * W;
  const int64_t count = static_cast<int64_t>(B) * H * W;

  std::vector<S> mean(C), invstd(C);
  const S* xv = x.values().data();
  if (train_mode) {
    for (int c = 0; c < C; ++c) {
      S m = S(0);
      for (int b = 0; b < B; ++b) {
        const S* p = xv + (static_cast<size_t>(b) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) m += p[i];
      }
      m /= static_cast<S>(count);
      S v = S(0);
      for (int b = 0; b < B; ++b) {
        const S* p = xv + (static_cast<size_t>(b) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          S d = p[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<S>(count);
      mean[c] = m;
      invstd[c] = S(1) / std::sqrt(v + eps);
      running_mean.values()[c] = (S(1) - momentum) * running_mean.values()[c] + momentum * m;
      running_var.values()[c] = (S(1) - momentum) * running_var.values()[c] + momentum * v;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean.values()[c];
      invstd[c] = S(1) / std::sqrt(running_var.values()[c] + eps);
    }
  }

  const S* gv = gamma.values().data();
  const S* bv = beta.values().data();
  S* yv = out->values.data();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const S* p = xv + (static_cast<size_t>(b) * C + c) * plane;
      S* q = yv + (static_cast<size_t>(b) * C + c) * plane;
      S sc = gv[c] * invstd[c];
      S sh = bv[c] - mean[c] * sc;
      for (size_t i = 0; i < plane; ++i) q[i] = p[i] * sc + sh;
    }

  if (out->requires_grad) {
    auto saved_mean = std::make_shared<std::vector<S>>(std::move(mean));
    auto saved_invstd = std::make_shared<std::vector<S>>(std::move(invstd));
    out->backward_fn = [=](detail::Node<S>& self) {
      auto& xn = *self.parents[0];
      auto& gn = *self.parents[1];
      auto& bn = *self.parents[2];
      const S* g = self.grad.data();
      const S* xvb = xn.values.data();
      const S* gvb = gn.values.data();
      const auto& mu = *saved_mean;
      const auto& is = *saved_invstd;

      std::vector<S> sum_g(C, S(0)), sum_gx(C, S(0));  // sums of grad and grad*xhat
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const S* gp = g + (static_cast<size_t>(b) * C + c) * plane;
          const S* xp = xvb + (static_cast<size_t>(b) * C + c) * plane;
          S sg = S(0), sgx = S(0);
          for (size_t i = 0; i < plane; ++i) {
            sg += gp[i];
            sgx += gp[i] * (xp[i] - mu[c]) * is[c];
          }
          sum_g[c] += sg;
          sum_gx[c] += sgx;
        }

      if (gn.requires_grad) {
        gn.ensure_grad();
        for (int c = 0; c < C; ++c) gn.grad[c] += sum_gx[c];
      }
      if (bn.requires_grad) {
        bn.ensure_grad();
        for (int c = 0; c < C; ++c) bn.grad[c] += sum_g[c];
      }
      if (xn.requires_grad) {
        xn.ensure_grad();
        S* xg = xn.grad.data();
        if (train_mode) {
          S inv_count = S(1) / static_cast<S>(count);
          for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
              const S* gp = g + (static_cast<size_t>(b) * C + c) * plane;
              const S* xp = xvb + (static_cast<size_t>(b) * C + c) * plane;
              S* dp = xg + (static_cast<size_t>(b) * C + c) * plane;
              S m1 = sum_g[c] * inv_count;
              S m2 = sum_gx[c] * inv_count;
              S sc = gvb[c] * is[c];
              for (size_t i = 0; i < plane; ++i) {
                S xhat = (xp[i] - mu[c]) * is[c];
                dp[i] += sc * (gp[i] - m1 - xhat * m2);
              }
            }
        } else {
          for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
              const S* gp = g + (static_cast<size_t>(b) * C + c) * plane;
              S* dp = xg + (static_cast<size_t>(b) * C + c) * plane;
              S sc = gvb[c] * is[c];
              for (size_t i = 0; i < plane; ++i) dp[i] += sc * gp[i];
            }
        }
      }
    };
  }
  return Tensor<S>::wrap(out);
}

// NCHW -> NC mean over the spatial plane.
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  if (x.rank() != 4)
    throw ShapeError("global_avg_pool: input must be NCHW, got " + dims_to_string(x.dims()));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const size_t plane = static_cast<size_t>(H) * W;
  auto out = detail::make_interior<S>({B, C}, {x.node_ptr()});
  const S* xv = x.values().data();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const S* p = xv + (static_cast<size_t>(b) * C + c) * plane;
      S acc = S(0);
      for (size_t i = 0; i < plane; ++i) acc += p[i];
      out->values[static_cast<size_t>(b) * C + c] = acc / static_cast<S>(plane);
    }
  if (out->requires_grad)
    out->backward_fn = [=](detail::Node<S>& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      S* xg = p.grad.data();
      S inv = S(1) / static_cast<S>(plane);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          S g = self.grad[static_cast<size_t>(b) * C + c] * inv;
          S* dp = xg + (static_cast<size_t>(b) * C + c) * plane;
          for (size_t i = 0; i < plane; ++i) dp[i] += g;
        }
    };
  return Tensor<S>::wrap(out);
}

// y = x * w^T + bias, x is [N x F], w is [K x F], bias is [K].
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias) {
  if (x.rank() != 2) throw ShapeError("linear: input must be NxF, got " + dims_to_string(x.dims()));
  if (w.rank() != 2 || w.dim(1) != x.dim(1))
    throw ShapeError("linear: weight feature axis (" + dims_to_string(w.dims()) +
                     ") does not match input feature axis F=" + std::to_string(x.dim(1)));
  if (bias.size() != w.dim(0))
    throw ShapeError("linear: bias length " + std::to_string(bias.size()) +
                     " != output axis K=" + std::to_string(w.dim(0)));
  const int N = x.dim(0), F = x.dim(1), K = w.dim(0);
  auto out = detail::make_interior<S>({N, K}, {x.node_ptr(), w.node_ptr(), bias.node_ptr()});
  gemm_nt(N, K, F, x.values().data(), w.values().data(), out->values.data());
  const S* bv = bias.values().data();
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) out->values[static_cast<size_t>(n) * K + k] += bv[k];

  if (out->requires_grad)
    out->backward_fn = [=](detail::Node<S>& self) {
      auto& xn = *self.parents[0];
      auto& wn = *self.parents[1];
      auto& bn = *self.parents[2];
      const S* g = self.grad.data();
      if (xn.requires_grad) {
        xn.ensure_grad();
        gemm_nn(N, F, K, g, wn.values.data(), xn.grad.data(), /*accumulate=*/true);
      }
      if (wn.requires_grad) {
        wn.ensure_grad();
        gemm_tn(K, F, N, g, xn.values.data(), wn.grad.data(), /*accumulate=*/true);
      }
      if (bn.requires_grad) {
        bn.ensure_grad();
        for (int n = 0; n < N; ++n)
          for (int k = 0; k < K; ++k) bn.grad[k] += g[static_cast<size_t>(n) * K + k];
      }
    };
  return Tensor<S>::wrap(out);
}

// Mean over the batch of -log softmax(logits)[label], log-sum-exp stabilized.
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw ShapeError("softmax_cross_entropy: logits must be NxK, got " +
                     dims_to_string(logits.dims()));
  const int N = logits.dim(0), K = logits.dim(1);
  if (K < 2) throw ConfigError("softmax_cross_entropy: need at least 2 classes, got K=" +
                               std::to_string(K));
  if (static_cast<int>(labels.size()) != N)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(N) + " rows");
  for (int n = 0; n < N; ++n)
    if (labels[n] < 0 || labels[n] >= K)
      throw DataError("softmax_cross_entropy: label " + std::to_string(labels[n]) + " at row " +
                      std::to_string(n) + " outside [0," + std::to_string(K) + ")");

  auto out = detail::make_interior<S>({1}, {logits.node_ptr()});
  auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(N) * K);
  const S* z = logits.values().data();
  S loss = S(0);
  for (int n = 0; n < N; ++n) {
    const S* row = z + static_cast<size_t>(n) * K;
    S m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    S se = S(0);
    for (int k = 0; k < K; ++k) se += std::exp(row[k] - m);
    S lse = m + std::log(se);
    loss += lse - row[labels[n]];
    S* prow = probs->data() + static_cast<size_t>(n) * K;
    for (int k = 0; k < K; ++k) prow[k] = std::exp(row[k] - lse);
  }
  out->values[0] = loss / static_cast<S>(N);

  if (out->requires_grad) {
    auto lab = std::make_shared<std::vector<int>>(labels);
    out->backward_fn = [=](detail::Node<S>& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      S g0 = self.grad[0] / static_cast<S>(N);
      for (int n = 0; n < N; ++n) {
        const S* prow = probs->data() + static_cast<size_t>(n) * K;
        S* drow = p.grad.data() + static_cast<size_t>(n) * K;
        int y = (*lab)[n];
        for (int k = 0; k < K; ++k) drow[k] += g0 * (prow[k] - (k == y ? S(1) : S(0)));
      }
    };
  }
  return Tensor<S>::wrap(out);
}

// Row argmax with ties broken toward the lowest class index.
template <typename S>
std::vector<int> argmax_rows(const Tensor<S>& logits) {
  if (logits.rank() != 2)
    throw ShapeError("argmax_rows: logits must be NxK, got " + dims_to_string(logits.dims()));
  const int N = logits.dim(0), K = logits.dim(1);
  std::vector<int> pred(N);
  const S* z = logits.values().data();
  for (int n = 0; n < N; ++n) {
    const S* row = z + static_cast<size_t>(n) * K;
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;
    pred[n] = best;
  }
  return pred;
}

}  // namespace advxfer
