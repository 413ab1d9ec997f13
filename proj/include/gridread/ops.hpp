#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "gridread/tensor.hpp"

namespace gridread {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvParams {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

inline int conv_out_size(int in, int k, int stride, int padding, int dilation) {
  return (in + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation over NCHW. groups==1 runs as im2col + GEMM,
// grouped/depthwise convolution falls back to direct loops.
// ---------------------------------------------------------------------------

namespace detail {

// col is [Cin*kh*kw, N*Ho*Wo] row major, column index = n*Ho*Wo + p.
template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, const ConvParams& cp, int ho, int wo,
            std::vector<T>& col) {
  const int n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const size_t cols = static_cast<size_t>(n_batch) * ho * wo;
  // Every element is written below (padding positions get explicit zeros), so
  // the buffer is only resized, never pre-filled.
  col.resize(static_cast<size_t>(cin) * kh * kw * cols);
#pragma omp parallel for schedule(static)
  for (int n = 0; n < n_batch; ++n) {
    for (int c = 0; c < cin; ++c) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const size_t row = ((static_cast<size_t>(c) * kh) + ky) * kw + kx;
          T* dst = col.data() + row * cols + static_cast<size_t>(n) * ho * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * cp.stride - cp.padding + ky * cp.dilation;
            if (iy < 0 || iy >= h) {
              std::fill_n(dst, wo, T(0));
              dst += wo;
              continue;
            }
            const int x_lo = (cp.padding - kx * cp.dilation + cp.stride - 1) / cp.stride;
            const int hi_num = w - 1 - kx * cp.dilation + cp.padding;
            // First ox with ix >= w (0 when no in-bounds ox exists).
            const int x_hi_excl = hi_num < 0 ? 0 : hi_num / cp.stride + 1;
            const int lo = std::clamp(x_lo, 0, wo);
            const int hi = std::clamp(x_hi_excl, lo, wo);
            std::fill_n(dst, lo, T(0));
            const T* src =
                x.data.data() + ((static_cast<size_t>(n) * cin + c) * h + iy) * w;
            if (cp.stride == 1) {
              std::copy_n(src + (lo - cp.padding + kx * cp.dilation), hi - lo, dst + lo);
            } else {
              for (int ox = lo; ox < hi; ++ox)
                dst[ox] = src[ox * cp.stride - cp.padding + kx * cp.dilation];
            }
            std::fill_n(dst + hi, wo - hi, T(0));
            dst += wo;
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const std::vector<T>& col, int n_batch, int cin, int h, int w, int kh, int kw,
            const ConvParams& cp, int ho, int wo, Tensor<T>& dx) {
  const size_t cols = static_cast<size_t>(n_batch) * ho * wo;
#pragma omp parallel for schedule(static)
  for (int n = 0; n < n_batch; ++n) {
    for (int c = 0; c < cin; ++c) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const size_t row = ((static_cast<size_t>(c) * kh) + ky) * kw + kx;
          const T* src = col.data() + row * cols + static_cast<size_t>(n) * ho * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * cp.stride - cp.padding + ky * cp.dilation;
            if (iy < 0 || iy >= h) {
              src += wo;
              continue;
            }
            for (int ox = 0; ox < wo; ++ox, ++src) {
              const int ix = ox * cp.stride - cp.padding + kx * cp.dilation;
              if (ix >= 0 && ix < w) dx.at4(n, c, iy, ix) += *src;
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// `col_cache`, when given, receives the im2col buffer built during the
// forward pass so the backward pass can reuse it instead of rebuilding it.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         const ConvParams& cp, std::vector<T>* col_cache = nullptr) {
  if (x.shape.size() != 4 || w.shape.size() != 4) throw ShapeError("conv2d expects 4-d tensors");
  const int n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (cin % cp.groups != 0 || cout % cp.groups != 0)
    throw ShapeError("channels not divisible by groups");
  if (w.dim(1) != cin / cp.groups)
    throw ShapeError("conv2d weight/input channel mismatch: " + shape_str(w) + " vs " + shape_str(x));
  if (static_cast<int>(b.numel()) != cout) throw ShapeError("conv2d bias size mismatch");
  const int ho = conv_out_size(h, kh, cp.stride, cp.padding, cp.dilation);
  const int wo = conv_out_size(wd, kw, cp.stride, cp.padding, cp.dilation);
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d output would be empty");
  x.check_finite("conv2d input");

  Tensor<T> y({n_batch, cout, ho, wo});
  if (cp.groups == 1) {
    std::vector<T> local_col;
    std::vector<T>& col = col_cache ? *col_cache : local_col;
    detail::im2col(x, kh, kw, cp, ho, wo, col);
    const size_t cols = static_cast<size_t>(n_batch) * ho * wo;
    const int rows = cin * kh * kw;
    ConstMatMap<T> wm(w.data.data(), cout, rows);
    ConstMatMap<T> cm(col.data(), rows, static_cast<Eigen::Index>(cols));
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out = wm * cm;
#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_batch; ++n)
      for (int c = 0; c < cout; ++c)
        for (int p = 0; p < ho * wo; ++p)
          y.data[((static_cast<size_t>(n) * cout + c) * ho * wo) + p] =
              out(c, static_cast<Eigen::Index>(static_cast<size_t>(n) * ho * wo + p)) + b.data[c];
  } else {
    const int cin_g = cin / cp.groups, cout_g = cout / cp.groups;
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < n_batch; ++n) {
      for (int co = 0; co < cout; ++co) {
        const int g = co / cout_g;
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox) {
            T acc = b.data[co];
            for (int ci = 0; ci < cin_g; ++ci) {
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * cp.stride - cp.padding + ky * cp.dilation;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox * cp.stride - cp.padding + kx * cp.dilation;
                  if (ix < 0 || ix >= wd) continue;
                  acc += x.at4(n, g * cin_g + ci, iy, ix) *
                         w.data[((static_cast<size_t>(co) * cin_g + ci) * kh + ky) * kw + kx];
                }
              }
            }
            y.at4(n, co, oy, ox) = acc;
          }
        }
      }
    }
  }
  y.check_finite("conv2d output");
  return y;
}

// `col_cache`, when non-null and correctly sized, is the im2col buffer from the
// matching forward call (avoids rebuilding it). When `need_dx` is false the
// input gradient is skipped entirely (first layer of a network).
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvParams& cp,
                     const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>& dw, Tensor<T>& db,
                     const std::vector<T>* col_cache = nullptr, bool need_dx = true) {
  const int n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = dy.dim(2), wo = dy.dim(3);
  dx = Tensor<T>(x.shape);
  dw = Tensor<T>(w.shape);
  db = Tensor<T>({cout});

  // Bias grad: deterministic sequential reduction per output channel.
  for (int c = 0; c < cout; ++c) {
    T acc = 0;
    for (int n = 0; n < n_batch; ++n)
      for (int p = 0; p < ho * wo; ++p)
        acc += dy.data[(static_cast<size_t>(n) * cout + c) * ho * wo + p];
    db.data[c] = acc;
  }

  if (cp.groups == 1) {
    const size_t cols = static_cast<size_t>(n_batch) * ho * wo;
    const int rows = cin * kh * kw;
    std::vector<T> local_col;
    if (!col_cache || col_cache->size() != static_cast<size_t>(rows) * cols) {
      detail::im2col(x, kh, kw, cp, ho, wo, local_col);
      col_cache = &local_col;
    }
    // Gather dy into [Cout, N*Ho*Wo].
    std::vector<T> dyg(static_cast<size_t>(cout) * cols);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_batch; ++n)
      for (int c = 0; c < cout; ++c)
        std::copy_n(dy.data.data() + (static_cast<size_t>(n) * cout + c) * ho * wo, ho * wo,
                    dyg.data() + static_cast<size_t>(c) * cols + static_cast<size_t>(n) * ho * wo);
    ConstMatMap<T> dym(dyg.data(), cout, static_cast<Eigen::Index>(cols));
    ConstMatMap<T> cm(col_cache->data(), rows, static_cast<Eigen::Index>(cols));
    MatMap<T> dwm(dw.data.data(), cout, rows);
    dwm = dym * cm.transpose();
    if (need_dx && cp.stride == 1 && cp.dilation == 1) {
      // Input gradient as a correlation of dy with the spatially flipped,
      // channel-transposed kernel — runs through the efficient im2col + GEMM
      // path instead of a scatter-based col2im.
      Tensor<T> wf({cin, cout, kh, kw});
#pragma omp parallel for schedule(static)
      for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx)
              wf.at4(ci, co, kh - 1 - ky, kw - 1 - kx) = w.at4(co, ci, ky, kx);
      const Tensor<T> zero_bias({cin});
      dx = conv2d_forward(dy, wf, zero_bias, ConvParams{1, kh - 1 - cp.padding, 1, 1});
    } else if (need_dx) {
      ConstMatMap<T> wm(w.data.data(), cout, rows);
      std::vector<T> dcol(static_cast<size_t>(rows) * cols);
      MatMap<T> dcm(dcol.data(), rows, static_cast<Eigen::Index>(cols));
      dcm = wm.transpose() * dym;
      detail::col2im(dcol, n_batch, cin, h, wd, kh, kw, cp, ho, wo, dx);
    }
  } else {
    const int cin_g = cin / cp.groups, cout_g = cout / cp.groups;
    // Weight grads: deterministic loop over batch outermost.
    for (int n = 0; n < n_batch; ++n) {
#pragma omp parallel for schedule(static)
      for (int co = 0; co < cout; ++co) {
        const int g = co / cout_g;
        for (int ci = 0; ci < cin_g; ++ci) {
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              T acc = 0;
              for (int oy = 0; oy < ho; ++oy) {
                const int iy = oy * cp.stride - cp.padding + ky * cp.dilation;
                if (iy < 0 || iy >= h) continue;
                for (int ox = 0; ox < wo; ++ox) {
                  const int ix = ox * cp.stride - cp.padding + kx * cp.dilation;
                  if (ix < 0 || ix >= wd) continue;
                  acc += dy.at4(n, co, oy, ox) * x.at4(n, g * cin_g + ci, iy, ix);
                }
              }
              dw.data[((static_cast<size_t>(co) * cin_g + ci) * kh + ky) * kw + kx] += acc;
            }
          }
        }
      }
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < n_batch; ++n) {
      for (int ci_full = 0; ci_full < cin; ++ci_full) {
        const int g = ci_full / cin_g;
        const int ci = ci_full % cin_g;
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox) {
            for (int co = g * cout_g; co < (g + 1) * cout_g; ++co) {
              const T gy = dy.at4(n, co, oy, ox);
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * cp.stride - cp.padding + ky * cp.dilation;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox * cp.stride - cp.padding + kx * cp.dilation;
                  if (ix < 0 || ix >= wd) continue;
                  dx.at4(n, ci_full, iy, ix) +=
                      gy * w.data[((static_cast<size_t>(co) * cin_g + ci) * kh + ky) * kw + kx];
                }
              }
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// batchnorm2d
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormCache {
  std::vector<T> mean, inv_std;
  Tensor<T> xhat;
};

template <typename T>
Tensor<T> batchnorm2d_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                              Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                              BatchNormCache<T>* cache, T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.shape.size() != 4) throw ShapeError("batchnorm2d expects NCHW");
  const int n_batch = x.dim(0), c_ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (training && n_batch < 2) throw ShapeError("batchnorm2d training requires batch >= 2");
  Tensor<T> y(x.shape);
  const size_t plane = static_cast<size_t>(h) * w;
  const T count = static_cast<T>(n_batch * plane);
  if (cache) {
    cache->mean.assign(c_ch, T(0));
    cache->inv_std.assign(c_ch, T(0));
    cache->xhat = Tensor<T>(x.shape);
  }
#pragma omp parallel for schedule(static)
  for (int c = 0; c < c_ch; ++c) {
    T mean, var;
    if (training) {
      T sum = 0;
      for (int n = 0; n < n_batch; ++n) {
        const T* p = x.data.data() + (static_cast<size_t>(n) * c_ch + c) * plane;
        for (size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = sum / count;
      T sq = 0;
      for (int n = 0; n < n_batch; ++n) {
        const T* p = x.data.data() + (static_cast<size_t>(n) * c_ch + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const T d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / count;  // biased, as used for normalization
      running_mean.data[c] = (T(1) - momentum) * running_mean.data[c] + momentum * mean;
      const T unbiased = count > 1 ? sq / (count - 1) : var;
      running_var.data[c] = (T(1) - momentum) * running_var.data[c] + momentum * unbiased;
    } else {
      mean = running_mean.data[c];
      var = running_var.data[c];
    }
    const T inv_std = T(1) / std::sqrt(var + eps);
    if (cache) {
      cache->mean[c] = mean;
      cache->inv_std[c] = inv_std;
    }
    for (int n = 0; n < n_batch; ++n) {
      const T* p = x.data.data() + (static_cast<size_t>(n) * c_ch + c) * plane;
      T* q = y.data.data() + (static_cast<size_t>(n) * c_ch + c) * plane;
      T* xh = cache ? cache->xhat.data.data() + (static_cast<size_t>(n) * c_ch + c) * plane : nullptr;
      for (size_t i = 0; i < plane; ++i) {
        const T hat = (p[i] - mean) * inv_std;
        if (xh) xh[i] = hat;
        q[i] = gamma.data[c] * hat + beta.data[c];
      }
    }
  }
  return y;
}

template <typename T>
void batchnorm2d_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                          const Tensor<T>& dy, bool training, Tensor<T>& dx, Tensor<T>& dgamma,
                          Tensor<T>& dbeta) {
  const int n_batch = dy.dim(0), c_ch = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
  const size_t plane = static_cast<size_t>(h) * w;
  const T count = static_cast<T>(n_batch * plane);
  dx = Tensor<T>(dy.shape);
  dgamma = Tensor<T>({c_ch});
  dbeta = Tensor<T>({c_ch});
#pragma omp parallel for schedule(static)
  for (int c = 0; c < c_ch; ++c) {
    T sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < n_batch; ++n) {
      const T* gyp = dy.data.data() + (static_cast<size_t>(n) * c_ch + c) * plane;
      const T* xh = cache.xhat.data.data() + (static_cast<size_t>(n) * c_ch + c) * plane;
      for (size_t i = 0; i < plane; ++i) {
        sum_dy += gyp[i];
        sum_dy_xhat += gyp[i] * xh[i];
      }
    }
    dgamma.data[c] = sum_dy_xhat;
    dbeta.data[c] = sum_dy;
    const T g = gamma.data[c];
    const T inv_std = cache.inv_std[c];
    for (int n = 0; n < n_batch; ++n) {
      const T* gyp = dy.data.data() + (static_cast<size_t>(n) * c_ch + c) * plane;
      const T* xh = cache.xhat.data.data() + (static_cast<size_t>(n) * c_ch + c) * plane;
      T* dxp = dx.data.data() + (static_cast<size_t>(n) * c_ch + c) * plane;
      for (size_t i = 0; i < plane; ++i) {
        if (training) {
          dxp[i] = g * inv_std * (gyp[i] - sum_dy / count - xh[i] * sum_dy_xhat / count);
        } else {
          dxp[i] = g * inv_std * gyp[i];
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x, T cap = T(0)) {  // cap>0 gives ReLU-n
  Tensor<T> y(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) {
    T v = std::max(x.data[i], T(0));
    if (cap > 0) v = std::min(v, cap);
    y.data[i] = v;
  }
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy, T cap = T(0)) {
  Tensor<T> dx(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) {
    const bool pass = x.data[i] > 0 && (cap <= 0 || x.data[i] < cap);
    dx.data[i] = pass ? dy.data[i] : T(0);
  }
  return dx;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
  return y;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <typename T>
struct PoolCache {
  std::vector<int> argmax;  // flat input index per output element
};

template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& x, int kernel, int stride, PoolCache<T>* cache) {
  const int n_batch = x.dim(0), c_ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = (h - kernel) / stride + 1;
  const int wo = (w - kernel) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("maxpool output would be empty");
  Tensor<T> y({n_batch, c_ch, ho, wo});
  if (cache) cache->argmax.assign(y.numel(), -1);
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < c_ch; ++c)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          int best_idx = -1;
          for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx) {
              const int iy = oy * stride + ky, ix = ox * stride + kx;
              const T v = x.at4(n, c, iy, ix);
              if (v > best) {
                best = v;
                best_idx = iy * w + ix;
              }
            }
          y.at4(n, c, oy, ox) = best;
          if (cache)
            cache->argmax[((static_cast<size_t>(n) * c_ch + c) * ho + oy) * wo + ox] = best_idx;
        }
  return y;
}

// Adaptive max pool to an exact target size using the floor/ceil partition
// window [floor(i*H/t), ceil((i+1)*H/t)).
template <typename T>
Tensor<T> adaptive_maxpool_forward(const Tensor<T>& x, int th, int tw, PoolCache<T>* cache) {
  const int n_batch = x.dim(0), c_ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (th <= 0 || tw <= 0) throw ShapeError("adaptive_maxpool target must be positive");
  if (th > h || tw > w) throw ShapeError("adaptive_maxpool target exceeds input size");
  Tensor<T> y({n_batch, c_ch, th, tw});
  if (cache) cache->argmax.assign(y.numel(), -1);
  auto lo = [](int i, int in, int t) { return (i * in) / t; };
  auto hi = [](int i, int in, int t) { return ((i + 1) * in + t - 1) / t; };
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < c_ch; ++c)
      for (int oy = 0; oy < th; ++oy)
        for (int ox = 0; ox < tw; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          int best_idx = -1;
          for (int iy = lo(oy, h, th); iy < hi(oy, h, th); ++iy)
            for (int ix = lo(ox, w, tw); ix < hi(ox, w, tw); ++ix) {
              const T v = x.at4(n, c, iy, ix);
              if (v > best) {
                best = v;
                best_idx = iy * w + ix;
              }
            }
          y.at4(n, c, oy, ox) = best;
          if (cache)
            cache->argmax[((static_cast<size_t>(n) * c_ch + c) * th + oy) * tw + ox] = best_idx;
        }
  return y;
}

template <typename T>
Tensor<T> pool_backward(const PoolCache<T>& cache, const std::vector<int>& in_shape,
                        const Tensor<T>& dy) {
  Tensor<T> dx(in_shape);
  const int c_ch = in_shape[1];
  const size_t plane = static_cast<size_t>(in_shape[2]) * in_shape[3];
  const size_t out_per_nc = dy.numel() / (static_cast<size_t>(dy.dim(0)) * dy.dim(1));
  for (int n = 0; n < dy.dim(0); ++n)
    for (int c = 0; c < c_ch; ++c) {
      const size_t base_out = (static_cast<size_t>(n) * c_ch + c) * out_per_nc;
      T* dst = dx.data.data() + (static_cast<size_t>(n) * c_ch + c) * plane;
      for (size_t p = 0; p < out_per_nc; ++p)
        dst[cache.argmax[base_out + p]] += dy.data[base_out + p];
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Grouped softmax over channel slices (per spatial location)
// ---------------------------------------------------------------------------

struct ChannelGroup {
  int offset = 0;
  int size = 0;
};

// Groups must partition [first_channel, C); channels below first_channel pass
// through untouched (used for box/confidence slots ahead of the class block).
template <typename T>
Tensor<T> softmax_group_forward(const Tensor<T>& x, const std::vector<ChannelGroup>& groups) {
  const int c_ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  int covered = 0;
  int min_off = c_ch;
  for (const auto& g : groups) {
    covered += g.size;
    min_off = std::min(min_off, g.offset);
    if (g.offset + g.size > c_ch) throw ShapeError("softmax group exceeds channels");
  }
  if (!groups.empty() && covered != c_ch - min_off)
    throw ShapeError("softmax groups do not partition the channel range");
  Tensor<T> y = x;
  for (int n = 0; n < x.dim(0); ++n)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix)
        for (const auto& g : groups) {
          T mx = -std::numeric_limits<T>::infinity();
          for (int c = 0; c < g.size; ++c) mx = std::max(mx, x.at4(n, g.offset + c, iy, ix));
          T sum = 0;
          for (int c = 0; c < g.size; ++c) {
            const T e = std::exp(x.at4(n, g.offset + c, iy, ix) - mx);
            y.at4(n, g.offset + c, iy, ix) = e;
            sum += e;
          }
          for (int c = 0; c < g.size; ++c) y.at4(n, g.offset + c, iy, ix) /= sum;
        }
  return y;
}

template <typename T>
Tensor<T> softmax_group_backward(const Tensor<T>& y, const std::vector<ChannelGroup>& groups,
                                 const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  const int h = y.dim(2), w = y.dim(3);
  for (int n = 0; n < y.dim(0); ++n)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix)
        for (const auto& g : groups) {
          T dot = 0;
          for (int c = 0; c < g.size; ++c)
            dot += dy.at4(n, g.offset + c, iy, ix) * y.at4(n, g.offset + c, iy, ix);
          for (int c = 0; c < g.size; ++c)
            dx.at4(n, g.offset + c, iy, ix) =
                y.at4(n, g.offset + c, iy, ix) * (dy.at4(n, g.offset + c, iy, ix) - dot);
        }
  return dx;
}

// ---------------------------------------------------------------------------
// SGD with momentum and weight decay: v <- mu*v + g + wd*p; p <- p - lr*v
// ---------------------------------------------------------------------------

template <typename T>
void sgd_step(Tensor<T>& param, std::vector<T>& velocity, T lr, T momentum, T weight_decay) {
  if (velocity.size() != param.data.size()) velocity.assign(param.data.size(), T(0));
  for (size_t i = 0; i < param.data.size(); ++i) {
    const T g = param.grad[i] + weight_decay * param.data[i];
    velocity[i] = momentum * velocity[i] + g;
    param.data[i] -= lr * velocity[i];
  }
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("add shape mismatch");
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace gridread
