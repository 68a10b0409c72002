#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <vector>

#include "ssn/gemm.hpp"
#include "ssn/rng.hpp"
#include "ssn/tape.hpp"
#include "ssn/tensor.hpp"

namespace ssn {

/// Geometry of one 3D convolution. Axis order is (depth, height, width)
/// throughout; depth is the slice axis of a volume.
struct Conv3dParams {
  std::array<std::size_t, 3> kernel{1, 1, 1};
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> padding{0, 0, 0};
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
};

/// floor((n + 2p - k) / s) + 1, rejecting empty outputs.
inline std::size_t conv_out_extent(std::size_t n, std::size_t k, std::size_t s,
                                   std::size_t p, const char* axis) {
  if (s == 0) throw GeometryError("stride must be positive");
  if (n + 2 * p < k)
    throw GeometryError(std::string("conv output extent < 1 on ") + axis +
                        " axis: input " + std::to_string(n) + ", kernel " +
                        std::to_string(k) + ", padding " + std::to_string(p));
  return (n + 2 * p - k) / s + 1;
}

namespace detail {

// Unrolls one sample into a [Cin*kd*kh*kw, od*oh*ow] matrix (zero padding).
template <typename T>
void im2col(const T* x, std::size_t cin, std::size_t d, std::size_t h,
            std::size_t w, const Conv3dParams& p, std::size_t od,
            std::size_t oh, std::size_t ow, T* col) {
  const auto [kd, kh, kw] = p.kernel;
  const auto [sd, sh, sw] = p.stride;
  const std::ptrdiff_t pd = static_cast<std::ptrdiff_t>(p.padding[0]);
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(p.padding[1]);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(p.padding[2]);
  const std::size_t ncols = od * oh * ow;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const T* xc = x + ci * d * h * w;
    for (std::size_t fd = 0; fd < kd; ++fd)
      for (std::size_t fh = 0; fh < kh; ++fh)
        for (std::size_t fw = 0; fw < kw; ++fw, ++row) {
          T* dst = col + row * ncols;
          for (std::size_t zd = 0; zd < od; ++zd) {
            const std::ptrdiff_t id =
                static_cast<std::ptrdiff_t>(zd * sd + fd) - pd;
            for (std::size_t zh = 0; zh < oh; ++zh) {
              const std::ptrdiff_t ih =
                  static_cast<std::ptrdiff_t>(zh * sh + fh) - ph;
              T* out_row = dst + (zd * oh + zh) * ow;
              if (id < 0 || id >= static_cast<std::ptrdiff_t>(d) || ih < 0 ||
                  ih >= static_cast<std::ptrdiff_t>(h)) {
                std::fill(out_row, out_row + ow, T(0));
                continue;
              }
              const T* src = xc + (static_cast<std::size_t>(id) * h +
                                   static_cast<std::size_t>(ih)) *
                                      w;
              for (std::size_t zw = 0; zw < ow; ++zw) {
                const std::ptrdiff_t iw =
                    static_cast<std::ptrdiff_t>(zw * sw + fw) - pw;
                out_row[zw] =
                    (iw >= 0 && iw < static_cast<std::ptrdiff_t>(w))
                        ? src[iw]
                        : T(0);
              }
            }
          }
        }
  }
}

// Scatters a column matrix back, accumulating into dx (adjoint of im2col).
template <typename T>
void col2im_acc(const T* col, std::size_t cin, std::size_t d, std::size_t h,
                std::size_t w, const Conv3dParams& p, std::size_t od,
                std::size_t oh, std::size_t ow, T* dx) {
  const auto [kd, kh, kw] = p.kernel;
  const auto [sd, sh, sw] = p.stride;
  const std::ptrdiff_t pd = static_cast<std::ptrdiff_t>(p.padding[0]);
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(p.padding[1]);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(p.padding[2]);
  const std::size_t ncols = od * oh * ow;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    T* xc = dx + ci * d * h * w;
    for (std::size_t fd = 0; fd < kd; ++fd)
      for (std::size_t fh = 0; fh < kh; ++fh)
        for (std::size_t fw = 0; fw < kw; ++fw, ++row) {
          const T* src_base = col + row * ncols;
          for (std::size_t zd = 0; zd < od; ++zd) {
            const std::ptrdiff_t id =
                static_cast<std::ptrdiff_t>(zd * sd + fd) - pd;
            if (id < 0 || id >= static_cast<std::ptrdiff_t>(d)) continue;
            for (std::size_t zh = 0; zh < oh; ++zh) {
              const std::ptrdiff_t ih =
                  static_cast<std::ptrdiff_t>(zh * sh + fh) - ph;
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
              const T* src = src_base + (zd * oh + zh) * ow;
              T* dst = xc + (static_cast<std::size_t>(id) * h +
                             static_cast<std::size_t>(ih)) *
                                w;
              for (std::size_t zw = 0; zw < ow; ++zw) {
                const std::ptrdiff_t iw =
                    static_cast<std::ptrdiff_t>(zw * sw + fw) - pw;
                if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(w))
                  dst[iw] += src[zw];
              }
            }
          }
        }
  }
}

template <typename T>
std::vector<T>& conv_scratch(std::size_t n) {
  thread_local std::vector<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

template <typename T>
std::vector<T>& conv_scratch2(std::size_t n) {
  thread_local std::vector<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

}  // namespace detail

/// Strided cross-correlation with zero padding (no kernel flip).
/// input [N,Cin,D,H,W], weight [Cout,Cin,kd,kh,kw], bias [Cout] or null.
template <typename T>
Tensor<T> conv3d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>* bias, const Conv3dParams& params) {
  if (input.ndim() != 5)
    throw ShapeError("conv3d expects a 5-d input, got " + shape_str(input.shape()));
  if (weight.ndim() != 5)
    throw ShapeError("conv3d expects a 5-d weight, got " + shape_str(weight.shape()));
  const std::size_t n = input.dim(0), cin = input.dim(1), d = input.dim(2),
                    h = input.dim(3), w = input.dim(4);
  const std::size_t cout = weight.dim(0);
  if (weight.dim(1) != cin)
    throw ShapeError("conv3d channel mismatch: input has " + std::to_string(cin) +
                     " channels, weight expects " + std::to_string(weight.dim(1)));
  if (weight.dim(2) != params.kernel[0] || weight.dim(3) != params.kernel[1] ||
      weight.dim(4) != params.kernel[2])
    throw ShapeError("conv3d weight shape " + shape_str(weight.shape()) +
                     " does not match configured kernel");
  if (params.in_channels != 0 && params.in_channels != cin)
    throw ShapeError("conv3d params expect " + std::to_string(params.in_channels) +
                     " input channels, got " + std::to_string(cin));
  if (params.out_channels != 0 && params.out_channels != cout)
    throw ShapeError("conv3d params expect " + std::to_string(params.out_channels) +
                     " output channels, weight has " + std::to_string(cout));
  if (bias && (bias->ndim() != 1 || bias->dim(0) != cout))
    throw ShapeError("conv3d bias must have shape (Cout)");

  const std::size_t od = conv_out_extent(d, params.kernel[0], params.stride[0],
                                         params.padding[0], "depth");
  const std::size_t oh = conv_out_extent(h, params.kernel[1], params.stride[1],
                                         params.padding[1], "height");
  const std::size_t ow = conv_out_extent(w, params.kernel[2], params.stride[2],
                                         params.padding[2], "width");

  const std::size_t k = cin * params.kernel[0] * params.kernel[1] * params.kernel[2];
  const std::size_t ncols = od * oh * ow;
  Tensor<T> out({n, cout, od, oh, ow});

  auto& col = detail::conv_scratch<T>(k * ncols);
  for (std::size_t b = 0; b < n; ++b) {
    detail::im2col(input.data() + b * cin * d * h * w, cin, d, h, w, params, od,
                   oh, ow, col.data());
    T* y = out.data() + b * cout * ncols;
    detail::gemm(weight.data(), col.data(), y, cout, k, ncols);
    if (bias) {
      const T* bv = bias->data();
      for (std::size_t c = 0; c < cout; ++c) {
        T* yc = y + c * ncols;
        for (std::size_t i = 0; i < ncols; ++i) yc[i] += bv[c];
      }
    }
  }

  const bool rg =
      input.requires_grad() || weight.requires_grad() || (bias && bias->requires_grad());
  out.set_requires_grad(rg);
  if (tape && rg) {
    auto xi = input.impl();
    auto wi = weight.impl();
    auto bi = bias ? bias->impl() : nullptr;
    auto oi = out.impl();
    Conv3dParams p = params;
    tape->record("conv3d", out, [=]() {
      const T* dy = oi->grad.data();
      const std::size_t batch = n;
      if (wi->requires_grad) {
        auto wg = wi->ensure_grad();
        auto& colb = detail::conv_scratch<T>(k * ncols);
        for (std::size_t b = 0; b < batch; ++b) {
          detail::im2col(xi->values.data() + b * cin * d * h * w, cin, d, h, w,
                         p, od, oh, ow, colb.data());
          detail::gemm_nt(dy + b * cout * ncols, colb.data(), wg.data(), cout,
                          ncols, k, true);
        }
      }
      if (xi->requires_grad) {
        auto xg = xi->ensure_grad();
        auto& dcol = detail::conv_scratch2<T>(k * ncols);
        for (std::size_t b = 0; b < batch; ++b) {
          detail::gemm_tn(wi->values.data(), dy + b * cout * ncols, dcol.data(),
                          k, cout, ncols);
          detail::col2im_acc(dcol.data(), cin, d, h, w, p, od, oh, ow,
                             xg.data() + b * cin * d * h * w);
        }
      }
      if (bi && bi->requires_grad) {
        auto bg = bi->ensure_grad();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < cout; ++c) {
            const T* dyc = dy + (b * cout + c) * ncols;
            T acc = 0;
            for (std::size_t i = 0; i < ncols; ++i) acc += dyc[i];
            bg[c] += acc;
          }
      }
    });
  }
  return out;
}

/// Batch normalization over (N,D,H,W) per channel. Training mode uses batch
/// statistics and updates the running buffers in place with
/// new = (1-momentum)*old + momentum*batch (unbiased variance in the running
/// buffer, biased in the normalization). Eval mode uses the running buffers.
template <typename T>
Tensor<T> batchnorm3d(Tape<T>* tape, const Tensor<T>& input,
                      const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var,
                      T momentum, T eps, bool training) {
  if (input.ndim() != 5)
    throw ShapeError("batchnorm3d expects a 5-d input, got " + shape_str(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3) * input.dim(4);
  const Tensor<T>* per_channel[] = {&gamma, &beta, &running_mean, &running_var};
  for (const Tensor<T>* t : per_channel)
    if (t->ndim() != 1 || t->dim(0) != c)
      throw ShapeError("batchnorm3d per-channel parameters must have shape (C)");

  const std::size_t m = n * plane;
  Tensor<T> out(input.shape());
  std::vector<T> mean_v(c), invstd_v(c);

  if (training) {
    if (m < 2)
      throw NumericError(
          "batchnorm3d in training mode needs at least 2 elements per channel");
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* x = input.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += x[i];
      }
      const double mu = sum / static_cast<double>(m);
      double sq = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* x = input.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double dxi = x[i] - mu;
          sq += dxi * dxi;
        }
      }
      const double var = sq / static_cast<double>(m);
      mean_v[ch] = static_cast<T>(mu);
      invstd_v[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = sq / static_cast<double>(m - 1);
      running_mean.values()[ch] = static_cast<T>(
          (1 - momentum) * running_mean.values()[ch] + momentum * static_cast<T>(mu));
      running_var.values()[ch] = static_cast<T>(
          (1 - momentum) * running_var.values()[ch] + momentum * static_cast<T>(unbiased));
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean_v[ch] = running_mean.values()[ch];
      invstd_v[ch] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(running_var.values()[ch]) +
                          static_cast<double>(eps)));
    }
  }

  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* x = input.data() + (b * c + ch) * plane;
      T* y = out.data() + (b * c + ch) * plane;
      const T mu = mean_v[ch], is = invstd_v[ch];
      const T g = gamma.values()[ch], bt = beta.values()[ch];
      for (std::size_t i = 0; i < plane; ++i) y[i] = (x[i] - mu) * is * g + bt;
    }

  const bool rg =
      input.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  out.set_requires_grad(rg);
  if (tape && rg) {
    auto xi = input.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    auto oi = out.impl();
    tape->record("batchnorm3d", out, [=, mean = std::move(mean_v),
                                      invstd = std::move(invstd_v)]() {
      const T* dy = oi->grad.data();
      const T* x = xi->values.data();
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T mu = mean[ch], is = invstd[ch];
        double sum_dy = 0, sum_dy_xhat = 0;
        for (std::size_t b = 0; b < n; ++b) {
          const T* dyc = dy + (b * c + ch) * plane;
          const T* xc = x + (b * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_dy += dyc[i];
            sum_dy_xhat += dyc[i] * ((xc[i] - mu) * is);
          }
        }
        if (gi->requires_grad) gi->ensure_grad()[ch] += static_cast<T>(sum_dy_xhat);
        if (bi->requires_grad) bi->ensure_grad()[ch] += static_cast<T>(sum_dy);
        if (xi->requires_grad) {
          auto xg = xi->ensure_grad();
          const T g = gi->values[ch];
          if (training) {
            const T k1 = static_cast<T>(sum_dy / static_cast<double>(m));
            const T k2 = static_cast<T>(sum_dy_xhat / static_cast<double>(m));
            for (std::size_t b = 0; b < n; ++b) {
              const T* dyc = dy + (b * c + ch) * plane;
              const T* xc = x + (b * c + ch) * plane;
              T* dxc = xg.data() + (b * c + ch) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                const T xhat = (xc[i] - mu) * is;
                dxc[i] += g * is * (dyc[i] - k1 - xhat * k2);
              }
            }
          } else {
            for (std::size_t b = 0; b < n; ++b) {
              const T* dyc = dy + (b * c + ch) * plane;
              T* dxc = xg.data() + (b * c + ch) * plane;
              for (std::size_t i = 0; i < plane; ++i) dxc[i] += g * is * dyc[i];
            }
          }
        }
      }
    });
  }
  return out;
}

/// Elementwise max(x, 0); the subgradient at 0 is taken as 0.
template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  const std::size_t n = input.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  out.set_requires_grad(input.requires_grad());
  if (tape && input.requires_grad()) {
    auto xi = input.impl();
    auto oi = out.impl();
    tape->record("relu", out, [=]() {
      if (!xi->requires_grad) return;
      auto xg = xi->ensure_grad();
      const T* dy = oi->grad.data();
      const T* xv = xi->values.data();
      for (std::size_t i = 0; i < xg.size(); ++i)
        if (xv[i] > T(0)) xg[i] += dy[i];
    });
  }
  return out;
}

/// Global average pool: [N,C,D,H,W] -> [N,C,1,1,1].
template <typename T>
Tensor<T> adaptive_avg_pool_unit(Tape<T>* tape, const Tensor<T>& input) {
  if (input.ndim() != 5)
    throw ShapeError("adaptive_avg_pool_unit expects a 5-d input");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3) * input.dim(4);
  if (plane == 0) throw GeometryError("adaptive_avg_pool_unit: empty spatial extent");
  Tensor<T> out({n, c, 1, 1, 1});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* x = input.data() + (b * c + ch) * plane;
      double acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += x[i];
      out.data()[b * c + ch] = static_cast<T>(acc / static_cast<double>(plane));
    }
  out.set_requires_grad(input.requires_grad());
  if (tape && input.requires_grad()) {
    auto xi = input.impl();
    auto oi = out.impl();
    tape->record("adaptive_avg_pool", out, [=]() {
      if (!xi->requires_grad) return;
      auto xg = xi->ensure_grad();
      const T* dy = oi->grad.data();
      const T scale = T(1) / static_cast<T>(plane);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
          T* dxc = xg.data() + (b * c + ch) * plane;
          const T g = dy[b * c + ch] * scale;
          for (std::size_t i = 0; i < plane; ++i) dxc[i] += g;
        }
    });
  }
  return out;
}

/// Affine map input [N,F] * weight[K,F]^T + bias[K] -> [N,K].
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  if (input.ndim() != 2 || weight.ndim() != 2 || bias.ndim() != 1)
    throw ShapeError("linear expects input [N,F], weight [K,F], bias [K]");
  const std::size_t n = input.dim(0), f = input.dim(1), k = weight.dim(0);
  if (weight.dim(1) != f)
    throw ShapeError("linear feature mismatch: input has " + std::to_string(f) +
                     " features, weight expects " + std::to_string(weight.dim(1)));
  if (bias.dim(0) != k) throw ShapeError("linear bias must have shape (K)");
  Tensor<T> out({n, k});
  detail::gemm_nt(input.data(), weight.data(), out.data(), n, f, k);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t j = 0; j < k; ++j) out.data()[b * k + j] += bias.values()[j];

  const bool rg =
      input.requires_grad() || weight.requires_grad() || bias.requires_grad();
  out.set_requires_grad(rg);
  if (tape && rg) {
    auto xi = input.impl();
    auto wi = weight.impl();
    auto bi = bias.impl();
    auto oi = out.impl();
    tape->record("linear", out, [=]() {
      const T* dy = oi->grad.data();
      if (xi->requires_grad)
        detail::gemm(dy, wi->values.data(), xi->ensure_grad().data(), n, k, f, true);
      if (wi->requires_grad)
        detail::gemm_tn(dy, xi->values.data(), wi->ensure_grad().data(), k, n, f, true);
      if (bi->requires_grad) {
        auto bg = bi->ensure_grad();
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t j = 0; j < k; ++j) bg[j] += dy[b * k + j];
      }
    });
  }
  return out;
}

/// Inverted dropout: training mode zeroes elements with probability p and
/// scales survivors by 1/(1-p); eval mode is the identity.
template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& input, double p, bool training,
                  Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout probability must be in [0,1), got " + std::to_string(p));
  if (!training || p == 0.0) return input;
  const std::size_t n = input.numel();
  Tensor<T> out(input.shape());
  auto mask = std::make_shared<std::vector<std::uint8_t>>(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  const T* x = input.data();
  T* y = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const bool keep = u(rng) >= p;
    (*mask)[i] = keep;
    y[i] = keep ? x[i] * scale : T(0);
  }
  out.set_requires_grad(input.requires_grad());
  if (tape && input.requires_grad()) {
    auto xi = input.impl();
    auto oi = out.impl();
    tape->record("dropout", out, [=]() {
      if (!xi->requires_grad) return;
      auto xg = xi->ensure_grad();
      const T* dy = oi->grad.data();
      for (std::size_t i = 0; i < xg.size(); ++i)
        if ((*mask)[i]) xg[i] += dy[i] * scale;
    });
  }
  return out;
}

/// Max-subtracted log softmax along the class axis of [N,C].
template <typename T>
Tensor<T> log_softmax(Tape<T>* tape, const Tensor<T>& input) {
  if (input.ndim() != 2) throw ShapeError("log_softmax expects a 2-d input [N,C]");
  const std::size_t n = input.dim(0), c = input.dim(1);
  if (c < 1) throw ShapeError("log_softmax needs at least one class");
  Tensor<T> out(input.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const T* x = input.data() + b * c;
    T* y = out.data() + b * c;
    T mx = x[0];
    for (std::size_t j = 0; j < c; ++j) {
      if (!std::isfinite(static_cast<double>(x[j])))
        throw NumericError("log_softmax: non-finite logit");
      mx = std::max(mx, x[j]);
    }
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(static_cast<double>(x[j] - mx));
    const T lse = static_cast<T>(std::log(s));
    for (std::size_t j = 0; j < c; ++j) y[j] = x[j] - mx - lse;
  }
  out.set_requires_grad(input.requires_grad());
  if (tape && input.requires_grad()) {
    auto xi = input.impl();
    auto oi = out.impl();
    tape->record("log_softmax", out, [=]() {
      if (!xi->requires_grad) return;
      auto xg = xi->ensure_grad();
      const T* dy = oi->grad.data();
      const T* y = oi->values.data();
      for (std::size_t b = 0; b < n; ++b) {
        double sum_dy = 0;
        for (std::size_t j = 0; j < c; ++j) sum_dy += dy[b * c + j];
        for (std::size_t j = 0; j < c; ++j)
          xg[b * c + j] += dy[b * c + j] -
                           static_cast<T>(std::exp(static_cast<double>(y[b * c + j])) * sum_dy);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b))
    throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(rg);
  if (tape && rg) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    tape->record("add", out, [=]() {
      const T* dy = oi->grad.data();
      if (ai->requires_grad) {
        auto ag = ai->ensure_grad();
        for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += dy[i];
      }
      if (bi->requires_grad) {
        auto bg = bi->ensure_grad();
        for (std::size_t i = 0; i < bg.size(); ++i) bg[i] += dy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b))
    throw ShapeError("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(rg);
  if (tape && rg) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    tape->record("mul", out, [=]() {
      const T* dy = oi->grad.data();
      if (ai->requires_grad) {
        auto ag = ai->ensure_grad();
        for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += dy[i] * bi->values[i];
      }
      if (bi->requires_grad) {
        auto bg = bi->ensure_grad();
        for (std::size_t i = 0; i < bg.size(); ++i) bg[i] += dy[i] * ai->values[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& input) {
  double acc = 0;
  for (T v : input.values()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  out.set_requires_grad(input.requires_grad());
  if (tape && input.requires_grad()) {
    auto xi = input.impl();
    auto oi = out.impl();
    tape->record("sum", out, [=]() {
      if (!xi->requires_grad) return;
      auto xg = xi->ensure_grad();
      const T g = oi->grad[0];
      for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(Tape<T>* tape, const Tensor<T>& input) {
  if (input.numel() == 0) throw ShapeError("mean of an empty tensor");
  double acc = 0;
  for (T v : input.values()) acc += v;
  Tensor<T> out =
      Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(input.numel())));
  out.set_requires_grad(input.requires_grad());
  if (tape && input.requires_grad()) {
    auto xi = input.impl();
    auto oi = out.impl();
    tape->record("mean", out, [=]() {
      if (!xi->requires_grad) return;
      auto xg = xi->ensure_grad();
      const T g = oi->grad[0] / static_cast<T>(xg.size());
      for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& input, Shape shape) {
  if (shape_numel(shape) != input.numel())
    throw ShapeError("reshape " + shape_str(input.shape()) + " -> " +
                     shape_str(shape) + " changes element count");
  Tensor<T> out = Tensor<T>::from(std::move(shape),
                                  {input.values().begin(), input.values().end()});
  out.set_requires_grad(input.requires_grad());
  if (tape && input.requires_grad()) {
    auto xi = input.impl();
    auto oi = out.impl();
    tape->record("reshape", out, [=]() {
      if (!xi->requires_grad) return;
      auto xg = xi->ensure_grad();
      const T* dy = oi->grad.data();
      for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += dy[i];
    });
  }
  return out;
}

}  // namespace ssn
