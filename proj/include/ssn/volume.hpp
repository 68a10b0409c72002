#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ssn/tensor.hpp"

namespace ssn {

/// A 3D scalar field. Axis order is (D,H,W), stored row-major with W
/// fastest; the W axis is the left-right axis for flip purposes. Spacing is
/// mm per voxel along (D,H,W).
struct Volume {
  std::size_t d = 0, h = 0, w = 0;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> data;

  Volume() = default;
  Volume(std::size_t d_, std::size_t h_, std::size_t w_,
         std::array<double, 3> spacing_ = {1.0, 1.0, 1.0})
      : d(d_), h(h_), w(w_), spacing(spacing_), data(d_ * h_ * w_, 0.0f) {}

  std::size_t numel() const { return d * h * w; }

  float& at(std::size_t z, std::size_t y, std::size_t x) {
    return data[(z * h + y) * w + x];
  }
  float at(std::size_t z, std::size_t y, std::size_t x) const {
    return data[(z * h + y) * w + x];
  }
};

enum class Fill { Clamp, Zero };

namespace detail {

inline float volume_fetch(const Volume& v, std::ptrdiff_t z, std::ptrdiff_t y,
                          std::ptrdiff_t x, Fill fill) {
  if (fill == Fill::Zero) {
    if (z < 0 || y < 0 || x < 0 || z >= static_cast<std::ptrdiff_t>(v.d) ||
        y >= static_cast<std::ptrdiff_t>(v.h) ||
        x >= static_cast<std::ptrdiff_t>(v.w))
      return 0.0f;
  } else {
    z = std::max<std::ptrdiff_t>(0, std::min<std::ptrdiff_t>(z, v.d - 1));
    y = std::max<std::ptrdiff_t>(0, std::min<std::ptrdiff_t>(y, v.h - 1));
    x = std::max<std::ptrdiff_t>(0, std::min<std::ptrdiff_t>(x, v.w - 1));
  }
  return v.at(static_cast<std::size_t>(z), static_cast<std::size_t>(y),
              static_cast<std::size_t>(x));
}

}  // namespace detail

/// Trilinear sample at fractional voxel coordinates.
inline double trilinear(const Volume& v, double z, double y, double x,
                        Fill fill) {
  const double fz = std::floor(z), fy = std::floor(y), fx = std::floor(x);
  const double tz = z - fz, ty = y - fy, tx = x - fx;
  const auto z0 = static_cast<std::ptrdiff_t>(fz);
  const auto y0 = static_cast<std::ptrdiff_t>(fy);
  const auto x0 = static_cast<std::ptrdiff_t>(fx);
  double acc = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double wgt = (dz ? tz : 1.0 - tz) * (dy ? ty : 1.0 - ty) *
                           (dx ? tx : 1.0 - tx);
        if (wgt == 0.0) continue;
        acc += wgt * detail::volume_fetch(v, z0 + dz, y0 + dy, x0 + dx, fill);
      }
  return acc;
}

inline Volume flip_lr(const Volume& v) {
  Volume out(v.d, v.h, v.w, v.spacing);
  for (std::size_t z = 0; z < v.d; ++z)
    for (std::size_t y = 0; y < v.h; ++y)
      for (std::size_t x = 0; x < v.w; ++x)
        out.at(z, y, x) = v.at(z, y, v.w - 1 - x);
  return out;
}

/// Volume as a single-channel tensor of shape (1, D, H, W).
template <typename T>
Tensor<T> volume_to_tensor(const Volume& v) {
  Tensor<T> t({1, v.d, v.h, v.w});
  for (std::size_t i = 0; i < v.data.size(); ++i)
    t.data()[i] = static_cast<T>(v.data[i]);
  return t;
}

}  // namespace ssn
