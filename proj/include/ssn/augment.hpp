#pragma once

#include <array>
#include <cmath>
#include <random>

#include "ssn/rng.hpp"
#include "ssn/tensor.hpp"
#include "ssn/volume.hpp"

namespace ssn {

struct AugmentConfig {
  double scale_lo = 0.9;
  double scale_hi = 1.2;
  double max_degrees = 10.0;
  double flip_prob = 0.25;
  bool enabled = true;
};

inline void validate_augment(const AugmentConfig& c) {
  if (!(c.scale_lo > 0.0 && c.scale_lo <= c.scale_hi))
    throw ConfigError("augment scale range must be positive and ordered");
  if (c.max_degrees < 0.0) throw ConfigError("augment rotation bound must be >= 0");
  if (c.flip_prob < 0.0 || c.flip_prob > 1.0)
    throw ConfigError("flip probability must lie in [0,1]");
}

namespace detail {

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Rotation by `rad` about coordinate axis `axis` of (z,y,x) space.
inline Mat3 rotation(int axis, double rad) {
  const double cs = std::cos(rad), sn = std::sin(rad);
  Mat3 m{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  const int i = (axis + 1) % 3, j = (axis + 2) % 3;
  m[i][i] = cs;
  m[i][j] = -sn;
  m[j][i] = sn;
  m[j][j] = cs;
  return m;
}

}  // namespace detail

/// One isotropic scale from U[scale_lo, scale_hi] and three Euler angles
/// from U[-max_degrees, +max_degrees], composed as R_z R_y R_x * s about the
/// volume center. Resampled with trilinear interpolation and zero fill;
/// extents never change. Scale > 1 zooms in (the sampled source region
/// shrinks by 1/s).
inline Volume random_affine(const Volume& vol, const AugmentConfig& cfg,
                            Rng& rng) {
  validate_augment(cfg);
  std::uniform_real_distribution<double> us(cfg.scale_lo, cfg.scale_hi);
  std::uniform_real_distribution<double> ua(-cfg.max_degrees, cfg.max_degrees);
  const double s = us(rng);
  const double rad = std::acos(-1.0) / 180.0;
  const double az = ua(rng) * rad;
  const double ay = ua(rng) * rad;
  const double ax = ua(rng) * rad;

  // Inverse map: output voxel -> source voxel is (R s)^-1 = R^T / s.
  detail::Mat3 rot = detail::mat_mul(
      detail::rotation(0, az),
      detail::mat_mul(detail::rotation(1, ay), detail::rotation(2, ax)));
  detail::Mat3 inv{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) inv[i][j] = rot[j][i] / s;

  const double cz = (static_cast<double>(vol.d) - 1.0) / 2.0;
  const double cy = (static_cast<double>(vol.h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(vol.w) - 1.0) / 2.0;

  Volume out(vol.d, vol.h, vol.w, vol.spacing);
  for (std::size_t z = 0; z < vol.d; ++z) {
    const double pz = static_cast<double>(z) - cz;
    for (std::size_t y = 0; y < vol.h; ++y) {
      const double py = static_cast<double>(y) - cy;
      for (std::size_t x = 0; x < vol.w; ++x) {
        const double px = static_cast<double>(x) - cx;
        const double sz = inv[0][0] * pz + inv[0][1] * py + inv[0][2] * px + cz;
        const double sy = inv[1][0] * pz + inv[1][1] * py + inv[1][2] * px + cy;
        const double sx = inv[2][0] * pz + inv[2][1] * py + inv[2][2] * px + cx;
        out.at(z, y, x) = static_cast<float>(trilinear(vol, sz, sy, sx, Fill::Zero));
      }
    }
  }
  return out;
}

/// Reverses the W axis with probability p. `flipped`, when given, records
/// whether the flip was applied.
inline Volume random_flip_lr(const Volume& vol, double p, Rng& rng,
                             bool* flipped = nullptr) {
  if (p < 0.0 || p > 1.0) throw ConfigError("flip probability must lie in [0,1]");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool do_flip = u(rng) < p;
  if (flipped) *flipped = do_flip;
  return do_flip ? flip_lr(vol) : vol;
}

}  // namespace ssn
