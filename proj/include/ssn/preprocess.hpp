#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ssn/tensor.hpp"
#include "ssn/volume.hpp"

namespace ssn {

/// q-th percentile of sorted values via linear interpolation between order
/// statistics: rank = q/100 * (n-1).
inline double percentile_sorted(const std::vector<float>& sorted, double q) {
  const std::size_t n = sorted.size();
  if (n == 0) throw DataError("percentile of an empty volume");
  const double rank = q / 100.0 * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = rank - static_cast<double>(lo);
  return static_cast<double>(sorted[lo]) +
         frac * (static_cast<double>(sorted[hi]) - static_cast<double>(sorted[lo]));
}

/// Clips to the [lo, hi] percentile window and maps it affinely onto [0,1].
inline Volume percentile_normalize(const Volume& vol, double lo = 0.5,
                                   double hi = 99.5) {
  if (!(lo >= 0.0 && hi <= 100.0 && lo < hi))
    throw ConfigError("percentile bounds must satisfy 0 <= lo < hi <= 100");
  std::vector<float> sorted = vol.data;
  std::sort(sorted.begin(), sorted.end());
  const double plo = percentile_sorted(sorted, lo);
  const double phi = percentile_sorted(sorted, hi);
  if (plo == phi)
    throw DataError("degenerate intensity range: the " + std::to_string(lo) +
                    " and " + std::to_string(hi) + " percentiles coincide");
  Volume out(vol.d, vol.h, vol.w, vol.spacing);
  const double scale = 1.0 / (phi - plo);
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    const double v = std::clamp(static_cast<double>(vol.data[i]), plo, phi);
    out.data[i] = static_cast<float>((v - plo) * scale);
  }
  return out;
}

/// Resamples onto an isotropic grid. New extent per axis is
/// round(old_extent * old_spacing / target); voxel centers are aligned to
/// the volume's physical center, interpolation is trilinear with edge clamp.
inline Volume resample_isotropic(const Volume& vol, double target_mm = 2.0) {
  if (target_mm <= 0) throw ConfigError("target spacing must be positive");
  std::size_t ext[3];
  const std::size_t old_ext[3] = {vol.d, vol.h, vol.w};
  for (int a = 0; a < 3; ++a) {
    const double n =
        std::round(static_cast<double>(old_ext[a]) * vol.spacing[a] / target_mm);
    if (n < 1.0)
      throw GeometryError("resampling to " + std::to_string(target_mm) +
                          " mm collapses axis " + std::to_string(a) +
                          " to zero extent");
    ext[a] = static_cast<std::size_t>(n);
  }
  Volume out(ext[0], ext[1], ext[2], {target_mm, target_mm, target_mm});
  double center_in[3], center_out[3];
  for (int a = 0; a < 3; ++a) {
    center_in[a] = (static_cast<double>(old_ext[a]) - 1.0) / 2.0;
    center_out[a] = (static_cast<double>(ext[a]) - 1.0) / 2.0;
  }
  for (std::size_t z = 0; z < out.d; ++z) {
    const double sz =
        (static_cast<double>(z) - center_out[0]) * target_mm / vol.spacing[0] +
        center_in[0];
    for (std::size_t y = 0; y < out.h; ++y) {
      const double sy =
          (static_cast<double>(y) - center_out[1]) * target_mm / vol.spacing[1] +
          center_in[1];
      for (std::size_t x = 0; x < out.w; ++x) {
        const double sx =
            (static_cast<double>(x) - center_out[2]) * target_mm / vol.spacing[2] +
            center_in[2];
        out.at(z, y, x) = static_cast<float>(trilinear(vol, sz, sy, sx, Fill::Clamp));
      }
    }
  }
  return out;
}

}  // namespace ssn
