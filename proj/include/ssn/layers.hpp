#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ssn/ops.hpp"
#include "ssn/rng.hpp"
#include "ssn/tensor.hpp"

namespace ssn {

enum class ConvMode { Full3D, InPlane2D, SliceWise1D, Factored2Plus1D };

enum class StemKind { Stem3D, Stem2Plus1D };

inline const char* stem_kind_name(StemKind k) {
  return k == StemKind::Stem3D ? "stem3d" : "stem2plus1d";
}

inline StemKind parse_stem_kind(std::string_view s) {
  if (s == "stem3d") return StemKind::Stem3D;
  if (s == "stem2plus1d") return StemKind::Stem2Plus1D;
  throw ConfigError("unknown stem kind '" + std::string(s) +
                    "' (valid: stem3d, stem2plus1d)");
}

inline const char* conv_mode_name(ConvMode m) {
  switch (m) {
    case ConvMode::Full3D: return "full3d";
    case ConvMode::InPlane2D: return "inplane2d";
    case ConvMode::SliceWise1D: return "slicewise1d";
    case ConvMode::Factored2Plus1D: return "factored2plus1d";
  }
  return "?";
}

/// Hidden width of a factored (2+1)D convolution, chosen so the factored
/// pair's parameter budget stays at or under the full 3x3x3 budget:
/// floor(in*out*27 / (in*9 + out*3)).
inline std::size_t midplanes(std::size_t in_channels, std::size_t out_channels) {
  if (in_channels == 0 || out_channels == 0)
    throw ConfigError("midplanes requires positive channel counts");
  return (in_channels * out_channels * 27) / (in_channels * 9 + out_channels * 3);
}

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Bias-free 3D convolution layer (a batch-norm always follows).
/// Weights start from N(0, 2/fan_out) with fan_out = Cout * kernel volume.
template <typename T>
class Conv3dLayer {
 public:
  Conv3dLayer(std::size_t in_channels, std::size_t out_channels,
              std::array<std::size_t, 3> kernel, std::array<std::size_t, 3> stride,
              std::array<std::size_t, 3> padding, Rng& rng)
      : weight_({out_channels, in_channels, kernel[0], kernel[1], kernel[2]}) {
    params_.kernel = kernel;
    params_.stride = stride;
    params_.padding = padding;
    params_.in_channels = in_channels;
    params_.out_channels = out_channels;
    const double fan_out =
        static_cast<double>(out_channels * kernel[0] * kernel[1] * kernel[2]);
    fill_normal(weight_, rng, T(0), static_cast<T>(std::sqrt(2.0 / fan_out)));
    weight_.set_requires_grad(true);
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    return conv3d<T>(tape, x, weight_, nullptr, params_);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) const {
    (void)buffers;
    params.push_back({prefix + ".weight", weight_});
  }

  std::size_t parameter_count() const { return weight_.numel(); }

  const Conv3dParams& params() const { return params_; }
  Tensor<T>& weight() { return weight_; }

 private:
  Conv3dParams params_;
  Tensor<T> weight_;
};

template <typename T>
class BatchNorm3dLayer {
 public:
  explicit BatchNorm3dLayer(std::size_t channels)
      : gamma_(Tensor<T>::full({channels}, T(1))),
        beta_(Tensor<T>::zeros({channels})),
        running_mean_(Tensor<T>::zeros({channels})),
        running_var_(Tensor<T>::full({channels}, T(1))) {
    gamma_.set_requires_grad(true);
    beta_.set_requires_grad(true);
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool training) {
    return batchnorm3d(tape, x, gamma_, beta_, running_mean_, running_var_,
                       momentum_, eps_, training);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) const {
    params.push_back({prefix + ".weight", gamma_});
    params.push_back({prefix + ".bias", beta_});
    buffers.push_back({prefix + ".running_mean", running_mean_});
    buffers.push_back({prefix + ".running_var", running_var_});
  }

  std::size_t parameter_count() const { return gamma_.numel() + beta_.numel(); }

 private:
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
  T momentum_ = T(0.1);
  T eps_ = T(1e-5);
};

/// (2+1)D factor pair: in-plane (1,k,k) conv -> BN -> ReLU -> slice (k',1,1)
/// conv, with an explicit hidden width between them.
template <typename T>
class FactoredConv3d {
 public:
  FactoredConv3d(std::size_t in_channels, std::size_t out_channels,
                 std::size_t mid_channels, std::size_t plane_kernel,
                 std::size_t slice_kernel, std::array<std::size_t, 3> plane_stride,
                 std::array<std::size_t, 3> slice_stride, Rng& rng)
      : plane_(in_channels, mid_channels, {1, plane_kernel, plane_kernel},
               plane_stride, {0, (plane_kernel - 1) / 2, (plane_kernel - 1) / 2},
               rng),
        bn_(mid_channels),
        slice_(mid_channels, out_channels, {slice_kernel, 1, 1}, slice_stride,
               {(slice_kernel - 1) / 2, 0, 0}, rng) {}

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool training) {
    Tensor<T> h = plane_.forward(tape, x);
    h = bn_.forward(tape, h, training);
    h = relu(tape, h);
    return slice_.forward(tape, h);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) const {
    plane_.collect(prefix + ".plane", params, buffers);
    bn_.collect(prefix + ".bn", params, buffers);
    slice_.collect(prefix + ".slice", params, buffers);
  }

  std::size_t parameter_count() const {
    return plane_.parameter_count() + bn_.parameter_count() +
           slice_.parameter_count();
  }

 private:
  Conv3dLayer<T> plane_;
  BatchNorm3dLayer<T> bn_;
  Conv3dLayer<T> slice_;
};

struct BlockSpec {
  ConvMode mode = ConvMode::Full3D;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  bool downsample = false;
};

namespace detail {

inline std::array<std::size_t, 3> block_kernel(ConvMode mode) {
  switch (mode) {
    case ConvMode::Full3D: return {3, 3, 3};
    case ConvMode::InPlane2D: return {1, 3, 3};
    case ConvMode::SliceWise1D: return {3, 1, 1};
    case ConvMode::Factored2Plus1D: return {3, 3, 3};
  }
  throw ConfigError("unknown conv mode");
}

// Stride-2 only touches the axes the mode convolves over, so in-plane blocks
// never thin out the slice axis.
inline std::array<std::size_t, 3> block_stride(ConvMode mode, bool downsample) {
  if (!downsample) return {1, 1, 1};
  switch (mode) {
    case ConvMode::Full3D: return {2, 2, 2};
    case ConvMode::InPlane2D: return {1, 2, 2};
    case ConvMode::SliceWise1D: return {2, 1, 1};
    case ConvMode::Factored2Plus1D: return {2, 2, 2};
  }
  throw ConfigError("unknown conv mode");
}

}  // namespace detail

/// Basic residual block: conv -> BN -> ReLU -> conv -> BN, plus a shortcut
/// (identity, or a strided 1x1x1 conv + BN projection), then add and ReLU.
/// In factored mode each "conv" is the (2+1)D pair; both pairs share one
/// hidden width computed from the block's (in, out) channels.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock(const BlockSpec& spec, Rng& rng)
      : mode_(spec.mode),
        bn1_(spec.out_channels ? spec.out_channels : 1),
        bn2_(spec.out_channels ? spec.out_channels : 1) {
    if (spec.in_channels == 0 || spec.out_channels == 0)
      throw ConfigError("residual block needs positive channel counts");
    const auto stride = detail::block_stride(spec.mode, spec.downsample);
    if (spec.mode == ConvMode::Factored2Plus1D) {
      const std::size_t mid = midplanes(spec.in_channels, spec.out_channels);
      fconv1_.emplace(spec.in_channels, spec.out_channels, mid, 3, 3,
                      std::array<std::size_t, 3>{1, stride[1], stride[2]},
                      std::array<std::size_t, 3>{stride[0], 1, 1}, rng);
      fconv2_.emplace(spec.out_channels, spec.out_channels, mid, 3, 3,
                      std::array<std::size_t, 3>{1, 1, 1},
                      std::array<std::size_t, 3>{1, 1, 1}, rng);
    } else {
      const auto kernel = detail::block_kernel(spec.mode);
      const std::array<std::size_t, 3> pad{(kernel[0] - 1) / 2, (kernel[1] - 1) / 2,
                                           (kernel[2] - 1) / 2};
      conv1_.emplace(spec.in_channels, spec.out_channels, kernel, stride, pad, rng);
      conv2_.emplace(spec.out_channels, spec.out_channels, kernel,
                     std::array<std::size_t, 3>{1, 1, 1}, pad, rng);
    }
    if (spec.downsample || spec.in_channels != spec.out_channels) {
      sc_conv_.emplace(spec.in_channels, spec.out_channels,
                       std::array<std::size_t, 3>{1, 1, 1}, stride,
                       std::array<std::size_t, 3>{0, 0, 0}, rng);
      sc_bn_.emplace(spec.out_channels);
    }
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool training) {
    Tensor<T> h = fconv1_ ? fconv1_->forward(tape, x, training)
                          : conv1_->forward(tape, x);
    h = bn1_.forward(tape, h, training);
    h = relu(tape, h);
    h = fconv2_ ? fconv2_->forward(tape, h, training) : conv2_->forward(tape, h);
    h = bn2_.forward(tape, h, training);
    Tensor<T> sc = x;
    if (sc_conv_) {
      sc = sc_conv_->forward(tape, x);
      sc = sc_bn_->forward(tape, sc, training);
    }
    return relu(tape, add(tape, h, sc));
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) const {
    if (fconv1_) {
      fconv1_->collect(prefix + ".conv1", params, buffers);
    } else {
      conv1_->collect(prefix + ".conv1", params, buffers);
    }
    bn1_.collect(prefix + ".bn1", params, buffers);
    if (fconv2_) {
      fconv2_->collect(prefix + ".conv2", params, buffers);
    } else {
      conv2_->collect(prefix + ".conv2", params, buffers);
    }
    bn2_.collect(prefix + ".bn2", params, buffers);
    if (sc_conv_) {
      sc_conv_->collect(prefix + ".shortcut.conv", params, buffers);
      sc_bn_->collect(prefix + ".shortcut.bn", params, buffers);
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = bn1_.parameter_count() + bn2_.parameter_count();
    n += fconv1_ ? fconv1_->parameter_count() : conv1_->parameter_count();
    n += fconv2_ ? fconv2_->parameter_count() : conv2_->parameter_count();
    if (sc_conv_) n += sc_conv_->parameter_count() + sc_bn_->parameter_count();
    return n;
  }

  ConvMode mode() const { return mode_; }

 private:
  ConvMode mode_;
  std::optional<Conv3dLayer<T>> conv1_, conv2_;
  std::optional<FactoredConv3d<T>> fconv1_, fconv2_;
  BatchNorm3dLayer<T> bn1_, bn2_;
  std::optional<Conv3dLayer<T>> sc_conv_;
  std::optional<BatchNorm3dLayer<T>> sc_bn_;
};

struct StemSpec {
  StemKind kind = StemKind::Stem3D;
  std::size_t in_channels = 1;
};

/// Network entry group. Stem3D: (3,7,7) conv stride (1,2,2) to 64 channels,
/// BN, ReLU. Stem2Plus1D: (1,7,7) conv stride (1,2,2) to 45 channels, BN,
/// ReLU, then (3,1,1) conv to 64 channels, BN, ReLU.
template <typename T>
class Stem {
 public:
  Stem(const StemSpec& spec, Rng& rng) : kind_(spec.kind) {
    if (spec.in_channels == 0)
      throw ConfigError("stem needs a positive input channel count");
    if (spec.kind == StemKind::Stem3D) {
      conv_.emplace(spec.in_channels, std::size_t(64),
                    std::array<std::size_t, 3>{3, 7, 7},
                    std::array<std::size_t, 3>{1, 2, 2},
                    std::array<std::size_t, 3>{1, 3, 3}, rng);
      bn_.emplace(64);
    } else {
      conv_.emplace(spec.in_channels, std::size_t(45),
                    std::array<std::size_t, 3>{1, 7, 7},
                    std::array<std::size_t, 3>{1, 2, 2},
                    std::array<std::size_t, 3>{0, 3, 3}, rng);
      bn_.emplace(45);
      conv2_.emplace(std::size_t(45), std::size_t(64),
                     std::array<std::size_t, 3>{3, 1, 1},
                     std::array<std::size_t, 3>{1, 1, 1},
                     std::array<std::size_t, 3>{1, 0, 0}, rng);
      bn2_.emplace(64);
    }
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool training) {
    Tensor<T> h = conv_->forward(tape, x);
    h = bn_->forward(tape, h, training);
    h = relu(tape, h);
    if (conv2_) {
      h = conv2_->forward(tape, h);
      h = bn2_->forward(tape, h, training);
      h = relu(tape, h);
    }
    return h;
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) const {
    if (kind_ == StemKind::Stem3D) {
      conv_->collect(prefix + ".conv", params, buffers);
      bn_->collect(prefix + ".bn", params, buffers);
    } else {
      conv_->collect(prefix + ".conv1", params, buffers);
      bn_->collect(prefix + ".bn1", params, buffers);
      conv2_->collect(prefix + ".conv2", params, buffers);
      bn2_->collect(prefix + ".bn2", params, buffers);
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = conv_->parameter_count() + bn_->parameter_count();
    if (conv2_) n += conv2_->parameter_count() + bn2_->parameter_count();
    return n;
  }

  StemKind kind() const { return kind_; }

 private:
  StemKind kind_;
  std::optional<Conv3dLayer<T>> conv_;
  std::optional<BatchNorm3dLayer<T>> bn_;
  std::optional<Conv3dLayer<T>> conv2_;
  std::optional<BatchNorm3dLayer<T>> bn2_;
};

/// Fully connected head layer with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
/// initialization for both weight and bias.
template <typename T>
class LinearLayer {
 public:
  LinearLayer(std::size_t in_features, std::size_t out_features, Rng& rng)
      : weight_({out_features, in_features}), bias_({out_features}) {
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in_features)));
    fill_uniform(weight_, rng, -bound, bound);
    fill_uniform(bias_, rng, -bound, bound);
    weight_.set_requires_grad(true);
    bias_.set_requires_grad(true);
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    return linear(tape, x, weight_, bias_);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) const {
    (void)buffers;
    params.push_back({prefix + ".weight", weight_});
    params.push_back({prefix + ".bias", bias_});
  }

  std::size_t parameter_count() const { return weight_.numel() + bias_.numel(); }

 private:
  Tensor<T> weight_, bias_;
};

}  // namespace ssn
