#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssn/layers.hpp"
#include "ssn/ops.hpp"
#include "ssn/rng.hpp"
#include "ssn/tensor.hpp"

namespace ssn {

enum class ArchitectureKind { ResNet3D, ResNet2Plus1D, ResNetMixedConv };

inline const char* arch_name(ArchitectureKind k) {
  switch (k) {
    case ArchitectureKind::ResNet3D: return "resnet3d";
    case ArchitectureKind::ResNet2Plus1D: return "r2plus1d";
    case ArchitectureKind::ResNetMixedConv: return "mixedconv";
  }
  return "?";
}

inline ArchitectureKind parse_arch(std::string_view s) {
  if (s == "resnet3d") return ArchitectureKind::ResNet3D;
  if (s == "r2plus1d" || s == "resnet2plus1d")
    return ArchitectureKind::ResNet2Plus1D;
  if (s == "mixedconv" || s == "resnetmixedconv")
    return ArchitectureKind::ResNetMixedConv;
  throw ConfigError("unknown architecture '" + std::string(s) +
                    "' (valid: resnet3d, r2plus1d, mixedconv)");
}

struct ModelConfig {
  std::size_t num_classes = 3;
  std::size_t in_channels = 1;
  double dropout_p = 0.3;
};

inline void validate_config(const ModelConfig& c) {
  if (c.num_classes < 2)
    throw ConfigError("num_classes must be >= 2, got " +
                      std::to_string(c.num_classes));
  if (c.in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (c.dropout_p < 0.0 || c.dropout_p >= 1.0)
    throw ConfigError("dropout_p must be in [0,1), got " +
                      std::to_string(c.dropout_p));
}

namespace detail {

inline StemKind default_stem(ArchitectureKind kind) {
  // The mixed model keeps the plain 3D stem; both ResNet3D and the (2+1)D
  // model use the factored stem (that stem is what the published per-model
  // parameter totals correspond to, and the totals here are pinned to them).
  switch (kind) {
    case ArchitectureKind::ResNetMixedConv: return StemKind::Stem3D;
    case ArchitectureKind::ResNet3D:
    case ArchitectureKind::ResNet2Plus1D: return StemKind::Stem2Plus1D;
  }
  throw ConfigError("unknown architecture kind");
}

inline ConvMode stage_mode(ArchitectureKind kind, std::size_t stage) {
  switch (kind) {
    case ArchitectureKind::ResNet3D: return ConvMode::Full3D;
    case ArchitectureKind::ResNet2Plus1D: return ConvMode::Factored2Plus1D;
    case ArchitectureKind::ResNetMixedConv:
      return stage == 1 ? ConvMode::Full3D : ConvMode::InPlane2D;
  }
  throw ConfigError("unknown architecture kind");
}

}  // namespace detail

/// Minimum input geometry accepted by Model::forward. Stride-2 stages need
/// enough extent on every axis to keep all feature maps non-empty; anything
/// smaller is rejected up front so failures are deterministic and named.
inline constexpr std::size_t kMinDepth = 8;
inline constexpr std::size_t kMinHeightWidth = 16;

/// One of the three residual classifiers: stem, four stages of two basic
/// blocks (widths 64, 128, 256, 512; stages 2-4 downsample), then global
/// average pool, dropout, and a linear head.
template <typename T>
class Model {
 public:
  Model(ArchitectureKind kind, const ModelConfig& config, Rng& rng,
        std::optional<StemKind> stem_override = std::nullopt)
      : kind_(kind),
        config_((validate_config(config), config)),
        stem_kind_(stem_override.value_or(detail::default_stem(kind))),
        stem_(StemSpec{stem_kind_, config.in_channels}, rng),
        blocks_(make_blocks(kind, rng)),
        fc_(512, config.num_classes, rng) {}

  /// Input (N, in_channels, D, H, W) -> logits (N, num_classes).
  /// `dropout_rng` is only consulted in training mode with dropout_p > 0.
  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool training,
                    Rng* dropout_rng = nullptr) {
    if (x.ndim() != 5)
      throw ShapeError("model forward expects (N,C,D,H,W), got " +
                       shape_str(x.shape()));
    if (x.dim(1) != config_.in_channels)
      throw ShapeError("model expects " + std::to_string(config_.in_channels) +
                       " input channels, got " + std::to_string(x.dim(1)));
    if (x.dim(2) < kMinDepth || x.dim(3) < kMinHeightWidth ||
        x.dim(4) < kMinHeightWidth)
      throw GeometryError(
          "input volume " + shape_str(x.shape()) + " too small; need depth >= " +
          std::to_string(kMinDepth) + " and height/width >= " +
          std::to_string(kMinHeightWidth) + " to survive downsampling");

    Tensor<T> h = stem_.forward(tape, x, training);
    for (auto& block : blocks_) h = block.forward(tape, h, training);
    h = adaptive_avg_pool_unit(tape, h);
    h = reshape(tape, h, {h.dim(0), h.dim(1)});
    if (training && config_.dropout_p > 0.0) {
      if (!dropout_rng)
        throw ConfigError("training-mode forward with dropout needs an rng");
      h = dropout(tape, h, config_.dropout_p, true, *dropout_rng);
    }
    return fc_.forward(tape, h);
  }

  std::vector<NamedTensor<T>> named_parameters() const {
    std::vector<NamedTensor<T>> params, buffers;
    collect(params, buffers);
    return params;
  }

  std::vector<NamedTensor<T>> named_buffers() const {
    std::vector<NamedTensor<T>> params, buffers;
    collect(params, buffers);
    return buffers;
  }

  std::size_t parameter_count() const {
    std::size_t n = stem_.parameter_count() + fc_.parameter_count();
    for (const auto& b : blocks_) n += b.parameter_count();
    return n;
  }

  std::vector<std::pair<std::string, std::size_t>> parameter_breakdown() const {
    std::vector<std::pair<std::string, std::size_t>> rows;
    rows.emplace_back("stem", stem_.parameter_count());
    for (std::size_t s = 0; s < 4; ++s)
      rows.emplace_back("stage" + std::to_string(s + 1),
                        blocks_[2 * s].parameter_count() +
                            blocks_[2 * s + 1].parameter_count());
    rows.emplace_back("fc", fc_.parameter_count());
    return rows;
  }

  void zero_grad() {
    for (auto& p : named_parameters()) p.tensor.zero_grad();
  }

  ArchitectureKind kind() const { return kind_; }
  const ModelConfig& config() const { return config_; }
  StemKind stem_kind() const { return stem_kind_; }

 private:
  static std::vector<ResidualBlock<T>> make_blocks(ArchitectureKind kind,
                                                   Rng& rng) {
    const std::size_t widths[5] = {64, 64, 128, 256, 512};
    std::vector<ResidualBlock<T>> blocks;
    blocks.reserve(8);
    for (std::size_t s = 1; s <= 4; ++s) {
      const ConvMode mode = detail::stage_mode(kind, s);
      blocks.emplace_back(BlockSpec{mode, widths[s - 1], widths[s], s > 1}, rng);
      blocks.emplace_back(BlockSpec{mode, widths[s], widths[s], false}, rng);
    }
    return blocks;
  }

  void collect(std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) const {
    stem_.collect("stem", params, buffers);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string prefix = "stage" + std::to_string(i / 2 + 1) + ".block" +
                                 std::to_string(i % 2 + 1);
      blocks_[i].collect(prefix, params, buffers);
    }
    fc_.collect("fc", params, buffers);
  }

  ArchitectureKind kind_;
  ModelConfig config_;
  StemKind stem_kind_;
  Stem<T> stem_;
  std::vector<ResidualBlock<T>> blocks_;
  LinearLayer<T> fc_;
};

template <typename T>
Model<T> build_model(ArchitectureKind kind, const ModelConfig& config, Rng& rng,
                     std::optional<StemKind> stem_override = std::nullopt) {
  return Model<T>(kind, config, rng, stem_override);
}

}  // namespace ssn
