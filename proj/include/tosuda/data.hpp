#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tosuda/tensor.hpp"

namespace tosuda {

struct LabeledImageSet {
  Tensor images;            // [M x C x 32 x 32] in [0,1]
  std::vector<int> labels;  // in [0, classes)
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  /// New set holding rows [begin, end).
  LabeledImageSet slice(std::size_t begin, std::size_t end) const;
};

/// Fixed source-to-target map of the synthetic benchmark: per-channel
/// color scale/shift followed by a rotation of the sampling grid. The
/// map stays inside the augmentation hypothesis class (color-affine plus
/// rotation), so adaptation is learnable in principle.
struct DomainStyle {
  std::array<double, 3> color_scale{0.9, 0.4, 0.2};
  std::array<double, 3> color_shift{0.05, 0.10, 0.30};
  double rotation_deg = 25.0;
};

/// Applies the style: v' = clamp(scale*v + shift, 0, 1) per channel, then
/// bilinear-resamples through the rotated grid (zero padding).
LabeledImageSet apply_domain_style(const LabeledImageSet& set,
                                   const DomainStyle& style);

/// Synthetic two-domain glyph benchmark: five glyph classes (filled
/// square, disk, triangle, cross, ring) rasterized white-on-black on
/// 3x32x32 canvases with +/-2 px translation and +/-10% scale jitter.
/// The target set is the source set pushed through `style`, sample for
/// sample, so the gap is exactly one DomainStyle map.
std::pair<LabeledImageSet, LabeledImageSet> gen_synthetic_pair(
    std::uint64_t seed, int per_class, const DomainStyle& style = {});

/// Reads the IDX image/label container pair (big-endian magics
/// 0x00000803 / 0x00000801), scales pixels to [0,1], resizes to 32x32
/// bilinearly, and replicates grayscale to `channels`.
LabeledImageSet load_idx(const std::string& images_path,
                         const std::string& labels_path,
                         std::size_t channels);

struct Batch {
  Tensor images;   // [b x C x 32 x 32]
  Tensor onehot;   // [b x K]
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

/// Per-epoch shuffled index partition; the final short batch is kept.
/// The permutation depends only on (seed, epoch).
std::vector<std::vector<std::uint32_t>> batch_indices(std::size_t count,
                                                      std::size_t batch_size,
                                                      std::uint64_t seed,
                                                      std::size_t epoch);

Batch make_batch(const LabeledImageSet& set, std::span<const std::uint32_t> idx);

/// Materialized convenience wrapper over batch_indices + make_batch.
std::vector<Batch> batches(const LabeledImageSet& set, std::size_t batch_size,
                           std::uint64_t seed, std::size_t epoch);

Tensor onehot(std::span<const int> labels, std::size_t classes);

}  // namespace tosuda
