#pragma once

#include <array>
#include <vector>

#include "tosuda/ops.hpp"
#include "tosuda/tensor.hpp"

namespace tosuda {

/// Frozen feature extractor feeding the style loss: four 3x3 convolution
/// blocks with relu taps at channel widths 16/32/64/128, the last three
/// at stride 2. Weights are seeded He-normal with zero biases and never
/// change during training; gradients flow to the input only.
class StyleExtractor {
 public:
  static constexpr std::size_t kTaps = 4;

  StyleExtractor(std::size_t channels, Rng& rng);

  /// Feature maps at the four taps, shallowest first.
  std::array<Tensor, kTaps> features(const Tensor& x) const;

  std::size_t channels() const { return channels_; }
  /// Frozen weights (requires_grad is off); exposed for checkpointing.
  std::vector<NamedTensor> parameters() const;
  /// Replaces the weights with externally trained ones of the same shapes.
  void load_parameters(std::span<const NamedTensor> params);

 private:
  std::size_t channels_;
  std::array<Tensor, kTaps> conv_;
};

/// Per-tap Gram matrices of one image or batch element.
using GramSet = std::array<Tensor, StyleExtractor::kTaps>;

std::array<Tensor, StyleExtractor::kTaps> extract_features(
    const Tensor& x, const StyleExtractor& extractor);

/// G = F F^T / (C*H*W) for h reshaped to [C x H*W]. Symmetric PSD.
Tensor gram_matrix(const Tensor& h);

/// Batched per-sample Gram: [B x C x H x W] -> [B x C x C].
Tensor gram_nchw(const Tensor& x);

/// Gram matrices of the tapped features of a single image [1 x C x H x W].
GramSet gram_set(const Tensor& x, const StyleExtractor& extractor);

/// Mean over the batch of the summed squared Frobenius distances between
/// the Gram matrices of each augmented sample and those of the single
/// target image. Differentiable w.r.t. the batch only.
Tensor style_loss(const Tensor& batch, const Tensor& target,
                  const StyleExtractor& extractor);

}  // namespace tosuda
