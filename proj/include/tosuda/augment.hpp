#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tosuda/ops.hpp"
#include "tosuda/tensor.hpp"

namespace tosuda {

/// p -> arccos(cos(p*pi))/pi: folds the real line into [0,1] with period 2
/// and even symmetry; identity on [0,1]. The backward is the analytic
/// sign(sin(p*pi)), 0 at integer p, because differentiating through the
/// arccos/cos pair is unstable near the fold points.
Tensor triangle_wave(const Tensor& p);

/// Two hidden relu layers of configurable width; the output layer is
/// zero-initialized so a fresh network is the constant-zero map.
class Mlp {
 public:
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);

  Tensor forward(const Tensor& x) const;
  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return out_; }

  std::vector<NamedTensor> parameters(const std::string& prefix) const;

 private:
  std::size_t in_, out_;
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

struct AugmentConfig {
  std::size_t channels = 3;
  std::size_t classes = 5;
  std::size_t noise_dim = 16;
  std::size_t hidden = 128;
  double color_gain = 0.5;  // alpha in [1 - g, 1 + g], beta in [-g, g]
  double geo_gain = 0.25;   // |A_ij| <= g
};

/// Produces per-channel color scale/shift from (pooled image, noise, class
/// context). The image enters as an 8x8 average-pooled summary.
class ColorNet {
 public:
  ColorNet(const AugmentConfig& cfg, Rng& rng);
  const AugmentConfig& config() const { return cfg_; }
  const Mlp& mlp() const { return net_; }
  std::vector<NamedTensor> parameters() const { return net_.parameters("aum.color"); }

 private:
  friend std::pair<Tensor, Tensor> color_params(const Tensor&, const Tensor&,
                                                const Tensor&, const ColorNet&);
  AugmentConfig cfg_;
  Mlp net_;
};

/// Produces the residual 2x3 affine matrix from (noise, class context).
class GeoNet {
 public:
  GeoNet(const AugmentConfig& cfg, Rng& rng);
  const AugmentConfig& config() const { return cfg_; }
  std::vector<NamedTensor> parameters() const { return net_.parameters("aum.geo"); }

 private:
  friend Tensor geometric_params(const Tensor&, const Tensor&, const GeoNet&);
  AugmentConfig cfg_;
  Mlp net_;
};

/// The augmentation module: color transform network plus geometric
/// transform network, sharing one noise draw per sample per call.
struct AugmentNets {
  AugmentNets(const AugmentConfig& cfg, Rng& rng);
  AugmentConfig config() const { return color.config(); }
  std::vector<NamedTensor> parameters() const;
  ColorNet color;
  GeoNet geo;
};

/// Per-sample transform parameters actually applied to a batch.
struct AugmentationParams {
  Tensor alpha;   // [B x C] per-channel scale
  Tensor beta;    // [B x C] per-channel shift
  Tensor affine;  // [B x 2 x 3] residual affine
};

/// (alpha, beta) with alpha = 1 + g tanh(raw), beta = g tanh(raw).
/// ContractError if c rows are not one-hot.
std::pair<Tensor, Tensor> color_params(const Tensor& x, const Tensor& z,
                                       const Tensor& c, const ColorNet& net);

/// TriangleWave(alpha (*) x + beta) with per-channel broadcast; maps
/// [0,1] inputs to [0,1].
Tensor apply_color(const Tensor& x, const Tensor& alpha, const Tensor& beta);

/// A = g tanh(raw) reshaped to [B x 2 x 3].
Tensor geometric_params(const Tensor& z, const Tensor& c, const GeoNet& net);

/// Sampling grid for the residual warp: source = (A + I)(u, v, 1)^T in
/// align-corners normalized coordinates. A = 0 gives the identity grid.
Tensor affine_grid(const Tensor& A, std::size_t H, std::size_t W);

/// Warps x by (A + I) with bilinear sampling and zero padding.
Tensor apply_affine(const Tensor& x, const Tensor& A);

/// Full augmentation, color first then geometry.
std::pair<Tensor, AugmentationParams> augment(const Tensor& x,
                                              const Tensor& y_onehot,
                                              const Tensor& z,
                                              const AugmentNets& nets);

}  // namespace tosuda
