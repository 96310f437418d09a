#pragma once

// Brute-force reference implementations used as independent oracles.
// Deliberately written as direct nested loops over the defining formulas,
// sharing no code with the library paths they check.

#include <algorithm>
#include <cmath>
#include <vector>

#include "tosuda/style.hpp"
#include "tosuda/tensor.hpp"

namespace oracle {

using tosuda::Rng;
using tosuda::Shape;
using tosuda::Tensor;

inline Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.value()) v = rng.uniform(lo, hi);
  return t;
}

inline double at4(const Tensor& t, std::size_t a, std::size_t b, std::size_t c,
                  std::size_t d) {
  return t.value()[((a * t.dim(1) + b) * t.dim(2) + c) * t.dim(3) + d];
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor out = Tensor::zeros({B, F, Ho, Wo});
  auto ov = out.value();
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t oi = 0; oi < Ho; ++oi) {
        for (std::size_t oj = 0; oj < Wo; ++oj, ++o) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t ki = 0; ki < kh; ++ki) {
              for (std::size_t kj = 0; kj < kw; ++kj) {
                const long y = static_cast<long>(oi) * stride + static_cast<long>(ki) - pad;
                const long xx = static_cast<long>(oj) * stride + static_cast<long>(kj) - pad;
                if (y < 0 || y >= static_cast<long>(H) || xx < 0 ||
                    xx >= static_cast<long>(W)) {
                  continue;
                }
                acc += at4(x, b, c, static_cast<std::size_t>(y),
                           static_cast<std::size_t>(xx)) *
                       at4(w, f, c, ki, kj);
              }
            }
          }
          ov[o] = acc;
        }
      }
    }
  }
  return out;
}

inline Tensor maxpool2d(const Tensor& x, int k) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = H / k, Wo = W / k;
  Tensor out = Tensor::zeros({B, C, Ho, Wo});
  auto ov = out.value();
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t oi = 0; oi < Ho; ++oi) {
        for (std::size_t oj = 0; oj < Wo; ++oj, ++o) {
          double best = at4(x, b, c, oi * k, oj * k);
          for (int di = 0; di < k; ++di) {
            for (int dj = 0; dj < k; ++dj) {
              best = std::max(best, at4(x, b, c, oi * k + di, oj * k + dj));
            }
          }
          ov[o] = best;
        }
      }
    }
  }
  return out;
}

// Four-neighbor interpolation straight from the definition.
inline Tensor bilinear_sample(const Tensor& x, const Tensor& coords) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = coords.dim(1), Wo = coords.dim(2);
  Tensor out = Tensor::zeros({B, C, Ho, Wo});
  auto ov = out.value();
  const auto cv = coords.value();
  auto pixel = [&](std::size_t b, std::size_t c, long y, long xx) -> double {
    if (y < 0 || y >= static_cast<long>(H) || xx < 0 || xx >= static_cast<long>(W)) return 0.0;
    return at4(x, b, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx));
  };
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < Ho; ++i) {
      for (std::size_t j = 0; j < Wo; ++j) {
        const double u = cv[((b * Ho + i) * Wo + j) * 2];
        const double v = cv[((b * Ho + i) * Wo + j) * 2 + 1];
        const double px = (u + 1.0) * 0.5 * static_cast<double>(W - 1);
        const double py = (v + 1.0) * 0.5 * static_cast<double>(H - 1);
        const long x0 = static_cast<long>(std::floor(px));
        const long y0 = static_cast<long>(std::floor(py));
        const double fx = px - std::floor(px), fy = py - std::floor(py);
        for (std::size_t c = 0; c < C; ++c) {
          ov[((b * C + c) * Ho + i) * Wo + j] =
              (1 - fy) * (1 - fx) * pixel(b, c, y0, x0) +
              (1 - fy) * fx * pixel(b, c, y0, x0 + 1) +
              fy * (1 - fx) * pixel(b, c, y0 + 1, x0) +
              fy * fx * pixel(b, c, y0 + 1, x0 + 1);
        }
      }
    }
  }
  return out;
}

// G_ij = sum_{h,w} F_i(h,w) F_j(h,w) / (C H W) for a [CxHxW] map.
inline Tensor gram(const Tensor& h) {
  const std::size_t C = h.dim(0), HW = h.dim(1) * h.dim(2);
  Tensor out = Tensor::zeros({C, C});
  auto ov = out.value();
  const auto hv = h.value();
  for (std::size_t i = 0; i < C; ++i) {
    for (std::size_t j = 0; j < C; ++j) {
      double acc = 0.0;
      for (std::size_t s = 0; s < HW; ++s) acc += hv[i * HW + s] * hv[j * HW + s];
      ov[i * C + j] = acc / static_cast<double>(C * HW);
    }
  }
  return out;
}

inline Tensor relu_copy(const Tensor& x) {
  Tensor out = x.clone();
  for (double& v : out.value()) v = std::max(v, 0.0);
  return out;
}

// Independent re-derivation of the whole style pipeline: direct conv
// chain through the extractor weights, per-tap Grams, squared Frobenius
// distances, mean over the batch.
inline double style_loss(const Tensor& batch, const Tensor& target,
                         const tosuda::StyleExtractor& extractor) {
  auto weights = extractor.parameters();
  auto taps_of = [&](const Tensor& img) {
    std::vector<Tensor> taps;
    Tensor h = img;
    for (std::size_t j = 0; j < weights.size(); ++j) {
      h = relu_copy(oracle::conv2d(h, weights[j].tensor, j == 0 ? 1 : 2, 0));
      taps.push_back(h);
    }
    return taps;
  };
  const std::size_t B = batch.dim(0);
  const std::size_t per = batch.numel() / B;
  const auto target_taps = taps_of(target);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    Tensor one = Tensor::zeros({1, batch.dim(1), batch.dim(2), batch.dim(3)});
    std::copy_n(batch.value().begin() + b * per, per, one.value().begin());
    const auto taps = taps_of(one);
    for (std::size_t j = 0; j < taps.size(); ++j) {
      Tensor gb = gram(tosuda::reshape(taps[j], {taps[j].dim(1), taps[j].dim(2),
                                                 taps[j].dim(3)}));
      Tensor gt = gram(tosuda::reshape(target_taps[j],
                                       {target_taps[j].dim(1),
                                        target_taps[j].dim(2),
                                        target_taps[j].dim(3)}));
      const auto gbv = gb.value();
      const auto gtv = gt.value();
      for (std::size_t i = 0; i < gbv.size(); ++i) {
        const double d = gbv[i] - gtv[i];
        total += d * d;
      }
    }
  }
  return total / static_cast<double>(B);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  const auto av = a.value();
  const auto bv = b.value();
  for (std::size_t i = 0; i < av.size(); ++i) {
    m = std::max(m, std::abs(av[i] - bv[i]));
  }
  return m;
}

}  // namespace oracle
