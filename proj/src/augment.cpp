#include "tosuda/augment.hpp"

#include <array>
#include <cmath>

namespace tosuda {

Tensor triangle_wave(const Tensor& p) {
  Tensor out = Tensor::zeros(p.shape());
  const auto pv = p.value();
  auto ov = out.value();
  const bool guard = KinkGuard::active();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    // exact value of arccos(cos(p*pi))/pi: the period-2 fold is the same
    // function and keeps the wave an exact identity on [0,1]
    const double w = pv[i] - 2.0 * std::floor(pv[i] * 0.5);
    ov[i] = w <= 1.0 ? w : 2.0 - w;
    if (guard) KinkGuard::note(std::abs(pv[i] - std::rint(pv[i])));
  }
  if (Tape* tape = Tape::current(); tape && p.requires_grad()) {
    out.set_requires_grad(true);
    tape->push([p, out]() mutable {
      const auto g = out.grad();
      const auto pv = p.value();
      auto gp = p.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        // sign(sin(p*pi)) evaluated exactly on the period-2 fold.
        const double w = pv[i] - 2.0 * std::floor(pv[i] * 0.5);
        double d = 0.0;
        if (w != 0.0 && w != 1.0) d = (w < 1.0) ? 1.0 : -1.0;
        gp[i] += g[i] * d;
      }
    });
  }
  return out;
}

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t = randn(std::move(shape), rng,
                   std::sqrt(2.0 / static_cast<double>(fan_in)));
  t.set_requires_grad(true);
  return t;
}

void check_onehot(const Tensor& c) {
  if (c.rank() != 2) {
    throw ContractError("class context must be [BxK] one-hot, got " +
                        shape_str(c.shape()));
  }
  const std::size_t B = c.dim(0), K = c.dim(1);
  const auto cv = c.value();
  for (std::size_t b = 0; b < B; ++b) {
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double v = cv[b * K + k];
      if (v != 0.0 && v != 1.0) {
        throw ContractError("class context row " + std::to_string(b) +
                            " is not one-hot");
      }
      sum += v;
    }
    if (sum != 1.0) {
      throw ContractError("class context row " + std::to_string(b) +
                          " is not one-hot");
    }
  }
}

}  // namespace

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
    : in_(in),
      out_(out),
      w1_(he_normal({in, hidden}, in, rng)),
      b1_(Tensor::zeros({hidden}, true)),
      w2_(he_normal({hidden, hidden}, hidden, rng)),
      b2_(Tensor::zeros({hidden}, true)),
      // zero output layer: a fresh head emits 0, i.e. the identity transform
      w3_(Tensor::zeros({hidden, out}, true)),
      b3_(Tensor::zeros({out}, true)) {}

Tensor Mlp::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != in_) {
    throw DimensionError("mlp: expected [Bx" + std::to_string(in_) +
                         "], got " + shape_str(x.shape()));
  }
  Tensor h = relu(add_rowvec(matmul(x, w1_), b1_));
  h = relu(add_rowvec(matmul(h, w2_), b2_));
  return add_rowvec(matmul(h, w3_), b3_);
}

std::vector<NamedTensor> Mlp::parameters(const std::string& prefix) const {
  return {{prefix + ".fc1.w", w1_}, {prefix + ".fc1.b", b1_},
          {prefix + ".fc2.w", w2_}, {prefix + ".fc2.b", b2_},
          {prefix + ".fc3.w", w3_}, {prefix + ".fc3.b", b3_}};
}

ColorNet::ColorNet(const AugmentConfig& cfg, Rng& rng)
    : cfg_(cfg),
      net_(cfg.channels * 64 + cfg.noise_dim + cfg.classes, cfg.hidden,
           2 * cfg.channels, rng) {}

GeoNet::GeoNet(const AugmentConfig& cfg, Rng& rng)
    : cfg_(cfg), net_(cfg.noise_dim + cfg.classes, cfg.hidden, 6, rng) {}

AugmentNets::AugmentNets(const AugmentConfig& cfg, Rng& rng)
    : color(cfg, rng), geo(cfg, rng) {}

std::vector<NamedTensor> AugmentNets::parameters() const {
  std::vector<NamedTensor> params = color.parameters();
  std::vector<NamedTensor> geo_params = geo.parameters();
  params.insert(params.end(), geo_params.begin(), geo_params.end());
  return params;
}

std::pair<Tensor, Tensor> color_params(const Tensor& x, const Tensor& z,
                                       const Tensor& c, const ColorNet& net) {
  const AugmentConfig& cfg = net.cfg_;
  if (x.rank() != 4 || x.dim(1) != cfg.channels) {
    throw DimensionError("color_params: expected [Bx" +
                         std::to_string(cfg.channels) + "xHxW], got " +
                         shape_str(x.shape()));
  }
  const std::size_t H = x.dim(2), W = x.dim(3);
  if (H != W || H % 8 != 0) {
    throw DimensionError("color_params: spatial extents must be square and "
                         "divisible by 8, got " + shape_str(x.shape()));
  }
  check_onehot(c);
  Tensor pooled = flatten_batch(avgpool2d(x, static_cast<int>(H / 8)));
  const std::array<Tensor, 3> parts{pooled, z, c};
  Tensor raw = net.net_.forward(concat_cols(parts));
  const std::size_t C = cfg.channels;
  Tensor alpha = scale_shift(tanh(slice_cols(raw, 0, C)), cfg.color_gain, 1.0);
  Tensor beta = scale_shift(tanh(slice_cols(raw, C, 2 * C)), cfg.color_gain, 0.0);
  return {alpha, beta};
}

Tensor apply_color(const Tensor& x, const Tensor& alpha, const Tensor& beta) {
  return triangle_wave(add_channel(mul_channel(x, alpha), beta));
}

Tensor geometric_params(const Tensor& z, const Tensor& c, const GeoNet& net) {
  check_onehot(c);
  const std::array<Tensor, 2> parts{z, c};
  Tensor raw = net.net_.forward(concat_cols(parts));
  Tensor a = scale_shift(tanh(raw), net.cfg_.geo_gain, 0.0);
  return reshape(a, {z.dim(0), 2, 3});
}

Tensor affine_grid(const Tensor& A, std::size_t H, std::size_t W) {
  if (A.rank() != 3 || A.dim(1) != 2 || A.dim(2) != 3) {
    throw DimensionError("affine_grid: expected [Bx2x3], got " +
                         shape_str(A.shape()));
  }
  const std::size_t B = A.dim(0);
  std::vector<double> us(W), vs(H);
  for (std::size_t j = 0; j < W; ++j) {
    us[j] = W > 1 ? -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(W - 1) : 0.0;
  }
  for (std::size_t i = 0; i < H; ++i) {
    vs[i] = H > 1 ? -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(H - 1) : 0.0;
  }
  Tensor out = Tensor::zeros({B, H, W, 2});
  const auto av = A.value();
  auto ov = out.value();
  for (std::size_t b = 0; b < B; ++b) {
    const double* m = av.data() + b * 6;
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const double u = us[j], v = vs[i];
        double* dst = ov.data() + ((b * H + i) * W + j) * 2;
        // residual form: A = 0 reproduces the base grid bit-exactly
        dst[0] = u + (m[0] * u + m[1] * v + m[2]);
        dst[1] = v + (m[3] * u + m[4] * v + m[5]);
      }
    }
  }
  if (Tape* tape = Tape::current(); tape && A.requires_grad()) {
    out.set_requires_grad(true);
    tape->push([A, out, B, H, W, us, vs]() mutable {
      const auto g = out.grad();
      auto ga = A.grad();
      for (std::size_t b = 0; b < B; ++b) {
        double* m = ga.data() + b * 6;
        for (std::size_t i = 0; i < H; ++i) {
          for (std::size_t j = 0; j < W; ++j) {
            const double u = us[j], v = vs[i];
            const double* src = g.data() + ((b * H + i) * W + j) * 2;
            m[0] += src[0] * u;
            m[1] += src[0] * v;
            m[2] += src[0];
            m[3] += src[1] * u;
            m[4] += src[1] * v;
            m[5] += src[1];
          }
        }
      }
    });
  }
  return out;
}

Tensor apply_affine(const Tensor& x, const Tensor& A) {
  if (x.rank() != 4) {
    throw DimensionError("apply_affine: expected [BxCxHxW], got " +
                         shape_str(x.shape()));
  }
  return bilinear_sample(x, affine_grid(A, x.dim(2), x.dim(3)));
}

std::pair<Tensor, AugmentationParams> augment(const Tensor& x,
                                              const Tensor& y_onehot,
                                              const Tensor& z,
                                              const AugmentNets& nets) {
  auto [alpha, beta] = color_params(x, z, y_onehot, nets.color);
  Tensor colored = apply_color(x, alpha, beta);
  Tensor A = geometric_params(z, y_onehot, nets.geo);
  Tensor warped = apply_affine(colored, A);
  return {warped, AugmentationParams{alpha, beta, A}};
}

}  // namespace tosuda
