#include "tosuda/style.hpp"

#include <Eigen/Core>

#include <cmath>

namespace tosuda {

namespace {
using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<MatRM>;
using CMap = Eigen::Map<const MatRM>;

constexpr std::array<std::size_t, StyleExtractor::kTaps> kWidths{16, 32, 64, 128};
}  // namespace

StyleExtractor::StyleExtractor(std::size_t channels, Rng& rng)
    : channels_(channels) {
  std::size_t in = channels;
  for (std::size_t j = 0; j < kTaps; ++j) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in * 9));
    conv_[j] = randn({kWidths[j], in, 3, 3}, rng, stddev);
    in = kWidths[j];
  }
}

std::array<Tensor, StyleExtractor::kTaps> StyleExtractor::features(
    const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != channels_) {
    throw DimensionError("style extractor: expected [Bx" +
                         std::to_string(channels_) + "xHxW], got " +
                         shape_str(x.shape()));
  }
  std::array<Tensor, kTaps> taps;
  taps[0] = relu(conv2d(x, conv_[0], 1));
  taps[1] = relu(conv2d(taps[0], conv_[1], 2));
  taps[2] = relu(conv2d(taps[1], conv_[2], 2));
  taps[3] = relu(conv2d(taps[2], conv_[3], 2));
  return taps;
}

std::vector<NamedTensor> StyleExtractor::parameters() const {
  std::vector<NamedTensor> params;
  for (std::size_t j = 0; j < kTaps; ++j) {
    params.push_back({"sam.conv" + std::to_string(j + 1) + ".w", conv_[j]});
  }
  return params;
}

void StyleExtractor::load_parameters(std::span<const NamedTensor> params) {
  for (std::size_t j = 0; j < kTaps; ++j) {
    const std::string name = "sam.conv" + std::to_string(j + 1) + ".w";
    const NamedTensor* found = nullptr;
    for (const NamedTensor& p : params) {
      if (p.name == name) {
        found = &p;
        break;
      }
    }
    if (!found) throw FormatError("extractor weights: missing tensor " + name);
    if (found->tensor.shape() != conv_[j].shape()) {
      throw FormatError("extractor weights: " + name + " has shape " +
                        shape_str(found->tensor.shape()) + ", expected " +
                        shape_str(conv_[j].shape()));
    }
    std::copy(found->tensor.value().begin(), found->tensor.value().end(),
              conv_[j].value().begin());
  }
}

std::array<Tensor, StyleExtractor::kTaps> extract_features(
    const Tensor& x, const StyleExtractor& extractor) {
  return extractor.features(x);
}

Tensor gram_nchw(const Tensor& x) {
  if (x.rank() != 4) {
    throw DimensionError("gram_nchw: expected [BxCxHxW], got " +
                         shape_str(x.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const double norm = 1.0 / static_cast<double>(C * HW);
  Tensor out = Tensor::zeros({B, C, C});
  for (std::size_t b = 0; b < B; ++b) {
    CMap f(x.value().data() + b * C * HW, C, HW);
    Map(out.value().data() + b * C * C, C, C).noalias() =
        norm * (f * f.transpose());
  }
  if (Tape* tape = Tape::current(); tape && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->push([x, out, B, C, HW, norm]() mutable {
      for (std::size_t b = 0; b < B; ++b) {
        CMap g(out.grad().data() + b * C * C, C, C);
        CMap f(x.value().data() + b * C * HW, C, HW);
        Map(x.grad().data() + b * C * HW, C, HW).noalias() +=
            norm * ((g + g.transpose()) * f);
      }
    });
  }
  return out;
}

Tensor gram_matrix(const Tensor& h) {
  if (h.rank() != 3) {
    throw DimensionError("gram_matrix: expected [CxHxW], got " +
                         shape_str(h.shape()));
  }
  const std::size_t C = h.dim(0);
  Tensor batched = gram_nchw(reshape(h, {1, C, h.dim(1), h.dim(2)}));
  return reshape(batched, {C, C});
}

GramSet gram_set(const Tensor& x, const StyleExtractor& extractor) {
  GramSet grams;
  const auto taps = extractor.features(x);
  for (std::size_t j = 0; j < StyleExtractor::kTaps; ++j) {
    const std::size_t C = taps[j].dim(1);
    grams[j] = reshape(gram_nchw(taps[j]), {C, C});
  }
  return grams;
}

Tensor style_loss(const Tensor& batch, const Tensor& target,
                  const StyleExtractor& extractor) {
  if (batch.rank() != 4 || target.rank() != 4) {
    throw DimensionError("style_loss: expected [BxCxHxW] inputs");
  }
  if (target.dim(0) != 1) {
    throw DimensionError("style_loss: target must be a single image, got " +
                         shape_str(target.shape()));
  }
  if (batch.dim(1) != target.dim(1) || batch.dim(2) != target.dim(2) ||
      batch.dim(3) != target.dim(3)) {
    throw DimensionError("style_loss: batch " + shape_str(batch.shape()) +
                         " and target " + shape_str(target.shape()) +
                         " sizes disagree");
  }
  const std::size_t B = batch.dim(0);
  const auto batch_taps = extractor.features(batch);
  const auto target_taps = extractor.features(target);
  Tensor total;
  for (std::size_t j = 0; j < StyleExtractor::kTaps; ++j) {
    Tensor gb = gram_nchw(batch_taps[j]);
    Tensor gt = expand_batch(gram_nchw(target_taps[j]), B);
    Tensor d = sub(gb, gt);
    Tensor term = sum(mul(d, d));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(B));
}

}  // namespace tosuda
