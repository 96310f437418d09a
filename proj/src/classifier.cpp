#include "tosuda/classifier.hpp"

#include <algorithm>
#include <cmath>

namespace tosuda {

namespace {

Tensor he_conv(Shape shape, Rng& rng) {
  const std::size_t fan_in = shape[1] * shape[2] * shape[3];
  Tensor t = randn(std::move(shape), rng,
                   std::sqrt(2.0 / static_cast<double>(fan_in)));
  t.set_requires_grad(true);
  return t;
}

Tensor he_dense(Shape shape, Rng& rng) {
  const std::size_t fan_in = shape[0];
  Tensor t = randn(std::move(shape), rng,
                   std::sqrt(2.0 / static_cast<double>(fan_in)));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

ClassifierNet::ClassifierNet(std::size_t channels, std::size_t classes, Rng& rng)
    : channels_(channels),
      classes_(classes),
      conv1_w_(he_conv({32, channels, 5, 5}, rng)),
      conv1_b_(Tensor::zeros({32}, true)),
      conv2_w_(he_conv({64, 32, 5, 5}, rng)),
      conv2_b_(Tensor::zeros({64}, true)),
      // 32 -> 28 -> 14 -> 10 -> 5, so the flattened width is 64 * 5 * 5
      fc1_w_(he_dense({1600, 384}, rng)),
      fc1_b_(Tensor::zeros({384}, true)),
      fc2_w_(he_dense({384, 192}, rng)),
      fc2_b_(Tensor::zeros({192}, true)),
      fc3_w_(he_dense({192, classes}, rng)),
      fc3_b_(Tensor::zeros({classes}, true)) {}

Tensor ClassifierNet::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != channels_ || x.dim(2) != kInputSize ||
      x.dim(3) != kInputSize) {
    throw DimensionError("classifier: expected [Bx" + std::to_string(channels_) +
                         "x32x32], got " + shape_str(x.shape()));
  }
  Tensor h = maxpool2d(relu(add_channel_bias(conv2d(x, conv1_w_), conv1_b_)), 2);
  h = maxpool2d(relu(add_channel_bias(conv2d(h, conv2_w_), conv2_b_)), 2);
  h = flatten_batch(h);
  h = relu(add_rowvec(matmul(h, fc1_w_), fc1_b_));
  h = relu(add_rowvec(matmul(h, fc2_w_), fc2_b_));
  return add_rowvec(matmul(h, fc3_w_), fc3_b_);
}

std::vector<NamedTensor> ClassifierNet::parameters() const {
  return {{"cls.conv1.w", conv1_w_}, {"cls.conv1.b", conv1_b_},
          {"cls.conv2.w", conv2_w_}, {"cls.conv2.b", conv2_b_},
          {"cls.fc1.w", fc1_w_},     {"cls.fc1.b", fc1_b_},
          {"cls.fc2.w", fc2_w_},     {"cls.fc2.b", fc2_b_},
          {"cls.fc3.w", fc3_w_},     {"cls.fc3.b", fc3_b_}};
}

void ClassifierNet::load_parameters(std::span<const NamedTensor> params) {
  for (NamedTensor& own : parameters()) {
    const NamedTensor* found = nullptr;
    for (const NamedTensor& p : params) {
      if (p.name == own.name) {
        found = &p;
        break;
      }
    }
    if (!found) throw FormatError("classifier weights: missing tensor " + own.name);
    if (found->tensor.shape() != own.tensor.shape()) {
      throw FormatError("classifier weights: " + own.name + " has shape " +
                        shape_str(found->tensor.shape()) + ", expected " +
                        shape_str(own.tensor.shape()));
    }
    std::copy(found->tensor.value().begin(), found->tensor.value().end(),
              own.tensor.value().begin());
  }
}

Tensor classify_forward(const Tensor& x, const ClassifierNet& net) {
  return net.forward(x);
}

Tensor cross_entropy(const Tensor& logits, const Tensor& y_onehot) {
  if (logits.rank() != 2 || y_onehot.rank() != 2 ||
      logits.shape() != y_onehot.shape()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) +
                         " vs labels " + shape_str(y_onehot.shape()));
  }
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  const auto lv = logits.value();
  const auto yv = y_onehot.value();
  std::vector<std::size_t> true_class(B);
  for (std::size_t b = 0; b < B; ++b) {
    double sum = 0.0;
    std::size_t hot = K;
    for (std::size_t k = 0; k < K; ++k) {
      const double v = yv[b * K + k];
      if (v != 0.0 && v != 1.0) {
        throw ContractError("cross_entropy: label row " + std::to_string(b) +
                            " is not one-hot");
      }
      if (v == 1.0) hot = k;
      sum += v;
    }
    if (sum != 1.0) {
      throw ContractError("cross_entropy: label row " + std::to_string(b) +
                          " is not one-hot");
    }
    true_class[b] = hot;
  }

  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = lv.data() + b * K;
    const double m = *std::max_element(row, row + K);
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) acc += std::exp(row[k] - m);
    loss += m + std::log(acc) - row[true_class[b]];
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(B));

  if (Tape* tape = Tape::current(); tape && logits.requires_grad()) {
    out.set_requires_grad(true);
    tape->push([logits, out, true_class, B, K]() mutable {
      const double g = out.grad()[0] / static_cast<double>(B);
      const auto lv = logits.value();
      auto gl = logits.grad();
      for (std::size_t b = 0; b < B; ++b) {
        const double* row = lv.data() + b * K;
        const double m = *std::max_element(row, row + K);
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) acc += std::exp(row[k] - m);
        // d/dlogits = softmax - y
        for (std::size_t k = 0; k < K; ++k) {
          gl[b * K + k] += g * std::exp(row[k] - m) / acc;
        }
        gl[b * K + true_class[b]] -= g;
      }
    });
  }
  return out;
}

std::size_t correct_count(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("accuracy: logits " + shape_str(logits.shape()) +
                         " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  const auto lv = logits.value();
  std::size_t hits = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = lv.data() + b * K;
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (row[k] > row[best]) best = k;
    }
    if (static_cast<int>(best) == labels[b]) ++hits;
  }
  return hits;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t B = labels.size();
  return B == 0 ? 0.0
                : static_cast<double>(correct_count(logits, labels)) /
                      static_cast<double>(B);
}

}  // namespace tosuda
