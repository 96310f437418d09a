#pragma once

#include <span>
#include <vector>

#include "tosuda/ops.hpp"
#include "tosuda/tensor.hpp"

namespace tosuda {

/// Digits-scale classifier: two conv5x5 + maxpool2 blocks (32 and 64
/// filters) followed by dense 384/192/K. Inputs are [B x C x 32 x 32].
class ClassifierNet {
 public:
  static constexpr std::size_t kInputSize = 32;

  ClassifierNet(std::size_t channels, std::size_t classes, Rng& rng);

  Tensor forward(const Tensor& x) const;

  std::size_t channels() const { return channels_; }
  std::size_t classes() const { return classes_; }
  std::vector<NamedTensor> parameters() const;
  void load_parameters(std::span<const NamedTensor> params);

 private:
  std::size_t channels_, classes_;
  Tensor conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_, fc3_w_, fc3_b_;
};

/// Unnormalized logits [B x K].
Tensor classify_forward(const Tensor& x, const ClassifierNet& net);

/// Mean over the batch of -log softmax(logits)[true class], stabilized
/// with log-sum-exp. ContractError if y rows are not one-hot.
Tensor cross_entropy(const Tensor& logits, const Tensor& y_onehot);

/// Number of argmax matches; ties go to the lowest class index.
std::size_t correct_count(const Tensor& logits, std::span<const int> labels);

/// Fraction of argmax matches; ties go to the lowest class index.
double accuracy(const Tensor& logits, std::span<const int> labels);

}  // namespace tosuda
