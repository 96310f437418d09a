#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tosuda/augment.hpp"
#include "tosuda/classifier.hpp"
#include "tosuda/data.hpp"
#include "tosuda/style.hpp"
#include "tosuda/tensor.hpp"

namespace tosuda {

/// Which terms drive the augmenter update. source_only never runs the
/// augmenter step at all, leaving the zero-initialized (identity)
/// augmentation in place for the whole run.
enum class Ablation { full, no_style, no_adv, source_only };

Ablation parse_ablation(const std::string& name);
std::string ablation_name(Ablation a);

struct TrainConfig {
  int n = 5;                  // classifier steps per augmenter step
  double lambda_style = 1.0;  // weight of the minimized style term
  double lambda_adv = 1.0;    // weight of the maximized classification term
  double lr_cls = 0.01;
  double lr_aug = 0.005;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  int epochs = 30;
  std::uint64_t seed = 42;
  int num_targets = 1;
  Ablation ablation = Ablation::full;
  // Per-epoch metrics evaluate at most this many held-out target samples
  // (0 = all); final reported accuracies always use the full set.
  std::size_t eval_target_cap = 500;

  void validate() const;
};

/// Momentum SGD:  v <- mu v + g;  p <- p - lr v.
/// Velocity buffers are created on first use, matching parameter shapes.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void step(std::span<NamedTensor> params);

  double lr() const { return lr_; }
  /// Velocity buffers named "opt.<scope>.v.<param>" for checkpointing.
  std::vector<NamedTensor> state(const std::string& scope) const;

 private:
  double lr_, momentum_;
  std::vector<NamedTensor> velocity_;
};

/// The three networks of one run. The style extractor is absent when the
/// run can never evaluate it (no_style and source_only ablations).
struct Modules {
  Modules(std::size_t channels, std::size_t classes, const AugmentConfig& aug_cfg,
          std::uint64_t seed, bool with_extractor = true);

  AugmentNets aum;
  ClassifierNet cls;
  std::optional<StyleExtractor> sam;

  std::vector<NamedTensor> parameters() const;  // all three modules
};

struct MetricsRow {
  int epoch = 0;
  long step = 0;
  std::string phase;  // "step1", "step2", or "eval"
  std::optional<double> l_class, l_style, source_acc, target_acc;
};

using MetricsSink = std::function<void(const MetricsRow&)>;

// Objectives with an explicit noise draw; the step_* wrappers draw z and
// then delegate here. Exposed so direction checks can pin z.

/// Classification loss of the augmented batch; gradients flow to the
/// classifier only (augmentation runs untracked).
Tensor classifier_objective(const Batch& batch, const Modules& mods,
                            const Tensor& z);

struct AugStepLosses {
  std::optional<double> style, klass;
};

/// lambda_style * L_style - lambda_adv * L_class on the augmented batch;
/// gradients flow to the augmenter only. A disabled term is never
/// evaluated: with lambda_adv = 0 the classifier is not run, with
/// lambda_style = 0 the extractor is not run (and may be null).
Tensor augmenter_objective(const Batch& batch, const Tensor& target,
                           const Modules& mods, const Tensor& z,
                           const TrainConfig& cfg, AugStepLosses* parts);

/// One descent update on the classifier; augmenter and extractor stay
/// bit-identical. Returns the pre-update loss.
double step_classifier(const Batch& batch, Modules& mods, SgdMomentum& opt,
                       const TrainConfig& cfg, Rng& z_rng);

/// One descent update on the augmenter objective; classifier and
/// extractor stay bit-identical. Returns the pre-update loss parts.
AugStepLosses step_augmenter(const Batch& batch, const Tensor& target,
                             Modules& mods, SgdMomentum& opt,
                             const TrainConfig& cfg, Rng& z_rng);

struct TrainResult {
  std::vector<MetricsRow> history;
  double final_source_acc = 0.0;
  double final_target_acc = 0.0;
  long step1_count = 0;
  long step2_count = 0;
};

/// Two-step alternating schedule: n consecutive classifier steps, then
/// one augmenter step on the same batch with a fresh z; the counter
/// carries across epochs. target_train must hold exactly num_targets
/// images (labels never read); with several, each augmenter step draws
/// one uniformly at random. One eval row per epoch.
TrainResult train(const LabeledImageSet& source,
                  const LabeledImageSet& target_train,
                  const LabeledImageSet& target_eval,
                  const LabeledImageSet& source_test, Modules& mods,
                  const TrainConfig& cfg, const MetricsSink& sink = {});

/// Accuracy over the full set, no augmentation, evaluated in batches.
double evaluate(const ClassifierNet& net, const LabeledImageSet& set,
                std::size_t batch_size = 256);

}  // namespace tosuda
