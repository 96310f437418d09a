#include "tosuda/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace tosuda {

Ablation parse_ablation(const std::string& name) {
  if (name == "full") return Ablation::full;
  if (name == "no_style") return Ablation::no_style;
  if (name == "no_adv") return Ablation::no_adv;
  if (name == "source_only") return Ablation::source_only;
  throw ContractError("unknown ablation '" + name +
                      "' (full, no_style, no_adv, source_only)");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_style: return "no_style";
    case Ablation::no_adv: return "no_adv";
    case Ablation::source_only: return "source_only";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (n < 1) throw ContractError("n must be >= 1");
  if (lambda_style < 0.0 || lambda_adv < 0.0) {
    throw ContractError("loss weights must be nonnegative");
  }
  if (lr_cls <= 0.0 || lr_aug <= 0.0) {
    throw ContractError("learning rates must be positive");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ContractError("momentum must be in [0, 1)");
  }
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  if (epochs < 0) throw ContractError("epochs must be >= 0");
  if (num_targets < 1) throw ContractError("num_targets must be >= 1");
}

void SgdMomentum::step(std::span<NamedTensor> params) {
  if (velocity_.empty()) {
    for (const NamedTensor& p : params) {
      velocity_.push_back({p.name, Tensor::zeros(p.tensor.shape())});
    }
  }
  if (velocity_.size() != params.size()) {
    throw ContractError("optimizer bound to a different parameter set");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = params[i].tensor.grad();
    auto v = velocity_[i].tensor.value();
    auto p = params[i].tensor.value();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      p[j] -= lr_ * v[j];
    }
  }
}

std::vector<NamedTensor> SgdMomentum::state(const std::string& scope) const {
  std::vector<NamedTensor> out;
  for (const NamedTensor& v : velocity_) {
    out.push_back({"opt." + scope + ".v." + v.name, v.tensor});
  }
  return out;
}

Modules::Modules(std::size_t channels, std::size_t classes,
                 const AugmentConfig& aug_cfg, std::uint64_t seed,
                 bool with_extractor)
    : aum([&] {
        Rng rng = Rng(seed).fork(1);
        return AugmentNets(aug_cfg, rng);
      }()),
      cls([&] {
        Rng rng = Rng(seed).fork(2);
        return ClassifierNet(channels, classes, rng);
      }()) {
  if (with_extractor) {
    Rng rng = Rng(seed).fork(3);
    sam.emplace(channels, rng);
  }
}

std::vector<NamedTensor> Modules::parameters() const {
  std::vector<NamedTensor> params = aum.parameters();
  auto more = cls.parameters();
  params.insert(params.end(), more.begin(), more.end());
  if (sam) {
    more = sam->parameters();
    params.insert(params.end(), more.begin(), more.end());
  }
  return params;
}

Tensor classifier_objective(const Batch& batch, const Modules& mods,
                            const Tensor& z) {
  Tensor xhat;
  {
    // the augmenter is frozen in step 1; its forward runs untracked
    NoTapeScope frozen;
    xhat = augment(batch.images, batch.onehot, z, mods.aum).first;
  }
  return cross_entropy(mods.cls.forward(xhat), batch.onehot);
}

Tensor augmenter_objective(const Batch& batch, const Tensor& target,
                           const Modules& mods, const Tensor& z,
                           const TrainConfig& cfg, AugStepLosses* parts) {
  const double w_style =
      cfg.ablation == Ablation::no_style ? 0.0 : cfg.lambda_style;
  const double w_adv = cfg.ablation == Ablation::no_adv ? 0.0 : cfg.lambda_adv;

  Tensor xhat = augment(batch.images, batch.onehot, z, mods.aum).first;
  Tensor objective;
  if (w_style > 0.0) {
    if (!mods.sam) {
      throw ContractError("style term enabled but no extractor constructed");
    }
    Tensor ls = style_loss(xhat, target, *mods.sam);
    if (parts) parts->style = ls.item();
    objective = scale(ls, w_style);
  }
  if (w_adv > 0.0) {
    Tensor lc = cross_entropy(mods.cls.forward(xhat), batch.onehot);
    if (parts) parts->klass = lc.item();
    Tensor term = scale(lc, -w_adv);
    objective = objective.defined() ? add(objective, term) : term;
  }
  if (!objective.defined()) objective = Tensor::scalar(0.0);
  return objective;
}

namespace {

void zero_all(std::span<const NamedTensor> params) {
  for (const NamedTensor& p : params) p.tensor.zero_grad();
}

}  // namespace

double step_classifier(const Batch& batch, Modules& mods, SgdMomentum& opt,
                       const TrainConfig& cfg, Rng& z_rng) {
  if (batch.size() == 0) throw ContractError("step_classifier: empty batch");
  Tensor z = randn({batch.size(), mods.aum.config().noise_dim}, z_rng);
  Tape tape;
  double loss_value = 0.0;
  {
    TapeScope scope(tape);
    Tensor loss = classifier_objective(batch, mods, z);
    loss_value = loss.item();
    backward(loss, tape);
  }
  auto params = mods.cls.parameters();
  opt.step(params);
  zero_all(params);
  (void)cfg;
  return loss_value;
}

AugStepLosses step_augmenter(const Batch& batch, const Tensor& target,
                             Modules& mods, SgdMomentum& opt,
                             const TrainConfig& cfg, Rng& z_rng) {
  if (batch.size() == 0) throw ContractError("step_augmenter: empty batch");
  if (!target.defined() || target.numel() == 0) {
    throw ContractError("step_augmenter: no target available");
  }
  Tensor z = randn({batch.size(), mods.aum.config().noise_dim}, z_rng);
  Tape tape;
  AugStepLosses parts;
  {
    TapeScope scope(tape);
    Tensor objective = augmenter_objective(batch, target, mods, z, cfg, &parts);
    if (objective.requires_grad()) backward(objective, tape);
  }
  auto params = mods.aum.parameters();
  opt.step(params);
  zero_all(params);
  // backprop through the frozen classifier dirties its gradient buffers
  zero_all(mods.cls.parameters());
  return parts;
}

double evaluate(const ClassifierNet& net, const LabeledImageSet& set,
                std::size_t batch_size) {
  if (set.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t end = std::min(set.size(), start + batch_size);
    LabeledImageSet chunk = set.slice(start, end);
    hits += correct_count(net.forward(chunk.images), chunk.labels);
  }
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

TrainResult train(const LabeledImageSet& source,
                  const LabeledImageSet& target_train,
                  const LabeledImageSet& target_eval,
                  const LabeledImageSet& source_test, Modules& mods,
                  const TrainConfig& cfg, const MetricsSink& sink) {
  cfg.validate();
  if (target_train.size() != static_cast<std::size_t>(cfg.num_targets)) {
    throw ContractError("train: expected " + std::to_string(cfg.num_targets) +
                        " training targets, got " +
                        std::to_string(target_train.size()));
  }
  if (source.size() == 0) throw ContractError("train: empty source set");
  if (source.classes != mods.cls.classes()) {
    throw ContractError("train: source has " + std::to_string(source.classes) +
                        " classes, classifier expects " +
                        std::to_string(mods.cls.classes()));
  }

  // target images only; labels are never read
  std::vector<Tensor> targets;
  for (std::size_t i = 0; i < target_train.size(); ++i) {
    targets.push_back(target_train.slice(i, i + 1).images);
  }

  const LabeledImageSet target_eval_capped =
      (cfg.eval_target_cap > 0 && target_eval.size() > cfg.eval_target_cap)
          ? target_eval.slice(0, cfg.eval_target_cap)
          : target_eval;

  Rng master(cfg.seed);
  Rng z_rng = master.fork(11);
  Rng target_rng = master.fork(12);
  SgdMomentum opt_cls(cfg.lr_cls, cfg.momentum);
  SgdMomentum opt_aug(cfg.lr_aug, cfg.momentum);

  TrainResult result;
  long step = 0;
  auto emit = [&](MetricsRow row) {
    if (sink) sink(row);
    result.history.push_back(std::move(row));
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (const auto& idx :
         batch_indices(source.size(), cfg.batch_size, cfg.seed,
                       static_cast<std::size_t>(epoch))) {
      Batch batch = make_batch(source, idx);
      const double l_class = step_classifier(batch, mods, opt_cls, cfg, z_rng);
      ++result.step1_count;
      ++step;
      MetricsRow row;
      row.epoch = epoch;
      row.step = step;
      row.phase = "step1";
      row.l_class = l_class;
      emit(row);

      if (cfg.ablation != Ablation::source_only &&
          result.step1_count % cfg.n == 0) {
        const std::size_t pick =
            cfg.num_targets > 1 ? target_rng.below(targets.size()) : 0;
        AugStepLosses parts =
            step_augmenter(batch, targets[pick], mods, opt_aug, cfg, z_rng);
        ++result.step2_count;
        ++step;
        MetricsRow row2;
        row2.epoch = epoch;
        row2.step = step;
        row2.phase = "step2";
        row2.l_class = parts.klass;
        row2.l_style = parts.style;
        emit(row2);
      }
    }
    MetricsRow eval_row;
    eval_row.epoch = epoch;
    eval_row.step = step;
    eval_row.phase = "eval";
    eval_row.source_acc = evaluate(mods.cls, source_test);
    eval_row.target_acc = evaluate(mods.cls, target_eval_capped);
    emit(eval_row);
  }

  result.final_source_acc = evaluate(mods.cls, source_test);
  result.final_target_acc = evaluate(mods.cls, target_eval);
  return result;
}

}  // namespace tosuda
