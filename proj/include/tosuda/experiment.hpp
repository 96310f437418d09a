#pragma once

#include <string>
#include <vector>

#include "tosuda/config.hpp"
#include "tosuda/trainer.hpp"

namespace tosuda {

/// The four splits of one run. For synthetic data the target pool is the
/// styled copy of the training source; the first num_targets images are
/// the training targets and the remainder is held out for evaluation.
/// The source test split comes from an independently seeded pair.
struct DataBundle {
  LabeledImageSet source_train;
  LabeledImageSet source_test;
  LabeledImageSet target_train;  // exactly num_targets images
  LabeledImageSet target_eval;
};

/// Assembles the splits; idx paths resolve against $TOSUDA_DATA_DIR when
/// relative and the variable is set.
DataBundle load_data(const RunConfig& cfg);

/// Seeded module construction. The style extractor is built only when the
/// run can evaluate the style loss; external extractor weights are loaded
/// when configured.
Modules build_modules(const RunConfig& cfg);

/// Trains per the config. With a non-empty out_dir writes metrics.csv,
/// a rolling last.ckpt per checkpoint_every epochs, and final.ckpt.
TrainResult run_training(const RunConfig& cfg, const std::string& out_dir);

struct AblateRow {
  std::string setup;
  std::vector<double> target_accs, source_accs;
  double target_mean = 0.0, target_std = 0.0;
  double source_mean = 0.0, source_std = 0.0;
};

/// Runs full / no_style / no_adv / source_only over the configured seed
/// list, writes per-run artifacts under out_dir/<setup>_<seed>/ and the
/// summary table to out_dir/ablation.csv.
std::vector<AblateRow> run_ablation(const RunConfig& cfg,
                                    const std::string& out_dir);

/// Accuracy of a checkpointed classifier on the configured eval_split.
double run_eval(const RunConfig& cfg, const std::string& checkpoint_path);

/// Writes `count` triptych PPMs (source | augmented | target) using the
/// checkpointed augmenter and fresh seeded noise.
void run_preview(const RunConfig& cfg, const std::string& checkpoint_path,
                 int count, const std::string& out_dir);

/// Exports the synthetic pair as PPM directories source/ and target/.
void run_gendata(const RunConfig& cfg, const std::string& out_dir);

/// Seeds for the ablation grid: ablate_seeds if set, else seed, seed+1,
/// seed+2.
std::vector<std::uint64_t> ablation_seeds(const RunConfig& cfg);

/// Round-trip-safe CSV number formatting.
std::string format_metric(double v);

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const MetricsRow& row);

}  // namespace tosuda
