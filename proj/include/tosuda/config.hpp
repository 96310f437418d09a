#pragma once

#include <string>

#include "tosuda/augment.hpp"
#include "tosuda/data.hpp"
#include "tosuda/trainer.hpp"

namespace tosuda {

// Run configuration, parsed from line-oriented `key = value` text.
// Every key has the default shown here; unknown keys are rejected with
// the offending line number so typos cannot silently fall back.
struct RunConfig {
  // dataset
  std::string dataset = "synthetic";  // synthetic | idx
  int per_class = 500;                // synthetic training pair
  int per_class_test = 100;           // synthetic held-out source split
  std::size_t channels = 3;
  std::size_t classes = 5;
  DomainStyle target_style;
  std::string src_images, src_labels;            // idx training pair
  std::string src_test_images, src_test_labels;  // idx source test split
  std::string tgt_images, tgt_labels;            // idx target pool
  std::string tgt_test_images, tgt_test_labels;  // idx target eval split

  // model
  std::size_t noise_dim = 16;
  std::size_t hidden = 128;
  double g_color = 0.5;
  double g_geo = 0.25;
  std::string extractor_weights;  // optional checkpoint with sam.* tensors

  // training
  int n = 5;
  double lambda_style = 1.0;
  double lambda_adv = 1.0;
  double lr_cls = 0.01;
  double lr_aug = 0.005;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  int epochs = 30;
  std::uint64_t seed = 42;
  int num_targets = 1;
  std::string ablation = "full";
  std::size_t eval_target_cap = 500;
  int checkpoint_every = 1;  // epochs between checkpoints; 0 = final only

  // eval / ablate
  std::string eval_split = "source_test";  // source_train | source_test | target
  std::string ablate_seeds;                // comma list; empty = seed, seed+1, seed+2

  static RunConfig parse_file(const std::string& path);
  /// `where` names the source in error messages.
  static RunConfig parse_text(const std::string& text,
                              const std::string& where = "<config>");

  TrainConfig train_config() const;
  AugmentConfig augment_config() const;
  /// ConfigError on out-of-range or inconsistent values.
  void validate() const;
};

}  // namespace tosuda
