#include "tosuda/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tosuda/checkpoint.hpp"
#include "tosuda/ppm.hpp"

namespace tosuda {

namespace fs = std::filesystem;

namespace {

std::string resolve_data_path(const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  if (const char* root = std::getenv("TOSUDA_DATA_DIR"); root && *root) {
    return (fs::path(root) / path).string();
  }
  return path;
}

LabeledImageSet load_idx_pair(const std::string& images,
                              const std::string& labels,
                              const RunConfig& cfg, const char* which) {
  if (images.empty() || labels.empty()) {
    throw ConfigError(std::string("idx dataset requires ") + which +
                      " image and label paths");
  }
  LabeledImageSet set =
      load_idx(resolve_data_path(images), resolve_data_path(labels), cfg.channels);
  if (set.classes > cfg.classes) {
    throw ConfigError(std::string(which) + " labels exceed configured classes (" +
                      std::to_string(set.classes) + " > " +
                      std::to_string(cfg.classes) + ")");
  }
  set.classes = cfg.classes;
  return set;
}

}  // namespace

DataBundle load_data(const RunConfig& cfg) {
  DataBundle data;
  const std::size_t n_targets = static_cast<std::size_t>(cfg.num_targets);
  if (cfg.dataset == "synthetic") {
    auto [source, target_pool] =
        gen_synthetic_pair(cfg.seed, cfg.per_class, cfg.target_style);
    if (n_targets >= target_pool.size()) {
      throw ConfigError("num_targets consumes the whole synthetic target pool");
    }
    data.source_train = std::move(source);
    data.target_train = target_pool.slice(0, n_targets);
    data.target_eval = target_pool.slice(n_targets, target_pool.size());
    // independent glyph stream for the held-out source split
    auto [test_source, test_target] = gen_synthetic_pair(
        mix_seed(cfg.seed, 0x7E57DA7A), cfg.per_class_test, cfg.target_style);
    (void)test_target;
    data.source_test = std::move(test_source);
    return data;
  }

  data.source_train = load_idx_pair(cfg.src_images, cfg.src_labels, cfg, "source");
  data.source_test =
      load_idx_pair(cfg.src_test_images, cfg.src_test_labels, cfg, "source test");
  LabeledImageSet target_pool =
      load_idx_pair(cfg.tgt_images, cfg.tgt_labels, cfg, "target");
  if (n_targets > target_pool.size()) {
    throw ConfigError("num_targets exceeds the target pool");
  }
  data.target_train = target_pool.slice(0, n_targets);
  if (!cfg.tgt_test_images.empty()) {
    data.target_eval = load_idx_pair(cfg.tgt_test_images, cfg.tgt_test_labels,
                                     cfg, "target test");
  } else {
    if (n_targets >= target_pool.size()) {
      throw ConfigError("no held-out target samples remain for evaluation");
    }
    data.target_eval = target_pool.slice(n_targets, target_pool.size());
  }
  return data;
}

Modules build_modules(const RunConfig& cfg) {
  const TrainConfig tc = cfg.train_config();
  const bool style_active = tc.ablation != Ablation::source_only &&
                            tc.ablation != Ablation::no_style &&
                            tc.lambda_style > 0.0;
  Modules mods(cfg.channels, cfg.classes, cfg.augment_config(), cfg.seed,
               style_active);
  if (style_active && !cfg.extractor_weights.empty()) {
    mods.sam->load_parameters(load_checkpoint(cfg.extractor_weights));
  }
  return mods;
}

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_metrics_header(std::ostream& os) {
  os << "epoch,step,phase,l_class,l_style,source_acc,target_acc\n";
}

void write_metrics_row(std::ostream& os, const MetricsRow& row) {
  auto opt = [&](const std::optional<double>& v) {
    return v ? format_metric(*v) : std::string();
  };
  os << row.epoch << ',' << row.step << ',' << row.phase << ','
     << opt(row.l_class) << ',' << opt(row.l_style) << ','
     << opt(row.source_acc) << ',' << opt(row.target_acc) << '\n';
}

TrainResult run_training(const RunConfig& cfg, const std::string& out_dir) {
  DataBundle data = load_data(cfg);
  Modules mods = build_modules(cfg);
  const TrainConfig tc = cfg.train_config();

  std::ofstream metrics;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    metrics.open(fs::path(out_dir) / "metrics.csv", std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics.csv under " + out_dir);
    write_metrics_header(metrics);
  }

  MetricsSink sink;
  if (!out_dir.empty()) {
    sink = [&](const MetricsRow& row) {
      write_metrics_row(metrics, row);
      if (row.phase == "eval" && cfg.checkpoint_every > 0 &&
          row.epoch % cfg.checkpoint_every == 0) {
        save_checkpoint((fs::path(out_dir) / "last.ckpt").string(),
                        mods.parameters());
      }
    };
  }

  TrainResult result = train(data.source_train, data.target_train,
                             data.target_eval, data.source_test, mods, tc, sink);
  if (!out_dir.empty()) {
    metrics.flush();
    if (!metrics) throw IoError("write failed for metrics.csv under " + out_dir);
    save_checkpoint((fs::path(out_dir) / "final.ckpt").string(),
                    mods.parameters());
  }
  return result;
}

std::vector<std::uint64_t> ablation_seeds(const RunConfig& cfg) {
  std::vector<std::uint64_t> seeds;
  if (cfg.ablate_seeds.empty()) {
    seeds = {cfg.seed, cfg.seed + 1, cfg.seed + 2};
  } else {
    std::stringstream ss(cfg.ablate_seeds);
    std::string part;
    while (std::getline(ss, part, ',')) {
      try {
        seeds.push_back(std::stoull(part));
      } catch (const std::exception&) {
        throw ConfigError("ablate_seeds: expected integers, got '" + part + "'");
      }
    }
    if (seeds.empty()) throw ConfigError("ablate_seeds: empty list");
  }
  return seeds;
}

namespace {

void mean_std(const std::vector<double>& xs, double& mean, double& stdev) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  stdev = 0.0;
  if (xs.size() > 1) {
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    stdev = std::sqrt(acc / static_cast<double>(xs.size() - 1));
  }
}

}  // namespace

std::vector<AblateRow> run_ablation(const RunConfig& cfg,
                                    const std::string& out_dir) {
  const std::vector<std::uint64_t> seeds = ablation_seeds(cfg);
  const std::vector<std::string> setups = {"full", "no_style", "no_adv",
                                           "source_only"};
  fs::create_directories(out_dir);
  std::vector<AblateRow> rows;
  for (const std::string& setup : setups) {
    AblateRow row;
    row.setup = setup;
    for (std::uint64_t seed : seeds) {
      RunConfig run_cfg = cfg;
      run_cfg.ablation = setup;
      run_cfg.seed = seed;
      const std::string run_dir =
          (fs::path(out_dir) / (setup + "_" + std::to_string(seed))).string();
      TrainResult r = run_training(run_cfg, run_dir);
      row.target_accs.push_back(r.final_target_acc);
      row.source_accs.push_back(r.final_source_acc);
    }
    mean_std(row.target_accs, row.target_mean, row.target_std);
    mean_std(row.source_accs, row.source_mean, row.source_std);
    rows.push_back(std::move(row));
  }

  std::ofstream f(fs::path(out_dir) / "ablation.csv", std::ios::trunc);
  if (!f) throw IoError("cannot write ablation.csv under " + out_dir);
  f << "setup,seeds,target_acc_mean,target_acc_std,source_acc_mean,source_acc_std\n";
  for (const AblateRow& row : rows) {
    std::string seed_list;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      if (i) seed_list += ';';
      seed_list += std::to_string(seeds[i]);
    }
    f << row.setup << ',' << seed_list << ',' << format_metric(row.target_mean)
      << ',' << format_metric(row.target_std) << ','
      << format_metric(row.source_mean) << ',' << format_metric(row.source_std)
      << '\n';
  }
  if (!f) throw IoError("write failed for ablation.csv under " + out_dir);
  return rows;
}

double run_eval(const RunConfig& cfg, const std::string& checkpoint_path) {
  const auto loaded = load_checkpoint(checkpoint_path);
  Rng rng(0);
  ClassifierNet net(cfg.channels, cfg.classes, rng);
  try {
    net.load_parameters(loaded);
  } catch (const FormatError& e) {
    throw CheckpointError(checkpoint_path + ": " + e.what());
  }
  DataBundle data = load_data(cfg);
  const LabeledImageSet* split = &data.source_test;
  if (cfg.eval_split == "source_train") split = &data.source_train;
  if (cfg.eval_split == "target") split = &data.target_eval;
  return evaluate(net, *split);
}

void run_preview(const RunConfig& cfg, const std::string& checkpoint_path,
                 int count, const std::string& out_dir) {
  if (count < 1) throw ContractError("preview count must be >= 1");
  const auto loaded = load_checkpoint(checkpoint_path);
  Rng build_rng = Rng(cfg.seed).fork(1);
  AugmentNets aum(cfg.augment_config(), build_rng);
  try {
    auto own = aum.parameters();
    load_into(own, loaded);
  } catch (const FormatError& e) {
    throw CheckpointError(checkpoint_path + ": " + e.what());
  }

  DataBundle data = load_data(cfg);
  if (static_cast<std::size_t>(count) > data.source_train.size()) {
    count = static_cast<int>(data.source_train.size());
  }
  fs::create_directories(out_dir);
  Rng z_rng = Rng(cfg.seed).fork(7);
  for (int i = 0; i < count; ++i) {
    LabeledImageSet one = data.source_train.slice(i, i + 1);
    Tensor z = randn({1, cfg.noise_dim}, z_rng);
    Tensor augmented =
        augment(one.images, onehot(one.labels, cfg.classes), z, aum).first;
    const std::size_t ti = static_cast<std::size_t>(i) % data.target_train.size();
    const Tensor target = data.target_train.slice(ti, ti + 1).images;

    const std::size_t C = cfg.channels, H = one.images.dim(2), W = one.images.dim(3);
    auto panel = [&](const Tensor& t) { return reshape(t, {C, H, W}); };
    Tensor strip = hstack_images({panel(one.images), panel(augmented), panel(target)});
    char name[32];
    std::snprintf(name, sizeof name, "preview_%03d.ppm", i);
    write_ppm((fs::path(out_dir) / name).string(), strip);
  }
}

void run_gendata(const RunConfig& cfg, const std::string& out_dir) {
  if (cfg.dataset != "synthetic") {
    throw ConfigError("gen-data only applies to the synthetic dataset");
  }
  auto [source, target] =
      gen_synthetic_pair(cfg.seed, cfg.per_class, cfg.target_style);
  for (const auto& [name, set] :
       {std::pair<std::string, const LabeledImageSet*>{"source", &source},
        {"target", &target}}) {
    const fs::path dir = fs::path(out_dir) / name;
    fs::create_directories(dir);
    const std::size_t C = set->images.dim(1), H = set->images.dim(2),
                      W = set->images.dim(3);
    for (std::size_t i = 0; i < set->size(); ++i) {
      char file[48];
      std::snprintf(file, sizeof file, "img_%05zu_c%d.ppm", i, set->labels[i]);
      write_ppm((dir / file).string(),
                reshape(set->slice(i, i + 1).images, {C, H, W}));
    }
  }
}

}  // namespace tosuda
