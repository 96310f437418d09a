#include "tosuda/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace tosuda {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v, const std::string& where, int line) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(where + ":" + std::to_string(line) +
                          ": expected a number, got '" + v + "'",
                      line);
  }
}

long long parse_int(const std::string& v, const std::string& where, int line) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(where + ":" + std::to_string(line) +
                          ": expected an integer, got '" + v + "'",
                      line);
  }
  return out;
}

std::array<double, 3> parse_triple(const std::string& v,
                                   const std::string& where, int line) {
  std::array<double, 3> out{};
  std::stringstream ss(v);
  std::string part;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(ss, part, ',')) {
      throw ConfigError(where + ":" + std::to_string(line) +
                            ": expected three comma-separated numbers, got '" +
                            v + "'",
                        line);
    }
    out[i] = parse_double(trim(part), where, line);
  }
  if (std::getline(ss, part, ',')) {
    throw ConfigError(where + ":" + std::to_string(line) +
                          ": expected exactly three numbers, got '" + v + "'",
                      line);
  }
  return out;
}

}  // namespace

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_text(buf.str(), path);
}

RunConfig RunConfig::parse_text(const std::string& text,
                                const std::string& where) {
  RunConfig cfg;
  using Setter = std::function<void(const std::string&, int)>;
  const std::map<std::string, Setter> keys = {
      {"dataset", [&](const std::string& v, int) { cfg.dataset = v; }},
      {"per_class", [&](const std::string& v, int l) { cfg.per_class = static_cast<int>(parse_int(v, where, l)); }},
      {"per_class_test", [&](const std::string& v, int l) { cfg.per_class_test = static_cast<int>(parse_int(v, where, l)); }},
      {"channels", [&](const std::string& v, int l) { cfg.channels = static_cast<std::size_t>(parse_int(v, where, l)); }},
      {"classes", [&](const std::string& v, int l) { cfg.classes = static_cast<std::size_t>(parse_int(v, where, l)); }},
      {"target_scale", [&](const std::string& v, int l) { cfg.target_style.color_scale = parse_triple(v, where, l); }},
      {"target_shift", [&](const std::string& v, int l) { cfg.target_style.color_shift = parse_triple(v, where, l); }},
      {"target_rotation_deg", [&](const std::string& v, int l) { cfg.target_style.rotation_deg = parse_double(v, where, l); }},
      {"src_images", [&](const std::string& v, int) { cfg.src_images = v; }},
      {"src_labels", [&](const std::string& v, int) { cfg.src_labels = v; }},
      {"src_test_images", [&](const std::string& v, int) { cfg.src_test_images = v; }},
      {"src_test_labels", [&](const std::string& v, int) { cfg.src_test_labels = v; }},
      {"tgt_images", [&](const std::string& v, int) { cfg.tgt_images = v; }},
      {"tgt_labels", [&](const std::string& v, int) { cfg.tgt_labels = v; }},
      {"tgt_test_images", [&](const std::string& v, int) { cfg.tgt_test_images = v; }},
      {"tgt_test_labels", [&](const std::string& v, int) { cfg.tgt_test_labels = v; }},
      {"noise_dim", [&](const std::string& v, int l) { cfg.noise_dim = static_cast<std::size_t>(parse_int(v, where, l)); }},
      {"hidden", [&](const std::string& v, int l) { cfg.hidden = static_cast<std::size_t>(parse_int(v, where, l)); }},
      {"g_color", [&](const std::string& v, int l) { cfg.g_color = parse_double(v, where, l); }},
      {"g_geo", [&](const std::string& v, int l) { cfg.g_geo = parse_double(v, where, l); }},
      {"extractor_weights", [&](const std::string& v, int) { cfg.extractor_weights = v; }},
      {"n", [&](const std::string& v, int l) { cfg.n = static_cast<int>(parse_int(v, where, l)); }},
      {"lambda_style", [&](const std::string& v, int l) { cfg.lambda_style = parse_double(v, where, l); }},
      {"lambda_adv", [&](const std::string& v, int l) { cfg.lambda_adv = parse_double(v, where, l); }},
      {"lr_cls", [&](const std::string& v, int l) { cfg.lr_cls = parse_double(v, where, l); }},
      {"lr_aug", [&](const std::string& v, int l) { cfg.lr_aug = parse_double(v, where, l); }},
      {"momentum", [&](const std::string& v, int l) { cfg.momentum = parse_double(v, where, l); }},
      {"batch_size", [&](const std::string& v, int l) { cfg.batch_size = static_cast<std::size_t>(parse_int(v, where, l)); }},
      {"epochs", [&](const std::string& v, int l) { cfg.epochs = static_cast<int>(parse_int(v, where, l)); }},
      {"seed", [&](const std::string& v, int l) { cfg.seed = static_cast<std::uint64_t>(parse_int(v, where, l)); }},
      {"num_targets", [&](const std::string& v, int l) { cfg.num_targets = static_cast<int>(parse_int(v, where, l)); }},
      {"ablation", [&](const std::string& v, int) { cfg.ablation = v; }},
      {"eval_target_cap", [&](const std::string& v, int l) { cfg.eval_target_cap = static_cast<std::size_t>(parse_int(v, where, l)); }},
      {"checkpoint_every", [&](const std::string& v, int l) { cfg.checkpoint_every = static_cast<int>(parse_int(v, where, l)); }},
      {"eval_split", [&](const std::string& v, int) { cfg.eval_split = v; }},
      {"ablate_seeds", [&](const std::string& v, int) { cfg.ablate_seeds = v; }},
  };

  std::stringstream ss(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(ss, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + ":" + std::to_string(line_no) +
                            ": expected 'key = value', got '" + line + "'",
                        line_no);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = keys.find(key);
    if (it == keys.end()) {
      throw ConfigError(where + ":" + std::to_string(line_no) +
                            ": unknown key '" + key + "'",
                        line_no);
    }
    it->second(value, line_no);
  }
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (dataset != "synthetic" && dataset != "idx") {
    fail("dataset must be 'synthetic' or 'idx', got '" + dataset + "'");
  }
  if (dataset == "synthetic" && classes != 5) {
    fail("the synthetic benchmark has exactly 5 classes");
  }
  if (dataset == "synthetic" && channels != 3) {
    fail("the synthetic benchmark is RGB (channels = 3)");
  }
  if (per_class < 1 || per_class_test < 1) fail("per_class values must be >= 1");
  if (channels < 1) fail("channels must be >= 1");
  if (classes < 2) fail("classes must be >= 2");
  if (noise_dim < 1 || hidden < 1) fail("network sizes must be >= 1");
  if (g_color < 0.0 || g_geo < 0.0) fail("gains must be nonnegative");
  if (eval_split != "source_train" && eval_split != "source_test" &&
      eval_split != "target") {
    fail("eval_split must be source_train, source_test, or target");
  }
  try {
    TrainConfig tc = train_config();
    tc.validate();
  } catch (const ContractError& e) {
    fail(e.what());
  }
}

TrainConfig RunConfig::train_config() const {
  TrainConfig tc;
  tc.n = n;
  tc.lambda_style = lambda_style;
  tc.lambda_adv = lambda_adv;
  tc.lr_cls = lr_cls;
  tc.lr_aug = lr_aug;
  tc.momentum = momentum;
  tc.batch_size = batch_size;
  tc.epochs = epochs;
  tc.seed = seed;
  tc.num_targets = num_targets;
  tc.ablation = parse_ablation(ablation);
  tc.eval_target_cap = eval_target_cap;
  return tc;
}

AugmentConfig RunConfig::augment_config() const {
  AugmentConfig ac;
  ac.channels = channels;
  ac.classes = classes;
  ac.noise_dim = noise_dim;
  ac.hidden = hidden;
  ac.color_gain = g_color;
  ac.geo_gain = g_geo;
  return ac;
}

}  // namespace tosuda
