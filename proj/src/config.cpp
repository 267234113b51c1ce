#include "tgkd/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tgkd/errors.hpp"

namespace tgkd {

const std::vector<std::string>& config_sections() {
  static const std::vector<std::string> sections{"common", "train-teacher", "distill", "analyze"};
  return sections;
}

const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema{
      // common
      {"seed", "common", "1", "root seed; data, init and batching streams derive from it"},
      {"output_dir", "common", "out", "directory for every artifact"},
      {"data_source", "common", "synthetic", "synthetic | file"},
      {"data_path", "common", "", "comma-separated input when data_source = file"},
      {"label_column", "common", "label", "class column of the input file"},
      {"normalize", "common", "true", "min-max scale features to [0, 1]"},
      {"classes", "common", "3", "synthetic: class count"},
      {"per_class", "common", "300", "synthetic: samples of the largest class"},
      {"dim", "common", "16", "synthetic: feature dimension"},
      {"spread", "common", "1.5", "synthetic: within-class standard deviation"},
      {"label_noise", "common", "0", "synthetic: fraction of flipped labels"},
      {"imbalance_ratio", "common", "1", "synthetic: largest / smallest class size"},
      {"outlier_fraction", "common", "0.1", "injected noise samples relative to the training split"},
      {"outlier_count", "common", "-1", "explicit outlier count; -1 uses outlier_fraction"},
      {"oversample", "common", "false", "balance training classes by duplication"},
      {"train_frac", "common", "0.8", "stratified training fraction"},
      {"val_frac", "common", "0.1", "stratified validation fraction"},
      {"tau", "common", "4.0", "distillation temperature"},
      {"batch_size", "common", "32", "minibatch size"},
      {"patience", "common", "10", "early-stopping patience in epochs"},
      // train-teacher
      {"teacher_hidden", "train-teacher", "64,64", "hidden widths of the teacher"},
      {"teacher_epochs", "train-teacher", "200", "teacher training epochs"},
      {"teacher_optimizer", "train-teacher", "sgd", "sgd | adam"},
      {"teacher_lr", "train-teacher", "0.05", "teacher learning rate"},
      {"teacher_momentum", "train-teacher", "0.9", "teacher sgd momentum"},
      {"teacher_weight_decay", "train-teacher", "0.0005", "teacher weight decay"},
      {"teacher_on_outliers", "train-teacher", "false", "include injected outliers in teacher training"},
      // distill
      {"teacher_file", "distill", "", "teacher params; empty means <output_dir>/teacher.bin"},
      {"student_hidden", "distill", "16", "hidden widths of the student"},
      {"epochs", "distill", "100", "maximum distillation epochs"},
      {"policy", "distill", "tgeo", "fixed | annealed | class_wise | wls | tgeo"},
      {"alpha", "distill", "0.5", "ratio for the fixed policy"},
      {"wls_gain", "distill", "1", "gain of the wls policy"},
      {"relation", "distill", "R3", "fusion-net input: R1 vertices | R2 edges | R3 both"},
      {"fusion_hidden", "distill", "32", "hidden width of the fusion network"},
      {"fusion_depth", "distill", "2", "fusion network layers (1-3)"},
      {"fusion_init", "distill", "glorot", "glorot | zero"},
      {"inner_optimizer", "distill", "sgd", "student optimizer: sgd | adam"},
      {"inner_lr", "distill", "0.05", "student learning rate"},
      {"inner_momentum", "distill", "0", "student sgd momentum"},
      {"weight_decay", "distill", "0", "student weight decay"},
      {"outer_optimizer", "distill", "sgd", "fusion-net optimizer: sgd | adam"},
      {"outer_lr", "distill", "auto", "fusion-net learning rate; auto = inner_lr / 2"},
      {"hypergrad", "distill", "unrolled_fd", "unrolled_fd | first_order"},
      {"fd_scale", "distill", "0.01", "finite-difference radius of the second-order term"},
      {"stop_gradient", "distill", "true", "treat relation vectors as constants for the student"},
      {"alpha_dump_interval", "distill", "10", "epochs between per-sample ratio dumps"},
      // analyze
      {"alpha_dump", "analyze", "", "ratio dump; empty means <output_dir>/alpha_dump.csv"},
      {"triplet_dump", "analyze", "", "triplet dump; empty means <output_dir>/triplets.csv"},
      {"report_dir", "analyze", "", "report directory; empty means <output_dir>/report"},
  };
  return schema;
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

const KeySpec* find_key(const std::string& key) {
  for (const KeySpec& k : config_schema()) {
    if (k.key == key) return &k;
  }
  return nullptr;
}

}  // namespace

ConfigValues::ConfigValues() {
  for (const KeySpec& k : config_schema()) values_[k.key] = k.default_value;
}

void ConfigValues::set(const std::string& key, const std::string& value) {
  if (find_key(key) == nullptr) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& ConfigValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

ConfigValues ConfigValues::parse(const std::string& text) {
  ConfigValues cfg;
  std::istringstream in(text);
  std::string line;
  std::string section = "common";
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      const auto& secs = config_sections();
      if (std::find(secs.begin(), secs.end(), section) == secs.end()) {
        throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const KeySpec* spec = find_key(key);
    if (spec == nullptr) throw ConfigError("line " + std::to_string(lineno) + ": unknown config key '" + key + "'");
    if (spec->section != section) {
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key + "' belongs in [" +
                        spec->section + "], not [" + section + "]");
    }
    cfg.values_[key] = value;
  }
  return cfg;
}

ConfigValues ConfigValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ConfigValues::render() const {
  std::ostringstream out;
  for (const std::string& section : config_sections()) {
    out << '[' << section << "]\n";
    for (const KeySpec& k : config_schema()) {
      if (k.section == section) out << k.key << " = " << values_.at(k.key) << '\n';
    }
    out << '\n';
  }
  return out.str();
}

// ---- typed resolution ----

namespace {

class Reader {
 public:
  explicit Reader(const ConfigValues& v) : v_(v) {}

  std::string str(const std::string& key) const { return v_.get(key); }

  double real(const std::string& key) const {
    const std::string s = v_.get(key);
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (s.empty() || used != s.size() || !std::isfinite(d)) fail(key, "expected a number, got '" + s + "'");
    return d;
  }

  long long integer(const std::string& key) const {
    const std::string s = v_.get(key);
    std::size_t used = 0;
    long long n = 0;
    try {
      n = std::stoll(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (s.empty() || used != s.size()) fail(key, "expected an integer, got '" + s + "'");
    return n;
  }

  std::size_t count(const std::string& key, long long min) const {
    const long long n = integer(key);
    if (n < min) fail(key, "must be at least " + std::to_string(min));
    return static_cast<std::size_t>(n);
  }

  bool boolean(const std::string& key) const {
    const std::string s = v_.get(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    fail(key, "expected true or false, got '" + s + "'");
  }

  std::vector<std::size_t> widths(const std::string& key) const {
    std::vector<std::size_t> out;
    std::stringstream ss(v_.get(key));
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell = trim(cell);
      std::size_t used = 0;
      long long n = 0;
      try {
        n = std::stoll(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (cell.empty() || used != cell.size() || n < 1) fail(key, "expected comma-separated positive widths");
      out.push_back(static_cast<std::size_t>(n));
    }
    if (out.empty()) fail(key, "needs at least one hidden width");
    return out;
  }

  OptimizerKind optimizer(const std::string& key) const {
    const std::string s = v_.get(key);
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    fail(key, "expected sgd or adam, got '" + s + "'");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError("config key '" + key + "': " + why);
  }

 private:
  const ConfigValues& v_;
};

void require(bool ok, const Reader& r, const std::string& key, const std::string& why) {
  if (!ok) r.fail(key, why);
}

}  // namespace

RunConfig resolve_config(const ConfigValues& values) {
  const Reader r(values);
  RunConfig c;
  c.raw = values;

  c.seed = static_cast<std::uint64_t>(r.integer("seed"));
  require(r.integer("seed") >= 0, r, "seed", "must be nonnegative");
  c.output_dir = r.str("output_dir");
  require(!c.output_dir.empty(), r, "output_dir", "must not be empty");
  c.data_source = r.str("data_source");
  require(c.data_source == "synthetic" || c.data_source == "file", r, "data_source",
          "expected synthetic or file");
  c.data_path = r.str("data_path");
  require(c.data_source != "file" || !c.data_path.empty(), r, "data_path",
          "required when data_source = file");
  c.label_column = r.str("label_column");
  c.normalize = r.boolean("normalize");
  c.classes = r.count("classes", 2);
  c.per_class = r.count("per_class", 1);
  c.dim = r.count("dim", 1);
  c.spread = r.real("spread");
  require(c.spread > 0.0, r, "spread", "must be positive");
  c.label_noise = r.real("label_noise");
  require(c.label_noise >= 0.0 && c.label_noise < 1.0, r, "label_noise", "must lie in [0, 1)");
  c.imbalance_ratio = r.real("imbalance_ratio");
  require(c.imbalance_ratio >= 1.0, r, "imbalance_ratio", "must be at least 1");
  c.outlier_fraction = r.real("outlier_fraction");
  require(c.outlier_fraction >= 0.0, r, "outlier_fraction", "must be nonnegative");
  c.outlier_count = r.integer("outlier_count");
  require(c.outlier_count >= -1, r, "outlier_count", "must be -1 or a nonnegative count");
  c.oversample = r.boolean("oversample");
  c.train_frac = r.real("train_frac");
  c.val_frac = r.real("val_frac");
  require(c.train_frac > 0.0, r, "train_frac", "must be positive");
  require(c.val_frac > 0.0 && c.train_frac + c.val_frac < 1.0, r, "val_frac",
          "must be positive with train_frac + val_frac < 1");
  c.tau = r.real("tau");
  require(c.tau > 0.0, r, "tau", "must be positive");
  c.batch_size = r.count("batch_size", 1);
  c.patience = r.count("patience", 1);

  c.teacher_hidden = r.widths("teacher_hidden");
  c.teacher_epochs = r.count("teacher_epochs", 0);
  c.teacher_opt.kind = r.optimizer("teacher_optimizer");
  c.teacher_opt.lr = r.real("teacher_lr");
  require(c.teacher_opt.lr > 0.0, r, "teacher_lr", "must be positive");
  c.teacher_opt.momentum = r.real("teacher_momentum");
  require(c.teacher_opt.momentum >= 0.0 && c.teacher_opt.momentum < 1.0, r, "teacher_momentum",
          "must lie in [0, 1)");
  c.teacher_opt.weight_decay = r.real("teacher_weight_decay");
  require(c.teacher_opt.weight_decay >= 0.0, r, "teacher_weight_decay", "must be nonnegative");
  c.teacher_on_outliers = r.boolean("teacher_on_outliers");

  c.teacher_file = r.str("teacher_file");
  if (c.teacher_file.empty()) c.teacher_file = c.output_dir / "teacher.bin";
  c.student_hidden = r.widths("student_hidden");
  c.epochs = r.count("epochs", 0);
  c.policy = parse_policy_kind(r.str("policy"));
  c.alpha = r.real("alpha");
  require(c.alpha >= 0.0 && c.alpha <= 1.0, r, "alpha", "must lie in [0, 1]");
  c.wls_gain = r.real("wls_gain");
  require(c.wls_gain > 0.0, r, "wls_gain", "must be positive");
  c.relation = parse_relation_mode(r.str("relation"));
  c.fusion_hidden = r.count("fusion_hidden", 1);
  c.fusion_depth = r.count("fusion_depth", 1);
  require(c.fusion_depth <= 3, r, "fusion_depth", "must be 1, 2 or 3");
  const std::string init = r.str("fusion_init");
  require(init == "glorot" || init == "zero", r, "fusion_init", "expected glorot or zero");
  c.fusion_zero_init = init == "zero";
  c.inner_opt.kind = r.optimizer("inner_optimizer");
  c.inner_opt.lr = r.real("inner_lr");
  require(c.inner_opt.lr > 0.0, r, "inner_lr", "must be positive");
  c.inner_opt.momentum = r.real("inner_momentum");
  require(c.inner_opt.momentum >= 0.0 && c.inner_opt.momentum < 1.0, r, "inner_momentum",
          "must lie in [0, 1)");
  c.inner_opt.weight_decay = r.real("weight_decay");
  require(c.inner_opt.weight_decay >= 0.0, r, "weight_decay", "must be nonnegative");
  c.outer_opt.kind = r.optimizer("outer_optimizer");
  c.outer_opt.lr = r.str("outer_lr") == "auto" ? c.inner_opt.lr / 2.0 : r.real("outer_lr");
  require(c.outer_opt.lr >= 0.0, r, "outer_lr", "must be nonnegative");
  c.hypergrad = parse_hypergrad_mode(r.str("hypergrad"));
  c.fd_scale = r.real("fd_scale");
  require(c.fd_scale > 0.0, r, "fd_scale", "must be positive");
  c.stop_gradient = r.boolean("stop_gradient");
  c.alpha_dump_interval = r.count("alpha_dump_interval", 0);

  c.alpha_dump = r.str("alpha_dump");
  if (c.alpha_dump.empty()) c.alpha_dump = c.output_dir / "alpha_dump.csv";
  c.triplet_dump = r.str("triplet_dump");
  if (c.triplet_dump.empty()) c.triplet_dump = c.output_dir / "triplets.csv";
  c.report_dir = r.str("report_dir");
  if (c.report_dir.empty()) c.report_dir = c.output_dir / "report";
  return c;
}

}  // namespace tgkd
