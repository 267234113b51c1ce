#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tgkd/bilevel.hpp"
#include "tgkd/fusion.hpp"
#include "tgkd/geometry.hpp"
#include "tgkd/network.hpp"

namespace tgkd {

/// One recognised configuration key. Keys live in exactly one section:
/// "common" or a command name.
struct KeySpec {
  std::string key;
  std::string section;
  std::string default_value;
  std::string help;
};

const std::vector<KeySpec>& config_schema();
const std::vector<std::string>& config_sections();

/// Raw key -> value strings, always holding every schema key.
class ConfigValues {
 public:
  ConfigValues();  // all defaults

  /// Parses "key = value" lines under optional [section] headers. Lines before
  /// any header belong to [common]. '#' starts a comment.
  static ConfigValues parse(const std::string& text);
  static ConfigValues load(const std::filesystem::path& path);

  /// Throws ConfigError for an unknown key.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  /// Every key, grouped by section, in schema order. Re-parsing this text
  /// yields identical values.
  std::string render() const;

 private:
  std::map<std::string, std::string> values_;
};

struct RunConfig {
  // common
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
  std::string data_source = "synthetic";
  std::filesystem::path data_path;
  std::string label_column = "label";
  bool normalize = true;
  std::size_t classes = 3;
  std::size_t per_class = 300;
  std::size_t dim = 16;
  double spread = 1.5;
  double label_noise = 0.0;
  double imbalance_ratio = 1.0;
  double outlier_fraction = 0.1;
  long long outlier_count = -1;
  bool oversample = false;
  double train_frac = 0.8;
  double val_frac = 0.1;
  double tau = 4.0;
  std::size_t batch_size = 32;
  std::size_t patience = 10;

  // train-teacher
  std::vector<std::size_t> teacher_hidden{64, 64};
  std::size_t teacher_epochs = 200;
  OptimizerConfig teacher_opt;
  bool teacher_on_outliers = false;

  // distill
  std::filesystem::path teacher_file;
  std::vector<std::size_t> student_hidden{16};
  std::size_t epochs = 100;
  PolicyKind policy = PolicyKind::tgeo;
  double alpha = 0.5;
  double wls_gain = 1.0;
  RelationMode relation = RelationMode::full;
  std::size_t fusion_hidden = 32;
  std::size_t fusion_depth = 2;
  bool fusion_zero_init = false;
  OptimizerConfig inner_opt;
  OptimizerConfig outer_opt;
  HypergradMode hypergrad = HypergradMode::unrolled_fd;
  double fd_scale = 0.01;
  bool stop_gradient = true;
  std::size_t alpha_dump_interval = 10;

  // analyze
  std::filesystem::path alpha_dump;
  std::filesystem::path triplet_dump;
  std::filesystem::path report_dir;

  ConfigValues raw;
};

/// Typed, range-checked view of the values. Throws ConfigError naming the key.
RunConfig resolve_config(const ConfigValues& values);

}  // namespace tgkd
