#include "tgkd/data.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tgkd/errors.hpp"
#include "tgkd/rng.hpp"

namespace tgkd {

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t y : labels) ++counts.at(y);
  return counts;
}

std::size_t Dataset::max_id() const {
  return ids.empty() ? 0 : *std::max_element(ids.begin(), ids.end());
}

void Dataset::validate() const {
  const std::size_t n = labels.size();
  if (n == 0) throw DataError("dataset is empty");
  if (features.rank() != 2 || features.rows() != n || is_outlier.size() != n || ids.size() != n) {
    throw DataError("dataset columns have inconsistent lengths");
  }
  if (classes < 2) throw DataError("dataset needs at least two classes");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= classes) throw DataError("label out of range at row " + std::to_string(i));
  }
  if (!features.all_finite()) throw DataError("dataset has non-finite features");
  if (image_mode) {
    for (double v : features) {
      if (v < 0.0 || v > 1.0) throw DataError("image-mode feature outside [0, 1]");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> positions) const {
  Dataset out;
  out.classes = classes;
  out.image_mode = image_mode;
  out.provenance = provenance;
  out.features = Tensor::matrix(positions.size(), dim());
  out.labels.reserve(positions.size());
  out.is_outlier.reserve(positions.size());
  out.ids.reserve(positions.size());
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const std::size_t i = positions[k];
    auto src = features.row(i);
    std::copy(src.begin(), src.end(), out.features.row(k).begin());
    out.labels.push_back(labels[i]);
    out.is_outlier.push_back(is_outlier[i]);
    out.ids.push_back(ids[i]);
  }
  return out;
}

std::size_t DatasetSplits::max_id() const {
  return std::max({train.max_id(), val.max_id(), test.max_id()});
}

void normalize_min_max(Dataset& dataset) {
  const std::size_t n = dataset.size();
  const std::size_t d = dataset.dim();
  for (std::size_t j = 0; j < d; ++j) {
    double lo = dataset.features.at(0, j);
    double hi = lo;
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, dataset.features.at(i, j));
      hi = std::max(hi, dataset.features.at(i, j));
    }
    const double range = hi - lo;
    for (std::size_t i = 0; i < n; ++i) {
      double& v = dataset.features.at(i, j);
      v = range > 0.0 ? std::clamp((v - lo) / range, 0.0, 1.0) : 0.0;
    }
  }
  dataset.image_mode = true;
}

// ---- delimited text ----

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_number(const std::string& cell, std::size_t row) {
  const std::string t = trim(cell);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (t.empty() || used != t.size() || !std::isfinite(v)) {
    throw DataError("row " + std::to_string(row) + ": bad number '" + cell + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Dataset load_delimited(const std::filesystem::path& path, const std::string& label_column,
                       bool normalize) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw DataError(path.string() + " is empty");
  const std::vector<std::string> header = split_csv_line(line);
  std::size_t label_pos = header.size();
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (trim(header[j]) == label_column) label_pos = j;
  }
  if (label_pos == header.size()) {
    throw DataError(path.string() + " has no '" + label_column + "' column");
  }

  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const double v = parse_number(cells[j], row);
      if (j != label_pos) {
        values.push_back(v);
      } else if (v < 0.0 || v != std::floor(v)) {
        throw DataError("row " + std::to_string(row) + ": label '" + trim(cells[j]) +
                        "' is not a nonnegative integer");
      } else {
        labels.push_back(static_cast<std::size_t>(v));
      }
    }
    ++row;
  }
  if (labels.empty()) throw DataError(path.string() + " has no data rows");

  Dataset ds;
  const std::size_t n = labels.size();
  ds.features = Tensor({n, header.size() - 1}, std::move(values));
  ds.classes = std::max<std::size_t>(2, *std::max_element(labels.begin(), labels.end()) + 1);
  ds.labels = std::move(labels);
  ds.is_outlier.assign(n, 0);
  ds.ids.resize(n);
  std::iota(ds.ids.begin(), ds.ids.end(), std::size_t{0});
  ds.provenance = "file:" + path.string();
  if (normalize) normalize_min_max(ds);
  ds.validate();
  return ds;
}

void save_delimited(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t j = 0; j < dataset.dim(); ++j) out << 'f' << j << ',';
  out << "label\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (double v : dataset.features.row(i)) out << format_double(v) << ',';
    out << dataset.labels[i] << '\n';
  }
}

// ---- generation and resampling ----

Dataset synth_gaussian_clusters(const ClusterSpec& spec) {
  if (spec.classes < 2) throw ConfigError("classes must be at least 2");
  if (spec.per_class < 1) throw ConfigError("per_class must be at least 1");
  if (spec.dim < 1) throw ConfigError("dim must be at least 1");
  if (!(spec.spread > 0.0)) throw ConfigError("spread must be positive");
  if (!(spec.label_noise >= 0.0 && spec.label_noise < 1.0)) {
    throw ConfigError("label_noise must lie in [0, 1)");
  }
  if (!(spec.imbalance_ratio >= 1.0)) throw ConfigError("imbalance_ratio must be at least 1");
  Rng rng(spec.seed);
  Tensor centers = Tensor::matrix(spec.classes, spec.dim);
  for (double& v : centers) v = rng.normal();

  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const std::size_t count =
        c == 0 ? spec.per_class
               : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                              static_cast<double>(spec.per_class) / spec.imbalance_ratio)));
    labels.insert(labels.end(), count, c);
  }
  const std::size_t n = labels.size();
  Dataset ds;
  ds.classes = spec.classes;
  ds.features = Tensor::matrix(n, spec.dim);
  ds.labels = std::move(labels);
  ds.is_outlier.assign(n, 0);
  ds.ids.resize(n);
  std::iota(ds.ids.begin(), ds.ids.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    auto row = ds.features.row(i);
    for (std::size_t j = 0; j < spec.dim; ++j) {
      row[j] = centers.at(ds.labels[i], j) + spec.spread * rng.normal();
    }
  }

  const auto flips = static_cast<std::size_t>(std::llround(spec.label_noise * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  for (std::size_t k = 0; k < flips; ++k) {
    std::size_t& y = ds.labels[order[k]];
    y = (y + 1 + rng.index(spec.classes - 1)) % spec.classes;
  }
  ds.provenance = "synthetic:clusters";
  return ds;
}

Dataset oversample_minority(const Dataset& dataset, std::uint64_t seed, std::size_t first_new_id) {
  dataset.validate();
  const std::vector<std::size_t> counts = dataset.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw DataError("class " + std::to_string(c) + " is empty; cannot oversample");
  }
  const std::size_t target = *std::max_element(counts.begin(), counts.end());

  std::vector<std::vector<std::size_t>> members(dataset.classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) members[dataset.labels[i]].push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> positions(dataset.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  for (std::size_t c = 0; c < dataset.classes; ++c) {
    for (std::size_t k = counts[c]; k < target; ++k) {
      positions.push_back(members[c][rng.index(members[c].size())]);
    }
  }
  Dataset out = dataset.subset(positions);
  std::size_t next = first_new_id;
  for (std::size_t k = dataset.size(); k < out.size(); ++k) out.ids[k] = next++;
  return out;
}

Dataset oversample_minority(const Dataset& dataset, std::uint64_t seed) {
  return oversample_minority(dataset, seed, dataset.max_id() + 1);
}

Dataset inject_gaussian_outliers(const Dataset& dataset, std::size_t count, std::uint64_t seed) {
  if (!dataset.image_mode) throw DataError("outlier injection requires image-mode features in [0, 1]");
  if (count == 0) return dataset;
  Rng rng(seed);
  const std::size_t n = dataset.size();
  const std::size_t d = dataset.dim();
  Dataset out = dataset;
  std::vector<double> values(dataset.features.begin(), dataset.features.end());
  values.reserve((n + count) * d);
  std::size_t next = dataset.max_id() + 1;
  for (std::size_t k = 0; k < count; ++k) {
    for (std::size_t j = 0; j < d; ++j) values.push_back(std::clamp(rng.normal(0.5, 1.0), 0.0, 1.0));
    out.labels.push_back(rng.index(dataset.classes));
    out.is_outlier.push_back(1);
    out.ids.push_back(next++);
  }
  out.features = Tensor({n + count, d}, std::move(values));
  return out;
}

DatasetSplits split(const Dataset& dataset, double train_frac, double val_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0) || !(val_frac > 0.0) || !(train_frac + val_frac < 1.0)) {
    throw ConfigError("split fractions must be positive and sum to less than 1");
  }
  dataset.validate();
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> members(dataset.classes);
  std::vector<std::size_t> train_pos;
  std::vector<std::size_t> val_pos;
  std::vector<std::size_t> test_pos;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset.is_outlier[i]) {
      train_pos.push_back(i);
    } else {
      members[dataset.labels[i]].push_back(i);
    }
  }
  for (std::size_t c = 0; c < dataset.classes; ++c) {
    std::vector<std::size_t>& m = members[c];
    const double nc = static_cast<double>(m.size());
    const auto n_train = static_cast<std::size_t>(std::llround(nc * train_frac));
    const auto n_val = static_cast<std::size_t>(std::llround(nc * val_frac));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= m.size()) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(m.size()) +
                      " samples, too few to appear in every split");
    }
    rng.shuffle(m);
    train_pos.insert(train_pos.end(), m.begin(), m.begin() + n_train);
    val_pos.insert(val_pos.end(), m.begin() + n_train, m.begin() + n_train + n_val);
    test_pos.insert(test_pos.end(), m.begin() + n_train + n_val, m.end());
  }
  // Keep original row order inside each split.
  std::sort(train_pos.begin(), train_pos.end());
  std::sort(val_pos.begin(), val_pos.end());
  std::sort(test_pos.begin(), test_pos.end());
  return {dataset.subset(train_pos), dataset.subset(val_pos), dataset.subset(test_pos)};
}

// ---- binary fixture ----

namespace {

constexpr char kDatasetMagic[4] = {'T', 'G', 'D', 'S'};

template <typename T>
void put_le(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffU);
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw DataError("dataset file truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_dataset_binary(std::ostream& out, const Dataset& dataset) {
  dataset.validate();
  out.write(kDatasetMagic, 4);
  put_le<std::uint32_t>(out, kDatasetFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.dim()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.classes));
  for (double v : dataset.features) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  for (std::size_t y : dataset.labels) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(y));
  for (std::uint8_t f : dataset.is_outlier) put_le<std::uint8_t>(out, f);
}

Dataset read_dataset_binary(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw DataError("not a dataset file (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kDatasetFormatVersion) {
    throw DataError("unsupported dataset format version " + std::to_string(version));
  }
  const auto n = get_le<std::uint32_t>(in);
  const auto d = get_le<std::uint32_t>(in);
  const auto c = get_le<std::uint32_t>(in);
  std::vector<double> values(static_cast<std::size_t>(n) * d);
  for (double& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  Dataset ds;
  ds.features = Tensor({n, d}, std::move(values));
  ds.classes = c;
  ds.labels.resize(n);
  for (std::size_t& y : ds.labels) y = get_le<std::uint32_t>(in);
  ds.is_outlier.resize(n);
  for (std::uint8_t& f : ds.is_outlier) f = get_le<std::uint8_t>(in);
  ds.ids.resize(n);
  std::iota(ds.ids.begin(), ds.ids.end(), std::size_t{0});
  ds.image_mode = std::all_of(ds.features.begin(), ds.features.end(),
                              [](double v) { return v >= 0.0 && v <= 1.0; });
  ds.provenance = "binary";
  ds.validate();
  return ds;
}

}  // namespace tgkd
