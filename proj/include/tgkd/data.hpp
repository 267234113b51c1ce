#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tgkd/tensor.hpp"

namespace tgkd {

/// Labelled feature matrix. Every row carries a stable sample id that
/// survives splitting, oversampling and outlier injection.
struct Dataset {
  Tensor features;                   // [N x d]
  std::vector<std::size_t> labels;   // in [0, classes)
  std::vector<std::uint8_t> is_outlier;
  std::vector<std::size_t> ids;
  std::size_t classes = 0;
  bool image_mode = false;  // all features in [0, 1]
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  Tensor row(std::size_t i) const { return row_tensor(features, i); }
  std::vector<std::size_t> class_counts() const;
  std::size_t max_id() const;

  /// Throws DataError when any invariant is broken.
  void validate() const;
  /// Rows at the given positions, in that order.
  Dataset subset(std::span<const std::size_t> positions) const;
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;

  std::size_t max_id() const;
};

/// Per-column min-max scaling to [0, 1]; constant columns become 0. Sets image mode.
void normalize_min_max(Dataset& dataset);

/// Comma-separated file with a header row. `label_column` names the class
/// column; every other column is a feature.
Dataset load_delimited(const std::filesystem::path& path, const std::string& label_column = "label",
                       bool normalize = false);
void save_delimited(const std::filesystem::path& path, const Dataset& dataset);

struct ClusterSpec {
  std::size_t classes = 3;
  std::size_t per_class = 100;
  std::size_t dim = 16;
  double spread = 1.0;
  double label_noise = 0.0;
  double imbalance_ratio = 1.0;  // classes 1..C-1 get round(per_class / ratio) samples
  std::uint64_t seed = 0;
};

/// Isotropic Gaussian clusters around per-class centers drawn from a
/// standard normal. Class 0 holds per_class samples. Exactly
/// round(label_noise * N) samples receive a uniformly chosen different label.
Dataset synth_gaussian_clusters(const ClusterSpec& spec);

/// Duplicates random members of each smaller class until all class counts
/// equal the largest. New rows get ids starting at `first_new_id`.
Dataset oversample_minority(const Dataset& dataset, std::uint64_t seed, std::size_t first_new_id);
Dataset oversample_minority(const Dataset& dataset, std::uint64_t seed);

/// Appends `count` rows of Normal(0.5, 1) noise clipped to [0, 1] with
/// uniformly random labels, flagged as outliers. Requires image mode.
Dataset inject_gaussian_outliers(const Dataset& dataset, std::size_t count, std::uint64_t seed);

/// Stratified shuffle split. Outliers always go to train; the remainder
/// after train and val fractions is the test split.
DatasetSplits split(const Dataset& dataset, double train_frac, double val_frac, std::uint64_t seed);

// Binary dataset fixture: "TGDS", u32 version, u32 N, u32 d, u32 C, then N*d
// f64 features, N u32 labels, N u8 outlier flags, little-endian. Ids are the
// row positions.
inline constexpr std::uint32_t kDatasetFormatVersion = 1;
void write_dataset_binary(std::ostream& out, const Dataset& dataset);
Dataset read_dataset_binary(std::istream& in);

}  // namespace tgkd
