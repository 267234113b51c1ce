#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgkd/geometry.hpp"
#include "tgkd/tensor.hpp"

namespace tgkd {

struct MetricReport {
  double acc = 0.0;
  double macro_auc = 0.0;
  double nll = 0.0;
  std::size_t n = 0;
};

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor& probs, std::span<const std::size_t> labels);

/// Unweighted mean of one-vs-rest AUCs with midrank ties. Classes without
/// positives or negatives are skipped and listed in `skipped`; if every
/// class is skipped a DataError is thrown.
double macro_auc(const Tensor& probs, std::span<const std::size_t> labels,
                 std::vector<std::size_t>* skipped = nullptr);

/// Mean of -log p(true class), probabilities clamped below at 1e-12.
double nll(const Tensor& probs, std::span<const std::size_t> labels);

MetricReport evaluate(const Tensor& probs, std::span<const std::size_t> labels);

/// Teacher-correct (D) / teacher-incorrect (D') split of a sample set,
/// each cut into five groups by ascending student-teacher discrepancy.
struct DiscrepancyGrouping {
  static constexpr std::size_t kGroups = 5;

  std::vector<bool> teacher_correct;
  std::vector<double> discrepancy;
  std::vector<std::size_t> group;  // 0..4 within the sample's subset
  // Cut values between consecutive groups (first discrepancy of groups 1..4);
  // absent when the following group is empty.
  std::array<std::array<std::optional<double>, 4>, 2> boundaries{};  // [incorrect, correct]
  bool correct_empty = false;
  bool incorrect_empty = false;
  std::vector<std::string> warnings;
};

DiscrepancyGrouping discrepancy_grouping(std::span<const PredictionTriplet> triplets);

/// One logged fusion ratio.
struct AlphaRecord {
  std::size_t id = 0;
  std::size_t epoch = 0;
  double alpha = 0.0;
  bool teacher_correct = false;
  double discrepancy = 0.0;
  bool is_outlier = false;
};

enum class RatioPartition : std::size_t {
  incorrect_large = 0,
  incorrect_small = 1,
  correct_large = 2,
  correct_small = 3,
};
inline constexpr std::size_t kPartitionCount = 4;
std::string to_string(RatioPartition p);

struct RatioReportRow {
  std::size_t epoch = 0;
  std::array<std::optional<double>, kPartitionCount> mean{};  // absent if the cell is empty
  std::array<std::size_t, kPartitionCount> count{};
};

/// Sizes of the top and bottom slices ("large"/"small" discrepancy) of a subset of n.
std::size_t extreme_slice_size(std::size_t n);

/// Mean ratio per (epoch x partition). Within each correctness subset of an
/// epoch, the top and bottom 20% by discrepancy form the large/small cells.
std::vector<RatioReportRow> fusion_ratio_report(std::span<const AlphaRecord> log,
                                                std::span<const std::size_t> epochs);

/// Bin centers and densities of `values` over [0, 1].
struct Histogram {
  std::vector<double> centers;
  std::vector<double> density;
  std::vector<std::size_t> counts;
};
Histogram ratio_histogram(std::span<const double> values, std::size_t bins = 20);

/// True once the best (strictly improved) value is at least `patience`
/// evaluations behind the latest one.
bool early_stop(std::span<const double> history, std::size_t patience);

}  // namespace tgkd
