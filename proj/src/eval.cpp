#include "tgkd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "tgkd/errors.hpp"

namespace tgkd {

namespace {

void check_rows(const Tensor& probs, std::span<const std::size_t> labels, const char* what) {
  if (probs.rank() != 2 || probs.rows() != labels.size()) {
    throw std::invalid_argument(std::string(what) + ": probs rows and labels differ in length");
  }
  for (std::size_t y : labels) {
    if (y >= probs.cols()) throw std::invalid_argument(std::string(what) + ": label out of range");
  }
}

// One-vs-rest AUC via midranks: (sum of positive ranks - P(P+1)/2) / (P*N).
std::optional<double> binary_auc(const Tensor& probs, std::span<const std::size_t> labels,
                                 std::size_t cls) {
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probs.at(a, cls) < probs.at(b, cls);
  });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && probs.at(order[j + 1], cls) == probs.at(order[i], cls)) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == cls) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j + 1;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

}  // namespace

double accuracy(const Tensor& probs, std::span<const std::size_t> labels) {
  check_rows(probs, labels, "accuracy");
  if (labels.empty()) throw std::invalid_argument("accuracy: no samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (argmax(probs.row(i)) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double macro_auc(const Tensor& probs, std::span<const std::size_t> labels,
                 std::vector<std::size_t>* skipped) {
  check_rows(probs, labels, "macro_auc");
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < probs.cols(); ++c) {
    if (auto auc = binary_auc(probs, labels, c)) {
      sum += *auc;
      ++used;
    } else if (skipped != nullptr) {
      skipped->push_back(c);
    }
  }
  if (used == 0) throw DataError("macro_auc: no class has both positives and negatives");
  return sum / static_cast<double>(used);
}

double nll(const Tensor& probs, std::span<const std::size_t> labels) {
  check_rows(probs, labels, "nll");
  if (labels.empty()) throw std::invalid_argument("nll: no samples");
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    s -= std::log(std::max(probs.at(i, labels[i]), 1e-12));
  }
  return s / static_cast<double>(labels.size());
}

MetricReport evaluate(const Tensor& probs, std::span<const std::size_t> labels) {
  MetricReport r;
  r.acc = accuracy(probs, labels);
  r.macro_auc = macro_auc(probs, labels);
  r.nll = nll(probs, labels);
  r.n = labels.size();
  return r;
}

DiscrepancyGrouping discrepancy_grouping(std::span<const PredictionTriplet> triplets) {
  if (triplets.empty()) throw DataError("discrepancy_grouping: no samples");
  DiscrepancyGrouping g;
  const std::size_t n = triplets.size();
  g.teacher_correct.resize(n);
  g.discrepancy.resize(n);
  g.group.assign(n, 0);
  std::array<std::vector<std::size_t>, 2> subsets;  // [incorrect, correct]
  for (std::size_t i = 0; i < n; ++i) {
    const PredictionTriplet& t = triplets[i];
    g.teacher_correct[i] = argmax(t.teacher.values()) == t.class_index;
    g.discrepancy[i] = st_discrepancy(t.student, t.teacher);
    subsets[g.teacher_correct[i] ? 1 : 0].push_back(i);
  }
  g.incorrect_empty = subsets[0].empty();
  g.correct_empty = subsets[1].empty();

  for (std::size_t s = 0; s < 2; ++s) {
    std::vector<std::size_t>& members = subsets[s];
    if (members.empty()) {
      g.warnings.push_back(s ? "teacher-correct subset is empty" : "teacher-incorrect subset is empty");
      continue;
    }
    if (members.size() < DiscrepancyGrouping::kGroups) {
      g.warnings.push_back(std::string(s ? "teacher-correct" : "teacher-incorrect") +
                           " subset has fewer than 5 samples; groups are degenerate");
    }
    std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return g.discrepancy[a] < g.discrepancy[b];
    });
    const std::size_t base = members.size() / DiscrepancyGrouping::kGroups;
    const std::size_t extra = members.size() % DiscrepancyGrouping::kGroups;
    std::size_t pos = 0;
    for (std::size_t grp = 0; grp < DiscrepancyGrouping::kGroups; ++grp) {
      const std::size_t size = base + (grp < extra ? 1 : 0);
      if (grp > 0 && size > 0) g.boundaries[s][grp - 1] = g.discrepancy[members[pos]];
      for (std::size_t k = 0; k < size; ++k) g.group[members[pos++]] = grp;
    }
  }
  return g;
}

std::string to_string(RatioPartition p) {
  switch (p) {
    case RatioPartition::incorrect_large: return "teacher_wrong_large_st";
    case RatioPartition::incorrect_small: return "teacher_wrong_small_st";
    case RatioPartition::correct_large: return "teacher_right_large_st";
    case RatioPartition::correct_small: return "teacher_right_small_st";
  }
  return "?";
}

std::size_t extreme_slice_size(std::size_t n) {
  if (n == 0) return 0;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
}

std::vector<RatioReportRow> fusion_ratio_report(std::span<const AlphaRecord> log,
                                                std::span<const std::size_t> epochs) {
  std::vector<RatioReportRow> rows;
  for (std::size_t epoch : epochs) {
    std::array<std::vector<const AlphaRecord*>, 2> subsets;
    for (const AlphaRecord& r : log) {
      if (r.epoch == epoch) subsets[r.teacher_correct ? 1 : 0].push_back(&r);
    }
    RatioReportRow row;
    row.epoch = epoch;
    for (std::size_t s = 0; s < 2; ++s) {
      auto& members = subsets[s];
      std::stable_sort(members.begin(), members.end(), [](const AlphaRecord* a, const AlphaRecord* b) {
        return a->discrepancy < b->discrepancy;
      });
      const std::size_t k = extreme_slice_size(members.size());
      const std::size_t large_cell = s ? 2 : 0;
      const std::size_t small_cell = large_cell + 1;
      if (k == 0) continue;
      double large = 0.0;
      double small = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        small += members[i]->alpha;
        large += members[members.size() - 1 - i]->alpha;
      }
      row.mean[large_cell] = large / static_cast<double>(k);
      row.mean[small_cell] = small / static_cast<double>(k);
      row.count[large_cell] = k;
      row.count[small_cell] = k;
    }
    rows.push_back(row);
  }
  return rows;
}

Histogram ratio_histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  const double width = 1.0 / static_cast<double>(bins);
  for (double v : values) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    auto b = static_cast<std::size_t>(clamped / width);
    ++h.counts[std::min(b, bins - 1)];
  }
  for (std::size_t b = 0; b < bins; ++b) {
    h.centers.push_back((static_cast<double>(b) + 0.5) * width);
    h.density.push_back(values.empty() ? 0.0
                                       : static_cast<double>(h.counts[b]) /
                                             (static_cast<double>(values.size()) * width));
  }
  return h;
}

bool early_stop(std::span<const double> history, std::size_t patience) {
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (history.empty()) return false;
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] > history[best]) best = i;
  }
  return history.size() - 1 - best >= patience;
}

}  // namespace tgkd
