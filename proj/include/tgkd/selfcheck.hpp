#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tgkd/tensor.hpp"

namespace tgkd {

// Randomized oracle suites. Each returns the worst relative error seen over
// `trials` small random configurations (class counts 2..10).

double ce_grad_error(std::size_t trials, std::uint64_t seed);
double kd_grad_error(double tau, std::size_t trials, std::uint64_t seed);
double combined_grad_error(std::size_t trials, std::uint64_t seed);
/// Combined-loss gradient w.r.t. the fusion-net weights through the sigmoid head.
double fusion_head_grad_error(std::size_t trials, std::uint64_t seed);

/// Reference AUC by exhaustive positive/negative pair counting (ties count 1/2),
/// averaged over classes that have both positives and negatives.
double brute_force_macro_auc(const Tensor& probs, std::span<const std::size_t> labels);

/// Worst |macro_auc - brute force| over random fixtures with N <= 200.
double auc_oracle_error(std::size_t fixtures, std::uint64_t seed);

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

std::vector<CheckResult> run_selfcheck();

}  // namespace tgkd
