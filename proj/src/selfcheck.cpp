#include "tgkd/selfcheck.hpp"

#include <algorithm>
#include <cmath>

#include "tgkd/bilevel.hpp"
#include "tgkd/eval.hpp"
#include "tgkd/fusion.hpp"
#include "tgkd/geometry.hpp"
#include "tgkd/losses.hpp"
#include "tgkd/network.hpp"
#include "tgkd/rng.hpp"

namespace tgkd {

namespace {

constexpr double kEps = 1e-5;

Tensor random_logits(Rng& rng, std::size_t c, double scale) {
  std::vector<double> z(c);
  for (double& v : z) v = rng.normal(0.0, scale);
  return Tensor::vector(std::move(z));
}

std::size_t random_classes(Rng& rng) { return 2 + rng.index(9); }

}  // namespace

double ce_grad_error(std::size_t trials, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "check_ce");
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t c = random_classes(rng);
    const std::size_t label = rng.index(c);
    const Tensor z = random_logits(rng, c, 2.0);
    const TensorLossFn fn = [label](const Tensor& x, Tensor* g) {
      LossValue l = ce_loss(x, label);
      if (g) *g = std::move(l.grad);
      return l.value;
    };
    worst = std::max(worst, grad_check(fn, z, kEps));
  }
  return worst;
}

double kd_grad_error(double tau, std::size_t trials, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "check_kd");
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t c = random_classes(rng);
    const Tensor zt = random_logits(rng, c, 3.0);
    const Tensor zs = random_logits(rng, c, 2.0);
    const TensorLossFn fn = [&zt, tau](const Tensor& x, Tensor* g) {
      LossValue l = kd_loss(x, zt, tau);
      if (g) *g = std::move(l.grad);
      return l.value;
    };
    worst = std::max(worst, grad_check(fn, zs, kEps));
  }
  return worst;
}

double combined_grad_error(std::size_t trials, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "check_combined");
  const double taus[] = {1.0, 1.5, 4.0};
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t c = random_classes(rng);
    const std::size_t label = rng.index(c);
    const double alpha = rng.uniform();
    const double tau = taus[t % 3];
    const Tensor zt = random_logits(rng, c, 3.0);
    const Tensor zs = random_logits(rng, c, 2.0);
    const TensorLossFn fn = [&, label, alpha, tau](const Tensor& x, Tensor* g) {
      CombinedLoss l = combine(alpha, kd_loss(x, zt, tau), ce_loss(x, label));
      if (g) *g = std::move(l.grad);
      return l.value;
    };
    worst = std::max(worst, grad_check(fn, zs, kEps));
  }
  return worst;
}

double fusion_head_grad_error(std::size_t trials, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "check_fusion");
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t c = random_classes(rng);
    const std::size_t label = rng.index(c);
    const double tau = 1.0 + 3.0 * rng.uniform();
    const Tensor s = softmax_temp(random_logits(rng, c, 2.0), 1.0);
    const Tensor zt = random_logits(rng, c, 3.0);
    const Tensor tp = softmax_temp(zt, 1.0);
    const Tensor tbar = softmax_temp(random_logits(rng, c, 1.0), 1.0);
    const PredictionTriplet tri = PredictionTriplet::make(s, tp, label);
    Tensor table_rows = Tensor::matrix(c, c);
    for (std::size_t r = 0; r < c; ++r) std::copy(tbar.begin(), tbar.end(), table_rows.row(r).begin());
    const ClassAverageTable table(table_rows);
    const Tensor delta = build_feature(tri, table, RelationMode::full);

    const Tensor zs = random_logits(rng, c, 2.0);
    const LossValue kd = kd_loss(zs, zt, tau);
    const LossValue gt = ce_loss(zs, label);
    const std::size_t depth = 1 + rng.index(3);
    ModelParams omega = make_fusion_net(delta.size(), 2 + rng.index(6), depth, rng);
    // Nonzero biases so relu kinks are not sitting at the evaluation point.
    for (Layer& layer : omega.layers) {
      for (double& b : layer.bias) b = rng.normal(0.0, 0.3);
    }
    const ParamLossFn fn = [&](const ModelParams& w, const Tensor& x, ModelParams* grad) {
      const ForwardTrace trace = forward_trace(w, x);
      const double alpha = trace.output[0];
      const CombinedLoss l = combine(alpha, kd, gt);
      if (grad) {
        // d/d alpha of alpha*kd + (1-alpha)*gt.
        *grad = backward(w, trace, Tensor::vector({kd.value - gt.value}));
      }
      return l.value;
    };
    worst = std::max(worst, grad_check(omega, fn, delta, kEps));
  }
  return worst;
}

double brute_force_macro_auc(const Tensor& probs, std::span<const std::size_t> labels) {
  const std::size_t n = probs.rows();
  const std::size_t classes = probs.cols();
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    double score = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] != c) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (labels[j] == c) continue;
        const double a = probs.at(i, c);
        const double b = probs.at(j, c);
        score += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
        pairs += 1.0;
      }
    }
    if (pairs > 0.0) {
      total += score / pairs;
      ++used;
    }
  }
  return used ? total / static_cast<double>(used) : 0.0;
}

double auc_oracle_error(std::size_t fixtures, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "check_auc");
  double worst = 0.0;
  for (std::size_t f = 0; f < fixtures; ++f) {
    const std::size_t n = 2 + rng.index(199);
    const std::size_t c = 2 + rng.index(4);
    const bool coarse = f % 2 == 0;  // coarse scores force plenty of ties
    Tensor probs = Tensor::matrix(n, c);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = i < c ? i : rng.index(c);  // at least one positive per class when n >= c
      double sum = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        double v = rng.uniform() + (k == labels[i] ? 0.3 : 0.0);
        if (coarse) v = std::round(v * 4.0) / 4.0 + 0.05;
        probs.at(i, k) = v;
        sum += v;
      }
      for (std::size_t k = 0; k < c; ++k) probs.at(i, k) /= sum;
    }
    const double got = macro_auc(probs, labels);
    worst = std::max(worst, std::abs(got - brute_force_macro_auc(probs, labels)));
  }
  return worst;
}

std::vector<CheckResult> run_selfcheck() {
  std::vector<CheckResult> out;
  const auto add = [&out](std::string name, double value, double threshold) {
    out.push_back({std::move(name), value, threshold, value < threshold});
  };
  constexpr std::size_t trials = 100;
  constexpr std::uint64_t seed = 7;
  add("grad ce", ce_grad_error(trials, seed), 1e-5);
  add("grad kd tau=1", kd_grad_error(1.0, trials, seed), 1e-5);
  add("grad kd tau=1.5", kd_grad_error(1.5, trials, seed), 1e-5);
  add("grad kd tau=4", kd_grad_error(4.0, trials, seed), 1e-5);
  add("grad combined", combined_grad_error(trials, seed), 1e-5);
  add("grad fusion head", fusion_head_grad_error(trials, seed), 1e-5);

  const double e2 = hypergrad_oracle_check(HypergradMode::unrolled_fd, 1e-2);
  const double e3 = hypergrad_oracle_check(HypergradMode::unrolled_fd, 1e-3);
  add("hypergrad unrolled_fd eps=1e-2", e2, 1e-4);
  add("hypergrad unrolled_fd eps=1e-3", e3, 1e-4);
  out.push_back({"hypergrad error shrinks with eps", e3, e2, e3 < e2});
  add("hypergrad first_order without mixed term",
      hypergrad_oracle_check(HypergradMode::first_order, 1e-2, ToyVariant::no_second_order), 1e-12);

  add("macro_auc vs pair counting", auc_oracle_error(50, seed), 1e-12);
  const Tensor fixture(std::vector<std::size_t>{4, 2}, std::vector<double>{0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7});
  const std::vector<std::size_t> labels{0, 1, 0, 0};
  add("accuracy fixture", std::abs(accuracy(fixture, labels) - 0.75), 1e-15);
  const Tensor uniform = Tensor::matrix(5, 3, 1.0 / 3.0);
  const std::vector<std::size_t> ul{0, 1, 2, 0, 1};
  add("nll uniform", std::abs(nll(uniform, ul) - std::log(3.0)), 1e-12);
  return out;
}

}  // namespace tgkd
