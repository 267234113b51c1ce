#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "tgkd/bilevel.hpp"
#include "tgkd/errors.hpp"
#include "tgkd/losses.hpp"

using namespace tgkd;

namespace {

DatasetSplits small_splits(std::uint64_t seed, std::size_t per_class = 30) {
  ClusterSpec spec;
  spec.classes = 3;
  spec.per_class = per_class;
  spec.dim = 4;
  spec.spread = 1.0;
  spec.seed = seed;
  Dataset ds = synth_gaussian_clusters(spec);
  normalize_min_max(ds);
  ds = inject_gaussian_outliers(ds, 6, seed + 1);
  return split(ds, 0.6, 0.2, seed + 2);
}

ModelParams small_net(std::vector<std::size_t> widths, std::uint64_t seed) {
  Rng rng(seed);
  return init_mlp(widths, Activation::relu, Activation::identity, rng);
}

// Fixture with a frozen teacher, class table and a tgeo policy.
struct Fixture {
  DatasetSplits splits = small_splits(3);
  ModelParams teacher = small_net({4, 8, 3}, 10);
  DistillSplit train = attach_teacher(splits.train, teacher);
  DistillSplit val = attach_teacher(splits.val, teacher);
  ClassAverageTable table = build_class_averages(train.teacher_probs, splits.train.labels, 3);
  ModelParams theta = small_net({4, 6, 3}, 11);
  RatioPolicy policy = make_policy();

  static RatioPolicy make_policy() {
    Rng rng(12);
    ModelParams omega = make_fusion_net(feature_width(RelationMode::full, 3), 5, 2, rng);
    for (Layer& l : omega.layers) {
      for (double& b : l.bias) b = rng.normal(0.0, 0.2);
    }
    return RatioPolicy::tgeo(std::move(omega), RelationMode::full);
  }

  DistillContext ctx(bool stop_gradient) const {
    return DistillContext{&train, &val, &table, InnerSettings{2.0, stop_gradient}};
  }
};

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

TEST(Hypergradient, ToyUnrolledMatchesClosedForm) {
  EXPECT_LT(hypergrad_oracle_check(HypergradMode::unrolled_fd, 1e-2), 1e-4);
  EXPECT_LT(hypergrad_oracle_check(HypergradMode::unrolled_fd, 1e-3), 1e-4);
}

TEST(Hypergradient, ToyErrorShrinksWithEpsilon) {
  double prev = hypergrad_oracle_check(HypergradMode::unrolled_fd, 1e-2);
  for (double eps : {5e-3, 2e-3, 1e-3}) {
    const double e = hypergrad_oracle_check(HypergradMode::unrolled_fd, eps);
    EXPECT_LT(e, prev) << eps;
    prev = e;
  }
}

TEST(Hypergradient, ToyFirstOrderExactWithoutMixedTerm) {
  EXPECT_LT(hypergrad_oracle_check(HypergradMode::first_order, 1e-2, ToyVariant::no_second_order), 1e-14);
  EXPECT_LT(hypergrad_oracle_check(HypergradMode::unrolled_fd, 1e-2, ToyVariant::no_second_order), 1e-14);
}

TEST(Hypergradient, ToyFirstOrderMissesDominantMixedTerm) {
  EXPECT_GT(hypergrad_oracle_check(HypergradMode::first_order, 1e-2, ToyVariant::dominant_second_order), 1e-2);
  EXPECT_LT(hypergrad_oracle_check(HypergradMode::unrolled_fd, 1e-3, ToyVariant::dominant_second_order), 1e-4);
}

TEST(Hypergradient, ToyClosedFormByHand) {
  // theta' = 0.8 - 0.1 * (2*0.8 - 1.5*0.3 + 0.5*0.3*0.512) = 0.67732
  ScalarToyProblem p;
  const double theta_p = 0.8 - 0.1 * (1.6 - 0.45 + 0.0768);
  const double expected = 0.2 * (0.3 - 1.0) + (theta_p + 0.5) * 0.1 * (1.5 - 0.5 * 0.512);
  EXPECT_NEAR(p.exact_hypergradient(0.8, 0.3, 0.1), expected, 1e-15);
}

TEST(Hypergradient, ModeNames) {
  EXPECT_EQ(parse_hypergrad_mode("first_order"), HypergradMode::first_order);
  EXPECT_EQ(parse_hypergrad_mode(to_string(HypergradMode::unrolled_fd)), HypergradMode::unrolled_fd);
  EXPECT_THROW(parse_hypergrad_mode("exact"), ConfigError);
}

// Brute force: d/d omega of L_val(theta - lr * grad_theta L_train(theta, omega)).
class DistillHypergrad : public ::testing::TestWithParam<bool> {};

TEST_P(DistillHypergrad, MatchesFiniteDifferenceOfUnrolledLoss) {
  const bool stop_gradient = GetParam();
  Fixture f;
  const DistillContext ctx = f.ctx(stop_gradient);
  const std::vector<std::size_t> tb{0, 3, 5, 8, 13, 21, 30, 34};
  const std::vector<std::size_t> vb{0, 1, 2, 4, 7, 9};
  const double lr = 0.5;

  const auto unrolled_val = [&](const RatioPolicy& pol) {
    ModelParams step = f.theta;
    add_scaled(step, inner_objective(f.theta, pol, ctx, tb, 0).grad, -lr);
    return val_objective(step, f.val, vb, nullptr);
  };

  std::vector<double> numeric;
  const std::vector<double> w0 = f.policy.omega().flatten();
  const double h = 1e-6;
  for (std::size_t k = 0; k < w0.size(); ++k) {
    RatioPolicy plus = f.policy;
    RatioPolicy minus = f.policy;
    std::vector<double> wp = w0, wm = w0;
    wp[k] += h;
    wm[k] -= h;
    plus.omega().unflatten(wp);
    minus.omega().unflatten(wm);
    numeric.push_back((unrolled_val(plus) - unrolled_val(minus)) / (2 * h));
  }

  // SGD with lr 1 on omega turns the update into -hypergradient.
  OptimizerConfig inner;
  inner.lr = lr;
  OptimizerConfig outer;
  outer.lr = 1.0;
  BilevelState state(f.theta, f.policy, inner, outer);
  outer_step(state, ctx, tb, vb, HypergradMode::unrolled_fd, 1e-4);
  const std::vector<double> w1 = state.policy.omega().flatten();
  double scale = 0.0;
  for (double v : numeric) scale = std::max(scale, std::abs(v));
  ASSERT_GT(scale, 1e-8);
  for (std::size_t k = 0; k < w0.size(); ++k) {
    EXPECT_NEAR(w0[k] - w1[k], numeric[k], 1e-4 * scale + 1e-9) << k;
  }
  EXPECT_EQ(state.theta, f.theta);  // the outer step leaves theta alone
}

INSTANTIATE_TEST_SUITE_P(StopGradient, DistillHypergrad, ::testing::Values(true, false));

TEST(Distill, FirstOrderHypergradientIsZero) {
  Fixture f;
  OptimizerConfig outer;
  outer.lr = 1.0;
  BilevelState state(f.theta, f.policy, OptimizerConfig{}, outer);
  const std::vector<std::size_t> b{0, 1, 2};
  outer_step(state, f.ctx(true), b, b, HypergradMode::first_order);
  EXPECT_EQ(state.policy.omega(), f.policy.omega());
}

TEST(Distill, InnerGradientThroughAlphaPassesGradCheck) {
  Fixture f;
  const DistillContext ctx = f.ctx(false);
  const std::vector<std::size_t> batch{1, 2, 6, 9, 17};
  const ParamLossFn fn = [&](const ModelParams& p, const Tensor&, ModelParams* g) {
    InnerEval e = inner_objective(p, f.policy, ctx, batch, 0, g != nullptr);
    if (g) *g = std::move(e.grad);
    return e.loss;
  };
  EXPECT_LT(grad_check(f.theta, fn, Tensor::vector({0.0}), 1e-6), 1e-5);
}

TEST(Distill, StopGradientTreatsAlphaAsConstant) {
  Fixture f;
  const DistillContext ctx = f.ctx(true);
  const std::vector<std::size_t> batch{4, 5, 11};
  const InnerEval e = inner_objective(f.theta, f.policy, ctx, batch, 0);
  ModelParams expect = f.theta.zeros_like();
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const std::size_t i = batch[k];
    const ForwardTrace tr = forward_trace(f.theta, f.splits.train.row(i));
    const CombinedLoss c = combine(e.alphas[k], kd_loss(tr.output, row_tensor(f.train.teacher_logits, i), 2.0),
                                   ce_loss(tr.output, f.splits.train.labels[i]));
    add_scaled(expect, backward(f.theta, tr, c.grad), 1.0 / 3.0);
  }
  const auto a = e.grad.flatten();
  const auto b = expect.flatten();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-14);
}

TEST(Distill, TgeoAlphaStrictlyInsideUnitInterval) {
  Fixture f;
  const auto snaps = snapshot(f.theta, f.policy, f.ctx(true), 0);
  ASSERT_EQ(snaps.size(), f.splits.train.size());
  for (const auto& s : snaps) {
    EXPECT_GT(s.alpha, 0.0);
    EXPECT_LT(s.alpha, 1.0);
  }
}

TEST(Distill, SnapshotFlags) {
  Fixture f;
  const auto snaps = snapshot(f.theta, f.policy, f.ctx(true), 0);
  for (std::size_t i = 0; i < snaps.size(); ++i) {
    EXPECT_EQ(snaps[i].id, f.splits.train.ids[i]);
    EXPECT_EQ(snaps[i].is_outlier, f.splits.train.is_outlier[i] != 0);
    EXPECT_EQ(snaps[i].teacher_correct,
              argmax(row_tensor(f.train.teacher_probs, i).values()) == f.splits.train.labels[i]);
    EXPECT_DOUBLE_EQ(snaps[i].discrepancy, st_discrepancy(snaps[i].student_probs, snaps[i].teacher_probs));
  }
}

TEST(Distill, OuterStepSkippedForFixedPolicy) {
  Fixture f;
  BilevelState state(f.theta, RatioPolicy::fixed(0.3), OptimizerConfig{}, OptimizerConfig{});
  const std::vector<std::size_t> b{0, 1};
  EXPECT_FALSE(outer_step(state, f.ctx(true), b, b, HypergradMode::unrolled_fd).has_value());
}

TEST(Distill, InnerStepRejectsNonFiniteLoss) {
  Fixture f;
  ModelParams bad = f.theta;
  bad.layers.back().bias[0] = std::numeric_limits<double>::quiet_NaN();
  BilevelState state(bad, RatioPolicy::fixed(0.5), OptimizerConfig{}, OptimizerConfig{});
  const std::vector<std::size_t> b = iota_n(f.splits.train.size());
  EXPECT_THROW(inner_step(state, f.ctx(true), b), Error);
}

namespace {

TrainSettings quick_settings(std::size_t epochs) {
  TrainSettings s;
  s.epochs = epochs;
  s.batch_size = 8;
  s.patience = epochs + 1;
  s.inner.tau = 2.0;
  s.inner_opt.lr = 0.1;
  s.outer_opt.kind = OptimizerKind::adam;
  s.outer_opt.lr = 0.01;
  s.seed = 42;
  return s;
}

}  // namespace

TEST(Train, FixedZeroAlphaEqualsCrossEntropyTraining) {
  Fixture f;
  const TrainSettings s = quick_settings(5);
  const TrainResult r = train(s, f.splits, f.teacher, f.theta, RatioPolicy::fixed(0.0));

  // Independent CE-only loop over the same batching stream.
  ModelParams p = f.theta;
  Optimizer opt(s.inner_opt, p);
  Rng rng = Rng::stream(s.seed, "batching");
  std::vector<std::size_t> order = iota_n(f.splits.train.size());
  for (std::size_t e = 0; e < s.epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += s.batch_size) {
      const std::size_t end = std::min(order.size(), start + s.batch_size);
      ModelParams g = p.zeros_like();
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const ForwardTrace tr = forward_trace(p, f.splits.train.row(order[k]));
        add_scaled(g, backward(p, tr, ce_loss(tr.output, f.splits.train.labels[order[k]]).grad), scale);
      }
      opt.step(p, g);
    }
  }
  EXPECT_EQ(r.final_student, p);
}

TEST(Train, PoliciesShareDataOrder) {
  Fixture f;
  const TrainSettings s = quick_settings(4);
  const TrainResult a = train(s, f.splits, f.teacher, f.theta, RatioPolicy::fixed(0.5));
  const TrainResult b = train(s, f.splits, f.teacher, f.theta, f.policy);
  const TrainResult c = train(s, f.splits, f.teacher, f.theta, RatioPolicy::wls(1.0));
  ASSERT_EQ(a.log.epochs.size(), b.log.epochs.size());
  for (std::size_t e = 0; e < a.log.epochs.size(); ++e) {
    EXPECT_EQ(a.log.epochs[e].batch_checksum, b.log.epochs[e].batch_checksum);
    EXPECT_EQ(a.log.epochs[e].batch_checksum, c.log.epochs[e].batch_checksum);
  }
  EXPECT_NE(a.log.epochs[0].batch_checksum, a.log.epochs[1].batch_checksum);
}

TEST(Train, ZeroOmegaWithoutOuterStepsMatchesHalf) {
  Fixture f;
  TrainSettings s = quick_settings(4);
  s.outer_opt.lr = 0.0;
  RatioPolicy zero = RatioPolicy::tgeo(f.policy.omega().zeros_like(), RelationMode::full);
  const TrainResult a = train(s, f.splits, f.teacher, f.theta, zero);
  const TrainResult b = train(s, f.splits, f.teacher, f.theta, RatioPolicy::fixed(0.5));
  EXPECT_EQ(a.final_student, b.final_student);
  for (std::size_t e = 0; e < a.log.epochs.size(); ++e) {
    EXPECT_EQ(a.log.epochs[e].train_loss, b.log.epochs[e].train_loss);
  }
}

TEST(Train, Deterministic) {
  Fixture f;
  const TrainSettings s = quick_settings(3);
  const TrainResult a = train(s, f.splits, f.teacher, f.theta, f.policy);
  const TrainResult b = train(s, f.splits, f.teacher, f.theta, f.policy);
  EXPECT_EQ(a.final_student, b.final_student);
  EXPECT_EQ(a.policy.omega(), b.policy.omega());
  EXPECT_NE(a.policy.omega(), f.policy.omega());
}

TEST(Train, LogsAlphaAtConfiguredEpochs) {
  Fixture f;
  TrainSettings s = quick_settings(7);
  s.alpha_dump_interval = 3;
  const TrainResult r = train(s, f.splits, f.teacher, f.theta, f.policy);
  EXPECT_EQ(r.log.logged_epochs, (std::vector<std::size_t>{1, 3, 6, 7}));
  EXPECT_EQ(r.log.alphas.size(), 4 * f.splits.train.size());
  EXPECT_EQ(r.final_snapshot.size(), f.splits.train.size());
  for (const auto& e : r.log.epochs) {
    EXPECT_TRUE(e.outlier_alpha.has_value());
    EXPECT_TRUE(e.normal_alpha.has_value());
  }
}

TEST(Train, EarlyStopsOnFlatValidation) {
  Fixture f;
  TrainSettings s = quick_settings(50);
  s.patience = 2;
  s.inner_opt.lr = 1e-300;  // updates vanish, accuracy stays flat
  const TrainResult r = train(s, f.splits, f.teacher, f.theta, RatioPolicy::fixed(0.5));
  EXPECT_TRUE(r.log.early_stopped);
  EXPECT_EQ(r.log.epochs.size(), 3u);
  EXPECT_EQ(r.log.best_epoch, 1u);
}

TEST(Train, RejectsMismatchedStudent) {
  Fixture f;
  EXPECT_THROW(train(quick_settings(1), f.splits, f.teacher, small_net({5, 3, 3}, 1), RatioPolicy::fixed(0.5)),
               DataError);
}

TEST(Train, SupervisedTeacherLearnsSeparableClusters) {
  ClusterSpec spec;
  spec.classes = 3;
  spec.per_class = 60;
  spec.dim = 4;
  spec.spread = 0.2;
  spec.seed = 8;
  const Dataset ds = synth_gaussian_clusters(spec);
  OptimizerConfig opt;
  opt.lr = 0.1;
  opt.momentum = 0.9;
  const ModelParams net = train_supervised(small_net({4, 16, 3}, 2), ds, opt, 30, 16, 1);
  EXPECT_GT(accuracy(predict_probs(net, ds), ds.labels), 0.95);
}

TEST(Train, PerClassAccuracy) {
  Dataset ds;
  ds.features = Tensor(std::vector<std::size_t>{3, 1}, std::vector<double>{1.0, -1.0, 2.0});
  ds.labels = {0, 0, 1};
  ds.is_outlier = {0, 0, 0};
  ds.ids = {0, 1, 2};
  ds.classes = 2;
  // Logits (x, -x): class 0 wins for positive x.
  ModelParams net;
  net.layers.push_back({Tensor(std::vector<std::size_t>{2, 1}, std::vector<double>{1.0, -1.0}), Tensor({2}),
                        Activation::identity});
  const Tensor acc = per_class_accuracy(net, ds);
  EXPECT_DOUBLE_EQ(acc[0], 0.5);
  EXPECT_DOUBLE_EQ(acc[1], 0.0);
}

TEST(Train, BatchesPerEpoch) {
  EXPECT_EQ(batches_per_epoch(600, 32), 19u);
  EXPECT_EQ(batches_per_epoch(64, 32), 2u);
  EXPECT_THROW(batches_per_epoch(10, 0), ConfigError);
}
