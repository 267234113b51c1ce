#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgkd/data.hpp"
#include "tgkd/eval.hpp"
#include "tgkd/fusion.hpp"
#include "tgkd/geometry.hpp"
#include "tgkd/network.hpp"

namespace tgkd {

// ---------------------------------------------------------------------------
// Generic one-step-unrolled hypergradient
// ---------------------------------------------------------------------------

enum class HypergradMode { first_order, unrolled_fd };

std::string to_string(HypergradMode m);
HypergradMode parse_hypergrad_mode(const std::string& s);

/// Bilevel problem over flat inner (theta) and outer (omega) variables.
/// The outer objective is the validation loss at the inner solution.
class BilevelProblem {
 public:
  virtual ~BilevelProblem() = default;
  virtual std::vector<double> train_grad_theta(std::span<const double> theta,
                                               std::span<const double> omega) const = 0;
  virtual std::vector<double> train_grad_omega(std::span<const double> theta,
                                               std::span<const double> omega) const = 0;
  virtual std::vector<double> val_grad_theta(std::span<const double> theta,
                                             std::span<const double> omega) const = 0;
  virtual std::vector<double> val_grad_omega(std::span<const double> theta,
                                             std::span<const double> omega) const = 0;
};

/// Approximate d/d omega of L_val(theta - inner_lr * grad_theta L_train(theta, omega), omega).
///
/// first_order keeps only the direct term grad_omega L_val at the looked-ahead
/// theta'. unrolled_fd adds the mixed second-order term
///   -inner_lr * (d/d omega grad_theta L_train)^T v,   v = grad_theta L_val(theta'),
/// estimated by a central difference of grad_omega L_train at theta +/- eps*v
/// with eps = fd_scale / |v|. A zero v leaves only the direct term.
std::vector<double> hypergradient(const BilevelProblem& problem, std::span<const double> theta,
                                  std::span<const double> omega, double inner_lr,
                                  HypergradMode mode, double fd_scale = 0.01);

/// Scalar bilevel problem with quadratic losses plus a quartic coupling:
///   L_train = a/2 theta^2 - b omega theta + k/4 omega theta^4
///   L_val   = 1/2 (theta - target)^2 + mu/2 (omega - omega_ref)^2
/// The quartic term makes the central-difference truncation error visible.
struct ScalarToyProblem final : BilevelProblem {
  double a = 2.0;
  double b = 1.5;
  double k = 0.5;
  double target = -0.5;
  double mu = 0.2;
  double omega_ref = 1.0;

  std::vector<double> train_grad_theta(std::span<const double> theta,
                                       std::span<const double> omega) const override;
  std::vector<double> train_grad_omega(std::span<const double> theta,
                                       std::span<const double> omega) const override;
  std::vector<double> val_grad_theta(std::span<const double> theta,
                                     std::span<const double> omega) const override;
  std::vector<double> val_grad_omega(std::span<const double> theta,
                                     std::span<const double> omega) const override;

  /// Closed-form derivative of the one-step-unrolled validation loss.
  double exact_hypergradient(double theta, double omega, double inner_lr) const;
};

enum class ToyVariant {
  standard,               // every term active
  no_second_order,        // b = k = 0: the mixed term vanishes
  dominant_second_order,  // mu = 0: only the mixed term remains
};

/// |g_hat - g_exact| / max(1, |g_exact|) on the scalar toy problem.
double hypergrad_oracle_check(HypergradMode mode, double fd_scale = 0.01,
                              ToyVariant variant = ToyVariant::standard);

// ---------------------------------------------------------------------------
// Distillation training
// ---------------------------------------------------------------------------

/// A dataset with the frozen teacher's outputs precomputed.
struct DistillSplit {
  const Dataset* data = nullptr;
  Tensor teacher_logits;  // [N x C]
  Tensor teacher_probs;   // [N x C], temperature 1
  std::vector<double> teacher_ce;

  std::size_t size() const { return data->size(); }
};

DistillSplit attach_teacher(const Dataset& data, const ModelParams& teacher);

struct InnerSettings {
  double tau = 4.0;
  bool stop_gradient = true;  // relation vectors treated as constants w.r.t. theta
};

struct DistillContext {
  const DistillSplit* train = nullptr;
  const DistillSplit* val = nullptr;
  const ClassAverageTable* table = nullptr;
  InnerSettings inner;
};

struct StepRecord {
  std::size_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when the outer step did not run
  double mean_alpha = 0.0;
};

struct BilevelState {
  BilevelState(ModelParams student, RatioPolicy fusion, OptimizerConfig inner_cfg,
               OptimizerConfig outer_cfg);

  ModelParams theta;
  RatioPolicy policy;  // holds omega for tgeo
  std::size_t step = 0;
  Optimizer inner_opt;
  Optimizer outer_opt;
  std::vector<StepRecord> history;

  double inner_lr() const { return inner_opt.config().lr; }
  double outer_lr() const { return outer_opt.config().lr; }
};

/// Per-sample and averaged inner objective on one batch.
struct InnerEval {
  double loss = 0.0;
  double mean_alpha = 0.0;
  std::vector<double> alphas;
  ModelParams grad;  // d loss / d theta (empty when not requested)
};

InnerEval inner_objective(const ModelParams& theta, const RatioPolicy& policy,
                          const DistillContext& ctx, std::span<const std::size_t> batch,
                          std::size_t step, bool want_grad = true);

/// Mean validation cross-entropy on a batch (no distillation term).
double val_objective(const ModelParams& theta, const DistillSplit& val,
                     std::span<const std::size_t> batch, ModelParams* grad);

/// One optimizer step of theta on the combined loss. omega is untouched.
/// Throws NumericError on a non-finite loss.
double inner_step(BilevelState& state, const DistillContext& ctx, std::span<const std::size_t> batch);

/// One hypergradient step of omega. theta is untouched. Returns the
/// validation loss at the looked-ahead theta, or nullopt if skipped.
std::optional<double> outer_step(BilevelState& state, const DistillContext& ctx,
                                 std::span<const std::size_t> train_batch,
                                 std::span<const std::size_t> val_batch, HypergradMode mode,
                                 double fd_scale = 0.01);

/// State of every training sample at one point of training.
struct SampleSnapshot {
  std::size_t id = 0;
  std::size_t label = 0;
  Tensor student_probs;
  Tensor teacher_probs;
  double alpha = 0.0;
  bool teacher_correct = false;
  double discrepancy = 0.0;
  bool is_outlier = false;
};

std::vector<SampleSnapshot> snapshot(const ModelParams& theta, const RatioPolicy& policy,
                                     const DistillContext& ctx, std::size_t step);

struct TrainSettings {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::size_t patience = 10;
  InnerSettings inner;
  OptimizerConfig inner_opt;
  OptimizerConfig outer_opt;
  HypergradMode mode = HypergradMode::unrolled_fd;
  double fd_scale = 0.01;
  std::size_t alpha_dump_interval = 10;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_ce = 0.0;
  double val_acc = 0.0;
  double alpha_mean = 0.0;
  double alpha_std = 0.0;
  std::array<std::optional<double>, kPartitionCount> partition_alpha{};
  std::optional<double> outlier_alpha;
  std::optional<double> normal_alpha;
  std::uint64_t batch_checksum = 0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::vector<AlphaRecord> alphas;  // per-sample dumps at logged epochs
  std::vector<std::size_t> logged_epochs;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

struct TrainResult {
  ModelParams student;        // best validation accuracy
  ModelParams final_student;  // at the last epoch run
  RatioPolicy policy;
  TrainingLog log;
  std::vector<SampleSnapshot> final_snapshot;
};

/// Alternates one outer and one inner step per training batch (the outer
/// step only for a learned policy with a positive outer learning rate),
/// evaluates on the validation split once per epoch and stops early after
/// `patience` epochs without strict accuracy improvement.
TrainResult train(const TrainSettings& settings, const DatasetSplits& splits,
                  const ModelParams& teacher, ModelParams student, RatioPolicy policy);

/// Number of optimizer steps per epoch for a training set of size n.
std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size);

/// Plain cross-entropy training, used for the teacher.
ModelParams train_supervised(ModelParams params, const Dataset& data, const OptimizerConfig& opt,
                             std::size_t epochs, std::size_t batch_size, std::uint64_t seed);

/// Softmax outputs of a network for every row of a dataset.
Tensor predict_probs(const ModelParams& params, const Dataset& data);

/// Teacher accuracy per class on a dataset (0 for classes without samples).
Tensor per_class_accuracy(const ModelParams& teacher, const Dataset& data);

}  // namespace tgkd
