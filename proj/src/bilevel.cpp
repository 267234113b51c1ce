#include "tgkd/bilevel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "tgkd/errors.hpp"
#include "tgkd/losses.hpp"

namespace tgkd {

std::string to_string(HypergradMode m) {
  return m == HypergradMode::first_order ? "first_order" : "unrolled_fd";
}

HypergradMode parse_hypergrad_mode(const std::string& s) {
  if (s == "first_order") return HypergradMode::first_order;
  if (s == "unrolled_fd") return HypergradMode::unrolled_fd;
  throw ConfigError("unknown hypergradient mode '" + s + "'");
}

std::vector<double> hypergradient(const BilevelProblem& problem, std::span<const double> theta,
                                  std::span<const double> omega, double inner_lr,
                                  HypergradMode mode, double fd_scale) {
  const std::vector<double> g_train = problem.train_grad_theta(theta, omega);
  std::vector<double> lookahead(theta.begin(), theta.end());
  for (std::size_t i = 0; i < lookahead.size(); ++i) lookahead[i] -= inner_lr * g_train[i];

  std::vector<double> result = problem.val_grad_omega(lookahead, omega);
  if (mode == HypergradMode::first_order) return result;

  const std::vector<double> v = problem.val_grad_theta(lookahead, omega);
  const double norm = l2_norm(v);
  if (norm == 0.0) return result;
  const double eps = fd_scale / norm;

  std::vector<double> plus(theta.begin(), theta.end());
  std::vector<double> minus(theta.begin(), theta.end());
  for (std::size_t i = 0; i < plus.size(); ++i) {
    plus[i] += eps * v[i];
    minus[i] -= eps * v[i];
  }
  const std::vector<double> g_plus = problem.train_grad_omega(plus, omega);
  const std::vector<double> g_minus = problem.train_grad_omega(minus, omega);
  for (std::size_t j = 0; j < result.size(); ++j) {
    result[j] -= inner_lr * (g_plus[j] - g_minus[j]) / (2.0 * eps);
  }
  return result;
}

// ---- scalar toy ----

std::vector<double> ScalarToyProblem::train_grad_theta(std::span<const double> theta,
                                                       std::span<const double> omega) const {
  const double t = theta[0];
  const double w = omega[0];
  return {a * t - b * w + k * w * t * t * t};
}

std::vector<double> ScalarToyProblem::train_grad_omega(std::span<const double> theta,
                                                       std::span<const double>) const {
  const double t = theta[0];
  return {-b * t + 0.25 * k * t * t * t * t};
}

std::vector<double> ScalarToyProblem::val_grad_theta(std::span<const double> theta,
                                                     std::span<const double>) const {
  return {theta[0] - target};
}

std::vector<double> ScalarToyProblem::val_grad_omega(std::span<const double>,
                                                     std::span<const double> omega) const {
  return {mu * (omega[0] - omega_ref)};
}

double ScalarToyProblem::exact_hypergradient(double theta, double omega, double inner_lr) const {
  const double lookahead = theta - inner_lr * (a * theta - b * omega + k * omega * std::pow(theta, 3));
  const double dlookahead_domega = inner_lr * (b - k * std::pow(theta, 3));
  return mu * (omega - omega_ref) + (lookahead - target) * dlookahead_domega;
}

double hypergrad_oracle_check(HypergradMode mode, double fd_scale, ToyVariant variant) {
  ScalarToyProblem p;
  if (variant == ToyVariant::no_second_order) {
    p.b = 0.0;
    p.k = 0.0;
  } else if (variant == ToyVariant::dominant_second_order) {
    p.mu = 0.0;
  }
  const double theta = 0.8;
  const double omega = 0.3;
  const double lr = 0.1;
  const double t[1] = {theta};
  const double w[1] = {omega};
  const double estimate = hypergradient(p, t, w, lr, mode, fd_scale)[0];
  const double exact = p.exact_hypergradient(theta, omega, lr);
  return std::abs(estimate - exact) / std::max(1.0, std::abs(exact));
}

// ---- distillation pieces ----

DistillSplit attach_teacher(const Dataset& data, const ModelParams& teacher) {
  if (teacher.in_width() != data.dim() || teacher.out_width() != data.classes) {
    throw DataError("teacher shape " + std::to_string(teacher.in_width()) + "->" +
                    std::to_string(teacher.out_width()) + " does not match data " +
                    std::to_string(data.dim()) + " features / " + std::to_string(data.classes) +
                    " classes");
  }
  DistillSplit s;
  s.data = &data;
  const std::size_t n = data.size();
  const std::size_t c = data.classes;
  s.teacher_logits = Tensor::matrix(n, c);
  s.teacher_probs = Tensor::matrix(n, c);
  s.teacher_ce.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor z = forward(teacher, data.row(i));
    const Tensor p = softmax_temp(z, 1.0);
    std::copy(z.begin(), z.end(), s.teacher_logits.row(i).begin());
    std::copy(p.begin(), p.end(), s.teacher_probs.row(i).begin());
    s.teacher_ce[i] = ce_loss(z, data.labels[i]).value;
  }
  return s;
}

BilevelState::BilevelState(ModelParams student, RatioPolicy fusion, OptimizerConfig inner_cfg,
                           OptimizerConfig outer_cfg)
    : theta(std::move(student)),
      policy(std::move(fusion)),
      inner_opt(inner_cfg, theta),
      outer_opt(outer_cfg, policy.omega()) {
  if (!(inner_cfg.lr > 0.0)) throw ConfigError("inner learning rate must be positive");
  if (outer_cfg.lr < 0.0) throw ConfigError("outer learning rate must be nonnegative");
}

namespace {

// Forward quantities for one training sample at the current student.
struct SampleTerms {
  ForwardTrace trace;
  Tensor student_probs;
  LossValue kd;
  LossValue ce;
  Tensor relation;  // empty unless the policy is learned
  double alpha = 0.0;
};

PredictionTriplet triplet_of(const Tensor& student_probs, const DistillSplit& split, std::size_t i) {
  PredictionTriplet t;
  t.student = student_probs;
  t.teacher = row_tensor(split.teacher_probs, i);
  t.class_index = split.data->labels[i];
  t.ground_truth = one_hot(t.class_index, split.data->classes);
  return t;
}

SampleTerms sample_terms(const ModelParams& theta, const RatioPolicy& policy,
                         const DistillContext& ctx, std::size_t i, std::size_t step) {
  const DistillSplit& split = *ctx.train;
  SampleTerms s;
  s.trace = forward_trace(theta, split.data->row(i));
  const Tensor& z = s.trace.output;
  s.student_probs = softmax_temp(z, 1.0);
  s.kd = kd_loss(z, row_tensor(split.teacher_logits, i), ctx.inner.tau);
  s.ce = ce_loss(z, split.data->labels[i]);

  SampleContext sc;
  sc.class_index = split.data->labels[i];
  sc.step = step;
  sc.student_ce = s.ce.value;
  sc.teacher_ce = split.teacher_ce[i];
  if (policy.learned()) {
    s.relation = build_feature(triplet_of(s.student_probs, split, i), *ctx.table,
                               policy.relation_mode());
    sc.relation = &s.relation;
  }
  s.alpha = policy.alpha(sc);
  return s;
}

// d alpha / d S for a learned policy, through the student slices of the relation vector.
Tensor alpha_grad_wrt_student(const RatioPolicy& policy, const Tensor& relation, std::size_t classes) {
  Tensor d_relation;
  backward(policy.omega(), relation, Tensor::vector({1.0}), &d_relation);
  Tensor d_s({classes});
  auto add_slice = [&](std::size_t slice, double sign) {
    for (std::size_t j = 0; j < classes; ++j) d_s[j] += sign * d_relation[slice * classes + j];
  };
  switch (policy.relation_mode()) {
    case RelationMode::full:
      add_slice(0, -1.0);  // e_sg = G - S
      add_slice(2, -1.0);  // e_st = T - S
      add_slice(4, -1.0);  // e_s_tbar = Tbar - S
      add_slice(5, +1.0);  // S
      break;
    case RelationMode::edges:
      add_slice(0, -1.0);
      add_slice(2, -1.0);
      add_slice(4, -1.0);
      break;
    case RelationMode::vertices:
      add_slice(0, +1.0);
      break;
  }
  return d_s;
}

// Pull a gradient w.r.t. softmax probabilities back to the logits.
void add_softmax_pullback(const Tensor& probs, const Tensor& d_probs, Tensor& d_logits) {
  const double inner = dot(probs.values(), d_probs.values());
  for (std::size_t j = 0; j < probs.size(); ++j) d_logits[j] += probs[j] * (d_probs[j] - inner);
}

// mean_i (kd_i - ce_i)(theta) * grad_omega alpha_i. With `frozen` the
// relation vectors are taken from it instead of being rebuilt at theta.
std::vector<double> omega_gradient(const ModelParams& theta, const RatioPolicy& policy,
                                   const DistillContext& ctx, std::span<const std::size_t> batch,
                                   const std::vector<Tensor>* frozen) {
  ModelParams acc = policy.omega().zeros_like();
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const std::size_t i = batch[k];
    const Tensor z = forward(theta, ctx.train->data->row(i));
    const double kd = kd_loss(z, row_tensor(ctx.train->teacher_logits, i), ctx.inner.tau).value;
    const double ce = ce_loss(z, ctx.train->data->labels[i]).value;
    Tensor relation;
    if (frozen != nullptr) {
      relation = (*frozen)[k];
    } else {
      relation = build_feature(triplet_of(softmax_temp(z, 1.0), *ctx.train, i), *ctx.table,
                               policy.relation_mode());
    }
    const ModelParams g = backward(policy.omega(), relation, Tensor::vector({(kd - ce) * scale}));
    add_scaled(acc, g, 1.0);
  }
  return acc.flatten();
}

// The distillation bilevel problem on one (train batch, validation batch) pair.
class DistillProblem final : public BilevelProblem {
 public:
  DistillProblem(const ModelParams& theta, const RatioPolicy& policy, const DistillContext& ctx,
                 std::span<const std::size_t> train_batch, std::span<const std::size_t> val_batch,
                 std::size_t step)
      : theta_(theta), policy_(policy), ctx_(ctx), train_batch_(train_batch),
        val_batch_(val_batch), step_(step) {
    if (ctx.inner.stop_gradient) {
      for (std::size_t i : train_batch) {
        const Tensor z = forward(theta, ctx.train->data->row(i));
        frozen_.push_back(build_feature(triplet_of(softmax_temp(z, 1.0), *ctx.train, i), *ctx.table,
                                        policy.relation_mode()));
      }
    }
  }

  std::vector<double> train_grad_theta(std::span<const double> theta,
                                       std::span<const double> omega) const override {
    return inner_objective(unpack_theta(theta), with_omega(omega), ctx_, train_batch_, step_)
        .grad.flatten();
  }

  std::vector<double> train_grad_omega(std::span<const double> theta,
                                       std::span<const double> omega) const override {
    return omega_gradient(unpack_theta(theta), with_omega(omega), ctx_, train_batch_,
                          ctx_.inner.stop_gradient ? &frozen_ : nullptr);
  }

  std::vector<double> val_grad_theta(std::span<const double> theta,
                                     std::span<const double>) const override {
    ModelParams g;
    const double loss = val_objective(unpack_theta(theta), *ctx_.val, val_batch_, &g);
    last_val_loss_ = loss;
    return g.flatten();
  }

  std::vector<double> val_grad_omega(std::span<const double>,
                                     std::span<const double> omega) const override {
    // The validation objective is ground-truth cross-entropy only.
    return std::vector<double>(omega.size(), 0.0);
  }

  double last_val_loss() const { return last_val_loss_; }

 private:
  ModelParams unpack_theta(std::span<const double> flat) const {
    ModelParams p = theta_;
    p.unflatten(flat);
    return p;
  }

  RatioPolicy with_omega(std::span<const double> flat) const {
    RatioPolicy p = policy_;
    p.omega().unflatten(flat);
    return p;
  }

  const ModelParams& theta_;
  const RatioPolicy& policy_;
  const DistillContext& ctx_;
  std::span<const std::size_t> train_batch_;
  std::span<const std::size_t> val_batch_;
  std::size_t step_;
  std::vector<Tensor> frozen_;
  mutable double last_val_loss_ = std::numeric_limits<double>::quiet_NaN();
};

}  // namespace

InnerEval inner_objective(const ModelParams& theta, const RatioPolicy& policy,
                          const DistillContext& ctx, std::span<const std::size_t> batch,
                          std::size_t step, bool want_grad) {
  if (batch.empty()) throw std::invalid_argument("inner_objective: empty batch");
  InnerEval out;
  if (want_grad) out.grad = theta.zeros_like();
  const double scale = 1.0 / static_cast<double>(batch.size());
  const std::size_t classes = ctx.train->data->classes;
  const bool through_alpha = policy.learned() && !ctx.inner.stop_gradient;
  for (std::size_t i : batch) {
    SampleTerms s = sample_terms(theta, policy, ctx, i, step);
    const CombinedLoss c = combine(s.alpha, s.kd, s.ce);
    out.loss += scale * c.value;
    out.mean_alpha += scale * s.alpha;
    out.alphas.push_back(s.alpha);
    if (!want_grad) continue;
    Tensor d_logits = c.grad;
    if (through_alpha) {
      const Tensor d_s = (c.kd_part - c.gt_part) * alpha_grad_wrt_student(policy, s.relation, classes);
      add_softmax_pullback(s.student_probs, d_s, d_logits);
    }
    add_scaled(out.grad, backward(theta, s.trace, d_logits), scale);
  }
  return out;
}

double val_objective(const ModelParams& theta, const DistillSplit& val,
                     std::span<const std::size_t> batch, ModelParams* grad) {
  if (batch.empty()) throw std::invalid_argument("val_objective: empty batch");
  if (grad != nullptr) *grad = theta.zeros_like();
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t i : batch) {
    const ForwardTrace trace = forward_trace(theta, val.data->row(i));
    const LossValue ce = ce_loss(trace.output, val.data->labels[i]);
    loss += scale * ce.value;
    if (grad != nullptr) add_scaled(*grad, backward(theta, trace, ce.grad), scale);
  }
  return loss;
}

double inner_step(BilevelState& state, const DistillContext& ctx, std::span<const std::size_t> batch) {
  InnerEval e = inner_objective(state.theta, state.policy, ctx, batch, state.step);
  const bool grad_ok = std::all_of(e.grad.layers.begin(), e.grad.layers.end(), [](const Layer& l) {
    return l.weight.all_finite() && l.bias.all_finite();
  });
  if (!std::isfinite(e.loss) || !grad_ok) {
    throw NumericError("non-finite training loss at step " + std::to_string(state.step));
  }
  state.inner_opt.step(state.theta, e.grad);
  state.history.push_back({state.step, e.loss, std::numeric_limits<double>::quiet_NaN(), e.mean_alpha});
  ++state.step;
  return e.loss;
}

std::optional<double> outer_step(BilevelState& state, const DistillContext& ctx,
                                 std::span<const std::size_t> train_batch,
                                 std::span<const std::size_t> val_batch, HypergradMode mode,
                                 double fd_scale) {
  if (train_batch.empty() || val_batch.empty()) {
    throw std::invalid_argument("outer_step: batches must be non-empty");
  }
  if (!state.policy.learned() || state.outer_lr() == 0.0) return std::nullopt;

  const DistillProblem problem(state.theta, state.policy, ctx, train_batch, val_batch, state.step);
  const std::vector<double> theta = state.theta.flatten();
  const std::vector<double> omega = state.policy.omega().flatten();
  const std::vector<double> g = hypergradient(problem, theta, omega, state.inner_lr(), mode, fd_scale);
  for (double v : g) {
    if (!std::isfinite(v)) throw NumericError("non-finite hypergradient at step " + std::to_string(state.step));
  }
  ModelParams grad = state.policy.omega().zeros_like();
  grad.unflatten(g);
  state.outer_opt.step(state.policy.omega(), grad);
  if (!state.history.empty()) state.history.back().val_loss = problem.last_val_loss();
  return problem.last_val_loss();
}

std::vector<SampleSnapshot> snapshot(const ModelParams& theta, const RatioPolicy& policy,
                                     const DistillContext& ctx, std::size_t step) {
  const DistillSplit& split = *ctx.train;
  std::vector<SampleSnapshot> out;
  out.reserve(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) {
    SampleTerms s = sample_terms(theta, policy, ctx, i, step);
    SampleSnapshot snap;
    snap.id = split.data->ids[i];
    snap.label = split.data->labels[i];
    snap.teacher_probs = row_tensor(split.teacher_probs, i);
    snap.teacher_correct = argmax(snap.teacher_probs.values()) == snap.label;
    snap.discrepancy = st_discrepancy(s.student_probs, snap.teacher_probs);
    snap.student_probs = std::move(s.student_probs);
    snap.alpha = s.alpha;
    snap.is_outlier = split.data->is_outlier[i] != 0;
    out.push_back(std::move(snap));
  }
  return out;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  return (n + batch_size - 1) / batch_size;
}

namespace {

std::uint64_t checksum_ids(std::span<const std::size_t> order, const Dataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i : order) {
    std::uint64_t id = data.ids[i];
    for (int b = 0; b < 8; ++b) {
      h ^= (id >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::vector<AlphaRecord> alpha_records(std::span<const SampleSnapshot> snaps, std::size_t epoch) {
  std::vector<AlphaRecord> recs;
  recs.reserve(snaps.size());
  for (const SampleSnapshot& s : snaps) {
    recs.push_back({s.id, epoch, s.alpha, s.teacher_correct, s.discrepancy, s.is_outlier});
  }
  return recs;
}

void fill_alpha_stats(EpochRecord& rec, std::span<const SampleSnapshot> snaps) {
  double sum = 0.0;
  double sq = 0.0;
  double out_sum = 0.0;
  double norm_sum = 0.0;
  std::size_t n_out = 0;
  for (const SampleSnapshot& s : snaps) {
    sum += s.alpha;
    sq += s.alpha * s.alpha;
    if (s.is_outlier) {
      out_sum += s.alpha;
      ++n_out;
    } else {
      norm_sum += s.alpha;
    }
  }
  const double n = static_cast<double>(snaps.size());
  rec.alpha_mean = sum / n;
  rec.alpha_std = std::sqrt(std::max(0.0, sq / n - rec.alpha_mean * rec.alpha_mean));
  if (n_out > 0) rec.outlier_alpha = out_sum / static_cast<double>(n_out);
  if (n_out < snaps.size()) rec.normal_alpha = norm_sum / static_cast<double>(snaps.size() - n_out);
  const std::vector<AlphaRecord> recs = alpha_records(snaps, rec.epoch);
  const std::size_t epochs[1] = {rec.epoch};
  rec.partition_alpha = fusion_ratio_report(recs, epochs).front().mean;
}

}  // namespace

TrainResult train(const TrainSettings& settings, const DatasetSplits& splits,
                  const ModelParams& teacher, ModelParams student, RatioPolicy policy) {
  splits.train.validate();
  splits.val.validate();
  if (settings.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (student.in_width() != splits.train.dim() || student.out_width() != splits.train.classes) {
    throw DataError("student shape does not match the data");
  }
  const DistillSplit train_split = attach_teacher(splits.train, teacher);
  const DistillSplit val_split = attach_teacher(splits.val, teacher);
  const ClassAverageTable table =
      build_class_averages(train_split.teacher_probs, splits.train.labels, splits.train.classes);
  const DistillContext ctx{&train_split, &val_split, &table, settings.inner};

  BilevelState state(std::move(student), std::move(policy), settings.inner_opt, settings.outer_opt);
  Rng batch_rng = Rng::stream(settings.seed, "batching");
  Rng val_rng = Rng::stream(settings.seed, "valbatch");

  TrainResult result{state.theta, state.theta, state.policy, {}, {}};
  const std::size_t n = splits.train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> val_pool(splits.val.size());
  std::iota(val_pool.begin(), val_pool.end(), std::size_t{0});
  const std::size_t val_batch_size = std::min(settings.batch_size, val_pool.size());
  std::vector<std::size_t> all_val = val_pool;

  std::vector<double> acc_history;
  double best_acc = -1.0;
  const bool run_outer = state.policy.learned() && state.outer_lr() > 0.0;

  for (std::size_t epoch = 1; epoch <= settings.epochs; ++epoch) {
    batch_rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.batch_checksum = checksum_ids(order, splits.train);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += settings.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start,
                                               std::min(settings.batch_size, n - start));
      if (run_outer) {
        // Partial Fisher-Yates: the first val_batch_size entries are a uniform draw.
        for (std::size_t k = 0; k < val_batch_size; ++k) {
          std::swap(val_pool[k], val_pool[k + val_rng.index(val_pool.size() - k)]);
        }
        const std::span<const std::size_t> val_batch(val_pool.data(), val_batch_size);
        outer_step(state, ctx, batch, val_batch, settings.mode, settings.fd_scale);
      }
      loss_sum += inner_step(state, ctx, batch) * static_cast<double>(batch.size());
    }
    rec.train_loss = loss_sum / static_cast<double>(n);

    const Tensor val_probs = predict_probs(state.theta, splits.val);
    rec.val_acc = accuracy(val_probs, splits.val.labels);
    rec.val_ce = val_objective(state.theta, val_split, all_val, nullptr);

    const std::vector<SampleSnapshot> snaps = snapshot(state.theta, state.policy, ctx, state.step);
    fill_alpha_stats(rec, snaps);
    result.log.epochs.push_back(rec);

    acc_history.push_back(rec.val_acc);
    if (rec.val_acc > best_acc) {
      best_acc = rec.val_acc;
      result.log.best_epoch = epoch;
      result.student = state.theta;
    }
    const bool stop = early_stop(acc_history, settings.patience);
    const bool last = stop || epoch == settings.epochs;
    const bool dump = epoch == 1 || last ||
                      (settings.alpha_dump_interval > 0 && epoch % settings.alpha_dump_interval == 0);
    if (dump) {
      const std::vector<AlphaRecord> recs = alpha_records(snaps, epoch);
      result.log.alphas.insert(result.log.alphas.end(), recs.begin(), recs.end());
      result.log.logged_epochs.push_back(epoch);
    }
    if (last) result.final_snapshot = snaps;
    if (stop) {
      result.log.early_stopped = true;
      break;
    }
  }
  result.final_student = state.theta;
  result.policy = state.policy;
  if (settings.epochs == 0) result.final_snapshot = snapshot(state.theta, state.policy, ctx, 0);
  return result;
}

Tensor predict_probs(const ModelParams& params, const Dataset& data) {
  Tensor out = Tensor::matrix(data.size(), params.out_width());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor p = softmax_temp(forward(params, data.row(i)), 1.0);
    std::copy(p.begin(), p.end(), out.row(i).begin());
  }
  return out;
}

Tensor per_class_accuracy(const ModelParams& teacher, const Dataset& data) {
  std::vector<double> hits(data.classes, 0.0);
  std::vector<double> counts(data.classes, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor z = forward(teacher, data.row(i));
    counts[data.labels[i]] += 1.0;
    if (argmax(z.values()) == data.labels[i]) hits[data.labels[i]] += 1.0;
  }
  std::vector<double> acc(data.classes, 0.0);
  for (std::size_t c = 0; c < data.classes; ++c) {
    if (counts[c] > 0.0) acc[c] = hits[c] / counts[c];
  }
  return Tensor::vector(std::move(acc));
}

ModelParams train_supervised(ModelParams params, const Dataset& data, const OptimizerConfig& opt,
                             std::size_t epochs, std::size_t batch_size, std::uint64_t seed) {
  data.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  Optimizer optimizer(opt, params);
  Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      ModelParams grad = params.zeros_like();
      const double scale = 1.0 / static_cast<double>(end - start);
      double loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const ForwardTrace trace = forward_trace(params, data.row(i));
        const LossValue ce = ce_loss(trace.output, data.labels[i]);
        loss += ce.value;
        add_scaled(grad, backward(params, trace, ce.grad), scale);
      }
      if (!std::isfinite(loss)) throw NumericError("non-finite loss while training the teacher");
      optimizer.step(params, grad);
    }
  }
  return params;
}

}  // namespace tgkd
