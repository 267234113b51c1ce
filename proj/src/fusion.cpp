#include "tgkd/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "tgkd/errors.hpp"

namespace tgkd {

namespace {

void require_unit_interval(double alpha, const char* what) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError(std::string(what) + " must lie in [0, 1], got " + std::to_string(alpha));
  }
}

}  // namespace

CombinedLoss combine(double alpha, const LossValue& kd, const LossValue& gt) {
  require_unit_interval(alpha, "fusion ratio");
  require_same_shape(kd.grad, gt.grad, "combine");
  CombinedLoss out;
  out.alpha = alpha;
  out.kd_part = kd.value;
  out.gt_part = gt.value;
  out.value = alpha * kd.value + (1.0 - alpha) * gt.value;
  out.grad = Tensor(kd.grad.shape());
  for (std::size_t j = 0; j < out.grad.size(); ++j) {
    out.grad[j] = alpha * kd.grad[j] + (1.0 - alpha) * gt.grad[j];
  }
  return out;
}

double tgeo_ratio(const ModelParams& omega, const Tensor& delta) {
  if (omega.layers.empty() || omega.out_width() != 1 ||
      omega.layers.back().activation != Activation::sigmoid) {
    throw std::invalid_argument("fusion network must end in a single sigmoid unit");
  }
  return forward(omega, delta)[0];
}

ModelParams make_fusion_net(std::size_t input_width, std::size_t hidden, std::size_t depth,
                            Rng& rng) {
  if (depth < 1 || depth > 3) throw ConfigError("fusion_depth must be 1, 2 or 3");
  if (hidden == 0) throw ConfigError("fusion_hidden must be positive");
  std::vector<std::size_t> widths{input_width};
  for (std::size_t k = 1; k < depth; ++k) widths.push_back(hidden);
  widths.push_back(1);
  return init_mlp(widths, Activation::relu, Activation::sigmoid, rng);
}

double annealed_ratio(std::size_t step, std::size_t horizon) {
  if (horizon < 1) throw ConfigError("anneal horizon must be at least 1");
  if (step >= horizon) return 0.0;
  return 1.0 - static_cast<double>(step) / static_cast<double>(horizon);
}

double class_wise_ratio(const Tensor& teacher_class_accuracy, std::size_t class_index) {
  if (class_index >= teacher_class_accuracy.size()) {
    throw std::out_of_range("class_wise_ratio: class " + std::to_string(class_index) +
                            " out of range");
  }
  return std::clamp(teacher_class_accuracy[class_index], 0.0, 1.0);
}

double wls_ratio(double student_ce, double teacher_ce, double gain) {
  if (!(gain > 0.0)) throw ConfigError("wls gain must be positive");
  if (student_ce < 0.0 || teacher_ce < 0.0) throw std::invalid_argument("CE values must be >= 0");
  return sigmoid(gain * (student_ce - teacher_ce));
}

std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::fixed: return "fixed";
    case PolicyKind::annealed: return "annealed";
    case PolicyKind::class_wise: return "class_wise";
    case PolicyKind::wls: return "wls";
    case PolicyKind::tgeo: return "tgeo";
  }
  return "?";
}

PolicyKind parse_policy_kind(const std::string& s) {
  if (s == "fixed") return PolicyKind::fixed;
  if (s == "annealed") return PolicyKind::annealed;
  if (s == "class_wise") return PolicyKind::class_wise;
  if (s == "wls") return PolicyKind::wls;
  if (s == "tgeo") return PolicyKind::tgeo;
  throw ConfigError("unknown policy '" + s + "'");
}

RatioPolicy RatioPolicy::fixed(double alpha0) {
  require_unit_interval(alpha0, "fixed alpha");
  RatioPolicy p;
  p.kind_ = PolicyKind::fixed;
  p.alpha0_ = alpha0;
  return p;
}

RatioPolicy RatioPolicy::annealed(std::size_t horizon) {
  if (horizon < 1) throw ConfigError("anneal horizon must be at least 1");
  RatioPolicy p;
  p.kind_ = PolicyKind::annealed;
  p.horizon_ = horizon;
  return p;
}

RatioPolicy RatioPolicy::class_wise(Tensor teacher_class_accuracy) {
  for (double a : teacher_class_accuracy) require_unit_interval(a, "teacher class accuracy");
  RatioPolicy p;
  p.kind_ = PolicyKind::class_wise;
  p.class_accuracy_ = std::move(teacher_class_accuracy);
  return p;
}

RatioPolicy RatioPolicy::wls(double gain) {
  if (!(gain > 0.0)) throw ConfigError("wls gain must be positive");
  RatioPolicy p;
  p.kind_ = PolicyKind::wls;
  p.gain_ = gain;
  return p;
}

RatioPolicy RatioPolicy::tgeo(ModelParams omega, RelationMode mode) {
  omega.validate();
  if (omega.out_width() != 1 || omega.layers.back().activation != Activation::sigmoid) {
    throw ConfigError("fusion network must end in a single sigmoid unit");
  }
  RatioPolicy p;
  p.kind_ = PolicyKind::tgeo;
  p.omega_ = std::move(omega);
  p.mode_ = mode;
  return p;
}

double RatioPolicy::alpha(const SampleContext& ctx) const {
  switch (kind_) {
    case PolicyKind::fixed: return alpha0_;
    case PolicyKind::annealed: return annealed_ratio(ctx.step, horizon_);
    case PolicyKind::class_wise: return class_wise_ratio(class_accuracy_, ctx.class_index);
    case PolicyKind::wls: return wls_ratio(ctx.student_ce, ctx.teacher_ce, gain_);
    case PolicyKind::tgeo:
      if (ctx.relation == nullptr) throw std::invalid_argument("tgeo policy needs a relation vector");
      return tgeo_ratio(omega_, *ctx.relation);
  }
  return 0.0;
}

}  // namespace tgkd
