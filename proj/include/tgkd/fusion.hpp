#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "tgkd/geometry.hpp"
#include "tgkd/losses.hpp"
#include "tgkd/network.hpp"
#include "tgkd/tensor.hpp"

namespace tgkd {

/// alpha * kd + (1 - alpha) * gt, with the matching logit gradient.
struct CombinedLoss {
  double value = 0.0;
  double alpha = 0.0;
  double kd_part = 0.0;
  double gt_part = 0.0;
  Tensor grad;
};

CombinedLoss combine(double alpha, const LossValue& kd, const LossValue& gt);

/// Output of the fusion network for one relation vector, strictly inside (0, 1)
/// for finite inputs. The network must end in a single sigmoid unit.
double tgeo_ratio(const ModelParams& omega, const Tensor& delta);

/// Fusion network: `depth` layers, relu hidden units of width `hidden`, one
/// sigmoid output. depth 1 is a logistic unit on the relation vector.
ModelParams make_fusion_net(std::size_t input_width, std::size_t hidden, std::size_t depth,
                            Rng& rng);

// Reconstructed baseline rules. Each returns a ratio in [0, 1].
double annealed_ratio(std::size_t step, std::size_t horizon);
double class_wise_ratio(const Tensor& teacher_class_accuracy, std::size_t class_index);
double wls_ratio(double student_ce, double teacher_ce, double gain);

enum class PolicyKind { fixed, annealed, class_wise, wls, tgeo };

std::string to_string(PolicyKind k);
PolicyKind parse_policy_kind(const std::string& s);

/// Everything a policy may look at when assigning a ratio to one sample.
struct SampleContext {
  std::size_t class_index = 0;
  std::size_t step = 0;
  double student_ce = 0.0;
  double teacher_ce = 0.0;
  const Tensor* relation = nullptr;  // required by tgeo only
};

/// Per-sample knowledge-fusion ratio. Immutable except for the tgeo network
/// weights, which only the outer optimization step writes.
class RatioPolicy {
 public:
  static RatioPolicy fixed(double alpha0);
  static RatioPolicy annealed(std::size_t horizon);
  static RatioPolicy class_wise(Tensor teacher_class_accuracy);
  static RatioPolicy wls(double gain);
  static RatioPolicy tgeo(ModelParams omega, RelationMode mode);

  PolicyKind kind() const { return kind_; }
  bool learned() const { return kind_ == PolicyKind::tgeo; }
  RelationMode relation_mode() const { return mode_; }

  double alpha(const SampleContext& ctx) const;

  const ModelParams& omega() const { return omega_; }
  ModelParams& omega() { return omega_; }

 private:
  PolicyKind kind_ = PolicyKind::fixed;
  double alpha0_ = 0.0;
  std::size_t horizon_ = 1;
  Tensor class_accuracy_;
  double gain_ = 1.0;
  ModelParams omega_;
  RelationMode mode_ = RelationMode::full;
};

}  // namespace tgkd
