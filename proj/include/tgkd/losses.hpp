#pragma once

#include <cstddef>

#include "tgkd/tensor.hpp"

namespace tgkd {

/// Loss value together with its gradient w.r.t. the student logits.
struct LossValue {
  double value = 0.0;
  Tensor grad;
};

/// Temperature-softened softmax, max-subtracted. Throws ConfigError for
/// tau <= 0 and NumericError for non-finite logits.
Tensor softmax_temp(const Tensor& logits, double tau);

/// log(softmax(logits / tau)) computed through log-sum-exp.
Tensor log_softmax_temp(const Tensor& logits, double tau);

/// tau^2 * KL(softmax(z_t/tau) || softmax(z_s/tau)). The teacher is the
/// reference distribution and receives no gradient.
LossValue kd_loss(const Tensor& z_s, const Tensor& z_t, double tau);

/// Cross-entropy against a one-hot target. Throws DataError if `y` is not one-hot.
LossValue ce_loss(const Tensor& z_s, const Tensor& y);

/// Cross-entropy against a class index.
LossValue ce_loss(const Tensor& z_s, std::size_t label);

Tensor one_hot(std::size_t label, std::size_t classes);

/// Index of the hot entry; throws DataError unless exactly one entry is 1 and the rest 0.
std::size_t one_hot_index(const Tensor& y);

double sigmoid(double x);

}  // namespace tgkd
