#include "tgkd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tgkd/errors.hpp"

namespace tgkd {

namespace {

void check_logits(const Tensor& logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ConfigError("temperature must be positive, got " + std::to_string(tau));
  }
  if (logits.size() < 2) throw std::invalid_argument("softmax needs at least two classes");
  if (!logits.all_finite()) throw NumericError("non-finite logits");
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor softmax_temp(const Tensor& logits, double tau) {
  check_logits(logits, tau);
  const double m = *std::max_element(logits.begin(), logits.end());
  Tensor out(logits.shape());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp((logits[j] - m) / tau);
    sum += out[j];
  }
  for (double& v : out) v /= sum;
  return out;
}

Tensor log_softmax_temp(const Tensor& logits, double tau) {
  check_logits(logits, tau);
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp((z - m) / tau);
  const double lse = std::log(sum);
  Tensor out(logits.shape());
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] = (logits[j] - m) / tau - lse;
  return out;
}

LossValue kd_loss(const Tensor& z_s, const Tensor& z_t, double tau) {
  require_same_shape(z_s, z_t, "kd_loss");
  const Tensor log_ps = log_softmax_temp(z_s, tau);
  const Tensor log_pt = log_softmax_temp(z_t, tau);
  const Tensor ps = softmax_temp(z_s, tau);
  const Tensor pt = softmax_temp(z_t, tau);

  double kl = 0.0;
  for (std::size_t j = 0; j < z_s.size(); ++j) {
    if (pt[j] > 0.0) kl += pt[j] * (log_pt[j] - log_ps[j]);
  }
  LossValue out;
  // KL is nonnegative; the clamp only absorbs rounding below zero.
  out.value = std::max(0.0, tau * tau * kl);
  out.grad = Tensor(z_s.shape());
  for (std::size_t j = 0; j < z_s.size(); ++j) out.grad[j] = tau * (ps[j] - pt[j]);
  return out;
}

LossValue ce_loss(const Tensor& z_s, std::size_t label) {
  if (label >= z_s.size()) throw std::invalid_argument("ce_loss: label out of range");
  const Tensor log_p = log_softmax_temp(z_s, 1.0);
  LossValue out;
  out.value = -log_p[label];
  out.grad = softmax_temp(z_s, 1.0);
  out.grad[label] -= 1.0;
  return out;
}

LossValue ce_loss(const Tensor& z_s, const Tensor& y) {
  require_same_shape(z_s, y, "ce_loss");
  return ce_loss(z_s, one_hot_index(y));
}

Tensor one_hot(std::size_t label, std::size_t classes) {
  if (label >= classes) throw std::invalid_argument("one_hot: label out of range");
  Tensor y({classes});
  y[label] = 1.0;
  return y;
}

std::size_t one_hot_index(const Tensor& y) {
  std::size_t hot = y.size();
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (y[j] == 1.0) {
      if (hot != y.size()) throw DataError("target has more than one hot entry");
      hot = j;
    } else if (y[j] != 0.0) {
      throw DataError("target entries must be 0 or 1");
    }
  }
  if (hot == y.size()) throw DataError("target has no hot entry");
  return hot;
}

}  // namespace tgkd
