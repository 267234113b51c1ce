#include "tgkd/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "tgkd/errors.hpp"
#include "tgkd/losses.hpp"

namespace tgkd {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "unknown";
}

Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + s + "'");
}

std::size_t ModelParams::in_width() const { return layers.empty() ? 0 : layers.front().in_width(); }

std::size_t ModelParams::out_width() const {
  return layers.empty() ? 0 : layers.back().out_width();
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void ModelParams::validate() const {
  if (layers.empty()) throw NumericError("model has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const Layer& l = layers[k];
    if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.weight.rows()) {
      throw NumericError("layer " + std::to_string(k) + " has inconsistent weight/bias shapes");
    }
    if (k > 0 && layers[k - 1].out_width() != l.in_width()) {
      throw NumericError("layer " + std::to_string(k) + " input width " +
                         std::to_string(l.in_width()) + " does not match previous output " +
                         std::to_string(layers[k - 1].out_width()));
    }
    if (!l.weight.all_finite() || !l.bias.all_finite()) {
      throw NumericError("layer " + std::to_string(k) + " has non-finite parameters");
    }
  }
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z;
  z.layers.reserve(layers.size());
  for (const auto& l : layers) {
    z.layers.push_back({Tensor(l.weight.shape()), Tensor(l.bias.shape()), l.activation});
  }
  return z;
}

std::vector<double*> ModelParams::parameter_pointers() {
  std::vector<double*> ptrs;
  ptrs.reserve(parameter_count());
  for (auto& l : layers) {
    for (double& w : l.weight) ptrs.push_back(&w);
    for (double& b : l.bias) ptrs.push_back(&b);
  }
  return ptrs;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers) {
    flat.insert(flat.end(), l.weight.begin(), l.weight.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void ModelParams::unflatten(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw std::invalid_argument("unflatten: size mismatch");
  std::size_t i = 0;
  for (auto& l : layers) {
    for (double& w : l.weight) w = flat[i++];
    for (double& b : l.bias) b = flat[i++];
  }
}

void add_scaled(ModelParams& acc, const ModelParams& g, double scale) {
  if (acc.layers.size() != g.layers.size()) throw std::invalid_argument("add_scaled: depth mismatch");
  for (std::size_t k = 0; k < acc.layers.size(); ++k) {
    Layer& a = acc.layers[k];
    const Layer& b = g.layers[k];
    require_same_shape(a.weight, b.weight, "add_scaled");
    require_same_shape(a.bias, b.bias, "add_scaled");
    for (std::size_t i = 0; i < a.weight.size(); ++i) a.weight[i] += scale * b.weight[i];
    for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] += scale * b.bias[i];
  }
}

ModelParams init_mlp(std::span<const std::size_t> widths, Activation hidden, Activation output,
                     Rng& rng) {
  if (widths.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
  ModelParams p;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const std::size_t in = widths[k];
    const std::size_t out = widths[k + 1];
    if (in == 0 || out == 0) throw ConfigError("layer widths must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Layer l{Tensor::matrix(out, in), Tensor({out}),
            k + 2 == widths.size() ? output : hidden};
    for (double& w : l.weight) w = rng.uniform(-limit, limit);
    p.layers.push_back(std::move(l));
  }
  return p;
}

namespace {

double activate(Activation a, double v) {
  switch (a) {
    case Activation::identity: return v;
    case Activation::relu: return v > 0.0 ? v : 0.0;
    case Activation::sigmoid: return sigmoid(v);
  }
  return v;
}

// Derivative expressed through the pre-activation value.
double activate_grad(Activation a, double pre) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: {
      const double s = sigmoid(pre);
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

}  // namespace

ForwardTrace forward_trace(const ModelParams& params, const Tensor& x) {
  if (params.layers.empty()) throw std::invalid_argument("forward: model has no layers");
  if (x.size() != params.in_width()) {
    throw std::invalid_argument("forward: input width " + std::to_string(x.size()) +
                                " != model input width " + std::to_string(params.in_width()));
  }
  ForwardTrace trace;
  trace.inputs.reserve(params.layers.size());
  trace.preactivations.reserve(params.layers.size());
  Tensor h = Tensor::vector(std::vector<double>(x.begin(), x.end()));
  for (const Layer& l : params.layers) {
    Tensor pre({l.out_width()});
    for (std::size_t r = 0; r < l.out_width(); ++r) {
      pre[r] = l.bias[r] + dot(l.weight.row(r), h.values());
    }
    Tensor act(pre.shape());
    for (std::size_t r = 0; r < pre.size(); ++r) act[r] = activate(l.activation, pre[r]);
    trace.inputs.push_back(std::move(h));
    trace.preactivations.push_back(std::move(pre));
    h = std::move(act);
  }
  trace.output = std::move(h);
  return trace;
}

Tensor forward(const ModelParams& params, const Tensor& x) { return forward_trace(params, x).output; }

ModelParams backward(const ModelParams& params, const ForwardTrace& trace,
                     const Tensor& output_grad, Tensor* input_grad) {
  if (trace.inputs.size() != params.layers.size() || output_grad.size() != params.out_width()) {
    throw std::invalid_argument("backward: trace or output gradient does not match the model");
  }
  ModelParams grads = params.zeros_like();
  Tensor upstream = Tensor::vector(std::vector<double>(output_grad.begin(), output_grad.end()));
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const Layer& l = params.layers[k];
    Layer& g = grads.layers[k];
    const Tensor& in = trace.inputs[k];
    const Tensor& pre = trace.preactivations[k];
    if (in.size() != l.in_width() || pre.size() != l.out_width()) {
      throw std::invalid_argument("backward: trace shape mismatch at layer " + std::to_string(k));
    }
    Tensor delta(pre.shape());
    for (std::size_t r = 0; r < pre.size(); ++r) {
      delta[r] = upstream[r] * activate_grad(l.activation, pre[r]);
    }
    for (std::size_t r = 0; r < l.out_width(); ++r) {
      g.bias[r] = delta[r];
      auto grow = g.weight.row(r);
      for (std::size_t c = 0; c < l.in_width(); ++c) grow[c] = delta[r] * in[c];
    }
    if (k > 0 || input_grad != nullptr) {
      Tensor down({l.in_width()});
      for (std::size_t r = 0; r < l.out_width(); ++r) {
        if (delta[r] == 0.0) continue;
        auto wrow = l.weight.row(r);
        for (std::size_t c = 0; c < l.in_width(); ++c) down[c] += wrow[c] * delta[r];
      }
      upstream = std::move(down);
    }
  }
  if (input_grad != nullptr) *input_grad = std::move(upstream);
  return grads;
}

ModelParams backward(const ModelParams& params, const Tensor& x, const Tensor& output_grad,
                     Tensor* input_grad) {
  return backward(params, forward_trace(params, x), output_grad, input_grad);
}

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace

double grad_check(const ModelParams& params, const ParamLossFn& loss_fn, const Tensor& x,
                  double eps) {
  ModelParams analytic = params.zeros_like();
  loss_fn(params, x, &analytic);
  const std::vector<double> flat_grad = analytic.flatten();

  ModelParams probe = params;
  std::vector<double*> ptrs = probe.parameter_pointers();
  double worst = 0.0;
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    const double orig = *ptrs[i];
    *ptrs[i] = orig + eps;
    const double up = loss_fn(probe, x, nullptr);
    *ptrs[i] = orig - eps;
    const double down = loss_fn(probe, x, nullptr);
    *ptrs[i] = orig;
    worst = std::max(worst, relative_error(flat_grad[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

double grad_check(const TensorLossFn& loss_fn, const Tensor& z, double eps) {
  Tensor analytic(z.shape());
  loss_fn(z, &analytic);
  Tensor probe = z;
  double worst = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    probe[i] = z[i] + eps;
    const double up = loss_fn(probe, nullptr);
    probe[i] = z[i] - eps;
    const double down = loss_fn(probe, nullptr);
    probe[i] = z[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

// ---- serialization ----

namespace {

constexpr char kMagic[4] = {'T', 'G', 'K', 'D'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffU);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffU);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("params file truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("params file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void write_params(std::ostream& out, const ModelParams& params) {
  params.validate();
  out.write(kMagic, 4);
  put_u32(out, kParamsFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(params.layers.size()));
  for (const Layer& l : params.layers) {
    put_u32(out, static_cast<std::uint32_t>(l.out_width()));
    put_u32(out, static_cast<std::uint32_t>(l.in_width()));
    put_u32(out, static_cast<std::uint32_t>(l.activation));
    for (double w : l.weight) put_f64(out, w);
    for (double b : l.bias) put_f64(out, b);
  }
}

ModelParams read_params(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("not a params file (bad magic)");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kParamsFormatVersion) {
    throw DataError("unsupported params format version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(in);
  ModelParams p;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    const std::uint32_t act = get_u32(in);
    if (act > static_cast<std::uint32_t>(Activation::sigmoid)) {
      throw DataError("unknown activation tag " + std::to_string(act));
    }
    Layer l{Tensor::matrix(rows, cols), Tensor({rows}), static_cast<Activation>(act)};
    for (double& w : l.weight) w = get_f64(in);
    for (double& b : l.bias) b = get_f64(in);
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

void save_params(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  write_params(out, params);
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_params(in);
}

// ---- optimizers ----

Optimizer::Optimizer(OptimizerConfig config, const ModelParams& like)
    : config_(config),
      first_(like.parameter_count(), 0.0),
      second_(config.kind == OptimizerKind::adam ? like.parameter_count() : 0, 0.0) {
  if (!(config_.lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (config_.momentum < 0.0 || config_.momentum >= 1.0) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
}

void Optimizer::step(ModelParams& params, const ModelParams& grad) {
  std::vector<double*> p = params.parameter_pointers();
  const std::vector<double> g = grad.flatten();
  if (p.size() != first_.size() || g.size() != first_.size()) {
    throw std::invalid_argument("optimizer: parameter layout changed");
  }
  ++steps_;
  const double lr = config_.lr;
  if (config_.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + config_.weight_decay * *p[i];
      if (config_.momentum > 0.0) {
        first_[i] = config_.momentum * first_[i] + gi;
        *p[i] -= lr * first_[i];
      } else {
        *p[i] -= lr * gi;
      }
    }
    return;
  }
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i] + config_.weight_decay * *p[i];
    first_[i] = config_.beta1 * first_[i] + (1.0 - config_.beta1) * gi;
    second_[i] = config_.beta2 * second_[i] + (1.0 - config_.beta2) * gi * gi;
    const double mhat = first_[i] / bc1;
    const double vhat = second_[i] / bc2;
    *p[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
  }
}

}  // namespace tgkd
