#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tgkd/rng.hpp"
#include "tgkd/tensor.hpp"

namespace tgkd {

enum class Activation : std::uint32_t { identity = 0, relu = 1, sigmoid = 2 };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

struct Layer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
  Activation activation = Activation::identity;

  std::size_t in_width() const { return weight.cols(); }
  std::size_t out_width() const { return weight.rows(); }

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Feed-forward stack of affine + activation layers. Used for the student,
/// the frozen teacher and the fusion-ratio network alike.
struct ModelParams {
  std::vector<Layer> layers;

  std::size_t in_width() const;
  std::size_t out_width() const;
  std::size_t parameter_count() const;

  /// Throws NumericError when adjacent widths do not chain or entries are non-finite.
  void validate() const;

  /// Same architecture, every weight and bias zero.
  ModelParams zeros_like() const;

  /// Flat views over every parameter, weights before biases, layer by layer.
  std::vector<double*> parameter_pointers();
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// `acc += scale * g`, layer by layer.
void add_scaled(ModelParams& acc, const ModelParams& g, double scale);

/// Uniform Glorot initialization, zero biases. `widths` = {in, h1, ..., out}.
ModelParams init_mlp(std::span<const std::size_t> widths, Activation hidden, Activation output,
                     Rng& rng);

/// Per-layer inputs and pre-activations recorded by a forward pass.
struct ForwardTrace {
  std::vector<Tensor> inputs;           // inputs[k] feeds layer k
  std::vector<Tensor> preactivations;   // affine output of layer k
  Tensor output;
};

ForwardTrace forward_trace(const ModelParams& params, const Tensor& x);
Tensor forward(const ModelParams& params, const Tensor& x);

/// Reverse-mode gradients of a scalar loss given dLoss/dOutput.
/// If `input_grad` is non-null it receives dLoss/dx.
ModelParams backward(const ModelParams& params, const ForwardTrace& trace,
                     const Tensor& output_grad, Tensor* input_grad = nullptr);
ModelParams backward(const ModelParams& params, const Tensor& x, const Tensor& output_grad,
                     Tensor* input_grad = nullptr);

/// Scalar loss of a parameter set; fills `grad` with the analytic gradient when non-null.
using ParamLossFn = std::function<double(const ModelParams&, const Tensor& x, ModelParams* grad)>;
/// Scalar loss of a vector input; fills `grad` when non-null.
using TensorLossFn = std::function<double(const Tensor& z, Tensor* grad)>;

/// Max over parameters of |analytic - numeric| / max(1, |analytic|, |numeric|)
/// using central differences with step `eps`.
double grad_check(const ModelParams& params, const ParamLossFn& loss_fn, const Tensor& x,
                  double eps);
double grad_check(const TensorLossFn& loss_fn, const Tensor& z, double eps);

// Binary params file: "TGKD", u32 version, u32 layer count, then per layer
// u32 rows, u32 cols, u32 activation, rows*cols f64 weights, rows f64 biases.
// Everything little-endian.
inline constexpr std::uint32_t kParamsFormatVersion = 1;

void write_params(std::ostream& out, const ModelParams& params);
ModelParams read_params(std::istream& in);
void save_params(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_params(const std::filesystem::path& path);

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.1;
  double momentum = 0.0;  // sgd only
  double beta1 = 0.9;     // adam only
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

/// Stateful first-order optimizer. State buffers mirror the parameter layout.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, const ModelParams& like);

  void step(ModelParams& params, const ModelParams& grad);
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<double> first_;
  std::vector<double> second_;
  std::uint64_t steps_ = 0;
};

}  // namespace tgkd
