#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "../core.hpp"
#include "../prior_models.hpp"

namespace poisson_posterior::neural {

enum class Activation { relu, leaky_relu, tanh, identity };

inline constexpr double kLeakySlope = 0.01;

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
    default: return "identity";
  }
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

/// Convolution over the sample axis with reflect padding. A dense layer is
/// the kernel-1 case applied to length-1 inputs.
struct LayerSpec {
  std::size_t in = 1;
  std::size_t out = 1;
  std::size_t kernel = 1;
  Activation activation = Activation::identity;

  std::size_t weight_count() const { return out * in * kernel; }
  std::size_t parameter_count() const { return weight_count() + out; }
};

struct ArchSpec {
  enum class Kind { mlp, conv1d };

  Kind kind = Kind::conv1d;
  std::vector<std::size_t> widths{1, 64, 64, 1};  // mlp only
  std::size_t conv_layers = 5;
  std::size_t kernel = 7;
  std::size_t channels = 64;
  Activation activation = Activation::relu;

  static ArchSpec mlp(std::vector<std::size_t> widths, Activation act) {
    ArchSpec a;
    a.kind = Kind::mlp;
    a.widths = std::move(widths);
    a.activation = act;
    a.validate();
    return a;
  }

  static ArchSpec conv1d(std::size_t channels = 64, Activation act = Activation::relu, std::size_t layers = 5,
                         std::size_t kernel = 7) {
    ArchSpec a;
    a.kind = Kind::conv1d;
    a.channels = channels;
    a.activation = act;
    a.conv_layers = layers;
    a.kernel = kernel;
    a.validate();
    return a;
  }

  void validate() const {
    if (kind == Kind::mlp) {
      if (widths.size() < 2) throw std::invalid_argument("mlp needs at least input and output widths");
      for (auto w : widths)
        if (w < 1) throw std::invalid_argument("mlp widths must be >= 1");
    } else {
      if (kernel % 2 == 0) throw std::invalid_argument("conv kernel size must be odd");
      if (conv_layers < 1 || channels < 1) throw std::invalid_argument("conv layers and channels must be >= 1");
    }
  }

  /// Layers in evaluation order. The conv net is `conv_layers` kernel-k
  /// convolutions with activations followed by a linear 1x1 convolution.
  std::vector<LayerSpec> layers() const {
    validate();
    std::vector<LayerSpec> out;
    if (kind == Kind::mlp) {
      for (std::size_t i = 0; i + 1 < widths.size(); ++i)
        out.push_back({widths[i], widths[i + 1], 1, i + 2 < widths.size() ? activation : Activation::identity});
    } else {
      std::size_t in = 1;
      for (std::size_t i = 0; i < conv_layers; ++i) {
        out.push_back({in, channels, kernel, activation});
        in = channels;
      }
      out.push_back({channels, 1, 1, Activation::identity});
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers()) n += l.parameter_count();
    return n;
  }

  std::size_t input_channels() const { return kind == Kind::mlp ? widths.front() : 1; }
  std::size_t output_channels() const { return kind == Kind::mlp ? widths.back() : 1; }
  std::size_t receptive_radius() const { return kind == Kind::mlp ? 0 : conv_layers * (kernel / 2); }
};

enum class TargetDomain { x, log_x };

inline std::string_view to_string(TargetDomain t) { return t == TargetDomain::x ? "x" : "log-x"; }

inline TargetDomain parse_target_domain(std::string_view s) {
  if (s == "x") return TargetDomain::x;
  if (s == "log-x" || s == "log_x") return TargetDomain::log_x;
  throw std::invalid_argument("unknown target domain '" + std::string(s) + "' (expected x or log-x)");
}

/// Affine maps around the network: net_in = (y - input_shift) / input_scale,
/// prediction = net_out * output_scale + output_shift.
struct Normalization {
  double input_shift = 0.0;
  double input_scale = 1.0;
  double output_shift = 0.0;
  double output_scale = 1.0;
};

/// Weight layout: layers in evaluation order; per layer the weights as
/// [out][in][kernel] (row-major) followed by the `out` biases.
struct DenoiserModel {
  ArchSpec arch;
  std::vector<double> weights;
  TargetDomain target = TargetDomain::x;
  Normalization norm;
  double floor = 1e-3;  // positivity floor used for log targets and predictions

  void validate() const {
    if (weights.size() != arch.parameter_count())
      throw std::invalid_argument("model weight count does not match the architecture");
    for (double w : weights)
      if (!std::isfinite(w)) throw std::invalid_argument("model weights must be finite");
    if (!(norm.input_scale != 0.0) || !(norm.output_scale != 0.0))
      throw std::invalid_argument("normalization scales must be non-zero");
  }
};

enum class InitScheme { fan_in_uniform, zeros };

/// Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline DenoiserModel build_model(const ArchSpec& arch, std::uint64_t seed, TargetDomain target = TargetDomain::x,
                                 InitScheme init = InitScheme::fan_in_uniform) {
  DenoiserModel m;
  m.arch = arch;
  m.target = target;
  m.weights.reserve(arch.parameter_count());
  std::mt19937_64 rng(seed);
  for (const auto& l : arch.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in * l.kernel));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < l.parameter_count(); ++i)
      m.weights.push_back(init == InitScheme::zeros ? 0.0 : u(rng));
  }
  return m;
}

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Forward/backward engine. Activations are (channels x batch*length)
/// matrices; column b*length + t is sample b at position t. Convolutions
/// go through an im2col matrix whose row j*in + c holds channel c at tap j,
/// so each tap is one contiguous copy; weights are permuted to match.
template <class S>
class Network {
 public:
  explicit Network(const ArchSpec& arch) : arch_(arch), layers_(arch.layers()) {
    std::size_t off = 0;
    for (const auto& l : layers_) {
      offsets_.push_back(off);
      off += l.parameter_count();
    }
    parameter_count_ = off;
    acts_.resize(layers_.size() + 1);
    im2col_.resize(layers_.size());
    tap_weights_.resize(layers_.size());
  }

  const ArchSpec& arch() const { return arch_; }
  std::size_t parameter_count() const { return parameter_count_; }

  /// `input` holds `batch` samples, each `length` positions of
  /// input_channels() values (sample-major). Returns the output activations.
  const Matrix<S>& forward(const S* params, const S* input, std::size_t batch, std::size_t length) {
    batch_ = batch;
    length_ = length;
    const auto cols = static_cast<Eigen::Index>(batch * length);
    acts_[0] = Eigen::Map<const Matrix<S>>(input, static_cast<Eigen::Index>(arch_.input_channels()), cols);
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      const auto& l = layers_[li];
      Matrix<S>& out = acts_[li + 1];
      if (l.kernel == 1) {
        out.noalias() = weights(params, li) * acts_[li];
      } else {
        load_tap_weights(params, li);
        build_columns(li);
        out.noalias() = tap_weights_[li] * im2col_[li];
      }
      out.colwise() += biases(params, li);
      apply_activation(out, l.activation);
    }
    return acts_.back();
  }

  /// Writes dLoss/dparams into `grad` given dLoss/doutput of the last forward().
  void backward(const S* params, const Matrix<S>& d_output, S* grad) {
    Matrix<S> delta = d_output;
    for (std::size_t li = layers_.size(); li-- > 0;) {
      const auto& l = layers_[li];
      activation_backward(delta, acts_[li + 1], l.activation);
      Eigen::Map<Vector<S>> gb(grad + offsets_[li] + l.weight_count(), static_cast<Eigen::Index>(l.out));
      gb = delta.rowwise().sum();
      Eigen::Map<RowMatrix<S>> gw(grad + offsets_[li], static_cast<Eigen::Index>(l.out),
                                  static_cast<Eigen::Index>(l.in * l.kernel));
      if (l.kernel == 1) {
        gw.noalias() = delta * acts_[li].transpose();
        if (li == 0) break;
        delta = weights(params, li).transpose() * delta;
      } else {
        const RowMatrix<S> g_taps = delta * im2col_[li].transpose();
        for (std::size_t c = 0; c < l.in; ++c)
          for (std::size_t j = 0; j < l.kernel; ++j)
            gw.col(static_cast<Eigen::Index>(c * l.kernel + j)) = g_taps.col(static_cast<Eigen::Index>(j * l.in + c));
        if (li == 0) break;
        const Matrix<S> d_col = tap_weights_[li].transpose() * delta;
        delta = scatter_columns(li, d_col);
      }
    }
  }

 private:
  Eigen::Map<const RowMatrix<S>> weights(const S* params, std::size_t li) const {
    const auto& l = layers_[li];
    return Eigen::Map<const RowMatrix<S>>(params + offsets_[li], static_cast<Eigen::Index>(l.out),
                                          static_cast<Eigen::Index>(l.in * l.kernel));
  }
  Eigen::Map<const Vector<S>> biases(const S* params, std::size_t li) const {
    const auto& l = layers_[li];
    return Eigen::Map<const Vector<S>>(params + offsets_[li] + l.weight_count(), static_cast<Eigen::Index>(l.out));
  }

  void load_tap_weights(const S* params, std::size_t li) {
    const auto& l = layers_[li];
    const auto w = weights(params, li);
    Matrix<S>& t = tap_weights_[li];
    t.resize(static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in * l.kernel));
    for (std::size_t c = 0; c < l.in; ++c)
      for (std::size_t j = 0; j < l.kernel; ++j)
        t.col(static_cast<Eigen::Index>(j * l.in + c)) = w.col(static_cast<Eigen::Index>(c * l.kernel + j));
  }

  std::size_t tap_source(std::size_t t, std::size_t j, std::size_t kernel) const {
    return reflect_index(static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(kernel / 2), length_);
  }

  void build_columns(std::size_t li) {
    const auto& l = layers_[li];
    const Matrix<S>& in = acts_[li];
    Matrix<S>& col = im2col_[li];
    col.resize(static_cast<Eigen::Index>(l.in * l.kernel), static_cast<Eigen::Index>(batch_ * length_));
    const S* src = in.data();
    S* dst = col.data();
    for (std::size_t b = 0; b < batch_; ++b)
      for (std::size_t t = 0; t < length_; ++t)
        for (std::size_t j = 0; j < l.kernel; ++j) {
          const S* from = src + (b * length_ + tap_source(t, j, l.kernel)) * l.in;
          std::copy(from, from + l.in, dst);
          dst += l.in;
        }
  }

  Matrix<S> scatter_columns(std::size_t li, const Matrix<S>& d_col) const {
    const auto& l = layers_[li];
    Matrix<S> d_in = Matrix<S>::Zero(static_cast<Eigen::Index>(l.in), static_cast<Eigen::Index>(batch_ * length_));
    const S* src = d_col.data();
    S* dst = d_in.data();
    for (std::size_t b = 0; b < batch_; ++b)
      for (std::size_t t = 0; t < length_; ++t)
        for (std::size_t j = 0; j < l.kernel; ++j) {
          S* to = dst + (b * length_ + tap_source(t, j, l.kernel)) * l.in;
          for (std::size_t c = 0; c < l.in; ++c) to[c] += src[c];
          src += l.in;
        }
    return d_in;
  }

  static void apply_activation(Matrix<S>& z, Activation a) {
    switch (a) {
      case Activation::relu: z = z.cwiseMax(S(0)); break;
      case Activation::leaky_relu: z = z.unaryExpr([](S v) { return v > S(0) ? v : S(kLeakySlope) * v; }); break;
      case Activation::tanh: z = z.array().tanh().matrix(); break;
      case Activation::identity: break;
    }
  }

  // Derivative from the post-activation value: relu/leaky keep the sign of
  // the pre-activation, tanh' = 1 - a^2.
  static void activation_backward(Matrix<S>& delta, const Matrix<S>& a, Activation act) {
    switch (act) {
      case Activation::relu: delta = (a.array() > S(0)).select(delta, S(0)); break;
      case Activation::leaky_relu: delta = (a.array() > S(0)).select(delta, S(kLeakySlope) * delta); break;
      case Activation::tanh: delta.array() *= (S(1) - a.array().square()); break;
      case Activation::identity: break;
    }
  }

  ArchSpec arch_;
  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> offsets_;
  std::size_t parameter_count_ = 0;
  std::vector<Matrix<S>> acts_;
  std::vector<Matrix<S>> im2col_;
  std::vector<Matrix<S>> tap_weights_;
  std::size_t batch_ = 0;
  std::size_t length_ = 0;
};

/// Inputs and targets for `count` samples of `length` positions each.
/// For an mlp, `length` is the input width and targets hold one value per
/// output unit.
struct Batch {
  std::size_t count = 0;
  std::size_t length = 0;
  std::vector<double> input;
  std::vector<double> target;
  std::vector<double> clean;  // ground-truth signal, when known
};

namespace detail {

inline std::size_t samples_per_row(const ArchSpec& arch, std::size_t length) {
  return arch.kind == ArchSpec::Kind::mlp ? 1 : length;
}

template <class S>
std::vector<S> normalized_input(const DenoiserModel& m, const std::vector<double>& input) {
  std::vector<S> out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (!std::isfinite(input[i])) throw std::invalid_argument("forward: non-finite input");
    out[i] = static_cast<S>((input[i] - m.norm.input_shift) / m.norm.input_scale);
  }
  return out;
}

inline void check_input_shape(const DenoiserModel& m, std::size_t count, std::size_t length) {
  if (m.arch.kind == ArchSpec::Kind::mlp) {
    if (length != m.arch.widths.front()) throw std::invalid_argument("forward: input width does not match the mlp");
  } else if (length < m.arch.kernel) {
    throw std::invalid_argument("forward: input shorter than the convolution kernel");
  }
  if (count == 0) throw std::invalid_argument("forward: empty batch");
}

}  // namespace detail

/// Network output in target units for `count` samples (sample-major).
inline std::vector<double> forward_batch(const DenoiserModel& model, const std::vector<double>& input,
                                         std::size_t count) {
  if (count == 0 || input.size() % count != 0) throw std::invalid_argument("forward: input size not divisible by count");
  const std::size_t length = input.size() / count;
  detail::check_input_shape(model, count, length);
  Network<double> net(model.arch);
  const auto x = detail::normalized_input<double>(model, input);
  const std::size_t positions = detail::samples_per_row(model.arch, length);
  const auto& out = net.forward(model.weights.data(), x.data(), count, positions);
  std::vector<double> result(out.data(), out.data() + out.size());
  for (double& v : result) v = v * model.norm.output_scale + model.norm.output_shift;
  return result;
}

/// Output for one sample: a vector the length of the input for the conv net,
/// the output layer for the mlp.
inline std::vector<double> forward(const DenoiserModel& model, const std::vector<double>& input) {
  return forward_batch(model, input, 1);
}

/// Mean squared error in target units and its gradient w.r.t. the weights.
template <class S>
double loss_and_gradient(Network<S>& net, const std::vector<S>& params, const DenoiserModel& model,
                         const Batch& batch, std::vector<S>& grad) {
  const auto x = detail::normalized_input<S>(model, batch.input);
  const std::size_t positions = detail::samples_per_row(model.arch, batch.length);
  const auto& out = net.forward(params.data(), x.data(), batch.count, positions);
  if (static_cast<std::size_t>(out.size()) != batch.target.size())
    throw std::invalid_argument("loss: target size does not match the network output");
  const double n = static_cast<double>(batch.target.size());
  const double os = model.norm.output_scale;
  Matrix<S> d_out(out.rows(), out.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double pred = static_cast<double>(out.data()[i]) * os + model.norm.output_shift;
    const double r = pred - batch.target[static_cast<std::size_t>(i)];
    loss += r * r;
    d_out.data()[i] = static_cast<S>(2.0 * r * os / n);
  }
  grad.assign(params.size(), S(0));
  net.backward(params.data(), d_out, grad.data());
  return loss / n;
}

inline double loss_and_gradient(const DenoiserModel& model, const Batch& batch, std::vector<double>& grad) {
  Network<double> net(model.arch);
  return loss_and_gradient(net, model.weights, model, batch, grad);
}

namespace detail {

/// Loss alone, evaluated entirely in S.
template <class S>
S loss_value(Network<S>& net, const std::vector<S>& params, const DenoiserModel& model, const Batch& batch) {
  const auto x = normalized_input<S>(model, batch.input);
  const auto& out = net.forward(params.data(), x.data(), batch.count, samples_per_row(model.arch, batch.length));
  S loss = 0;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const S r = out.data()[i] * static_cast<S>(model.norm.output_scale) + static_cast<S>(model.norm.output_shift) -
                static_cast<S>(batch.target[static_cast<std::size_t>(i)]);
    loss += r * r;
  }
  return loss / static_cast<S>(out.size());
}

}  // namespace detail

/// Max relative error between the double-precision analytic gradient and
/// central differences over `samples` randomly chosen parameters (all of them
/// if fewer). The reference loss is evaluated in long double so its rounding
/// noise stays far below the tolerance even for tiny gradient entries.
inline double grad_check(const DenoiserModel& model, const Batch& batch, double fd_step, std::size_t samples = 200,
                         std::uint64_t seed = 7) {
  std::vector<double> grad;
  loss_and_gradient(model, batch, grad);

  std::vector<std::size_t> idx(grad.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (samples < idx.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(samples);
  }
  Network<long double> net(model.arch);
  std::vector<long double> params(model.weights.begin(), model.weights.end());
  double worst = 0.0;
  for (std::size_t i : idx) {
    const long double w = params[i];
    params[i] = w + fd_step;
    const long double up = detail::loss_value(net, params, model, batch);
    params[i] = w - fd_step;
    const long double down = detail::loss_value(net, params, model, batch);
    params[i] = w;
    const double numeric = static_cast<double>((up - down) / (2.0L * fd_step));
    const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - grad[i]) / denom);
  }
  return worst;
}

/// Point estimate of the clean signal: clamp(out, 0, 1) for x-domain models,
/// clamp(exp(out), floor, 1) for log-domain models.
inline std::vector<double> predict_denoised(const DenoiserModel& model, const std::vector<double>& y) {
  auto out = forward(model, y);
  for (double& v : out)
    v = model.target == TargetDomain::x ? std::clamp(v, 0.0, 1.0) : std::clamp(std::exp(v), model.floor, 1.0);
  return out;
}

}  // namespace poisson_posterior::neural
