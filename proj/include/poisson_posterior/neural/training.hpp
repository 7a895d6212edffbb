#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <variant>
#include <vector>

#include "../core.hpp"
#include "../prior_models.hpp"
#include "network.hpp"

namespace poisson_posterior::neural {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class Precision { float32, float64 };

/// Synthetic signals corrupted at a fixed gain; the network sees y = z / gain.
struct SignalTask {
  SignalConfig signal;
  double gain = 64.0;
};

/// Scalar pairs x ~ prior, y = z / gain with z ~ Poisson(gain x).
struct ToyTask {
  PriorSpec prior = PriorSpec::bimodal();
  double gain = 1.0;
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 64;
  std::size_t max_steps = 20000;
  std::size_t validate_every = 50;
  std::size_t patience = 20;  // validation rounds without improvement
  std::size_t validation_size = 64;
  double final_lr_fraction = 1.0;  // cosine decay of the learning rate to lr * fraction
  std::uint64_t data_seed = 1;
  std::uint64_t validation_seed = 2;
  Precision precision = Precision::float32;
  std::variant<SignalTask, ToyTask> task = SignalTask{};

  void validate() const {
    if (!(adam.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (batch_size < 1 || validate_every < 1 || validation_size < 1)
      throw std::invalid_argument("batch size, validation cadence and validation size must be >= 1");
    if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0))
      throw std::invalid_argument("final_lr_fraction must lie in (0, 1]");
  }
};

struct HistoryEntry {
  std::size_t step = 0;
  double train_loss = 0.0;  // mean training loss since the previous validation
  double val_psnr = 0.0;
};

struct TrainResult {
  DenoiserModel model;
  std::vector<HistoryEntry> history;
  double best_val_psnr = -std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
};

/// Thrown when the training loss stops being finite; carries the best
/// checkpoint seen so far (the initial model if no validation happened).
class training_diverged : public numerical_error {
 public:
  training_diverged(const std::string& what, DenoiserModel checkpoint)
      : numerical_error(what), checkpoint_(std::move(checkpoint)) {}
  const DenoiserModel& checkpoint() const { return checkpoint_; }

 private:
  DenoiserModel checkpoint_;
};

inline double target_value(TargetDomain target, double x, double floor) {
  return target == TargetDomain::x ? x : std::log(std::clamp(x, floor, 1.0));
}

/// One batch of (noisy input, target) pairs drawn from `task`.
template <class Rng>
Batch sample_batch(const std::variant<SignalTask, ToyTask>& task, TargetDomain target, double floor,
                   std::size_t count, Rng& rng) {
  Batch b;
  b.count = count;
  if (const auto* s = std::get_if<SignalTask>(&task)) {
    b.length = s->signal.length;
    b.input.reserve(count * b.length);
    b.target.reserve(count * b.length);
    b.clean.reserve(count * b.length);
    for (std::size_t i = 0; i < count; ++i) {
      const auto x = generate_signal(s->signal, rng);
      const auto obs = corrupt_poisson(x, s->gain, rng);
      b.input.insert(b.input.end(), obs.y.begin(), obs.y.end());
      b.clean.insert(b.clean.end(), x.begin(), x.end());
      for (double v : x) b.target.push_back(target_value(target, v, floor));
    }
  } else {
    const auto& t = std::get<ToyTask>(task);
    b.length = 1;
    const auto xs = sample_prior(t.prior, count, rng);
    const auto obs = corrupt_poisson(xs, t.gain, rng);
    b.input = obs.y;
    for (double v : xs) b.target.push_back(target == TargetDomain::x ? v : std::log(v));
  }
  return b;
}

/// Input/output standardization estimated from a pilot batch.
inline Normalization normalization_from(const Batch& b) {
  auto moments = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    s = std::sqrt(s / static_cast<double>(v.size()));
    return std::pair{m, s > 0.0 ? s : 1.0};
  };
  const auto [im, is] = moments(b.input);
  const auto [om, os] = moments(b.target);
  return {im, is, om, os};
}

struct TrainingData {
  std::function<Batch(std::mt19937_64&, std::size_t)> next;
  Batch validation;
};

inline TrainingData make_training_data(const TrainConfig& cfg, const DenoiserModel& model) {
  TrainingData data;
  const auto task = cfg.task;
  const auto target = model.target;
  const double floor = model.floor;
  data.next = [task, target, floor](std::mt19937_64& rng, std::size_t count) {
    return sample_batch(task, target, floor, count, rng);
  };
  std::mt19937_64 vrng(cfg.validation_seed);
  data.validation = sample_batch(task, target, floor, cfg.validation_size, vrng);
  return data;
}

inline double psnr_from_mse(double mse) { return mse < 1e-10 ? 100.0 : 10.0 * std::log10(1.0 / mse); }

namespace detail {

template <class S>
std::vector<double> predict_targets(Network<S>& net, const std::vector<S>& params, const DenoiserModel& model,
                                    const Batch& b) {
  const auto x = normalized_input<S>(model, b.input);
  const auto& out = net.forward(params.data(), x.data(), b.count, samples_per_row(model.arch, b.length));
  std::vector<double> r(static_cast<std::size_t>(out.size()));
  for (std::size_t i = 0; i < r.size(); ++i)
    r[i] = static_cast<double>(out.data()[i]) * model.norm.output_scale + model.norm.output_shift;
  return r;
}

/// Validation PSNR: against the clean signal through predict_denoised's
/// clamp when clean data is available, else against the targets.
template <class S>
double validation_psnr(Network<S>& net, const std::vector<S>& params, const DenoiserModel& model, const Batch& b) {
  const auto pred = predict_targets(net, params, model, b);
  double sse = 0.0;
  if (!b.clean.empty()) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double xhat = model.target == TargetDomain::x ? std::clamp(pred[i], 0.0, 1.0)
                                                          : std::clamp(std::exp(pred[i]), model.floor, 1.0);
      sse += (xhat - b.clean[i]) * (xhat - b.clean[i]);
    }
  } else {
    for (std::size_t i = 0; i < pred.size(); ++i) sse += (pred[i] - b.target[i]) * (pred[i] - b.target[i]);
  }
  return psnr_from_mse(sse / static_cast<double>(pred.size()));
}

template <class S>
TrainResult train_impl(const DenoiserModel& initial, const TrainConfig& cfg, const TrainingData& data) {
  TrainResult result;
  result.model = initial;
  if (cfg.max_steps == 0) return result;

  Network<S> net(initial.arch);
  std::vector<S> params(initial.weights.begin(), initial.weights.end());
  std::vector<S> best = params;
  std::vector<S> grad;
  std::vector<S> m1(params.size(), S(0));
  std::vector<S> m2(params.size(), S(0));
  std::mt19937_64 rng(cfg.data_seed);

  auto to_model = [&](const std::vector<S>& p) {
    DenoiserModel m = initial;
    m.weights.assign(p.begin(), p.end());
    return m;
  };

  double b1t = 1.0;
  double b2t = 1.0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::size_t stale = 0;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const Batch batch = data.next(rng, cfg.batch_size);
    const double loss = loss_and_gradient(net, params, initial, batch, grad);
    if (!std::isfinite(loss))
      throw training_diverged("training loss became non-finite at step " + std::to_string(step), to_model(best));

    const double progress = static_cast<double>(step - 1) / static_cast<double>(cfg.max_steps);
    const double lr = cfg.adam.lr * (cfg.final_lr_fraction +
                                     (1.0 - cfg.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    b1t *= cfg.adam.beta1;
    b2t *= cfg.adam.beta2;
    const S c1 = static_cast<S>(1.0 / (1.0 - b1t));
    const S c2 = static_cast<S>(1.0 / (1.0 - b2t));
    const S beta1 = static_cast<S>(cfg.adam.beta1);
    const S beta2 = static_cast<S>(cfg.adam.beta2);
    const S lr_s = static_cast<S>(lr);
    const S eps = static_cast<S>(cfg.adam.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m1[i] = beta1 * m1[i] + (S(1) - beta1) * grad[i];
      m2[i] = beta2 * m2[i] + (S(1) - beta2) * grad[i] * grad[i];
      params[i] -= lr_s * (m1[i] * c1) / (std::sqrt(m2[i] * c2) + eps);
    }
    loss_sum += loss;
    ++loss_count;
    result.steps_run = step;

    if (step % cfg.validate_every == 0 || step == cfg.max_steps) {
      const double val = validation_psnr(net, params, initial, data.validation);
      result.history.push_back({step, loss_sum / static_cast<double>(loss_count), val});
      loss_sum = 0.0;
      loss_count = 0;
      if (val > result.best_val_psnr) {
        result.best_val_psnr = val;
        result.best_step = step;
        best = params;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        break;
      }
    }
  }
  result.model = to_model(best);
  return result;
}

}  // namespace detail

/// Adam on the MSE loss with early stopping on validation PSNR. Returns the
/// weights of the best validation round.
inline TrainResult train(const DenoiserModel& model, const TrainConfig& cfg, const TrainingData& data) {
  cfg.validate();
  model.validate();
  if (cfg.precision == Precision::float64) return detail::train_impl<double>(model, cfg, data);
  return detail::train_impl<float>(model, cfg, data);
}

inline TrainResult train(const DenoiserModel& model, const TrainConfig& cfg) {
  return train(model, cfg, make_training_data(cfg, model));
}

}  // namespace poisson_posterior::neural
