#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <thread>

#include <gtest/gtest.h>

#include "poisson_posterior/neural/model_io.hpp"
#include "poisson_posterior/neural/training.hpp"

using namespace poisson_posterior;
using namespace poisson_posterior::neural;

namespace {

Batch signal_batch(std::size_t count, std::size_t length, TargetDomain target, std::uint64_t seed) {
  SignalTask task;
  task.signal.length = length;
  std::mt19937_64 rng(seed);
  return sample_batch(task, target, 1e-3, count, rng);
}

Batch toy_batch(std::size_t count, TargetDomain target, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_batch(ToyTask{}, target, 1e-3, count, rng);
}

}  // namespace

TEST(Architecture, ParameterCounts) {
  EXPECT_EQ(ArchSpec::mlp({1, 64, 64, 1}, Activation::relu).parameter_count(), 4353u);
  const std::size_t conv = (1 * 64 * 7 + 64) + 3 * (64 * 64 * 7 + 64) + (64 * 64 * 7 + 64) + (64 * 1 * 1 + 1);
  EXPECT_EQ(ArchSpec::conv1d().parameter_count(), conv);
  EXPECT_EQ(ArchSpec::conv1d().layers().size(), 6u);
  EXPECT_EQ(ArchSpec::conv1d().receptive_radius(), 15u);
}

TEST(Architecture, Validation) {
  EXPECT_THROW(ArchSpec::conv1d(64, Activation::relu, 5, 6), std::invalid_argument);
  EXPECT_THROW(ArchSpec::conv1d(0), std::invalid_argument);
  EXPECT_THROW(ArchSpec::mlp({1, 0, 1}, Activation::tanh), std::invalid_argument);
  EXPECT_THROW(ArchSpec::mlp({1}, Activation::tanh), std::invalid_argument);
  EXPECT_THROW(parse_activation("gelu"), std::invalid_argument);
  EXPECT_EQ(parse_activation("leaky_relu"), Activation::leaky_relu);
  EXPECT_EQ(parse_target_domain("log-x"), TargetDomain::log_x);
}

TEST(BuildModel, DeterministicAndFanInScaled) {
  const auto a = build_model(ArchSpec::conv1d(), 3);
  EXPECT_EQ(a.weights, build_model(ArchSpec::conv1d(), 3).weights);
  EXPECT_NE(a.weights, build_model(ArchSpec::conv1d(), 4).weights);
  EXPECT_EQ(a.weights.size(), ArchSpec::conv1d().parameter_count());
  // First layer fan-in is 7: bound 1/sqrt(7).
  for (std::size_t i = 0; i < 64 * 7 + 64; ++i) EXPECT_LE(std::abs(a.weights[i]), 1.0 / std::sqrt(7.0));
}

TEST(Forward, ZeroWeightsGiveFinalBias) {
  for (const auto& arch : {ArchSpec::conv1d(8), ArchSpec::mlp({1, 16, 1}, Activation::tanh)}) {
    auto m = build_model(arch, 0, TargetDomain::x, InitScheme::zeros);
    m.weights.back() = 0.7;
    const std::vector<double> in = arch.kind == ArchSpec::Kind::mlp ? std::vector<double>{0.3}
                                                                     : std::vector<double>(32, 0.25);
    for (double v : forward(m, in)) EXPECT_DOUBLE_EQ(v, 0.7);
  }
}

TEST(Forward, OutputShapes) {
  const auto conv = build_model(ArchSpec::conv1d(8), 1);
  EXPECT_EQ(forward(conv, std::vector<double>(40, 0.5)).size(), 40u);
  const auto mlp = build_model(ArchSpec::mlp({1, 8, 1}, Activation::tanh), 1);
  EXPECT_EQ(forward(mlp, {2.0}).size(), 1u);
  EXPECT_EQ(forward_batch(mlp, {1.0, 2.0, 3.0}, 3).size(), 3u);
}

TEST(Forward, Errors) {
  const auto conv = build_model(ArchSpec::conv1d(8), 1);
  EXPECT_THROW(forward(conv, std::vector<double>(5, 0.5)), std::invalid_argument);
  EXPECT_THROW(forward(conv, {0.1, 0.2, std::nan(""), 0.3, 0.4, 0.5, 0.6, 0.7}), std::invalid_argument);
  const auto mlp = build_model(ArchSpec::mlp({1, 8, 1}, Activation::tanh), 1);
  EXPECT_THROW(forward(mlp, {std::numeric_limits<double>::infinity()}), std::invalid_argument);
  EXPECT_THROW(forward_batch(mlp, {1.0, 2.0, 3.0}, 2), std::invalid_argument);
}

TEST(Forward, TranslationCovariantOnInterior) {
  const auto m = build_model(ArchSpec::conv1d(16), 5);
  const auto x = generate_signal(SignalConfig{}, 9);
  const std::size_t s = 11;
  std::vector<double> shifted(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) shifted[i] = x[(i + x.size() - s) % x.size()];
  const auto a = forward(m, x);
  const auto b = forward(m, shifted);
  const std::size_t margin = 3 * (m.arch.kernel - 1);
  for (std::size_t i = margin + s; i + margin < x.size(); ++i) EXPECT_NEAR(b[i], a[i - s], 1e-6) << i;
}

TEST(Forward, LeakyReluSlope) {
  // One 1x1 conv layer with weight 1 and LeakyReLU, then an identity 1x1 layer.
  auto m = build_model(ArchSpec::conv1d(1, Activation::leaky_relu, 1, 1), 0, TargetDomain::x, InitScheme::zeros);
  ASSERT_EQ(m.weights.size(), 4u);
  m.weights = {1.0, 0.0, 1.0, 0.0};
  const auto out = forward(m, {-2.0, -0.5, 0.0, 1.5});
  EXPECT_DOUBLE_EQ(out[0], -0.02);
  EXPECT_DOUBLE_EQ(out[1], -0.005);
  EXPECT_DOUBLE_EQ(out[2], 0.0);
  EXPECT_DOUBLE_EQ(out[3], 1.5);
}

TEST(Forward, ReflectPaddingAtBoundary) {
  // A single 3-tap averaging layer: output[0] = (x[1] + x[0] + x[1]) / 3 under reflection.
  auto m = build_model(ArchSpec::conv1d(1, Activation::relu, 1, 3), 0, TargetDomain::x, InitScheme::zeros);
  m.weights = {1.0 / 3, 1.0 / 3, 1.0 / 3, 0.0, 1.0, 0.0};
  const auto out = forward(m, {3.0, 6.0, 9.0, 12.0});
  EXPECT_NEAR(out[0], 5.0, 1e-12);
  EXPECT_NEAR(out[1], 6.0, 1e-12);
  EXPECT_NEAR(out[3], 10.0, 1e-12);
}

TEST(Forward, ConcurrentReadOnlyCallers) {
  const auto m = build_model(ArchSpec::conv1d(8), 2);
  const auto x = generate_signal(SignalConfig{}, 1);
  const auto ref = forward(m, x);
  std::vector<std::vector<double>> outs(4);
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < outs.size(); ++t) threads.emplace_back([&, t] { outs[t] = forward(m, x); });
  for (auto& t : threads) t.join();
  for (const auto& o : outs) EXPECT_EQ(o, ref);
}

TEST(GradCheck, ConvAllActivations) {
  for (auto act : {Activation::relu, Activation::leaky_relu, Activation::tanh}) {
    for (auto target : {TargetDomain::x, TargetDomain::log_x}) {
      const auto m = build_model(ArchSpec::conv1d(6, act), 11, target);
      const auto b = signal_batch(2, 24, target, 3);
      EXPECT_LE(grad_check(m, b, 1e-5), 1e-4) << to_string(act) << " " << to_string(target);
    }
  }
}

TEST(GradCheck, MlpAllActivations) {
  for (auto act : {Activation::relu, Activation::leaky_relu, Activation::tanh}) {
    auto m = build_model(ArchSpec::mlp({1, 64, 64, 1}, act), 13, TargetDomain::log_x);
    const auto b = toy_batch(16, TargetDomain::log_x, 5);
    m.norm = normalization_from(b);
    EXPECT_LE(grad_check(m, b, 1e-5), 1e-4) << to_string(act);
  }
}

TEST(GradCheck, ZeroLossBatchHasZeroGradient) {
  const auto m = build_model(ArchSpec::conv1d(6), 2);
  Batch b = signal_batch(2, 20, TargetDomain::x, 1);
  b.target = forward_batch(m, b.input, b.count);
  std::vector<double> grad;
  EXPECT_EQ(loss_and_gradient(m, b, grad), 0.0);
  double norm = 0.0;
  for (double g : grad) norm += g * g;
  EXPECT_LE(std::sqrt(norm), 1e-10);
}

TEST(GradCheck, SingleParameterClosedForm) {
  auto m = build_model(ArchSpec::mlp({1, 1}, Activation::identity), 0, TargetDomain::x, InitScheme::zeros);
  const double w = 0.8;
  m.weights = {w, 0.0};
  Batch b;
  b.count = 4;
  b.length = 1;
  b.input = {0.5, 1.0, -2.0, 3.0};
  b.target = {1.0, 0.0, 0.5, 2.0};
  std::vector<double> grad;
  loss_and_gradient(m, b, grad);
  double expected = 0.0;
  for (std::size_t i = 0; i < 4; ++i) expected += b.input[i] * (w * b.input[i] - b.target[i]);
  expected *= 2.0 / 4.0;
  EXPECT_NEAR(grad[0], expected, 1e-14);
}

TEST(Train, ZeroStepsReturnsInitialModel) {
  const auto m = build_model(ArchSpec::conv1d(4), 1);
  TrainConfig cfg;
  cfg.max_steps = 0;
  const auto r = train(m, cfg);
  EXPECT_EQ(r.model.weights, m.weights);
  EXPECT_TRUE(r.history.empty());
}

TEST(Train, OverfitsOneBatch) {
  auto m = build_model(ArchSpec::mlp({1, 32, 32, 1}, Activation::tanh), 3);
  Batch fixed;
  fixed.count = 8;
  fixed.length = 1;
  for (int i = 0; i < 8; ++i) {
    fixed.input.push_back(0.25 * i);
    fixed.target.push_back(std::sin(0.25 * i));
  }
  TrainConfig cfg;
  cfg.max_steps = 2000;
  cfg.adam.lr = 3e-3;
  cfg.patience = 1000;
  cfg.precision = Precision::float64;
  TrainingData data;
  data.next = [fixed](std::mt19937_64&, std::size_t) { return fixed; };
  data.validation = fixed;
  const auto r = train(m, cfg, data);
  std::vector<double> grad;
  EXPECT_LE(loss_and_gradient(r.model, fixed, grad), 1e-4);
}

TEST(Train, DeterministicInDoublePrecision) {
  TrainConfig cfg;
  cfg.max_steps = 60;
  cfg.validate_every = 20;
  cfg.batch_size = 4;
  cfg.validation_size = 4;
  cfg.precision = Precision::float64;
  SignalTask task;
  task.signal.length = 32;
  cfg.task = task;
  const auto m = build_model(ArchSpec::conv1d(4), 2, TargetDomain::log_x);
  const auto a = train(m, cfg);
  const auto b = train(m, cfg);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].val_psnr, b.history[i].val_psnr);
  }
  EXPECT_EQ(a.model.weights, b.model.weights);
}

TEST(Train, ReturnsBestValidationRound) {
  TrainConfig cfg;
  cfg.max_steps = 200;
  cfg.validate_every = 10;
  cfg.batch_size = 8;
  cfg.adam.lr = 1e-2;
  SignalTask task;
  task.signal.length = 32;
  cfg.task = task;
  const auto r = train(build_model(ArchSpec::conv1d(4), 6), cfg);
  double best = -1e300;
  for (const auto& h : r.history) best = std::max(best, h.val_psnr);
  EXPECT_EQ(r.best_val_psnr, best);
  const auto data = make_training_data(cfg, r.model);
  const auto pred = predict_denoised(r.model, std::vector<double>(data.validation.input.begin(),
                                                                  data.validation.input.begin() + 32));
  EXPECT_EQ(pred.size(), 32u);
}

TEST(Train, EarlyStopping) {
  TrainConfig cfg;
  cfg.max_steps = 5000;
  cfg.validate_every = 5;
  cfg.patience = 2;
  cfg.batch_size = 4;
  cfg.adam.lr = 0.5;  // too large: validation stops improving quickly
  SignalTask task;
  task.signal.length = 16;
  cfg.task = task;
  const auto r = train(build_model(ArchSpec::conv1d(2), 1), cfg);
  EXPECT_LT(r.steps_run, cfg.max_steps);
}

TEST(Train, DivergenceCarriesCheckpoint) {
  const auto m = build_model(ArchSpec::mlp({1, 4, 1}, Activation::tanh), 1);
  TrainConfig cfg;
  cfg.max_steps = 100;
  cfg.validate_every = 2;
  cfg.precision = Precision::float64;
  Batch good = toy_batch(8, TargetDomain::x, 1);
  TrainingData data;
  int calls = 0;
  data.next = [&](std::mt19937_64&, std::size_t) {
    Batch b = good;
    if (++calls > 5) b.target[0] = std::numeric_limits<double>::infinity();
    return b;
  };
  data.validation = good;
  try {
    train(m, cfg, data);
    FAIL() << "expected divergence";
  } catch (const training_diverged& e) {
    EXPECT_NO_THROW(e.checkpoint().validate());
    EXPECT_NE(e.checkpoint().weights, m.weights);
  }
}

TEST(Train, ConfigValidation) {
  TrainConfig cfg;
  cfg.adam.lr = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.patience = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Train, LogTargetsAreClampedBeforeLog) {
  SignalTask task;
  task.signal.kernel_std = 0.0;
  std::mt19937_64 rng(1);
  const auto b = sample_batch(task, TargetDomain::log_x, 1e-3, 4, rng);
  for (double t : b.target) {
    EXPECT_TRUE(std::isfinite(t));
    EXPECT_GE(t, std::log(1e-3));
    EXPECT_LE(t, 0.0);
  }
}

TEST(PredictDenoised, ClampContract) {
  auto m = build_model(ArchSpec::conv1d(4), 0, TargetDomain::log_x, InitScheme::zeros);
  for (double v : predict_denoised(m, std::vector<double>(16, 0.3))) EXPECT_DOUBLE_EQ(v, 1.0);
  m.weights.back() = -20.0;
  for (double v : predict_denoised(m, std::vector<double>(16, 0.3))) EXPECT_DOUBLE_EQ(v, 1e-3);
  auto x = build_model(ArchSpec::conv1d(4), 3, TargetDomain::x);
  x.weights.back() = 5.0;
  for (double v : predict_denoised(x, generate_signal(SignalConfig{}, 2))) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Psnr, Cap) {
  EXPECT_EQ(psnr_from_mse(0.0), 100.0);
  EXPECT_NEAR(psnr_from_mse(0.01), 20.0, 1e-12);
}

TEST(ModelIo, RoundTrip) {
  auto m = build_model(ArchSpec::conv1d(8, Activation::leaky_relu), 9, TargetDomain::log_x);
  m.norm = {0.1, 2.0, -1.0, 0.5};
  const auto bytes = serialize_model(m);
  EXPECT_EQ(bytes.substr(0, 8), "PPDMODEL");
  const auto back = deserialize_model(bytes);
  EXPECT_EQ(back.weights, m.weights);
  EXPECT_EQ(back.target, m.target);
  EXPECT_EQ(back.arch.channels, 8u);
  EXPECT_EQ(back.arch.activation, Activation::leaky_relu);
  EXPECT_EQ(back.norm.input_scale, 2.0);
  EXPECT_EQ(back.norm.output_shift, -1.0);
  EXPECT_EQ(serialize_model(back), bytes);

  const auto dir = std::filesystem::temp_directory_path() / "pp_model_io_test";
  std::filesystem::remove_all(dir);
  save_model(m, dir / "m.ppdm");
  EXPECT_EQ(load_model(dir / "m.ppdm").weights, m.weights);
  std::filesystem::remove_all(dir);
}

TEST(ModelIo, WeightsAreLittleEndianDoubles) {
  auto m = build_model(ArchSpec::mlp({1, 1}, Activation::identity), 0, TargetDomain::x, InitScheme::zeros);
  m.weights = {1.0, -2.0};
  const auto bytes = serialize_model(m);
  const std::string tail = bytes.substr(bytes.size() - 16);
  // 1.0 = 0x3FF0000000000000, -2.0 = 0xC000000000000000
  EXPECT_EQ(static_cast<unsigned char>(tail[7]), 0x3Fu);
  EXPECT_EQ(static_cast<unsigned char>(tail[6]), 0xF0u);
  EXPECT_EQ(static_cast<unsigned char>(tail[15]), 0xC0u);
}

TEST(ModelIo, RejectsCorruptFiles) {
  const auto bytes = serialize_model(build_model(ArchSpec::mlp({1, 4, 1}, Activation::tanh), 0));
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_model(bad), std::runtime_error);
  std::string version = bytes;
  version[8] = 9;
  EXPECT_THROW(deserialize_model(version), std::runtime_error);
  EXPECT_THROW(deserialize_model(bytes.substr(0, bytes.size() - 3)), std::runtime_error);
}
