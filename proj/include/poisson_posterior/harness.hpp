#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "density_reconstruction.hpp"
#include "io.hpp"
#include "moment_recursion.hpp"
#include "neural/model_io.hpp"
#include "neural/training.hpp"
#include "posterior_oracle.hpp"
#include "serialization.hpp"

namespace poisson_posterior {

struct Metrics {
  double psnr = 0.0;
  double mse = 0.0;
};

/// MSE and PSNR for signals with peak value 1; PSNR is capped at 100 dB.
inline Metrics metrics(const std::vector<double>& xhat, const std::vector<double>& x) {
  if (xhat.size() != x.size()) throw std::invalid_argument("metrics: length mismatch");
  if (x.empty()) throw std::invalid_argument("metrics: empty signals");
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sse += (xhat[i] - x[i]) * (xhat[i] - x[i]);
  const double mse = sse / static_cast<double>(x.size());
  return {neural::psnr_from_mse(mse), mse};
}

/// Worker count: POISSON_POSTERIOR_THREADS if set, else the core count,
/// never more than `jobs`.
inline std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("POISSON_POSTERIOR_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

/// Runs f(0..n-1) on up to `threads` workers; the first failure by index is rethrown.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Toy posterior experiment

inline neural::TrainConfig default_toy_training() {
  neural::TrainConfig c;
  c.batch_size = 256;
  c.max_steps = 3000;
  c.validate_every = 100;
  c.patience = 30;
  c.validation_size = 4096;
  c.final_lr_fraction = 0.05;
  c.precision = neural::Precision::float64;
  return c;
}

struct ToyConfig {
  PriorSpec prior = PriorSpec::bimodal();
  double y = 4.0;
  int order = 4;
  std::size_t oracle_grid = kDefaultOracleGridSize;
  double oracle_fd_step = 1e-3;
  double network_fd_step = 0.05;
  ReconstructionConfig recon;
  bool train_networks = true;
  neural::ArchSpec arch = neural::ArchSpec::mlp({1, 64, 64, 1}, neural::Activation::tanh);
  neural::TrainConfig train = default_toy_training();
  std::size_t normalization_samples = 8192;
  std::uint64_t seed = 0;

  void validate() const {
    prior.validate();
    if (!(y >= 0.0) || !std::isfinite(y)) throw std::invalid_argument("y must be finite and >= 0");
    if (order < 2 || order > kMaxMomentOrder) throw std::invalid_argument("order must lie in [2, 6]");
    if (!(oracle_fd_step > 0.0) || !(network_fd_step > 0.0)) throw std::invalid_argument("fd steps must be positive");
    if (y < static_cast<double>(order) * oracle_fd_step)
      throw std::invalid_argument("y too small for the oracle finite-difference stencil");
    if (train_networks) {
      if (y < static_cast<double>(order) * network_fd_step)
        throw std::invalid_argument("y too small for the network finite-difference stencil");
      if (arch.kind != neural::ArchSpec::Kind::mlp || arch.input_channels() != 1 || arch.output_channels() != 1)
        throw std::invalid_argument("toy networks must be scalar mlps");
      train.validate();
    }
  }
};

struct ToyRoute {
  std::string name;  // oracle-eta, oracle-x, network-eta, network-x
  MomentSet moments;
  DensityGrid density;  // on the comparison grid in x
  CumulativeError error;
  std::size_t maxima = 0;
};

struct ToyTraining {
  neural::TargetDomain target = neural::TargetDomain::x;
  double best_val_psnr = 0.0;
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
};

struct ToyReport {
  PriorSpec prior;
  double y = 0.0;
  DensityGrid truth;
  MomentSet oracle_eta;
  MomentSet oracle_x;
  std::vector<ToyRoute> routes;
  std::vector<ToyTraining> training;

  const ToyRoute& route(const std::string& name) const {
    for (const auto& r : routes)
      if (r.name == name) return r;
    throw std::out_of_range("no toy route named " + name);
  }
};

namespace detail {

/// Gram-Charlier reconstruction of one route on the comparison grid. A
/// posterior narrower than the grid spacing is represented as a spike at
/// the posterior mean.
inline DensityGrid reconstruct_on_x(const MomentSet& m, const std::vector<double>& grid_x,
                                    const ReconstructionConfig& cfg) {
  const double spacing = grid_x[1] - grid_x[0];
  const double mu2 = m.order() >= 2 ? m.moment(2) : 0.0;
  const double center = m.domain == Domain::eta ? std::exp(m.mu1) : m.mu1;
  const double width = m.domain == Domain::eta ? std::sqrt(std::max(mu2, 0.0)) * center : std::sqrt(std::max(mu2, 0.0));
  if (!(width > spacing)) {
    const double loc = std::clamp(center, grid_x.front(), grid_x.back());
    return prior_on_grid(PriorSpec::point_mass(loc, {grid_x.front(), grid_x.back()}), grid_x);
  }
  if (m.domain == Domain::eta) return eta_to_x(gram_charlier(m, moment_grid(m, cfg), cfg), grid_x);
  return gram_charlier(m, grid_x, cfg);
}

inline ToyRoute make_route(std::string name, MomentSet m, const DensityGrid& truth, const ReconstructionConfig& cfg) {
  ToyRoute r;
  r.name = std::move(name);
  r.density = reconstruct_on_x(m, truth.grid, cfg);
  r.moments = std::move(m);
  r.error = cumulative_sq_error(r.density, truth);
  r.maxima = r.density.interior_maxima().size();
  return r;
}

}  // namespace detail

/// Trains a scalar MLP on (y, target) pairs from prior x Poisson.
inline neural::TrainResult train_toy_network(const ToyConfig& cfg, neural::TargetDomain target) {
  auto model = neural::build_model(cfg.arch, cfg.seed, target);
  neural::TrainConfig tc = cfg.train;
  tc.task = neural::ToyTask{cfg.prior, 1.0};
  tc.data_seed = 1000 + cfg.seed;
  tc.validation_seed = 2000 + cfg.seed;
  std::mt19937_64 pilot(3000 + cfg.seed);
  model.norm = neural::normalization_from(
      neural::sample_batch(tc.task, target, model.floor, cfg.normalization_samples, pilot));
  return neural::train(model, tc);
}

/// Oracle truth, oracle-backed recursion in both domains and, optionally,
/// network-backed recursion, each reconstructed by Gram-Charlier on the
/// comparison grid and scored by cumulative squared error.
inline ToyReport run_toy_posterior(const ToyConfig& cfg) {
  cfg.validate();
  ToyReport rep;
  rep.prior = cfg.prior;
  rep.y = cfg.y;
  auto oracle = std::make_shared<const PosteriorOracle>(cfg.prior, cfg.oracle_grid);
  rep.truth = oracle->posterior_density_on(cfg.y, comparison_grid(cfg.recon));
  rep.oracle_eta = oracle->central_moments(cfg.y, cfg.order, Domain::eta);
  rep.oracle_x = oracle->central_moments(cfg.y, cfg.order, Domain::x);

  const FdConfig ofd{cfg.oracle_fd_step, cfg.order};
  rep.routes.push_back(detail::make_route(
      "oracle-eta", recursion_scalar(oracle_mu1(oracle, Domain::eta, cfg.oracle_fd_step), cfg.y, cfg.order, ofd),
      rep.truth, cfg.recon));
  rep.routes.push_back(detail::make_route(
      "oracle-x", baseline_x_recursion(oracle_mu1(oracle, Domain::x, cfg.oracle_fd_step), cfg.y, cfg.order, ofd),
      rep.truth, cfg.recon));

  if (cfg.train_networks) {
    std::vector<neural::TrainResult> nets(2);
    const neural::TargetDomain targets[2] = {neural::TargetDomain::log_x, neural::TargetDomain::x};
    parallel_for(2, worker_count(2), [&](std::size_t i) { nets[i] = train_toy_network(cfg, targets[i]); });
    for (std::size_t i = 0; i < 2; ++i)
      rep.training.push_back({targets[i], nets[i].best_val_psnr, nets[i].best_step, nets[i].steps_run});
    const FdConfig nfd{cfg.network_fd_step, cfg.order};
    auto as_mu1 = [&](const neural::DenoiserModel& m) {
      return Mu1Estimator::finite_difference([m](double y) { return neural::forward(m, {y})[0]; }, cfg.network_fd_step);
    };
    rep.routes.push_back(detail::make_route("network-eta", recursion_scalar(as_mu1(nets[0].model), cfg.y, cfg.order, nfd),
                                            rep.truth, cfg.recon));
    rep.routes.push_back(detail::make_route(
        "network-x", baseline_x_recursion(as_mu1(nets[1].model), cfg.y, cfg.order, nfd), rep.truth, cfg.recon));
  }
  return rep;
}

inline nlohmann::json toy_report_json(const ToyReport& rep) {
  nlohmann::json j;
  j["prior"] = prior_to_json(rep.prior);
  j["y"] = rep.y;
  j["oracle"] = {{"eta", to_json(rep.oracle_eta)}, {"x", to_json(rep.oracle_x)}};
  j["routes"] = nlohmann::json::array();
  for (const auto& r : rep.routes) {
    j["routes"].push_back({{"name", r.name},
                           {"moments", to_json(r.moments)},
                           {"total_squared_error", r.error.total},
                           {"interior_maxima", r.maxima},
                           {"negative_mass", negative_mass(r.density)}});
  }
  // Recursion against direct quadrature, per order, in the log domain.
  const auto& oe = rep.route("oracle-eta").moments;
  nlohmann::json table = nlohmann::json::array();
  for (int k = 1; k <= oe.order(); ++k) {
    nlohmann::json row{{"k", k}, {"quadrature", rep.oracle_eta.moment(k)}, {"oracle_recursion", oe.moment(k)}};
    for (const auto& r : rep.routes)
      if (r.name == "network-eta") row["network_recursion"] = r.moments.moment(k);
    table.push_back(row);
  }
  j["moment_table"] = table;
  j["training"] = nlohmann::json::array();
  for (const auto& t : rep.training)
    j["training"].push_back({{"target_domain", std::string(neural::to_string(t.target))},
                             {"best_val_psnr", t.best_val_psnr},
                             {"best_step", t.best_step},
                             {"steps_run", t.steps_run}});
  return j;
}

/// Long format: route, x, approx, truth, cumulative_error. The truth rows
/// are listed under route "oracle".
inline std::string toy_curves_csv(const ToyReport& rep) {
  std::ostringstream os;
  os.precision(17);
  os << "route,x,approx,truth,cumulative_error\n";
  for (std::size_t i = 0; i < rep.truth.size(); ++i)
    os << "oracle," << rep.truth.grid[i] << ',' << rep.truth.values[i] << ',' << rep.truth.values[i] << ",0\n";
  for (const auto& r : rep.routes)
    for (std::size_t i = 0; i < rep.truth.size(); ++i)
      os << r.name << ',' << rep.truth.grid[i] << ',' << r.density.values[i] << ',' << rep.truth.values[i] << ','
         << r.error.curve[i] << '\n';
  return os.str();
}

// Denoising benchmark

inline neural::TrainConfig default_benchmark_training() {
  neural::TrainConfig c;
  c.batch_size = 32;
  c.max_steps = 1500;
  c.validate_every = 50;
  c.patience = 20;
  c.validation_size = 64;
  c.precision = neural::Precision::float32;
  return c;
}

inline SignalConfig default_benchmark_signal() {
  SignalConfig s;
  s.kernel_std = 3.0;
  return s;
}

struct BenchmarkConfig {
  std::vector<double> gains{16.0, 32.0, 64.0};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<neural::TargetDomain> domains{neural::TargetDomain::log_x, neural::TargetDomain::x};
  SignalConfig signal = default_benchmark_signal();
  neural::ArchSpec arch = neural::ArchSpec::conv1d(32);
  neural::TrainConfig train = default_benchmark_training();
  std::size_t test_signals = 256;
  std::uint64_t test_seed = 987654321;
  double trace_gain = 64.0;
  std::size_t trace_examples = 4;
  std::string model_dir;  // when set, trained models are saved here

  void validate() const {
    if (gains.empty() || seeds.empty() || domains.empty())
      throw std::invalid_argument("benchmark needs at least one gain, seed and domain");
    for (double g : gains)
      if (!(g > 0.0) || !std::isfinite(g)) throw std::invalid_argument("gains must be positive");
    signal.validate();
    if (arch.kind != neural::ArchSpec::Kind::conv1d) throw std::invalid_argument("benchmark networks must be conv1d");
    if (signal.length < arch.kernel) throw std::invalid_argument("signal length must be >= the conv kernel size");
    train.validate();
    if (test_signals < 1) throw std::invalid_argument("test set must be non-empty");
  }
};

/// Held-out clean signals and their observations at one gain.
struct TestSet {
  std::vector<double> clean;  // count * length, sample-major
  std::vector<double> noisy;
  std::size_t count = 0;
  std::size_t length = 0;
};

/// Clean signals depend only on `seed`; the noise also depends on the gain,
/// so every gain sees the same underlying signals.
inline TestSet make_test_set(const SignalConfig& signal, double gain, std::size_t count, std::uint64_t seed) {
  TestSet t;
  t.count = count;
  t.length = signal.length;
  std::mt19937_64 clean_rng(seed);
  std::mt19937_64 noise_rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(std::llround(gain * 1000.0))));
  for (std::size_t i = 0; i < count; ++i) {
    const auto x = generate_signal(signal, clean_rng);
    const auto obs = corrupt_poisson(x, gain, noise_rng);
    t.clean.insert(t.clean.end(), x.begin(), x.end());
    t.noisy.insert(t.noisy.end(), obs.y.begin(), obs.y.end());
  }
  return t;
}

/// Denoised estimates for every test signal, sample-major.
inline std::vector<double> denoise_all(const neural::DenoiserModel& model, const TestSet& t) {
  auto out = neural::forward_batch(model, t.noisy, t.count);
  for (double& v : out)
    v = model.target == neural::TargetDomain::x ? std::clamp(v, 0.0, 1.0) : std::clamp(std::exp(v), model.floor, 1.0);
  return out;
}

/// Metrics pooled over all samples of the test set.
inline Metrics evaluate_model(const neural::DenoiserModel& model, const TestSet& t) {
  return metrics(denoise_all(model, t), t.clean);
}

struct BenchmarkRun {
  double gain = 0.0;
  neural::TargetDomain domain = neural::TargetDomain::x;
  std::uint64_t seed = 0;
  Metrics test;
  double best_val_psnr = 0.0;
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
};

struct BenchmarkRow {
  double gain = 0.0;
  neural::TargetDomain domain = neural::TargetDomain::x;
  std::size_t seeds = 0;
  double psnr_mean = 0.0;
  double psnr_std = 0.0;
  double mse_mean = 0.0;
  double mse_std = 0.0;
};

struct BenchmarkTable {
  std::vector<BenchmarkRow> rows;
  std::vector<BenchmarkRun> runs;
  std::string traces_csv;

  const BenchmarkRow& row(double gain, neural::TargetDomain domain) const {
    for (const auto& r : rows)
      if (r.gain == gain && r.domain == domain) return r;
    throw std::out_of_range("no benchmark row for the requested gain/domain");
  }
};

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

inline std::string model_filename(double gain, neural::TargetDomain domain, std::uint64_t seed) {
  return "model_g" + format_double(gain) + "_" + std::string(neural::to_string(domain)) + "_s" + std::to_string(seed) +
         ".ppdm";
}

/// Trains one model per (gain, domain, seed), evaluates each on the
/// held-out test set of its gain and aggregates over seeds. `progress`, if
/// set, receives one line per finished run.
inline BenchmarkTable run_denoise_benchmark(const BenchmarkConfig& cfg,
                                            const std::function<void(const BenchmarkRun&)>& progress = {}) {
  cfg.validate();
  struct Job {
    std::size_t gain_index;
    neural::TargetDomain domain;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t g = 0; g < cfg.gains.size(); ++g)
    for (auto d : cfg.domains)
      for (auto s : cfg.seeds) jobs.push_back({g, d, s});

  std::vector<TestSet> tests;
  for (double g : cfg.gains) tests.push_back(make_test_set(cfg.signal, g, cfg.test_signals, cfg.test_seed));

  BenchmarkTable table;
  table.runs.resize(jobs.size());
  std::vector<neural::DenoiserModel> models(jobs.size());
  std::mutex progress_mutex;
  parallel_for(jobs.size(), worker_count(jobs.size()), [&](std::size_t i) {
    const Job& job = jobs[i];
    const double gain = cfg.gains[job.gain_index];
    neural::TrainConfig tc = cfg.train;
    tc.task = neural::SignalTask{cfg.signal, gain};
    // Both domains share the data stream of a seed, so their comparison is paired.
    tc.data_seed = 1000003ull * (job.seed + 1) + job.gain_index;
    tc.validation_seed = 2000003ull * (job.seed + 1) + job.gain_index;
    const auto result = neural::train(neural::build_model(cfg.arch, job.seed, job.domain), tc);
    models[i] = result.model;
    BenchmarkRun& run = table.runs[i];
    run.gain = gain;
    run.domain = job.domain;
    run.seed = job.seed;
    run.test = evaluate_model(result.model, tests[job.gain_index]);
    run.best_val_psnr = result.best_val_psnr;
    run.best_step = result.best_step;
    run.steps_run = result.steps_run;
    if (!cfg.model_dir.empty())
      neural::save_model(result.model, std::filesystem::path(cfg.model_dir) / model_filename(gain, job.domain, job.seed));
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(run);
    }
  });

  for (double g : cfg.gains)
    for (auto d : cfg.domains) {
      std::vector<double> psnr;
      std::vector<double> mse;
      for (const auto& r : table.runs)
        if (r.gain == g && r.domain == d) {
          psnr.push_back(r.test.psnr);
          mse.push_back(r.test.mse);
        }
      const auto [pm, ps] = mean_std(psnr);
      const auto [mm, ms] = mean_std(mse);
      table.rows.push_back({g, d, psnr.size(), pm, ps, mm, ms});
    }

  // Traces at the trace gain from the first seed's models.
  std::ostringstream os;
  os.precision(17);
  os << "example,index,clean,noisy";
  std::vector<std::pair<neural::TargetDomain, std::vector<double>>> denoised;
  const auto gi = std::find(cfg.gains.begin(), cfg.gains.end(), cfg.trace_gain);
  if (gi != cfg.gains.end()) {
    const std::size_t g = static_cast<std::size_t>(gi - cfg.gains.begin());
    const std::size_t n = std::min(cfg.trace_examples, cfg.test_signals);
    TestSet head = tests[g];
    head.count = n;
    head.clean.resize(n * head.length);
    head.noisy.resize(n * head.length);
    for (std::size_t i = 0; i < jobs.size(); ++i)
      if (jobs[i].gain_index == g && jobs[i].seed == cfg.seeds.front()) {
        denoised.emplace_back(jobs[i].domain, denoise_all(models[i], head));
        os << ",denoised_" << neural::to_string(jobs[i].domain);
      }
    os << '\n';
    for (std::size_t e = 0; e < n; ++e)
      for (std::size_t t = 0; t < head.length; ++t) {
        const std::size_t k = e * head.length + t;
        os << e << ',' << t << ',' << head.clean[k] << ',' << head.noisy[k];
        for (const auto& [d, v] : denoised) os << ',' << v[k];
        os << '\n';
      }
  } else {
    os << '\n';
  }
  table.traces_csv = os.str();
  return table;
}

inline std::string benchmark_table_csv(const BenchmarkTable& t) {
  std::ostringstream os;
  os.precision(10);
  os << "gain,target_domain,seeds,psnr_mean,psnr_std,mse_mean,mse_std\n";
  for (const auto& r : t.rows)
    os << r.gain << ',' << neural::to_string(r.domain) << ',' << r.seeds << ',' << r.psnr_mean << ',' << r.psnr_std
       << ',' << r.mse_mean << ',' << r.mse_std << '\n';
  return os.str();
}

inline std::string benchmark_runs_csv(const BenchmarkTable& t) {
  std::ostringstream os;
  os.precision(10);
  os << "gain,target_domain,seed,test_psnr,test_mse,best_val_psnr,best_step,steps_run\n";
  for (const auto& r : t.runs)
    os << r.gain << ',' << neural::to_string(r.domain) << ',' << r.seed << ',' << r.test.psnr << ',' << r.test.mse
       << ',' << r.best_val_psnr << ',' << r.best_step << ',' << r.steps_run << '\n';
  return os.str();
}

}  // namespace poisson_posterior
