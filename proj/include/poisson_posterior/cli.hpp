#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "harness.hpp"
#include "io.hpp"
#include "neural/model_io.hpp"
#include "posterior_oracle.hpp"
#include "serialization.hpp"

namespace poisson_posterior::cli {

inline constexpr int kConfigVersion = 1;
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitNumerical = 2;

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Parses a config file; syntax errors are reported as path:line:column.
inline nlohmann::json load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception&) {
    throw config_error("", "cannot read config file '" + path.string() + "'");
  }
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw config_error("", path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
}

/// Applies "a.b.c=value"; the value is read as JSON when it parses, else
/// taken as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw config_error("", "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw config_error(key, "empty path component in override");
    if (!node->is_object()) throw config_error(key, "override descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

// Config schemas. Each reader consumes the common keys (version, seed, out)
// and rejects anything it does not know.

struct Common {
  std::uint64_t seed = 0;
  std::string out;
};

inline Common read_common(ObjectReader& r) {
  int version = kConfigVersion;
  r.get("version", version);
  if (version != kConfigVersion)
    throw config_error("version", "unsupported config version " + std::to_string(version) + " (expected " +
                                      std::to_string(kConfigVersion) + ")");
  Common c;
  r.get("seed", c.seed);
  r.get("out", c.out);
  return c;
}

template <class T>
T read_sub(ObjectReader& r, const std::string& key, T value,
           T (*reader)(const nlohmann::json&, T, const std::string&)) {
  if (const auto* v = r.child(key)) return reader(*v, std::move(value), key);
  return value;
}

inline ToyConfig toy_from_json(const nlohmann::json& j, Common& common) {
  ObjectReader r(j, "");
  common = read_common(r);
  ToyConfig c;
  c.seed = common.seed;
  if (const auto* p = r.child("prior")) c.prior = prior_from_json(*p);
  r.get("y", c.y);
  r.get("order", c.order);
  r.get("oracle_grid", c.oracle_grid);
  r.get("oracle_fd_step", c.oracle_fd_step);
  r.get("network_fd_step", c.network_fd_step);
  c.recon = read_sub(r, "reconstruction", c.recon, recon_from_json);
  r.get("train_networks", c.train_networks);
  c.arch = read_sub(r, "arch", c.arch, arch_from_json_strict);
  c.train = read_sub(r, "train", c.train, train_from_json);
  r.get("normalization_samples", c.normalization_samples);
  r.finish();
  validated("", [&] {
    c.validate();
    return 0;
  });
  return c;
}

inline nlohmann::json toy_to_json(const ToyConfig& c) {
  return {{"version", kConfigVersion},
          {"seed", c.seed},
          {"prior", prior_to_json(c.prior)},
          {"y", c.y},
          {"order", c.order},
          {"oracle_grid", c.oracle_grid},
          {"oracle_fd_step", c.oracle_fd_step},
          {"network_fd_step", c.network_fd_step},
          {"reconstruction", recon_to_json(c.recon)},
          {"train_networks", c.train_networks},
          {"arch", neural::arch_to_json(c.arch)},
          {"train", train_to_json(c.train)},
          {"normalization_samples", c.normalization_samples}};
}

inline BenchmarkConfig bench_from_json(const nlohmann::json& j, Common& common) {
  ObjectReader r(j, "");
  common = read_common(r);
  BenchmarkConfig c;
  r.get("gains", c.gains);
  std::size_t n_seeds = c.seeds.size();
  r.get("n_seeds", n_seeds);
  if (n_seeds < 1) throw config_error("n_seeds", "must be >= 1");
  c.seeds.clear();
  for (std::size_t i = 0; i < n_seeds; ++i) c.seeds.push_back(common.seed + i);
  if (const auto* d = r.child("domains")) {
    if (!d->is_array() || d->empty()) throw config_error("domains", "expected a non-empty array");
    c.domains.clear();
    for (const auto& v : *d) {
      if (!v.is_string()) throw config_error("domains", "expected strings");
      c.domains.push_back(validated("domains", [&] { return neural::parse_target_domain(v.get<std::string>()); }));
    }
  }
  c.signal = read_sub(r, "signal", c.signal, signal_from_json);
  c.arch = read_sub(r, "arch", c.arch, arch_from_json_strict);
  c.train = read_sub(r, "train", c.train, train_from_json);
  r.get("test_signals", c.test_signals);
  r.get("test_seed", c.test_seed);
  r.get("trace_gain", c.trace_gain);
  r.get("trace_examples", c.trace_examples);
  bool save_models = false;
  r.get("save_models", save_models);
  r.finish();
  if (save_models) c.model_dir = "models";
  validated("", [&] {
    c.validate();
    return 0;
  });
  return c;
}

inline nlohmann::json bench_to_json(const BenchmarkConfig& c) {
  nlohmann::json domains = nlohmann::json::array();
  for (auto d : c.domains) domains.push_back(std::string(neural::to_string(d)));
  return {{"version", kConfigVersion},
          {"seed", c.seeds.front()},
          {"n_seeds", c.seeds.size()},
          {"gains", c.gains},
          {"domains", domains},
          {"signal", signal_to_json(c.signal)},
          {"arch", neural::arch_to_json(c.arch)},
          {"train", train_to_json(c.train)},
          {"test_signals", c.test_signals},
          {"test_seed", c.test_seed},
          {"trace_gain", c.trace_gain},
          {"trace_examples", c.trace_examples},
          {"save_models", !c.model_dir.empty()}};
}

/// Single training run on the signal task or the toy task.
struct TrainCommand {
  std::string task = "signal";
  neural::TargetDomain target = neural::TargetDomain::x;
  double gain = 64.0;
  SignalConfig signal = default_benchmark_signal();
  PriorSpec prior = PriorSpec::bimodal();
  neural::ArchSpec arch;
  neural::TrainConfig train;
  std::size_t normalization_samples = 8192;
  std::uint64_t seed = 0;
};

inline TrainCommand train_from_json_cmd(const nlohmann::json& j, Common& common) {
  ObjectReader r(j, "");
  common = read_common(r);
  TrainCommand c;
  c.seed = common.seed;
  r.get("task", c.task);
  if (c.task != "signal" && c.task != "toy") throw config_error("task", "expected signal or toy");
  const bool toy = c.task == "toy";
  c.arch = toy ? neural::ArchSpec::mlp({1, 64, 64, 1}, neural::Activation::tanh) : neural::ArchSpec::conv1d(32);
  c.train = toy ? default_toy_training() : default_benchmark_training();
  std::string target(neural::to_string(c.target));
  r.get("target_domain", target);
  c.target = validated("target_domain", [&] { return neural::parse_target_domain(target); });
  r.get("gain", c.gain);
  if (!(c.gain > 0.0)) throw config_error("gain", "must be positive");
  c.signal = read_sub(r, "signal", c.signal, signal_from_json);
  if (const auto* p = r.child("prior")) c.prior = prior_from_json(*p);
  c.arch = read_sub(r, "arch", c.arch, arch_from_json_strict);
  c.train = read_sub(r, "train", c.train, train_from_json);
  r.get("normalization_samples", c.normalization_samples);
  r.finish();
  if (toy && c.arch.kind != neural::ArchSpec::Kind::mlp) throw config_error("arch.kind", "toy task needs an mlp");
  if (!toy && c.arch.kind != neural::ArchSpec::Kind::conv1d) throw config_error("arch.kind", "signal task needs conv1d");
  return c;
}

inline nlohmann::json train_cmd_to_json(const TrainCommand& c) {
  nlohmann::json j{{"version", kConfigVersion},
                   {"seed", c.seed},
                   {"task", c.task},
                   {"target_domain", std::string(neural::to_string(c.target))},
                   {"gain", c.gain},
                   {"arch", neural::arch_to_json(c.arch)},
                   {"train", train_to_json(c.train)}};
  if (c.task == "toy") {
    j["prior"] = prior_to_json(c.prior);
    j["normalization_samples"] = c.normalization_samples;
  } else {
    j["signal"] = signal_to_json(c.signal);
  }
  return j;
}

struct EvalCommand {
  std::string model;
  double gain = 64.0;
  SignalConfig signal = default_benchmark_signal();
  std::size_t test_signals = 256;
  std::uint64_t test_seed = BenchmarkConfig{}.test_seed;
};

inline EvalCommand eval_from_json(const nlohmann::json& j, Common& common) {
  ObjectReader r(j, "");
  common = read_common(r);
  EvalCommand c;
  c.model = r.require<std::string>("model");
  r.get("gain", c.gain);
  if (!(c.gain > 0.0)) throw config_error("gain", "must be positive");
  c.signal = read_sub(r, "signal", c.signal, signal_from_json);
  r.get("test_signals", c.test_signals);
  if (c.test_signals < 1) throw config_error("test_signals", "must be >= 1");
  r.get("test_seed", c.test_seed);
  r.finish();
  return c;
}

struct OracleDumpCommand {
  PriorSpec prior = PriorSpec::bimodal();
  double y = 4.0;
  int order = 4;
  Domain domain = Domain::eta;
  std::size_t grid_size = kDefaultOracleGridSize;
};

inline OracleDumpCommand oracle_from_json(const nlohmann::json& j, Common& common) {
  ObjectReader r(j, "");
  common = read_common(r);
  OracleDumpCommand c;
  if (const auto* p = r.child("prior")) c.prior = prior_from_json(*p);
  r.get("y", c.y);
  if (!(c.y >= 0.0)) throw config_error("y", "must be >= 0");
  r.get("order", c.order);
  if (c.order < 1 || c.order > kMaxMomentOrder) throw config_error("order", "must lie in [1, 6]");
  std::string domain(to_string(c.domain));
  r.get("domain", domain);
  c.domain = validated("domain", [&] { return parse_domain(domain); });
  r.get("grid_size", c.grid_size);
  if (c.grid_size < 100) throw config_error("grid_size", "must be >= 100");
  r.finish();
  return c;
}

namespace detail {

inline void write_manifest(const std::filesystem::path& dir, const std::string& command, const nlohmann::json& config,
                           const std::vector<std::string>& overrides, const nlohmann::json& seeds) {
  const std::string dumped = config.dump();
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream stamp;
  stamp << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  nlohmann::json m{{"command", command},          {"config", config},   {"config_hash", "fnv1a64:" + hex64(fnv1a(dumped))},
                   {"overrides", overrides},      {"seeds", seeds},     {"created_utc", stamp.str()}};
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

inline std::string history_csv(const std::vector<neural::HistoryEntry>& h) {
  std::ostringstream os;
  os.precision(10);
  os << "step,train_loss,val_psnr\n";
  for (const auto& e : h) os << e.step << ',' << e.train_loss << ',' << e.val_psnr << '\n';
  return os.str();
}

}  // namespace detail

struct Invocation {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

inline nlohmann::json build_config(const Invocation& inv) {
  nlohmann::json j = inv.config_path.empty() ? nlohmann::json::object() : load_config(inv.config_path);
  if (!j.is_object()) throw config_error("", "config root must be an object");
  for (const auto& o : inv.overrides) apply_override(j, o);
  if (inv.seed) j["seed"] = *inv.seed;
  return j;
}

inline std::filesystem::path output_dir(const Invocation& inv, const Common& common) {
  if (!inv.out.empty()) return inv.out;
  if (!common.out.empty()) return common.out;
  return std::filesystem::path("runs") / inv.command;
}

/// Runs one parsed invocation; errors propagate to dispatch().
inline int run(const Invocation& inv, std::ostream& out, std::ostream& err) {
  const nlohmann::json raw = build_config(inv);
  Common common;
  if (inv.command == "oracle-dump") {
    const auto c = oracle_from_json(raw, common);
    const PosteriorOracle oracle(c.prior, c.grid_size);
    const auto m = oracle.central_moments(c.y, c.order, c.domain);
    nlohmann::json j{{"prior", prior_to_json(c.prior)},
                     {"y", c.y},
                     {"marginal_log", oracle.marginal_log(c.y)},
                     {"moments", to_json(m)}};
    if (c.y >= kDefaultScoreStep) j["score"] = oracle.marginal_score(c.y);
    out << j.dump(2) << "\n";
    if (!inv.out.empty() || !common.out.empty()) {
      const auto dir = output_dir(inv, common);
      write_file_atomic(dir / "oracle_dump.json", j.dump(2) + "\n");
    }
    return kExitOk;
  }
  if (inv.command == "toy-posterior") {
    const auto c = toy_from_json(raw, common);
    const auto dir = output_dir(inv, common);
    const auto rep = run_toy_posterior(c);
    write_file_atomic(dir / "toy_report.json", toy_report_json(rep).dump(2) + "\n");
    write_file_atomic(dir / "toy_curves.csv", toy_curves_csv(rep));
    detail::write_manifest(dir, inv.command, toy_to_json(c), inv.overrides, {{"seed", c.seed}});
    for (const auto& r : rep.routes)
      out << r.name << ": total squared error " << r.error.total << ", interior maxima " << r.maxima << "\n";
    return kExitOk;
  }
  if (inv.command == "denoise-bench") {
    auto c = bench_from_json(raw, common);
    const auto dir = output_dir(inv, common);
    if (!c.model_dir.empty()) c.model_dir = (dir / c.model_dir).string();
    const auto table = run_denoise_benchmark(c, [&](const BenchmarkRun& r) {
      err << "gain " << r.gain << " " << neural::to_string(r.domain) << " seed " << r.seed << ": test PSNR "
          << r.test.psnr << " dB\n";
    });
    write_file_atomic(dir / "benchmark_table.csv", benchmark_table_csv(table));
    write_file_atomic(dir / "benchmark_runs.csv", benchmark_runs_csv(table));
    write_file_atomic(dir / "denoise_traces.csv", table.traces_csv);
    detail::write_manifest(dir, inv.command, bench_to_json(c), inv.overrides,
                           {{"seeds", c.seeds}, {"test_seed", c.test_seed}});
    out << benchmark_table_csv(table);
    return kExitOk;
  }
  if (inv.command == "train") {
    const auto c = train_from_json_cmd(raw, common);
    const auto dir = output_dir(inv, common);
    neural::TrainResult result;
    if (c.task == "toy") {
      ToyConfig t;
      t.prior = c.prior;
      t.arch = c.arch;
      t.train = c.train;
      t.seed = c.seed;
      t.normalization_samples = c.normalization_samples;
      result = train_toy_network(t, c.target);
    } else {
      neural::TrainConfig tc = c.train;
      tc.task = neural::SignalTask{c.signal, c.gain};
      tc.data_seed = 1000003ull * (c.seed + 1);
      tc.validation_seed = 2000003ull * (c.seed + 1);
      result = neural::train(neural::build_model(c.arch, c.seed, c.target), tc);
    }
    neural::save_model(result.model, dir / "model.ppdm");
    write_file_atomic(dir / "history.csv", detail::history_csv(result.history));
    const nlohmann::json summary{{"best_val_psnr", result.best_val_psnr},
                                 {"best_step", result.best_step},
                                 {"steps_run", result.steps_run},
                                 {"parameter_count", c.arch.parameter_count()}};
    write_file_atomic(dir / "train_summary.json", summary.dump(2) + "\n");
    detail::write_manifest(dir, inv.command, train_cmd_to_json(c), inv.overrides, {{"seed", c.seed}});
    out << summary.dump(2) << "\n";
    return kExitOk;
  }
  if (inv.command == "eval") {
    const auto c = eval_from_json(raw, common);
    neural::DenoiserModel model;
    try {
      model = neural::load_model(c.model);
    } catch (const std::exception& e) {
      throw config_error("model", "cannot load model '" + c.model + "': " + e.what());
    }
    if (model.arch.kind != neural::ArchSpec::Kind::conv1d) throw config_error("model", "eval needs a conv1d signal model");
    const auto m = evaluate_model(model, make_test_set(c.signal, c.gain, c.test_signals, c.test_seed));
    const nlohmann::json j{{"model", c.model},
                           {"target_domain", std::string(neural::to_string(model.target))},
                           {"gain", c.gain},
                           {"test_signals", c.test_signals},
                           {"test_seed", c.test_seed},
                           {"psnr", m.psnr},
                           {"mse", m.mse}};
    out << j.dump(2) << "\n";
    if (!inv.out.empty() || !common.out.empty()) write_file_atomic(output_dir(inv, common) / "eval.json", j.dump(2) + "\n");
    return kExitOk;
  }
  throw config_error("", "unknown command '" + inv.command + "'");
}

/// Entry point: 0 on success, 1 on configuration errors, 2 on numerical failures.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Posterior moments and denoising experiments for Poisson observations", "poisson-posterior"};
  app.require_subcommand(1);
  Invocation inv;
  std::uint64_t seed = 0;
  for (const char* name : {"toy-posterior", "denoise-bench", "train", "eval", "oracle-dump"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", inv.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "base seed");
    sub->add_option("--out", inv.out, "output directory");
    sub->add_option("--set", inv.overrides, "dotted-path override key=value (repeatable)")->take_all()->allow_extra_args(false);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  for (auto* sub : app.get_subcommands()) {
    inv.command = sub->get_name();
    if (sub->count("--seed") > 0) inv.seed = seed;
  }
  try {
    return run(inv, out, err);
  } catch (const config_error& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::domain_error& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const numerical_error& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace poisson_posterior::cli
