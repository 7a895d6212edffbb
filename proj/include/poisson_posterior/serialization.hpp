#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "density_reconstruction.hpp"
#include "neural/model_io.hpp"
#include "neural/training.hpp"
#include "prior_models.hpp"

namespace poisson_posterior {

/// Invalid configuration; `field` is the dotted path of the offending entry.
class config_error : public std::runtime_error {
 public:
  config_error(const std::string& field, const std::string& what)
      : std::runtime_error(field.empty() ? what : field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Reads the members of one JSON object, remembering which keys were
/// consumed so that leftovers can be rejected.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw config_error(path_, "expected an object");
  }

  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void get(const std::string& key, T& out) {
    const auto* v = child(key);
    if (v == nullptr) return;
    try {
      if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v->is_number_integer() || (std::is_unsigned_v<T> && v->is_number_integer() && v->get<std::int64_t>() < 0))
          throw config_error(path(key), std::is_unsigned_v<T> ? "expected a non-negative integer" : "expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw config_error(path(key), "expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw config_error(path(key), "expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw config_error(path(key), "expected a string");
      }
      out = v->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw config_error(path(key), std::string("wrong type (") + e.what() + ")");
    }
  }

  template <class T>
  T require(const std::string& key) {
    if (!has(key)) throw config_error(path(key), "missing required key");
    T out{};
    get(key, out);
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw config_error(path(key), "unknown key");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

/// Runs `f`, turning library validation errors into config errors at `path`.
template <class F>
auto validated(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const config_error&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw config_error(path, e.what());
  } catch (const std::domain_error& e) {
    throw config_error(path, e.what());
  }
}

// Priors

inline nlohmann::json prior_to_json(const PriorSpec& p) {
  nlohmann::json j;
  j["kind"] = p.kind();
  j["support"] = {{"lo", p.support.lo}, {"hi", p.support.hi}};
  if (const auto* m = std::get_if<LogNormalMixture>(&p.model)) {
    j["components"] = nlohmann::json::array();
    for (const auto& c : m->components) j["components"].push_back({{"weight", c.weight}, {"mu", c.mu}, {"sigma", c.sigma}});
  } else if (const auto* g = std::get_if<GammaPrior>(&p.model)) {
    j["shape"] = g->shape;
    j["rate"] = g->rate;
  } else if (const auto* pm = std::get_if<PointMass>(&p.model)) {
    j["location"] = pm->location;
  } else {
    const auto& t = std::get<TabulatedPrior>(p.model);
    j["grid"] = t.grid;
    j["values"] = t.values;
    j.erase("support");
  }
  return j;
}

/// Missing fields take the defaults of the chosen kind: the bimodal mixture,
/// Gamma(2, 1) on [1e-6, 100], or a point mass at 1 on [0.01, 20].
inline PriorSpec prior_from_json(const nlohmann::json& j, const std::string& path = "prior") {
  ObjectReader r(j, path);
  std::string kind = "log-normal-mixture";
  r.get("kind", kind);
  PriorSpec p;
  if (kind == "log-normal-mixture") {
    p = PriorSpec::bimodal();
    if (const auto* cs = r.child("components")) {
      if (!cs->is_array()) throw config_error(r.path("components"), "expected an array");
      LogNormalMixture m;
      for (std::size_t i = 0; i < cs->size(); ++i) {
        ObjectReader c((*cs)[i], r.path("components") + "[" + std::to_string(i) + "]");
        LogNormalComponent comp;
        c.get("weight", comp.weight);
        c.get("mu", comp.mu);
        c.get("sigma", comp.sigma);
        c.finish();
        m.components.push_back(comp);
      }
      p.model = m;
    }
  } else if (kind == "gamma") {
    p = PriorSpec{GammaPrior{}, Support{1e-6, 100.0}};
    auto& g = std::get<GammaPrior>(p.model);
    r.get("shape", g.shape);
    r.get("rate", g.rate);
  } else if (kind == "point-mass") {
    p = PriorSpec{PointMass{}, Support{}};
    r.get("location", std::get<PointMass>(p.model).location);
  } else if (kind == "tabulated") {
    TabulatedPrior t;
    t.grid = r.require<std::vector<double>>("grid");
    t.values = r.require<std::vector<double>>("values");
    if (t.grid.empty()) throw config_error(r.path("grid"), "must not be empty");
    p = PriorSpec{t, Support{t.grid.front(), t.grid.back()}};
  } else {
    throw config_error(r.path("kind"), "unknown prior kind '" + kind +
                                           "' (expected log-normal-mixture, gamma, point-mass or tabulated)");
  }
  if (kind != "tabulated") {
    if (const auto* s = r.child("support")) {
      ObjectReader sr(*s, r.path("support"));
      sr.get("lo", p.support.lo);
      sr.get("hi", p.support.hi);
      sr.finish();
    }
  }
  r.finish();
  validated(path, [&] {
    p.validate();
    return 0;
  });
  return p;
}

// Signals

inline nlohmann::json signal_to_json(const SignalConfig& s) {
  return {{"length", s.length}, {"shape", s.shape}, {"rate", s.rate}, {"kernel_std", s.kernel_std}, {"floor", s.floor}};
}

inline SignalConfig signal_from_json(const nlohmann::json& j, SignalConfig s, const std::string& path = "signal") {
  ObjectReader r(j, path);
  r.get("length", s.length);
  r.get("shape", s.shape);
  r.get("rate", s.rate);
  r.get("kernel_std", s.kernel_std);
  r.get("floor", s.floor);
  r.finish();
  validated(path, [&] {
    s.validate();
    return 0;
  });
  return s;
}

// Reconstruction

inline std::string_view to_string(NegativityPolicy p) {
  return p == NegativityPolicy::clamp_renormalize ? "clamp-renormalize" : "leave";
}

inline nlohmann::json recon_to_json(const ReconstructionConfig& c) {
  return {{"order", c.order},           {"negativity", std::string(to_string(c.policy))},
          {"eta_points", c.eta_points}, {"eta_half_width", c.eta_half_width},
          {"x_points", c.x_points},     {"x_lo", c.x_lo},
          {"x_hi", c.x_hi}};
}

inline ReconstructionConfig recon_from_json(const nlohmann::json& j, ReconstructionConfig c,
                                            const std::string& path = "reconstruction") {
  ObjectReader r(j, path);
  r.get("order", c.order);
  std::string policy(to_string(c.policy));
  r.get("negativity", policy);
  if (policy == "clamp-renormalize")
    c.policy = NegativityPolicy::clamp_renormalize;
  else if (policy == "leave")
    c.policy = NegativityPolicy::leave;
  else
    throw config_error(r.path("negativity"), "expected clamp-renormalize or leave");
  r.get("eta_points", c.eta_points);
  r.get("eta_half_width", c.eta_half_width);
  r.get("x_points", c.x_points);
  r.get("x_lo", c.x_lo);
  r.get("x_hi", c.x_hi);
  r.finish();
  if (c.order < 2 || c.order > kMaxMomentOrder) throw config_error(r.path("order"), "must lie in [2, 6]");
  if (c.eta_points < 100) throw config_error(r.path("eta_points"), "must be >= 100");
  if (c.x_points < 100) throw config_error(r.path("x_points"), "must be >= 100");
  if (!(c.eta_half_width > 0.0)) throw config_error(r.path("eta_half_width"), "must be positive");
  if (!(c.x_lo > 0.0 && c.x_hi > c.x_lo)) throw config_error(r.path("x_lo"), "need 0 < x_lo < x_hi");
  return c;
}

// Networks

inline neural::ArchSpec arch_from_json_strict(const nlohmann::json& j, neural::ArchSpec a,
                                              const std::string& path = "arch") {
  ObjectReader r(j, path);
  std::string kind = a.kind == neural::ArchSpec::Kind::mlp ? "mlp" : "conv1d";
  r.get("kind", kind);
  if (kind == "mlp")
    a.kind = neural::ArchSpec::Kind::mlp;
  else if (kind == "conv1d")
    a.kind = neural::ArchSpec::Kind::conv1d;
  else
    throw config_error(r.path("kind"), "expected mlp or conv1d");
  r.get("widths", a.widths);
  r.get("layers", a.conv_layers);
  r.get("kernel", a.kernel);
  r.get("channels", a.channels);
  std::string act(to_string(a.activation));
  r.get("activation", act);
  a.activation = validated(r.path("activation"), [&] { return neural::parse_activation(act); });
  r.finish();
  validated(path, [&] {
    a.validate();
    return 0;
  });
  return a;
}

inline nlohmann::json train_to_json(const neural::TrainConfig& c) {
  return {{"lr", c.adam.lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"batch_size", c.batch_size},
          {"max_steps", c.max_steps},
          {"validate_every", c.validate_every},
          {"patience", c.patience},
          {"validation_size", c.validation_size},
          {"final_lr_fraction", c.final_lr_fraction},
          {"precision", c.precision == neural::Precision::float32 ? "float32" : "float64"}};
}

/// Reads optimizer and loop settings; the task and seeds are set by the caller.
inline neural::TrainConfig train_from_json(const nlohmann::json& j, neural::TrainConfig c,
                                           const std::string& path = "train") {
  ObjectReader r(j, path);
  r.get("lr", c.adam.lr);
  r.get("beta1", c.adam.beta1);
  r.get("beta2", c.adam.beta2);
  r.get("eps", c.adam.eps);
  r.get("batch_size", c.batch_size);
  r.get("max_steps", c.max_steps);
  r.get("validate_every", c.validate_every);
  r.get("patience", c.patience);
  r.get("validation_size", c.validation_size);
  r.get("final_lr_fraction", c.final_lr_fraction);
  std::string precision = c.precision == neural::Precision::float32 ? "float32" : "float64";
  r.get("precision", precision);
  if (precision == "float32")
    c.precision = neural::Precision::float32;
  else if (precision == "float64")
    c.precision = neural::Precision::float64;
  else
    throw config_error(r.path("precision"), "expected float32 or float64");
  r.finish();
  validated(path, [&] {
    c.validate();
    return 0;
  });
  return c;
}

}  // namespace poisson_posterior
