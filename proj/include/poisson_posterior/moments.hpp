#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"

namespace poisson_posterior {

inline constexpr int kMaxMomentOrder = 6;

/// Posterior mean mu_1 and central moments mu_2..mu_K at one scalar observation.
struct MomentSet {
  double y = 0.0;
  Domain domain = Domain::eta;
  double mu1 = 0.0;
  std::vector<double> central;  // mu_2, ..., mu_K
  std::vector<std::string> warnings;

  int order() const { return static_cast<int>(central.size()) + 1; }

  /// mu_k for 1 <= k <= order().
  double moment(int k) const {
    if (k < 1 || k > order()) throw std::out_of_range("MomentSet: moment order out of range");
    return k == 1 ? mu1 : central[static_cast<std::size_t>(k - 2)];
  }

  std::vector<double> values() const {
    std::vector<double> v{mu1};
    v.insert(v.end(), central.begin(), central.end());
    return v;
  }
};

inline nlohmann::json to_json(const MomentSet& m) {
  nlohmann::json j;
  j["y"] = m.y;
  j["domain"] = std::string(to_string(m.domain));
  j["K"] = m.order();
  j["values"] = m.values();
  if (!m.warnings.empty()) j["warnings"] = m.warnings;
  return j;
}

inline MomentSet moments_from_json(const nlohmann::json& j) {
  MomentSet m;
  m.y = j.at("y").get<double>();
  m.domain = parse_domain(j.at("domain").get<std::string>());
  const auto v = j.at("values").get<std::vector<double>>();
  if (v.empty() || static_cast<int>(v.size()) != j.at("K").get<int>())
    throw std::invalid_argument("MomentSet JSON: K does not match the number of values");
  m.mu1 = v.front();
  m.central.assign(v.begin() + 1, v.end());
  if (j.contains("warnings")) m.warnings = j.at("warnings").get<std::vector<std::string>>();
  return m;
}

}  // namespace poisson_posterior
