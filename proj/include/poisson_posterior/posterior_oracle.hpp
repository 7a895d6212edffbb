#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "moments.hpp"
#include "prior_models.hpp"
#include "special_functions.hpp"

namespace poisson_posterior {

inline constexpr std::size_t kDefaultOracleGridSize = 4000;
inline constexpr double kDefaultScoreStep = 1e-3;

/// log p(y | x) with y! continued to Gamma(y + 1), so y may be any real >= 0.
inline double poisson_log_likelihood(double y, double x) {
  if (y == 0.0) return -x;
  return y * std::log(x) - x - log_gamma(y + 1.0);
}

/// d/dy p(y | x) = p(y | x) (log x - psi(y + 1)).
inline double poisson_likelihood_dy(double y, double x) {
  return std::exp(poisson_log_likelihood(y, x)) * (std::log(x) - digamma(y + 1.0));
}

/// Nodes and log-weights (quadrature weight times prior density) for
/// integrals against the prior.
struct QuadratureRule {
  std::vector<double> x;
  std::vector<double> log_weight;
};

/// Parametric priors integrate on a grid uniform in eta = log x over the
/// support (trapezoid rule with the dx = x d(eta) Jacobian). Integrands decay
/// smoothly at both ends in eta, so the rule converges much faster than a
/// grid uniform in x. Tabulated priors use their own grid; a point mass is a
/// single node.
inline QuadratureRule make_quadrature(const PriorSpec& prior, std::size_t grid_size = kDefaultOracleGridSize) {
  prior.validate();
  QuadratureRule rule;
  if (const auto* p = std::get_if<PointMass>(&prior.model)) {
    rule.x = {p->location};
    rule.log_weight = {0.0};
    return rule;
  }
  if (const auto* t = std::get_if<TabulatedPrior>(&prior.model)) {
    rule.x = t->grid;
    const auto w = trapezoid_weights(t->grid);
    for (std::size_t i = 0; i < w.size(); ++i)
      rule.log_weight.push_back(t->values[i] > 0.0 ? std::log(w[i] * t->values[i])
                                                   : -std::numeric_limits<double>::infinity());
    return rule;
  }
  if (grid_size < 100) throw std::invalid_argument("quadrature grid needs at least 100 points");
  const auto eta = linspace(std::log(prior.support.lo), std::log(prior.support.hi), grid_size);
  const auto w = trapezoid_weights(eta);
  rule.x.resize(grid_size);
  rule.log_weight.resize(grid_size);
  for (std::size_t i = 0; i < grid_size; ++i) {
    const double x = std::clamp(std::exp(eta[i]), prior.support.lo, prior.support.hi);
    rule.x[i] = x;
    rule.log_weight[i] = std::log(w[i]) + eta[i] + prior_log_density(prior, x);
  }
  return rule;
}

/// Dense-quadrature ground truth for one prior: marginals, posteriors and
/// posterior moments under the Poisson likelihood.
class PosteriorOracle {
 public:
  explicit PosteriorOracle(PriorSpec prior, std::size_t grid_size = kDefaultOracleGridSize)
      : prior_(std::move(prior)), rule_(make_quadrature(prior_, grid_size)) {}

  const PriorSpec& prior() const { return prior_; }
  const QuadratureRule& rule() const { return rule_; }

  /// log p(y) = log of the integral of p(y|x) p(x) dx.
  double marginal_log(double y) const {
    check_y(y);
    std::vector<double> terms(rule_.x.size());
    for (std::size_t i = 0; i < terms.size(); ++i) terms[i] = rule_.log_weight[i] + poisson_log_likelihood(y, rule_.x[i]);
    return log_sum_exp(terms);
  }

  /// d/dy log p(y) by central difference.
  double marginal_score(double y, double step = kDefaultScoreStep) const {
    if (!(step > 0.0)) throw std::domain_error("marginal_score: step must be positive");
    if (y < step) throw std::domain_error("marginal_score: y must be >= step");
    return (marginal_log(y + step) - marginal_log(y - step)) / (2.0 * step);
  }

  /// Normalized posterior weights on the quadrature nodes.
  std::vector<double> posterior_weights(double y) const {
    check_y(y);
    std::vector<double> lw(rule_.x.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < lw.size(); ++i) {
      lw[i] = rule_.log_weight[i] + poisson_log_likelihood(y, rule_.x[i]);
      mx = std::max(mx, lw[i]);
    }
    if (!std::isfinite(mx)) throw numerical_error("posterior underflowed on the quadrature grid; widen the grid");
    double total = 0.0;
    for (double& v : lw) {
      v = std::exp(v - mx);
      total += v;
    }
    for (double& v : lw) v /= total;
    return lw;
  }

  double posterior_mean(double y, Domain domain) const {
    const auto w = posterior_weights(y);
    double m = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) m += w[i] * transform(rule_.x[i], domain);
    return m;
  }

  /// mu_1 = E[g(x) | y] and central moments E[(g(x) - mu_1)^k | y], k <= order,
  /// with g = log (eta domain) or identity (x domain).
  MomentSet central_moments(double y, int order, Domain domain) const {
    if (order < 1 || order > kMaxMomentOrder) throw std::invalid_argument("moment order must lie in [1, 6]");
    const auto w = posterior_weights(y);
    MomentSet m;
    m.y = y;
    m.domain = domain;
    for (std::size_t i = 0; i < w.size(); ++i) m.mu1 += w[i] * transform(rule_.x[i], domain);
    m.central.assign(static_cast<std::size_t>(order - 1), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = transform(rule_.x[i], domain) - m.mu1;
      double p = d;
      for (int k = 2; k <= order; ++k) {
        p *= d;
        m.central[static_cast<std::size_t>(k - 2)] += w[i] * p;
      }
    }
    return m;
  }

  /// p(x | y) on a grid uniform in x over the support, normalized by the
  /// trapezoid rule on that grid.
  DensityGrid posterior_density(double y, std::size_t grid_size = kDefaultOracleGridSize) const {
    if (grid_size < 100) throw std::invalid_argument("posterior_density: grid_size must be >= 100");
    return posterior_density_on(y, linspace(prior_.support.lo, prior_.support.hi, grid_size));
  }

  /// p(x | y) on an arbitrary increasing x grid; points outside the support get 0.
  DensityGrid posterior_density_on(double y, const std::vector<double>& grid) const {
    check_y(y);
    if (prior_.is_point_mass()) {
      DensityGrid d = prior_on_grid(prior_, grid);
      return d;
    }
    DensityGrid d{grid, std::vector<double>(grid.size(), 0.0), Domain::x};
    std::vector<double> lp(grid.size(), -std::numeric_limits<double>::infinity());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (!prior_.support.contains(grid[i])) continue;
      lp[i] = prior_log_density(prior_, grid[i]) + poisson_log_likelihood(y, grid[i]);
      mx = std::max(mx, lp[i]);
    }
    if (!std::isfinite(mx)) throw numerical_error("posterior underflowed on the density grid; widen the grid");
    for (std::size_t i = 0; i < grid.size(); ++i) d.values[i] = std::exp(lp[i] - mx);
    if (!(d.integral() > 0.0)) throw numerical_error("posterior has zero mass on the density grid; widen the grid");
    d.normalize();
    return d;
  }

 private:
  static double transform(double x, Domain d) { return d == Domain::eta ? std::log(x) : x; }
  static void check_y(double y) {
    if (!(y >= 0.0) || !std::isfinite(y)) throw std::domain_error("observation y must be finite and >= 0");
  }

  PriorSpec prior_;
  QuadratureRule rule_;
};

inline double marginal_log(const PriorSpec& prior, double y) { return PosteriorOracle(prior).marginal_log(y); }

inline DensityGrid posterior_density(const PriorSpec& prior, double y,
                                     std::size_t grid_size = kDefaultOracleGridSize) {
  return PosteriorOracle(prior).posterior_density(y, grid_size);
}

inline MomentSet posterior_central_moments(const PriorSpec& prior, double y, int order, Domain domain) {
  return PosteriorOracle(prior).central_moments(y, order, domain);
}

inline double marginal_score(const PriorSpec& prior, double y, double step = kDefaultScoreStep) {
  return PosteriorOracle(prior).marginal_score(y, step);
}

}  // namespace poisson_posterior
