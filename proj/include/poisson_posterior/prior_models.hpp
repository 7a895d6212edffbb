#pragma once

#include <algorithm>
#include <concepts>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "core.hpp"
#include "special_functions.hpp"

namespace poisson_posterior {

struct Support {
  double lo = 0.01;
  double hi = 20.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
};

struct LogNormalComponent {
  double weight = 1.0;
  double mu = 0.0;     // mean of log x
  double sigma = 1.0;  // std of log x
};

struct LogNormalMixture {
  std::vector<LogNormalComponent> components;
};

/// Gamma(shape, rate): density x^(shape-1) e^(-rate x) rate^shape / Gamma(shape).
struct GammaPrior {
  double shape = 2.0;
  double rate = 1.0;
};

struct PointMass {
  double location = 1.0;
};

/// Piecewise-linear density through (grid, values).
struct TabulatedPrior {
  std::vector<double> grid;
  std::vector<double> values;
};

/// Scalar prior over x > 0, truncated to `support`.
struct PriorSpec {
  std::variant<LogNormalMixture, GammaPrior, PointMass, TabulatedPrior> model;
  Support support;

  std::string kind() const {
    switch (model.index()) {
      case 0: return "log-normal-mixture";
      case 1: return "gamma";
      case 2: return "point-mass";
      default: return "tabulated";
    }
  }

  bool is_point_mass() const { return std::holds_alternative<PointMass>(model); }

  void validate() const {
    if (!(support.lo > 0.0) || !(support.hi > support.lo) || !std::isfinite(support.hi))
      throw std::invalid_argument("prior support must satisfy 0 < lo < hi < inf");
    if (const auto* m = std::get_if<LogNormalMixture>(&model)) {
      if (m->components.empty()) throw std::invalid_argument("log-normal mixture needs at least one component");
      double total = 0.0;
      for (const auto& c : m->components) {
        if (!(c.weight >= 0.0)) throw std::invalid_argument("mixture weights must be non-negative");
        if (!(c.sigma > 0.0)) throw std::invalid_argument("mixture scales must be positive");
        total += c.weight;
      }
      if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture weights must sum to 1");
    } else if (const auto* g = std::get_if<GammaPrior>(&model)) {
      if (!(g->shape > 0.0) || !(g->rate > 0.0)) throw std::invalid_argument("gamma shape and rate must be positive");
    } else if (const auto* p = std::get_if<PointMass>(&model)) {
      if (!support.contains(p->location)) throw std::invalid_argument("point mass lies outside the support");
    } else {
      const auto& t = std::get<TabulatedPrior>(model);
      if (t.grid.size() != t.values.size() || t.grid.size() < 2)
        throw std::invalid_argument("tabulated prior needs matching grid/value vectors of length >= 2");
      for (std::size_t i = 1; i < t.grid.size(); ++i)
        if (!(t.grid[i] > t.grid[i - 1])) throw std::invalid_argument("tabulated grid must be strictly increasing");
      if (!(t.grid.front() > 0.0)) throw std::invalid_argument("tabulated grid must be positive");
      for (double v : t.values)
        if (!(v >= 0.0)) throw std::invalid_argument("tabulated values must be non-negative");
      if (std::abs(trapezoid(t.grid, t.values) - 1.0) > 1e-8)
        throw std::invalid_argument("tabulated values must integrate to 1 on their grid");
      if (support.lo != t.grid.front() || support.hi != t.grid.back())
        throw std::invalid_argument("tabulated support must equal the grid bounds");
    }
  }

  static PriorSpec log_normal_mixture(std::vector<LogNormalComponent> components, Support s = {0.01, 20.0}) {
    PriorSpec p{LogNormalMixture{std::move(components)}, s};
    p.validate();
    return p;
  }

  /// Two well-separated modes near x = 1 and x = 7.4.
  static PriorSpec bimodal() { return log_normal_mixture({{0.5, 0.0, 0.35}, {0.5, 2.0, 0.30}}); }

  static PriorSpec gamma(double shape, double rate, Support s = {1e-6, 100.0}) {
    PriorSpec p{GammaPrior{shape, rate}, s};
    p.validate();
    return p;
  }

  static PriorSpec point_mass(double location, Support s = {0.01, 20.0}) {
    PriorSpec p{PointMass{location}, s};
    p.validate();
    return p;
  }

  static PriorSpec tabulated(std::vector<double> grid, std::vector<double> values) {
    Support s{grid.front(), grid.back()};
    PriorSpec p{TabulatedPrior{std::move(grid), std::move(values)}, s};
    p.validate();
    return p;
  }
};

namespace detail {

inline double log_normal_log_pdf(double x, double mu, double sigma) {
  const double z = (std::log(x) - mu) / sigma;
  return -0.5 * z * z - std::log(x * sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline double mixture_support_mass(const LogNormalMixture& m, const Support& s) {
  double mass = 0.0;
  for (const auto& c : m.components) {
    const double a = (std::log(s.lo) - c.mu) / c.sigma;
    const double b = (std::log(s.hi) - c.mu) / c.sigma;
    mass += c.weight * (standard_normal_cdf(b) - standard_normal_cdf(a));
  }
  return mass;
}

inline double gamma_support_mass(const GammaPrior& g, const Support& s) {
  return boost::math::gamma_p(g.shape, g.rate * s.hi) - boost::math::gamma_p(g.shape, g.rate * s.lo);
}

}  // namespace detail

/// log p(x) of the truncated prior; -inf outside the support or off the atom.
inline double prior_log_density(const PriorSpec& prior, double x) {
  if (!prior.support.contains(x)) throw std::domain_error("prior_density: x outside the prior support");
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LogNormalMixture>) {
          std::vector<double> terms;
          terms.reserve(m.components.size());
          for (const auto& c : m.components)
            terms.push_back(std::log(c.weight) + detail::log_normal_log_pdf(x, c.mu, c.sigma));
          return log_sum_exp(terms) - std::log(detail::mixture_support_mass(m, prior.support));
        } else if constexpr (std::is_same_v<T, GammaPrior>) {
          const double log_pdf = (m.shape - 1.0) * std::log(x) - m.rate * x + m.shape * std::log(m.rate) -
                                 log_gamma(m.shape);
          return log_pdf - std::log(detail::gamma_support_mass(m, prior.support));
        } else if constexpr (std::is_same_v<T, PointMass>) {
          return x == m.location ? std::numeric_limits<double>::infinity()
                                 : -std::numeric_limits<double>::infinity();
        } else {
          DensityGrid g{m.grid, m.values, Domain::x};
          const double v = g.at(x);
          return v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
        }
      },
      prior.model);
}

/// Density of the truncated prior. A point mass has no density: +inf on the
/// atom and 0 elsewhere (see prior_on_grid for a gridded representation).
inline double prior_density(const PriorSpec& prior, double x) { return std::exp(prior_log_density(prior, x)); }

/// Prior tabulated on `grid` (x-domain) and normalized there. A point mass is
/// placed entirely in the node nearest its location.
inline DensityGrid prior_on_grid(const PriorSpec& prior, const std::vector<double>& grid) {
  DensityGrid d{grid, std::vector<double>(grid.size(), 0.0), Domain::x};
  if (const auto* p = std::get_if<PointMass>(&prior.model)) {
    const auto it = std::lower_bound(grid.begin(), grid.end(), p->location);
    std::size_t i = static_cast<std::size_t>(it - grid.begin());
    if (i == grid.size() || (i > 0 && p->location - grid[i - 1] < grid[i] - p->location)) --i;
    d.values[i] = 1.0;
  } else {
    for (std::size_t i = 0; i < grid.size(); ++i)
      d.values[i] = prior.support.contains(grid[i]) ? prior_density(prior, grid[i]) : 0.0;
  }
  d.normalize();
  return d;
}

/// i.i.d. draws from the truncated prior.
template <std::uniform_random_bit_generator Rng>
std::vector<double> sample_prior(const PriorSpec& prior, std::size_t count, Rng& rng) {
  std::vector<double> out;
  out.reserve(count);
  const Support& s = prior.support;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LogNormalMixture>) {
          std::vector<double> w;
          for (const auto& c : m.components) w.push_back(c.weight);
          std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
          std::normal_distribution<double> normal(0.0, 1.0);
          while (out.size() < count) {
            const auto& c = m.components[pick(rng)];
            const double x = std::exp(c.mu + c.sigma * normal(rng));
            if (s.contains(x)) out.push_back(x);
          }
        } else if constexpr (std::is_same_v<T, GammaPrior>) {
          std::gamma_distribution<double> gamma(m.shape, 1.0 / m.rate);
          while (out.size() < count) {
            const double x = gamma(rng);
            if (s.contains(x)) out.push_back(x);
          }
        } else if constexpr (std::is_same_v<T, PointMass>) {
          out.assign(count, m.location);
        } else {
          // Inverse CDF of the piecewise-linear density.
          std::vector<double> cdf(m.grid.size(), 0.0);
          for (std::size_t i = 1; i < m.grid.size(); ++i)
            cdf[i] = cdf[i - 1] + 0.5 * (m.grid[i] - m.grid[i - 1]) * (m.values[i] + m.values[i - 1]);
          std::uniform_real_distribution<double> uniform(0.0, cdf.back());
          while (out.size() < count) {
            const double u = uniform(rng);
            std::size_t i = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            i = std::clamp<std::size_t>(i, 1, cdf.size() - 1);
            const double h = m.grid[i] - m.grid[i - 1];
            const double f0 = m.values[i - 1];
            const double slope = (m.values[i] - f0) / h;
            const double r = u - cdf[i - 1];
            double t = 0.0;  // solve f0 t + slope t^2 / 2 = r
            if (std::abs(slope) < 1e-14) {
              t = f0 > 0.0 ? r / f0 : 0.0;
            } else {
              t = (-f0 + std::sqrt(std::max(0.0, f0 * f0 + 2.0 * slope * r))) / slope;
            }
            out.push_back(std::clamp(m.grid[i - 1] + t, m.grid[i - 1], m.grid[i]));
          }
        }
      },
      prior.model);
  return out;
}

inline std::vector<double> sample_prior(const PriorSpec& prior, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_prior(prior, count, rng);
}

/// Synthetic 1-D signal: Gamma draws, Gaussian smoothing, min-max to [0, 1].
struct SignalConfig {
  std::size_t length = 256;
  double shape = 1.5;
  double rate = 2.0;
  double kernel_std = 4.0;  // samples; kernel truncated at 4 std
  double floor = 1e-3;

  void validate() const {
    if (length < 1) throw std::invalid_argument("signal length must be >= 1");
    if (!(shape > 0.0) || !(rate > 0.0)) throw std::invalid_argument("signal gamma shape/rate must be positive");
    if (!(kernel_std >= 0.0)) throw std::invalid_argument("kernel std must be non-negative");
    if (!(floor > 0.0 && floor < 0.1)) throw std::invalid_argument("signal floor must lie in (0, 0.1)");
  }
};

/// Mirror index without edge repetition (numpy "reflect"), for any offset.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * static_cast<std::ptrdiff_t>(n) - 2;
  std::ptrdiff_t r = i % period;
  if (r < 0) r += period;
  if (r >= static_cast<std::ptrdiff_t>(n)) r = period - r;
  return static_cast<std::size_t>(r);
}

inline std::vector<double> gaussian_kernel(double std_samples) {
  if (std_samples <= 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(4.0 * std_samples));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (std_samples * std_samples));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

template <std::uniform_random_bit_generator Rng>
std::vector<double> generate_signal(const SignalConfig& cfg, Rng& rng) {
  cfg.validate();
  std::gamma_distribution<double> gamma(cfg.shape, 1.0 / cfg.rate);
  std::vector<double> raw(cfg.length);
  for (double& v : raw) v = gamma(rng);

  const auto kernel = gaussian_kernel(cfg.kernel_std);
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  std::vector<double> x(cfg.length, 0.0);
  for (std::size_t t = 0; t < cfg.length; ++t) {
    double acc = 0.0;
    for (std::ptrdiff_t k = -radius; k <= radius; ++k)
      acc += kernel[static_cast<std::size_t>(k + radius)] *
             raw[reflect_index(static_cast<std::ptrdiff_t>(t) + k, cfg.length)];
    x[t] = acc;
  }
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  const double lo = *mn;
  const double span = *mx - *mn;
  for (double& v : x) {
    v = span > 0.0 ? (v - lo) / span : 1.0;
    v = std::clamp(v, cfg.floor, 1.0);
  }
  return x;
}

inline std::vector<double> generate_signal(const SignalConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return generate_signal(cfg, rng);
}

/// Counts z ~ Poisson(gain * x) and rescaled observation y = z / gain, so
/// E[y] = x and Var[y] = x / gain.
struct Observation {
  std::vector<double> y;
  double gain = 1.0;
  std::vector<std::uint64_t> counts;
};

inline constexpr double kMaxPoissonRate = 1e9;

template <std::uniform_random_bit_generator Rng>
Observation corrupt_poisson(const std::vector<double>& x, double gain, Rng& rng) {
  if (!(gain > 0.0)) throw std::invalid_argument("corrupt_poisson: gain must be positive");
  Observation obs{std::vector<double>(x.size()), gain, std::vector<std::uint64_t>(x.size())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] >= 0.0)) throw std::invalid_argument("corrupt_poisson: signal must be non-negative");
    const double rate = gain * x[i];
    if (rate > kMaxPoissonRate) throw numerical_error("corrupt_poisson: Poisson rate exceeds 1e9");
    std::uint64_t z = 0;
    if (rate > 0.0) {
      std::poisson_distribution<std::uint64_t> poisson(rate);
      z = poisson(rng);
    }
    obs.counts[i] = z;
    obs.y[i] = static_cast<double>(z) / gain;
  }
  return obs;
}

inline Observation corrupt_poisson(const std::vector<double>& x, double gain, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return corrupt_poisson(x, gain, rng);
}

}  // namespace poisson_posterior
