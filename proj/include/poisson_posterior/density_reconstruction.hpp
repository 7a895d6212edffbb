#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "moments.hpp"
#include "special_functions.hpp"

namespace poisson_posterior {

enum class NegativityPolicy { clamp_renormalize, leave };

struct ReconstructionConfig {
  int order = 4;  // highest moment used by the expansion
  NegativityPolicy policy = NegativityPolicy::clamp_renormalize;
  std::size_t eta_points = 2001;
  double eta_half_width = 6.0;  // in posterior standard deviations
  std::size_t x_points = 2000;
  double x_lo = 0.01;
  double x_hi = 20.0;
};

/// Uniform grid mu_1 +- half_width * sigma.
inline std::vector<double> moment_grid(const MomentSet& m, const ReconstructionConfig& cfg = {}) {
  if (m.order() < 2 || !(m.moment(2) > 0.0)) throw std::invalid_argument("moment_grid: mu_2 must be positive");
  if (cfg.eta_points < 100) throw std::invalid_argument("reconstruction grid needs at least 100 points");
  const double s = std::sqrt(m.moment(2));
  return linspace(m.mu1 - cfg.eta_half_width * s, m.mu1 + cfg.eta_half_width * s, cfg.eta_points);
}

inline std::vector<double> comparison_grid(const ReconstructionConfig& cfg = {}) {
  if (cfg.x_points < 100) throw std::invalid_argument("comparison grid needs at least 100 points");
  return linspace(cfg.x_lo, cfg.x_hi, cfg.x_points);
}

/// Magnitude of the negative part, trapezoid-integrated.
inline double negative_mass(const DensityGrid& d) {
  std::vector<double> neg(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) neg[i] = d.values[i] < 0.0 ? -d.values[i] : 0.0;
  return trapezoid(d.grid, neg);
}

/// Gram-Charlier series phi(z)/sigma [1 + sum_{n=3}^{N} c_n He_n(z)] with
/// z = (t - mu_1)/sigma and c_n = E[He_n(Z)]/n! for the standardized
/// variable Z. For N = 4 this is c_3 = kappa_3/(6 sigma^3), c_4 =
/// kappa_4/(24 sigma^4). N is min(cfg.order, moments.order()).
inline DensityGrid gram_charlier(const MomentSet& moments, const std::vector<double>& grid,
                                 const ReconstructionConfig& cfg = {}) {
  if (moments.order() < 2) throw std::invalid_argument("gram_charlier: need at least mu_2");
  const double mu2 = moments.moment(2);
  if (!(mu2 > 0.0)) throw std::invalid_argument("gram_charlier: mu_2 must be positive");
  if (cfg.order < 2 || cfg.order > kMaxMomentOrder) throw std::invalid_argument("gram_charlier: order must lie in [2, 6]");
  const int order = std::min(cfg.order, moments.order());
  const double sigma = std::sqrt(mu2);

  std::vector<double> standardized(static_cast<std::size_t>(order + 1), 0.0);
  standardized[0] = 1.0;
  standardized[2] = 1.0;
  for (int k = 3; k <= order; ++k) standardized[static_cast<std::size_t>(k)] = moments.moment(k) / std::pow(sigma, k);

  std::vector<double> coeff(static_cast<std::size_t>(order + 1), 0.0);
  double nfact = 2.0;
  for (int n = 3; n <= order; ++n) {
    nfact *= n;
    const auto a = hermite_coefficients(n);
    double expectation = 0.0;
    for (int j = 0; j <= n; ++j) expectation += a[static_cast<std::size_t>(j)] * standardized[static_cast<std::size_t>(j)];
    coeff[static_cast<std::size_t>(n)] = expectation / nfact;
  }

  DensityGrid d{grid, std::vector<double>(grid.size(), 0.0), moments.domain};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double z = (grid[i] - moments.mu1) / sigma;
    double series = 1.0;
    for (int n = 3; n <= order; ++n) series += coeff[static_cast<std::size_t>(n)] * hermite_prob(n, z);
    d.values[i] = standard_normal_pdf(z) / sigma * series;
  }
  if (cfg.policy == NegativityPolicy::clamp_renormalize) {
    for (double& v : d.values) v = std::max(v, 0.0);
    d.normalize();
  }
  return d;
}

/// Gram-Charlier reconstruction of the eta = log x posterior.
inline DensityGrid gram_charlier_eta(const MomentSet& moments, const std::vector<double>& grid_eta,
                                     const ReconstructionConfig& cfg = {}) {
  if (moments.domain != Domain::eta) throw std::invalid_argument("gram_charlier_eta: moments must be in the eta domain");
  return gram_charlier(moments, grid_eta, cfg);
}

/// Change of variables p_x(x) = p_eta(log x) / x, linear interpolation in
/// eta, renormalized on grid_x.
inline DensityGrid eta_to_x(const DensityGrid& density_eta, const std::vector<double>& grid_x) {
  if (density_eta.domain != Domain::eta) throw std::invalid_argument("eta_to_x: input must be an eta-domain density");
  DensityGrid d{grid_x, std::vector<double>(grid_x.size(), 0.0), Domain::x};
  for (std::size_t i = 0; i < grid_x.size(); ++i) {
    if (!(grid_x[i] > 0.0)) throw std::invalid_argument("eta_to_x: x grid must be positive");
    d.values[i] = density_eta.at(std::log(grid_x[i])) / grid_x[i];
  }
  d.normalize();
  return d;
}

/// Inverse change of variables p_eta(eta) = p_x(e^eta) e^eta, renormalized on grid_eta.
inline DensityGrid x_to_eta(const DensityGrid& density_x, const std::vector<double>& grid_eta) {
  if (density_x.domain != Domain::x) throw std::invalid_argument("x_to_eta: input must be an x-domain density");
  DensityGrid d{grid_eta, std::vector<double>(grid_eta.size(), 0.0), Domain::eta};
  for (std::size_t i = 0; i < grid_eta.size(); ++i) {
    const double x = std::exp(grid_eta[i]);
    d.values[i] = density_x.at(x) * x;
  }
  d.normalize();
  return d;
}

struct CumulativeError {
  std::vector<double> curve;  // running sum of (approx - truth)^2 dx, left to right
  double total = 0.0;
};

/// Running integral of the squared density error across the support.
inline CumulativeError cumulative_sq_error(const DensityGrid& approx, const DensityGrid& truth) {
  if (approx.grid != truth.grid) throw std::invalid_argument("cumulative_sq_error: grids differ");
  const auto w = trapezoid_weights(approx.grid);
  CumulativeError out;
  out.curve.resize(approx.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < approx.size(); ++i) {
    const double diff = approx.values[i] - truth.values[i];
    acc += diff * diff * w[i];
    out.curve[i] = acc;
  }
  out.total = acc;
  return out;
}

inline double total_variation(const DensityGrid& a, const DensityGrid& b) {
  if (a.grid != b.grid) throw std::invalid_argument("total_variation: grids differ");
  const auto w = trapezoid_weights(a.grid);
  double tv = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) tv += std::abs(a.values[i] - b.values[i]) * w[i];
  return 0.5 * tv;
}

/// CSV with columns support, approx, truth, cumulative_error.
inline std::string curve_csv(const DensityGrid& approx, const DensityGrid& truth) {
  const auto err = cumulative_sq_error(approx, truth);
  std::ostringstream os;
  os.precision(17);
  os << "support,approx,truth,cumulative_error\n";
  for (std::size_t i = 0; i < approx.size(); ++i)
    os << approx.grid[i] << ',' << approx.values[i] << ',' << truth.values[i] << ',' << err.curve[i] << '\n';
  return os.str();
}

}  // namespace poisson_posterior
