#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"
#include "moments.hpp"
#include "posterior_oracle.hpp"
#include "special_functions.hpp"

namespace poisson_posterior {

/// Tweedie's formula in the canonical domain: E[log x | y] = psi(y+1) + d/dy log p(y).
inline double tweedie_eta(double marginal_score, double y) {
  if (!(y >= 0.0)) throw std::domain_error("tweedie_eta: y must be >= 0");
  return digamma(y + 1.0) + marginal_score;
}

enum class DerivativeMode { exact_callback, finite_difference };

/// First posterior moment as a function of a scalar observation.
struct Mu1Estimator {
  std::function<double(double)> value;
  /// Derivatives d^m mu_1 / dy^m for m = 0..order (exact_callback mode).
  std::function<std::vector<double>(double, int)> derivatives;
  DerivativeMode mode = DerivativeMode::finite_difference;
  double fd_step = 1e-3;
  /// Absolute noise of one evaluation; 0 means a few ulps of the values seen.
  double noise_level = 0.0;

  static Mu1Estimator exact(std::function<double(double)> value,
                            std::function<std::vector<double>(double, int)> derivatives) {
    return {std::move(value), std::move(derivatives), DerivativeMode::exact_callback, 1e-3, 0.0};
  }

  static Mu1Estimator finite_difference(std::function<double(double)> value, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
    return {std::move(value), {}, DerivativeMode::finite_difference, step, 0.0};
  }
};

struct FdConfig {
  double step = 1e-3;
  int max_order = 5;
};

namespace detail {

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

struct Jet {
  std::vector<double> derivatives;  // d^0 .. d^order
  std::vector<double> noise;        // estimated absolute error from evaluation noise
};

/// Derivatives of mu_1 up to `order` at y. Finite differences nest the
/// central difference D_h f(y) = (f(y+h) - f(y-h)) / 2h, so the m-th
/// derivative uses offsets y + (m - 2j) h.
inline Jet mu1_jet(const Mu1Estimator& mu1, double y, int order, const FdConfig& fd) {
  Jet jet;
  jet.noise.assign(static_cast<std::size_t>(order + 1), 0.0);
  if (mu1.mode == DerivativeMode::exact_callback) {
    if (!mu1.derivatives) throw std::invalid_argument("exact-callback estimator has no derivative callback");
    jet.derivatives = mu1.derivatives(y, order);
    if (static_cast<int>(jet.derivatives.size()) < order + 1)
      throw std::invalid_argument("derivative callback returned too few orders");
    jet.derivatives.resize(static_cast<std::size_t>(order + 1));
    return jet;
  }
  if (order > fd.max_order) throw std::invalid_argument("derivative order exceeds FdConfig::max_order");
  if (!(fd.step > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  const double h = fd.step;
  std::map<int, double> samples;
  auto f = [&](int offset) {
    auto it = samples.find(offset);
    if (it != samples.end()) return it->second;
    const double v = mu1.value(y + offset * h);
    if (!std::isfinite(v)) throw numerical_error("mu_1 estimator returned a non-finite value");
    samples.emplace(offset, v);
    return v;
  };
  jet.derivatives.assign(static_cast<std::size_t>(order + 1), 0.0);
  // The stencil weights sum to zero, so differencing against f(0) is exact for
  // constant inputs and reduces cancellation otherwise.
  const double f0 = f(0);
  jet.derivatives[0] = f0;
  for (int m = 1; m <= order; ++m) {
    double acc = 0.0;
    for (int j = 0; j <= m; ++j) acc += ((j % 2 == 0) ? 1.0 : -1.0) * binomial(m, j) * (f(m - 2 * j) - f0);
    jet.derivatives[static_cast<std::size_t>(m)] = acc / std::pow(2.0 * h, m);
  }
  double scale = 0.0;
  for (const auto& [k, v] : samples) scale = std::max(scale, std::abs(v));
  const double eps = mu1.noise_level > 0.0 ? mu1.noise_level : 8.0 * std::numeric_limits<double>::epsilon() * scale;
  for (int m = 1; m <= order; ++m) jet.noise[static_cast<std::size_t>(m)] = eps / std::pow(h, m);
  return jet;
}

/// Truncated Taylor polynomial p(t) = sum_j c_j t^j around the query point.
using Taylor = std::vector<double>;

inline Taylor differentiate(const Taylor& p) {
  Taylor d(p.size() > 1 ? p.size() - 1 : 1, 0.0);
  for (std::size_t j = 1; j < p.size(); ++j) d[j - 1] = static_cast<double>(j) * p[j];
  return d;
}

inline Taylor multiply(const Taylor& a, const Taylor& b, std::size_t terms) {
  Taylor r(terms, 0.0);
  for (std::size_t i = 0; i < a.size() && i < terms; ++i)
    for (std::size_t j = 0; j < b.size() && i + j < terms; ++j) r[i + j] += a[i] * b[j];
  return r;
}

/// Runs mu_2 = mu_1', mu_3 = mu_2', mu_{k+1} = mu_k' + k mu_2 mu_{k-1} on
/// Taylor expansions, so every mu_k is carried with enough derivatives for
/// the next step. In one dimension each of the k correction terms of the
/// tensor recursion equals mu_2 mu_{k-1}.
inline MomentSet run_recursion(const Mu1Estimator& mu1, double y, int order, const FdConfig& fd, Domain domain) {
  if (order < 2 || order > kMaxMomentOrder) throw std::invalid_argument("recursion order K must lie in [2, 6]");
  const Jet jet = mu1_jet(mu1, y, order - 1, fd);

  std::vector<Taylor> mu(static_cast<std::size_t>(order + 1));
  Taylor& m1 = mu[1];
  m1.resize(static_cast<std::size_t>(order));
  double fact = 1.0;
  for (int j = 0; j < order; ++j) {
    if (j > 0) fact *= j;
    m1[static_cast<std::size_t>(j)] = jet.derivatives[static_cast<std::size_t>(j)] / fact;
  }
  mu[2] = differentiate(mu[1]);
  if (order >= 3) mu[3] = differentiate(mu[2]);
  for (int k = 3; k < order; ++k) {
    const std::size_t terms = static_cast<std::size_t>(order - k);
    Taylor next = differentiate(mu[static_cast<std::size_t>(k)]);
    next.resize(terms, 0.0);
    const Taylor corr = multiply(mu[2], mu[static_cast<std::size_t>(k - 1)], terms);
    for (std::size_t j = 0; j < terms; ++j) next[j] += k * corr[j];
    mu[static_cast<std::size_t>(k + 1)] = std::move(next);
  }

  MomentSet out;
  out.y = y;
  out.domain = domain;
  out.mu1 = mu[1][0];
  for (int k = 2; k <= order; ++k) {
    const double v = mu[static_cast<std::size_t>(k)][0];
    out.central.push_back(v);
    const double noise = jet.noise[static_cast<std::size_t>(k - 1)];
    if (noise > 0.1 * std::abs(v))
      out.warnings.push_back("mu_" + std::to_string(k) + ": finite-difference noise estimate " +
                             std::to_string(noise) + " exceeds 10% of the value");
  }
  return out;
}

}  // namespace detail

/// Posterior central moments of eta = log x from E[log x | y] and its derivatives.
inline MomentSet recursion_scalar(const Mu1Estimator& mu1, double y, int order, const FdConfig& fd) {
  return detail::run_recursion(mu1, y, order, fd, Domain::eta);
}

inline MomentSet recursion_scalar(const Mu1Estimator& mu1, double y, int order) {
  return recursion_scalar(mu1, y, order, FdConfig{mu1.fd_step});
}

/// The same recursion applied verbatim to E[x | y]. This is the Gaussian-noise
/// construction; under Poisson noise its output is not the x-domain posterior.
inline MomentSet baseline_x_recursion(const Mu1Estimator& mu1x, double y, int order, const FdConfig& fd) {
  return detail::run_recursion(mu1x, y, order, fd, Domain::x);
}

inline MomentSet baseline_x_recursion(const Mu1Estimator& mu1x, double y, int order) {
  return baseline_x_recursion(mu1x, y, order, FdConfig{mu1x.fd_step});
}

/// E[log x | y] = psi(shape + y) - log(rate + 1) under a Gamma(shape, rate)
/// prior, with exact derivatives psi^(m)(shape + y).
inline Mu1Estimator gamma_conjugate_mu1(double shape, double rate) {
  return Mu1Estimator::exact(
      [=](double y) { return digamma(shape + y) - std::log(rate + 1.0); },
      [=](double y, int order) {
        std::vector<double> d;
        d.push_back(digamma(shape + y) - std::log(rate + 1.0));
        for (int m = 1; m <= order; ++m) d.push_back(polygamma(m, shape + y));
        return d;
      });
}

/// E[x | y] = (shape + y) / (rate + 1) under a Gamma(shape, rate) prior.
inline Mu1Estimator gamma_conjugate_mean_x(double shape, double rate) {
  return Mu1Estimator::exact([=](double y) { return (shape + y) / (rate + 1.0); },
                             [=](double y, int order) {
                               std::vector<double> d{(shape + y) / (rate + 1.0)};
                               if (order >= 1) d.push_back(1.0 / (rate + 1.0));
                               for (int m = 2; m <= order; ++m) d.push_back(0.0);
                               return d;
                             });
}

/// Quadrature posterior mean as a finite-difference estimator.
inline Mu1Estimator oracle_mu1(std::shared_ptr<const PosteriorOracle> oracle, Domain domain, double step = 1e-3) {
  return Mu1Estimator::finite_difference([oracle, domain](double y) { return oracle->posterior_mean(y, domain); },
                                         step);
}

/// Vector-valued first moment, mu_1 : R^n -> R^n.
struct VectorMu1Estimator {
  std::function<std::vector<double>(const std::vector<double>&)> value;
  std::function<Eigen::MatrixXd(const std::vector<double>&)> jacobian;  // optional exact Jacobian
  DerivativeMode mode = DerivativeMode::finite_difference;
  double fd_step = 1e-3;
};

struct MultivariateMoments {
  std::vector<double> y;
  std::vector<double> mu1;
  Eigen::MatrixXd covariance;           // [mu_2]_{i,j} = d [mu_1]_i / d y_j
  std::vector<double> third_diagonal;   // [mu_3]_{i,i,i}, when requested
};

inline constexpr std::size_t kMaxMultivariateDim = 1024;

/// Posterior covariance of eta as the Jacobian of mu_1, with optional
/// diagonal third moments d^2 [mu_1]_i / d y_i^2.
inline MultivariateMoments recursion_multivariate(const VectorMu1Estimator& mu1, const std::vector<double>& y,
                                                  const FdConfig& fd, bool third_diagonal = false) {
  const std::size_t n = y.size();
  if (n == 0 || n > kMaxMultivariateDim) throw std::invalid_argument("recursion_multivariate: dimension must be in [1, 1024]");
  MultivariateMoments out;
  out.y = y;
  out.mu1 = mu1.value(y);
  if (out.mu1.size() != n) throw std::invalid_argument("mu_1 must map R^n to R^n");
  out.covariance.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));

  const bool exact = mu1.mode == DerivativeMode::exact_callback && mu1.jacobian;
  if (exact) out.covariance = mu1.jacobian(y);
  if (exact && !third_diagonal) return out;

  const double h = fd.step;
  if (!(h > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  if (third_diagonal) out.third_diagonal.assign(n, 0.0);
  std::vector<double> probe = y;
  for (std::size_t j = 0; j < n; ++j) {
    probe[j] = y[j] + h;
    const auto up = mu1.value(probe);
    probe[j] = y[j] - h;
    const auto down = mu1.value(probe);
    probe[j] = y[j];
    if (!exact)
      for (std::size_t i = 0; i < n; ++i)
        out.covariance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (up[i] - down[i]) / (2.0 * h);
    if (third_diagonal) out.third_diagonal[j] = (up[j] - 2.0 * out.mu1[j] + down[j]) / (h * h);
  }
  return out;
}

inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace poisson_posterior
