#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace poisson_posterior {

inline constexpr int kMaxPolygammaOrder = 6;
inline constexpr int kMaxHermiteDegree = 8;

namespace detail {

// B_2, B_4, ..., B_20
inline constexpr std::array<double, 10> kBernoulliEven = {
    1.0 / 6.0,          -1.0 / 30.0,        1.0 / 42.0,       -1.0 / 30.0,
    5.0 / 66.0,         -691.0 / 2730.0,    7.0 / 6.0,        -3617.0 / 510.0,
    43867.0 / 798.0,    -174611.0 / 330.0};

inline double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

// Asymptotic expansion of psi^(n)(x), valid for large x (x >= 10 here).
inline double polygamma_asymptotic(int n, double x) {
  const double inv = 1.0 / x;
  if (n == 0) {
    double sum = std::log(x) - 0.5 * inv;
    const double inv2 = inv * inv;
    double p = inv2;
    for (std::size_t k = 0; k < kBernoulliEven.size(); ++k) {
      sum -= kBernoulliEven[k] / (2.0 * (k + 1)) * p;
      p *= inv2;
    }
    return sum;
  }
  // (-1)^(n+1) [ (n-1)!/x^n + n!/(2 x^(n+1)) + sum_k B_2k (2k+n-1)!/((2k)! x^(2k+n)) ]
  const double xn = std::pow(x, n);
  double sum = factorial(n - 1) / xn + factorial(n) / (2.0 * xn * x);
  double ratio = factorial(n - 1);  // (2k+n-1)!/(2k)!, starts at k=0
  double p = 1.0 / xn;
  for (std::size_t k = 0; k < kBernoulliEven.size(); ++k) {
    const double two_k = 2.0 * (k + 1);
    ratio *= (two_k + n - 2) * (two_k + n - 1) / ((two_k - 1) * two_k);
    p *= inv * inv;
    sum += kBernoulliEven[k] * ratio * p;
  }
  return (n % 2 == 1) ? sum : -sum;
}

}  // namespace detail

/// psi^(n)(x): n = 0 is the digamma, n = 1 the trigamma, and so on.
/// Shifts x upward with psi^(n)(x) = psi^(n)(x+1) - (-1)^n n!/x^(n+1) until
/// x >= 10, then sums the asymptotic series.
inline double polygamma(int n, double x) {
  if (n < 0 || n > kMaxPolygammaOrder)
    throw std::domain_error("polygamma: order " + std::to_string(n) + " outside [0, 6]");
  if (!(x > 0.0) || !std::isfinite(x))
    throw std::domain_error("polygamma: argument must be positive and finite");

  const double sign = (n % 2 == 0) ? 1.0 : -1.0;
  const double nfact = detail::factorial(n);
  double shift = 0.0;
  while (x < 10.0) {
    shift += sign * nfact / std::pow(x, n + 1);
    x += 1.0;
  }
  return detail::polygamma_asymptotic(n, x) - shift;
}

inline double digamma(double x) { return polygamma(0, x); }
inline double trigamma(double x) { return polygamma(1, x); }

/// ln Gamma(x) for x > 0.
inline double log_gamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x))
    throw std::domain_error("log_gamma: argument must be positive and finite");
  return std::lgamma(x);
}

/// Probabilists' Hermite polynomial He_n(z).
inline double hermite_prob(int n, double z) {
  if (n < 0 || n > kMaxHermiteDegree)
    throw std::domain_error("hermite_prob: degree " + std::to_string(n) + " outside [0, 8]");
  if (n == 0) return 1.0;
  double prev = 1.0;
  double cur = z;
  for (int k = 1; k < n; ++k) {
    const double next = z * cur - k * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

/// Monomial coefficients of He_n: He_n(z) = sum_j c[j] z^j.
inline std::array<double, kMaxHermiteDegree + 1> hermite_coefficients(int n) {
  if (n < 0 || n > kMaxHermiteDegree)
    throw std::domain_error("hermite_coefficients: degree outside [0, 8]");
  std::array<double, kMaxHermiteDegree + 1> prev{};
  std::array<double, kMaxHermiteDegree + 1> cur{};
  prev[0] = 1.0;
  if (n == 0) return prev;
  cur[1] = 1.0;
  for (int k = 1; k < n; ++k) {
    std::array<double, kMaxHermiteDegree + 1> next{};
    for (int j = 0; j < kMaxHermiteDegree; ++j) next[j + 1] += cur[j];
    for (int j = 0; j <= kMaxHermiteDegree; ++j) next[j] -= k * prev[j];
    prev = cur;
    cur = next;
  }
  return cur;
}

inline double standard_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace poisson_posterior
