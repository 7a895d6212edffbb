#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace poisson_posterior {

/// Numerical failure: underflowed posterior, diverged training, overflowed
/// Poisson rate. The CLI maps these to exit code 2.
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Variable a density or a moment set refers to: eta = log x, or x itself.
enum class Domain { eta, x };

inline std::string_view to_string(Domain d) { return d == Domain::eta ? "eta" : "x"; }

inline Domain parse_domain(std::string_view s) {
  if (s == "eta") return Domain::eta;
  if (s == "x") return Domain::x;
  throw std::invalid_argument("unknown domain '" + std::string(s) + "' (expected eta or x)");
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  if (n < 2) throw std::invalid_argument("linspace: need at least two points");
  std::vector<double> out(n);
  const double step = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) out[i] = lo + step * static_cast<double>(i);
  out.back() = hi;
  return out;
}

inline double trapezoid(const std::vector<double>& grid, const std::vector<double>& values) {
  if (grid.size() != values.size()) throw std::invalid_argument("trapezoid: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    sum += 0.5 * (grid[i] - grid[i - 1]) * (values[i] + values[i - 1]);
  return sum;
}

/// Trapezoid weights: half-cells at both ends.
inline std::vector<double> trapezoid_weights(const std::vector<double>& grid) {
  std::vector<double> w(grid.size(), 0.0);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double h = 0.5 * (grid[i] - grid[i - 1]);
    w[i - 1] += h;
    w[i] += h;
  }
  return w;
}

inline double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// A 1-D density tabulated on a strictly increasing grid.
struct DensityGrid {
  std::vector<double> grid;
  std::vector<double> values;
  Domain domain = Domain::x;

  std::size_t size() const { return grid.size(); }
  double integral() const { return trapezoid(grid, values); }

  void validate() const {
    if (grid.size() != values.size()) throw std::invalid_argument("DensityGrid: grid/value size mismatch");
    if (grid.size() < 2) throw std::invalid_argument("DensityGrid: need at least two points");
    for (std::size_t i = 1; i < grid.size(); ++i)
      if (!(grid[i] > grid[i - 1])) throw std::invalid_argument("DensityGrid: grid not strictly increasing");
    for (double v : values)
      if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("DensityGrid: negative or non-finite value");
  }

  /// Rescales so the trapezoidal integral is one.
  void normalize() {
    const double z = integral();
    if (!(z > 0.0) || !std::isfinite(z)) throw numerical_error("DensityGrid: cannot normalize zero-mass density");
    for (double& v : values) v /= z;
  }

  /// Linear interpolation; zero outside the grid.
  double at(double t) const {
    if (t < grid.front() || t > grid.back()) return 0.0;
    auto it = std::upper_bound(grid.begin(), grid.end(), t);
    if (it == grid.end()) return values.back();
    const std::size_t hi = static_cast<std::size_t>(it - grid.begin());
    const std::size_t lo = hi - 1;
    const double f = (t - grid[lo]) / (grid[hi] - grid[lo]);
    return values[lo] + f * (values[hi] - values[lo]);
  }

  /// Indices of strict interior local maxima (plateaus count once).
  std::vector<std::size_t> interior_maxima() const {
    std::vector<std::size_t> out;
    const std::size_t n = values.size();
    std::size_t i = 1;
    while (i + 1 < n) {
      if (values[i] > values[i - 1]) {
        std::size_t j = i;
        while (j + 1 < n && values[j + 1] == values[i]) ++j;
        if (j + 1 < n && values[j + 1] < values[i]) out.push_back(i);
        i = j + 1;
      } else {
        ++i;
      }
    }
    return out;
  }
};

/// Two-column CSV: support, density.
inline std::string to_csv(const DensityGrid& d) {
  std::ostringstream os;
  os.precision(17);
  os << (d.domain == Domain::eta ? "eta" : "x") << ",density\n";
  for (std::size_t i = 0; i < d.size(); ++i) os << d.grid[i] << ',' << d.values[i] << '\n';
  return os.str();
}

inline DensityGrid density_from_csv(std::istream& in) {
  DensityGrid d;
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("density CSV: empty input");
  const auto comma = line.find(',');
  d.domain = parse_domain(line.substr(0, comma));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    double s = 0.0;
    double v = 0.0;
    char sep = 0;
    if (!(row >> s >> sep >> v) || sep != ',') throw std::invalid_argument("density CSV: malformed row '" + line + "'");
    d.grid.push_back(s);
    d.values.push_back(v);
  }
  d.validate();
  return d;
}

}  // namespace poisson_posterior
