#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <gtest/gtest.h>

#include "poisson_posterior/density_reconstruction.hpp"
#include "poisson_posterior/posterior_oracle.hpp"

using namespace poisson_posterior;

namespace {

MomentSet eta_moments(double mu1, std::vector<double> central) {
  MomentSet m;
  m.domain = Domain::eta;
  m.mu1 = mu1;
  m.central = std::move(central);
  return m;
}

double normal_pdf(double t, double mean, double sd) {
  const double z = (t - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

TEST(GramCharlier, StandardNormalFixedPoint) {
  const auto grid = linspace(-6.0, 6.0, 2001);
  const auto d = gram_charlier_eta(eta_moments(0.0, {1.0, 0.0, 3.0}), grid);
  EXPECT_NEAR(d.at(0.0), 0.3989423, 1e-7);
}

TEST(GramCharlier, SkewDoesNotMoveCenterValue) {
  ReconstructionConfig leave;
  leave.policy = NegativityPolicy::leave;
  const auto grid = linspace(-6.0, 6.0, 2001);
  const auto d = gram_charlier_eta(eta_moments(0.0, {1.0, 0.5, 3.0}), grid, leave);
  EXPECT_NEAR(d.at(0.0), 0.3989423, 1e-7);
}

TEST(GramCharlier, GaussianFixedPointPointwise) {
  // Any exact Gaussian reproduces itself, for every expansion order.
  ReconstructionConfig cfg;
  cfg.policy = NegativityPolicy::leave;
  for (int order = 2; order <= 6; ++order) {
    cfg.order = order;
    const double mean = 1.3, var = 0.49, sd = 0.7;
    std::vector<double> central{var, 0.0, 3 * var * var, 0.0, 15 * var * var * var};
    central.resize(static_cast<std::size_t>(order - 1));
    const auto m = eta_moments(mean, central);
    const auto grid = moment_grid(m, cfg);
    const auto d = gram_charlier(m, grid, cfg);
    for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_NEAR(d.values[i], normal_pdf(grid[i], mean, sd), 1e-10);
  }
}

TEST(GramCharlier, MassPreservedBeforeClamp) {
  ReconstructionConfig cfg;
  cfg.policy = NegativityPolicy::leave;
  cfg.eta_half_width = 12.0;
  cfg.eta_points = 8001;
  for (const auto& central : std::vector<std::vector<double>>{{0.3, 0.1, 0.4}, {1.0, -0.8, 2.0}, {0.2, 0.05, 0.1}}) {
    const auto m = eta_moments(0.4, central);
    const auto d = gram_charlier(m, moment_grid(m, cfg), cfg);
    EXPECT_NEAR(d.integral(), 1.0, 1e-6);
  }
}

TEST(GramCharlier, ClampRenormalizeGivesValidDensity) {
  const auto m = eta_moments(0.0, {1.0, -1.5, 2.0});
  ReconstructionConfig leave;
  leave.policy = NegativityPolicy::leave;
  const auto raw = gram_charlier(m, moment_grid(m, leave), leave);
  EXPECT_GT(negative_mass(raw), 0.0);
  const auto clamped = gram_charlier(m, moment_grid(m));
  EXPECT_NO_THROW(clamped.validate());
  EXPECT_NEAR(clamped.integral(), 1.0, 1e-12);
  EXPECT_EQ(negative_mass(clamped), 0.0);
}

TEST(GramCharlier, ClampDoesNotWorsenTotalVariationBeyondNegativeMass) {
  // Truth: a skewed Gamma(5, 2) log-posterior on the eta grid.
  const auto prior = PriorSpec::gamma(2.0, 1.0);
  const PosteriorOracle oracle(prior);
  for (double y : {0.0, 3.0, 9.0}) {
    for (int order : {3, 4, 6}) {
      const auto m = oracle.central_moments(y, order, Domain::eta);
      ReconstructionConfig leave;
      leave.policy = NegativityPolicy::leave;
      leave.order = order;
      ReconstructionConfig clamp = leave;
      clamp.policy = NegativityPolicy::clamp_renormalize;
      const auto grid = moment_grid(m, leave);
      const auto truth_x = oracle.posterior_density_on(y, linspace(1e-6, 100.0, 200001));
      DensityGrid truth = x_to_eta(truth_x, grid);
      const auto raw = gram_charlier(m, grid, leave);
      const auto cl = gram_charlier(m, grid, clamp);
      // Renormalizing rescales by the positive mass, which also absorbs truncation of the grid.
      const double rescale = std::abs(raw.integral() + negative_mass(raw) - 1.0);
      EXPECT_LE(total_variation(cl, truth), total_variation(raw, truth) + negative_mass(raw) + rescale + 1e-12)
          << "y=" << y << " order=" << order;
    }
  }
}

TEST(GramCharlier, GammaLogPosteriorCloseToOracle) {
  const PosteriorOracle oracle(PriorSpec::gamma(2.0, 1.0));
  const auto m = oracle.central_moments(3.0, 4, Domain::eta);
  const double sd = std::sqrt(m.moment(2));
  const auto grid = linspace(m.mu1 - 3 * sd, m.mu1 + 3 * sd, 601);
  const auto gc = gram_charlier_eta(m, moment_grid(m));
  // Oracle eta density of log of Gamma(5, 2): e^{5 eta - 2 e^eta} 2^5 / 4!.
  double worst = 0.0;
  for (double e : grid) {
    const double truth = std::exp(5 * e - 2 * std::exp(e) + 5 * std::log(2.0) - std::lgamma(5.0));
    worst = std::max(worst, std::abs(gc.at(e) - truth));
  }
  EXPECT_LE(worst, 0.05);
}

TEST(GramCharlier, Errors) {
  const auto grid = linspace(-1.0, 1.0, 200);
  EXPECT_THROW(gram_charlier_eta(eta_moments(0.0, {0.0, 0.0}), grid), std::invalid_argument);
  EXPECT_THROW(gram_charlier_eta(eta_moments(0.0, {-1.0}), grid), std::invalid_argument);
  MomentSet x = eta_moments(0.0, {1.0});
  x.domain = Domain::x;
  EXPECT_THROW(gram_charlier_eta(x, grid), std::invalid_argument);
  ReconstructionConfig small;
  small.eta_points = 50;
  EXPECT_THROW(moment_grid(eta_moments(0.0, {1.0}), small), std::invalid_argument);
}

TEST(GramCharlier, OrderTruncatedToAvailableMoments) {
  ReconstructionConfig six;
  six.order = 6;
  const auto m = eta_moments(0.0, {1.0, 0.3, 3.2});
  const auto grid = moment_grid(m);
  ReconstructionConfig four;
  EXPECT_EQ(gram_charlier(m, grid, six).values, gram_charlier(m, grid, four).values);
}

TEST(EtaToX, StandardNormalToLogNormal) {
  const auto eta = linspace(-8.0, 8.0, 4001);
  const auto d = gram_charlier_eta(eta_moments(0.0, {1.0, 0.0, 3.0}), eta);
  const auto x = eta_to_x(d, linspace(1e-4, 60.0, 200001));
  EXPECT_NEAR(x.at(1.0), 0.3989423, 1e-4);
  EXPECT_NEAR(x.integral(), 1.0, 1e-6);
}

TEST(EtaToX, NarrowGaussianModeNearTwo) {
  for (double var : {0.04, 0.01, 0.0025}) {
    const auto m = eta_moments(std::log(2.0), {var});
    const auto x = eta_to_x(gram_charlier_eta(m, moment_grid(m)), linspace(0.01, 20.0, 20000));
    const auto peaks = x.interior_maxima();
    ASSERT_EQ(peaks.size(), 1u);
    EXPECT_NEAR(x.grid[peaks[0]], 2.0 * std::exp(-var), 2e-3);
  }
}

TEST(EtaToX, RoundTripRecoversDensity) {
  const auto m = eta_moments(1.0, {0.2, 0.02, 0.15});
  const auto grid_eta = moment_grid(m);
  const auto d = gram_charlier_eta(m, grid_eta);
  const auto x = eta_to_x(d, linspace(0.05, 40.0, 40000));
  const auto back = x_to_eta(x, grid_eta);
  for (std::size_t i = 100; i + 100 < grid_eta.size(); ++i) EXPECT_NEAR(back.values[i], d.values[i], 1e-3);
}

TEST(EtaToX, DomainChecks) {
  DensityGrid x{{1.0, 2.0}, {1.0, 1.0}, Domain::x};
  EXPECT_THROW(eta_to_x(x, {1.0, 2.0}), std::invalid_argument);
  DensityGrid e{{0.0, 1.0}, {1.0, 1.0}, Domain::eta};
  EXPECT_THROW(x_to_eta(e, {0.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(eta_to_x(e, {-1.0, 1.0}), std::invalid_argument);
}

TEST(CumulativeError, ZeroForIdenticalAndMonotone) {
  const auto truth = posterior_density(PriorSpec::bimodal(), 4.0, 2000);
  const auto same = cumulative_sq_error(truth, truth);
  EXPECT_EQ(same.total, 0.0);
  for (double v : same.curve) EXPECT_EQ(v, 0.0);

  const auto m = eta_moments(1.5, {0.4, 0.0, 0.48});
  const auto approx = eta_to_x(gram_charlier_eta(m, moment_grid(m)), truth.grid);
  const auto err = cumulative_sq_error(approx, truth);
  for (std::size_t i = 1; i < err.curve.size(); ++i) EXPECT_GE(err.curve[i], err.curve[i - 1]);
  EXPECT_EQ(err.total, err.curve.back());
  EXPECT_GT(err.total, 0.0);
}

TEST(CumulativeError, GridMismatch) {
  DensityGrid a{{1.0, 2.0}, {0.5, 0.5}, Domain::x};
  DensityGrid b{{1.0, 2.5}, {0.5, 0.5}, Domain::x};
  EXPECT_THROW(cumulative_sq_error(a, b), std::invalid_argument);
}

TEST(CurveCsv, Columns) {
  DensityGrid a{{1.0, 2.0}, {0.5, 0.5}, Domain::x};
  DensityGrid b{{1.0, 2.0}, {0.4, 0.6}, Domain::x};
  const auto csv = curve_csv(a, b);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "support,approx,truth,cumulative_error");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
