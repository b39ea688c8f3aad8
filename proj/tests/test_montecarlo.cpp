#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "tlsphonon/errors.hpp"
#include "tlsphonon/montecarlo.hpp"

using namespace tlsphonon;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Same procedure, run independently with many samples and a different generator.
double brute_force_nbar_std(const std::vector<double>& p, const std::vector<double>& s, int samples) {
  std::mt19937 rng(12345);
  std::normal_distribution<double> unit(0.0, 1.0);
  double mean = 0.0, m2 = 0.0;
  std::vector<double> x(p.size());
  for (int i = 1; i <= samples; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      x[k] = std::max(0.0, p[k] + s[k] * unit(rng));
      total += x[k];
    }
    double nbar = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) nbar += static_cast<double>(k) * x[k] / total;
    const double d = nbar - mean;
    mean += d / i;
    m2 += d * (nbar - mean);
  }
  return std::sqrt(m2 / (samples - 1));
}

PhononDistribution two_level(double sigma) { return PhononDistribution{{0.5, 0.5}, {sigma, sigma}}; }

std::vector<double> ringdown_times() {
  std::vector<double> t;
  for (int i = 0; i <= 50; ++i) t.push_back(50e-6 * i / 50);
  return t;
}

}  // namespace

TEST_SUITE("montecarlo") {

TEST_CASE("splitmix64 sub-seeds") {
  // Reference outputs of the splitmix64 generator seeded with 0.
  CHECK(splitmix64(0, 0) == 0xE220A8397B1DCDAFULL);
  CHECK(splitmix64(0, 1) == 0x6E789E6AA1B965F4ULL);
  CHECK(splitmix64(0, 2) == 0x06C45D188009454FULL);
  CHECK(splitmix64(1, 0) != splitmix64(0, 0));
}

TEST_CASE("resample_pn matches a brute-force run of the same procedure") {
  const PhononDistribution pn = two_level(0.05);
  const UncertaintyReport r = resample_pn(pn, ResampleConfig{});
  const double oracle = brute_force_nbar_std(pn.probs, pn.sigmas, 1'000'000);
  INFO("report std " << r.std_dev << ", oracle " << oracle);
  CHECK(r.std_dev == doctest::Approx(oracle).epsilon(0.05));
  CHECK(r.point_estimate == doctest::Approx(0.5));
  CHECK(r.quantity == "nbar");
  CHECK(r.n_accepted == 2000);
  std::uint64_t total = 0;
  for (auto c : r.histogram.counts) total += c;
  CHECK(total == 2000);
}

TEST_CASE("resample_pn is deterministic and thread-count independent") {
  const PhononDistribution pn{{0.3, 0.4, 0.2, 0.1}, {0.02, 0.03, 0.02, 0.01}};
  ResampleConfig cfg;
  cfg.seed = 77;
  const UncertaintyReport a = resample_pn(pn, cfg);
  const UncertaintyReport b = resample_pn(pn, cfg);
  cfg.threads = 3;
  const UncertaintyReport c = resample_pn(pn, cfg);
  CHECK(a.samples == b.samples);
  CHECK(a.samples == c.samples);
  CHECK(a.std_dev == c.std_dev);
  CHECK(a.histogram.counts == c.histogram.counts);
  cfg.seed = 78;
  CHECK(resample_pn(pn, cfg).samples != a.samples);
}

TEST_CASE("resample_pn with zero sigmas gives a zero-width report") {
  const PhononDistribution pn{{0.2, 0.5, 0.3}, {0.0, 0.0, 0.0}};
  const UncertaintyReport r = resample_pn(pn, ResampleConfig{});
  CHECK(r.std_dev == 0.0);
  CHECK(r.mean == doctest::Approx(1.1));
}

TEST_CASE("doubling sigmas does not shrink the nbar spread") {
  const PhononDistribution pn{{0.4, 0.3, 0.2, 0.1}, {0.02, 0.02, 0.01, 0.01}};
  PhononDistribution wide = pn;
  for (double& s : wide.sigmas) s *= 2.0;
  int not_smaller = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ResampleConfig cfg;
    cfg.seed = seed;
    cfg.n_iterations = 500;
    if (resample_pn(wide, cfg).std_dev >= resample_pn(pn, cfg).std_dev) ++not_smaller;
  }
  CHECK(not_smaller == 20);
}

TEST_CASE("resample_pn validation") {
  CHECK_THROWS_AS(resample_pn(PhononDistribution{{0.5, 0.5}, {}}, ResampleConfig{}), ConfigError);
  CHECK_THROWS_AS(resample_pn(PhononDistribution{{0.5, 0.5}, {0.1}}, ResampleConfig{}), ConfigError);
  CHECK_THROWS_AS(resample_pn(two_level(-0.1), ResampleConfig{}), ConfigError);
  ResampleConfig one;
  one.n_iterations = 1;
  CHECK_THROWS_AS(resample_pn(two_level(0.1), one), ConfigError);
}

TEST_CASE("resample_fit: noiseless data and zero sigmas give zero spread") {
  const std::vector<double> t = ringdown_times();
  const Eigen::VectorXd y = double_exp_model(Eigen::Vector4d(1.0, kTwoPi * 50e3, 2.0, kTwoPi * 2.5e3), t);
  const std::vector<double> values(y.data(), y.data() + y.size());
  const std::vector<double> zeros(values.size(), 0.0);
  ResampleConfig cfg;
  cfg.n_iterations = 20;
  const auto reports = resample_fit(values, zeros, [&](std::span<const double> v) { return fit_double_exp(t, v); }, cfg);
  REQUIRE(reports.size() == 4);
  for (const UncertaintyReport& r : reports) {
    CHECK(r.std_dev == 0.0);
    CHECK(r.n_failed == 0);
    CHECK_FALSE(r.flagged);
  }
  CHECK(reports[3].quantity == "kappa2");
  CHECK(reports[3].point_estimate == doctest::Approx(kTwoPi * 2.5e3).epsilon(1e-6));
}

TEST_CASE("resample_fit: kappa2 spread agrees with the single-fit covariance") {
  const std::vector<double> t = ringdown_times();
  const Eigen::VectorXd clean = double_exp_model(Eigen::Vector4d(1.0, kTwoPi * 50e3, 2.0, kTwoPi * 2.5e3), t);
  const double sigma = 0.03 * clean.maxCoeff();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<double> values(clean.data(), clean.data() + clean.size());
  for (double& v : values) v += noise(rng);
  const std::vector<double> sigmas(values.size(), sigma);

  auto fit = [&](std::span<const double> v) { return fit_double_exp(t, v); };
  const FitResult single = fit(values);
  ResampleConfig cfg;
  cfg.seed = 11;
  const auto reports = resample_fit(values, sigmas, fit, cfg);
  const UncertaintyReport& k2 = reports[3];
  const double se = single.standard_error("kappa2");
  INFO("MC std " << k2.std_dev << ", covariance estimate " << se << ", failed " << k2.n_failed);
  CHECK(k2.std_dev > 0.5 * se);
  CHECK(k2.std_dev < 2.0 * se);
  CHECK_FALSE(k2.flagged);

  cfg.threads = 2;
  cfg.n_iterations = 50;
  const auto a = resample_fit(values, sigmas, fit, cfg);
  cfg.threads = 1;
  const auto b = resample_fit(values, sigmas, fit, cfg);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].samples == b[k].samples);
}

TEST_CASE("resample_fit drops and counts failed replicas") {
  const std::vector<double> values{1.0, 2.0, 3.0};
  const std::vector<double> sigmas{1.0, 1.0, 1.0};
  auto flaky = [](std::span<const double> v) {
    if (v[0] > 1.5) throw NumericalError("no convergence");
    FitResult f;
    f.names = {"x"};
    f.params = Eigen::VectorXd::Constant(1, v[0]);
    f.converged = true;
    return f;
  };
  ResampleConfig cfg;
  cfg.n_iterations = 400;
  const auto r = resample_fit(values, sigmas, flaky, cfg);
  REQUIRE(r.size() == 1);
  // P(N(1, 1) > 1.5) ≈ 0.31
  CHECK(r[0].n_failed > 80);
  CHECK(r[0].n_failed + r[0].n_accepted == 400);
  CHECK(r[0].flagged);
  for (double x : r[0].samples) CHECK(x <= 1.5);
}

}
