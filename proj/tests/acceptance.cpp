// Acceptance run: one PASS/FAIL line per criterion. Arguments select a subset by
// number (default: all). Exit status is nonzero if any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tlsphonon/experiments.hpp"
#include "tlsphonon/json_io.hpp"
#include "tlsphonon/montecarlo.hpp"
#include "tlsphonon/readout.hpp"
#include "tlsphonon/tlsparams.hpp"

using namespace tlsphonon;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = a + (b - a) * i / (n - 1);
  return v;
}

// Shared with the tolerance-halving check.
double g_nbar4_final = 0.0;

// ---- 1: double-exponential ringdown ---------------------------------------------

void criterion1(Verdict& v) {
  const std::vector<double> taus = linspace(0.0, 50e-6, 51);
  const double kappa1 = kTwoPi * 50e3;
  double prev_a2 = -HUGE_VAL;
  for (double nbar0 : {1.0, 2.0, 4.0, 8.0}) {
    const double a = std::sqrt(nbar0);
    const RingdownDataset d =
        run_ringdown(SystemConfig::weak_coupling_reference(required_n_max(a)), Complex(a, 0.0), taus);
    if (nbar0 == 4.0) g_nbar4_final = d.nbar.back();
    const FitResult f = fit_double_exp(d.taus, d.nbar, kappa1);
    const double k2 = f.value("kappa2") / kTwoPi, a2 = f.value("a2");
    v.detail << " n0=" << nbar0 << ": a2=" << a2 << " k2/2pi=" << k2 << "Hz rel=" << f.relative_residual << ";";
    v.require(f.converged, "fit converged");
    v.require(f.relative_residual < 0.05, "relative residual < 5%");
    v.require(k2 >= 500.0 && k2 <= 5000.0, "kappa2/2pi in [0.5, 5] kHz");
    v.require(a2 > prev_a2, "a2 strictly increasing");
    prev_a2 = a2;
  }
}

// ---- 2: dephasing trend -----------------------------------------------------------

void criterion2(Verdict& v) {
  const std::vector<double> taus = linspace(0.0, 6e-6, 13);
  const std::vector<double> phis = default_phase_grid(24);
  double prev = HUGE_VAL, t2m_13 = 0.0;
  for (double a : {0.8, 1.3, 1.8}) {
    const SystemConfig c = SystemConfig::strong_coupling_reference(required_n_max(a));
    const DephasingAnalysis an = analyze_dephasing(run_interferometry(c, Complex(a, 0.0), taus, phis));
    v.detail << " alpha=" << a << ": gamma_2m=" << an.gamma_2m << "/s T2m=" << an.t2m * 1e6 << "us;";
    v.require(an.gamma_2m < prev, "gamma_2m strictly decreasing in alpha");
    prev = an.gamma_2m;
    if (a == 1.3) t2m_13 = an.t2m;
  }
  v.require(t2m_13 >= 2.2e-6 / 3.0 && t2m_13 <= 2.2e-6 * 3.0, "T2m(1.3) within a factor 3 of 2.2 us");
}

// ---- 3: pure-dephasing oracle -----------------------------------------------------

void criterion3(Verdict& v) {
  const double t2m = 2e-6, a = 1.3;
  const HilbertLayout l(required_n_max(a), 0);
  const Operator h(l, CMatrix::Zero(l.total_dim(), l.total_dim()), true);
  const std::vector<Operator> ls{mechanical_dephasing_operator(l, t2m)};
  const std::vector<double> taus = linspace(0.0, 6e-6, 13);
  const InterferometryDataset d =
      run_interferometry(thermal_state(l, 0.0), h, ls, Complex(a, 0.0), taus, default_phase_grid(24));
  const DephasingAnalysis an = analyze_dephasing(d);
  double worst = 0.0;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const double ratio = an.amplitudes[i] / an.amplitudes[0];
    worst = std::max(worst, std::abs(ratio / std::exp(-taus[i] / t2m) - 1.0));
  }
  v.detail << " fitted T2m=" << an.t2m * 1e6 << "us, worst amplitude-ratio deviation " << worst;
  v.require(std::abs(an.t2m / t2m - 1.0) < 0.02, "fitted T2m within 2%");
  v.require(worst < 0.02, "C(tau)/C(0) within 2% of exp(-tau/T2m)");
}

// ---- 4: Ramsey inversion roundtrip ------------------------------------------------

void criterion4(Verdict& v) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> nmax(1, 10);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi), w0(15e6, 25e6);
  const double chi = -kTwoPi * 1.48e6 / 2.0, kappa = 1.0 / 1.4e-6;
  std::vector<double> t(281);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 700e-9 * static_cast<double>(i) / 280.0;
  double worst_p = 0.0, worst_chi = 0.0;
  int failures = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n_max = nmax(rng);
    PhononDistribution pn;
    double total = 0.0;
    for (int n = 0; n <= n_max; ++n) total += pn.probs.emplace_back(expo(rng));
    for (double& p : pn.probs) p /= total;
    std::vector<double> phases(static_cast<std::size_t>(n_max) + 1);
    for (double& p : phases) p = phase(rng);
    const RamseySignal s = synthesize_ramsey(pn, kTwoPi * w0(rng), chi, kappa, phases, t);
    try {
      const RamseyFit f = fit_ramsey(s, n_max);
      for (std::size_t n = 0; n < pn.size(); ++n) worst_p = std::max(worst_p, std::abs(f.pn.probs[n] - pn.probs[n]));
      worst_chi = std::max(worst_chi, std::abs(f.fit.value("chi") / chi - 1.0));
    } catch (const std::exception& e) {
      ++failures;
      v.detail << " trial " << trial << " threw: " << e.what() << ";";
    }
  }
  v.detail << " 50 trials, worst |dP|=" << worst_p << ", worst chi rel error=" << worst_chi;
  v.require(failures == 0, "every fit converges");
  v.require(worst_p < 1e-3, "every P(n) within 1e-3");
  v.require(worst_chi < 5e-3, "chi within 0.5%");
}

// ---- 5: CPTP properties -----------------------------------------------------------

void criterion5(Verdict& v) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto log_uniform = [&](double lo, double hi) { return lo * std::pow(hi / lo, u(rng)); };
  double trace = 0.0, herm = 0.0, min_eig = HUGE_VAL;
  for (int trial = 0; trial < 20; ++trial) {
    SystemConfig c;
    c.n_tls = 1 + static_cast<int>(u(rng) * 3.0);
    c.n_max = 3 + static_cast<int>(u(rng) * 6.0);
    c.g_tls = kTwoPi * log_uniform(10e3, 500e3);
    c.delta_tls = kTwoPi * (2.0 * u(rng) - 1.0) * 1e6;
    c.gamma1 = kTwoPi * log_uniform(1e3, 100e3);
    c.gamma2 = kTwoPi * log_uniform(10e3, 2e6);
    c.n_th = 0.2 * u(rng);
    // Largest amplitude the truncation rule admits at this n_max.
    double a_max = 0.0;
    while (required_n_max(a_max + 0.01) <= c.n_max) a_max += 0.01;
    const Complex alpha = std::polar(a_max * u(rng), kTwoPi * u(rng));
    EvolveOptions opts;
    opts.store_states = true;
    const Trajectory tr = evolve(displaced_thermal_state(c, alpha), c, 5e-6, linspace(0.0, 5e-6, 6), opts);
    trace = std::max(trace, tr.max_trace_drift);
    herm = std::max(herm, tr.max_hermiticity_error);
    for (const DensityMatrix& s : tr.states) min_eig = std::min(min_eig, s.min_eigenvalue());
  }
  v.detail << " 20 configs: max trace drift " << trace << ", max |rho - rho^H| " << herm << ", min eigenvalue "
           << min_eig << ";";
  v.require(trace < 1e-7, "trace within 1e-7");
  v.require(herm < 1e-8, "Hermiticity within 1e-8");
  v.require(min_eig >= -1e-6, "eigenvalues >= -1e-6");

  // Tolerance halving on the weak-coupling set at nbar0 = 4, 50 us.
  const double a = 2.0;
  const SystemConfig c = SystemConfig::weak_coupling_reference(required_n_max(a));
  const std::vector<double> taus{0.0, 50e-6};
  if (g_nbar4_final == 0.0) g_nbar4_final = run_ringdown(c, Complex(a, 0.0), taus).nbar.back();
  EvolveOptions half;
  half.rtol /= 2.0;
  half.atol /= 2.0;
  const double fine = run_ringdown(c, Complex(a, 0.0), taus, half).nbar.back();
  const double rel = std::abs(fine / g_nbar4_final - 1.0);
  v.detail << " tolerance halving changes nbar(50us) by " << rel << " relative";
  v.require(rel < 1e-6, "tolerance halving < 1e-6 relative");
}

// ---- 6: microphysics chain --------------------------------------------------------

void criterion6(Verdict& v) {
  const double xi = 1.6e-9;
  const TlsSamples s = sample_tls_distributions(10000, 6, xi);
  const auto [lo, hi] = std::minmax_element(s.g_tls.begin(), s.g_tls.end());
  // Range corners bound every draw; check them as well as the samples.
  MaterialConstants m;
  m.p0 = 1e46;
  m.delta0 = std::pow(10.0, -4.5);
  const double g_min = tls_coupling_rate(elastic_dipole(m), xi) / kTwoPi;
  m.p0 = 1e44;
  m.delta0 = 1e-4;
  const double g_max = tls_coupling_rate(elastic_dipole(m), xi) / kTwoPi;
  v.detail << " sampled g/2pi in [" << *lo / kTwoPi << ", " << *hi / kTwoPi << "] Hz, corners [" << g_min << ", "
           << g_max << "] Hz;";
  v.require(*lo / kTwoPi >= 10e3 && *hi / kTwoPi <= 1e6, "sampled g/2pi in [10 kHz, 1 MHz]");
  v.require(g_min >= 10e3 && g_max <= 1e6, "corner g/2pi in [10 kHz, 1 MHz]");

  double n_lo = HUGE_VAL, n_hi = 0.0;
  for (int i = 0; i <= 20; ++i) {
    const double vol = 1e-19 * std::pow(10.0, i / 20.0);
    const double n = estimate_tls_count(1e45, vol, kTwoPi * 660e3);
    n_lo = std::min(n_lo, n);
    n_hi = std::max(n_hi, n);
  }
  v.detail << " N over V in [1e-19, 1e-18] m^3: [" << n_lo << ", " << n_hi << "]";
  v.require(n_lo >= 0.1 && n_hi <= 10.0, "N in [0.1, 10]");
}

// ---- 7: mBVD resonance ------------------------------------------------------------

void criterion7(Verdict& v) {
  const double fs = series_resonance_hz();
  v.detail << " f_s = " << fs << " Hz";
  v.require(std::abs(fs / 2.33e9 - 1.0) < 0.01, "f_s within 1% of 2.33 GHz");
  v.require(std::abs(fs / 2.339e9 - 1.0) < 0.01, "f_s within 1% of 2.339 GHz");
}

// ---- 8: Monte Carlo ---------------------------------------------------------------

double brute_force_std(const PhononDistribution& pn, int samples) {
  std::mt19937 rng(808);
  std::normal_distribution<double> unit(0.0, 1.0);
  double mean = 0.0, m2 = 0.0;
  for (int i = 1; i <= samples; ++i) {
    double total = 0.0, weighted = 0.0;
    for (std::size_t n = 0; n < pn.size(); ++n) {
      const double p = std::max(0.0, pn.probs[n] + pn.sigmas[n] * unit(rng));
      total += p;
      weighted += static_cast<double>(n) * p;
    }
    const double x = weighted / total, d = x - mean;
    mean += d / i;
    m2 += d * (x - mean);
  }
  return std::sqrt(m2 / (samples - 1));
}

void criterion8(Verdict& v) {
  const PhononDistribution pn{{0.5, 0.5}, {0.05, 0.05}};
  ResampleConfig cfg;
  cfg.seed = 8;
  const UncertaintyReport a = resample_pn(pn, cfg);
  const UncertaintyReport b = resample_pn(pn, cfg);
  const double oracle = brute_force_std(pn, 1'000'000);
  v.detail << " report std " << a.std_dev << " vs brute force " << oracle;
  v.require(std::abs(a.std_dev / oracle - 1.0) < 0.05, "std within 5% of the brute-force oracle");
  const bool identical = a.samples == b.samples && nlohmann::json(a).dump() == nlohmann::json(b).dump();
  v.require(identical, "equal seeds give bit-identical reports");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<void(Verdict&)>>> criteria{
      {"double-exponential ringdown regime", criterion1},
      {"dephasing trend with displacement amplitude", criterion2},
      {"pure-dephasing fringe decay", criterion3},
      {"Ramsey inversion roundtrip", criterion4},
      {"CPTP properties and tolerance halving", criterion5},
      {"TLS microphysics chain", criterion6},
      {"mBVD series resonance", criterion7},
      {"Monte Carlo calibration and determinism", criterion8},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict v;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[k].second(v);
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[k].first << ", "
              << static_cast<int>(std::lround(secs)) << " s):" << v.detail.str() << std::endl;
    failed += v.pass ? 0 : 1;
  }
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
