#include "tlsphonon/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <random>
#include <thread>

#include "tlsphonon/errors.hpp"

namespace tlsphonon {

namespace {

// Runs body(i) for i in [0, n) on up to `threads` workers.
template <class Body>
void parallel_for(int n, int threads, Body&& body) {
  const int workers = std::min(threads, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (int i = next++; i < n && !failed; i = next++) {
      try {
        body(i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

void add_noise(std::span<const double> base, std::span<const double> sigmas, std::mt19937_64& rng,
               std::vector<double>& out) {
  out.assign(base.begin(), base.end());
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t k = 0; k < out.size(); ++k)
    if (sigmas[k] > 0.0) out[k] += sigmas[k] * unit(rng);
}

void summarize(UncertaintyReport& r, int bins) {
  r.n_accepted = static_cast<int>(r.samples.size());
  if (r.samples.empty()) return;
  // Shifted by the first sample so that identical replicas give exactly zero spread.
  const double shift = r.samples.front();
  double sum = 0.0;
  for (double x : r.samples) sum += x - shift;
  const double offset = sum / static_cast<double>(r.samples.size());
  r.mean = shift + offset;
  double ss = 0.0;
  for (double x : r.samples) ss += (x - shift - offset) * (x - shift - offset);
  r.std_dev = r.samples.size() > 1 ? std::sqrt(ss / static_cast<double>(r.samples.size() - 1)) : 0.0;
  r.histogram = make_histogram(r.samples, bins);
}

void check_sigmas(std::span<const double> sigmas, std::size_t n, const char* where) {
  if (sigmas.size() != n) throw ConfigError(std::string(where) + ": need one sigma per value");
  for (double s : sigmas)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError(std::string(where) + ": sigmas must be finite and >= 0");
}

}  // namespace

void ResampleConfig::validate() const {
  if (n_iterations < 2) throw ConfigError("ResampleConfig: n_iterations must be >= 2");
  if (threads < 1) throw ConfigError("ResampleConfig: threads must be >= 1");
  if (bins < 1) throw ConfigError("ResampleConfig: bins must be >= 1");
}

std::uint64_t splitmix64(std::uint64_t seed, std::uint64_t i) {
  std::uint64_t z = seed + (i + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

UncertaintyReport resample_pn(const PhononDistribution& pn, const ResampleConfig& cfg) {
  cfg.validate();
  if (!pn.has_sigmas()) throw ConfigError("resample_pn: distribution has no sigmas");
  check_sigmas(pn.sigmas, pn.size(), "resample_pn");
  PhononDistribution point = pn;
  point.sigmas.clear();
  point.normalize();

  UncertaintyReport r;
  r.quantity = "nbar";
  r.point_estimate = point.mean();
  r.n_iterations = cfg.n_iterations;
  r.samples.assign(static_cast<std::size_t>(cfg.n_iterations), 0.0);
  parallel_for(cfg.n_iterations, cfg.threads, [&](int i) {
    std::mt19937_64 rng(splitmix64(cfg.seed, static_cast<std::uint64_t>(i)));
    PhononDistribution replica;
    add_noise(pn.probs, pn.sigmas, rng, replica.probs);
    replica.normalize();
    r.samples[static_cast<std::size_t>(i)] = replica.mean();
  });
  summarize(r, cfg.bins);
  return r;
}

std::vector<UncertaintyReport> resample_fit(std::span<const double> values, std::span<const double> sigmas,
                                            const FitFn& fit, const ResampleConfig& cfg) {
  cfg.validate();
  if (!fit) throw ConfigError("resample_fit: no fit function");
  check_sigmas(sigmas, values.size(), "resample_fit");

  const FitResult base = fit(values);
  std::vector<std::string> names = base.names;
  for (const DerivedQuantity& d : base.derived) names.push_back(d.name);
  const std::size_t q = names.size();

  const auto n = static_cast<std::size_t>(cfg.n_iterations);
  std::vector<std::vector<double>> replica_values(n);
  parallel_for(cfg.n_iterations, cfg.threads, [&](int i) {
    std::mt19937_64 rng(splitmix64(cfg.seed, static_cast<std::uint64_t>(i)));
    std::vector<double> noisy;
    add_noise(values, sigmas, rng, noisy);
    std::vector<double> got(q);
    try {
      const FitResult f = fit(noisy);
      if (!f.converged) return;
      for (std::size_t k = 0; k < q; ++k) {
        got[k] = f.value(names[k]);
        if (!std::isfinite(got[k])) return;
      }
    } catch (const NumericalError&) {
      return;
    }
    replica_values[static_cast<std::size_t>(i)] = std::move(got);
  });

  int failed = 0;
  for (const auto& v : replica_values) failed += v.empty() ? 1 : 0;
  const bool flagged = failed * 10 > cfg.n_iterations;

  std::vector<UncertaintyReport> reports(q);
  for (std::size_t k = 0; k < q; ++k) {
    UncertaintyReport& r = reports[k];
    r.quantity = names[k];
    r.point_estimate = base.value(names[k]);
    r.n_iterations = cfg.n_iterations;
    r.n_failed = failed;
    r.flagged = flagged;
    for (const auto& v : replica_values)
      if (!v.empty()) r.samples.push_back(v[k]);
    summarize(r, cfg.bins);
  }
  return reports;
}

}  // namespace tlsphonon
