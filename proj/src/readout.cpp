#include "tlsphonon/readout.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "tlsphonon/errors.hpp"

namespace tlsphonon {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_phase(double phi) {
  double w = std::remainder(phi, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

Eigen::Map<const Eigen::VectorXd> as_vector(std::span<const double> s) {
  return {s.data(), static_cast<Eigen::Index>(s.size())};
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw ConfigError(std::string(what) + ": non-finite input");
}

// Fills the common bookkeeping of a FitResult from an optimizer outcome whose
// parameters are already in reporting units.
FitResult assemble(std::string model, std::vector<std::string> names, const LmOutcome& lm,
                   const Eigen::VectorXd& params, const Eigen::MatrixXd& jacobian_reporting_units,
                   const Eigen::VectorXd& residual, std::span<const double> data) {
  FitResult fit;
  fit.model = std::move(model);
  fit.names = std::move(names);
  fit.params = params;
  const CovarianceEstimate cov = estimate_covariance(jacobian_reporting_units, residual);
  fit.covariance = cov.covariance;
  fit.rank_deficient = cov.rank_deficient;
  fit.residual_norm = residual.norm();
  const double ynorm = as_vector(data).norm();
  fit.relative_residual = ynorm > 0.0 ? fit.residual_norm / ynorm : fit.residual_norm;
  fit.converged = lm.converged;
  fit.n_iterations = lm.iterations;
  fit.gradient_cosine = gradient_cosine(jacobian_reporting_units, residual);
  if (fit.rank_deficient) fit.flags.emplace_back("rank_deficient");
  return fit;
}

void throw_if_not_converged(const FitResult& fit) {
  if (fit.converged) return;
  std::ostringstream msg;
  msg << fit.model << " fit did not converge after " << fit.n_iterations << " iterations (gradient cosine "
      << fit.gradient_cosine << ")";
  throw NumericalError(msg.str());
}

}  // namespace

// ---- FitResult -------------------------------------------------------------------

Eigen::Index FitResult::index(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Eigen::Index>(i);
  throw ConfigError("FitResult: unknown parameter '" + std::string(name) + "'");
}

double FitResult::value(std::string_view name) const {
  for (const DerivedQuantity& d : derived)
    if (d.name == name) return d.value;
  return params(index(name));
}

double FitResult::standard_error(std::string_view name) const {
  for (const DerivedQuantity& d : derived)
    if (d.name == name) return d.standard_error;
  const Eigen::Index i = index(name);
  return std::sqrt(std::max(covariance(i, i), 0.0));
}

bool FitResult::has_flag(std::string_view flag) const {
  return std::find(flags.begin(), flags.end(), flag) != flags.end();
}

// ---- Ramsey ------------------------------------------------------------------------

void RamseySignal::validate() const {
  if (times.size() != values.size()) throw ConfigError("RamseySignal: times and values differ in length");
  if (times.size() < 2) throw ConfigError("RamseySignal: need at least two samples");
  require_finite(times, "RamseySignal");
  require_finite(values, "RamseySignal");
  const double dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
  if (!(dt > 0.0)) throw ConfigError("RamseySignal: times must be increasing");
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double expected = times.front() + dt * static_cast<double>(i);
    if (std::abs(times[i] - expected) > 1e-12 * std::max(std::abs(times.back()), dt))
      throw ConfigError("RamseySignal: time grid is not uniform");
  }
}

RamseySignal synthesize_ramsey(const PhononDistribution& pn, double omega0, double chi, double kappa,
                               std::span<const double> phases, std::span<const double> times, double amplitude) {
  if (phases.size() != 1 && phases.size() != pn.size())
    throw ConfigError("synthesize_ramsey: need one phase per level or a single shared phase");
  RamseySignal s;
  s.times.assign(times.begin(), times.end());
  s.values.assign(times.size(), 0.0);
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    const double env = std::exp(-kappa * t);
    double acc = 0.0;
    for (std::size_t n = 0; n < pn.size(); ++n) {
      const double phi = phases.size() == 1 ? phases[0] : phases[n];
      acc += amplitude * pn.probs[n] * std::cos((omega0 + 2.0 * chi * static_cast<double>(n)) * t + phi);
    }
    s.values[i] = env * acc;
  }
  return s;
}

namespace {

struct RamseyLayout {
  Eigen::Index levels;
  Eigen::Index phases;
  Eigen::Index kappa() const { return levels + phases; }
  Eigen::Index chi() const { return levels + phases + 1; }
  Eigen::Index omega0() const { return levels + phases + 2; }
  Eigen::Index size() const { return levels + phases + 3; }
  Eigen::Index phase(Eigen::Index n) const { return levels + (phases == 1 ? 0 : n); }
};

RamseyLayout ramsey_layout(int n_levels, PhaseMode mode) {
  if (n_levels < 1) throw ConfigError("ramsey model: need at least one level");
  return {n_levels, mode == PhaseMode::kShared ? 1 : n_levels};
}

}  // namespace

Eigen::VectorXd ramsey_model(const Eigen::VectorXd& p, std::span<const double> times, int n_levels, PhaseMode mode) {
  const RamseyLayout lay = ramsey_layout(n_levels, mode);
  if (p.size() != lay.size()) throw ConfigError("ramsey_model: parameter vector has the wrong length");
  Eigen::VectorXd out(static_cast<Eigen::Index>(times.size()));
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    double acc = 0.0;
    for (Eigen::Index n = 0; n < lay.levels; ++n)
      acc += p(n) * std::cos((p(lay.omega0()) + 2.0 * p(lay.chi()) * static_cast<double>(n)) * t + p(lay.phase(n)));
    out(static_cast<Eigen::Index>(i)) = std::exp(-p(lay.kappa()) * t) * acc;
  }
  return out;
}

Eigen::MatrixXd ramsey_jacobian(const Eigen::VectorXd& p, std::span<const double> times, int n_levels,
                                PhaseMode mode) {
  const RamseyLayout lay = ramsey_layout(n_levels, mode);
  if (p.size() != lay.size()) throw ConfigError("ramsey_jacobian: parameter vector has the wrong length");
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(times.size()), lay.size());
  for (std::size_t ii = 0; ii < times.size(); ++ii) {
    const auto i = static_cast<Eigen::Index>(ii);
    const double t = times[ii];
    const double env = std::exp(-p(lay.kappa()) * t);
    double value = 0.0;
    for (Eigen::Index n = 0; n < lay.levels; ++n) {
      const double nn = static_cast<double>(n);
      const double theta = (p(lay.omega0()) + 2.0 * p(lay.chi()) * nn) * t + p(lay.phase(n));
      const double c = env * std::cos(theta);
      const double s = -env * p(n) * std::sin(theta);
      value += p(n) * c;
      jac(i, n) = c;
      jac(i, lay.phase(n)) += s;
      jac(i, lay.chi()) += s * 2.0 * nn * t;
      jac(i, lay.omega0()) += s * t;
    }
    jac(i, lay.kappa()) = -t * value;
  }
  return jac;
}

namespace {

struct Tone {
  double omega;
  double kappa;
  double amplitude;
};

// Matrix-pencil estimate of the damped tones in a uniformly sampled real signal.
// Times are measured from the first sample; `du` is the sample spacing.
std::vector<Tone> pencil_tones(const Eigen::VectorXd& y, double du, int max_poles) {
  const Eigen::Index n = y.size();
  const Eigen::Index l = n / 2;
  Eigen::MatrixXd hankel(n - l, l + 1);
  for (Eigen::Index i = 0; i < n - l; ++i)
    for (Eigen::Index j = 0; j <= l; ++j) hankel(i, j) = y(i + j);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(hankel, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return {};
  Eigen::Index m = 0;
  while (m < sv.size() && m < max_poles && sv(m) > 1e-9 * sv(0)) ++m;
  if (m == 0) return {};
  const Eigen::MatrixXd v = svd.matrixV().leftCols(m);
  const Eigen::MatrixXd v1t = v.topRows(l).transpose();
  const Eigen::MatrixXd v2t = v.bottomRows(l).transpose();
  const Eigen::MatrixXd a = v2t * v1t.completeOrthogonalDecomposition().pseudoInverse();
  Eigen::EigenSolver<Eigen::MatrixXd> eig(a, false);
  const Eigen::VectorXcd z = eig.eigenvalues();

  Eigen::MatrixXcd vander(n, m);
  for (Eigen::Index k = 0; k < m; ++k) {
    std::complex<double> power(1.0, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      vander(i, k) = power;
      power *= z(k);
    }
  }
  const Eigen::VectorXcd coeff = vander.colPivHouseholderQr().solve(y.cast<std::complex<double>>());

  std::vector<Tone> tones;
  for (Eigen::Index k = 0; k < m; ++k) {
    const double w = std::arg(z(k)) / du;
    if (w <= 0.0 || std::abs(z(k)) == 0.0) continue;
    tones.push_back({w, -std::log(std::abs(z(k))) / du, 2.0 * std::abs(coeff(k))});
  }
  return tones;
}

// Linear least squares for the per-level cosine/sine coefficients at fixed
// (ω0, χ, κ); returns the residual norm and fills amplitudes and phases.
double ramsey_projection(const Eigen::VectorXd& y, std::span<const double> u, int levels, double omega0, double chi,
                         double kappa, Eigen::VectorXd* amplitude, Eigen::VectorXd* phase) {
  const Eigen::Index m = y.size();
  Eigen::MatrixXd basis(m, 2 * levels);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double t = u[static_cast<std::size_t>(i)];
    const double env = std::exp(-kappa * t);
    for (int n = 0; n < levels; ++n) {
      const double w = omega0 + 2.0 * chi * n;
      basis(i, 2 * n) = env * std::cos(w * t);
      basis(i, 2 * n + 1) = env * std::sin(w * t);
    }
  }
  const Eigen::VectorXd c = basis.colPivHouseholderQr().solve(y);
  if (amplitude && phase) {
    amplitude->resize(levels);
    phase->resize(levels);
    for (int n = 0; n < levels; ++n) {
      // c cos(wt) + s sin(wt) = A cos(wt + φ) with A cos φ = c, A sin φ = −s
      (*amplitude)(n) = std::hypot(c(2 * n), c(2 * n + 1));
      (*phase)(n) = std::atan2(-c(2 * n + 1), c(2 * n));
    }
  }
  return (basis * c - y).norm();
}

// Separable Ramsey basis. θ = (κ, χ, ω0) gives cosine/sine columns per level
// (per-level phases); θ = (κ, χ, ω0, φ) gives one column per level (shared phase).
void ramsey_basis(std::span<const double> t, int levels, const Eigen::VectorXd& theta, Eigen::MatrixXd& b,
                  std::vector<Eigen::MatrixXd>* d) {
  const bool shared = theta.size() == 4;
  const Eigen::Index m = static_cast<Eigen::Index>(t.size());
  const Eigen::Index cols = shared ? levels : 2 * levels;
  b.resize(m, cols);
  if (d) d->assign(static_cast<std::size_t>(theta.size()), Eigen::MatrixXd::Zero(m, cols));
  const double phi = shared ? theta(3) : 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double ti = t[static_cast<std::size_t>(i)];
    const double env = std::exp(-theta(0) * ti);
    for (int n = 0; n < levels; ++n) {
      const double arg = (theta(2) + 2.0 * theta(1) * n) * ti + phi;
      const double c = env * std::cos(arg), s = env * std::sin(arg);
      if (shared) {
        b(i, n) = c;
        if (d) {
          (*d)[0](i, n) = -ti * c;
          (*d)[1](i, n) = -s * 2.0 * n * ti;
          (*d)[2](i, n) = -s * ti;
          (*d)[3](i, n) = -s;
        }
      } else {
        b(i, 2 * n) = c;
        b(i, 2 * n + 1) = s;
        if (d) {
          (*d)[0](i, 2 * n) = -ti * c;
          (*d)[0](i, 2 * n + 1) = -ti * s;
          (*d)[1](i, 2 * n) = -s * 2.0 * n * ti;
          (*d)[1](i, 2 * n + 1) = c * 2.0 * n * ti;
          (*d)[2](i, 2 * n) = -s * ti;
          (*d)[2](i, 2 * n + 1) = c * ti;
        }
      }
    }
  }
}

}  // namespace

RamseyFit fit_ramsey(const RamseySignal& signal, int n_max, const RamseyHints& hints, const LmOptions& opts) {
  signal.validate();
  if (n_max < 0) throw ConfigError("fit_ramsey: n_max must be >= 0");
  const std::size_t need = 4 * static_cast<std::size_t>(n_max + 3);
  if (signal.times.size() < need) {
    std::ostringstream msg;
    msg << "fit_ramsey: signal has " << signal.times.size() << " samples, at least " << need << " required";
    throw ConfigError(msg.str());
  }
  if (hints.chi_sign != 1.0 && hints.chi_sign != -1.0) throw ConfigError("fit_ramsey: chi_sign must be +1 or -1");
  const int levels = n_max + 1;
  const RamseyLayout lay = ramsey_layout(levels, hints.phase_mode);

  // Work in units of the record length.
  const double unit = signal.times.back() - signal.times.front();
  std::vector<double> u(signal.times.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = signal.times[i] / unit;
  const double du = u[1] - u[0];
  const Eigen::VectorXd y = as_vector(signal.values);
  if (y.norm() == 0.0) throw ConfigError("fit_ramsey: signal is identically zero");

  // Seeds, all in scaled units.
  std::vector<Tone> tones = pencil_tones(y, du, 2 * levels + 2);
  double max_amp = 0.0;
  for (const Tone& t : tones) max_amp = std::max(max_amp, t.amplitude);
  std::erase_if(tones, [&](const Tone& t) { return t.amplitude < 1e-3 * max_amp; });
  std::sort(tones.begin(), tones.end(), [](const Tone& a, const Tone& b) { return a.omega < b.omega; });

  if (tones.empty() && !hints.omega0)
    throw NumericalError("fit_ramsey: no oscillating component found to seed the carrier frequency");

  // Decay seed for the comb search: median damping of the strong tones.
  std::vector<Tone> strong;
  for (const Tone& t : tones)
    if (t.amplitude >= 0.1 * max_amp) strong.push_back(t);
  double kappa = 0.0;
  if (hints.kappa) {
    kappa = *hints.kappa * unit;
  } else if (!strong.empty()) {
    std::vector<double> k;
    for (const Tone& t : strong) k.push_back(t.kappa);
    std::nth_element(k.begin(), k.begin() + static_cast<std::ptrdiff_t>(k.size() / 2), k.end());
    kappa = std::max(k[k.size() / 2], 0.0);
  }

  // Spacing candidates: weak spurious poles make the smallest gap unreliable, so
  // every gap between strong tones, divided by 1..3, is tried, and gaps among the
  // three strongest tones by any level count (the levels between them may be weak).
  std::vector<double> spacings;
  if (hints.chi) {
    spacings.push_back(std::abs(2.0 * *hints.chi * unit));
  } else {
    for (std::size_t i = 0; i < strong.size(); ++i)
      for (std::size_t j = i + 1; j < strong.size(); ++j)
        for (int k = 1; k <= 3; ++k) spacings.push_back((strong[j].omega - strong[i].omega) / k);
    std::vector<Tone> top = strong;
    std::sort(top.begin(), top.end(), [](const Tone& a, const Tone& b) { return a.amplitude > b.amplitude; });
    top.resize(std::min<std::size_t>(top.size(), 3));
    for (std::size_t i = 0; i < top.size(); ++i)
      for (std::size_t j = i + 1; j < top.size(); ++j)
        for (int k = 4; k < levels; ++k) spacings.push_back(std::abs(top[j].omega - top[i].omega) / k);
    std::erase_if(spacings, [&](double g) { return g < 0.5 * kPi || g * (levels - 1) > kPi / du; });
    std::sort(spacings.begin(), spacings.end());
    std::vector<double> unique;
    for (double g : spacings)
      if (unique.empty() || g > unique.back() * 1.01) unique.push_back(g);
    spacings = std::move(unique);
    if (spacings.empty()) spacings.push_back(2.0 * kPi);
  }

  // Carrier placement: try every position that keeps the detected tones inside the
  // comb (a weak end level hides the outermost tone).
  struct Seed {
    double residual, spacing, chi, omega0, kappa;
  };
  // Each spacing keeps its three best distinct placements; the three spacings with
  // the best placement go on to refinement.
  std::vector<std::vector<Seed>> per_spacing;
  for (double g : spacings) {
    const double c = hints.chi ? *hints.chi * unit : hints.chi_sign * g / 2.0;
    std::vector<Seed> placed;
    if (hints.omega0) {
      const double w = *hints.omega0 * unit;
      placed.push_back({ramsey_projection(y, u, levels, w, c, kappa, nullptr, nullptr), g, c, w, kappa});
    } else {
      const double lo = c < 0.0 ? tones.back().omega - g : tones.front().omega - levels * g;
      const double hi = c < 0.0 ? tones.front().omega + levels * g : tones.back().omega + g;
      for (double w = lo; w <= hi; w += g / 8.0)
        placed.push_back({ramsey_projection(y, u, levels, w, c, kappa, nullptr, nullptr), g, c, w, kappa});
    }
    std::sort(placed.begin(), placed.end(), [](const Seed& a, const Seed& b) { return a.residual < b.residual; });
    std::vector<Seed> kept;
    for (const Seed& s : placed) {
      if (kept.size() == 3) break;
      if (std::none_of(kept.begin(), kept.end(), [&](const Seed& k) { return std::abs(k.omega0 - s.omega0) < 0.3 * g; }))
        kept.push_back(s);
    }
    if (!kept.empty()) per_spacing.push_back(std::move(kept));
  }
  if (per_spacing.empty()) throw NumericalError("fit_ramsey: no level comb covers the detected tones");
  std::sort(per_spacing.begin(), per_spacing.end(),
            [](const auto& a, const auto& b) { return a.front().residual < b.front().residual; });
  // Placements that fit equally well (a lone tone is any single level) resolve to
  // the outermost tone as level 0, so that seed goes first and wins ties.
  std::vector<Seed> tried;
  {
    Seed conv = per_spacing.front().front();
    if (!hints.omega0) conv.omega0 = conv.chi < 0.0 ? tones.back().omega : tones.front().omega;
    conv.residual = ramsey_projection(y, u, levels, conv.omega0, conv.chi, conv.kappa, nullptr, nullptr);
    tried.push_back(conv);
  }
  for (std::size_t i = 0; i < std::min<std::size_t>(per_spacing.size(), 3); ++i)
    tried.insert(tried.end(), per_spacing[i].begin(), per_spacing[i].end());

  // Decay: scanned on a log grid (pole dampings are unreliable under noise).
  const auto scan_kappa = [&](Seed& s) {
    if (hints.kappa) return;
    s.residual = ramsey_projection(y, u, levels, s.omega0, s.chi, 0.0, nullptr, nullptr);
    s.kappa = 0.0;
    for (int i = 0; i <= 40; ++i) {
      const double k = std::pow(10.0, -2.0 + 0.1 * i);
      const double r = ramsey_projection(y, u, levels, s.omega0, s.chi, k, nullptr, nullptr);
      if (r < s.residual) {
        s.residual = r;
        s.kappa = k;
      }
    }
  };

  // The coarse ranking cannot separate placements one level apart (a spacing error
  // of a fraction of a percent already costs a visible residual on a long comb), so
  // every kept seed is refined and polished by variable projection; the
  // lowest-cost converged outcome wins.
  const bool shared = hints.phase_mode == PhaseMode::kShared;
  const std::span<const double> us(u);
  const SeparableBasisFn basis_fn = [&](const Eigen::VectorXd& th, Eigen::MatrixXd& b,
                                        std::vector<Eigen::MatrixXd>* d) { ramsey_basis(us, levels, th, b, d); };
  std::optional<VarProOutcome> best_vp;
  const double tie = 1e-12 * y.squaredNorm();
  for (Seed s : tried) {
    scan_kappa(s);
    const Seed centre = s;
    for (int a = -4; a <= 4; ++a)
      for (int b = -4; b <= 4; ++b) {
        const double w = centre.omega0 + 0.075 * a * centre.spacing;
        const double c = centre.chi * (1.0 + 0.0125 * b);
        const double r = ramsey_projection(y, u, levels, w, c, centre.kappa, nullptr, nullptr);
        if (r < s.residual) {
          s.residual = r;
          s.omega0 = w;
          s.chi = c;
        }
      }
    scan_kappa(s);

    Eigen::VectorXd theta0(shared ? 4 : 3);
    theta0.head(3) << s.kappa, s.chi, s.omega0;
    if (shared) {
      // Amplitude-weighted circular mean of the per-level phases.
      Eigen::VectorXd amp, phase;
      ramsey_projection(y, u, levels, s.omega0, s.chi, s.kappa, &amp, &phase);
      double cs = 0.0, sn = 0.0;
      for (int n = 0; n < levels; ++n) {
        cs += amp(n) * std::cos(phase(n));
        sn += amp(n) * std::sin(phase(n));
      }
      theta0(3) = std::atan2(sn, cs);
    }
    VarProOutcome vp = variable_projection(basis_fn, y, theta0, opts);
    const auto better = [tie](const VarProOutcome& a, const VarProOutcome& b) {
      if (a.nonlinear.converged != b.nonlinear.converged) return a.nonlinear.converged;
      return a.nonlinear.cost < b.nonlinear.cost - tie;
    };
    if (!best_vp || better(vp, *best_vp)) best_vp = std::move(vp);
  }
  const VarProOutcome& vp = *best_vp;
  const LmOutcome& lm = vp.nonlinear;

  // Jacobian of the separable parameterization (linear coefficients, then θ) in
  // physical units, for the covariance.
  Eigen::VectorXd theta = lm.params;
  theta.head(3) /= unit;
  Eigen::MatrixXd basis;
  std::vector<Eigen::MatrixXd> derivs;
  ramsey_basis(signal.times, levels, theta, basis, &derivs);
  const Eigen::Index nlin = basis.cols();
  Eigen::MatrixXd jsep(basis.rows(), nlin + theta.size());
  jsep.leftCols(nlin) = basis;
  for (Eigen::Index k = 0; k < theta.size(); ++k) jsep.col(nlin + k) = derivs[static_cast<std::size_t>(k)] * vp.linear;
  const Eigen::VectorXd residual = basis * vp.linear - y;
  const CovarianceEstimate sep_cov = estimate_covariance(jsep, residual);

  // Map (linear, θ) to the reported (A_n, φ, κ, χ, ω0).
  Eigen::VectorXd p(lay.size());
  Eigen::MatrixXd to_reported = Eigen::MatrixXd::Zero(lay.size(), jsep.cols());
  std::vector<std::string> flags;
  if (shared) {
    for (Eigen::Index n = 0; n < levels; ++n) {
      p(n) = vp.linear(n);
      to_reported(n, n) = 1.0;
    }
    p(levels) = wrap_phase(theta(3));
    to_reported(levels, nlin + 3) = 1.0;
  } else {
    for (Eigen::Index n = 0; n < levels; ++n) {
      // c cos(wt) + s sin(wt) = A cos(wt + φ) with A cos φ = c, A sin φ = −s
      const double c = vp.linear(2 * n), sn = vp.linear(2 * n + 1);
      const double a2 = c * c + sn * sn;
      p(n) = std::sqrt(a2);
      p(levels + n) = std::atan2(-sn, c);
      if (a2 > 0.0) {
        to_reported(n, 2 * n) = c / p(n);
        to_reported(n, 2 * n + 1) = sn / p(n);
        to_reported(levels + n, 2 * n) = sn / a2;
        to_reported(levels + n, 2 * n + 1) = -c / a2;
      }
    }
  }
  for (Eigen::Index k = 0; k < 3; ++k) to_reported(lay.kappa() + k, nlin + k) = 1.0;
  p(lay.kappa()) = theta(0);
  p(lay.chi()) = theta(1);
  p(lay.omega0()) = theta(2);
  for (Eigen::Index n = 0; n < levels; ++n)
    if (p(n) < 0.0) {
      p(n) = 0.0;
      flags.push_back("clamped:A" + std::to_string(n));
    }

  std::vector<std::string> names;
  for (int n = 0; n < levels; ++n) names.push_back("A" + std::to_string(n));
  if (shared) {
    names.emplace_back("phi");
  } else {
    for (int n = 0; n < levels; ++n) names.push_back("phi" + std::to_string(n));
  }
  names.emplace_back("kappa");
  names.emplace_back("chi");
  names.emplace_back("omega0");

  RamseyFit out;
  out.fit = assemble("ramsey", std::move(names), lm, p, jsep, residual, signal.values);
  out.fit.covariance = to_reported * sep_cov.covariance * to_reported.transpose();
  for (std::string& f : flags) out.fit.flags.push_back(std::move(f));
  throw_if_not_converged(out.fit);

  const double total = p.head(levels).sum();
  if (!(total > 0.0)) throw NumericalError("fit_ramsey: all fitted amplitudes vanish");
  out.pn.probs.resize(static_cast<std::size_t>(levels));
  for (int n = 0; n < levels; ++n) out.pn.probs[static_cast<std::size_t>(n)] = p(n) / total;
  // P = A / ΣA; dP_i/dA_j = (δ_ij − P_i) / ΣA
  Eigen::MatrixXd dp = -Eigen::VectorXd::Map(out.pn.probs.data(), levels) * Eigen::RowVectorXd::Ones(levels);
  dp.diagonal().array() += 1.0;
  dp /= total;
  const Eigen::MatrixXd cov_p = dp * out.fit.covariance.topLeftCorner(levels, levels) * dp.transpose();
  out.pn.sigmas.resize(static_cast<std::size_t>(levels));
  for (int n = 0; n < levels; ++n) out.pn.sigmas[static_cast<std::size_t>(n)] = std::sqrt(std::max(cov_p(n, n), 0.0));
  out.fit.derived.push_back({"nbar", out.pn.mean(), 0.0});
  {
    Eigen::VectorXd grad(levels);
    for (int n = 0; n < levels; ++n) grad(n) = static_cast<double>(n);
    const double var = grad.dot(cov_p * grad);
    out.fit.derived.back().standard_error = std::sqrt(std::max(var, 0.0));
  }
  return out;
}

// ---- double exponential --------------------------------------------------------

Eigen::VectorXd double_exp_model(const Eigen::VectorXd& p, std::span<const double> taus) {
  if (p.size() != 4) throw ConfigError("double_exp_model: expected (a1, kappa1, a2, kappa2)");
  Eigen::VectorXd out(static_cast<Eigen::Index>(taus.size()));
  for (std::size_t i = 0; i < taus.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = p(0) * std::exp(-p(1) * taus[i]) + p(2) * std::exp(-p(3) * taus[i]);
  return out;
}

Eigen::MatrixXd double_exp_jacobian(const Eigen::VectorXd& p, std::span<const double> taus) {
  if (p.size() != 4) throw ConfigError("double_exp_jacobian: expected (a1, kappa1, a2, kappa2)");
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(taus.size()), 4);
  for (std::size_t ii = 0; ii < taus.size(); ++ii) {
    const auto i = static_cast<Eigen::Index>(ii);
    const double e1 = std::exp(-p(1) * taus[ii]);
    const double e2 = std::exp(-p(3) * taus[ii]);
    jac(i, 0) = e1;
    jac(i, 1) = -p(0) * taus[ii] * e1;
    jac(i, 2) = e2;
    jac(i, 3) = -p(2) * taus[ii] * e2;
  }
  return jac;
}

namespace {

void check_decay_input(std::span<const double> taus, std::span<const double> y, std::size_t min_len, const char* who) {
  if (taus.size() != y.size()) throw ConfigError(std::string(who) + ": taus and data differ in length");
  if (taus.size() < min_len) {
    std::ostringstream msg;
    msg << who << ": need at least " << min_len << " points";
    throw ConfigError(msg.str());
  }
  require_finite(taus, who);
  require_finite(y, who);
  for (std::size_t i = 1; i < taus.size(); ++i)
    if (!(taus[i] > taus[i - 1])) throw ConfigError(std::string(who) + ": taus must be strictly increasing");
  if (!(taus.back() > 0.0)) throw ConfigError(std::string(who) + ": taus must extend above zero");
}

// Columns e^{-r_k x}; derivatives with respect to each rate.
void exp_basis(const Eigen::VectorXd& x, const Eigen::VectorXd& rates, Eigen::MatrixXd& b,
               std::vector<Eigen::MatrixXd>* d) {
  b.resize(x.size(), rates.size());
  for (Eigen::Index k = 0; k < rates.size(); ++k) b.col(k) = (-rates(k) * x.array()).exp().matrix();
  if (!d) return;
  d->assign(static_cast<std::size_t>(rates.size()), Eigen::MatrixXd::Zero(x.size(), rates.size()));
  for (Eigen::Index k = 0; k < rates.size(); ++k) (*d)[static_cast<std::size_t>(k)].col(k) = -x.cwiseProduct(b.col(k));
}

// Best two-amplitude linear fit for rates (r1, r2) on scaled abscissae.
double two_exp_projection(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double r1, double r2,
                          Eigen::Vector2d* amps) {
  Eigen::MatrixXd b(x.size(), 2);
  b.col(0) = (-r1 * x.array()).exp().matrix();
  b.col(1) = (-r2 * x.array()).exp().matrix();
  const Eigen::Vector2d a = b.colPivHouseholderQr().solve(y);
  if (amps) *amps = a;
  return (b * a - y).norm();
}

}  // namespace

FitResult fit_double_exp(std::span<const double> taus, std::span<const double> nbar, std::optional<double> fixed_kappa1,
                         const LmOptions& opts) {
  check_decay_input(taus, nbar, 6, "fit_double_exp");
  for (double v : nbar)
    if (!(v > 0.0)) throw ConfigError("fit_double_exp: nbar values must be positive");
  if (fixed_kappa1 && !(*fixed_kappa1 > 0.0)) throw ConfigError("fit_double_exp: fixed kappa1 must be positive");

  const double unit = taus.back();
  const double yscale = as_vector(nbar).cwiseAbs().maxCoeff();
  const Eigen::VectorXd x = as_vector(taus) / unit;
  const Eigen::VectorXd y = as_vector(nbar) / yscale;

  // Log-spaced rate grid in units of 1/unit.
  std::vector<double> grid;
  for (int i = 0; i <= 60; ++i) grid.push_back(std::pow(10.0, -3.0 + 0.1 * i));

  Eigen::Vector4d p0 = Eigen::Vector4d::Zero();
  double best = HUGE_VAL;
  if (fixed_kappa1) {
    const double r1 = *fixed_kappa1 * unit;
    for (double r2 : grid) {
      Eigen::Vector2d a;
      const double res = two_exp_projection(x, y, r1, r2, &a);
      if (res < best) {
        best = res;
        p0 << a(0), r1, a(1), r2;
      }
    }
  } else {
    for (std::size_t i = 0; i < grid.size(); ++i)
      for (std::size_t j = 0; j < i; ++j) {
        Eigen::Vector2d a;
        const double res = two_exp_projection(x, y, grid[i], grid[j], &a);
        if (res < best) {
          best = res;
          p0 << a(0), grid[i], a(1), grid[j];
        }
      }
  }

  LmOutcome lm;
  Eigen::Vector4d p;
  if (fixed_kappa1) {
    const double r1 = p0(1);
    const auto fn = [&](const Eigen::VectorXd& th, Eigen::MatrixXd& b, std::vector<Eigen::MatrixXd>* d) {
      exp_basis(x, Eigen::Vector2d(r1, th(0)), b, nullptr);
      if (d) {
        d->assign(1, Eigen::MatrixXd::Zero(x.size(), 2));
        (*d)[0].col(1) = -x.cwiseProduct(b.col(1));
      }
    };
    const VarProOutcome vp = variable_projection(fn, y, Eigen::VectorXd::Constant(1, p0(3)), opts);
    lm = vp.nonlinear;
    p << vp.linear(0), r1, vp.linear(1), lm.params(0);
  } else {
    const auto fn = [&](const Eigen::VectorXd& th, Eigen::MatrixXd& b, std::vector<Eigen::MatrixXd>* d) {
      exp_basis(x, th, b, d);
    };
    const VarProOutcome vp = variable_projection(fn, y, Eigen::Vector2d(p0(1), p0(3)), opts);
    lm = vp.nonlinear;
    p << vp.linear(0), lm.params(0), vp.linear(1), lm.params(1);
    if (p(1) < p(3)) {
      std::swap(p(0), p(2));
      std::swap(p(1), p(3));
    }
  }

  // Reporting units.
  Eigen::Vector4d phys(p(0) * yscale, p(1) / unit, p(2) * yscale, p(3) / unit);
  Eigen::MatrixXd jac = double_exp_jacobian(phys, taus);
  if (fixed_kappa1) jac.col(1).setZero();
  const Eigen::VectorXd residual = double_exp_model(phys, taus) - as_vector(nbar);
  FitResult fit = assemble("double_exp", {"a1", "kappa1", "a2", "kappa2"}, lm, phys, jac, residual, nbar);
  if (fixed_kappa1) {
    fit.params(1) = *fixed_kappa1;
    fit.flags.emplace_back("kappa1_fixed");
    // The fixed rate carries no variance; drop the spurious rank deficiency.
    fit.covariance.row(1).setZero();
    fit.covariance.col(1).setZero();
    Eigen::MatrixXd free_j(jac.rows(), 3);
    free_j << jac.col(0), jac.col(2), jac.col(3);
    const CovarianceEstimate cov = estimate_covariance(free_j, residual);
    const int map[3] = {0, 2, 3};
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) fit.covariance(map[a], map[b]) = cov.covariance(a, b);
    fit.rank_deficient = cov.rank_deficient;
    std::erase(fit.flags, std::string("rank_deficient"));
    if (fit.rank_deficient) fit.flags.emplace_back("rank_deficient");
    if (fit.params(3) > fit.params(1)) fit.flags.emplace_back("kappa_order_violated");
  }
  const double k1 = fit.params(1), k2 = fit.params(3);
  if (std::abs(k1 - k2) < 0.1 * std::max(std::abs(k1), std::abs(k2))) fit.flags.emplace_back("degenerate_rates");
  throw_if_not_converged(fit);
  return fit;
}

FitResult fit_single_exp(std::span<const double> taus, std::span<const double> nbar, const LmOptions& opts) {
  check_decay_input(taus, nbar, 3, "fit_single_exp");
  const double unit = taus.back();
  const double yscale = as_vector(nbar).cwiseAbs().maxCoeff();
  if (!(yscale > 0.0)) throw ConfigError("fit_single_exp: data are identically zero");
  const Eigen::VectorXd x = as_vector(taus) / unit;
  const Eigen::VectorXd y = as_vector(nbar) / yscale;
  double best = HUGE_VAL;
  Eigen::Vector2d p0(1.0, 1.0);
  for (int i = 0; i <= 60; ++i) {
    const double r = std::pow(10.0, -3.0 + 0.1 * i);
    const Eigen::VectorXd e = (-r * x.array()).exp().matrix();
    const double a = e.dot(y) / e.squaredNorm();
    const double res = (a * e - y).norm();
    if (res < best) {
      best = res;
      p0 << a, r;
    }
  }
  const auto fn = [&](const Eigen::VectorXd& th, Eigen::MatrixXd& b, std::vector<Eigen::MatrixXd>* d) {
    exp_basis(x, th, b, d);
  };
  const VarProOutcome vp = variable_projection(fn, y, Eigen::VectorXd::Constant(1, p0(1)), opts);
  const LmOutcome& lm = vp.nonlinear;
  const Eigen::Vector2d phys(vp.linear(0) * yscale, lm.params(0) / unit);
  const Eigen::ArrayXd e = (-phys(1) * as_vector(taus).array()).exp();
  Eigen::MatrixXd jac(e.size(), 2);
  jac.col(0) = e.matrix();
  jac.col(1) = (-phys(0) * as_vector(taus).array() * e).matrix();
  const Eigen::VectorXd residual = (phys(0) * e).matrix() - as_vector(nbar);
  FitResult fit = assemble("single_exp", {"a", "kappa"}, lm, phys, jac, residual, nbar);
  throw_if_not_converged(fit);
  return fit;
}

// ---- interference fringe ---------------------------------------------------------

Eigen::VectorXd interference_model(const Eigen::VectorXd& p, std::span<const double> phis) {
  if (p.size() != 3) throw ConfigError("interference_model: expected (C, phi0, nbar_off)");
  Eigen::VectorXd out(static_cast<Eigen::Index>(phis.size()));
  for (std::size_t i = 0; i < phis.size(); ++i) out(static_cast<Eigen::Index>(i)) = p(0) * std::cos(phis[i] + p(1)) + p(2);
  return out;
}

Eigen::MatrixXd interference_jacobian(const Eigen::VectorXd& p, std::span<const double> phis) {
  if (p.size() != 3) throw ConfigError("interference_jacobian: expected (C, phi0, nbar_off)");
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(phis.size()), 3);
  for (std::size_t ii = 0; ii < phis.size(); ++ii) {
    const auto i = static_cast<Eigen::Index>(ii);
    jac(i, 0) = std::cos(phis[ii] + p(1));
    jac(i, 1) = -p(0) * std::sin(phis[ii] + p(1));
    jac(i, 2) = 1.0;
  }
  return jac;
}

FitResult fit_interference(std::span<const double> phis, std::span<const double> nbar, const LmOptions& opts) {
  if (phis.size() != nbar.size()) throw ConfigError("fit_interference: phis and nbar differ in length");
  if (phis.size() < 5) throw ConfigError("fit_interference: need at least 5 phase points");
  require_finite(phis, "fit_interference");
  require_finite(nbar, "fit_interference");
  const auto [lo, hi] = std::minmax_element(phis.begin(), phis.end());
  if (*hi - *lo < kPi - 1e-12) throw ConfigError("fit_interference: phase points must span at least pi");

  const Eigen::Index m = static_cast<Eigen::Index>(phis.size());
  Eigen::MatrixXd basis(m, 3);
  for (Eigen::Index i = 0; i < m; ++i) {
    basis(i, 0) = std::cos(phis[static_cast<std::size_t>(i)]);
    basis(i, 1) = -std::sin(phis[static_cast<std::size_t>(i)]);
    basis(i, 2) = 1.0;
  }
  const Eigen::Vector3d lin = basis.colPivHouseholderQr().solve(as_vector(nbar));
  const Eigen::Vector3d p0(std::hypot(lin(0), lin(1)), std::atan2(lin(1), lin(0)), lin(2));

  const ResidualFn fn = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    r = interference_model(q, phis) - as_vector(nbar);
    if (jac) *jac = interference_jacobian(q, phis);
  };
  LmOptions local = opts;
  if (local.data_scale == 0.0) local.data_scale = as_vector(nbar).norm();
  const LmOutcome lm = levenberg_marquardt(fn, p0, local);
  Eigen::Vector3d p = lm.params;
  if (p(0) < 0.0) {
    p(0) = -p(0);
    p(1) += kPi;
  }
  p(1) = wrap_phase(p(1));
  const Eigen::VectorXd residual = interference_model(p, phis) - as_vector(nbar);
  FitResult fit = assemble("interference", {"C", "phi0", "nbar_off"}, lm, p, interference_jacobian(p, phis),
                           residual, nbar);
  throw_if_not_converged(fit);
  return fit;
}

// ---- dephasing envelope ------------------------------------------------------------

Eigen::VectorXd envelope_model(const Eigen::VectorXd& p, std::span<const double> taus) {
  if (p.size() != 2) throw ConfigError("envelope_model: expected (C0, gamma)");
  Eigen::VectorXd out(static_cast<Eigen::Index>(taus.size()));
  for (std::size_t i = 0; i < taus.size(); ++i) out(static_cast<Eigen::Index>(i)) = p(0) * std::exp(-p(1) * taus[i]);
  return out;
}

Eigen::MatrixXd envelope_jacobian(const Eigen::VectorXd& p, std::span<const double> taus) {
  if (p.size() != 2) throw ConfigError("envelope_jacobian: expected (C0, gamma)");
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(taus.size()), 2);
  for (std::size_t ii = 0; ii < taus.size(); ++ii) {
    const auto i = static_cast<Eigen::Index>(ii);
    const double e = std::exp(-p(1) * taus[ii]);
    jac(i, 0) = e;
    jac(i, 1) = -p(0) * taus[ii] * e;
  }
  return jac;
}

FitResult fit_t2m(std::span<const double> taus, std::span<const double> amplitudes, const LmOptions& opts) {
  if (taus.size() != amplitudes.size()) throw ConfigError("fit_t2m: taus and amplitudes differ in length");
  if (taus.size() < 4) throw ConfigError("fit_t2m: need at least 4 points");
  require_finite(taus, "fit_t2m");
  require_finite(amplitudes, "fit_t2m");
  for (double a : amplitudes)
    if (!(a > 0.0)) throw ConfigError("fit_t2m: amplitudes must be positive");
  for (std::size_t i = 1; i < taus.size(); ++i)
    if (!(taus[i] > taus[i - 1])) throw ConfigError("fit_t2m: taus must be strictly increasing");

  const double origin = taus.front();
  const double span = taus.back() - origin;
  const double yscale = as_vector(amplitudes).maxCoeff();
  Eigen::VectorXd x(static_cast<Eigen::Index>(taus.size()));
  for (std::size_t i = 0; i < taus.size(); ++i) x(static_cast<Eigen::Index>(i)) = (taus[i] - origin) / span;
  const Eigen::VectorXd y = as_vector(amplitudes) / yscale;

  // Log-linear seed.
  Eigen::MatrixXd basis(x.size(), 2);
  basis.col(0).setOnes();
  basis.col(1) = -x;
  const Eigen::Vector2d lin = basis.colPivHouseholderQr().solve(y.array().log().matrix());
  const Eigen::Vector2d p0(std::exp(lin(0)), lin(1));

  const auto fn = [&](const Eigen::VectorXd& th, Eigen::MatrixXd& b, std::vector<Eigen::MatrixXd>* d) {
    exp_basis(x, th, b, d);
  };
  const VarProOutcome vp = variable_projection(fn, y, Eigen::VectorXd::Constant(1, p0(1)), opts);
  const LmOutcome& lm = vp.nonlinear;

  const double gamma = lm.params(0) / span;
  const Eigen::Vector2d phys(vp.linear(0) * yscale * std::exp(gamma * origin), gamma);
  const Eigen::VectorXd residual = envelope_model(phys, taus) - as_vector(amplitudes);
  FitResult fit = assemble("t2m", {"C0", "gamma_2m"}, lm, phys, envelope_jacobian(phys, taus), residual, amplitudes);
  throw_if_not_converged(fit);

  const double se = fit.standard_error("gamma_2m");
  if (gamma * span < -1e-2 && gamma + 2.0 * se < 0.0) {
    std::ostringstream msg;
    msg << "fit_t2m: amplitudes grow over the window (fitted rate " << gamma << " 1/s)";
    throw NumericalError(msg.str());
  }
  const double t2m = gamma > 0.0 ? 1.0 / gamma : HUGE_VAL;
  fit.derived.push_back({"T2m", t2m, gamma > 0.0 ? se / (gamma * gamma) : HUGE_VAL});
  return fit;
}

double durbin_watson(const Eigen::VectorXd& e) {
  const double denom = e.squaredNorm();
  if (denom == 0.0 || e.size() < 2) return 2.0;
  return (e.tail(e.size() - 1) - e.head(e.size() - 1)).squaredNorm() / denom;
}

// ---- closed forms -------------------------------------------------------------------

double dispersive_shift(double g, double delta, double alpha_q) {
  if (delta == 0.0) throw ConfigError("dispersive_shift: detuning must be nonzero");
  if (delta == alpha_q) throw ConfigError("dispersive_shift: detuning equals the anharmonicity");
  return -(g * g / delta) * alpha_q / (delta - alpha_q);
}

double anharmonicity_for_shift(double g, double delta, double chi) {
  if (delta == 0.0) throw ConfigError("anharmonicity_for_shift: detuning must be nonzero");
  // χΔ(Δ − α) = −g²α  ⇒  α (g² − χΔ) = −χΔ²
  const double denom = g * g - chi * delta;
  if (denom == 0.0) throw ConfigError("anharmonicity_for_shift: no finite anharmonicity gives this shift");
  return -chi * delta * delta / denom;
}

double mean_phonon(const PhononDistribution& pn) {
  pn.validate(1e-6);
  return pn.mean();
}

PhononDistribution poisson_reference(double nbar, int n_max) {
  if (!(nbar >= 0.0) || !std::isfinite(nbar)) throw ConfigError("poisson_reference: nbar must be finite and >= 0");
  if (n_max < 0) throw ConfigError("poisson_reference: n_max must be >= 0");
  PhononDistribution pn;
  pn.probs.resize(static_cast<std::size_t>(n_max) + 1);
  for (int n = 0; n <= n_max; ++n) {
    const double logp = nbar > 0.0 ? n * std::log(nbar) - nbar - std::lgamma(n + 1.0) : (n == 0 ? 0.0 : -HUGE_VAL);
    pn.probs[static_cast<std::size_t>(n)] = std::exp(logp);
  }
  pn.normalize();
  return pn;
}

}  // namespace tlsphonon
