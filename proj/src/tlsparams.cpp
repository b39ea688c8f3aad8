#include "tlsphonon/tlsparams.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "tlsphonon/errors.hpp"
#include "tlsphonon/numfmt.hpp"

namespace tlsphonon {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void require_positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError(std::string(what) + " must be finite and > 0");
}

double parse_double(std::string_view s, std::size_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    std::ostringstream msg;
    msg << "mode field: cannot parse '" << s << "' on line " << line;
    throw IoError(msg.str());
  }
  return v;
}

}  // namespace

void MaterialConstants::validate() const {
  require_positive(rho, "MaterialConstants: rho");
  require_positive(v, "MaterialConstants: v");
  require_positive(p0, "MaterialConstants: p0");
  require_positive(hbar, "MaterialConstants: hbar");
  require_positive(filling_factor, "MaterialConstants: filling_factor");
  if (!(delta0 >= 0.0) || !std::isfinite(delta0)) throw ConfigError("MaterialConstants: delta0 must be >= 0");
}

double ModeField::total_volume() const {
  double v = 0.0;
  for (double dv : volumes) v += dv;
  return v;
}

double ModeField::max_displacement() const {
  double m = 0.0;
  for (double u : displacement) m = std::max(m, std::abs(u));
  return m;
}

void ModeField::validate() const {
  if (volumes.empty()) throw ConfigError("ModeField: empty grid");
  if (displacement.size() != volumes.size() || strain.size() != volumes.size())
    throw ConfigError("ModeField: column lengths differ");
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    if (!(volumes[i] > 0.0) || !std::isfinite(volumes[i])) throw ConfigError("ModeField: cell volumes must be > 0");
    if (!std::isfinite(displacement[i])) throw ConfigError("ModeField: non-finite displacement");
    for (double e : strain[i])
      if (!std::isfinite(e)) throw ConfigError("ModeField: non-finite strain");
  }
}

ModeField read_mode_field_csv(std::istream& in, double omega_m) {
  ModeField field;
  field.omega_m = omega_m;
  std::string line;
  if (!std::getline(in, line)) throw IoError("mode field: missing header line");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::array<double, 8> row{};
    std::size_t col = 0, start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      if (col == row.size()) throw IoError("mode field: too many columns on line " + std::to_string(lineno));
      row[col++] = parse_double(std::string_view(line).substr(start, comma - start), lineno);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (col != row.size()) throw IoError("mode field: expected 8 columns on line " + std::to_string(lineno));
    field.volumes.push_back(row[0]);
    field.displacement.push_back(row[1]);
    field.strain.push_back({row[2], row[3], row[4], row[5], row[6], row[7]});
  }
  field.validate();
  return field;
}

void write_mode_field_csv(const ModeField& field, std::ostream& out) {
  out << "dV_m3,u_abs_m,exx,exy,exz,eyy,eyz,ezz\n";
  for (std::size_t i = 0; i < field.size(); ++i) {
    out << format_double(field.volumes[i]) << ',' << format_double(field.displacement[i]);
    for (double e : field.strain[i]) out << ',' << format_double(e);
    out << '\n';
  }
}

ModeField uniform_mode_field(double volume, int n, double u0, const std::array<double, 6>& strain, double omega_m) {
  require_positive(volume, "uniform_mode_field: volume");
  if (n < 1) throw ConfigError("uniform_mode_field: need at least one cell");
  ModeField f;
  f.omega_m = omega_m;
  f.volumes.assign(static_cast<std::size_t>(n), volume / n);
  f.displacement.assign(static_cast<std::size_t>(n), u0);
  f.strain.assign(static_cast<std::size_t>(n), strain);
  return f;
}

ModeField gaussian_slab_field(double sigma, double half_width, int n, double area, double omega_m) {
  require_positive(sigma, "gaussian_slab_field: sigma");
  require_positive(half_width, "gaussian_slab_field: half_width");
  require_positive(area, "gaussian_slab_field: area");
  if (n < 1) throw ConfigError("gaussian_slab_field: need at least one cell");
  ModeField f;
  f.omega_m = omega_m;
  const double dx = 2.0 * half_width / n;
  for (int i = 0; i < n; ++i) {
    const double x = -half_width + (i + 0.5) * dx;
    const double u = std::exp(-x * x / (2.0 * sigma * sigma));
    f.volumes.push_back(area * dx);
    f.displacement.push_back(u);
    f.strain.push_back({-x / (sigma * sigma) * u, 0.0, 0.0, 0.0, 0.0, 0.0});
  }
  return f;
}

double effective_mass(const ModeField& field, double rho) {
  field.validate();
  require_positive(rho, "effective_mass: rho");
  const double umax = field.max_displacement();
  if (!(umax > 0.0)) throw ConfigError("effective_mass: displacement field vanishes");
  double acc = 0.0;
  for (std::size_t i = 0; i < field.size(); ++i) acc += field.volumes[i] * field.displacement[i] * field.displacement[i];
  return rho * acc / (umax * umax);
}

double zero_point_displacement(double m_eff, double omega_m, double hbar) {
  require_positive(m_eff, "zero_point_displacement: m_eff");
  require_positive(omega_m, "zero_point_displacement: omega_m");
  require_positive(hbar, "zero_point_displacement: hbar");
  return std::sqrt(hbar / (2.0 * m_eff * omega_m));
}

double zero_point_strain(const ModeField& field, double x_zpf) {
  field.validate();
  const double umax = field.max_displacement();
  if (!(umax > 0.0)) throw ConfigError("zero_point_strain: displacement field vanishes");
  double acc = 0.0;
  for (std::size_t i = 0; i < field.size(); ++i) {
    double s = 0.0;
    for (double e : field.strain[i]) s += e * e;
    acc += field.volumes[i] * s;
  }
  return x_zpf / umax * std::sqrt(acc / (6.0 * field.total_volume()));
}

double elastic_dipole(const MaterialConstants& mat) {
  mat.validate();
  return std::sqrt(mat.delta0 / mat.filling_factor * mat.rho * mat.v * mat.v / (std::numbers::pi * mat.p0));
}

double tls_coupling_rate(double gamma_dipole, double xi_zpf, double hbar) {
  require_positive(hbar, "tls_coupling_rate: hbar");
  if (!(gamma_dipole >= 0.0) || !(xi_zpf >= 0.0)) throw ConfigError("tls_coupling_rate: inputs must be >= 0");
  return gamma_dipole * xi_zpf / hbar;
}

double estimate_tls_count(double p0, double volume, double delta_omega, double hbar, double dos_factor) {
  require_positive(p0, "estimate_tls_count: p0");
  require_positive(volume, "estimate_tls_count: volume");
  require_positive(hbar, "estimate_tls_count: hbar");
  if (!(delta_omega >= 0.0)) throw ConfigError("estimate_tls_count: delta_omega must be >= 0");
  return dos_factor * p0 * volume * hbar * delta_omega;
}

TlsSamples sample_tls_distributions(int n_samples, std::uint64_t seed, double xi_zpf, const MaterialConstants& base,
                                    const TlsSamplingRanges& ranges, int bins) {
  if (n_samples < 1) throw ConfigError("sample_tls_distributions: n_samples must be >= 1");
  if (!(ranges.log10_p0_max >= ranges.log10_p0_min) || !(ranges.log10_delta0_max >= ranges.log10_delta0_min))
    throw ConfigError("sample_tls_distributions: empty sampling range");
  base.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  TlsSamples out;
  const auto n = static_cast<std::size_t>(n_samples);
  out.log10_p0.reserve(n);
  out.log10_delta0.reserve(n);
  out.gamma_dipole.reserve(n);
  out.g_tls.reserve(n);
  std::vector<double> g_hz;
  g_hz.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double l1 = ranges.log10_p0_min + (ranges.log10_p0_max - ranges.log10_p0_min) * u01(rng);
    const double l2 = ranges.log10_delta0_min + (ranges.log10_delta0_max - ranges.log10_delta0_min) * u01(rng);
    MaterialConstants m = base;
    m.p0 = std::pow(10.0, l1);
    m.delta0 = std::pow(10.0, l2);
    const double gamma = elastic_dipole(m);
    const double g = tls_coupling_rate(gamma, xi_zpf, m.hbar);
    out.log10_p0.push_back(l1);
    out.log10_delta0.push_back(l2);
    out.gamma_dipole.push_back(gamma);
    out.g_tls.push_back(g);
    g_hz.push_back(g / kTwoPi);
  }
  out.gamma_histogram = make_histogram(out.gamma_dipole, bins);
  out.g_tls_histogram = make_histogram(g_hz, bins);
  return out;
}

void BvdCircuit::validate() const {
  require_positive(c0, "BvdCircuit: c0");
  require_positive(cm, "BvdCircuit: cm");
  require_positive(lm, "BvdCircuit: lm");
  if (!(rm >= 0.0) || !std::isfinite(rm)) throw ConfigError("BvdCircuit: rm must be >= 0");
}

Admittance bvd_admittance(double omega, const BvdCircuit& circuit) {
  circuit.validate();
  require_positive(omega, "bvd_admittance: omega");
  using C = std::complex<double>;
  const C shunt(0.0, omega * circuit.c0);
  // Series impedance R + i(ωL - 1/(ωC)).
  const double reactance = omega * circuit.lm - 1.0 / (omega * circuit.cm);
  if (circuit.rm == 0.0 && reactance == 0.0)
    return {C(0.0, std::numeric_limits<double>::infinity()), true};
  const C z(circuit.rm, reactance);
  return {shunt + 1.0 / z, false};
}

double series_resonance_hz(const BvdCircuit& circuit) {
  circuit.validate();
  return 1.0 / (kTwoPi * std::sqrt(circuit.lm * circuit.cm));
}

double parallel_resonance_hz(const BvdCircuit& circuit) {
  return series_resonance_hz(circuit) * std::sqrt(1.0 + circuit.cm / circuit.c0);
}

void write_bvd_sweep_csv(std::span<const double> freqs_hz, const BvdCircuit& circuit, std::ostream& out) {
  out << "freq_hz,re_Y,im_Y\n";
  for (double f : freqs_hz) {
    const Admittance a = bvd_admittance(kTwoPi * f, circuit);
    out << format_double(f) << ',' << format_double(a.y.real()) << ',' << format_double(a.y.imag()) << '\n';
  }
}

}  // namespace tlsphonon
