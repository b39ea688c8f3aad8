#include "pipelines.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "tlsphonon/errors.hpp"
#include "tlsphonon/json_io.hpp"
#include "tlsphonon/numfmt.hpp"

namespace tlsphonon::cli {

using nlohmann::json;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string csv_preamble(const std::string& hash) { return "# config_hash=" + hash + "\n"; }

Artifact json_artifact(std::string name, json body, const std::string& hash) {
  body["config_hash"] = hash;
  return {std::move(name), body.dump(2) + "\n"};
}

std::string indexed(const std::string& stem, std::size_t i, std::size_t n, const std::string& ext) {
  return n == 1 ? stem + ext : stem + "_" + std::to_string(i) + ext;
}

std::vector<Artifact> ringdown(const RunConfig& rc, const std::string& hash) {
  std::vector<Artifact> out;
  json runs = json::array();
  const auto& alphas = rc.sweep.alphas;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const RingdownDataset d = run_ringdown(rc.system, Complex(alphas[i], 0.0), rc.sweep.taus, rc.evolve);
    std::ostringstream csv;
    csv << csv_preamble(hash);
    write_ringdown_csv(d, csv);
    const std::string csv_name = indexed("ringdown", i, alphas.size(), ".csv");
    out.push_back({csv_name, csv.str()});

    const FitResult fit = fit_double_exp(d.taus, d.nbar, rc.kappa1_fixed, rc.lm);
    runs.push_back({{"alpha", alphas[i]},
                    {"nbar_initial", d.nbar.front()},
                    {"data", csv_name},
                    {"kappa1_fixed", rc.kappa1_fixed.has_value()},
                    {"kappa1_hz", fit.value("kappa1") / kTwoPi},
                    {"kappa2_hz", fit.value("kappa2") / kTwoPi},
                    {"max_trace_drift", d.trajectory.max_trace_drift},
                    {"fit", fit}});
  }
  out.push_back(json_artifact("double_exp_fit.json", {{"experiment", "ringdown"}, {"runs", runs}}, hash));
  return out;
}

std::vector<Artifact> interferometry(const RunConfig& rc, const std::string& hash) {
  std::vector<Artifact> out;
  json runs = json::array();
  const std::vector<double> phis = default_phase_grid(rc.sweep.phi_count);
  const auto& alphas = rc.sweep.alphas;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const InterferometryDataset d =
        run_interferometry(rc.system, Complex(alphas[i], 0.0), rc.sweep.taus, phis, rc.evolve);
    std::ostringstream csv;
    csv << csv_preamble(hash);
    write_interferometry_csv(d, csv);
    const std::string csv_name = indexed("interferometry", i, alphas.size(), ".csv");
    out.push_back({csv_name, csv.str()});

    const DephasingAnalysis an = analyze_dephasing(d, rc.lm);
    runs.push_back({{"alpha", alphas[i]},
                    {"data", csv_name},
                    {"pulse_n_max", d.pulse_n_max},
                    {"gamma_2m_per_s", an.gamma_2m},
                    {"t2m_s", an.t2m},
                    {"tau_s", d.taus},
                    {"fringe_amplitudes", an.amplitudes},
                    {"fringe_amplitude_errors", an.amplitude_errors},
                    {"fringe_offsets", an.offsets},
                    {"max_fringe_residual", an.max_fringe_residual},
                    {"envelope_fit", an.envelope}});
  }
  out.push_back(json_artifact("t2m_fit.json", {{"experiment", "interferometry"}, {"runs", runs}}, hash));
  return out;
}

std::vector<Artifact> ramsey(const RunConfig& rc, const std::string& hash, int threads) {
  const auto cols = read_csv_columns(rc.ramsey.input, {"time_s", "signal"}, 1);
  RamseySignal signal{cols[0], cols[1]};
  const RamseyFit f = fit_ramsey(signal, rc.ramsey.n_max, rc.ramsey.hints, rc.lm);

  json body = {{"experiment", "ramsey-fit"},
               {"pn", f.pn},
               {"nbar", f.fit.value("nbar")},
               {"nbar_standard_error", f.fit.standard_error("nbar")},
               {"chi_hz", f.fit.value("chi") / kTwoPi},
               {"omega0_hz", f.fit.value("omega0") / kTwoPi},
               {"kappa_per_s", f.fit.value("kappa")},
               {"fit", f.fit}};
  if (rc.mc.resample.n_iterations > 0) {
    ResampleConfig r = rc.mc.resample;
    r.threads = threads;
    body["nbar_monte_carlo"] = resample_pn(f.pn, r);
  }
  std::ostringstream csv;
  csv << csv_preamble(hash) << "n,p,sigma\n";
  for (std::size_t n = 0; n < f.pn.size(); ++n)
    csv << n << ',' << format_double(f.pn.probs[n]) << ',' << format_double(f.pn.sigmas[n]) << '\n';
  return {{"pn.csv", csv.str()}, json_artifact("ramsey_fit.json", std::move(body), hash)};
}

ModeField build_field(const TlsSettings& t) {
  switch (t.source) {
    case ModeFieldSource::kCsv: {
      std::ifstream in(t.field_csv);
      if (!in) throw IoError("cannot read mode field " + t.field_csv.string());
      return read_mode_field_csv(in, t.omega_m);
    }
    case ModeFieldSource::kGaussianSlab:
      return gaussian_slab_field(t.sigma, t.half_width, t.cells, t.area, t.omega_m);
    case ModeFieldSource::kUniform:
      return uniform_mode_field(t.volume, t.cells, t.u0, t.strain, t.omega_m);
  }
  throw ConfigError("unknown mode field source");
}

std::vector<Artifact> tls_params(const RunConfig& rc, const std::string& hash) {
  const TlsSettings& t = rc.tls;
  const ModeField field = build_field(t);
  const double m_eff = effective_mass(field, t.material.rho);
  const double x_zpf = zero_point_displacement(m_eff, field.omega_m, t.material.hbar);
  const double xi = zero_point_strain(field, x_zpf);
  const double gamma = elastic_dipole(t.material);
  const double g = tls_coupling_rate(gamma, xi, t.material.hbar);
  const double volume = t.tls_volume.value_or(field.total_volume());
  const double n_tls = estimate_tls_count(t.material.p0, volume, t.delta_omega, t.material.hbar);
  const TlsSamples s = sample_tls_distributions(t.samples, rc.seed, xi, t.material, t.ranges, t.bins);

  std::vector<double> g_hz(s.g_tls.size());
  std::transform(s.g_tls.begin(), s.g_tls.end(), g_hz.begin(), [](double x) { return x / kTwoPi; });
  std::vector<double> sorted = g_hz;
  std::sort(sorted.begin(), sorted.end());

  json body = {{"experiment", "tls-params"},
               {"effective_mass_kg", m_eff},
               {"x_zpf_m", x_zpf},
               {"xi_zpf", xi},
               {"gamma_dipole_J", gamma},
               {"gamma_dipole_eV", gamma / 1.602176634e-19},
               {"g_tls_hz", g / kTwoPi},
               {"tls_volume_m3", volume},
               {"delta_omega_hz", t.delta_omega / kTwoPi},
               {"n_tls_estimate", n_tls},
               {"sampled",
                {{"samples", t.samples},
                 {"g_tls_hz_min", sorted.front()},
                 {"g_tls_hz_median", sorted[sorted.size() / 2]},
                 {"g_tls_hz_max", sorted.back()},
                 {"gamma_histogram_J", s.gamma_histogram},
                 {"g_tls_histogram_hz", s.g_tls_histogram}}}};
  std::ostringstream csv;
  csv << csv_preamble(hash) << "log10_p0,log10_delta0,gamma_J,g_tls_hz\n";
  for (std::size_t i = 0; i < g_hz.size(); ++i)
    csv << format_double(s.log10_p0[i]) << ',' << format_double(s.log10_delta0[i]) << ','
        << format_double(s.gamma_dipole[i]) << ',' << format_double(g_hz[i]) << '\n';
  return {json_artifact("tls_params.json", std::move(body), hash), {"tls_samples.csv", csv.str()}};
}

std::vector<Artifact> mc_report(const RunConfig& rc, const std::string& hash, int threads) {
  ResampleConfig r = rc.mc.resample;
  r.threads = threads;
  json reports = json::array();
  std::string source = "pn";
  if (rc.mc.source == McSource::kPhononDistribution) {
    reports.push_back(resample_pn(rc.mc.pn, r));
  } else {
    const auto cols = read_csv_columns(rc.mc.input, {"tau_s", "value", "sigma"});
    const std::vector<double>& taus = cols[0];
    FitFn fit;
    if (rc.mc.source == McSource::kDoubleExp) {
      source = "double-exp";
      fit = [&](std::span<const double> v) { return fit_double_exp(taus, v, rc.kappa1_fixed, rc.lm); };
    } else {
      source = "t2m";
      fit = [&](std::span<const double> v) { return fit_t2m(taus, v, rc.lm); };
    }
    for (const UncertaintyReport& u : resample_fit(cols[1], cols[2], fit, r)) reports.push_back(u);
  }
  return {json_artifact("mc_report.json", {{"experiment", "mc-report"}, {"source", source}, {"reports", reports}},
                        hash)};
}

std::vector<Artifact> bvd_sweep(const RunConfig& rc, const std::string& hash) {
  const BvdSettings& b = rc.bvd;
  std::vector<double> freqs(static_cast<std::size_t>(b.count));
  for (int i = 0; i < b.count; ++i)
    freqs[static_cast<std::size_t>(i)] =
        b.count == 1 ? b.f_start_hz : b.f_start_hz + (b.f_stop_hz - b.f_start_hz) * i / (b.count - 1);
  std::ostringstream csv;
  csv << csv_preamble(hash);
  write_bvd_sweep_csv(freqs, b.circuit, csv);
  json body = {{"experiment", "bvd-sweep"},
               {"series_resonance_hz", series_resonance_hz(b.circuit)},
               {"parallel_resonance_hz", parallel_resonance_hz(b.circuit)}};
  return {{"bvd_sweep.csv", csv.str()}, json_artifact("bvd.json", std::move(body), hash)};
}

double parse_cell(const std::string& cell, const std::filesystem::path& path, int line) {
  const char* first = cell.data();
  const char* last = first + cell.size();
  while (first < last && (*first == ' ' || *first == '\t')) ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\t' || last[-1] == '\r')) --last;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last)
    throw IoError(path.string() + ":" + std::to_string(line) + ": not a number: '" + cell + "'");
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::vector<double>> read_csv_columns(const std::filesystem::path& path,
                                                  const std::vector<std::string>& columns,
                                                  std::size_t optional_columns) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  int line_no = 0;
  std::size_t width = 0;
  std::vector<std::vector<double>> cols;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    const std::vector<std::string> cells = split(line);
    if (width == 0) {
      if (cells.size() < columns.size() || cells.size() > columns.size() + optional_columns)
        throw ConfigError(path.string() + ": unexpected header '" + trim(line) + "'");
      for (std::size_t k = 0; k < columns.size(); ++k)
        if (trim(cells[k]) != columns[k])
          throw ConfigError(path.string() + ": column " + std::to_string(k + 1) + " must be '" + columns[k] + "'");
      width = cells.size();
      cols.resize(width);
      continue;
    }
    if (cells.size() != width)
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) + " fields");
    for (std::size_t k = 0; k < width; ++k) cols[k].push_back(parse_cell(cells[k], path, line_no));
  }
  if (width == 0) throw IoError(path.string() + ": no header line");
  if (cols[0].empty()) throw IoError(path.string() + ": no data rows");
  return cols;
}

std::string embedded_hash(const std::string& name, std::istream& in) {
  if (name.size() > 5 && name.ends_with(".json")) {
    try {
      const json j = json::parse(in);
      if (j.is_object() && j.contains("config_hash") && j["config_hash"].is_string())
        return j["config_hash"].get<std::string>();
    } catch (const json::exception&) {
    }
    return {};
  }
  std::string first;
  std::getline(in, first);
  const std::string key = "# config_hash=";
  return first.rfind(key, 0) == 0 ? trim(first.substr(key.size())) : std::string();
}

std::vector<Artifact> execute(const RunConfig& rc, const std::string& hash, int threads) {
  switch (rc.experiment) {
    case Experiment::kRingdown: return ringdown(rc, hash);
    case Experiment::kInterferometry: return interferometry(rc, hash);
    case Experiment::kRamseyFit: return ramsey(rc, hash, threads);
    case Experiment::kTlsParams: return tls_params(rc, hash);
    case Experiment::kMcReport: return mc_report(rc, hash, threads);
    case Experiment::kBvdSweep: return bvd_sweep(rc, hash);
  }
  throw ConfigError("unknown experiment");
}

}  // namespace tlsphonon::cli
