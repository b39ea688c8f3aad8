#include "run_config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "tlsphonon/errors.hpp"
#include "tlsphonon/hilbert.hpp"

namespace tlsphonon::cli {

using nlohmann::json;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Typed access to one JSON object. Every read records the key and echoes the
// resolved value into `out`; finish() rejects keys that were never read.
class Section {
 public:
  Section(const json& j, std::string path, json& out) : j_(j), path_(std::move(path)), out_(out) {
    if (!j_.is_object()) fail("expected an object");
    out_ = json::object();
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::optional<double> opt_number(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_number()) fail(key, "expected a number");
    const double x = v->get<double>();
    if (!std::isfinite(x)) fail(key, "expected a finite number");
    out_[key] = x;
    return x;
  }
  double number(const std::string& key, double fallback) {
    if (auto x = opt_number(key)) return *x;
    out_[key] = fallback;
    return fallback;
  }
  double required_number(const std::string& key) {
    if (auto x = opt_number(key)) return *x;
    fail(key, "required");
  }

  std::optional<long long> opt_integer(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_number_integer()) fail(key, "expected an integer");
    out_[key] = *v;
    return v->get<long long>();
  }
  int integer(const std::string& key, int fallback, int lo, int hi) {
    const auto x = opt_integer(key);
    if (!x) {
      out_[key] = fallback;
      return fallback;
    }
    if (*x < lo || *x > hi) fail(key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return static_cast<int>(*x);
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    const json* v = take(key);
    if (!v) {
      out_[key] = fallback;
      return fallback;
    }
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
      fail(key, "expected a non-negative integer");
    out_[key] = *v;
    return v->get<std::uint64_t>();
  }

  std::optional<std::string> opt_string(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) fail(key, "expected a string");
    out_[key] = *v;
    return v->get<std::string>();
  }
  std::string choice(const std::string& key, const std::string& fallback, const std::vector<std::string>& allowed) {
    std::string s = opt_string(key).value_or(fallback);
    out_[key] = s;
    if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string list;
      for (const std::string& a : allowed) list += (list.empty() ? "" : ", ") + a;
      fail(key, "must be one of {" + list + "}, got \"" + s + "\"");
    }
    return s;
  }

  std::optional<std::vector<double>> opt_numbers(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_array()) fail(key, "expected an array of numbers");
    std::vector<double> out;
    for (const json& e : *v) {
      if (!e.is_number() || !std::isfinite(e.get<double>())) fail(key, "expected an array of finite numbers");
      out.push_back(e.get<double>());
    }
    out_[key] = out;
    return out;
  }

  // Child object; its echo is written by the child Section.
  const json* child(const std::string& key) { return take(key); }
  json& child_out(const std::string& key) { return out_[key]; }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) fail(key, "unknown key");
  }

  [[noreturn]] void fail(const std::string& what) const { throw ConfigError(path_ + ": " + what); }
  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(path_ + "." + key + ": " + what);
  }

 private:
  const json* take(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string path_;
  json& out_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve_path(const std::string& p, const std::filesystem::path& base) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void parse_system(Section& top, RunConfig& rc) {
  const json* j = top.child("system");
  static const json empty = json::object();
  Section s(j ? *j : empty, "system", top.child_out("system"));
  const std::string preset = s.choice("preset", "none", {"none", "weak-coupling", "strong-coupling"});

  // Preset values in ordinary frequency units.
  double g = 0.0, delta = 0.0, g1 = 0.0, g2 = 0.0, nth = 0.0;
  int n_tls = 1;
  if (preset == "weak-coupling") {
    n_tls = 5, g = 33e3, delta = 100e3, g2 = 660e3, g1 = 4.0e3, nth = 0.05;
  } else if (preset == "strong-coupling") {
    n_tls = 5, g = 0.33e6, delta = 0.99e6, g2 = 6.6e6, g1 = 4.0e3, nth = 0.05;
  }
  SystemConfig& c = rc.system;
  c.n_tls = s.integer("n_tls", n_tls, 0, 16);
  c.g_tls = kTwoPi * s.number("g_tls_hz", g);
  c.delta_tls = kTwoPi * s.number("delta_tls_hz", delta);
  c.gamma1 = kTwoPi * s.number("gamma1_hz", g1);
  c.gamma2 = kTwoPi * s.number("gamma2_hz", g2);
  c.n_th = s.number("n_th", nth);
  c.tls_thermal = s.choice("tls_thermal", "boltzmann", {"boltzmann", "detailed-balance"}) == "boltzmann"
                      ? TlsThermalConvention::kBoltzmann
                      : TlsThermalConvention::kDetailedBalance;
  auto per_tls = [&](const char* key, std::vector<double>& dst) {
    if (auto v = s.opt_numbers(key)) {
      dst = *v;
      for (double& x : dst) x *= kTwoPi;
    }
  };
  per_tls("g_per_tls_hz", c.g_per_tls);
  per_tls("gamma1_per_tls_hz", c.gamma1_per_tls);
  per_tls("gamma2_per_tls_hz", c.gamma2_per_tls);

  const double alpha_max =
      rc.sweep.alphas.empty() ? 0.0 : *std::max_element(rc.sweep.alphas.begin(), rc.sweep.alphas.end());
  if (auto n = s.opt_integer("n_max")) {
    if (*n < 1 || *n > 4096) s.fail("n_max", "must lie in [1, 4096]");
    c.n_max = static_cast<int>(*n);
  } else {
    c.n_max = required_n_max(alpha_max);
    s.child_out("n_max") = c.n_max;
  }
  s.finish();
  c.validate();
  const HilbertLayout layout = c.layout();  // dimension guard
  check_truncation(layout, alpha_max);
}

void parse_sweep(Section& top, RunConfig& rc, bool fringes) {
  const json* j = top.child("sweep");
  if (!j) top.fail("sweep", "required for " + std::string(experiment_name(rc.experiment)));
  Section s(*j, "sweep", top.child_out("sweep"));
  auto alpha = s.opt_numbers("alpha");
  auto nbar0 = s.opt_numbers("nbar0");
  if (alpha.has_value() == nbar0.has_value()) s.fail("give exactly one of alpha and nbar0");
  if (alpha) {
    rc.sweep.alphas = *alpha;
  } else {
    for (double n : *nbar0) {
      if (!(n >= 0.0)) s.fail("nbar0", "values must be >= 0");
      rc.sweep.alphas.push_back(std::sqrt(n));
    }
  }
  if (rc.sweep.alphas.empty()) s.fail("need at least one amplitude");
  for (double a : rc.sweep.alphas)
    if (!(a >= 0.0)) s.fail("alpha", "amplitudes must be >= 0 (phase 0 is implied)");

  const json* tau = s.child("tau_s");
  if (!tau) s.fail("tau_s", "required");
  if (tau->is_array()) {
    for (const json& e : *tau) {
      if (!e.is_number() || !std::isfinite(e.get<double>())) s.fail("tau_s", "expected an array of finite numbers");
      rc.sweep.taus.push_back(e.get<double>());
    }
    s.child_out("tau_s") = rc.sweep.taus;
  } else {
    Section t(*tau, "sweep.tau_s", s.child_out("tau_s"));
    const double a = t.required_number("start");
    const double b = t.required_number("stop");
    const int count = t.integer("count", 51, 1, 100000);
    t.finish();
    rc.sweep.taus.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
      rc.sweep.taus[static_cast<std::size_t>(i)] = count == 1 ? a : a + (b - a) * i / (count - 1);
  }
  if (rc.sweep.taus.empty()) s.fail("tau_s", "need at least one delay");
  for (double t : rc.sweep.taus)
    if (!(t >= 0.0)) s.fail("tau_s", "delays must be >= 0");
  if (fringes) rc.sweep.phi_count = s.integer("phi_count", 24, 3, 4096);
  s.finish();
}

void parse_fit(Section& top, RunConfig& rc) {
  const json* j = top.child("fit");
  if (!j) return;
  Section s(*j, "fit", top.child_out("fit"));
  if (auto k = s.opt_number("kappa1_fixed_hz")) {
    if (!(*k > 0.0)) s.fail("kappa1_fixed_hz", "must be > 0");
    rc.kappa1_fixed = kTwoPi * *k;
  }
  s.finish();
}

void parse_tolerances(Section& top, RunConfig& rc) {
  const json* j = top.child("tolerances");
  static const json empty = json::object();
  Section s(j ? *j : empty, "tolerances", top.child_out("tolerances"));
  rc.evolve.rtol = s.number("rtol", rc.evolve.rtol);
  rc.evolve.atol = s.number("atol", rc.evolve.atol);
  rc.evolve.trace_tolerance = s.number("trace_tolerance", rc.evolve.trace_tolerance);
  rc.lm.max_iterations = s.integer("lm_max_iterations", rc.lm.max_iterations, 1, 100000);
  rc.lm.gradient_tolerance = s.number("lm_gradient_tolerance", rc.lm.gradient_tolerance);
  s.finish();
  if (!(rc.evolve.rtol > 0.0) || !(rc.evolve.atol > 0.0) || !(rc.evolve.trace_tolerance > 0.0) ||
      !(rc.lm.gradient_tolerance > 0.0))
    s.fail("tolerances must be > 0");
}

std::filesystem::path parse_io(Section& top, RunConfig& rc, bool needs_input, const std::filesystem::path& base) {
  const json* j = top.child("io");
  static const json empty = json::object();
  Section s(j ? *j : empty, "io", top.child_out("io"));
  std::filesystem::path input;
  if (auto in = s.opt_string("input")) {
    if (!needs_input) s.fail("input", "not used by this experiment");
    input = resolve_path(*in, base);
    if (!std::filesystem::is_regular_file(input)) throw IoError("io.input: cannot read " + input.string());
  } else if (needs_input) {
    s.fail("input", "required for " + std::string(experiment_name(rc.experiment)));
  }
  if (auto out = s.opt_string("output_dir")) rc.output_dir = resolve_path(*out, base);
  s.finish();
  return input;
}

void parse_resample(Section& s, ResampleConfig& r, std::uint64_t seed) {
  r.n_iterations = s.integer("iterations", 2000, 2, 10'000'000);
  r.bins = s.integer("bins", 40, 1, 100000);
  r.seed = seed;
}

void parse_ramsey(Section& top, RunConfig& rc) {
  const json* j = top.child("ramsey");
  if (!j) top.fail("ramsey", "required for ramsey-fit");
  Section s(*j, "ramsey", top.child_out("ramsey"));
  if (!s.has("n_max")) s.fail("n_max", "required");
  rc.ramsey.n_max = s.integer("n_max", 0, 0, 64);
  if (auto w = s.opt_number("omega0_hz")) rc.ramsey.hints.omega0 = kTwoPi * *w;
  if (auto x = s.opt_number("chi_hz")) rc.ramsey.hints.chi = kTwoPi * *x;
  if (auto k = s.opt_number("kappa_per_s")) rc.ramsey.hints.kappa = *k;
  const double sign = s.number("chi_sign", -1.0);
  if (sign != 1.0 && sign != -1.0) s.fail("chi_sign", "must be 1 or -1");
  rc.ramsey.hints.chi_sign = sign;
  rc.ramsey.hints.phase_mode =
      s.choice("phase_mode", "per-level", {"per-level", "shared"}) == "shared" ? PhaseMode::kShared
                                                                                : PhaseMode::kPerLevel;
  s.finish();

  // Optional Monte Carlo propagation of the P(n) uncertainties into n̄.
  if (const json* m = top.child("mc")) {
    Section ms(*m, "mc", top.child_out("mc"));
    parse_resample(ms, rc.mc.resample, rc.seed);
    ms.finish();
    rc.mc.source = McSource::kPhononDistribution;
  } else {
    rc.mc.resample.n_iterations = 0;
  }
}

std::array<double, 2> range_pair(Section& s, const std::string& key, std::array<double, 2> fallback) {
  auto v = s.opt_numbers(key);
  if (!v) {
    s.child_out(key) = fallback;
    return fallback;
  }
  if (v->size() != 2 || !((*v)[1] >= (*v)[0])) s.fail(key, "expected [min, max] with min <= max");
  return {(*v)[0], (*v)[1]};
}

void parse_tls(Section& top, RunConfig& rc, const std::filesystem::path& base) {
  const json* j = top.child("tls");
  if (!j) top.fail("tls", "required for tls-params");
  Section s(*j, "tls", top.child_out("tls"));
  TlsSettings& t = rc.tls;

  const json* mf = s.child("mode_field");
  if (!mf) s.fail("mode_field", "required");
  Section f(*mf, "tls.mode_field", s.child_out("mode_field"));
  const int kinds = int(f.has("csv")) + int(f.has("gaussian_slab")) + int(f.has("uniform"));
  if (kinds != 1) f.fail("give exactly one of csv, gaussian_slab and uniform");
  if (auto p = f.opt_string("csv")) {
    t.source = ModeFieldSource::kCsv;
    t.field_csv = resolve_path(*p, base);
  } else if (const json* g = f.child("gaussian_slab")) {
    t.source = ModeFieldSource::kGaussianSlab;
    Section gs(*g, "tls.mode_field.gaussian_slab", f.child_out("gaussian_slab"));
    t.sigma = gs.required_number("sigma_m");
    t.half_width = gs.required_number("half_width_m");
    t.area = gs.required_number("area_m2");
    t.cells = gs.integer("cells", 200, 1, 10'000'000);
    gs.finish();
    if (!(t.sigma > 0.0 && t.half_width > 0.0 && t.area > 0.0)) gs.fail("sigma_m, half_width_m and area_m2 must be > 0");
  } else {
    t.source = ModeFieldSource::kUniform;
    Section us(*f.child("uniform"), "tls.mode_field.uniform", f.child_out("uniform"));
    t.volume = us.required_number("volume_m3");
    t.u0 = us.required_number("u_m");
    t.cells = us.integer("cells", 1, 1, 10'000'000);
    auto strain = us.opt_numbers("strain");
    if (!strain || strain->size() != 6) us.fail("strain", "expected six components xx, xy, xz, yy, yz, zz");
    std::copy(strain->begin(), strain->end(), t.strain.begin());
    us.finish();
    if (!(t.volume > 0.0)) us.fail("volume_m3", "must be > 0");
  }
  f.finish();

  t.omega_m = kTwoPi * s.number("omega_m_hz", 2.339e9);
  if (!(t.omega_m > 0.0)) s.fail("omega_m_hz", "must be > 0");
  if (const json* m = s.child("material")) {
    Section ms(*m, "tls.material", s.child_out("material"));
    t.material.rho = ms.number("rho_kg_m3", t.material.rho);
    t.material.v = ms.number("v_m_s", t.material.v);
    t.material.p0 = ms.number("p0_per_J_m3", t.material.p0);
    t.material.delta0 = ms.number("delta0", t.material.delta0);
    t.material.filling_factor = ms.number("filling_factor", t.material.filling_factor);
    ms.finish();
  } else {
    s.child_out("material") = {{"rho_kg_m3", t.material.rho},
                               {"v_m_s", t.material.v},
                               {"p0_per_J_m3", t.material.p0},
                               {"delta0", t.material.delta0},
                               {"filling_factor", t.material.filling_factor}};
  }
  t.material.validate();
  if (auto v = s.opt_number("tls_volume_m3")) {
    if (!(*v > 0.0)) s.fail("tls_volume_m3", "must be > 0");
    t.tls_volume = *v;
  }
  t.delta_omega = kTwoPi * s.number("delta_omega_hz", 660e3);
  if (!(t.delta_omega >= 0.0)) s.fail("delta_omega_hz", "must be >= 0");
  t.samples = s.integer("samples", 10000, 1, 100'000'000);
  t.bins = s.integer("bins", 50, 1, 100000);
  const auto p0r = range_pair(s, "log10_p0_range", {44.0, 46.0});
  const auto d0r = range_pair(s, "log10_delta0_range", {-4.5, -4.0});
  t.ranges = {p0r[0], p0r[1], d0r[0], d0r[1]};
  s.finish();
}

void parse_mc(Section& top, RunConfig& rc) {
  const json* j = top.child("mc");
  if (!j) top.fail("mc", "required for mc-report");
  Section s(*j, "mc", top.child_out("mc"));
  const std::string src = s.choice("source", "pn", {"pn", "double-exp", "t2m"});
  rc.mc.source = src == "pn" ? McSource::kPhononDistribution
                             : (src == "double-exp" ? McSource::kDoubleExp : McSource::kT2m);
  if (rc.mc.source == McSource::kPhononDistribution) {
    auto probs = s.opt_numbers("probs");
    auto sigmas = s.opt_numbers("sigmas");
    if (!probs || !sigmas) s.fail("source \"pn\" needs probs and sigmas");
    if (probs->size() != sigmas->size() || probs->empty()) s.fail("probs and sigmas must have equal, nonzero length");
    rc.mc.pn.probs = *probs;
    rc.mc.pn.sigmas = *sigmas;
    for (double x : *sigmas)
      if (!(x >= 0.0)) s.fail("sigmas", "must be >= 0");
    for (double x : *probs)
      if (!(x >= 0.0)) s.fail("probs", "must be >= 0");
  }
  parse_resample(s, rc.mc.resample, rc.seed);
  s.finish();
}

void parse_bvd(Section& top, RunConfig& rc) {
  const json* j = top.child("bvd");
  static const json empty = json::object();
  Section s(j ? *j : empty, "bvd", top.child_out("bvd"));
  BvdCircuit& c = rc.bvd.circuit;
  c.c0 = s.number("c0_f", c.c0);
  c.cm = s.number("cm_f", c.cm);
  c.lm = s.number("lm_h", c.lm);
  c.rm = s.number("rm_ohm", c.rm);
  rc.bvd.f_start_hz = s.number("f_start_hz", 2.2e9);
  rc.bvd.f_stop_hz = s.number("f_stop_hz", 2.5e9);
  rc.bvd.count = s.integer("count", 301, 1, 10'000'000);
  s.finish();
  c.validate();
  if (!(rc.bvd.f_start_hz > 0.0) || !(rc.bvd.f_stop_hz >= rc.bvd.f_start_hz))
    s.fail("need 0 < f_start_hz <= f_stop_hz");
}

}  // namespace

const char* experiment_name(Experiment e) {
  switch (e) {
    case Experiment::kRingdown: return "ringdown";
    case Experiment::kInterferometry: return "interferometry";
    case Experiment::kRamseyFit: return "ramsey-fit";
    case Experiment::kTlsParams: return "tls-params";
    case Experiment::kMcReport: return "mc-report";
    case Experiment::kBvdSweep: return "bvd-sweep";
  }
  return "?";
}

RunConfig parse_run_config(const json& doc, const std::filesystem::path& base_dir) {
  RunConfig rc;
  Section top(doc, "config", rc.resolved);
  if (!top.has("experiment")) top.fail("experiment", "required");
  const std::string name = top.choice(
      "experiment", "", {"ringdown", "interferometry", "ramsey-fit", "tls-params", "mc-report", "bvd-sweep"});
  for (Experiment e : {Experiment::kRingdown, Experiment::kInterferometry, Experiment::kRamseyFit,
                       Experiment::kTlsParams, Experiment::kMcReport, Experiment::kBvdSweep})
    if (name == experiment_name(e)) rc.experiment = e;
  rc.seed = top.u64("seed", 0);

  switch (rc.experiment) {
    case Experiment::kRingdown:
    case Experiment::kInterferometry: {
      const bool fringes = rc.experiment == Experiment::kInterferometry;
      parse_sweep(top, rc, fringes);
      parse_system(top, rc);
      if (!fringes) parse_fit(top, rc);
      parse_tolerances(top, rc);
      parse_io(top, rc, false, base_dir);
      break;
    }
    case Experiment::kRamseyFit:
      parse_ramsey(top, rc);
      parse_tolerances(top, rc);
      rc.ramsey.input = parse_io(top, rc, true, base_dir);
      break;
    case Experiment::kTlsParams:
      parse_tls(top, rc, base_dir);
      parse_io(top, rc, false, base_dir);
      break;
    case Experiment::kMcReport:
      parse_mc(top, rc);
      if (rc.mc.source == McSource::kDoubleExp) parse_fit(top, rc);
      parse_tolerances(top, rc);
      rc.mc.input = parse_io(top, rc, rc.mc.source != McSource::kPhononDistribution, base_dir);
      break;
    case Experiment::kBvdSweep:
      parse_bvd(top, rc);
      parse_io(top, rc, false, base_dir);
      break;
  }
  top.finish();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
  return parse_run_config(doc, path.parent_path());
}

std::string config_hash(const json& resolved) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : resolved.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace tlsphonon::cli
