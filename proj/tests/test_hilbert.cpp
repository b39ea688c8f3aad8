#include <doctest.h>

#include <cmath>
#include <complex>

#include <unsupported/Eigen/KroneckerProduct>

#include "tlsphonon/errors.hpp"
#include "tlsphonon/hilbert.hpp"

using namespace tlsphonon;

namespace {

CMatrix lowering_oracle(int n_max) {
  CMatrix b = CMatrix::Zero(n_max + 1, n_max + 1);
  for (int n = 1; n <= n_max; ++n) b(n - 1, n) = std::sqrt(static_cast<double>(n));
  return b;
}

// Kronecker chain I_mech ⊗ T_1 ⊗ ... ⊗ T_N with `op` on factor k and identities elsewhere.
CMatrix tls_oracle(int n_max, int n_tls, int k, const Eigen::Matrix2cd& op) {
  CMatrix out = CMatrix::Identity(n_max + 1, n_max + 1);
  for (int j = 1; j <= n_tls; ++j) {
    const CMatrix f = (j == k) ? CMatrix(op) : CMatrix(CMatrix::Identity(2, 2));
    out = Eigen::kroneckerProduct(out, f).eval();
  }
  return out;
}

Eigen::Matrix2cd sigma_minus() {
  Eigen::Matrix2cd s = Eigen::Matrix2cd::Zero();
  s(0, 1) = 1.0;  // |g><e| with index 0 = ground
  return s;
}

double factorial(int n) { return std::tgamma(n + 1.0); }

}  // namespace

TEST_SUITE("hilbert") {

TEST_CASE("layout indexing and guards") {
  const HilbertLayout l(3, 2);
  CHECK(l.total_dim() == 16);
  CHECK(l.index(2, 0b01) == 9);
  CHECK(l.phonon_number(9) == 2);
  CHECK(l.tls_bits(9) == 0b01u);
  CHECK(l.tls_mask(1) == 0b10u);
  CHECK(l.tls_mask(2) == 0b01u);
  CHECK(l.excitation_number(l.index(2, 0b11)) == 4);
  CHECK_THROWS_AS(HilbertLayout(0, 1), ConfigError);
  CHECK_THROWS_AS(HilbertLayout(3, -1), ConfigError);
  CHECK_THROWS_AS(HilbertLayout(200, 5), DimensionError);
}

TEST_CASE("ladder operators match the Kronecker construction") {
  const HilbertLayout l(4, 2);
  const CMatrix b = Eigen::kroneckerProduct(lowering_oracle(4), CMatrix(CMatrix::Identity(4, 4))).eval();
  CHECK((annihilation_op(l).matrix() - b).norm() < 1e-14);
  CHECK((creation_op(l).matrix() - b.adjoint()).norm() < 1e-14);
  CHECK((number_op(l).matrix() - b.adjoint() * b).norm() < 1e-14);

  // [b, b†] = 1 except at the truncation edge, where it is -n_max.
  const CMatrix comm = b * b.adjoint() - b.adjoint() * b;
  for (Eigen::Index i = 0; i < l.total_dim(); ++i)
    CHECK(comm(i, i).real() == doctest::Approx(l.phonon_number(i) == 4 ? -4.0 : 1.0));

  for (int k = 1; k <= 2; ++k) {
    const CMatrix s = tls_oracle(4, 2, k, sigma_minus());
    CHECK((tls_lowering_op(l, k).matrix() - s).norm() < 1e-14);
    CHECK((tls_raising_op(l, k).matrix() - s.adjoint()).norm() < 1e-14);
  }
  CHECK_THROWS_AS(tls_lowering_op(l, 0), ConfigError);
  CHECK_THROWS_AS(tls_lowering_op(l, 3), ConfigError);
}

TEST_CASE("operator and density-matrix validation") {
  const HilbertLayout l(2, 1);
  CHECK_THROWS_AS(Operator(l, CMatrix::Zero(5, 5)), ConfigError);
  CMatrix nh = CMatrix::Zero(6, 6);
  nh(0, 1) = 1.0;
  CHECK_THROWS_AS(Operator(l, nh, true), ConfigError);

  CMatrix rho = CMatrix::Zero(6, 6);
  rho(0, 0) = 0.5;
  CHECK_THROWS_AS(DensityMatrix(l, rho), ConfigError);
  rho(1, 1) = 0.5;
  rho(0, 1) = Complex(0.1, 0.1);
  CHECK_THROWS_AS(DensityMatrix(l, rho), ConfigError);
  rho(1, 0) = std::conj(rho(0, 1));
  const DensityMatrix ok(l, rho);
  CHECK(ok.trace() == doctest::Approx(1.0));
  CHECK(ok.min_eigenvalue() == doctest::Approx(0.0));
  // Coherence larger than the populations: eigenvalues 0.5 ± 0.6.
  rho(0, 1) = rho(1, 0) = 0.6;
  CHECK(DensityMatrix(l, rho).min_eigenvalue() == doctest::Approx(-0.1));
}

TEST_CASE("truncation rule") {
  CHECK(required_n_max(0.0) == 4);
  CHECK(required_n_max(1.8) == 17);  // 3.24 + 9 + 4 = 16.24
  CHECK(required_n_max(2.0) == 18);
  CHECK_NOTHROW(check_truncation(HilbertLayout(17, 0), 1.8));
  try {
    check_truncation(HilbertLayout(16, 0), 1.8);
    FAIL("expected TruncationError");
  } catch (const TruncationError& e) {
    CHECK(e.required_n_max() == 17);
  }
  CHECK_THROWS_AS(displacement_operator(HilbertLayout(10, 1), Complex(1.8, 0.0)), TruncationError);
}

TEST_CASE("displacement of vacuum gives coherent-state amplitudes") {
  const Complex alpha(1.1, -0.7);
  const int n_max = required_n_max(std::abs(alpha));
  const HilbertLayout l(n_max, 1);
  const CMatrix d = displacement_operator(l, alpha).matrix();
  const double a2 = std::norm(alpha);
  // Exact well below the cutoff; the truncated exponential departs only in the tail.
  double tail_error = 0.0;
  for (int n = 0; n <= n_max; ++n) {
    const Complex expect = std::exp(-a2 / 2.0) * std::pow(alpha, n) / std::sqrt(factorial(n));
    const double err = std::abs(d(l.index(n, 0), l.index(0, 0)) - expect);
    if (n <= 5) CHECK(err < 1e-10);
    tail_error += err * err;
    CHECK(std::abs(d(l.index(n, 1), l.index(0, 1)) - d(l.index(n, 0), l.index(0, 0))) < 1e-15);
    CHECK(std::abs(d(l.index(n, 1), l.index(0, 0))) < 1e-15);
  }
  CHECK(std::sqrt(tail_error) < 1e-4);
  // Unitary on the low-lying block where truncation does not bite.
  const CMatrix u = d.adjoint() * d;
  for (int n = 0; n <= 3; ++n)
    for (int m = 0; m <= 3; ++m)
      CHECK(std::abs(u(l.index(n, 0), l.index(m, 0)) - (n == m ? 1.0 : 0.0)) < 1e-9);

  // D(α)D(-α) = 1 on the same block.
  const CMatrix back = mechanics_displacement_matrix(n_max, -alpha) * mechanics_displacement_matrix(n_max, alpha);
  CHECK((back.topLeftCorner(4, 4) - CMatrix::Identity(4, 4)).norm() < 1e-9);
}

TEST_CASE("thermal state populations") {
  const double nth = 0.3;
  const HilbertLayout l(30, 2);
  const DensityMatrix rho = thermal_state(l, nth);
  const PhononDistribution pn = rho.phonon_distribution();
  const double q = nth / (1.0 + nth);
  double z = 0.0;
  for (int n = 0; n <= 30; ++n) z += std::pow(q, n);
  for (int n = 0; n <= 30; ++n) CHECK(pn.probs[static_cast<std::size_t>(n)] == doctest::Approx(std::pow(q, n) / z));
  CHECK(rho.mean_phonon_number() == doctest::Approx(nth).epsilon(1e-9));

  const Eigen::Matrix2cd t1 = partial_trace_tls(l, rho.matrix(), 1);
  CHECK(t1(1, 1).real() == doctest::Approx(nth / (1.0 + nth)));
  CHECK(std::abs(t1(0, 1)) < 1e-15);

  const DensityMatrix db = thermal_state(l, nth, TlsThermalConvention::kDetailedBalance);
  CHECK(partial_trace_tls(l, db.matrix(), 2)(1, 1).real() == doctest::Approx(nth / (1.0 + 2.0 * nth)));
  CHECK(tls_excited_population(0.0, TlsThermalConvention::kBoltzmann) == 0.0);
  CHECK_THROWS_AS(tls_excited_population(-1.0, TlsThermalConvention::kBoltzmann), ConfigError);
}

TEST_CASE("partial traces recover product factors") {
  const int n_max = 3;
  CMatrix m = CMatrix::Random(n_max + 1, n_max + 1);
  m = (m * m.adjoint()).eval();
  m /= m.trace();
  Eigen::Matrix2cd a;
  a << 0.7, Complex(0.1, 0.2), Complex(0.1, -0.2), 0.3;
  Eigen::Matrix2cd b;
  b << 0.4, Complex(0.0, 0.3), Complex(0.0, -0.3), 0.6;
  const CMatrix rho = Eigen::kroneckerProduct(Eigen::kroneckerProduct(m, CMatrix(a)).eval(), CMatrix(b)).eval();
  const HilbertLayout l(n_max, 2);
  CHECK((partial_trace_mechanics(l, rho) - m).norm() < 1e-14);
  CHECK((partial_trace_tls(l, rho, 1) - a).norm() < 1e-14);
  CHECK((partial_trace_tls(l, rho, 2) - b).norm() < 1e-14);

  const DensityMatrix dm(l, rho);
  const DensityMatrix red = partial_trace_mechanics(dm);
  CHECK(red.layout().n_tls() == 0);
  CHECK((red.matrix() - m).norm() < 1e-14);
}

TEST_CASE("conjugation preserves trace and spectrum") {
  const HilbertLayout l(6, 1);
  const DensityMatrix rho = thermal_state(l, 0.2);
  const Operator d = displacement_operator(HilbertLayout(required_n_max(0.5), 1), Complex(0.5, 0.0));
  CHECK_THROWS_AS(conjugate(rho, d), ConfigError);
  const HilbertLayout big(required_n_max(0.5), 1);
  const DensityMatrix r2 = conjugate(thermal_state(big, 0.0), d);
  CHECK(r2.trace() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r2.mean_phonon_number() == doctest::Approx(0.25).epsilon(1e-8));
}

}
