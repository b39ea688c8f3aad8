#include "tlsphonon/least_squares.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tlsphonon/errors.hpp"

namespace tlsphonon {

double gradient_cosine(const Eigen::MatrixXd& jac, const Eigen::VectorXd& r) {
  const double rn = r.norm();
  if (rn == 0.0) return 0.0;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < jac.cols(); ++j) {
    const double cn = jac.col(j).norm();
    if (cn == 0.0) continue;
    worst = std::max(worst, std::abs(jac.col(j).dot(r)) / (cn * rn));
  }
  return worst;
}

LmOutcome levenberg_marquardt(const ResidualFn& fn, const Eigen::VectorXd& p0, const LmOptions& opts) {
  const Eigen::Index p = p0.size();
  LmOutcome out;
  out.params = p0;
  fn(out.params, out.residual, &out.jacobian);
  const Eigen::Index m = out.residual.size();
  if (out.jacobian.rows() != m || out.jacobian.cols() != p)
    throw ConfigError("levenberg_marquardt: Jacobian shape does not match residual and parameters");
  if (!out.residual.allFinite()) throw NumericalError("levenberg_marquardt: non-finite residual at the initial point");
  out.cost = 0.5 * out.residual.squaredNorm();

  // Marquardt scaling: running maximum of the Jacobian column norms.
  Eigen::VectorXd scale = out.jacobian.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < p; ++j)
    if (scale(j) == 0.0) scale(j) = 1.0;

  double lambda = opts.initial_damping;
  double nu = 2.0;
  Eigen::MatrixXd augmented(m + p, p);
  Eigen::VectorXd rhs(m + p);
  Eigen::VectorXd trial_r;
  bool stalled = false;

  for (out.iterations = 0; out.iterations < opts.max_iterations;) {
    if (out.cost == 0.0) {
      stalled = true;
      break;
    }
    augmented.topRows(m) = out.jacobian;
    augmented.bottomRows(p) = (std::sqrt(lambda) * scale).asDiagonal();
    rhs.head(m) = -out.residual;
    rhs.tail(p).setZero();
    const Eigen::VectorXd step = augmented.colPivHouseholderQr().solve(rhs);
    if (!step.allFinite()) throw NumericalError("levenberg_marquardt: non-finite step");

    const Eigen::VectorXd trial = out.params + step;
    fn(trial, trial_r, nullptr);
    ++out.iterations;
    const double trial_cost = trial_r.allFinite() ? 0.5 * trial_r.squaredNorm() : HUGE_VAL;
    const Eigen::VectorXd jstep = out.jacobian * step;
    const double predicted = -out.residual.dot(jstep) - 0.5 * jstep.squaredNorm();
    const double actual = out.cost - trial_cost;
    const double gain = predicted > 0.0 ? actual / predicted : -1.0;

    if (gain > 0.0 && actual >= 0.0) {
      const double old_cost = out.cost;
      out.params = trial;
      fn(out.params, out.residual, &out.jacobian);
      out.cost = 0.5 * out.residual.squaredNorm();
      scale = scale.cwiseMax(out.jacobian.colwise().norm().transpose());
      lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * gain - 1.0, 3));
      nu = 2.0;
      // Gauss–Newton predicted reduction ½‖P_J r‖² measures distance from stationarity.
      const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> jqr(out.jacobian);
      const Eigen::VectorXd qtr = (jqr.householderQ().transpose() * out.residual).head(jqr.rank());
      const double gn_reduction = 0.5 * qtr.squaredNorm();
      if (gn_reduction <= opts.relative_cost_tolerance * out.cost ||
          (old_cost - out.cost <= opts.relative_cost_tolerance * old_cost &&
           gn_reduction <= std::sqrt(opts.relative_cost_tolerance) * out.cost)) {
        stalled = true;
        break;
      }
    } else {
      lambda *= nu;
      nu *= 2.0;
      if (lambda > 1e20) {
        stalled = true;
        break;
      }
    }
  }
  out.gradient_cosine = gradient_cosine(out.jacobian, out.residual);
  const double rn = out.residual.norm();
  const double cosine_floor =
      rn > 0.0 ? 16.0 * std::numeric_limits<double>::epsilon() * opts.data_scale / rn : 0.0;
  const bool tiny_residual = out.cost <= 1e-28 * std::max(1.0, static_cast<double>(m));
  out.converged =
      stalled && (out.gradient_cosine <= std::max(opts.gradient_tolerance, cosine_floor) || tiny_residual);
  return out;
}

VarProOutcome variable_projection(const SeparableBasisFn& fn, const Eigen::VectorXd& y, const Eigen::VectorXd& theta0,
                                  const LmOptions& opts) {
  Eigen::MatrixXd basis;
  std::vector<Eigen::MatrixXd> derivs;
  Eigen::VectorXd coeff;
  const ResidualFn projected = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    fn(theta, basis, jac ? &derivs : nullptr);
    if (basis.rows() != y.size()) throw ConfigError("variable_projection: basis rows do not match data length");
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(basis);
    coeff = qr.solve(y);
    r = basis * coeff - y;
    if (!jac) return;
    if (static_cast<Eigen::Index>(derivs.size()) != theta.size())
      throw ConfigError("variable_projection: need one basis derivative per nonlinear parameter");
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(basis.rows(), qr.rank());
    jac->resize(y.size(), theta.size());
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      const Eigen::VectorXd v = derivs[static_cast<std::size_t>(k)] * coeff;
      jac->col(k) = v - q * (q.transpose() * v);
    }
  };
  LmOptions local = opts;
  if (local.data_scale == 0.0) local.data_scale = y.norm();
  VarProOutcome out;
  out.nonlinear = levenberg_marquardt(projected, theta0, local);
  Eigen::VectorXd r;
  projected(out.nonlinear.params, r, nullptr);
  out.linear = coeff;
  return out;
}

CovarianceEstimate estimate_covariance(const Eigen::MatrixXd& jac, const Eigen::VectorXd& r, double rcond) {
  const Eigen::Index m = jac.rows();
  const Eigen::Index p = jac.cols();
  CovarianceEstimate est;
  est.covariance = Eigen::MatrixXd::Zero(p, p);
  if (p == 0) return est;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac, Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double smax = s(0);
  const double smin = s(p - 1);
  est.condition = smin > 0.0 ? smax / smin : HUGE_VAL;
  est.rank_deficient = !(smin > rcond * smax);
  Eigen::VectorXd inv2 = Eigen::VectorXd::Zero(p);
  for (Eigen::Index i = 0; i < p; ++i)
    if (s(i) > rcond * smax) inv2(i) = 1.0 / (s(i) * s(i));
  const double variance = m > p ? r.squaredNorm() / static_cast<double>(m - p) : 0.0;
  est.covariance = variance * svd.matrixV() * inv2.asDiagonal() * svd.matrixV().transpose();
  est.covariance = 0.5 * (est.covariance + est.covariance.transpose()).eval();
  return est;
}

}  // namespace tlsphonon
