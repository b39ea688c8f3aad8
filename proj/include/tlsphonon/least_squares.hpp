// least_squares.hpp — damped Gauss–Newton (Levenberg–Marquardt) for small dense problems
#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tlsphonon {

/// Fills the residual vector r(p) and, when `jac` is non-null, the Jacobian dr/dp.
using ResidualFn = std::function<void(const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* jac)>;

struct LmOptions {
  int max_iterations = 200;
  /// Stop once an accepted step lowers the cost by less than this fraction.
  double relative_cost_tolerance = 1e-10;
  /// Largest admissible cosine between the residual and any Jacobian column at a
  /// reported optimum.
  double gradient_tolerance = 1e-4;
  double initial_damping = 1e-3;
  /// Magnitude of the data behind the residuals (e.g. ‖y‖). Rounding in r is then
  /// about eps·data_scale, which puts a floor under the measurable gradient cosine
  /// of near-exact fits; 0 disables the allowance.
  double data_scale = 0.0;
};

struct LmOutcome {
  Eigen::VectorXd params;
  Eigen::VectorXd residual;
  Eigen::MatrixXd jacobian;
  double cost = 0.0;  ///< ½‖r‖²
  int iterations = 0;
  bool converged = false;
  double gradient_cosine = 0.0;  ///< max_j |J_jᵀ r| / (‖J_j‖ ‖r‖)
};

/// Minimizes ½‖r(p)‖² from `p0`. Never throws on non-convergence; inspect `converged`.
LmOutcome levenberg_marquardt(const ResidualFn& fn, const Eigen::VectorXd& p0, const LmOptions& opts = {});

/// Largest cosine between r and the columns of J; 0 when r vanishes.
double gradient_cosine(const Eigen::MatrixXd& jac, const Eigen::VectorXd& r);

/// Separable model y ≈ B(θ) c with c entering linearly. Fills the basis B(θ) and,
/// when `derivs` is non-null, one matrix dB/dθ_k per nonlinear parameter.
using SeparableBasisFn =
    std::function<void(const Eigen::VectorXd& theta, Eigen::MatrixXd& basis, std::vector<Eigen::MatrixXd>* derivs)>;

struct VarProOutcome {
  LmOutcome nonlinear;       ///< optimizer state over θ; residual is B(θ)c − y
  Eigen::VectorXd linear;    ///< c at the final θ
};

/// Variable projection: eliminates c by linear least squares and minimizes the
/// projected residual over θ with Levenberg–Marquardt (Kaufman's Jacobian).
VarProOutcome variable_projection(const SeparableBasisFn& fn, const Eigen::VectorXd& y, const Eigen::VectorXd& theta0,
                                  const LmOptions& opts = {});

struct CovarianceEstimate {
  Eigen::MatrixXd covariance;
  bool rank_deficient = false;
  double condition = 0.0;
};

/// (JᵀJ)⁺ scaled by the residual variance ‖r‖²/(m − p). Uses a pseudo-inverse
/// and sets `rank_deficient` when the singular-value ratio falls below `rcond`.
CovarianceEstimate estimate_covariance(const Eigen::MatrixXd& jac, const Eigen::VectorXd& r, double rcond = 1e-12);

}  // namespace tlsphonon
