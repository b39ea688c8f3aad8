#include "tlsphonon/json_io.hpp"

namespace tlsphonon {

void to_json(nlohmann::json& j, const Histogram& h) { j = {{"edges", h.edges}, {"counts", h.counts}}; }

void to_json(nlohmann::json& j, const PhononDistribution& pn) {
  j = {{"probs", pn.probs}, {"nbar", pn.mean()}};
  if (pn.has_sigmas()) j["sigmas"] = pn.sigmas;
}

void to_json(nlohmann::json& j, const FitResult& fit) {
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t i = 0; i < fit.names.size(); ++i)
    params.push_back({{"name", fit.names[i]},
                      {"value", fit.params(static_cast<Eigen::Index>(i))},
                      {"standard_error", fit.standard_error(fit.names[i])}});
  nlohmann::json derived = nlohmann::json::array();
  for (const DerivedQuantity& d : fit.derived)
    derived.push_back({{"name", d.name}, {"value", d.value}, {"standard_error", d.standard_error}});
  nlohmann::json cov = nlohmann::json::array();
  for (Eigen::Index r = 0; r < fit.covariance.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < fit.covariance.cols(); ++c) row.push_back(fit.covariance(r, c));
    cov.push_back(std::move(row));
  }
  j = {{"model", fit.model},
       {"parameters", std::move(params)},
       {"derived", std::move(derived)},
       {"covariance", std::move(cov)},
       {"residual_norm", fit.residual_norm},
       {"relative_residual", fit.relative_residual},
       {"converged", fit.converged},
       {"iterations", fit.n_iterations},
       {"rank_deficient", fit.rank_deficient},
       {"flags", fit.flags}};
}

void to_json(nlohmann::json& j, const UncertaintyReport& r) {
  j = {{"quantity", r.quantity},
       {"point_estimate", r.point_estimate},
       {"mean", r.mean},
       {"std_dev", r.std_dev},
       {"n_iterations", r.n_iterations},
       {"n_accepted", r.n_accepted},
       {"n_failed", r.n_failed},
       {"flagged", r.flagged},
       {"histogram", r.histogram}};
}

}  // namespace tlsphonon
