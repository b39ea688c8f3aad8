// json_io.hpp — nlohmann::json serializers for result types. Non-finite values
// serialize as null.

#pragma once

#include <json.hpp>

#include "tlsphonon/histogram.hpp"
#include "tlsphonon/montecarlo.hpp"
#include "tlsphonon/phonon_distribution.hpp"
#include "tlsphonon/readout.hpp"

namespace tlsphonon {

void to_json(nlohmann::json& j, const Histogram& h);
void to_json(nlohmann::json& j, const PhononDistribution& pn);
/// Parameters as {name, value, standard_error} records plus the covariance matrix.
void to_json(nlohmann::json& j, const FitResult& fit);
/// Omits the raw samples; the histogram carries the distribution.
void to_json(nlohmann::json& j, const UncertaintyReport& r);

}  // namespace tlsphonon
