// numfmt.hpp — shortest round-trip text form of doubles for CSV artifacts

#pragma once

#include <string>

namespace tlsphonon {

std::string format_double(double value);

}  // namespace tlsphonon
