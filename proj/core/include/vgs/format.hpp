#pragma once

#include <string>

namespace vgs {

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

}  // namespace vgs
