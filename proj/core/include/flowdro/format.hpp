#pragma once

#include <string>

namespace flowdro {

/// 17 significant digits, '.' separator, locale independent. Round-trips
/// every finite double exactly. Non-finite values print as nan/inf/-inf.
std::string format_double(double v);

}  // namespace flowdro
