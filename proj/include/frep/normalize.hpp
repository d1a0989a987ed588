#pragma once

// Distance-approximating normalizations of a field. All keep the zero set.
//
//   omega1  f / sqrt(f^2 + |grad f|^2)
//   omega2  omega1 - 1/2 omega1^2 d2(omega1)/dn2, n = grad f / |grad f| held
//           fixed at the evaluation point
//   delta1  f / |grad f|
//
// Denominators are clamped below at diffops::kMinGradient, so lanes where f and
// grad f both vanish evaluate to 0 and critical points stay finite.

#include "frep/geom.hpp"

#include <string>

namespace frep::normalize {

enum class Scheme { none, omega1, omega2, delta1 };

/// Accepts none, w1, w2, d1.
Scheme parse_scheme(const std::string& name);
const char* scheme_name(Scheme s);

geom::Field omega1(const geom::Field& f);
/// k = 1 or 2.
geom::Field omega_k(const geom::Field& f, int k);
geom::Field delta1(const geom::Field& f);
geom::Field apply(const geom::Field& f, Scheme s);

}  // namespace frep::normalize
