#include "rrg/rng.h"

#include <cmath>

namespace rrg {

double Rng::normal() {
  // Box-Muller, one draw per call.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace rrg
