#pragma once

// Scalar forms of the equivalent-circuit battery update. The SIMD kernels
// replicate these expressions operation for operation so that both paths
// round identically; keep them in sync.

#include <cmath>

namespace emslab::battery_math {

inline double discriminant(double voc, double rb, double battery_power)
{
    return voc * voc - 4.0 * rb * battery_power;
}

/// Next SOC given sqrt(discriminant); `denom` is 2 * rb * capacity.
inline double soc_after(double soc, double voc, double sqrt_disc, double sample_time, double denom)
{
    return soc - sample_time * (voc - sqrt_disc) / denom;
}

inline double soc_denominator(double rb, double capacity) { return 2.0 * rb * capacity; }

/// Internal (chemical) power drawn from the cell: V_oc times the branch current.
inline double internal_power(double voc, double rb, double sqrt_disc)
{
    return voc * (voc - sqrt_disc) / (2.0 * rb);
}

/// Joules over one step converted to gallons-equivalent.
inline double step_cost(double fuel_power, double internal_power, double sample_time, double joules_per_gallon)
{
    return sample_time * (fuel_power + internal_power) / joules_per_gallon;
}

}  // namespace emslab::battery_math
