#include <cmath>
#include <limits>

#include "emslab/battery_math.hpp"
#include "emslab/kernels.hpp"

namespace emslab::kernels {

double interp_uniform(std::span<const double> values, double origin, double inv_step, double x)
{
    const double inf = std::numeric_limits<double>::infinity();
    const std::size_t n = values.size();
    if (n == 0) return inf;
    if (n == 1) return values[0];
    double pos = (x - origin) * inv_step;
    const double r = std::nearbyint(pos);
    if (std::abs(pos - r) < kSnapTolerance) pos = r;
    double fl = std::floor(pos);
    if (fl < 0.0) fl = 0.0;
    const double top = static_cast<double>(n - 2);
    if (fl > top) fl = top;
    double frac = pos - fl;
    if (frac < 0.0) frac = 0.0;
    if (frac > 1.0) frac = 1.0;
    const auto idx = static_cast<std::size_t>(fl);
    const double v0 = values[idx];
    const double v1 = values[idx + 1];
    if (frac <= 0.0) return v0;
    if (frac >= 1.0) return v1;
    if (v0 == inf) return v1;
    if (v1 == inf) return v0;
    return v0 + frac * (v1 - v0);
}

void backup_sweep_scalar(const BackupArgs& a)
{
    const SocLattice& lat = *a.lattice;
    const std::size_t n = lat.size();
    const std::span<const double> vnext(a.v_next, n);
    for (std::size_t i = 0; i < n; ++i) {
        const double voc = lat.voc[i];
        const double disc = voc * voc - lat.four_rb[i] * a.battery_power;
        if (!(disc >= 0.0)) continue;
        const double sq = std::sqrt(disc);
        const double drop = voc - sq;
        const double soc_next = lat.soc[i] - a.sample_time * drop / lat.denom[i];
        if (!(soc_next >= a.soc_min && soc_next <= a.soc_max)) continue;
        const double pq = voc * drop / lat.two_rb[i];
        const double cost = a.sample_time * (a.fuel_power + pq) / a.joules_per_gallon;
        const double total = cost + interp_uniform(vnext, lat.origin, lat.inv_step, soc_next);
        if (total < a.best[i]) {
            a.best[i] = total;
            a.best_index[i] = a.candidate;
        }
    }
}

}  // namespace emslab::kernels
