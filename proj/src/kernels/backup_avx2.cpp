#include <immintrin.h>

#include <cmath>
#include <limits>

#include "emslab/kernels.hpp"

namespace emslab::kernels {

namespace {

void scalar_tail(const BackupArgs& a, std::size_t begin)
{
    const SocLattice& lat = *a.lattice;
    const std::size_t n = lat.size();
    const std::span<const double> vnext(a.v_next, n);
    for (std::size_t i = begin; i < n; ++i) {
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

}  // namespace

void backup_sweep_avx2(const BackupArgs& a)
{
    const SocLattice& lat = *a.lattice;
    const std::size_t n = lat.size();
    if (n < 2) {
        scalar_tail(a, 0);
        return;
    }
    const __m256d zero = _mm256_setzero_pd();
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d inf = _mm256_set1_pd(std::numeric_limits<double>::infinity());
    const __m256d sign_mask = _mm256_set1_pd(-0.0);
    const __m256d snap = _mm256_set1_pd(kSnapTolerance);
    const __m256d pb = _mm256_set1_pd(a.battery_power);
    const __m256d pf = _mm256_set1_pd(a.fuel_power);
    const __m256d ts = _mm256_set1_pd(a.sample_time);
    const __m256d jpg = _mm256_set1_pd(a.joules_per_gallon);
    const __m256d smin = _mm256_set1_pd(a.soc_min);
    const __m256d smax = _mm256_set1_pd(a.soc_max);
    const __m256d origin = _mm256_set1_pd(lat.origin);
    const __m256d inv_step = _mm256_set1_pd(lat.inv_step);
    const __m256d top = _mm256_set1_pd(static_cast<double>(n - 2));

    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d voc = _mm256_loadu_pd(&lat.voc[i]);
        const __m256d disc = _mm256_sub_pd(_mm256_mul_pd(voc, voc), _mm256_mul_pd(_mm256_loadu_pd(&lat.four_rb[i]), pb));
        __m256d ok = _mm256_cmp_pd(disc, zero, _CMP_GE_OQ);
        if (_mm256_movemask_pd(ok) == 0) continue;
        const __m256d sq = _mm256_sqrt_pd(disc);
        const __m256d drop = _mm256_sub_pd(voc, sq);
        const __m256d soc_next = _mm256_sub_pd(
            _mm256_loadu_pd(&lat.soc[i]), _mm256_div_pd(_mm256_mul_pd(ts, drop), _mm256_loadu_pd(&lat.denom[i])));
        ok = _mm256_and_pd(ok, _mm256_cmp_pd(soc_next, smin, _CMP_GE_OQ));
        ok = _mm256_and_pd(ok, _mm256_cmp_pd(soc_next, smax, _CMP_LE_OQ));
        if (_mm256_movemask_pd(ok) == 0) continue;

        const __m256d pq = _mm256_div_pd(_mm256_mul_pd(voc, drop), _mm256_loadu_pd(&lat.two_rb[i]));
        const __m256d cost = _mm256_div_pd(_mm256_mul_pd(ts, _mm256_add_pd(pf, pq)), jpg);

        __m256d pos = _mm256_mul_pd(_mm256_sub_pd(soc_next, origin), inv_step);
        const __m256d rounded = _mm256_round_pd(pos, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
        const __m256d near = _mm256_cmp_pd(_mm256_andnot_pd(sign_mask, _mm256_sub_pd(pos, rounded)), snap, _CMP_LT_OQ);
        pos = _mm256_blendv_pd(pos, rounded, near);
        __m256d fl = _mm256_floor_pd(pos);
        fl = _mm256_max_pd(fl, zero);
        fl = _mm256_min_pd(fl, top);
        __m256d frac = _mm256_sub_pd(pos, fl);
        frac = _mm256_max_pd(frac, zero);
        frac = _mm256_min_pd(frac, one);
        const __m128i idx = _mm256_cvttpd_epi32(fl);
        const __m256d v0 = _mm256_i32gather_pd(a.v_next, idx, 8);
        const __m256d v1 = _mm256_i32gather_pd(a.v_next + 1, idx, 8);
        __m256d value = _mm256_add_pd(v0, _mm256_mul_pd(frac, _mm256_sub_pd(v1, v0)));
        value = _mm256_blendv_pd(value, v1, _mm256_cmp_pd(v0, inf, _CMP_EQ_OQ));
        value = _mm256_blendv_pd(value, v0, _mm256_cmp_pd(v1, inf, _CMP_EQ_OQ));
        value = _mm256_blendv_pd(value, v1, _mm256_cmp_pd(frac, one, _CMP_GE_OQ));
        value = _mm256_blendv_pd(value, v0, _mm256_cmp_pd(frac, zero, _CMP_LE_OQ));

        const __m256d total = _mm256_add_pd(cost, value);
        const __m256d best = _mm256_loadu_pd(&a.best[i]);
        const __m256d better = _mm256_and_pd(ok, _mm256_cmp_pd(total, best, _CMP_LT_OQ));
        const int mask = _mm256_movemask_pd(better);
        if (mask == 0) continue;
        _mm256_storeu_pd(&a.best[i], _mm256_blendv_pd(best, total, better));
        for (int lane = 0; lane < 4; ++lane) {
            if (mask & (1 << lane)) a.best_index[i + static_cast<std::size_t>(lane)] = a.candidate;
        }
    }
    scalar_tail(a, i);
}

}  // namespace emslab::kernels
