#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "emslab/dp.hpp"
#include "emslab/kernels.hpp"
#include "helpers.hpp"

using namespace emslab;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_SUITE("kernels")
{
    TEST_CASE("interpolation rule")
    {
        const std::vector<double> v{1.0, 3.0, kInf, 7.0};
        const double inv_step = 3.0 / 0.3;
        CHECK(kernels::interp_uniform(v, 0.0, inv_step, 0.0) == 1.0);
        CHECK(kernels::interp_uniform(v, 0.0, inv_step, 0.05) == doctest::Approx(2.0));
        CHECK(kernels::interp_uniform(v, 0.0, inv_step, 0.1) == 3.0);
        // One bracket is infinite: the finite neighbour is used.
        CHECK(kernels::interp_uniform(v, 0.0, inv_step, 0.15) == 3.0);
        CHECK(kernels::interp_uniform(v, 0.0, inv_step, 0.25) == 7.0);
        CHECK(kernels::interp_uniform(v, 0.0, inv_step, 0.3) == 7.0);
        // Within the snap tolerance of a node the node value is returned.
        CHECK(kernels::interp_uniform(v, 0.0, inv_step, 0.1 * (1.0 + 1e-13)) == 3.0);
        const std::vector<double> all_inf{kInf, kInf};
        CHECK(std::isinf(kernels::interp_uniform(all_inf, 0.0, 1.0, 0.5)));
    }

    TEST_CASE("isa reporting")
    {
        CHECK(kernels::isa_available(kernels::Isa::scalar));
        CHECK(kernels::isa_name(kernels::Isa::scalar) == "scalar");
        CHECK(kernels::isa_name(kernels::Isa::avx2) == "avx2");
        CHECK(kernels::select_backup_sweep(kernels::Isa::scalar) == &kernels::backup_sweep_scalar);
    }

    TEST_CASE("vector sweep is bit-identical to the scalar sweep")
    {
        if (!kernels::isa_available(kernels::Isa::avx2)) {
            MESSAGE("AVX2 not available on this machine; equivalence not exercised");
            return;
        }
        const PowertrainParams p = synthetic_params();
        std::mt19937_64 rng(19);
        std::uniform_real_distribution<double> power(-80000.0, 80000.0), fuel(0.0, 150000.0), value(-0.02, 0.5),
            unit(0.0, 1.0);
        for (std::size_t n : {2u, 3u, 5u, 7u, 8u, 33u, 201u}) {
            const DpGrid grid = DpGrid::uniform(p, n, 5);
            const kernels::SocLattice lat = make_lattice(grid, p);
            for (int trial = 0; trial < 200; ++trial) {
                std::vector<double> v_next(n);
                for (double& x : v_next) x = unit(rng) < 0.15 ? kInf : value(rng);
                std::vector<double> best_a(n), best_b;
                for (double& x : best_a) x = unit(rng) < 0.3 ? kInf : value(rng);
                best_b = best_a;
                std::vector<std::int32_t> idx_a(n, -1), idx_b(n, -1);
                kernels::BackupArgs args;
                args.lattice = &lat;
                args.v_next = v_next.data();
                args.battery_power = power(rng);
                args.fuel_power = trial % 3 == 0 ? 0.0 : fuel(rng);
                args.sample_time = p.sample_time;
                args.joules_per_gallon = p.joules_per_gallon();
                const double lo = p.soc_min + 0.3 * unit(rng) * (p.soc_max - p.soc_min);
                args.soc_min = trial % 4 == 0 ? p.soc_min : lo;
                args.soc_max = trial % 5 == 0 ? p.soc_max : lo + unit(rng) * (p.soc_max - lo);
                args.candidate = trial;
                args.best = best_a.data();
                args.best_index = idx_a.data();
                kernels::backup_sweep_scalar(args);
                args.best = best_b.data();
                args.best_index = idx_b.data();
#if defined(EMSLAB_HAVE_AVX2)
                kernels::backup_sweep_avx2(args);
#endif
                for (std::size_t i = 0; i < n; ++i) {
                    CHECK(same_bits(best_a[i], best_b[i]));
                    CHECK(idx_a[i] == idx_b[i]);
                }
            }
        }
    }

    TEST_CASE("full solve is identical under both kernels")
    {
        if (!kernels::isa_available(kernels::Isa::avx2)) return;
        const PowertrainParams p = synthetic_params();
        const Trip t = generate_trip(test::short_route(1500.0), 6);
        DpOptions scalar{kernels::Isa::scalar};
        DpOptions vec{kernels::Isa::avx2};
        const DpSolution a = solve_dp(t, p, DpGrid::uniform(p, 201, 21), {p.soc_max, false}, scalar);
        const DpSolution b = solve_dp(t, p, DpGrid::uniform(p, 201, 21), {p.soc_max, false}, vec);
        CHECK(a.table == b.table);
        CHECK(same_bits(a.optimal_cost, b.optimal_cost));
        CHECK(same_bits(a.trajectory.total_cost, b.trajectory.total_cost));
    }
}
