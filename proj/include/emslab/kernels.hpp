#pragma once

// Bellman backup inner loop over the SOC lattice.
//
// For one stage, one current engine state and one candidate input, the
// SOC-independent quantities (terminal battery power, fuel power) are fixed;
// the sweep evaluates every lattice point: battery update, feasibility,
// stage cost, interpolated cost-to-go, running minimum. That loop is the hot
// path of the offline solver and has a scalar reference plus an AVX2 variant
// chosen at runtime. Both evaluate the same expressions in the same order
// without FMA contraction, so their results are bit-identical.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace emslab::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// Best ISA this CPU and build support. EMSLAB_ISA=scalar in the environment
/// forces the reference path.
Isa detected_isa();
bool isa_available(Isa isa);

/// Per-point battery constants on a uniform SOC lattice.
struct SocLattice {
    std::vector<double> soc;
    std::vector<double> voc;
    std::vector<double> four_rb;  // 4 * R_b
    std::vector<double> two_rb;   // 2 * R_b
    std::vector<double> denom;    // 2 * R_b * Q_b
    double origin = 0.0;          // soc.front()
    double inv_step = 0.0;        // 1 / lattice spacing

    std::size_t size() const { return soc.size(); }
};

/// Snap tolerance (in lattice units) for interpolation positions that land
/// within rounding distance of a lattice point.
inline constexpr double kSnapTolerance = 1e-9;

/// Piecewise-linear interpolation of `values` on the uniform lattice. When
/// one bracket value is +inf the other one is returned, and +inf results only
/// when both are. Callers decide feasibility from the continuous SOC bounds of
/// the layer, so a point just inside a bound is not lost to the grid.
double interp_uniform(std::span<const double> values, double origin, double inv_step, double x);

struct BackupArgs {
    const SocLattice* lattice = nullptr;
    const double* v_next = nullptr;  // cost-to-go layer for the candidate's next engine state
    double battery_power = 0.0;      // W, terminal
    double fuel_power = 0.0;         // W
    double sample_time = 0.0;
    double joules_per_gallon = 0.0;
    double soc_min = 0.0;  // feasible band of the next layer
    double soc_max = 0.0;
    std::int32_t candidate = 0;
    double* best = nullptr;               // running minimum, size lattice->size()
    std::int32_t* best_index = nullptr;   // argmin, untouched where the candidate does not improve
};

using BackupSweepFn = void (*)(const BackupArgs&);

void backup_sweep_scalar(const BackupArgs& args);
#if defined(EMSLAB_HAVE_AVX2)
void backup_sweep_avx2(const BackupArgs& args);
#endif

BackupSweepFn select_backup_sweep(Isa isa);

/// Dispatches to the detected ISA.
void backup_sweep(const BackupArgs& args);

}  // namespace emslab::kernels
