#pragma once

// Backward dynamic programming over (stage, SOC, engine status).
//
// Concurrency: within a stage every SOC cell reads only the immutable layer
// k+1 and writes its own slot, so cells may be split across workers; stages
// run strictly in order. Whole trips are independent and solve_dp_batch runs
// them on separate threads. No state is shared between solves.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "emslab/kernels.hpp"
#include "emslab/powertrain.hpp"
#include "emslab/trip.hpp"

namespace emslab {

struct DpGrid {
    std::vector<double> soc_points;   // uniform, both SOC bounds included
    std::size_t torque_points = 21;   // engine-on torque candidates per stage
    double terminal_soc_penalty = 0.0;  // gal per unit SOC below the target; 0 disables
    double terminal_soc_target = 0.0;

    static DpGrid uniform(const PowertrainParams& params, std::size_t soc_count = 201, std::size_t torque_points = 21);

    /// Throws std::invalid_argument unless soc_points is uniform, strictly
    /// increasing and spans exactly [soc_min, soc_max], and torque_points >= 2.
    void validate(const PowertrainParams& params) const;
};

kernels::SocLattice make_lattice(const DpGrid& grid, const PowertrainParams& params);

/// Discrete inputs tried at one stage: engine off (when the motor alone can
/// meet the demand) followed by `torque_points` engine-on torques spread
/// uniformly over the engine-torque envelope. Battery and SOC constraints are
/// left to the caller because they depend on the state.
std::vector<ControlInput> candidate_inputs(const Disturbance& dist, const PowertrainParams& params,
                                           std::size_t torque_points);

/// Continuous SOC interval from which a feasible continuation exists.
struct SocBand {
    double lo = 1.0;
    double hi = 0.0;

    bool empty() const { return !(lo <= hi); }
    bool contains(double soc) const { return soc >= lo && soc <= hi; }
    friend bool operator==(const SocBand&, const SocBand&) = default;
};

/// SOC s with soc_next(s, battery_power) == target, by fixed-point iteration
/// (the one-step map is a small perturbation of the identity). Empty when the
/// battery cannot deliver the power along the way.
std::optional<double> soc_preimage(double target, double battery_power, const PowertrainParams& params);

class ValueTable {
public:
    ValueTable() = default;
    ValueTable(std::size_t stages, std::vector<double> soc_points);

    std::size_t stages() const { return stages_; }
    std::size_t soc_count() const { return soc_.size(); }
    const std::vector<double>& soc_points() const { return soc_; }

    std::span<const double> layer(std::size_t k, bool engine_on) const;
    std::span<double> layer(std::size_t k, bool engine_on);
    double value(std::size_t k, std::size_t i, bool engine_on) const { return layer(k, engine_on)[i]; }

    /// Piecewise linear in SOC, exact in engine status; +inf outside the
    /// layer's feasible band.
    double interpolate(std::size_t k, const PowertrainState& state) const;

    SocBand band(std::size_t k, bool engine_on) const { return bands_[k * 2 + (engine_on ? 1 : 0)]; }
    void set_band(std::size_t k, bool engine_on, SocBand b) { bands_[k * 2 + (engine_on ? 1 : 0)] = b; }

    std::span<const ControlInput> candidates(std::size_t k) const;
    void set_candidates(std::size_t k, std::span<const ControlInput> inputs);

    /// Index into candidates(k), or -1 for an infeasible cell.
    std::int32_t argmin_index(std::size_t k, std::size_t i, bool engine_on) const;
    std::span<std::int32_t> argmin_layer(std::size_t k, bool engine_on);
    std::optional<ControlInput> argmin_input(std::size_t k, std::size_t i, bool engine_on) const;

    const std::vector<double>& raw_values() const { return values_; }

    void save(const std::filesystem::path& path) const;
    static ValueTable load(const std::filesystem::path& path);

    friend bool operator==(const ValueTable&, const ValueTable&) = default;

private:
    std::size_t stages_ = 0;
    std::vector<double> soc_;
    double origin_ = 0.0;
    double inv_step_ = 0.0;
    std::vector<double> values_;           // [(k * 2 + e) * n + i]
    std::vector<std::int32_t> argmin_;     // [(k * 2 + e) * n + i], k < stages
    std::vector<std::vector<ControlInput>> cand_;  // per stage
    std::vector<SocBand> bands_;                   // [k * 2 + e]
};

/// Layer k from layer k+1 for one stage. `table` must already hold layer k+1;
/// layer k, its argmins and the stage candidate list are overwritten.
void bellman_backup(std::size_t k, const Disturbance& dist, const kernels::SocLattice& lattice,
                    const DpGrid& grid, const PowertrainParams& params, ValueTable& table,
                    kernels::BackupSweepFn sweep = nullptr);

/// SOC offsets at which V_k is also read around each trajectory state, for
/// both engine states. Probe j is engine state j / 5 at offset j % 5.
inline constexpr std::array<double, 5> kProbeSocOffsets{-0.1, -0.05, 0.0, 0.05, 0.1};
inline constexpr std::size_t kProbeCount = 2 * kProbeSocOffsets.size();
using ProbeValues = std::array<double, kProbeCount>;

PowertrainState probe_state(const PowertrainState& x, std::size_t j);

struct OptimalTrajectory {
    std::vector<PowertrainState> states;  // N + 1
    std::vector<ControlInput> inputs;     // N
    std::vector<double> stage_costs;      // N, gal
    std::vector<double> fuel_mass;        // N, kg
    std::vector<double> values;           // N + 1, V_k interpolated at states[k]
    std::vector<ProbeValues> probes;      // N + 1 or empty; +inf outside the SOC range or band
    double total_cost = 0.0;              // sum of stage_costs
    std::size_t fallback_steps = 0;       // steps where no candidate had finite cost-to-go
};

struct DpSolution {
    ValueTable table;
    OptimalTrajectory trajectory;
    double optimal_cost = 0.0;  // V_0 interpolated at x0
};

struct DpOptions {
    kernels::Isa isa = kernels::detected_isa();
};

/// Throws InfeasibleTrip when V_0(x0) is +inf and ValidationError when the
/// trip sample time differs from params.sample_time.
DpSolution solve_dp(const Trip& trip, const PowertrainParams& params, const DpGrid& grid,
                    const PowertrainState& x0, const DpOptions& options = {});

std::vector<DpSolution> solve_dp_batch(std::span<const Trip> trips, const PowertrainParams& params,
                                       const DpGrid& grid, const PowertrainState& x0,
                                       const DpOptions& options = {});

/// Forward pass that re-solves the one-step minimization at the continuous
/// state with the stored k+1 layer.
OptimalTrajectory rollout(const ValueTable& table, const Trip& trip, const PowertrainParams& params,
                          const PowertrainState& x0);

/// Largest |V_k - min(stage cost + interp V_{k+1})| over all finite cells,
/// recomputed through powertrain::step. Infinite cells must have no finite
/// candidate; a mismatch there returns +inf.
double bellman_residual(const ValueTable& table, const Trip& trip, const PowertrainParams& params);

/// Fills trajectory.probes from the table.
void record_probes(const ValueTable& table, const PowertrainParams& params, OptimalTrajectory& trajectory);

struct ValueSample {
    std::size_t step = 0;
    std::size_t bin = 0;
    FeatureVector features;
    double value = 0.0;
};

/// One (features, V*) pair per trajectory state, including the terminal one.
std::vector<ValueSample> values_on_trajectory(const ValueTable& table, const OptimalTrajectory& trajectory,
                                              const Trip& trip, const RouteStats& stats);
/// Same, reading V* from the values recorded in the trajectory.
std::vector<ValueSample> values_on_trajectory(const OptimalTrajectory& trajectory, const Trip& trip,
                                              const RouteStats& stats);

/// Trajectory sidecar: one CSV row per step with state, input, cost, value
/// and, when recorded, the probe values.
void save_trajectory_csv(const OptimalTrajectory& trajectory, const Trip& trip, const std::filesystem::path& path);
OptimalTrajectory load_trajectory_csv(const std::filesystem::path& path);

}  // namespace emslab
