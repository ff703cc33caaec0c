#pragma once

// Brute-force references for small DP instances.

#include <cstdint>
#include <vector>

#include "emslab/dp.hpp"

namespace emslab::oracle {

struct ToyProblem {
    Trip trip;
    PowertrainParams params;
    DpGrid grid;
    PowertrainState x0;
};

/// Random instance: 1..max_stages stages, 2..max_soc_points SOC points,
/// 2..max_torque_points engine torques, battery capacity small enough that
/// SOC crosses grid cells within a few steps.
ToyProblem random_toy_problem(std::uint64_t seed, std::size_t max_stages = 6, std::size_t max_soc_points = 7,
                              std::size_t max_torque_points = 5);

/// True when some input sequence from the candidate grid keeps every step
/// feasible from (k, x) to the end.
bool continuation_exists(const Trip& trip, const PowertrainParams& params, const DpGrid& grid, std::size_t k,
                         const PowertrainState& x);

/// Optimal cost on the grid by recursive enumeration of every input at every
/// stage, with the next state read from the two neighbouring grid points of
/// stage k+1 under the table's interpolation rule. No table is stored; +inf
/// when no feasible continuation exists.
double interpolated_cost(const Trip& trip, const PowertrainParams& params, const DpGrid& grid,
                         const PowertrainState& x0);

struct SequenceOptimum {
    double cost = 0.0;  // +inf when no sequence is feasible
    std::vector<ControlInput> inputs;
    std::size_t sequences = 0;  // number enumerated
};

/// Minimum total stage cost over every input sequence drawn from the
/// candidate grid, evaluated on the continuous state.
SequenceOptimum best_sequence(const Trip& trip, const PowertrainParams& params, const DpGrid& grid,
                              const PowertrainState& x0);

/// Total stage cost of applying `inputs` from x0; +inf if any step is infeasible.
double sequence_cost(const Trip& trip, const PowertrainParams& params, const PowertrainState& x0,
                     const std::vector<ControlInput>& inputs);

}  // namespace emslab::oracle
