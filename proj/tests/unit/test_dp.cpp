#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "emslab/dp.hpp"
#include "emslab/errors.hpp"
#include "emslab/oracle.hpp"
#include "helpers.hpp"

using namespace emslab;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Independent one-cell minimization through powertrain::step.
double cell_minimum(const ValueTable& table, std::size_t k, const PowertrainState& x, const Disturbance& w,
                    const PowertrainParams& p)
{
    double best = kInf;
    for (const ControlInput& u : candidate_inputs(w, p, 21)) {
        const StepResult r = step(x, u, w, p);
        if (r.outputs.infeasible) continue;
        best = std::min(best, stage_cost(r.outputs, p) + table.interpolate(k + 1, r.next));
    }
    return best;
}

Trip short_trip(std::uint64_t seed, double length = 2000.0)
{
    return generate_trip(test::short_route(length), seed);
}

}  // namespace

TEST_SUITE("dp")
{
    TEST_CASE("grid validation")
    {
        const PowertrainParams p = synthetic_params();
        DpGrid g = DpGrid::uniform(p, 201, 21);
        CHECK(g.soc_points.front() == p.soc_min);
        CHECK(g.soc_points.back() == p.soc_max);
        CHECK_NOTHROW(g.validate(p));
        g.torque_points = 1;
        CHECK_THROWS_AS(g.validate(p), std::invalid_argument);
        DpGrid h = DpGrid::uniform(p, 11, 5);
        h.soc_points[3] = h.soc_points[2];
        CHECK_THROWS_AS(h.validate(p), std::invalid_argument);
        CHECK_THROWS_AS(DpGrid::uniform(p, 1, 5), std::invalid_argument);
    }

    TEST_CASE("zero-demand trip costs nothing and never starts the engine")
    {
        const PowertrainParams p = synthetic_params();
        const Trip t = test::zero_demand_trip(25);
        for (double soc : {p.soc_min, 0.47, p.soc_max}) {
            const DpSolution s = solve_dp(t, p, DpGrid::uniform(p, 21, 5), {soc, false});
            CHECK(s.optimal_cost == 0.0);
            CHECK(s.trajectory.total_cost == 0.0);
            for (const ControlInput& u : s.trajectory.inputs) CHECK_FALSE(u.engine_switch);
            for (const PowertrainState& x : s.trajectory.states) CHECK(x.soc == soc);
        }
    }

    TEST_CASE("backup with zero cost-to-go and zero demand is zero with the engine off")
    {
        const PowertrainParams p = synthetic_params();
        const Trip t = test::zero_demand_trip(1);
        const DpSolution s = solve_dp(t, p, DpGrid::uniform(p, 11, 5), {0.5, false});
        for (std::size_t i = 0; i < 11; ++i) {
            CHECK(s.table.value(0, i, false) == 0.0);
            const auto u = s.table.argmin_input(0, i, false);
            REQUIRE(u);
            CHECK(u->engine_torque == 0.0);
            CHECK_FALSE(u->engine_switch);
        }
    }

    TEST_CASE("terminal layer is zero and the stored layers satisfy the Bellman equation")
    {
        const PowertrainParams p = synthetic_params();
        const Trip t = short_trip(3, 800.0);
        const DpSolution s = solve_dp(t, p, DpGrid::uniform(p, 41, 11), {0.6, false});
        for (bool e : {false, true})
            for (double v : s.table.layer(t.size(), e)) CHECK(v == 0.0);
        CHECK(bellman_residual(s.table, t, p) == 0.0);
        for (std::size_t k = 0; k <= t.size(); ++k)
            for (bool e : {false, true})
                for (double v : s.table.layer(k, e)) CHECK((std::isinf(v) ? v > 0.0 : std::isfinite(v)));
    }

    TEST_CASE("layer matches recursive enumeration on a 3-stage 5-point instance")
    {
        oracle::ToyProblem toy = oracle::random_toy_problem(42, 6, 7, 5);
        toy.trip.samples.resize(3);
        toy.grid = DpGrid::uniform(toy.params, 5, 4);
        ValueTable table(3, toy.grid.soc_points);
        {
            const DpSolution s = [&] {
                try {
                    return solve_dp(toy.trip, toy.params, toy.grid, toy.x0);
                } catch (const InfeasibleTrip&) {
                    toy.x0 = {toy.params.soc_max, false};
                    return solve_dp(toy.trip, toy.params, toy.grid, toy.x0);
                }
            }();
            table = s.table;
        }
        for (std::size_t i = 0; i < 5; ++i)
            for (bool e : {false, true}) {
                const double ref = oracle::interpolated_cost(toy.trip, toy.params, toy.grid, {toy.grid.soc_points[i], e});
                const double got = table.value(0, i, e);
                CHECK((ref == got || (std::isinf(ref) && std::isinf(got))));
            }
    }

    TEST_CASE("DP cost equals enumeration on random toy instances")
    {
        int compared = 0;
        for (std::uint64_t seed = 0; seed < 60; ++seed) {
            const oracle::ToyProblem toy = oracle::random_toy_problem(seed);
            const double ref = oracle::interpolated_cost(toy.trip, toy.params, toy.grid, toy.x0);
            double got = kInf;
            try {
                const DpSolution s = solve_dp(toy.trip, toy.params, toy.grid, toy.x0);
                got = s.optimal_cost;
                // The rollout applies real inputs; their cost is reproduced by direct simulation and
                // never beats the best input sequence.
                const double replay = oracle::sequence_cost(toy.trip, toy.params, toy.x0, s.trajectory.inputs);
                CHECK(replay == s.trajectory.total_cost);
                const oracle::SequenceOptimum best = oracle::best_sequence(toy.trip, toy.params, toy.grid, toy.x0);
                CHECK(best.cost <= s.trajectory.total_cost);
                ++compared;
            } catch (const InfeasibleTrip&) {
            }
            CHECK((ref == got || (std::isinf(ref) && std::isinf(got))));
        }
        CHECK(compared >= 50);
    }

    TEST_CASE("single feasible candidate reduces the backup to that candidate's cost")
    {
        const PowertrainParams p = synthetic_params();
        // Demand beyond the motor alone, two engine torques: near the SOC ceiling only the lower torque
        // keeps the next SOC in range.
        const Trip t = test::make_trip({{40.0, 1600.0, 0.0, 1}, {0.0, 0.0, 0.0, 1}});
        const DpSolution s = solve_dp(t, p, DpGrid::uniform(p, 201, 2), {0.6, true});
        const auto& soc = s.table.soc_points();
        std::size_t single = 0;
        for (std::size_t i = 0; i < soc.size(); ++i) {
            std::vector<double> costs;
            for (const ControlInput& u : s.table.candidates(0)) {
                const StepResult r = step({soc[i], true}, u, t.disturbance(0), p);
                if (!r.outputs.infeasible) costs.push_back(stage_cost(r.outputs, p) + s.table.interpolate(1, r.next));
            }
            if (costs.size() != 1) continue;
            ++single;
            CHECK(s.table.value(0, i, true) == costs.front());
        }
        CHECK(single > 0);
    }

    TEST_CASE("refining the torque grid never raises a value")
    {
        const PowertrainParams p = synthetic_params();
        const Trip t = short_trip(5, 600.0);
        const DpSolution coarse = solve_dp(t, p, DpGrid::uniform(p, 41, 11), {0.5, false});
        const DpSolution fine = solve_dp(t, p, DpGrid::uniform(p, 41, 21), {0.5, false});
        for (std::size_t k = 0; k <= t.size(); ++k)
            for (bool e : {false, true}) {
                const auto a = coarse.table.layer(k, e);
                const auto b = fine.table.layer(k, e);
                for (std::size_t i = 0; i < a.size(); ++i)
                    if (std::isfinite(a[i])) CHECK(b[i] <= a[i]);
            }
    }

    TEST_CASE("rollout tracks V0 more closely on a finer SOC grid")
    {
        const PowertrainParams p = synthetic_params();
        double gap_coarse = 0.0, gap_fine = 0.0;
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            const Trip t = short_trip(seed, 1500.0);
            const DpSolution c = solve_dp(t, p, DpGrid::uniform(p, 26, 21), {p.soc_max, false});
            const DpSolution f = solve_dp(t, p, DpGrid::uniform(p, 201, 21), {p.soc_max, false});
            gap_coarse += std::abs(c.trajectory.total_cost - c.optimal_cost);
            gap_fine += std::abs(f.trajectory.total_cost - f.optimal_cost);
            CHECK(std::abs(f.trajectory.total_cost - f.optimal_cost) <= 0.02 * f.optimal_cost);
        }
        CHECK(gap_fine < gap_coarse);
    }

    TEST_CASE("rollout SOC stays within bounds on random synthetic trips")
    {
        const PowertrainParams p = synthetic_params();
        std::vector<Trip> trips;
        for (std::uint64_t seed = 0; seed < 20; ++seed) trips.push_back(short_trip(100 + seed, 1200.0));
        const auto sols = solve_dp_batch(trips, p, DpGrid::uniform(p, 101, 11), {p.soc_max, false});
        for (const DpSolution& s : sols) {
            CHECK(s.trajectory.fallback_steps == 0);
            for (const PowertrainState& x : s.trajectory.states) {
                CHECK(x.soc >= p.soc_min);
                CHECK(x.soc <= p.soc_max);
            }
        }
    }

    TEST_CASE("batch solving matches one-at-a-time solving")
    {
        const PowertrainParams p = synthetic_params();
        const std::vector<Trip> trips{short_trip(1, 500.0), short_trip(2, 500.0), short_trip(3, 500.0)};
        const DpGrid g = DpGrid::uniform(p, 31, 7);
        const auto batch = solve_dp_batch(trips, p, g, {0.7, false});
        for (std::size_t i = 0; i < trips.size(); ++i) {
            const DpSolution one = solve_dp(trips[i], p, g, {0.7, false});
            CHECK(one.table == batch[i].table);
            CHECK(one.trajectory.total_cost == batch[i].trajectory.total_cost);
        }
    }

    TEST_CASE("stage costs can be negative while the trip total stays bounded")
    {
        const PowertrainParams p = synthetic_params();
        const Trip t = generate_trip(test::builtin("arterial"), 0);
        const DpSolution s = solve_dp(t, p, DpGrid::uniform(p, 51, 11), {p.soc_max, false});
        const bool any_negative =
            std::any_of(s.trajectory.stage_costs.begin(), s.trajectory.stage_costs.end(), [](double c) { return c < 0.0; });
        CHECK(any_negative);
        // Electricity cannot return more than the usable battery energy.
        const double max_credit = p.battery_capacity * 382.0 * (p.soc_max - p.soc_min) / p.joules_per_gallon();
        CHECK(s.trajectory.total_cost >= -max_credit);
    }

    TEST_CASE("values along the trajectory")
    {
        const PowertrainParams p = synthetic_params();
        const Trip t = short_trip(2, 1000.0);
        const DpSolution s = solve_dp(t, p, DpGrid::uniform(p, 101, 11), {0.8, false});
        const std::vector<Trip> v{t};
        const RouteStats stats = build_route_stats(v, make_bins(v, 100.0));
        const auto samples = values_on_trajectory(s.table, s.trajectory, t, stats);
        CHECK(samples.size() == t.size() + 1);
        CHECK(samples.back().value == 0.0);
        CHECK(samples.front().value == s.optimal_cost);
        const auto from_sidecar = values_on_trajectory(s.trajectory, t, stats);
        REQUIRE(from_sidecar.size() == samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) CHECK(from_sidecar[i].value == samples[i].value);
    }

    TEST_CASE("value is nonincreasing along a drive-only trajectory")
    {
        const PowertrainParams p = synthetic_params();
        // Flat cruise with strictly positive demand: no regeneration.
        std::vector<test::StepSpec> steps;
        for (int k = 0; k < 300; ++k) steps.push_back({40.0 + 10.0 * std::sin(k * 0.05), 250.0 + 50.0 * std::cos(k * 0.07), 500.0, 3});
        const Trip t = test::make_trip(steps);
        const DpSolution s = solve_dp(t, p, DpGrid::uniform(p, 201, 21), {0.7, false});
        for (double c : s.trajectory.stage_costs) CHECK(c >= 0.0);
        for (std::size_t k = 1; k < s.trajectory.values.size(); ++k)
            CHECK(s.trajectory.values[k] <= s.trajectory.values[k - 1] + 1e-12);
    }

    TEST_CASE("infeasible and mismatched inputs")
    {
        const PowertrainParams p = synthetic_params();
        Trip t = test::make_trip({{30.0, 1.0e5, 0.0, 1}});
        CHECK_THROWS_AS(solve_dp(t, p, DpGrid::uniform(p, 11, 3), {0.5, false}), InfeasibleTrip);
        Trip slow = test::zero_demand_trip(3);
        slow.sample_time = 1.0;
        CHECK_THROWS_AS(solve_dp(slow, p, DpGrid::uniform(p, 11, 3), {0.5, false}), ValidationError);
        CHECK_THROWS_AS(solve_dp(test::zero_demand_trip(3), p, DpGrid::uniform(p, 11, 3), {0.95, false}),
                        ValidationError);
    }

    TEST_CASE("value table and trajectory files round trip")
    {
        const PowertrainParams p = synthetic_params();
        const Trip t = short_trip(4, 400.0);
        const DpSolution s = solve_dp(t, p, DpGrid::uniform(p, 21, 5), {0.6, false});
        test::TempDir dir("dp");
        s.table.save(dir.path / "t.vt");
        CHECK(ValueTable::load(dir.path / "t.vt") == s.table);
        save_trajectory_csv(s.trajectory, t, dir.path / "t.traj.csv");
        const OptimalTrajectory back = load_trajectory_csv(dir.path / "t.traj.csv");
        REQUIRE(back.states.size() == s.trajectory.states.size());
        CHECK(back.total_cost == s.trajectory.total_cost);
        for (std::size_t k = 0; k < back.states.size(); ++k) {
            CHECK(back.states[k].soc == s.trajectory.states[k].soc);
            CHECK(back.values[k] == s.trajectory.values[k]);
            CHECK(back.probes[k] == s.trajectory.probes[k]);
        }
        for (std::size_t k = 0; k < back.inputs.size(); ++k) CHECK(back.inputs[k] == s.trajectory.inputs[k]);
    }

    TEST_CASE("random cells reproduce the stored values")
    {
        const PowertrainParams p = synthetic_params();
        const Trip t = short_trip(8, 1500.0);
        const DpSolution s = solve_dp(t, p, DpGrid::uniform(p, 201, 21), {p.soc_max, false});
        std::mt19937_64 rng(5);
        std::uniform_int_distribution<std::size_t> stage(0, t.size() - 1), node(0, 200);
        for (int i = 0; i < 300; ++i) {
            const std::size_t k = stage(rng);
            const std::size_t j = node(rng);
            const bool e = i % 2 == 1;
            const double ref = cell_minimum(s.table, k, {s.table.soc_points()[j], e}, t.disturbance(k), p);
            const double got = s.table.value(k, j, e);
            CHECK((ref == got || (std::isinf(ref) && std::isinf(got))));
        }
    }
}
