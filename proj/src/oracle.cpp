#include "emslab/oracle.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace emslab::oracle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Ctx {
    const Trip& trip;
    const PowertrainParams& params;
    const DpGrid& grid;
    std::vector<std::vector<ControlInput>> cands;

    Ctx(const Trip& t, const PowertrainParams& p, const DpGrid& g) : trip(t), params(p), grid(g)
    {
        for (std::size_t k = 0; k < t.size(); ++k)
            cands.push_back(candidate_inputs(t.disturbance(k), p, g.torque_points));
    }
};

bool feasible_from(const Ctx& c, std::size_t k, const PowertrainState& x)
{
    if (x.soc < c.params.soc_min || x.soc > c.params.soc_max) return false;
    if (k == c.trip.size()) return true;
    const Disturbance w = c.trip.disturbance(k);
    for (const ControlInput& u : c.cands[k]) {
        const StepResult r = step(x, u, w, c.params);
        if (!r.outputs.infeasible && feasible_from(c, k + 1, r.next)) return true;
    }
    return false;
}

double terminal(const DpGrid& g, double soc)
{
    if (g.terminal_soc_penalty <= 0.0) return 0.0;
    return g.terminal_soc_penalty * std::max(0.0, g.terminal_soc_target - soc);
}

double at_node(const Ctx& c, std::size_t k, std::size_t i, bool e);

// The value at a continuous SOC of stage k from its two grid neighbours.
double blend(const Ctx& c, std::size_t k, const PowertrainState& x)
{
    if (!feasible_from(c, k, x)) return kInf;
    const auto& s = c.grid.soc_points;
    const std::size_t n = s.size();
    const double inv_step = static_cast<double>(n - 1) / (s.back() - s.front());
    double pos = (x.soc - s.front()) * inv_step;
    const double r = std::nearbyint(pos);
    if (std::abs(pos - r) < 1e-9) pos = r;
    const double fl = std::clamp(std::floor(pos), 0.0, static_cast<double>(n - 2));
    const double frac = std::clamp(pos - fl, 0.0, 1.0);
    const auto i = static_cast<std::size_t>(fl);
    if (frac <= 0.0) return at_node(c, k, i, x.engine_on);
    if (frac >= 1.0) return at_node(c, k, i + 1, x.engine_on);
    const double v0 = at_node(c, k, i, x.engine_on);
    const double v1 = at_node(c, k, i + 1, x.engine_on);
    if (std::isinf(v0)) return v1;
    if (std::isinf(v1)) return v0;
    return v0 + frac * (v1 - v0);
}

double at_node(const Ctx& c, std::size_t k, std::size_t i, bool e)
{
    const double soc = c.grid.soc_points[i];
    if (k == c.trip.size()) return terminal(c.grid, soc);
    const Disturbance w = c.trip.disturbance(k);
    double best = kInf;
    for (const ControlInput& u : c.cands[k]) {
        const StepResult r = step({soc, e}, u, w, c.params);
        if (r.outputs.infeasible) continue;
        const double total = stage_cost(r.outputs, c.params) + blend(c, k + 1, r.next);
        if (total < best) best = total;
    }
    return best;
}

void enumerate(const Ctx& c, std::size_t k, const PowertrainState& x, double cost, std::vector<ControlInput>& path,
               SequenceOptimum& best)
{
    if (k == c.trip.size()) {
        ++best.sequences;
        const double total = cost + terminal(c.grid, x.soc);
        if (total < best.cost) {
            best.cost = total;
            best.inputs = path;
        }
        return;
    }
    const Disturbance w = c.trip.disturbance(k);
    for (const ControlInput& u : c.cands[k]) {
        const StepResult r = step(x, u, w, c.params);
        if (r.outputs.infeasible) {
            ++best.sequences;
            continue;
        }
        path.push_back(u);
        enumerate(c, k + 1, r.next, cost + stage_cost(r.outputs, c.params), path, best);
        path.pop_back();
    }
}

}  // namespace

ToyProblem random_toy_problem(std::uint64_t seed, std::size_t max_stages, std::size_t max_soc_points,
                              std::size_t max_torque_points)
{
    std::mt19937_64 rng(seed);
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    auto pick = [&](std::size_t a, std::size_t b) { return std::uniform_int_distribution<std::size_t>(a, b)(rng); };

    ToyProblem p;
    p.params = synthetic_params();
    p.params.battery_capacity = uni(200.0, 500.0);
    p.grid = DpGrid::uniform(p.params, pick(2, std::max<std::size_t>(max_soc_points, 2)),
                             pick(2, std::max<std::size_t>(max_torque_points, 2)));
    p.trip.route_id = "toy";
    p.trip.trip_id = "toy-" + std::to_string(seed);
    p.trip.sample_time = p.params.sample_time;
    const std::size_t n = pick(1, std::max<std::size_t>(max_stages, 1));
    double pos = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        TripSample s;
        s.time = static_cast<double>(k) * p.trip.sample_time;
        s.gear_index = static_cast<int>(pick(1, 4));
        s.vehicle_speed = uni(2.0, 25.0);
        s.axle_speed = s.vehicle_speed / 0.32;
        s.wheel_torque_demand = uni(-400.0, 900.0);
        s.aux_power = uni(0.0, 1500.0);
        s.position = pos;
        pos += s.vehicle_speed * p.trip.sample_time;
        p.trip.samples.push_back(s);
    }
    const double soc = uni(p.params.soc_min, p.params.soc_max);
    p.x0 = {soc, pick(0, 1) == 1};
    return p;
}

bool continuation_exists(const Trip& trip, const PowertrainParams& params, const DpGrid& grid, std::size_t k,
                         const PowertrainState& x)
{
    const Ctx c(trip, params, grid);
    return feasible_from(c, k, x);
}

double interpolated_cost(const Trip& trip, const PowertrainParams& params, const DpGrid& grid,
                         const PowertrainState& x0)
{
    const Ctx c(trip, params, grid);
    return blend(c, 0, x0);
}

SequenceOptimum best_sequence(const Trip& trip, const PowertrainParams& params, const DpGrid& grid,
                              const PowertrainState& x0)
{
    const Ctx c(trip, params, grid);
    SequenceOptimum best;
    best.cost = kInf;
    std::vector<ControlInput> path;
    enumerate(c, 0, x0, 0.0, path, best);
    return best;
}

double sequence_cost(const Trip& trip, const PowertrainParams& params, const PowertrainState& x0,
                     const std::vector<ControlInput>& inputs)
{
    if (inputs.size() != trip.size()) return kInf;
    PowertrainState x = x0;
    double total = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const StepResult r = step(x, inputs[k], trip.disturbance(k), params);
        if (r.outputs.infeasible) return kInf;
        total += stage_cost(r.outputs, params);
        x = r.next;
    }
    return total;
}

}  // namespace emslab::oracle
