#include "emslab/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace emslab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Horizon {
    const Disturbance& w;
    const CostToGo& vhat;
    const PowertrainParams& params;
    const MpcConfig& cfg;
    const std::vector<ControlInput>& cands;
    double route_end;
    double speed;
    double accel;
    double aux;
};

// Cost of applying a step whose result is `r` at horizon depth `depth`
// (0 = the step being decided), plus the rest of the horizon.
double chained_cost(const Horizon& h, const StepResult& r, const FeatureTracker& tracker, std::size_t stage,
                    double position, std::size_t depth)
{
    const double pos_next = std::min(position + h.speed * h.cfg.sample_time, h.route_end);
    const FeatureVector f = tracker.predict(r.next, r.outputs.fuel_mass, pos_next);
    const std::size_t bin = tracker.stats().bins.bin_of(pos_next);
    double total = stage_cost(r.outputs, h.params) + h.vhat.value(stage + 1, r.next, f, bin);
    if (depth + 1 >= h.cfg.horizon || !std::isfinite(total)) return total;

    FeatureTracker ahead = tracker;
    ahead.add_fuel(r.outputs.fuel_mass);
    TripSample frozen;
    frozen.position = pos_next;
    frozen.vehicle_speed = h.speed;
    frozen.aux_power = h.aux;
    ahead.observe(frozen, h.accel);
    double best = kInf;
    for (const ControlInput& u : h.cands) {
        const StepResult rn = step(r.next, u, h.w, h.params);
        if (rn.outputs.infeasible) continue;
        best = std::min(best, chained_cost(h, rn, ahead, stage + 1, pos_next, depth + 1));
    }
    return total + best;
}

std::vector<CandidateCost> score(const Horizon& h, const PowertrainState& x, const FeatureTracker& tracker,
                                 const MpcContext& ctx, const std::vector<ControlInput>& inputs)
{
    std::vector<CandidateCost> out;
    for (const ControlInput& u : inputs) {
        const StepResult r = step(x, u, h.w, h.params);
        if (r.outputs.infeasible) continue;
        out.push_back({u, chained_cost(h, r, tracker, ctx.step, ctx.position, 0), stage_cost(r.outputs, h.params)});
    }
    return out;
}

}  // namespace

void MpcConfig::validate() const
{
    if (horizon < 1) throw std::invalid_argument("MpcConfig: horizon must be >= 1");
    if (torque_candidates < 2) throw std::invalid_argument("MpcConfig: torque_candidates must be >= 2");
    if (!(sample_time > 0.0)) throw std::invalid_argument("MpcConfig: sample_time must be positive");
    if (tie_epsilon < 0.0) throw std::invalid_argument("MpcConfig: negative tie epsilon");
}

FeatureVector predict_features(const FeatureTracker& history, const PowertrainState& next,
                               const StepOutputs& outputs, double position_next)
{
    return history.predict(next, outputs.fuel_mass, position_next);
}

double next_position(const MpcContext& ctx, const RouteStats& stats, double sample_time)
{
    return std::clamp(ctx.position + ctx.vehicle_speed * sample_time, 0.0, stats.bins.total_distance);
}

std::vector<CandidateCost> evaluate_candidates(const PowertrainState& x, const Disturbance& w, const CostToGo& vhat,
                                               const MpcContext& ctx, const PowertrainParams& params,
                                               const MpcConfig& cfg)
{
    if (!ctx.history) throw std::invalid_argument("mpc: context has no history");
    const auto cands = candidate_inputs(w, params, cfg.torque_candidates);
    const Horizon h{w, vhat, params, cfg, cands, ctx.history->stats().bins.total_distance,
                    ctx.vehicle_speed, ctx.accel, ctx.aux_power};
    auto out = score(h, x, *ctx.history, ctx, cands);
    if (!out.empty()) return out;

    // The grid missed a thin feasible interval: try its exact end points.
    const FeasibleInputSet fs = try_feasible_input_set(x, w, params);
    std::vector<ControlInput> edges;
    if (fs.engine_off) edges.push_back({0.0, false});
    if (fs.engine_on) {
        edges.push_back({fs.engine_on->lo, true});
        if (fs.engine_on->hi != fs.engine_on->lo) edges.push_back({fs.engine_on->hi, true});
    }
    return score(h, x, *ctx.history, ctx, edges);
}

ControlInput tie_break(const std::vector<CandidateCost>& candidates, double epsilon)
{
    if (candidates.empty()) throw std::invalid_argument("tie_break: no candidates");
    double best = kInf;
    for (const auto& c : candidates) best = std::min(best, c.cost);
    const CandidateCost* pick = nullptr;
    for (const auto& c : candidates) {
        if (!(c.cost <= best + epsilon) && !(std::isinf(best) && std::isinf(c.cost))) continue;
        if (!pick) {
            pick = &c;
            continue;
        }
        const bool c_off = !c.input.engine_switch;
        const bool p_off = !pick->input.engine_switch;
        if (c_off != p_off) {
            if (c_off) pick = &c;
            continue;
        }
        if (std::abs(c.input.engine_torque) < std::abs(pick->input.engine_torque)) pick = &c;
    }
    return pick->input;
}

ControlInput fallback_input(const Disturbance& w, const PowertrainParams& params)
{
    const double shaft = shaft_speed(w, params);
    const double g = params.gear_ratios[static_cast<std::size_t>(w.gear_index - 1)];
    const double needed = w.wheel_torque_demand / (g * params.trans_eff);
    if (needed > params.motor_torque_max_map(shaft)) {
        const double te_max = params.engine_torque_max_map(shaft);
        if (te_max > 0.0) return {te_max, true};
    }
    return {0.0, false};
}

MpcStepResult mpc_step(const PowertrainState& x, const Disturbance& w, const CostToGo& vhat, const MpcContext& ctx,
                       const PowertrainParams& params, const MpcConfig& cfg)
{
    MpcStepResult res;
    const auto cands = evaluate_candidates(x, w, vhat, ctx, params, cfg);
    res.candidate_count = cands.size();
    if (cands.empty()) {
        res.chosen = fallback_input(w, params);
        res.fallback_used = true;
        const StepResult r = step(x, res.chosen, w, params);
        res.predicted_cost = stage_cost(r.outputs, params);
        return res;
    }
    res.chosen = tie_break(cands, cfg.tie_epsilon);
    for (const auto& c : cands)
        if (c.input == res.chosen) res.predicted_cost = c.cost;
    return res;
}

MpcStepResult mpc_step(const PowertrainState& x, const Disturbance& w, const PolicyParams& policy,
                       const MpcContext& ctx, const PowertrainParams& params, const MpcConfig& cfg)
{
    const LearnedCostToGo vhat(policy);
    return mpc_step(x, w, vhat, ctx, params, cfg);
}

}  // namespace emslab
