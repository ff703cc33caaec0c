#include "emslab/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "emslab/errors.hpp"
#include "emslab/mpc.hpp"

namespace emslab {

using nlohmann::json;

double CdCsConfig::target(const PowertrainParams& params) const
{
    return cs_target < 0.0 ? params.soc_min + cs_band : cs_target;
}

void CdCsConfig::validate(const PowertrainParams& params) const
{
    if (!(cs_band > 0.0)) throw std::invalid_argument("CdCsConfig: cs_band must be positive");
    const double t = target(params);
    if (t < params.soc_min || !(t < params.soc_max)) throw std::invalid_argument("CdCsConfig: cs_target outside SOC range");
    if (charge_gain < 0.0 || max_charge_power < 0.0) throw std::invalid_argument("CdCsConfig: negative charging gain");
}

ControlInput cdcs_step(const PowertrainState& x, const Disturbance& w, const PowertrainParams& params,
                       const CdCsConfig& cfg, CdCsState& st)
{
    const double target = cfg.target(params);
    const double upper = target + 0.5 * cfg.cs_band;
    if (x.soc <= target) st.sustaining = true;
    const FeasibleInputSet fs = try_feasible_input_set(x, w, params);

    if (st.sustaining) {
        if (x.soc < target) st.engine_request = true;
        else if (x.soc > upper) st.engine_request = false;
        if (st.engine_request && fs.engine_on) {
            const double omega = shaft_speed(w, params);
            const double g = params.gear_ratios[static_cast<std::size_t>(w.gear_index - 1)];
            const double demand = w.wheel_torque_demand / (g * params.trans_eff);
            const double charge = std::min(cfg.max_charge_power, cfg.charge_gain * std::max(0.0, upper - x.soc));
            const double te = omega > 0.0 ? (demand + charge / omega) / params.clutch_eff : 0.0;
            return {std::clamp(te, fs.engine_on->lo, fs.engine_on->hi), true};
        }
    }
    if (fs.engine_off) return {0.0, false};
    if (fs.engine_on) return {fs.engine_on->lo, true};
    return fallback_input(w, params);
}

// ---------------------------------------------------------------------------

double RepresentativeSocProfile::at(double position) const
{
    if (soc.empty()) throw std::logic_error("empty SOC profile");
    const double first = bins.bin_center(0);
    if (position <= first) return soc.front();
    const double u = (position - first) / bins.bin_length;
    const auto i = static_cast<std::size_t>(std::floor(u));
    if (i + 1 >= soc.size()) return soc.back();
    const double f = u - static_cast<double>(i);
    return soc[i] + f * (soc[i + 1] - soc[i]);
}

RepresentativeSocProfile RepresentativeSocProfile::constant(const RouteBins& bins, double value)
{
    RepresentativeSocProfile p;
    p.route_id = bins.route_id;
    p.bins = bins;
    p.soc.assign(bins.bin_count, value);
    return p;
}

double soc_at_position(const Trip& trip, const OptimalTrajectory& trajectory, double position)
{
    const std::size_t n = trip.size();
    auto pos_of = [&](std::size_t k) { return k < n ? trip.samples[k].position : trip.total_distance(); };
    if (position <= pos_of(0)) return trajectory.states.front().soc;
    for (std::size_t k = 1; k <= n; ++k) {
        const double p1 = pos_of(k);
        if (p1 < position) continue;
        const double p0 = pos_of(k - 1);
        const double f = p1 > p0 ? (position - p0) / (p1 - p0) : 1.0;
        return trajectory.states[k - 1].soc + f * (trajectory.states[k].soc - trajectory.states[k - 1].soc);
    }
    return trajectory.states.back().soc;
}

RepresentativeSocProfile representative_profile(std::span<const SolvedTrip> solved, const RouteBins& bins)
{
    if (solved.empty()) throw EmptyCorpus("representative_profile: no solved trips");
    RepresentativeSocProfile p = RepresentativeSocProfile::constant(bins, 0.0);
    for (const auto& s : solved)
        for (std::size_t b = 0; b < bins.bin_count; ++b) p.soc[b] += soc_at_position(s.trip, s.trajectory, bins.bin_center(b));
    for (double& v : p.soc) v /= static_cast<double>(solved.size());
    return p;
}

json profile_to_json(const RepresentativeSocProfile& p)
{
    return {{"kind", "emslab-soc-profile"},
            {"schema_version", 1},
            {"route_id", p.route_id},
            {"bin_length", p.bins.bin_length},
            {"bin_count", p.bins.bin_count},
            {"total_distance", p.bins.total_distance},
            {"soc", p.soc}};
}

RepresentativeSocProfile profile_from_json(const json& j)
{
    try {
        RepresentativeSocProfile p;
        p.route_id = j.at("route_id").get<std::string>();
        p.bins.route_id = p.route_id;
        p.bins.bin_length = j.at("bin_length").get<double>();
        p.bins.bin_count = j.at("bin_count").get<std::size_t>();
        p.bins.total_distance = j.at("total_distance").get<double>();
        p.soc = j.at("soc").get<std::vector<double>>();
        if (p.soc.size() != p.bins.bin_count) throw ValidationError("SOC profile length differs from bin count");
        return p;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("SOC profile: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

void AecmsConfig::validate() const
{
    if (!(s0 > 0.0)) throw std::invalid_argument("AecmsConfig: s0 must be positive");
    if (kp < 0.0 || ki < 0.0) throw std::invalid_argument("AecmsConfig: gains must be nonnegative");
    if (torque_candidates < 2) throw std::invalid_argument("AecmsConfig: torque_candidates must be >= 2");
}

double aecms_update_factor(double error, double sample_time, const AecmsConfig& cfg, AecmsState& st)
{
    const double lo = 0.5 * cfg.s0;
    const double hi = 2.0 * cfg.s0;
    const double trial = st.integral + error * sample_time;
    const double raw = cfg.s0 + cfg.kp * error + cfg.ki * trial;
    const bool pushes_out = (raw > hi && error > 0.0) || (raw < lo && error < 0.0);
    if (!pushes_out) st.integral = trial;
    st.factor = std::clamp(cfg.s0 + cfg.kp * error + cfg.ki * st.integral, lo, hi);
    return st.factor;
}

ControlInput aecms_choose(const PowertrainState& x, const Disturbance& w, double factor,
                          const PowertrainParams& params, const AecmsConfig& cfg)
{
    auto score = [&](const std::vector<ControlInput>& inputs) {
        std::vector<CandidateCost> out;
        for (const ControlInput& u : inputs) {
            const StepResult r = step(x, u, w, params);
            if (r.outputs.infeasible) continue;
            const double j = params.sample_time *
                             (r.outputs.fuel_power + factor * r.outputs.battery_internal_power) /
                             params.joules_per_gallon();
            out.push_back({u, j, stage_cost(r.outputs, params)});
        }
        return out;
    };
    auto scored = score(candidate_inputs(w, params, cfg.torque_candidates));
    if (scored.empty()) {
        const FeasibleInputSet fs = try_feasible_input_set(x, w, params);
        std::vector<ControlInput> edges;
        if (fs.engine_off) edges.push_back({0.0, false});
        if (fs.engine_on) edges.insert(edges.end(), {{fs.engine_on->lo, true}, {fs.engine_on->hi, true}});
        scored = score(edges);
    }
    if (scored.empty()) return fallback_input(w, params);
    return tie_break(scored, cfg.tie_epsilon);
}

ControlInput aecms_step(const PowertrainState& x, const Disturbance& w, double soc_ref, const PowertrainParams& params,
                        const AecmsConfig& cfg, AecmsState& st)
{
    const double s = aecms_update_factor(soc_ref - x.soc, params.sample_time, cfg, st);
    return aecms_choose(x, w, s, params, cfg);
}

}  // namespace emslab
