#include "emslab/powertrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "emslab/battery_math.hpp"
#include "emslab/errors.hpp"

namespace emslab {

using nlohmann::json;

namespace {

constexpr double kMotorTorqueTol = 1e-9;  // N*m slack on the traction limit check
constexpr int kBisectionSteps = 100;

void require(bool cond, const std::string& msg)
{
    if (!cond) throw std::invalid_argument("powertrain params: " + msg);
}

void require_eff_map(const Table2D& map, const char* name)
{
    require(!map.values().empty(), std::string{name} + " is missing");
    require(map.min_value() > 0.0 && map.max_value() <= 1.0, std::string{name} + " must lie in (0,1]");
}

}  // namespace

void PowertrainParams::validate() const
{
    require(std::isfinite(battery_capacity) && battery_capacity > 0.0, "battery_capacity must be positive");
    require(!voc_map.empty() && !rb_map.empty(), "voc_map and rb_map are required");
    for (double v : voc_map.values()) require(v > 0.0, "voc_map must be positive");
    for (double r : rb_map.values()) require(r > 0.0, "rb_map must be positive");
    require_eff_map(motor_eff_map, "motor_eff_map");
    require_eff_map(engine_eff_map, "engine_eff_map");
    require(std::isfinite(fuel_lhv) && fuel_lhv > 0.0, "fuel_lhv must be positive");
    for (double g : gear_ratios) require(std::isfinite(g) && g > 0.0, "gear ratios must be positive");
    require(trans_eff > 0.0 && trans_eff <= 1.0, "trans_eff must lie in (0,1]");
    require(clutch_eff > 0.0 && clutch_eff <= 1.0, "clutch_eff must lie in (0,1]");
    require(std::isfinite(hsg_start_power) && hsg_start_power >= 0.0, "hsg_start_power must be >= 0");
    require(hsg_start_duration == 0.5, "hsg_start_duration must be exactly 0.5 s");
    require(!engine_torque_min_map.empty() && !engine_torque_max_map.empty(), "engine torque bounds are required");
    require(!motor_torque_min_map.empty() && !motor_torque_max_map.empty(), "motor torque bounds are required");
    for (double t : engine_torque_min_map.values()) require(t >= 0.0, "engine_torque_min must be >= 0");
    for (double t : motor_torque_max_map.values()) require(t >= 0.0, "motor_torque_max must be >= 0");
    for (double t : motor_torque_min_map.values()) require(t <= 0.0, "motor_torque_min must be <= 0");
    require(soc_min >= 0.0 && soc_max <= 1.0 && soc_min < soc_max, "need 0 <= soc_min < soc_max <= 1");
    require(std::isfinite(sample_time) && sample_time > 0.0, "sample_time must be positive");
    require(std::isfinite(kwh_per_gallon) && kwh_per_gallon > 0.0, "kwh_per_gallon must be positive");
}

// ---------------------------------------------------------------------------
// Synthetic parameter set

PowertrainParams synthetic_params()
{
    PowertrainParams p;
    p.battery_capacity = 30000.0;  // 8.33 Ah, about 3 kWh at 360 V
    p.voc_map = Table1D({0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0},
                        {320.0, 335.0, 342.0, 347.0, 351.0, 355.0, 359.0, 363.0, 368.0, 374.0, 382.0});
    p.rb_map = Table1D({0.0, 0.1, 0.2, 0.3, 0.5, 0.8, 1.0}, {0.16, 0.13, 0.115, 0.11, 0.105, 0.105, 0.11});

    // Motor: 50 kW / 250 N*m machine; efficiency from a copper + iron + windage loss model.
    const std::vector<double> speed_grid = linspace(0.0, 700.0, 15);
    {
        const std::vector<double> torque_grid = linspace(-250.0, 250.0, 21);
        std::vector<double> eff;
        for (double t : torque_grid) {
            for (double w : speed_grid) {
                const double mech = std::abs(t * w);
                const double loss = 0.06 * t * t + 1.5 * w + 0.004 * w * w + 100.0;
                const double e = mech > 0.0 ? mech / (mech + loss) : 0.0;
                eff.push_back(std::clamp(e, 0.5, 0.97));
            }
        }
        p.motor_eff_map = Table2D(torque_grid, speed_grid, std::move(eff));
        std::vector<double> tmax;
        std::vector<double> tmin;
        for (double w : speed_grid) {
            const double t = w > 0.0 ? std::min(250.0, 50000.0 / w) : 250.0;
            tmax.push_back(t);
            tmin.push_back(-t);
        }
        p.motor_torque_max_map = Table1D(speed_grid, tmax);
        p.motor_torque_min_map = Table1D(speed_grid, tmin);
    }

    // Engine: 2.0 L class, indicated efficiency 0.41 at its sweet spot, friction torque growing with speed.
    {
        const std::vector<double> torque_grid = linspace(0.0, 260.0, 27);
        std::vector<double> eff;
        for (double t : torque_grid) {
            for (double w : speed_grid) {
                const double eta_ind = 0.41 - 0.00015 * std::abs(w - 250.0);
                const double t_fric = 14.0 + 0.02 * w;
                const double e = t > 0.0 ? eta_ind * t / (t + t_fric) : 0.0;
                eff.push_back(std::clamp(e, 0.05, 1.0));
            }
        }
        p.engine_eff_map = Table2D(torque_grid, speed_grid, std::move(eff));
        const std::vector<double> w_env{0.0, 80.0, 84.0, 150.0, 250.0, 400.0, 550.0, 650.0, 700.0};
        p.engine_torque_max_map = Table1D(w_env, {0.0, 0.0, 140.0, 230.0, 250.0, 250.0, 230.0, 180.0, 0.0});
        p.engine_torque_min_map = Table1D({0.0, 700.0}, {0.0, 0.0});
    }

    p.fuel_lhv = 43.4e6;
    p.gear_ratios = {14.0, 9.0, 6.2, 4.6, 3.6, 2.9};
    p.trans_eff = 0.95;
    p.clutch_eff = 0.98;
    p.hsg_start_power = 4000.0;
    p.hsg_start_duration = 0.5;
    p.soc_min = 0.2;
    p.soc_max = 0.9;
    p.sample_time = 0.2;
    p.kwh_per_gallon = 33.7;
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// Parameter file

namespace {

json table1d_json(const Table1D& t, const char* grid_key)
{
    return json{{grid_key, t.grid()}, {"value", t.values()}};
}

Table1D table1d_from(const json& j, const char* grid_key)
{
    return Table1D(j.at(grid_key).get<std::vector<double>>(), j.at("value").get<std::vector<double>>());
}

json table2d_json(const Table2D& t)
{
    const std::size_t ny = t.y_grid().size();
    json rows = json::array();
    for (std::size_t i = 0; i < t.x_grid().size(); ++i) {
        rows.push_back(std::vector<double>(t.values().begin() + static_cast<std::ptrdiff_t>(i * ny),
                                           t.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * ny)));
    }
    return json{{"torque_Nm", t.x_grid()}, {"speed_radps", t.y_grid()}, {"value", rows}};
}

Table2D table2d_from(const json& j)
{
    auto xs = j.at("torque_Nm").get<std::vector<double>>();
    auto ys = j.at("speed_radps").get<std::vector<double>>();
    std::vector<double> flat;
    for (const auto& row : j.at("value")) {
        auto r = row.get<std::vector<double>>();
        if (r.size() != ys.size()) throw std::invalid_argument("efficiency map row length mismatch");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return Table2D(std::move(xs), std::move(ys), std::move(flat));
}

}  // namespace

json params_to_json(const PowertrainParams& p)
{
    json j;
    j["schema_version"] = kParamsSchemaVersion;
    j["units"] = "SI: A*s, V, ohm, N*m, rad/s, W, J/kg, s";
    j["battery"] = {
        {"capacity_As", p.battery_capacity},
        {"voc_V", table1d_json(p.voc_map, "soc")},
        {"rb_ohm", table1d_json(p.rb_map, "soc")},
        {"soc_min", p.soc_min},
        {"soc_max", p.soc_max},
    };
    j["motor"] = {
        {"efficiency", table2d_json(p.motor_eff_map)},
        {"torque_min_Nm", table1d_json(p.motor_torque_min_map, "speed_radps")},
        {"torque_max_Nm", table1d_json(p.motor_torque_max_map, "speed_radps")},
    };
    j["engine"] = {
        {"efficiency", table2d_json(p.engine_eff_map)},
        {"torque_min_Nm", table1d_json(p.engine_torque_min_map, "speed_radps")},
        {"torque_max_Nm", table1d_json(p.engine_torque_max_map, "speed_radps")},
        {"fuel_lhv_Jpkg", p.fuel_lhv},
    };
    j["driveline"] = {
        {"gear_ratios", p.gear_ratios},
        {"trans_eff", p.trans_eff},
        {"clutch_eff", p.clutch_eff},
    };
    j["hsg"] = {{"start_power_W", p.hsg_start_power}, {"start_duration_s", p.hsg_start_duration}};
    j["sample_time_s"] = p.sample_time;
    j["kwh_per_gallon"] = p.kwh_per_gallon;
    return j;
}

PowertrainParams params_from_json(const json& j)
{
    try {
        const int version = j.at("schema_version").get<int>();
        if (version != kParamsSchemaVersion)
            throw SchemaError("unsupported params schema_version " + std::to_string(version));
        PowertrainParams p;
        const auto& b = j.at("battery");
        p.battery_capacity = b.at("capacity_As").get<double>();
        p.voc_map = table1d_from(b.at("voc_V"), "soc");
        p.rb_map = table1d_from(b.at("rb_ohm"), "soc");
        p.soc_min = b.at("soc_min").get<double>();
        p.soc_max = b.at("soc_max").get<double>();
        const auto& m = j.at("motor");
        p.motor_eff_map = table2d_from(m.at("efficiency"));
        p.motor_torque_min_map = table1d_from(m.at("torque_min_Nm"), "speed_radps");
        p.motor_torque_max_map = table1d_from(m.at("torque_max_Nm"), "speed_radps");
        const auto& e = j.at("engine");
        p.engine_eff_map = table2d_from(e.at("efficiency"));
        p.engine_torque_min_map = table1d_from(e.at("torque_min_Nm"), "speed_radps");
        p.engine_torque_max_map = table1d_from(e.at("torque_max_Nm"), "speed_radps");
        p.fuel_lhv = e.at("fuel_lhv_Jpkg").get<double>();
        const auto& d = j.at("driveline");
        p.gear_ratios = d.at("gear_ratios").get<std::array<double, 6>>();
        p.trans_eff = d.at("trans_eff").get<double>();
        p.clutch_eff = d.at("clutch_eff").get<double>();
        const auto& h = j.at("hsg");
        p.hsg_start_power = h.at("start_power_W").get<double>();
        p.hsg_start_duration = h.at("start_duration_s").get<double>();
        p.sample_time = j.value("sample_time_s", 0.2);
        p.kwh_per_gallon = j.value("kwh_per_gallon", 33.7);
        p.validate();
        return p;
    } catch (const json::exception& ex) {
        throw SchemaError(std::string{"params: "} + ex.what());
    } catch (const std::invalid_argument& ex) {
        throw ValidationError(ex.what());
    }
}

PowertrainParams load_params(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw MissingArtifacts("cannot open params file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& ex) {
        throw ParseError("params file " + path.string() + ": " + ex.what());
    }
    return params_from_json(j);
}

void save_params(const PowertrainParams& params, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << params_to_json(params).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Model equations

double shaft_speed(const Disturbance& dist, const PowertrainParams& params)
{
    if (dist.gear_index < 1 || dist.gear_index > 6)
        throw std::out_of_range("gear_index must be in 1..6, got " + std::to_string(dist.gear_index));
    return dist.axle_speed * params.gear_ratios[static_cast<std::size_t>(dist.gear_index - 1)];
}

double motor_torque_required(const ControlInput& input, const Disturbance& dist, const PowertrainParams& params,
                             bool clutch_closed)
{
    const double g = params.gear_ratios.at(static_cast<std::size_t>(dist.gear_index - 1));
    const double input_shaft = dist.wheel_torque_demand / (g * params.trans_eff);
    if (!clutch_closed) return input_shaft;
    return input_shaft - params.clutch_eff * input.engine_torque;
}

double motor_power(double motor_torque, double motor_speed, const PowertrainParams& params)
{
    const double mech = motor_torque * motor_speed;
    if (mech == 0.0) return 0.0;
    const double eta = params.motor_eff_map(motor_torque, motor_speed);
    return mech > 0.0 ? mech / eta : mech * eta;
}

double electrical_power(double motor_torque, double motor_speed, double hsg_power, double aux_power,
                        const PowertrainParams& params)
{
    return motor_power(motor_torque, motor_speed, params) + hsg_power + aux_power;
}

double soc_next(double soc, double battery_power, const PowertrainParams& params)
{
    const double voc = params.voc_map(soc);
    const double rb = params.rb_map(soc);
    const double disc = battery_math::discriminant(voc, rb, battery_power);
    if (!(disc >= 0.0)) throw PowerLimitExceeded("battery power exceeds V_oc^2/(4 R_b)");
    return battery_math::soc_after(soc, voc, std::sqrt(disc), params.sample_time,
                                   battery_math::soc_denominator(rb, params.battery_capacity));
}

double internal_battery_power(double battery_power, double soc, const PowertrainParams& params)
{
    const double voc = params.voc_map(soc);
    const double rb = params.rb_map(soc);
    const double disc = battery_math::discriminant(voc, rb, battery_power);
    if (!(disc >= 0.0)) throw PowerLimitExceeded("battery power exceeds V_oc^2/(4 R_b)");
    return battery_math::internal_power(voc, rb, std::sqrt(disc));
}

FuelOutputs fuel_outputs(double engine_torque, double engine_speed, bool engine_on, const PowertrainParams& params)
{
    if (!engine_on) return {};
    const double mech = engine_torque * engine_speed;
    if (mech <= 0.0) return {};
    const double pf = mech / params.engine_eff_map(engine_torque, engine_speed);
    return {pf, pf / params.fuel_lhv};
}

double hsg_power(bool engine_on, bool engine_switch, const PowertrainParams& params)
{
    if (engine_switch && !engine_on) return params.hsg_start_power * params.hsg_start_duration / params.sample_time;
    return 0.0;
}

DriveOutputs evaluate_drive(bool engine_on, const ControlInput& input, const Disturbance& dist,
                            const PowertrainParams& params)
{
    DriveOutputs d;
    const double w = shaft_speed(dist, params);
    d.shaft_speed = w;

    double te = input.engine_torque;
    if (!input.engine_switch) {
        if (te != 0.0) d.violations |= kEngineTorque;
        te = 0.0;
    } else {
        const double lo = params.engine_torque_min_map(w);
        const double hi = params.engine_torque_max_map(w);
        if (te < lo || te > hi) {
            d.violations |= kEngineTorque;
            te = std::clamp(te, lo, std::max(lo, hi));
        }
    }

    const ControlInput applied{te, input.engine_switch};
    const double tm_req = motor_torque_required(applied, dist, params, input.engine_switch);
    const double tm_max = params.motor_torque_max_map(w);
    const double tm_min = params.motor_torque_min_map(w);
    double tm = tm_req;
    if (tm_req > tm_max + kMotorTorqueTol) {
        d.violations |= kMotorTorque;
        tm = tm_max;
    } else if (tm_req > tm_max) {
        tm = tm_max;
    } else if (tm_req < tm_min) {
        // Friction brakes absorb what the motor cannot regenerate.
        tm = tm_min;
        d.friction_brake_torque = tm_min - tm_req;
    }
    d.motor_torque = tm;
    d.motor_power = motor_power(tm, w, params);
    d.hsg_power = hsg_power(engine_on, input.engine_switch, params);
    d.battery_power = electrical_power(tm, w, d.hsg_power, dist.aux_power, params);
    const FuelOutputs f = fuel_outputs(te, w, input.engine_switch, params);
    d.fuel_power = f.fuel_power;
    d.fuel_rate = f.fuel_rate;
    return d;
}

StepResult step(const PowertrainState& state, const ControlInput& input, const Disturbance& dist,
                const PowertrainParams& params)
{
    const DriveOutputs d = evaluate_drive(state.engine_on, input, dist, params);
    StepOutputs out;
    out.violations = d.violations;
    out.shaft_speed = d.shaft_speed;
    out.motor_torque = d.motor_torque;
    out.friction_brake_torque = d.friction_brake_torque;
    out.fuel_power = d.fuel_power;
    out.fuel_mass = d.fuel_rate * params.sample_time;
    out.hsg_energy = d.hsg_power * params.sample_time;

    const double voc = params.voc_map(state.soc);
    const double rb = params.rb_map(state.soc);
    double pb = d.battery_power;
    double disc = battery_math::discriminant(voc, rb, pb);
    if (!(disc >= 0.0)) {
        out.violations |= kPowerLimit;
        pb = voc * voc / (4.0 * rb);
        disc = 0.0;
    }
    const double sq = std::sqrt(disc);
    out.battery_terminal_power = pb;
    out.battery_internal_power = battery_math::internal_power(voc, rb, sq);
    double soc = battery_math::soc_after(state.soc, voc, sq, params.sample_time,
                                         battery_math::soc_denominator(rb, params.battery_capacity));
    if (soc < params.soc_min) {
        out.violations |= kSocLow;
        soc = params.soc_min;
    } else if (soc > params.soc_max) {
        out.violations |= kSocHigh;
        soc = params.soc_max;
    }
    out.infeasible = out.violations != kNone;
    return {{soc, input.engine_switch}, out};
}

double stage_cost(double fuel_power, double internal_power, const PowertrainParams& params)
{
    return battery_math::step_cost(fuel_power, internal_power, params.sample_time, params.joules_per_gallon());
}

double stage_cost(const StepOutputs& out, const PowertrainParams& params)
{
    return stage_cost(out.fuel_power, out.battery_internal_power, params);
}

// ---------------------------------------------------------------------------
// Feasible sets

std::optional<TorqueInterval> engine_torque_envelope(const Disturbance& dist, const PowertrainParams& params,
                                                     bool engine_switch)
{
    const double w = shaft_speed(dist, params);
    const double g = params.gear_ratios[static_cast<std::size_t>(dist.gear_index - 1)];
    const double input_shaft = dist.wheel_torque_demand / (g * params.trans_eff);
    const double tm_max = params.motor_torque_max_map(w);
    if (!engine_switch) {
        if (input_shaft > tm_max) return std::nullopt;
        return TorqueInterval{0.0, 0.0};
    }
    const double te_lo = params.engine_torque_min_map(w);
    const double te_hi = params.engine_torque_max_map(w);
    const double lo = std::max(te_lo, (input_shaft - tm_max) / params.clutch_eff);
    if (lo > te_hi) return std::nullopt;
    return TorqueInterval{lo, te_hi};
}

FeasibleInputSet try_feasible_input_set(const PowertrainState& state, const Disturbance& dist,
                                        const PowertrainParams& params)
{
    FeasibleInputSet set;
    if (engine_torque_envelope(dist, params, false)) {
        if (!step(state, {0.0, false}, dist, params).outputs.infeasible) set.engine_off = TorqueInterval{0.0, 0.0};
    }
    const auto env = engine_torque_envelope(dist, params, true);
    if (!env) return set;

    auto violations = [&](double te) { return step(state, {te, true}, dist, params).outputs.violations; };
    // Lower-bound constraints become satisfied as engine torque grows; the SOC
    // ceiling becomes violated as it grows.
    constexpr std::uint8_t lower_mask = kEngineTorque | kMotorTorque | kPowerLimit | kSocLow;
    auto lower_ok = [&](double te) { return (violations(te) & lower_mask) == 0; };
    auto upper_ok = [&](double te) { return (violations(te) & kSocHigh) == 0; };

    if (!lower_ok(env->hi) || !upper_ok(env->lo)) return set;
    double a = env->lo;
    if (!lower_ok(a)) {
        double bad = env->lo;
        double good = env->hi;
        for (int i = 0; i < kBisectionSteps && good - bad > 0.0; ++i) {
            const double mid = 0.5 * (bad + good);
            if (mid <= bad || mid >= good) break;
            (lower_ok(mid) ? good : bad) = mid;
        }
        a = good;
    }
    double b = env->hi;
    if (!upper_ok(b)) {
        double good = env->lo;
        double bad = env->hi;
        for (int i = 0; i < kBisectionSteps && bad - good > 0.0; ++i) {
            const double mid = 0.5 * (bad + good);
            if (mid <= good || mid >= bad) break;
            (upper_ok(mid) ? good : bad) = mid;
        }
        b = good;
    }
    if (a <= b) set.engine_on = TorqueInterval{a, b};
    return set;
}

FeasibleInputSet feasible_input_set(const PowertrainState& state, const Disturbance& dist,
                                    const PowertrainParams& params)
{
    FeasibleInputSet set = try_feasible_input_set(state, dist, params);
    if (set.empty()) throw NoFeasibleInput("no engine switch value can meet the demand from this state");
    return set;
}

}  // namespace emslab
