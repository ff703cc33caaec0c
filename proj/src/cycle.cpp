#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"

#include "emslab/errors.hpp"
#include "emslab/trip.hpp"

namespace emslab {

using nlohmann::json;

double VehicleBody::road_load_force(double speed, double accel, double grade) const
{
    const double cos_t = 1.0 / std::sqrt(1.0 + grade * grade);
    const double sin_t = grade * cos_t;
    const double rolling = speed > 0.0 ? mass * gravity * rolling_coeff * cos_t : 0.0;
    const double aero = 0.5 * air_density * drag_area * speed * speed;
    return mass * accel + rolling + aero + mass * gravity * sin_t;
}

double VehicleBody::wheel_torque(double speed, double accel, double grade) const
{
    return wheel_radius * road_load_force(speed, accel, grade);
}

int VehicleBody::gear_for_speed(double speed) const
{
    int gear = 1;
    for (double v : upshift_speeds)
        if (speed >= v) ++gear;
    return gear;
}

double CycleSpec::route_length() const
{
    double len = 0.0;
    for (const auto& s : segments) len += s.length;
    return len;
}

void CycleSpec::validate() const
{
    if (segments.empty()) throw SpecError("cycle spec " + route_id + ": no segments");
    for (const auto& s : segments) {
        if (!(s.length > 0.0)) throw SpecError("cycle spec " + route_id + ": segment length must be positive");
        if (!(s.mean_speed >= 0.0) || !(s.speed_std >= 0.0))
            throw SpecError("cycle spec " + route_id + ": segment speeds must be non-negative");
        if (s.stop_spacing < 0.0 || s.stop_probability < 0.0 || s.stop_probability > 1.0 || s.mean_dwell < 0.0)
            throw SpecError("cycle spec " + route_id + ": invalid stop parameters");
    }
    if (!(sample_time > 0.0)) throw SpecError("cycle spec: sample_time must be positive");
    if (!(accel_limit > 0.0) || !(decel_limit > 0.0)) throw SpecError("cycle spec: accel limits must be positive");
    if (!(max_duration > 0.0)) throw SpecError("cycle spec: max_duration must be positive");
    if (aux_power < 0.0 || aux_power_std < 0.0 || congestion_std < 0.0) throw SpecError("cycle spec: negative spread");
    for (std::size_t i = 1; i < elevation_profile.size(); ++i)
        if (!(elevation_profile[i][0] > elevation_profile[i - 1][0]))
            throw SpecError("cycle spec: elevation knots must have increasing positions");
    if (!(vehicle.mass > 0.0) || !(vehicle.wheel_radius > 0.0) || vehicle.drag_area < 0.0 || vehicle.rolling_coeff < 0.0)
        throw SpecError("cycle spec: invalid vehicle body constants");
}

// ---------------------------------------------------------------------------
// JSON

json cycle_spec_to_json(const CycleSpec& s)
{
    json segs = json::array();
    for (const auto& g : s.segments) {
        segs.push_back({{"kind", g.kind},
                        {"length_m", g.length},
                        {"mean_speed_mps", g.mean_speed},
                        {"speed_std_mps", g.speed_std},
                        {"stop_spacing_m", g.stop_spacing},
                        {"stop_probability", g.stop_probability},
                        {"mean_dwell_s", g.mean_dwell}});
    }
    return {
        {"schema_version", 1},
        {"route_id", s.route_id},
        {"segments", segs},
        {"elevation_profile_m", s.elevation_profile},
        {"aux_power_W", s.aux_power},
        {"aux_power_std_W", s.aux_power_std},
        {"congestion_std", s.congestion_std},
        {"accel_limit_mps2", s.accel_limit},
        {"decel_limit_mps2", s.decel_limit},
        {"max_duration_s", s.max_duration},
        {"sample_time_s", s.sample_time},
        {"vehicle",
         {{"mass_kg", s.vehicle.mass},
          {"drag_area_m2", s.vehicle.drag_area},
          {"rolling_coeff", s.vehicle.rolling_coeff},
          {"wheel_radius_m", s.vehicle.wheel_radius},
          {"air_density_kgpm3", s.vehicle.air_density},
          {"upshift_speeds_mps", s.vehicle.upshift_speeds}}},
    };
}

CycleSpec cycle_spec_from_json(const json& j)
{
    try {
        CycleSpec s;
        s.route_id = j.at("route_id").get<std::string>();
        for (const auto& g : j.at("segments")) {
            SegmentSpec seg;
            seg.kind = g.value("kind", std::string{"segment"});
            seg.length = g.at("length_m").get<double>();
            seg.mean_speed = g.at("mean_speed_mps").get<double>();
            seg.speed_std = g.value("speed_std_mps", 0.0);
            seg.stop_spacing = g.value("stop_spacing_m", 0.0);
            seg.stop_probability = g.value("stop_probability", 0.0);
            seg.mean_dwell = g.value("mean_dwell_s", 20.0);
            s.segments.push_back(seg);
        }
        if (j.contains("elevation_profile_m"))
            s.elevation_profile = j.at("elevation_profile_m").get<std::vector<std::array<double, 2>>>();
        s.aux_power = j.value("aux_power_W", s.aux_power);
        s.aux_power_std = j.value("aux_power_std_W", s.aux_power_std);
        s.congestion_std = j.value("congestion_std", s.congestion_std);
        s.accel_limit = j.value("accel_limit_mps2", s.accel_limit);
        s.decel_limit = j.value("decel_limit_mps2", s.decel_limit);
        s.max_duration = j.value("max_duration_s", s.max_duration);
        s.sample_time = j.value("sample_time_s", s.sample_time);
        if (j.contains("vehicle")) {
            const auto& v = j.at("vehicle");
            s.vehicle.mass = v.value("mass_kg", s.vehicle.mass);
            s.vehicle.drag_area = v.value("drag_area_m2", s.vehicle.drag_area);
            s.vehicle.rolling_coeff = v.value("rolling_coeff", s.vehicle.rolling_coeff);
            s.vehicle.wheel_radius = v.value("wheel_radius_m", s.vehicle.wheel_radius);
            s.vehicle.air_density = v.value("air_density_kgpm3", s.vehicle.air_density);
            if (v.contains("upshift_speeds_mps"))
                s.vehicle.upshift_speeds = v.at("upshift_speeds_mps").get<std::array<double, 5>>();
        }
        s.validate();
        return s;
    } catch (const json::exception& ex) {
        throw SpecError(std::string{"cycle spec: "} + ex.what());
    }
}

CycleSpec load_cycle_spec(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw MissingArtifacts("cannot open cycle spec " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& ex) {
        throw ParseError("cycle spec " + path.string() + ": " + ex.what());
    }
    return cycle_spec_from_json(j);
}

std::vector<CycleSpec> builtin_routes()
{
    std::vector<CycleSpec> routes;
    {
        CycleSpec s;
        s.route_id = "commute";
        s.segments = {
            {"urban", 4000.0, 11.0, 2.0, 450.0, 0.5, 18.0},
            {"highway", 16000.0, 27.0, 2.5, 0.0, 0.0, 0.0},
            {"urban", 4000.0, 11.0, 2.0, 450.0, 0.5, 18.0},
        };
        s.elevation_profile = {{0.0, 20.0}, {4000.0, 25.0}, {12000.0, 70.0}, {20000.0, 30.0}, {24000.0, 20.0}};
        s.aux_power = 700.0;
        routes.push_back(s);
    }
    {
        CycleSpec s;
        s.route_id = "arterial";
        s.segments = {
            {"arterial", 8000.0, 15.0, 2.0, 700.0, 0.45, 25.0},
            {"urban", 3000.0, 10.0, 1.5, 350.0, 0.5, 20.0},
            {"arterial", 11000.0, 16.0, 2.0, 800.0, 0.4, 25.0},
        };
        s.elevation_profile = {{0.0, 10.0}, {5000.0, 70.0}, {9000.0, 20.0}, {15000.0, 55.0}, {22000.0, 10.0}};
        s.aux_power = 800.0;
        routes.push_back(s);
    }
    {
        CycleSpec s;
        s.route_id = "highway";
        s.segments = {
            {"arterial", 3000.0, 14.0, 2.0, 600.0, 0.5, 20.0},
            {"highway", 21000.0, 29.0, 3.0, 0.0, 0.0, 0.0},
            {"arterial", 3000.0, 14.0, 2.0, 600.0, 0.5, 20.0},
        };
        s.elevation_profile = {{0.0, 100.0}, {3000.0, 110.0}, {14000.0, 180.0}, {24000.0, 120.0}, {27000.0, 100.0}};
        s.aux_power = 600.0;
        routes.push_back(s);
    }
    return routes;
}

// ---------------------------------------------------------------------------
// Generator

namespace {

struct StopPoint {
    double position;
    bool required;
    double dwell;
};

double elevation_at(const CycleSpec& spec, double pos)
{
    const auto& e = spec.elevation_profile;
    if (e.empty()) return 0.0;
    if (pos <= e.front()[0]) return e.front()[1];
    if (pos >= e.back()[0]) return e.back()[1];
    for (std::size_t i = 1; i < e.size(); ++i) {
        if (pos <= e[i][0]) {
            const double w = (pos - e[i - 1][0]) / (e[i][0] - e[i - 1][0]);
            return e[i - 1][1] + w * (e[i][1] - e[i - 1][1]);
        }
    }
    return e.back()[1];
}

double grade_at(const CycleSpec& spec, double pos)
{
    const auto& e = spec.elevation_profile;
    for (std::size_t i = 1; i < e.size(); ++i)
        if (pos >= e[i - 1][0] && pos < e[i][0]) return (e[i][1] - e[i - 1][1]) / (e[i][0] - e[i - 1][0]);
    return 0.0;
}

}  // namespace

Trip generate_trip(const CycleSpec& spec, std::uint64_t seed)
{
    spec.validate();
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x1234567ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    const bool morning = seed % 2 == 0;
    const double length = spec.route_length();
    const std::size_t nseg = spec.segments.size();

    // Per-trip speed scaling per segment; morning congestion sits on the first
    // half of the route, afternoon congestion on the second.
    std::vector<double> seg_scale(nseg);
    std::vector<double> seg_start(nseg);
    double acc = 0.0;
    for (std::size_t i = 0; i < nseg; ++i) {
        seg_start[i] = acc;
        const double mid = acc + 0.5 * spec.segments[i].length;
        acc += spec.segments[i].length;
        const bool congested_half = morning ? (mid < 0.5 * length) : (mid >= 0.5 * length);
        const double base = congested_half ? 0.8 : 1.0;
        seg_scale[i] = std::clamp(base * (1.0 + spec.congestion_std * gauss(rng)), 0.4, 1.3);
    }

    // Stops: positions are a route property, whether and how long to stop is per trip.
    std::vector<StopPoint> stops;
    for (std::size_t i = 0; i < nseg; ++i) {
        const auto& seg = spec.segments[i];
        if (seg.stop_spacing <= 0.0) continue;
        for (double p = seg_start[i] + seg.stop_spacing; p < seg_start[i] + seg.length - 1.0; p += seg.stop_spacing) {
            const bool req = unif(rng) < seg.stop_probability;
            const double dwell = req ? seg.mean_dwell * (0.5 + unif(rng)) : 0.0;
            stops.push_back({p, req, dwell});
        }
    }
    stops.push_back({length, true, 0.0});

    const double aux_level = std::max(100.0, spec.aux_power + spec.aux_power_std * gauss(rng));
    const double dt = spec.sample_time;
    const VehicleBody& body = spec.vehicle;

    auto segment_at = [&](double pos) {
        std::size_t i = 0;
        while (i + 1 < nseg && pos >= seg_start[i + 1]) ++i;
        return i;
    };

    Trip trip;
    trip.route_id = spec.route_id;
    trip.trip_id = spec.route_id + "-s" + std::to_string(seed);
    trip.tag = morning ? "morning" : "afternoon";
    trip.sample_time = dt;

    double pos = 0.0;
    double v = 0.0;
    double fluct = 0.0;  // OU process, m/s
    double aux = aux_level;
    double dwell_left = 0.0;
    std::size_t next_stop = 0;
    const auto max_steps = static_cast<std::size_t>(spec.max_duration / dt);
    const double tau = 2.0;

    for (std::size_t k = 0; k < max_steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        if (k > 0 && k % static_cast<std::size_t>(std::round(60.0 / dt)) == 0)
            aux = std::max(100.0, aux_level + 100.0 * gauss(rng));

        while (next_stop < stops.size() && !stops[next_stop].required && pos >= stops[next_stop].position) ++next_stop;
        const bool arrived = next_stop >= stops.size() - 1 && pos >= length - 1e-9;

        const std::size_t si = segment_at(pos);
        const SegmentSpec& seg = spec.segments[si];
        const double theta = std::exp(-dt / 20.0);
        fluct = theta * fluct + seg.speed_std * std::sqrt(1.0 - theta * theta) * gauss(rng);

        double a = 0.0;
        if (arrived || seg.mean_speed <= 0.0) {
            a = 0.0;
            v = 0.0;
        } else if (dwell_left > 0.0) {
            dwell_left -= dt;
            a = 0.0;
        } else {
            double target = std::max(0.0, seg.mean_speed * seg_scale[si] + fluct);
            // Braking envelope to the next required stop.
            std::size_t s = next_stop;
            while (s < stops.size() && !stops[s].required) ++s;
            if (s < stops.size()) {
                const double gap = stops[s].position - pos;
                target = std::min(target, std::sqrt(2.0 * 0.8 * spec.decel_limit * std::max(0.0, gap - 0.3)));
            }
            // Slow down ahead of a slower next segment.
            if (si + 1 < nseg) {
                const double gap = seg_start[si + 1] - pos;
                const double vnext = spec.segments[si + 1].mean_speed * seg_scale[si + 1];
                if (vnext < target) target = std::min(target, std::sqrt(vnext * vnext + 2.0 * 0.5 * spec.decel_limit * gap));
            }
            // Creep when stopped short of the stop line.
            if (target < 0.5 && s < stops.size() && stops[s].position - pos > 0.3) target = 0.5;
            const double resist = body.road_load_force(std::max(v, 1.0), 0.0, grade_at(spec, pos));
            const double power_cap = (45000.0 / std::max(v, 5.0) - resist) / body.mass;
            const double a_max = std::max(0.2, std::min(spec.accel_limit, power_cap));
            a = std::clamp((target - v) / tau, -spec.decel_limit, a_max);
            // Once on the braking envelope, hold the deceleration that stops at the line.
            if (s < stops.size()) {
                const double need = v * v / (2.0 * std::max(stops[s].position - pos - 0.1, 0.05));
                if (need >= 0.8 * spec.decel_limit) a = std::min(a, -need);
            }
        }

        double v_new = std::max(0.0, v + a * dt);
        double pos_new = pos + 0.5 * (v + v_new) * dt;

        // Stop-line handling: never run a required stop.
        std::size_t s = next_stop;
        while (s < stops.size() && !stops[s].required) ++s;
        if (s < stops.size() && pos_new >= stops[s].position - 0.3 && v_new < 0.3) {
            pos_new = std::min(pos_new, stops[s].position);
            if (stops[s].position - pos_new <= 0.3) {
                pos_new = stops[s].position;
                v_new = 0.0;
                dwell_left = stops[s].dwell;
                next_stop = s + 1;
            }
        } else if (s < stops.size() && pos_new > stops[s].position) {
            pos_new = stops[s].position;
            v_new = 0.0;
            dwell_left = stops[s].dwell;
            next_stop = s + 1;
        }
        if (pos_new >= length) {
            pos_new = length;
            v_new = 0.0;
        }
        a = (v_new - v) / dt;

        TripSample smp;
        smp.time = t;
        smp.position = pos;
        smp.vehicle_speed = v;
        smp.axle_speed = v / body.wheel_radius;
        const double v_mid = 0.5 * (v + v_new);
        smp.wheel_torque_demand = v_mid > 0.0 ? body.wheel_torque(v_mid, a, grade_at(spec, pos)) : 0.0;
        smp.aux_power = aux;
        smp.gear_index = body.gear_for_speed(v);
        smp.elevation = elevation_at(spec, pos);
        trip.samples.push_back(smp);

        pos = pos_new;
        v = v_new;
        if (pos >= length && v == 0.0 && next_stop >= stops.size()) break;
    }
    // Terminal sample at the destination, at rest.
    if (!trip.samples.empty() && pos > trip.samples.back().position) {
        TripSample smp;
        smp.time = static_cast<double>(trip.samples.size()) * dt;
        smp.position = pos;
        smp.aux_power = aux;
        smp.elevation = elevation_at(spec, pos);
        trip.samples.push_back(smp);
    }
    trip.validate();
    return trip;
}

}  // namespace emslab
