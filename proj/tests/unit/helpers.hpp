#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "emslab/powertrain.hpp"
#include "emslab/trip.hpp"

namespace test {

using namespace emslab;

/// Parameters with flat maps so that hand calculations stay simple:
/// V_oc = 360 V, R_b = 0.1 ohm, Q_b = 28800 A*s, eta_m = 0.9, eta_e = 0.35.
inline PowertrainParams flat_params()
{
    PowertrainParams p = synthetic_params();
    p.battery_capacity = 28800.0;
    p.voc_map = Table1D({0.0, 1.0}, {360.0, 360.0});
    p.rb_map = Table1D({0.0, 1.0}, {0.1, 0.1});
    const std::vector<double> speeds{0.0, 700.0};
    p.motor_eff_map = Table2D({-250.0, 250.0}, speeds, {0.9, 0.9, 0.9, 0.9});
    p.engine_eff_map = Table2D({0.0, 260.0}, speeds, {0.35, 0.35, 0.35, 0.35});
    p.fuel_lhv = 44.0e6;
    p.validate();
    return p;
}

/// Uniform trip built from per-step (axle speed, wheel torque, aux) triples.
struct StepSpec {
    double axle_speed = 0.0;
    double wheel_torque = 0.0;
    double aux = 0.0;
    int gear = 1;
};

inline Trip make_trip(const std::vector<StepSpec>& steps, double sample_time = 0.2, std::string route = "toy",
                      std::string id = "toy-0")
{
    Trip t;
    t.route_id = std::move(route);
    t.trip_id = std::move(id);
    t.sample_time = sample_time;
    double pos = 0.0;
    for (std::size_t k = 0; k < steps.size(); ++k) {
        TripSample s;
        s.time = static_cast<double>(k) * sample_time;
        s.position = pos;
        s.axle_speed = steps[k].axle_speed;
        s.vehicle_speed = steps[k].axle_speed * 0.32;
        s.wheel_torque_demand = steps[k].wheel_torque;
        s.aux_power = steps[k].aux;
        s.gear_index = steps[k].gear;
        t.samples.push_back(s);
        pos += s.vehicle_speed * sample_time;
    }
    return t;
}

inline Trip zero_demand_trip(std::size_t n, double speed = 0.0)
{
    return make_trip(std::vector<StepSpec>(n, StepSpec{speed, 0.0, 0.0, 1}));
}

inline CycleSpec builtin(const std::string& id)
{
    for (const auto& s : builtin_routes())
        if (s.route_id == id) return s;
    throw std::runtime_error("no builtin route " + id);
}

/// A short route so that DP-based tests stay fast.
inline CycleSpec short_route(double length = 3000.0)
{
    CycleSpec spec = builtin("commute");
    double remaining = length;
    std::vector<SegmentSpec> segs;
    for (SegmentSpec s : spec.segments) {
        if (remaining <= 0.0) break;
        s.length = std::min(s.length, remaining);
        remaining -= s.length;
        segs.push_back(s);
    }
    spec.segments = segs;
    spec.route_id = "short";
    spec.elevation_profile.clear();
    return spec;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("emslab-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

}  // namespace test
