#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "emslab/powertrain.hpp"

namespace emslab {

inline constexpr int kTripSchemaVersion = 1;

struct TripSample {
    double time = 0.0;                 // s
    double position = 0.0;             // m along the route
    double vehicle_speed = 0.0;        // m/s
    double axle_speed = 0.0;           // rad/s
    double wheel_torque_demand = 0.0;  // N*m
    double aux_power = 0.0;            // W
    int gear_index = 1;
    double elevation = 0.0;            // m
};

/// A recorded or generated drive. Sample k carries the exogenous signals
/// applied over [k*t_s, (k+1)*t_s); a trip of N samples is an N-stage problem.
struct Trip {
    std::string route_id;
    std::string trip_id;
    std::string tag;
    double sample_time = 0.2;
    std::vector<TripSample> samples;

    std::size_t size() const { return samples.size(); }
    double total_distance() const { return samples.empty() ? 0.0 : samples.back().position; }
    double duration() const { return static_cast<double>(samples.size()) * sample_time; }
    Disturbance disturbance(std::size_t k) const;
    /// Backward-difference acceleration; zero at the first sample.
    double accel(std::size_t k) const;

    /// Throws ValidationError on non-uniform time, negative speed or
    /// decreasing position.
    void validate() const;
};

/// CSV columns, in file order. `elevation_m` is optional on input.
inline constexpr std::array<const char*, 8> kTripColumns{
    "time_s", "position_m", "vehicle_speed_mps", "axle_speed_radps",
    "wheel_torque_Nm", "aux_power_W", "gear", "elevation_m"};

/// Reads a trip CSV and resamples it to `sample_time` when the source rate differs.
Trip load_trip(const std::filesystem::path& path, double sample_time);
Trip parse_trip_csv(const std::string& text, double sample_time, const std::string& fallback_id = "trip");
void save_trip(const Trip& trip, const std::filesystem::path& path);
std::string trip_to_csv(const Trip& trip);

/// Linear resampling of every continuous channel; gear is held from the
/// preceding source sample.
Trip resample(const Trip& trip, double sample_time);

// ---------------------------------------------------------------------------
// Synthetic drive cycles

/// Longitudinal road-load constants used only for synthesis.
struct VehicleBody {
    double mass = 1700.0;          // kg, including a lumped rotating-inertia allowance
    double drag_area = 0.65;       // Cd*A, m^2
    double rolling_coeff = 0.010;
    double wheel_radius = 0.32;    // m
    double air_density = 1.2;      // kg/m^3
    double gravity = 9.81;         // m/s^2
    std::array<double, 5> upshift_speeds{4.0, 8.0, 13.0, 18.0, 24.0};  // m/s

    /// Tractive force at the wheel: inertia + rolling + aero + grade.
    /// Rolling resistance acts only while moving.
    double road_load_force(double speed, double accel, double grade) const;
    double wheel_torque(double speed, double accel, double grade) const;
    int gear_for_speed(double speed) const;
};

struct SegmentSpec {
    std::string kind;             // urban | arterial | highway (label only)
    double length = 0.0;          // m
    double mean_speed = 0.0;      // m/s cruise target
    double speed_std = 0.0;       // m/s, amplitude of the speed fluctuation
    double stop_spacing = 0.0;    // m between candidate stops, 0 for none
    double stop_probability = 0.0;
    double mean_dwell = 20.0;     // s
};

struct CycleSpec {
    std::string route_id = "route";
    std::vector<SegmentSpec> segments;
    std::vector<std::array<double, 2>> elevation_profile;  // (position m, elevation m) knots
    double aux_power = 600.0;      // W mean
    double aux_power_std = 150.0;  // W trip-to-trip spread
    double congestion_std = 0.12;  // relative spread of per-segment speed scaling
    double accel_limit = 1.5;      // m/s^2
    double decel_limit = 2.0;      // m/s^2
    double max_duration = 7200.0;  // s cap for trips that never arrive
    double sample_time = 0.2;
    VehicleBody vehicle;

    double route_length() const;
    /// Throws SpecError for non-positive lengths or negative speeds.
    void validate() const;
};

CycleSpec cycle_spec_from_json(const nlohmann::json& doc);
nlohmann::json cycle_spec_to_json(const CycleSpec& spec);
CycleSpec load_cycle_spec(const std::filesystem::path& path);

/// Three synthetic commute routes (mixed, hilly arterial, highway-heavy).
std::vector<CycleSpec> builtin_routes();

/// Deterministic for (spec, seed). Even seeds are tagged "morning" and odd
/// seeds "afternoon"; the tag shifts where congestion sits along the route.
Trip generate_trip(const CycleSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Position bins and route statistics

struct RouteBins {
    std::string route_id;
    double bin_length = 100.0;
    std::size_t bin_count = 0;
    double total_distance = 0.0;

    /// Total map onto [0, bin_count); positions past either end clamp.
    std::size_t bin_of(double position) const;
    double bin_start(std::size_t k) const { return static_cast<double>(k) * bin_length; }
    double bin_center(std::size_t k) const;
};

/// Throws RouteMismatch when trips disagree on route_id or on total distance
/// by more than 1%.
RouteBins make_bins(std::span<const Trip> trips, double bin_length = 100.0);

/// Historical per-bin mean remaining travel time, measured from the moment a
/// trip first reaches the bin.
struct RouteStats {
    RouteBins bins;
    std::vector<double> time_left;
    double mean_total_time = 0.0;
};

RouteStats build_route_stats(std::span<const Trip> trips, const RouteBins& bins);
nlohmann::json route_stats_to_json(const RouteStats& stats);
RouteStats route_stats_from_json(const nlohmann::json& doc);

// ---------------------------------------------------------------------------
// Feature states

inline constexpr std::size_t kFeatureCount = 8;

enum FeatureIndex : std::size_t {
    kSoc = 0,
    kEngineStatus,
    kAvgAuxPower,
    kFuelConsumed,
    kAvgSpeed,
    kAvgAccel,
    kTimeLeft,
    kBias,
};

inline constexpr std::array<const char*, kFeatureCount> kFeatureNames{
    "soc", "engine_status", "avg_aux_power_W", "fuel_consumed_kg",
    "avg_speed_mps", "avg_accel_mps2", "est_time_left_s", "bias"};

struct FeatureVector {
    std::array<double, kFeatureCount> values{};

    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
};

/// Running trip-so-far statistics. Averages are cumulative means over every
/// observed sample including the current one.
class FeatureTracker {
public:
    FeatureTracker(const RouteStats& stats, double sample_time);

    /// Record sample t (call once per step, before deciding the input).
    void observe(const TripSample& sample, double accel);
    void add_fuel(double kg) { fuel_kg_ += kg; }

    FeatureVector features(const PowertrainState& state) const;

    /// Features one step ahead under a frozen disturbance: powertrain terms
    /// come from the candidate, exogenous averages absorb one repeat of the
    /// current sample, time-left decrements within a bin and re-anchors on
    /// entering a new one.
    FeatureVector predict(const PowertrainState& next, double step_fuel_kg, double position_next) const;

    std::size_t observed() const { return count_; }
    std::size_t current_bin() const { return bin_; }
    double fuel_kg() const { return fuel_kg_; }
    double time_left() const;
    const RouteStats& stats() const { return *stats_; }

private:
    const RouteStats* stats_;
    double sample_time_;
    std::size_t count_ = 0;
    double sum_aux_ = 0.0;
    double sum_speed_ = 0.0;
    double sum_accel_ = 0.0;
    double fuel_kg_ = 0.0;
    double last_aux_ = 0.0;
    double last_speed_ = 0.0;
    double last_accel_ = 0.0;
    double now_ = 0.0;
    std::size_t bin_ = 0;
    double bin_anchor_ = 0.0;
    double bin_entry_time_ = 0.0;
};

/// Features at step t of a trajectory, replaying the tracker from the start.
/// `states` and `fuel_mass` must cover steps 0..t (fuel_mass[k] is the fuel
/// burned during step k); only entries before t are read for fuel.
FeatureVector extract_features(const Trip& trip, std::span<const PowertrainState> states,
                               std::span<const double> fuel_mass, std::size_t t, const RouteStats& stats);

}  // namespace emslab
