#pragma once

// Discrete-time model of a pre-transmission parallel hybrid: engine and
// motor share the gearbox input shaft, the clutch closes exactly when the
// engine runs, and a starter-generator draws a fixed energy per engine start.
//
// Every function here is pure; PowertrainParams is immutable once built and
// may be shared freely between threads.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "emslab/interp.hpp"

namespace emslab {

inline constexpr int kParamsSchemaVersion = 1;
inline constexpr double kJoulesPerKwh = 3.6e6;

struct PowertrainParams {
    double battery_capacity = 0.0;  // A*s
    Table1D voc_map;                // SOC -> V
    Table1D rb_map;                 // SOC -> ohm
    Table2D motor_eff_map;          // (N*m, rad/s) -> (0,1]
    Table2D engine_eff_map;         // (N*m, rad/s) -> (0,1]
    double fuel_lhv = 0.0;          // J/kg
    std::array<double, 6> gear_ratios{};
    double trans_eff = 1.0;
    double clutch_eff = 1.0;
    double hsg_start_power = 0.0;     // W
    double hsg_start_duration = 0.5;  // s
    Table1D engine_torque_min_map;    // rad/s -> N*m
    Table1D engine_torque_max_map;
    Table1D motor_torque_min_map;
    Table1D motor_torque_max_map;
    double soc_min = 0.2;
    double soc_max = 0.9;
    double sample_time = 0.2;      // s
    double kwh_per_gallon = 33.7;

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;

    double joules_per_gallon() const { return kwh_per_gallon * kJoulesPerKwh; }
};

/// Synthetic mid-size PHEV parameter set. The maps are generated from simple
/// loss models; they are not manufacturer data.
PowertrainParams synthetic_params();

PowertrainParams params_from_json(const nlohmann::json& doc);
nlohmann::json params_to_json(const PowertrainParams& params);
PowertrainParams load_params(const std::filesystem::path& path);
void save_params(const PowertrainParams& params, const std::filesystem::path& path);

struct PowertrainState {
    double soc = 0.0;
    bool engine_on = false;
};

struct ControlInput {
    double engine_torque = 0.0;
    bool engine_switch = false;

    friend bool operator==(const ControlInput&, const ControlInput&) = default;
};

struct Disturbance {
    double aux_power = 0.0;            // W
    double wheel_torque_demand = 0.0;  // N*m
    double axle_speed = 0.0;           // rad/s
    int gear_index = 1;                // 1..6
};

/// Why a step was flagged infeasible. Several bits may be set at once.
enum Violation : std::uint8_t {
    kNone = 0,
    kEngineTorque = 1 << 0,  // torque outside engine envelope, or nonzero while switched off
    kMotorTorque = 1 << 1,   // demand exceeds motor traction capability
    kPowerLimit = 1 << 2,    // battery cannot deliver the requested terminal power
    kSocLow = 1 << 3,
    kSocHigh = 1 << 4,
};

struct StepOutputs {
    double fuel_mass = 0.0;               // kg this step
    double fuel_power = 0.0;              // W
    double battery_terminal_power = 0.0;  // W
    double battery_internal_power = 0.0;  // W
    double motor_torque = 0.0;            // N*m, after the friction-brake clamp
    double friction_brake_torque = 0.0;   // N*m at the gearbox input, >= 0
    double hsg_energy = 0.0;              // J drawn this step
    double shaft_speed = 0.0;             // rad/s, motor (and engine when clutched)
    std::uint8_t violations = kNone;
    bool infeasible = false;
};

/// SOC-independent part of a step: torque split, machine powers, constraints
/// that do not involve the battery state.
struct DriveOutputs {
    double shaft_speed = 0.0;
    double motor_torque = 0.0;
    double friction_brake_torque = 0.0;
    double motor_power = 0.0;
    double hsg_power = 0.0;
    double battery_power = 0.0;
    double fuel_power = 0.0;
    double fuel_rate = 0.0;  // kg/s
    std::uint8_t violations = kNone;
};

struct FuelOutputs {
    double fuel_power = 0.0;  // W
    double fuel_rate = 0.0;   // kg/s
};

double shaft_speed(const Disturbance& dist, const PowertrainParams& params);

/// T_m solving T_d = g * eta_t * (T_m + c_on * eta_c * T_e). No clamping.
double motor_torque_required(const ControlInput& input, const Disturbance& dist, const PowertrainParams& params,
                             bool clutch_closed);

/// Mechanical-to-electrical motor power: divides by the efficiency when
/// motoring, multiplies when regenerating.
double motor_power(double motor_torque, double motor_speed, const PowertrainParams& params);

double electrical_power(double motor_torque, double motor_speed, double hsg_power, double aux_power,
                        const PowertrainParams& params);

/// Throws PowerLimitExceeded when the battery cannot supply `battery_power`.
double soc_next(double soc, double battery_power, const PowertrainParams& params);
double internal_battery_power(double battery_power, double soc, const PowertrainParams& params);

FuelOutputs fuel_outputs(double engine_torque, double engine_speed, bool engine_on, const PowertrainParams& params);

/// Average starter power over the start step. The full start energy
/// (hsg_start_power * hsg_start_duration) is booked in the step where the
/// engine switches on so that (SOC, engine_on) stays a complete state.
double hsg_power(bool engine_on, bool engine_switch, const PowertrainParams& params);

DriveOutputs evaluate_drive(bool engine_on, const ControlInput& input, const Disturbance& dist,
                            const PowertrainParams& params);

struct StepResult {
    PowertrainState next;
    StepOutputs outputs;
};

/// One sample-time step. Infeasible inputs are flagged rather than thrown;
/// the next SOC is then clamped to [soc_min, soc_max].
StepResult step(const PowertrainState& state, const ControlInput& input, const Disturbance& dist,
                const PowertrainParams& params);

/// Gallons-equivalent cost of one step: t_s * (P_f + P_q) / (kWh-per-gallon in joules).
double stage_cost(double fuel_power, double internal_power, const PowertrainParams& params);
double stage_cost(const StepOutputs& out, const PowertrainParams& params);

struct TorqueInterval {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double t) const { return t >= lo && t <= hi; }
};

/// Engine-torque range allowed by the engine envelope and motor traction
/// limit for the given switch value, ignoring the battery. Empty when the
/// switch value cannot meet the demand at all.
std::optional<TorqueInterval> engine_torque_envelope(const Disturbance& dist, const PowertrainParams& params,
                                                     bool engine_switch);

struct FeasibleInputSet {
    std::optional<TorqueInterval> engine_off;  // the point {0} when present
    std::optional<TorqueInterval> engine_on;

    bool empty() const { return !engine_off && !engine_on; }
};

/// Full one-step feasible set including battery power and SOC bounds.
/// Relies on the next SOC being nondecreasing in engine torque.
/// Throws NoFeasibleInput when both switch values are infeasible.
FeasibleInputSet feasible_input_set(const PowertrainState& state, const Disturbance& dist,
                                    const PowertrainParams& params);

/// Same as feasible_input_set but returns an empty set instead of throwing.
FeasibleInputSet try_feasible_input_set(const PowertrainState& state, const Disturbance& dist,
                                        const PowertrainParams& params);

}  // namespace emslab
