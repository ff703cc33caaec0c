#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "emslab/learn.hpp"
#include "emslab/powertrain.hpp"
#include "emslab/trip.hpp"

namespace emslab {

// ---------------------------------------------------------------------------
// Charge depleting, then charge sustaining

struct CdCsConfig {
    double cs_band = 0.02;
    double cs_target = -1.0;       // negative: soc_min + cs_band
    double charge_gain = 1.5e6;    // W of charging per unit SOC below the upper hysteresis edge
    double max_charge_power = 15000.0;  // W

    double target(const PowertrainParams& params) const;
    void validate(const PowertrainParams& params) const;
};

struct CdCsState {
    bool sustaining = false;  // latched once SOC first reaches cs_target
    bool engine_request = false;
};

/// Engine off in the depleting phase whenever the motor and battery can carry
/// the demand, minimal engine torque otherwise. In the sustaining phase the
/// engine turns on below cs_target and off above cs_target + cs_band/2, and
/// while on it covers the demand plus a charging power proportional to the
/// SOC shortfall.
ControlInput cdcs_step(const PowertrainState& x, const Disturbance& w, const PowertrainParams& params,
                       const CdCsConfig& cfg, CdCsState& st);

// ---------------------------------------------------------------------------
// Reference SOC profile and adaptive ECMS

struct RepresentativeSocProfile {
    std::string route_id;
    RouteBins bins;
    std::vector<double> soc;  // per bin, at the bin center

    /// Linear between bin centers, constant beyond the first and last.
    double at(double position) const;
    static RepresentativeSocProfile constant(const RouteBins& bins, double soc);
};

/// DP SOC along a trip at a route position (first crossing of the position).
double soc_at_position(const Trip& trip, const OptimalTrajectory& trajectory, double position);

/// Per-bin mean of the DP SOC of each trip at bin centers. Throws EmptyCorpus.
RepresentativeSocProfile representative_profile(std::span<const SolvedTrip> solved, const RouteBins& bins);

nlohmann::json profile_to_json(const RepresentativeSocProfile& profile);
RepresentativeSocProfile profile_from_json(const nlohmann::json& doc);

struct AecmsConfig {
    double s0 = 2.5;
    double kp = 40.0;
    double ki = 0.02;  // per second
    std::size_t torque_candidates = 41;
    double tie_epsilon = 1e-12;

    void validate() const;
};

struct AecmsState {
    double integral = 0.0;  // SOC * s
    double factor = 0.0;    // last equivalence factor
};

/// Equivalence factor for a tracking error, applying the clamp to [s0/2, 2 s0]
/// and conditional integration (the integral only moves when doing so does
/// not push further into saturation).
double aecms_update_factor(double error, double sample_time, const AecmsConfig& cfg, AecmsState& st);

/// Minimizes t_s * (P_f + s * P_q) over the same candidate grid as the MPC.
ControlInput aecms_choose(const PowertrainState& x, const Disturbance& w, double factor,
                          const PowertrainParams& params, const AecmsConfig& cfg);

ControlInput aecms_step(const PowertrainState& x, const Disturbance& w, double soc_ref, const PowertrainParams& params,
                        const AecmsConfig& cfg, AecmsState& st);

}  // namespace emslab
