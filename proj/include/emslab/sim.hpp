#pragma once

// Closed-loop simulation, fuel-economy metrics and the four-way comparison.

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "emslab/baselines.hpp"
#include "emslab/dp.hpp"
#include "emslab/learn.hpp"
#include "emslab/mpc.hpp"
#include "emslab/powertrain.hpp"
#include "emslab/trip.hpp"

namespace emslab {

inline constexpr double kMetersPerMile = 1609.344;

/// What a controller may see at step t. Nothing from later samples.
struct ControlContext {
    std::size_t step = 0;
    const TripSample* sample = nullptr;
    double accel = 0.0;
    Disturbance disturbance;
};

class Controller {
public:
    virtual ~Controller() = default;
    virtual std::string label() const = 0;
    /// Called once before the first step of a run.
    virtual void reset() {}
    virtual ControlInput decide(const PowertrainState& x, const ControlContext& ctx) = 0;
    /// Outcome of the input just applied.
    virtual void record(const StepResult&) {}
};

class CdCsController final : public Controller {
public:
    CdCsController(const PowertrainParams& params, CdCsConfig cfg = {});
    std::string label() const override { return "cdcs"; }
    void reset() override { st_ = {}; }
    ControlInput decide(const PowertrainState& x, const ControlContext& ctx) override;

private:
    const PowertrainParams* params_;
    CdCsConfig cfg_;
    CdCsState st_;
};

class AecmsController final : public Controller {
public:
    AecmsController(const PowertrainParams& params, RepresentativeSocProfile profile, AecmsConfig cfg = {});
    std::string label() const override { return "aecms"; }
    void reset() override { st_ = {}; }
    ControlInput decide(const PowertrainState& x, const ControlContext& ctx) override;
    const AecmsState& state() const { return st_; }

private:
    const PowertrainParams* params_;
    RepresentativeSocProfile profile_;
    AecmsConfig cfg_;
    AecmsState st_;
};

/// Receding-horizon controller. Owns the trip history it feeds to the
/// feature predictor.
class MpcController final : public Controller {
public:
    MpcController(const PowertrainParams& params, std::shared_ptr<const CostToGo> vhat, RouteStats stats,
                  MpcConfig cfg = {});
    std::string label() const override { return "mpc"; }
    void reset() override;
    ControlInput decide(const PowertrainState& x, const ControlContext& ctx) override;
    void record(const StepResult& r) override { tracker_.add_fuel(r.outputs.fuel_mass); }
    std::size_t fallback_count() const { return fallbacks_; }

private:
    const PowertrainParams* params_;
    std::shared_ptr<const CostToGo> vhat_;
    RouteStats stats_;
    MpcConfig cfg_;
    FeatureTracker tracker_;
    std::size_t fallbacks_ = 0;
};

/// Replays a fixed input sequence (the DP rollout).
class ReplayController final : public Controller {
public:
    ReplayController(std::vector<ControlInput> inputs, std::string label = "dp")
        : inputs_(std::move(inputs)), label_(std::move(label)) {}
    std::string label() const override { return label_; }
    ControlInput decide(const PowertrainState&, const ControlContext& ctx) override { return inputs_.at(ctx.step); }

private:
    std::vector<ControlInput> inputs_;
    std::string label_;
};

struct SimTraces {
    std::vector<double> soc;           // N + 1
    std::vector<std::uint8_t> engine_on;  // N + 1
    std::vector<double> engine_torque;    // N
    std::vector<std::uint8_t> engine_switch;
    std::vector<double> motor_torque;
    std::vector<double> battery_power;    // terminal, W
    std::vector<double> internal_power;   // W
    std::vector<double> fuel_power;       // W
    std::vector<double> fuel_rate;        // kg/s
    std::vector<std::uint8_t> infeasible;
};

struct SimResult {
    std::string trip_id;
    std::string route_id;
    std::string controller;
    double sample_time = 0.2;
    SimTraces traces;
    double fuel_kg = 0.0;
    double fuel_gallons = 0.0;       // fuel energy / (kWh per gallon)
    double battery_kwh = 0.0;        // integrated internal power, signed
    double net_battery_kwh = 0.0;    // max(0, battery_kwh)
    double distance_miles = 0.0;
    double total_cost = 0.0;         // sum of stage costs, gal
    std::size_t infeasible_step_count = 0;
    std::size_t engine_start_count = 0;
    double mpge = 0.0;
};

SimResult simulate(const Trip& trip, Controller& controller, const PowertrainParams& params,
                   const PowertrainState& x0);

/// distance / (fuel gallons + net battery kWh / kwh_per_gallon). Throws
/// ZeroDistance; +inf when no net energy was used.
double mpge(const SimResult& result, const PowertrainParams& params);
double mpge(double miles, double fuel_gallons, double net_battery_kwh, double kwh_per_gallon);

/// Totals recomputed from the traces.
SimResult recompute_totals(SimResult result, const PowertrainParams& params);

void save_sim_traces_csv(const SimResult& result, const std::filesystem::path& path);
SimResult load_sim_traces_csv(const std::filesystem::path& path, const PowertrainParams& params);
nlohmann::json sim_summary_json(const SimResult& result);

// ---------------------------------------------------------------------------
// Comparison

inline constexpr std::array<const char*, 4> kControllerLabels{"cdcs", "aecms", "proposed", "dp"};

struct CompareConfig {
    CdCsConfig cdcs;
    AecmsConfig aecms;
    MpcConfig mpc;
    double ridge_lambda = kDefaultRidge;
    TrainingOptions training;
};

struct TripComparison {
    std::string route_id;
    std::string trip_id;
    std::array<std::optional<double>, 4> mpge;  // indexed as kControllerLabels
    std::array<std::optional<double>, 4> final_soc;
    std::array<std::size_t, 4> infeasible_steps{};
};

struct RouteSummary {
    std::string route_id;
    std::size_t trip_count = 0;
    std::array<std::optional<double>, 4> average_mpge;
    std::array<std::optional<double>, 4> delta_vs_cdcs_pct;
    std::array<std::optional<double>, 4> delta_vs_dp_pct;
};

struct ComparisonReport {
    std::vector<TripComparison> trips;
    std::vector<RouteSummary> routes;
};

/// Percentage change of `value` relative to `reference`.
double percent_delta(double value, double reference);

/// All trips of one route with DP solutions. Leave-one-out per target trip:
/// the policy and the A-ECMS reference come from the other trips. With a
/// single trip both are unavailable.
std::vector<TripComparison> compare_route(std::span<const SolvedTrip> corpus, const PowertrainParams& params,
                                          const PowertrainState& x0, const CompareConfig& cfg);

ComparisonReport summarize(std::vector<TripComparison> trips);

ComparisonReport compare(std::span<const std::vector<SolvedTrip>> routes, const PowertrainParams& params,
                         const PowertrainState& x0, const CompareConfig& cfg);

std::string report_summary_csv(const ComparisonReport& report);
std::string report_trips_csv(const ComparisonReport& report);
std::string report_markdown(const ComparisonReport& report);
/// Grouped bar chart of per-trip MPGe, one panel per route.
std::string report_svg(const ComparisonReport& report);

}  // namespace emslab
