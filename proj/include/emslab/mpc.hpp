#pragma once

// Receding-horizon controller with a learned terminal cost. Each step
// enumerates candidate inputs, predicts one step with the powertrain model
// under a frozen disturbance and scores stage cost plus the cost-to-go
// estimate at the predicted features.

#include <vector>

#include "emslab/dp.hpp"
#include "emslab/learn.hpp"
#include "emslab/powertrain.hpp"
#include "emslab/trip.hpp"

namespace emslab {

struct MpcConfig {
    std::size_t horizon = 1;
    std::size_t torque_candidates = 41;  // engine-on torques; 41 nests the DP default of 21
    double sample_time = 0.2;
    double tie_epsilon = 1e-12;  // gal

    void validate() const;
};

/// Cost-to-go estimate at a predicted successor.
class CostToGo {
public:
    virtual ~CostToGo() = default;
    /// `stage` is the trip step index of the successor state.
    virtual double value(std::size_t stage, const PowertrainState& next, const FeatureVector& features,
                         std::size_t bin) const = 0;
};

class LearnedCostToGo final : public CostToGo {
public:
    explicit LearnedCostToGo(const PolicyParams& policy) : policy_(&policy) {}
    double value(std::size_t, const PowertrainState&, const FeatureVector& features, std::size_t bin) const override
    {
        return evaluate_vhat(*policy_, features, bin);
    }

private:
    const PolicyParams* policy_;
};

/// Exact DP values of the trip being driven; for consistency checks only.
class TableCostToGo final : public CostToGo {
public:
    explicit TableCostToGo(const ValueTable& table) : table_(&table) {}
    double value(std::size_t stage, const PowertrainState& next, const FeatureVector&, std::size_t) const override
    {
        return table_->interpolate(std::min(stage, table_->stages()), next);
    }

private:
    const ValueTable* table_;
};

class ZeroCostToGo final : public CostToGo {
public:
    double value(std::size_t, const PowertrainState&, const FeatureVector&, std::size_t) const override { return 0.0; }
};

/// What the controller knows at step t: history through t and the current sample.
struct MpcContext {
    const FeatureTracker* history = nullptr;  // already observed sample t
    std::size_t step = 0;
    double position = 0.0;
    double vehicle_speed = 0.0;
    double accel = 0.0;
    double aux_power = 0.0;
};

struct CandidateCost {
    ControlInput input;
    double cost = 0.0;  // stage cost plus cost-to-go over the horizon, gal
    double stage_cost = 0.0;
};

struct MpcStepResult {
    ControlInput chosen;
    double predicted_cost = 0.0;
    std::size_t candidate_count = 0;
    bool fallback_used = false;
};

/// Successor features for one candidate under the frozen disturbance.
FeatureVector predict_features(const FeatureTracker& history, const PowertrainState& next,
                               const StepOutputs& outputs, double position_next);

/// Successor position used to pick the terminal bin, clamped to the route end.
double next_position(const MpcContext& ctx, const RouteStats& stats, double sample_time);

/// Every feasible candidate with its horizon cost, in enumeration order.
std::vector<CandidateCost> evaluate_candidates(const PowertrainState& x, const Disturbance& w, const CostToGo& vhat,
                                               const MpcContext& ctx, const PowertrainParams& params,
                                               const MpcConfig& cfg);

/// Lowest cost within epsilon of the minimum; prefers engine off, then the
/// smaller |T_e|, then enumeration order.
ControlInput tie_break(const std::vector<CandidateCost>& candidates, double epsilon);

/// Input applied when no candidate is feasible: full engine torque when the
/// motor cannot meet traction demand, engine off otherwise (friction brakes
/// take surplus braking).
ControlInput fallback_input(const Disturbance& w, const PowertrainParams& params);

MpcStepResult mpc_step(const PowertrainState& x, const Disturbance& w, const CostToGo& vhat, const MpcContext& ctx,
                       const PowertrainParams& params, const MpcConfig& cfg);

MpcStepResult mpc_step(const PowertrainState& x, const Disturbance& w, const PolicyParams& policy,
                       const MpcContext& ctx, const PowertrainParams& params, const MpcConfig& cfg);

}  // namespace emslab
