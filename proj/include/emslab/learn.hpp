#pragma once

// Position-indexed linear value-function approximation.

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "emslab/dp.hpp"
#include "emslab/trip.hpp"

namespace emslab {

inline constexpr int kPolicySchemaVersion = 1;
inline constexpr std::size_t kMinRowsPerBin = 16;
inline constexpr double kDefaultRidge = 1e-6;

using WeightVector = std::array<double, kFeatureCount>;

/// Per-feature affine normalization; the bias entry is always (0, 1).
struct FeatureScaling {
    WeightVector mean{};
    WeightVector scale{};

    FeatureVector apply(const FeatureVector& raw) const;
};

/// A trip together with its DP-optimal trajectory.
struct SolvedTrip {
    Trip trip;
    OptimalTrajectory trajectory;
};

struct TrainingRow {
    FeatureVector features;
    double target = 0.0;
    std::uint32_t trip = 0;  // index into TrainingSet::trip_ids
    std::uint32_t step = 0;
    bool counterfactual = false;
};

struct TrainingSet {
    RouteStats stats;
    std::vector<std::string> trip_ids;
    std::vector<std::vector<TrainingRow>> bins;  // one entry per route bin

    std::size_t row_count() const;
};

/// Besides the trajectory rows, each recorded probe value becomes a row
/// whose SOC and engine status are the probe state and whose cumulative fuel
/// is shifted by fuel_offsets[(step + j) % 3] (kg, floored at zero). V* does
/// not depend on the trip history, so these rows separate the SOC, engine and
/// fuel features from progress along the trip.
struct TrainingOptions {
    double bin_length = 100.0;
    bool counterfactual = true;
    std::array<double, 3> fuel_offsets{-0.1, 0.0, 0.1};

    void validate() const;
};

/// Training rows from every trip in `trips`; route statistics are built from
/// the same trips. Throws EmptyCorpus.
TrainingSet build_training_set(std::span<const SolvedTrip> trips, const TrainingOptions& options = {});

/// All trips except `target_id`. Throws UnknownTrip and CorpusTooSmall.
TrainingSet leave_one_out(std::span<const SolvedTrip> corpus, const std::string& target_id,
                          const TrainingOptions& options = {});

struct PolicyParams {
    std::string route_id;
    RouteStats stats;  // carries the bins
    std::vector<WeightVector> weights;
    FeatureScaling scaling;
    std::vector<std::size_t> sample_counts;
    std::vector<bool> global_fallback;  // bin uses the route-global weights
    double ridge_lambda = kDefaultRidge;
    std::vector<std::string> training_trips;

    const RouteBins& bins() const { return stats.bins; }
    void validate() const;
};

/// Scaled ridge regression per bin. Bins with fewer than kMinRowsPerBin rows,
/// or that are rank deficient at ridge 0, use the route-global fit. Throws
/// DegenerateBin when the global fit is itself rank deficient at ridge 0, and
/// EmptyCorpus when there are no rows at all.
PolicyParams fit(const TrainingSet& training, double ridge_lambda = kDefaultRidge);

/// Solves min ||X w - y||^2 + lambda ||w||^2 for one design matrix given row
/// by row. Returns false when lambda == 0 and X lacks full column rank.
bool ridge_solve(std::span<const FeatureVector> rows, std::span<const double> targets, double lambda,
                 WeightVector& out);

double evaluate_vhat(const PolicyParams& policy, const FeatureVector& features, std::size_t bin);

struct ActiveWeights {
    std::size_t bin = 0;
    WeightVector weights{};
};

ActiveWeights policy_for_position(const PolicyParams& policy, double position);

nlohmann::json policy_to_json(const PolicyParams& policy);
PolicyParams policy_from_json(const nlohmann::json& doc);
void save_policy(const PolicyParams& policy, const std::filesystem::path& path);
PolicyParams load_policy(const std::filesystem::path& path);

}  // namespace emslab
