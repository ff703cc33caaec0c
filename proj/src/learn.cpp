#include "emslab/learn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "emslab/errors.hpp"

namespace emslab {

using nlohmann::json;

FeatureVector FeatureScaling::apply(const FeatureVector& raw) const
{
    FeatureVector out;
    for (std::size_t l = 0; l < kFeatureCount; ++l) out[l] = (raw[l] - mean[l]) / scale[l];
    return out;
}

std::size_t TrainingSet::row_count() const
{
    std::size_t n = 0;
    for (const auto& b : bins) n += b.size();
    return n;
}

void TrainingOptions::validate() const
{
    if (!(bin_length > 0.0)) throw std::invalid_argument("TrainingOptions: bin_length must be positive");
    for (double f : fuel_offsets)
        if (!std::isfinite(f)) throw std::invalid_argument("TrainingOptions: non-finite fuel offset");
}

TrainingSet build_training_set(std::span<const SolvedTrip> trips, const TrainingOptions& opt)
{
    opt.validate();
    if (trips.empty()) throw EmptyCorpus("no solved trips to train on");
    std::vector<Trip> raw;
    raw.reserve(trips.size());
    for (const auto& s : trips) raw.push_back(s.trip);
    TrainingSet ts;
    ts.stats = build_route_stats(raw, make_bins(raw, opt.bin_length));
    ts.bins.assign(ts.stats.bins.bin_count, {});
    for (const auto& s : trips) {
        const auto trip = static_cast<std::uint32_t>(ts.trip_ids.size());
        ts.trip_ids.push_back(s.trip.trip_id);
        const bool probes = opt.counterfactual && !s.trajectory.probes.empty();
        for (const ValueSample& v : values_on_trajectory(s.trajectory, s.trip, ts.stats)) {
            auto& rows = ts.bins[v.bin];
            const auto step = static_cast<std::uint32_t>(v.step);
            if (std::isfinite(v.value)) rows.push_back({v.features, v.value, trip, step, false});
            if (!probes) continue;
            const PowertrainState& x = s.trajectory.states[v.step];
            for (std::size_t j = 0; j < kProbeCount; ++j) {
                const double target = s.trajectory.probes[v.step][j];
                const double offset = opt.fuel_offsets[(v.step + j) % opt.fuel_offsets.size()];
                const PowertrainState q = probe_state(x, j);
                if (!std::isfinite(target)) continue;
                if (q.engine_on == x.engine_on && q.soc == x.soc && offset == 0.0) continue;
                FeatureVector f = v.features;
                f[kSoc] = q.soc;
                f[kEngineStatus] = q.engine_on ? 1.0 : 0.0;
                f[kFuelConsumed] = std::max(0.0, f[kFuelConsumed] + offset);
                rows.push_back({f, target, trip, step, true});
            }
        }
    }
    return ts;
}

TrainingSet leave_one_out(std::span<const SolvedTrip> corpus, const std::string& target_id,
                          const TrainingOptions& opt)
{
    const auto it = std::find_if(corpus.begin(), corpus.end(),
                                 [&](const SolvedTrip& s) { return s.trip.trip_id == target_id; });
    if (it == corpus.end()) throw UnknownTrip("trip '" + target_id + "' is not in the corpus");
    if (corpus.size() < 2) throw CorpusTooSmall("leave-one-out needs at least two trips");
    std::vector<SolvedTrip> rest;
    rest.reserve(corpus.size() - 1);
    for (const auto& s : corpus)
        if (s.trip.trip_id != target_id) rest.push_back(s);
    return build_training_set(rest, opt);
}

void PolicyParams::validate() const
{
    const std::size_t nb = stats.bins.bin_count;
    if (nb == 0) throw std::invalid_argument("policy: no bins");
    if (weights.size() != nb || sample_counts.size() != nb || global_fallback.size() != nb)
        throw std::invalid_argument("policy: per-bin arrays do not match the bin count");
    for (std::size_t l = 0; l < kFeatureCount; ++l) {
        if (!(scaling.scale[l] > 0.0) || !std::isfinite(scaling.mean[l]))
            throw std::invalid_argument("policy: feature scaling must be finite with positive scale");
    }
    for (const auto& w : weights)
        for (double v : w)
            if (!std::isfinite(v)) throw std::invalid_argument("policy: non-finite weight");
    if (ridge_lambda < 0.0) throw std::invalid_argument("policy: negative ridge");
}

bool ridge_solve(std::span<const FeatureVector> rows, std::span<const double> targets, double lambda,
                 WeightVector& out)
{
    const auto m = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index p = kFeatureCount;
    const Eigen::Index extra = lambda > 0.0 ? p : 0;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m + extra, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(m + extra);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index l = 0; l < p; ++l) a(i, l) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(l)];
        b(i) = targets[static_cast<std::size_t>(i)];
    }
    if (extra > 0) {
        const double r = std::sqrt(lambda);
        for (Eigen::Index l = 0; l < p; ++l) a(m + l, l) = r;
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < p) return false;
    const Eigen::VectorXd w = qr.solve(b);
    for (Eigen::Index l = 0; l < p; ++l) out[static_cast<std::size_t>(l)] = w(l);
    return true;
}

namespace {

FeatureScaling compute_scaling(const TrainingSet& ts)
{
    FeatureScaling sc;
    const double n = static_cast<double>(ts.row_count());
    for (const auto& bin : ts.bins)
        for (const auto& r : bin)
            for (std::size_t l = 0; l < kFeatureCount; ++l) sc.mean[l] += r.features[l];
    for (auto& m : sc.mean) m /= n;
    WeightVector var{};
    for (const auto& bin : ts.bins)
        for (const auto& r : bin)
            for (std::size_t l = 0; l < kFeatureCount; ++l) {
                const double d = r.features[l] - sc.mean[l];
                var[l] += d * d;
            }
    for (std::size_t l = 0; l < kFeatureCount; ++l) {
        const double sd = std::sqrt(var[l] / n);
        sc.scale[l] = sd > 1e-12 * std::max(1.0, std::abs(sc.mean[l])) ? sd : 1.0;
    }
    sc.mean[kBias] = 0.0;
    sc.scale[kBias] = 1.0;
    return sc;
}

}  // namespace

PolicyParams fit(const TrainingSet& training, double ridge_lambda)
{
    if (ridge_lambda < 0.0) throw std::invalid_argument("fit: negative ridge");
    const std::size_t total = training.row_count();
    if (total == 0) throw EmptyCorpus("fit: training set has no rows");

    PolicyParams pol;
    pol.route_id = training.stats.bins.route_id;
    pol.stats = training.stats;
    pol.ridge_lambda = ridge_lambda;
    pol.scaling = compute_scaling(training);

    const std::size_t nb = training.bins.size();
    std::vector<std::vector<FeatureVector>> xs(nb);
    std::vector<std::vector<double>> ys(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        for (const auto& r : training.bins[b]) {
            xs[b].push_back(pol.scaling.apply(r.features));
            ys[b].push_back(r.target);
        }
    }

    WeightVector global{};
    bool global_ok = false;
    auto global_weights = [&]() -> const WeightVector& {
        if (!global_ok) {
            std::vector<FeatureVector> all_x;
            std::vector<double> all_y;
            all_x.reserve(total);
            all_y.reserve(total);
            for (std::size_t b = 0; b < nb; ++b) {
                all_x.insert(all_x.end(), xs[b].begin(), xs[b].end());
                all_y.insert(all_y.end(), ys[b].begin(), ys[b].end());
            }
            if (!ridge_solve(all_x, all_y, ridge_lambda, global))
                throw DegenerateBin("route-global fit is rank deficient; use a positive ridge");
            global_ok = true;
        }
        return global;
    };

    pol.weights.resize(nb);
    pol.sample_counts.resize(nb);
    pol.global_fallback.assign(nb, false);
    for (std::size_t b = 0; b < nb; ++b) {
        pol.sample_counts[b] = xs[b].size();
        bool ok = xs[b].size() >= kMinRowsPerBin && ridge_solve(xs[b], ys[b], ridge_lambda, pol.weights[b]);
        if (!ok) {
            pol.weights[b] = global_weights();
            pol.global_fallback[b] = true;
        }
    }
    std::vector<std::string> ids = training.trip_ids;
    std::sort(ids.begin(), ids.end());
    pol.training_trips = std::move(ids);
    return pol;
}

double evaluate_vhat(const PolicyParams& policy, const FeatureVector& features, std::size_t bin)
{
    if (bin >= policy.weights.size())
        throw BinOutOfRange("bin " + std::to_string(bin) + " outside policy with " +
                            std::to_string(policy.weights.size()) + " bins");
    const WeightVector& w = policy.weights[bin];
    double v = 0.0;
    for (std::size_t l = 0; l < kFeatureCount; ++l)
        v += w[l] * ((features[l] - policy.scaling.mean[l]) / policy.scaling.scale[l]);
    return v;
}

ActiveWeights policy_for_position(const PolicyParams& policy, double position)
{
    const std::size_t b = policy.bins().bin_of(position);
    return {b, policy.weights.at(b)};
}

json policy_to_json(const PolicyParams& p)
{
    json j;
    j["schema_version"] = kPolicySchemaVersion;
    j["kind"] = "emslab-policy";
    j["route_id"] = p.route_id;
    j["route_stats"] = route_stats_to_json(p.stats);
    j["feature_names"] = kFeatureNames;
    j["scaling"] = {{"mean", p.scaling.mean}, {"scale", p.scaling.scale}};
    j["ridge_lambda"] = p.ridge_lambda;
    j["weights"] = p.weights;
    j["sample_counts"] = p.sample_counts;
    j["global_fallback"] = p.global_fallback;
    j["training_trips"] = p.training_trips;
    return j;
}

PolicyParams policy_from_json(const json& j)
{
    try {
        if (j.at("schema_version").get<int>() != kPolicySchemaVersion)
            throw SchemaError("policy: unsupported schema_version");
        PolicyParams p;
        p.route_id = j.at("route_id").get<std::string>();
        p.stats = route_stats_from_json(j.at("route_stats"));
        p.scaling.mean = j.at("scaling").at("mean").get<WeightVector>();
        p.scaling.scale = j.at("scaling").at("scale").get<WeightVector>();
        p.ridge_lambda = j.at("ridge_lambda").get<double>();
        p.weights = j.at("weights").get<std::vector<WeightVector>>();
        p.sample_counts = j.at("sample_counts").get<std::vector<std::size_t>>();
        p.global_fallback = j.at("global_fallback").get<std::vector<bool>>();
        p.training_trips = j.value("training_trips", std::vector<std::string>{});
        p.validate();
        return p;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("policy: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ValidationError(e.what());
    }
}

void save_policy(const PolicyParams& policy, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << policy_to_json(policy).dump(2) << '\n';
}

PolicyParams load_policy(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw MissingArtifacts("policy file not found: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return policy_from_json(j);
}

}  // namespace emslab
