#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "emslab/errors.hpp"
#include "emslab/learn.hpp"
#include "helpers.hpp"

using namespace emslab;

namespace {

RouteStats toy_stats(std::size_t bins)
{
    RouteStats s;
    s.bins.route_id = "toy";
    s.bins.bin_length = 100.0;
    s.bins.bin_count = bins;
    s.bins.total_distance = 100.0 * static_cast<double>(bins);
    s.time_left.assign(bins, 10.0);
    s.mean_total_time = 10.0 * static_cast<double>(bins);
    return s;
}

FeatureVector random_features(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    FeatureVector f;
    f[kSoc] = 0.2 + 0.7 * u(rng);
    f[kEngineStatus] = u(rng) < 0.5 ? 0.0 : 1.0;
    f[kAvgAuxPower] = 300.0 + 900.0 * u(rng);
    f[kFuelConsumed] = 0.4 * u(rng);
    f[kAvgSpeed] = 25.0 * u(rng);
    f[kAvgAccel] = u(rng) - 0.5;
    f[kTimeLeft] = 600.0 * u(rng);
    f[kBias] = 1.0;
    return f;
}

constexpr WeightVector kTrueWeights{-0.4, 0.03, 2e-5, 0.8, -0.002, 0.05, 1e-4, 0.3};

double dot(const WeightVector& w, const FeatureVector& f)
{
    double v = 0.0;
    for (std::size_t l = 0; l < kFeatureCount; ++l) v += w[l] * f[l];
    return v;
}

/// Synthetic training set; the target is `target(features, bin)`.
template <class F>
TrainingSet synthetic_set(std::size_t bins, std::size_t rows_per_bin, std::uint64_t seed, F target)
{
    std::mt19937_64 rng(seed);
    TrainingSet ts;
    ts.stats = toy_stats(bins);
    ts.trip_ids = {"t0"};
    ts.bins.resize(bins);
    for (std::size_t b = 0; b < bins; ++b)
        for (std::size_t i = 0; i < rows_per_bin; ++i) {
            TrainingRow r;
            r.features = random_features(rng);
            r.target = target(r.features, b);
            r.step = static_cast<std::uint32_t>(i);
            ts.bins[b].push_back(r);
        }
    return ts;
}

double residual(const PolicyParams& pol, const TrainingSet& ts, std::size_t b)
{
    double s = 0.0;
    for (const auto& r : ts.bins[b]) {
        const double e = evaluate_vhat(pol, r.features, b) - r.target;
        s += e * e;
    }
    return s;
}

/// Normal-equations oracle in scaled coordinates.
WeightVector normal_equations(const PolicyParams& pol, const std::vector<TrainingRow>& rows, double lambda)
{
    const Eigen::Index p = kFeatureCount;
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), p);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const FeatureVector s = pol.scaling.apply(rows[i].features);
        for (Eigen::Index l = 0; l < p; ++l) x(static_cast<Eigen::Index>(i), l) = s[static_cast<std::size_t>(l)];
        y(static_cast<Eigen::Index>(i)) = rows[i].target;
    }
    const Eigen::MatrixXd a = x.transpose() * x + lambda * Eigen::MatrixXd::Identity(p, p);
    const Eigen::VectorXd w = a.ldlt().solve(x.transpose() * y);
    WeightVector out{};
    for (Eigen::Index l = 0; l < p; ++l) out[static_cast<std::size_t>(l)] = w(l);
    return out;
}

std::vector<SolvedTrip> solved_corpus(std::size_t n)
{
    const PowertrainParams p = synthetic_params();
    const CycleSpec spec = test::short_route(1200.0);
    std::vector<SolvedTrip> out;
    for (std::size_t i = 0; i < n; ++i) {
        Trip t = generate_trip(spec, i);
        DpSolution s = solve_dp(t, p, DpGrid::uniform(p, 51, 11), {p.soc_max, false});
        out.push_back({std::move(t), std::move(s.trajectory)});
    }
    return out;
}

}  // namespace

TEST_SUITE("learn")
{
    TEST_CASE("exact linear targets are recovered at zero ridge")
    {
        const TrainingSet ts = synthetic_set(3, 60, 1, [](const FeatureVector& f, std::size_t) {
            return dot(kTrueWeights, f);
        });
        const PolicyParams pol = fit(ts, 0.0);
        for (std::size_t b = 0; b < 3; ++b) {
            CHECK_FALSE(pol.global_fallback[b]);
            for (const auto& r : ts.bins[b]) CHECK(std::abs(evaluate_vhat(pol, r.features, b) - r.target) < 1e-8);
        }
    }

    TEST_CASE("per-bin weights agree with a normal-equations solve")
    {
        std::mt19937_64 noise(5);
        std::normal_distribution<double> n01(0.0, 0.01);
        const TrainingSet ts = synthetic_set(2, 80, 2, [&](const FeatureVector& f, std::size_t b) {
            return dot(kTrueWeights, f) * (1.0 + 0.5 * static_cast<double>(b)) + n01(noise);
        });
        for (double lambda : {0.0, 1e-3, 1.0}) {
            const PolicyParams pol = fit(ts, lambda);
            for (std::size_t b = 0; b < 2; ++b) {
                const WeightVector ref = normal_equations(pol, ts.bins[b], lambda);
                for (std::size_t l = 0; l < kFeatureCount; ++l)
                    CHECK(std::abs(pol.weights[b][l] - ref[l]) < 1e-10 * std::max(1.0, std::abs(ref[l])));
            }
        }
    }

    TEST_CASE("a constant target loads only the bias weight")
    {
        const TrainingSet ts = synthetic_set(1, 40, 3, [](const FeatureVector&, std::size_t) { return 0.75; });
        const PolicyParams pol = fit(ts, 0.0);
        for (std::size_t l = 0; l < kFeatureCount; ++l) {
            if (l == kBias)
                CHECK(pol.weights[0][l] == doctest::Approx(0.75).epsilon(1e-12));
            else
                CHECK(std::abs(pol.weights[0][l]) < 1e-12);
        }
    }

    TEST_CASE("fitted residual never exceeds the zero-weight residual")
    {
        std::mt19937_64 noise(9);
        std::normal_distribution<double> n01(0.0, 0.2);
        const TrainingSet ts = synthetic_set(4, 30, 4, [&](const FeatureVector& f, std::size_t) {
            return std::sin(10.0 * f[kSoc]) + n01(noise);
        });
        for (double lambda : {0.0, 1e-6, 0.1, 10.0}) {
            const PolicyParams pol = fit(ts, lambda);
            for (std::size_t b = 0; b < 4; ++b) {
                double zero = 0.0;
                for (const auto& r : ts.bins[b]) zero += r.target * r.target;
                CHECK(residual(pol, ts, b) <= zero * (1.0 + 1e-12));
            }
        }
    }

    TEST_CASE("the approximation is affine in the features")
    {
        const TrainingSet ts = synthetic_set(2, 40, 6, [](const FeatureVector& f, std::size_t b) {
            return dot(kTrueWeights, f) + static_cast<double>(b);
        });
        const PolicyParams pol = fit(ts, 1e-3);
        std::mt19937_64 rng(8);
        for (int i = 0; i < 100; ++i) {
            const FeatureVector a = random_features(rng), c = random_features(rng);
            FeatureVector mid;
            for (std::size_t l = 0; l < kFeatureCount; ++l) mid[l] = 0.5 * (a[l] + c[l]);
            for (std::size_t b = 0; b < 2; ++b) {
                const double expect = 0.5 * (evaluate_vhat(pol, a, b) + evaluate_vhat(pol, c, b));
                CHECK(std::abs(evaluate_vhat(pol, mid, b) - expect) < 1e-12);
            }
        }
    }

    TEST_CASE("bias-only weights evaluate to the bias")
    {
        PolicyParams pol;
        pol.stats = toy_stats(2);
        pol.weights.assign(2, WeightVector{});
        pol.weights[1][kBias] = 3.5;
        pol.scaling.scale.fill(1.0);
        pol.sample_counts.assign(2, 0);
        pol.global_fallback.assign(2, false);
        std::mt19937_64 rng(1);
        const FeatureVector f = random_features(rng);
        CHECK(evaluate_vhat(pol, f, 0) == 0.0);
        CHECK(evaluate_vhat(pol, f, 1) == 3.5);
        CHECK_THROWS_AS(evaluate_vhat(pol, f, 2), BinOutOfRange);
    }

    TEST_CASE("weights are selected by position")
    {
        const TrainingSet ts = synthetic_set(5, 20, 7, [](const FeatureVector& f, std::size_t b) {
            return dot(kTrueWeights, f) * static_cast<double>(b + 1);
        });
        const PolicyParams pol = fit(ts, 0.0);
        CHECK(policy_for_position(pol, 0.0).bin == 0);
        CHECK(policy_for_position(pol, 250.0).bin == 2);
        CHECK(policy_for_position(pol, 500.0).bin == 4);
        CHECK(policy_for_position(pol, 1e6).bin == 4);
        CHECK(policy_for_position(pol, 250.0).weights == pol.weights[2]);
    }

    TEST_CASE("sparse bins fall back to the route-global weights")
    {
        TrainingSet ts = synthetic_set(2, 40, 10, [](const FeatureVector& f, std::size_t) { return dot(kTrueWeights, f); });
        ts.bins[1].resize(kMinRowsPerBin - 1);
        const PolicyParams pol = fit(ts, 0.0);
        CHECK_FALSE(pol.global_fallback[0]);
        CHECK(pol.global_fallback[1]);
        CHECK(pol.sample_counts[1] == kMinRowsPerBin - 1);
    }

    TEST_CASE("degenerate data needs a positive ridge")
    {
        TrainingSet ts = synthetic_set(1, 40, 11, [](const FeatureVector&, std::size_t) { return 1.0; });
        for (auto& r : ts.bins[0]) r.features[kAvgSpeed] = 2.0 * r.features[kSoc];
        CHECK_THROWS_AS(fit(ts, 0.0), DegenerateBin);
        CHECK_NOTHROW(fit(ts, 1e-3));
        TrainingSet empty;
        empty.stats = toy_stats(1);
        empty.bins.resize(1);
        CHECK_THROWS_AS(fit(empty, 0.0), EmptyCorpus);
    }

    TEST_CASE("weight norm shrinks as the ridge grows")
    {
        std::mt19937_64 noise(12);
        std::normal_distribution<double> n01(0.0, 0.05);
        const TrainingSet ts = synthetic_set(1, 100, 12, [&](const FeatureVector& f, std::size_t) {
            return dot(kTrueWeights, f) + n01(noise);
        });
        double prev_norm = INFINITY, prev_res = -1.0;
        for (double lambda : {0.0, 1e-4, 1e-2, 1.0, 100.0, 1e4}) {
            const PolicyParams pol = fit(ts, lambda);
            double norm = 0.0;
            for (double w : pol.weights[0]) norm += w * w;
            CHECK(norm <= prev_norm * (1.0 + 1e-12));
            const double res = residual(pol, ts, 0);
            CHECK(res >= prev_res * (1.0 - 1e-12));
            prev_norm = norm;
            prev_res = res;
        }
    }

    TEST_CASE("predictions do not depend on the units of a feature")
    {
        std::mt19937_64 noise(13);
        std::normal_distribution<double> n01(0.0, 0.05);
        const TrainingSet ts = synthetic_set(2, 50, 13, [&](const FeatureVector& f, std::size_t) {
            return dot(kTrueWeights, f) + n01(noise);
        });
        TrainingSet scaled = ts;
        for (auto& bin : scaled.bins)
            for (auto& r : bin) {
                r.features[kAvgAuxPower] *= 1e-3;
                r.features[kTimeLeft] *= 60.0;
            }
        const PolicyParams a = fit(ts, 0.1), b = fit(scaled, 0.1);
        for (std::size_t k = 0; k < 2; ++k)
            for (std::size_t i = 0; i < ts.bins[k].size(); ++i) {
                const double va = evaluate_vhat(a, ts.bins[k][i].features, k);
                const double vb = evaluate_vhat(b, scaled.bins[k][i].features, k);
                CHECK(std::abs(va - vb) < 1e-10 * std::max(1.0, std::abs(va)));
            }
    }

    TEST_CASE("ridge_solve reports rank deficiency only at zero ridge")
    {
        std::vector<FeatureVector> rows(3);
        std::vector<double> y{1.0, 2.0, 3.0};
        for (auto& r : rows) r[kBias] = 1.0;
        WeightVector w{};
        CHECK_FALSE(ridge_solve(rows, y, 0.0, w));
        CHECK(ridge_solve(rows, y, 1e-6, w));
    }

    TEST_CASE("training sets from solved trips and leave-one-out")
    {
        const std::vector<SolvedTrip> corpus = solved_corpus(3);
        const TrainingSet all = build_training_set(corpus);
        CHECK(all.trip_ids.size() == 3);
        CHECK(all.bins.size() == all.stats.bins.bin_count);

        TrainingOptions plain;
        plain.counterfactual = false;
        const TrainingSet direct = build_training_set(corpus, plain);
        std::size_t expected = 0;
        for (const auto& s : corpus) expected += s.trajectory.states.size() - 1;
        CHECK(direct.row_count() >= expected - 3);
        CHECK(direct.row_count() <= expected + 3);
        CHECK(all.row_count() > direct.row_count());

        const std::string target = corpus[1].trip.trip_id;
        const TrainingSet loo = leave_one_out(corpus, target);
        CHECK(loo.trip_ids.size() == 2);
        CHECK(std::find(loo.trip_ids.begin(), loo.trip_ids.end(), target) == loo.trip_ids.end());
        for (const auto& bin : loo.bins)
            for (const auto& r : bin) CHECK(r.trip < loo.trip_ids.size());

        CHECK_THROWS_AS(leave_one_out(corpus, "no-such-trip"), UnknownTrip);
        CHECK_THROWS_AS(leave_one_out(std::span(corpus).first(1), corpus[0].trip.trip_id), CorpusTooSmall);
        CHECK_THROWS_AS(build_training_set(std::span<const SolvedTrip>{}), EmptyCorpus);

        const TrainingSet two = build_training_set(std::span(corpus).first(2));
        const TrainingSet drop = leave_one_out(corpus, corpus[2].trip.trip_id);
        CHECK(two.row_count() == drop.row_count());

        const PolicyParams a = fit(all), b = fit(build_training_set(corpus));
        CHECK(policy_to_json(a).dump() == policy_to_json(b).dump());
    }

    TEST_CASE("policy JSON round trip")
    {
        const TrainingSet ts = synthetic_set(3, 30, 14, [](const FeatureVector& f, std::size_t) { return dot(kTrueWeights, f); });
        PolicyParams pol = fit(ts, 1e-4);
        test::TempDir dir("learn");
        save_policy(pol, dir.path / "p.json");
        const PolicyParams back = load_policy(dir.path / "p.json");
        CHECK(policy_to_json(back).dump() == policy_to_json(pol).dump());
        std::mt19937_64 rng(2);
        for (int i = 0; i < 20; ++i) {
            const FeatureVector f = random_features(rng);
            CHECK(evaluate_vhat(back, f, 1) == evaluate_vhat(pol, f, 1));
        }
        nlohmann::json bad = policy_to_json(pol);
        bad["schema_version"] = 42;
        CHECK_THROWS_AS(policy_from_json(bad), SchemaError);
    }
}
