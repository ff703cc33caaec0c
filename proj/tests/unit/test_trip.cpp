#include <doctest.h>

#include <cmath>
#include <fstream>

#include "emslab/errors.hpp"
#include "helpers.hpp"

using namespace emslab;

namespace {

const char* kHeader = "time_s,position_m,vehicle_speed_mps,axle_speed_radps,wheel_torque_Nm,aux_power_W,gear,elevation_m\n";

CycleSpec cruise_spec(double speed)
{
    CycleSpec spec;
    spec.route_id = "cruise";
    SegmentSpec seg;
    seg.kind = "highway";
    seg.length = 20000.0;
    seg.mean_speed = speed;
    spec.segments = {seg};
    spec.congestion_std = 0.0;
    spec.aux_power_std = 0.0;
    return spec;
}

}  // namespace

TEST_SUITE("trip")
{
    TEST_CASE("well-formed two-row file loads")
    {
        const std::string csv = std::string(kHeader) + "0,0,1,3.125,10,500,1,0\n0.2,0.2,1,3.125,10,500,1,0\n";
        const Trip t = parse_trip_csv(csv, 0.2);
        CHECK(t.size() == 2);
        CHECK(t.samples[1].position == 0.2);
        CHECK(t.samples[0].gear_index == 1);
    }

    TEST_CASE("missing column and malformed rows are rejected")
    {
        const std::string no_axle =
            "time_s,position_m,vehicle_speed_mps,wheel_torque_Nm,aux_power_W,gear,elevation_m\n0,0,1,10,500,1,0\n";
        CHECK_THROWS_AS(parse_trip_csv(no_axle, 0.2), SchemaError);
        CHECK_THROWS_AS(parse_trip_csv(std::string(kHeader) + "0,0,abc,3,10,500,1,0\n", 0.2), ParseError);
        CHECK_THROWS_AS(parse_trip_csv(std::string(kHeader) + "0,0,1,3,10,500,1,0\n0,0,1,3,10,500,1,0\n", 0.2),
                        ValidationError);
        CHECK_THROWS_AS(parse_trip_csv(std::string(kHeader) + "0,0,-1,3,10,500,1,0\n", 0.2), ValidationError);
    }

    TEST_CASE("1 Hz source is resampled to 5 Hz by linear interpolation")
    {
        std::string csv = kHeader;
        for (int k = 0; k <= 10; ++k) {
            const double v = 2.0 * k;
            char row[160];
            std::snprintf(row, sizeof(row), "%d,%g,%g,%g,%g,600,1,0\n", k, static_cast<double>(k * k), v, v / 0.32,
                          100.0 + 10.0 * k);
            csv += row;
        }
        const Trip t = parse_trip_csv(csv, 0.2);
        CHECK(t.size() == 51);
        CHECK(t.sample_time == 0.2);
        // Midpoint between the 3 s and 4 s rows.
        const TripSample& mid = t.samples[17];
        CHECK(mid.time == doctest::Approx(3.4));
        CHECK(mid.vehicle_speed == doctest::Approx(6.0 + 0.4 * 2.0));
        CHECK(mid.position == doctest::Approx(9.0 + 0.4 * 7.0));
        CHECK(mid.wheel_torque_demand == doctest::Approx(130.0 + 0.4 * 10.0));
        CHECK(t.total_distance() == doctest::Approx(100.0).epsilon(1e-3));
    }

    TEST_CASE("trip CSV round trip is exact")
    {
        const Trip a = generate_trip(test::builtin("arterial"), 4);
        const Trip b = parse_trip_csv(trip_to_csv(a), a.sample_time);
        CHECK(b.trip_id == a.trip_id);
        CHECK(b.route_id == a.route_id);
        REQUIRE(b.size() == a.size());
        for (std::size_t k = 0; k < a.size(); ++k) {
            CHECK(b.samples[k].position == a.samples[k].position);
            CHECK(b.samples[k].wheel_torque_demand == a.samples[k].wheel_torque_demand);
        }
    }

    TEST_CASE("constant cruise demand equals the hand-evaluated road load")
    {
        // m g Cr + rho/2 CdA v^2 at 20 m/s, times the wheel radius.
        const double expected = 0.32 * (1700.0 * 9.81 * 0.010 + 0.5 * 1.2 * 0.65 * 400.0);
        CHECK(expected == doctest::Approx(103.2864).epsilon(1e-6));
        std::uint64_t seed = 0;
        Trip t;
        do {
            t = generate_trip(cruise_spec(20.0), seed++);
        } while (t.tag != "morning");
        std::size_t cruising = 0;
        for (std::size_t k = 0; k + 1 < t.size(); ++k) {
            const TripSample& s = t.samples[k];
            if (std::abs(s.vehicle_speed - 20.0) > 1e-9 || std::abs(t.samples[k + 1].vehicle_speed - 20.0) > 1e-9)
                continue;
            ++cruising;
            CHECK(s.wheel_torque_demand == doctest::Approx(expected).epsilon(1e-6));
            CHECK(s.wheel_torque_demand > 0.0);
        }
        CHECK(cruising > 1000);
    }

    TEST_CASE("zero-speed spec produces zero torque and zero distance")
    {
        CycleSpec spec = cruise_spec(0.0);
        spec.max_duration = 60.0;
        const Trip t = generate_trip(spec, 0);
        CHECK(t.size() > 0);
        CHECK(t.total_distance() == 0.0);
        for (const TripSample& s : t.samples) CHECK(s.wheel_torque_demand == 0.0);
        SegmentSpec bad;
        bad.length = -1.0;
        bad.mean_speed = 5.0;
        CycleSpec negative = cruise_spec(10.0);
        negative.segments.push_back(bad);
        CHECK_THROWS_AS(negative.validate(), SpecError);
    }

    TEST_CASE("generation is deterministic per seed and varies across seeds")
    {
        const CycleSpec spec = test::builtin("commute");
        const Trip a = generate_trip(spec, 3);
        const Trip b = generate_trip(spec, 3);
        const Trip c = generate_trip(spec, 4);
        CHECK(trip_to_csv(a) == trip_to_csv(b));
        CHECK(trip_to_csv(a) != trip_to_csv(c));
        const std::vector<Trip> ac{a, c};
        const RouteBins bins = make_bins(ac, 100.0);
        CHECK(bins.bin_count == static_cast<std::size_t>(std::ceil(a.total_distance() / 100.0)));
        CHECK(a.total_distance() == c.total_distance());
    }

    TEST_CASE("generated trips satisfy the sample invariants")
    {
        for (const CycleSpec& spec : builtin_routes()) {
            const Trip t = generate_trip(spec, 1);
            CHECK_NOTHROW(t.validate());
            CHECK(t.total_distance() == doctest::Approx(spec.route_length()));
            const VehicleBody& body = spec.vehicle;
            for (std::size_t k = 0; k < t.size(); ++k) {
                const TripSample& s = t.samples[k];
                CHECK(s.axle_speed >= 0.0);
                CHECK(s.position >= 0.0);
                CHECK(s.position <= t.total_distance());
                CHECK(s.gear_index == body.gear_for_speed(s.vehicle_speed));
                if (k) CHECK(s.position >= t.samples[k - 1].position);
            }
        }
    }

    TEST_CASE("bin counts")
    {
        test::StepSpec cruise{10.0 / 0.32, 50.0, 0.0, 2};
        Trip t = test::make_trip(std::vector<test::StepSpec>(501, cruise));
        CHECK(t.total_distance() == doctest::Approx(1000.0));
        std::vector<Trip> one{t};
        CHECK(make_bins(one, 100.0).bin_count == 10);

        Trip longer = test::make_trip(std::vector<test::StepSpec>(526, cruise));
        CHECK(longer.total_distance() == doctest::Approx(1050.0));
        std::vector<Trip> two{longer};
        const RouteBins bins = make_bins(two, 100.0);
        CHECK(bins.bin_count == 11);
        CHECK(bins.bin_center(10) == doctest::Approx(1025.0));
        CHECK(bins.bin_of(0.0) == 0);
        CHECK(bins.bin_of(1050.0) == 10);
        CHECK(bins.bin_of(999.999) == 9);
    }

    TEST_CASE("trips of different durations on one route share bins")
    {
        const Trip a = generate_trip(test::builtin("commute"), 0);
        Trip slow = a;
        for (std::size_t k = 0; k < slow.size(); ++k) slow.samples[k].time = 2.0 * a.samples[k].time;
        slow.sample_time = 0.4;
        slow = resample(slow, 0.2);
        CHECK(slow.size() > a.size());
        CHECK(std::abs(slow.total_distance() - a.total_distance()) <= 1e-3 * a.total_distance());
        const std::vector<Trip> ta{a}, ts{slow};
        const RouteBins ba = make_bins(ta, 100.0);
        const RouteBins bs = make_bins(ts, 100.0);
        CHECK(ba.bin_count == bs.bin_count);
        CHECK(ba.total_distance == doctest::Approx(bs.total_distance).epsilon(1e-3));

        Trip other = a;
        other.route_id = "elsewhere";
        const std::vector<Trip> mixed{a, other};
        CHECK_THROWS_AS(make_bins(mixed, 100.0), RouteMismatch);
    }

    TEST_CASE("every bin is reached by a trip that covers the route")
    {
        const Trip t = generate_trip(test::builtin("highway"), 2);
        const std::vector<Trip> v{t};
        const RouteBins bins = make_bins(v, 100.0);
        std::vector<bool> hit(bins.bin_count, false);
        for (const TripSample& s : t.samples) hit[bins.bin_of(s.position)] = true;
        for (std::size_t b = 0; b < bins.bin_count; ++b) CHECK(hit[b]);
    }

    TEST_CASE("features at the trip start use instantaneous values")
    {
        const Trip t = generate_trip(test::builtin("commute"), 0);
        const std::vector<Trip> v{t};
        const RouteStats stats = build_route_stats(v, make_bins(v, 100.0));
        const std::vector<PowertrainState> states{{0.9, false}};
        const std::vector<double> fuel;
        const FeatureVector f = extract_features(t, states, fuel, 0, stats);
        CHECK(f[kSoc] == 0.9);
        CHECK(f[kEngineStatus] == 0.0);
        CHECK(f[kAvgAuxPower] == t.samples[0].aux_power);
        CHECK(f[kFuelConsumed] == 0.0);
        CHECK(f[kAvgSpeed] == t.samples[0].vehicle_speed);
        CHECK(f[kAvgAccel] == 0.0);
        CHECK(f[kTimeLeft] == stats.mean_total_time);
        CHECK(f[kBias] == 1.0);
    }

    TEST_CASE("cumulative means match hand computation")
    {
        std::vector<test::StepSpec> steps;
        const std::vector<double> speeds{0.0, 2.0, 4.0, 4.0, 6.0};
        const std::vector<double> aux{100.0, 200.0, 300.0, 400.0, 500.0};
        for (std::size_t k = 0; k < speeds.size(); ++k) steps.push_back({speeds[k] / 0.32, 10.0, aux[k], 1});
        const Trip t = test::make_trip(steps, 1.0);
        const std::vector<Trip> v{t};
        const RouteStats stats = build_route_stats(v, make_bins(v, 5.0));
        const std::vector<PowertrainState> states(5, {0.5, true});
        const std::vector<double> fuel{0.001, 0.002, 0.003, 0.004, 0.005};
        const FeatureVector f = extract_features(t, states, fuel, 3, stats);
        CHECK(f[kAvgSpeed] == doctest::Approx((0.0 + 2.0 + 4.0 + 4.0) / 4.0));
        CHECK(f[kAvgAuxPower] == doctest::Approx(250.0));
        CHECK(f[kAvgAccel] == doctest::Approx((0.0 + 2.0 + 2.0 + 0.0) / 4.0));
        CHECK(f[kFuelConsumed] == doctest::Approx(0.006));
        CHECK(f[kEngineStatus] == 1.0);

        const Trip flat = test::make_trip(std::vector<test::StepSpec>(20, {5.0 / 0.32, 10.0, 300.0, 1}));
        const std::vector<Trip> fv{flat};
        const RouteStats fs = build_route_stats(fv, make_bins(fv, 100.0));
        const std::vector<PowertrainState> fstates(20, {0.5, false});
        const FeatureVector g = extract_features(flat, fstates, {}, 19, fs);
        CHECK(g[kAvgSpeed] == doctest::Approx(5.0));
    }

    TEST_CASE("features are causal")
    {
        const Trip t = generate_trip(test::builtin("arterial"), 5);
        const std::vector<Trip> v{t};
        const RouteStats stats = build_route_stats(v, make_bins(v, 100.0));
        Trip altered = t;
        for (std::size_t k = 301; k < altered.size(); ++k) {
            altered.samples[k].aux_power += 1000.0;
            altered.samples[k].vehicle_speed *= 0.5;
        }
        const std::vector<PowertrainState> states(t.size() + 1, {0.6, false});
        const std::vector<double> fuel(t.size(), 1e-4);
        for (std::size_t k : {0u, 10u, 150u, 300u}) {
            const FeatureVector a = extract_features(t, states, fuel, k, stats);
            const FeatureVector b = extract_features(altered, states, fuel, k, stats);
            CHECK(a.values == b.values);
        }
    }

    TEST_CASE("cycle spec JSON round trip")
    {
        const CycleSpec spec = test::builtin("highway");
        const CycleSpec back = cycle_spec_from_json(cycle_spec_to_json(spec));
        CHECK(cycle_spec_to_json(back) == cycle_spec_to_json(spec));
        CHECK(trip_to_csv(generate_trip(back, 9)) == trip_to_csv(generate_trip(spec, 9)));
    }
}
