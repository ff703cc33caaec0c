#include "emslab/sim.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "emslab/errors.hpp"

namespace emslab {

using nlohmann::json;

namespace {

std::string fmt(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string fmt_fixed(double v, int digits)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, digits);
    return std::string(buf, res.ptr);
}

}  // namespace

// ---------------------------------------------------------------------------
// Controllers

CdCsController::CdCsController(const PowertrainParams& params, CdCsConfig cfg) : params_(&params), cfg_(cfg)
{
    cfg_.validate(params);
}

ControlInput CdCsController::decide(const PowertrainState& x, const ControlContext& ctx)
{
    return cdcs_step(x, ctx.disturbance, *params_, cfg_, st_);
}

AecmsController::AecmsController(const PowertrainParams& params, RepresentativeSocProfile profile, AecmsConfig cfg)
    : params_(&params), profile_(std::move(profile)), cfg_(cfg)
{
    cfg_.validate();
}

ControlInput AecmsController::decide(const PowertrainState& x, const ControlContext& ctx)
{
    return aecms_step(x, ctx.disturbance, profile_.at(ctx.sample->position), *params_, cfg_, st_);
}

MpcController::MpcController(const PowertrainParams& params, std::shared_ptr<const CostToGo> vhat, RouteStats stats,
                             MpcConfig cfg)
    : params_(&params), vhat_(std::move(vhat)), stats_(std::move(stats)), cfg_(cfg), tracker_(stats_, cfg.sample_time)
{
    cfg_.validate();
    if (std::abs(cfg_.sample_time - params.sample_time) > 1e-12)
        throw std::invalid_argument("MpcController: sample time differs from the powertrain parameters");
}

void MpcController::reset()
{
    tracker_ = FeatureTracker(stats_, cfg_.sample_time);
    fallbacks_ = 0;
}

ControlInput MpcController::decide(const PowertrainState& x, const ControlContext& ctx)
{
    tracker_.observe(*ctx.sample, ctx.accel);
    MpcContext mc;
    mc.history = &tracker_;
    mc.step = ctx.step;
    mc.position = ctx.sample->position;
    mc.vehicle_speed = ctx.sample->vehicle_speed;
    mc.accel = ctx.accel;
    mc.aux_power = ctx.sample->aux_power;
    const MpcStepResult r = mpc_step(x, ctx.disturbance, *vhat_, mc, *params_, cfg_);
    if (r.fallback_used) ++fallbacks_;
    return r.chosen;
}

// ---------------------------------------------------------------------------
// Simulation

SimResult simulate(const Trip& trip, Controller& controller, const PowertrainParams& params,
                   const PowertrainState& x0)
{
    if (std::abs(trip.sample_time - params.sample_time) > 1e-12)
        throw ValidationError("simulate: trip sample time differs from params; resample first");
    const std::size_t n = trip.size();
    SimResult res;
    res.trip_id = trip.trip_id;
    res.route_id = trip.route_id;
    res.controller = controller.label();
    res.sample_time = params.sample_time;
    SimTraces& t = res.traces;
    t.soc.reserve(n + 1);
    t.soc.push_back(x0.soc);
    t.engine_on.push_back(x0.engine_on ? 1 : 0);

    controller.reset();
    PowertrainState x = x0;
    for (std::size_t k = 0; k < n; ++k) {
        ControlContext ctx;
        ctx.step = k;
        ctx.sample = &trip.samples[k];
        ctx.accel = trip.accel(k);
        ctx.disturbance = trip.disturbance(k);
        const ControlInput u = controller.decide(x, ctx);
        const StepResult r = step(x, u, ctx.disturbance, params);
        controller.record(r);
        t.engine_torque.push_back(u.engine_torque);
        t.engine_switch.push_back(u.engine_switch ? 1 : 0);
        t.motor_torque.push_back(r.outputs.motor_torque);
        t.battery_power.push_back(r.outputs.battery_terminal_power);
        t.internal_power.push_back(r.outputs.battery_internal_power);
        t.fuel_power.push_back(r.outputs.fuel_power);
        t.fuel_rate.push_back(r.outputs.fuel_mass / params.sample_time);
        t.infeasible.push_back(r.outputs.infeasible ? 1 : 0);
        x = r.next;
        t.soc.push_back(x.soc);
        t.engine_on.push_back(x.engine_on ? 1 : 0);
    }
    res.distance_miles = trip.total_distance() / kMetersPerMile;
    return recompute_totals(std::move(res), params);
}

SimResult recompute_totals(SimResult res, const PowertrainParams& params)
{
    const SimTraces& t = res.traces;
    const double ts = res.sample_time;
    const double jpg = params.joules_per_gallon();
    res.fuel_kg = 0.0;
    res.fuel_gallons = 0.0;
    res.battery_kwh = 0.0;
    res.total_cost = 0.0;
    res.infeasible_step_count = 0;
    res.engine_start_count = 0;
    double fuel_j = 0.0;
    double batt_j = 0.0;
    for (std::size_t k = 0; k < t.fuel_power.size(); ++k) {
        res.fuel_kg += t.fuel_rate[k] * ts;
        fuel_j += t.fuel_power[k] * ts;
        batt_j += t.internal_power[k] * ts;
        res.total_cost += stage_cost(t.fuel_power[k], t.internal_power[k], params);
        res.infeasible_step_count += t.infeasible[k];
        if (t.engine_switch[k] && !t.engine_on[k]) ++res.engine_start_count;
    }
    res.fuel_gallons = fuel_j / jpg;
    res.battery_kwh = batt_j / kJoulesPerKwh;
    res.net_battery_kwh = std::max(0.0, res.battery_kwh);
    res.mpge = res.distance_miles > 0.0 ? mpge(res, params) : 0.0;
    return res;
}

double mpge(double miles, double fuel_gallons, double net_battery_kwh, double kwh_per_gallon)
{
    if (!(miles > 0.0)) throw ZeroDistance("MPGe is undefined for a trip with no distance");
    const double gallons = fuel_gallons + net_battery_kwh / kwh_per_gallon;
    if (gallons <= 0.0) return std::numeric_limits<double>::infinity();
    return miles / gallons;
}

double mpge(const SimResult& r, const PowertrainParams& params)
{
    return mpge(r.distance_miles, r.fuel_gallons, r.net_battery_kwh, params.kwh_per_gallon);
}

void save_sim_traces_csv(const SimResult& r, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "# emslab-sim v1 trip_id=" << r.trip_id << " route_id=" << r.route_id << " controller=" << r.controller
        << " sample_time=" << fmt(r.sample_time) << " distance_miles=" << fmt(r.distance_miles) << '\n';
    out << "step,soc,engine_on,engine_torque_Nm,engine_switch,motor_torque_Nm,battery_power_W,internal_power_W,"
           "fuel_power_W,fuel_rate_kgps,infeasible\n";
    const SimTraces& t = r.traces;
    for (std::size_t k = 0; k <= t.fuel_power.size(); ++k) {
        out << k << ',' << fmt(t.soc[k]) << ',' << int(t.engine_on[k]);
        if (k < t.fuel_power.size()) {
            out << ',' << fmt(t.engine_torque[k]) << ',' << int(t.engine_switch[k]) << ',' << fmt(t.motor_torque[k])
                << ',' << fmt(t.battery_power[k]) << ',' << fmt(t.internal_power[k]) << ',' << fmt(t.fuel_power[k])
                << ',' << fmt(t.fuel_rate[k]) << ',' << int(t.infeasible[k]);
        } else {
            out << ",,,,,,,,";
        }
        out << '\n';
    }
}

SimResult load_sim_traces_csv(const std::filesystem::path& path, const PowertrainParams& params)
{
    std::ifstream in(path);
    if (!in) throw MissingArtifacts("simulation trace not found: " + path.string());
    SimResult r;
    std::string line;
    std::getline(in, line);
    if (line.rfind("# emslab-sim v1", 0) != 0) throw SchemaError(path.string() + ": missing trace header");
    std::istringstream meta(line.substr(16));
    std::string kv;
    while (meta >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        if (key == "trip_id") r.trip_id = val;
        else if (key == "route_id") r.route_id = val;
        else if (key == "controller") r.controller = val;
        else if (key == "sample_time") r.sample_time = std::stod(val);
        else if (key == "distance_miles") std::from_chars(val.data(), val.data() + val.size(), r.distance_miles);
    }
    std::getline(in, line);
    auto num = [&](const std::string& c) {
        double v = 0.0;
        const auto res = std::from_chars(c.data(), c.data() + c.size(), v);
        if (res.ec != std::errc()) throw ParseError(path.string() + ": bad number '" + c + "'");
        return v;
    };
    SimTraces& t = r.traces;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (cells.size() != 11) throw ParseError(path.string() + ": expected 11 columns");
        t.soc.push_back(num(cells[1]));
        t.engine_on.push_back(cells[2] == "1");
        if (cells[3].empty()) continue;
        t.engine_torque.push_back(num(cells[3]));
        t.engine_switch.push_back(cells[4] == "1");
        t.motor_torque.push_back(num(cells[5]));
        t.battery_power.push_back(num(cells[6]));
        t.internal_power.push_back(num(cells[7]));
        t.fuel_power.push_back(num(cells[8]));
        t.fuel_rate.push_back(num(cells[9]));
        t.infeasible.push_back(cells[10] == "1");
    }
    if (t.soc.size() != t.fuel_power.size() + 1) throw ParseError(path.string() + ": incomplete trace");
    return recompute_totals(std::move(r), params);
}

json sim_summary_json(const SimResult& r)
{
    auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    return {{"kind", "emslab-sim-summary"},
            {"schema_version", 1},
            {"trip_id", r.trip_id},
            {"route_id", r.route_id},
            {"controller", r.controller},
            {"steps", r.traces.fuel_power.size()},
            {"fuel_kg", r.fuel_kg},
            {"fuel_gallons", r.fuel_gallons},
            {"battery_kwh", r.battery_kwh},
            {"net_battery_kwh", r.net_battery_kwh},
            {"distance_miles", r.distance_miles},
            {"total_cost_gal", r.total_cost},
            {"final_soc", r.traces.soc.back()},
            {"infeasible_step_count", r.infeasible_step_count},
            {"engine_start_count", r.engine_start_count},
            {"mpge", finite_or_null(r.mpge)}};
}

// ---------------------------------------------------------------------------
// Comparison

double percent_delta(double value, double reference) { return (value - reference) / reference * 100.0; }

namespace {

template <class Fn>
void parallel_for(std::size_t count, Fn&& fn)
{
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n_workers =
        std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(count, 1));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<TripComparison> compare_route(std::span<const SolvedTrip> corpus, const PowertrainParams& params,
                                          const PowertrainState& x0, const CompareConfig& cfg)
{
    std::vector<TripComparison> out(corpus.size());
    parallel_for(corpus.size(), [&](std::size_t i) {
        const SolvedTrip& target = corpus[i];
        TripComparison& row = out[i];
        row.route_id = target.trip.route_id;
        row.trip_id = target.trip.trip_id;
        auto put = [&](std::size_t c, const SimResult& r) {
            row.mpge[c] = r.mpge;
            row.final_soc[c] = r.traces.soc.back();
            row.infeasible_steps[c] = r.infeasible_step_count;
        };

        CdCsController cdcs(params, cfg.cdcs);
        put(0, simulate(target.trip, cdcs, params, x0));

        if (corpus.size() >= 2) {
            const TrainingSet ts = leave_one_out(corpus, target.trip.trip_id, cfg.training);
            std::vector<SolvedTrip> others;
            for (const auto& s : corpus)
                if (s.trip.trip_id != target.trip.trip_id) others.push_back(s);
            AecmsController aecms(params, representative_profile(others, ts.stats.bins), cfg.aecms);
            put(1, simulate(target.trip, aecms, params, x0));

            auto policy = std::make_shared<PolicyParams>(fit(ts, cfg.ridge_lambda));
            struct Owned final : CostToGo {
                std::shared_ptr<const PolicyParams> p;
                double value(std::size_t, const PowertrainState&, const FeatureVector& f, std::size_t b) const override
                {
                    return evaluate_vhat(*p, f, b);
                }
            };
            auto vhat = std::make_shared<Owned>();
            vhat->p = policy;
            MpcConfig mc = cfg.mpc;
            mc.sample_time = params.sample_time;
            MpcController mpc(params, vhat, policy->stats, mc);
            put(2, simulate(target.trip, mpc, params, x0));
        }

        ReplayController dp(target.trajectory.inputs);
        put(3, simulate(target.trip, dp, params, x0));
    });
    return out;
}

ComparisonReport summarize(std::vector<TripComparison> trips)
{
    ComparisonReport rep;
    std::vector<std::string> order;
    std::map<std::string, std::vector<const TripComparison*>> by_route;
    for (const auto& t : trips) {
        if (!by_route.count(t.route_id)) order.push_back(t.route_id);
        by_route[t.route_id].push_back(&t);
    }
    for (const auto& route : order) {
        RouteSummary s;
        s.route_id = route;
        const auto& rows = by_route[route];
        s.trip_count = rows.size();
        for (std::size_t c = 0; c < kControllerLabels.size(); ++c) {
            double sum = 0.0;
            std::size_t n = 0;
            bool complete = true;
            for (const auto* r : rows) {
                if (r->mpge[c]) {
                    sum += *r->mpge[c];
                    ++n;
                } else {
                    complete = false;
                }
            }
            if (n > 0 && complete) s.average_mpge[c] = sum / static_cast<double>(n);
        }
        for (std::size_t c = 0; c < kControllerLabels.size(); ++c) {
            if (!s.average_mpge[c]) continue;
            if (s.average_mpge[0]) s.delta_vs_cdcs_pct[c] = percent_delta(*s.average_mpge[c], *s.average_mpge[0]);
            if (s.average_mpge[3]) s.delta_vs_dp_pct[c] = percent_delta(*s.average_mpge[c], *s.average_mpge[3]);
        }
        rep.routes.push_back(s);
    }
    rep.trips = std::move(trips);
    return rep;
}

ComparisonReport compare(std::span<const std::vector<SolvedTrip>> routes, const PowertrainParams& params,
                         const PowertrainState& x0, const CompareConfig& cfg)
{
    std::vector<TripComparison> all;
    for (const auto& corpus : routes) {
        auto rows = compare_route(corpus, params, x0, cfg);
        all.insert(all.end(), rows.begin(), rows.end());
    }
    return summarize(std::move(all));
}

std::string report_summary_csv(const ComparisonReport& rep)
{
    std::ostringstream o;
    o << "route_id,controller,trips,average_mpge,delta_vs_cdcs_pct,delta_vs_dp_pct\n";
    auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("unavailable"); };
    for (const auto& s : rep.routes)
        for (std::size_t c = 0; c < kControllerLabels.size(); ++c)
            o << s.route_id << ',' << kControllerLabels[c] << ',' << s.trip_count << ',' << opt(s.average_mpge[c])
              << ',' << opt(s.delta_vs_cdcs_pct[c]) << ',' << opt(s.delta_vs_dp_pct[c]) << '\n';
    return o.str();
}

std::string report_trips_csv(const ComparisonReport& rep)
{
    std::ostringstream o;
    o << "route_id,trip_id";
    for (const char* c : kControllerLabels) o << ',' << c << "_mpge";
    for (const char* c : kControllerLabels) o << ',' << c << "_final_soc";
    for (const char* c : kControllerLabels) o << ',' << c << "_infeasible_steps";
    o << '\n';
    for (const auto& t : rep.trips) {
        o << t.route_id << ',' << t.trip_id;
        for (const auto& v : t.mpge) o << ',' << (v ? fmt(*v) : "unavailable");
        for (const auto& v : t.final_soc) o << ',' << (v ? fmt(*v) : "unavailable");
        for (std::size_t c = 0; c < 4; ++c) o << ',' << t.infeasible_steps[c];
        o << '\n';
    }
    return o.str();
}

std::string report_markdown(const ComparisonReport& rep)
{
    std::ostringstream o;
    o << "| route | trips | CD-CS | A-ECMS | proposed | DP | proposed vs CD-CS | proposed vs DP |\n";
    o << "|---|---|---|---|---|---|---|---|\n";
    auto cell = [](const std::optional<double>& v, int d) { return v ? fmt_fixed(*v, d) : std::string("n/a"); };
    for (const auto& s : rep.routes) {
        o << "| " << s.route_id << " | " << s.trip_count;
        for (std::size_t c = 0; c < 4; ++c) o << " | " << cell(s.average_mpge[c], 2);
        o << " | " << cell(s.delta_vs_cdcs_pct[2], 2) << "% | " << cell(s.delta_vs_dp_pct[2], 2) << "% |\n";
    }
    return o.str();
}

std::string report_svg(const ComparisonReport& rep)
{
    const char* colors[4] = {"#8c8c8c", "#e0a030", "#3070c0", "#30a050"};
    const double panel_h = 220.0, bar_w = 6.0, gap = 8.0, left = 60.0, top = 30.0;
    std::size_t max_trips = 1;
    std::map<std::string, std::vector<const TripComparison*>> by_route;
    for (const auto& t : rep.trips) by_route[t.route_id].push_back(&t);
    double vmax = 1.0;
    for (const auto& t : rep.trips)
        for (const auto& v : t.mpge)
            if (v && std::isfinite(*v)) vmax = std::max(vmax, *v);
    for (const auto& [r, rows] : by_route) max_trips = std::max(max_trips, rows.size());
    const double width = left + static_cast<double>(max_trips) * (4 * bar_w + gap) + 20.0;
    const double height = top + static_cast<double>(rep.routes.size()) * (panel_h + 40.0);
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt_fixed(width, 0) << "\" height=\""
      << fmt_fixed(height, 0) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    for (std::size_t c = 0; c < 4; ++c)
        o << "<rect x=\"" << fmt_fixed(left + 90.0 * static_cast<double>(c), 0) << "\" y=\"6\" width=\"10\" height=\"10\" fill=\""
          << colors[c] << "\"/><text x=\"" << fmt_fixed(left + 14 + 90.0 * static_cast<double>(c), 0) << "\" y=\"15\">"
          << kControllerLabels[c] << "</text>\n";
    double y0 = top;
    for (const auto& s : rep.routes) {
        const auto& rows = by_route[s.route_id];
        const double base = y0 + panel_h;
        o << "<text x=\"4\" y=\"" << fmt_fixed(y0 + 12, 0) << "\">" << s.route_id << " (MPGe)</text>\n";
        o << "<line x1=\"" << left << "\" y1=\"" << fmt_fixed(base, 1) << "\" x2=\"" << fmt_fixed(width - 10, 1)
          << "\" y2=\"" << fmt_fixed(base, 1) << "\" stroke=\"black\"/>\n";
        o << "<text x=\"4\" y=\"" << fmt_fixed(y0 + 28, 0) << "\">" << fmt_fixed(vmax, 0) << "</text>\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double x = left + static_cast<double>(i) * (4 * bar_w + gap);
            for (std::size_t c = 0; c < 4; ++c) {
                const auto& v = rows[i]->mpge[c];
                if (!v || !std::isfinite(*v)) continue;
                const double h = (panel_h - 20.0) * (*v / vmax);
                o << "<rect x=\"" << fmt_fixed(x + static_cast<double>(c) * bar_w, 1) << "\" y=\""
                  << fmt_fixed(base - h, 1) << "\" width=\"" << fmt_fixed(bar_w, 1) << "\" height=\"" << fmt_fixed(h, 1)
                  << "\" fill=\"" << colors[c] << "\"/>\n";
            }
        }
        y0 += panel_h + 40.0;
    }
    o << "</svg>\n";
    return o.str();
}

}  // namespace emslab
