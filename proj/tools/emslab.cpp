// emslab: generate trips, solve DP, train policies, simulate controllers and
// compare them, all inside one workspace directory.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "emslab/errors.hpp"
#include "emslab/oracle.hpp"
#include "emslab/sim.hpp"
#include "emslab/workspace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emslab;

namespace {

// ---------------------------------------------------------------------------
// Shared options and workspace plumbing

struct Globals {
    std::string workspace;
    std::string params_path;
    bool force = false;
    bool quiet = false;
};

WorkspaceLayout layout_of(const Globals& g)
{
    std::string root = g.workspace;
    if (root.empty())
        if (const char* env = std::getenv("EMSLAB_WORKSPACE")) root = env;
    if (root.empty()) root = ".";
    return {fs::absolute(root).lexically_normal()};
}

PowertrainParams params_of(const Globals& g, const WorkspaceLayout& ws, std::string* source = nullptr)
{
    fs::path p = g.params_path;
    if (p.empty() && fs::exists(ws.root / "params.json")) p = ws.root / "params.json";
    if (p.empty()) {
        if (source) *source = "builtin";
        return synthetic_params();
    }
    if (!fs::exists(p)) throw MissingArtifacts("params file not found: " + p.string());
    if (source) *source = p.string();
    PowertrainParams params = load_params(p);
    try {
        params.validate();
    } catch (const std::invalid_argument& e) {
        throw ValidationError(std::string("params: ") + e.what());
    }
    return params;
}

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) throw MissingArtifacts("cannot read " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

/// One planned output file. The writer targets a temporary path; nothing is
/// renamed into place until every output of the command has been produced.
struct Output {
    fs::path path;
    std::string kind;
    std::function<void(const fs::path&)> write;
};

class Transaction {
public:
    Transaction(WorkspaceLayout ws, bool force) : ws_(std::move(ws)), force_(force) {}

    void set_inputs(std::map<std::string, std::string> inputs, std::string cfg)
    {
        inputs_ = std::move(inputs);
        config_ = std::move(cfg);
    }

    void add(Output o) { outputs_.push_back(std::move(o)); }

    ManifestEntry entry_for(const Output& o) const
    {
        ManifestEntry e;
        e.kind = o.kind;
        e.inputs = inputs_;
        e.config_hash = config_;
        e.tool_version = std::string(tool_version());
        return e;
    }

    void commit()
    {
        Manifest manifest_ = Manifest::load(ws_.manifest());
        for (const auto& o : outputs_) check_overwrite(ws_, manifest_, ws_.relative(o.path), entry_for(o), force_);
        std::vector<fs::path> tmps;
        try {
            for (const auto& o : outputs_) {
                fs::create_directories(o.path.parent_path());
                const fs::path tmp = o.path.string() + ".partial";
                tmps.push_back(tmp);
                o.write(tmp);
            }
        } catch (...) {
            for (const auto& t : tmps) fs::remove(t);
            throw;
        }
        for (std::size_t i = 0; i < outputs_.size(); ++i) {
            fs::rename(tmps[i], outputs_[i].path);
            ManifestEntry e = entry_for(outputs_[i]);
            e.output_hash = sha256_file(outputs_[i].path);
            manifest_.record(ws_.relative(outputs_[i].path), std::move(e));
        }
        fs::create_directories(ws_.root);
        manifest_.save(ws_.manifest());
    }

private:
    WorkspaceLayout ws_;
    bool force_;
    std::map<std::string, std::string> inputs_;
    std::string config_;
    std::vector<Output> outputs_;
};

std::map<std::string, std::string> hash_inputs(const WorkspaceLayout& ws, const std::vector<fs::path>& files)
{
    std::map<std::string, std::string> out;
    for (const auto& f : files) out[ws.relative(f)] = sha256_file(f);
    return out;
}

std::vector<fs::path> list_files(const fs::path& dir, const std::string& suffix)
{
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (e.is_regular_file() && name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string stem_of(const fs::path& p, const std::string& suffix)
{
    const std::string name = p.filename().string();
    return name.substr(0, name.size() - suffix.size());
}

template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn)
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
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(count, 1));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::vector<std::uint64_t> parse_seeds(const std::vector<std::string>& items)
{
    std::vector<std::uint64_t> out;
    for (const auto& s : items) {
        const auto dash = s.find('-');
        try {
            if (dash == std::string::npos) {
                out.push_back(std::stoull(s));
            } else {
                const auto a = std::stoull(s.substr(0, dash));
                const auto b = std::stoull(s.substr(dash + 1));
                if (b < a) throw ValidationError("seed range '" + s + "' is reversed");
                for (auto v = a; v <= b; ++v) out.push_back(v);
            }
        } catch (const std::logic_error&) {
            throw ParseError("bad seed '" + s + "'");
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Trip load_trip_checked(const fs::path& path, const PowertrainParams& params)
{
    if (!fs::exists(path)) throw MissingArtifacts("trip file not found: " + path.string());
    Trip t = load_trip(path, params.sample_time);
    if (t.trip_id.empty()) t.trip_id = stem_of(path, ".csv");
    return t;
}

fs::path dp_dir(const WorkspaceLayout& ws, const std::string& route) { return ws.dp() / route; }
fs::path trajectory_path(const WorkspaceLayout& ws, const Trip& t)
{
    return dp_dir(ws, t.route_id) / (t.trip_id + ".traj.csv");
}
fs::path policy_path(const WorkspaceLayout& ws, const std::string& route, const std::string& excluded)
{
    return ws.policies() / route / (excluded.empty() ? std::string("all.json") : "loo-" + excluded + ".json");
}
fs::path profile_path_for(const fs::path& policy)
{
    fs::path p = policy;
    p.replace_extension(".profile.json");
    return p;
}

/// Trips of one route with their DP trajectories, in file-name order.
struct RouteCorpus {
    std::string route_id;
    std::vector<SolvedTrip> solved;
    std::vector<fs::path> files;
};

RouteCorpus load_corpus(const WorkspaceLayout& ws, const std::string& route, const PowertrainParams& params)
{
    RouteCorpus c;
    c.route_id = route;
    const auto trips = list_files(ws.trips() / route, ".csv");
    if (trips.empty()) throw MissingArtifacts("no trips under " + (ws.trips() / route).string());
    for (const auto& f : trips) {
        Trip t = load_trip_checked(f, params);
        const fs::path traj = trajectory_path(ws, t);
        if (!fs::exists(traj))
            throw MissingArtifacts("DP trajectory missing for " + t.trip_id + " (" + traj.string() +
                                   "); run solve-dp first");
        OptimalTrajectory ot = load_trajectory_csv(traj);
        if (ot.states.size() != t.size() + 1)
            throw ValidationError("trajectory " + traj.string() + " does not match its trip");
        c.files.push_back(f);
        c.files.push_back(traj);
        c.solved.push_back({std::move(t), std::move(ot)});
    }
    return c;
}

std::vector<std::string> route_ids(const WorkspaceLayout& ws, const std::vector<std::string>& requested)
{
    if (!requested.empty()) return requested;
    std::vector<std::string> out;
    if (fs::is_directory(ws.trips()))
        for (const auto& e : fs::directory_iterator(ws.trips()))
            if (e.is_directory()) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw MissingArtifacts("no routes under " + ws.trips().string());
    return out;
}

void say(const Globals& g, const std::string& line)
{
    if (!g.quiet) std::cout << line << '\n';
}

// ---------------------------------------------------------------------------
// init

struct InitOptions {
    bool with_specs = true;
};

void cmd_init(const Globals& g, const InitOptions& o)
{
    const WorkspaceLayout ws = layout_of(g);
    ws.create();
    Transaction tx(ws, g.force);
    const PowertrainParams params = synthetic_params();
    tx.set_inputs({}, config_hash(json{{"command", "init"}}));
    tx.add({ws.root / "params.json", "params", [&](const fs::path& p) { save_params(params, p); }});
    if (o.with_specs) {
        for (const CycleSpec& spec : builtin_routes()) {
            const std::string text = cycle_spec_to_json(spec).dump(2) + "\n";
            tx.add({ws.root / "specs" / (spec.route_id + ".json"), "cycle-spec",
                    [text](const fs::path& p) { write_text(p, text); }});
        }
    }
    tx.commit();
    say(g, "initialized workspace " + ws.root.string());
}

// ---------------------------------------------------------------------------
// generate

struct GenerateOptions {
    std::string route;
    std::string spec;
    std::vector<std::string> seeds{"0-15"};
    std::string out;
};

void cmd_generate(const Globals& g, const GenerateOptions& o)
{
    const WorkspaceLayout ws = layout_of(g);
    CycleSpec spec;
    std::vector<fs::path> inputs;
    if (!o.spec.empty()) {
        if (!fs::exists(o.spec)) throw MissingArtifacts("spec file not found: " + o.spec);
        spec = load_cycle_spec(o.spec);
        inputs.push_back(fs::absolute(o.spec));
    } else {
        const auto routes = builtin_routes();
        const std::string name = o.route.empty() ? routes.front().route_id : o.route;
        const auto it = std::find_if(routes.begin(), routes.end(), [&](const CycleSpec& s) { return s.route_id == name; });
        if (it == routes.end()) throw ValidationError("unknown built-in route '" + name + "'");
        spec = *it;
    }
    spec.validate();
    const auto seeds = parse_seeds(o.seeds);
    if (seeds.empty()) throw ValidationError("no seeds given");

    // All trips are generated before anything is written.
    std::vector<Trip> trips(seeds.size());
    std::vector<std::string> failures(seeds.size());
    parallel_for(seeds.size(), 0, [&](std::size_t i) {
        try {
            trips[i] = generate_trip(spec, seeds[i]);
            trips[i].validate();
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });
    std::string errors;
    for (std::size_t i = 0; i < seeds.size(); ++i)
        if (!failures[i].empty()) errors += "\n  seed " + std::to_string(seeds[i]) + ": " + failures[i];
    if (!errors.empty()) throw ValidationError("trip generation failed:" + errors);

    const fs::path out = o.out.empty() ? ws.trips() / spec.route_id : fs::absolute(o.out);
    Transaction tx(ws, g.force);
    tx.set_inputs(hash_inputs(ws, inputs), config_hash(cycle_spec_to_json(spec)));
    for (const Trip& t : trips) {
        const std::string text = trip_to_csv(t);
        tx.add({out / (t.trip_id + ".csv"), "trip", [text](const fs::path& p) { write_text(p, text); }});
    }
    tx.commit();
    say(g, "wrote " + std::to_string(trips.size()) + " trips to " + out.string());
}

// ---------------------------------------------------------------------------
// solve-dp

struct SolveOptions {
    std::vector<std::string> trips;
    std::string route;
    std::string out;
    std::size_t soc_points = 201;
    std::size_t torque_points = 21;
    std::string isa = "auto";
    double x0_soc = -1.0;
    bool x0_engine = false;
    bool save_table = false;
    std::size_t threads = 0;
    bool oracle = false;
};

kernels::Isa isa_from(const std::string& s)
{
    if (s == "auto") return kernels::detected_isa();
    if (s == "scalar") return kernels::Isa::scalar;
    if (s == "avx2") {
        if (!kernels::isa_available(kernels::Isa::avx2)) throw ValidationError("AVX2 kernel not available here");
        return kernels::Isa::avx2;
    }
    throw ValidationError("unknown --isa '" + s + "'");
}

void cmd_solve_dp(const Globals& g, const SolveOptions& o)
{
    const WorkspaceLayout ws = layout_of(g);
    const PowertrainParams params = params_of(g, ws);
    DpGrid grid = DpGrid::uniform(params, o.soc_points, o.torque_points);
    grid.validate(params);
    const PowertrainState x0{o.x0_soc < 0.0 ? params.soc_max : o.x0_soc, o.x0_engine};
    DpOptions dopt;
    dopt.isa = isa_from(o.isa);

    std::vector<fs::path> files;
    for (const auto& t : o.trips) files.push_back(fs::absolute(t));
    if (!o.route.empty()) {
        const auto more = list_files(ws.trips() / o.route, ".csv");
        if (more.empty()) throw MissingArtifacts("no trips under " + (ws.trips() / o.route).string());
        files.insert(files.end(), more.begin(), more.end());
    }
    if (files.empty()) throw ValidationError("solve-dp needs --trip or --route");
    std::vector<Trip> trips;
    for (const auto& f : files) trips.push_back(load_trip_checked(f, params));

    if (o.oracle) {
        int worst = 0;
        for (const Trip& t : trips) {
            if (t.size() > 8 || o.soc_points > 9)
                throw ValidationError("--oracle is limited to 8 stages and 9 SOC points");
            const double ref = oracle::interpolated_cost(t, params, grid, x0);
            double got = std::numeric_limits<double>::infinity();
            try {
                got = solve_dp(t, params, grid, x0, dopt).optimal_cost;
            } catch (const InfeasibleTrip&) {
            }
            const bool same = ref == got || (std::isinf(ref) && std::isinf(got));
            std::printf("%s dp=%.17g oracle=%.17g %s\n", t.trip_id.c_str(), got, ref, same ? "MATCH" : "MISMATCH");
            if (!same) worst = 1;
        }
        if (worst) throw std::runtime_error("DP and enumeration oracle disagree");
        return;
    }

    const json cfg = {{"params", params_to_json(params)},
                      {"soc_points", o.soc_points},
                      {"torque_points", o.torque_points},
                      {"x0_soc", x0.soc},
                      {"x0_engine", x0.engine_on}};
    const std::string cfg_hash = config_hash(cfg);

    // Each trip is its own transaction so that a long batch keeps finished work.
    std::vector<std::string> summaries(trips.size());
    parallel_for(trips.size(), o.threads, [&](std::size_t i) {
        const Trip& t = trips[i];
        const fs::path out = o.out.empty() ? dp_dir(ws, t.route_id) : fs::absolute(o.out);
        Transaction tx(ws, g.force);
        tx.set_inputs(hash_inputs(ws, {files[i]}), cfg_hash);
        const DpSolution sol = solve_dp(t, params, grid, x0, dopt);
        const json summary = {{"kind", "emslab-dp-summary"},
                              {"schema_version", 1},
                              {"route_id", t.route_id},
                              {"trip_id", t.trip_id},
                              {"stages", t.size()},
                              {"soc_points", o.soc_points},
                              {"torque_points", o.torque_points},
                              {"optimal_cost_gal", sol.optimal_cost},
                              {"rollout_cost_gal", sol.trajectory.total_cost},
                              {"fallback_steps", sol.trajectory.fallback_steps},
                              {"final_soc", sol.trajectory.states.back().soc}};
        const std::string text = summary.dump(2) + "\n";
        tx.add({out / (t.trip_id + ".traj.csv"), "dp-trajectory",
                [&](const fs::path& p) { save_trajectory_csv(sol.trajectory, t, p); }});
        tx.add({out / (t.trip_id + ".dp.json"), "dp-summary", [&](const fs::path& p) { write_text(p, text); }});
        if (o.save_table)
            tx.add({out / (t.trip_id + ".vt"), "dp-table", [&](const fs::path& p) { sol.table.save(p); }});
        static std::mutex manifest_lock;
        {
            std::lock_guard<std::mutex> lock(manifest_lock);
            tx.commit();
        }
        char line[256];
        std::snprintf(line, sizeof(line), "%s cost=%.9g gal rollout=%.9g gal final_soc=%.4f", t.trip_id.c_str(),
                      sol.optimal_cost, sol.trajectory.total_cost, sol.trajectory.states.back().soc);
        summaries[i] = line;
    });
    for (const auto& s : summaries) say(g, s);
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    std::string route;
    std::string exclude;
    std::string out;
    double ridge = kDefaultRidge;
    double bin_length = 100.0;
    bool counterfactual = true;
};

void cmd_train(const Globals& g, const TrainOptions& o)
{
    const WorkspaceLayout ws = layout_of(g);
    const PowertrainParams params = params_of(g, ws);
    if (o.route.empty()) throw ValidationError("train needs --route");
    RouteCorpus corpus = load_corpus(ws, o.route, params);
    TrainingOptions topt;
    topt.bin_length = o.bin_length;
    topt.counterfactual = o.counterfactual;

    std::vector<SolvedTrip> used;
    std::vector<fs::path> inputs;
    for (std::size_t i = 0; i < corpus.solved.size(); ++i) {
        if (corpus.solved[i].trip.trip_id == o.exclude) continue;
        used.push_back(corpus.solved[i]);
        inputs.push_back(corpus.files[2 * i]);
        inputs.push_back(corpus.files[2 * i + 1]);
    }
    TrainingSet ts = o.exclude.empty() ? build_training_set(corpus.solved, topt)
                                       : leave_one_out(corpus.solved, o.exclude, topt);
    const PolicyParams policy = fit(ts, o.ridge);
    const RepresentativeSocProfile profile = representative_profile(used, ts.stats.bins);

    const fs::path out = o.out.empty() ? policy_path(ws, o.route, o.exclude) : fs::absolute(o.out);
    const json cfg = {{"params", params_to_json(params)},
                      {"exclude", o.exclude},
                      {"ridge", o.ridge},
                      {"bin_length", o.bin_length},
                      {"counterfactual", o.counterfactual}};
    Transaction tx(ws, g.force);
    tx.set_inputs(hash_inputs(ws, inputs), config_hash(cfg));
    const std::string ptext = policy_to_json(policy).dump(2) + "\n";
    const std::string rtext = profile_to_json(profile).dump(2) + "\n";
    tx.add({out, "policy", [&](const fs::path& p) { write_text(p, ptext); }});
    tx.add({profile_path_for(out), "soc-profile", [&](const fs::path& p) { write_text(p, rtext); }});
    tx.commit();
    say(g, "trained on " + std::to_string(used.size()) + " trips (" + std::to_string(ts.row_count()) +
               " rows) -> " + out.string());
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
    std::string trip;
    std::string controller = "mpc";
    std::string policy;
    std::string profile;
    std::string trajectory;
    std::string out;
    double x0_soc = -1.0;
    std::size_t horizon = 1;
};

void cmd_simulate(const Globals& g, const SimulateOptions& o)
{
    const WorkspaceLayout ws = layout_of(g);
    const PowertrainParams params = params_of(g, ws);
    const fs::path trip_file = fs::absolute(o.trip);
    const Trip trip = load_trip_checked(trip_file, params);
    const PowertrainState x0{o.x0_soc < 0.0 ? params.soc_max : o.x0_soc, false};
    std::vector<fs::path> inputs{trip_file};
    json cfg = {{"params", params_to_json(params)}, {"controller", o.controller}, {"x0_soc", x0.soc}};

    std::unique_ptr<Controller> ctl;
    if (o.controller == "cdcs") {
        ctl = std::make_unique<CdCsController>(params);
    } else if (o.controller == "aecms") {
        const fs::path pf = o.profile.empty() ? profile_path_for(policy_path(ws, trip.route_id, trip.trip_id))
                                              : fs::absolute(o.profile);
        if (!fs::exists(pf)) throw MissingArtifacts("A-ECMS reference profile not found: " + pf.string());
        ctl = std::make_unique<AecmsController>(params, profile_from_json(json::parse(read_file(pf))));
        inputs.push_back(pf);
    } else if (o.controller == "mpc") {
        const fs::path pf = o.policy.empty() ? policy_path(ws, trip.route_id, trip.trip_id) : fs::absolute(o.policy);
        if (!fs::exists(pf)) throw MissingArtifacts("policy file not found: " + pf.string() + "; run train first");
        auto policy = std::make_shared<PolicyParams>(load_policy(pf));
        if (policy->route_id != trip.route_id)
            throw RouteMismatch("policy is for route '" + policy->route_id + "', trip is on '" + trip.route_id + "'");
        struct Owned final : CostToGo {
            std::shared_ptr<const PolicyParams> p;
            double value(std::size_t, const PowertrainState&, const FeatureVector& f, std::size_t b) const override
            {
                return evaluate_vhat(*p, f, b);
            }
        };
        auto vhat = std::make_shared<Owned>();
        vhat->p = policy;
        MpcConfig mc;
        mc.horizon = o.horizon;
        mc.sample_time = params.sample_time;
        ctl = std::make_unique<MpcController>(params, vhat, policy->stats, mc);
        inputs.push_back(pf);
        cfg["horizon"] = o.horizon;
    } else if (o.controller == "dp") {
        const fs::path tf = o.trajectory.empty() ? trajectory_path(ws, trip) : fs::absolute(o.trajectory);
        if (!fs::exists(tf)) throw MissingArtifacts("DP trajectory not found: " + tf.string());
        ctl = std::make_unique<ReplayController>(load_trajectory_csv(tf).inputs);
        inputs.push_back(tf);
    } else {
        throw ValidationError("unknown controller '" + o.controller + "'");
    }

    const SimResult res = simulate(trip, *ctl, params, x0);
    const fs::path out = o.out.empty() ? ws.results() / o.controller / trip.route_id : fs::absolute(o.out);
    Transaction tx(ws, g.force);
    tx.set_inputs(hash_inputs(ws, inputs), config_hash(cfg));
    const std::string summary = sim_summary_json(res).dump(2) + "\n";
    tx.add({out / (trip.trip_id + ".csv"), "sim-trace", [&](const fs::path& p) { save_sim_traces_csv(res, p); }});
    tx.add({out / (trip.trip_id + ".json"), "sim-summary", [&](const fs::path& p) { write_text(p, summary); }});
    tx.commit();
    char line[256];
    std::snprintf(line, sizeof(line), "%s %s: %.3f MPGe, fuel %.5f gal, battery %.4f kWh, final SOC %.4f, infeasible %zu",
                  trip.trip_id.c_str(), o.controller.c_str(), res.mpge, res.fuel_gallons, res.battery_kwh,
                  res.traces.soc.back(), res.infeasible_step_count);
    say(g, line);
}

// ---------------------------------------------------------------------------
// compare

struct CompareOptions {
    std::vector<std::string> routes;
    std::string out;
    double x0_soc = -1.0;
    double ridge = kDefaultRidge;
    double bin_length = 100.0;
};

void cmd_compare(const Globals& g, const CompareOptions& o)
{
    const WorkspaceLayout ws = layout_of(g);
    const PowertrainParams params = params_of(g, ws);
    const PowertrainState x0{o.x0_soc < 0.0 ? params.soc_max : o.x0_soc, false};
    CompareConfig cc;
    cc.ridge_lambda = o.ridge;
    cc.training.bin_length = o.bin_length;
    cc.mpc.sample_time = params.sample_time;

    std::vector<std::vector<SolvedTrip>> corpora;
    std::vector<fs::path> inputs;
    for (const auto& r : route_ids(ws, o.routes)) {
        RouteCorpus c = load_corpus(ws, r, params);
        inputs.insert(inputs.end(), c.files.begin(), c.files.end());
        corpora.push_back(std::move(c.solved));
    }
    const ComparisonReport rep = compare(corpora, params, x0, cc);

    const json cfg = {{"params", params_to_json(params)},
                      {"x0_soc", x0.soc},
                      {"ridge", o.ridge},
                      {"bin_length", o.bin_length},
                      {"aecms", {{"s0", cc.aecms.s0}, {"kp", cc.aecms.kp}, {"ki", cc.aecms.ki}}},
                      {"cdcs", {{"band", cc.cdcs.cs_band}, {"target", cc.cdcs.target(params)}}},
                      {"mpc", {{"horizon", cc.mpc.horizon}, {"candidates", cc.mpc.torque_candidates}}}};
    const fs::path out = o.out.empty() ? ws.results() / "compare" : fs::absolute(o.out);
    Transaction tx(ws, g.force);
    tx.set_inputs(hash_inputs(ws, inputs), config_hash(cfg));
    const std::string summary = report_summary_csv(rep);
    const std::string trips = report_trips_csv(rep);
    const std::string md = report_markdown(rep);
    const std::string svg = report_svg(rep);
    tx.add({out / "summary.csv", "report", [&](const fs::path& p) { write_text(p, summary); }});
    tx.add({out / "trips.csv", "report", [&](const fs::path& p) { write_text(p, trips); }});
    tx.add({out / "report.md", "report", [&](const fs::path& p) { write_text(p, md); }});
    tx.add({out / "mpge.svg", "report", [&](const fs::path& p) { write_text(p, svg); }});
    tx.commit();
    if (!g.quiet) std::cout << md;
}

int exit_code_for(ErrorKind k) { return static_cast<int>(k); }

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"emslab: data-driven PHEV energy management workbench"};
    app.set_config("--config", "", "TOML config file; flags given on the command line take precedence");
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--workspace,-w", g.workspace, "Workspace root (default: $EMSLAB_WORKSPACE, then .)");
    app.add_option("--params", g.params_path, "Powertrain parameter JSON (default: <workspace>/params.json, then built-in)");
    app.add_flag("--force", g.force, "Overwrite artifacts whose recorded provenance differs");
    app.add_flag("--quiet,-q", g.quiet, "Suppress progress output");

    InitOptions io;
    auto* init = app.add_subcommand("init", "Create the workspace layout with default params and route specs");
    init->add_flag("!--no-specs", io.with_specs, "Skip writing the built-in route specs");

    GenerateOptions go;
    auto* gen = app.add_subcommand("generate", "Generate synthetic trips for one route");
    gen->add_option("--route", go.route, "Built-in route id (commute, arterial, highway)");
    gen->add_option("--spec", go.spec, "Route spec JSON (overrides --route)");
    gen->add_option("--seed,--seeds", go.seeds, "Seeds or ranges such as 0-15")->capture_default_str();
    gen->add_option("--out", go.out, "Output directory (default: <workspace>/trips/<route>)");

    SolveOptions so;
    auto* dp = app.add_subcommand("solve-dp", "Solve the deterministic optimal control problem per trip");
    dp->add_option("--trip", so.trips, "Trip CSV (repeatable)");
    dp->add_option("--route", so.route, "Solve every trip of this route in the workspace");
    dp->add_option("--out", so.out, "Output directory (default: <workspace>/dp/<route>)");
    dp->add_option("--soc-points", so.soc_points, "SOC grid size")->capture_default_str()->check(CLI::Range(2, 100001));
    dp->add_option("--torque-points", so.torque_points, "Engine torque samples per stage")
        ->capture_default_str()
        ->check(CLI::Range(2, 10001));
    dp->add_option("--isa", so.isa, "Bellman kernel: auto, scalar or avx2")->capture_default_str();
    dp->add_option("--x0-soc", so.x0_soc, "Initial SOC (default: soc_max)");
    dp->add_flag("--x0-engine", so.x0_engine, "Start with the engine running");
    dp->add_flag("--save-table", so.save_table, "Also write the full value table (large)");
    dp->add_option("--threads", so.threads, "Worker threads (0: all cores)");
    dp->add_flag("--oracle", so.oracle, "Check the DP cost against brute-force enumeration (small trips only)")
        ->group("");

    TrainOptions to;
    auto* train = app.add_subcommand("train", "Fit the position-indexed value approximation for a route");
    train->add_option("--route", to.route, "Route id")->required();
    train->add_option("--exclude", to.exclude, "Trip id left out of training");
    train->add_option("--out", to.out, "Policy file (default: <workspace>/policies/<route>/loo-<id>.json or all.json)");
    train->add_option("--ridge", to.ridge, "Ridge penalty on scaled features")->capture_default_str();
    train->add_option("--bin-length", to.bin_length, "Position bin length, m")->capture_default_str();
    train->add_flag("!--no-counterfactual", to.counterfactual, "Train on trajectory rows only");

    SimulateOptions mo;
    auto* sim = app.add_subcommand("simulate", "Run one controller in closed loop on a trip");
    sim->add_option("--trip", mo.trip, "Trip CSV")->required();
    sim->add_option("--controller", mo.controller, "cdcs, aecms, mpc or dp")
        ->capture_default_str()
        ->check(CLI::IsMember({"cdcs", "aecms", "mpc", "dp"}));
    sim->add_option("--policy", mo.policy, "Policy file for mpc (default: leave-one-out policy in the workspace)");
    sim->add_option("--profile", mo.profile, "SOC reference profile for aecms");
    sim->add_option("--trajectory", mo.trajectory, "DP trajectory for dp");
    sim->add_option("--out", mo.out, "Output directory (default: <workspace>/results/<controller>/<route>)");
    sim->add_option("--x0-soc", mo.x0_soc, "Initial SOC (default: soc_max)");
    sim->add_option("--horizon", mo.horizon, "MPC horizon in steps")->capture_default_str()->check(CLI::Range(1, 10));

    CompareOptions co;
    auto* cmp = app.add_subcommand("compare", "Four-way comparison with leave-one-out training per trip");
    cmp->add_option("--route", co.routes, "Route ids (default: every route in the workspace)");
    cmp->add_option("--out", co.out, "Output directory (default: <workspace>/results/compare)");
    cmp->add_option("--x0-soc", co.x0_soc, "Initial SOC (default: soc_max)");
    cmp->add_option("--ridge", co.ridge, "Ridge penalty")->capture_default_str();
    cmp->add_option("--bin-length", co.bin_length, "Position bin length, m")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_code_for(ErrorKind::parse);
    }

    try {
        if (*init) cmd_init(g, io);
        else if (*gen) cmd_generate(g, go);
        else if (*dp) cmd_solve_dp(g, so);
        else if (*train) cmd_train(g, to);
        else if (*sim) cmd_simulate(g, mo);
        else if (*cmp) cmd_compare(g, co);
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(ErrorKind::validation);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
