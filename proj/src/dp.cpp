#include "emslab/dp.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "emslab/battery_math.hpp"
#include "emslab/errors.hpp"

namespace emslab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr char kTableMagic[8] = {'E', 'M', 'S', 'V', 'T', '0', '0', '1'};

std::size_t cell(std::size_t k, bool e, std::size_t i, std::size_t n)
{
    return (k * 2 + (e ? 1 : 0)) * n + i;
}

std::string fmt(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double terminal_value(const DpGrid& grid, double soc)
{
    if (grid.terminal_soc_penalty <= 0.0) return 0.0;
    return grid.terminal_soc_penalty * std::max(0.0, grid.terminal_soc_target - soc);
}

}  // namespace

DpGrid DpGrid::uniform(const PowertrainParams& params, std::size_t soc_count, std::size_t torque_points)
{
    if (soc_count < 2) throw std::invalid_argument("DpGrid: at least two SOC points required");
    DpGrid g;
    g.soc_points = linspace(params.soc_min, params.soc_max, soc_count);
    g.torque_points = torque_points;
    return g;
}

void DpGrid::validate(const PowertrainParams& params) const
{
    if (soc_points.size() < 2) throw std::invalid_argument("DpGrid: at least two SOC points required");
    if (torque_points < 2) throw std::invalid_argument("DpGrid: torque_points must be >= 2");
    if (soc_points.front() != params.soc_min || soc_points.back() != params.soc_max)
        throw std::invalid_argument("DpGrid: SOC points must include both SOC bounds");
    const double step = (soc_points.back() - soc_points.front()) / static_cast<double>(soc_points.size() - 1);
    for (std::size_t i = 1; i < soc_points.size(); ++i) {
        if (!(soc_points[i] > soc_points[i - 1])) throw std::invalid_argument("DpGrid: SOC points not increasing");
        if (std::abs(soc_points[i] - soc_points[i - 1] - step) > 1e-9 * step)
            throw std::invalid_argument("DpGrid: SOC points must be uniformly spaced");
    }
    if (terminal_soc_penalty < 0.0) throw std::invalid_argument("DpGrid: negative terminal SOC penalty");
}

kernels::SocLattice make_lattice(const DpGrid& grid, const PowertrainParams& params)
{
    kernels::SocLattice lat;
    const std::size_t n = grid.soc_points.size();
    lat.soc = grid.soc_points;
    lat.voc.resize(n);
    lat.four_rb.resize(n);
    lat.two_rb.resize(n);
    lat.denom.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double soc = lat.soc[i];
        const double rb = params.rb_map(soc);
        lat.voc[i] = params.voc_map(soc);
        lat.four_rb[i] = 4.0 * rb;
        lat.two_rb[i] = 2.0 * rb;
        lat.denom[i] = battery_math::soc_denominator(rb, params.battery_capacity);
    }
    lat.origin = lat.soc.front();
    lat.inv_step = static_cast<double>(n - 1) / (lat.soc.back() - lat.soc.front());
    return lat;
}

std::vector<ControlInput> candidate_inputs(const Disturbance& dist, const PowertrainParams& params,
                                           std::size_t torque_points)
{
    std::vector<ControlInput> out;
    if (engine_torque_envelope(dist, params, false)) out.push_back({0.0, false});
    if (auto on = engine_torque_envelope(dist, params, true)) {
        const auto torques = linspace(on->lo, on->hi, std::max<std::size_t>(torque_points, 2));
        for (double t : torques) {
            if (!out.empty() && out.back().engine_switch && out.back().engine_torque == t) continue;
            out.push_back({t, true});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// ValueTable

ValueTable::ValueTable(std::size_t stages, std::vector<double> soc_points)
    : stages_(stages), soc_(std::move(soc_points))
{
    const std::size_t n = soc_.size();
    if (n < 2) throw std::invalid_argument("ValueTable: at least two SOC points required");
    origin_ = soc_.front();
    inv_step_ = static_cast<double>(n - 1) / (soc_.back() - soc_.front());
    values_.assign((stages_ + 1) * 2 * n, kInf);
    argmin_.assign(stages_ * 2 * n, -1);
    cand_.resize(stages_);
    bands_.assign((stages_ + 1) * 2, SocBand{});
}

std::span<const double> ValueTable::layer(std::size_t k, bool engine_on) const
{
    return {values_.data() + cell(k, engine_on, 0, soc_.size()), soc_.size()};
}

std::span<double> ValueTable::layer(std::size_t k, bool engine_on)
{
    return {values_.data() + cell(k, engine_on, 0, soc_.size()), soc_.size()};
}

double ValueTable::interpolate(std::size_t k, const PowertrainState& state) const
{
    if (!band(k, state.engine_on).contains(state.soc)) return kInf;
    return kernels::interp_uniform(layer(k, state.engine_on), origin_, inv_step_, state.soc);
}

std::span<const ControlInput> ValueTable::candidates(std::size_t k) const { return cand_.at(k); }

void ValueTable::set_candidates(std::size_t k, std::span<const ControlInput> inputs)
{
    cand_.at(k).assign(inputs.begin(), inputs.end());
}

std::int32_t ValueTable::argmin_index(std::size_t k, std::size_t i, bool engine_on) const
{
    return argmin_[cell(k, engine_on, i, soc_.size())];
}

std::span<std::int32_t> ValueTable::argmin_layer(std::size_t k, bool engine_on)
{
    return {argmin_.data() + cell(k, engine_on, 0, soc_.size()), soc_.size()};
}

std::optional<ControlInput> ValueTable::argmin_input(std::size_t k, std::size_t i, bool engine_on) const
{
    const std::int32_t idx = argmin_index(k, i, engine_on);
    if (idx < 0) return std::nullopt;
    return candidates(k)[static_cast<std::size_t>(idx)];
}

void ValueTable::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    auto put_u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
    out.write(kTableMagic, sizeof kTableMagic);
    put_u64(stages_);
    put_u64(soc_.size());
    out.write(reinterpret_cast<const char*>(soc_.data()), static_cast<std::streamsize>(soc_.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(values_.data()),
              static_cast<std::streamsize>(values_.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(bands_.data()), static_cast<std::streamsize>(bands_.size() * sizeof(SocBand)));
    for (const auto& stage : cand_) {
        put_u64(stage.size());
        for (const auto& c : stage) {
            out.write(reinterpret_cast<const char*>(&c.engine_torque), sizeof(double));
            const std::uint8_t sw = c.engine_switch ? 1 : 0;
            out.write(reinterpret_cast<const char*>(&sw), 1);
        }
    }
    out.write(reinterpret_cast<const char*>(argmin_.data()),
              static_cast<std::streamsize>(argmin_.size() * sizeof(std::int32_t)));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

ValueTable ValueTable::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifacts("value table not found: " + path.string());
    auto fail = [&](const char* what) { return ParseError(path.string() + ": " + what); };
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kTableMagic, sizeof magic) != 0) throw fail("not a value table");
    auto get_u64 = [&] {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!in) throw fail("truncated header");
        return v;
    };
    const std::uint64_t stages = get_u64();
    const std::uint64_t n = get_u64();
    if (n < 2 || n > (1u << 20) || stages > (1u << 26)) throw fail("implausible dimensions");
    std::vector<double> soc(n);
    in.read(reinterpret_cast<char*>(soc.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw fail("truncated SOC grid");
    ValueTable t(stages, std::move(soc));
    in.read(reinterpret_cast<char*>(t.values_.data()), static_cast<std::streamsize>(t.values_.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(t.bands_.data()), static_cast<std::streamsize>(t.bands_.size() * sizeof(SocBand)));
    if (!in) throw fail("truncated values");
    for (auto& stage : t.cand_) {
        const std::uint64_t count = get_u64();
        if (count > (1u << 16)) throw fail("implausible candidate count");
        stage.resize(count);
        for (auto& c : stage) {
            std::uint8_t sw = 0;
            in.read(reinterpret_cast<char*>(&c.engine_torque), sizeof(double));
            in.read(reinterpret_cast<char*>(&sw), 1);
            c.engine_switch = sw != 0;
        }
    }
    in.read(reinterpret_cast<char*>(t.argmin_.data()),
            static_cast<std::streamsize>(t.argmin_.size() * sizeof(std::int32_t)));
    if (!in) throw fail("truncated body");
    return t;
}

// ---------------------------------------------------------------------------
// Backward pass

std::optional<double> soc_preimage(double target, double battery_power, const PowertrainParams& params)
{
    double s = target;
    for (int it = 0; it < 8; ++it) {
        const double voc = params.voc_map(s);
        const double rb = params.rb_map(s);
        const double disc = battery_math::discriminant(voc, rb, battery_power);
        if (!(disc >= 0.0)) return std::nullopt;
        const double drop = params.sample_time * (voc - std::sqrt(disc)) /
                            battery_math::soc_denominator(rb, params.battery_capacity);
        s = target + drop;
    }
    return s;
}

namespace {

// Shrinks computed band edges so that rounding never admits a state whose
// successor falls just outside the next band.
constexpr double kBandMargin = 1e-12;

}  // namespace

void bellman_backup(std::size_t k, const Disturbance& dist, const kernels::SocLattice& lattice,
                    const DpGrid& grid, const PowertrainParams& params, ValueTable& table,
                    kernels::BackupSweepFn sweep)
{
    if (!sweep) sweep = kernels::select_backup_sweep(kernels::detected_isa());
    const auto cands = candidate_inputs(dist, params, grid.torque_points);
    table.set_candidates(k, cands);
    for (bool e : {false, true}) {
        auto best = table.layer(k, e);
        auto idx = table.argmin_layer(k, e);
        std::fill(best.begin(), best.end(), kInf);
        std::fill(idx.begin(), idx.end(), -1);
        SocBand band{kInf, -kInf};
        for (std::size_t c = 0; c < cands.size(); ++c) {
            const DriveOutputs d = evaluate_drive(e, cands[c], dist, params);
            if (d.violations != kNone) continue;
            const SocBand next = table.band(k + 1, cands[c].engine_switch);
            if (next.empty()) continue;
            const auto lo = soc_preimage(next.lo, d.battery_power, params);
            const auto hi = soc_preimage(next.hi, d.battery_power, params);
            if (lo && hi) {
                const double a = *lo <= params.soc_min ? params.soc_min : *lo + kBandMargin;
                const double b = *hi >= params.soc_max ? params.soc_max : *hi - kBandMargin;
                if (a <= b) {
                    band.lo = std::min(band.lo, a);
                    band.hi = std::max(band.hi, b);
                }
            }
            kernels::BackupArgs args;
            args.lattice = &lattice;
            args.v_next = table.layer(k + 1, cands[c].engine_switch).data();
            args.battery_power = d.battery_power;
            args.fuel_power = d.fuel_power;
            args.sample_time = params.sample_time;
            args.joules_per_gallon = params.joules_per_gallon();
            args.soc_min = next.lo;
            args.soc_max = next.hi;
            args.candidate = static_cast<std::int32_t>(c);
            args.best = best.data();
            args.best_index = idx.data();
            sweep(args);
        }
        table.set_band(k, e, band.empty() ? SocBand{} : band);
    }
}

namespace {

struct Choice {
    ControlInput input;
    StepResult result;
    double total = kInf;
    bool found = false;
};

Choice best_continuation(const ValueTable& table, std::size_t k, const PowertrainState& x, const Disturbance& dist,
                         const PowertrainParams& params)
{
    Choice best;
    for (const ControlInput& u : table.candidates(k)) {
        const StepResult r = step(x, u, dist, params);
        if (r.outputs.infeasible) continue;
        const double total = stage_cost(r.outputs, params) + table.interpolate(k + 1, r.next);
        if (total < best.total) {
            best.total = total;
            best.input = u;
            best.result = r;
            best.found = true;
        }
    }
    return best;
}

}  // namespace

OptimalTrajectory rollout(const ValueTable& table, const Trip& trip, const PowertrainParams& params,
                          const PowertrainState& x0)
{
    const std::size_t n_stages = table.stages();
    if (trip.size() != n_stages) throw std::invalid_argument("rollout: trip length differs from value table");
    OptimalTrajectory traj;
    traj.states.reserve(n_stages + 1);
    traj.states.push_back(x0);
    traj.values.push_back(table.interpolate(0, x0));
    PowertrainState x = x0;
    for (std::size_t k = 0; k < n_stages; ++k) {
        const Disturbance dist = trip.disturbance(k);
        Choice ch = best_continuation(table, k, x, dist, params);
        if (!ch.found) {
            ++traj.fallback_steps;
            // No finite cost-to-go: take the cheapest feasible step, else the
            // strongest engine assist with the constraint clamp applied.
            double best_cost = kInf;
            for (const ControlInput& u : table.candidates(k)) {
                const StepResult r = step(x, u, dist, params);
                const double c = stage_cost(r.outputs, params);
                if (!r.outputs.infeasible && c < best_cost) {
                    best_cost = c;
                    ch.input = u;
                    ch.result = r;
                    ch.found = true;
                }
            }
            if (!ch.found) {
                const auto cands = table.candidates(k);
                ch.input = cands.empty() ? ControlInput{} : cands.back();
                ch.result = step(x, ch.input, dist, params);
            }
        }
        traj.inputs.push_back(ch.input);
        const double c = stage_cost(ch.result.outputs, params);
        traj.stage_costs.push_back(c);
        traj.fuel_mass.push_back(ch.result.outputs.fuel_mass);
        traj.total_cost += c;
        x = ch.result.next;
        traj.states.push_back(x);
        traj.values.push_back(table.interpolate(k + 1, x));
    }
    return traj;
}

DpSolution solve_dp(const Trip& trip, const PowertrainParams& params, const DpGrid& grid,
                    const PowertrainState& x0, const DpOptions& options)
{
    grid.validate(params);
    if (std::abs(trip.sample_time - params.sample_time) > 1e-12)
        throw ValidationError("solve_dp: trip sample time differs from params; resample first");
    if (x0.soc < params.soc_min || x0.soc > params.soc_max)
        throw ValidationError("solve_dp: initial SOC outside bounds");
    const std::size_t n_stages = trip.size();
    const kernels::SocLattice lattice = make_lattice(grid, params);
    const kernels::BackupSweepFn sweep = kernels::select_backup_sweep(options.isa);

    DpSolution sol;
    sol.table = ValueTable(n_stages, grid.soc_points);
    for (bool e : {false, true}) {
        auto last = sol.table.layer(n_stages, e);
        for (std::size_t i = 0; i < last.size(); ++i) last[i] = terminal_value(grid, grid.soc_points[i]);
        sol.table.set_band(n_stages, e, {params.soc_min, params.soc_max});
    }
    for (std::size_t k = n_stages; k-- > 0;)
        bellman_backup(k, trip.disturbance(k), lattice, grid, params, sol.table, sweep);

    sol.optimal_cost = sol.table.interpolate(0, x0);
    if (!std::isfinite(sol.optimal_cost))
        throw InfeasibleTrip("trip " + trip.trip_id + " has no feasible input sequence from the initial state");
    sol.trajectory = rollout(sol.table, trip, params, x0);
    record_probes(sol.table, params, sol.trajectory);
    return sol;
}

PowertrainState probe_state(const PowertrainState& x, std::size_t j)
{
    const std::size_t n = kProbeSocOffsets.size();
    return {x.soc + kProbeSocOffsets[j % n], j / n == 1};
}

void record_probes(const ValueTable& table, const PowertrainParams& params, OptimalTrajectory& traj)
{
    traj.probes.assign(traj.states.size(), {});
    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        for (std::size_t j = 0; j < kProbeCount; ++j) {
            const PowertrainState q = probe_state(traj.states[k], j);
            traj.probes[k][j] =
                q.soc < params.soc_min || q.soc > params.soc_max ? kInf : table.interpolate(k, q);
        }
    }
}

std::vector<DpSolution> solve_dp_batch(std::span<const Trip> trips, const PowertrainParams& params,
                                       const DpGrid& grid, const PowertrainState& x0, const DpOptions& options)
{
    std::vector<DpSolution> out(trips.size());
    std::vector<std::exception_ptr> errors(trips.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < trips.size(); i = next++) {
            try {
                out[i] = solve_dp(trips[i], params, grid, x0, options);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n_workers =
        std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(trips.size(), 1));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

double bellman_residual(const ValueTable& table, const Trip& trip, const PowertrainParams& params)
{
    double worst = 0.0;
    const auto& soc = table.soc_points();
    for (std::size_t k = 0; k < table.stages(); ++k) {
        const Disturbance dist = trip.disturbance(k);
        for (bool e : {false, true}) {
            for (std::size_t i = 0; i < soc.size(); ++i) {
                const Choice ch = best_continuation(table, k, {soc[i], e}, dist, params);
                const double stored = table.value(k, i, e);
                if (std::isinf(stored) || std::isinf(ch.total)) {
                    if (std::isinf(stored) != std::isinf(ch.total)) return kInf;
                    continue;
                }
                worst = std::max(worst, std::abs(stored - ch.total));
            }
        }
    }
    return worst;
}

std::vector<ValueSample> values_on_trajectory(const OptimalTrajectory& trajectory, const Trip& trip,
                                              const RouteStats& stats)
{
    const std::size_t n = trip.size();
    if (trajectory.states.size() != n + 1 || trajectory.values.size() != n + 1 || trajectory.fuel_mass.size() != n)
        throw std::invalid_argument("values_on_trajectory: trajectory does not match the trip");
    std::vector<ValueSample> out;
    out.reserve(n + 1);
    FeatureTracker tracker(stats, trip.sample_time);
    for (std::size_t t = 0; t <= n; ++t) {
        if (t < n) tracker.observe(trip.samples[t], trip.accel(t));
        ValueSample s;
        s.step = t;
        const double pos = t < n ? trip.samples[t].position : trip.total_distance();
        s.bin = stats.bins.bin_of(pos);
        s.features = tracker.features(trajectory.states[t]);
        s.value = trajectory.values[t];
        out.push_back(s);
        if (t < n) tracker.add_fuel(trajectory.fuel_mass[t]);
    }
    return out;
}

std::vector<ValueSample> values_on_trajectory(const ValueTable& table, const OptimalTrajectory& trajectory,
                                              const Trip& trip, const RouteStats& stats)
{
    auto out = values_on_trajectory(trajectory, trip, stats);
    for (auto& s : out) s.value = table.interpolate(s.step, trajectory.states[s.step]);
    return out;
}

void save_trajectory_csv(const OptimalTrajectory& traj, const Trip& trip, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const bool probes = !traj.probes.empty();
    if (probes && traj.probes.size() != traj.states.size())
        throw std::invalid_argument("save_trajectory_csv: probe count differs from state count");
    out << "step,time_s,position_m,soc,engine_on,engine_torque_Nm,engine_switch,stage_cost_gal,fuel_kg,value_gal";
    if (probes) {
        for (std::size_t j = 0; j < kProbeCount; ++j) {
            char name[32];
            std::snprintf(name, sizeof(name), ",probe_e%zu_%+.2f", j / kProbeSocOffsets.size(),
                          kProbeSocOffsets[j % kProbeSocOffsets.size()]);
            out << name;
        }
    }
    out << '\n';
    const std::size_t n = traj.inputs.size();
    for (std::size_t k = 0; k <= n; ++k) {
        const double pos = k < trip.size() ? trip.samples[k].position : trip.total_distance();
        out << k << ',' << fmt(static_cast<double>(k) * trip.sample_time) << ',' << fmt(pos) << ','
            << fmt(traj.states[k].soc) << ',' << (traj.states[k].engine_on ? 1 : 0) << ',';
        if (k < n) {
            out << fmt(traj.inputs[k].engine_torque) << ',' << (traj.inputs[k].engine_switch ? 1 : 0) << ','
                << fmt(traj.stage_costs[k]) << ',' << fmt(traj.fuel_mass[k]) << ',';
        } else {
            out << ",,,,";
        }
        out << fmt(traj.values[k]);
        if (probes)
            for (double v : traj.probes[k]) out << ',' << fmt(v);
        out << '\n';
    }
}

OptimalTrajectory load_trajectory_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw MissingArtifacts("trajectory not found: " + path.string());
    std::string line;
    std::getline(in, line);
    const std::size_t columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (columns != 10 && columns != 10 + kProbeCount) throw ParseError(path.string() + ": unexpected header");
    OptimalTrajectory traj;
    auto num = [&](const std::string& cell) {
        double v = 0.0;
        if (cell == "inf") return kInf;
        auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
            throw ParseError(path.string() + ": bad number '" + cell + "'");
        return v;
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != columns) throw ParseError(path.string() + ": row has the wrong column count");
        traj.states.push_back({num(cells[3]), cells[4] == "1"});
        traj.values.push_back(num(cells[9]));
        if (columns > 10) {
            ProbeValues pv;
            for (std::size_t j = 0; j < kProbeCount; ++j) pv[j] = num(cells[10 + j]);
            traj.probes.push_back(pv);
        }
        if (!cells[5].empty()) {
            traj.inputs.push_back({num(cells[5]), cells[6] == "1"});
            traj.stage_costs.push_back(num(cells[7]));
            traj.fuel_mass.push_back(num(cells[8]));
            traj.total_cost += traj.stage_costs.back();
        }
    }
    if (traj.states.size() != traj.inputs.size() + 1) throw ParseError(path.string() + ": incomplete trajectory");
    return traj;
}

}  // namespace emslab
