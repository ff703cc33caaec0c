#include "emslab/trip.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "emslab/errors.hpp"

namespace emslab {

Disturbance Trip::disturbance(std::size_t k) const
{
    const TripSample& s = samples.at(k);
    return {s.aux_power, s.wheel_torque_demand, s.axle_speed, s.gear_index};
}

double Trip::accel(std::size_t k) const
{
    if (k == 0 || k >= samples.size()) return 0.0;
    return (samples[k].vehicle_speed - samples[k - 1].vehicle_speed) / sample_time;
}

void Trip::validate() const
{
    if (!(sample_time > 0.0)) throw ValidationError("trip " + trip_id + ": sample_time must be positive");
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const TripSample& s = samples[k];
        const std::string where = "trip " + trip_id + " sample " + std::to_string(k) + ": ";
        if (!std::isfinite(s.time) || !std::isfinite(s.position) || !std::isfinite(s.vehicle_speed) ||
            !std::isfinite(s.axle_speed) || !std::isfinite(s.wheel_torque_demand) || !std::isfinite(s.aux_power) ||
            !std::isfinite(s.elevation))
            throw ValidationError(where + "non-finite value");
        if (s.vehicle_speed < 0.0 || s.axle_speed < 0.0) throw ValidationError(where + "negative speed");
        if (s.gear_index < 1 || s.gear_index > 6) throw ValidationError(where + "gear outside 1..6");
        if (s.position < 0.0) throw ValidationError(where + "negative position");
        if (k > 0) {
            const double dt = s.time - samples[k - 1].time;
            if (!(dt > 0.0)) throw ValidationError(where + "time is not strictly increasing");
            if (std::abs(dt - sample_time) > 1e-6 * sample_time)
                throw ValidationError(where + "samples are not uniformly spaced at sample_time");
            if (s.position < samples[k - 1].position) throw ValidationError(where + "position decreases");
        }
    }
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string format_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string trim(std::string_view s)
{
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& cell, std::size_t line_no, const char* column)
{
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto res = std::from_chars(first, last, v);
    if (cell.empty() || res.ec != std::errc{} || res.ptr != last)
        throw ParseError("line " + std::to_string(line_no) + ": column " + column + ": cannot parse '" + cell + "'");
    return v;
}

// "# emslab-trip v1 route_id=R trip_id=T tag=morning"
void parse_metadata(const std::string& line, Trip& trip)
{
    std::istringstream is(line.substr(1));
    std::string tok;
    while (is >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = tok.substr(0, eq);
        const std::string val = tok.substr(eq + 1);
        if (key == "route_id") trip.route_id = val;
        else if (key == "trip_id") trip.trip_id = val;
        else if (key == "tag") trip.tag = val;
    }
}

}  // namespace

Trip parse_trip_csv(const std::string& text, double sample_time, const std::string& fallback_id)
{
    Trip raw;
    raw.trip_id = fallback_id;
    raw.route_id = "route";
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<int> col_of(kTripColumns.size(), -1);
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (line[0] == '#') {
            parse_metadata(line, raw);
            continue;
        }
        const auto cells = split_csv(line);
        if (!have_header) {
            for (std::size_t c = 0; c < cells.size(); ++c) {
                for (std::size_t k = 0; k < kTripColumns.size(); ++k)
                    if (cells[c] == kTripColumns[k]) col_of[k] = static_cast<int>(c);
            }
            for (std::size_t k = 0; k + 1 < kTripColumns.size(); ++k)
                if (col_of[k] < 0) throw SchemaError(std::string{"trip CSV is missing column '"} + kTripColumns[k] + "'");
            have_header = true;
            continue;
        }
        auto cell = [&](std::size_t k) -> const std::string& {
            const int c = col_of[k];
            if (static_cast<std::size_t>(c) >= cells.size())
                throw ParseError("line " + std::to_string(line_no) + ": too few fields");
            return cells[static_cast<std::size_t>(c)];
        };
        TripSample s;
        s.time = parse_number(cell(0), line_no, kTripColumns[0]);
        s.position = parse_number(cell(1), line_no, kTripColumns[1]);
        s.vehicle_speed = parse_number(cell(2), line_no, kTripColumns[2]);
        s.axle_speed = parse_number(cell(3), line_no, kTripColumns[3]);
        s.wheel_torque_demand = parse_number(cell(4), line_no, kTripColumns[4]);
        s.aux_power = parse_number(cell(5), line_no, kTripColumns[5]);
        const double gear = parse_number(cell(6), line_no, kTripColumns[6]);
        if (gear != std::floor(gear)) throw ParseError("line " + std::to_string(line_no) + ": gear must be an integer");
        s.gear_index = static_cast<int>(gear);
        if (col_of[7] >= 0) s.elevation = parse_number(cell(7), line_no, kTripColumns[7]);
        raw.samples.push_back(s);
    }
    if (!have_header) throw SchemaError("trip CSV has no header row");

    // Source rate from the first interval; a single-row file is taken at the target rate.
    raw.sample_time = raw.samples.size() >= 2 ? raw.samples[1].time - raw.samples[0].time : sample_time;
    for (std::size_t k = 1; k < raw.samples.size(); ++k) {
        if (!(raw.samples[k].time > raw.samples[k - 1].time))
            throw ValidationError("trip " + raw.trip_id + ": time column is not strictly increasing");
        if (raw.samples[k].vehicle_speed < 0.0 || raw.samples[k].axle_speed < 0.0)
            throw ValidationError("trip " + raw.trip_id + ": negative speed");
    }
    if (!raw.samples.empty() && (raw.samples[0].vehicle_speed < 0.0 || raw.samples[0].axle_speed < 0.0))
        throw ValidationError("trip " + raw.trip_id + ": negative speed");

    bool uniform = true;
    for (std::size_t k = 1; k < raw.samples.size(); ++k) {
        const double dt = raw.samples[k].time - raw.samples[k - 1].time;
        if (std::abs(dt - sample_time) > 1e-6 * sample_time) uniform = false;
    }
    Trip trip = uniform ? raw : resample(raw, sample_time);
    trip.sample_time = sample_time;
    trip.validate();
    return trip;
}

Trip load_trip(const std::filesystem::path& path, double sample_time)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifacts("cannot open trip file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_trip_csv(ss.str(), sample_time, path.stem().string());
}

std::string trip_to_csv(const Trip& trip)
{
    std::ostringstream out;
    out << "# emslab-trip v" << kTripSchemaVersion << " route_id=" << trip.route_id << " trip_id=" << trip.trip_id
        << " tag=" << (trip.tag.empty() ? "none" : trip.tag) << '\n';
    for (std::size_t k = 0; k < kTripColumns.size(); ++k) out << (k ? "," : "") << kTripColumns[k];
    out << '\n';
    for (const TripSample& s : trip.samples) {
        out << format_double(s.time) << ',' << format_double(s.position) << ',' << format_double(s.vehicle_speed)
            << ',' << format_double(s.axle_speed) << ',' << format_double(s.wheel_torque_demand) << ','
            << format_double(s.aux_power) << ',' << s.gear_index << ',' << format_double(s.elevation) << '\n';
    }
    return out.str();
}

void save_trip(const Trip& trip, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << trip_to_csv(trip);
}

Trip resample(const Trip& src, double sample_time)
{
    if (!(sample_time > 0.0)) throw ValidationError("resample: sample_time must be positive");
    Trip out = src;
    out.sample_time = sample_time;
    out.samples.clear();
    if (src.samples.empty()) return out;
    const double t0 = src.samples.front().time;
    const double t1 = src.samples.back().time;
    const auto count = static_cast<std::size_t>(std::floor((t1 - t0) / sample_time + 1e-9)) + 1;
    std::size_t j = 0;
    for (std::size_t k = 0; k < count; ++k) {
        const double t = t0 + static_cast<double>(k) * sample_time;
        while (j + 1 < src.samples.size() && src.samples[j + 1].time <= t) ++j;
        const TripSample& a = src.samples[j];
        TripSample s = a;
        s.time = t;
        if (j + 1 < src.samples.size()) {
            const TripSample& b = src.samples[j + 1];
            const double w = (t - a.time) / (b.time - a.time);
            auto lerp = [w](double x, double y) { return x + w * (y - x); };
            s.position = lerp(a.position, b.position);
            s.vehicle_speed = lerp(a.vehicle_speed, b.vehicle_speed);
            s.axle_speed = lerp(a.axle_speed, b.axle_speed);
            s.wheel_torque_demand = lerp(a.wheel_torque_demand, b.wheel_torque_demand);
            s.aux_power = lerp(a.aux_power, b.aux_power);
            s.elevation = lerp(a.elevation, b.elevation);
        }
        out.samples.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bins and statistics

std::size_t RouteBins::bin_of(double position) const
{
    if (bin_count == 0) return 0;
    if (!(position > 0.0)) return 0;
    const auto k = static_cast<std::size_t>(std::floor(position / bin_length));
    return std::min(k, bin_count - 1);
}

double RouteBins::bin_center(std::size_t k) const
{
    const double lo = bin_start(k);
    const double hi = std::min(total_distance, lo + bin_length);
    return 0.5 * (lo + hi);
}

RouteBins make_bins(std::span<const Trip> trips, double bin_length)
{
    if (trips.empty()) throw RouteMismatch("make_bins: no trips");
    if (!(bin_length > 0.0)) throw ValidationError("make_bins: bin_length must be positive");
    const Trip& ref = trips.front();
    const double ref_len = ref.total_distance();
    for (const Trip& t : trips) {
        if (t.route_id != ref.route_id)
            throw RouteMismatch("trip " + t.trip_id + " is on route " + t.route_id + ", expected " + ref.route_id);
        if (std::abs(t.total_distance() - ref_len) > 0.01 * ref_len)
            throw RouteMismatch("trip " + t.trip_id + " length differs from " + ref.trip_id + " by more than 1%");
    }
    RouteBins bins;
    bins.route_id = ref.route_id;
    bins.bin_length = bin_length;
    bins.total_distance = ref_len;
    bins.bin_count = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(ref_len / bin_length - 1e-12)));
    return bins;
}

RouteStats build_route_stats(std::span<const Trip> trips, const RouteBins& bins)
{
    if (trips.empty()) throw EmptyCorpus("build_route_stats: no trips");
    RouteStats stats;
    stats.bins = bins;
    stats.time_left.assign(bins.bin_count, 0.0);
    for (const Trip& trip : trips) {
        const double end = trip.duration();
        stats.mean_total_time += end;
        std::size_t next_bin = 0;
        for (std::size_t k = 0; k < trip.size() && next_bin < bins.bin_count; ++k) {
            const std::size_t b = bins.bin_of(trip.samples[k].position);
            const double t = static_cast<double>(k) * trip.sample_time;
            while (next_bin <= b) stats.time_left[next_bin++] += end - t;
        }
        while (next_bin < bins.bin_count) stats.time_left[next_bin++] += 0.0;
    }
    const double n = static_cast<double>(trips.size());
    stats.mean_total_time /= n;
    for (double& v : stats.time_left) v /= n;
    return stats;
}

nlohmann::json route_stats_to_json(const RouteStats& s)
{
    return {
        {"route_id", s.bins.route_id},
        {"bin_length_m", s.bins.bin_length},
        {"bin_count", s.bins.bin_count},
        {"total_distance_m", s.bins.total_distance},
        {"time_left_s", s.time_left},
        {"mean_total_time_s", s.mean_total_time},
    };
}

RouteStats route_stats_from_json(const nlohmann::json& j)
{
    RouteStats s;
    s.bins.route_id = j.at("route_id").get<std::string>();
    s.bins.bin_length = j.at("bin_length_m").get<double>();
    s.bins.bin_count = j.at("bin_count").get<std::size_t>();
    s.bins.total_distance = j.at("total_distance_m").get<double>();
    s.time_left = j.at("time_left_s").get<std::vector<double>>();
    s.mean_total_time = j.at("mean_total_time_s").get<double>();
    if (s.time_left.size() != s.bins.bin_count) throw SchemaError("route stats: time_left length != bin_count");
    return s;
}

}  // namespace emslab
