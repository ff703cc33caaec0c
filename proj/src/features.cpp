#include <algorithm>
#include <stdexcept>

#include "emslab/trip.hpp"

namespace emslab {

FeatureTracker::FeatureTracker(const RouteStats& stats, double sample_time)
    : stats_(&stats), sample_time_(sample_time)
{
    bin_anchor_ = stats.time_left.empty() ? stats.mean_total_time : stats.time_left.front();
}

void FeatureTracker::observe(const TripSample& sample, double accel)
{
    now_ = static_cast<double>(count_) * sample_time_;
    ++count_;
    sum_aux_ += sample.aux_power;
    sum_speed_ += sample.vehicle_speed;
    sum_accel_ += accel;
    last_aux_ = sample.aux_power;
    last_speed_ = sample.vehicle_speed;
    last_accel_ = accel;
    const std::size_t b = stats_->bins.bin_of(sample.position);
    if (count_ == 1 || b != bin_) {
        bin_ = b;
        bin_anchor_ = b < stats_->time_left.size() ? stats_->time_left[b] : 0.0;
        bin_entry_time_ = now_;
    }
}

double FeatureTracker::time_left() const
{
    return std::max(0.0, bin_anchor_ - (now_ - bin_entry_time_));
}

FeatureVector FeatureTracker::features(const PowertrainState& state) const
{
    FeatureVector f;
    const double n = static_cast<double>(std::max<std::size_t>(count_, 1));
    f[kSoc] = state.soc;
    f[kEngineStatus] = state.engine_on ? 1.0 : 0.0;
    f[kAvgAuxPower] = sum_aux_ / n;
    f[kFuelConsumed] = fuel_kg_;
    f[kAvgSpeed] = sum_speed_ / n;
    f[kAvgAccel] = sum_accel_ / n;
    f[kTimeLeft] = count_ == 0 ? stats_->mean_total_time : time_left();
    f[kBias] = 1.0;
    return f;
}

FeatureVector FeatureTracker::predict(const PowertrainState& next, double step_fuel_kg, double position_next) const
{
    FeatureVector f;
    const double n = static_cast<double>(count_ + 1);
    f[kSoc] = next.soc;
    f[kEngineStatus] = next.engine_on ? 1.0 : 0.0;
    f[kAvgAuxPower] = (sum_aux_ + last_aux_) / n;
    f[kFuelConsumed] = fuel_kg_ + step_fuel_kg;
    f[kAvgSpeed] = (sum_speed_ + last_speed_) / n;
    f[kAvgAccel] = (sum_accel_ + last_accel_) / n;
    const std::size_t b = stats_->bins.bin_of(position_next);
    if (b == bin_) f[kTimeLeft] = std::max(0.0, time_left() - sample_time_);
    else f[kTimeLeft] = b < stats_->time_left.size() ? stats_->time_left[b] : 0.0;
    f[kBias] = 1.0;
    return f;
}

FeatureVector extract_features(const Trip& trip, std::span<const PowertrainState> states,
                               std::span<const double> fuel_mass, std::size_t t, const RouteStats& stats)
{
    if (t >= states.size()) throw std::out_of_range("extract_features: state index out of range");
    if (t > trip.size()) throw std::out_of_range("extract_features: step index past the trip");
    FeatureTracker tracker(stats, trip.sample_time);
    const std::size_t observed = std::min(t + 1, trip.size());
    for (std::size_t k = 0; k < observed; ++k) {
        tracker.observe(trip.samples[k], trip.accel(k));
        if (k < t && k < fuel_mass.size()) tracker.add_fuel(fuel_mass[k]);
    }
    return tracker.features(states[t]);
}

}  // namespace emslab
