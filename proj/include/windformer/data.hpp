#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "windformer/time_util.hpp"
#include "windformer/value.hpp"

namespace windformer {

// Column mapping for long-format SCADA CSVs. Timestamps come either from a
// single datetime column (time_col) or, for datasets that only carry a day
// index, from day_col (1-based day number) plus time_col ("HH:MM"); in the
// latter case day 1 is anchored at epoch_date.
struct CsvSchema {
    std::string turbine_col = "turbine";
    std::string time_col = "timestamp";
    std::string day_col;  // empty -> time_col is a full datetime
    std::string power_col = "power";
    std::vector<std::string> exo_cols = {"wind_speed", "temperature"};
    std::string missing_sentinel;  // matched in addition to empty fields
    int cadence_minutes = 10;
    CivilDate epoch_date{2000, 1, 1};  // day-index datasets only
};

// Aligned per-turbine multivariate series on one shared timestamp grid.
// power stays in kW throughout; apply_zscore fills the *_std views that feed
// the model, so targets can always be cut from the raw buffer.
struct FarmSeries {
    int64_t turbines = 0;              // N
    std::vector<int64_t> times;        // minutes since epoch, length T, fixed cadence
    int cadence_minutes = 10;
    std::vector<std::string> turbine_names;  // size N, first-appearance order
    std::vector<std::string> exo_names;      // size C
    std::vector<double> power;         // [T x N], kW
    std::vector<double> exo;           // [T x N x C]
    std::vector<uint8_t> missing;      // [T x N x (C+1)], column 0 = power
    std::vector<double> power_std;     // [T x N], filled by apply_zscore
    std::vector<double> exo_std;       // [T x N x C]
    bool normalized = false;

    int64_t steps() const { return static_cast<int64_t>(times.size()); }
    int64_t exo_vars() const { return static_cast<int64_t>(exo_names.size()); }
    int64_t slots_per_day() const { return 1440 / cadence_minutes; }

    double& power_at(int64_t t, int64_t n) { return power[t * turbines + n]; }
    double power_at(int64_t t, int64_t n) const { return power[t * turbines + n]; }
    double& exo_at(int64_t t, int64_t n, int64_t c) {
        return exo[(t * turbines + n) * exo_vars() + c];
    }
    double exo_at(int64_t t, int64_t n, int64_t c) const {
        return exo[(t * turbines + n) * exo_vars() + c];
    }
    uint8_t& missing_at(int64_t t, int64_t n, int64_t c) {
        return missing[(t * turbines + n) * (exo_vars() + 1) + c];
    }
    uint8_t missing_at(int64_t t, int64_t n, int64_t c) const {
        return missing[(t * turbines + n) * (exo_vars() + 1) + c];
    }
};

// Per-column standardization statistics, fitted on the training split only.
struct NormStats {
    double power_mean = 0.0;
    double power_std = 1.0;
    std::vector<double> exo_mean;
    std::vector<double> exo_std;
    std::vector<uint8_t> zero_variance;  // [C+1], column 0 = power

    double denorm_power(double v) const { return v * power_std + power_mean; }
    double norm_power(double v) const { return (v - power_mean) / power_std; }
};

struct TemporalIndex {
    int32_t slot_of_day = 0;  // [0, slots_per_day)
    int32_t month = 0;        // [0, 12)
    int32_t day_of_year = 0;  // [0, 366)
};

// One assembled batch. X and Z_s are standardized, Y stays in kW.
struct WindowBatch {
    ValuePtr X;                     // [B x H x N x 1]
    ValuePtr Zs;                    // [B x H x N x C]
    std::vector<int32_t> t_idx;     // [B x H' x 3] (slot, month, day-of-year)
    std::vector<double> Y;          // [B x P x N x 1]
    int64_t batch = 0, lookback = 0, horizon = 0, turbines = 0, exo_vars = 0,
            h_prime = 0;

    // per-table index lists in batch order, for the embedding lookups
    std::vector<int64_t> slot_indices() const;
    std::vector<int64_t> month_indices() const;
    std::vector<int64_t> doy_indices() const;
};

FarmSeries parse_csv(const std::string& path, const CsvSchema& schema);
void write_farm_csv(const FarmSeries& fs, const CsvSchema& schema, const std::string& path);

// Forward fill then backward fill, per turbine and column. Errors if a
// turbine-column has no observed value at all.
FarmSeries fill_missing(FarmSeries fs);

// Chronological 7:2:1 split at floor(0.7 T) and floor(0.9 T). min_len guards
// that each segment can still hold at least one window (pass H + P).
std::array<FarmSeries, 3> split_7_2_1(const FarmSeries& fs, int64_t min_len = 1);

NormStats fit_zscore(const FarmSeries& train);
FarmSeries apply_zscore(FarmSeries fs, const NormStats& stats);
// Inverse of apply_zscore on the standardized buffers (round-trip checks).
FarmSeries undo_zscore(FarmSeries fs, const NormStats& stats);

std::vector<TemporalIndex> temporal_indices(const std::vector<int64_t>& times,
                                            int cadence_minutes);

// Anchors are the last lookback index t of each window: X covers
// [t-H+1, t], Y covers [t+1, t+P]. Count is T-H-P+1 at stride 1.
std::vector<int64_t> window_anchors(int64_t steps, int64_t lookback, int64_t horizon,
                                    int64_t stride = 1);

// Gathers anchors into model-ready tensors. fs must be normalized.
// h_prime <= lookback covers the lookback tail; temporal indices are shared
// across turbines (one farm clock).
WindowBatch make_batch(const FarmSeries& fs, const std::vector<int64_t>& anchors,
                       int64_t lookback, int64_t horizon, int64_t h_prime);

struct SynthConfig {
    int64_t turbines = 8;   // N >= 2
    int64_t steps = 20000;  // T >= 2000
    int64_t exo_vars = 2;   // C >= 2
    uint64_t seed = 0;
    double rated_kw = 1500.0;
    int cadence_minutes = 10;
    CivilDate start{2000, 1, 1};
    double missing_rate = 0.01;
};

// Deterministic synthetic farm: power is a saturating cubic of a latent wind
// field with diurnal and seasonal components plus shared farm-level gusts, so
// turbines are spatially correlated. Exo column 0 is the noisy wind speed,
// column 1 a temperature series.
FarmSeries generate_synthetic(const SynthConfig& cfg);

}  // namespace windformer
