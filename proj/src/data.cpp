#include "windformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <unordered_map>

#include "windformer/csv.hpp"
#include "windformer/rng.hpp"

namespace windformer {

namespace {

inline size_t zu(int64_t v) { return static_cast<size_t>(v); }

bool is_missing_field(const std::string& field, const CsvSchema& schema) {
    if (field.empty()) return true;
    if (!schema.missing_sentinel.empty() && field == schema.missing_sentinel) return true;
    return false;
}

double parse_number(const std::string& field, const std::string& col) {
    try {
        size_t pos = 0;
        double v = std::stod(field, &pos);
        while (pos < field.size() && std::isspace(static_cast<unsigned char>(field[pos])))
            ++pos;
        if (pos != field.size()) throw std::invalid_argument(field);
        return v;
    } catch (const std::exception&) {
        throw DataError("non-numeric value '" + field + "' in column " + col);
    }
}

}  // namespace

std::vector<int64_t> WindowBatch::slot_indices() const {
    std::vector<int64_t> out(zu(batch * h_prime));
    for (size_t i = 0; i < out.size(); ++i) out[i] = t_idx[i * 3 + 0];
    return out;
}
std::vector<int64_t> WindowBatch::month_indices() const {
    std::vector<int64_t> out(zu(batch * h_prime));
    for (size_t i = 0; i < out.size(); ++i) out[i] = t_idx[i * 3 + 1];
    return out;
}
std::vector<int64_t> WindowBatch::doy_indices() const {
    std::vector<int64_t> out(zu(batch * h_prime));
    for (size_t i = 0; i < out.size(); ++i) out[i] = t_idx[i * 3 + 2];
    return out;
}

FarmSeries parse_csv(const std::string& path, const CsvSchema& schema) {
    CsvTable table = read_csv(path);

    auto need = [&](const std::string& name) {
        int c = table.column(name);
        if (c < 0)
            throw DataError("schema column '" + name + "' not found in " + path +
                            " (header has " + join_csv_line(table.header) + ")");
        return c;
    };
    const int col_turbine = need(schema.turbine_col);
    const int col_time = need(schema.time_col);
    const int col_day = schema.day_col.empty() ? -1 : need(schema.day_col);
    const int col_power = need(schema.power_col);
    std::vector<int> col_exo;
    for (const auto& name : schema.exo_cols) col_exo.push_back(need(name));

    const int64_t day0 = minutes_from_civil(schema.epoch_date);

    struct Row {
        int64_t turbine;
        int64_t time;
        bool power_missing;
        double power;
        std::vector<std::pair<bool, double>> exo;  // (missing, value)
    };
    std::vector<Row> rows;
    rows.reserve(table.rows.size());
    std::vector<std::string> turbine_names;
    std::unordered_map<std::string, int64_t> turbine_index;

    for (const auto& fields : table.rows) {
        Row r;
        const std::string& tid = fields[zu(col_turbine)];
        auto it = turbine_index.find(tid);
        if (it == turbine_index.end()) {
            it = turbine_index.emplace(tid, static_cast<int64_t>(turbine_names.size())).first;
            turbine_names.push_back(tid);
        }
        r.turbine = it->second;

        if (col_day >= 0) {
            double day = parse_number(fields[zu(col_day)], schema.day_col);
            int mod = parse_time_of_day(fields[zu(col_time)]);
            r.time = day0 + (static_cast<int64_t>(day) - 1) * 1440 + mod;
        } else {
            r.time = parse_timestamp(fields[zu(col_time)]);
        }

        const std::string& pf = fields[zu(col_power)];
        r.power_missing = is_missing_field(pf, schema);
        r.power = r.power_missing ? 0.0 : parse_number(pf, schema.power_col);
        for (size_t c = 0; c < col_exo.size(); ++c) {
            const std::string& ef = fields[zu(col_exo[c])];
            bool miss = is_missing_field(ef, schema);
            r.exo.emplace_back(miss, miss ? 0.0 : parse_number(ef, schema.exo_cols[c]));
        }
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw DataError("no data rows in " + path);

    int64_t tmin = rows[0].time, tmax = rows[0].time;
    for (const auto& r : rows) {
        tmin = std::min(tmin, r.time);
        tmax = std::max(tmax, r.time);
    }
    const int cadence = schema.cadence_minutes;
    for (const auto& r : rows)
        if ((r.time - tmin) % cadence != 0)
            throw DataError("cadence-inconsistent timestamp " + format_timestamp(r.time) +
                            " (cadence " + std::to_string(cadence) + " min)");

    FarmSeries fs;
    fs.turbines = static_cast<int64_t>(turbine_names.size());
    fs.turbine_names = std::move(turbine_names);
    fs.exo_names = schema.exo_cols;
    fs.cadence_minutes = cadence;
    const int64_t steps = (tmax - tmin) / cadence + 1;
    fs.times.resize(zu(steps));
    for (int64_t t = 0; t < steps; ++t) fs.times[zu(t)] = tmin + t * cadence;
    const int64_t C = fs.exo_vars();
    fs.power.assign(zu(steps * fs.turbines), 0.0);
    fs.exo.assign(zu(steps * fs.turbines * C), 0.0);
    fs.missing.assign(zu(steps * fs.turbines * (C + 1)), 1);  // absent until observed

    int64_t duplicates = 0;
    std::vector<uint8_t> seen(zu(steps * fs.turbines), 0);
    for (const auto& r : rows) {
        const int64_t t = (r.time - tmin) / cadence;
        if (seen[zu(t * fs.turbines + r.turbine)]) ++duplicates;  // keep last
        seen[zu(t * fs.turbines + r.turbine)] = 1;
        fs.power_at(t, r.turbine) = r.power;
        fs.missing_at(t, r.turbine, 0) = r.power_missing ? 1 : 0;
        for (int64_t c = 0; c < C; ++c) {
            fs.exo_at(t, r.turbine, c) = r.exo[zu(c)].second;
            fs.missing_at(t, r.turbine, c + 1) = r.exo[zu(c)].first ? 1 : 0;
        }
    }
    if (duplicates > 0)
        std::cerr << "warning: " << duplicates << " duplicate (turbine, timestamp) rows in "
                  << path << ", kept the last of each\n";
    return fs;
}

void write_farm_csv(const FarmSeries& fs, const CsvSchema& schema,
                    const std::string& path) {
    CsvTable table;
    const bool day_format = !schema.day_col.empty();
    table.header.push_back(schema.turbine_col);
    if (day_format) table.header.push_back(schema.day_col);
    table.header.push_back(schema.time_col);
    table.header.push_back(schema.power_col);
    for (const auto& n : fs.exo_names) table.header.push_back(n);

    const int64_t day0 = minutes_from_civil(schema.epoch_date);
    char buf[32];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        return std::string(buf);
    };
    for (int64_t t = 0; t < fs.steps(); ++t) {
        for (int64_t n = 0; n < fs.turbines; ++n) {
            std::vector<std::string> row;
            row.push_back(n < static_cast<int64_t>(fs.turbine_names.size())
                              ? fs.turbine_names[zu(n)]
                              : std::to_string(n + 1));
            if (day_format) {
                int64_t rel = fs.times[zu(t)] - day0;
                row.push_back(std::to_string(rel / 1440 + 1));
                int mod = static_cast<int>(rel % 1440);
                std::snprintf(buf, sizeof(buf), "%02d:%02d", mod / 60, mod % 60);
                row.push_back(buf);
            } else {
                row.push_back(format_timestamp(fs.times[zu(t)]));
            }
            row.push_back(fs.missing_at(t, n, 0) ? schema.missing_sentinel
                                                 : fmt(fs.power_at(t, n)));
            for (int64_t c = 0; c < fs.exo_vars(); ++c)
                row.push_back(fs.missing_at(t, n, c + 1) ? schema.missing_sentinel
                                                         : fmt(fs.exo_at(t, n, c)));
            table.rows.push_back(std::move(row));
        }
    }
    write_csv(path, table);
}

FarmSeries fill_missing(FarmSeries fs) {
    const int64_t T = fs.steps(), N = fs.turbines, C = fs.exo_vars();
    auto cell = [&fs, C](int64_t t, int64_t n, int64_t col) -> double& {
        return col == 0 ? fs.power_at(t, n) : fs.exo_at(t, n, col - 1);
    };
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t col = 0; col <= C; ++col) {
            bool any = false;
            for (int64_t t = 0; t < T && !any; ++t)
                if (!fs.missing_at(t, n, col)) any = true;
            if (!any) {
                std::string cname = col == 0 ? "power" : fs.exo_names[zu(col - 1)];
                throw DataError("column '" + cname + "' has no observed values for turbine " +
                                std::to_string(n));
            }
            // forward fill
            bool have = false;
            double last = 0.0;
            for (int64_t t = 0; t < T; ++t) {
                if (!fs.missing_at(t, n, col)) {
                    have = true;
                    last = cell(t, n, col);
                } else if (have) {
                    cell(t, n, col) = last;
                    fs.missing_at(t, n, col) = 0;
                }
            }
            // backward fill for leading gaps
            have = false;
            for (int64_t t = T - 1; t >= 0; --t) {
                if (!fs.missing_at(t, n, col)) {
                    have = true;
                    last = cell(t, n, col);
                } else if (have) {
                    cell(t, n, col) = last;
                    fs.missing_at(t, n, col) = 0;
                }
            }
        }
    }
    return fs;
}

namespace {

FarmSeries slice_time(const FarmSeries& fs, int64_t begin, int64_t end) {
    FarmSeries out;
    const int64_t N = fs.turbines, C = fs.exo_vars();
    out.turbines = N;
    out.cadence_minutes = fs.cadence_minutes;
    out.turbine_names = fs.turbine_names;
    out.exo_names = fs.exo_names;
    out.normalized = fs.normalized;
    out.times.assign(fs.times.begin() + begin, fs.times.begin() + end);
    out.power.assign(fs.power.begin() + begin * N, fs.power.begin() + end * N);
    out.exo.assign(fs.exo.begin() + begin * N * C, fs.exo.begin() + end * N * C);
    out.missing.assign(fs.missing.begin() + begin * N * (C + 1),
                       fs.missing.begin() + end * N * (C + 1));
    if (!fs.power_std.empty())
        out.power_std.assign(fs.power_std.begin() + begin * N,
                             fs.power_std.begin() + end * N);
    if (!fs.exo_std.empty())
        out.exo_std.assign(fs.exo_std.begin() + begin * N * C,
                           fs.exo_std.begin() + end * N * C);
    return out;
}

}  // namespace

std::array<FarmSeries, 3> split_7_2_1(const FarmSeries& fs, int64_t min_len) {
    const int64_t T = fs.steps();
    const int64_t t1 = static_cast<int64_t>(std::floor(0.7 * static_cast<double>(T)));
    const int64_t t2 = static_cast<int64_t>(std::floor(0.9 * static_cast<double>(T)));
    if (t1 < min_len || t2 - t1 < min_len || T - t2 < min_len)
        throw DataError("series of length " + std::to_string(T) +
                        " too small for a 7:2:1 split with segment minimum " +
                        std::to_string(min_len));
    return {slice_time(fs, 0, t1), slice_time(fs, t1, t2), slice_time(fs, t2, T)};
}

NormStats fit_zscore(const FarmSeries& train) {
    const int64_t T = train.steps(), N = train.turbines, C = train.exo_vars();
    if (T * N == 0) throw DataError("fit_zscore on empty series");
    NormStats stats;
    stats.exo_mean.assign(zu(C), 0.0);
    stats.exo_std.assign(zu(C), 1.0);
    stats.zero_variance.assign(zu(C + 1), 0);

    auto fit = [&](auto getter, double& mean_out, double& std_out, int64_t flag_idx) {
        double mean = 0.0;
        const double count = static_cast<double>(T * N);
        for (int64_t t = 0; t < T; ++t)
            for (int64_t n = 0; n < N; ++n) mean += getter(t, n);
        mean /= count;
        double var = 0.0;  // population (1/n) variance
        for (int64_t t = 0; t < T; ++t)
            for (int64_t n = 0; n < N; ++n) {
                double d = getter(t, n) - mean;
                var += d * d;
            }
        var /= count;
        mean_out = mean;
        if (var > 0.0) {
            std_out = std::sqrt(var);
        } else {
            std_out = 1.0;
            stats.zero_variance[zu(flag_idx)] = 1;
        }
    };

    fit([&](int64_t t, int64_t n) { return train.power_at(t, n); }, stats.power_mean,
        stats.power_std, 0);
    for (int64_t c = 0; c < C; ++c)
        fit([&](int64_t t, int64_t n) { return train.exo_at(t, n, c); },
            stats.exo_mean[zu(c)], stats.exo_std[zu(c)], c + 1);
    return stats;
}

FarmSeries apply_zscore(FarmSeries fs, const NormStats& stats) {
    const int64_t T = fs.steps(), N = fs.turbines, C = fs.exo_vars();
    if (static_cast<int64_t>(stats.exo_mean.size()) != C)
        throw DataError("NormStats fitted for " + std::to_string(stats.exo_mean.size()) +
                        " exo columns, series has " + std::to_string(C));
    fs.power_std.resize(zu(T * N));
    fs.exo_std.resize(zu(T * N * C));
    for (int64_t i = 0; i < T * N; ++i)
        fs.power_std[zu(i)] = (fs.power[zu(i)] - stats.power_mean) / stats.power_std;
    for (int64_t i = 0; i < T * N; ++i)
        for (int64_t c = 0; c < C; ++c)
            fs.exo_std[zu(i * C + c)] =
                (fs.exo[zu(i * C + c)] - stats.exo_mean[zu(c)]) / stats.exo_std[zu(c)];
    fs.normalized = true;
    return fs;
}

FarmSeries undo_zscore(FarmSeries fs, const NormStats& stats) {
    const int64_t T = fs.steps(), N = fs.turbines, C = fs.exo_vars();
    for (int64_t i = 0; i < T * N; ++i)
        fs.power_std[zu(i)] = fs.power_std[zu(i)] * stats.power_std + stats.power_mean;
    for (int64_t i = 0; i < T * N; ++i)
        for (int64_t c = 0; c < C; ++c)
            fs.exo_std[zu(i * C + c)] =
                fs.exo_std[zu(i * C + c)] * stats.exo_std[zu(c)] + stats.exo_mean[zu(c)];
    fs.normalized = false;
    return fs;
}

std::vector<TemporalIndex> temporal_indices(const std::vector<int64_t>& times,
                                            int cadence_minutes) {
    std::vector<TemporalIndex> out;
    out.reserve(times.size());
    for (int64_t m : times) {
        int64_t days = m >= 0 ? m / 1440 : (m - 1439) / 1440;
        int mod = static_cast<int>(m - days * 1440);
        if (mod % cadence_minutes != 0)
            throw DataError("cadence-inconsistent timestamp " + format_timestamp(m) +
                            " for cadence " + std::to_string(cadence_minutes) + " min");
        CivilDate d = civil_from_days(days);
        TemporalIndex ti;
        ti.slot_of_day = mod / cadence_minutes;
        ti.month = d.month - 1;
        ti.day_of_year = day_of_year_index(d);
        out.push_back(ti);
    }
    return out;
}

std::vector<int64_t> window_anchors(int64_t steps, int64_t lookback, int64_t horizon,
                                    int64_t stride) {
    if (lookback <= 0 || horizon <= 0)
        throw DataError("lookback and horizon must be positive, got H=" +
                        std::to_string(lookback) + " P=" + std::to_string(horizon));
    if (stride <= 0) throw DataError("window stride must be positive");
    std::vector<int64_t> anchors;
    for (int64_t t = lookback - 1; t + horizon < steps; t += stride) anchors.push_back(t);
    return anchors;
}

WindowBatch make_batch(const FarmSeries& fs, const std::vector<int64_t>& anchors,
                       int64_t lookback, int64_t horizon, int64_t h_prime) {
    if (!fs.normalized) throw DataError("make_batch requires a normalized series");
    if (h_prime <= 0 || h_prime > lookback)
        throw DataError("h_prime must lie in [1, lookback]");
    const int64_t B = static_cast<int64_t>(anchors.size());
    const int64_t N = fs.turbines, C = fs.exo_vars(), T = fs.steps();
    if (B == 0) throw DataError("make_batch on empty anchor list");
    for (int64_t t : anchors)
        if (t < lookback - 1 || t + horizon >= T)
            throw DataError("window anchor " + std::to_string(t) + " out of range");

    WindowBatch wb;
    wb.batch = B;
    wb.lookback = lookback;
    wb.horizon = horizon;
    wb.turbines = N;
    wb.exo_vars = C;
    wb.h_prime = h_prime;

    std::vector<double> x(zu(B * lookback * N));
    std::vector<double> zs(zu(B * lookback * N * C));
    wb.Y.resize(zu(B * horizon * N));
    wb.t_idx.resize(zu(B * h_prime * 3));

    auto tix = temporal_indices(fs.times, fs.cadence_minutes);
    for (int64_t b = 0; b < B; ++b) {
        const int64_t anchor = anchors[zu(b)];
        for (int64_t h = 0; h < lookback; ++h) {
            const int64_t t = anchor - lookback + 1 + h;
            for (int64_t n = 0; n < N; ++n) {
                x[zu((b * lookback + h) * N + n)] = fs.power_std[zu(t * N + n)];
                for (int64_t c = 0; c < C; ++c)
                    zs[zu(((b * lookback + h) * N + n) * C + c)] =
                        fs.exo_std[zu((t * N + n) * C + c)];
            }
        }
        for (int64_t h = 0; h < h_prime; ++h) {
            const int64_t t = anchor - h_prime + 1 + h;
            wb.t_idx[zu((b * h_prime + h) * 3 + 0)] = tix[zu(t)].slot_of_day;
            wb.t_idx[zu((b * h_prime + h) * 3 + 1)] = tix[zu(t)].month;
            wb.t_idx[zu((b * h_prime + h) * 3 + 2)] = tix[zu(t)].day_of_year;
        }
        for (int64_t p = 0; p < horizon; ++p) {
            const int64_t t = anchor + 1 + p;
            for (int64_t n = 0; n < N; ++n)
                wb.Y[zu((b * horizon + p) * N + n)] = fs.power_at(t, n);  // kW, never normalized
        }
    }
    wb.X = Value::leaf(Shape{B, lookback, N, 1}, std::move(x));
    wb.Zs = Value::leaf(Shape{B, lookback, N, C}, std::move(zs));
    return wb;
}

FarmSeries generate_synthetic(const SynthConfig& cfg) {
    if (cfg.turbines < 2) throw DataError("synthetic farm needs at least 2 turbines");
    if (cfg.steps < 2000) throw DataError("synthetic farm needs at least 2000 steps");
    if (cfg.exo_vars < 2) throw DataError("synthetic farm needs at least 2 exo columns");

    const int64_t N = cfg.turbines, T = cfg.steps, C = cfg.exo_vars;
    Rng rng(cfg.seed);

    FarmSeries fs;
    fs.turbines = N;
    fs.cadence_minutes = cfg.cadence_minutes;
    fs.times.resize(zu(T));
    const int64_t t0 = minutes_from_civil(cfg.start);
    for (int64_t t = 0; t < T; ++t) fs.times[zu(t)] = t0 + t * cfg.cadence_minutes;
    for (int64_t n = 0; n < N; ++n) fs.turbine_names.push_back(std::to_string(n + 1));
    fs.exo_names = {"wind_speed", "temperature"};
    for (int64_t c = 2; c < C; ++c) fs.exo_names.push_back("sensor" + std::to_string(c - 1));
    fs.power.assign(zu(T * N), 0.0);
    fs.exo.assign(zu(T * N * C), 0.0);
    fs.missing.assign(zu(T * N * (C + 1)), 0);

    // per-turbine character
    std::vector<double> offset(zu(N)), diurnal_phase(zu(N)), idio(zu(N), 0.0);
    for (int64_t n = 0; n < N; ++n) offset[zu(n)] = rng.uniform(-0.6, 0.6);
    for (int64_t n = 0; n < N; ++n) diurnal_phase[zu(n)] = rng.uniform(-0.08, 0.08);
    std::vector<std::vector<double>> sensor_state(zu(N), std::vector<double>(zu(C), 0.0));

    const double slots = static_cast<double>(fs.slots_per_day());
    const double gust_rho = 0.95, gust_sigma = 2.0;
    const double idio_rho = 0.90, idio_sigma = 0.55;
    double gust = 0.0;
    auto tix = temporal_indices(fs.times, fs.cadence_minutes);

    for (int64_t t = 0; t < T; ++t) {
        gust = gust_rho * gust + std::sqrt(1.0 - gust_rho * gust_rho) * gust_sigma *
                                     rng.normal();
        const double frac_day = static_cast<double>(tix[zu(t)].slot_of_day) / slots;
        const double frac_year = static_cast<double>(tix[zu(t)].day_of_year) / 365.25;
        const double seasonal = 1.6 * std::sin(2.0 * M_PI * frac_year + 0.7);
        for (int64_t n = 0; n < N; ++n) {
            idio[zu(n)] = idio_rho * idio[zu(n)] +
                          std::sqrt(1.0 - idio_rho * idio_rho) * idio_sigma * rng.normal();
            const double diurnal =
                2.6 * std::sin(2.0 * M_PI * frac_day + diurnal_phase[zu(n)] - 0.9);
            double wind = 8.0 + diurnal + seasonal + gust + idio[zu(n)] + offset[zu(n)];
            if (wind < 0.0) wind = 0.0;
            double frac = std::pow(wind / 12.0, 3.0);
            if (frac > 1.0) frac = 1.0;
            fs.power_at(t, n) = cfg.rated_kw * frac;

            fs.exo_at(t, n, 0) = wind + 0.3 * rng.normal();
            const double temp = 15.0 + 9.0 * std::sin(2.0 * M_PI * frac_year - 1.2) +
                                3.5 * std::sin(2.0 * M_PI * frac_day - 2.4) +
                                0.4 * rng.normal();
            fs.exo_at(t, n, 1) = temp;
            for (int64_t c = 2; c < C; ++c) {
                auto& s = sensor_state[zu(n)][zu(c)];
                s = 0.9 * s + 0.4358898943540674 * rng.normal();  // unit-variance AR(1)
                fs.exo_at(t, n, c) = 0.5 * wind + 2.0 * s;
            }
        }
    }

    // mask ~missing_rate of the cells so the fill stage has work to do
    if (cfg.missing_rate > 0.0) {
        for (int64_t t = 0; t < T; ++t)
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c <= C; ++c)
                    if (rng.uniform() < cfg.missing_rate) fs.missing_at(t, n, c) = 1;
    }
    return fs;
}

}  // namespace windformer
