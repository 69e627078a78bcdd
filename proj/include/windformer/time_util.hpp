#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include "windformer/errors.hpp"

namespace windformer {

// Civil-calendar helpers on proleptic Gregorian dates. Times are carried as
// minutes since 1970-01-01 00:00 (no time zones anywhere in the pipeline).

struct CivilDate {
    int year = 2000;
    int month = 1;  // 1..12
    int day = 1;    // 1..31
};

inline bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

inline int days_in_month(int y, int m) {
    static const int table[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap(y)) return 29;
    return table[m - 1];
}

// days since 1970-01-01 (Howard Hinnant's algorithm)
inline int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2) / 5 +
                         static_cast<unsigned>(d) - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

inline CivilDate civil_from_days(int64_t z) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int64_t y = static_cast<int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return CivilDate{static_cast<int>(y + (m <= 2)), static_cast<int>(m),
                     static_cast<int>(d)};
}

inline int64_t minutes_from_civil(const CivilDate& d, int minute_of_day = 0) {
    return days_from_civil(d.year, d.month, d.day) * 1440 + minute_of_day;
}

// 0-based ordinal of the date within its year. In leap years Feb 29 lands on
// index 59 and every later day shifts up by one; 366 rows cover both cases.
inline int day_of_year_index(const CivilDate& d) {
    static const int cum[12] = {0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334};
    int idx = cum[d.month - 1] + d.day - 1;
    if (d.month > 2 && is_leap(d.year)) idx += 1;
    return idx;
}

// "YYYY-MM-DD HH:MM" or "YYYY-MM-DD HH:MM:SS" (seconds must be 00)
inline int64_t parse_timestamp(const std::string& s) {
    int y, mo, d, hh, mi, ss = 0;
    int n = std::sscanf(s.c_str(), "%d-%d-%d %d:%d:%d", &y, &mo, &d, &hh, &mi, &ss);
    if (n < 5) throw DataError("unparseable timestamp: '" + s + "'");
    if (mo < 1 || mo > 12 || d < 1 || d > days_in_month(y, mo) || hh < 0 || hh > 23 ||
        mi < 0 || mi > 59 || ss != 0)
        throw DataError("invalid timestamp: '" + s + "'");
    return minutes_from_civil(CivilDate{y, mo, d}, hh * 60 + mi);
}

// "HH:MM" or "HH:MM:SS"
inline int parse_time_of_day(const std::string& s) {
    int hh, mi, ss = 0;
    int n = std::sscanf(s.c_str(), "%d:%d:%d", &hh, &mi, &ss);
    if (n < 2 || hh < 0 || hh > 23 || mi < 0 || mi > 59 || ss != 0)
        throw DataError("unparseable time of day: '" + s + "'");
    return hh * 60 + mi;
}

// "YYYY-MM-DD"
inline CivilDate parse_date(const std::string& s) {
    int y, mo, d;
    if (std::sscanf(s.c_str(), "%d-%d-%d", &y, &mo, &d) != 3 || mo < 1 || mo > 12 ||
        d < 1 || d > days_in_month(y, mo))
        throw DataError("unparseable date: '" + s + "'");
    return CivilDate{y, mo, d};
}

inline std::string format_timestamp(int64_t minutes) {
    int64_t days = minutes >= 0 ? minutes / 1440 : (minutes - 1439) / 1440;
    int mod = static_cast<int>(minutes - days * 1440);
    CivilDate d = civil_from_days(days);
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d %02d:%02d", d.year, d.month, d.day,
                  mod / 60, mod % 60);
    return buf;
}

}  // namespace windformer
