#include "crimelink/time.hpp"

#include <cctype>
#include <cstdio>
#include <stdexcept>

namespace crimelink {
namespace {

int read_digits(std::string_view s, std::size_t& pos, std::size_t count) {
    if (pos + count > s.size())
        throw std::invalid_argument("truncated timestamp");
    int value = 0;
    for (std::size_t i = 0; i < count; ++i) {
        char c = s[pos + i];
        if (!std::isdigit(static_cast<unsigned char>(c)))
            throw std::invalid_argument("expected digit in timestamp");
        value = value * 10 + (c - '0');
    }
    pos += count;
    return value;
}

void expect(std::string_view s, std::size_t& pos, char c) {
    if (pos >= s.size() || s[pos] != c)
        throw std::invalid_argument(std::string("expected '") + c + "' in timestamp");
    ++pos;
}

} // namespace

Instant parse_instant(std::string_view s) {
    using namespace std::chrono;
    std::size_t pos = 0;
    int y = read_digits(s, pos, 4);
    expect(s, pos, '-');
    int mo = read_digits(s, pos, 2);
    expect(s, pos, '-');
    int d = read_digits(s, pos, 2);
    if (pos >= s.size() || (s[pos] != 'T' && s[pos] != 't' && s[pos] != ' '))
        throw std::invalid_argument("expected 'T' in timestamp");
    ++pos;
    int hh = read_digits(s, pos, 2);
    expect(s, pos, ':');
    int mm = read_digits(s, pos, 2);
    expect(s, pos, ':');
    int ss = read_digits(s, pos, 2);

    int millis = 0;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        int scale = 100;
        std::size_t start = pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
            millis += (s[pos] - '0') * scale;
            scale /= 10;
            ++pos;
        }
        if (pos == start)
            throw std::invalid_argument("empty fraction in timestamp");
    }

    int offset_minutes = 0;
    if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
        ++pos;
    } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
        int sign = s[pos] == '-' ? -1 : 1;
        ++pos;
        int oh = read_digits(s, pos, 2);
        expect(s, pos, ':');
        int om = read_digits(s, pos, 2);
        if (oh > 23 || om > 59)
            throw std::invalid_argument("offset out of range");
        offset_minutes = sign * (oh * 60 + om);
    } else {
        throw std::invalid_argument("missing timezone designator");
    }
    if (pos != s.size())
        throw std::invalid_argument("trailing characters in timestamp");

    year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok())
        throw std::invalid_argument("invalid calendar date");
    if (hh > 23 || mm > 59 || ss > 60)
        throw std::invalid_argument("invalid time of day");

    auto t = sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss} + milliseconds{millis};
    return time_point_cast<milliseconds>(t - minutes{offset_minutes});
}

std::string format_instant(Instant t) {
    using namespace std::chrono;
    auto day_start = floor<days>(t);
    year_month_day ymd{day_start};
    hh_mm_ss tod{t - day_start};
    char buf[40];
    long long ms = tod.subseconds().count();
    if (ms == 0) {
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lldZ",
                      static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                      static_cast<unsigned>(ymd.day()), static_cast<long long>(tod.hours().count()),
                      static_cast<long long>(tod.minutes().count()),
                      static_cast<long long>(tod.seconds().count()));
    } else {
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld.%03lldZ",
                      static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                      static_cast<unsigned>(ymd.day()), static_cast<long long>(tod.hours().count()),
                      static_cast<long long>(tod.minutes().count()),
                      static_cast<long long>(tod.seconds().count()), ms);
    }
    return buf;
}

Instant now_instant() {
    return std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

double hours_between(Instant a, Instant b) {
    return std::chrono::duration<double, std::ratio<3600>>(b - a).count();
}

} // namespace crimelink
