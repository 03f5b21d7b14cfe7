#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace crimelink {

using Instant = std::chrono::sys_time<std::chrono::milliseconds>;

// Parses an RFC 3339 timestamp ("2016-03-01T14:05:00Z", optional fraction,
// optional numeric offset) and normalizes it to UTC. Throws
// std::invalid_argument on malformed input.
Instant parse_instant(std::string_view text);

// Canonical UTC form. Milliseconds are printed only when non-zero so that
// whole-second timestamps round-trip unchanged.
std::string format_instant(Instant t);

Instant now_instant();

// Hours between two instants as a real number (b - a).
double hours_between(Instant a, Instant b);

} // namespace crimelink
