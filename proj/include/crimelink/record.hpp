#pragma once

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "crimelink/bitvector.hpp"
#include "crimelink/schema.hpp"
#include "crimelink/time.hpp"

namespace crimelink {

struct GeoPoint {
    double lat = 0.0;
    double lon = 0.0;
    friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

// Window in which the crime may have happened. Point-in-time crimes use
// earliest == latest.
struct TimeInterval {
    Instant earliest;
    Instant latest;
    friend bool operator==(const TimeInterval&, const TimeInterval&) = default;
};

struct CrimeRecord {
    std::string record_id;
    std::string case_number;
    std::string schema_digest;
    std::set<std::string> checked;
    std::string address;
    std::optional<GeoPoint> geo;
    std::optional<TimeInterval> time_interval;
    std::string note;
    Instant registered_at{};

    friend bool operator==(const CrimeRecord&, const CrimeRecord&) = default;
};

struct Violation {
    std::string rule;
    std::string message;
    std::string location;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
    bool has_rule(std::string_view rule) const;
};

// The record was captured against a different schema version.
class DigestMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RecordFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Checks a record against every schema rule and reports all violations.
// Throws DigestMismatch when record.schema_digest differs from the schema.
ValidationReport validate_record(const CrimeRecord& record, const FormSchema& schema);

BitVector encode_binary(const CrimeRecord& record, const FormSchema& schema);
std::set<std::string> decode_binary(const BitVector& bits, const FormSchema& schema);

nlohmann::json to_json(const CrimeRecord& record);
nlohmann::json to_json(const ValidationReport& report);

// Lenient parse used at the service boundary: shape problems are appended to
// `report` as "malformed" violations instead of being thrown.
std::optional<CrimeRecord> record_from_json(const nlohmann::json& j, ValidationReport& report);
// Strict parse; throws RecordFormatError.
CrimeRecord record_from_json(const nlohmann::json& j);

} // namespace crimelink
