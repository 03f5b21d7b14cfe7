#include "crimelink/record.hpp"

#include <algorithm>
#include <cmath>

namespace crimelink {

using nlohmann::json;

bool ValidationReport::has_rule(std::string_view rule) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const Violation& v) { return v.rule == rule; });
}

namespace {

// Whitespace alone does not count as filling in a field.
bool filled(const std::string& text) { return text.find_first_not_of(" \t\r\n") != std::string::npos; }

bool field_present(const CrimeRecord& r, const std::string& field) {
    if (field == "case_number")
        return filled(r.case_number);
    if (field == "address")
        return filled(r.address);
    if (field == "note")
        return filled(r.note);
    if (field == "time_interval")
        return r.time_interval.has_value();
    if (field == "geo")
        return r.geo.has_value();
    return true;
}

void require_digest(const CrimeRecord& record, const FormSchema& schema) {
    if (record.schema_digest != schema.digest())
        throw DigestMismatch("record '" + record.record_id + "' was captured with schema " +
                             record.schema_digest + ", expected " + schema.digest());
}

} // namespace

ValidationReport validate_record(const CrimeRecord& record, const FormSchema& schema) {
    require_digest(record, schema);
    ValidationReport report;
    auto add = [&](std::string rule, std::string message, std::string location) {
        report.violations.push_back({std::move(rule), std::move(message), std::move(location)});
    };

    if (record.record_id.empty())
        add("record_id", "record id is empty", "record_id");

    std::vector<bool> section_hit(schema.sections().size(), false);
    for (const auto& id : record.checked) {
        const Parameter* p = schema.find(id);
        if (!p) {
            add("unknown_parameter", "parameter '" + id + "' is not part of the schema", id);
            continue;
        }
        section_hit[schema.section_index_of(p->bit_index)] = true;
    }

    for (std::size_t s = 0; s < schema.sections().size(); ++s) {
        const Section& section = schema.sections()[s];
        for (const auto& group : section.exclusive_groups) {
            std::vector<std::string> hits;
            for (const auto& member : group)
                if (record.checked.count(member))
                    hits.push_back(member);
            if (hits.size() > 1) {
                std::string joined;
                for (const auto& h : hits)
                    joined += (joined.empty() ? "" : ", ") + h;
                add("exclusive_group", "mutually exclusive parameters checked together: " + joined,
                    section.id);
            }
        }
        if (section.required && !section_hit[s])
            add("required_section", "section '" + section.name + "' requires at least one check",
                section.id);
    }

    for (const auto& field : schema.text_fields())
        if (field.required && !field_present(record, field.id))
            add("required_field", "field '" + field.label + "' must be filled in", field.id);

    if (record.time_interval && record.time_interval->earliest > record.time_interval->latest)
        add("time_interval", "earliest possible time is after latest possible time", "time_interval");

    if (record.geo) {
        const auto& g = *record.geo;
        if (!std::isfinite(g.lat) || g.lat < -90.0 || g.lat > 90.0)
            add("geo_range", "latitude outside [-90, 90]", "geo.lat");
        if (!std::isfinite(g.lon) || g.lon < -180.0 || g.lon > 180.0)
            add("geo_range", "longitude outside [-180, 180]", "geo.lon");
    }
    return report;
}

BitVector encode_binary(const CrimeRecord& record, const FormSchema& schema) {
    require_digest(record, schema);
    BitVector bits(schema.parameter_count());
    for (const auto& id : record.checked) {
        const Parameter* p = schema.find(id);
        if (!p)
            throw std::invalid_argument("cannot encode unknown parameter '" + id + "'");
        bits.set(p->bit_index);
    }
    return bits;
}

std::set<std::string> decode_binary(const BitVector& bits, const FormSchema& schema) {
    if (bits.size() != schema.parameter_count())
        throw std::invalid_argument("vector length " + std::to_string(bits.size()) +
                                    " does not match schema total " +
                                    std::to_string(schema.parameter_count()));
    std::set<std::string> ids;
    for (auto i : bits.ones())
        ids.insert(schema.parameter_at(i).id);
    return ids;
}

json to_json(const CrimeRecord& r) {
    json j;
    j["record_id"] = r.record_id;
    j["case_number"] = r.case_number;
    j["schema_digest"] = r.schema_digest;
    j["checked"] = r.checked;
    j["address"] = r.address;
    j["geo"] = r.geo ? json{{"lat", r.geo->lat}, {"lon", r.geo->lon}} : json(nullptr);
    j["time_interval"] = r.time_interval ? json{{"earliest", format_instant(r.time_interval->earliest)},
                                                {"latest", format_instant(r.time_interval->latest)}}
                                         : json(nullptr);
    j["note"] = r.note;
    j["registered_at"] = format_instant(r.registered_at);
    return j;
}

json to_json(const ValidationReport& report) {
    json violations = json::array();
    for (const auto& v : report.violations)
        violations.push_back({{"rule", v.rule}, {"message", v.message}, {"location", v.location}});
    return {{"ok", report.ok()}, {"violations", std::move(violations)}};
}

std::optional<CrimeRecord> record_from_json(const json& j, ValidationReport& report) {
    const std::size_t before = report.violations.size();
    auto bad = [&](const std::string& field, const std::string& message) {
        report.violations.push_back({"malformed", message, field});
    };
    if (!j.is_object()) {
        bad("$", "record must be a JSON object");
        return std::nullopt;
    }

    CrimeRecord r;
    auto text = [&](const char* key, std::string& out) {
        auto it = j.find(key);
        if (it == j.end() || it->is_null())
            return;
        if (!it->is_string())
            bad(key, std::string(key) + " must be a string");
        else
            out = it->get<std::string>();
    };
    text("record_id", r.record_id);
    text("case_number", r.case_number);
    text("schema_digest", r.schema_digest);
    text("address", r.address);
    text("note", r.note);

    if (auto it = j.find("checked"); it != j.end() && !it->is_null()) {
        if (!it->is_array()) {
            bad("checked", "checked must be an array of parameter ids");
        } else {
            for (const auto& id : *it) {
                if (!id.is_string()) {
                    bad("checked", "checked entries must be strings");
                    continue;
                }
                if (!r.checked.insert(id.get<std::string>()).second)
                    bad("checked", "parameter '" + id.get<std::string>() + "' listed twice");
            }
        }
    }

    if (auto it = j.find("geo"); it != j.end() && !it->is_null()) {
        if (!it->is_object() || !it->contains("lat") || !it->contains("lon") ||
            !(*it)["lat"].is_number() || !(*it)["lon"].is_number())
            bad("geo", "geo must be {\"lat\": number, \"lon\": number}");
        else
            r.geo = GeoPoint{(*it)["lat"].get<double>(), (*it)["lon"].get<double>()};
    }

    auto instant = [&](const json& v, const std::string& field) -> std::optional<Instant> {
        if (!v.is_string()) {
            bad(field, field + " must be an RFC 3339 string");
            return std::nullopt;
        }
        try {
            return parse_instant(v.get<std::string>());
        } catch (const std::invalid_argument& e) {
            bad(field, field + ": " + e.what());
            return std::nullopt;
        }
    };

    if (auto it = j.find("time_interval"); it != j.end() && !it->is_null()) {
        if (!it->is_object() || !it->contains("earliest") || !it->contains("latest")) {
            bad("time_interval", "time_interval must be {\"earliest\", \"latest\"}");
        } else {
            auto e = instant((*it)["earliest"], "time_interval.earliest");
            auto l = instant((*it)["latest"], "time_interval.latest");
            if (e && l)
                r.time_interval = TimeInterval{*e, *l};
        }
    }
    if (auto it = j.find("registered_at"); it != j.end() && !it->is_null()) {
        if (auto t = instant(*it, "registered_at"))
            r.registered_at = *t;
    }

    if (report.violations.size() != before)
        return std::nullopt;
    return r;
}

CrimeRecord record_from_json(const json& j) {
    ValidationReport report;
    auto r = record_from_json(j, report);
    if (!r) {
        const auto& v = report.violations.front();
        throw RecordFormatError(v.location + ": " + v.message);
    }
    return *r;
}

} // namespace crimelink
