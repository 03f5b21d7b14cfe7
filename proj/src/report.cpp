#include "crimelink/report.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace crimelink {

using nlohmann::json;

PhraseTemplates load_templates(const json& doc) {
    PhraseTemplates t;
    try {
        t.headings = doc.at("headings").get<std::vector<std::string>>();
        t.section_heading = doc.at("sections").get<std::map<std::string, std::string>>();
        t.fragments = doc.at("fragments").get<std::map<std::string, std::string>>();
        t.note_heading = doc.value("note_heading", std::string{});
    } catch (const json::exception& e) {
        throw TemplateError(std::string("malformed templates document: ") + e.what());
    }
    if (t.headings.empty())
        throw TemplateError("templates declare no headings");
    if (std::set<std::string>(t.headings.begin(), t.headings.end()).size() != t.headings.size())
        throw TemplateError("duplicate heading in templates");
    if (t.note_heading.empty())
        t.note_heading = t.headings.back();
    if (std::find(t.headings.begin(), t.headings.end(), t.note_heading) == t.headings.end())
        throw TemplateError("note_heading '" + t.note_heading + "' is not a declared heading");
    for (const auto& [section, heading] : t.section_heading)
        if (std::find(t.headings.begin(), t.headings.end(), heading) == t.headings.end())
            throw TemplateError("section '" + section + "' maps to undeclared heading '" + heading + "'");
    return t;
}

PhraseTemplates load_templates_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw TemplateError(path.string() + ": cannot open templates file");
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded())
        throw TemplateError(path.string() + ": malformed JSON");
    return load_templates(doc);
}

std::vector<std::string> check_templates(const PhraseTemplates& t, const FormSchema& schema) {
    std::vector<std::string> problems;
    std::set<std::string> known;
    for (const auto& section : schema.sections()) {
        if (!t.section_heading.count(section.id))
            problems.push_back("section '" + section.id + "' has no heading");
        for (const auto& p : section.parameters) {
            known.insert(p.id);
            if (!t.fragments.count(p.id))
                problems.push_back("parameter '" + p.id + "' has no fragment");
        }
    }
    for (const auto& [id, fragment] : t.fragments)
        if (!known.count(id))
            problems.push_back("fragment for unknown parameter '" + id + "'");
    return problems;
}

std::string generate_report(const CrimeRecord& record, const FormSchema& schema, const PhraseTemplates& t) {
    if (record.schema_digest != schema.digest())
        throw DigestMismatch("record '" + record.record_id + "' does not match the schema");

    std::map<std::string, std::vector<std::string>> lines;
    for (auto bit : encode_binary(record, schema).ones()) {
        const Parameter& p = schema.parameter_at(bit);
        const Section& section = schema.sections()[schema.section_index_of(bit)];
        auto fragment = t.fragments.find(p.id);
        if (fragment == t.fragments.end())
            throw TemplateError("no fragment for checked parameter '" + p.id + "'");
        auto heading = t.section_heading.find(section.id);
        if (heading == t.section_heading.end())
            throw TemplateError("no heading for section '" + section.id + "'");
        lines[heading->second].push_back(fragment->second);
    }
    if (!record.note.empty())
        lines[t.note_heading].push_back(record.note);

    auto label = [&](const char* id, const char* fallback) {
        const TextField* f = schema.text_field(id);
        return f ? f->label : std::string(fallback);
    };

    std::string out;
    out += label("case_number", "case_number") + ": " + record.case_number + "\n";
    out += label("address", "address") + ": " + record.address + "\n";
    out += label("time_interval", "time_interval") + ": ";
    if (record.time_interval) {
        out += format_instant(record.time_interval->earliest);
        if (record.time_interval->latest != record.time_interval->earliest)
            out += " – " + format_instant(record.time_interval->latest);
    }
    out += "\n";

    for (const auto& heading : t.headings) {
        out += "\n" + heading + "\n";
        auto it = lines.find(heading);
        if (it == lines.end() || it->second.empty()) {
            out += std::string(kEmptyHeadingMarker) + "\n";
            continue;
        }
        for (const auto& line : it->second)
            out += line + "\n";
    }
    return out;
}

} // namespace crimelink
