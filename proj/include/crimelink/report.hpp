#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "crimelink/record.hpp"

namespace crimelink {

class TemplateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Sentence fragments per parameter and the heading each section is filed
// under. Headings print in the order listed.
struct PhraseTemplates {
    std::vector<std::string> headings;
    std::map<std::string, std::string> section_heading;
    std::map<std::string, std::string> fragments;
    std::string note_heading; // heading that receives the free-text note
};

PhraseTemplates load_templates(const nlohmann::json& doc);
PhraseTemplates load_templates_file(const std::filesystem::path& path);

// Human-readable coverage problems; empty when every parameter has exactly
// one fragment and every section maps to a known heading.
std::vector<std::string> check_templates(const PhraseTemplates& templates, const FormSchema& schema);

inline constexpr const char* kEmptyHeadingMarker = "—";

// Plain-text report: case header, then every heading in order followed by
// one line per checked parameter (or the empty marker). The note is copied
// verbatim under note_heading. Throws TemplateError when a checked
// parameter has no fragment.
std::string generate_report(const CrimeRecord& record, const FormSchema& schema, const PhraseTemplates& templates);

} // namespace crimelink
