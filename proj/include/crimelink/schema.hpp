#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

namespace crimelink {

// Raised by load_schema. The message starts with the JSON path of the
// offending element, e.g. "sections[3].parameters[0].id: ...".
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Parameter {
    std::string id;
    std::string label;
    std::size_t bit_index = 0;
    std::string help;
};

struct Section {
    std::string id;
    std::string name;
    bool required = false;
    std::vector<Parameter> parameters;
    std::vector<std::vector<std::string>> exclusive_groups;
};

struct TextField {
    std::string id;
    std::string label;
    bool required = false;
};

// Checkbox taxonomy for one crime category. Immutable once loaded.
class FormSchema {
public:
    const std::string& category() const { return category_; }
    const std::string& version() const { return version_; }
    const std::vector<Section>& sections() const { return sections_; }
    const std::vector<TextField>& text_fields() const { return text_fields_; }
    const std::string& digest() const { return digest_; }

    std::size_t parameter_count() const { return by_bit_.size(); }

    const Parameter* find(std::string_view id) const;
    const Parameter& parameter_at(std::size_t bit_index) const;
    // Index into sections() of the section owning the parameter.
    std::size_t section_index_of(std::size_t bit_index) const { return by_bit_.at(bit_index).first; }

    const TextField* text_field(std::string_view id) const;

    nlohmann::json to_json() const;

    friend FormSchema load_schema(const nlohmann::json& doc);

private:
    void build_indexes();

    std::string category_;
    std::string version_;
    std::vector<Section> sections_;
    std::vector<TextField> text_fields_;
    std::string digest_;

    // bit index -> (section, position within section)
    std::vector<std::pair<std::size_t, std::size_t>> by_bit_;
    std::unordered_map<std::string, std::size_t> bit_of_id_;
};

FormSchema load_schema(const nlohmann::json& doc);
FormSchema load_schema_file(const std::filesystem::path& path);

// "sha256:<hex>" over the canonical serialization. Section and parameter
// order are part of the content since they define the bit layout.
std::string schema_digest(const FormSchema& schema);

} // namespace crimelink
