#include "crimelink/schema.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <set>

#include <openssl/evp.h>

namespace crimelink {

using nlohmann::json;

namespace {

std::string path_of(std::size_t section, std::string_view tail = {}) {
    std::string p = "sections[" + std::to_string(section) + "]";
    if (!tail.empty()) {
        p += '.';
        p += tail;
    }
    return p;
}

const json& require_member(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object())
        throw SchemaError(path + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end())
        throw SchemaError(path + "." + key + ": missing");
    return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& path) {
    const json& v = require_member(obj, key, path);
    if (!v.is_string() || v.get_ref<const std::string&>().empty())
        throw SchemaError(path + "." + key + ": expected a non-empty string");
    return v.get<std::string>();
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    std::string out;
    out.reserve(len * 2);
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        out += buf;
    }
    return out;
}

} // namespace

const Parameter* FormSchema::find(std::string_view id) const {
    auto it = bit_of_id_.find(std::string(id));
    return it == bit_of_id_.end() ? nullptr : &parameter_at(it->second);
}

const Parameter& FormSchema::parameter_at(std::size_t bit_index) const {
    if (bit_index >= by_bit_.size())
        throw std::out_of_range("bit index " + std::to_string(bit_index) + " out of range");
    auto [s, p] = by_bit_[bit_index];
    return sections_[s].parameters[p];
}

const TextField* FormSchema::text_field(std::string_view id) const {
    for (const auto& f : text_fields_)
        if (f.id == id)
            return &f;
    return nullptr;
}

void FormSchema::build_indexes() {
    by_bit_.clear();
    bit_of_id_.clear();
    for (std::size_t s = 0; s < sections_.size(); ++s) {
        for (std::size_t i = 0; i < sections_[s].parameters.size(); ++i) {
            by_bit_.emplace_back(s, i);
            bit_of_id_.emplace(sections_[s].parameters[i].id, sections_[s].parameters[i].bit_index);
        }
    }
}

json FormSchema::to_json() const {
    json sections = json::array();
    for (const auto& s : sections_) {
        json params = json::array();
        for (const auto& p : s.parameters) {
            json jp = {{"id", p.id}, {"label", p.label}, {"bit_index", p.bit_index}};
            if (!p.help.empty())
                jp["help"] = p.help;
            params.push_back(std::move(jp));
        }
        sections.push_back({{"id", s.id},
                            {"name", s.name},
                            {"required", s.required},
                            {"exclusive_groups", s.exclusive_groups},
                            {"parameters", std::move(params)}});
    }
    json fields = json::array();
    for (const auto& f : text_fields_)
        fields.push_back({{"id", f.id}, {"label", f.label}, {"required", f.required}});
    return {{"category", category_},
            {"version", version_},
            {"sections", std::move(sections)},
            {"text_fields", std::move(fields)}};
}

FormSchema load_schema(const json& doc) {
    if (!doc.is_object())
        throw SchemaError("$: schema document must be a JSON object");

    FormSchema schema;
    schema.category_ = require_string(doc, "category", "$");
    if (auto it = doc.find("version"); it != doc.end()) {
        if (!it->is_string())
            throw SchemaError("$.version: expected a string");
        schema.version_ = it->get<std::string>();
    }

    const json& sections = require_member(doc, "sections", "$");
    if (!sections.is_array())
        throw SchemaError("$.sections: expected an array");
    if (sections.empty())
        throw SchemaError("$.sections: empty schema");

    std::unordered_map<std::string, std::string> owner_of_param;
    std::set<std::string> section_ids;
    std::size_t next_bit = 0;

    for (std::size_t si = 0; si < sections.size(); ++si) {
        const json& js = sections[si];
        const std::string spath = path_of(si);
        Section section;
        section.id = require_string(js, "id", spath);
        section.name = require_string(js, "name", spath);
        if (!section_ids.insert(section.id).second)
            throw SchemaError(spath + ".id: duplicate section id '" + section.id + "'");
        if (auto it = js.find("required"); it != js.end()) {
            if (!it->is_boolean())
                throw SchemaError(spath + ".required: expected a boolean");
            section.required = it->get<bool>();
        }

        const json& params = require_member(js, "parameters", spath);
        if (!params.is_array() || params.empty())
            throw SchemaError(spath + ".parameters: expected a non-empty array");
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            const json& jp = params[pi];
            const std::string ppath = path_of(si, "parameters[" + std::to_string(pi) + "]");
            Parameter p;
            p.id = require_string(jp, "id", ppath);
            p.label = require_string(jp, "label", ppath);
            if (auto it = jp.find("help"); it != jp.end() && !it->is_null()) {
                if (!it->is_string())
                    throw SchemaError(ppath + ".help: expected a string");
                p.help = it->get<std::string>();
            }
            p.bit_index = next_bit++;
            if (auto it = jp.find("bit_index"); it != jp.end()) {
                if (!it->is_number_integer() || it->get<std::int64_t>() != static_cast<std::int64_t>(p.bit_index))
                    throw SchemaError(ppath + ".bit_index: non-contiguous bit indices (expected " +
                                      std::to_string(p.bit_index) + ")");
            }
            auto [prev, inserted] = owner_of_param.emplace(p.id, section.id);
            if (!inserted)
                throw SchemaError(ppath + ".id: duplicate parameter id '" + p.id + "' in sections '" +
                                  prev->second + "' and '" + section.id + "'");
            section.parameters.push_back(std::move(p));
        }

        if (auto it = js.find("exclusive_groups"); it != js.end() && !it->is_null()) {
            if (!it->is_array())
                throw SchemaError(spath + ".exclusive_groups: expected an array");
            for (std::size_t gi = 0; gi < it->size(); ++gi) {
                const json& jg = (*it)[gi];
                const std::string gpath = path_of(si, "exclusive_groups[" + std::to_string(gi) + "]");
                if (!jg.is_array() || jg.size() < 2)
                    throw SchemaError(gpath + ": exclusive group needs at least 2 members");
                std::vector<std::string> group;
                std::set<std::string> seen;
                for (const auto& m : jg) {
                    if (!m.is_string())
                        throw SchemaError(gpath + ": members must be parameter ids");
                    auto id = m.get<std::string>();
                    auto owner = owner_of_param.find(id);
                    if (owner == owner_of_param.end() || owner->second != section.id)
                        throw SchemaError(gpath + ": exclusivity group references unknown id '" + id + "'");
                    if (!seen.insert(id).second)
                        throw SchemaError(gpath + ": member '" + id + "' listed twice");
                    group.push_back(std::move(id));
                }
                section.exclusive_groups.push_back(std::move(group));
            }
        }
        schema.sections_.push_back(std::move(section));
    }

    if (auto it = doc.find("text_fields"); it != doc.end() && !it->is_null()) {
        if (!it->is_array())
            throw SchemaError("$.text_fields: expected an array");
        std::set<std::string> seen;
        for (std::size_t fi = 0; fi < it->size(); ++fi) {
            const json& jf = (*it)[fi];
            const std::string fpath = "text_fields[" + std::to_string(fi) + "]";
            TextField f;
            f.id = require_string(jf, "id", fpath);
            f.label = jf.value("label", f.id);
            f.required = jf.value("required", false);
            if (!seen.insert(f.id).second)
                throw SchemaError(fpath + ".id: duplicate text field '" + f.id + "'");
            schema.text_fields_.push_back(std::move(f));
        }
    }

    if (auto it = doc.find("total_parameters"); it != doc.end()) {
        if (!it->is_number_unsigned() || it->get<std::size_t>() != next_bit)
            throw SchemaError("$.total_parameters: declared total does not match " +
                              std::to_string(next_bit) + " parameters");
    }

    schema.build_indexes();
    schema.digest_ = schema_digest(schema);
    return schema;
}

FormSchema load_schema_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw SchemaError(path.string() + ": cannot open schema file");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(path.string() + ": malformed document: " + e.what());
    }
    return load_schema(doc);
}

std::string schema_digest(const FormSchema& schema) {
    return "sha256:" + sha256_hex(schema.to_json().dump());
}

} // namespace crimelink
