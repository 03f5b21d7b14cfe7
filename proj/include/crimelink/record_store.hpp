#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "crimelink/record.hpp"

namespace crimelink {

// A registered record together with its binary encoding.
struct StoredRecord {
    CrimeRecord record;
    BitVector bits;
};

using RecordPtr = std::shared_ptr<const StoredRecord>;
using RecordSet = std::vector<RecordPtr>;

struct GeoBox {
    double min_lat = -90.0;
    double min_lon = -180.0;
    double max_lat = 90.0;
    double max_lon = 180.0;

    bool contains(const GeoPoint& p) const {
        return p.lat >= min_lat && p.lat <= max_lat && p.lon >= min_lon && p.lon <= max_lon;
    }
};

struct SearchQuery {
    std::set<std::string> required;
    std::set<std::string> excluded;
    std::optional<TimeInterval> time_window;
    std::optional<GeoBox> bbox;
    std::size_t limit = 0; // 0 = no limit
    std::size_t offset = 0;
};

nlohmann::json to_json(const SearchQuery& q);
// Throws QueryError on shape errors.
SearchQuery query_from_json(const nlohmann::json& j);

class QueryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ValidationFailed : public std::runtime_error {
public:
    explicit ValidationFailed(ValidationReport report)
        : std::runtime_error("record failed validation"), report_(std::move(report)) {}
    const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

class DuplicateRecord : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RecordNotFound : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class StoreError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Compiled form of a SearchQuery against one schema.
class CompiledQuery {
public:
    CompiledQuery(const SearchQuery& query, const FormSchema& schema);
    bool matches(const StoredRecord& r) const;
    const SearchQuery& query() const { return query_; }

private:
    SearchQuery query_;
    BitVector required_;
    BitVector excluded_;
};

// Append-only registry backed by records.jsonl plus store.meta in one
// directory. A single writer is serialized internally; readers work on
// consistent snapshots.
class RecordStore {
public:
    using Listener = std::function<void(const RecordPtr&)>;

    RecordStore(std::filesystem::path dir, std::shared_ptr<const FormSchema> schema);
    ~RecordStore();
    RecordStore(const RecordStore&) = delete;
    RecordStore& operator=(const RecordStore&) = delete;

    // Validates, persists and publishes the record. Throws ValidationFailed,
    // DuplicateRecord or DigestMismatch; the store is unchanged on failure.
    std::string append(const CrimeRecord& record);

    RecordPtr get(const std::string& record_id) const;
    RecordPtr find(const std::string& record_id) const;

    // Matching records, newest registration first (ties by record id).
    RecordSet search(const SearchQuery& query) const;

    RecordSet snapshot() const;
    std::size_t size() const;

    // Called in append order, after the record is durable.
    void subscribe(Listener listener);

    const FormSchema& schema() const { return *schema_; }
    std::shared_ptr<const FormSchema> schema_ptr() const { return schema_; }
    const std::filesystem::path& directory() const { return dir_; }

private:
    void load();
    void write_meta() const;

    std::filesystem::path dir_;
    std::shared_ptr<const FormSchema> schema_;

    std::mutex write_mutex_;
    mutable std::shared_mutex mutex_;
    RecordSet records_;
    std::unordered_map<std::string, std::size_t> index_;
    std::FILE* log_ = nullptr;

    std::mutex listeners_mutex_;
    std::vector<Listener> listeners_;
};

} // namespace crimelink
