#include "crimelink/record_store.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace crimelink {

using nlohmann::json;
namespace fs = std::filesystem;

json to_json(const SearchQuery& q) {
    json j;
    j["required"] = q.required;
    j["excluded"] = q.excluded;
    j["time_window"] = q.time_window ? json{{"from", format_instant(q.time_window->earliest)},
                                            {"to", format_instant(q.time_window->latest)}}
                                     : json(nullptr);
    j["bbox"] = q.bbox ? json{{"min_lat", q.bbox->min_lat},
                              {"min_lon", q.bbox->min_lon},
                              {"max_lat", q.bbox->max_lat},
                              {"max_lon", q.bbox->max_lon}}
                       : json(nullptr);
    j["limit"] = q.limit;
    j["offset"] = q.offset;
    return j;
}

SearchQuery query_from_json(const json& j) {
    if (j.is_null())
        return {};
    if (!j.is_object())
        throw QueryError("query must be a JSON object");
    SearchQuery q;
    auto ids = [&](const char* key, std::set<std::string>& out) {
        auto it = j.find(key);
        if (it == j.end() || it->is_null())
            return;
        if (!it->is_array())
            throw QueryError(std::string(key) + " must be an array of parameter ids");
        for (const auto& v : *it) {
            if (!v.is_string())
                throw QueryError(std::string(key) + " entries must be strings");
            out.insert(v.get<std::string>());
        }
    };
    ids("required", q.required);
    ids("excluded", q.excluded);
    try {
        if (auto it = j.find("time_window"); it != j.end() && !it->is_null())
            q.time_window = TimeInterval{parse_instant(it->at("from").get<std::string>()),
                                         parse_instant(it->at("to").get<std::string>())};
        if (auto it = j.find("bbox"); it != j.end() && !it->is_null())
            q.bbox = GeoBox{it->at("min_lat").get<double>(), it->at("min_lon").get<double>(),
                            it->at("max_lat").get<double>(), it->at("max_lon").get<double>()};
        q.limit = j.value("limit", std::size_t{0});
        q.offset = j.value("offset", std::size_t{0});
    } catch (const json::exception& e) {
        throw QueryError(std::string("malformed query: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw QueryError(std::string("malformed time window: ") + e.what());
    }
    return q;
}

CompiledQuery::CompiledQuery(const SearchQuery& query, const FormSchema& schema)
    : query_(query), required_(schema.parameter_count()), excluded_(schema.parameter_count()) {
    for (const auto& id : query.required) {
        if (query.excluded.count(id))
            throw QueryError("contradictory query: '" + id + "' is both required and excluded");
        const Parameter* p = schema.find(id);
        if (!p)
            throw QueryError("unknown parameter '" + id + "' in query");
        required_.set(p->bit_index);
    }
    for (const auto& id : query.excluded) {
        const Parameter* p = schema.find(id);
        if (!p)
            throw QueryError("unknown parameter '" + id + "' in query");
        excluded_.set(p->bit_index);
    }
    if (query.time_window && query.time_window->earliest > query.time_window->latest)
        throw QueryError("time window 'from' is after 'to'");
}

bool CompiledQuery::matches(const StoredRecord& r) const {
    if (!r.bits.contains_all(required_) || r.bits.intersects(excluded_))
        return false;
    if (query_.time_window) {
        if (!r.record.time_interval)
            return false;
        const auto& w = *query_.time_window;
        const auto& t = *r.record.time_interval;
        if (t.latest < w.earliest || t.earliest > w.latest)
            return false;
    }
    if (query_.bbox && r.record.geo && !query_.bbox->contains(*r.record.geo))
        return false;
    return true;
}

RecordStore::RecordStore(fs::path dir, std::shared_ptr<const FormSchema> schema)
    : dir_(std::move(dir)), schema_(std::move(schema)) {
    if (!schema_)
        throw StoreError("store needs a schema");
    fs::create_directories(dir_);
    load();
    log_ = std::fopen((dir_ / "records.jsonl").c_str(), "ab");
    if (!log_)
        throw StoreError("cannot open " + (dir_ / "records.jsonl").string() + " for append");
    write_meta();
}

RecordStore::~RecordStore() {
    if (log_)
        std::fclose(log_);
}

void RecordStore::load() {
    const fs::path meta_path = dir_ / "store.meta";
    if (fs::exists(meta_path)) {
        std::ifstream in(meta_path);
        json meta = json::parse(in, nullptr, false);
        // Unreadable meta is rebuilt from the data file below.
        if (meta.is_object() && meta.contains("schema_digest") && meta["schema_digest"].is_string() &&
            meta["schema_digest"].get<std::string>() != schema_->digest())
            throw StoreError("store at " + dir_.string() + " was created with schema " +
                             meta["schema_digest"].get<std::string>() + ", configured schema is " +
                             schema_->digest());
    }

    const fs::path data_path = dir_ / "records.jsonl";
    if (!fs::exists(data_path))
        return;
    std::ifstream in(data_path, std::ios::binary);
    std::string line;
    std::size_t line_no = 0;
    std::uintmax_t good_bytes = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (in.eof()) {
            // Trailing line without newline: an interrupted append. Drop it.
            break;
        }
        good_bytes += line.size() + 1;
        if (line.empty())
            continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw StoreError("records.jsonl:" + std::to_string(line_no) + ": corrupt line");
        CrimeRecord r;
        try {
            r = record_from_json(j);
        } catch (const RecordFormatError& e) {
            throw StoreError("records.jsonl:" + std::to_string(line_no) + ": " + e.what());
        }
        if (r.schema_digest != schema_->digest())
            throw StoreError("records.jsonl:" + std::to_string(line_no) + ": schema digest mismatch");
        auto bits = encode_binary(r, *schema_);
        index_.emplace(r.record_id, records_.size());
        records_.push_back(std::make_shared<const StoredRecord>(StoredRecord{std::move(r), std::move(bits)}));
    }
    in.close();
    if (fs::file_size(data_path) != good_bytes)
        fs::resize_file(data_path, good_bytes);
}

void RecordStore::write_meta() const {
    json meta = {{"schema_digest", schema_->digest()}, {"record_count", records_.size()}};
    const fs::path tmp = dir_ / "store.meta.tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << meta.dump() << '\n';
    }
    fs::rename(tmp, dir_ / "store.meta");
}

std::string RecordStore::append(const CrimeRecord& record) {
    std::lock_guard writer(write_mutex_);
    ValidationReport report = validate_record(record, *schema_);
    if (!report.ok())
        throw ValidationFailed(std::move(report));
    {
        std::shared_lock lock(mutex_);
        if (index_.count(record.record_id))
            throw DuplicateRecord("record '" + record.record_id + "' already registered");
    }

    auto stored = std::make_shared<const StoredRecord>(StoredRecord{record, encode_binary(record, *schema_)});
    std::string line = to_json(record).dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fflush(log_) != 0)
        throw StoreError("failed to write records.jsonl");
    ::fsync(::fileno(log_));

    {
        std::unique_lock lock(mutex_);
        index_.emplace(record.record_id, records_.size());
        records_.push_back(stored);
    }
    write_meta();

    std::vector<Listener> listeners;
    {
        std::lock_guard lock(listeners_mutex_);
        listeners = listeners_;
    }
    for (const auto& l : listeners)
        l(stored);
    return record.record_id;
}

RecordPtr RecordStore::find(const std::string& record_id) const {
    std::shared_lock lock(mutex_);
    auto it = index_.find(record_id);
    return it == index_.end() ? nullptr : records_[it->second];
}

RecordPtr RecordStore::get(const std::string& record_id) const {
    auto r = find(record_id);
    if (!r)
        throw RecordNotFound("no record with id '" + record_id + "'");
    return r;
}

RecordSet RecordStore::search(const SearchQuery& query) const {
    CompiledQuery compiled(query, *schema_);
    RecordSet hits;
    {
        std::shared_lock lock(mutex_);
        for (const auto& r : records_)
            if (compiled.matches(*r))
                hits.push_back(r);
    }
    std::sort(hits.begin(), hits.end(), [](const RecordPtr& a, const RecordPtr& b) {
        if (a->record.registered_at != b->record.registered_at)
            return a->record.registered_at > b->record.registered_at;
        return a->record.record_id < b->record.record_id;
    });
    if (query.offset >= hits.size())
        return {};
    auto first = hits.begin() + static_cast<std::ptrdiff_t>(query.offset);
    auto last = hits.end();
    if (query.limit > 0 && query.limit < static_cast<std::size_t>(last - first))
        last = first + static_cast<std::ptrdiff_t>(query.limit);
    return RecordSet(first, last);
}

RecordSet RecordStore::snapshot() const {
    std::shared_lock lock(mutex_);
    return records_;
}

std::size_t RecordStore::size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
}

void RecordStore::subscribe(Listener listener) {
    std::lock_guard lock(listeners_mutex_);
    listeners_.push_back(std::move(listener));
}

} // namespace crimelink
