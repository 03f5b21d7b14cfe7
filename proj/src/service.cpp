#include "crimelink/service.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <random>

namespace crimelink {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

EnvLookup process_env() {
    return [](const std::string& name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name.c_str()))
            return std::string(v);
        return std::nullopt;
    };
}

ServiceConfig load_service_config(const std::optional<fs::path>& file, const EnvLookup& env) {
    ServiceConfig c;
    if (file) {
        std::ifstream in(*file);
        if (!in)
            throw std::runtime_error("cannot open config file " + file->string());
        json j = json::parse(in, nullptr, false);
        if (!j.is_object())
            throw std::runtime_error(file->string() + ": config must be a JSON object");
        try {
            if (j.contains("store_path"))
                c.store_path = j["store_path"].get<std::string>();
            if (j.contains("schema_path"))
                c.schema_path = j["schema_path"].get<std::string>();
            if (j.contains("templates_path"))
                c.templates_path = j["templates_path"].get<std::string>();
            c.bind_address = j.value("bind_address", c.bind_address);
            c.port = j.value("port", c.port);
            c.token_ttl = std::chrono::seconds(j.value("token_ttl_s", c.token_ttl.count()));
            if (auto d = j.find("detector"); d != j.end()) {
                c.detector.s_min = d->value("s_min", c.detector.s_min);
                c.detector.d_max_km = d->value("d_max_km", c.detector.d_max_km);
                c.detector.w_days = d->value("w_days", c.detector.w_days);
                c.detector.metric = metric_from_string(d->value("metric", to_string(c.detector.metric)));
            }
            if (j.contains("analyses"))
                c.analyses = j["analyses"].get<std::vector<std::string>>();
            c.max_cluster_records = j.value("max_cluster_records", c.max_cluster_records);
        } catch (const json::exception& e) {
            throw std::runtime_error(file->string() + ": " + e.what());
        }
        c.source = *file;
    }

    auto number = [&](const std::string& name, auto apply) {
        if (auto v = env(name)) {
            try {
                apply(std::stod(*v));
            } catch (const std::exception&) {
                throw std::runtime_error(name + " is not a number: '" + *v + "'");
            }
        }
    };
    if (auto v = env("CRIMELINK_STORE_PATH"))
        c.store_path = *v;
    if (auto v = env("CRIMELINK_SCHEMA_PATH"))
        c.schema_path = *v;
    if (auto v = env("CRIMELINK_TEMPLATES_PATH"))
        c.templates_path = *v;
    if (auto v = env("CRIMELINK_BIND"))
        c.bind_address = *v;
    number("CRIMELINK_PORT", [&](double v) { c.port = static_cast<int>(v); });
    number("CRIMELINK_TOKEN_TTL_S", [&](double v) { c.token_ttl = std::chrono::seconds(static_cast<long long>(v)); });
    number("CRIMELINK_S_MIN", [&](double v) { c.detector.s_min = v; });
    number("CRIMELINK_D_MAX_KM", [&](double v) { c.detector.d_max_km = v; });
    number("CRIMELINK_W_DAYS", [&](double v) { c.detector.w_days = v; });
    return c;
}

// -------------------------------------------------------------- registry

void AnalysisRegistry::add(const std::string& kind, AnalysisFn fn) {
    std::unique_lock lock(mutex_);
    table_[kind] = std::move(fn);
}

void AnalysisRegistry::set_enabled(const std::vector<std::string>& kinds) {
    std::unique_lock lock(mutex_);
    enabled_ = kinds;
}

std::optional<AnalysisFn> AnalysisRegistry::find(const std::string& kind) const {
    std::shared_lock lock(mutex_);
    if (!enabled_.empty() && std::find(enabled_.begin(), enabled_.end(), kind) == enabled_.end())
        return std::nullopt;
    auto it = table_.find(kind);
    if (it == table_.end())
        return std::nullopt;
    return it->second;
}

std::vector<std::string> AnalysisRegistry::kinds() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [kind, fn] : table_)
        if (enabled_.empty() || std::find(enabled_.begin(), enabled_.end(), kind) != enabled_.end())
            out.push_back(kind);
    return out;
}

namespace {

SimilarityMetric metric_param(const json& p) {
    try {
        return metric_from_string(p.value("metric", std::string("jaccard")));
    } catch (const std::exception& e) {
        throw ApiError(400, "bad_parameter", e.what());
    }
}

template <typename T>
T param(const json& p, const char* key, T fallback) {
    try {
        return p.value(key, fallback);
    } catch (const json::exception&) {
        throw ApiError(400, "bad_parameter", std::string("parameter '") + key + "' has the wrong type");
    }
}

} // namespace

void register_builtin_analyses(AnalysisRegistry& registry) {
    registry.add("rank", [](const AnalysisContext& ctx, const json& p) {
        if (!p.contains("reference") || !p["reference"].is_string())
            throw ApiError(400, "missing_reference", "rank needs a 'reference' record id");
        const auto ref_id = p["reference"].get<std::string>();
        auto reference = ctx.store.find(ref_id);
        if (!reference)
            throw ApiError(400, "unknown_reference", "reference record '" + ref_id + "' does not exist");
        auto ranking = rank_by_reference(*reference, ctx.records, metric_param(p));
        const auto limit = param<std::size_t>(p, "limit", 0);
        if (limit > 0 && ranking.size() > limit)
            ranking.resize(limit);
        return json{{"reference", ref_id}, {"ranking", to_json(ranking, ctx.schema)}};
    });
    registry.add("cluster", [](const AnalysisContext& ctx, const json& p) {
        const double threshold = param<double>(p, "threshold", 0.3);
        if (ctx.records.empty())
            throw ApiError(400, "empty_input", "cannot cluster an empty record set");
        if (ctx.records.size() > ctx.config.max_cluster_records)
            throw ApiError(400, "input_too_large",
                           "cluster accepts at most " + std::to_string(ctx.config.max_cluster_records) + " records");
        try {
            return to_json(cluster(ctx.records, threshold, metric_param(p)));
        } catch (const std::invalid_argument& e) {
            throw ApiError(400, "bad_parameter", e.what());
        }
    });
    registry.add("stats", [](const AnalysisContext& ctx, const json&) {
        return to_json(descriptive_stats(ctx.records, ctx.schema.parameter_count()), ctx.schema);
    });
    registry.add("aoristic", [](const AnalysisContext& ctx, const json&) {
        try {
            auto grid = aoristic(ctx.records);
            return json{{"grid", to_json(grid)}, {"total", grid.total()}};
        } catch (const std::invalid_argument& e) {
            throw ApiError(400, "bad_input", e.what());
        }
    });
}

// ---------------------------------------------------------------- tokens

std::string ResultTokens::issue(std::vector<std::string> ids) {
    static thread_local std::mt19937_64 salt{std::random_device{}()};
    std::lock_guard lock(mutex_);
    const auto now = std::chrono::steady_clock::now();
    for (auto it = entries_.begin(); it != entries_.end();)
        it = now - it->second.created > ttl_ ? entries_.erase(it) : std::next(it);
    char buf[48];
    std::snprintf(buf, sizeof buf, "t%06llx%012llx", static_cast<unsigned long long>(++counter_),
                  static_cast<unsigned long long>(salt() & 0xffffffffffffULL));
    entries_[buf] = {std::move(ids), now};
    return buf;
}

std::optional<std::vector<std::string>> ResultTokens::resolve(const std::string& token) {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(token);
    if (it == entries_.end())
        return std::nullopt;
    if (std::chrono::steady_clock::now() - it->second.created > ttl_) {
        entries_.erase(it);
        return std::nullopt;
    }
    return it->second.ids;
}

// ---------------------------------------------------------------- alerts

AlertLog::AlertLog(fs::path file, std::shared_ptr<const FormSchema> schema)
    : file_(std::move(file)), schema_(std::move(schema)) {
    std::ifstream in(file_);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            continue; // torn trailing write
        alerts_.push_back(alert_from_json(j, *schema_));
    }
}

void AlertLog::append(const SeriesAlert& alert) {
    std::lock_guard lock(mutex_);
    std::ofstream out(file_, std::ios::app | std::ios::binary);
    out << to_json(alert, *schema_).dump() << '\n';
    out.flush();
    if (!out)
        throw std::runtime_error("failed to persist alert to " + file_.string());
    alerts_.push_back(alert);
}

std::vector<SeriesAlert> AlertLog::since(std::optional<Instant> since) const {
    std::lock_guard lock(mutex_);
    std::vector<SeriesAlert> out;
    for (const auto& a : alerts_)
        if (!since || a.detected_at >= *since)
            out.push_back(a);
    std::stable_sort(out.begin(), out.end(),
                     [](const SeriesAlert& a, const SeriesAlert& b) { return a.detected_at < b.detected_at; });
    return out;
}

std::size_t AlertLog::size() const {
    std::lock_guard lock(mutex_);
    return alerts_.size();
}

// -------------------------------------------------------------- detector

SeriesDetectorWorker::SeriesDetectorWorker(RecordStore& store, AlertLog& log, DetectorConfig config)
    : store_(store), log_(log), config_(config), next_alert_(log.size()) {
    thread_ = std::thread([this] { run(); });
}

SeriesDetectorWorker::~SeriesDetectorWorker() { stop(); }

void SeriesDetectorWorker::enqueue(RecordPtr record) {
    {
        std::lock_guard lock(mutex_);
        queue_.push_back(std::move(record));
    }
    wake_.notify_one();
}

void SeriesDetectorWorker::wait_idle() {
    std::unique_lock lock(mutex_);
    idle_.wait(lock, [&] { return queue_.empty() && !busy_; });
}

void SeriesDetectorWorker::stop() {
    {
        std::lock_guard lock(mutex_);
        if (stopping_ && !thread_.joinable())
            return;
        stopping_ = true;
    }
    wake_.notify_all();
    if (thread_.joinable())
        thread_.join();
}

void SeriesDetectorWorker::run() {
    for (;;) {
        RecordPtr record;
        {
            std::unique_lock lock(mutex_);
            wake_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) {
                idle_.notify_all();
                return;
            }
            record = std::move(queue_.front());
            queue_.pop_front();
            busy_ = true;
        }
        process(record);
        {
            std::lock_guard lock(mutex_);
            busy_ = false;
        }
        idle_.notify_all();
    }
}

void SeriesDetectorWorker::process(const RecordPtr& record) {
    // Compare only against records registered before this one.
    RecordSet snapshot = store_.snapshot();
    auto pos = std::find(snapshot.begin(), snapshot.end(), record);
    snapshot.erase(pos, snapshot.end());
    auto alert = detect_series(*record, snapshot, config_);
    if (!alert)
        return;
    char id[32];
    std::snprintf(id, sizeof id, "A%08llu", static_cast<unsigned long long>(++next_alert_));
    alert->alert_id = id;
    alert->detected_at = now_instant();
    log_.append(*alert);
}

// --------------------------------------------------------------- service

namespace {

Response error_response(int status, const std::string& code, const std::string& message) {
    return {status, json{{"error", code}, {"message", message}}, {}, "application/json"};
}

Response validation_response(const ValidationReport& report) {
    return {400, json{{"error", "validation_failed"}, {"report", to_json(report)}}, {}, "application/json"};
}

// Registration refusals that are not schema violations still carry a report
// so clients can treat every rejection the same way.
Response rejection_response(int status, const std::string& code, const std::string& message,
                            const std::string& location) {
    ValidationReport report;
    report.violations.push_back({code, message, location});
    return {status, json{{"error", code}, {"message", message}, {"report", to_json(report)}}, {},
            "application/json"};
}

json parse_body(const std::string& body) {
    if (body.empty())
        return json::object();
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded())
        throw ApiError(400, "malformed_json", "request body is not valid JSON");
    return j;
}

} // namespace

Service::Service(ServiceConfig config)
    : config_(std::move(config)),
      schema_(std::make_shared<const FormSchema>(load_schema_file(config_.schema_path))),
      templates_(load_templates_file(config_.templates_path)),
      tokens_(config_.token_ttl) {
    store_ = std::make_unique<RecordStore>(config_.store_path, schema_);
    register_builtin_analyses(registry_);
    registry_.set_enabled(config_.analyses);
    alerts_ = std::make_unique<AlertLog>(config_.store_path / "alerts.jsonl", schema_);
    detector_ = std::make_unique<SeriesDetectorWorker>(*store_, *alerts_, config_.detector);
    store_->subscribe([this](const RecordPtr& r) { detector_->enqueue(r); });
}

Service::~Service() {
    if (detector_)
        detector_->stop();
}

void Service::reload_registry() {
    if (!config_.source)
        return;
    auto fresh = load_service_config(config_.source, [](const std::string&) { return std::nullopt; });
    registry_.set_enabled(fresh.analyses);
}

Response Service::get_schema() const {
    json body = schema_->to_json();
    body["digest"] = schema_->digest();
    body["total_parameters"] = schema_->parameter_count();
    return {200, std::move(body), {}, "application/json"};
}

Response Service::register_record(const std::string& body) {
    json payload = json::parse(body, nullptr, false);
    ValidationReport report;
    if (payload.is_discarded()) {
        report.violations.push_back({"malformed", "request body is not valid JSON", "$"});
        return validation_response(report);
    }
    if (payload.is_object()) {
        if (!payload.contains("record_id") || payload["record_id"].is_null()) {
            char id[48];
            std::snprintf(id, sizeof id, "W%llx-%llu",
                          static_cast<unsigned long long>(now_instant().time_since_epoch().count()),
                          static_cast<unsigned long long>(++generated_ids_));
            payload["record_id"] = id;
        }
        if (!payload.contains("schema_digest") || payload["schema_digest"].is_null())
            payload["schema_digest"] = schema_->digest();
        if (!payload.contains("registered_at") || payload["registered_at"].is_null())
            payload["registered_at"] = format_instant(now_instant());
    }
    auto record = record_from_json(payload, report);
    if (!record)
        return validation_response(report);
    try {
        auto id = store_->append(*record);
        return {201, json{{"record_id", id}}, {}, "application/json"};
    } catch (const ValidationFailed& e) {
        return validation_response(e.report());
    } catch (const DuplicateRecord& e) {
        return rejection_response(409, "duplicate_record", e.what(), "record_id");
    } catch (const DigestMismatch& e) {
        return rejection_response(422, "schema_digest_mismatch", e.what(), "schema_digest");
    }
}

Response Service::get_record(const std::string& id) const {
    auto r = store_->find(id);
    if (!r)
        return error_response(404, "not_found", "no record with id '" + id + "'");
    return {200, to_json(r->record), {}, "application/json"};
}

Response Service::search(const std::string& body) {
    try {
        auto query = query_from_json(parse_body(body));
        SearchQuery unpaged = query;
        unpaged.limit = 0;
        unpaged.offset = 0;
        auto all = store_->search(unpaged);
        std::vector<std::string> ids;
        ids.reserve(all.size());
        for (const auto& r : all)
            ids.push_back(r->record.record_id);
        const auto token = tokens_.issue(ids);

        json records = json::array();
        const std::size_t first = std::min(query.offset, all.size());
        std::size_t last = all.size();
        if (query.limit > 0)
            last = std::min(last, first + query.limit);
        for (std::size_t i = first; i < last; ++i)
            records.push_back(to_json(all[i]->record));
        return {200, json{{"total", all.size()}, {"records", std::move(records)}, {"token", token}}, {},
                "application/json"};
    } catch (const QueryError& e) {
        return error_response(400, "bad_query", e.what());
    } catch (const ApiError& e) {
        return error_response(e.status(), e.code(), e.what());
    }
}

RecordSet Service::resolve_input(const json& input) {
    if (input.is_null() || (input.is_object() && input.empty()))
        return store_->snapshot();
    if (!input.is_object())
        throw ApiError(400, "bad_input", "input must be an object with 'ids', 'token' or 'query'");

    std::vector<std::string> ids;
    if (auto it = input.find("ids"); it != input.end()) {
        if (!it->is_array())
            throw ApiError(400, "bad_input", "'ids' must be an array");
        for (const auto& v : *it) {
            if (!v.is_string())
                throw ApiError(400, "bad_input", "'ids' entries must be strings");
            ids.push_back(v.get<std::string>());
        }
    } else if (auto it = input.find("token"); it != input.end()) {
        auto pinned = it->is_string() ? tokens_.resolve(it->get<std::string>()) : std::nullopt;
        if (!pinned)
            throw ApiError(400, "unresolvable_token", "result token is unknown or expired");
        ids = std::move(*pinned);
    } else if (auto it = input.find("query"); it != input.end()) {
        try {
            auto query = query_from_json(*it);
            query.limit = 0;
            query.offset = 0;
            return store_->search(query);
        } catch (const QueryError& e) {
            throw ApiError(400, "bad_query", e.what());
        }
    } else {
        throw ApiError(400, "bad_input", "input must name 'ids', 'token' or 'query'");
    }

    RecordSet records;
    records.reserve(ids.size());
    for (const auto& id : ids) {
        auto r = store_->find(id);
        if (!r)
            throw ApiError(400, "unknown_record", "input references unknown record '" + id + "'");
        records.push_back(std::move(r));
    }
    return records;
}

Response Service::analyze(const std::string& kind, const std::string& body) {
    try {
        auto fn = registry_.find(kind);
        if (!fn)
            return error_response(404, "unknown_analysis", "analysis kind '" + kind + "' is not registered");
        json request = parse_body(body);
        if (!request.is_object())
            throw ApiError(400, "bad_request", "analysis request must be a JSON object");
        json parameters = request.value("parameters", json::object());
        if (!parameters.is_object())
            throw ApiError(400, "bad_parameter", "'parameters' must be an object");

        const auto started = std::chrono::steady_clock::now();
        RecordSet records = resolve_input(request.value("input", json()));
        AnalysisContext ctx{*schema_, *store_, records, config_};
        json result = (*fn)(ctx, parameters);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        return {200, json{{"kind", kind}, {"n_records", records.size()}, {"duration_ms", ms}, {"result", std::move(result)}},
                {}, "application/json"};
    } catch (const ApiError& e) {
        return error_response(e.status(), e.code(), e.what());
    }
}

Response Service::list_analyses() const {
    return {200, json{{"kinds", registry_.kinds()}}, {}, "application/json"};
}

Response Service::alerts(const std::optional<std::string>& since) const {
    std::optional<Instant> from;
    if (since && !since->empty()) {
        try {
            from = parse_instant(*since);
        } catch (const std::invalid_argument& e) {
            return error_response(400, "bad_since", std::string("since: ") + e.what());
        }
    }
    json list = json::array();
    for (const auto& a : alerts_->since(from))
        list.push_back(to_json(a, *schema_));
    return {200, json{{"alerts", std::move(list)}}, {}, "application/json"};
}

Response Service::report(const std::string& id) const {
    auto r = store_->find(id);
    if (!r)
        return error_response(404, "not_found", "no record with id '" + id + "'");
    try {
        return {200, nullptr, generate_report(r->record, *schema_, templates_), "text/plain; charset=utf-8"};
    } catch (const TemplateError& e) {
        return error_response(500, "template_error", e.what());
    }
}

} // namespace crimelink
