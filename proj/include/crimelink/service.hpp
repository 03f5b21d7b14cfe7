#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "crimelink/linkage.hpp"
#include "crimelink/report.hpp"

namespace crimelink {

struct ServiceConfig {
    std::filesystem::path store_path = "crimelink-store";
    std::filesystem::path schema_path = std::filesystem::path(CRIMELINK_DATA_DIR) / "burglary_schema.json";
    std::filesystem::path templates_path = std::filesystem::path(CRIMELINK_DATA_DIR) / "burglary_templates.json";
    std::string bind_address = "127.0.0.1";
    int port = 8080;
    std::chrono::seconds token_ttl{3600};
    DetectorConfig detector;
    std::vector<std::string> analyses; // enabled kinds; empty enables every registered kind
    std::size_t max_cluster_records = 5000;
    std::optional<std::filesystem::path> source; // config file this was read from
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

// Reads the JSON config file (when given) and applies CRIMELINK_* environment
// overrides: STORE_PATH, SCHEMA_PATH, TEMPLATES_PATH, BIND, PORT,
// TOKEN_TTL_S, S_MIN, D_MAX_KM, W_DAYS.
ServiceConfig load_service_config(const std::optional<std::filesystem::path>& file, const EnvLookup& env);
EnvLookup process_env();

// Error carrying the HTTP status it maps to.
class ApiError : public std::runtime_error {
public:
    ApiError(int status, std::string code, const std::string& message)
        : std::runtime_error(message), status_(status), code_(std::move(code)) {}
    int status() const { return status_; }
    const std::string& code() const { return code_; }

private:
    int status_;
    std::string code_;
};

struct AnalysisContext {
    const FormSchema& schema;
    const RecordStore& store;
    const RecordSet& records;
    const ServiceConfig& config;
};

using AnalysisFn = std::function<nlohmann::json(const AnalysisContext&, const nlohmann::json& parameters)>;

// Kind name -> analysis. Dispatch only goes through this table; enabling or
// disabling kinds at runtime does not touch dispatch code.
class AnalysisRegistry {
public:
    void add(const std::string& kind, AnalysisFn fn);
    // Restricts dispatch to `kinds` (all registered kinds when empty).
    void set_enabled(const std::vector<std::string>& kinds);
    std::optional<AnalysisFn> find(const std::string& kind) const;
    std::vector<std::string> kinds() const;

private:
    mutable std::shared_mutex mutex_;
    std::map<std::string, AnalysisFn> table_;
    std::vector<std::string> enabled_;
};

// rank, cluster, stats and aoristic.
void register_builtin_analyses(AnalysisRegistry& registry);

// Search results pinned by id so later analyses see the same records.
class ResultTokens {
public:
    explicit ResultTokens(std::chrono::seconds ttl) : ttl_(ttl) {}
    std::string issue(std::vector<std::string> ids);
    std::optional<std::vector<std::string>> resolve(const std::string& token);

private:
    struct Entry {
        std::vector<std::string> ids;
        std::chrono::steady_clock::time_point created;
    };
    std::mutex mutex_;
    std::chrono::seconds ttl_;
    std::map<std::string, Entry> entries_;
    std::uint64_t counter_ = 0;
};

// Alerts persisted as alerts.jsonl next to the record store.
class AlertLog {
public:
    AlertLog(std::filesystem::path file, std::shared_ptr<const FormSchema> schema);
    void append(const SeriesAlert& alert);
    // Alerts detected at or after `since`, oldest first.
    std::vector<SeriesAlert> since(std::optional<Instant> since) const;
    std::size_t size() const;

private:
    std::filesystem::path file_;
    std::shared_ptr<const FormSchema> schema_;
    mutable std::mutex mutex_;
    std::vector<SeriesAlert> alerts_;
};

// Single background consumer of the store's append events.
class SeriesDetectorWorker {
public:
    SeriesDetectorWorker(RecordStore& store, AlertLog& log, DetectorConfig config);
    ~SeriesDetectorWorker();
    SeriesDetectorWorker(const SeriesDetectorWorker&) = delete;
    SeriesDetectorWorker& operator=(const SeriesDetectorWorker&) = delete;

    void enqueue(RecordPtr record);
    // Blocks until every enqueued record has been examined.
    void wait_idle();
    void stop();

private:
    void run();
    void process(const RecordPtr& record);

    RecordStore& store_;
    AlertLog& log_;
    DetectorConfig config_;
    std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable idle_;
    std::deque<RecordPtr> queue_;
    bool busy_ = false;
    bool stopping_ = false;
    std::uint64_t next_alert_ = 0;
    std::thread thread_;
};

struct Response {
    int status = 200;
    nlohmann::json body;
    std::string text; // used instead of body when content_type is text/plain
    std::string content_type = "application/json";
};

// Request handling independent of the HTTP transport.
class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();

    Response get_schema() const;
    Response register_record(const std::string& body);
    Response get_record(const std::string& id) const;
    Response search(const std::string& body);
    Response analyze(const std::string& kind, const std::string& body);
    Response list_analyses() const;
    Response alerts(const std::optional<std::string>& since) const;
    Response report(const std::string& id) const;

    // Re-reads the enabled analysis kinds from the config file.
    void reload_registry();

    AnalysisRegistry& registry() { return registry_; }
    RecordStore& store() { return *store_; }
    const ServiceConfig& config() const { return config_; }
    void wait_idle() { detector_->wait_idle(); }

private:
    RecordSet resolve_input(const nlohmann::json& input);

    ServiceConfig config_;
    std::shared_ptr<const FormSchema> schema_;
    PhraseTemplates templates_;
    std::unique_ptr<RecordStore> store_;
    AnalysisRegistry registry_;
    ResultTokens tokens_;
    std::unique_ptr<AlertLog> alerts_;
    std::unique_ptr<SeriesDetectorWorker> detector_;
    std::atomic<std::uint64_t> generated_ids_{0};
};

// Thin cpp-httplib front end exposing Service under /api/v1 (and /api).
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();
    // Binds and starts serving on a background thread; port 0 picks a free
    // port. Returns the bound port.
    int start(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace crimelink
