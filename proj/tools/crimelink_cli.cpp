#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "crimelink/service.hpp"
#include "crimelink/study_stats.hpp"
#include "crimelink/synth.hpp"

using namespace crimelink;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
    if (path == "-") {
        std::ostringstream out;
        out << std::cin.rdbuf();
        return out.str();
    }
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), {}};
}

// A file holding one JSON object, a JSON array of objects, or JSON lines.
std::vector<std::string> record_bodies(const std::string& path) {
    const std::string text = read_file(path);
    json whole = json::parse(text, nullptr, false);
    std::vector<std::string> out;
    if (!whole.is_discarded()) {
        if (whole.is_array())
            for (const auto& item : whole)
                out.push_back(item.dump());
        else
            out.push_back(whole.dump());
        return out;
    }
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line))
        if (line.find_first_not_of(" \t\r") != std::string::npos)
            out.push_back(line);
    return out;
}

// Inline JSON or @file.
json json_arg(const std::string& value) {
    const std::string text = !value.empty() && value[0] == '@' ? read_file(value.substr(1)) : value;
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded())
        throw std::runtime_error("not valid JSON: " + value);
    return j;
}

int emit(const Response& r) {
    if (r.content_type == "application/json")
        std::cout << r.body.dump(2) << "\n";
    else
        std::cout << r.text;
    return r.status < 400 ? 0 : 1;
}

struct Common {
    std::string config_file;
    std::string store;

    ServiceConfig load() const {
        std::optional<std::filesystem::path> file;
        if (!config_file.empty())
            file = config_file;
        auto c = load_service_config(file, process_env());
        if (!store.empty())
            c.store_path = store;
        return c;
    }
};

void add_common(CLI::App* cmd, Common& common) {
    cmd->add_option("--config", common.config_file, "Service config file (JSON)");
    cmd->add_option("--store", common.store, "Record store directory");
}

std::atomic<int> pending_signal{0};

extern "C" void on_signal(int sig) { pending_signal = sig; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Crime-series linkage platform"};
    app.require_subcommand(1);
    Common common;

    // validate
    auto* validate = app.add_subcommand("validate", "Check records against the form schema");
    std::string validate_input;
    std::string schema_override;
    validate->add_option("input", validate_input, "JSON / JSON-lines file, or - for stdin")->required();
    validate->add_option("--schema", schema_override, "Schema file");
    add_common(validate, common);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Register records in a store or a running service");
    std::string ingest_input;
    std::string ingest_url;
    ingest->add_option("input", ingest_input, "JSON / JSON-lines file, or - for stdin")->required();
    ingest->add_option("--url", ingest_url, "Base URL of a running service, e.g. http://127.0.0.1:8080");
    add_common(ingest, common);

    // search
    auto* search = app.add_subcommand("search", "Search the store");
    std::string search_query = "{}";
    search->add_option("query", search_query, "Query JSON, or @file");
    add_common(search, common);

    // analyze
    auto* analyze = app.add_subcommand("analyze", "Run a registered analysis");
    std::string analysis_kind;
    std::string analysis_params = "{}";
    std::string analysis_query;
    std::vector<std::string> analysis_ids;
    analyze->add_option("kind", analysis_kind, "rank, cluster, stats, aoristic, ...")->required();
    analyze->add_option("--params", analysis_params, "Parameters JSON, or @file");
    analyze->add_option("--query", analysis_query, "Restrict input to a search query (JSON or @file)");
    analyze->add_option("--ids", analysis_ids, "Restrict input to these record ids");
    add_common(analyze, common);

    // report
    auto* report = app.add_subcommand("report", "Print the generated free-text report for a record");
    std::string report_id;
    report->add_option("record_id", report_id)->required();
    add_common(report, common);

    // detect
    auto* detect = app.add_subcommand("detect", "Series alerts: list the feed, or test a record without storing it");
    std::string detect_record;
    std::string detect_since;
    std::optional<double> s_min, d_max, w_days;
    detect->add_option("record", detect_record, "Record file to check against the store (dry run)");
    detect->add_option("--since", detect_since, "List alerts detected at or after this instant");
    detect->add_option("--s-min", s_min, "Minimum similarity");
    detect->add_option("--d-max-km", d_max, "Maximum distance in km");
    detect->add_option("--w-days", w_days, "Maximum gap in days");
    add_common(detect, common);

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Write a synthetic corpus with planted series");
    std::string sim_out;
    std::string sim_config;
    GeneratorConfig gen;
    simulate->add_option("--out", sim_out, "Output directory (records.jsonl, truth.csv)")->required();
    simulate->add_option("--generator", sim_config, "Generator config JSON, or @file");
    simulate->add_option("--seed", gen.seed);
    simulate->add_option("--records", gen.n_records);
    simulate->add_option("--series", gen.n_series);
    simulate->add_option("--series-size", gen.series_size_min, "Members per series");
    simulate->add_option("--signature-bits", gen.signature_bits);
    simulate->add_option("--flip", gen.noise_flip_prob, "Per-bit corruption probability");
    add_common(simulate, common);

    // study
    auto* study = app.add_subcommand("study", "User-study statistics and power analysis");
    std::string study_csv;
    std::string method_a, method_b;
    bool study_json = false;
    std::optional<double> power_d;
    double power_alpha = 0.05, power_target = 0.8;
    study->add_option("csv", study_csv, "CSV with subject,method,time_s,count");
    study->add_option("--a", method_a, "Method A (default: first in file)");
    study->add_option("--b", method_b, "Method B");
    study->add_flag("--json", study_json, "Print JSON instead of text");
    study->add_option("--power-d", power_d, "Required sample size for this effect size");
    study->add_option("--alpha", power_alpha);
    study->add_option("--power", power_target);

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    std::optional<int> serve_port;
    std::string serve_bind;
    serve->add_option("--port", serve_port);
    serve->add_option("--bind", serve_bind);
    add_common(serve, common);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*validate) {
            std::shared_ptr<const FormSchema> schema;
            auto config = common.load();
            schema = std::make_shared<const FormSchema>(
                load_schema_file(schema_override.empty() ? config.schema_path : std::filesystem::path(schema_override)));
            int invalid = 0;
            for (const auto& body : record_bodies(validate_input)) {
                ValidationReport rep;
                json payload = json::parse(body, nullptr, false);
                // Like the service, treat a record without a digest as made for this schema.
                if (payload.is_object() && !payload.contains("schema_digest"))
                    payload["schema_digest"] = schema->digest();
                std::string id = payload.is_object() ? payload.value("record_id", std::string("?")) : "?";
                if (auto record = record_from_json(payload, rep)) {
                    if (record->schema_digest != schema->digest())
                        rep.violations.push_back({"schema_digest", "record was made with another schema", "schema_digest"});
                    else
                        rep = validate_record(*record, *schema);
                }
                invalid += !rep.ok();
                std::cout << json{{"record_id", id}, {"report", to_json(rep)}}.dump() << "\n";
            }
            return invalid == 0 ? 0 : 1;
        }

        if (*ingest) {
            auto bodies = record_bodies(ingest_input);
            std::size_t ok = 0;
            if (!ingest_url.empty()) {
                httplib::Client client(ingest_url);
                for (const auto& body : bodies) {
                    auto res = client.Post("/api/v1/records", body, "application/json");
                    if (!res)
                        throw std::runtime_error("cannot reach " + ingest_url);
                    ok += res->status == 201;
                    if (res->status != 201)
                        std::cerr << res->body << "\n";
                }
            } else {
                Service svc(common.load());
                const auto before = svc.alerts(std::nullopt).body["alerts"].size();
                for (const auto& body : bodies) {
                    auto r = svc.register_record(body);
                    ok += r.status == 201;
                    if (r.status != 201)
                        std::cerr << r.body.dump() << "\n";
                }
                svc.wait_idle();
                auto alerts = svc.alerts(std::nullopt).body["alerts"];
                for (std::size_t i = before; i < alerts.size(); ++i)
                    std::cout << alerts[i].dump() << "\n";
            }
            std::cerr << ok << " of " << bodies.size() << " records registered\n";
            return ok == bodies.size() ? 0 : 1;
        }

        if (*search) {
            Service svc(common.load());
            return emit(svc.search(json_arg(search_query).dump()));
        }

        if (*analyze) {
            Service svc(common.load());
            json request{{"parameters", json_arg(analysis_params)}};
            if (!analysis_ids.empty())
                request["input"] = {{"ids", analysis_ids}};
            else if (!analysis_query.empty())
                request["input"] = {{"query", json_arg(analysis_query)}};
            return emit(svc.analyze(analysis_kind, request.dump()));
        }

        if (*report) {
            Service svc(common.load());
            return emit(svc.report(report_id));
        }

        if (*detect) {
            auto config = common.load();
            if (s_min)
                config.detector.s_min = *s_min;
            if (d_max)
                config.detector.d_max_km = *d_max;
            if (w_days)
                config.detector.w_days = *w_days;
            Service svc(config);
            if (detect_record.empty())
                return emit(svc.alerts(detect_since.empty() ? std::nullopt : std::optional(detect_since)));
            const auto& schema = svc.store().schema();
            auto record = record_from_json(json::parse(read_file(detect_record)));
            auto rep = validate_record(record, schema);
            if (!rep.ok()) {
                std::cout << to_json(rep).dump(2) << "\n";
                return 1;
            }
            StoredRecord fresh{record, encode_binary(record, schema)};
            auto alert = detect_series(fresh, svc.store().snapshot(), config.detector);
            if (!alert) {
                std::cout << "no alert\n";
                return 0;
            }
            alert->detected_at = now_instant();
            std::cout << to_json(*alert, schema).dump(2) << "\n";
            return 0;
        }

        if (*simulate) {
            auto config = common.load();
            auto schema = load_schema_file(config.schema_path);
            if (!sim_config.empty()) {
                // Start from the file; flags given on the command line win.
                static const std::map<std::string, std::vector<std::string>> flag_keys{
                    {"--seed", {"seed"}},
                    {"--records", {"n_records"}},
                    {"--series", {"n_series"}},
                    {"--series-size", {"series_size_min", "series_size_max"}},
                    {"--signature-bits", {"signature_bits"}},
                    {"--flip", {"noise_flip_prob"}}};
                json merged = to_json(generator_config_from_json(json_arg(sim_config)));
                const json cli = to_json(gen);
                for (const auto& [flag, keys] : flag_keys)
                    if (simulate->get_option(flag)->count() > 0)
                        for (const auto& key : keys)
                            merged[key] = cli[key == "series_size_max" ? "series_size_min" : key];
                gen = generator_config_from_json(merged);
            }
            if (simulate->get_option("--series-size")->count() > 0)
                gen.series_size_max = gen.series_size_min;
            auto corpus = generate(gen, schema);
            write_corpus(corpus, sim_out);
            std::cerr << corpus.records.size() << " records written to " << sim_out << "\n";
            return 0;
        }

        if (*study) {
            json out;
            if (!study_csv.empty()) {
                std::ifstream in(study_csv);
                if (!in)
                    throw std::runtime_error("cannot open " + study_csv);
                out = stats::study_report(stats::read_study_csv(in, method_a, method_b));
            }
            if (power_d)
                out["power"] = stats::to_json(stats::required_sample_size({*power_d, power_alpha, power_target, true}));
            if (out.is_null())
                throw std::runtime_error("give a study CSV and/or --power-d");
            if (study_json) {
                std::cout << out.dump(2) << "\n";
            } else {
                if (out.contains("methods"))
                    std::cout << stats::format_study_report(out);
                if (out.contains("power")) {
                    const auto& p = out["power"];
                    std::printf("required sample size: %.2f (use %d, power %.3f)\n", p["n_fractional"].get<double>(),
                                p["n_required"].get<int>(), p["achieved_power"].get<double>());
                }
            }
            return 0;
        }

        if (*serve) {
            auto config = common.load();
            if (serve_port)
                config.port = *serve_port;
            if (!serve_bind.empty())
                config.bind_address = serve_bind;
            Service svc(config);
            HttpServer server(svc);
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::signal(SIGHUP, on_signal);
            const int port = server.start(config.bind_address, config.port);
            std::cerr << "listening on " << config.bind_address << ":" << port << " (store " << config.store_path.string()
                      << ")\n";
            for (;;) {
                std::this_thread::sleep_for(std::chrono::milliseconds(200));
                const int sig = pending_signal.exchange(0);
                if (sig == SIGHUP) {
                    try {
                        svc.reload_registry();
                        std::cerr << "analysis registry reloaded\n";
                    } catch (const std::exception& e) {
                        std::cerr << "reload failed: " << e.what() << "\n";
                    }
                } else if (sig != 0) {
                    break;
                }
            }
            server.stop();
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
