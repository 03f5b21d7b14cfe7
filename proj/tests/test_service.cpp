#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "crimelink/service.hpp"
#include "support.hpp"

using namespace crimelink;
using nlohmann::json;

namespace {

ServiceConfig config_in(const std::filesystem::path& dir) {
    ServiceConfig c;
    c.store_path = dir / "store";
    c.detector.s_min = 0.6;
    c.detector.d_max_km = 30;
    c.detector.w_days = 14;
    return c;
}

std::string body_of(const CrimeRecord& r) { return to_json(r).dump(); }

// Fields that differ between runs are masked before comparing with golden files.
json normalized(json j) {
    static const std::set<std::string> volatile_keys{"token", "duration_ms", "detected_at"};
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it)
            it.value() = volatile_keys.count(it.key()) ? json("<volatile>") : normalized(it.value());
    } else if (j.is_array()) {
        for (auto& v : j)
            v = normalized(v);
    }
    return j;
}

// Compares against tests/golden/<name>; CRIMELINK_UPDATE_GOLDEN=1 rewrites the file.
void check_golden(const std::string& name, const std::string& actual) {
    const auto path = std::filesystem::path(CRIMELINK_GOLDEN_DIR) / name;
    if (std::getenv("CRIMELINK_UPDATE_GOLDEN")) {
        std::ofstream(path, std::ios::binary) << actual;
        return;
    }
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing golden file " << path);
    std::string expected{std::istreambuf_iterator<char>(in), {}};
    CHECK_MESSAGE(actual == expected, "golden mismatch: " << name);
}

void check_golden(const std::string& name, const Response& r) {
    json doc{{"status", r.status}, {"content_type", r.content_type}};
    if (r.content_type == "application/json")
        doc["body"] = normalized(r.body);
    else
        doc["text"] = r.text;
    check_golden(name, doc.dump(2) + "\n");
}

// Two burglaries close in MO, place and time.
std::pair<CrimeRecord, CrimeRecord> duplicate_pair(const FormSchema& schema) {
    const std::set<std::string> mo{"bo_villa", "omr_enskilt", "mal_hemma", "in_olast_fonster", "gs_forsiktigt"};
    auto first = testing::make_record(schema, "P1", mo, "2016-05-07T09:00:00Z", "2016-05-07T10:00:00Z");
    first.geo = GeoPoint{56.0, 14.0};
    auto second_mo = mo;
    second_mo.insert("gods_kontanter_smycken");
    auto second = testing::make_record(schema, "P2", second_mo, "2016-05-10T10:00:00Z", "2016-05-10T12:00:00Z");
    second.geo = GeoPoint{56.018, 14.0};
    return {first, second};
}

} // namespace

TEST_CASE("registration status codes") {
    testing::TempDir dir;
    Service svc(config_in(dir.path()));
    auto schema = testing::burglary_schema();

    auto ok = svc.register_record(body_of(testing::rural_house_record(*schema)));
    CHECK(ok.status == 201);
    CHECK(ok.body["record_id"] == "HUS1");
    check_golden("register_created.json", ok);

    auto dup = svc.register_record(body_of(testing::rural_house_record(*schema)));
    CHECK(dup.status == 409);
    check_golden("register_duplicate.json", dup);

    auto bad = svc.register_record(body_of(testing::make_record(*schema, "X1", {"omr_tatort", "omr_landsbygd"})));
    CHECK(bad.status == 400);
    CHECK(bad.body["error"] == "validation_failed");
    CHECK(bad.body["report"]["violations"][0]["rule"] == "exclusive_group");
    check_golden("register_invalid.json", bad);

    auto wrong_schema = testing::make_record(*schema, "X2", {});
    wrong_schema.schema_digest = "sha256:0000";
    CHECK(svc.register_record(body_of(wrong_schema)).status == 422);

    auto garbage = svc.register_record("{nope");
    CHECK(garbage.status == 400);
    CHECK_FALSE(garbage.body["report"]["violations"].empty());

    // Server fills in id, digest and registration time when omitted.
    json minimal{{"case_number", "5000-K1-16"}, {"address", "Storgatan 2"}, {"checked", {"bo_villa"}},
                 {"time_interval", {{"earliest", "2016-01-01T00:00:00Z"}, {"latest", "2016-01-01T02:00:00Z"}}}};
    auto filled = svc.register_record(minimal.dump());
    CHECK(filled.status == 201);
    auto id = filled.body["record_id"].get<std::string>();
    CHECK(svc.get_record(id).status == 200);
    CHECK(svc.get_record(id).body["schema_digest"] == schema->digest());

    CHECK(svc.store().size() == 2);
    CHECK(svc.get_record("missing").status == 404);
    check_golden("record_rural_house.json", svc.get_record("HUS1"));
}

TEST_CASE("registered records are searchable at once and tokens pin result sets") {
    testing::TempDir dir;
    Service svc(config_in(dir.path()));
    auto schema = testing::burglary_schema();
    GeneratorConfig cfg;
    cfg.n_records = 40;
    cfg.n_series = 2;
    cfg.series_size_min = cfg.series_size_max = 4;
    for (const auto& r : generate(cfg, *schema).records)
        REQUIRE(svc.register_record(body_of(r)).status == 201);

    auto all = svc.search("{}");
    CHECK(all.status == 200);
    CHECK(all.body["total"] == 40);
    const auto token = all.body["token"].get<std::string>();

    auto fresh = testing::make_record(*schema, "ZNEW", {"bo_villa", "omr_enskilt"});
    fresh.registered_at = parse_instant("2030-01-01T00:00:00Z");
    REQUIRE(svc.register_record(body_of(fresh)).status == 201);
    auto found = svc.search(R"({"required": ["bo_villa", "omr_enskilt"], "limit": 1})");
    CHECK(found.body["records"][0]["record_id"] == "ZNEW");

    auto pinned = svc.analyze("stats", json{{"input", {{"token", token}}}}.dump());
    CHECK(pinned.status == 200);
    CHECK(pinned.body["n_records"] == 40);
    CHECK(svc.analyze("stats", "{}").body["n_records"] == 41);

    CHECK(svc.search(R"({"required": ["bo_villa"], "excluded": ["bo_villa"]})").status == 400);
    CHECK(svc.search(R"({"required": ["no_such"]})").status == 400);
    CHECK(svc.analyze("stats", R"({"input": {"token": "t-bogus"}})").status == 400);

    auto paged = svc.search(R"({"limit": 5, "offset": 38})");
    CHECK(paged.body["total"] == 41);
    CHECK(paged.body["records"].size() == 3);
}

TEST_CASE("expired tokens no longer resolve") {
    ResultTokens tokens(std::chrono::seconds(0));
    auto t = tokens.issue({"a"});
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    CHECK_FALSE(tokens.resolve(t));
    ResultTokens lasting(std::chrono::seconds(60));
    CHECK(lasting.resolve(lasting.issue({"a", "b"})) == std::vector<std::string>{"a", "b"});
}

TEST_CASE("analysis dispatch") {
    testing::TempDir dir;
    Service svc(config_in(dir.path()));
    auto schema = testing::burglary_schema();
    GeneratorConfig cfg;
    cfg.seed = 3;
    cfg.n_records = 25;
    cfg.n_series = 3;
    cfg.series_size_min = cfg.series_size_max = 5;
    cfg.signature_bits = 12;
    cfg.noise_flip_prob = 0.02;
    auto corpus = generate(cfg, *schema);
    for (const auto& r : corpus.records)
        REQUIRE(svc.register_record(body_of(r)).status == 201);

    auto clusters = svc.analyze("cluster", R"({"parameters": {"threshold": 0.3}})");
    REQUIRE(clusters.status == 200);
    auto expected = testing::brute_force_clusters(testing::stored_all(*schema, corpus.records), 0.3);
    CHECK(clusters.body["result"]["clusters"].get<std::vector<std::vector<std::string>>>() == expected);
    CHECK(clusters.body["duration_ms"].is_number());
    check_golden("analyze_cluster.json", clusters);

    auto rank = svc.analyze("rank", R"({"parameters": {"reference": "R000001", "limit": 3}})");
    REQUIRE(rank.status == 200);
    check_golden("analyze_rank.json", rank);
    CHECK(svc.analyze("rank", "{}").status == 400);
    CHECK(svc.analyze("rank", R"({"parameters": {"reference": "nobody"}})").status == 400);

    auto grid = svc.analyze("aoristic", R"({"input": {"ids": ["R000001", "R000002"]}})");
    REQUIRE(grid.status == 200);
    CHECK(grid.body["result"]["total"].get<double>() == doctest::Approx(2.0));
    check_golden("analyze_aoristic.json", grid);

    auto stats = svc.analyze("stats", R"({"input": {"query": {"required": ["bo_villa"]}}})");
    CHECK(stats.status == 200);

    CHECK(svc.analyze("teleport", "{}").status == 404);
    check_golden("analyze_unknown.json", svc.analyze("teleport", "{}"));
    CHECK(svc.analyze("stats", R"({"input": {"ids": ["ghost"]}})").status == 400);
    CHECK(svc.analyze("cluster", R"({"parameters": {"threshold": 7}})").status == 400);
    CHECK(svc.analyze("cluster", R"({"parameters": {"threshold": "high"}})").status == 400);
}

TEST_CASE("new analysis kinds plug in without dispatch changes") {
    testing::TempDir dir;
    auto config = config_in(dir.path());
    const auto config_file = dir.path() / "service.json";
    std::ofstream(config_file) << R"({"analyses": ["stats", "echo"]})";
    config.source = config_file;
    config.analyses = {"stats", "echo"};
    Service svc(config);
    svc.registry().add("echo", [](const AnalysisContext& ctx, const json& params) {
        return json{{"params", params}, {"n", ctx.records.size()}};
    });
    auto echo = svc.analyze("echo", R"({"parameters": {"x": 1}})");
    REQUIRE(echo.status == 200);
    CHECK(echo.body["result"]["params"]["x"] == 1);
    CHECK(svc.analyze("rank", "{}").status == 404); // not enabled

    std::ofstream(config_file, std::ios::trunc) << R"({"analyses": ["stats", "rank"]})";
    svc.reload_registry();
    CHECK(svc.analyze("echo", "{}").status == 404);
    CHECK(svc.analyze("rank", "{}").status == 400); // enabled; missing reference
    CHECK(svc.list_analyses().body["kinds"] == json{"rank", "stats"});
}

TEST_CASE("alerts feed and persistence") {
    testing::TempDir dir;
    auto schema = testing::burglary_schema();
    auto [first, second] = duplicate_pair(*schema);
    {
        Service svc(config_in(dir.path()));
        CHECK(svc.alerts(std::nullopt).body["alerts"].empty());
        REQUIRE(svc.register_record(body_of(first)).status == 201);
        REQUIRE(svc.register_record(body_of(second)).status == 201);
        svc.wait_idle();
        auto feed = svc.alerts(std::nullopt);
        REQUIRE(feed.body["alerts"].size() == 1);
        const auto& alert = feed.body["alerts"][0];
        CHECK(alert["new_record_id"] == "P2");
        CHECK(alert["matches"].size() == 1);
        CHECK(alert["matches"][0]["record_id"] == "P1");
        check_golden("alerts.json", feed);

        CHECK(svc.alerts("2999-01-01T00:00:00Z").body["alerts"].empty());
        CHECK(svc.alerts("yesterday").status == 400);
    }
    Service restarted(config_in(dir.path()));
    auto feed = restarted.alerts(std::nullopt);
    REQUIRE(feed.body["alerts"].size() == 1);
    CHECK(feed.body["alerts"][0]["alert_id"] == "A00000001");

    // A third close record matches both earlier ones; ids continue after restart.
    auto third = second;
    third.record_id = "P3";
    REQUIRE(restarted.register_record(body_of(third)).status == 201);
    restarted.wait_idle();
    feed = restarted.alerts(std::nullopt);
    REQUIRE(feed.body["alerts"].size() == 2);
    CHECK(feed.body["alerts"][1]["alert_id"] == "A00000002");
    CHECK(feed.body["alerts"][1]["matches"].size() == 2);
}

TEST_CASE("reports") {
    testing::TempDir dir;
    Service svc(config_in(dir.path()));
    auto schema = testing::burglary_schema();
    auto r = testing::rural_house_record(*schema);
    r.note = "Grannen såg en mörk bil.";
    REQUIRE(svc.register_record(body_of(r)).status == 201);
    auto report = svc.report("HUS1");
    CHECK(report.status == 200);
    CHECK(report.content_type.rfind("text/plain", 0) == 0);
    check_golden("report_rural_house.txt", report.text);
    CHECK(svc.report("nobody").status == 404);
}

TEST_CASE("configuration from file and environment") {
    testing::TempDir dir;
    const auto file = dir.path() / "c.json";
    std::ofstream(file) << R"({"store_path": "/var/x", "port": 9000, "token_ttl_s": 60,
                              "detector": {"s_min": 0.7}, "analyses": ["rank"]})";
    std::map<std::string, std::string> env{{"CRIMELINK_PORT", "9100"}, {"CRIMELINK_D_MAX_KM", "12.5"}};
    auto lookup = [&](const std::string& k) -> std::optional<std::string> {
        auto it = env.find(k);
        return it == env.end() ? std::nullopt : std::optional(it->second);
    };
    auto c = load_service_config(file, lookup);
    CHECK(c.store_path == "/var/x");
    CHECK(c.port == 9100);
    CHECK(c.token_ttl == std::chrono::seconds(60));
    CHECK(c.detector.s_min == 0.7);
    CHECK(c.detector.d_max_km == 12.5);
    CHECK(c.detector.w_days == 30);
    CHECK(c.analyses == std::vector<std::string>{"rank"});
    CHECK(c.source == file);

    env["CRIMELINK_S_MIN"] = "lots";
    CHECK_THROWS(load_service_config(file, lookup));
    CHECK_THROWS(load_service_config(dir.path() / "missing.json", lookup));
}

TEST_CASE("HTTP surface") {
    testing::TempDir dir;
    Service svc(config_in(dir.path()));
    HttpServer server(svc);
    const int port = server.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    httplib::Client client("127.0.0.1", port);
    auto schema = testing::burglary_schema();

    auto s = client.Get("/api/v1/schema");
    REQUIRE(s);
    CHECK(s->status == 200);
    auto schema_json = json::parse(s->body);
    CHECK(schema_json["total_parameters"] == 133);
    CHECK(schema_json["sections"].size() == 11);
    CHECK(client.Get("/api/schema")->status == 200);

    auto posted = client.Post("/api/v1/records", body_of(testing::rural_house_record(*schema)), "application/json");
    REQUIRE(posted);
    CHECK(posted->status == 201);
    CHECK(client.Post("/api/records", body_of(testing::rural_house_record(*schema)), "application/json")->status == 409);

    auto got = client.Get("/api/v1/records/HUS1");
    CHECK(got->status == 200);
    CHECK(record_from_json(json::parse(got->body)) == testing::rural_house_record(*schema));
    CHECK(client.Get("/api/v1/records/none")->status == 404);

    auto search = client.Post("/api/v1/search", R"({"required": ["omr_landsbygd"]})", "application/json");
    CHECK(json::parse(search->body)["total"] == 1);

    auto analysis = client.Post("/api/v1/analyses/aoristic", "{}", "application/json");
    CHECK(analysis->status == 200);
    CHECK(json::parse(analysis->body)["result"]["grid"].size() == 7);
    CHECK(client.Post("/api/v1/analyses/none", "{}", "application/json")->status == 404);
    CHECK(json::parse(client.Get("/api/v1/analyses")->body)["kinds"].size() == 4);

    auto report = client.Get("/api/v1/reports/HUS1");
    CHECK(report->status == 200);
    CHECK(report->body.find("Brottsplatsen ligger på landsbygden.") != std::string::npos);

    auto alerts = client.Get("/api/v1/alerts?since=2016-01-01T00:00:00Z");
    CHECK(alerts->status == 200);
    CHECK(client.Get("/api/v1/alerts?since=garbage")->status == 400);
    CHECK(client.Post("/api/v1/search", "{oops", "application/json")->status == 400);
    server.stop();
}

TEST_CASE("concurrent registration and analysis") {
    testing::TempDir dir;
    Service svc(config_in(dir.path()));
    auto schema = testing::burglary_schema();
    GeneratorConfig cfg;
    cfg.n_records = 300;
    auto corpus = generate(cfg, *schema);
    std::thread writer([&] {
        for (const auto& r : corpus.records)
            CHECK(svc.register_record(body_of(r)).status == 201);
    });
    std::size_t last = 0;
    for (int i = 0; i < 30; ++i) {
        auto r = svc.analyze("stats", "{}");
        REQUIRE(r.status == 200);
        const auto n = r.body["n_records"].get<std::size_t>();
        CHECK(n >= last);
        last = n;
    }
    writer.join();
    svc.wait_idle();
    CHECK(svc.store().size() == 300);
}
