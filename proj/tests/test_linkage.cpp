#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace crimelink;

namespace {

BitVector bits(std::size_t size, std::initializer_list<std::size_t> ones) {
    BitVector v(size);
    for (auto i : ones)
        v.set(i);
    return v;
}

BitVector random_bits(CorpusRng& rng, std::size_t size, double density) {
    BitVector v(size);
    for (std::size_t i = 0; i < size; ++i)
        if (rng.chance(density))
            v.set(i);
    return v;
}

std::vector<std::string> ranked_ids(const std::vector<RankedRecord>& ranking) {
    std::vector<std::string> out;
    for (const auto& r : ranking)
        out.push_back(r.record_id);
    return out;
}

} // namespace

TEST_CASE("similarity hand cases") {
    CHECK(similarity(bits(8, {0, 2}), bits(8, {0, 1})) == doctest::Approx(1.0 / 3.0));
    CHECK(similarity(bits(8, {1, 5}), bits(8, {1, 5})) == 1.0);
    CHECK(similarity(bits(8, {1}), bits(8, {2})) == 0.0);
    CHECK(similarity(BitVector(8), BitVector(8)) == 0.0);
    CHECK(similarity(bits(8, {0, 2}), bits(8, {0, 1}), SimilarityMetric::cosine) == doctest::Approx(0.5));
    CHECK_THROWS_AS(similarity(BitVector(8), BitVector(9)), std::invalid_argument);

    auto s = score_pair(bits(8, {0, 2, 4}), bits(8, {2, 4, 6}));
    CHECK(s.value == doctest::Approx(0.5));
    CHECK(s.shared.ones() == std::vector<std::size_t>{2, 4});

    CHECK(metric_from_string("cosine") == SimilarityMetric::cosine);
    CHECK(to_string(SimilarityMetric::jaccard) == "jaccard");
    CHECK_THROWS(metric_from_string("euclid"));
}

TEST_CASE("similarity properties on random vectors") {
    CorpusRng rng(77);
    for (int i = 0; i < 500; ++i) {
        auto a = random_bits(rng, 133, 0.1), b = random_bits(rng, 133, 0.1), c = random_bits(rng, 133, 0.1);
        const double ab = similarity(a, b), ba = similarity(b, a);
        CHECK(ab == ba);
        CHECK(ab == doctest::Approx(testing::jaccard_bits_naive(a, b)).epsilon(1e-15));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
        const double dab = 1 - ab, dbc = 1 - similarity(b, c), dac = 1 - similarity(a, c);
        CHECK(dac <= dab + dbc + 1e-12);
    }
}

TEST_CASE("rank by reference") {
    auto ref = testing::bits_record("REF", 20, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto high = testing::bits_record("Z08", 20, {0, 1, 2, 3, 4, 5, 6, 7});   // 8/10
    auto mid = testing::bits_record("A05", 20, {0, 1, 2, 3, 4});             // 5/10
    auto low = testing::bits_record("M01", 20, {0});                         // 1/10
    auto ranking = rank_by_reference(*ref, {low, mid, ref, high});
    REQUIRE(ranking.size() == 3);
    CHECK(ranked_ids(ranking) == std::vector<std::string>{"Z08", "A05", "M01"});
    CHECK(ranking[0].score.value == doctest::Approx(0.8));
    CHECK(ranking[1].score.value == doctest::Approx(0.5));
    CHECK(ranking[2].score.value == doctest::Approx(0.1));

    auto copy = testing::bits_record("COPY", 20, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK(rank_by_reference(*ref, {low, copy}).front().score.value == 1.0);

    auto tie_b = testing::bits_record("B", 20, {0});
    auto tie_a = testing::bits_record("A", 20, {1});
    CHECK(ranked_ids(rank_by_reference(*ref, {tie_b, tie_a})) == std::vector<std::string>{"A", "B"});
}

TEST_CASE("cluster edge cases") {
    auto a = testing::bits_record("a", 16, {1, 2, 3});
    auto a2 = testing::bits_record("a2", 16, {1, 2, 3});
    auto b = testing::bits_record("b", 16, {4, 5});
    auto c = testing::bits_record("c", 16, {1, 2, 9});

    CHECK(cluster({a}, 0.5).clusters == std::vector<std::vector<std::string>>{{"a"}});
    CHECK(cluster({a2, a}, 0.01).clusters == std::vector<std::vector<std::string>>{{"a", "a2"}});
    CHECK(cluster({a, a2, b, c}, 0.0).clusters == std::vector<std::vector<std::string>>{{"a", "a2"}, {"b"}, {"c"}});
    CHECK(cluster({a, a2, b, c}, 1.0).clusters.size() == 1);
    CHECK_THROWS_AS(cluster({}, 0.3), std::invalid_argument);
    CHECK_THROWS_AS(cluster({a}, 1.5), std::invalid_argument);
}

TEST_CASE("cluster tie rule picks the smallest representative pair") {
    // Pairwise distances all equal: x-y, x-z, y-z each share one of three bits.
    auto x = testing::bits_record("x", 8, {0, 1});
    auto y = testing::bits_record("y", 8, {1, 2});
    auto z = testing::bits_record("z", 8, {0, 2});
    auto result = cluster({z, y, x}, 2.0 / 3.0 - 1e-6);
    CHECK(result.clusters.size() == 3);
    // At 2/3 the first merge is (x, y); z then sits at distance 2/3 from both.
    result = cluster({z, y, x}, 2.0 / 3.0);
    CHECK(result.clusters == std::vector<std::vector<std::string>>{{"x", "y", "z"}});
}

TEST_CASE("planted series emerge and clustering matches the brute-force oracle") {
    auto schema = testing::burglary_schema();
    GeneratorConfig cfg;
    cfg.seed = 3;
    cfg.n_records = 25;
    cfg.n_series = 3;
    cfg.series_size_min = cfg.series_size_max = 5;
    cfg.signature_bits = 12;
    cfg.noise_flip_prob = 0.02;
    auto corpus = generate(cfg, *schema);
    auto records = testing::stored_all(*schema, corpus.records);

    auto result = cluster(records, 0.3);
    CHECK(result.clusters == testing::brute_force_clusters(records, 0.3));

    std::map<std::string, std::vector<std::string>> series;
    for (const auto& [id, s] : corpus.truth)
        if (s)
            series[*s].push_back(id);
    REQUIRE(series.size() == 3);
    for (auto& [name, members] : series) {
        std::sort(members.begin(), members.end());
        CHECK_MESSAGE(std::find(result.clusters.begin(), result.clusters.end(), members) != result.clusters.end(),
                      name);
    }

    auto eval = evaluate_linkage(result, corpus.truth);
    auto pc = testing::enumerate_pairs(result.clusters, corpus.truth);
    CHECK(eval.true_positive_pairs == pc.tp);
    CHECK(eval.predicted_pairs == pc.predicted);
    CHECK(eval.truth_pairs == pc.truth);
    CHECK(pc.truth == 30);
}

TEST_CASE("clustering matches the oracle on random inputs at many thresholds") {
    CorpusRng rng(99);
    for (int round = 0; round < 12; ++round) {
        RecordSet records;
        const std::size_t n = rng.between(2, 30);
        for (std::size_t i = 0; i < n; ++i) {
            StoredRecord s;
            s.record.record_id = "r" + std::to_string(rng.below(1000)) + "_" + std::to_string(i);
            s.bits = random_bits(rng, 12, 0.3); // small vectors give many exact ties
            records.push_back(std::make_shared<const StoredRecord>(std::move(s)));
        }
        for (double t : {0.0, 0.2, 0.35, 0.5, 0.75, 1.0})
            CHECK(cluster(records, t).clusters == testing::brute_force_clusters(records, t));
    }
}

TEST_CASE("descriptive statistics") {
    auto empty = descriptive_stats({}, 133);
    CHECK(empty.n == 0);
    CHECK(empty.proportion(5) == 0.0);

    auto two = descriptive_stats({testing::bits_record("a", 4, {1}), testing::bits_record("b", 4, {})}, 4);
    CHECK(two.counts[1] == 1);
    CHECK(two.proportion(1) == 0.5);

    auto schema = testing::burglary_schema();
    GeneratorConfig cfg;
    auto corpus = generate(cfg, *schema);
    auto table = descriptive_stats(testing::stored_all(*schema, corpus.records), 133);
    std::vector<std::size_t> naive(133, 0);
    for (const auto& r : corpus.records)
        for (const auto& id : r.checked)
            ++naive[schema->find(id)->bit_index];
    CHECK(table.counts == naive);
    CHECK(table.n == 1000);
}

TEST_CASE("aoristic examples") {
    auto schema = testing::burglary_schema();
    // 2016-03-01 is a Tuesday.
    auto point = testing::make_record(*schema, "P", {}, "2016-03-01T14:05:00Z", "2016-03-01T14:05:00Z");
    auto grid = aoristic(testing::stored_all(*schema, {point}));
    CHECK(grid.weights[1][14] == 1.0);
    CHECK(grid.total() == 1.0);

    auto two_hours = testing::make_record(*schema, "T", {}, "2016-03-01T14:00:00Z", "2016-03-01T16:00:00Z");
    grid = aoristic(testing::stored_all(*schema, {two_hours}));
    CHECK(grid.weights[1][14] == 0.5);
    CHECK(grid.weights[1][15] == 0.5);
    CHECK(grid.weights[1][16] == 0.0);

    auto week = testing::make_record(*schema, "W", {}, "2016-03-01T14:00:00Z", "2016-03-20T00:00:00Z");
    grid = aoristic(testing::stored_all(*schema, {week}));
    CHECK(grid.weights[6][23] == doctest::Approx(1.0 / 168.0));
    CHECK(grid.total() == doctest::Approx(1.0));

    // Sunday night into Monday wraps the week.
    auto wrap = testing::make_record(*schema, "S", {}, "2016-03-06T23:30:00Z", "2016-03-07T00:30:00Z");
    grid = aoristic(testing::stored_all(*schema, {wrap}));
    CHECK(grid.weights[6][23] == 0.5);
    CHECK(grid.weights[0][0] == 0.5);

    auto no_time = testing::make_record(*schema, "N", {});
    no_time.time_interval.reset();
    CHECK_THROWS_AS(aoristic(testing::stored_all(*schema, {no_time})), std::invalid_argument);
}

TEST_CASE("aoristic agrees with a minute-by-minute oracle and conserves mass") {
    auto schema = testing::burglary_schema();
    CorpusRng rng(5);
    std::vector<CrimeRecord> records;
    const auto start = parse_instant("2016-01-01T00:00:00Z");
    for (int i = 0; i < 400; ++i) {
        const auto earliest = start + std::chrono::minutes(rng.below(60 * 24 * 365));
        std::chrono::minutes len{0};
        switch (i % 4) {
        case 0: break;
        case 1: len = std::chrono::minutes(rng.between(1, 600)); break;
        case 2: len = std::chrono::minutes(rng.between(600, 167 * 60)); break;
        default: len = std::chrono::minutes(rng.between(168 * 60, 400 * 60)); break;
        }
        auto r = testing::make_record(*schema, "A" + std::to_string(i), {});
        r.time_interval = TimeInterval{earliest, earliest + len};
        records.push_back(r);
    }
    auto grid = aoristic(testing::stored_all(*schema, records));
    auto oracle = testing::aoristic_by_minutes(records);
    for (int d = 0; d < 7; ++d)
        for (int h = 0; h < 24; ++h)
            CHECK(grid.weights[d][h] == doctest::Approx(oracle[d][h]).epsilon(1e-9));
    CHECK(std::abs(grid.total() - 400.0) < 1e-9);
}

TEST_CASE("haversine and temporal gap") {
    CHECK(haversine_km({0, 0}, {0, 1}) == doctest::Approx(kEarthRadiusKm * M_PI / 180.0));
    CHECK(haversine_km({56, 14}, {56, 14}) == 0.0);
    CHECK(haversine_km({55.6, 13.0}, {59.33, 18.07}) == doctest::Approx(513.0).epsilon(0.01)); // Malmö-Stockholm

    TimeInterval a{parse_instant("2016-01-01T00:00:00Z"), parse_instant("2016-01-02T00:00:00Z")};
    TimeInterval b{parse_instant("2016-01-03T12:00:00Z"), parse_instant("2016-01-04T00:00:00Z")};
    CHECK(temporal_gap_hours(a, b) == 36.0);
    CHECK(temporal_gap_hours(b, a) == 36.0);
    CHECK(temporal_gap_hours(a, a) == 0.0);
}

TEST_CASE("series detection") {
    auto schema = testing::burglary_schema();
    DetectorConfig cfg;
    cfg.s_min = 0.6;
    cfg.d_max_km = 30;
    cfg.w_days = 14;

    const std::set<std::string> mo{"bo_villa", "omr_enskilt", "mal_hemma", "in_olast_fonster", "gs_forsiktigt"};
    auto fresh = testing::make_record(*schema, "NEW", mo, "2016-05-10T10:00:00Z", "2016-05-10T12:00:00Z");
    fresh.geo = GeoPoint{56.0, 14.0};
    auto fresh_stored = testing::stored(*schema, fresh);

    CHECK_FALSE(detect_series(*fresh_stored, {}, cfg));

    auto near_mo = mo;
    near_mo.insert("gods_kontanter_smycken"); // Jaccard 5/6
    auto near = testing::make_record(*schema, "NEAR", near_mo, "2016-05-07T09:00:00Z", "2016-05-07T10:00:00Z");
    near.geo = GeoPoint{56.0 + 2.0 / (kEarthRadiusKm * M_PI / 180.0), 14.0}; // 2 km north
    auto far = near;
    far.record_id = "FAR";
    far.geo = GeoPoint{56.0 + 400.0 / (kEarthRadiusKm * M_PI / 180.0), 14.0};
    auto unrelated = testing::make_record(*schema, "OTHER", {"bo_lagenhet"}, "2016-05-10T10:00:00Z",
                                          "2016-05-10T10:00:00Z");
    auto stale = near;
    stale.record_id = "STALE";
    stale.time_interval = TimeInterval{parse_instant("2016-03-01T00:00:00Z"), parse_instant("2016-03-01T01:00:00Z")};

    auto alert = detect_series(*fresh_stored, testing::stored_all(*schema, {near, far, unrelated, stale, fresh}), cfg);
    REQUIRE(alert);
    REQUIRE(alert->matches.size() == 1);
    const auto& m = alert->matches[0];
    CHECK(m.record_id == "NEAR");
    CHECK(m.score.value == doctest::Approx(5.0 / 6.0));
    CHECK(*m.spatial_km == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(*m.temporal_gap_hours == doctest::Approx(72.0));
    CHECK(alert->new_record_id == "NEW");
    CHECK(alert->rule.d_max_km == 30);

    CHECK_FALSE(detect_series(*fresh_stored, testing::stored_all(*schema, {far}), cfg));

    // Without a position on one side only MO and time decide.
    auto nowhere = far;
    nowhere.record_id = "NOWHERE";
    nowhere.geo.reset();
    alert = detect_series(*fresh_stored, testing::stored_all(*schema, {nowhere}), cfg);
    REQUIRE(alert);
    CHECK_FALSE(alert->matches[0].spatial_km);

    alert->alert_id = "A1";
    alert->detected_at = parse_instant("2016-05-10T12:00:01Z");
    auto back = alert_from_json(to_json(*alert, *schema), *schema);
    CHECK(back.alert_id == "A1");
    CHECK(back.matches[0].record_id == "NOWHERE");
    CHECK(back.matches[0].score.value == doctest::Approx(alert->matches[0].score.value));
}

TEST_CASE("evaluate linkage conventions") {
    SeriesTruth truth{{"a", "S1"}, {"b", "S1"}, {"c", "S2"}, {"d", "S2"}, {"e", std::nullopt}};
    ClusterSet perfect{{{"a", "b"}, {"c", "d"}, {"e"}}, 0.3};
    auto eval = evaluate_linkage(perfect, truth);
    CHECK(eval.precision == 1.0);
    CHECK(eval.recall == 1.0);
    CHECK(eval.f1 == 1.0);

    ClusterSet singletons{{{"a"}, {"b"}, {"c"}, {"d"}, {"e"}}, 0.0};
    eval = evaluate_linkage(singletons, truth);
    CHECK(eval.precision == 1.0);
    CHECK(eval.recall == 0.0);
    CHECK(eval.f1 == 0.0);

    ClusterSet lumped{{{"a", "b", "c", "d", "e"}}, 1.0};
    eval = evaluate_linkage(lumped, truth);
    CHECK(eval.predicted_pairs == 10);
    CHECK(eval.true_positive_pairs == 2);
    CHECK(eval.precision == doctest::Approx(0.2));
    CHECK(eval.recall == 1.0);
    CHECK(eval.f1 == doctest::Approx(2 * 0.2 / 1.2));

    ClusterSet stray{{{"a", "zz"}}, 0.3};
    CHECK_THROWS_AS(evaluate_linkage(stray, truth), std::invalid_argument);
}
