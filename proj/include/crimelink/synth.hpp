#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "crimelink/linkage.hpp"

namespace crimelink {

// Settings for a synthetic corpus with planted offender series. Every
// field has a JSON key of the same name.
struct GeneratorConfig {
    std::uint64_t seed = 1;
    std::size_t n_records = 1000;
    std::size_t n_series = 10;
    std::size_t series_size_min = 8;
    std::size_t series_size_max = 8;
    std::size_t signature_bits = 10;
    double noise_flip_prob = 0.05;
    std::size_t member_noise_bits = 1; // up to this many extra bits per series member
    std::size_t background_bits_min = 4;
    std::size_t background_bits_max = 14;
    GeoPoint geo_center{56.03, 14.16};
    double geo_spread_km = 80.0;
    double series_spread_km = 5.0;
    Instant time_start = parse_instant("2016-01-01T00:00:00Z");
    Instant time_end = parse_instant("2017-01-01T00:00:00Z");
    double series_span_days = 20.0;
    double max_interval_hours = 72.0;
    double point_fraction = 0.2;
    std::string id_prefix = "R";
};

nlohmann::json to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

struct Corpus {
    std::vector<CrimeRecord> records;
    SeriesTruth truth; // record id -> series id, nullopt for background records
};

// Deterministic for a fixed (config, schema). Randomness comes from
// std::mt19937_64 seeded with config.seed; integers in [0, n) are drawn by
// rejection sampling (discard draws >= 2^64 - 2^64 mod n, then take mod n)
// and reals in [0, 1) as (draw >> 11) * 2^-53, so corpora are reproducible
// across standard libraries.
Corpus generate(const GeneratorConfig& config, const FormSchema& schema);

// records.jsonl and truth.csv ("record_id,series_id"; empty series for
// background records).
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
SeriesTruth read_truth_csv(const std::filesystem::path& path);

// Portable draws on top of a 64-bit Mersenne Twister.
class CorpusRng {
public:
    explicit CorpusRng(std::uint64_t seed) : engine_(seed) {}
    std::uint64_t next() { return engine_(); }
    std::uint64_t below(std::uint64_t n);
    std::size_t between(std::size_t lo, std::size_t hi); // inclusive
    double unit();                                      // [0, 1)
    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
    bool chance(double p) { return unit() < p; }

private:
    std::mt19937_64 engine_;
};

} // namespace crimelink
