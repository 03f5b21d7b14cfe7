#include "crimelink/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace crimelink {

using nlohmann::json;

std::uint64_t CorpusRng::below(std::uint64_t n) {
    if (n == 0)
        throw std::invalid_argument("empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                (std::numeric_limits<std::uint64_t>::max() % n + 1) % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x > limit);
    return x % n;
}

std::size_t CorpusRng::between(std::size_t lo, std::size_t hi) {
    if (hi < lo)
        throw std::invalid_argument("inverted range");
    return lo + static_cast<std::size_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
}

double CorpusRng::unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

json to_json(const GeneratorConfig& c) {
    return {{"seed", c.seed},
            {"n_records", c.n_records},
            {"n_series", c.n_series},
            {"series_size_min", c.series_size_min},
            {"series_size_max", c.series_size_max},
            {"signature_bits", c.signature_bits},
            {"noise_flip_prob", c.noise_flip_prob},
            {"member_noise_bits", c.member_noise_bits},
            {"background_bits_min", c.background_bits_min},
            {"background_bits_max", c.background_bits_max},
            {"geo_center", {{"lat", c.geo_center.lat}, {"lon", c.geo_center.lon}}},
            {"geo_spread_km", c.geo_spread_km},
            {"series_spread_km", c.series_spread_km},
            {"time_start", format_instant(c.time_start)},
            {"time_end", format_instant(c.time_end)},
            {"series_span_days", c.series_span_days},
            {"max_interval_hours", c.max_interval_hours},
            {"point_fraction", c.point_fraction},
            {"id_prefix", c.id_prefix}};
}

GeneratorConfig generator_config_from_json(const json& j) {
    GeneratorConfig c;
    auto get = [&](const char* key, auto& field) {
        if (auto it = j.find(key); it != j.end())
            it->get_to(field);
    };
    get("seed", c.seed);
    get("n_records", c.n_records);
    get("n_series", c.n_series);
    get("series_size_min", c.series_size_min);
    get("series_size_max", c.series_size_max);
    get("signature_bits", c.signature_bits);
    get("noise_flip_prob", c.noise_flip_prob);
    get("member_noise_bits", c.member_noise_bits);
    get("background_bits_min", c.background_bits_min);
    get("background_bits_max", c.background_bits_max);
    if (auto it = j.find("geo_center"); it != j.end())
        c.geo_center = {it->at("lat").get<double>(), it->at("lon").get<double>()};
    get("geo_spread_km", c.geo_spread_km);
    get("series_spread_km", c.series_spread_km);
    if (auto it = j.find("time_start"); it != j.end())
        c.time_start = parse_instant(it->get<std::string>());
    if (auto it = j.find("time_end"); it != j.end())
        c.time_end = parse_instant(it->get<std::string>());
    get("series_span_days", c.series_span_days);
    get("max_interval_hours", c.max_interval_hours);
    get("point_fraction", c.point_fraction);
    get("id_prefix", c.id_prefix);
    return c;
}

namespace {

void check_config(const GeneratorConfig& c, const FormSchema& schema) {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
    };
    prob(c.noise_flip_prob, "noise_flip_prob");
    prob(c.point_fraction, "point_fraction");
    if (c.signature_bits > schema.parameter_count())
        throw std::invalid_argument("signature_bits exceeds the schema's parameter count");
    if (c.background_bits_min > c.background_bits_max || c.background_bits_max > schema.parameter_count())
        throw std::invalid_argument("background bit range is invalid for this schema");
    if (c.n_series > 0 && (c.series_size_min < 1 || c.series_size_min > c.series_size_max))
        throw std::invalid_argument("series size range is invalid");
    if (c.n_series * c.series_size_max > c.n_records)
        throw std::invalid_argument("planted series do not fit in n_records");
    if (c.time_end <= c.time_start)
        throw std::invalid_argument("time_end must be after time_start");
    if (c.series_span_days < 0.0 || c.max_interval_hours < 0.0 || c.geo_spread_km < 0.0 || c.series_spread_km < 0.0)
        throw std::invalid_argument("spans and spreads must be non-negative");
}

// Draws parameters for one record while respecting exclusive groups.
class BitPicker {
public:
    explicit BitPicker(const FormSchema& schema) : schema_(schema) {
        group_of_.assign(schema.parameter_count(), -1);
        int g = 0;
        for (const auto& section : schema.sections())
            for (const auto& group : section.exclusive_groups) {
                for (const auto& id : group)
                    group_of_[schema.find(id)->bit_index] = g;
                ++g;
            }
    }

    bool compatible(const BitVector& bits, std::size_t bit) const {
        if (bits.test(bit))
            return false;
        const int g = group_of_[bit];
        if (g < 0)
            return true;
        for (std::size_t other = 0; other < group_of_.size(); ++other)
            if (group_of_[other] == g && bits.test(other))
                return false;
        return true;
    }

    // Adds up to k compatible bits drawn uniformly; returns how many were added.
    std::size_t add_random(BitVector& bits, std::size_t k, CorpusRng& rng, std::size_t lo = 0,
                           std::size_t hi = std::size_t(-1)) const {
        hi = std::min(hi, bits.size());
        std::vector<std::size_t> order;
        for (std::size_t i = lo; i < hi; ++i)
            order.push_back(i);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);
        std::size_t added = 0;
        for (auto bit : order) {
            if (added == k)
                break;
            if (compatible(bits, bit)) {
                bits.set(bit);
                ++added;
            }
        }
        return added;
    }

    void satisfy_required_sections(BitVector& bits, CorpusRng& rng) const {
        std::size_t first = 0;
        for (const auto& section : schema_.sections()) {
            const std::size_t last = first + section.parameters.size();
            if (section.required) {
                bool hit = false;
                for (std::size_t b = first; b < last && !hit; ++b)
                    hit = bits.test(b);
                if (!hit)
                    add_random(bits, 1, rng, first, last);
            }
            first = last;
        }
    }

private:
    const FormSchema& schema_;
    std::vector<int> group_of_;
};

GeoPoint offset_point(const GeoPoint& center, double radius_km, CorpusRng& rng) {
    constexpr double km_per_degree = 2.0 * std::numbers::pi * kEarthRadiusKm / 360.0;
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double dist = radius_km * std::sqrt(rng.unit());
    const double dlat = dist * std::sin(angle) / km_per_degree;
    const double dlon = dist * std::cos(angle) / (km_per_degree * std::cos(center.lat * std::numbers::pi / 180.0));
    GeoPoint p{std::clamp(center.lat + dlat, -90.0, 90.0), center.lon + dlon};
    if (p.lon > 180.0)
        p.lon -= 360.0;
    if (p.lon < -180.0)
        p.lon += 360.0;
    // Six decimals (~0.1 m) keep the JSON compact and round-trip exact.
    p.lat = std::round(p.lat * 1e6) / 1e6;
    p.lon = std::round(p.lon * 1e6) / 1e6;
    return p;
}

Instant random_instant(Instant from, Instant to, CorpusRng& rng) {
    using namespace std::chrono;
    const auto span_min = duration_cast<minutes>(to - from).count();
    return from + minutes{static_cast<long long>(rng.below(static_cast<std::uint64_t>(std::max<long long>(span_min, 1))))};
}

TimeInterval random_interval(Instant start, const GeneratorConfig& c, CorpusRng& rng) {
    using namespace std::chrono;
    if (rng.chance(c.point_fraction) || c.max_interval_hours <= 0.0)
        return {start, start};
    const auto max_minutes = static_cast<std::uint64_t>(c.max_interval_hours * 60.0);
    const auto length = minutes{static_cast<long long>(1 + rng.below(std::max<std::uint64_t>(max_minutes, 1)))};
    return {start, start + length};
}

struct Draft {
    BitVector bits;
    GeoPoint geo;
    TimeInterval interval;
    std::optional<std::string> series;
};

} // namespace

Corpus generate(const GeneratorConfig& c, const FormSchema& schema) {
    using namespace std::chrono;
    check_config(c, schema);
    CorpusRng rng(c.seed);
    BitPicker picker(schema);
    std::vector<Draft> drafts;
    drafts.reserve(c.n_records);

    const auto series_span = duration_cast<milliseconds>(duration<double, std::ratio<86400>>(c.series_span_days));
    for (std::size_t s = 0; s < c.n_series; ++s) {
        char name[32];
        std::snprintf(name, sizeof name, "S%03zu", s + 1);
        BitVector signature(schema.parameter_count());
        if (picker.add_random(signature, c.signature_bits, rng) != c.signature_bits)
            throw std::invalid_argument("exclusive groups leave too few parameters for the signature");
        const GeoPoint center = offset_point(c.geo_center, c.geo_spread_km, rng);
        const Instant latest_start = c.time_end - series_span > c.time_start ? c.time_end - series_span : c.time_start;
        const Instant series_start = random_instant(c.time_start, latest_start, rng);
        const std::size_t size = rng.between(c.series_size_min, c.series_size_max);
        for (std::size_t m = 0; m < size; ++m) {
            Draft d{BitVector(schema.parameter_count()), {}, {}, std::string(name)};
            for (auto bit : signature.ones())
                if (!rng.chance(c.noise_flip_prob))
                    d.bits.set(bit);
            picker.add_random(d.bits, rng.between(0, c.member_noise_bits), rng);
            picker.satisfy_required_sections(d.bits, rng);
            d.geo = offset_point(center, c.series_spread_km, rng);
            d.interval = random_interval(random_instant(series_start, series_start + series_span, rng), c, rng);
            drafts.push_back(std::move(d));
        }
    }
    while (drafts.size() < c.n_records) {
        Draft d{BitVector(schema.parameter_count()), {}, {}, std::nullopt};
        picker.add_random(d.bits, rng.between(c.background_bits_min, c.background_bits_max), rng);
        picker.satisfy_required_sections(d.bits, rng);
        d.geo = offset_point(c.geo_center, c.geo_spread_km, rng);
        d.interval = random_interval(random_instant(c.time_start, c.time_end, rng), c, rng);
        drafts.push_back(std::move(d));
    }
    for (std::size_t i = drafts.size(); i > 1; --i)
        std::swap(drafts[i - 1], drafts[rng.below(i)]);

    Corpus corpus;
    corpus.records.reserve(drafts.size());
    const std::size_t width = std::max<std::size_t>(6, std::to_string(drafts.size()).size());
    for (std::size_t i = 0; i < drafts.size(); ++i) {
        auto& d = drafts[i];
        const std::string number = std::to_string(i + 1);
        CrimeRecord r;
        r.record_id = c.id_prefix + std::string(width - number.size(), '0') + number;
        r.case_number = "SYN-" + std::to_string(c.seed) + "-" + std::to_string(i + 1);
        r.schema_digest = schema.digest();
        r.checked = decode_binary(d.bits, schema);
        r.address = "Syntetisk väg " + std::to_string(i + 1);
        r.geo = d.geo;
        r.time_interval = d.interval;
        r.registered_at = d.interval.latest + minutes{static_cast<long long>(30 + rng.below(48 * 60))};
        corpus.truth.emplace(r.record_id, d.series);
        corpus.records.push_back(std::move(r));
    }
    return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream records(dir / "records.jsonl", std::ios::trunc | std::ios::binary);
    for (const auto& r : corpus.records)
        records << to_json(r).dump() << '\n';
    std::ofstream truth(dir / "truth.csv", std::ios::trunc | std::ios::binary);
    truth << "record_id,series_id\n";
    for (const auto& r : corpus.records) {
        const auto& s = corpus.truth.at(r.record_id);
        truth << r.record_id << ',' << (s ? *s : "") << '\n';
    }
    if (!records || !truth)
        throw std::runtime_error("failed to write corpus to " + dir.string());
}

SeriesTruth read_truth_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    SeriesTruth truth;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        auto comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error(path.string() + ": malformed line '" + line + "'");
        std::string series = line.substr(comma + 1);
        truth.emplace(line.substr(0, comma), series.empty() ? std::nullopt : std::optional(series));
    }
    return truth;
}

} // namespace crimelink
