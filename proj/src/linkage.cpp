#include "crimelink/linkage.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace crimelink {

using nlohmann::json;

SimilarityMetric metric_from_string(const std::string& name) {
    if (name == "jaccard")
        return SimilarityMetric::jaccard;
    if (name == "cosine")
        return SimilarityMetric::cosine;
    throw std::invalid_argument("unknown similarity metric '" + name + "'");
}

std::string to_string(SimilarityMetric metric) {
    return metric == SimilarityMetric::cosine ? "cosine" : "jaccard";
}

double similarity(const BitVector& a, const BitVector& b, SimilarityMetric metric) {
    const auto both = a.and_count(b);
    if (metric == SimilarityMetric::cosine) {
        const auto na = a.popcount();
        const auto nb = b.popcount();
        if (na == 0 || nb == 0)
            return 0.0;
        if (na == nb && both == na)
            return 1.0;
        return static_cast<double>(both) / std::sqrt(static_cast<double>(na) * static_cast<double>(nb));
    }
    const auto either = a.or_count(b);
    if (either == 0)
        return 0.0;
    return static_cast<double>(both) / static_cast<double>(either);
}

SimilarityScore score_pair(const BitVector& a, const BitVector& b, SimilarityMetric metric) {
    SimilarityScore s;
    s.value = similarity(a, b, metric);
    s.shared = BitVector(a.size());
    for (auto i : a.ones())
        if (b.test(i))
            s.shared.set(i);
    return s;
}

std::vector<RankedRecord> rank_by_reference(const StoredRecord& reference, const RecordSet& candidates,
                                            SimilarityMetric metric) {
    std::vector<RankedRecord> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        if (c->record.record_id == reference.record.record_id)
            continue;
        out.push_back({c->record.record_id, score_pair(reference.bits, c->bits, metric)});
    }
    std::sort(out.begin(), out.end(), [](const RankedRecord& a, const RankedRecord& b) {
        if (a.score.value != b.score.value)
            return a.score.value > b.score.value;
        return a.record_id < b.record_id;
    });
    return out;
}

namespace {

// Strict upper triangle of an n x n symmetric matrix.
class CondensedMatrix {
public:
    explicit CondensedMatrix(std::size_t n) : n_(n), data_(n < 2 ? 0 : n * (n - 1) / 2) {}
    double& at(std::size_t i, std::size_t j) {
        if (i > j)
            std::swap(i, j);
        return data_[i * n_ - i * (i + 1) / 2 + (j - i - 1)];
    }

private:
    std::size_t n_;
    std::vector<double> data_;
};

} // namespace

ClusterSet cluster(const RecordSet& records, double threshold, SimilarityMetric metric) {
    if (records.empty())
        throw std::invalid_argument("cannot cluster an empty record set");
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw std::invalid_argument("cluster threshold must lie in [0, 1]");

    // Sorting by id makes the slot index of a cluster's smallest member its
    // representative, so index order is the tie-break order.
    RecordSet items = records;
    std::sort(items.begin(), items.end(),
              [](const RecordPtr& a, const RecordPtr& b) { return a->record.record_id < b->record.record_id; });
    for (std::size_t i = 1; i < items.size(); ++i)
        if (items[i]->record.record_id == items[i - 1]->record.record_id)
            throw std::invalid_argument("duplicate record id '" + items[i]->record.record_id + "' in cluster input");

    const std::size_t n = items.size();
    CondensedMatrix dist(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            dist.at(i, j) = 1.0 - similarity(items[i]->bits, items[j]->bits, metric);

    std::vector<std::vector<std::size_t>> members(n);
    for (std::size_t i = 0; i < n; ++i)
        members[i] = {i};
    std::vector<bool> active(n, true);
    std::vector<std::size_t> nn(n, n);
    std::vector<double> nn_dist(n, std::numeric_limits<double>::infinity());

    auto better = [](double d, std::size_t j, double best_d, std::size_t best_j) {
        if (d < best_d - kDistanceTieEpsilon)
            return true;
        return d <= best_d + kDistanceTieEpsilon && j < best_j;
    };
    auto refresh = [&](std::size_t i) {
        nn[i] = n;
        nn_dist[i] = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || !active[j])
                continue;
            double d = dist.at(i, j);
            if (nn[i] == n || better(d, j, nn_dist[i], nn[i])) {
                nn[i] = j;
                nn_dist[i] = d;
            }
        }
    };
    for (std::size_t i = 0; i < n; ++i)
        refresh(i);

    std::size_t remaining = n;
    while (remaining > 1) {
        // Global minimum; ties go to the smallest (low, high) slot pair.
        std::size_t a = n, b = n;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i] || nn[i] == n)
                continue;
            std::size_t lo = std::min(i, nn[i]), hi = std::max(i, nn[i]);
            double d = nn_dist[i];
            bool take = a == n || d < best - kDistanceTieEpsilon ||
                        (d <= best + kDistanceTieEpsilon && std::pair(lo, hi) < std::pair(a, b));
            if (take) {
                a = lo;
                b = hi;
                best = d;
            }
        }
        if (a == n || best > threshold + kDistanceTieEpsilon)
            break;

        const double wa = static_cast<double>(members[a].size());
        const double wb = static_cast<double>(members[b].size());
        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k] || k == a || k == b)
                continue;
            dist.at(a, k) = (wa * dist.at(a, k) + wb * dist.at(b, k)) / (wa + wb);
        }
        members[a].insert(members[a].end(), members[b].begin(), members[b].end());
        members[b].clear();
        active[b] = false;
        --remaining;

        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k])
                continue;
            if (k == a || nn[k] == a || nn[k] == b) {
                refresh(k);
            } else if (better(dist.at(a, k), a, nn_dist[k], nn[k])) {
                nn[k] = a;
                nn_dist[k] = dist.at(a, k);
            }
        }
    }

    ClusterSet out;
    out.threshold = threshold;
    for (std::size_t i = 0; i < n; ++i) {
        if (!active[i])
            continue;
        std::vector<std::string> ids;
        for (auto m : members[i])
            ids.push_back(items[m]->record.record_id);
        std::sort(ids.begin(), ids.end());
        out.clusters.push_back(std::move(ids));
    }
    std::sort(out.clusters.begin(), out.clusters.end());
    return out;
}

FrequencyTable descriptive_stats(const RecordSet& records, std::size_t parameter_count) {
    FrequencyTable table;
    table.n = records.size();
    table.counts.assign(parameter_count, 0);
    for (const auto& r : records) {
        if (r->bits.size() != parameter_count)
            throw std::invalid_argument("record '" + r->record.record_id + "' encoded with a different schema");
        for (auto i : r->bits.ones())
            ++table.counts[i];
    }
    return table;
}

double AoristicGrid::total() const {
    double sum = 0.0;
    for (const auto& day : weights)
        for (double w : day)
            sum += w;
    return sum;
}

AoristicGrid aoristic(const RecordSet& records) {
    using namespace std::chrono;
    constexpr auto kWeek = hours{168};
    AoristicGrid grid;
    auto cell = [&](Instant t) -> double& {
        auto day = floor<days>(t);
        const unsigned dow = weekday{day}.iso_encoding() - 1;
        auto hour = duration_cast<hours>(t - day).count();
        return grid.weights[dow][static_cast<std::size_t>(hour)];
    };
    for (const auto& r : records) {
        if (!r->record.time_interval)
            throw std::invalid_argument("record '" + r->record.record_id + "' has no time interval");
        const auto [earliest, latest] = *r->record.time_interval;
        if (latest < earliest)
            throw std::invalid_argument("record '" + r->record.record_id + "' has an inverted time interval");
        const auto span = latest - earliest;
        if (span == milliseconds{0}) {
            cell(earliest) += 1.0;
            continue;
        }
        if (span >= kWeek) {
            for (auto& day : grid.weights)
                for (double& w : day)
                    w += 1.0 / 168.0;
            continue;
        }
        const double total = static_cast<double>(span.count());
        for (Instant t = earliest; t < latest;) {
            Instant next = std::min<Instant>(floor<hours>(t) + hours{1}, latest);
            cell(t) += static_cast<double>((next - t).count()) / total;
            t = next;
        }
    }
    return grid;
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
    constexpr double rad = std::numbers::pi / 180.0;
    const double dlat = (b.lat - a.lat) * rad;
    const double dlon = (b.lon - a.lon) * rad;
    const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

double temporal_gap_hours(const TimeInterval& a, const TimeInterval& b) {
    if (a.latest < b.earliest)
        return hours_between(a.latest, b.earliest);
    if (b.latest < a.earliest)
        return hours_between(b.latest, a.earliest);
    return 0.0;
}

std::optional<SeriesAlert> detect_series(const StoredRecord& fresh, const RecordSet& stored,
                                         const DetectorConfig& config) {
    SeriesAlert alert;
    alert.new_record_id = fresh.record.record_id;
    alert.rule = config;
    for (const auto& candidate : stored) {
        const auto& other = candidate->record;
        if (other.record_id == fresh.record.record_id)
            continue;
        auto score = score_pair(fresh.bits, candidate->bits, config.metric);
        if (score.value < config.s_min)
            continue;
        SeriesMatch match{other.record_id, std::move(score), std::nullopt, std::nullopt};
        if (fresh.record.time_interval && other.time_interval) {
            match.temporal_gap_hours = temporal_gap_hours(*fresh.record.time_interval, *other.time_interval);
            if (*match.temporal_gap_hours > config.w_days * 24.0)
                continue;
        }
        if (fresh.record.geo && other.geo) {
            match.spatial_km = haversine_km(*fresh.record.geo, *other.geo);
            if (*match.spatial_km > config.d_max_km)
                continue;
        }
        alert.matches.push_back(std::move(match));
    }
    if (alert.matches.empty())
        return std::nullopt;
    std::sort(alert.matches.begin(), alert.matches.end(), [](const SeriesMatch& a, const SeriesMatch& b) {
        if (a.score.value != b.score.value)
            return a.score.value > b.score.value;
        return a.record_id < b.record_id;
    });
    return alert;
}

LinkageEval evaluate_linkage(const ClusterSet& predicted, const SeriesTruth& truth) {
    // Contingency counts between predicted clusters and true series.
    std::size_t tp = 0, predicted_pairs = 0;
    std::unordered_map<std::string, std::size_t> series_sizes;
    for (const auto& c : predicted.clusters) {
        predicted_pairs += c.size() * (c.size() - (c.empty() ? 0 : 1)) / 2;
        std::unordered_map<std::string, std::size_t> overlap;
        for (const auto& id : c) {
            auto it = truth.find(id);
            if (it == truth.end())
                throw std::invalid_argument("record '" + id + "' is missing from the truth map");
            if (it->second) {
                ++overlap[*it->second];
                ++series_sizes[*it->second];
            }
        }
        for (const auto& [series, k] : overlap)
            tp += k * (k - 1) / 2;
    }
    std::size_t truth_pairs = 0;
    for (const auto& [series, k] : series_sizes)
        truth_pairs += k * (k - 1) / 2;

    LinkageEval e;
    e.true_positive_pairs = tp;
    e.predicted_pairs = predicted_pairs;
    e.truth_pairs = truth_pairs;
    e.precision = predicted_pairs == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(predicted_pairs);
    e.recall = truth_pairs == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(truth_pairs);
    e.f1 = e.precision + e.recall == 0.0 ? 0.0 : 2.0 * e.precision * e.recall / (e.precision + e.recall);
    return e;
}

namespace {

json ids_of(const BitVector& bits, const FormSchema& schema) {
    json ids = json::array();
    for (auto i : bits.ones())
        ids.push_back(schema.parameter_at(i).id);
    return ids;
}

} // namespace

json to_json(const AoristicGrid& grid) {
    json rows = json::array();
    for (const auto& day : grid.weights)
        rows.push_back(day);
    return rows;
}

json to_json(const ClusterSet& clusters) {
    return {{"threshold", clusters.threshold}, {"clusters", clusters.clusters}};
}

json to_json(const FrequencyTable& table, const FormSchema& schema) {
    json params = json::array();
    for (std::size_t i = 0; i < table.counts.size(); ++i)
        params.push_back({{"id", schema.parameter_at(i).id},
                          {"count", table.counts[i]},
                          {"proportion", table.proportion(i)}});
    return {{"n", table.n}, {"parameters", std::move(params)}};
}

json to_json(const std::vector<RankedRecord>& ranking, const FormSchema& schema) {
    json out = json::array();
    for (const auto& r : ranking)
        out.push_back({{"record_id", r.record_id}, {"score", r.score.value}, {"shared", ids_of(r.score.shared, schema)}});
    return out;
}

json to_json(const DetectorConfig& c) {
    return {{"s_min", c.s_min}, {"d_max_km", c.d_max_km}, {"w_days", c.w_days}, {"metric", to_string(c.metric)}};
}

json to_json(const SeriesAlert& alert, const FormSchema& schema) {
    json matches = json::array();
    for (const auto& m : alert.matches)
        matches.push_back({{"record_id", m.record_id},
                           {"score", m.score.value},
                           {"shared", ids_of(m.score.shared, schema)},
                           {"spatial_km", m.spatial_km ? json(*m.spatial_km) : json(nullptr)},
                           {"temporal_gap_hours", m.temporal_gap_hours ? json(*m.temporal_gap_hours) : json(nullptr)}});
    return {{"alert_id", alert.alert_id},
            {"detected_at", format_instant(alert.detected_at)},
            {"new_record_id", alert.new_record_id},
            {"matches", std::move(matches)},
            {"rule", to_json(alert.rule)}};
}

json to_json(const LinkageEval& e) {
    return {{"precision", e.precision},
            {"recall", e.recall},
            {"f1", e.f1},
            {"true_positive_pairs", e.true_positive_pairs},
            {"predicted_pairs", e.predicted_pairs},
            {"truth_pairs", e.truth_pairs}};
}

SeriesAlert alert_from_json(const json& j, const FormSchema& schema) {
    SeriesAlert a;
    a.alert_id = j.at("alert_id").get<std::string>();
    a.detected_at = parse_instant(j.at("detected_at").get<std::string>());
    a.new_record_id = j.at("new_record_id").get<std::string>();
    const json& rule = j.at("rule");
    a.rule.s_min = rule.at("s_min").get<double>();
    a.rule.d_max_km = rule.at("d_max_km").get<double>();
    a.rule.w_days = rule.at("w_days").get<double>();
    a.rule.metric = metric_from_string(rule.value("metric", "jaccard"));
    for (const auto& m : j.at("matches")) {
        SeriesMatch match;
        match.record_id = m.at("record_id").get<std::string>();
        match.score.value = m.at("score").get<double>();
        match.score.shared = BitVector(schema.parameter_count());
        for (const auto& id : m.at("shared")) {
            const Parameter* p = schema.find(id.get<std::string>());
            if (!p)
                throw std::invalid_argument("alert references unknown parameter " + id.dump());
            match.score.shared.set(p->bit_index);
        }
        if (!m.at("spatial_km").is_null())
            match.spatial_km = m.at("spatial_km").get<double>();
        if (!m.at("temporal_gap_hours").is_null())
            match.temporal_gap_hours = m.at("temporal_gap_hours").get<double>();
        a.matches.push_back(std::move(match));
    }
    return a;
}

} // namespace crimelink
