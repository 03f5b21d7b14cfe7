#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crimelink/record_store.hpp"

namespace crimelink {

enum class SimilarityMetric { jaccard, cosine };

SimilarityMetric metric_from_string(const std::string& name);
std::string to_string(SimilarityMetric metric);

// Jaccard |a&b| / |a|b| (0 when both are empty) or cosine
// |a&b| / sqrt(|a||b|) (0 when either is empty). Throws on length mismatch.
double similarity(const BitVector& a, const BitVector& b, SimilarityMetric metric = SimilarityMetric::jaccard);

struct SimilarityScore {
    double value = 0.0;
    BitVector shared; // parameters checked in both records
};

SimilarityScore score_pair(const BitVector& a, const BitVector& b,
                           SimilarityMetric metric = SimilarityMetric::jaccard);

struct RankedRecord {
    std::string record_id;
    SimilarityScore score;
};

// Candidates ordered by similarity to the reference, descending; equal
// scores by ascending record id. A candidate with the reference's id is
// skipped.
std::vector<RankedRecord> rank_by_reference(const StoredRecord& reference, const RecordSet& candidates,
                                            SimilarityMetric metric = SimilarityMetric::jaccard);

struct ClusterSet {
    std::vector<std::vector<std::string>> clusters; // ids sorted; clusters sorted by first id
    double threshold = 0.0;
};

// Average-linkage agglomerative clustering on distance 1 - similarity.
// Clusters merge while their average pairwise distance is <= threshold.
// Equal-distance candidates are resolved by the lexicographically smallest
// pair of cluster representatives (smallest member id). Throws
// std::invalid_argument on empty input or a threshold outside [0, 1].
ClusterSet cluster(const RecordSet& records, double threshold,
                   SimilarityMetric metric = SimilarityMetric::jaccard);

// Distances closer than this are treated as tied.
inline constexpr double kDistanceTieEpsilon = 1e-12;

struct FrequencyTable {
    std::size_t n = 0;
    std::vector<std::size_t> counts; // by bit index
    double proportion(std::size_t bit) const {
        return n == 0 ? 0.0 : static_cast<double>(counts.at(bit)) / static_cast<double>(n);
    }
};

FrequencyTable descriptive_stats(const RecordSet& records, std::size_t parameter_count);

// Weekday (0 = Monday) x hour-of-day mass, UTC.
struct AoristicGrid {
    std::array<std::array<double, 24>, 7> weights{};
    double total() const;
};

// Each crime spreads unit mass over the weekday/hour cells its interval
// overlaps, proportional to overlap. Intervals of a week or more cover every
// cell evenly. Throws std::invalid_argument for a record without a time
// interval.
AoristicGrid aoristic(const RecordSet& records);

struct DetectorConfig {
    double s_min = 0.6;
    double d_max_km = 50.0;
    double w_days = 30.0;
    SimilarityMetric metric = SimilarityMetric::jaccard;
};

struct SeriesMatch {
    std::string record_id;
    SimilarityScore score;
    std::optional<double> spatial_km;         // absent unless both records have geo
    std::optional<double> temporal_gap_hours; // absent unless both have intervals
};

struct SeriesAlert {
    std::string alert_id;
    Instant detected_at{};
    std::string new_record_id;
    std::vector<SeriesMatch> matches; // by score descending, then record id
    DetectorConfig rule;
};

inline constexpr double kEarthRadiusKm = 6371.0;

double haversine_km(const GeoPoint& a, const GeoPoint& b);

// Hours separating two intervals; 0 when they overlap.
double temporal_gap_hours(const TimeInterval& a, const TimeInterval& b);

// Stored records linked to `fresh` by MO similarity plus proximity in time
// and (when both positions are known) space. Returns nullopt when nothing
// qualifies. alert_id and detected_at are left for the caller to assign.
std::optional<SeriesAlert> detect_series(const StoredRecord& fresh, const RecordSet& stored,
                                         const DetectorConfig& config);

struct LinkageEval {
    double precision = 1.0;
    double recall = 1.0;
    double f1 = 1.0;
    std::size_t true_positive_pairs = 0;
    std::size_t predicted_pairs = 0;
    std::size_t truth_pairs = 0;
};

using SeriesTruth = std::map<std::string, std::optional<std::string>>;

// Pairwise precision/recall/F1. With no predicted pairs precision is 1; with
// no true pairs recall is 1. Throws std::invalid_argument when a clustered
// record is missing from the truth.
LinkageEval evaluate_linkage(const ClusterSet& predicted, const SeriesTruth& truth);

nlohmann::json to_json(const AoristicGrid& grid);
nlohmann::json to_json(const ClusterSet& clusters);
nlohmann::json to_json(const FrequencyTable& table, const FormSchema& schema);
nlohmann::json to_json(const std::vector<RankedRecord>& ranking, const FormSchema& schema);
nlohmann::json to_json(const SeriesAlert& alert, const FormSchema& schema);
nlohmann::json to_json(const DetectorConfig& config);
nlohmann::json to_json(const LinkageEval& eval);
SeriesAlert alert_from_json(const nlohmann::json& j, const FormSchema& schema);

} // namespace crimelink
