#pragma once

// Shared fixtures and brute-force oracles for the test suites. Oracles here
// deliberately avoid the library's fast paths (bitsets, Lance-Williams
// updates, contingency counting).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "crimelink/linkage.hpp"
#include "crimelink/record_store.hpp"
#include "crimelink/schema.hpp"
#include "crimelink/synth.hpp"

namespace testing {

using namespace crimelink;

inline std::filesystem::path data_dir() { return CRIMELINK_DATA_DIR; }

inline std::shared_ptr<const FormSchema> burglary_schema() {
    static auto schema = std::make_shared<const FormSchema>(load_schema_file(data_dir() / "burglary_schema.json"));
    return schema;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("crimelink-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline CrimeRecord make_record(const FormSchema& schema, std::string id, std::set<std::string> checked,
                               const std::string& earliest = "2016-03-01T14:05:00Z",
                               const std::string& latest = "2016-03-01T14:05:00Z") {
    CrimeRecord r;
    r.record_id = std::move(id);
    r.case_number = "0000-K" + r.record_id;
    r.schema_digest = schema.digest();
    r.checked = std::move(checked);
    r.address = "Testgatan 1";
    r.time_interval = TimeInterval{parse_instant(earliest), parse_instant(latest)};
    r.registered_at = parse_instant(latest);
    return r;
}

// Isolated house in the countryside.
inline CrimeRecord rural_house_record(const FormSchema& schema) {
    auto r = make_record(schema, "HUS1", {"omr_landsbygd", "omr_enskilt"}, "2016-06-10T08:00:00Z",
                         "2016-06-12T18:30:00Z");
    r.case_number = "5000-K123456-16";
    r.address = "Ensliga vägen 3, Hörby";
    return r;
}

inline RecordPtr stored(const FormSchema& schema, const CrimeRecord& r) {
    return std::make_shared<const StoredRecord>(StoredRecord{r, encode_binary(r, schema)});
}

inline RecordSet stored_all(const FormSchema& schema, const std::vector<CrimeRecord>& records) {
    RecordSet out;
    for (const auto& r : records)
        out.push_back(stored(schema, r));
    return out;
}

// Record with bits set at the given indices (schema-agnostic helper).
inline RecordPtr bits_record(std::string id, std::size_t size, std::initializer_list<std::size_t> ones) {
    StoredRecord s;
    s.record.record_id = std::move(id);
    s.bits = BitVector(size);
    for (auto i : ones)
        s.bits.set(i);
    return std::make_shared<const StoredRecord>(std::move(s));
}

// ---------------------------------------------------------------- oracles

// Jaccard on id sets.
inline double jaccard_sets(const std::set<std::string>& a, const std::set<std::string>& b) {
    std::vector<std::string> both, either;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(either));
    return either.empty() ? 0.0 : static_cast<double>(both.size()) / static_cast<double>(either.size());
}

inline double jaccard_bits_naive(const BitVector& a, const BitVector& b) {
    std::size_t both = 0, either = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        both += a.test(i) && b.test(i);
        either += a.test(i) || b.test(i);
    }
    return either == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(either);
}

// Agglomeration that recomputes every average linkage from member pairs at
// every step. Same tie rule: smallest (representative, representative) pair,
// where a representative is the cluster's smallest record id.
inline std::vector<std::vector<std::string>> brute_force_clusters(const RecordSet& records, double threshold) {
    std::vector<std::vector<RecordPtr>> clusters;
    for (const auto& r : records)
        clusters.push_back({r});
    auto rep = [](const std::vector<RecordPtr>& c) {
        std::string best = c.front()->record.record_id;
        for (const auto& r : c)
            best = std::min(best, r->record.record_id);
        return best;
    };
    for (;;) {
        if (clusters.size() < 2)
            break;
        double best = std::numeric_limits<double>::infinity();
        std::pair<std::string, std::string> best_key;
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < clusters.size(); ++i)
            for (std::size_t j = i + 1; j < clusters.size(); ++j) {
                double sum = 0.0;
                for (const auto& x : clusters[i])
                    for (const auto& y : clusters[j])
                        sum += 1.0 - jaccard_bits_naive(x->bits, y->bits);
                const double avg = sum / static_cast<double>(clusters[i].size() * clusters[j].size());
                auto ri = rep(clusters[i]), rj = rep(clusters[j]);
                auto key = ri < rj ? std::pair(ri, rj) : std::pair(rj, ri);
                const bool take = avg < best - kDistanceTieEpsilon ||
                                  (avg <= best + kDistanceTieEpsilon && key < best_key);
                if (take) {
                    best = avg;
                    best_key = key;
                    bi = i;
                    bj = j;
                }
            }
        if (best > threshold + kDistanceTieEpsilon)
            break;
        clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
    }
    std::vector<std::vector<std::string>> out;
    for (const auto& c : clusters) {
        std::vector<std::string> ids;
        for (const auto& r : c)
            ids.push_back(r->record.record_id);
        std::sort(ids.begin(), ids.end());
        out.push_back(std::move(ids));
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct PairCounts {
    std::size_t tp = 0, predicted = 0, truth = 0;
};

// Enumerates every unordered pair of clustered records.
inline PairCounts enumerate_pairs(const std::vector<std::vector<std::string>>& clusters, const SeriesTruth& truth) {
    std::map<std::string, std::size_t> cluster_of;
    std::vector<std::string> ids;
    for (std::size_t c = 0; c < clusters.size(); ++c)
        for (const auto& id : clusters[c]) {
            cluster_of[id] = c;
            ids.push_back(id);
        }
    PairCounts pc;
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = i + 1; j < ids.size(); ++j) {
            const auto& si = truth.at(ids[i]);
            const auto& sj = truth.at(ids[j]);
            const bool same_series = si && sj && *si == *sj;
            const bool same_cluster = cluster_of[ids[i]] == cluster_of[ids[j]];
            pc.truth += same_series;
            pc.predicted += same_cluster;
            pc.tp += same_series && same_cluster;
        }
    return pc;
}

// Full-scan filter over id sets and raw fields.
inline std::set<std::string> naive_search(const std::vector<CrimeRecord>& records, const SearchQuery& q) {
    std::set<std::string> out;
    for (const auto& r : records) {
        bool ok = true;
        for (const auto& id : q.required)
            ok = ok && r.checked.count(id);
        for (const auto& id : q.excluded)
            ok = ok && !r.checked.count(id);
        if (ok && q.time_window)
            ok = r.time_interval && !(r.time_interval->latest < q.time_window->earliest) &&
                 !(q.time_window->latest < r.time_interval->earliest);
        if (ok && q.bbox && r.geo)
            ok = r.geo->lat >= q.bbox->min_lat && r.geo->lat <= q.bbox->max_lat && r.geo->lon >= q.bbox->min_lon &&
                 r.geo->lon <= q.bbox->max_lon;
        if (ok)
            out.insert(r.record_id);
    }
    return out;
}

// Minute-by-minute aoristic grid for minute-aligned intervals.
inline std::array<std::array<double, 24>, 7> aoristic_by_minutes(const std::vector<CrimeRecord>& records) {
    using namespace std::chrono;
    std::array<std::array<double, 24>, 7> grid{};
    auto cell = [&](sys_time<minutes> t) -> double& {
        auto day = floor<days>(t);
        unsigned dow = weekday{day}.iso_encoding() - 1;
        return grid[dow][static_cast<std::size_t>(duration_cast<hours>(t - day).count())];
    };
    for (const auto& r : records) {
        auto e = floor<minutes>(r.time_interval->earliest);
        auto l = floor<minutes>(r.time_interval->latest);
        auto len = (l - e).count();
        if (len == 0) {
            cell(e) += 1.0;
        } else if (len >= 168 * 60) {
            for (auto& d : grid)
                for (auto& w : d)
                    w += 1.0 / 168.0;
        } else {
            for (auto t = e; t < l; t += minutes{1})
                cell(t) += 1.0 / static_cast<double>(len);
        }
    }
    return grid;
}

// Splits generated report text into (heading, lines) blocks, skipping the
// header. Assumes the note has no blank lines.
inline std::vector<std::pair<std::string, std::vector<std::string>>> report_blocks(const std::string& text) {
    std::vector<std::pair<std::string, std::vector<std::string>>> blocks;
    std::istringstream in(text);
    std::string line;
    bool expect_heading = false;
    while (std::getline(in, line)) {
        if (line.empty()) {
            expect_heading = true;
        } else if (expect_heading) {
            blocks.push_back({line, {}});
            expect_heading = false;
        } else if (!blocks.empty()) {
            blocks.back().second.push_back(line);
        }
    }
    return blocks;
}

} // namespace testing
