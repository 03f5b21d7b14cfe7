#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <sstream>

#include "crimelink/study_stats.hpp"

namespace crimelink::stats {

using nlohmann::json;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ','))
        cells.push_back(cell);
    if (!line.empty() && line.back() == ',')
        cells.emplace_back();
    for (auto& c : cells) {
        while (!c.empty() && (c.back() == '\r' || c.back() == ' '))
            c.pop_back();
        while (!c.empty() && c.front() == ' ')
            c.erase(c.begin());
    }
    return cells;
}

double parse_number(const std::string& text, std::size_t line_no) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty() || !std::isfinite(v))
        throw std::invalid_argument("line " + std::to_string(line_no) + ": '" + text + "' is not a number");
    return v;
}

std::vector<double> column(const PairedSample& s, bool first) {
    std::vector<double> out;
    for (auto [a, b] : s.pairs)
        out.push_back(first ? a : b);
    return out;
}

json measure_block(const PairedSample& s) {
    auto a = column(s, true);
    auto b = column(s, false);
    auto sa = mean_sd(a);
    auto sb = mean_sd(b);
    json block = {
        {"a", {{"mean", sa.mean}, {"sd", sa.sd}, {"box", to_json(box_summary(a))}}},
        {"b", {{"mean", sb.mean}, {"sd", sb.sd}, {"box", to_json(box_summary(b))}}},
        {"cohens_d", to_json(cohens_d_pooled(sa, sb))},
    };
    try {
        block["t_test"] = to_json(paired_t_test(s));
        block["cohens_dz"] = to_json(cohens_dz(s));
    } catch (const DegenerateSample& e) {
        block["t_test"] = {{"error", e.what()}};
    }
    return block;
}

} // namespace

StudyData read_study_csv(std::istream& in, const std::string& method_a, const std::string& method_b) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line))
        throw std::invalid_argument("empty study CSV");
    ++line_no;
    auto header = split_csv_line(line);
    if (header != std::vector<std::string>{"subject", "method", "time_s", "count"})
        throw std::invalid_argument("study CSV header must be subject,method,time_s,count");

    std::vector<std::string> methods;
    std::vector<std::string> subjects;
    std::map<std::string, std::map<std::string, std::pair<double, double>>> rows; // subject -> method -> (time, count)
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r")
            continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 4)
            throw std::invalid_argument("line " + std::to_string(line_no) + ": expected 4 columns");
        const auto& subject = cells[0];
        const auto& method = cells[1];
        if (std::find(methods.begin(), methods.end(), method) == methods.end())
            methods.push_back(method);
        if (!rows.count(subject))
            subjects.push_back(subject);
        auto& slot = rows[subject];
        if (slot.count(method))
            throw std::invalid_argument("line " + std::to_string(line_no) + ": duplicate measurement for subject " +
                                        subject + ", method " + method);
        slot[method] = {parse_number(cells[2], line_no), parse_number(cells[3], line_no)};
    }
    if (methods.size() != 2)
        throw std::invalid_argument("study CSV must contain exactly two methods, found " + std::to_string(methods.size()));

    StudyData data;
    data.method_a = method_a.empty() ? methods[0] : method_a;
    data.method_b = method_b.empty() ? (methods[0] == data.method_a ? methods[1] : methods[0]) : method_b;
    for (const auto& m : {data.method_a, data.method_b})
        if (std::find(methods.begin(), methods.end(), m) == methods.end())
            throw std::invalid_argument("method '" + m + "' not present in study CSV");
    data.time_s = {data.method_a, data.method_b, {}};
    data.count = {data.method_a, data.method_b, {}};
    for (const auto& subject : subjects) {
        const auto& slot = rows[subject];
        auto a = slot.find(data.method_a);
        auto b = slot.find(data.method_b);
        if (a == slot.end() || b == slot.end())
            throw std::invalid_argument("subject " + subject + " lacks a measurement for both methods");
        data.subjects.push_back(subject);
        data.time_s.pairs.emplace_back(a->second.first, b->second.first);
        data.count.pairs.emplace_back(a->second.second, b->second.second);
    }
    if (data.subjects.size() < 2)
        throw std::invalid_argument("study needs at least two subjects");
    return data;
}

json study_report(const StudyData& data) {
    json report;
    report["methods"] = {data.method_a, data.method_b};
    report["n"] = data.subjects.size();
    report["time_s"] = measure_block(data.time_s);
    report["count"] = measure_block(data.count);
    auto ta = mean_sd(column(data.time_s, true));
    auto tb = mean_sd(column(data.time_s, false));
    auto ca = mean_sd(column(data.count, true));
    auto cb = mean_sd(column(data.count, false));
    report["efficiency"] = to_json(efficiency_summary({data.method_a, ta, ca}, {data.method_b, tb, cb}));
    return report;
}

namespace {

std::string fmt(double v, int precision = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

std::string format_p(double p) {
    if (p < 1e-6)
        return "p < 0.000001";
    return "p = " + fmt(p, 6);
}

void append_block(std::ostringstream& out, const std::string& title, const json& block, const json& methods) {
    out << title << "\n";
    for (const char* side : {"a", "b"}) {
        const json& m = block[side];
        const json& box = m["box"];
        char line[256];
        std::snprintf(line, sizeof line, "  %-8s mean %10s  sd %9s  box [%s, %s, %s, %s, %s]\n",
                      methods[side == std::string("a") ? 0 : 1].get<std::string>().c_str(),
                      fmt(m["mean"].get<double>()).c_str(), fmt(m["sd"].get<double>()).c_str(),
                      fmt(box["min"].get<double>()).c_str(), fmt(box["q1"].get<double>()).c_str(),
                      fmt(box["median"].get<double>()).c_str(), fmt(box["q3"].get<double>()).c_str(),
                      fmt(box["max"].get<double>()).c_str());
        out << line;
    }
    const json& t = block["t_test"];
    if (t.contains("error")) {
        out << "  t-test   " << t["error"].get<std::string>() << "\n";
    } else {
        out << "  t-test   t = " << fmt(t["t"].get<double>()) << ", df = " << t["df"].get<int>()
            << ", " << format_p(t["p_two_sided"].get<double>()) << "\n";
        out << "  Cohen's d (pooled) = " << fmt(block["cohens_d"]["d"].get<double>(), 3)
            << ", d_z = " << fmt(block["cohens_dz"]["d"].get<double>(), 3) << "\n";
    }
}

} // namespace

std::string format_study_report(const json& r) {
    std::ostringstream out;
    out << "Paired study: " << r["methods"][0].get<std::string>() << " vs " << r["methods"][1].get<std::string>()
        << " (n = " << r["n"].get<std::size_t>() << ")\n\n";
    append_block(out, "Time (s)", r["time_s"], r["methods"]);
    out << "\n";
    append_block(out, "Data points", r["count"], r["methods"]);
    const json& e = r["efficiency"];
    out << "\nEfficiency\n";
    out << "  " << e["a"]["name"].get<std::string>() << " " << fmt(e["a"]["seconds_per_point"].get<double>())
        << " s/point, " << e["b"]["name"].get<std::string>() << " " << fmt(e["b"]["seconds_per_point"].get<double>())
        << " s/point\n";
    out << "  time ratio " << fmt(e["time_ratio"].get<double>(), 3) << " ("
        << fmt(100.0 * e["slowdown"].get<double>(), 0) << "% slower), count ratio "
        << fmt(e["count_ratio"].get<double>()) << ", efficiency ratio " << fmt(e["efficiency_ratio"].get<double>())
        << "\n";
    return out.str();
}

} // namespace crimelink::stats
