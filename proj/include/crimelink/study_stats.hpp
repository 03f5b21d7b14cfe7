#pragma once

#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace crimelink::stats {

class DegenerateSample : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

// Sample mean and standard deviation (n - 1 denominator).
MeanSd mean_sd(std::span<const double> values);

struct PairedSample {
    std::string label_a;
    std::string label_b;
    std::vector<std::pair<double, double>> pairs; // (a, b) per subject
};

struct TestResult {
    double t = 0.0;
    int df = 0;
    double p_two_sided = 1.0;
    double mean_diff = 0.0; // mean of a - b
    double sd_diff = 0.0;
};

// Paired two-sided t-test on a - b.
TestResult paired_t_test(const PairedSample& sample);

enum class EffectSizeMethod { pooled_sd, paired_dz };

struct EffectSize {
    double d = 0.0;
    EffectSizeMethod method = EffectSizeMethod::pooled_sd;
};

// (mean_a - mean_b) / sqrt((sd_a^2 + sd_b^2) / 2)
EffectSize cohens_d_pooled(MeanSd a, MeanSd b);
// mean(a - b) / sd(a - b)
EffectSize cohens_dz(const PairedSample& sample);

// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double df);
double student_t_quantile(double p, double df);
// P(T <= t) for a noncentral t with `df` degrees of freedom and
// noncentrality `ncp`, by quadrature over the chi-distributed scale.
double noncentral_t_cdf(double t, double df, double ncp);

inline constexpr double kQuadratureTolerance = 1e-8;

// Power of a paired t-test with n subjects (n may be fractional; df = n - 1).
double paired_t_power(double d, double n, double alpha, bool two_sided = true);

struct PowerRequest {
    double d = 0.8;
    double alpha = 0.05;
    double power = 0.8;
    bool two_sided = true;
};

struct PowerResult {
    double n_fractional = 0.0; // root of the continuous power equation
    int n_required = 0;        // smallest integer n >= 2 reaching the target
    double achieved_power = 0.0;
};

PowerResult required_sample_size(const PowerRequest& request);

struct MethodTotals {
    std::string name;
    MeanSd time_s;
    MeanSd count;
};

struct MethodEfficiency {
    std::string name;
    MeanSd time_s;
    MeanSd count;
    double seconds_per_point = 0.0;
};

// Ratios compare method A against method B:
//   time_ratio       = time(A) / time(B)
//   slowdown         = time_ratio - 1   ("A is x% slower")
//   count_ratio      = count(B) / count(A)
//   efficiency_ratio = sec_per_point(A) / sec_per_point(B)
struct EfficiencySummary {
    MethodEfficiency a;
    MethodEfficiency b;
    double time_ratio = 1.0;
    double slowdown = 0.0;
    double count_ratio = 1.0;
    double efficiency_ratio = 1.0;
};

EfficiencySummary efficiency_summary(const MethodTotals& a, const MethodTotals& b);

struct BoxSummary {
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
};

// Quartiles by the median-of-halves rule: the middle element of an odd-sized
// sample belongs to neither half; a single value is its own halves.
BoxSummary box_summary(std::vector<double> values);

nlohmann::json to_json(const TestResult& r);
nlohmann::json to_json(const EffectSize& e);
nlohmann::json to_json(const PowerResult& r);
nlohmann::json to_json(const EfficiencySummary& s);
nlohmann::json to_json(const BoxSummary& b);

} // namespace crimelink::stats

namespace crimelink::stats {

// Per-subject measurements for two methods, read from CSV rows
// "subject,method,time_s,count". Method A is the first method seen unless
// named explicitly.
struct StudyData {
    std::string method_a;
    std::string method_b;
    std::vector<std::string> subjects;
    PairedSample time_s;
    PairedSample count;
};

StudyData read_study_csv(std::istream& in, const std::string& method_a = {}, const std::string& method_b = {});

nlohmann::json study_report(const StudyData& data);
std::string format_study_report(const nlohmann::json& report);

} // namespace crimelink::stats
