#include "crimelink/study_stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace crimelink::stats {

using nlohmann::json;

MeanSd mean_sd(std::span<const double> values) {
    if (values.empty())
        throw std::invalid_argument("mean of an empty sample");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() < 2)
        return {mean, 0.0};
    double ss = 0.0;
    for (double v : values)
        ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

namespace {

std::vector<double> differences(const PairedSample& sample) {
    std::vector<double> diffs;
    diffs.reserve(sample.pairs.size());
    for (auto [a, b] : sample.pairs) {
        if (!std::isfinite(a) || !std::isfinite(b))
            throw std::invalid_argument("paired sample contains a non-finite value");
        diffs.push_back(a - b);
    }
    return diffs;
}

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
double beta_continued_fraction(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny)
        d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 10000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny)
            d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny)
            c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny)
            d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny)
            c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < eps)
            return h;
    }
    throw std::runtime_error("incomplete beta continued fraction did not converge");
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

} // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0 && b > 0.0))
        throw std::invalid_argument("incomplete beta needs a, b > 0");
    if (x <= 0.0)
        return 0.0;
    if (x >= 1.0)
        return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
    if (!(df > 0.0))
        throw std::invalid_argument("degrees of freedom must be positive");
    if (std::isinf(t))
        return t > 0 ? 1.0 : 0.0;
    const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    return t >= 0.0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double df) {
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("quantile probability must lie in (0, 1)");
    if (p == 0.5)
        return 0.0;
    if (p < 0.5)
        return -student_t_quantile(1.0 - p, df);
    double lo = 0.0, hi = 1.0;
    while (student_t_cdf(hi, df) < p) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e300)
            throw std::runtime_error("t quantile search diverged");
    }
    for (int i = 0; i < 400 && hi - lo > 1e-15 * std::max(1.0, hi); ++i) {
        const double mid = 0.5 * (lo + hi);
        (student_t_cdf(mid, df) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double noncentral_t_cdf(double t, double df, double ncp) {
    if (!(df > 0.0))
        throw std::invalid_argument("degrees of freedom must be positive");
    // T = (Z + ncp) / S with S = sqrt(chi2_df / df); condition on S.
    const double half = df / 2.0;
    const double log_norm = std::log(2.0) + half * std::log(half) - std::lgamma(half);
    auto integrand = [&](double s) {
        if (s <= 0.0)
            return 0.0;
        const double log_density = log_norm + (df - 1.0) * std::log(s) - half * s * s;
        return normal_cdf(t * s - ncp) * std::exp(log_density);
    };
    using boost::math::quadrature::gauss_kronrod;
    double error = 0.0;
    const double value = gauss_kronrod<double, 61>::integrate(
        integrand, 0.0, std::numeric_limits<double>::infinity(), 20, kQuadratureTolerance * 1e-2, &error);
    return std::clamp(value, 0.0, 1.0);
}

double paired_t_power(double d, double n, double alpha, bool two_sided) {
    if (!(n > 1.0))
        throw std::invalid_argument("power needs more than one subject");
    const double df = n - 1.0;
    const double ncp = d * std::sqrt(n);
    if (two_sided) {
        const double crit = student_t_quantile(1.0 - alpha / 2.0, df);
        return 1.0 - noncentral_t_cdf(crit, df, ncp) + noncentral_t_cdf(-crit, df, ncp);
    }
    const double crit = student_t_quantile(1.0 - alpha, df);
    return 1.0 - noncentral_t_cdf(crit, df, ncp);
}

PowerResult required_sample_size(const PowerRequest& req) {
    if (!(req.d > 0.0))
        throw std::invalid_argument("effect size must be positive");
    if (!(req.alpha > 0.0 && req.alpha < 1.0))
        throw std::invalid_argument("alpha must lie in (0, 1)");
    if (!(req.power > 0.0 && req.power < 1.0))
        throw std::invalid_argument("power target must lie in (0, 1); a target of 1 is unattainable");

    auto power_at = [&](double n) { return paired_t_power(req.d, n, req.alpha, req.two_sided); };

    PowerResult result;
    if (power_at(2.0) >= req.power) {
        result.n_fractional = 2.0;
    } else {
        double lo = 2.0, hi = 4.0;
        while (power_at(hi) < req.power) {
            lo = hi;
            hi *= 2.0;
            if (hi > 1e8)
                throw std::domain_error("power target unattainable within 1e8 subjects");
        }
        while (hi - lo > 1e-9) {
            const double mid = 0.5 * (lo + hi);
            (power_at(mid) < req.power ? lo : hi) = mid;
        }
        result.n_fractional = 0.5 * (lo + hi);
    }

    int n = std::max(2, static_cast<int>(std::floor(result.n_fractional)));
    while (n > 2 && power_at(n - 1) >= req.power)
        --n;
    while (power_at(n) < req.power)
        ++n;
    result.n_required = n;
    result.achieved_power = power_at(n);
    return result;
}

TestResult paired_t_test(const PairedSample& sample) {
    if (sample.pairs.size() < 2)
        throw std::invalid_argument("paired t-test needs at least two pairs");
    const auto diffs = differences(sample);
    const auto [mean, sd] = mean_sd(diffs);
    if (!(sd > 0.0))
        throw DegenerateSample("all paired differences are identical; t is undefined");
    TestResult r;
    const double n = static_cast<double>(diffs.size());
    r.mean_diff = mean;
    r.sd_diff = sd;
    r.df = static_cast<int>(diffs.size()) - 1;
    r.t = mean / (sd / std::sqrt(n));
    r.p_two_sided = incomplete_beta(r.df / 2.0, 0.5, r.df / (r.df + r.t * r.t));
    return r;
}

EffectSize cohens_d_pooled(MeanSd a, MeanSd b) {
    if (a.sd < 0.0 || b.sd < 0.0)
        throw std::invalid_argument("standard deviations must be non-negative");
    if (a.sd == 0.0 && b.sd == 0.0)
        throw DegenerateSample("both standard deviations are zero");
    return {(a.mean - b.mean) / std::sqrt((a.sd * a.sd + b.sd * b.sd) / 2.0), EffectSizeMethod::pooled_sd};
}

EffectSize cohens_dz(const PairedSample& sample) {
    if (sample.pairs.size() < 2)
        throw std::invalid_argument("effect size needs at least two pairs");
    const auto diffs = differences(sample);
    const auto [mean, sd] = mean_sd(diffs);
    if (!(sd > 0.0))
        throw DegenerateSample("all paired differences are identical");
    return {mean / sd, EffectSizeMethod::paired_dz};
}

EfficiencySummary efficiency_summary(const MethodTotals& a, const MethodTotals& b) {
    if (!(a.count.mean > 0.0) || !(b.count.mean > 0.0))
        throw std::invalid_argument("mean data-point count must be positive");
    if (!(b.time_s.mean > 0.0))
        throw std::invalid_argument("mean time must be positive");
    EfficiencySummary s;
    s.a = {a.name, a.time_s, a.count, a.time_s.mean / a.count.mean};
    s.b = {b.name, b.time_s, b.count, b.time_s.mean / b.count.mean};
    s.time_ratio = a.time_s.mean / b.time_s.mean;
    s.slowdown = s.time_ratio - 1.0;
    s.count_ratio = b.count.mean / a.count.mean;
    s.efficiency_ratio = s.a.seconds_per_point / s.b.seconds_per_point;
    return s;
}

namespace {

double median_of_sorted(std::span<const double> v) {
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

BoxSummary box_summary(std::vector<double> values) {
    if (values.empty())
        throw std::invalid_argument("box summary of an empty sample");
    std::sort(values.begin(), values.end());
    const std::span<const double> all(values);
    const std::size_t n = values.size();
    BoxSummary box;
    box.min = values.front();
    box.max = values.back();
    box.median = median_of_sorted(all);
    if (n == 1) {
        box.q1 = box.q3 = box.median;
        return box;
    }
    const std::size_t half = n / 2;
    box.q1 = median_of_sorted(all.subspan(0, half));
    box.q3 = median_of_sorted(all.subspan(n - half, half));
    return box;
}

json to_json(const TestResult& r) {
    return {{"t", r.t}, {"df", r.df}, {"p_two_sided", r.p_two_sided}, {"mean_diff", r.mean_diff}, {"sd_diff", r.sd_diff}};
}

json to_json(const EffectSize& e) {
    return {{"d", e.d}, {"method", e.method == EffectSizeMethod::pooled_sd ? "pooled_sd" : "paired_dz"}};
}

json to_json(const PowerResult& r) {
    return {{"n_fractional", r.n_fractional}, {"n_required", r.n_required}, {"achieved_power", r.achieved_power}};
}

namespace {

json method_json(const MethodEfficiency& m) {
    return {{"name", m.name},
            {"time_mean_s", m.time_s.mean},
            {"time_sd_s", m.time_s.sd},
            {"count_mean", m.count.mean},
            {"count_sd", m.count.sd},
            {"seconds_per_point", m.seconds_per_point}};
}

} // namespace

json to_json(const EfficiencySummary& s) {
    return {{"a", method_json(s.a)},
            {"b", method_json(s.b)},
            {"time_ratio", s.time_ratio},
            {"slowdown", s.slowdown},
            {"count_ratio", s.count_ratio},
            {"efficiency_ratio", s.efficiency_ratio}};
}

json to_json(const BoxSummary& b) {
    return {{"min", b.min}, {"q1", b.q1}, {"median", b.median}, {"q3", b.q3}, {"max", b.max}};
}

} // namespace crimelink::stats
