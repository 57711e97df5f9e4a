#ifndef KT_EVAL_HPP
#define KT_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "kt/error.hpp"

namespace kt {

/// One entry per predicted step: a probability and the observed bit.
struct PredictionSet {
    std::vector<double> scores;
    std::vector<int> labels;

    void add(double score, int label) {
        scores.push_back(score);
        labels.push_back(label);
    }
    std::size_t size() const noexcept { return scores.size(); }
};

namespace detail {

inline void check_prediction_set(const PredictionSet& p, const char* metric) {
    if (p.scores.size() != p.labels.size())
        throw ValidationError(std::string(metric) + ": scores and labels differ in length");
    if (p.scores.empty()) throw UndefinedMetricError(std::string(metric) + ": empty prediction set");
}

}  // namespace detail

/// Rank-based (Mann-Whitney) AUC. Tied scores share their average rank, so
/// a tie between a positive and a negative counts one half.
inline double auc(const PredictionSet& p) {
    detail::check_prediction_set(p, "auc");
    const std::size_t n = p.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p.scores[a] < p.scores[b]; });
    double positive_rank_sum = 0.0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && p.scores[order[j]] == p.scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k)
            if (p.labels[order[k]]) {
                positive_rank_sum += avg_rank;
                ++positives;
            }
        i = j;
    }
    const std::size_t negatives = n - positives;
    if (positives == 0 || negatives == 0) throw UndefinedMetricError("auc: labels contain a single class");
    const double np = static_cast<double>(positives);
    return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(negatives));
}

/// Fraction of steps where (score >= threshold) matches the label.
inline double accuracy(const PredictionSet& p, double threshold = 0.5) {
    detail::check_prediction_set(p, "accuracy");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < p.size(); ++i) hits += ((p.scores[i] >= threshold) == (p.labels[i] != 0)) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(p.size());
}

/// Mean binary cross-entropy with scores clamped to [eps, 1 - eps].
inline double mean_xent(const PredictionSet& p, double eps = 1e-7) {
    detail::check_prediction_set(p, "mean_xent");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double s = std::clamp(p.scores[i], eps, 1.0 - eps);
        total -= p.labels[i] ? std::log(s) : std::log(1.0 - s);
    }
    return total / static_cast<double>(p.size());
}

// ---------------------------------------------------------------------------
// Statistics

inline double mean(std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

/// Sample variance (n - 1 denominator).
inline double sample_variance(std::span<const double> xs) {
    const double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double incomplete_beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 500;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::incomplete_beta_cf(a, b, x) / a;
    return 1.0 - front * detail::incomplete_beta_cf(b, a, 1.0 - x) / b;
}

/// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
inline double student_t_two_tailed(double t, double dof) {
    if (!(dof > 0.0)) throw UndefinedMetricError("t distribution needs positive degrees of freedom");
    if (t == 0.0) return 1.0;
    return regularized_incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
}

struct TTestResult {
    double t = 0.0;
    double dof = 0.0;
    double p = 1.0;
};

/// Welch's unequal-variance two-sample t-test, two-tailed.
inline TTestResult ttest_two_tailed(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() < 2 || ys.size() < 2) throw UndefinedMetricError("t-test needs at least 2 values per sample");
    const double nx = static_cast<double>(xs.size()), ny = static_cast<double>(ys.size());
    const double vx = sample_variance(xs) / nx, vy = sample_variance(ys) / ny;
    if (!(vx > 0.0) || !(vy > 0.0)) throw UndefinedMetricError("t-test undefined for a zero-variance sample");
    const double se2 = vx + vy;
    TTestResult r;
    r.t = (mean(xs) - mean(ys)) / std::sqrt(se2);
    r.dof = se2 * se2 / (vx * vx / (nx - 1.0) + vy * vy / (ny - 1.0));
    r.p = student_t_two_tailed(r.t, r.dof);
    return r;
}

/// Sample Pearson correlation.
inline double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw ValidationError("pearson: samples differ in length");
    if (xs.size() < 2) throw UndefinedMetricError("pearson needs at least 2 pairs");
    const double mx = mean(xs), my = mean(ys);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) throw UndefinedMetricError("pearson undefined for a zero-variance sample");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Trials

struct TrialMetrics {
    std::uint64_t seed = 0;
    double auc = 0.0;
    double acc = 0.0;
    double loss = 0.0;
};

struct MetricSummary {
    double auc = 0.0;
    double acc = 0.0;
    double loss = 0.0;
};

struct EvalReport {
    std::vector<TrialMetrics> trials;
    MetricSummary mean;
    MetricSummary std;
    /// Set when only one trial ran and std is reported as 0 by convention.
    bool single_trial = false;
};

inline EvalReport aggregate_trials(std::span<const TrialMetrics> trials) {
    if (trials.empty()) throw ValidationError("aggregate_trials: no trials");
    EvalReport r;
    r.trials.assign(trials.begin(), trials.end());
    auto column = [&](auto member) {
        std::vector<double> v;
        for (const auto& t : trials) v.push_back(t.*member);
        return v;
    };
    const auto a = column(&TrialMetrics::auc), c = column(&TrialMetrics::acc), l = column(&TrialMetrics::loss);
    r.mean = {mean(a), mean(c), mean(l)};
    if (trials.size() == 1) {
        r.single_trial = true;
        r.std = {0.0, 0.0, 0.0};
    } else {
        r.std = {std::sqrt(sample_variance(a)), std::sqrt(sample_variance(c)), std::sqrt(sample_variance(l))};
    }
    return r;
}

}  // namespace kt

#endif  // KT_EVAL_HPP
