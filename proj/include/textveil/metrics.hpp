#pragma once

// Instance exposure and exploitation. Exposure is the negative log quantile
// of an instance's log-perplexity within a population; the fitted variant
// models the population with a skew-normal distribution (method of moments)
// whose goodness of fit is checked with a Kolmogorov-Smirnov test. A fit is
// usable for exposure when the KS p-value exceeds 0.1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "textveil/error.hpp"

namespace textveil {

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / 1.4142135623730951); }

namespace detail {

// Adaptive Simpson on [a, b] with absolute tolerance.
template <class F>
double adaptive_simpson(F&& f, double a, double b, double fa, double fm, double fb, double whole,
                        double tol, int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    double delta = left + right - whole;
    if (depth <= 0 || std::fabs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, tol * 0.5, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, tol * 0.5, depth - 1);
}

template <class F>
double integrate(F&& f, double a, double b, double tol) {
    if (a == b) return 0.0;
    double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

} // namespace detail

// Owen's T function, absolute error well below 1e-8 in the ranges used here.
inline double owen_t(double h, double a) {
    if (a == 0.0 || std::isnan(a)) return 0.0;
    if (a < 0.0) return -owen_t(h, -a);
    h = std::fabs(h); // T(-h, a) == T(h, a)
    if (a > 1.0) {
        // T(h,a) = (Phi(h) + Phi(ah))/2 - Phi(h)Phi(ah) - T(ah, 1/a)
        double ph = std_normal_cdf(h), pah = std_normal_cdf(a * h);
        return 0.5 * (ph + pah) - ph * pah - owen_t(a * h, 1.0 / a);
    }
    if (h == 0.0) return std::atan(a) / 6.283185307179586476925287;
    const double h2 = h * h;
    auto integrand = [h2](double x) {
        return std::exp(-0.5 * h2 * (1.0 + x * x)) / (1.0 + x * x);
    };
    return detail::integrate(integrand, 0.0, a, 1e-12) / 6.283185307179586476925287;
}

struct SkewNormalFit {
    double xi = 0.0;    // location
    double omega = 1.0; // scale, > 0
    double alpha = 0.0; // shape
    int sample_n = 0;
    double ks_stat = 0.0;
    double ks_p = 0.0;
    bool valid = false; // ks_p > 0.1
    bool skew_clamped = false;
};

inline double skew_normal_pdf(const SkewNormalFit& fit, double x) {
    double z = (x - fit.xi) / fit.omega;
    double phi = std::exp(-0.5 * z * z) / 2.5066282746310005;
    return 2.0 / fit.omega * phi * std_normal_cdf(fit.alpha * z);
}

inline double skew_normal_cdf(const SkewNormalFit& fit, double x) {
    double z = (x - fit.xi) / fit.omega;
    double F = std_normal_cdf(z) - 2.0 * owen_t(z, fit.alpha);
    return std::clamp(F, 0.0, 1.0);
}

// Asymptotic Kolmogorov distribution tail: Q(lambda) = 2 sum (-1)^{k-1} e^{-2 k^2 lambda^2}
inline double kolmogorov_p(double lambda) {
    if (lambda < 1e-8) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 1000; ++k) {
        double term = 2.0 * std::exp(-2.0 * (double)k * (double)k * lambda * lambda);
        sum += (k % 2 == 1) ? term : -term;
        if (term < 1e-12 && k >= 100) break;
    }
    return std::clamp(sum, 0.0, 1.0);
}

inline std::pair<double, double> ks_test(const std::vector<double>& samples,
                                         const SkewNormalFit& fit) {
    if (samples.empty()) throw InvalidInputError("ks_test: empty sample");
    std::vector<double> s(samples);
    std::sort(s.begin(), s.end());
    const double n = (double)s.size();
    double d = 0.0;
    for (size_t i = 0; i < s.size(); ++i) {
        double F = skew_normal_cdf(fit, s[i]);
        d = std::max(d, ((double)i + 1.0) / n - F); // D+
        d = std::max(d, F - (double)i / n);         // D-
    }
    double p = kolmogorov_p(std::sqrt(n) * d);
    return {d, p};
}

inline SkewNormalFit fit_skew_normal(const std::vector<double>& samples) {
    if (samples.size() < 30)
        throw InsufficientSampleError("fit_skew_normal: need at least 30 samples, got " +
                                      std::to_string(samples.size()));
    const double n = (double)samples.size();
    double mean = 0.0;
    for (double x : samples) mean += x;
    mean /= n;
    double m2 = 0.0, m3 = 0.0;
    for (double x : samples) {
        double d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if (m2 <= 0.0 || !(m2 > 1e-300))
        throw DegenerateDistributionError("fit_skew_normal: zero variance sample");

    double g1 = m3 / std::pow(m2, 1.5);
    SkewNormalFit fit;
    if (std::fabs(g1) > 0.99) {
        g1 = g1 > 0 ? 0.99 : -0.99;
        fit.skew_clamped = true;
    }
    const double kPi = 3.14159265358979323846;
    double a23 = std::pow(std::fabs(g1), 2.0 / 3.0);
    double b23 = std::pow((4.0 - kPi) / 2.0, 2.0 / 3.0);
    double delta2 = (kPi / 2.0) * a23 / (a23 + b23);
    double delta = (g1 >= 0 ? 1.0 : -1.0) * std::sqrt(delta2);
    fit.alpha = delta / std::sqrt(std::max(1e-12, 1.0 - delta * delta));
    fit.omega = std::sqrt(m2 / (1.0 - 2.0 * delta * delta / kPi));
    fit.xi = mean - fit.omega * delta * std::sqrt(2.0 / kPi);
    fit.sample_n = (int)samples.size();
    auto [d, p] = ks_test(samples, fit);
    fit.ks_stat = d;
    fit.ks_p = p;
    fit.valid = p > 0.1;
    return fit;
}

// rank = |{p in population : p <= px}|, clamped to >= 1 (the instance itself
// is not part of the population); exposure = ln |population| - ln rank.
inline double rank_exposure(double px, const std::vector<double>& population) {
    if (population.empty()) throw InvalidInputError("rank_exposure: empty population");
    long rank = 0;
    for (double p : population)
        if (p <= px) ++rank;
    if (rank < 1) rank = 1;
    return std::log((double)population.size()) - std::log((double)rank);
}

// Fitted-population exposure with a floor so extreme outliers stay finite.
inline double approx_exposure(const SkewNormalFit& fit, double px, bool* warned_invalid = nullptr) {
    if (warned_invalid) *warned_invalid = !fit.valid;
    double F = skew_normal_cdf(fit, px);
    return -std::log(std::max(F, 1e-12));
}

// Exposure gained by being trained on: e_target - e_ref. Zero means the
// instance ranks no higher than its counterfactual untrained ranking. When
// the trainer uses differentially private optimization the value is bounded
// by the privacy budget (up to the failure probability); nothing in this
// toolkit provides or checks such a guarantee.
inline double exploitation(double e_target, double e_ref) { return e_target - e_ref; }

struct ExploitationRecord {
    std::string id;
    double px = 0.0; // log-perplexity under the target
    double e_target = 0.0;
    double e_ref = 0.0;
    double ex = 0.0;
    std::string ref_kind; // exact | approx_excl_protected | initial

    nlohmann::json to_json() const {
        return {{"id", id},       {"px", px}, {"e_target", e_target},
                {"e_ref", e_ref}, {"ex", ex}, {"ref_kind", ref_kind}};
    }
};

} // namespace textveil
