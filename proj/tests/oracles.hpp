#pragma once

// Independent reference computations used as test oracles. Everything here
// is deliberately written against the math directly (finite differences,
// quadrature, closed forms) rather than reusing library code paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

// Central finite-difference gradient of a scalar function.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double x0 = x[i];
        double step = h * std::max(1.0, std::fabs(x0));
        x[i] = x0 + step;
        double fp = f(x);
        x[i] = x0 - step;
        double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double scale = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / scale);
    }
    return worst;
}

// Conjugate normal model: y_i ~ N(theta, 1), theta ~ N(0, 1).
struct ConjugatePosterior {
    double mean;
    double sd;
};

inline ConjugatePosterior conjugate_posterior(const std::vector<double>& y) {
    double s = 0.0;
    for (double v : y) s += v;
    double n = static_cast<double>(y.size());
    return {s / (n + 1.0), 1.0 / std::sqrt(n + 1.0)};
}

// Regularized lower incomplete gamma P(a, x) (series + continued fraction),
// for chi-squared tail probabilities.
inline double gamma_p(double a, double x) {
    if (x <= 0.0) return 0.0;
    double gln = std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a, sum = 1.0 / a, del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
        }
        return sum * std::exp(-x + a * std::log(x) - gln);
    }
    double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
    for (int i = 1; i < 500; ++i) {
        double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::fabs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    return 1.0 - std::exp(-x + a * std::log(x) - gln) * h;
}

inline double chi2_sf(double stat, double df) { return 1.0 - gamma_p(df / 2.0, stat / 2.0); }

// Pearson chi-squared uniformity test over equal-count bins; returns p-value.
inline double chi2_uniform_pvalue(const std::vector<double>& unit_values, int bins) {
    std::vector<double> counts(bins, 0.0);
    for (double u : unit_values) {
        int b = std::min(bins - 1, static_cast<int>(u * bins));
        counts[std::max(0, b)] += 1.0;
    }
    double expected = static_cast<double>(unit_values.size()) / bins;
    double stat = 0.0;
    for (double c : counts) stat += (c - expected) * (c - expected) / expected;
    return chi2_sf(stat, bins - 1.0);
}

// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j])
            ++i;
        else
            ++j;
        double fa = static_cast<double>(i) / a.size();
        double fb = static_cast<double>(j) / b.size();
        d = std::max(d, std::fabs(fa - fb));
    }
    return d;
}

// Asymptotic KS critical value at significance alpha.
inline double ks_critical(std::size_t n, std::size_t m, double alpha) {
    double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
    return c * std::sqrt(static_cast<double>(n + m) / (static_cast<double>(n) * m));
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / v.size();
}

inline double variance_of(const std::vector<double>& v) {
    double m = mean_of(v), s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / (v.size() - 1);
}

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double correlation(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace oracle
