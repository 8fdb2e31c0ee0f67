#pragma once

#include <cmath>

#include "abw/common.hpp"

namespace abw {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

inline double normal_logpdf(double x, double mean, double sd) {
    double z = (x - mean) / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * M_PI);
}

// log1p(x)/x, continuous through x = 0.
inline double log1p_over(double x) {
    if (std::fabs(x) < 1e-6) return 1.0 - x / 2.0 + x * x / 3.0 - x * x * x / 4.0;
    return std::log1p(x) / x;
}

// expm1(x)/x, continuous through x = 0.
inline double expm1_over(double x) {
    if (std::fabs(x) < 1e-8) return 1.0 + x / 2.0;
    return std::expm1(x) / x;
}

// ((1+w) log1p(w) - w) / (w^2 (1+w)), the kernel of d/dxi of the GEV
// log-density; equals 1/2 at w = 0.
inline double gev_shape_kernel(double w) {
    if (std::fabs(w) < 1e-4) {
        double series = 0.5 - w / 6.0 + w * w / 12.0 - w * w * w / 20.0;
        return series / (1.0 + w);
    }
    return ((1.0 + w) * std::log1p(w) - w) / (w * w * (1.0 + w));
}

inline double lchoose(double n, double k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

inline double log_sum_exp(const std::vector<double>& v) {
    double m = -INFINITY;
    for (double x : v)
        if (x > m) m = x;
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace abw
