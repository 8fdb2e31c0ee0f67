#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace abw {

// Scalar activations shared by the tape ops and the plain evaluation path.
// Both paths must produce bitwise-identical values, so there is exactly one
// implementation of each function.

inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double mish(double x) { return x * std::tanh(softplus(x)); }

inline double mish_deriv(double x) {
    double sp = softplus(x);
    double t = std::tanh(sp);
    return t + x * (1.0 - t * t) * sigmoid(x);
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_deriv(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

enum class Activation { mish, gelu, tanh_act };

inline double activate(Activation a, double x) {
    switch (a) {
        case Activation::mish: return mish(x);
        case Activation::gelu: return gelu(x);
        case Activation::tanh_act: return std::tanh(x);
    }
    return x;
}

inline double activate_deriv(Activation a, double x) {
    switch (a) {
        case Activation::mish: return mish_deriv(x);
        case Activation::gelu: return gelu_deriv(x);
        case Activation::tanh_act: {
            double t = std::tanh(x);
            return 1.0 - t * t;
        }
    }
    return 1.0;
}

// Order-independent sum: sorting makes the result a function of the multiset
// of addends only, which is what makes mean pooling exactly permutation
// invariant.
inline double sorted_sum(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

}  // namespace abw
