#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace abw {

inline constexpr int kFormatVersion = 1;

// Violated precondition or broken invariant: a caller bug, not a data problem.
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

// NaN/Inf or other numeric breakdown encountered mid-computation.
struct NumericFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractViolation(msg);
}

inline void check_finite(double x, const std::string& where) {
    if (!std::isfinite(x)) throw NumericFailure("non-finite value in " + where);
}

}  // namespace abw
