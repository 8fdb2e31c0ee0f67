#pragma once

#include <string>
#include <vector>

#include "abw/common.hpp"
#include "abw/tensor.hpp"

namespace abw {

enum class Provenance { step1, step2, step3, reference };

inline std::string provenance_name(Provenance p) {
    switch (p) {
        case Provenance::step1: return "step1";
        case Provenance::step2: return "step2";
        case Provenance::step3: return "step3";
        case Provenance::reference: return "reference";
    }
    return "?";
}

inline Provenance provenance_from_name(const std::string& s) {
    if (s == "step1") return Provenance::step1;
    if (s == "step2") return Provenance::step2;
    if (s == "step3") return Provenance::step3;
    if (s == "reference") return Provenance::reference;
    throw ContractViolation("unknown provenance: " + s);
}

// S posterior draws for one dataset, in unconstrained coordinates. Flow
// draws carry their own log-density; draws from other stages leave
// log_density empty.
struct PosteriorDraws {
    Tensor draws_u;                   // [S, dim_theta]
    std::vector<double> log_density;  // per-draw flow log q, when applicable
    Provenance provenance = Provenance::step1;
    std::string dataset_id;

    std::size_t count() const { return draws_u.rows(); }
    std::size_t dim() const { return draws_u.cols(); }

    std::vector<double> row(std::size_t r) const {
        std::vector<double> v(draws_u.cols());
        for (std::size_t c = 0; c < v.size(); ++c) v[c] = draws_u.at(r, c);
        return v;
    }
};

}  // namespace abw
