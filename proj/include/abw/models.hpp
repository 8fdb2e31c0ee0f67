#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "abw/common.hpp"
#include "abw/linalg.hpp"
#include "abw/nn_math.hpp"
#include "abw/rng.hpp"
#include "abw/special_math.hpp"
#include "abw/tensor.hpp"

namespace abw {

enum class ModelId { gaussian_conjugate, gev, bernoulli_glm, psychometric };

inline std::string model_name(ModelId m) {
    switch (m) {
        case ModelId::gaussian_conjugate: return "gaussian_conjugate";
        case ModelId::gev: return "gev";
        case ModelId::bernoulli_glm: return "bernoulli_glm";
        case ModelId::psychometric: return "psychometric";
    }
    return "?";
}

inline ModelId model_from_name(const std::string& s) {
    if (s == "gaussian_conjugate") return ModelId::gaussian_conjugate;
    if (s == "gev") return ModelId::gev;
    if (s == "bernoulli_glm") return ModelId::bernoulli_glm;
    if (s == "psychometric") return ModelId::psychometric;
    throw ContractViolation("unknown model id: " + s);
}

enum class Space { constrained, unconstrained };

struct ParameterVector {
    std::vector<double> values;
    Space space = Space::constrained;
};

struct DatasetRecord {
    ModelId model_id = ModelId::gaussian_conjugate;
    Tensor observations;  // [N, obs_fields]
    std::optional<ParameterVector> ground_truth;  // constrained space
    std::string dataset_id;
};

// Per-coordinate bijections between the model's support and R.
enum class TransformKind { identity, log_positive, scaled_logit };

struct Transform {
    TransformKind kind = TransformKind::identity;
    double lo = 0.0, hi = 0.0;  // scaled_logit bounds

    double to_unconstrained(double theta) const {
        switch (kind) {
            case TransformKind::identity: return theta;
            case TransformKind::log_positive:
                require(theta > 0.0, "transform: value not positive");
                return std::log(theta);
            case TransformKind::scaled_logit: {
                require(theta > lo && theta < hi, "transform: value outside bounds");
                double p = (theta - lo) / (hi - lo);
                return std::log(p) - std::log1p(-p);
            }
        }
        return theta;
    }

    double to_constrained(double u) const {
        switch (kind) {
            case TransformKind::identity: return u;
            case TransformKind::log_positive: return std::exp(u);
            case TransformKind::scaled_logit: return lo + (hi - lo) * sigmoid(u);
        }
        return u;
    }

    // log |d theta / d u|
    double log_jacobian(double u) const {
        switch (kind) {
            case TransformKind::identity: return 0.0;
            case TransformKind::log_positive: return u;
            case TransformKind::scaled_logit: {
                double s = sigmoid(u);
                return std::log(hi - lo) + std::log(s) + std::log1p(-s);
            }
        }
        return 0.0;
    }

    double dtheta_du(double u) const {
        switch (kind) {
            case TransformKind::identity: return 1.0;
            case TransformKind::log_positive: return std::exp(u);
            case TransformKind::scaled_logit: {
                double s = sigmoid(u);
                return (hi - lo) * s * (1.0 - s);
            }
        }
        return 1.0;
    }

    double dlog_jacobian_du(double u) const {
        switch (kind) {
            case TransformKind::identity: return 0.0;
            case TransformKind::log_positive: return 1.0;
            case TransformKind::scaled_logit: return 1.0 - 2.0 * sigmoid(u);
        }
        return 0.0;
    }
};

// GEV training prior constants
namespace gev_prior {
inline constexpr double mu_mean = 3.8;
inline constexpr double mu_sd = 0.2;      // variance 0.04
inline constexpr double sigma_sd = 0.3;   // half-normal scale, variance 0.09
inline constexpr double xi_sd = 0.2;      // variance 0.04
inline constexpr double xi_bound = 0.6;
}  // namespace gev_prior

struct ModelSpec {
    ModelId model_id = ModelId::gaussian_conjugate;
    int dim_theta = 1;
    int obs_rows = 1;
    int obs_fields = 1;
    std::vector<Transform> transforms;

    // fixed quantities
    Tensor design;                         // bernoulli_glm: [n_trials, 10]
    std::vector<double> stimulus_levels;   // psychometric (already rescaled)
    int trials_per_level = 40;             // psychometric n_i

    static ModelSpec gaussian_conjugate(int n_obs = 10) {
        ModelSpec m;
        m.model_id = ModelId::gaussian_conjugate;
        m.dim_theta = 1;
        m.obs_rows = n_obs;
        m.obs_fields = 1;
        m.transforms = {{TransformKind::identity, 0, 0}};
        return m;
    }

    static ModelSpec gev() {
        ModelSpec m;
        m.model_id = ModelId::gev;
        m.dim_theta = 3;
        m.obs_rows = 65;
        m.obs_fields = 1;
        m.transforms = {{TransformKind::identity, 0, 0},
                        {TransformKind::log_positive, 0, 0},
                        {TransformKind::scaled_logit, -gev_prior::xi_bound, gev_prior::xi_bound}};
        return m;
    }

    static ModelSpec bernoulli_glm(int n_trials = 100) {
        ModelSpec m;
        m.model_id = ModelId::bernoulli_glm;
        m.dim_theta = 10;
        m.obs_rows = n_trials;
        m.obs_fields = 1;
        m.transforms.assign(10, {TransformKind::identity, 0, 0});
        RngStream rng = RngStream::derive(20240901ULL, "glm-design");
        m.design = Tensor::matrix(n_trials, 10);
        for (auto& x : m.design.data) x = rng.normal();
        return m;
    }

    static ModelSpec psychometric(int trials_per_level = 40) {
        ModelSpec m;
        m.model_id = ModelId::psychometric;
        m.dim_theta = 5;
        m.obs_rows = 9;
        m.obs_fields = 3;
        m.transforms = {{TransformKind::scaled_logit, 0, 1},   // m_tilde
                        {TransformKind::log_positive, 0, 0},   // w
                        {TransformKind::scaled_logit, 0, 1},   // lambda
                        {TransformKind::scaled_logit, 0, 1},   // gamma
                        {TransformKind::scaled_logit, 0, 1}};  // eta
        m.trials_per_level = trials_per_level;
        for (double x : {-100.0, -25.0, -12.5, -6.25, 0.0, 6.25, 12.5, 25.0, 100.0})
            m.stimulus_levels.push_back(x / 100.0);
        return m;
    }

    static ModelSpec make(ModelId id) {
        switch (id) {
            case ModelId::gaussian_conjugate: return gaussian_conjugate();
            case ModelId::gev: return gev();
            case ModelId::bernoulli_glm: return bernoulli_glm();
            case ModelId::psychometric: return psychometric();
        }
        throw ContractViolation("make: bad model id");
    }
};

// ---------------------------------------------------------------------------
// internal helpers

namespace detail {

// 9x9 lower-triangular smoothing matrix of the GLM prior.
inline Tensor glm_f_matrix() {
    Tensor f = Tensor::matrix(9, 9);
    for (int i = 1; i <= 9; ++i) {
        f.at(i - 1, i - 1) = 1.0 + std::sqrt((i - 1.0) / 9.0);
        if (i >= 2) f.at(i - 1, i - 2) = -2.0;
        if (i >= 3) f.at(i - 1, i - 3) = 1.0;
    }
    return f;
}

// log of the two-sided truncation mass at 3 sd (bounds/sd is always 3 for
// the GEV shape prior, widened or not).
inline double log_trunc3_mass() { return std::log(2.0 * normal_cdf(3.0) - 1.0); }

struct GevPointDerivs {
    double logpdf;
    double d_mu, d_sigma, d_xi;
};

inline double gev_obs_logpdf(double y, double mu, double sigma, double xi) {
    double z = (y - mu) / sigma;
    double w = xi * z;
    double t = 1.0 + w;
    if (t <= 0.0) return -INFINITY;
    double log1p_ratio = log1p_over(w);       // log1p(w)/w
    double l_over_xi = z * log1p_ratio;       // log(t)/xi, exact at xi = 0
    double a = std::exp(-l_over_xi);          // t^(-1/xi)
    double r = -std::log(sigma) - std::log1p(w) - l_over_xi - a;
    if (std::isnan(r)) throw NumericFailure("gev logpdf produced NaN");
    return r;
}

inline GevPointDerivs gev_obs_logpdf_grad(double y, double mu, double sigma, double xi) {
    double z = (y - mu) / sigma;
    double w = xi * z;
    double t = 1.0 + w;
    if (t <= 0.0) return {-INFINITY, 0, 0, 0};
    double l_over_xi = z * log1p_over(w);
    double a = std::exp(-l_over_xi);
    GevPointDerivs out;
    out.logpdf = -std::log(sigma) - std::log1p(w) - l_over_xi - a;
    double common = (1.0 + xi - a) / t;
    out.d_mu = common / sigma;
    out.d_sigma = -1.0 / sigma + z * common / sigma;
    out.d_xi = (1.0 - a) * z * z * gev_shape_kernel(w) - z / t;
    return out;
}

// Expected success probability of the psychometric curve; the sigmoid is a
// normal CDF with threshold m and 5%-95% width w.
inline constexpr double psycho_width_scale = 2.0 * 1.6448536269514722;  // 2 z_{0.95}

inline double psycho_pbar(double x, double m, double w, double lambda, double gamma) {
    double s = normal_cdf(psycho_width_scale * (x - m) / w);
    return gamma + (1.0 - lambda - gamma) * s;
}

inline constexpr double psycho_max_concentration = 1e8;

inline double psycho_nu(double eta) {
    double nu = 1.0 / (eta * eta) - 1.0;
    return nu > psycho_max_concentration ? psycho_max_concentration : nu;
}

// Beta-binomial log-pmf via rising-factorial sums. y and n are small
// integers, so the lgamma form's catastrophic cancellation at large
// concentration (lgamma arguments ~ 1e8 for an O(1) result) is avoided.
inline double beta_binomial_logpmf(double y, double n, double a, double b) {
    int yi = static_cast<int>(std::lround(y));
    int ni = static_cast<int>(std::lround(n));
    double r = lchoose(n, y);
    for (int k = 0; k < yi; ++k) r += std::log(a + k);
    for (int k = 0; k < ni - yi; ++k) r += std::log(b + k);
    for (int k = 0; k < ni; ++k) r -= std::log(a + b + k);
    return r;
}

// d/da and d/db of beta_binomial_logpmf as exact digamma-difference sums.
inline void beta_binomial_dlogpmf(double y, double n, double a, double b, double* dl_da,
                                  double* dl_db) {
    int yi = static_cast<int>(std::lround(y));
    int ni = static_cast<int>(std::lround(n));
    double da = 0.0, db = 0.0, dshared = 0.0;
    for (int k = 0; k < yi; ++k) da += 1.0 / (a + k);
    for (int k = 0; k < ni - yi; ++k) db += 1.0 / (b + k);
    for (int k = 0; k < ni; ++k) dshared += 1.0 / (a + b + k);
    *dl_da = da - dshared;
    *dl_db = db - dshared;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// operations

inline void validate_dataset(const ModelSpec& spec, const DatasetRecord& data) {
    require(data.model_id == spec.model_id, "dataset model does not match spec");
    require(static_cast<int>(data.observations.rows()) == spec.obs_rows &&
                static_cast<int>(data.observations.cols()) == spec.obs_fields,
            "dataset shape does not match spec");
    data.observations.check_finite("dataset observations");
    if (spec.model_id == ModelId::psychometric) {
        for (int i = 0; i < spec.obs_rows; ++i)
            require(data.observations.at(i, 0) <= data.observations.at(i, 1),
                    "psychometric dataset: y_i > n_i");
    }
}

inline void check_support(const ModelSpec& spec, const ParameterVector& theta) {
    require(theta.space == Space::constrained, "check_support: expects constrained input");
    require(static_cast<int>(theta.values.size()) == spec.dim_theta,
            "check_support: wrong dimension");
    for (int i = 0; i < spec.dim_theta; ++i) {
        const Transform& tr = spec.transforms[i];
        double v = theta.values[i];
        switch (tr.kind) {
            case TransformKind::identity: break;
            case TransformKind::log_positive:
                require(v > 0.0, "parameter " + std::to_string(i) + " must be positive");
                break;
            case TransformKind::scaled_logit:
                require(v > tr.lo && v < tr.hi,
                        "parameter " + std::to_string(i) + " outside bounds");
                break;
        }
    }
}

// Draw from the model prior; widen_factor scales every prior standard
// deviation (and interval bounds) to emulate out-of-distribution data
// generation. widen_factor 1 is the training prior.
inline ParameterVector prior_sample(const ModelSpec& spec, RngStream& rng,
                                    double widen_factor = 1.0) {
    require(widen_factor >= 1.0, "prior_sample: widen_factor must be >= 1");
    ParameterVector theta;
    theta.space = Space::constrained;
    switch (spec.model_id) {
        case ModelId::gaussian_conjugate: {
            theta.values = {rng.normal(0.0, widen_factor)};
            break;
        }
        case ModelId::gev: {
            double w = widen_factor;
            double mu = rng.normal(gev_prior::mu_mean, gev_prior::mu_sd * w);
            double sigma = rng.half_normal(gev_prior::sigma_sd * w);
            if (sigma == 0.0) sigma = 1e-300;
            double xi = rng.truncated_normal(0.0, gev_prior::xi_sd * w,
                                             -gev_prior::xi_bound * w, gev_prior::xi_bound * w);
            theta.values = {mu, sigma, xi};
            break;
        }
        case ModelId::bernoulli_glm: {
            Tensor f = detail::glm_f_matrix();
            std::vector<double> z = rng.normal_vector(10);
            theta.values.resize(10);
            theta.values[0] = std::sqrt(2.0) * z[0] * widen_factor;
            std::vector<double> tail(z.begin() + 1, z.end());
            auto sm = linalg::solve_lower(f, tail);  // cov (F^T F)^{-1}
            for (int i = 0; i < 9; ++i) theta.values[i + 1] = sm[i] * widen_factor;
            break;
        }
        case ModelId::psychometric: {
            require(widen_factor == 1.0,
                    "prior_sample: psychometric prior cannot be widened");
            double m_tilde = rng.beta(2.0, 2.0);
            double w = rng.half_normal(1.0);
            if (w == 0.0) w = 1e-300;
            double lambda = rng.beta(1.0, 10.0);
            double gamma = rng.beta(1.0, 10.0);
            double eta = rng.beta(1.0, 10.0);
            theta.values = {m_tilde, w, lambda, gamma, eta};
            break;
        }
    }
    return theta;
}

inline DatasetRecord simulate(const ModelSpec& spec, const ParameterVector& theta,
                              RngStream& rng, std::string dataset_id = "") {
    check_support(spec, theta);
    DatasetRecord data;
    data.model_id = spec.model_id;
    data.ground_truth = theta;
    data.dataset_id = std::move(dataset_id);
    data.observations = Tensor::matrix(spec.obs_rows, spec.obs_fields);
    switch (spec.model_id) {
        case ModelId::gaussian_conjugate: {
            for (int i = 0; i < spec.obs_rows; ++i)
                data.observations.at(i, 0) = rng.normal(theta.values[0], 1.0);
            break;
        }
        case ModelId::gev: {
            double mu = theta.values[0], sigma = theta.values[1], xi = theta.values[2];
            for (int i = 0; i < spec.obs_rows; ++i) {
                double g = std::log(-std::log(rng.uniform()));  // standard Gumbel of -g
                data.observations.at(i, 0) = mu - sigma * g * expm1_over(-xi * g);
            }
            break;
        }
        case ModelId::bernoulli_glm: {
            auto eta = linalg::matvec(spec.design, theta.values);
            for (int i = 0; i < spec.obs_rows; ++i)
                data.observations.at(i, 0) = rng.uniform() < sigmoid(eta[i]) ? 1.0 : 0.0;
            break;
        }
        case ModelId::psychometric: {
            double m = 2.0 * theta.values[0] - 1.0;
            double w = theta.values[1], lambda = theta.values[2], gamma = theta.values[3],
                   eta = theta.values[4];
            double nu = detail::psycho_nu(eta);
            for (int i = 0; i < spec.obs_rows; ++i) {
                double x = spec.stimulus_levels[i];
                double pbar = detail::psycho_pbar(x, m, w, lambda, gamma);
                double p = rng.beta(nu * pbar, nu * (1.0 - pbar));
                int n = spec.trials_per_level;
                data.observations.at(i, 0) = rng.binomial(n, p);
                data.observations.at(i, 1) = n;
                data.observations.at(i, 2) = x;
            }
            break;
        }
    }
    return data;
}

inline ParameterVector to_unconstrained(const ModelSpec& spec, const ParameterVector& theta) {
    require(theta.space == Space::constrained, "to_unconstrained: input must be constrained");
    check_support(spec, theta);
    ParameterVector u;
    u.space = Space::unconstrained;
    u.values.resize(spec.dim_theta);
    for (int i = 0; i < spec.dim_theta; ++i)
        u.values[i] = spec.transforms[i].to_unconstrained(theta.values[i]);
    return u;
}

inline ParameterVector to_constrained(const ModelSpec& spec, const ParameterVector& u) {
    require(u.space == Space::unconstrained, "to_constrained: input must be unconstrained");
    require(static_cast<int>(u.values.size()) == spec.dim_theta, "to_constrained: bad dim");
    ParameterVector theta;
    theta.space = Space::constrained;
    theta.values.resize(spec.dim_theta);
    for (int i = 0; i < spec.dim_theta; ++i)
        theta.values[i] = spec.transforms[i].to_constrained(u.values[i]);
    return theta;
}

// log density of the prior pushed forward to unconstrained space (includes
// the transform log-Jacobian).
inline double log_prior_u(const ModelSpec& spec, const std::vector<double>& u) {
    require(static_cast<int>(u.size()) == spec.dim_theta, "log_prior_u: bad dim");
    double log_jac = 0.0;
    std::vector<double> theta(spec.dim_theta);
    for (int i = 0; i < spec.dim_theta; ++i) {
        theta[i] = spec.transforms[i].to_constrained(u[i]);
        log_jac += spec.transforms[i].log_jacobian(u[i]);
    }
    double lp = 0.0;
    switch (spec.model_id) {
        case ModelId::gaussian_conjugate:
            lp = normal_logpdf(theta[0], 0.0, 1.0);
            break;
        case ModelId::gev: {
            lp = normal_logpdf(theta[0], gev_prior::mu_mean, gev_prior::mu_sd);
            lp += std::log(2.0) + normal_logpdf(theta[1], 0.0, gev_prior::sigma_sd);
            lp += normal_logpdf(theta[2], 0.0, gev_prior::xi_sd) - detail::log_trunc3_mass();
            break;
        }
        case ModelId::bernoulli_glm: {
            Tensor f = detail::glm_f_matrix();
            std::vector<double> tail(theta.begin() + 1, theta.end());
            auto ft = linalg::matvec(f, tail);
            double quad = theta[0] * theta[0] / 2.0 + linalg::dot(ft, ft);
            double log_det_f = 0.0;
            for (int i = 0; i < 9; ++i) log_det_f += std::log(f.at(i, i));
            // log det Sigma = log 2 - 2 log det F
            lp = -0.5 * quad - 5.0 * std::log(2.0 * M_PI) -
                 0.5 * (std::log(2.0) - 2.0 * log_det_f);
            break;
        }
        case ModelId::psychometric: {
            double m_tilde = theta[0], w = theta[1], lambda = theta[2], gamma = theta[3],
                   eta = theta[4];
            auto beta_logpdf = [](double x, double a, double b) {
                return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) -
                       (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
            };
            lp = beta_logpdf(m_tilde, 2.0, 2.0);
            lp += std::log(2.0) + normal_logpdf(w, 0.0, 1.0);
            lp += beta_logpdf(lambda, 1.0, 10.0);
            lp += beta_logpdf(gamma, 1.0, 10.0);
            lp += beta_logpdf(eta, 1.0, 10.0);
            break;
        }
    }
    double r = lp + log_jac;
    if (std::isnan(r)) throw NumericFailure("log_prior_u produced NaN");
    return r;
}

inline double log_likelihood_u(const ModelSpec& spec, const std::vector<double>& u,
                               const DatasetRecord& data) {
    validate_dataset(spec, data);
    require(static_cast<int>(u.size()) == spec.dim_theta, "log_likelihood_u: bad dim");
    std::vector<double> theta(spec.dim_theta);
    for (int i = 0; i < spec.dim_theta; ++i)
        theta[i] = spec.transforms[i].to_constrained(u[i]);
    double ll = 0.0;
    switch (spec.model_id) {
        case ModelId::gaussian_conjugate: {
            for (int i = 0; i < spec.obs_rows; ++i)
                ll += normal_logpdf(data.observations.at(i, 0), theta[0], 1.0);
            break;
        }
        case ModelId::gev: {
            for (int i = 0; i < spec.obs_rows; ++i) {
                ll += detail::gev_obs_logpdf(data.observations.at(i, 0), theta[0], theta[1],
                                             theta[2]);
                if (ll == -INFINITY) return -INFINITY;
            }
            break;
        }
        case ModelId::bernoulli_glm: {
            auto eta = linalg::matvec(spec.design, theta);
            for (int i = 0; i < spec.obs_rows; ++i)
                ll += data.observations.at(i, 0) * eta[i] - softplus(eta[i]);
            break;
        }
        case ModelId::psychometric: {
            double m = 2.0 * theta[0] - 1.0;
            double w = theta[1], lambda = theta[2], gamma = theta[3], eta = theta[4];
            double nu = detail::psycho_nu(eta);
            for (int i = 0; i < spec.obs_rows; ++i) {
                double y = data.observations.at(i, 0);
                double n = data.observations.at(i, 1);
                double x = data.observations.at(i, 2);
                double pbar = detail::psycho_pbar(x, m, w, lambda, gamma);
                ll += detail::beta_binomial_logpmf(y, n, nu * pbar, nu * (1.0 - pbar));
            }
            break;
        }
    }
    if (std::isnan(ll)) throw NumericFailure("log_likelihood_u produced NaN");
    return ll;
}

inline double log_joint_u(const ModelSpec& spec, const std::vector<double>& u,
                          const DatasetRecord& data) {
    double lp = log_prior_u(spec, u);
    if (lp == -INFINITY) return -INFINITY;
    double ll = log_likelihood_u(spec, u, data);
    return lp + ll;
}

// Analytic gradient of log_prior_u + log_likelihood_u with respect to u.
inline std::vector<double> grad_log_joint_u(const ModelSpec& spec, const std::vector<double>& u,
                                            const DatasetRecord& data) {
    validate_dataset(spec, data);
    require(static_cast<int>(u.size()) == spec.dim_theta, "grad_log_joint_u: bad dim");
    std::vector<double> theta(spec.dim_theta), dtheta(spec.dim_theta);
    std::vector<double> grad(spec.dim_theta, 0.0);
    for (int i = 0; i < spec.dim_theta; ++i) {
        theta[i] = spec.transforms[i].to_constrained(u[i]);
        dtheta[i] = spec.transforms[i].dtheta_du(u[i]);
        grad[i] = spec.transforms[i].dlog_jacobian_du(u[i]);
    }

    // gradient of the log joint in constrained coordinates
    std::vector<double> g(spec.dim_theta, 0.0);
    switch (spec.model_id) {
        case ModelId::gaussian_conjugate: {
            g[0] = -theta[0];  // prior
            for (int i = 0; i < spec.obs_rows; ++i) g[0] += data.observations.at(i, 0) - theta[0];
            break;
        }
        case ModelId::gev: {
            g[0] = -(theta[0] - gev_prior::mu_mean) / (gev_prior::mu_sd * gev_prior::mu_sd);
            g[1] = -theta[1] / (gev_prior::sigma_sd * gev_prior::sigma_sd);
            g[2] = -theta[2] / (gev_prior::xi_sd * gev_prior::xi_sd);
            for (int i = 0; i < spec.obs_rows; ++i) {
                auto d = detail::gev_obs_logpdf_grad(data.observations.at(i, 0), theta[0],
                                                     theta[1], theta[2]);
                if (d.logpdf == -INFINITY)
                    throw NumericFailure("grad_log_joint_u: observation outside GEV support");
                g[0] += d.d_mu;
                g[1] += d.d_sigma;
                g[2] += d.d_xi;
            }
            break;
        }
        case ModelId::bernoulli_glm: {
            Tensor f = detail::glm_f_matrix();
            std::vector<double> tail(theta.begin() + 1, theta.end());
            auto ft = linalg::matvec(f, tail);
            auto ftf = linalg::matvec_t(f, ft);
            g[0] = -theta[0] / 2.0;
            for (int i = 0; i < 9; ++i) g[i + 1] = -ftf[i];
            auto eta = linalg::matvec(spec.design, theta);
            std::vector<double> resid(spec.obs_rows);
            for (int i = 0; i < spec.obs_rows; ++i)
                resid[i] = data.observations.at(i, 0) - sigmoid(eta[i]);
            auto data_term = linalg::matvec_t(spec.design, resid);
            for (int i = 0; i < 10; ++i) g[i] += data_term[i];
            break;
        }
        case ModelId::psychometric: {
            double m_tilde = theta[0], w = theta[1], lambda = theta[2], gamma = theta[3],
                   eta = theta[4];
            double m = 2.0 * m_tilde - 1.0;
            // priors
            g[0] = 1.0 / m_tilde - 1.0 / (1.0 - m_tilde);  // Beta(2,2)
            g[1] = -w;                                      // half-normal sd 1
            g[2] = -9.0 / (1.0 - lambda);                   // Beta(1,10)
            g[3] = -9.0 / (1.0 - gamma);
            g[4] = -9.0 / (1.0 - eta);
            double nu = 1.0 / (eta * eta) - 1.0;
            double dnu_deta = -2.0 / (eta * eta * eta);
            if (nu > detail::psycho_max_concentration) {
                nu = detail::psycho_max_concentration;
                dnu_deta = 0.0;
            }
            for (int i = 0; i < spec.obs_rows; ++i) {
                double y = data.observations.at(i, 0);
                double n = data.observations.at(i, 1);
                double x = data.observations.at(i, 2);
                double zarg = detail::psycho_width_scale * (x - m) / w;
                double s = normal_cdf(zarg);
                double phi = std::exp(-0.5 * zarg * zarg) / std::sqrt(2.0 * M_PI);
                double pbar = gamma + (1.0 - lambda - gamma) * s;
                double a = nu * pbar, b = nu * (1.0 - pbar);
                double dl_da, dl_db;
                detail::beta_binomial_dlogpmf(y, n, a, b, &dl_da, &dl_db);
                double dl_dpbar = nu * (dl_da - dl_db);
                double dl_dnu = pbar * dl_da + (1.0 - pbar) * dl_db;
                double ds_dm = -phi * detail::psycho_width_scale / w;
                double ds_dw = -phi * zarg / w;
                double amp = 1.0 - lambda - gamma;
                g[0] += dl_dpbar * amp * ds_dm * 2.0;  // m = 2 m_tilde - 1
                g[1] += dl_dpbar * amp * ds_dw;
                g[2] += dl_dpbar * (-s);
                g[3] += dl_dpbar * (1.0 - s);
                g[4] += dl_dnu * dnu_deta;
            }
            break;
        }
    }
    for (int i = 0; i < spec.dim_theta; ++i) {
        grad[i] += g[i] * dtheta[i];
        if (!std::isfinite(grad[i]))
            throw NumericFailure("grad_log_joint_u: non-finite gradient component " +
                                 std::to_string(i));
    }
    return grad;
}

// ---------------------------------------------------------------------------
// serialization

inline nlohmann::json model_to_json(const ModelSpec& spec) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["model_id"] = model_name(spec.model_id);
    j["dim_theta"] = spec.dim_theta;
    j["obs_rows"] = spec.obs_rows;
    j["obs_fields"] = spec.obs_fields;
    nlohmann::json transforms = nlohmann::json::array();
    for (const auto& t : spec.transforms) {
        nlohmann::json tj;
        tj["kind"] = t.kind == TransformKind::identity     ? "identity"
                     : t.kind == TransformKind::log_positive ? "log"
                                                             : "scaled_logit";
        if (t.kind == TransformKind::scaled_logit) {
            tj["lo"] = t.lo;
            tj["hi"] = t.hi;
        }
        transforms.push_back(tj);
    }
    j["transforms"] = transforms;
    if (spec.model_id == ModelId::bernoulli_glm) {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t r = 0; r < spec.design.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t c = 0; c < spec.design.cols(); ++c) row.push_back(spec.design.at(r, c));
            rows.push_back(row);
        }
        j["design"] = rows;
    }
    if (spec.model_id == ModelId::psychometric) {
        j["stimulus_levels"] = spec.stimulus_levels;
        j["trials_per_level"] = spec.trials_per_level;
    }
    return j;
}

inline ModelSpec model_from_json(const nlohmann::json& j) {
    ModelSpec spec;
    spec.model_id = model_from_name(j.at("model_id").get<std::string>());
    spec.dim_theta = j.at("dim_theta").get<int>();
    spec.obs_rows = j.at("obs_rows").get<int>();
    spec.obs_fields = j.at("obs_fields").get<int>();
    spec.transforms.clear();
    for (const auto& tj : j.at("transforms")) {
        Transform t;
        std::string kind = tj.at("kind").get<std::string>();
        if (kind == "identity") {
            t.kind = TransformKind::identity;
        } else if (kind == "log") {
            t.kind = TransformKind::log_positive;
        } else {
            t.kind = TransformKind::scaled_logit;
            t.lo = tj.at("lo").get<double>();
            t.hi = tj.at("hi").get<double>();
        }
        spec.transforms.push_back(t);
    }
    if (j.contains("design")) {
        const auto& rows = j.at("design");
        spec.design = Tensor::matrix(rows.size(), rows[0].size());
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < rows[r].size(); ++c)
                spec.design.at(r, c) = rows[r][c].get<double>();
    }
    if (j.contains("stimulus_levels"))
        spec.stimulus_levels = j.at("stimulus_levels").get<std::vector<double>>();
    if (j.contains("trials_per_level"))
        spec.trials_per_level = j.at("trials_per_level").get<int>();
    require(static_cast<int>(spec.transforms.size()) == spec.dim_theta,
            "model_from_json: transform table length mismatch");
    return spec;
}

}  // namespace abw
