#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "abw/models.hpp"
#include "oracles.hpp"

using namespace abw;

namespace {

ParameterVector random_support_point(const ModelSpec& spec, RngStream& rng) {
    return prior_sample(spec, rng, 1.0);
}

// Independent scalar GEV log-density in the direct t^(-1/xi - 1) form,
// evaluated in long double.
double gev_logpdf_reference(double y, double mu, double sigma, double xi) {
    long double z = (static_cast<long double>(y) - mu) / sigma;
    if (std::fabs(xi) < 1e-14) {
        return static_cast<double>(-std::log((long double)sigma) - z - std::exp(-z));
    }
    long double t = 1.0L + xi * z;
    if (t <= 0.0L) return -INFINITY;
    long double logt = std::log(t);
    return static_cast<double>(-std::log((long double)sigma) - (1.0L / xi + 1.0L) * logt -
                               std::exp(-logt / xi));
}

}  // namespace

TEST_CASE("gev prior: widen 1 matches stated moments") {
    ModelSpec spec = ModelSpec::gev();
    RngStream rng(100);
    std::vector<double> mus;
    for (int i = 0; i < 10000; ++i) {
        auto th = prior_sample(spec, rng, 1.0);
        mus.push_back(th.values[0]);
        REQUIRE(th.values[1] > 0.0);
        REQUIRE(std::fabs(th.values[2]) < 0.6);
    }
    double se = 0.2 / std::sqrt(10000.0);
    REQUIRE(std::fabs(oracle::mean_of(mus) - 3.8) < 3.0 * se);
}

TEST_CASE("gev prior: widen 2 doubles the shape bounds") {
    ModelSpec spec = ModelSpec::gev();
    RngStream rng(101);
    bool outside_training_bounds = false;
    for (int i = 0; i < 10000; ++i) {
        auto th = prior_sample(spec, rng, 2.0);
        REQUIRE(std::fabs(th.values[2]) < 1.2);
        if (std::fabs(th.values[2]) > 0.6) outside_training_bounds = true;
    }
    REQUIRE(outside_training_bounds);
}

TEST_CASE("prior widen 1 matches an independently coded sampler") {
    // distributional check against std::normal_distribution-based draws
    ModelSpec spec = ModelSpec::gev();
    RngStream rng(102);
    std::vector<double> mu_a, sigma_a, xi_a;
    for (int i = 0; i < 10000; ++i) {
        auto th = prior_sample(spec, rng, 1.0);
        mu_a.push_back(th.values[0]);
        sigma_a.push_back(th.values[1]);
        xi_a.push_back(th.values[2]);
    }
    std::mt19937 gen(4242);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> mu_b, sigma_b, xi_b;
    while (xi_b.size() < 10000) {
        mu_b.push_back(3.8 + 0.2 * nd(gen));
        sigma_b.push_back(std::fabs(0.3 * nd(gen)));
        double xi = 0.2 * nd(gen);
        if (std::fabs(xi) <= 0.6) xi_b.push_back(xi);
    }
    mu_b.resize(10000);
    sigma_b.resize(10000);
    double crit = oracle::ks_critical(10000, 10000, 0.01);
    REQUIRE(oracle::ks_two_sample(mu_a, mu_b) < crit);
    REQUIRE(oracle::ks_two_sample(sigma_a, sigma_b) < crit);
    REQUIRE(oracle::ks_two_sample(xi_a, xi_b) < crit);
}

TEST_CASE("psychometric prior cannot be widened") {
    ModelSpec spec = ModelSpec::psychometric();
    RngStream rng(103);
    REQUIRE_THROWS_AS(prior_sample(spec, rng, 2.0), ContractViolation);
}

TEST_CASE("glm simulate saturates at extreme logits") {
    ModelSpec spec = ModelSpec::bernoulli_glm();
    RngStream rng(104);
    // theta = large negative multiple of the first design vector
    std::vector<double> theta(10);
    for (int d = 0; d < 10; ++d) theta[d] = -50.0 * spec.design.at(0, d);
    auto eta = linalg::matvec(spec.design, theta);
    ParameterVector pv{theta, Space::constrained};
    auto data = simulate(spec, pv, rng);
    for (int i = 0; i < spec.obs_rows; ++i) {
        if (eta[i] < -12.0) REQUIRE(data.observations.at(i, 0) == 0.0);
        if (eta[i] > 12.0) REQUIRE(data.observations.at(i, 0) == 1.0);
    }
    REQUIRE(eta[0] < -12.0);  // trial 0 is saturated by construction
}

TEST_CASE("psychometric simulate matches analytic success probability") {
    ModelSpec spec = ModelSpec::psychometric();
    RngStream rng(105);
    // near-degenerate: no lapses/guesses, almost no overdispersion, threshold
    // far below the top stimulus level
    ParameterVector theta{{1e-12, 1.0, 1e-12, 1e-12, 1e-6}, Space::constrained};
    double m = 2.0 * theta.values[0] - 1.0;
    double pbar_top = detail::psycho_pbar(1.0, m, 1.0, 1e-12, 1e-12);
    int reps = 2000;
    double total_y = 0.0, total_n = 0.0;
    for (int r = 0; r < reps; ++r) {
        auto data = simulate(spec, theta, rng);
        total_y += data.observations.at(8, 0);  // stimulus level x = 1
        total_n += data.observations.at(8, 1);
    }
    double fraction = total_y / total_n;
    REQUIRE(pbar_top > 0.99);
    double se = std::sqrt(pbar_top * (1.0 - pbar_top) / total_n) + 1e-4;
    REQUIRE(std::fabs(fraction - pbar_top) < 5.0 * se);
}

TEST_CASE("gev simulate with xi 0 has the Gumbel mean") {
    ModelSpec spec = ModelSpec::gev();
    spec.obs_rows = 100000;
    RngStream rng(106);
    double mu = 3.8, sigma = 0.3;
    ParameterVector theta{{mu, sigma, 0.0}, Space::constrained};
    auto data = simulate(spec, theta, rng);
    std::vector<double> ys(data.observations.data);
    double expect = mu + sigma * 0.57721566490153286;
    double se = sigma * (M_PI / std::sqrt(6.0)) / std::sqrt(100000.0);
    REQUIRE(std::fabs(oracle::mean_of(ys) - expect) < 4.0 * se);
}

TEST_CASE("transform identities") {
    ModelSpec gev = ModelSpec::gev();
    ParameterVector theta{{3.8, 1.0, 0.0}, Space::constrained};
    auto u = to_unconstrained(gev, theta);
    REQUIRE(u.values[1] == 0.0);  // log sigma at sigma = 1
    REQUIRE(u.values[2] == 0.0);  // logit midpoint of [-0.6, 0.6]
}

TEST_CASE("transforms round-trip at 1e-10") {
    RngStream rng(107);
    for (ModelId id : {ModelId::gaussian_conjugate, ModelId::gev, ModelId::bernoulli_glm,
                       ModelId::psychometric}) {
        ModelSpec spec = ModelSpec::make(id);
        for (int i = 0; i < 250; ++i) {
            auto theta = random_support_point(spec, rng);
            auto u = to_unconstrained(spec, theta);
            auto back = to_constrained(spec, u);
            for (int d = 0; d < spec.dim_theta; ++d)
                REQUIRE(std::fabs(back.values[d] - theta.values[d]) <= 1e-10);
        }
    }
}

TEST_CASE("transform jacobian matches numeric derivative of to_constrained") {
    RngStream rng(108);
    ModelSpec spec = ModelSpec::gev();
    for (int i = 0; i < 200; ++i) {
        auto u = to_unconstrained(spec, random_support_point(spec, rng));
        for (int d = 0; d < spec.dim_theta; ++d) {
            const Transform& tr = spec.transforms[d];
            double h = 1e-6;
            double fd = (tr.to_constrained(u.values[d] + h) - tr.to_constrained(u.values[d] - h)) /
                        (2.0 * h);
            REQUIRE(std::fabs(fd - std::exp(tr.log_jacobian(u.values[d]))) < 1e-8 * std::max(1.0, std::fabs(fd)));
        }
    }
}

TEST_CASE("glm log-likelihood at zero is 100 log half") {
    ModelSpec spec = ModelSpec::bernoulli_glm();
    RngStream rng(109);
    auto data = simulate(spec, random_support_point(spec, rng), rng);
    std::vector<double> zero(10, 0.0);
    REQUIRE(log_likelihood_u(spec, zero, data) ==
            Catch::Approx(100.0 * std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("gev log-density matches an independent implementation") {
    ModelSpec spec = ModelSpec::gev();
    spec.obs_rows = 1;
    RngStream rng(110);
    for (int i = 0; i < 10; ++i) {
        auto theta = random_support_point(spec, rng);
        auto data = simulate(spec, theta, rng);
        auto u = to_unconstrained(spec, theta);
        double got = log_likelihood_u(spec, u.values, data);
        double want = gev_logpdf_reference(data.observations.at(0, 0), theta.values[0],
                                           theta.values[1], theta.values[2]);
        REQUIRE(got == Catch::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("psychometric log-pmf matches quadrature over the latent rate") {
    ModelSpec spec = ModelSpec::psychometric();
    spec.obs_rows = 1;
    spec.stimulus_levels = {0.0625};
    RngStream rng(111);
    ParameterVector theta{{0.55, 0.8, 0.05, 0.08, 0.3}, Space::constrained};
    auto data = simulate(spec, theta, rng);
    auto u = to_unconstrained(spec, theta);
    double got = log_likelihood_u(spec, u.values, data);

    // midpoint-rule integral of Binomial(y | n, p) Beta(p | a, b) over p
    double m = 2.0 * theta.values[0] - 1.0;
    double pbar = detail::psycho_pbar(0.0625, m, theta.values[1], theta.values[2],
                                      theta.values[3]);
    double nu = 1.0 / (theta.values[4] * theta.values[4]) - 1.0;
    double a = nu * pbar, b = nu * (1.0 - pbar);
    double y = data.observations.at(0, 0), n = data.observations.at(0, 1);
    long grid = 100000;
    long double sum = 0.0L;
    double log_beta_norm = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    double log_choose = std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0);
    for (long g = 0; g < grid; ++g) {
        double p = (g + 0.5) / grid;
        double logf = log_choose + y * std::log(p) + (n - y) * std::log1p(-p) +
                      (a - 1.0) * std::log(p) + (b - 1.0) * std::log1p(-p) - log_beta_norm;
        sum += std::exp((long double)logf);
    }
    double want = static_cast<double>(std::log(sum / grid));
    REQUIRE(std::fabs(got - want) <= 1e-6);
}

TEST_CASE("likelihoods normalize over data space") {
    SECTION("bernoulli_glm, 10-trial variant, all 1024 outcomes") {
        ModelSpec spec = ModelSpec::bernoulli_glm(10);
        RngStream rng(112);
        auto theta = random_support_point(spec, rng);
        auto u = to_unconstrained(spec, theta);
        long double total = 0.0L;
        DatasetRecord data;
        data.model_id = spec.model_id;
        data.observations = Tensor::matrix(10, 1);
        for (int mask = 0; mask < 1024; ++mask) {
            for (int i = 0; i < 10; ++i) data.observations.at(i, 0) = (mask >> i) & 1;
            total += std::exp((long double)log_likelihood_u(spec, u.values, data));
        }
        REQUIRE(static_cast<double>(total) == Catch::Approx(1.0).margin(1e-10));
    }
    SECTION("psychometric with n_i = 5 sums to one at every stimulus level") {
        // the likelihood factorizes over rows, so a one-row spec per level
        // turns normalization into a direct 6-term sum
        ModelSpec full = ModelSpec::psychometric(5);
        RngStream rng(113);
        auto theta = random_support_point(full, rng);
        for (double level : full.stimulus_levels) {
            ModelSpec spec = full;
            spec.obs_rows = 1;
            spec.stimulus_levels = {level};
            auto u = to_unconstrained(spec, theta);
            DatasetRecord data;
            data.model_id = spec.model_id;
            data.observations = Tensor::matrix(1, 3);
            data.observations.at(0, 1) = 5;
            data.observations.at(0, 2) = level;
            long double total = 0.0L;
            for (int y = 0; y <= 5; ++y) {
                data.observations.at(0, 0) = y;
                total += std::exp((long double)log_likelihood_u(spec, u.values, data));
            }
            REQUIRE(static_cast<double>(total) == Catch::Approx(1.0).margin(1e-12));
        }
    }
}

TEST_CASE("grad_log_joint_u matches finite differences for every model") {
    RngStream rng(114);
    for (ModelId id : {ModelId::gaussian_conjugate, ModelId::gev, ModelId::bernoulli_glm,
                       ModelId::psychometric}) {
        ModelSpec spec = ModelSpec::make(id);
        double worst = 0.0;
        int checked = 0;
        while (checked < 100) {
            auto theta = random_support_point(spec, rng);
            auto data = simulate(spec, theta, rng);
            auto u = to_unconstrained(spec, random_support_point(spec, rng));
            double lj = log_joint_u(spec, u.values, data);
            if (!std::isfinite(lj)) continue;  // rare: GEV support miss
            auto grad = grad_log_joint_u(spec, u.values, data);
            auto fd = oracle::fd_gradient(
                [&](const std::vector<double>& v) { return log_joint_u(spec, v, data); },
                u.values, 1e-6);
            worst = std::max(worst, oracle::max_rel_err(grad, fd));
            ++checked;
        }
        INFO("model " << model_name(id));
        REQUIRE(worst <= 1e-5);
    }
}

TEST_CASE("gaussian gradient is zero at the posterior mode") {
    ModelSpec spec = ModelSpec::gaussian_conjugate();
    RngStream rng(115);
    auto data = simulate(spec, ParameterVector{{0.7}, Space::constrained}, rng);
    double s = 0.0;
    for (int i = 0; i < spec.obs_rows; ++i) s += data.observations.at(i, 0);
    std::vector<double> mode = {s / (spec.obs_rows + 1.0)};
    auto grad = grad_log_joint_u(spec, mode, data);
    REQUIRE(std::fabs(grad[0]) < 1e-12);
}

TEST_CASE("glm gradient data term at zero is design^T (y - 1/2)") {
    ModelSpec spec = ModelSpec::bernoulli_glm();
    RngStream rng(116);
    auto data = simulate(spec, random_support_point(spec, rng), rng);
    std::vector<double> zero(10, 0.0);
    auto grad = grad_log_joint_u(spec, zero, data);
    // prior gradient at zero vanishes, so grad is the data term alone
    std::vector<double> resid(spec.obs_rows);
    for (int i = 0; i < spec.obs_rows; ++i) resid[i] = data.observations.at(i, 0) - 0.5;
    auto want = linalg::matvec_t(spec.design, resid);
    for (int d = 0; d < 10; ++d) REQUIRE(grad[d] == Catch::Approx(want[d]).margin(1e-12));
}

TEST_CASE("gev observations outside support give -infinity likelihood") {
    ModelSpec spec = ModelSpec::gev();
    spec.obs_rows = 1;
    DatasetRecord data;
    data.model_id = ModelId::gev;
    data.observations = Tensor::matrix(1, 1);
    // xi > 0: support is y >= mu - sigma/xi
    ParameterVector theta{{0.0, 1.0, 0.5}, Space::constrained};
    data.observations.at(0, 0) = -10.0;  // far below the lower endpoint -2
    auto u = to_unconstrained(spec, theta);
    REQUIRE(log_likelihood_u(spec, u.values, data) == -INFINITY);
    REQUIRE_THROWS_AS(grad_log_joint_u(spec, u.values, data), NumericFailure);
}

TEST_CASE("model specs serialize and round-trip") {
    for (ModelId id : {ModelId::gaussian_conjugate, ModelId::gev, ModelId::bernoulli_glm,
                       ModelId::psychometric}) {
        ModelSpec spec = ModelSpec::make(id);
        auto j = model_to_json(spec);
        ModelSpec back = model_from_json(j);
        REQUIRE(back.dim_theta == spec.dim_theta);
        REQUIRE(back.obs_rows == spec.obs_rows);
        REQUIRE(back.design.data == spec.design.data);
        REQUIRE(back.stimulus_levels == spec.stimulus_levels);
        // same prior draws from the rebuilt spec
        RngStream r1(9), r2(9);
        auto a = prior_sample(spec, r1);
        auto b = prior_sample(back, r2);
        REQUIRE(a.values == b.values);
    }
}
