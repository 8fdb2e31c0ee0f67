#include <catch2/catch_amalgamated.hpp>

#include "abw/linalg.hpp"
#include "abw/optimizer.hpp"
#include "abw/parallel.hpp"
#include "abw/rng.hpp"
#include "oracles.hpp"

using namespace abw;

TEST_CASE("rng streams are deterministic and distinct") {
    RngStream a = RngStream::derive(42, "trainer", 0);
    RngStream b = RngStream::derive(42, "trainer", 0);
    RngStream c = RngStream::derive(42, "trainer", 1);
    RngStream d = RngStream::derive(42, "mcmc", 0);
    for (int i = 0; i < 100; ++i) {
        double x = a.uniform();
        REQUIRE(x == b.uniform());
        REQUIRE(x > 0.0);
        REQUIRE(x < 1.0);
    }
    REQUIRE(a.uniform() != c.uniform());
    REQUIRE(a.uniform() != d.uniform());
}

TEST_CASE("rng normal moments") {
    RngStream rng(7);
    std::vector<double> xs(100000);
    for (auto& x : xs) x = rng.normal();
    REQUIRE(std::fabs(oracle::mean_of(xs)) < 0.02);
    REQUIRE(oracle::variance_of(xs) == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("rng gamma moments") {
    RngStream rng(8);
    std::vector<double> xs(200000);
    for (auto& x : xs) x = rng.gamma(3.0, 2.0);
    REQUIRE(oracle::mean_of(xs) == Catch::Approx(6.0).margin(0.05));
    REQUIRE(oracle::variance_of(xs) == Catch::Approx(12.0).margin(0.4));
}

TEST_CASE("rng beta moments") {
    RngStream rng(9);
    std::vector<double> xs(100000);
    for (auto& x : xs) x = rng.beta(1.0, 10.0);
    REQUIRE(oracle::mean_of(xs) == Catch::Approx(1.0 / 11.0).margin(0.002));
}

TEST_CASE("halton jitter is the base-2 van der Corput sequence") {
    REQUIRE(halton_jitter(0) == 0.5);
    REQUIRE(halton_jitter(1) == 0.25);
    REQUIRE(halton_jitter(2) == 0.75);
    REQUIRE(halton_jitter(3) == 0.125);
    for (int i = 0; i < 1000; ++i) {
        REQUIRE(halton_jitter(i) > 0.0);
        REQUIRE(halton_jitter(i) < 1.0);
    }
}

TEST_CASE("cholesky and solves") {
    Tensor a = Tensor::matrix(3, 3);
    double vals[9] = {4, 2, 1, 2, 5, 2, 1, 2, 6};
    for (int i = 0; i < 9; ++i) a.data[i] = vals[i];
    Tensor l = linalg::cholesky(a);
    Tensor rec = linalg::matmul(l, linalg::transpose(l));
    for (int i = 0; i < 9; ++i) REQUIRE(rec.data[i] == Catch::Approx(a.data[i]).margin(1e-12));

    std::vector<double> b = {1.0, -2.0, 3.0};
    auto x = linalg::cholesky_solve(l, b);
    auto back = linalg::matvec(a, x);
    for (int i = 0; i < 3; ++i) REQUIRE(back[i] == Catch::Approx(b[i]).margin(1e-12));

    Tensor inv = linalg::spd_inverse(a);
    Tensor eye = linalg::matmul(a, inv);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            REQUIRE(eye.at(i, j) == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-12));

    REQUIRE(linalg::det(a) == Catch::Approx(std::exp(linalg::log_det_from_cholesky(l))));
}

TEST_CASE("clip_global_norm scales only above the threshold") {
    GradMap g;
    g[0] = Tensor::vector({1.0, 2.0});
    g[1] = Tensor::vector({2.0});
    // global norm 3
    auto clipped = clip_global_norm(g, 1.5);
    REQUIRE(clipped[0][0] == Catch::Approx(0.5));
    REQUIRE(clipped[0][1] == Catch::Approx(1.0));
    REQUIRE(clipped[1][0] == Catch::Approx(1.0));

    GradMap small;
    small[0] = Tensor::vector({0.6, 0.8});  // norm 1
    auto same = clip_global_norm(small, 1.5);
    REQUIRE(same[0][0] == 0.6);
    REQUIRE(same[0][1] == 0.8);

    GradMap tri;
    tri[0] = Tensor::vector({3.0, 4.0});  // norm 5 -> scale 0.3
    auto scaled = clip_global_norm(tri, 1.5);
    REQUIRE(scaled[0][0] == Catch::Approx(0.9));
    REQUIRE(scaled[0][1] == Catch::Approx(1.2));

    REQUIRE(global_grad_norm(clip_global_norm(g, 1.5)) <= 1.5 + 1e-12);
    REQUIRE(clip_global_norm(GradMap{}, 1.0).empty());
}

TEST_CASE("cosine schedule endpoints and continuity") {
    long total = 512L * 300L;
    auto s = LrSchedule::cosine(2.5e-4, 5.0e-4, 0.0, total);
    REQUIRE(s.rate(0) == 2.5e-4);
    REQUIRE(s.rate(total) == Catch::Approx(0.0).margin(1e-18));
    REQUIRE(s.rate(total + 5000) == s.rate(total));

    // junction continuity: linear ramp endpoint meets the cosine start
    double linear_end = s.initial_rate + (s.warmup_target - s.initial_rate) * 1.0;
    REQUIRE(std::fabs(s.rate(s.warmup_steps) - linear_end) <= 1e-12);

    // post-warmup midpoint is half the peak when alpha = 0
    long mid = s.warmup_steps + (total - s.warmup_steps) / 2;
    REQUIRE(s.rate(mid) == Catch::Approx(0.5 * s.warmup_target).epsilon(1e-9));

    for (long step : {0L, 1L, s.warmup_steps, mid, total - 1}) REQUIRE(s.rate(step) > 0.0);
}

TEST_CASE("adamw decay-only update") {
    ParamStore params;
    params.add("p", Tensor::vector({2.0, -3.0}));
    OptimizerState st(params, 0.1);
    GradMap zero;
    zero[0] = Tensor::vector({0.0, 0.0});
    optimizer_step(params, zero, st, 0.5);
    REQUIRE(params.tensors[0][0] == Catch::Approx(2.0 * (1.0 - 0.5 * 0.1)));
    REQUIRE(params.tensors[0][1] == Catch::Approx(-3.0 * (1.0 - 0.5 * 0.1)));
}

TEST_CASE("adamw first step has magnitude lr") {
    ParamStore params;
    params.add("p", Tensor::vector({1.0}));
    OptimizerState st(params, 0.0);
    GradMap g;
    g[0] = Tensor::vector({1.0});
    optimizer_step(params, g, st, 0.01);
    REQUIRE(std::fabs(1.0 - params.tensors[0][0]) == Catch::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adamw minimizes a quadratic") {
    ParamStore params;
    params.add("x", Tensor::vector({1.0}));
    OptimizerState st(params, 0.0);
    for (int i = 0; i < 500; ++i) {
        GradMap g;
        g[0] = Tensor::vector({2.0 * params.tensors[0][0]});
        optimizer_step(params, g, st, 0.05);
    }
    REQUIRE(std::fabs(params.tensors[0][0]) < 0.01);
}

TEST_CASE("optimizer shape mismatch is a contract violation") {
    ParamStore params;
    params.add("p", Tensor::vector({1.0, 2.0}));
    OptimizerState st(params, 0.0);
    GradMap g;
    g[0] = Tensor::vector({1.0});
    REQUIRE_THROWS_AS(optimizer_step(params, g, st, 0.1), ContractViolation);
}

TEST_CASE("parallel_for visits every index once and propagates errors") {
    std::vector<int> hits(1000, 0);
    parallel_for(1000, 8, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) REQUIRE(h == 1);
    REQUIRE_THROWS_AS(
        parallel_for(100, 4,
                     [&](std::size_t i) {
                         if (i == 57) throw std::runtime_error("boom");
                     }),
        std::runtime_error);
}
