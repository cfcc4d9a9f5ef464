#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "diffplan/diffusion.hpp"
#include "diffplan/errors.hpp"
#include "diffplan/rng.hpp"

using namespace diffplan;

namespace {

TrajectoryMat make_x0(int rows, unsigned seed) {
    Rng rng(seed);
    TrajectoryMat m = TrajectoryMat::zeros(rows);
    for (double& v : m.xy) v = rng.uniform(-1.0, 1.0);
    return m;
}

double max_abs_diff(const TrajectoryMat& a, const TrajectoryMat& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.xy.size(); ++i) worst = std::max(worst, std::abs(a.xy[i] - b.xy[i]));
    return worst;
}

}  // namespace

TEST_CASE("linear schedule T=2 hand oracle") {
    ScheduleParams sp = build_schedule(ScheduleKind::Linear, 2, 0.1, 0.2);
    CHECK(sp.betas[0] == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(sp.betas[1] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(sp.alphabar(1) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(sp.alphabar(2) == doctest::Approx(0.72).epsilon(1e-15));
    CHECK(sp.alphabar(0) == 1.0);
}

TEST_CASE("alphabars strictly decrease and betas stay in (0,1)") {
    for (ScheduleKind kind : {ScheduleKind::Linear, ScheduleKind::SquareCosine}) {
        ScheduleParams sp = build_schedule(kind, 100, 1e-4, 0.02);
        for (int t = 1; t <= 100; ++t) {
            CHECK(sp.beta(t) > 0.0);
            CHECK(sp.beta(t) < 1.0);
            CHECK(sp.alphabar(t) < sp.alphabar(t - 1));
        }
    }
}

TEST_CASE("alphabar product invariant to 1e-12") {
    for (ScheduleKind kind : {ScheduleKind::Linear, ScheduleKind::SquareCosine}) {
        ScheduleParams sp = build_schedule(kind, 100, 1e-4, 0.02);
        double prod = 1.0;
        for (int t = 1; t <= 100; ++t) {
            prod *= 1.0 - sp.beta(t);
            CHECK(std::abs(prod - sp.alphabar(t)) <= 1e-12);
        }
    }
}

TEST_CASE("square-cosine T=100 terminal alphabar is below 0.01") {
    ScheduleParams sp = build_schedule(ScheduleKind::SquareCosine, 100, 1e-4, 0.02);
    CHECK(sp.alphabar(100) < 0.01);
}

TEST_CASE("invalid schedule bounds raise config error") {
    CHECK_THROWS_AS(build_schedule(ScheduleKind::Linear, 0, 1e-4, 0.02), ConfigError);
    CHECK_THROWS_AS(build_schedule(ScheduleKind::Linear, 10, 0.2, 0.1), ConfigError);
    CHECK_THROWS_AS(build_schedule(ScheduleKind::Linear, 10, 0.0, 0.1), ConfigError);
    CHECK_THROWS_AS(build_schedule(ScheduleKind::Linear, 10, 0.1, 1.0), ConfigError);
}

TEST_CASE("forward_sample validates t and stores a reproducing eps") {
    ScheduleParams sp = build_schedule(ScheduleKind::SquareCosine, 100, 1e-4, 0.02);
    TrajectoryMat x0 = make_x0(10, 1);
    Rng rng(2);
    CHECK_THROWS_AS(forward_sample(x0, 0, sp, rng), IndexError);
    CHECK_THROWS_AS(forward_sample(x0, 101, sp, rng), IndexError);

    NoisySample ns = forward_sample(x0, 37, sp, rng);
    const double sa = std::sqrt(sp.alphabar(37));
    const double sb = std::sqrt(1.0 - sp.alphabar(37));
    for (size_t i = 0; i < x0.xy.size(); ++i)
        CHECK(ns.x_t.xy[i] == sa * x0.xy[i] + sb * ns.eps.xy[i]);
}

TEST_CASE("near-zero noise level keeps x_t close to x0") {
    ScheduleParams sp = build_schedule(ScheduleKind::Linear, 10, 1e-8, 1e-7);
    TrajectoryMat x0 = make_x0(6, 3);
    Rng rng(4);
    NoisySample ns = forward_sample(x0, 1, sp, rng);
    CHECK(max_abs_diff(ns.x_t, x0) < 1e-3);
}

TEST_CASE("forward marginal statistics match the closed form") {
    ScheduleParams sp = build_schedule(ScheduleKind::SquareCosine, 100, 1e-4, 0.02);
    const int t = 60, draws = 20000;
    TrajectoryMat x0 = TrajectoryMat::zeros(1);
    x0.x(0) = 0.7;
    x0.y(0) = -0.3;
    Rng rng(9);
    double sum_x = 0.0, sum_sq = 0.0;
    for (int i = 0; i < draws; ++i) {
        NoisySample ns = forward_sample(x0, t, sp, rng);
        const double centered = ns.x_t.x(0) - std::sqrt(sp.alphabar(t)) * x0.x(0);
        sum_x += ns.x_t.x(0);
        sum_sq += centered * centered;
    }
    const double var = 1.0 - sp.alphabar(t);
    const double mean_err = std::abs(sum_x / draws - std::sqrt(sp.alphabar(t)) * x0.x(0));
    // 4 sigma bounds on the Monte Carlo estimators
    CHECK(mean_err < 4.0 * std::sqrt(var / draws));
    CHECK(std::abs(sum_sq / draws - var) < 4.0 * var * std::sqrt(2.0 / draws));
}

TEST_CASE("ddim with an oracle denoiser reconstructs x0") {
    ScheduleParams sp = build_schedule(ScheduleKind::SquareCosine, 100, 1e-4, 0.02);
    TrajectoryMat x0 = make_x0(10, 5);
    Denoiser oracle = [&](const TrajectoryMat&, int) { return x0; };
    for (int steps : {1, 2, 5, 10, 100}) {
        Rng rng(6);
        TrajectoryMat out = sample_trajectory(oracle, 10, sp, steps, rng);
        CHECK(max_abs_diff(out, x0) <= 1e-9);
    }
}

TEST_CASE("ddim rejects non-monotone step pairs") {
    ScheduleParams sp = build_schedule(ScheduleKind::SquareCosine, 100, 1e-4, 0.02);
    TrajectoryMat x = make_x0(4, 7);
    CHECK_THROWS_AS(ddim_step(x, x, 10, 10, sp), IndexError);
    CHECK_THROWS_AS(ddim_step(x, x, 10, 20, sp), IndexError);
}

TEST_CASE("ddim eta=0 is deterministic") {
    ScheduleParams sp = build_schedule(ScheduleKind::SquareCosine, 100, 1e-4, 0.02);
    TrajectoryMat x = make_x0(4, 8);
    TrajectoryMat p = make_x0(4, 9);
    TrajectoryMat a = ddim_step(x, p, 80, 40, sp);
    TrajectoryMat b = ddim_step(x, p, 80, 40, sp);
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("strided timesteps start at T and end at 0") {
    std::vector<int> ts = stride_timesteps(100, 2);
    CHECK(ts == std::vector<int>{100, 50, 0});
    for (int n : {1, 2, 5, 10, 100}) {
        std::vector<int> seq = stride_timesteps(100, n);
        CHECK(seq.front() == 100);
        CHECK(seq.back() == 0);
        for (size_t i = 1; i < seq.size(); ++i) CHECK(seq[i] < seq[i - 1]);
    }
    CHECK_THROWS_AS(stride_timesteps(100, 0), ConfigError);
}

TEST_CASE("sample_trajectory is bit-identical under a fixed seed") {
    ScheduleParams sp = build_schedule(ScheduleKind::SquareCosine, 100, 1e-4, 0.02);
    Denoiser half = [](const TrajectoryMat& x, int) {
        TrajectoryMat out = x;
        for (double& v : out.xy) v *= 0.5;
        return out;
    };
    Rng r1(13), r2(13);
    TrajectoryMat a = sample_trajectory(half, 10, sp, 2, r1);
    TrajectoryMat b = sample_trajectory(half, 10, sp, 2, r2);
    CHECK(a.xy == b.xy);
}

TEST_CASE("non-finite denoiser output raises a numeric error") {
    ScheduleParams sp = build_schedule(ScheduleKind::SquareCosine, 100, 1e-4, 0.02);
    Denoiser bad = [](const TrajectoryMat& x, int) {
        TrajectoryMat out = x;
        out.xy[0] = std::nan("");
        return out;
    };
    Rng rng(14);
    CHECK_THROWS_AS(sample_trajectory(bad, 4, sp, 2, rng), NumericError);
}

TEST_CASE("noise-prediction sampling recovers x0 from an eps oracle") {
    ScheduleParams sp = build_schedule(ScheduleKind::SquareCosine, 100, 1e-4, 0.02);
    TrajectoryMat x0 = make_x0(6, 15);
    // Oracle that reports the exact noise content of x_t.
    Denoiser eps_oracle = [&](const TrajectoryMat& x_t, int t) {
        TrajectoryMat eps = TrajectoryMat::zeros(x_t.rows);
        const double sa = std::sqrt(sp.alphabar(t));
        const double sb = std::sqrt(1.0 - sp.alphabar(t));
        for (size_t i = 0; i < eps.xy.size(); ++i)
            eps.xy[i] = (x_t.xy[i] - sa * x0.xy[i]) / sb;
        return eps;
    };
    Rng rng(16);
    TrajectoryMat out = sample_trajectory(eps_oracle, 6, sp, 5, rng, true);
    CHECK(max_abs_diff(out, x0) <= 1e-9);
}
