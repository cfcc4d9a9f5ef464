#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "diffplan/errors.hpp"
#include "diffplan/losses.hpp"
#include "diffplan/rng.hpp"
#include "diffplan/tensor.hpp"

using namespace diffplan;

TEST_CASE("diffusion loss zero at identity and one at unit x-offset") {
    Tensor truth({10, 2}, std::vector<double>(20, 0.25));
    CHECK(diffusion_loss(truth, truth).item() == 0.0);

    std::vector<double> shifted(20, 0.25);
    for (int i = 0; i < 10; ++i) shifted[2 * i] += 1.0;
    Tensor pred({10, 2}, shifted);
    CHECK(diffusion_loss(truth, pred).item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("diffusion loss gradient is 2(pred-true)/count") {
    Tensor truth({3, 2}, {0, 0, 1, 1, 2, 2});
    Tensor pred({3, 2}, {0.5, 0, 1, 2, 2, 1}, true);
    Tensor loss = diffusion_loss(truth, pred);
    GradTape::backward(loss);
    for (int i = 0; i < 6; ++i) {
        const double want = 2.0 * (pred.data()[i] - truth.data()[i]) / 3.0;
        CHECK(pred.grad()[i] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("speed loss closed forms and weight linearity") {
    Tensor onehot({1, 4}, {0, 1, 0, 0});
    Tensor uniform({1, 4}, {0.25, 0.25, 0.25, 0.25});
    const double ln4 = std::log(4.0);
    CHECK(speed_loss(onehot, uniform, {1, 1, 1, 1}).item() ==
          doctest::Approx(ln4).epsilon(1e-6));
    CHECK(speed_loss(onehot, uniform, {1, 2, 1, 1}).item() ==
          doctest::Approx(2 * ln4).epsilon(1e-6));

    Tensor perfect({1, 4}, {0, 1, 0, 0});
    CHECK(speed_loss(onehot, perfect, {1, 1, 1, 1}).item() < 1e-7);
}

TEST_CASE("speed loss rejects off-simplex rows") {
    Tensor onehot({1, 4}, {1, 0, 0, 0});
    Tensor bad({1, 4}, {0.5, 0.5, 0.5, 0.5});
    CHECK_THROWS_AS(speed_loss(onehot, bad, {1, 1, 1, 1}), ValidationError);
    Tensor negative({1, 4}, {1.2, -0.2, 0, 0});
    CHECK_THROWS_AS(speed_loss(onehot, negative, {1, 1, 1, 1}), ValidationError);
}

TEST_CASE("semantic CE sums over pixels; normalize flag averages") {
    Tensor onehot({2, 3}, {1, 0, 0, 0, 0, 1});
    Tensor probs({2, 3}, {0.5, 0.25, 0.25, 0.25, 0.25, 0.5});
    const double per_pixel = -std::log(0.5);
    CHECK(semantic_ce(onehot, probs, {1, 1, 1}).item() ==
          doctest::Approx(2 * per_pixel).epsilon(1e-6));
    CHECK(semantic_ce(onehot, probs, {1, 1, 1}, 1e-8, true).item() ==
          doctest::Approx(per_pixel).epsilon(1e-6));
}

TEST_CASE("bev CE over masks") {
    Tensor onehot({3, 2}, {1, 0, 0, 1, 1, 0});
    Tensor probs({3, 2}, {0.9, 0.1, 0.3, 0.7, 0.5, 0.5});
    const double ce0 = -std::log(0.9 + 1e-8);
    CHECK(bev_ce(onehot, probs, {true, false, false}).item() ==
          doctest::Approx(ce0).epsilon(1e-9));

    const double full = (-std::log(0.9 + 1e-8) - std::log(0.7 + 1e-8) -
                         std::log(0.5 + 1e-8)) / 3.0;
    CHECK(bev_ce(onehot, probs, {true, true, true}).item() ==
          doctest::Approx(full).epsilon(1e-9));
    CHECK_THROWS_AS(bev_ce(onehot, probs, {false, false, false}), ValidationError);
}

TEST_CASE("depth L1 constant offset and empty mask") {
    Tensor truth({4, 1}, {0.1, 0.2, 0.3, 0.4});
    Tensor pred({4, 1}, {0.6, 0.7, 0.8, 0.9});
    CHECK(depth_l1(truth, pred, {true, true, true, true}).item() ==
          doctest::Approx(0.5).epsilon(1e-12));
    CHECK(depth_l1(truth, truth, {true, true, true, true}).item() == 0.0);
    CHECK_THROWS_AS(depth_l1(truth, pred, {false, false, false, false}), ValidationError);
}

TEST_CASE("heatmap focal loss vanishes at perfect positives") {
    Tensor target({3, 1}, {1.0, 0.0, 0.0});
    Tensor pred({3, 1}, {1.0 - 1e-12, 1e-12, 1e-12});
    CHECK(heatmap_focal(target, pred, 1, 2.0, 4.0).item() ==
          doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("yaw class CE uniform logits equals ln K") {
    Tensor logits({2, 12}, std::vector<double>(24, 0.0));
    CHECK(yaw_class_ce({3, 7}, logits).item() ==
          doctest::Approx(std::log(12.0)).epsilon(1e-6));
}

TEST_CASE("yaw residual smooth-L1 piecewise values") {
    Tensor t1({1, 1}, {0.0});
    Tensor p1({1, 1}, {2.0});
    CHECK(yaw_residual_loss(t1, p1, 1.0).item() == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(yaw_residual_loss(t1, t1, 1.0).item() == 0.0);
    Tensor pd({1, 1}, {1.0});
    CHECK(yaw_residual_loss(t1, pd, 1.0).item() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("existence focal with modulation off is half of BCE") {
    std::vector<double> y = {1.0, 0.0};
    Tensor probs({2, 1}, {0.8, 0.3});
    const double bce = (-std::log(0.8 + 1e-8) - std::log(0.7 + 1e-8)) / 2.0;
    CHECK(agent_existence_focal(y, probs, 0.5, 0.0).item() ==
          doctest::Approx(0.5 * bce).epsilon(1e-9));
    Tensor outside({2, 1}, {1.0, 0.3});
    CHECK_THROWS_AS(agent_existence_focal(y, outside, 0.25, 2.0), ValidationError);
}

TEST_CASE("agent box loss unit errors with unit mu") {
    Tensor truth({1, 5}, {0, 0, 0, 0, 0});
    Tensor pred({1, 5}, {1, 1, 1, 1, 1});
    CHECK(agent_box_loss(truth, pred, {1, 1, 1, 1, 1}, 1.0).item() ==
          doctest::Approx(2.5).epsilon(1e-12));
    CHECK(agent_box_loss(truth, truth, {1, 1, 1, 1, 1}, 1.0).item() == 0.0);
}

TEST_CASE("detection losses: empty object set keeps regression terms at zero") {
    LossConfig cfg;
    DetectionTargets tg;
    tg.heatmap = Tensor({4, 1}, {0.0, 0.0, 0.0, 0.0});
    tg.n_objects = 0;
    DetectionPreds pr;
    pr.heatmap = Tensor({4, 1}, {0.1, 0.1, 0.1, 0.1});
    auto terms = detection_losses(tg, pr, cfg);
    CHECK(terms.size() == 5);
    for (const auto& [name, t] : terms) {
        if (name == "det_heatmap") {
            CHECK(t.item() > 0.0);
        } else {
            CHECK(t.item() == 0.0);
        }
    }
}

TEST_CASE("combine_supervised identity, scaling, and missing weights") {
    Tensor a = Tensor::scalar(2.0);
    Tensor b = Tensor::scalar(3.0);
    std::map<std::string, double> lam{{"a", 1.0}, {"b", 1.0}};
    CHECK(combine_supervised({{"a", a}}, lam).item() == 2.0);
    CHECK(combine_supervised({{"a", a}, {"b", b}}, lam).item() == 5.0);

    std::map<std::string, double> scaled{{"a", 3.0}, {"b", 3.0}};
    CHECK(combine_supervised({{"a", a}, {"b", b}}, scaled).item() ==
          doctest::Approx(15.0).epsilon(1e-12));

    std::map<std::string, double> missing{{"a", 1.0}};
    CHECK_THROWS_AS(combine_supervised({{"a", a}, {"b", b}}, missing), ConfigError);
}

TEST_CASE("loss report total equals the weighted sum exactly") {
    Rng rng(1);
    Tensor a = Tensor::scalar(std::abs(rng.gauss()));
    Tensor b = Tensor::scalar(std::abs(rng.gauss()));
    std::map<std::string, double> lam{{"a", 0.7}, {"b", 1.9}};
    LossReport rep = make_report({{"a", a}, {"b", b}}, lam);
    CHECK(std::abs(rep.weighted_total - (0.7 * a.item() + 1.9 * b.item())) <= 1e-12);
    CHECK(rep.values.at("a") == a.item());
}

TEST_CASE("losses are non-negative on random inputs") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 1 + rng.randint(0, 3);
        std::vector<double> oh(n * 4, 0.0), pr(n * 4, 0.0);
        for (int i = 0; i < n; ++i) {
            oh[i * 4 + rng.randint(0, 3)] = 1.0;
            double z = 0.0;
            for (int j = 0; j < 4; ++j) {
                pr[i * 4 + j] = rng.uniform(0.05, 1.0);
                z += pr[i * 4 + j];
            }
            for (int j = 0; j < 4; ++j) pr[i * 4 + j] /= z;
        }
        Tensor loss = speed_loss(Tensor({n, 4}, oh), Tensor({n, 4}, pr), {1, 1, 1, 1});
        CHECK(loss.item() >= 0.0);
    }
}
