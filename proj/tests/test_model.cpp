#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>
#include <vector>

#include "diffplan/errors.hpp"
#include "diffplan/model.hpp"
#include "diffplan/obs.hpp"
#include "diffplan/rng.hpp"

using namespace diffplan;

namespace {

ModelConfig tiny_config() {
    ModelConfig mc;
    mc.d = 16;
    mc.heads = 2;
    mc.layers = 2;
    mc.l_k = 6;
    mc.grid_h = 16;
    mc.grid_w = 16;
    mc.patch = 4;
    mc.agent_slots = 2;
    return mc;
}

OccupancyObservation tiny_obs(const ModelConfig& mc, unsigned seed) {
    OccupancyObservation obs;
    obs.h = mc.grid_h;
    obs.w = mc.grid_w;
    obs.grid.assign(static_cast<size_t>(mc.grid_h) * mc.grid_w * kObsChannels, 0.0);
    Rng rng(seed);
    for (double& v : obs.grid) v = rng.uniform(0.0, 1.0) < 0.2 ? 1.0 : 0.0;
    obs.ego = {rng.uniform(0.0, 7.0), 0.0, 0.0};
    obs.goal = {rng.uniform(5.0, 20.0), rng.uniform(-5.0, 5.0)};
    obs.command = 0;
    return obs;
}

}  // namespace

TEST_CASE("condition stack has exactly l_c + l_g + l_t rows") {
    ModelConfig mc = tiny_config();
    Model m(mc, 1);
    Tensor feats = Tensor::full({mc.condition_tokens(), mc.d}, 0.1);
    Tensor cond = m.integrate_conditions(feats, {5.0, 1.0}, {2.0, 0.0, 0.0}, 0, 3);
    CHECK(cond.rows() == mc.condition_tokens() + mc.l_g + mc.l_t);
    CHECK(cond.cols() == mc.d);
}

TEST_CASE("patch arithmetic: 64x64 grid with patch 8 gives 64 tokens") {
    ModelConfig mc;
    CHECK(mc.condition_tokens() == 64);
}

TEST_CASE("timestep embeddings are deterministic, shaped, and collision-free") {
    ModelConfig mc = tiny_config();
    Model m(mc, 2);
    Tensor e0 = m.embed_timestep(0);
    CHECK(e0.rows() == 1);
    CHECK(e0.cols() == mc.d);
    Tensor e0b = m.embed_timestep(0);
    for (int i = 0; i < e0.size(); ++i) CHECK(e0.data()[i] == e0b.data()[i]);

    std::set<std::vector<double>> seen;
    for (int t = 0; t <= 100; ++t) seen.insert(m.embed_timestep(t).data());
    CHECK(seen.size() == 101);
}

TEST_CASE("distinct timesteps change only the embedding row of the condition") {
    ModelConfig mc = tiny_config();
    Model m(mc, 3);
    Tensor feats = Tensor::full({mc.condition_tokens(), mc.d}, 0.05);
    Tensor c1 = m.integrate_conditions(feats, {4.0, 0.0}, {1.0, 0.0, 0.0}, 0, 1);
    Tensor c2 = m.integrate_conditions(feats, {4.0, 0.0}, {1.0, 0.0, 0.0}, 0, 2);
    const int l_c = mc.condition_tokens();
    for (int r = 0; r < l_c + mc.l_g; ++r)
        for (int c = 0; c < mc.d; ++c) CHECK(c1.at(r, c) == c2.at(r, c));
    bool t_row_differs = false;
    for (int c = 0; c < mc.d; ++c)
        t_row_differs = t_row_differs || c1.at(l_c + mc.l_g, c) != c2.at(l_c + mc.l_g, c);
    CHECK(t_row_differs);
}

TEST_CASE("decode output shapes and latent split lengths") {
    ModelConfig mc = tiny_config();
    Model m(mc, 4);
    OccupancyObservation obs = tiny_obs(mc, 5);
    PerceptionOutput po = m.perceive(obs);
    CHECK(po.tokens.rows() == mc.condition_tokens());
    CHECK(po.tokens.cols() == mc.d);

    Tensor cond = m.integrate_conditions(po.tokens, obs.goal, obs.ego, obs.command, 7);
    Tensor x_t = Tensor::full({mc.l_k, 2}, 0.3);
    DecoderOutput out = m.decode(x_t, 7, cond, obs.ego, obs.goal);
    CHECK(out.x0_pred.rows() == mc.l_k);
    CHECK(out.x0_pred.cols() == 2);
    CHECK(out.speed_logits.cols() == mc.speed_classes);
    CHECK(out.z_sup.rows() == mc.l_s);
    CHECK(out.z_sup.cols() == mc.d);
    CHECK(out.agent_exist.cols() == mc.agent_slots);
    CHECK(out.agent_boxes.rows() == mc.agent_slots);
    CHECK(out.agent_boxes.cols() == 5);
}

TEST_CASE("shape conservation across random small configs") {
    Rng rng(6);
    for (int trial = 0; trial < 6; ++trial) {
        ModelConfig mc = tiny_config();
        mc.l_k = 1 + rng.randint(0, 7);
        mc.l_s = 1 + rng.randint(0, 3);
        mc.d = rng.randint(0, 1) ? 8 : 16;
        mc.heads = 2;
        Model m(mc, 10 + trial);
        Tensor feats = Tensor::full({mc.condition_tokens(), mc.d}, 0.1);
        Tensor cond = m.integrate_conditions(feats, {3.0, 0.0}, {1.0, 0.0, 0.0}, 1, 5);
        DecoderOutput out = m.decode(Tensor::full({mc.l_k, 2}, 0.1), 5, cond,
                                     {1.0, 0.0, 0.0}, {3.0, 0.0});
        CHECK(out.x0_pred.rows() == mc.l_k);
        CHECK(out.z_sup.rows() == mc.l_s);
    }
}

TEST_CASE("all-zero grid still produces finite outputs") {
    ModelConfig mc = tiny_config();
    Model m(mc, 7);
    OccupancyObservation obs = tiny_obs(mc, 8);
    std::fill(obs.grid.begin(), obs.grid.end(), 0.0);
    PerceptionOutput po = m.perceive(obs);
    for (double v : po.tokens.data()) CHECK(std::isfinite(v));
    for (double v : po.bev_probs.data()) CHECK(std::isfinite(v));
    DecoderOutput out = m.forward(obs, Tensor::full({mc.l_k, 2}, 0.0), 1, false);
    for (double v : out.x0_pred.data()) CHECK(std::isfinite(v));
}

TEST_CASE("condition row permutation changes cross-attention output") {
    ModelConfig mc = tiny_config();
    Model m(mc, 9);
    OccupancyObservation obs = tiny_obs(mc, 10);
    PerceptionOutput po = m.perceive(obs);
    // Swap two non-identical feature rows before the positional encodings are
    // added; the positions then pair differently, so the output must change.
    Tensor swapped_feats = Tensor(po.tokens.shape(), po.tokens.data());
    for (int c = 0; c < po.tokens.cols(); ++c)
        std::swap(swapped_feats.data()[0 * po.tokens.cols() + c],
                  swapped_feats.data()[1 * po.tokens.cols() + c]);
    Tensor cond = m.integrate_conditions(po.tokens, obs.goal, obs.ego, obs.command, 2);
    Tensor cond_sw = m.integrate_conditions(swapped_feats, obs.goal, obs.ego, obs.command, 2);
    Tensor x_t = Tensor::full({mc.l_k, 2}, 0.2);
    DecoderOutput a = m.decode(x_t, 2, cond, obs.ego, obs.goal);
    DecoderOutput b = m.decode(x_t, 2, cond_sw, obs.ego, obs.goal);
    double diff = 0.0;
    for (int i = 0; i < a.x0_pred.size(); ++i)
        diff = std::max(diff, std::abs(a.x0_pred.data()[i] - b.x0_pred.data()[i]));
    CHECK(diff > 0.0);
}

TEST_CASE("forward is deterministic for fixed parameters and inputs") {
    ModelConfig mc = tiny_config();
    Model m(mc, 11);
    OccupancyObservation obs = tiny_obs(mc, 12);
    Tensor x_t = Tensor::full({mc.l_k, 2}, -0.1);
    DecoderOutput a = m.forward(obs, x_t, 9, false);
    DecoderOutput b = m.forward(obs, x_t, 9, false);
    for (int i = 0; i < a.x0_pred.size(); ++i)
        CHECK(a.x0_pred.data()[i] == b.x0_pred.data()[i]);
}

TEST_CASE("gru flag only switches the waypoint head shape-compatibly") {
    ModelConfig mc = tiny_config();
    Model with_gru(mc, 13);
    mc.use_gru = false;
    Model without(mc, 13);
    OccupancyObservation obs = tiny_obs(mc, 14);
    Tensor x_t = Tensor::full({mc.l_k, 2}, 0.1);
    DecoderOutput a = with_gru.forward(obs, x_t, 3, false);
    DecoderOutput b = without.forward(obs, x_t, 3, false);
    CHECK(a.x0_pred.rows() == b.x0_pred.rows());
    CHECK(a.x0_pred.cols() == b.x0_pred.cols());
    // parameter sets differ exactly in the head
    auto has_prefix = [](const Model& m, const std::string& p) {
        for (const auto& [name, t] : m.params())
            if (name.rfind(p, 0) == 0) return true;
        return false;
    };
    CHECK(has_prefix(with_gru, "dec.gru."));
    CHECK(!has_prefix(without, "dec.gru."));
    CHECK(has_prefix(without, "dec.traj"));
}

TEST_CASE("speed classes follow the configured thresholds") {
    ModelConfig mc;
    CHECK(speed_class_of(0.0, mc) == 0);
    CHECK(speed_class_of(0.09, mc) == 0);
    CHECK(speed_class_of(0.5, mc) == 1);
    CHECK(speed_class_of(3.0, mc) == 2);
    CHECK(speed_class_of(6.0, mc) == 3);
    CHECK(speed_class_of(9.0, mc) == 3);
}

TEST_CASE("config validation rejects contradictory settings") {
    ModelConfig mc = tiny_config();
    mc.full_diffusion = true;
    mc.full_discrimination = true;
    CHECK_THROWS_AS(mc.validate(), ConfigError);

    ModelConfig mc2 = tiny_config();
    mc2.full_discrimination = true;
    mc2.predict_noise = true;
    CHECK_THROWS_AS(mc2.validate(), ConfigError);

    ModelConfig mc3 = tiny_config();
    mc3.d = 10;
    mc3.heads = 4;
    CHECK_THROWS_AS(mc3.validate(), ConfigError);
}

TEST_CASE("param hash changes when any parameter changes") {
    ModelConfig mc = tiny_config();
    Model m(mc, 15);
    const std::uint64_t before = m.param_hash();
    m.params().begin()->second.data()[0] += 1e-3;
    CHECK(m.param_hash() != before);
}
