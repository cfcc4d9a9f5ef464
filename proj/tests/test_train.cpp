#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "diffplan/dataset.hpp"
#include "diffplan/errors.hpp"
#include "diffplan/train.hpp"

using namespace diffplan;

namespace {

RunConfig small_config() {
    RunConfig cfg = default_run_config();
    cfg.model.d = 16;
    cfg.model.heads = 2;
    cfg.model.layers = 1;
    cfg.model.encoder_layers = 1;
    cfg.epochs = 1;
    cfg.batch = 8;
    return cfg;
}

const Dataset& small_dataset() {
    static Dataset ds = [] {
        auto scenarios = generate_scenarios(4, 1, "easy");
        Dataset full = build_expert_dataset(scenarios, 10, 200);
        Dataset cut;
        cut.horizon = full.horizon;
        for (size_t i = 0; i < full.frames.size() && i < 24; ++i)
            cut.frames.push_back(full.frames[i]);
        return cut;
    }();
    return ds;
}

}  // namespace

TEST_CASE("run config validates and JSON round-trips") {
    RunConfig cfg = default_run_config();
    cfg.validate();
    CHECK_THROWS_AS(RunConfig{}.validate(), ConfigError);

    cfg.lr = 1e-3;
    cfg.stage = 2;
    cfg.reverse_steps = 5;
    cfg.loss.task_weights["bev"] = 0.25;
    const std::string once = run_config_to_json(cfg);
    CHECK(run_config_to_json(run_config_from_json(once)) == once);

    RunConfig partial = run_config_from_json("{\"lr\": 0.5}");
    CHECK(partial.lr == 0.5);
    CHECK(partial.epochs == default_run_config().epochs);
    CHECK_THROWS_AS(run_config_from_json("not json"), ConfigError);
}

TEST_CASE("model config JSON keeps the trajectory scale") {
    ModelConfig mc;
    mc.traj_norm = 5.5;
    mc.d = 24;
    ModelConfig back = model_config_from_json(model_config_to_json(mc));
    CHECK(back.traj_norm == 5.5);
    CHECK(back.d == 24);
}

TEST_CASE("schedule JSON reproduces the noise profile exactly") {
    RunConfig cfg = default_run_config();
    ScheduleParams sp = schedule_from_config(cfg);
    ScheduleParams back = schedule_from_json(schedule_to_json(sp));
    REQUIRE(back.betas.size() == sp.betas.size());
    for (size_t t = 0; t < sp.betas.size(); ++t) CHECK(back.betas[t] == sp.betas[t]);
}

TEST_CASE("ablation flags map to config fields") {
    auto with = [](const std::string& flag) {
        RunConfig cfg = default_run_config();
        apply_ablation(cfg, flag);
        return cfg;
    };
    CHECK(with("full-diffusion").model.full_diffusion);
    CHECK(with("full-discrimination").model.full_discrimination);
    CHECK(with("one-stage").one_stage);
    CHECK(with("noise-prediction").model.predict_noise);
    CHECK(!with("no-gru").model.use_gru);
    CHECK(!with("no-ego-state").model.use_ego);
    CHECK(!with("no-command").model.use_command);

    RunConfig cfg = default_run_config();
    CHECK_THROWS_AS(apply_ablation(cfg, "no-physics"), ConfigError);
    apply_ablation(cfg, "full-diffusion");
    CHECK_THROWS_AS(apply_ablation(cfg, "full-discrimination"), ConfigError);
}

TEST_CASE("optimizer with zero gradients applies decay only") {
    std::map<std::string, Tensor> params;
    params.emplace("w", Tensor({1, 2}, {2.0, -4.0}, true));
    Adam opt(0.1, 0.5, 1.0);
    opt.step(params, {});
    CHECK(params.at("w").data()[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));
    CHECK(params.at("w").data()[1] == doctest::Approx(-4.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));
}

TEST_CASE("optimizer clips large gradients to a direction-only update") {
    auto run = [](double scale) {
        std::map<std::string, Tensor> params;
        params.emplace("w", Tensor({1, 2}, {1.0, 1.0}, true));
        params.at("w").grad() = {30.0 * scale, 40.0 * scale};
        Adam opt(0.01, 0.0, 1.0);
        opt.step(params, {});
        return params.at("w").data();
    };
    auto a = run(1.0);
    auto b = run(100.0);
    for (int i = 0; i < 2; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("frozen parameters are left untouched") {
    std::map<std::string, Tensor> params;
    params.emplace("enc", Tensor({1, 1}, {3.0}, true));
    params.emplace("dec", Tensor({1, 1}, {3.0}, true));
    params.at("enc").grad() = {1.0};
    params.at("dec").grad() = {1.0};
    Adam opt(0.1, 0.1, 1.0);
    opt.step(params, {"enc"});
    CHECK(params.at("enc").data()[0] == 3.0);
    CHECK(params.at("dec").data()[0] != 3.0);
}

TEST_CASE("non-finite gradients abort the update") {
    std::map<std::string, Tensor> params;
    params.emplace("w", Tensor({1, 1}, {1.0}, true));
    params.at("w").grad() = {std::nan("")};
    Adam opt(0.1, 0.0, 1.0);
    CHECK_THROWS_AS(opt.step(params, {}), NumericError);
}

TEST_CASE("stage-1 training runs, learns, and reproduces bit-exactly") {
    RunConfig cfg = small_config();
    cfg.epochs = 2;
    cfg.seed = 9;
    TrainResult a = train_stage1(small_dataset(), cfg);
    REQUIRE(!a.curve.empty());
    CHECK(a.curve.back().at("total") < a.curve.front().at("total"));

    TrainResult b = train_stage1(small_dataset(), cfg);
    CHECK(a.checkpoint.params == b.checkpoint.params);
    CHECK(a.checkpoint.adam_m == b.checkpoint.adam_m);

    const std::string csv = loss_curve_csv(a);
    CHECK(csv.find("total") != std::string::npos);
    CHECK_THROWS_AS(train_stage1(Dataset{}, cfg), ValidationError);
}

TEST_CASE("stage 2 demands a stage-1 checkpoint and freezes the encoder") {
    RunConfig cfg = small_config();
    cfg.seed = 9;
    Checkpoint blank;
    CHECK_THROWS_AS(train_stage2(small_dataset(), blank, cfg), ConfigError);

    TrainResult s1 = train_stage1(small_dataset(), cfg);
    RunConfig cfg2 = cfg;
    cfg2.stage = 2;
    TrainResult s2 = train_stage2(small_dataset(), s1.checkpoint, cfg2);
    CHECK(s2.checkpoint.stage == 2);

    Model probe(cfg.model, cfg.seed);
    for (const auto& name : probe.encoder_param_names())
        CHECK(s2.checkpoint.params.at(name) == s1.checkpoint.params.at(name));
    bool decoder_moved = false;
    for (const auto& [name, vals] : s2.checkpoint.params)
        if (vals != s1.checkpoint.params.at(name)) decoder_moved = true;
    CHECK(decoder_moved);
}

TEST_CASE("checkpoint files round-trip bit-exactly") {
    RunConfig cfg = small_config();
    cfg.seed = 3;
    TrainResult tr = train_stage1(small_dataset(), cfg);
    const std::string path = "/tmp/diffplan_test_ck.bin";
    save_checkpoint(path, tr.checkpoint);
    Checkpoint back = load_checkpoint(path);
    std::remove(path.c_str());
    CHECK(back.stage == tr.checkpoint.stage);
    CHECK(back.step == tr.checkpoint.step);
    CHECK(back.params == tr.checkpoint.params);
    CHECK(back.adam_m == tr.checkpoint.adam_m);
    CHECK(back.adam_v == tr.checkpoint.adam_v);
    CHECK(back.shapes == tr.checkpoint.shapes);
    CHECK(back.model_config_json == tr.checkpoint.model_config_json);

    Model model(cfg.model, 1);
    restore_model(model, back);
    CHECK(model.params().begin()->second.data() ==
          back.params.at(model.params().begin()->first));

    ModelConfig other = cfg.model;
    other.d = 32;
    Model mismatched(other, 1);
    CHECK_THROWS_AS(restore_model(mismatched, back), ConfigError);
}

TEST_CASE("trained planner is a deterministic closure") {
    RunConfig cfg = small_config();
    cfg.seed = 5;
    TrainResult s1 = train_stage1(small_dataset(), cfg);
    RunConfig cfg2 = cfg;
    cfg2.stage = 2;
    TrainResult s2 = train_stage2(small_dataset(), s1.checkpoint, cfg2);

    Model model(cfg.model, 0);
    restore_model(model, s2.checkpoint);
    ScheduleParams sp = schedule_from_config(cfg);
    Policy p1 = make_policy(model, sp, 2, 7);
    Policy p2 = make_policy(model, sp, 2, 7);
    const OccupancyObservation& obs = small_dataset().frames[0].obs;
    Trajectory a = p1(obs);
    Trajectory b = p2(obs);
    REQUIRE(a.points.size() == static_cast<size_t>(cfg.model.l_k));
    REQUIRE(a.points.size() == b.points.size());
    for (size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i].x == b.points[i].x);
        CHECK(a.points[i].y == b.points[i].y);
        CHECK(std::isfinite(a.points[i].x));
    }
}

TEST_CASE("supervision targets match the frame") {
    ModelConfig mc = small_config().model;
    const Frame& frame = small_dataset().frames[0];
    PerceptionTargets tg = derive_targets(frame, mc);
    CHECK(tg.bev_onehot.rows() == mc.condition_tokens());
    CHECK(tg.sem_onehot.rows() == mc.condition_tokens());
    CHECK(tg.depth.rows() == mc.condition_tokens());
    CHECK(tg.speed_class == speed_class_of(frame.target_speed, mc));
    CHECK(tg.agent_boxes.rows() == mc.agent_slots);
    CHECK(tg.n_agents == std::min<int>(static_cast<int>(frame.agent_boxes.size()),
                                       mc.agent_slots));
    // one-hot rows sum to 1
    for (int r = 0; r < tg.bev_onehot.rows(); ++r) {
        double s = 0.0;
        for (int c = 0; c < tg.bev_onehot.cols(); ++c) s += tg.bev_onehot.at(r, c);
        CHECK(s == 1.0);
    }
}

TEST_CASE("dataset files round-trip") {
    const Dataset& ds = small_dataset();
    const std::string path = "/tmp/diffplan_test_ds.bin";
    save_dataset(path, ds);
    Dataset back = load_dataset(path);
    std::remove(path.c_str());
    REQUIRE(back.frames.size() == ds.frames.size());
    CHECK(back.horizon == ds.horizon);
    CHECK(back.frames[0].waypoints.size() == ds.frames[0].waypoints.size());
    CHECK(back.frames[0].target_speed == ds.frames[0].target_speed);
    CHECK(back.frames[0].obs.goal.x == ds.frames[0].obs.goal.x);
}
