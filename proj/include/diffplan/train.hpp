#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "diffplan/checkpoint.hpp"
#include "diffplan/dataset.hpp"
#include "diffplan/diffusion.hpp"
#include "diffplan/losses.hpp"
#include "diffplan/model.hpp"
#include "diffplan/sim.hpp"

namespace diffplan {

struct RunConfig {
    int stage = 1;
    int epochs = 3;
    int batch = 16;
    double lr = 3e-4;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    std::uint64_t seed = 0;
    int reverse_steps = 2;
    ScheduleKind schedule_kind = ScheduleKind::SquareCosine;
    int schedule_steps = 100;
    double beta_min = 1e-4;
    double beta_max = 0.02;
    bool one_stage = false;
    bool finetune_encoder = false;
    ModelConfig model;
    LossConfig loss;

    void validate() const;
};

// Defaults with every task weight at 1.0.
RunConfig default_run_config();
std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);
std::string schedule_to_json(const ScheduleParams& s);
ScheduleParams schedule_from_json(const std::string& text);
ScheduleParams schedule_from_config(const RunConfig& cfg);

// Recognized names: full-diffusion, full-discrimination, one-stage,
// noise-prediction, no-gru, no-ego-state, no-command.
void apply_ablation(RunConfig& cfg, const std::string& flag);

// Adaptive-moment optimizer with decoupled weight decay and global-norm clip.
class Adam {
public:
    Adam(double lr, double weight_decay, double grad_clip);

    void step(std::map<std::string, Tensor>& params, const std::set<std::string>& frozen);

    double lr, weight_decay, grad_clip;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t step_count = 0;
    std::map<std::string, std::vector<double>> m, v;
};

struct TrainResult {
    Checkpoint checkpoint;
    // one record per optimizer step: term name -> value, plus "total"
    std::vector<std::map<std::string, double>> curve;
};

std::string loss_curve_csv(const TrainResult& result);

Checkpoint snapshot(const Model& model, const Adam& opt, const RunConfig& cfg,
                    std::int64_t step);
void restore_model(Model& model, const Checkpoint& ck);
void restore_adam(Adam& opt, const Checkpoint& ck);

// Per-frame supervision targets derived from the observation grid and labels.
struct PerceptionTargets {
    Tensor bev_onehot;          // l_c x bev_classes
    std::vector<bool> bev_valid;
    Tensor sem_onehot;          // l_c x sem_classes
    Tensor depth;               // l_c x 1
    std::vector<bool> depth_mask;
    DetectionTargets det;
    std::vector<int> det_cells; // center token per object
    int speed_class = 0;
    std::vector<double> agent_exist;  // agent_slots
    Tensor agent_boxes;               // agent_slots x 5, normalized
    int n_agents = 0;
};

PerceptionTargets derive_targets(const Frame& frame, const ModelConfig& cfg);

std::vector<std::pair<std::string, Tensor>> perception_loss_terms(
    const PerceptionOutput& out, const PerceptionTargets& tg, const ModelConfig& mc,
    const LossConfig& lc);

TrainResult train_stage1(const Dataset& ds, const RunConfig& cfg);
TrainResult train_stage2(const Dataset& ds, const Checkpoint& stage1, const RunConfig& cfg);

// Planner closure around a trained model: observation -> ego-frame trajectory.
Policy make_policy(const Model& model, const ScheduleParams& schedule, int n_steps,
                   std::uint64_t seed);

}  // namespace diffplan
