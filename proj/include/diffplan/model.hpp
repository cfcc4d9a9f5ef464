#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "diffplan/obs.hpp"
#include "diffplan/tensor.hpp"

namespace diffplan {

struct ModelConfig {
    // token lengths
    int l_k = 10;   // trajectory tokens
    int l_s = 2;    // supervision tokens
    int l_g = 1;    // goal tokens
    int l_t = 1;    // timestep tokens
    // widths
    int d = 32;
    int d_c = 2;
    int layers = 2;
    int heads = 4;
    int encoder_layers = 1;
    // tasks
    int speed_classes = 4;
    int command_vocab = 4;
    int bev_classes = 4;
    int sem_classes = 3;
    int yaw_bins = 12;
    int agent_slots = 5;
    int ego_dim = 3;
    // observation grid
    int grid_h = 64;
    int grid_w = 64;
    int grid_channels = kObsChannels;
    int patch = 8;
    // coordinate scale for depth and agent-box regression targets
    double norm_range = 32.0;
    // coordinate scale used to bring waypoints to O(1) before diffusion
    double traj_norm = 8.0;
    // speed-class bin edges: braking / walking / slow / fast
    std::vector<double> speed_thresholds = {0.1, 2.0, 6.0};
    // ablation switches
    bool use_gru = true;
    bool use_ego = true;
    bool use_command = true;
    bool predict_noise = false;
    bool full_diffusion = false;
    bool full_discrimination = false;
    bool agent_head = true;

    int condition_tokens() const;  // l_c, derived from the grid patching
    int latent_tokens() const { return l_k + (full_diffusion ? 0 : l_s); }
    void validate() const;
};

int speed_class_of(double speed, const ModelConfig& cfg);

struct PerceptionOutput {
    Tensor tokens;        // l_c x d condition features
    Tensor bev_probs;     // cells x bev_classes
    Tensor sem_probs;     // cells x sem_classes
    Tensor depth;         // cells x 1
    Tensor det_heatmap;   // cells x 1, probabilities
    Tensor det_sizes;     // cells x 2
    Tensor det_offsets;   // cells x 2
    Tensor det_yaw_logits;// cells x yaw_bins
    Tensor det_yaw_res;   // cells x 1
    Tensor speed_logits;  // 1 x speed_classes (stage-1 auxiliary head)
    Tensor agent_exist;   // 1 x agent_slots, probabilities
    Tensor agent_boxes;   // agent_slots x 5
};

struct DecoderOutput {
    Tensor x0_pred;       // l_k x d_c, normalized units (eps when predict_noise)
    Tensor speed_logits;  // 1 x speed_classes (undefined under full diffusion)
    Tensor agent_exist;   // 1 x agent_slots, probabilities
    Tensor agent_boxes;   // agent_slots x 5
    Tensor z_sup;         // l_s x d
};

// The trainable model: tiny grid encoder with perception heads plus the
// hybrid diffusion-supervision transformer decoder.
class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    std::map<std::string, Tensor>& params() { return params_; }
    const std::map<std::string, Tensor>& params() const { return params_; }

    PerceptionOutput perceive(const OccupancyObservation& obs) const;

    // 1 x d temporal embedding of the diffusion step.
    Tensor embed_timestep(int t) const;

    // Eq-style global condition row stack of length l_c + l_g + l_t.
    Tensor integrate_conditions(const Tensor& features, const Vec2& goal,
                                const std::vector<double>& ego, int command, int t) const;

    DecoderOutput decode(const Tensor& x_t, int t, const Tensor& condition,
                         const std::vector<double>& ego = {}, const Vec2& goal = {}) const;

    // Full pass: perceive -> integrate -> decode. detach_condition blocks
    // gradients into the encoder (stage-2 freeze).
    DecoderOutput forward(const OccupancyObservation& obs, const Tensor& x_t, int t,
                          bool detach_condition) const;

    std::vector<std::string> encoder_param_names() const;
    void zero_grads();
    // FNV-1a over raw parameter bytes, iteration order fixed by name.
    std::uint64_t param_hash() const;
    std::uint64_t param_hash(const std::string& prefix) const;

private:
    Tensor p(const std::string& name) const;
    Tensor attn_block(const Tensor& x, const Tensor& kv, const std::string& prefix) const;
    Tensor waypoint_head(const Tensor& z_diff, const std::vector<double>& ego,
                         const Vec2& goal) const;

    ModelConfig cfg_;
    std::map<std::string, Tensor> params_;
};

}  // namespace diffplan
