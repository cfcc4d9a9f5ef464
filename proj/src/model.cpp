#include "diffplan/model.hpp"

#include <cmath>

namespace diffplan {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_bytes(std::uint64_t& h, const void* data, size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= kFnvPrime;
    }
}

}  // namespace

int ModelConfig::condition_tokens() const {
    return (grid_h / patch) * (grid_w / patch);
}

void ModelConfig::validate() const {
    if (l_k < 1 || l_g < 1 || l_t < 1)
        throw ConfigError("model config: token lengths must be >= 1");
    if (!full_diffusion && l_s < 1)
        throw ConfigError("model config: l_s must be >= 1 unless full diffusion");
    if (d < 2 || d % 2 != 0) throw ConfigError("model config: d must be even and >= 2");
    if (heads < 1 || d % heads != 0)
        throw ConfigError("model config: feature dim not divisible by head count");
    if (layers < 1 || encoder_layers < 1)
        throw ConfigError("model config: need at least one layer");
    if (grid_h % patch != 0 || grid_w % patch != 0)
        throw ConfigError("model config: grid not divisible by patch size");
    if (speed_thresholds.size() + 1 != static_cast<size_t>(speed_classes))
        throw ConfigError("model config: speed threshold count mismatch");
    for (size_t i = 1; i < speed_thresholds.size(); ++i)
        if (speed_thresholds[i] <= speed_thresholds[i - 1])
            throw ConfigError("model config: speed thresholds must increase");
    if (norm_range <= 0.0) throw ConfigError("model config: norm_range must be positive");
    if (full_diffusion && full_discrimination)
        throw ConfigError("model config: contradictory ablation flags");
    if (full_discrimination && predict_noise)
        throw ConfigError("model config: contradictory ablation flags");
}

int speed_class_of(double speed, const ModelConfig& cfg) {
    for (size_t i = 0; i < cfg.speed_thresholds.size(); ++i)
        if (speed < cfg.speed_thresholds[i]) return static_cast<int>(i);
    return static_cast<int>(cfg.speed_thresholds.size());
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const int d = cfg_.d;
    const int l_c = cfg_.condition_tokens();

    auto lin = [&](const std::string& name, int in, int out) {
        params_[name + ".w"] = Tensor::randn({in, out}, rng, 1.0 / std::sqrt(in), true);
        params_[name + ".b"] = Tensor::zeros({out}, true);
    };
    auto ln = [&](const std::string& name) {
        params_[name + ".g"] = Tensor::full({d}, 1.0, true);
        params_[name + ".b"] = Tensor::zeros({d}, true);
    };
    auto attn = [&](const std::string& name) {
        lin(name + ".wq", d, d);
        lin(name + ".wk", d, d);
        lin(name + ".wv", d, d);
        lin(name + ".wo", d, d);
    };
    auto emb = [&](const std::string& name, int rows) {
        params_[name] = Tensor::randn({rows, d}, rng, 0.02, true);
    };

    // encoder
    lin("enc.patch", cfg_.patch * cfg_.patch * cfg_.grid_channels, d);
    emb("enc.pos", l_c);
    for (int i = 0; i < cfg_.encoder_layers; ++i) {
        const std::string pre = "enc.layer" + std::to_string(i);
        ln(pre + ".ln1");
        attn(pre + ".attn");
        ln(pre + ".ln2");
        lin(pre + ".ffn1", d, 2 * d);
        lin(pre + ".ffn2", 2 * d, d);
    }
    ln("enc.ln_out");
    lin("enc.head.bev", d, cfg_.bev_classes);
    lin("enc.head.sem", d, cfg_.sem_classes);
    lin("enc.head.depth", d, 1);
    lin("enc.head.hm", d, 1);
    lin("enc.head.size", d, 2);
    lin("enc.head.off", d, 2);
    lin("enc.head.yawcls", d, cfg_.yaw_bins);
    lin("enc.head.yawres", d, 1);
    lin("enc.head.speed", d, cfg_.speed_classes);
    if (cfg_.agent_head) {
        lin("enc.head.agent_exist", d, cfg_.agent_slots);
        lin("enc.head.agent_box", d, cfg_.agent_slots * 5);
    }

    // decoder
    lin("dec.f_enc", cfg_.d_c, d);
    if (!cfg_.full_diffusion) emb("dec.q0", cfg_.l_s);
    emb("dec.pos_z", cfg_.latent_tokens());
    lin("dec.goal", 2, d);
    lin("dec.tproj", d, d);
    if (cfg_.use_ego) lin("dec.ego", cfg_.ego_dim, d);
    if (cfg_.use_command) emb("dec.cmd", cfg_.command_vocab);
    emb("dec.pos_c", l_c + cfg_.l_g + cfg_.l_t);
    for (int i = 0; i < cfg_.layers; ++i) {
        const std::string pre = "dec.layer" + std::to_string(i);
        ln(pre + ".ln1");
        attn(pre + ".self");
        ln(pre + ".ln2");
        attn(pre + ".cross");
    }
    ln("dec.ln_out");
    if (cfg_.use_gru) {
        lin("dec.gru.h0", cfg_.ego_dim + 2, d);
        lin("dec.gru.z", 2 * d, d);
        lin("dec.gru.r", 2 * d, d);
        lin("dec.gru.h", 2 * d, d);
        lin("dec.gru.out", d, cfg_.d_c);
    } else {
        lin("dec.traj", d, cfg_.d_c);
    }
    if (!cfg_.full_diffusion) {
        lin("dec.speed", d, cfg_.speed_classes);
        if (cfg_.agent_head) {
            lin("dec.agent_exist", d, cfg_.agent_slots);
            lin("dec.agent_box", d, cfg_.agent_slots * 5);
        }
    }
}

Tensor Model::p(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("missing parameter: " + name);
    return it->second;
}

Tensor Model::attn_block(const Tensor& x, const Tensor& kv, const std::string& prefix) const {
    Tensor q = linear(x, p(prefix + ".wq.w"), p(prefix + ".wq.b"));
    Tensor k = linear(kv, p(prefix + ".wk.w"), p(prefix + ".wk.b"));
    Tensor v = linear(kv, p(prefix + ".wv.w"), p(prefix + ".wv.b"));
    Tensor o = attention(q, k, v, cfg_.heads);
    return linear(o, p(prefix + ".wo.w"), p(prefix + ".wo.b"));
}

PerceptionOutput Model::perceive(const OccupancyObservation& obs) const {
    if (obs.h != cfg_.grid_h || obs.w != cfg_.grid_w || obs.channels != cfg_.grid_channels)
        throw DimensionError("perceive: observation grid shape mismatch");
    if (static_cast<int>(obs.grid.size()) != obs.channels * obs.h * obs.w)
        throw DimensionError("perceive: grid buffer size mismatch");
    const int ps = cfg_.patch;
    const int py = cfg_.grid_h / ps, px = cfg_.grid_w / ps;
    const int l_c = py * px;
    const int pdim = ps * ps * cfg_.grid_channels;
    std::vector<double> patches(static_cast<size_t>(l_c) * pdim);
    for (int pr = 0; pr < py; ++pr)
        for (int pc = 0; pc < px; ++pc) {
            double* dst = &patches[static_cast<size_t>(pr * px + pc) * pdim];
            int k = 0;
            for (int c = 0; c < cfg_.grid_channels; ++c)
                for (int dy = 0; dy < ps; ++dy)
                    for (int dx = 0; dx < ps; ++dx)
                        dst[k++] = obs.at(c, pr * ps + dy, pc * ps + dx);
        }
    Tensor x = linear(Tensor({l_c, pdim}, std::move(patches)), p("enc.patch.w"),
                      p("enc.patch.b"));
    x = add(x, p("enc.pos"));
    for (int i = 0; i < cfg_.encoder_layers; ++i) {
        const std::string pre = "enc.layer" + std::to_string(i);
        Tensor h = layernorm(x, p(pre + ".ln1.g"), p(pre + ".ln1.b"));
        x = add(x, attn_block(h, h, pre + ".attn"));
        h = layernorm(x, p(pre + ".ln2.g"), p(pre + ".ln2.b"));
        h = linear(gelu(linear(h, p(pre + ".ffn1.w"), p(pre + ".ffn1.b"))),
                   p(pre + ".ffn2.w"), p(pre + ".ffn2.b"));
        x = add(x, h);
    }
    x = layernorm(x, p("enc.ln_out.g"), p("enc.ln_out.b"));
    check_finite(x, "perception encoder output");

    PerceptionOutput out;
    out.tokens = x;
    out.bev_probs = softmax(linear(x, p("enc.head.bev.w"), p("enc.head.bev.b")), 1);
    out.sem_probs = softmax(linear(x, p("enc.head.sem.w"), p("enc.head.sem.b")), 1);
    out.depth = linear(x, p("enc.head.depth.w"), p("enc.head.depth.b"));
    out.det_heatmap = sigmoid(linear(x, p("enc.head.hm.w"), p("enc.head.hm.b")));
    out.det_sizes = linear(x, p("enc.head.size.w"), p("enc.head.size.b"));
    out.det_offsets = linear(x, p("enc.head.off.w"), p("enc.head.off.b"));
    out.det_yaw_logits = linear(x, p("enc.head.yawcls.w"), p("enc.head.yawcls.b"));
    out.det_yaw_res = linear(x, p("enc.head.yawres.w"), p("enc.head.yawres.b"));
    Tensor pooled = matmul(Tensor({1, l_c}, std::vector<double>(l_c, 1.0 / l_c)), x);
    out.speed_logits = linear(pooled, p("enc.head.speed.w"), p("enc.head.speed.b"));
    if (cfg_.agent_head) {
        out.agent_exist = sigmoid(
            linear(pooled, p("enc.head.agent_exist.w"), p("enc.head.agent_exist.b")));
        out.agent_boxes = reshape(
            linear(pooled, p("enc.head.agent_box.w"), p("enc.head.agent_box.b")),
            {cfg_.agent_slots, 5});
    }
    return out;
}

Tensor Model::embed_timestep(int t) const {
    if (t < 0) throw IndexError("embed_timestep: negative step");
    const int d = cfg_.d;
    std::vector<double> s(d);
    for (int i = 0; i < d / 2; ++i) {
        const double freq = std::exp(-std::log(10000.0) * (2.0 * i / d));
        s[2 * i] = std::sin(t * freq);
        s[2 * i + 1] = std::cos(t * freq);
    }
    return linear(Tensor({1, d}, std::move(s)), p("dec.tproj.w"), p("dec.tproj.b"));
}

Tensor Model::integrate_conditions(const Tensor& features, const Vec2& goal,
                                   const std::vector<double>& ego, int command,
                                   int t) const {
    const int l_c = cfg_.condition_tokens();
    if (features.rows() != l_c || features.cols() != cfg_.d)
        throw DimensionError("integrate_conditions: feature shape mismatch");
    Tensor fold = features;
    if (cfg_.use_ego) {
        if (static_cast<int>(ego.size()) != cfg_.ego_dim)
            throw DimensionError("integrate_conditions: ego vector length mismatch");
        Tensor ego_emb = linear(Tensor({1, cfg_.ego_dim}, ego), p("dec.ego.w"),
                                p("dec.ego.b"));
        fold = add_bias(fold, reshape(ego_emb, {cfg_.d}));
    }
    if (cfg_.use_command) {
        if (command < 0 || command >= cfg_.command_vocab)
            throw ValidationError("integrate_conditions: command id outside vocabulary");
        fold = add_bias(fold, reshape(row_select(p("dec.cmd"), command), {cfg_.d}));
    }
    Tensor goal_row = linear(
        Tensor({1, 2}, {goal.x / cfg_.norm_range, goal.y / cfg_.norm_range}),
        p("dec.goal.w"), p("dec.goal.b"));
    Tensor cat = concat_rows({fold, goal_row, embed_timestep(t)});
    return add(cat, p("dec.pos_c"));
}

Tensor Model::waypoint_head(const Tensor& z_diff, const std::vector<double>& ego,
                            const Vec2& goal) const {
    if (!cfg_.use_gru)
        return linear(z_diff, p("dec.traj.w"), p("dec.traj.b"));
    std::vector<double> seed(cfg_.ego_dim + 2, 0.0);
    for (size_t i = 0; i < ego.size() && i < static_cast<size_t>(cfg_.ego_dim); ++i)
        seed[i] = ego[i];
    seed[cfg_.ego_dim] = goal.x / cfg_.norm_range;
    seed[cfg_.ego_dim + 1] = goal.y / cfg_.norm_range;
    Tensor h = tanh_t(linear(Tensor({1, cfg_.ego_dim + 2}, std::move(seed)),
                             p("dec.gru.h0.w"), p("dec.gru.h0.b")));
    std::vector<Tensor> offsets;
    offsets.reserve(cfg_.l_k);
    for (int i = 0; i < cfg_.l_k; ++i) {
        Tensor xi = slice_rows(z_diff, i, 1);
        Tensor cat = concat_cols({xi, h});
        Tensor zg = sigmoid(linear(cat, p("dec.gru.z.w"), p("dec.gru.z.b")));
        Tensor rg = sigmoid(linear(cat, p("dec.gru.r.w"), p("dec.gru.r.b")));
        Tensor hh = tanh_t(linear(concat_cols({xi, mul(rg, h)}), p("dec.gru.h.w"),
                                  p("dec.gru.h.b")));
        h = add(mul(zg, hh), mul(add_scalar(neg(zg), 1.0), h));
        offsets.push_back(linear(h, p("dec.gru.out.w"), p("dec.gru.out.b")));
    }
    // per-step offsets accumulate into waypoints
    return cumsum_rows(concat_rows(offsets));
}

DecoderOutput Model::decode(const Tensor& x_t, int t, const Tensor& condition,
                            const std::vector<double>& ego, const Vec2& goal) const {
    (void)t;  // the step enters through the condition's timestep embedding
    if (x_t.rows() != cfg_.l_k || x_t.cols() != cfg_.d_c)
        throw DimensionError("decode: x_t shape mismatch");
    const int cond_len = cfg_.condition_tokens() + cfg_.l_g + cfg_.l_t;
    if (condition.rows() != cond_len || condition.cols() != cfg_.d)
        throw DimensionError("decode: condition shape mismatch");
    std::vector<Tensor> parts = {linear(x_t, p("dec.f_enc.w"), p("dec.f_enc.b"))};
    if (!cfg_.full_diffusion) parts.push_back(p("dec.q0"));
    Tensor z = add(concat_rows(parts), p("dec.pos_z"));
    for (int i = 0; i < cfg_.layers; ++i) {
        const std::string pre = "dec.layer" + std::to_string(i);
        Tensor h = layernorm(z, p(pre + ".ln1.g"), p(pre + ".ln1.b"));
        z = add(z, attn_block(h, h, pre + ".self"));
        h = layernorm(z, p(pre + ".ln2.g"), p(pre + ".ln2.b"));
        z = add(z, attn_block(h, condition, pre + ".cross"));
        check_finite(z, "decoder layer " + std::to_string(i));
    }
    z = layernorm(z, p("dec.ln_out.g"), p("dec.ln_out.b"));

    DecoderOutput out;
    Tensor z_diff = slice_rows(z, 0, cfg_.l_k);
    out.x0_pred = waypoint_head(z_diff, ego, goal);
    if (!cfg_.full_diffusion) {
        out.z_sup = slice_rows(z, cfg_.l_k, cfg_.l_s);
        Tensor s0 = slice_rows(out.z_sup, 0, 1);
        out.speed_logits = linear(s0, p("dec.speed.w"), p("dec.speed.b"));
        if (cfg_.agent_head) {
            Tensor s1 = slice_rows(out.z_sup, cfg_.l_s - 1, 1);
            out.agent_exist = sigmoid(
                linear(s1, p("dec.agent_exist.w"), p("dec.agent_exist.b")));
            out.agent_boxes = reshape(
                linear(s1, p("dec.agent_box.w"), p("dec.agent_box.b")),
                {cfg_.agent_slots, 5});
        }
    }
    return out;
}

DecoderOutput Model::forward(const OccupancyObservation& obs, const Tensor& x_t, int t,
                             bool detach_condition) const {
    PerceptionOutput po = perceive(obs);
    Tensor feats = detach_condition ? detach(po.tokens) : po.tokens;
    Tensor cond = integrate_conditions(feats, obs.goal, obs.ego, obs.command, t);
    return decode(x_t, t, cond, obs.ego, obs.goal);
}

std::vector<std::string> Model::encoder_param_names() const {
    std::vector<std::string> names;
    for (const auto& [name, _] : params_)
        if (name.rfind("enc.", 0) == 0) names.push_back(name);
    return names;
}

void Model::zero_grads() {
    for (auto& [_, t] : params_) {
        auto& g = t.grad();
        std::fill(g.begin(), g.end(), 0.0);
    }
}

std::uint64_t Model::param_hash() const { return param_hash(""); }

std::uint64_t Model::param_hash(const std::string& prefix) const {
    std::uint64_t h = kFnvOffset;
    for (const auto& [name, t] : params_) {
        if (name.rfind(prefix, 0) != 0) continue;
        fnv_bytes(h, name.data(), name.size());
        fnv_bytes(h, t.data().data(), t.data().size() * sizeof(double));
    }
    return h;
}

}  // namespace diffplan
