#include "diffplan/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "diffplan/errors.hpp"
#include "json.hpp"

namespace diffplan {

namespace {

using nlohmann::json;

const char* kTaskNames[] = {"diffusion",   "speed",      "semantic",   "bev",
                            "depth",       "det_heatmap", "det_size",  "det_offset",
                            "det_yaw_cls", "det_yaw_res", "agent_exist", "agent_box"};

}  // namespace

void RunConfig::validate() const {
    if (stage != 1 && stage != 2) throw ConfigError("run config: stage must be 1 or 2");
    if (epochs < 1 || batch < 1) throw ConfigError("run config: epochs/batch must be >= 1");
    if (lr <= 0.0 || grad_clip <= 0.0) throw ConfigError("run config: lr/clip must be positive");
    if (weight_decay < 0.0) throw ConfigError("run config: weight decay must be >= 0");
    if (schedule_steps < 1 || reverse_steps < 1)
        throw ConfigError("run config: schedule/reverse steps must be >= 1");
    model.validate();
    for (const char* name : kTaskNames)
        if (!loss.task_weights.count(name))
            throw ConfigError(std::string("run config: missing loss weight: ") + name);
}

RunConfig default_run_config() {
    RunConfig cfg;
    for (const char* name : kTaskNames) cfg.loss.task_weights[name] = 1.0;
    return cfg;
}

std::string model_config_to_json(const ModelConfig& c) {
    json j;
    j["l_k"] = c.l_k;
    j["l_s"] = c.l_s;
    j["l_g"] = c.l_g;
    j["l_t"] = c.l_t;
    j["d"] = c.d;
    j["d_c"] = c.d_c;
    j["layers"] = c.layers;
    j["heads"] = c.heads;
    j["encoder_layers"] = c.encoder_layers;
    j["speed_classes"] = c.speed_classes;
    j["command_vocab"] = c.command_vocab;
    j["bev_classes"] = c.bev_classes;
    j["sem_classes"] = c.sem_classes;
    j["yaw_bins"] = c.yaw_bins;
    j["agent_slots"] = c.agent_slots;
    j["ego_dim"] = c.ego_dim;
    j["grid_h"] = c.grid_h;
    j["grid_w"] = c.grid_w;
    j["grid_channels"] = c.grid_channels;
    j["patch"] = c.patch;
    j["norm_range"] = c.norm_range;
    j["traj_norm"] = c.traj_norm;
    j["speed_thresholds"] = c.speed_thresholds;
    j["use_gru"] = c.use_gru;
    j["use_ego"] = c.use_ego;
    j["use_command"] = c.use_command;
    j["predict_noise"] = c.predict_noise;
    j["full_diffusion"] = c.full_diffusion;
    j["full_discrimination"] = c.full_discrimination;
    j["agent_head"] = c.agent_head;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config parse: ") + e.what());
    }
    ModelConfig c;
    try {
        c.l_k = j.value("l_k", c.l_k);
        c.l_s = j.value("l_s", c.l_s);
        c.l_g = j.value("l_g", c.l_g);
        c.l_t = j.value("l_t", c.l_t);
        c.d = j.value("d", c.d);
        c.d_c = j.value("d_c", c.d_c);
        c.layers = j.value("layers", c.layers);
        c.heads = j.value("heads", c.heads);
        c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
        c.speed_classes = j.value("speed_classes", c.speed_classes);
        c.command_vocab = j.value("command_vocab", c.command_vocab);
        c.bev_classes = j.value("bev_classes", c.bev_classes);
        c.sem_classes = j.value("sem_classes", c.sem_classes);
        c.yaw_bins = j.value("yaw_bins", c.yaw_bins);
        c.agent_slots = j.value("agent_slots", c.agent_slots);
        c.ego_dim = j.value("ego_dim", c.ego_dim);
        c.grid_h = j.value("grid_h", c.grid_h);
        c.grid_w = j.value("grid_w", c.grid_w);
        c.grid_channels = j.value("grid_channels", c.grid_channels);
        c.patch = j.value("patch", c.patch);
        c.norm_range = j.value("norm_range", c.norm_range);
        c.traj_norm = j.value("traj_norm", c.traj_norm);
        c.speed_thresholds = j.value("speed_thresholds", c.speed_thresholds);
        c.use_gru = j.value("use_gru", c.use_gru);
        c.use_ego = j.value("use_ego", c.use_ego);
        c.use_command = j.value("use_command", c.use_command);
        c.predict_noise = j.value("predict_noise", c.predict_noise);
        c.full_diffusion = j.value("full_diffusion", c.full_diffusion);
        c.full_discrimination = j.value("full_discrimination", c.full_discrimination);
        c.agent_head = j.value("agent_head", c.agent_head);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config fields: ") + e.what());
    }
    return c;
}

std::string schedule_to_json(const ScheduleParams& s) {
    json j;
    j["kind"] = to_string(s.kind);
    j["steps"] = s.steps;
    j["beta_min"] = s.beta_min;
    j["beta_max"] = s.beta_max;
    return j.dump();
}

ScheduleParams schedule_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("schedule parse: ") + e.what());
    }
    return build_schedule(schedule_kind_from_string(j.at("kind").get<std::string>()),
                          j.at("steps").get<int>(), j.at("beta_min").get<double>(),
                          j.at("beta_max").get<double>());
}

ScheduleParams schedule_from_config(const RunConfig& cfg) {
    return build_schedule(cfg.schedule_kind, cfg.schedule_steps, cfg.beta_min, cfg.beta_max);
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["stage"] = cfg.stage;
    j["epochs"] = cfg.epochs;
    j["batch"] = cfg.batch;
    j["lr"] = cfg.lr;
    j["weight_decay"] = cfg.weight_decay;
    j["grad_clip"] = cfg.grad_clip;
    j["seed"] = cfg.seed;
    j["reverse_steps"] = cfg.reverse_steps;
    j["schedule_kind"] = to_string(cfg.schedule_kind);
    j["schedule_steps"] = cfg.schedule_steps;
    j["beta_min"] = cfg.beta_min;
    j["beta_max"] = cfg.beta_max;
    j["one_stage"] = cfg.one_stage;
    j["finetune_encoder"] = cfg.finetune_encoder;
    j["model"] = json::parse(model_config_to_json(cfg.model));
    j["loss_weights"] = cfg.loss.task_weights;
    j["normalize_semantic"] = cfg.loss.normalize_semantic;
    return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config parse: ") + e.what());
    }
    RunConfig cfg = default_run_config();
    try {
        cfg.stage = j.value("stage", cfg.stage);
        cfg.epochs = j.value("epochs", cfg.epochs);
        cfg.batch = j.value("batch", cfg.batch);
        cfg.lr = j.value("lr", cfg.lr);
        cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
        cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.reverse_steps = j.value("reverse_steps", cfg.reverse_steps);
        if (j.contains("schedule_kind"))
            cfg.schedule_kind = schedule_kind_from_string(j.at("schedule_kind").get<std::string>());
        cfg.schedule_steps = j.value("schedule_steps", cfg.schedule_steps);
        cfg.beta_min = j.value("beta_min", cfg.beta_min);
        cfg.beta_max = j.value("beta_max", cfg.beta_max);
        cfg.one_stage = j.value("one_stage", cfg.one_stage);
        cfg.finetune_encoder = j.value("finetune_encoder", cfg.finetune_encoder);
        if (j.contains("model")) cfg.model = model_config_from_json(j.at("model").dump());
        if (j.contains("loss_weights")) {
            for (const auto& [name, w] : j.at("loss_weights").items())
                cfg.loss.task_weights[name] = w.get<double>();
        }
        cfg.loss.normalize_semantic = j.value("normalize_semantic", cfg.loss.normalize_semantic);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config fields: ") + e.what());
    }
    return cfg;
}

void apply_ablation(RunConfig& cfg, const std::string& flag) {
    if (flag == "full-diffusion") {
        cfg.model.full_diffusion = true;
    } else if (flag == "full-discrimination") {
        cfg.model.full_discrimination = true;
    } else if (flag == "one-stage") {
        cfg.one_stage = true;
    } else if (flag == "noise-prediction") {
        cfg.model.predict_noise = true;
    } else if (flag == "no-gru") {
        cfg.model.use_gru = false;
    } else if (flag == "no-ego-state") {
        cfg.model.use_ego = false;
    } else if (flag == "no-command") {
        cfg.model.use_command = false;
    } else {
        throw ConfigError("unknown ablation flag: " + flag);
    }
    cfg.model.validate();
}

Adam::Adam(double lr_, double weight_decay_, double grad_clip_)
    : lr(lr_), weight_decay(weight_decay_), grad_clip(grad_clip_) {}

void Adam::step(std::map<std::string, Tensor>& params, const std::set<std::string>& frozen) {
    double norm_sq = 0.0;
    for (auto& [name, t] : params) {
        if (frozen.count(name)) continue;
        for (double g : t.grad()) {
            if (!std::isfinite(g)) throw NumericError("non-finite gradient at " + name);
            norm_sq += g * g;
        }
    }
    const double norm = std::sqrt(norm_sq);
    const double scale = norm > grad_clip ? grad_clip / norm : 1.0;
    step_count += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (auto& [name, t] : params) {
        if (frozen.count(name)) continue;
        auto& mv = m[name];
        auto& vv = v[name];
        mv.resize(t.data().size(), 0.0);
        vv.resize(t.data().size(), 0.0);
        auto& val = t.data();
        auto& grad = t.grad();
        for (size_t i = 0; i < val.size(); ++i) {
            const double g = grad[i] * scale;
            mv[i] = beta1 * mv[i] + (1.0 - beta1) * g;
            vv[i] = beta2 * vv[i] + (1.0 - beta2) * g * g;
            const double mhat = mv[i] / bc1;
            const double vhat = vv[i] / bc2;
            val[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * val[i]);
        }
    }
}

Checkpoint snapshot(const Model& model, const Adam& opt, const RunConfig& cfg,
                    std::int64_t step) {
    Checkpoint ck;
    ck.stage = cfg.stage;
    ck.step = step;
    ck.model_config_json = model_config_to_json(model.config());
    ck.schedule_json = schedule_to_json(schedule_from_config(cfg));
    for (const auto& [name, t] : model.params()) {
        ck.shapes[name] = t.shape();
        ck.params[name] = t.data();
    }
    ck.adam_m = opt.m;
    ck.adam_v = opt.v;
    return ck;
}

void restore_model(Model& model, const Checkpoint& ck) {
    auto& params = model.params();
    if (ck.params.size() != params.size())
        throw ConfigError("checkpoint incompatible: parameter set mismatch");
    for (auto& [name, t] : params) {
        auto it = ck.params.find(name);
        if (it == ck.params.end())
            throw ConfigError("checkpoint incompatible: missing " + name);
        if (it->second.size() != t.data().size())
            throw ConfigError("checkpoint incompatible: shape mismatch at " + name);
        t.data() = it->second;
    }
}

void restore_adam(Adam& opt, const Checkpoint& ck) {
    opt.m = ck.adam_m;
    opt.v = ck.adam_v;
    opt.step_count = ck.step;
}

PerceptionTargets derive_targets(const Frame& frame, const ModelConfig& cfg) {
    const int ps = cfg.patch;
    const int py = cfg.grid_h / ps, px = cfg.grid_w / ps;
    const int l_c = py * px;
    PerceptionTargets tg;
    std::vector<double> bev(static_cast<size_t>(l_c) * cfg.bev_classes, 0.0);
    std::vector<double> sem(static_cast<size_t>(l_c) * cfg.sem_classes, 0.0);
    std::vector<double> depth(l_c, 0.0);
    tg.bev_valid.assign(l_c, false);
    tg.depth_mask.assign(l_c, false);
    const double cell = frame.obs.cell_size;
    for (int pr = 0; pr < py; ++pr) {
        for (int pc = 0; pc < px; ++pc) {
            bool drivable = false, route = false, stat = false, dyn = false;
            for (int dy = 0; dy < ps; ++dy) {
                for (int dx = 0; dx < ps; ++dx) {
                    const int r = pr * ps + dy, c = pc * ps + dx;
                    drivable = drivable || frame.obs.at(kChDrivable, r, c) > 0.5;
                    route = route || frame.obs.at(kChRoute, r, c) > 0.5;
                    stat = stat || frame.obs.at(kChStatic, r, c) > 0.5;
                    dyn = dyn || frame.obs.at(kChDynamic, r, c) > 0.5;
                }
            }
            const int tok = pr * px + pc;
            int bev_cls = 0;
            if (stat || dyn) bev_cls = 3;
            else if (route) bev_cls = 2;
            else if (drivable) bev_cls = 1;
            bev[static_cast<size_t>(tok) * cfg.bev_classes + bev_cls] = 1.0;
            int sem_cls = 0;
            if (dyn) sem_cls = 2;
            else if (drivable) sem_cls = 1;
            sem[static_cast<size_t>(tok) * cfg.sem_classes + sem_cls] = 1.0;
            tg.bev_valid[tok] = drivable || route || stat || dyn;
            tg.depth_mask[tok] = drivable;
            const double cx = ((pc + 0.5) * ps - cfg.grid_w / 2.0) * cell;
            const double cy = (cfg.grid_h / 2.0 - (pr + 0.5) * ps) * cell;
            depth[tok] = std::hypot(cx, cy) / cfg.norm_range;
        }
    }
    if (std::none_of(tg.bev_valid.begin(), tg.bev_valid.end(), [](bool b) { return b; }))
        tg.bev_valid.assign(l_c, true);
    if (std::none_of(tg.depth_mask.begin(), tg.depth_mask.end(), [](bool b) { return b; }))
        tg.depth_mask.assign(l_c, true);
    tg.bev_onehot = Tensor({l_c, cfg.bev_classes}, std::move(bev));
    tg.sem_onehot = Tensor({l_c, cfg.sem_classes}, std::move(sem));
    tg.depth = Tensor({l_c, 1}, std::move(depth));

    // detection targets on the token grid
    std::vector<double> hm(l_c, 0.0);
    std::vector<double> sizes, offsets, yaw_res;
    const double patch_m = ps * cell;
    const double sigma = 0.8;
    const double bin_w = 2.0 * M_PI / cfg.yaw_bins;
    for (const auto& box : frame.agent_boxes) {
        const double colf = box[0] / cell + cfg.grid_w / 2.0;
        const double rowf = cfg.grid_h / 2.0 - box[1] / cell;
        if (colf < 0.0 || colf >= cfg.grid_w || rowf < 0.0 || rowf >= cfg.grid_h) continue;
        const double pcf = colf / ps, prf = rowf / ps;
        const int jp = std::min(static_cast<int>(pcf), px - 1);
        const int ip = std::min(static_cast<int>(prf), py - 1);
        for (int r = 0; r < py; ++r)
            for (int c = 0; c < px; ++c) {
                const double d2 = (c + 0.5 - pcf) * (c + 0.5 - pcf) +
                                  (r + 0.5 - prf) * (r + 0.5 - prf);
                hm[r * px + c] =
                    std::max(hm[r * px + c], std::exp(-d2 / (2.0 * sigma * sigma)));
            }
        hm[ip * px + jp] = 1.0;
        tg.det_cells.push_back(ip * px + jp);
        sizes.push_back(box[3] / patch_m);
        sizes.push_back(box[4] / patch_m);
        offsets.push_back(pcf - jp);
        offsets.push_back(prf - ip);
        double h = wrap_angle(box[2]);
        if (h < 0.0) h += 2.0 * M_PI;
        int bin = std::min(static_cast<int>(h / bin_w), cfg.yaw_bins - 1);
        tg.det.yaw_bins.push_back(bin);
        yaw_res.push_back(h - (bin + 0.5) * bin_w);
        tg.det.n_objects += 1;
    }
    tg.det.heatmap = Tensor({l_c, 1}, std::move(hm));
    if (tg.det.n_objects > 0) {
        tg.det.sizes = Tensor({tg.det.n_objects, 2}, std::move(sizes));
        tg.det.offsets = Tensor({tg.det.n_objects, 2}, std::move(offsets));
        tg.det.yaw_residuals = Tensor({tg.det.n_objects, 1}, std::move(yaw_res));
    }

    tg.speed_class = speed_class_of(frame.target_speed, cfg);
    tg.agent_exist.assign(cfg.agent_slots, 0.0);
    std::vector<double> slot_boxes(static_cast<size_t>(cfg.agent_slots) * 5, 0.0);
    tg.n_agents =
        std::min<int>(static_cast<int>(frame.agent_boxes.size()), cfg.agent_slots);
    for (int i = 0; i < tg.n_agents; ++i) {
        tg.agent_exist[i] = 1.0;
        const auto& b = frame.agent_boxes[i];
        slot_boxes[i * 5 + 0] = b[0] / cfg.norm_range;
        slot_boxes[i * 5 + 1] = b[1] / cfg.norm_range;
        slot_boxes[i * 5 + 2] = wrap_angle(b[2]) / M_PI;
        slot_boxes[i * 5 + 3] = b[3] / 10.0;
        slot_boxes[i * 5 + 4] = b[4] / 10.0;
    }
    tg.agent_boxes = Tensor({cfg.agent_slots, 5}, std::move(slot_boxes));
    return tg;
}

namespace {

Tensor onehot_row(int index, int classes) {
    std::vector<double> v(classes, 0.0);
    if (index < 0 || index >= classes) throw IndexError("onehot: class out of range");
    v[index] = 1.0;
    return Tensor({1, classes}, std::move(v));
}

DetectionPreds gather_preds(const PerceptionOutput& out, const std::vector<int>& cells) {
    DetectionPreds p;
    p.heatmap = out.det_heatmap;
    if (cells.empty()) return p;
    std::vector<Tensor> sz, off, yl, yr;
    for (int c : cells) {
        sz.push_back(row_select(out.det_sizes, c));
        off.push_back(row_select(out.det_offsets, c));
        yl.push_back(row_select(out.det_yaw_logits, c));
        yr.push_back(row_select(out.det_yaw_res, c));
    }
    p.sizes = concat_rows(sz);
    p.offsets = concat_rows(off);
    p.yaw_logits = concat_rows(yl);
    p.yaw_residuals = concat_rows(yr);
    return p;
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> perception_loss_terms(
    const PerceptionOutput& out, const PerceptionTargets& tg, const ModelConfig& mc,
    const LossConfig& lc) {
    std::vector<std::pair<std::string, Tensor>> terms;
    terms.emplace_back("bev", bev_ce(tg.bev_onehot, out.bev_probs, tg.bev_valid, lc.eps));
    terms.emplace_back("semantic",
                       semantic_ce(tg.sem_onehot, out.sem_probs,
                                   std::vector<double>(mc.sem_classes, 1.0), lc.eps,
                                   lc.normalize_semantic));
    terms.emplace_back("depth", depth_l1(tg.depth, out.depth, tg.depth_mask));
    for (auto& term : detection_losses(tg.det, gather_preds(out, tg.det_cells), lc))
        terms.push_back(term);
    terms.emplace_back("speed",
                       speed_loss(onehot_row(tg.speed_class, mc.speed_classes),
                                  softmax(out.speed_logits, 1),
                                  std::vector<double>(mc.speed_classes, 1.0), lc.eps));
    if (mc.agent_head) {
        terms.emplace_back("agent_exist",
                           agent_existence_focal(tg.agent_exist, out.agent_exist,
                                                 lc.exist_alpha, lc.exist_beta, lc.eps));
        if (tg.n_agents > 0) {
            terms.emplace_back(
                "agent_box",
                agent_box_loss(slice_rows(tg.agent_boxes, 0, tg.n_agents),
                               slice_rows(out.agent_boxes, 0, tg.n_agents), lc.box_mu,
                               lc.smooth_l1_delta));
        } else {
            terms.emplace_back("agent_box", Tensor::scalar(0.0));
        }
    }
    return terms;
}

namespace {

std::vector<std::pair<std::string, Tensor>> decoder_loss_terms(
    const DecoderOutput& out, const PerceptionTargets& tg, const TrajectoryMat& x0,
    const TrajectoryMat& eps, const ModelConfig& mc, const LossConfig& lc) {
    std::vector<std::pair<std::string, Tensor>> terms;
    const TrajectoryMat& target = mc.predict_noise ? eps : x0;
    Tensor target_t({target.rows, 2}, target.xy);
    terms.emplace_back("diffusion", diffusion_loss(target_t, out.x0_pred));
    if (!mc.full_diffusion) {
        terms.emplace_back("speed",
                           speed_loss(onehot_row(tg.speed_class, mc.speed_classes),
                                      softmax(out.speed_logits, 1),
                                      std::vector<double>(mc.speed_classes, 1.0), lc.eps));
        if (mc.agent_head) {
            terms.emplace_back("agent_exist",
                               agent_existence_focal(tg.agent_exist, out.agent_exist,
                                                     lc.exist_alpha, lc.exist_beta, lc.eps));
            if (tg.n_agents > 0) {
                terms.emplace_back(
                    "agent_box",
                    agent_box_loss(slice_rows(tg.agent_boxes, 0, tg.n_agents),
                                   slice_rows(out.agent_boxes, 0, tg.n_agents), lc.box_mu,
                                   lc.smooth_l1_delta));
            } else {
                terms.emplace_back("agent_box", Tensor::scalar(0.0));
            }
        }
    }
    return terms;
}

TrajectoryMat normalized_waypoints(const Frame& frame, const ModelConfig& mc) {
    if (static_cast<int>(frame.waypoints.size()) != mc.l_k)
        throw ValidationError("frame horizon does not match l_k");
    TrajectoryMat x0 = TrajectoryMat::zeros(mc.l_k);
    for (int i = 0; i < mc.l_k; ++i) {
        x0.x(i) = frame.waypoints[i].x / mc.traj_norm;
        x0.y(i) = frame.waypoints[i].y / mc.traj_norm;
    }
    return x0;
}

std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<size_t>(rng.randint(0, static_cast<std::int64_t>(i) - 1))]);
    return idx;
}

void record_batch(std::vector<std::map<std::string, double>>& curve,
                  const std::vector<std::map<std::string, double>>& frame_values) {
    std::map<std::string, double> mean;
    for (const auto& fv : frame_values)
        for (const auto& [k, v] : fv) mean[k] += v;
    for (auto& [k, v] : mean) v /= static_cast<double>(frame_values.size());
    curve.push_back(std::move(mean));
}

}  // namespace

TrainResult train_stage1(const Dataset& ds, const RunConfig& cfg) {
    cfg.validate();
    if (ds.frames.empty()) throw ValidationError("stage 1: empty dataset");
    Model model(cfg.model, cfg.seed);
    Adam opt(cfg.lr, cfg.weight_decay, cfg.grad_clip);
    Rng rng(cfg.seed ^ 0x5117a6e1ULL);
    TrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = shuffled_indices(ds.frames.size(), rng);
        for (size_t start = 0; start < order.size(); start += cfg.batch) {
            const size_t end = std::min(order.size(), start + cfg.batch);
            model.zero_grads();
            std::vector<std::map<std::string, double>> frame_values;
            for (size_t k = start; k < end; ++k) {
                const Frame& frame = ds.frames[order[k]];
                PerceptionTargets tg = derive_targets(frame, cfg.model);
                PerceptionOutput out = model.perceive(frame.obs);
                auto terms = perception_loss_terms(out, tg, cfg.model, cfg.loss);
                Tensor total =
                    scale(combine_supervised(terms, cfg.loss.task_weights),
                          1.0 / static_cast<double>(end - start));
                GradTape::backward(total);
                std::map<std::string, double> values;
                for (const auto& [name, t] : terms) values[name] = t.item();
                values["total"] = total.item() * static_cast<double>(end - start);
                frame_values.push_back(std::move(values));
            }
            opt.step(model.params(), {});
            record_batch(result.curve, frame_values);
        }
    }
    result.checkpoint = snapshot(model, opt, cfg, opt.step_count);
    result.checkpoint.stage = 1;
    return result;
}

TrainResult train_stage2(const Dataset& ds, const Checkpoint& stage1, const RunConfig& cfg) {
    cfg.validate();
    if (ds.frames.empty()) throw ValidationError("stage 2: empty dataset");
    if (!cfg.one_stage && stage1.stage != 1)
        throw ConfigError("stage 2 requires a stage-1 checkpoint unless one-stage is set");
    Model model(cfg.model, cfg.seed);
    if (!cfg.one_stage) restore_model(model, stage1);
    Adam opt(cfg.lr, cfg.weight_decay, cfg.grad_clip);
    const bool freeze = !cfg.one_stage && !cfg.finetune_encoder;
    std::set<std::string> frozen;
    if (freeze)
        for (const auto& name : model.encoder_param_names()) frozen.insert(name);
    const ScheduleParams schedule = schedule_from_config(cfg);
    Rng rng(cfg.seed ^ 0x57a9e2c3ULL);
    TrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = shuffled_indices(ds.frames.size(), rng);
        for (size_t start = 0; start < order.size(); start += cfg.batch) {
            const size_t end = std::min(order.size(), start + cfg.batch);
            model.zero_grads();
            std::vector<std::map<std::string, double>> frame_values;
            for (size_t k = start; k < end; ++k) {
                const Frame& frame = ds.frames[order[k]];
                PerceptionTargets tg = derive_targets(frame, cfg.model);
                const TrajectoryMat x0 = normalized_waypoints(frame, cfg.model);
                TrajectoryMat x_in = TrajectoryMat::zeros(cfg.model.l_k);
                TrajectoryMat eps = TrajectoryMat::zeros(cfg.model.l_k);
                int t = 0;
                if (!cfg.model.full_discrimination) {
                    t = static_cast<int>(rng.randint(1, cfg.schedule_steps));
                    NoisySample ns = forward_sample(x0, t, schedule, rng);
                    x_in = ns.x_t;
                    eps = ns.eps;
                }
                PerceptionOutput po = model.perceive(frame.obs);
                Tensor feats = freeze ? detach(po.tokens) : po.tokens;
                Tensor cond = model.integrate_conditions(feats, frame.obs.goal,
                                                         frame.obs.ego, frame.obs.command, t);
                DecoderOutput out =
                    model.decode(Tensor({cfg.model.l_k, 2}, x_in.xy), t, cond,
                                 frame.obs.ego, frame.obs.goal);
                auto terms = decoder_loss_terms(out, tg, x0, eps, cfg.model, cfg.loss);
                if (cfg.one_stage)
                    for (auto& term : perception_loss_terms(po, tg, cfg.model, cfg.loss))
                        terms.push_back(term);
                Tensor total =
                    scale(combine_supervised(terms, cfg.loss.task_weights),
                          1.0 / static_cast<double>(end - start));
                GradTape::backward(total);
                std::map<std::string, double> values;
                for (const auto& [name, t2] : terms) values[name] = t2.item();
                values["total"] = total.item() * static_cast<double>(end - start);
                frame_values.push_back(std::move(values));
            }
            opt.step(model.params(), frozen);
            record_batch(result.curve, frame_values);
        }
    }
    result.checkpoint = snapshot(model, opt, cfg, opt.step_count);
    result.checkpoint.stage = 2;
    return result;
}

std::string loss_curve_csv(const TrainResult& result) {
    std::set<std::string> keys;
    for (const auto& rec : result.curve)
        for (const auto& [k, _] : rec) keys.insert(k);
    std::ostringstream out;
    out << "step";
    for (const auto& k : keys) out << "," << k;
    out << "\n";
    int step = 0;
    for (const auto& rec : result.curve) {
        out << ++step;
        for (const auto& k : keys) {
            auto it = rec.find(k);
            out << "," << (it == rec.end() ? 0.0 : it->second);
        }
        out << "\n";
    }
    return out.str();
}

Policy make_policy(const Model& model, const ScheduleParams& schedule, int n_steps,
                   std::uint64_t seed) {
    auto model_ptr = std::make_shared<Model>(model);
    auto prev_plan = std::make_shared<std::vector<Vec2>>();
    return [model_ptr, schedule, n_steps, seed, prev_plan](const OccupancyObservation& obs) {
        const ModelConfig& mc = model_ptr->config();
        // Fixed seed per call: the sampler sees the same start noise every
        // frame, so consecutive plans do not jitter against each other.
        Rng rng(seed);
        PerceptionOutput po = model_ptr->perceive(obs);
        Tensor feats = detach(po.tokens);
        TrajectoryMat plan;
        if (mc.full_discrimination) {
            Tensor cond = model_ptr->integrate_conditions(feats, obs.goal, obs.ego,
                                                          obs.command, 0);
            DecoderOutput out = model_ptr->decode(
                Tensor({mc.l_k, 2}, std::vector<double>(2 * mc.l_k, 0.0)), 0, cond,
                obs.ego, obs.goal);
            plan = TrajectoryMat{mc.l_k, out.x0_pred.data()};
        } else {
            Denoiser denoiser = [&](const TrajectoryMat& x_t, int t) {
                Tensor cond = model_ptr->integrate_conditions(feats, obs.goal, obs.ego,
                                                              obs.command, t);
                DecoderOutput out = model_ptr->decode(Tensor({mc.l_k, 2}, x_t.xy), t,
                                                      cond, obs.ego, obs.goal);
                return TrajectoryMat{mc.l_k, out.x0_pred.data()};
            };
            plan = sample_trajectory(denoiser, mc.l_k, schedule, n_steps, rng,
                                     mc.predict_noise);
        }
        Trajectory traj;
        traj.dt = 0.2;
        for (int i = 0; i < plan.rows; ++i)
            traj.points.push_back({plan.x(i) * mc.traj_norm, plan.y(i) * mc.traj_norm});
        // Blend with the previous plan (advanced one step and shifted by the
        // ego displacement) to suppress sample-to-sample waypoint noise.
        if (!prev_plan->empty() && prev_plan->size() == traj.points.size()) {
            const double shift = obs.ego[0] * traj.dt;
            const size_t n = traj.points.size();
            for (size_t i = 0; i < n; ++i) {
                const Vec2& carry = (*prev_plan)[std::min(i + 1, n - 1)];
                const Vec2 aligned{carry.x - shift, carry.y};
                traj.points[i].x = 0.5 * traj.points[i].x + 0.5 * aligned.x;
                traj.points[i].y = 0.5 * traj.points[i].y + 0.5 * aligned.y;
            }
        }
        *prev_plan = traj.points;
        return traj;
    };
}

}  // namespace diffplan
