#include "diffplan/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "diffplan/losses.hpp"
#include "diffplan/metrics.hpp"
#include "diffplan/model.hpp"
#include "diffplan/train.hpp"

namespace diffplan {

double max_grad_error(const std::function<Tensor()>& build, std::vector<Tensor> leaves,
                      double h) {
    for (auto& leaf : leaves) {
        auto& g = leaf.grad();
        std::fill(g.begin(), g.end(), 0.0);
    }
    Tensor loss = build();
    GradTape::backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& leaf : leaves) analytic.push_back(leaf.grad());
    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& data = leaves[li].data();
        for (size_t i = 0; i < data.size(); ++i) {
            const double keep = data[i];
            data[i] = keep + h;
            const double up = build().item();
            data[i] = keep - h;
            const double dn = build().item();
            data[i] = keep;
            const double fd = (up - dn) / (2.0 * h);
            const double a = analytic[li][i];
            const double err = std::fabs(a - fd) / std::max({1.0, std::fabs(a), std::fabs(fd)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

namespace {

void check(std::vector<CheckResult>& out, const std::string& name, bool pass,
           const std::string& detail = "") {
    out.push_back({name, pass, detail});
}

void check_near(std::vector<CheckResult>& out, const std::string& name, double got,
                double want, double tol) {
    std::ostringstream d;
    d << "got " << got << ", want " << want << " +/- " << tol;
    check(out, name, std::fabs(got - want) <= tol, d.str());
}

Tensor rand_tensor(std::vector<int> shape, Rng& rng, bool req = true, double scale = 1.0) {
    return Tensor::randn(std::move(shape), rng, scale, req);
}

Tensor rand_simplex(int rows, int cols, Rng& rng) {
    std::vector<double> v(static_cast<size_t>(rows) * cols);
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j) {
            v[i * cols + j] = 0.05 + rng.uniform();
            s += v[i * cols + j];
        }
        for (int j = 0; j < cols; ++j) v[i * cols + j] /= s;
    }
    return Tensor({rows, cols}, std::move(v));
}

Tensor onehot_rows(const std::vector<int>& labels, int cols) {
    std::vector<double> v(labels.size() * cols, 0.0);
    for (size_t i = 0; i < labels.size(); ++i) v[i * cols + labels[i]] = 1.0;
    return Tensor({static_cast<int>(labels.size()), cols}, std::move(v));
}

double smooth_l1_ref(double z, double delta) {
    return std::fabs(z) < delta ? 0.5 * z * z / delta : std::fabs(z) - 0.5 * delta;
}

// --- scalar-loop loss oracles ---

double oracle_mse(const Tensor& t, const Tensor& p) {
    double s = 0.0;
    for (int i = 0; i < t.size(); ++i) {
        const double d = p.data()[i] - t.data()[i];
        s += d * d;
    }
    return s / t.rows();
}

double oracle_speed(const Tensor& y, const Tensor& p, const std::vector<double>& w,
                    double eps) {
    double s = 0.0;
    for (int i = 0; i < y.rows(); ++i)
        for (int j = 0; j < y.cols(); ++j)
            s += w[j] * y.at(i, j) * std::log(p.at(i, j) + eps);
    return -s / y.rows();
}

double oracle_semantic(const Tensor& y, const Tensor& p, const std::vector<double>& w,
                       double eps, bool normalize) {
    double s = 0.0;
    for (int i = 0; i < y.rows(); ++i)
        for (int j = 0; j < y.cols(); ++j)
            s += w[j] * y.at(i, j) * std::log(p.at(i, j) + eps);
    return normalize ? -s / y.rows() : -s;
}

double oracle_bev(const Tensor& y, const Tensor& p, const std::vector<bool>& valid,
                  double eps) {
    double s = 0.0;
    int m = 0;
    for (int i = 0; i < y.rows(); ++i) {
        if (!valid[i]) continue;
        ++m;
        for (int j = 0; j < y.cols(); ++j)
            s += y.at(i, j) * std::log(p.at(i, j) + eps);
    }
    return -s / m;
}

double oracle_depth(const Tensor& t, const Tensor& p, const std::vector<bool>& mask) {
    double s = 0.0;
    int m = 0;
    for (int i = 0; i < t.size(); ++i) {
        if (!mask[i]) continue;
        ++m;
        s += std::fabs(p.data()[i] - t.data()[i]);
    }
    return s / m;
}

double oracle_heatmap(const Tensor& t, const Tensor& p, int n_objects, double alpha,
                      double gamma, double eps) {
    double s = 0.0;
    for (int i = 0; i < t.size(); ++i) {
        const double ti = t.data()[i], pi = p.data()[i];
        if (ti == 1.0)
            s += std::pow(1.0 - pi, alpha) * std::log(pi + eps);
        else
            s += std::pow(1.0 - ti, gamma) * std::pow(pi, alpha) * std::log(1.0 - pi + eps);
    }
    return -s / std::max(n_objects, 1);
}

double oracle_l1(const Tensor& t, const Tensor& p) {
    double s = 0.0;
    for (int i = 0; i < t.size(); ++i) s += std::fabs(p.data()[i] - t.data()[i]);
    return s / t.rows();
}

double oracle_yaw_ce(const std::vector<int>& labels, const Tensor& logits, double eps) {
    double s = 0.0;
    for (int i = 0; i < logits.rows(); ++i) {
        double mx = logits.at(i, 0);
        for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(i, j));
        double z = 0.0;
        for (int j = 0; j < logits.cols(); ++j) z += std::exp(logits.at(i, j) - mx);
        const double p = std::exp(logits.at(i, labels[i]) - mx) / z;
        s += std::log(p + eps);
    }
    return -s / logits.rows();
}

double oracle_yaw_res(const Tensor& t, const Tensor& p, double delta) {
    double s = 0.0;
    for (int i = 0; i < t.size(); ++i)
        s += smooth_l1_ref(p.data()[i] - t.data()[i], delta);
    return s / t.rows();
}

double oracle_exist(const std::vector<double>& y, const Tensor& p, double alpha, double beta,
                    double eps) {
    double s = 0.0;
    const int n = p.size();
    for (int i = 0; i < n; ++i) {
        const double pi = p.data()[i];
        s += alpha * y[i] * std::pow(1.0 - pi, beta) * std::log(pi + eps);
        s += (1.0 - alpha) * (1.0 - y[i]) * std::pow(pi, beta) * std::log(1.0 - pi + eps);
    }
    return -s / n;
}

double oracle_box(const Tensor& t, const Tensor& p, const std::vector<double>& mu,
                  double delta) {
    double s = 0.0;
    for (int i = 0; i < t.rows(); ++i)
        for (int j = 0; j < 5; ++j)
            s += mu[j] * smooth_l1_ref(p.at(i, j) - t.at(i, j), delta);
    return s / t.rows();
}

ModelConfig tiny_model_config() {
    ModelConfig mc;
    mc.d = 16;
    mc.layers = 2;
    mc.heads = 2;
    mc.encoder_layers = 1;
    mc.l_k = 4;
    mc.grid_h = 8;
    mc.grid_w = 8;
    mc.patch = 4;
    mc.agent_slots = 2;
    return mc;
}

Frame tiny_frame(const ModelConfig& mc, Rng& rng) {
    Frame f;
    f.obs.h = mc.grid_h;
    f.obs.w = mc.grid_w;
    f.obs.channels = mc.grid_channels;
    f.obs.cell_size = 0.5;
    f.obs.grid.resize(static_cast<size_t>(mc.grid_channels) * mc.grid_h * mc.grid_w);
    for (auto& g : f.obs.grid) g = rng.uniform() < 0.4 ? 1.0 : 0.0;
    f.obs.ego = {rng.uniform(0.0, 6.0), rng.uniform(-1.0, 1.0), rng.uniform(-0.3, 0.3)};
    f.obs.goal = {rng.uniform(1.0, 3.0), rng.uniform(-1.0, 1.0)};
    f.obs.command = static_cast<int>(rng.randint(0, mc.command_vocab - 1));
    for (int i = 0; i < mc.l_k; ++i)
        f.waypoints.push_back({0.4 * (i + 1) + 0.1 * rng.gauss(), 0.1 * rng.gauss()});
    f.target_speed = rng.uniform(0.0, 7.0);
    f.agent_boxes.push_back({rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
                             rng.uniform(-3.0, 3.0), 4.5, 2.0});
    return f;
}

double full_model_grad_error(const ModelConfig& mc, std::uint64_t seed) {
    Model model(mc, seed);
    Rng rng(seed ^ 0xfeedULL);
    Frame frame = tiny_frame(mc, rng);
    PerceptionTargets tg = derive_targets(frame, mc);
    LossConfig lc;
    RunConfig defaults = default_run_config();
    lc.task_weights = defaults.loss.task_weights;

    TrajectoryMat x0 = TrajectoryMat::zeros(mc.l_k);
    for (int i = 0; i < mc.l_k; ++i) {
        x0.x(i) = frame.waypoints[i].x / mc.norm_range;
        x0.y(i) = frame.waypoints[i].y / mc.norm_range;
    }
    std::vector<double> x_in(2 * mc.l_k);
    for (auto& v : x_in) v = 0.5 * rng.gauss();
    const int t_step = 7;

    auto build = [&]() {
        PerceptionOutput po = model.perceive(frame.obs);
        Tensor cond = model.integrate_conditions(po.tokens, frame.obs.goal, frame.obs.ego,
                                                 frame.obs.command, t_step);
        DecoderOutput out = model.decode(Tensor({mc.l_k, 2}, x_in), t_step, cond,
                                         frame.obs.ego, frame.obs.goal);
        auto terms = perception_loss_terms(po, tg, mc, lc);
        Tensor target({mc.l_k, 2}, x0.xy);
        terms.emplace_back("diffusion", diffusion_loss(target, out.x0_pred));
        if (!mc.full_diffusion) {
            std::vector<double> sp(mc.speed_classes, 0.0);
            sp[speed_class_of(frame.target_speed, mc)] = 1.0;
            terms.emplace_back("dec_speed",
                               speed_loss(Tensor({1, mc.speed_classes}, sp),
                                          softmax(out.speed_logits, 1),
                                          std::vector<double>(mc.speed_classes, 1.0)));
        }
        std::map<std::string, double> lambda = lc.task_weights;
        lambda["dec_speed"] = 1.0;
        return combine_supervised(terms, lambda);
    };

    std::vector<std::string> names = {"enc.patch.w",          "enc.pos",
                                      "enc.layer0.attn.wq.w", "enc.layer0.attn.wo.b",
                                      "enc.layer0.ffn1.w",    "enc.layer0.ln1.g",
                                      "enc.head.bev.w",       "enc.head.hm.w",
                                      "enc.head.depth.b",     "enc.head.speed.w",
                                      "dec.f_enc.w",          "dec.goal.w",
                                      "dec.tproj.w",          "dec.pos_z",
                                      "dec.pos_c",            "dec.layer0.self.wq.w",
                                      "dec.layer1.cross.wk.w","dec.layer0.cross.wv.w",
                                      "dec.ln_out.g"};
    if (mc.use_ego) names.push_back("dec.ego.w");
    if (mc.use_command) names.push_back("dec.cmd");
    if (!mc.full_diffusion) {
        names.push_back("dec.q0");
        names.push_back("dec.speed.w");
    }
    if (mc.use_gru) {
        names.push_back("dec.gru.h0.w");
        names.push_back("dec.gru.z.w");
        names.push_back("dec.gru.out.w");
    } else {
        names.push_back("dec.traj.w");
    }
    std::vector<Tensor> leaves;
    for (const auto& n : names) leaves.push_back(model.params().at(n));
    return max_grad_error(build, leaves, 1e-5);
}

}  // namespace

std::vector<CheckResult> verify_gradcheck() {
    std::vector<CheckResult> out;
    Rng rng(20240817ULL);
    const double tol = 1e-4;

    {
        Tensor target({5, 2}, {0.1, -0.2, 0.3, 0.0, -0.4, 0.2, 0.5, -0.1, 0.0, 0.3});
        Tensor pred = rand_tensor({5, 2}, rng);
        check(out, "grad diffusion_loss",
              max_grad_error([&] { return diffusion_loss(target, pred); }, {pred}) < tol);
    }
    {
        Tensor logits = rand_tensor({3, 4}, rng);
        Tensor y = onehot_rows({0, 2, 3}, 4);
        std::vector<double> w = {1.0, 1.3, 0.7, 1.1};
        check(out, "grad speed_loss",
              max_grad_error([&] { return speed_loss(y, softmax(logits, 1), w); },
                             {logits}) < tol);
    }
    {
        Tensor logits = rand_tensor({6, 3}, rng);
        Tensor y = onehot_rows({0, 1, 2, 1, 0, 2}, 3);
        std::vector<double> w = {1.0, 0.8, 1.2};
        check(out, "grad semantic_ce",
              max_grad_error([&] { return semantic_ce(y, softmax(logits, 1), w); },
                             {logits}) < tol);
        std::vector<bool> valid = {true, false, true, true, false, true};
        check(out, "grad bev_ce",
              max_grad_error(
                  [&] {
                      return bev_ce(y, softmax(logits, 1), valid,
                                    1e-8);
                  },
                  {logits}) < tol);
    }
    {
        Tensor t = rand_tensor({8, 1}, rng, false);
        Tensor p = rand_tensor({8, 1}, rng);
        std::vector<bool> mask = {true, true, false, true, true, false, true, true};
        check(out, "grad depth_l1",
              max_grad_error([&] { return depth_l1(t, p, mask); }, {p}) < tol);
    }
    {
        std::vector<double> tv(12, 0.0);
        tv[3] = 1.0;
        tv[7] = 0.6;
        tv[10] = 1.0;
        Tensor t({12, 1}, tv);
        Tensor raw = rand_tensor({12, 1}, rng);
        check(out, "grad heatmap_focal",
              max_grad_error([&] { return heatmap_focal(t, sigmoid(raw), 2, 2.0, 4.0); },
                             {raw}) < tol);
    }
    {
        Tensor t = rand_tensor({3, 2}, rng, false);
        Tensor p = rand_tensor({3, 2}, rng);
        check(out, "grad l1_per_object",
              max_grad_error([&] { return l1_per_object(t, p); }, {p}) < tol);
    }
    {
        Tensor logits = rand_tensor({3, 12}, rng);
        std::vector<int> labels = {2, 7, 11};
        check(out, "grad yaw_class_ce",
              max_grad_error([&] { return yaw_class_ce(labels, logits); }, {logits}) < tol);
    }
    {
        Tensor t = rand_tensor({4, 1}, rng, false);
        Tensor p = rand_tensor({4, 1}, rng);
        check(out, "grad yaw_residual_loss",
              max_grad_error([&] { return yaw_residual_loss(t, p, 1.0); }, {p}) < tol);
    }
    {
        Tensor raw = rand_tensor({1, 5}, rng);
        std::vector<double> y = {1.0, 0.0, 1.0, 0.0, 0.0};
        check(out, "grad agent_existence_focal",
              max_grad_error(
                  [&] { return agent_existence_focal(y, sigmoid(raw), 0.25, 2.0); },
                  {raw}) < tol);
    }
    {
        Tensor t = rand_tensor({3, 5}, rng, false);
        Tensor p = rand_tensor({3, 5}, rng);
        std::vector<double> mu = {1.0, 1.0, 0.5, 0.8, 0.8};
        check(out, "grad agent_box_loss",
              max_grad_error([&] { return agent_box_loss(t, p, mu, 1.0); }, {p}) < tol);
    }

    {
        const double err = full_model_grad_error(tiny_model_config(), 99);
        std::ostringstream d;
        d << "max rel err " << err;
        check(out, "grad full encoder+decoder (gru)", err < tol, d.str());
    }
    {
        ModelConfig mc = tiny_model_config();
        mc.use_gru = false;
        const double err = full_model_grad_error(mc, 100);
        check(out, "grad full encoder+decoder (linear head)", err < tol);
    }
    {
        ModelConfig mc = tiny_model_config();
        mc.predict_noise = true;
        const double err = full_model_grad_error(mc, 101);
        check(out, "grad full encoder+decoder (noise prediction)", err < tol);
    }
    {
        ModelConfig mc = tiny_model_config();
        mc.full_diffusion = true;
        const double err = full_model_grad_error(mc, 102);
        check(out, "grad full encoder+decoder (diffusion only)", err < tol);
    }
    return out;
}

std::vector<CheckResult> verify_oracle() {
    std::vector<CheckResult> out;
    Rng rng(424242ULL);
    const double tol = 1e-10;
    const int trials = 100;

    auto run = [&](const std::string& name, const std::function<double()>& diff_fn) {
        double worst = 0.0;
        for (int i = 0; i < trials; ++i) worst = std::max(worst, diff_fn());
        std::ostringstream d;
        d << "max |vectorized - loop| = " << worst;
        check(out, name, worst < tol, d.str());
    };

    run("oracle diffusion_loss", [&] {
        const int n = 2 + static_cast<int>(rng.randint(0, 6));
        Tensor t = rand_tensor({n, 2}, rng, false);
        Tensor p = rand_tensor({n, 2}, rng, false);
        return std::fabs(diffusion_loss(t, p).item() - oracle_mse(t, p));
    });
    run("oracle speed_loss", [&] {
        const int n = 1 + static_cast<int>(rng.randint(0, 3));
        Tensor p = rand_simplex(n, 4, rng);
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.randint(0, 3)));
        Tensor y = onehot_rows(labels, 4);
        std::vector<double> w = {rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0),
                                 rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
        return std::fabs(speed_loss(y, p, w).item() - oracle_speed(y, p, w, 1e-8));
    });
    run("oracle semantic_ce", [&] {
        const int n = 2 + static_cast<int>(rng.randint(0, 8));
        Tensor p = rand_simplex(n, 3, rng);
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.randint(0, 2)));
        Tensor y = onehot_rows(labels, 3);
        std::vector<double> w = {1.0, rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
        const bool norm = rng.uniform() < 0.5;
        return std::fabs(semantic_ce(y, p, w, 1e-8, norm).item() -
                         oracle_semantic(y, p, w, 1e-8, norm));
    });
    run("oracle bev_ce", [&] {
        const int n = 3 + static_cast<int>(rng.randint(0, 8));
        Tensor p = rand_simplex(n, 4, rng);
        std::vector<int> labels;
        std::vector<bool> valid;
        for (int i = 0; i < n; ++i) {
            labels.push_back(static_cast<int>(rng.randint(0, 3)));
            valid.push_back(rng.uniform() < 0.7);
        }
        valid[0] = true;
        Tensor y = onehot_rows(labels, 4);
        return std::fabs(bev_ce(y, p, valid).item() - oracle_bev(y, p, valid, 1e-8));
    });
    run("oracle depth_l1", [&] {
        const int n = 3 + static_cast<int>(rng.randint(0, 8));
        Tensor t = rand_tensor({n, 1}, rng, false);
        Tensor p = rand_tensor({n, 1}, rng, false);
        std::vector<bool> mask;
        for (int i = 0; i < n; ++i) mask.push_back(rng.uniform() < 0.7);
        mask[0] = true;
        return std::fabs(depth_l1(t, p, mask).item() - oracle_depth(t, p, mask));
    });
    run("oracle heatmap_focal", [&] {
        const int n = 6 + static_cast<int>(rng.randint(0, 10));
        std::vector<double> tv(n, 0.0), pv(n);
        int objs = 0;
        for (int i = 0; i < n; ++i) {
            const double u = rng.uniform();
            if (u < 0.2) {
                tv[i] = 1.0;
                ++objs;
            } else if (u < 0.6) {
                tv[i] = rng.uniform(0.0, 0.99);
            }
            pv[i] = rng.uniform(0.01, 0.99);
        }
        Tensor t({n, 1}, tv);
        Tensor p({n, 1}, pv);
        return std::fabs(heatmap_focal(t, p, objs, 2.0, 4.0).item() -
                         oracle_heatmap(t, p, objs, 2.0, 4.0, 1e-8));
    });
    run("oracle l1_per_object", [&] {
        const int n = 1 + static_cast<int>(rng.randint(0, 4));
        Tensor t = rand_tensor({n, 2}, rng, false);
        Tensor p = rand_tensor({n, 2}, rng, false);
        return std::fabs(l1_per_object(t, p).item() - oracle_l1(t, p));
    });
    run("oracle yaw_class_ce", [&] {
        const int n = 1 + static_cast<int>(rng.randint(0, 4));
        Tensor logits = rand_tensor({n, 12}, rng, false);
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.randint(0, 11)));
        return std::fabs(yaw_class_ce(labels, logits).item() -
                         oracle_yaw_ce(labels, logits, 1e-8));
    });
    run("oracle yaw_residual_loss", [&] {
        const int n = 1 + static_cast<int>(rng.randint(0, 4));
        Tensor t = rand_tensor({n, 1}, rng, false);
        Tensor p = rand_tensor({n, 1}, rng, false, 2.0);
        return std::fabs(yaw_residual_loss(t, p, 1.0).item() - oracle_yaw_res(t, p, 1.0));
    });
    run("oracle agent_existence_focal", [&] {
        const int n = 2 + static_cast<int>(rng.randint(0, 6));
        std::vector<double> y, pv;
        for (int i = 0; i < n; ++i) {
            y.push_back(rng.uniform() < 0.5 ? 1.0 : 0.0);
            pv.push_back(rng.uniform(0.01, 0.99));
        }
        Tensor p({1, n}, pv);
        return std::fabs(agent_existence_focal(y, p, 0.25, 2.0).item() -
                         oracle_exist(y, p, 0.25, 2.0, 1e-8));
    });
    run("oracle agent_box_loss", [&] {
        const int n = 1 + static_cast<int>(rng.randint(0, 4));
        Tensor t = rand_tensor({n, 5}, rng, false);
        Tensor p = rand_tensor({n, 5}, rng, false, 2.0);
        std::vector<double> mu;
        for (int j = 0; j < 5; ++j) mu.push_back(rng.uniform(0.5, 2.0));
        return std::fabs(agent_box_loss(t, p, mu, 1.0).item() - oracle_box(t, p, mu, 1.0));
    });
    return out;
}

std::vector<CheckResult> verify_metrics() {
    std::vector<CheckResult> out;

    {
        SubScores human{1.0, 1.0, 1.0, 0.999, 0.875};
        check_near(out, "composite score, reference-driver row", 100.0 * pdms(human), 94.8,
                   0.05);
    }
    {
        // published closed-loop leaderboard rows: DS, RC, IS
        struct Row {
            const char* name;
            double ds, rc, is;
        };
        const Row rows[] = {
            {"row 1", 21, 48, 0.56},  {"row 2", 33, 70, 0.51},  {"row 3", 47, 74, 0.63},
            {"row 4", 47, 93, 0.50},  {"row 5", 48, 72, 0.65},  {"row 6", 58, 83, 0.68},
            {"row 7", 58, 88, 0.65},  {"row 8", 59, 82, 0.68},  {"row 9", 67, 77, 0.84},
            {"row 10", 69, 94, 0.72}, {"row 11", 71, 88, 0.85}, {"row 12", 73, 97, 0.56},
            {"row 13", 83, 96, 0.86},
        };
        for (const auto& r : rows) {
            const double ds = driving_score(r.rc, r.is);
            std::ostringstream d;
            d << "published DS " << r.ds << ", RCxIS " << ds;
            check(out, std::string("leaderboard consistency, ") + r.name,
                  std::fabs(r.ds - ds) <= 0.5, d.str());
        }
    }
    {
        check_near(out, "DS example 96 x 0.86", driving_score(96.0, 0.86), 82.56, 1e-9);
        InfractionLedger ped;
        ped.add(InfractionKind::PedestrianCollision);
        check_near(out, "IS one pedestrian", infraction_score(ped), 0.5, 1e-12);
        InfractionLedger veh;
        veh.add(InfractionKind::VehicleCollision, 2);
        check_near(out, "IS two vehicles", infraction_score(veh), 0.36, 1e-12);
    }
    {
        SubScores z{0.0, 1.0, 1.0, 1.0, 1.0};
        check_near(out, "NC=0 annihilates", pdms(z), 0.0, 0.0);
        SubScores ones{1.0, 1.0, 1.0, 1.0, 1.0};
        check_near(out, "all ones", pdms(ones), 1.0, 0.0);
    }
    {
        // monotonicity and bounds over a grid of sub-scores
        bool mono = true, bounds = true;
        const double ncs[] = {0.0, 0.5, 1.0};
        for (double nc : ncs)
            for (double dac : {0.0, 1.0})
                for (double ttc : {0.0, 1.0})
                    for (double c : {0.0, 0.4, 1.0})
                        for (double ep : {0.0, 0.6, 1.0}) {
                            SubScores s{nc, dac, ttc, c, ep};
                            const double v = pdms(s);
                            bounds = bounds && v >= 0.0 && v <= 1.0;
                            SubScores up = s;
                            up.ep = std::min(1.0, ep + 0.4);
                            mono = mono && pdms(up) >= v - 1e-12;
                        }
        check(out, "PDMS bounds", bounds);
        check(out, "PDMS monotone in EP", mono);
    }
    {
        InfractionLedger a, b;
        a.add(InfractionKind::RedLight);
        a.add(InfractionKind::VehicleCollision);
        b.add(InfractionKind::VehicleCollision);
        b.add(InfractionKind::RedLight);
        check(out, "IS order invariance",
              std::fabs(infraction_score(a) - infraction_score(b)) < 1e-15);
    }
    return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
    for (const auto& r : results)
        if (!r.passed) return false;
    return true;
}

std::string format_results(const std::vector<CheckResult>& results) {
    std::ostringstream out;
    for (const auto& r : results) {
        out << (r.passed ? "PASS" : "FAIL") << "  " << r.name;
        if (!r.passed && !r.detail.empty()) out << "  (" << r.detail << ")";
        out << "\n";
    }
    return out.str();
}

}  // namespace diffplan
