#include "diffplan/losses.hpp"

#include <cmath>

#include "diffplan/errors.hpp"

namespace diffplan {

namespace {

Tensor const_like(const Tensor& shape_of, std::vector<double> data) {
    return Tensor(shape_of.shape(), std::move(data), false);
}

}  // namespace

Tensor diffusion_loss(const Tensor& x0_true, const Tensor& x0_pred) {
    if (x0_true.shape() != x0_pred.shape())
        throw DimensionError("diffusion_loss: shape mismatch");
    Tensor d = sub(x0_pred, x0_true);
    return scale(sum(mul(d, d)), 1.0 / x0_true.rows());
}

Tensor speed_loss(const Tensor& onehot, const Tensor& probs, const std::vector<double>& w,
                  double eps) {
    if (onehot.shape() != probs.shape())
        throw DimensionError("speed_loss: shape mismatch");
    const int n = probs.rows(), c = probs.cols();
    if (static_cast<int>(w.size()) != c)
        throw DimensionError("speed_loss: weight length != class count");
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) {
            const double p = probs.at(i, j);
            if (p < 0.0) throw ValidationError("speed_loss: negative probability");
            s += p;
        }
        if (std::fabs(s - 1.0) > 1e-6)
            throw ValidationError("speed_loss: probability row does not sum to 1");
    }
    std::vector<double> wy(onehot.data());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) wy[i * c + j] *= w[j];
    return scale(sum(mul(const_like(onehot, std::move(wy)), log_eps(probs, eps))), -1.0 / n);
}

Tensor semantic_ce(const Tensor& onehot, const Tensor& probs, const std::vector<double>& w,
                   double eps, bool normalize) {
    if (onehot.shape() != probs.shape())
        throw DimensionError("semantic_ce: shape mismatch");
    const int pix = probs.rows(), c = probs.cols();
    if (static_cast<int>(w.size()) != c)
        throw DimensionError("semantic_ce: weight length != class count");
    std::vector<double> wy(onehot.data());
    for (int i = 0; i < pix; ++i)
        for (int j = 0; j < c; ++j) wy[i * c + j] *= w[j];
    Tensor loss = neg(sum(mul(const_like(onehot, std::move(wy)), log_eps(probs, eps))));
    return normalize ? scale(loss, 1.0 / pix) : loss;
}

Tensor bev_ce(const Tensor& onehot, const Tensor& probs, const std::vector<bool>& valid,
              double eps) {
    if (onehot.shape() != probs.shape())
        throw DimensionError("bev_ce: shape mismatch");
    const int pix = probs.rows(), c = probs.cols();
    if (static_cast<int>(valid.size()) != pix)
        throw DimensionError("bev_ce: mask length != cell count");
    int m = 0;
    std::vector<double> mask_y(onehot.data());
    for (int i = 0; i < pix; ++i) {
        if (valid[i]) {
            ++m;
        } else {
            for (int j = 0; j < c; ++j) mask_y[i * c + j] = 0.0;
        }
    }
    if (m == 0) throw ValidationError("bev_ce: empty valid mask");
    return scale(sum(mul(const_like(onehot, std::move(mask_y)), log_eps(probs, eps))),
                 -1.0 / m);
}

Tensor depth_l1(const Tensor& truth, const Tensor& pred, const std::vector<bool>& mask) {
    if (truth.shape() != pred.shape())
        throw DimensionError("depth_l1: shape mismatch");
    if (static_cast<int>(mask.size()) != truth.size())
        throw DimensionError("depth_l1: mask length mismatch");
    int m = 0;
    std::vector<double> sel(truth.size(), 0.0);
    for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            sel[i] = 1.0;
            ++m;
        }
    if (m == 0) throw ValidationError("depth_l1: empty mask");
    Tensor diff = abs_t(sub(pred, truth));
    return scale(sum(mul(const_like(truth, std::move(sel)), diff)), 1.0 / m);
}

Tensor heatmap_focal(const Tensor& target, const Tensor& pred, int n_objects, double alpha,
                     double gamma, double eps) {
    if (target.shape() != pred.shape())
        throw DimensionError("heatmap_focal: shape mismatch");
    for (double v : target.data())
        if (v < 0.0 || v > 1.0)
            throw ValidationError("heatmap_focal: target outside [0,1]");
    const int n = target.size();
    std::vector<double> pos(n, 0.0), negw(n, 0.0);
    for (int i = 0; i < n; ++i) {
        if (target.data()[i] == 1.0)
            pos[i] = 1.0;
        else
            negw[i] = std::pow(1.0 - target.data()[i], gamma);
    }
    // positives: (1-p)^alpha log p; negatives: (1-P)^gamma p^alpha log(1-p)
    Tensor one_minus_p = add_scalar(neg(pred), 1.0);
    Tensor pos_term = mul(const_like(target, std::move(pos)),
                          mul(pow_const(one_minus_p, alpha), log_eps(pred, eps)));
    Tensor neg_term = mul(const_like(target, std::move(negw)),
                          mul(pow_const(pred, alpha), log_eps(one_minus_p, eps)));
    const double norm = -1.0 / std::max(n_objects, 1);
    return scale(add(sum(pos_term), sum(neg_term)), norm);
}

Tensor l1_per_object(const Tensor& target, const Tensor& pred) {
    if (target.shape() != pred.shape())
        throw DimensionError("l1_per_object: shape mismatch");
    const int n = target.rows();
    return scale(sum(abs_t(sub(pred, target))), 1.0 / n);
}

Tensor yaw_class_ce(const std::vector<int>& labels, const Tensor& logits, double eps) {
    const int n = logits.rows(), k = logits.cols();
    if (static_cast<int>(labels.size()) != n)
        throw DimensionError("yaw_class_ce: label count != rows");
    std::vector<double> onehot(static_cast<size_t>(n) * k, 0.0);
    for (int i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= k)
            throw ValidationError("yaw_class_ce: label out of range");
        onehot[static_cast<size_t>(i) * k + labels[i]] = 1.0;
    }
    Tensor probs = softmax(logits, 1);
    return scale(sum(mul(const_like(logits, std::move(onehot)), log_eps(probs, eps))),
                 -1.0 / n);
}

Tensor yaw_residual_loss(const Tensor& target, const Tensor& pred, double delta) {
    if (target.shape() != pred.shape())
        throw DimensionError("yaw_residual_loss: shape mismatch");
    return scale(sum(smooth_l1(sub(pred, target), delta)), 1.0 / target.rows());
}

Tensor agent_existence_focal(const std::vector<double>& y, const Tensor& probs, double alpha,
                             double beta, double eps) {
    const int n = probs.size();
    if (static_cast<int>(y.size()) != n)
        throw DimensionError("agent_existence_focal: label count mismatch");
    for (double p : probs.data())
        if (!(p > 0.0 && p < 1.0))
            throw ValidationError("agent_existence_focal: probability outside (0,1)");
    std::vector<double> posw(n, 0.0), negw(n, 0.0);
    for (int i = 0; i < n; ++i) {
        if (y[i] != 0.0 && y[i] != 1.0)
            throw ValidationError("agent_existence_focal: labels must be 0/1");
        posw[i] = alpha * y[i];
        negw[i] = (1.0 - alpha) * (1.0 - y[i]);
    }
    Tensor one_minus_p = add_scalar(neg(probs), 1.0);
    Tensor pos_term = mul(Tensor(probs.shape(), std::move(posw)),
                          mul(pow_const(one_minus_p, beta), log_eps(probs, eps)));
    Tensor neg_term = mul(Tensor(probs.shape(), std::move(negw)),
                          mul(pow_const(probs, beta), log_eps(one_minus_p, eps)));
    return scale(add(sum(pos_term), sum(neg_term)), -1.0 / n);
}

Tensor agent_box_loss(const Tensor& boxes_true, const Tensor& boxes_pred,
                      const std::vector<double>& mu, double delta) {
    if (boxes_true.shape() != boxes_pred.shape())
        throw DimensionError("agent_box_loss: shape mismatch");
    if (boxes_true.cols() != 5 || mu.size() != 5)
        throw DimensionError("agent_box_loss: expected 5 box parameters");
    const int m = boxes_true.rows();
    if (m < 1) throw ValidationError("agent_box_loss: need at least one agent");
    std::vector<double> muw(static_cast<size_t>(m) * 5);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < 5; ++j) muw[i * 5 + j] = mu[j];
    Tensor terms = mul(const_like(boxes_true, std::move(muw)),
                       smooth_l1(sub(boxes_pred, boxes_true), delta));
    return scale(sum(terms), 1.0 / m);
}

std::vector<std::pair<std::string, Tensor>> detection_losses(const DetectionTargets& t,
                                                             const DetectionPreds& p,
                                                             const LossConfig& cfg) {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("det_heatmap",
                     heatmap_focal(t.heatmap, p.heatmap, t.n_objects, cfg.hm_alpha,
                                   cfg.hm_gamma, cfg.eps));
    if (t.n_objects > 0) {
        out.emplace_back("det_size", l1_per_object(t.sizes, p.sizes));
        out.emplace_back("det_offset", l1_per_object(t.offsets, p.offsets));
        out.emplace_back("det_yaw_cls", yaw_class_ce(t.yaw_bins, p.yaw_logits, cfg.eps));
        out.emplace_back("det_yaw_res",
                         yaw_residual_loss(t.yaw_residuals, p.yaw_residuals,
                                           cfg.smooth_l1_delta));
    } else {
        for (const char* name : {"det_size", "det_offset", "det_yaw_cls", "det_yaw_res"})
            out.emplace_back(name, Tensor::scalar(0.0));
    }
    return out;
}

Tensor combine_supervised(const std::vector<std::pair<std::string, Tensor>>& terms,
                          const std::map<std::string, double>& lambda) {
    Tensor total;
    for (const auto& [name, t] : terms) {
        auto it = lambda.find(name);
        if (it == lambda.end())
            throw ConfigError("combine_supervised: missing weight for task " + name);
        Tensor w = scale(t, it->second);
        total = total.defined() ? add(total, w) : w;
    }
    if (!total.defined()) throw ConfigError("combine_supervised: no loss terms");
    return total;
}

LossReport make_report(const std::vector<std::pair<std::string, Tensor>>& terms,
                       const std::map<std::string, double>& lambda) {
    LossReport rep;
    for (const auto& [name, t] : terms) {
        auto it = lambda.find(name);
        if (it == lambda.end())
            throw ConfigError("make_report: missing weight for task " + name);
        rep.values[name] = t.item();
        rep.weighted_total += it->second * t.item();
    }
    return rep;
}

}  // namespace diffplan
