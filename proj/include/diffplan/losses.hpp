#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "diffplan/tensor.hpp"

namespace diffplan {

struct LossConfig {
    double eps = 1e-8;              // log stabilization
    double hm_alpha = 2.0;          // heatmap focal modulation
    double hm_gamma = 4.0;
    double exist_alpha = 0.25;      // existence focal modulation
    double exist_beta = 2.0;
    double smooth_l1_delta = 1.0;
    int yaw_bins = 12;
    std::vector<double> box_mu = {1.0, 1.0, 1.0, 1.0, 1.0};  // x,y,w,h,theta
    // Per-task lambda_i; missing entries are a config error when combining.
    std::map<std::string, double> task_weights;
    // The semantic loss sums over pixels as written; this switches to a mean.
    bool normalize_semantic = false;
};

struct LossReport {
    std::map<std::string, double> values;
    std::map<std::string, int> counts;
    double weighted_total = 0.0;
};

// All losses build autodiff graphs over their prediction argument and return
// scalar tensors; targets are plain (grad-free) tensors.

// Mean squared L2 over waypoints.
Tensor diffusion_loss(const Tensor& x0_true, const Tensor& x0_pred);

// Weighted cross-entropy over N rows of 4 speed-class probabilities. Rows must
// lie on the simplex within 1e-6.
Tensor speed_loss(const Tensor& onehot, const Tensor& probs, const std::vector<double>& w,
                  double eps = 1e-8);

// Class-weighted cross-entropy summed over pixels (rows) and classes (cols).
Tensor semantic_ce(const Tensor& onehot, const Tensor& probs, const std::vector<double>& w,
                   double eps = 1e-8, bool normalize = false);

// Cross-entropy averaged over the masked cells only.
Tensor bev_ce(const Tensor& onehot, const Tensor& probs, const std::vector<bool>& valid,
              double eps = 1e-8);

// Mean absolute error over masked pixels.
Tensor depth_l1(const Tensor& truth, const Tensor& pred, const std::vector<bool>& mask);

// Gaussian focal loss over a heatmap; positives are cells with target == 1,
// n_objects normalizes (negatives-only batches use max(n,1)).
Tensor heatmap_focal(const Tensor& target, const Tensor& pred, int n_objects,
                     double alpha, double gamma, double eps = 1e-8);

// l1 losses over per-object rows, normalized by object count.
Tensor l1_per_object(const Tensor& target, const Tensor& pred);

// Cross-entropy over K yaw bins from raw logits.
Tensor yaw_class_ce(const std::vector<int>& labels, const Tensor& logits, double eps = 1e-8);

// Smooth-L1 over per-object yaw residuals.
Tensor yaw_residual_loss(const Tensor& target, const Tensor& pred, double delta);

// Focal binary cross-entropy over per-sample existence probabilities in (0,1).
Tensor agent_existence_focal(const std::vector<double>& y, const Tensor& probs, double alpha,
                             double beta, double eps = 1e-8);

// mu-weighted smooth-L1 over the five box parameters, averaged over agents.
Tensor agent_box_loss(const Tensor& boxes_true, const Tensor& boxes_pred,
                      const std::vector<double>& mu, double delta);

struct DetectionTargets {
    Tensor heatmap;             // cells x 1, values in [0,1], centers == 1
    Tensor sizes;               // n x 2
    Tensor offsets;             // n x 2
    std::vector<int> yaw_bins;  // n
    Tensor yaw_residuals;       // n x 1
    int n_objects = 0;
};

struct DetectionPreds {
    Tensor heatmap;       // cells x 1, probabilities
    Tensor sizes;         // n x 2, gathered at target centers
    Tensor offsets;       // n x 2
    Tensor yaw_logits;    // n x K
    Tensor yaw_residuals; // n x 1
};

// The CenterNet-style sub-losses as one report slice; regression terms are 0
// with count 0 when there are no objects.
std::vector<std::pair<std::string, Tensor>> detection_losses(const DetectionTargets& t,
                                                             const DetectionPreds& p,
                                                             const LossConfig& cfg);

// Weighted combination sum(lambda_i * L_i); every term must have a weight.
Tensor combine_supervised(const std::vector<std::pair<std::string, Tensor>>& terms,
                          const std::map<std::string, double>& lambda);

LossReport make_report(const std::vector<std::pair<std::string, Tensor>>& terms,
                       const std::map<std::string, double>& lambda);

}  // namespace diffplan
