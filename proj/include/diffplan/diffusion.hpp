#pragma once

#include <functional>
#include <string>
#include <vector>

#include "diffplan/errors.hpp"
#include "diffplan/rng.hpp"

namespace diffplan {

enum class ScheduleKind { Linear, SquareCosine };

// Noise schedule: per-step variances and their cumulative products.
// alphabar(t) == prod_{i<=t}(1 - beta_i) is maintained exactly.
struct ScheduleParams {
    ScheduleKind kind = ScheduleKind::SquareCosine;
    int steps = 0;                 // T
    double beta_min = 0.0;
    double beta_max = 0.0;
    std::vector<double> betas;     // index 0 == beta_1
    std::vector<double> alphabars; // index 0 == alphabar_1

    // alphabar_0 is defined as 1.
    double alphabar(int t) const;
    double beta(int t) const;
};

ScheduleParams build_schedule(ScheduleKind kind, int steps, double beta_min, double beta_max);
ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

// Flat row-major waypoint matrix (rows x 2), in normalized diffusion units
// unless stated otherwise.
struct TrajectoryMat {
    int rows = 0;
    std::vector<double> xy;  // rows*2

    double& x(int i) { return xy[2 * i]; }
    double& y(int i) { return xy[2 * i + 1]; }
    double x(int i) const { return xy[2 * i]; }
    double y(int i) const { return xy[2 * i + 1]; }
    static TrajectoryMat zeros(int rows) { return {rows, std::vector<double>(2 * rows, 0.0)}; }
};

struct NoisySample {
    TrajectoryMat x_t;
    int t = 0;
    TrajectoryMat eps;  // the Gaussian draw, kept for training supervision
};

NoisySample forward_sample(const TrajectoryMat& x0, int t, const ScheduleParams& schedule,
                           Rng& rng);

// Deterministic (eta=0) DDIM update from step t to t_prev given the model's
// clean-sample prediction. With eta>0 an rng must be supplied.
TrajectoryMat ddim_step(const TrajectoryMat& x_t, const TrajectoryMat& x0_pred, int t,
                        int t_prev, const ScheduleParams& schedule, double eta = 0.0,
                        Rng* rng = nullptr);

// Evenly strided timestep sub-sequence: starts at T, ends with a final hop to 0.
std::vector<int> stride_timesteps(int total_steps, int n_steps);

// Denoiser contract: maps (x_t, t) to an x0 prediction (or eps prediction when
// predicts_noise is set, in which case x0 is recovered from the schedule).
using Denoiser = std::function<TrajectoryMat(const TrajectoryMat& x_t, int t)>;

TrajectoryMat sample_trajectory(const Denoiser& model, int horizon,
                                const ScheduleParams& schedule, int n_steps, Rng& rng,
                                bool predicts_noise = false, double eta = 0.0);

}  // namespace diffplan
