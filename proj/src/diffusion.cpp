#include "diffplan/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace diffplan {

double ScheduleParams::alphabar(int t) const {
    if (t == 0) return 1.0;
    if (t < 1 || t > steps) throw IndexError("alphabar: step out of range");
    return alphabars[t - 1];
}

double ScheduleParams::beta(int t) const {
    if (t < 1 || t > steps) throw IndexError("beta: step out of range");
    return betas[t - 1];
}

ScheduleParams build_schedule(ScheduleKind kind, int steps, double beta_min, double beta_max) {
    if (steps < 1) throw ConfigError("build_schedule: steps must be >= 1");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
        throw ConfigError("build_schedule: need 0 < beta_min <= beta_max < 1");
    ScheduleParams sp;
    sp.kind = kind;
    sp.steps = steps;
    sp.beta_min = beta_min;
    sp.beta_max = beta_max;
    sp.betas.resize(steps);
    if (kind == ScheduleKind::Linear) {
        for (int t = 0; t < steps; ++t) {
            const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / (steps - 1);
            sp.betas[t] = beta_min + (beta_max - beta_min) * frac;
        }
    } else {
        // squared-cosine alphabar profile; per-step betas derived from the
        // profile are capped at 0.999 (beta_min/beta_max only shape the linear
        // kind), and alphabars are recomputed from the betas so the product
        // invariant holds. A tighter cap would leave a large terminal
        // signal-to-noise ratio at T=100 and break sampling from pure noise.
        const double s = 0.008;
        auto profile = [&](double t) {
            const double v = std::cos((t / steps + s) / (1.0 + s) * M_PI / 2.0);
            return v * v;
        };
        double prev = 1.0;
        for (int t = 1; t <= steps; ++t) {
            const double ab = profile(static_cast<double>(t)) / profile(0.0);
            double beta = 1.0 - ab / prev;
            prev = ab;
            sp.betas[t - 1] = std::clamp(beta, 1e-6, 0.999);
        }
    }
    sp.alphabars.resize(steps);
    double prod = 1.0;
    for (int t = 0; t < steps; ++t) {
        prod *= 1.0 - sp.betas[t];
        sp.alphabars[t] = prod;
    }
    return sp;
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::Linear;
    if (s == "square_cosine") return ScheduleKind::SquareCosine;
    throw ConfigError("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::Linear ? "linear" : "square_cosine";
}

NoisySample forward_sample(const TrajectoryMat& x0, int t, const ScheduleParams& schedule,
                           Rng& rng) {
    if (t < 1 || t > schedule.steps) throw IndexError("forward_sample: t out of range");
    NoisySample out;
    out.t = t;
    out.eps = TrajectoryMat::zeros(x0.rows);
    out.x_t = TrajectoryMat::zeros(x0.rows);
    const double ab = schedule.alphabar(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    for (size_t i = 0; i < x0.xy.size(); ++i) {
        out.eps.xy[i] = rng.gauss();
        out.x_t.xy[i] = a * x0.xy[i] + b * out.eps.xy[i];
    }
    return out;
}

TrajectoryMat ddim_step(const TrajectoryMat& x_t, const TrajectoryMat& x0_pred, int t,
                        int t_prev, const ScheduleParams& schedule, double eta, Rng* rng) {
    if (t_prev >= t || t < 1 || t > schedule.steps || t_prev < 0)
        throw IndexError("ddim_step: need 0 <= t_prev < t <= T");
    if (eta < 0.0 || eta > 1.0) throw ConfigError("ddim_step: eta must be in [0,1]");
    if (eta > 0.0 && rng == nullptr) throw ConfigError("ddim_step: eta > 0 requires an rng");
    const double ab_t = schedule.alphabar(t);
    const double ab_p = schedule.alphabar(t_prev);
    const double denom = std::sqrt(1.0 - ab_t);
    double sigma = 0.0;
    if (eta > 0.0 && t_prev > 0) {
        sigma = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) *
                std::sqrt(1.0 - ab_t / ab_p);
    }
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma));
    TrajectoryMat out = TrajectoryMat::zeros(x_t.rows);
    for (size_t i = 0; i < x_t.xy.size(); ++i) {
        const double eps_hat = (x_t.xy[i] - std::sqrt(ab_t) * x0_pred.xy[i]) / denom;
        out.xy[i] = std::sqrt(ab_p) * x0_pred.xy[i] + dir * eps_hat;
        if (sigma > 0.0) out.xy[i] += sigma * rng->gauss();
    }
    return out;
}

std::vector<int> stride_timesteps(int total_steps, int n_steps) {
    if (n_steps < 1) throw ConfigError("stride_timesteps: n_steps must be >= 1");
    n_steps = std::min(n_steps, total_steps);
    std::vector<int> ts;
    ts.reserve(n_steps + 1);
    for (int i = 0; i < n_steps; ++i) {
        int t = static_cast<int>(std::lround(
            static_cast<double>(total_steps) * (n_steps - i) / n_steps));
        t = std::clamp(t, 1, total_steps);
        if (ts.empty() || t < ts.back()) ts.push_back(t);
    }
    ts.push_back(0);
    return ts;
}

TrajectoryMat sample_trajectory(const Denoiser& model, int horizon,
                                const ScheduleParams& schedule, int n_steps, Rng& rng,
                                bool predicts_noise, double eta) {
    TrajectoryMat x = TrajectoryMat::zeros(horizon);
    for (auto& v : x.xy) v = rng.gauss();
    const auto ts = stride_timesteps(schedule.steps, n_steps);
    for (size_t i = 0; i + 1 < ts.size(); ++i) {
        const int t = ts[i], t_prev = ts[i + 1];
        TrajectoryMat pred = model(x, t);
        if (static_cast<int>(pred.rows) != horizon)
            throw DimensionError("sample_trajectory: model output horizon mismatch");
        TrajectoryMat x0_pred;
        if (predicts_noise) {
            // eps-parameterization: recover x0 from the predicted noise
            const double ab = schedule.alphabar(t);
            x0_pred = TrajectoryMat::zeros(horizon);
            for (size_t j = 0; j < x.xy.size(); ++j)
                x0_pred.xy[j] = (x.xy[j] - std::sqrt(1.0 - ab) * pred.xy[j]) / std::sqrt(ab);
        } else {
            x0_pred = pred;
        }
        for (double v : x0_pred.xy)
            if (!std::isfinite(v))
                throw NumericError("sample_trajectory: non-finite prediction at step t=" +
                                   std::to_string(t));
        x = ddim_step(x, x0_pred, t, t_prev, schedule, eta, eta > 0.0 ? &rng : nullptr);
    }
    return x;
}

}  // namespace diffplan
