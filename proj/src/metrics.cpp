#include "diffplan/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "diffplan/errors.hpp"
#include "json.hpp"

namespace diffplan {

namespace {

constexpr double kEgoLength = 4.5;
constexpr double kEgoWidth = 2.0;

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

void SubScores::validate() const {
    if (nc != 0.0 && nc != 0.5 && nc != 1.0)
        throw ValidationError("NC must be one of {0, 0.5, 1}");
    if (dac != 0.0 && dac != 1.0) throw ValidationError("DAC must be 0 or 1");
    if (ttc != 0.0 && ttc != 1.0) throw ValidationError("TTC must be 0 or 1");
    if (!in_unit(comfort)) throw ValidationError("comfort out of [0,1]");
    if (!in_unit(ep)) throw ValidationError("EP out of [0,1]");
}

double pdms(const SubScores& sub) {
    sub.validate();
    return (sub.nc * sub.dac) * (5.0 * sub.ep + 5.0 * sub.ttc + 2.0 * sub.comfort) / 12.0;
}

void InfractionLedger::add(InfractionKind kind, int n) {
    if (n < 0) throw ValidationError("infraction count increment must be >= 0");
    counts[kind] += n;
}

void InfractionLedger::validate() const {
    for (const auto& [kind, n] : counts)
        if (n < 0) throw ValidationError("negative count for " + to_string(kind));
}

double infraction_penalty(InfractionKind kind) {
    switch (kind) {
        case InfractionKind::PedestrianCollision: return 0.50;
        case InfractionKind::VehicleCollision: return 0.60;
        case InfractionKind::StaticCollision: return 0.65;
        case InfractionKind::RedLight: return 0.70;
        case InfractionKind::StopSign: return 0.80;
    }
    throw ValidationError("bad infraction kind");
}

double infraction_score(const InfractionLedger& ledger) {
    ledger.validate();
    double is = 1.0;
    for (const auto& [kind, n] : ledger.counts)
        for (int i = 0; i < n; ++i) is *= infraction_penalty(kind);
    return is;
}

double route_completion(double traveled_m, double total_m) {
    if (total_m <= 0.0) throw ValidationError("route length must be positive");
    return std::clamp(traveled_m / total_m * 100.0, 0.0, 100.0);
}

double driving_score(double rc_percent, double is) {
    if (rc_percent < 0.0 || rc_percent > 100.0) throw ValidationError("RC out of [0,100]");
    if (!in_unit(is)) throw ValidationError("IS out of [0,1]");
    return rc_percent * is;
}

double score_nc(const EpisodeTrace& trace) {
    bool any_static = false;
    for (const auto& ev : trace.infractions) {
        const bool collision = ev.kind == InfractionKind::PedestrianCollision ||
                               ev.kind == InfractionKind::VehicleCollision ||
                               ev.kind == InfractionKind::StaticCollision;
        if (!collision) continue;
        if (!ev.tag) throw ValidationError("collision event without responsibility tag");
        if (*ev.tag == CollisionTag::AtFaultDynamic) return 0.0;
        if (*ev.tag == CollisionTag::StaticObject) any_static = true;
    }
    return any_static ? 0.5 : 1.0;
}

double score_dac(const EpisodeTrace& trace) {
    for (const auto& st : trace.steps)
        if (!st.drivable) return 0.0;
    return 1.0;
}

double score_ttc(const EpisodeTrace& trace, double horizon_s, double threshold_s) {
    const double ego_r = 0.5 * std::hypot(kEgoLength, kEgoWidth);
    for (const auto& st : trace.steps) {
        const Vec2 ego_vel = Vec2{st.ego.speed, 0.0}.rotated(st.ego.heading);
        for (const auto& a : st.agents) {
            if (!std::isfinite(a.vel.x) || !std::isfinite(a.vel.y))
                throw ValidationError("agent velocity missing");
            const double agent_r = 0.5 * std::hypot(a.length, a.width);
            for (double tau = 0.1; tau <= horizon_s + 1e-9; tau += 0.1) {
                const Vec2 pe = st.ego.pos + ego_vel * tau;
                const Vec2 pa = a.pos + a.vel * tau;
                if ((pe - pa).norm() < ego_r + agent_r) {
                    if (tau < threshold_s) return 0.0;
                    break;
                }
            }
        }
    }
    return 1.0;
}

double score_comfort(const EpisodeTrace& trace) {
    if (trace.steps.size() < 3) throw ValidationError("comfort needs at least 3 samples");
    const double accel_limit = 3.0, jerk_limit = 5.0;
    double worst = 0.0;
    std::vector<double> accels;
    for (size_t i = 1; i < trace.steps.size(); ++i) {
        const double dt = trace.steps[i].time - trace.steps[i - 1].time;
        if (dt <= 0.0) throw ValidationError("non-increasing trace time");
        accels.push_back((trace.steps[i].ego.speed - trace.steps[i - 1].ego.speed) / dt);
    }
    for (size_t i = 0; i < accels.size(); ++i) {
        worst = std::max(worst, (std::abs(accels[i]) - accel_limit) / accel_limit);
        if (i > 0) {
            const double dt = trace.steps[i + 1].time - trace.steps[i].time;
            const double jerk = (accels[i] - accels[i - 1]) / dt;
            worst = std::max(worst, (std::abs(jerk) - jerk_limit) / jerk_limit);
        }
    }
    return std::clamp(1.0 - std::max(worst, 0.0), 0.0, 1.0);
}

double score_ep(double actual_progress_m, double reference_progress_m) {
    if (reference_progress_m < 5.0) return 1.0;
    return std::clamp(actual_progress_m / reference_progress_m, 0.0, 1.0);
}

InfractionLedger ledger_from_trace(const EpisodeTrace& trace) {
    InfractionLedger ledger;
    for (const auto& ev : trace.infractions) ledger.add(ev.kind);
    return ledger;
}

EpisodeScore score_episode(const EpisodeTrace& trace, double reference_progress_m) {
    EpisodeScore score;
    score.scenario_id = trace.scenario_id;
    score.rc = trace.route_completion_percent();
    score.is = infraction_score(ledger_from_trace(trace));
    score.ds = driving_score(score.rc, score.is);
    score.sub.nc = score_nc(trace);
    score.sub.dac = score_dac(trace);
    score.sub.ttc = score_ttc(trace);
    score.sub.comfort = trace.steps.size() >= 3 ? score_comfort(trace) : 1.0;
    score.sub.ep = score_ep(trace.progress(), reference_progress_m);
    score.pdms = pdms(score.sub);
    return score;
}

std::string score_report(const std::vector<EpisodeScore>& scores) {
    using nlohmann::json;
    json j;
    j["episodes"] = json::array();
    double rc = 0, is = 0, ds = 0, pd = 0;
    for (const auto& s : scores) {
        j["episodes"].push_back(json{{"scenario_id", s.scenario_id},
                                     {"rc", s.rc},
                                     {"is", s.is},
                                     {"ds", s.ds},
                                     {"pdms", s.pdms},
                                     {"nc", s.sub.nc},
                                     {"dac", s.sub.dac},
                                     {"ttc", s.sub.ttc},
                                     {"comfort", s.sub.comfort},
                                     {"ep", s.sub.ep}});
        rc += s.rc;
        is += s.is;
        ds += s.ds;
        pd += s.pdms;
    }
    const double n = scores.empty() ? 1.0 : static_cast<double>(scores.size());
    j["aggregate"] = json{{"count", scores.size()},
                          {"rc", rc / n},
                          {"is", is / n},
                          {"ds", ds / n},
                          {"pdms", pd / n}};
    return j.dump(2);
}

}  // namespace diffplan
