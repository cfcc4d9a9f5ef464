#include "diffplan/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "diffplan/errors.hpp"
#include "json.hpp"

namespace diffplan {

namespace {

constexpr double kEgoLength = 4.5;
constexpr double kEgoWidth = 2.0;
constexpr double kWheelbase = 2.8;
constexpr double kMaxSteer = 0.6;
constexpr double kRedLightDuration = 6.0;

bool point_in_box(const Vec2& p, const OrientedBox& b) {
    const Vec2 d = (p - b.center).rotated(-b.heading);
    return std::abs(d.x) <= 0.5 * b.length && std::abs(d.y) <= 0.5 * b.width;
}

bool is_pedestrian(const AgentSpawn& a) { return a.width <= 1.0 && a.length <= 1.0; }

OrientedBox ego_box(const EgoState& e) {
    return OrientedBox{e.pos, e.heading, kEgoLength, kEgoWidth};
}

}  // namespace

double EpisodeTrace::progress() const {
    return steps.empty() ? 0.0 : steps.back().progress;
}

double EpisodeTrace::route_completion_percent() const {
    if (completed) return 100.0;
    if (route_length <= 0.0) return 0.0;
    return std::clamp(100.0 * progress() / route_length, 0.0, 100.0);
}

World::World(Scenario scenario, std::uint64_t seed)
    : scenario_(std::move(scenario)), rng_(seed) {
    if (scenario_.route.points.size() < 2)
        throw ConfigError("scenario route needs at least two points");
    ego_.pos = scenario_.route.points.front();
    ego_.heading = scenario_.route.heading_at(0.0);
    ego_.speed = scenario_.ego_start_speed;
    for (const auto& spec : scenario_.agents) {
        AgentState a;
        a.spec = spec;
        a.s = spec.start_s;
        a.speed = 0.0;
        a.pos = spec.route.point_at(a.s);
        a.heading = spec.route.heading_at(a.s);
        agents_.push_back(a);
    }
    fixture_satisfied_.assign(scenario_.fixtures.size(), false);
}

bool World::route_complete() const {
    return progress_ >= scenario_.route.length() - 2.0;
}

bool World::ego_on_drivable() const {
    for (const auto& road : scenario_.roads) {
        if (point_polyline_distance(ego_.pos, road.center, nullptr) <= road.half_width)
            return true;
    }
    return false;
}

OccupancyObservation World::observe() const {
    OccupancyObservation obs;
    obs.grid.assign(static_cast<size_t>(obs.channels) * obs.h * obs.w, 0.0);
    const double cs = obs.cell_size;
    for (int row = 0; row < obs.h; ++row) {
        for (int col = 0; col < obs.w; ++col) {
            const double ex = (col - obs.w / 2 + 0.5) * cs;
            const double ey = (obs.h / 2 - row - 0.5) * cs;
            const Vec2 world = ego_.pos + Vec2{ex, ey}.rotated(ego_.heading);
            for (const auto& road : scenario_.roads) {
                if (point_polyline_distance(world, road.center, nullptr) <= road.half_width) {
                    obs.at(kChDrivable, row, col) = 1.0;
                    break;
                }
            }
            double s = 0.0;
            if (point_polyline_distance(world, scenario_.route, &s) <= 1.0 && s >= progress_ - 2.0)
                obs.at(kChRoute, row, col) = 1.0;
            for (const auto& box : scenario_.static_obstacles) {
                if (point_in_box(world, box)) {
                    obs.at(kChStatic, row, col) = 1.0;
                    break;
                }
            }
            for (const auto& a : agents_) {
                if (!a.active) continue;
                OrientedBox box{a.pos, a.heading, a.spec.length, a.spec.width};
                if (point_in_box(world, box)) {
                    obs.at(kChDynamic, row, col) = 1.0;
                    const Vec2 vel =
                        (Vec2{a.speed, 0.0}.rotated(a.heading)).rotated(-ego_.heading);
                    obs.at(kChVelX, row, col) = vel.x / 10.0;
                    obs.at(kChVelY, row, col) = vel.y / 10.0;
                    break;
                }
            }
        }
    }
    obs.ego = {ego_.speed, ego_.last_accel, ego_.last_steer};
    const double goal_s =
        std::min(progress_ + scenario_.goal_lookahead, scenario_.route.length());
    obs.goal = (scenario_.route.point_at(goal_s) - ego_.pos).rotated(-ego_.heading);
    const double h0 = scenario_.route.heading_at(std::min(progress_ + 2.0, scenario_.route.length()));
    const double h1 = scenario_.route.heading_at(goal_s);
    const double dh = wrap_angle(h1 - h0);
    if (goal_s >= scenario_.route.length() - 1.0 && obs.goal.norm() < 8.0)
        obs.command = 3;
    else if (dh > 0.3)
        obs.command = 1;
    else if (dh < -0.3)
        obs.command = 2;
    else
        obs.command = 0;
    return obs;
}

void World::advance_agents(double dt) {
    for (size_t i = 0; i < agents_.size(); ++i) {
        auto& a = agents_[i];
        if (!a.active) continue;
        if (a.spec.behavior == AgentBehavior::Stopped || time_ < a.spec.start_delay) {
            a.speed = 0.0;
            continue;
        }
        double target = a.spec.speed;
        // Keep distance to other agents ahead on the same lane; the ego is
        // expected to yield, so agents ignore it (no mutual deadlock).
        double gap = 1e300;
        for (size_t j = 0; j < agents_.size(); ++j) {
            if (j == i || !agents_[j].active) continue;
            double s_other = 0.0;
            if (point_polyline_distance(agents_[j].pos, a.spec.route, &s_other) <= 1.5 &&
                s_other > a.s) {
                gap = std::min(gap,
                               s_other - a.s - 0.5 * (a.spec.length + agents_[j].spec.length));
            }
        }
        if (gap < 10.0) target *= std::clamp((gap - 4.0) / 6.0, 0.0, 1.0);
        const double dv = std::clamp(target - a.speed, -4.0 * dt, 2.0 * dt);
        a.speed = std::max(0.0, a.speed + dv);
        a.s = std::min(a.s + a.speed * dt, a.spec.route.length());
        a.pos = a.spec.route.point_at(a.s);
        a.heading = a.spec.route.heading_at(a.s);
        if (a.s >= a.spec.route.length() - 1e-9) a.active = false;
    }
}

std::vector<InfractionEvent> World::detect_events() {
    std::vector<InfractionEvent> events;
    if (!collided_) {
        const OrientedBox ego = ego_box(ego_);
        for (const auto& a : agents_) {
            if (!a.active) continue;
            OrientedBox box{a.pos, a.heading, a.spec.length, a.spec.width};
            if (boxes_overlap(ego, box)) {
                InfractionEvent ev;
                ev.step = step_count_;
                ev.kind = is_pedestrian(a.spec) ? InfractionKind::PedestrianCollision
                                                : InfractionKind::VehicleCollision;
                ev.tag = ego_.speed > 0.05 ? CollisionTag::AtFaultDynamic
                                           : CollisionTag::NotAtFault;
                events.push_back(ev);
                collided_ = true;
                break;
            }
        }
    }
    if (!collided_) {
        const OrientedBox ego = ego_box(ego_);
        for (const auto& box : scenario_.static_obstacles) {
            if (boxes_overlap(ego, box)) {
                InfractionEvent ev;
                ev.step = step_count_;
                ev.kind = InfractionKind::StaticCollision;
                ev.tag = CollisionTag::StaticObject;
                events.push_back(ev);
                collided_ = true;
                break;
            }
        }
    }
    for (size_t i = 0; i < scenario_.fixtures.size(); ++i) {
        if (fixture_satisfied_[i]) continue;
        const Fixture& f = scenario_.fixtures[i];
        if (f.kind == InfractionKind::StopSign) {
            if (ego_.speed < 0.1 && std::abs(progress_ - f.route_s) < 3.0) {
                fixture_satisfied_[i] = true;
            } else if (progress_ > f.route_s + 2.0) {
                InfractionEvent ev;
                ev.step = step_count_;
                ev.kind = InfractionKind::StopSign;
                events.push_back(ev);
                fixture_satisfied_[i] = true;
            }
        } else if (f.kind == InfractionKind::RedLight) {
            if (time_ >= kRedLightDuration) {
                fixture_satisfied_[i] = true;
            } else if (progress_ > f.route_s) {
                InfractionEvent ev;
                ev.step = step_count_;
                ev.kind = InfractionKind::RedLight;
                events.push_back(ev);
                fixture_satisfied_[i] = true;
            }
        }
    }
    return events;
}

std::vector<InfractionEvent> World::step(const Trajectory& plan, double dt) {
    if (dt <= 0.0) throw ConfigError("step dt must be positive");
    // Pure pursuit toward the first plan point beyond the lookahead circle.
    const double lookahead = std::max(2.0, 1.0 + 0.5 * ego_.speed);
    Vec2 target{lookahead, 0.0};
    bool found = false;
    for (const auto& p : plan.points) {
        if (p.norm() >= lookahead) {
            target = p;
            found = true;
            break;
        }
    }
    if (!found && !plan.points.empty()) target = plan.points.back();
    double steer = 0.0;
    if (target.norm() > 1e-6) {
        const double alpha = std::atan2(target.y, target.x);
        steer = std::atan2(2.0 * kWheelbase * std::sin(alpha), std::max(target.norm(), 1.0));
    }
    steer = std::clamp(steer, -kMaxSteer, kMaxSteer);

    double v_des = 0.0;
    if (!plan.points.empty()) {
        const size_t k = std::min<size_t>(2, plan.points.size() - 1);
        double path = plan.points[0].norm();
        for (size_t i = 1; i <= k; ++i) path += (plan.points[i] - plan.points[i - 1]).norm();
        v_des = path / (static_cast<double>(k + 1) * plan.dt);
    }
    double accel = std::clamp(2.0 * (v_des - ego_.speed), -4.5, 3.0);
    const double new_speed = std::max(0.0, ego_.speed + accel * dt);
    accel = (new_speed - ego_.speed) / dt;

    ego_.heading = wrap_angle(ego_.heading +
                              new_speed / kWheelbase * std::tan(steer) * dt);
    ego_.pos = ego_.pos + Vec2{new_speed * dt, 0.0}.rotated(ego_.heading);
    ego_.speed = new_speed;
    ego_.last_accel = accel;
    ego_.last_steer = steer;

    advance_agents(dt);
    time_ += dt;
    step_count_ += 1;

    double s = 0.0;
    const double lat = point_polyline_distance(ego_.pos, scenario_.route, &s);
    if (lat < 5.0) progress_ = std::max(progress_, s);
    return detect_events();
}

TraceStep World::snapshot() const {
    TraceStep st;
    st.time = time_;
    st.ego = ego_;
    for (const auto& a : agents_) {
        if (!a.active) continue;
        AgentSnap snap;
        snap.pos = a.pos;
        snap.vel = Vec2{a.speed, 0.0}.rotated(a.heading);
        snap.heading = a.heading;
        snap.length = a.spec.length;
        snap.width = a.spec.width;
        st.agents.push_back(snap);
    }
    st.drivable = ego_on_drivable();
    st.progress = progress_;
    return st;
}

ExpertOutput expert_policy(const World& world, int horizon, double wp_dt) {
    const Scenario& sc = world.scenario();
    const EgoState& ego = world.ego();
    const double s_ego = world.progress();
    const double route_len = sc.route.length();

    // Curvature-limited free speed over the next stretch of route.
    double v_free = 7.0;
    for (double ahead = 2.0; ahead <= 14.0; ahead += 4.0) {
        const double s0 = std::min(s_ego + ahead, route_len);
        const double s1 = std::min(s0 + 4.0, route_len);
        if (s1 - s0 < 0.5) break;
        const double kappa =
            std::abs(wrap_angle(sc.route.heading_at(s1) - sc.route.heading_at(s0))) / (s1 - s0);
        if (kappa > 1e-4) v_free = std::min(v_free, std::sqrt(2.0 / kappa));
    }
    v_free = std::max(v_free, 1.5);

    // Nearest blocking thing along the route: agents, statics, fixtures, end.
    // The virtual end obstacle sits past the end so the stop lands on it.
    double gap = route_len + 8.0 - s_ego;
    double lead_speed = 0.0;
    for (const auto& a : world.agents()) {
        if (!a.active) continue;
        double s = 0.0;
        if (point_polyline_distance(a.pos, sc.route, &s) <= 2.5 && s > s_ego + 0.5) {
            const double g = s - s_ego - 0.5 * (kEgoLength + a.spec.length);
            if (g < gap) {
                gap = g;
                lead_speed = a.speed;
            }
            continue;
        }
        // crossing hazard: project the agent along its lane and stop short of
        // the point where it will enter the route corridor
        if (a.speed > 0.2 || world.time() < a.spec.start_delay + 3.0) {
            const double v = std::max(a.speed, a.spec.speed);
            for (double tau = 0.2; tau <= 5.0 + 1e-9; tau += 0.2) {
                const Vec2 future = a.spec.route.point_at(a.s + v * tau);
                double sf = 0.0;
                if (point_polyline_distance(future, sc.route, &sf) <= 2.5 &&
                    sf > s_ego + 0.5) {
                    const double g = sf - s_ego - 0.5 * (kEgoLength + a.spec.length) - 2.0;
                    if (g < gap) {
                        gap = g;
                        lead_speed = 0.0;
                    }
                    break;
                }
            }
        }
    }
    for (const auto& box : sc.static_obstacles) {
        double s = 0.0;
        if (point_polyline_distance(box.center, sc.route, &s) <= 2.5 && s > s_ego + 0.5) {
            const double g = s - s_ego - 0.5 * (kEgoLength + box.length);
            if (g < gap) {
                gap = g;
                lead_speed = 0.0;
            }
        }
    }
    for (size_t i = 0; i < sc.fixtures.size(); ++i) {
        if (world.fixture_satisfied(i)) continue;
        const Fixture& f = sc.fixtures[i];
        bool blocking = false;
        if (f.kind == InfractionKind::StopSign) blocking = true;
        if (f.kind == InfractionKind::RedLight && world.time() < kRedLightDuration)
            blocking = true;
        if (blocking && f.route_s > s_ego - 3.0) {
            // Stop point chosen so the standstill gap lands inside the
            // stop-sign satisfaction window but before the red-light line.
            const double ahead = f.kind == InfractionKind::StopSign ? 2.5 : 1.0;
            const double g = f.route_s + ahead - s_ego;
            if (g < gap) {
                gap = g;
                lead_speed = 0.0;
            }
        }
    }
    gap = std::max(gap, 0.1);

    // Intelligent-driver-model longitudinal profile.
    const double s0 = 4.0, headway = 1.2, a_max = 2.0, b_comf = 3.0;
    double v = ego.speed;
    double s_local = 0.0;
    double a_prev = ego.last_accel;
    ExpertOutput out;
    out.trajectory.dt = wp_dt;
    double first_v = 0.0;
    for (int i = 0; i < horizon; ++i) {
        const double dv = v - lead_speed;
        const double s_star =
            s0 + std::max(0.0, v * headway + v * dv / (2.0 * std::sqrt(a_max * b_comf)));
        const double g = std::max(gap - s_local, 0.1);
        double a = a_max * (1.0 - std::pow(v / v_free, 4.0) - (s_star / g) * (s_star / g));
        a = std::clamp(a, -b_comf, a_max);
        // Jerk-limited profile: ramp acceleration so the tracked trajectory
        // stays within the comfort bounds.
        a = std::clamp(a, a_prev - 0.9, a_prev + 0.9);
        a_prev = a;
        v = std::clamp(v + a * wp_dt, 0.0, v_free);
        if (i == 0) first_v = v;
        s_local += v * wp_dt;
        const Vec2 wp_world = sc.route.point_at(std::min(s_ego + s_local, route_len));
        out.trajectory.points.push_back((wp_world - ego.pos).rotated(-ego.heading));
    }
    out.target_speed = first_v;

    std::vector<std::pair<double, OrientedBox>> boxes;
    for (const auto& a : world.agents()) {
        OrientedBox box;
        box.center = (a.pos - ego.pos).rotated(-ego.heading);
        box.heading = wrap_angle(a.heading - ego.heading);
        box.length = a.spec.length;
        box.width = a.spec.width;
        boxes.emplace_back(box.center.norm(), box);
    }
    std::stable_sort(boxes.begin(), boxes.end(),
                     [](const auto& l, const auto& r) { return l.first < r.first; });
    for (const auto& [d, box] : boxes) out.agent_boxes.push_back(box);
    return out;
}

namespace {

Polyline straight_route(double len) {
    return Polyline{{Vec2{0.0, 0.0}, Vec2{len, 0.0}}};
}

Polyline arc_route(double lead_in, double radius, double sweep, double lead_out) {
    std::vector<Vec2> pts;
    pts.push_back({0.0, 0.0});
    pts.push_back({lead_in, 0.0});
    const int n = 16;
    const Vec2 center{lead_in, sweep > 0.0 ? radius : -radius};
    for (int i = 1; i <= n; ++i) {
        const double a = sweep * i / n;
        const double base = sweep > 0.0 ? -M_PI / 2.0 : M_PI / 2.0;
        pts.push_back(center + Vec2{radius * std::cos(base + a), radius * std::sin(base + a)});
    }
    const double h = sweep;
    const Vec2 end = pts.back();
    pts.push_back(end + Vec2{lead_out, 0.0}.rotated(h));
    return Polyline{pts};
}

Scenario make_scenario(Rng& rng, int id, const std::string& difficulty) {
    Scenario sc;
    sc.id = id;
    sc.seed = rng.raw();
    sc.difficulty = difficulty;
    Rng local(sc.seed);

    const auto pick = [&](std::initializer_list<const char*> opts) {
        const auto i = local.randint(0, static_cast<std::int64_t>(opts.size()) - 1);
        return std::string(*(opts.begin() + i));
    };

    if (difficulty == "empty") {
        sc.layout = "straight";
    } else if (difficulty == "easy") {
        sc.layout = pick({"straight", "curve"});
    } else if (difficulty == "medium") {
        sc.layout = pick({"turn", "curve", "straight"});
    } else {
        sc.layout = pick({"intersection", "blocked_right_turn", "unprotected_left"});
    }

    if (sc.layout == "straight") {
        sc.route = straight_route(local.uniform(55.0, 75.0));
    } else if (sc.layout == "curve") {
        const double sweep = local.uniform(0.4, 0.9) * (local.uniform() < 0.5 ? 1.0 : -1.0);
        sc.route = arc_route(local.uniform(15.0, 25.0), local.uniform(25.0, 40.0), sweep, 20.0);
    } else if (sc.layout == "turn") {
        const double sweep = (M_PI / 2.0) * (local.uniform() < 0.5 ? 1.0 : -1.0);
        sc.route = arc_route(local.uniform(20.0, 30.0), local.uniform(9.0, 14.0), sweep, 22.0);
    } else if (sc.layout == "blocked_right_turn") {
        sc.route = arc_route(25.0, 10.0, -M_PI / 2.0, 25.0);
    } else if (sc.layout == "unprotected_left") {
        sc.route = arc_route(25.0, 12.0, M_PI / 2.0, 25.0);
    } else {  // intersection
        sc.route = straight_route(70.0);
    }
    sc.roads.push_back({sc.route, 3.5});

    if (sc.layout == "intersection" || sc.layout == "unprotected_left" ||
        sc.layout == "blocked_right_turn") {
        // Cross road through the corner / crossing point.
        const double corner_s = sc.layout == "intersection" ? 35.0 : 25.0 + 10.0;
        const Vec2 c = sc.route.point_at(corner_s);
        const double h = sc.route.heading_at(corner_s) + M_PI / 2.0;
        Polyline cross{{c - Vec2{40.0, 0.0}.rotated(h), c + Vec2{40.0, 0.0}.rotated(h)}};
        sc.roads.push_back({cross, 3.5});
    }

    if (difficulty == "medium") {
        if (local.uniform() < 0.7) {
            AgentSpawn lead;
            lead.route = sc.route;
            lead.start_s = local.uniform(18.0, 28.0);
            lead.speed = local.uniform(3.0, 5.5);
            sc.agents.push_back(lead);
        }
        if (local.uniform() < 0.6) {
            const double s = local.uniform(20.0, sc.route.length() - 15.0);
            const double side = local.uniform() < 0.5 ? 3.4 : -3.4;
            OrientedBox parked;
            parked.center =
                sc.route.point_at(s) + Vec2{0.0, side}.rotated(sc.route.heading_at(s));
            parked.heading = sc.route.heading_at(s);
            sc.static_obstacles.push_back(parked);
        }
        if (local.uniform() < 0.4)
            sc.fixtures.push_back({InfractionKind::StopSign, local.uniform(25.0, 40.0)});
    } else if (difficulty == "hard") {
        if (sc.layout == "blocked_right_turn") {
            AgentSpawn blocker;
            blocker.route = sc.route;
            blocker.start_s = 25.0 + 10.0 + local.uniform(2.0, 8.0);
            blocker.speed = 5.0;
            blocker.start_delay = local.uniform(3.0, 5.0);
            sc.agents.push_back(blocker);
        } else if (sc.layout == "unprotected_left") {
            AgentSpawn oncoming;
            const Vec2 c = sc.route.point_at(35.0);
            const double h = sc.route.heading_at(35.0) + M_PI / 2.0;
            oncoming.route =
                Polyline{{c + Vec2{35.0, 0.0}.rotated(h), c - Vec2{35.0, 0.0}.rotated(h)}};
            oncoming.start_s = local.uniform(0.0, 8.0);
            oncoming.speed = local.uniform(4.0, 6.0);
            sc.agents.push_back(oncoming);
        } else {
            AgentSpawn crossing;
            const Vec2 c = sc.route.point_at(35.0);
            crossing.route = Polyline{{c + Vec2{0.0, 25.0}, c - Vec2{0.0, 25.0}}};
            crossing.start_s = local.uniform(0.0, 6.0);
            if (local.uniform() < 0.4) {
                crossing.speed = 1.2;
                crossing.length = 0.6;
                crossing.width = 0.6;
            } else {
                crossing.speed = local.uniform(3.5, 5.5);
            }
            crossing.start_delay = local.uniform(0.0, 2.0);
            sc.agents.push_back(crossing);
            if (local.uniform() < 0.5)
                sc.fixtures.push_back({InfractionKind::RedLight, 30.0});
        }
    }
    sc.ego_start_speed = difficulty == "empty" ? 0.0 : local.uniform(0.0, 2.0);
    return sc;
}

}  // namespace

std::vector<Scenario> generate_scenarios(std::uint64_t seed, int count,
                                         const std::string& difficulty) {
    static const char* kKnown[] = {"empty", "easy", "medium", "hard", "mixed", "easy_medium"};
    bool ok = false;
    for (const char* k : kKnown) ok = ok || difficulty == k;
    if (!ok) throw ConfigError("unknown difficulty: " + difficulty);
    Rng rng(seed);
    std::vector<Scenario> out;
    static const char* kCycle[] = {"easy", "medium", "hard"};
    for (int i = 0; i < count; ++i) {
        std::string d = difficulty;
        if (difficulty == "mixed") d = kCycle[i % 3];
        if (difficulty == "easy_medium") d = kCycle[i % 2];
        out.push_back(make_scenario(rng, i, d));
    }
    return out;
}

namespace {

EpisodeTrace run_with(const Scenario& scenario, int max_steps, double dt,
                      const std::function<Trajectory(World&)>& plan_fn) {
    EpisodeTrace trace;
    trace.scenario_id = scenario.id;
    trace.seed = scenario.seed;
    trace.dt = dt;
    trace.route_length = scenario.route.length();
    if (max_steps <= 0) return trace;

    World world(scenario, scenario.seed);
    trace.steps.push_back(world.snapshot());
    double watch_progress = 0.0;
    int watch_step = 0;
    for (int i = 0; i < max_steps; ++i) {
        Trajectory plan;
        try {
            plan = plan_fn(world);
        } catch (const std::exception& e) {
            trace.failed = true;
            trace.fail_reason = e.what();
            break;
        }
        auto events = world.step(plan, dt);
        for (auto& ev : events) trace.infractions.push_back(ev);
        trace.steps.push_back(world.snapshot());
        if (world.collided()) break;
        if (world.route_complete()) {
            trace.completed = true;
            break;
        }
        if (world.progress() > watch_progress + 0.5) {
            watch_progress = world.progress();
            watch_step = i;
        } else if (i - watch_step > 150) {
            break;  // stalled
        }
    }
    return trace;
}

}  // namespace

EpisodeTrace run_episode(const Policy& policy, const Scenario& scenario, int max_steps,
                         double dt) {
    return run_with(scenario, max_steps, dt,
                    [&](World& w) { return policy(w.observe()); });
}

EpisodeTrace run_expert_episode(const Scenario& scenario, int max_steps, double dt,
                                const ExpertFrameCallback& frame_cb) {
    return run_with(scenario, max_steps, dt, [&](World& w) {
        ExpertOutput out = expert_policy(w);
        if (frame_cb) frame_cb(w, out);
        return out.trajectory;
    });
}

std::string to_string(InfractionKind k) {
    switch (k) {
        case InfractionKind::PedestrianCollision: return "pedestrian_collision";
        case InfractionKind::VehicleCollision: return "vehicle_collision";
        case InfractionKind::StaticCollision: return "static_collision";
        case InfractionKind::RedLight: return "red_light";
        case InfractionKind::StopSign: return "stop_sign";
    }
    throw ConfigError("bad infraction kind");
}

InfractionKind infraction_from_string(const std::string& s) {
    if (s == "pedestrian_collision") return InfractionKind::PedestrianCollision;
    if (s == "vehicle_collision") return InfractionKind::VehicleCollision;
    if (s == "static_collision") return InfractionKind::StaticCollision;
    if (s == "red_light") return InfractionKind::RedLight;
    if (s == "stop_sign") return InfractionKind::StopSign;
    throw ConfigError("bad infraction name: " + s);
}

namespace {

using nlohmann::json;

json vec_to_json(const Vec2& v) { return json{{"x", v.x}, {"y", v.y}}; }
Vec2 vec_from_json(const json& j) { return {j.at("x").get<double>(), j.at("y").get<double>()}; }

json line_to_json(const Polyline& p) {
    json arr = json::array();
    for (const auto& v : p.points) arr.push_back(vec_to_json(v));
    return arr;
}

Polyline line_from_json(const json& j) {
    Polyline p;
    for (const auto& v : j) p.points.push_back(vec_from_json(v));
    return p;
}

json box_to_json(const OrientedBox& b) {
    return json{{"center", vec_to_json(b.center)},
                {"heading", b.heading},
                {"length", b.length},
                {"width", b.width}};
}

OrientedBox box_from_json(const json& j) {
    OrientedBox b;
    b.center = vec_from_json(j.at("center"));
    b.heading = j.at("heading").get<double>();
    b.length = j.at("length").get<double>();
    b.width = j.at("width").get<double>();
    return b;
}

}  // namespace

std::string scenario_to_json(const Scenario& s) {
    json j;
    j["version"] = s.version;
    j["id"] = s.id;
    j["seed"] = s.seed;
    j["difficulty"] = s.difficulty;
    j["layout"] = s.layout;
    j["route"] = line_to_json(s.route);
    j["goal_lookahead"] = s.goal_lookahead;
    j["ego_start_speed"] = s.ego_start_speed;
    j["roads"] = json::array();
    for (const auto& r : s.roads)
        j["roads"].push_back(json{{"center", line_to_json(r.center)},
                                  {"half_width", r.half_width}});
    j["static_obstacles"] = json::array();
    for (const auto& b : s.static_obstacles) j["static_obstacles"].push_back(box_to_json(b));
    j["agents"] = json::array();
    for (const auto& a : s.agents)
        j["agents"].push_back(json{{"route", line_to_json(a.route)},
                                   {"start_s", a.start_s},
                                   {"speed", a.speed},
                                   {"start_delay", a.start_delay},
                                   {"behavior", a.behavior == AgentBehavior::Stopped
                                                    ? "stopped"
                                                    : "cruise"},
                                   {"length", a.length},
                                   {"width", a.width}});
    j["fixtures"] = json::array();
    for (const auto& f : s.fixtures)
        j["fixtures"].push_back(json{{"kind", to_string(f.kind)}, {"route_s", f.route_s}});
    return j.dump(2);
}

Scenario scenario_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("scenario parse: ") + e.what());
    }
    Scenario s;
    try {
        s.version = j.at("version").get<int>();
        if (s.version != 1) throw ConfigError("unsupported scenario version");
        s.id = j.at("id").get<int>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.difficulty = j.at("difficulty").get<std::string>();
        s.layout = j.at("layout").get<std::string>();
        s.route = line_from_json(j.at("route"));
        s.goal_lookahead = j.at("goal_lookahead").get<double>();
        s.ego_start_speed = j.at("ego_start_speed").get<double>();
        for (const auto& r : j.at("roads"))
            s.roads.push_back({line_from_json(r.at("center")),
                               r.at("half_width").get<double>()});
        for (const auto& b : j.at("static_obstacles"))
            s.static_obstacles.push_back(box_from_json(b));
        for (const auto& a : j.at("agents")) {
            AgentSpawn spawn;
            spawn.route = line_from_json(a.at("route"));
            spawn.start_s = a.at("start_s").get<double>();
            spawn.speed = a.at("speed").get<double>();
            spawn.start_delay = a.at("start_delay").get<double>();
            spawn.behavior = a.at("behavior").get<std::string>() == "stopped"
                                 ? AgentBehavior::Stopped
                                 : AgentBehavior::Cruise;
            spawn.length = a.at("length").get<double>();
            spawn.width = a.at("width").get<double>();
            s.agents.push_back(spawn);
        }
        for (const auto& f : j.at("fixtures"))
            s.fixtures.push_back({infraction_from_string(f.at("kind").get<std::string>()),
                                  f.at("route_s").get<double>()});
    } catch (const json::exception& e) {
        throw IoError(std::string("scenario fields: ") + e.what());
    }
    return s;
}

std::string trace_to_json(const EpisodeTrace& t) {
    json j;
    j["version"] = 1;
    j["scenario_id"] = t.scenario_id;
    j["seed"] = t.seed;
    j["dt"] = t.dt;
    j["route_length"] = t.route_length;
    j["completed"] = t.completed;
    j["failed"] = t.failed;
    j["fail_reason"] = t.fail_reason;
    j["steps"] = json::array();
    for (const auto& st : t.steps) {
        json js;
        js["time"] = st.time;
        js["ego"] = json{{"pos", vec_to_json(st.ego.pos)},
                         {"heading", st.ego.heading},
                         {"speed", st.ego.speed},
                         {"last_accel", st.ego.last_accel},
                         {"last_steer", st.ego.last_steer}};
        js["agents"] = json::array();
        for (const auto& a : st.agents)
            js["agents"].push_back(json{{"pos", vec_to_json(a.pos)},
                                        {"vel", vec_to_json(a.vel)},
                                        {"heading", a.heading},
                                        {"length", a.length},
                                        {"width", a.width}});
        js["drivable"] = st.drivable;
        js["progress"] = st.progress;
        j["steps"].push_back(js);
    }
    j["infractions"] = json::array();
    for (const auto& ev : t.infractions) {
        json je;
        je["step"] = ev.step;
        je["kind"] = to_string(ev.kind);
        if (ev.tag) {
            je["tag"] = *ev.tag == CollisionTag::AtFaultDynamic  ? "at_fault_dynamic"
                        : *ev.tag == CollisionTag::StaticObject ? "static_object"
                                                                : "not_at_fault";
        }
        j["infractions"].push_back(je);
    }
    return j.dump(2);
}

EpisodeTrace trace_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("trace parse: ") + e.what());
    }
    EpisodeTrace t;
    try {
        if (j.at("version").get<int>() != 1) throw ConfigError("unsupported trace version");
        t.scenario_id = j.at("scenario_id").get<int>();
        t.seed = j.at("seed").get<std::uint64_t>();
        t.dt = j.at("dt").get<double>();
        t.route_length = j.at("route_length").get<double>();
        t.completed = j.at("completed").get<bool>();
        t.failed = j.at("failed").get<bool>();
        t.fail_reason = j.at("fail_reason").get<std::string>();
        for (const auto& js : j.at("steps")) {
            TraceStep st;
            st.time = js.at("time").get<double>();
            const auto& je = js.at("ego");
            st.ego.pos = vec_from_json(je.at("pos"));
            st.ego.heading = je.at("heading").get<double>();
            st.ego.speed = je.at("speed").get<double>();
            st.ego.last_accel = je.at("last_accel").get<double>();
            st.ego.last_steer = je.at("last_steer").get<double>();
            for (const auto& ja : js.at("agents")) {
                AgentSnap a;
                a.pos = vec_from_json(ja.at("pos"));
                a.vel = vec_from_json(ja.at("vel"));
                a.heading = ja.at("heading").get<double>();
                a.length = ja.at("length").get<double>();
                a.width = ja.at("width").get<double>();
                st.agents.push_back(a);
            }
            st.drivable = js.at("drivable").get<bool>();
            st.progress = js.at("progress").get<double>();
            t.steps.push_back(st);
        }
        for (const auto& je : j.at("infractions")) {
            InfractionEvent ev;
            ev.step = je.at("step").get<int>();
            ev.kind = infraction_from_string(je.at("kind").get<std::string>());
            if (je.contains("tag")) {
                const std::string tag = je.at("tag").get<std::string>();
                ev.tag = tag == "at_fault_dynamic" ? CollisionTag::AtFaultDynamic
                         : tag == "static_object"  ? CollisionTag::StaticObject
                                                   : CollisionTag::NotAtFault;
            }
            t.infractions.push_back(ev);
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("trace fields: ") + e.what());
    }
    return t;
}

}  // namespace diffplan
