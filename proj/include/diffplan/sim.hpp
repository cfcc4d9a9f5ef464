#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "diffplan/geometry.hpp"
#include "diffplan/obs.hpp"
#include "diffplan/rng.hpp"

namespace diffplan {

// Ego-frame plan: waypoint i is the desired position at time (i+1)*dt.
struct Trajectory {
    std::vector<Vec2> points;
    double dt = 0.2;
};

enum class InfractionKind {
    PedestrianCollision,
    VehicleCollision,
    StaticCollision,
    RedLight,
    StopSign
};

enum class CollisionTag { AtFaultDynamic, StaticObject, NotAtFault };

enum class AgentBehavior { Cruise, Stopped };

struct AgentSpawn {
    Polyline route;          // own centerline; position given by start_s
    double start_s = 0.0;
    double speed = 0.0;      // profile speed
    double start_delay = 0.0;  // seconds before moving
    AgentBehavior behavior = AgentBehavior::Cruise;
    double length = 4.5;
    double width = 2.0;
};

struct Fixture {
    InfractionKind kind = InfractionKind::StopSign;
    double route_s = 0.0;  // along the ego route
};

struct RoadSegment {
    Polyline center;
    double half_width = 3.5;
};

struct Scenario {
    int version = 1;
    int id = 0;
    std::uint64_t seed = 0;
    std::string difficulty = "easy";
    std::string layout = "straight";
    Polyline route;
    std::vector<RoadSegment> roads;
    std::vector<OrientedBox> static_obstacles;
    std::vector<AgentSpawn> agents;
    std::vector<Fixture> fixtures;
    double goal_lookahead = 20.0;
    double ego_start_speed = 0.0;
};

struct EgoState {
    Vec2 pos;
    double heading = 0.0;
    double speed = 0.0;  // >= 0
    double last_accel = 0.0;
    double last_steer = 0.0;
};

struct AgentSnap {
    Vec2 pos;
    Vec2 vel;
    double heading = 0.0;
    double length = 4.5;
    double width = 2.0;
};

struct TraceStep {
    double time = 0.0;
    EgoState ego;
    std::vector<AgentSnap> agents;
    bool drivable = true;
    double progress = 0.0;  // arc length along the route, non-decreasing
};

struct InfractionEvent {
    int step = 0;
    InfractionKind kind = InfractionKind::VehicleCollision;
    std::optional<CollisionTag> tag;  // present for collision events
};

struct EpisodeTrace {
    int scenario_id = 0;
    std::uint64_t seed = 0;
    double dt = 0.0;
    double route_length = 0.0;
    std::vector<TraceStep> steps;
    std::vector<InfractionEvent> infractions;
    bool completed = false;
    bool failed = false;
    std::string fail_reason;

    double progress() const;
    double route_completion_percent() const;
};

// Closed-loop world: kinematic-bicycle ego tracked onto the current plan by a
// pure-pursuit + proportional speed controller; agents follow behavior scripts.
class World {
public:
    World(Scenario scenario, std::uint64_t seed);

    const Scenario& scenario() const { return scenario_; }
    const EgoState& ego() const { return ego_; }
    double time() const { return time_; }
    double progress() const { return progress_; }
    int step_count() const { return step_count_; }
    bool route_complete() const;

    struct AgentState {
        AgentSpawn spec;
        double s = 0.0;
        double speed = 0.0;
        Vec2 pos;
        double heading = 0.0;
        bool active = true;  // cleared when the agent exits at its route end
    };
    const std::vector<AgentState>& agents() const { return agents_; }

    OccupancyObservation observe() const;

    // Advances the world by dt while tracking the plan; returns the events
    // raised during this step (collisions, stop-sign violations).
    std::vector<InfractionEvent> step(const Trajectory& plan, double dt);

    bool ego_on_drivable() const;
    bool collided() const { return collided_; }
    bool fixture_satisfied(size_t i) const { return fixture_satisfied_[i]; }

    TraceStep snapshot() const;

private:
    void advance_agents(double dt);
    std::vector<InfractionEvent> detect_events();

    Scenario scenario_;
    Rng rng_;
    EgoState ego_;
    std::vector<AgentState> agents_;
    std::vector<bool> fixture_satisfied_;
    double time_ = 0.0;
    double progress_ = 0.0;
    int step_count_ = 0;
    bool collided_ = false;
};

struct ExpertOutput {
    Trajectory trajectory;     // ego frame
    double target_speed = 0.0; // planned speed at the first step
    std::vector<OrientedBox> agent_boxes;  // ego frame, nearest first
};

ExpertOutput expert_policy(const World& world, int horizon = 10, double wp_dt = 0.2);

std::vector<Scenario> generate_scenarios(std::uint64_t seed, int count,
                                         const std::string& difficulty);

using Policy = std::function<Trajectory(const OccupancyObservation&)>;

EpisodeTrace run_episode(const Policy& policy, const Scenario& scenario, int max_steps,
                         double dt = 0.2);

// Expert-driven episode with direct world access; frame_cb (when set) sees the
// world and the expert output at every step, for dataset construction.
using ExpertFrameCallback = std::function<void(const World&, const ExpertOutput&)>;
EpisodeTrace run_expert_episode(const Scenario& scenario, int max_steps, double dt = 0.2,
                                const ExpertFrameCallback& frame_cb = nullptr);

// JSON round-trip (versioned structured text).
std::string scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const std::string& text);
std::string trace_to_json(const EpisodeTrace& t);
EpisodeTrace trace_from_json(const std::string& text);

std::string to_string(InfractionKind k);
InfractionKind infraction_from_string(const std::string& s);

}  // namespace diffplan
