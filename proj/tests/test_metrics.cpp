#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "diffplan/errors.hpp"
#include "diffplan/metrics.hpp"
#include "diffplan/rng.hpp"
#include "diffplan/sim.hpp"

using namespace diffplan;

namespace {

EpisodeTrace straight_trace(int steps, double speed, double dt = 0.2) {
    EpisodeTrace tr;
    tr.dt = dt;
    tr.route_length = 100.0;
    for (int i = 0; i < steps; ++i) {
        TraceStep st;
        st.time = i * dt;
        st.ego.pos = {speed * i * dt, 0.0};
        st.ego.speed = speed;
        st.drivable = true;
        st.progress = speed * i * dt;
        tr.steps.push_back(st);
    }
    return tr;
}

}  // namespace

TEST_CASE("composite score reproduces the published human-level row") {
    SubScores sub;
    sub.nc = 1.0;
    sub.dac = 1.0;
    sub.ep = 0.875;
    sub.ttc = 1.0;
    sub.comfort = 0.999;
    CHECK(pdms(sub) == doctest::Approx(0.94775).epsilon(5e-4));
}

TEST_CASE("collision penalty annihilates the composite score") {
    SubScores sub;
    sub.nc = 0.0;
    CHECK(pdms(sub) == 0.0);
    SubScores perfect;
    CHECK(pdms(perfect) == 1.0);
}

TEST_CASE("composite score validates sub-score ranges") {
    SubScores sub;
    sub.nc = 0.7;
    CHECK_THROWS_AS(pdms(sub), ValidationError);
    SubScores sub2;
    sub2.ep = 1.5;
    CHECK_THROWS_AS(pdms(sub2), ValidationError);
}

TEST_CASE("composite score is monotone in every sub-score") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        SubScores sub;
        sub.nc = 1.0;
        sub.dac = 1.0;
        sub.ttc = rng.randint(0, 1);
        sub.comfort = rng.uniform(0.0, 1.0);
        sub.ep = rng.uniform(0.0, 1.0);
        double base = pdms(sub);
        SubScores up = sub;
        up.comfort = std::min(1.0, up.comfort + 0.1);
        CHECK(pdms(up) >= base);
        up = sub;
        up.ep = std::min(1.0, up.ep + 0.1);
        CHECK(pdms(up) >= base);
        CHECK(base >= 0.0);
        CHECK(base <= 1.0);
    }
}

TEST_CASE("driving score formula and published row") {
    CHECK(driving_score(96.0, 0.86) == doctest::Approx(82.56).epsilon(1e-12));
    CHECK(route_completion(50.0, 100.0) == 50.0);
    CHECK(route_completion(120.0, 100.0) == 100.0);
    CHECK_THROWS_AS(route_completion(10.0, 0.0), ValidationError);
}

TEST_CASE("infraction penalties multiply per occurrence") {
    InfractionLedger one_ped;
    one_ped.add(InfractionKind::PedestrianCollision);
    CHECK(infraction_score(one_ped) == 0.50);

    InfractionLedger two_veh;
    two_veh.add(InfractionKind::VehicleCollision, 2);
    CHECK(infraction_score(two_veh) == doctest::Approx(0.36).epsilon(1e-12));

    CHECK(infraction_penalty(InfractionKind::StaticCollision) == 0.65);
    CHECK(infraction_penalty(InfractionKind::RedLight) == 0.70);
    CHECK(infraction_penalty(InfractionKind::StopSign) == 0.80);
}

TEST_CASE("infraction score is order-invariant") {
    InfractionLedger a, b;
    a.add(InfractionKind::RedLight);
    a.add(InfractionKind::VehicleCollision);
    b.add(InfractionKind::VehicleCollision);
    b.add(InfractionKind::RedLight);
    CHECK(infraction_score(a) == infraction_score(b));
}

TEST_CASE("collision tiers") {
    EpisodeTrace clean = straight_trace(10, 5.0);
    CHECK(score_nc(clean) == 1.0);

    EpisodeTrace statics = straight_trace(10, 5.0);
    statics.infractions.push_back({3, InfractionKind::StaticCollision, CollisionTag::StaticObject});
    CHECK(score_nc(statics) == 0.5);

    EpisodeTrace at_fault = straight_trace(10, 5.0);
    at_fault.infractions.push_back(
        {3, InfractionKind::VehicleCollision, CollisionTag::AtFaultDynamic});
    CHECK(score_nc(at_fault) == 0.0);

    EpisodeTrace rear_ended = straight_trace(10, 5.0);
    rear_ended.infractions.push_back(
        {3, InfractionKind::VehicleCollision, CollisionTag::NotAtFault});
    CHECK(score_nc(rear_ended) == 1.0);
}

TEST_CASE("drivable-area compliance is binary over steps") {
    EpisodeTrace tr = straight_trace(10, 5.0);
    CHECK(score_dac(tr) == 1.0);
    tr.steps[4].drivable = false;
    CHECK(score_dac(tr) == 0.0);
}

TEST_CASE("time-to-collision clearance") {
    EpisodeTrace empty_scene = straight_trace(20, 5.0);
    CHECK(score_ttc(empty_scene) == 1.0);

    // head-on: agent 10 m ahead closing at 10 m/s => time to collision 1 s
    EpisodeTrace head_on = straight_trace(20, 5.0);
    for (auto& st : head_on.steps) {
        AgentSnap a;
        a.pos = {st.ego.pos.x + 10.0, 0.0};
        a.vel = {-5.0, 0.0};
        a.heading = M_PI;
        st.agents.push_back(a);
    }
    CHECK(score_ttc(head_on) == 0.0);

    // parallel lane, same speed: no closing velocity
    EpisodeTrace parallel = straight_trace(20, 5.0);
    for (auto& st : parallel.steps) {
        AgentSnap a;
        a.pos = {st.ego.pos.x, 6.0};
        a.vel = {5.0, 0.0};
        st.agents.push_back(a);
    }
    CHECK(score_ttc(parallel) == 1.0);
}

TEST_CASE("comfort scoring") {
    CHECK(score_comfort(straight_trace(30, 5.0)) == 1.0);

    EpisodeTrace two_samples = straight_trace(2, 5.0);
    CHECK_THROWS_AS(score_comfort(two_samples), ValidationError);

    // sharp brake: accel well beyond 3 m/s^2 drops the score below 1
    EpisodeTrace brake = straight_trace(30, 8.0);
    for (size_t i = 15; i < brake.steps.size(); ++i) {
        brake.steps[i].ego.speed = 0.0;
        brake.steps[i].ego.pos = brake.steps[14].ego.pos;
    }
    CHECK(score_comfort(brake) < 1.0);
    CHECK(score_comfort(brake) >= 0.0);
}

TEST_CASE("ego progress ratio with the short-reference rule") {
    CHECK(score_ep(30.0, 30.0) == 1.0);
    CHECK(score_ep(15.0, 30.0) == 0.5);
    CHECK(score_ep(45.0, 30.0) == 1.0);
    CHECK(score_ep(-1.0, 4.9) == 1.0);
    CHECK(score_ep(-1.0, 30.0) == 0.0);
}

TEST_CASE("episode scoring composes DS from RC and IS") {
    EpisodeTrace tr = straight_trace(50, 5.0);
    tr.infractions.push_back({9, InfractionKind::RedLight, std::nullopt});
    EpisodeScore s = score_episode(tr, 49.0 * 0.2 * 5.0);
    CHECK(s.ds == doctest::Approx(s.rc * s.is).epsilon(1e-12));
    CHECK(s.is == 0.70);
    CHECK(s.sub.ep == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("score report rows keep the DS identity") {
    EpisodeTrace tr = straight_trace(40, 4.0);
    EpisodeScore s = score_episode(tr, 100.0);
    std::string rep = score_report({s});
    CHECK(rep.find("\"episodes\"") != std::string::npos);
    CHECK(rep.find("\"aggregate\"") != std::string::npos);
}
