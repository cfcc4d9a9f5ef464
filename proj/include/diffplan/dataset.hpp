#pragma once

#include <array>
#include <string>
#include <vector>

#include "diffplan/obs.hpp"
#include "diffplan/sim.hpp"

namespace diffplan {

// One expert-labeled frame: the observation plus the supervision targets.
struct Frame {
    OccupancyObservation obs;
    std::vector<Vec2> waypoints;  // ego frame, meters
    double target_speed = 0.0;
    // Ego-frame agent boxes, nearest first: x, y, heading, length, width.
    std::vector<std::array<double, 5>> agent_boxes;
};

struct Dataset {
    int version = 1;
    int horizon = 10;
    std::vector<Frame> frames;
};

// Versioned little-endian binary: float32 grids, float64 labels.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// Rolls the expert through the scenarios and collects one frame per step.
Dataset build_expert_dataset(const std::vector<Scenario>& scenarios, int horizon,
                             int max_steps = 400, double dt = 0.2);

}  // namespace diffplan
