#pragma once

#include <vector>

#include "diffplan/geometry.hpp"

namespace diffplan {

// Channel layout of the ego-centered occupancy grid.
enum ObsChannel {
    kChDrivable = 0,
    kChRoute = 1,
    kChStatic = 2,
    kChDynamic = 3,
    kChVelX = 4,
    kChVelY = 5,
    kObsChannels = 6
};

// Ego-centered, heading-aligned multi-channel grid plus scalar context.
// +x is forward; cell (row, col) covers row-major [c][row][col].
struct OccupancyObservation {
    int h = 64;
    int w = 64;
    int channels = kObsChannels;
    double cell_size = 0.5;  // meters per cell
    std::vector<double> grid;  // channels*h*w

    std::vector<double> ego;  // speed (m/s), last accel, last steer
    Vec2 goal;                // ego frame, meters
    int command = 0;

    double& at(int c, int row, int col) { return grid[(c * h + row) * w + col]; }
    double at(int c, int row, int col) const { return grid[(c * h + row) * w + col]; }
};

}  // namespace diffplan
