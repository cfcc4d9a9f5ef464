#pragma once

#include <cmath>
#include <vector>

namespace diffplan {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double cross(const Vec2& o) const { return x * o.y - y * o.x; }
    double norm() const { return std::hypot(x, y); }
    Vec2 rotated(double a) const {
        const double c = std::cos(a), s = std::sin(a);
        return {c * x - s * y, s * x + c * y};
    }
};

inline double wrap_angle(double a) {
    while (a > M_PI) a -= 2.0 * M_PI;
    while (a <= -M_PI) a += 2.0 * M_PI;
    return a;
}

// Oriented rectangle (center, heading, length along heading, width).
struct OrientedBox {
    Vec2 center;
    double heading = 0.0;
    double length = 4.5;
    double width = 2.0;

    double radius() const { return 0.5 * std::hypot(length, width); }
};

// Separating-axis overlap test for two oriented rectangles.
bool boxes_overlap(const OrientedBox& a, const OrientedBox& b);

struct Polyline {
    Polyline() = default;
    explicit Polyline(std::vector<Vec2> pts) : points(std::move(pts)) {}
    std::vector<Vec2> points;

    double length() const;
    Vec2 point_at(double s) const;      // clamped arc-length lookup
    double heading_at(double s) const;  // tangent heading
};

// Distance from p to the chain; when s_out is non-null it receives the
// arc-length of the closest point.
double point_polyline_distance(const Vec2& p, const Polyline& line, double* s_out);

}  // namespace diffplan
