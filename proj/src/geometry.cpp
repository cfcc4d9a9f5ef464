#include "diffplan/geometry.hpp"

#include <algorithm>

namespace diffplan {

namespace {

void box_corners(const OrientedBox& b, Vec2 out[4]) {
    const Vec2 ax = Vec2{1.0, 0.0}.rotated(b.heading) * (0.5 * b.length);
    const Vec2 ay = Vec2{0.0, 1.0}.rotated(b.heading) * (0.5 * b.width);
    out[0] = b.center + ax + ay;
    out[1] = b.center + ax - ay;
    out[2] = b.center - ax - ay;
    out[3] = b.center - ax + ay;
}

bool separated_on_axis(const Vec2 a[4], const Vec2 b[4], const Vec2& axis) {
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (int i = 0; i < 4; ++i) {
        amin = std::min(amin, a[i].dot(axis));
        amax = std::max(amax, a[i].dot(axis));
        bmin = std::min(bmin, b[i].dot(axis));
        bmax = std::max(bmax, b[i].dot(axis));
    }
    return amax < bmin || bmax < amin;
}

}  // namespace

bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
    if ((a.center - b.center).norm() > a.radius() + b.radius()) return false;
    Vec2 ca[4], cb[4];
    box_corners(a, ca);
    box_corners(b, cb);
    const Vec2 axes[4] = {Vec2{1.0, 0.0}.rotated(a.heading), Vec2{0.0, 1.0}.rotated(a.heading),
                          Vec2{1.0, 0.0}.rotated(b.heading), Vec2{0.0, 1.0}.rotated(b.heading)};
    for (const auto& ax : axes)
        if (separated_on_axis(ca, cb, ax)) return false;
    return true;
}

double Polyline::length() const {
    double len = 0.0;
    for (size_t i = 1; i < points.size(); ++i) len += (points[i] - points[i - 1]).norm();
    return len;
}

Vec2 Polyline::point_at(double s) const {
    if (points.empty()) return {};
    if (s <= 0.0) return points.front();
    for (size_t i = 1; i < points.size(); ++i) {
        const double seg = (points[i] - points[i - 1]).norm();
        if (s <= seg && seg > 0.0) {
            const double f = s / seg;
            return points[i - 1] + (points[i] - points[i - 1]) * f;
        }
        s -= seg;
    }
    return points.back();
}

double Polyline::heading_at(double s) const {
    if (points.size() < 2) return 0.0;
    double rem = std::max(s, 0.0);
    for (size_t i = 1; i < points.size(); ++i) {
        const double seg = (points[i] - points[i - 1]).norm();
        if (rem <= seg || i + 1 == points.size()) {
            const Vec2 d = points[i] - points[i - 1];
            return std::atan2(d.y, d.x);
        }
        rem -= seg;
    }
    const Vec2 d = points.back() - points[points.size() - 2];
    return std::atan2(d.y, d.x);
}

double point_polyline_distance(const Vec2& p, const Polyline& line, double* s_out) {
    double best = 1e300, best_s = 0.0, acc = 0.0;
    if (line.points.size() == 1) {
        best = (p - line.points[0]).norm();
    }
    for (size_t i = 1; i < line.points.size(); ++i) {
        const Vec2 a = line.points[i - 1], b = line.points[i];
        const Vec2 ab = b - a;
        const double seg = ab.norm();
        double t = 0.0;
        if (seg > 0.0) t = std::clamp((p - a).dot(ab) / (seg * seg), 0.0, 1.0);
        const Vec2 proj = a + ab * t;
        const double d = (p - proj).norm();
        if (d < best) {
            best = d;
            best_s = acc + t * seg;
        }
        acc += seg;
    }
    if (s_out) *s_out = best_s;
    return best;
}

}  // namespace diffplan
