#include "diffplan/dataset.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "diffplan/errors.hpp"

namespace diffplan {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'D', 'S'};

template <typename T>
void put(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (!in) throw IoError("dataset file truncated");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kMagic, 4);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.version));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.horizon));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.frames.size()));
    if (!ds.frames.empty()) {
        const auto& o = ds.frames.front().obs;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(o.h));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(o.w));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(o.channels));
    } else {
        put<std::uint32_t>(out, 0);
        put<std::uint32_t>(out, 0);
        put<std::uint32_t>(out, 0);
    }
    for (const auto& f : ds.frames) {
        if (static_cast<int>(f.waypoints.size()) != ds.horizon)
            throw ValidationError("frame horizon mismatch");
        for (double g : f.obs.grid) put<float>(out, static_cast<float>(g));
        for (double e : f.obs.ego) put<double>(out, e);
        put<double>(out, f.obs.goal.x);
        put<double>(out, f.obs.goal.y);
        put<std::int32_t>(out, f.obs.command);
        for (const auto& wp : f.waypoints) {
            put<double>(out, wp.x);
            put<double>(out, wp.y);
        }
        put<double>(out, f.target_speed);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(f.agent_boxes.size()));
        for (const auto& b : f.agent_boxes)
            for (double v : b) put<double>(out, v);
    }
    if (!out) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not a dataset file: " + path);
    Dataset ds;
    ds.version = static_cast<int>(get<std::uint32_t>(in));
    if (ds.version != 1) throw IoError("unsupported dataset version");
    ds.horizon = static_cast<int>(get<std::uint32_t>(in));
    const auto count = get<std::uint32_t>(in);
    const int h = static_cast<int>(get<std::uint32_t>(in));
    const int w = static_cast<int>(get<std::uint32_t>(in));
    const int channels = static_cast<int>(get<std::uint32_t>(in));
    for (std::uint32_t i = 0; i < count; ++i) {
        Frame f;
        f.obs.h = h;
        f.obs.w = w;
        f.obs.channels = channels;
        f.obs.grid.resize(static_cast<size_t>(h) * w * channels);
        for (auto& g : f.obs.grid) g = static_cast<double>(get<float>(in));
        f.obs.ego.resize(3);
        for (auto& e : f.obs.ego) e = get<double>(in);
        f.obs.goal.x = get<double>(in);
        f.obs.goal.y = get<double>(in);
        f.obs.command = static_cast<int>(get<std::int32_t>(in));
        f.waypoints.resize(ds.horizon);
        for (auto& wp : f.waypoints) {
            wp.x = get<double>(in);
            wp.y = get<double>(in);
        }
        f.target_speed = get<double>(in);
        const auto n = get<std::uint32_t>(in);
        f.agent_boxes.resize(n);
        for (auto& b : f.agent_boxes)
            for (auto& v : b) v = get<double>(in);
        ds.frames.push_back(std::move(f));
    }
    return ds;
}

Dataset build_expert_dataset(const std::vector<Scenario>& scenarios, int horizon,
                             int max_steps, double dt) {
    Dataset ds;
    ds.horizon = horizon;
    for (const auto& sc : scenarios) {
        run_expert_episode(sc, max_steps, dt, [&](const World& w, const ExpertOutput& out) {
            Frame f;
            f.obs = w.observe();
            f.waypoints = out.trajectory.points;
            f.waypoints.resize(horizon, out.trajectory.points.empty()
                                            ? Vec2{}
                                            : out.trajectory.points.back());
            f.target_speed = out.target_speed;
            for (const auto& box : out.agent_boxes)
                f.agent_boxes.push_back({box.center.x, box.center.y, box.heading,
                                         box.length, box.width});
            ds.frames.push_back(std::move(f));
        });
    }
    return ds;
}

}  // namespace diffplan
