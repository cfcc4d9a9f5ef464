#include "diffplan/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "diffplan/errors.hpp"

namespace diffplan {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (!in) throw IoError("checkpoint file truncated");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
    const auto n = get<std::uint64_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw IoError("checkpoint file truncated");
    return s;
}

void put_blob_map(std::ostream& out, const std::map<std::string, std::vector<double>>& m) {
    put<std::uint64_t>(out, m.size());
    for (const auto& [name, blob] : m) {
        put_string(out, name);
        put<std::uint64_t>(out, blob.size());
        for (double v : blob) put<double>(out, v);
    }
}

std::map<std::string, std::vector<double>> get_blob_map(std::istream& in) {
    std::map<std::string, std::vector<double>> m;
    const auto count = get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = get_string(in);
        const auto n = get<std::uint64_t>(in);
        std::vector<double> blob(n);
        for (auto& v : blob) v = get<double>(in);
        m.emplace(name, std::move(blob));
    }
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kMagic, 4);
    put<std::int32_t>(out, ck.version);
    put<std::int32_t>(out, ck.stage);
    put<std::int64_t>(out, ck.step);
    put_string(out, ck.model_config_json);
    put_string(out, ck.schedule_json);
    put<std::uint64_t>(out, ck.shapes.size());
    for (const auto& [name, shape] : ck.shapes) {
        put_string(out, name);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
        for (int d : shape) put<std::int32_t>(out, d);
    }
    put_blob_map(out, ck.params);
    put_blob_map(out, ck.adam_m);
    put_blob_map(out, ck.adam_v);
    if (!out) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not a checkpoint file: " + path);
    Checkpoint ck;
    ck.version = get<std::int32_t>(in);
    if (ck.version != 1) throw IoError("unsupported checkpoint version");
    ck.stage = get<std::int32_t>(in);
    ck.step = get<std::int64_t>(in);
    ck.model_config_json = get_string(in);
    ck.schedule_json = get_string(in);
    const auto n_shapes = get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n_shapes; ++i) {
        const std::string name = get_string(in);
        const auto rank = get<std::uint32_t>(in);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = get<std::int32_t>(in);
        ck.shapes.emplace(name, std::move(shape));
    }
    ck.params = get_blob_map(in);
    ck.adam_m = get_blob_map(in);
    ck.adam_v = get_blob_map(in);
    return ck;
}

}  // namespace diffplan
