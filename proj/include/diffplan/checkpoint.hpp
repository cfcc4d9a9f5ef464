#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace diffplan {

// Versioned binary snapshot of a training run: parameters, optimizer moments,
// schedule, config, step counter. Round trips are bit-exact.
struct Checkpoint {
    int version = 1;
    int stage = 0;
    std::int64_t step = 0;
    std::string model_config_json;
    std::string schedule_json;
    std::map<std::string, std::vector<int>> shapes;
    std::map<std::string, std::vector<double>> params;
    std::map<std::string, std::vector<double>> adam_m;
    std::map<std::string, std::vector<double>> adam_v;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace diffplan
