#pragma once

#include <functional>
#include <string>
#include <vector>

#include "diffplan/tensor.hpp"

namespace diffplan {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Max relative error between tape gradients and central finite differences,
// taken over every entry of every leaf. `build` must rebuild the scalar graph
// from the leaves' current values on each call.
double max_grad_error(const std::function<Tensor()>& build, std::vector<Tensor> leaves,
                      double h = 1e-5);

std::vector<CheckResult> verify_gradcheck();
std::vector<CheckResult> verify_oracle();
std::vector<CheckResult> verify_metrics();

bool all_passed(const std::vector<CheckResult>& results);
std::string format_results(const std::vector<CheckResult>& results);

}  // namespace diffplan
