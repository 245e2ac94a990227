#pragma once

#include <string>
#include <vector>

namespace amr {

struct GradCheckResult {
    std::string name;
    std::string scope;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    int seeds = 0;
    bool pass = false;
};

// scope: all | ops | fusion-gate | paff | scape | freqformer | model.
// Central finite differences at 64-bit, step 1e-5; relative error
// |a - n| / max(|a|, |n|, 1e-4).
std::vector<GradCheckResult> run_gradchecks(const std::string& scope);

}  // namespace amr
