#pragma once

#include <functional>
#include <string>
#include <vector>

#include "v2vlc/autograd.hpp"

namespace v2vlc::ag {

struct GradcheckReport {
    bool pass = false;
    double max_rel_error = 0.0;
    int worst_input = -1;
    int worst_index = -1;
    std::string message;
};

// Compares analytic gradients of a scalar-valued graph against central finite
// differences. `build` must construct the scalar output from the given leaf
// variables. Pass iff max relative error <= tol, with an absolute floor of
// 1e-6 for near-zero gradients.
GradcheckReport gradcheck(const std::function<Var(const std::vector<Var>&)>& build,
                          const std::vector<Tensor>& inputs, double eps = 1e-5,
                          double tol = 1e-3);

}  // namespace v2vlc::ag
