#include "v2vlc/gradcheck.hpp"

#include <cmath>

namespace v2vlc::ag {

GradcheckReport gradcheck(const std::function<Var(const std::vector<Var>&)>& build,
                          const std::vector<Tensor>& inputs, double eps, double tol) {
    if (eps < 1e-6 || eps > 1e-2)
        throw std::invalid_argument("gradcheck eps must lie in [1e-6, 1e-2]");
    GradcheckReport rep;

    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(param(t));
    Var out = build(leaves);
    if (!std::isfinite(out->value.data[0])) {
        rep.message = "non-finite forward value";
        return rep;
    }
    backward(out);

    auto eval = [&](const std::vector<Tensor>& ts) {
        std::vector<Var> vs;
        for (const auto& t : ts) vs.push_back(constant(t));
        return build(vs)->value.data[0];
    };

    std::vector<Tensor> work = inputs;
    for (std::size_t li = 0; li < work.size(); ++li) {
        for (std::size_t i = 0; i < work[li].size(); ++i) {
            const double orig = work[li].data[i];
            work[li].data[i] = orig + eps;
            const double fp = eval(work);
            work[li].data[i] = orig - eps;
            const double fm = eval(work);
            work[li].data[i] = orig;
            const double fd = (fp - fm) / (2.0 * eps);
            const double an = leaves[li]->grad.data[i];
            const double abs_err = std::abs(fd - an);
            // absolute floor for near-zero gradients
            const double rel =
                abs_err <= 1e-6 ? 0.0 : abs_err / std::max(std::abs(fd), std::abs(an));
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_input = static_cast<int>(li);
                rep.worst_index = static_cast<int>(i);
            }
        }
    }
    rep.pass = rep.max_rel_error <= tol;
    return rep;
}

}  // namespace v2vlc::ag
