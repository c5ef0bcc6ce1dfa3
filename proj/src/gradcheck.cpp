#include "unihand/gradcheck.hpp"

#include <cmath>

namespace unihand {

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<Tensor>& params, double eps, double tol) {
    for (const auto& p : params) p.zero_grad();
    Tensor base = loss_fn();
    if (!std::isfinite(base.item())) throw EvalError("grad_check: base loss is non-finite");
    backward(base);

    // Snapshot analytic grads before the finite-difference sweep.
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p.grad());

    GradCheckReport rep;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        GradCheckEntry entry;
        entry.param = p.name().empty() ? ("param" + std::to_string(pi)) : p.name();
        auto& vals = const_cast<std::vector<double>&>(p.values());
        for (size_t i = 0; i < vals.size(); ++i) {
            double orig = vals[i];
            vals[i] = orig + eps;
            double lp = loss_fn().item();
            vals[i] = orig - eps;
            double lm = loss_fn().item();
            vals[i] = orig;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw EvalError("grad_check: non-finite loss while perturbing " + entry.param);
            double numeric = (lp - lm) / (2.0 * eps);
            double a = analytic[pi][i];
            double rel = std::fabs(a - numeric) /
                         std::max({1.0, std::fabs(a), std::fabs(numeric)});
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.analytic_at_worst = a;
                entry.numeric_at_worst = numeric;
            }
        }
        if (entry.max_rel_err > rep.max_rel_err) {
            rep.max_rel_err = entry.max_rel_err;
            rep.worst_param = entry.param;
        }
        rep.per_param.push_back(std::move(entry));
    }
    rep.pass = rep.max_rel_err <= tol;
    for (const auto& p : params) p.zero_grad();
    return rep;
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, const ParamStore& store,
                           double eps, double tol) {
    std::vector<Tensor> params;
    for (const auto& [name, t] : store.all())
        if (t.needs_grad()) params.push_back(t);
    return grad_check(loss_fn, params, eps, tol);
}

} // namespace unihand
