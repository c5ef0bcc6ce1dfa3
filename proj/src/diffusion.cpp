#include "unihand/diffusion.hpp"

#include <cmath>

namespace unihand {

double DiffusionSchedule::abar(int s) const {
    if (s < 0 || s > S) throw ValidationError("schedule step " + std::to_string(s) +
                                              " outside [0, " + std::to_string(S) + "]");
    return s == 0 ? 1.0 : alpha_bar[size_t(s - 1)];
}

DiffusionSchedule make_schedule(int S, const std::string& kind) {
    if (S < 2) throw ConfigError("schedule needs S >= 2, got " + std::to_string(S));
    DiffusionSchedule sc;
    sc.S = S;
    sc.kind = kind;
    sc.beta.resize(size_t(S));
    sc.alpha_bar.resize(size_t(S));
    if (kind == "sqrt") {
        for (int s = 1; s <= S; ++s) {
            double ab = 1.0 - std::sqrt(double(s) / S + 0.0001);
            ab = std::min(std::max(ab, 1e-4), 1.0 - 1e-4);
            sc.alpha_bar[size_t(s - 1)] = ab;
        }
        for (int s = 1; s <= S; ++s)
            sc.beta[size_t(s - 1)] = 1.0 - sc.alpha_bar[size_t(s - 1)] / sc.abar(s - 1);
    } else if (kind == "linear") {
        double scale = 1000.0 / S;
        double prod = 1.0;
        for (int s = 1; s <= S; ++s) {
            double frac = S == 1 ? 0.0 : double(s - 1) / (S - 1);
            double b = (1e-4 + frac * (0.02 - 1e-4)) * scale;
            sc.beta[size_t(s - 1)] = b;
            prod *= 1.0 - b;
            sc.alpha_bar[size_t(s - 1)] = prod;
        }
    } else {
        throw ConfigError("unknown schedule kind '" + kind + "'");
    }
    for (int s = 1; s <= S; ++s) {
        double b = sc.beta[size_t(s - 1)];
        if (!(b > 0.0 && b < 1.0))
            throw ConfigError("schedule beta out of (0,1) at step " + std::to_string(s));
        if (!(sc.alpha_bar[size_t(s - 1)] < sc.abar(s - 1)))
            throw ConfigError("schedule alpha_bar not strictly decreasing at step " +
                              std::to_string(s));
    }
    return sc;
}

std::vector<int> respaced_steps(int S, int steps) {
    if (steps < 1 || steps > S)
        throw ConfigError("inference steps " + std::to_string(steps) + " outside [1, " +
                          std::to_string(S) + "]");
    std::vector<int> out(static_cast<size_t>(steps));
    for (int i = 1; i <= steps; ++i)
        out[size_t(i - 1)] = int(std::llround(double(i) * S / steps));
    return out;
}

Tensor q_sample(const DiffusionSchedule& sched, const Tensor& z0, int n_past, int s,
                const Tensor& noise) {
    if (z0.ndim() != 2) throw DimensionError("q_sample: latents must be 2-D");
    int N = z0.rows(), f = z0.cols();
    if (n_past < 0 || n_past > N)
        throw ValidationError("q_sample: n_past " + std::to_string(n_past) + " outside [0, " +
                              std::to_string(N) + "]");
    if (s < 0 || s > sched.S)
        throw ValidationError("q_sample: step " + std::to_string(s) + " outside [0, " +
                              std::to_string(sched.S) + "]");
    if (s == 0) return z0;
    int nf = N - n_past;
    if (noise.ndim() != 2 || noise.rows() != nf || noise.cols() != f)
        throw DimensionError("q_sample: noise shape " + shape_str(noise.shape()) +
                             ", expected [" + std::to_string(nf) + "," + std::to_string(f) + "]");
    double ab = sched.abar(s);
    Tensor future = add(scale(slice_rows(z0, n_past, N), std::sqrt(ab)),
                        scale(noise, std::sqrt(1.0 - ab)));
    if (n_past == 0) return future;
    return concat_rows({slice_rows(z0, 0, n_past), future});
}

DiffusionState denoise_step(const DiffusionSchedule& sched, const DiffusionState& state,
                            int s_hi, int s_lo, const Predictor& predictor, Rng& rng) {
    if (s_hi < 1 || s_hi > sched.S || s_lo < 0 || s_lo >= s_hi)
        throw ValidationError("denoise_step: bad step pair (" + std::to_string(s_hi) + ", " +
                              std::to_string(s_lo) + ")");
    const Tensor& z = state.z;
    int N = z.rows(), f = z.cols(), np = state.n_past;
    if (state.anchor.rows() != np || state.anchor.cols() != f)
        throw DimensionError("denoise_step: anchor shape " + shape_str(state.anchor.shape()));

    Tensor z0_hat = predictor(z, s_hi);
    if (z0_hat.shape() != z.shape())
        throw DimensionError("denoise_step: predictor returned " + shape_str(z0_hat.shape()) +
                             " for input " + shape_str(z.shape()));
    for (double v : z0_hat.values())
        if (!std::isfinite(v))
            throw EvalError("denoise_step: non-finite prediction at step " + std::to_string(s_hi));

    Tensor next;
    if (s_lo == 0) {
        // terminal step: posterior collapses onto the prediction, no noise
        next = z0_hat;
    } else {
        double ab_hi = sched.abar(s_hi), ab_lo = sched.abar(s_lo);
        double beta_eff = 1.0 - ab_hi / ab_lo;
        double c0 = std::sqrt(ab_lo) * beta_eff / (1.0 - ab_hi);
        double cz = std::sqrt(1.0 - beta_eff) * (1.0 - ab_lo) / (1.0 - ab_hi);
        double var = (1.0 - ab_lo) / (1.0 - ab_hi) * beta_eff;
        Tensor mean = add(scale(z0_hat, c0), scale(z, cz));
        std::vector<double> eps(size_t(N) * size_t(f));
        rng.fill_normal(eps);
        next = add(mean, scale(Tensor::from_data({N, f}, std::move(eps)), std::sqrt(var)));
    }

    DiffusionState out;
    out.n_past = np;
    out.anchor = state.anchor;
    Tensor future = slice_rows(next, np, N);
    out.z = detach(np == 0 ? future : concat_rows({state.anchor, future}));
    return out;
}

Tensor reverse_chain(const DiffusionSchedule& sched, const Tensor& anchor, int n_future,
                     const std::vector<int>& steps, const Predictor& predictor, Rng& rng) {
    if (anchor.ndim() != 2) throw DimensionError("reverse_chain: anchor must be 2-D");
    if (n_future < 1) throw ValidationError("reverse_chain: n_future must be >= 1");
    if (steps.empty() || steps.back() != sched.S)
        throw ValidationError("reverse_chain: step subsequence must end at S");
    for (size_t i = 1; i < steps.size(); ++i)
        if (steps[i] <= steps[i - 1])
            throw ValidationError("reverse_chain: steps must be strictly increasing");

    int np = anchor.rows(), f = anchor.cols();
    std::vector<double> eps(size_t(n_future) * size_t(f));
    rng.fill_normal(eps);
    Tensor future = Tensor::from_data({n_future, f}, std::move(eps));

    DiffusionState st;
    st.n_past = np;
    st.anchor = anchor;
    st.z = detach(np == 0 ? future : concat_rows({anchor, future}));
    for (size_t i = steps.size(); i-- > 0;) {
        int s_hi = steps[i];
        int s_lo = i == 0 ? 0 : steps[i - 1];
        st = denoise_step(sched, st, s_hi, s_lo, predictor, rng);
    }
    return st.z;
}

} // namespace unihand
