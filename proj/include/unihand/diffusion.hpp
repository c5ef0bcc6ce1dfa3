#pragma once

#include <functional>
#include <string>
#include <vector>

#include "unihand/rng.hpp"
#include "unihand/tensor.hpp"

namespace unihand {

// Noise schedule over steps s = 1..S. beta[s-1] and alpha_bar[s-1] store the
// per-step noise level and the running product alpha_bar_s = prod(1 - beta_i).
//
// kind "sqrt": alpha_bar_s = 1 - sqrt(s/S + 0.0001), clipped to
// (1e-4, 1 - 1e-4), beta derived. Front-loaded: beta is not monotone (large
// first step, dip, then growth), so only beta in (0,1) and strictly
// decreasing alpha_bar are enforced.
// kind "linear": beta ramps 1e-4..0.02 scaled by 1000/S, alpha_bar derived.
struct DiffusionSchedule {
    int S = 0;
    std::string kind;
    std::vector<double> beta;
    std::vector<double> alpha_bar;

    // alpha_bar with the s=0 convention abar(0) = 1 (no noise).
    double abar(int s) const;
};

DiffusionSchedule make_schedule(int S, const std::string& kind = "sqrt");

// Uniform-stride inference subsequence tau_1 < ... < tau_k = S,
// tau_i = round(i * S / steps). steps in [1, S].
std::vector<int> respaced_steps(int S, int steps);

// Partial forward noising. Rows [0, n_past) are the anchor and pass through
// untouched; rows [n_past, N) become sqrt(abar_s) z0 + sqrt(1 - abar_s) noise.
// noise must have exactly the future rows' shape. s = 0 returns z0.
// Differentiable in z0 (the latents are trained end to end).
Tensor q_sample(const DiffusionSchedule& sched, const Tensor& z0, int n_past, int s,
                const Tensor& noise);

// Denoiser hook: maps (z_s, s) to the predicted clean latents (x0 form).
using Predictor = std::function<Tensor(const Tensor& z, int s)>;

// Latents mid-chain plus the clean past rows they are anchored to.
struct DiffusionState {
    Tensor z;      // [n_past + n_future, f]
    Tensor anchor; // [n_past, f]
    int n_past = 0;
};

// One reverse step s_hi -> s_lo (s_lo = 0 terminates the chain). Applies the
// standard posterior for the respaced interval, adds posterior noise unless
// s_lo = 0, then overwrites the past rows with the anchor bitwise. The
// returned state is detached (sampling never backpropagates).
DiffusionState denoise_step(const DiffusionSchedule& sched, const DiffusionState& state,
                            int s_hi, int s_lo, const Predictor& predictor, Rng& rng);

// Full reverse chain: future rows start as pure noise at step steps.back(),
// then denoise_step over the subsequence. Returns the holistic latents
// [n_past + n_future, f] with the anchor in place.
Tensor reverse_chain(const DiffusionSchedule& sched, const Tensor& anchor, int n_future,
                     const std::vector<int>& steps, const Predictor& predictor, Rng& rng);

} // namespace unihand
