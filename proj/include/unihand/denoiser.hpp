#pragma once

#include <string>
#include <vector>

#include "unihand/nn.hpp"

namespace unihand {

// ---- selective scan ----

// Core recurrence, one tape node with a hand-rolled backward pass.
//
//   dt_t = softplus(sel_t Wdt + bdt)          [f]
//   B_t  = sel_t WB,  C_t = sel_t WC          [d_state]
//   h_t[c] = exp(dt_t[c] A[c]) * h_{t-1}[c] + dt_t[c] B_t u_t[c],  h_{-1} = 0
//   y_t[c] = C_t . h_t[c] + D[c] u_t[c]
//
// u: [T, f], sel: [T, m], A: [f, d], Wdt: [m, f], bdt: [f], WB/WC: [m, d],
// D: [f]. Causal by construction: y_t depends only on rows <= t.
Tensor selective_scan_core(const Tensor& u, const Tensor& sel, const Tensor& A,
                           const Tensor& Wdt, const Tensor& bdt, const Tensor& WB,
                           const Tensor& WC, const Tensor& D);

// Owns the scan parameters. m is the selection input width: f for the
// vanilla scan (sel = u's normalized input), 2f when the selection is
// conditioned on a second stream.
class SelectiveScan {
public:
    SelectiveScan() = default;
    SelectiveScan(ParamStore& ps, const std::string& prefix, int m, int f, int d_state);
    Tensor forward(const Tensor& u, const Tensor& sel) const;

    int sel_width() const { return m_; }

private:
    Tensor A_, Wdt_, bdt_, WB_, WC_, D_;
    int m_ = 0, f_ = 0, d_ = 0;
};

// layernorm -> vanilla scan (selection = normalized input) -> gated residual.
class GatedScanBlock {
public:
    GatedScanBlock() = default;
    GatedScanBlock(ParamStore& ps, const std::string& prefix, int f, int d_state);
    Tensor forward(const Tensor& x) const;

private:
    LayerNorm ln_;
    SelectiveScan scan_;
    Linear gate_;
};

// Egomotion-aware block: the scan's selection input is [normalized hm | em]
// per timestep, so the egomotion stream steers the state transitions.
class EamBlock {
public:
    EamBlock() = default;
    EamBlock(ParamStore& ps, const std::string& prefix, int f, int d_state);
    // hm, em: [T, f]
    Tensor forward(const Tensor& hm, const Tensor& em) const;

private:
    LayerNorm ln_;
    SelectiveScan scan_;
    Linear gate_;
};

// ---- attention ----

// Scaled dot-product attention with bias-free projections. kv_dim may differ
// from f (cross-attention over external context). Zero kv therefore
// contributes exactly zero, keeping residual blocks bitwise transparent.
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore& ps, const std::string& prefix, int f, int kv_dim, int heads,
                       bool zero_out_proj = false);
    // q_in: [T, f], kv_in: [K, kv_dim] -> [T, f]
    Tensor forward(const Tensor& q_in, const Tensor& kv_in) const;
    // per-head attention distributions, each [T, K]; for invariant tests
    std::vector<Tensor> probs(const Tensor& q_in, const Tensor& kv_in) const;

private:
    Tensor wq_, wk_, wv_, wo_;
    int f_ = 0, kv_dim_ = 0, heads_ = 0;
};

// Pre-norm residual attention block:
//   a = x + mhsa(ln1(x) + time code)
//   b = a + mhca(ln2(a), kv)
//   out = b + ffn(ln3(b))
// The cross-attention context carries no positional code (unordered voxel
// patches / a tiled task vector).
class AttnBlock {
public:
    AttnBlock() = default;
    AttnBlock(ParamStore& ps, const std::string& prefix, int f, int kv_dim, int heads,
              int ffn_mult, bool zero_out_projs = false);
    Tensor forward(const Tensor& x, const Tensor& kv) const;

    const MultiHeadAttention& self_attn() const { return self_; }
    const MultiHeadAttention& cross_attn() const { return cross_; }

private:
    LayerNorm ln1_, ln2_, ln3_;
    MultiHeadAttention self_, cross_;
    Mlp ffn_;
};

// ---- hybrid denoiser ----

enum class BlockTag { EAM, SAT, TAT };

// Parses "eam_eam_sat" style patterns. TAT may only appear once, trailing.
std::vector<BlockTag> parse_pattern(const std::string& pattern);
std::string pattern_name(const std::vector<BlockTag>& tags);

// Hand-motion denoiser: step embedding + hybrid block stack, predicting
// clean latents (x0 parameterization).
class Hmtm {
public:
    Hmtm() = default;
    Hmtm(ParamStore& ps, const std::string& prefix, const std::string& pattern, int f, int x,
         int d_state, int heads, int ffn_mult);

    // hm_noisy/em: [T, f]; voxels: [N_vox, f]; task: [x] or undefined;
    // s: diffusion step.
    Tensor forward(const Tensor& hm_noisy, const Tensor& em, const Tensor& voxels,
                   const Tensor& task, int s) const;

    const std::vector<BlockTag>& pattern() const { return tags_; }
    bool has_tat() const;

    // Fine-tuning: appends a trailing TAT block (zero output projections, so
    // the forward is unchanged until training moves them).
    void append_tat(ParamStore& ps);

private:
    std::string prefix_;
    std::vector<BlockTag> tags_;
    std::vector<EamBlock> eams_;
    std::vector<AttnBlock> attns_; // SAT and TAT blocks in pattern order
    int f_ = 0, x_ = 0, d_state_ = 0, heads_ = 0, ffn_mult_ = 0;
};

// Egomotion denoiser: step embedding + two vanilla gated scan blocks.
class EmfDenoiser {
public:
    EmfDenoiser() = default;
    EmfDenoiser(ParamStore& ps, const std::string& prefix, int f, int d_state);
    Tensor forward(const Tensor& em_noisy, int s) const;

private:
    GatedScanBlock b0_, b1_;
};

// ---- decoders ----

class TrajectoryDecoder {
public:
    TrajectoryDecoder() = default;
    TrajectoryDecoder(ParamStore& ps, const std::string& prefix, int f, int dims);
    // [N, f] -> [N, dims]
    Tensor forward(const Tensor& hm) const;
    int dims() const { return dims_; }

private:
    Mlp mlp_;
    int dims_ = 0;
};

class StateDecoder {
public:
    StateDecoder() = default;
    StateDecoder(ParamStore& ps, const std::string& prefix, int f);
    // [N, f] -> [N, 1] probabilities in (0, 1)
    Tensor forward(const Tensor& hm) const;

private:
    Mlp mlp_;
};

} // namespace unihand
