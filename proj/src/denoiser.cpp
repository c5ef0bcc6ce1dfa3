#include "unihand/denoiser.hpp"

#include <cmath>

namespace unihand {

namespace {

double stable_softplus(double p) {
    if (p > 0.0) return p + std::log1p(std::exp(-p));
    return std::log1p(std::exp(p));
}

double stable_sigmoid(double p) {
    if (p >= 0.0) return 1.0 / (1.0 + std::exp(-p));
    double e = std::exp(p);
    return e / (1.0 + e);
}

void require_finite(const Tensor& t, const char* what) {
    for (double v : t.values())
        if (!std::isfinite(v)) throw ValidationError(std::string("selective scan: non-finite ") + what);
}

} // namespace

// ---------------------------------------------------------------- scan core

Tensor selective_scan_core(const Tensor& u, const Tensor& sel, const Tensor& A,
                           const Tensor& Wdt, const Tensor& bdt, const Tensor& WB,
                           const Tensor& WC, const Tensor& D) {
    if (u.ndim() != 2 || sel.ndim() != 2)
        throw DimensionError("selective scan: u and sel must be 2-D");
    const int T = u.rows(), f = u.cols(), m = sel.cols(), d = A.cols();
    if (T < 1) throw ValidationError("selective scan: empty sequence");
    if (sel.rows() != T)
        throw DimensionError("selective scan: sel rows " + std::to_string(sel.rows()) +
                             " != u rows " + std::to_string(T));
    if (A.shape() != Shape{f, d}) throw DimensionError("selective scan: A shape mismatch");
    if (Wdt.shape() != Shape{m, f}) throw DimensionError("selective scan: Wdt shape mismatch");
    if (bdt.shape() != Shape{f}) throw DimensionError("selective scan: bdt shape mismatch");
    if (WB.shape() != Shape{m, d}) throw DimensionError("selective scan: WB shape mismatch");
    if (WC.shape() != Shape{m, d}) throw DimensionError("selective scan: WC shape mismatch");
    if (D.shape() != Shape{f}) throw DimensionError("selective scan: D shape mismatch");
    require_finite(u, "input");
    require_finite(sel, "selection input");
    require_finite(A, "A");
    require_finite(Wdt, "Wdt");
    require_finite(bdt, "bdt");
    require_finite(WB, "WB");
    require_finite(WC, "WC");
    require_finite(D, "D");

    const double* uv = u.values().data();
    const double* sv = sel.values().data();
    const double* Av = A.values().data();
    const double* Wdtv = Wdt.values().data();
    const double* bdtv = bdt.values().data();
    const double* WBv = WB.values().data();
    const double* WCv = WC.values().data();
    const double* Dv = D.values().data();

    // per-step selection projections
    std::vector<double> p(size_t(T) * f, 0.0), dt(size_t(T) * f, 0.0);
    std::vector<double> Bv(size_t(T) * d, 0.0), Cv(size_t(T) * d, 0.0);
    for (int t = 0; t < T; ++t) {
        const double* st = sv + size_t(t) * m;
        double* pt = p.data() + size_t(t) * f;
        for (int c = 0; c < f; ++c) pt[c] = bdtv[c];
        double* Bt = Bv.data() + size_t(t) * d;
        double* Ct = Cv.data() + size_t(t) * d;
        for (int k = 0; k < m; ++k) {
            double sk = st[k];
            const double* wrow = Wdtv + size_t(k) * f;
            for (int c = 0; c < f; ++c) pt[c] += sk * wrow[c];
            const double* brow = WBv + size_t(k) * d;
            const double* crow = WCv + size_t(k) * d;
            for (int j = 0; j < d; ++j) {
                Bt[j] += sk * brow[j];
                Ct[j] += sk * crow[j];
            }
        }
        for (int c = 0; c < f; ++c) dt[size_t(t) * f + c] = stable_softplus(pt[c]);
    }

    // full state history kept for backprop through time; h[0] is the zero
    // initial state
    std::vector<double> h(size_t(T + 1) * f * d, 0.0);
    std::vector<double> y(size_t(T) * f, 0.0);
    for (int t = 0; t < T; ++t) {
        const double* Bt = Bv.data() + size_t(t) * d;
        const double* Ct = Cv.data() + size_t(t) * d;
        for (int c = 0; c < f; ++c) {
            double dtc = dt[size_t(t) * f + c];
            double utc = uv[size_t(t) * f + c];
            const double* hprev = h.data() + (size_t(t) * f + c) * d;
            double* hcur = h.data() + (size_t(t + 1) * f + c) * d;
            const double* Ac = Av + size_t(c) * d;
            double acc = 0.0;
            for (int j = 0; j < d; ++j) {
                double a = std::exp(dtc * Ac[j]);
                hcur[j] = a * hprev[j] + dtc * Bt[j] * utc;
                acc += Ct[j] * hcur[j];
            }
            y[size_t(t) * f + c] = acc + Dv[c] * utc;
        }
    }

    auto backprop = [T, f, m, d, p = std::move(p), dt = std::move(dt), Bv = std::move(Bv),
                     Cv = std::move(Cv), h = std::move(h)](Node& nd) {
        Node* pu = nd.parents[0].get();
        Node* psel = nd.parents[1].get();
        Node* pA = nd.parents[2].get();
        Node* pWdt = nd.parents[3].get();
        Node* pbdt = nd.parents[4].get();
        Node* pWB = nd.parents[5].get();
        Node* pWC = nd.parents[6].get();
        Node* pD = nd.parents[7].get();

        const double* gy = nd.grad.data();
        const double* uv = pu->value.data();
        const double* sv = psel->value.data();
        const double* Av = pA->value.data();

        std::vector<double> gu(size_t(T) * f, 0.0);
        std::vector<double> gp(size_t(T) * f, 0.0);
        std::vector<double> gB(size_t(T) * d, 0.0);
        std::vector<double> gC(size_t(T) * d, 0.0);
        std::vector<double> gA(size_t(f) * d, 0.0);
        std::vector<double> gD(static_cast<size_t>(f), 0.0);
        std::vector<double> gh(size_t(f) * d, 0.0);

        for (int t = T - 1; t >= 0; --t) {
            const double* Bt = Bv.data() + size_t(t) * d;
            const double* Ct = Cv.data() + size_t(t) * d;
            double* gBt = gB.data() + size_t(t) * d;
            double* gCt = gC.data() + size_t(t) * d;
            for (int c = 0; c < f; ++c) {
                double g = gy[size_t(t) * f + c];
                double utc = uv[size_t(t) * f + c];
                double dtc = dt[size_t(t) * f + c];
                const double* hcur = h.data() + (size_t(t + 1) * f + c) * d;
                const double* hprev = h.data() + (size_t(t) * f + c) * d;
                const double* Ac = Av + size_t(c) * d;
                double* ghc = gh.data() + size_t(c) * d;
                double* gAc = gA.data() + size_t(c) * d;

                gD[size_t(c)] += g * utc;
                double guc = g * pD->value[size_t(c)];
                double gdt = 0.0;
                for (int j = 0; j < d; ++j) {
                    gCt[j] += g * hcur[j];
                    double ghj = ghc[j] + g * Ct[j];
                    double a = std::exp(dtc * Ac[j]);
                    gdt += ghj * (Ac[j] * a * hprev[j] + Bt[j] * utc);
                    gAc[j] += ghj * dtc * a * hprev[j];
                    gBt[j] += ghj * dtc * utc;
                    guc += ghj * dtc * Bt[j];
                    ghc[j] = ghj * a; // flows to h_{t-1}
                }
                gu[size_t(t) * f + c] += guc;
                gp[size_t(t) * f + c] = gdt * stable_sigmoid(p[size_t(t) * f + c]);
            }
        }

        if (pu->needs_grad)
            for (size_t i = 0; i < gu.size(); ++i) pu->grad[i] += gu[i];
        if (pA->needs_grad)
            for (size_t i = 0; i < gA.size(); ++i) pA->grad[i] += gA[i];
        if (pD->needs_grad)
            for (int c = 0; c < f; ++c) pD->grad[size_t(c)] += gD[size_t(c)];
        if (pbdt->needs_grad)
            for (int t = 0; t < T; ++t)
                for (int c = 0; c < f; ++c) pbdt->grad[size_t(c)] += gp[size_t(t) * f + c];
        if (pWdt->needs_grad)
            for (int t = 0; t < T; ++t)
                for (int k = 0; k < m; ++k) {
                    double sk = sv[size_t(t) * m + k];
                    for (int c = 0; c < f; ++c)
                        pWdt->grad[size_t(k) * f + c] += sk * gp[size_t(t) * f + c];
                }
        if (pWB->needs_grad)
            for (int t = 0; t < T; ++t)
                for (int k = 0; k < m; ++k) {
                    double sk = sv[size_t(t) * m + k];
                    for (int j = 0; j < d; ++j)
                        pWB->grad[size_t(k) * d + j] += sk * gB[size_t(t) * d + j];
                }
        if (pWC->needs_grad)
            for (int t = 0; t < T; ++t)
                for (int k = 0; k < m; ++k) {
                    double sk = sv[size_t(t) * m + k];
                    for (int j = 0; j < d; ++j)
                        pWC->grad[size_t(k) * d + j] += sk * gC[size_t(t) * d + j];
                }
        if (psel->needs_grad) {
            const double* Wdtv = pWdt->value.data();
            const double* WBv = pWB->value.data();
            const double* WCv = pWC->value.data();
            for (int t = 0; t < T; ++t)
                for (int k = 0; k < m; ++k) {
                    double s = 0.0;
                    const double* wrow = Wdtv + size_t(k) * f;
                    for (int c = 0; c < f; ++c) s += wrow[c] * gp[size_t(t) * f + c];
                    const double* brow = WBv + size_t(k) * d;
                    const double* crow = WCv + size_t(k) * d;
                    for (int j = 0; j < d; ++j) {
                        s += brow[j] * gB[size_t(t) * d + j];
                        s += crow[j] * gC[size_t(t) * d + j];
                    }
                    psel->grad[size_t(t) * m + k] += s;
                }
        }
    };

    return make_node({T, f}, std::move(y), {u, sel, A, Wdt, bdt, WB, WC, D},
                     std::move(backprop));
}

// ---------------------------------------------------------------- scan module

SelectiveScan::SelectiveScan(ParamStore& ps, const std::string& prefix, int m, int f,
                             int d_state)
    : m_(m), f_(f), d_(d_state) {
    if (d_state < 1) throw ConfigError("selective scan: d_state must be >= 1");
    // log-decay init: state j decays at rate -(1+j), giving a spread of
    // timescales per channel
    std::vector<double> a(size_t(f) * size_t(d_state));
    for (int c = 0; c < f; ++c)
        for (int j = 0; j < d_state; ++j) a[size_t(c) * size_t(d_state) + size_t(j)] = -(1.0 + j);
    A_ = ps.with_values(prefix + ".A", {f, d_state}, std::move(a));
    Wdt_ = ps.weight(prefix + ".Wdt", m, f);
    bdt_ = ps.bias(prefix + ".bdt", f);
    WB_ = ps.weight(prefix + ".WB", m, d_state);
    WC_ = ps.weight(prefix + ".WC", m, d_state);
    D_ = ps.filled(prefix + ".D", {f}, 1.0);
}

Tensor SelectiveScan::forward(const Tensor& u, const Tensor& sel) const {
    return selective_scan_core(u, sel, A_, Wdt_, bdt_, WB_, WC_, D_);
}

GatedScanBlock::GatedScanBlock(ParamStore& ps, const std::string& prefix, int f, int d_state)
    : ln_(ps, prefix + ".ln", f),
      scan_(ps, prefix + ".scan", f, f, d_state),
      gate_(ps, prefix + ".gate", f, f) {}

Tensor GatedScanBlock::forward(const Tensor& x) const {
    Tensor xn = ln_.forward(x);
    Tensor y = scan_.forward(xn, xn);
    Tensor g = sigmoid(gate_.forward(xn));
    return add(x, mul(g, y));
}

EamBlock::EamBlock(ParamStore& ps, const std::string& prefix, int f, int d_state)
    : ln_(ps, prefix + ".ln", f),
      scan_(ps, prefix + ".scan", 2 * f, f, d_state),
      gate_(ps, prefix + ".gate", f, f) {}

Tensor EamBlock::forward(const Tensor& hm, const Tensor& em) const {
    if (hm.shape() != em.shape())
        throw ValidationError("eam block: hm shape " + shape_str(hm.shape()) +
                              " != em shape " + shape_str(em.shape()));
    Tensor xn = ln_.forward(hm);
    Tensor y = scan_.forward(xn, concat_cols({xn, em}));
    Tensor g = sigmoid(gate_.forward(xn));
    return add(hm, mul(g, y));
}

// ---------------------------------------------------------------- attention

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, const std::string& prefix, int f,
                                       int kv_dim, int heads, bool zero_out_proj)
    : f_(f), kv_dim_(kv_dim), heads_(heads) {
    if (heads < 1 || f % heads != 0)
        throw ConfigError("attention: feature width " + std::to_string(f) +
                          " not divisible by head count " + std::to_string(heads));
    wq_ = ps.weight(prefix + ".Wq", f, f);
    wk_ = ps.weight(prefix + ".Wk", kv_dim, f);
    wv_ = ps.weight(prefix + ".Wv", kv_dim, f);
    wo_ = zero_out_proj ? ps.filled(prefix + ".Wo", {f, f}, 0.0) : ps.weight(prefix + ".Wo", f, f);
}

std::vector<Tensor> MultiHeadAttention::probs(const Tensor& q_in, const Tensor& kv_in) const {
    if (q_in.ndim() != 2 || q_in.cols() != f_)
        throw DimensionError("attention: query shape " + shape_str(q_in.shape()));
    if (kv_in.ndim() != 2 || kv_in.cols() != kv_dim_)
        throw DimensionError("attention: kv shape " + shape_str(kv_in.shape()) + ", expected [*, " +
                             std::to_string(kv_dim_) + "]");
    Tensor q = matmul(q_in, wq_);
    Tensor k = matmul(kv_in, wk_);
    int dh = f_ / heads_;
    std::vector<Tensor> out;
    out.reserve(size_t(heads_));
    for (int hh = 0; hh < heads_; ++hh) {
        Tensor qh = slice_cols(q, hh * dh, (hh + 1) * dh);
        Tensor kh = slice_cols(k, hh * dh, (hh + 1) * dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh)));
        out.push_back(softmax_rows(scores));
    }
    return out;
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& kv_in) const {
    std::vector<Tensor> pr = probs(q_in, kv_in);
    Tensor v = matmul(kv_in, wv_);
    int dh = f_ / heads_;
    std::vector<Tensor> heads_out;
    heads_out.reserve(size_t(heads_));
    for (int hh = 0; hh < heads_; ++hh)
        heads_out.push_back(matmul(pr[size_t(hh)], slice_cols(v, hh * dh, (hh + 1) * dh)));
    return matmul(concat_cols(heads_out), wo_);
}

AttnBlock::AttnBlock(ParamStore& ps, const std::string& prefix, int f, int kv_dim, int heads,
                     int ffn_mult, bool zero_out_projs)
    : ln1_(ps, prefix + ".ln1", f),
      ln2_(ps, prefix + ".ln2", f),
      ln3_(ps, prefix + ".ln3", f),
      self_(ps, prefix + ".self", f, f, heads, zero_out_projs),
      cross_(ps, prefix + ".cross", f, kv_dim, heads, zero_out_projs) {
    if (ffn_mult < 1) throw ConfigError("attention block: ffn_mult must be >= 1");
    int hidden = ffn_mult * f;
    ffn_.l1 = Linear(ps, prefix + ".ffn.l1", f, hidden);
    if (zero_out_projs) {
        ffn_.l2.W = ps.filled(prefix + ".ffn.l2.W", {hidden, f}, 0.0);
        ffn_.l2.b = ps.bias(prefix + ".ffn.l2.b", f);
    } else {
        ffn_.l2 = Linear(ps, prefix + ".ffn.l2", hidden, f);
    }
}

Tensor AttnBlock::forward(const Tensor& x, const Tensor& kv) const {
    Tensor q = add(ln1_.forward(x), sinusoidal_code(x.rows(), x.cols()));
    Tensor a = add(x, self_.forward(q, q));
    Tensor b = add(a, cross_.forward(ln2_.forward(a), kv));
    return add(b, ffn_.forward(ln3_.forward(b)));
}

// ---------------------------------------------------------------- patterns

std::vector<BlockTag> parse_pattern(const std::string& pattern) {
    if (pattern.empty()) throw ConfigError("empty denoiser pattern");
    std::vector<BlockTag> tags;
    size_t pos = 0;
    while (pos <= pattern.size()) {
        size_t next = pattern.find('_', pos);
        std::string tok = pattern.substr(pos, next == std::string::npos ? next : next - pos);
        if (tok == "eam") tags.push_back(BlockTag::EAM);
        else if (tok == "sat") tags.push_back(BlockTag::SAT);
        else if (tok == "tat") tags.push_back(BlockTag::TAT);
        else
            throw ConfigError("unknown block tag '" + tok + "' in pattern '" + pattern + "'");
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    for (size_t i = 0; i < tags.size(); ++i)
        if (tags[i] == BlockTag::TAT && i + 1 != tags.size())
            throw ConfigError("tat block must be the trailing block in '" + pattern + "'");
    return tags;
}

std::string pattern_name(const std::vector<BlockTag>& tags) {
    std::string out;
    for (const auto& t : tags) {
        if (!out.empty()) out += "_";
        out += t == BlockTag::EAM ? "eam" : t == BlockTag::SAT ? "sat" : "tat";
    }
    return out;
}

// ---------------------------------------------------------------- hmtm

Hmtm::Hmtm(ParamStore& ps, const std::string& prefix, const std::string& pattern, int f, int x,
           int d_state, int heads, int ffn_mult)
    : prefix_(prefix), tags_(parse_pattern(pattern)), f_(f), x_(x), d_state_(d_state),
      heads_(heads), ffn_mult_(ffn_mult) {
    for (size_t i = 0; i < tags_.size(); ++i) {
        std::string bp = prefix_ + ".b" + std::to_string(i);
        switch (tags_[i]) {
        case BlockTag::EAM: eams_.emplace_back(ps, bp + ".eam", f, d_state); break;
        case BlockTag::SAT: attns_.emplace_back(ps, bp + ".sat", f, f, heads, ffn_mult); break;
        case BlockTag::TAT:
            attns_.emplace_back(ps, bp + ".tat", f, x, heads, ffn_mult, /*zero_out_projs=*/true);
            break;
        }
    }
}

bool Hmtm::has_tat() const {
    return !tags_.empty() && tags_.back() == BlockTag::TAT;
}

void Hmtm::append_tat(ParamStore& ps) {
    if (has_tat()) throw ConfigError("pattern already ends in a tat block");
    std::string bp = prefix_ + ".b" + std::to_string(tags_.size());
    tags_.push_back(BlockTag::TAT);
    attns_.emplace_back(ps, bp + ".tat", f_, x_, heads_, ffn_mult_, /*zero_out_projs=*/true);
}

Tensor Hmtm::forward(const Tensor& hm_noisy, const Tensor& em, const Tensor& voxels,
                     const Tensor& task, int s) const {
    if (hm_noisy.ndim() != 2 || hm_noisy.cols() != f_)
        throw DimensionError("hm denoiser: input shape " + shape_str(hm_noisy.shape()));
    if (em.shape() != hm_noisy.shape())
        throw ValidationError("hm denoiser: em shape " + shape_str(em.shape()) +
                              " != hm shape " + shape_str(hm_noisy.shape()));
    if (s < 1) throw ValidationError("hm denoiser: step must be >= 1");

    Tensor task_tile;
    int T = hm_noisy.rows();
    size_t ei = 0, ai = 0;
    Tensor x = add_rowvec(hm_noisy, sinusoidal_row(s, f_));
    for (const auto& tag : tags_) {
        switch (tag) {
        case BlockTag::EAM:
            x = eams_[ei++].forward(x, em);
            break;
        case BlockTag::SAT:
            if (!voxels.defined())
                throw ConfigError("pattern contains a sat block but no voxel context was given");
            x = attns_[ai++].forward(x, voxels);
            break;
        case BlockTag::TAT: {
            if (!task.defined())
                throw ConfigError("pattern contains a tat block but no task embedding was given");
            if (task.shape() != Shape{x_})
                throw ValidationError("hm denoiser: task shape " + shape_str(task.shape()) +
                                      ", expected [" + std::to_string(x_) + "]");
            if (!task_tile.defined()) {
                std::vector<double> tile(size_t(T) * size_t(x_));
                for (int r = 0; r < T; ++r)
                    for (int c = 0; c < x_; ++c)
                        tile[size_t(r) * size_t(x_) + size_t(c)] = task.at(c);
                task_tile = Tensor::from_data({T, x_}, std::move(tile));
            }
            x = attns_[ai++].forward(x, task_tile);
            break;
        }
        }
    }
    return x;
}

// ---------------------------------------------------------------- emf

EmfDenoiser::EmfDenoiser(ParamStore& ps, const std::string& prefix, int f, int d_state)
    : b0_(ps, prefix + ".b0", f, d_state), b1_(ps, prefix + ".b1", f, d_state) {}

Tensor EmfDenoiser::forward(const Tensor& em_noisy, int s) const {
    if (em_noisy.ndim() != 2)
        throw DimensionError("em denoiser: input shape " + shape_str(em_noisy.shape()));
    if (s < 1) throw ValidationError("em denoiser: step must be >= 1");
    Tensor x = add_rowvec(em_noisy, sinusoidal_row(s, em_noisy.cols()));
    return b1_.forward(b0_.forward(x));
}

// ---------------------------------------------------------------- decoders

TrajectoryDecoder::TrajectoryDecoder(ParamStore& ps, const std::string& prefix, int f, int dims)
    : mlp_(ps, prefix, f, f, dims), dims_(dims) {
    if (dims != 2 && dims != 3)
        throw ConfigError("trajectory decoder: dims must be 2 or 3, got " + std::to_string(dims));
}

Tensor TrajectoryDecoder::forward(const Tensor& hm) const { return mlp_.forward(hm); }

StateDecoder::StateDecoder(ParamStore& ps, const std::string& prefix, int f)
    : mlp_(ps, prefix, f, f, 1) {}

Tensor StateDecoder::forward(const Tensor& hm) const { return sigmoid(mlp_.forward(hm)); }

} // namespace unihand
