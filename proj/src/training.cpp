#include "unihand/training.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "unihand/errors.hpp"
#include "unihand/evalreport.hpp"

using json = nlohmann::json;

namespace unihand {

// ------------------------------------------------------------- losses

namespace {

void require_matrix_pair(const Tensor& a, const Tensor& b, const char* who) {
    if (!a.defined() || !b.defined())
        throw ValidationError(std::string(who) + ": undefined tensor");
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape() != b.shape())
        throw DimensionError(std::string(who) + ": shapes " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    if (a.rows() < 1) throw ValidationError(std::string(who) + ": empty trajectory");
    for (double x : a.values())
        if (!std::isfinite(x)) throw ValidationError(std::string(who) + ": non-finite input");
    for (double x : b.values())
        if (!std::isfinite(x)) throw ValidationError(std::string(who) + ": non-finite input");
}

// Mean squared error over all elements; sse is a sum.
Tensor mse(const Tensor& a, const Tensor& b) {
    return scale(sse(a, b), 1.0 / double(a.size()));
}

} // namespace

Tensor trajectory_distance_loss(const Tensor& pred, const Tensor& gt) {
    require_matrix_pair(pred, gt, "trajectory distance loss");
    int n = pred.rows(), d = pred.cols();
    const auto& av = pred.values();
    const auto& bv = gt.values();
    std::vector<double> dist(size_t(n), 0.0);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) {
            double diff = av[size_t(i) * d + j] - bv[size_t(i) * d + j];
            s += diff * diff;
        }
        dist[size_t(i)] = std::sqrt(s);
        sum += dist[size_t(i)];
    }
    double mean = sum / double(n);
    return make_node({1}, {mean}, {pred, gt}, [n, d, dist](Node& nd) {
        double g = nd.grad[0] / double(n);
        Node* a = nd.parents[0].get();
        Node* b = nd.parents[1].get();
        for (int i = 0; i < n; ++i) {
            if (dist[size_t(i)] <= 0.0) continue; // coincident rows: zero subgradient
            double coef = g / dist[size_t(i)];
            for (int j = 0; j < d; ++j) {
                size_t k = size_t(i) * d + j;
                double diff = a->value[k] - b->value[k];
                if (a->needs_grad) a->grad[k] += coef * diff;
                if (b->needs_grad) b->grad[k] -= coef * diff;
            }
        }
    });
}

Tensor heading_loss(const Tensor& pred, const Tensor& gt, const std::vector<double>& base) {
    require_matrix_pair(pred, gt, "heading loss");
    int n = pred.rows(), d = pred.cols();
    if (int(base.size()) != d)
        throw DimensionError("heading loss: base has " + std::to_string(base.size()) +
                             " components, trajectories have " + std::to_string(d));
    for (double x : base)
        if (!std::isfinite(x)) throw ValidationError("heading loss: non-finite base");

    // Displacements u (prediction) and v (ground truth), row i = step i.
    const auto& av = pred.values();
    const auto& bv = gt.values();
    std::vector<double> u(size_t(n) * size_t(d)), v(size_t(n) * size_t(d));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            size_t k = size_t(i) * d + j;
            double pa = i == 0 ? base[size_t(j)] : av[k - size_t(d)];
            double pb = i == 0 ? base[size_t(j)] : bv[k - size_t(d)];
            u[k] = av[k] - pa;
            v[k] = bv[k] - pb;
        }

    constexpr double kGuard = 1e-150; // below this a direction is undefined
    std::vector<double> nu(static_cast<size_t>(n));
    std::vector<double> nv(static_cast<size_t>(n));
    std::vector<double> dotuv(static_cast<size_t>(n));
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        double su = 0.0, sv = 0.0, dt = 0.0;
        for (int j = 0; j < d; ++j) {
            size_t k = size_t(i) * d + j;
            su += u[k] * u[k];
            sv += v[k] * v[k];
            dt += u[k] * v[k];
        }
        nu[size_t(i)] = std::sqrt(su);
        nv[size_t(i)] = std::sqrt(sv);
        dotuv[size_t(i)] = dt;
        if (nu[size_t(i)] > kGuard && nv[size_t(i)] > kGuard)
            sum += 1.0 - dt / (nu[size_t(i)] * nv[size_t(i)]);
        // zero-length displacement: cos taken as 1, term contributes 0
    }
    double mean = sum / double(n);

    return make_node({1}, {mean}, {pred, gt}, [n, d, u, v, nu, nv, dotuv](Node& nd) {
        double g = nd.grad[0] / double(n);
        Node* a = nd.parents[0].get();
        Node* b = nd.parents[1].get();
        constexpr double kGuard = 1e-150;
        // d(1-cos_i)/du_i and /dv_i per displacement, then chained into the
        // two rows each displacement touches.
        std::vector<double> du(size_t(n) * size_t(d), 0.0), dv(size_t(n) * size_t(d), 0.0);
        for (int i = 0; i < n; ++i) {
            double pu = nu[size_t(i)], pv = nv[size_t(i)];
            if (pu <= kGuard || pv <= kGuard) continue;
            double dt = dotuv[size_t(i)];
            for (int j = 0; j < d; ++j) {
                size_t k = size_t(i) * d + j;
                du[k] = dt * u[k] / (pu * pu * pu * pv) - v[k] / (pu * pv);
                dv[k] = dt * v[k] / (pv * pv * pv * pu) - u[k] / (pu * pv);
            }
        }
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) {
                size_t k = size_t(i) * d + j;
                double ga = du[k];
                double gb = dv[k];
                if (i + 1 < n) {
                    ga -= du[k + size_t(d)]; // row i is the base of displacement i+1
                    gb -= dv[k + size_t(d)];
                }
                if (a->needs_grad) a->grad[k] += g * ga;
                if (b->needs_grad) b->grad[k] += g * gb;
            }
    });
}

Tensor interaction_loss(const Tensor& probs, const std::vector<double>& labels) {
    if (!probs.defined()) throw ValidationError("interaction loss: undefined probabilities");
    if (probs.ndim() != 2 || probs.cols() != 1)
        throw DimensionError("interaction loss: probabilities must be [N, 1], got " +
                             shape_str(probs.shape()));
    int n = probs.rows();
    if (n < 1) throw ValidationError("interaction loss: empty sequence");
    if (int(labels.size()) != n)
        throw DimensionError("interaction loss: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(n) + " frames");
    for (double x : probs.values())
        if (!std::isfinite(x)) throw ValidationError("interaction loss: non-finite probability");
    std::vector<double> pos(labels);
    std::vector<double> neg(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        if (labels[size_t(i)] != 0.0 && labels[size_t(i)] != 1.0)
            throw ValidationError("interaction loss: labels must be 0 or 1");
        neg[size_t(i)] = 1.0 - labels[size_t(i)];
    }
    Tensor y = Tensor::from_data({n, 1}, std::move(pos));
    Tensor ym = Tensor::from_data({n, 1}, std::move(neg));
    Tensor ones = Tensor::full({n, 1}, 1.0);
    Tensor pc = clamp(probs, 1e-12, 1.0 - 1e-12);
    Tensor ll = add(mul(y, log_t(pc)), mul(ym, log_t(sub(ones, pc))));
    return scale(mean_all(ll), -1.0);
}

// ------------------------------------------------ denoising reconstruction

Tensor denoise_recon_term(const DiffusionSchedule& sched, const Tensor& gt_latents, int n_past,
                          int s, const Tensor& noise, const Predictor& fwd) {
    if (!gt_latents.defined() || gt_latents.ndim() != 2)
        throw DimensionError("denoising term: latents must be a matrix");
    int rows = gt_latents.rows();
    if (n_past < 1 || n_past >= rows)
        throw ValidationError("denoising term: n_past " + std::to_string(n_past) +
                              " leaves no future rows of " + std::to_string(rows));
    Tensor z_s = q_sample(sched, gt_latents, n_past, s, noise);
    Tensor pred = fwd(z_s, s);
    if (pred.shape() != gt_latents.shape())
        throw DimensionError("denoising term: prediction shape " + shape_str(pred.shape()) +
                             " differs from latents " + shape_str(gt_latents.shape()));
    Tensor pf = slice_rows(pred, n_past, rows);
    Tensor gf = slice_rows(gt_latents, n_past, rows);
    return mse(pf, gf);
}

Tensor denoise_recon_all_steps(const DiffusionSchedule& sched, const Tensor& gt_latents,
                               int n_past, const std::function<Tensor(int)>& noise_for_step,
                               const Predictor& fwd) {
    if (sched.S < 2)
        throw ConfigError("stepwise objective needs a schedule with S >= 2, got S = " +
                          std::to_string(sched.S));
    Tensor acc;
    for (int s = 2; s <= sched.S; ++s) {
        Tensor term = denoise_recon_term(sched, gt_latents, n_past, s, noise_for_step(s), fwd);
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scale(acc, 1.0 / double(sched.S - 1));
}

OneShotRecon oneshot_recon(const DiffusionSchedule& sched, const Tensor& gt_latents, int n_past,
                           const Tensor& noise, const Predictor& fwd) {
    if (!gt_latents.defined() || gt_latents.ndim() != 2)
        throw DimensionError("one-shot term: latents must be a matrix");
    int rows = gt_latents.rows();
    if (n_past < 1 || n_past >= rows)
        throw ValidationError("one-shot term: n_past " + std::to_string(n_past) +
                              " leaves no future rows of " + std::to_string(rows));
    if (!noise.defined() || noise.shape() != Shape{rows - n_past, gt_latents.cols()})
        throw DimensionError("one-shot term: noise must be the future block's shape");
    Tensor z = concat_rows({slice_rows(gt_latents, 0, n_past), noise});
    Tensor pred = fwd(z, sched.S);
    if (pred.shape() != gt_latents.shape())
        throw DimensionError("one-shot term: prediction shape " + shape_str(pred.shape()) +
                             " differs from latents " + shape_str(gt_latents.shape()));
    OneShotRecon out;
    out.future = slice_rows(pred, n_past, rows);
    out.loss = mse(out.future, slice_rows(gt_latents, n_past, rows));
    return out;
}

// ------------------------------------------------------------- config

void TrainingConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch < 1) throw ConfigError("batch size must be at least 1");
    if (val_every < 0) throw ConfigError("val_every must be nonnegative");
    const double ws[] = {weights.em_denoise, weights.hm_denoise, weights.displacement,
                         weights.angle,      weights.pseudo,     weights.interaction};
    for (double w : ws)
        if (w < 0.0 || !std::isfinite(w)) throw ConfigError("loss weights must be finite and nonnegative");
    for (int j : joints)
        if (j < 0) throw ConfigError("joint indices must be nonnegative");
}

namespace {

const char* const kWeightKeys[] = {"em_denoise", "hm_denoise", "displacement",
                                   "angle",      "pseudo",     "interaction"};

} // namespace

TrainingConfig training_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("training config is not valid json: ") + e.what());
    }
    TrainingConfig tc;
    try {
        for (const auto& [key, val] : j.items()) {
            if (key == "learning_rate") tc.lr = val.get<double>();
            else if (key == "weight_decay") tc.weight_decay = val.get<double>();
            else if (key == "epochs") tc.epochs = val.get<int>();
            else if (key == "batch") tc.batch = val.get<int>();
            else if (key == "seed") tc.seed = val.get<uint64_t>();
            else if (key == "val_every") tc.val_every = val.get<int>();
            else if (key == "finetune_from") tc.finetune_from = val.get<std::string>();
            else if (key == "joints") tc.joints = val.get<std::vector<int>>();
            else if (key == "weights") {
                for (const auto& [wk, wv] : val.items()) {
                    if (wk == "em_denoise") tc.weights.em_denoise = wv.get<double>();
                    else if (wk == "hm_denoise") tc.weights.hm_denoise = wv.get<double>();
                    else if (wk == "displacement") tc.weights.displacement = wv.get<double>();
                    else if (wk == "angle") tc.weights.angle = wv.get<double>();
                    else if (wk == "pseudo") tc.weights.pseudo = wv.get<double>();
                    else if (wk == "interaction") tc.weights.interaction = wv.get<double>();
                    else throw ConfigError("unknown training weight key '" + wk + "'");
                }
            } else {
                throw ConfigError("unknown training config key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad training config value: ") + e.what());
    }
    tc.validate();
    return tc;
}

std::string training_to_json(const TrainingConfig& tc) {
    json j;
    j["learning_rate"] = tc.lr;
    j["weight_decay"] = tc.weight_decay;
    j["epochs"] = tc.epochs;
    j["batch"] = tc.batch;
    j["seed"] = tc.seed;
    j["val_every"] = tc.val_every;
    if (!tc.finetune_from.empty()) j["finetune_from"] = tc.finetune_from;
    if (!tc.joints.empty()) j["joints"] = tc.joints;
    json w;
    w["em_denoise"] = tc.weights.em_denoise;
    w["hm_denoise"] = tc.weights.hm_denoise;
    w["displacement"] = tc.weights.displacement;
    w["angle"] = tc.weights.angle;
    w["pseudo"] = tc.weights.pseudo;
    w["interaction"] = tc.weights.interaction;
    j["weights"] = w;
    (void)kWeightKeys;
    return j.dump(2);
}

// ------------------------------------------------------------- sample loss

SampleDraws draw_sample(const UniHandModel& model, const Clip& clip, Rng& rng) {
    const ModelConfig& cfg = model.config();
    if (cfg.S < 2)
        throw ConfigError("training needs a schedule with S >= 2, got S = " +
                          std::to_string(cfg.S));
    int np = model.past_frames(clip);
    int nf = clip.frames - np;
    if (nf < 1) throw ValidationError("clip " + clip.id + " has no future frames to train on");
    SampleDraws d;
    d.s_em = int(rng.range(2, cfg.S));
    d.s_hm = int(rng.range(2, cfg.S));
    auto noise = [&]() {
        std::vector<double> v(size_t(nf) * size_t(cfg.f));
        rng.fill_normal(v);
        return Tensor::from_data({nf, cfg.f}, std::move(v));
    };
    d.em_step_noise = noise();
    d.em_final_noise = noise();
    d.hm_step_noise = noise();
    d.hm_final_noise = noise();
    return d;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
    em_denoise += o.em_denoise;
    hm_denoise += o.hm_denoise;
    displacement += o.displacement;
    angle += o.angle;
    pseudo += o.pseudo;
    interaction += o.interaction;
    total += o.total;
    return *this;
}

void LossBreakdown::scale_by(double c) {
    em_denoise *= c;
    hm_denoise *= c;
    displacement *= c;
    angle *= c;
    pseudo *= c;
    interaction *= c;
    total *= c;
}

Tensor sample_loss(const UniHandModel& model, const Clip& clip, int joint, const LossWeights& w,
                   const SampleDraws& draws, LossBreakdown* parts) {
    const ModelConfig& cfg = model.config();
    const DiffusionSchedule& sched = model.schedule();
    int np = model.past_frames(clip);
    int nf = clip.frames - np;
    if (nf < 1) throw ValidationError("clip " + clip.id + " has no future frames to train on");

    bool hm_forward_needed =
        w.hm_denoise > 0 || w.displacement > 0 || w.angle > 0 || w.interaction > 0;

    // ---- egomotion branch ----
    Tensor em_gt, em_os_future, em_term;
    if (cfg.emf_enabled && (hm_forward_needed || w.em_denoise > 0)) {
        em_gt = model.encode_egomotion(clip, np + nf);
        Predictor em_fwd = [&model](const Tensor& z, int s) { return model.emf.forward(z, s); };
        OneShotRecon os = oneshot_recon(sched, em_gt, np, draws.em_final_noise, em_fwd);
        em_os_future = os.future;
        if (w.em_denoise > 0) {
            Tensor step =
                denoise_recon_term(sched, em_gt, np, draws.s_em, draws.em_step_noise, em_fwd);
            em_term = add(step, os.loss);
        }
    }

    // ---- hand branch ----
    Tensor hm_gt;
    if (hm_forward_needed || w.pseudo > 0) {
        FeatureBundle bundle = model.make_bundle(clip, joint, np, nf);
        hm_gt = model.encode_hand(bundle);
    }

    Tensor hm_os_future, hm_term;
    if (hm_forward_needed) {
        Tensor em_holistic =
            cfg.emf_enabled ? concat_rows({slice_rows(em_gt, 0, np), em_os_future})
                            : model.encode_egomotion_repeat_last(clip, np, nf);
        auto tags = parse_pattern(cfg.pattern);
        Tensor voxels, task;
        if (std::find(tags.begin(), tags.end(), BlockTag::SAT) != tags.end())
            voxels = model.encode_voxel_context(clip, np);
        if (std::find(tags.begin(), tags.end(), BlockTag::TAT) != tags.end())
            task = model.task_embedding(clip);
        Predictor hm_fwd = [&model, &em_holistic, &voxels, &task](const Tensor& z, int s) {
            return model.hmtm.forward(z, em_holistic, voxels, task, s);
        };
        OneShotRecon os = oneshot_recon(sched, hm_gt, np, draws.hm_final_noise, hm_fwd);
        hm_os_future = os.future;
        if (w.hm_denoise > 0) {
            Tensor step =
                denoise_recon_term(sched, hm_gt, np, draws.s_hm, draws.hm_step_noise, hm_fwd);
            hm_term = add(step, os.loss);
        }
    }

    // ---- decoded supervision on the first-frame canvas ----
    Tensor dis_term, angle_term, pseudo_term, int_term;
    if (w.displacement > 0 || w.angle > 0 || w.pseudo > 0) {
        auto canvas = clip_canvas_waypoints(clip, joint);
        std::vector<double> gt_data;
        gt_data.reserve(size_t(nf) * size_t(cfg.dims));
        for (int t = np; t < np + nf; ++t) {
            if (!canvas[size_t(t)].valid)
                throw ValidationError("clip " + clip.id + ": ground-truth waypoint at frame " +
                                      std::to_string(t) + " leaves the canvas");
            for (int c = 0; c < cfg.dims; ++c) gt_data.push_back(canvas[size_t(t)].p[size_t(c)]);
        }
        Tensor gt_traj = Tensor::from_data({nf, cfg.dims}, std::move(gt_data));
        std::vector<double> anchor(size_t(cfg.dims));
        for (int c = 0; c < cfg.dims; ++c) anchor[size_t(c)] = canvas[size_t(np - 1)].p[size_t(c)];

        if (w.displacement > 0 || w.angle > 0) {
            Tensor pred_traj = model.traj_dec.forward(hm_os_future);
            if (w.displacement > 0) dis_term = trajectory_distance_loss(pred_traj, gt_traj);
            if (w.angle > 0) angle_term = heading_loss(pred_traj, gt_traj, anchor);
        }
        if (w.pseudo > 0) {
            Tensor clean_traj = model.traj_dec.forward(slice_rows(hm_gt, np, np + nf));
            pseudo_term = trajectory_distance_loss(clean_traj, gt_traj);
        }
    }
    if (w.interaction > 0) {
        Tensor probs = model.state_dec.forward(hm_os_future);
        std::vector<double> labels(clip.states.begin() + np, clip.states.end());
        int_term = interaction_loss(probs, labels);
    }

    // ---- weighted total; absent terms never enter the graph ----
    Tensor total;
    auto take = [&total](const Tensor& term, double weight, double* slot) {
        if (!term.defined()) return;
        if (slot) *slot = term.item();
        Tensor wt = scale(term, weight);
        total = total.defined() ? add(total, wt) : wt;
    };
    take(em_term, w.em_denoise, parts ? &parts->em_denoise : nullptr);
    take(hm_term, w.hm_denoise, parts ? &parts->hm_denoise : nullptr);
    take(dis_term, w.displacement, parts ? &parts->displacement : nullptr);
    take(angle_term, w.angle, parts ? &parts->angle : nullptr);
    take(pseudo_term, w.pseudo, parts ? &parts->pseudo : nullptr);
    take(int_term, w.interaction, parts ? &parts->interaction : nullptr);
    if (!total.defined()) total = Tensor::zeros({1});
    if (parts) parts->total = total.item();
    return total;
}

// ------------------------------------------------------------- optimizer

AdamW::AdamW(ParamStore& ps, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : ps_(&ps), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("adam betas must lie in [0, 1)");
    for (const auto& kv : ps.all()) {
        m_[kv.first].assign(size_t(kv.second.size()), 0.0);
        v_[kv.first].assign(size_t(kv.second.size()), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, t_);
    double bc2 = 1.0 - std::pow(b2_, t_);
    for (const auto& kv : ps_->all()) {
        Tensor p = kv.second;
        auto& m = m_[kv.first]; // params appended mid-run start with zero moments
        auto& v = v_[kv.first];
        if (m.empty()) {
            m.assign(size_t(p.size()), 0.0);
            v.assign(size_t(p.size()), 0.0);
        }
        const auto& g = p.grad();
        auto& w = p.leaf_values();
        bool decay = kv.first.size() >= 2 && kv.first.ends_with(".W");
        for (size_t i = 0; i < w.size(); ++i) {
            m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
            v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
            double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            if (decay) update += wd_ * w[i];
            w[i] -= lr_ * update;
        }
        p.zero_grad();
    }
}

// ------------------------------------------------------------- train loop

namespace {

struct TrainSample {
    const Clip* clip;
    int joint;
};

std::vector<int> resolve_joints(const ModelConfig& cfg, const std::vector<int>& wanted) {
    int e = cfg.num_joints();
    std::vector<int> joints = wanted;
    if (joints.empty()) {
        joints.resize(size_t(e));
        for (int i = 0; i < e; ++i) joints[size_t(i)] = i;
    }
    for (int j : joints)
        if (j < 0 || j >= e)
            throw ConfigError("training joint " + std::to_string(j) + " outside the preset of " +
                              std::to_string(e));
    return joints;
}

json record_to_json(const EpochRecord& r) {
    json j;
    j["epoch"] = r.epoch;
    j["em_denoise"] = r.mean.em_denoise;
    j["hm_denoise"] = r.mean.hm_denoise;
    j["displacement"] = r.mean.displacement;
    j["angle"] = r.mean.angle;
    j["pseudo"] = r.mean.pseudo;
    j["interaction"] = r.mean.interaction;
    j["total"] = r.mean.total;
    if (r.val_ade) j["val_ade"] = *r.val_ade;
    if (r.val_fde) j["val_fde"] = *r.val_fde;
    return j;
}

} // namespace

TrainResult train_model(ParamStore& ps, UniHandModel& model, const std::vector<Clip>& train_clips,
                        const std::vector<Clip>& val_clips, const TrainingConfig& tc,
                        std::ostream* log) {
    tc.validate();
    if (train_clips.empty()) throw ValidationError("training needs at least one clip");
    const ModelConfig& cfg = model.config();
    std::vector<int> joints = resolve_joints(cfg, tc.joints);

    std::vector<TrainSample> samples;
    samples.reserve(train_clips.size() * joints.size());
    for (const auto& clip : train_clips)
        for (int j : joints) samples.push_back({&clip, j});

    AdamW opt(ps, tc.lr, tc.weight_decay);
    TrainResult res;

    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        Rng shuffle_rng = Rng::from(tc.seed, "order", uint64_t(epoch));
        shuffle_rng.shuffle(order);
        Rng draw_rng = Rng::from(tc.seed, "draws", uint64_t(epoch));

        LossBreakdown epoch_sum;
        size_t done = 0;
        int batch_index = 0;
        while (done < order.size()) {
            size_t take = std::min(size_t(tc.batch), order.size() - done);
            Tensor batch_total;
            std::string batch_ids;
            for (size_t k = 0; k < take; ++k) {
                const TrainSample& smp = samples[order[done + k]];
                if (!batch_ids.empty()) batch_ids += ", ";
                batch_ids += smp.clip->id + ":" + std::to_string(smp.joint);
                SampleDraws draws = draw_sample(model, *smp.clip, draw_rng);
                LossBreakdown parts;
                Tensor l = sample_loss(model, *smp.clip, smp.joint, tc.weights, draws, &parts);
                epoch_sum += parts;
                batch_total = batch_total.defined() ? add(batch_total, l) : l;
            }
            Tensor batch_mean = scale(batch_total, 1.0 / double(take));
            double lv = batch_mean.item();
            if (!std::isfinite(lv))
                throw EvalError("non-finite training loss at epoch " + std::to_string(epoch) +
                                ", batch " + std::to_string(batch_index) + " (samples: " +
                                batch_ids + ")");
            backward(batch_mean);
            opt.step();
            done += take;
            ++batch_index;
        }
        epoch_sum.scale_by(1.0 / double(order.size()));

        EpochRecord rec;
        rec.epoch = epoch;
        rec.mean = epoch_sum;
        bool run_val = !val_clips.empty() &&
                       (epoch == tc.epochs || (tc.val_every > 0 && epoch % tc.val_every == 0));
        if (run_val) {
            EvalOptions eo;
            eo.seed = tc.seed;
            eo.joints = joints;
            EvalReport rep = evaluate(model, val_clips, eo);
            double a = 0.0, f = 0.0;
            for (const auto& t : rep.targets) {
                a += t.ade;
                f += t.fde;
            }
            rec.val_ade = a / double(rep.targets.size());
            rec.val_fde = f / double(rep.targets.size());
        }
        if (log) *log << record_to_json(rec).dump() << "\n" << std::flush;
        res.records.push_back(std::move(rec));
    }
    return res;
}

// ------------------------------------------------------------- finetune

LoadedModel load_finetune_base(const std::string& dir, const ModelConfig& target) {
    LoadedModel lm = load_checkpoint(dir);
    const ModelConfig& have = lm.model->config();
    json jh = json::parse(config_to_json(have));
    json jt = json::parse(config_to_json(target));
    if (jh == jt) return lm;

    json jh_rest = jh, jt_rest = jt;
    for (auto* j : {&jh_rest, &jt_rest}) {
        j->erase("pattern");
        j->erase("use_task");
    }
    if (jh_rest != jt_rest)
        throw CheckpointError("checkpoint at " + dir + " is incompatible with the finetune target"
                              " (widths, schedule or data interface differ)");
    if (!target.use_task || target.pattern != have.pattern + "_tat")
        throw CheckpointError("finetune may only append one trailing task block: checkpoint has '" +
                              have.pattern + "', target wants '" + target.pattern + "'");
    lm.model->append_task_block(*lm.ps);
    return lm;
}

} // namespace unihand
