#include "unihand/model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "unihand/tensor_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace unihand {

int ModelConfig::num_joints() const {
    // the field shadows the lookup-table function, hence the qualification
    return int(unihand::joint_preset(joint_preset).size());
}

// ---------------------------------------------------------------- config io

namespace {

json config_to_json_obj(const ModelConfig& c) {
    json j;
    j["latent_width"] = c.f;
    j["context_width"] = c.x;
    j["scan_state"] = c.d_state;
    j["heads"] = c.heads;
    j["ffn_mult"] = c.ffn_mult;
    j["voxel_channels"] = {c.vox_c1, c.vox_c2};
    j["pattern"] = c.pattern;
    j["diffusion_steps"] = c.S;
    j["schedule"] = c.schedule;
    j["inference_steps"] = c.hmf_steps;
    j["dims"] = c.dims;
    j["joint_preset"] = c.joint_preset;
    j["past_fraction"] = c.past_fraction;
    j["voxel_grid"] = {{"dims", c.grid.dims},
                       {"resolution", c.grid.resolution},
                       {"origin", {c.grid.origin[0], c.grid.origin[1], c.grid.origin[2]}}};
    j["use_voxels"] = c.use_voxels;
    j["use_rgb"] = c.use_rgb;
    j["use_task"] = c.use_task;
    j["egomotion_forecast"] = c.emf_enabled;
    j["single_frame"] = c.single_frame;
    j["vl_provider"] = c.vl_provider;
    j["prompt"] = c.prompt;
    j["seed"] = c.seed;
    return j;
}

ModelConfig config_from_json_obj(const json& j) {
    static const std::vector<std::string> known = {
        "latent_width", "context_width", "scan_state",    "heads",
        "ffn_mult",     "voxel_channels", "pattern",       "diffusion_steps",
        "schedule",     "inference_steps", "dims",          "joint_preset",
        "past_fraction", "voxel_grid",    "use_voxels",    "use_rgb",
        "use_task",     "egomotion_forecast", "single_frame", "vl_provider",
        "prompt",       "seed"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown model config key '" + it.key() + "'");
    }
    ModelConfig c;
    try {
        c.f = j.value("latent_width", c.f);
        c.x = j.value("context_width", c.x);
        c.d_state = j.value("scan_state", c.d_state);
        c.heads = j.value("heads", c.heads);
        c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
        if (j.contains("voxel_channels")) {
            auto vc = j.at("voxel_channels");
            if (!vc.is_array() || vc.size() != 2)
                throw ConfigError("voxel_channels must be a pair");
            c.vox_c1 = vc[0].get<int>();
            c.vox_c2 = vc[1].get<int>();
        }
        c.pattern = j.value("pattern", c.pattern);
        c.S = j.value("diffusion_steps", c.S);
        c.schedule = j.value("schedule", c.schedule);
        c.hmf_steps = j.value("inference_steps", c.hmf_steps);
        c.dims = j.value("dims", c.dims);
        c.joint_preset = j.value("joint_preset", c.joint_preset);
        c.past_fraction = j.value("past_fraction", c.past_fraction);
        if (j.contains("voxel_grid")) {
            auto g = j.at("voxel_grid");
            c.grid.dims = g.value("dims", c.grid.dims);
            c.grid.resolution = g.value("resolution", c.grid.resolution);
            if (g.contains("origin")) {
                auto o = g.at("origin");
                if (!o.is_array() || o.size() != 3) throw ConfigError("voxel origin needs 3 values");
                for (int i = 0; i < 3; ++i) c.grid.origin[size_t(i)] = o[size_t(i)].get<double>();
            }
        }
        c.use_voxels = j.value("use_voxels", c.use_voxels);
        c.use_rgb = j.value("use_rgb", c.use_rgb);
        c.use_task = j.value("use_task", c.use_task);
        c.emf_enabled = j.value("egomotion_forecast", c.emf_enabled);
        c.single_frame = j.value("single_frame", c.single_frame);
        c.vl_provider = j.value("vl_provider", c.vl_provider);
        c.prompt = j.value("prompt", c.prompt);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad model config value: ") + e.what());
    }
    return c;
}

bool pattern_has(const std::vector<BlockTag>& tags, BlockTag t) {
    for (const auto& tag : tags)
        if (tag == t) return true;
    return false;
}

} // namespace

std::string config_to_json(const ModelConfig& cfg) { return config_to_json_obj(cfg).dump(2); }

ModelConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid json: ") + e.what());
    }
    return config_from_json_obj(j);
}

ModelConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

// ---------------------------------------------------------------- model

UniHandModel::UniHandModel(ParamStore& ps, const ModelConfig& cfg)
    : em_enc(ps, "em_enc", cfg.f),
      wp_enc(ps, "wp_enc", cfg.dims, cfg.x),
      fusion(ps, "fusion", cfg.x, cfg.num_joints(), cfg.f),
      vox_enc(ps, "vox", cfg.vox_c1, cfg.vox_c2, cfg.f),
      emf(ps, "emf", cfg.f, cfg.d_state),
      hmtm(ps, "hm", cfg.pattern, cfg.f, cfg.x, cfg.d_state, cfg.heads, cfg.ffn_mult),
      traj_dec(ps, "traj", cfg.f, cfg.dims),
      state_dec(ps, "state", cfg.f),
      cfg_(cfg),
      sched_(make_schedule(cfg.S, cfg.schedule)),
      provider_(make_vl_provider(cfg.vl_provider, cfg.seed)) {
    if (cfg.hmf_steps < 1 || cfg.hmf_steps > cfg.S)
        throw ConfigError("inference_steps outside [1, diffusion_steps]");
    if (hmtm.has_tat() && !cfg.use_task)
        throw ConfigError("pattern ends in a task block but use_task is off");
    if (!(cfg.past_fraction > 0.0 && cfg.past_fraction < 1.0))
        throw ConfigError("past_fraction must lie in (0, 1)");
}

Tensor UniHandModel::encode_egomotion(const Clip& clip, int rows) const {
    if (rows < 1 || rows > clip.frames)
        throw ValidationError("egomotion rows " + std::to_string(rows) + " outside [1, " +
                              std::to_string(clip.frames) + "]");
    std::vector<Mat3> h(clip.homographies.begin(), clip.homographies.begin() + rows);
    return em_enc.forward(h);
}

Tensor UniHandModel::encode_egomotion_repeat_last(const Clip& clip, int n_past,
                                                  int n_future) const {
    if (n_past < 1 || n_past > clip.frames || n_future < 0)
        throw ValidationError("bad egomotion split: past " + std::to_string(n_past) +
                              " of " + std::to_string(clip.frames) + " frames");
    std::vector<Mat3> h(clip.homographies.begin(), clip.homographies.begin() + n_past);
    for (int i = 0; i < n_future; ++i) h.push_back(h[size_t(n_past - 1)]);
    return em_enc.forward(h);
}

FeatureBundle UniHandModel::make_bundle(const Clip& clip, int joint, int n_past, int l) const {
    int e = cfg_.num_joints();
    if (int(clip.joints.size()) != e)
        throw ValidationError("clip has " + std::to_string(clip.joints.size()) +
                              " joints, model expects " + std::to_string(e));
    if (joint < 0 || joint >= e)
        throw ValidationError("target joint " + std::to_string(joint) + " outside [0, " +
                              std::to_string(e) + ")");
    int rows = n_past + l;
    if (n_past < 1 || rows > clip.frames)
        throw ValidationError("bundle rows " + std::to_string(rows) + " exceed clip frames " +
                              std::to_string(clip.frames));

    auto canvas = clip_canvas_waypoints(clip, joint);
    std::vector<Vec3> wps;
    wps.reserve(size_t(rows));
    for (int t = 0; t < rows; ++t) {
        if (!canvas[size_t(t)].valid)
            throw ValidationError("waypoint of joint " + std::to_string(joint) + " at frame " +
                                  std::to_string(t) + " has no canvas projection");
        wps.push_back(canvas[size_t(t)].p);
    }

    FeatureBundle b;
    b.n_past = n_past;
    b.l = l;
    b.wp = wp_enc.forward(wps);
    if (cfg_.use_rgb) {
        if (auto* fp = dynamic_cast<FileVlProvider*>(provider_.get()))
            fp->set_clip_dir(clip.source_dir);
        b.vl = provider_->vl_features(clip, cfg_.prompt, rows, cfg_.x);
    } else {
        b.vl = Tensor::zeros({rows, cfg_.x});
    }
    b.task = task_embedding(clip);
    b.target = Tensor::from_data({e}, make_target_indicator(joint, e));
    return b;
}

Tensor UniHandModel::encode_hand(const FeatureBundle& bundle) const {
    return fusion.forward(bundle);
}

Tensor UniHandModel::encode_voxel_context(const Clip& clip, int n_past) const {
    if (!cfg_.use_voxels) return Tensor::zeros({27, cfg_.f});
    if (clip.points.empty() || clip.poses.empty())
        throw ValidationError("voxel branch enabled but clip " + clip.id +
                              " carries no registered point clouds");
    return vox_enc.forward(clip_voxel_grid(clip, n_past, cfg_.grid));
}

Tensor UniHandModel::task_embedding(const Clip& clip) const {
    if (!cfg_.use_task) return Tensor();
    // absent instruction: a zero vector, so task-conditioned weights stay
    // compatible with checkpoints trained without instructions
    if (clip.task.empty()) return Tensor::zeros({cfg_.x});
    if (auto* fp = dynamic_cast<FileVlProvider*>(provider_.get()))
        fp->set_clip_dir(clip.source_dir);
    return provider_->task_embedding(clip.task, cfg_.x);
}

Tensor UniHandModel::sample_emf(const Tensor& em_past, int n_future, Rng& rng) const {
    Predictor pred = [this](const Tensor& z, int s) { return emf.forward(z, s); };
    return reverse_chain(sched_, em_past, n_future, {sched_.S}, pred, rng);
}

Tensor UniHandModel::sample_hmf(const Tensor& hm_past, const Tensor& em_holistic,
                                const Tensor& voxels, const Tensor& task, int n_future,
                                int steps, Rng& rng) const {
    Predictor pred = [&](const Tensor& z, int s) {
        return hmtm.forward(z, em_holistic, voxels, task, s);
    };
    return reverse_chain(sched_, hm_past, n_future, respaced_steps(sched_.S, steps), pred, rng);
}

int UniHandModel::past_frames(const Clip& clip) const {
    SplitSpec spec;
    spec.past_fraction = cfg_.past_fraction;
    if (cfg_.single_frame) spec.forced_np = 1;
    return split_frames(clip.frames, spec).first;
}

Forecast UniHandModel::forecast(const Clip& clip, int joint, uint64_t seed) const {
    int np = past_frames(clip);
    int nf = clip.frames - np;

    Tensor em_holistic;
    if (cfg_.emf_enabled) {
        Rng rng_em = Rng::from(seed, "emf:" + clip.id);
        em_holistic = sample_emf(encode_egomotion(clip, np), nf, rng_em);
    } else {
        em_holistic = encode_egomotion_repeat_last(clip, np, nf);
    }

    FeatureBundle bundle = make_bundle(clip, joint, np, 0);
    Tensor hm_past = encode_hand(bundle);
    Tensor voxels = pattern_has(hmtm.pattern(), BlockTag::SAT)
                        ? encode_voxel_context(clip, np)
                        : Tensor();
    Tensor task = bundle.task;

    Rng rng_hm = Rng::from(seed, "hmf:" + clip.id, uint64_t(joint));
    Tensor hm_holistic =
        sample_hmf(hm_past, em_holistic, voxels, task, nf, cfg_.hmf_steps, rng_hm);

    Forecast out;
    out.n_past = np;
    out.n_future = nf;
    out.em_holistic = em_holistic;
    out.hm_future = slice_rows(hm_holistic, np, np + nf);
    Tensor traj = traj_dec.forward(out.hm_future);
    Tensor st = state_dec.forward(out.hm_future);
    out.waypoints.resize(size_t(nf), Vec3{0, 0, 0});
    for (int r = 0; r < nf; ++r)
        for (int c = 0; c < cfg_.dims; ++c) out.waypoints[size_t(r)][size_t(c)] = traj.at(r, c);
    out.states.resize(size_t(nf));
    for (int r = 0; r < nf; ++r) out.states[size_t(r)] = st.at(r, 0);
    return out;
}

void UniHandModel::append_task_block(ParamStore& ps) {
    hmtm.append_tat(ps);
    cfg_.pattern = pattern_name(hmtm.pattern());
    cfg_.use_task = true;
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const std::string& dir, const ParamStore& ps, const ModelConfig& cfg) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint dir " + dir + ": " + ec.message());

    json manifest;
    manifest["format_version"] = 1;
    manifest["config"] = config_to_json_obj(cfg);
    json params = json::array();
    for (const auto& [name, t] : ps.all()) {
        std::string file = name + ".uhnd";
        save_tensor((fs::path(dir) / file).string(), t);
        json p;
        p["name"] = name;
        p["file"] = file;
        p["shape"] = t.shape();
        params.push_back(p);
    }
    manifest["params"] = std::move(params);
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write checkpoint manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

LoadedModel load_checkpoint(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw IoError("cannot open checkpoint manifest in " + dir);
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw IoError("bad checkpoint manifest in " + dir + ": " + e.what());
    }
    if (manifest.value("format_version", 0) != 1)
        throw CheckpointError("unsupported checkpoint format in " + dir);
    if (!manifest.contains("config") || !manifest.contains("params"))
        throw CheckpointError("checkpoint manifest missing config or params");

    ModelConfig cfg = config_from_json_obj(manifest.at("config"));
    LoadedModel lm;
    lm.ps = std::make_unique<ParamStore>(cfg.seed);
    lm.model = std::make_unique<UniHandModel>(*lm.ps, cfg);

    size_t loaded = 0;
    try {
        for (const auto& p : manifest.at("params")) {
            std::string name = p.at("name").get<std::string>();
            std::string file = p.at("file").get<std::string>();
            Tensor t = load_tensor((fs::path(dir) / file).string());
            lm.ps->load_values(name, t.shape(), t.values());
            ++loaded;
        }
    } catch (const json::exception& e) {
        throw CheckpointError("bad checkpoint parameter table: " + std::string(e.what()));
    }
    if (loaded != lm.ps->all().size())
        throw CheckpointError("checkpoint covers " + std::to_string(loaded) + " of " +
                              std::to_string(lm.ps->all().size()) + " parameters");
    return lm;
}

} // namespace unihand
