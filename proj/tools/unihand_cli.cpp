#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "unihand/data.hpp"
#include "unihand/errors.hpp"
#include "unihand/evalreport.hpp"
#include "unihand/gradcheck.hpp"
#include "unihand/model.hpp"
#include "unihand/rng.hpp"
#include "unihand/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace unihand;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<Clip> load_split(const DatasetIndex& index, const std::string& split) {
    std::vector<Clip> clips;
    for (const std::string& dir : index.dirs(split)) clips.push_back(load_clip(dir));
    return clips;
}

int require_joint(const Clip& clip, int joint) {
    if (joint < 0 || size_t(joint) >= clip.joints.size())
        throw ValidationError("joint index " + std::to_string(joint) + " out of range for clip " +
                              clip.id + " (" + std::to_string(clip.joints.size()) + " joints)");
    return joint;
}

// ---- synth ----

void cmd_synth(const std::string& config, uint64_t seed, const std::string& out) {
    auto [cfg, counts] = synth_config_from_json(slurp(config));
    DatasetIndex index = synth_dataset(cfg, seed, counts, out);
    std::cout << "wrote " << index.entries.size() << " " << cfg.scenario << " clips under " << out
              << " (train " << counts.train << ", val " << counts.val << ", test " << counts.test
              << ")\n";
}

// ---- train ----

void cmd_train(const std::string& config, const std::string& data, const std::string& out,
               bool seed_set, uint64_t seed) {
    json j;
    try {
        j = json::parse(slurp(config));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    if (!j.is_object() || !j.contains("model"))
        throw ConfigError("train config: expected an object with a \"model\" section");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "model" && key != "training")
            throw ConfigError("train config: unknown key \"" + key + "\"");
    }
    ModelConfig mc = config_from_json(j.at("model").dump());
    TrainingConfig tc =
        j.contains("training") ? training_from_json(j.at("training").dump()) : TrainingConfig{};
    if (seed_set) tc.seed = seed;

    DatasetIndex index = load_dataset_index(data);
    std::vector<Clip> train_clips = load_split(index, "train");
    std::vector<Clip> val_clips = load_split(index, "val");
    if (train_clips.empty()) throw ValidationError("dataset " + data + " has no train split");

    std::unique_ptr<ParamStore> ps;
    std::unique_ptr<UniHandModel> model;
    if (!tc.finetune_from.empty()) {
        LoadedModel lm = load_finetune_base(tc.finetune_from, mc);
        ps = std::move(lm.ps);
        model = std::move(lm.model);
    } else {
        ps = std::make_unique<ParamStore>(mc.seed);
        model = std::make_unique<UniHandModel>(*ps, mc);
    }

    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out + ": " + ec.message());
    std::ofstream log(fs::path(out) / "train_log.jsonl");
    if (!log) throw IoError("cannot write " + out + "/train_log.jsonl");

    TrainResult result = train_model(*ps, *model, train_clips, val_clips, tc, &log);
    save_checkpoint(out, *ps, model->config());

    const EpochRecord& last = result.records.back();
    std::cout << "trained " << tc.epochs << " epochs on " << train_clips.size()
              << " clips; final loss " << last.mean.total;
    if (last.val_ade) std::cout << ", val ade " << *last.val_ade;
    std::cout << "\ncheckpoint written to " << out << "\n";
}

// ---- infer ----

void cmd_infer(const std::string& checkpoint, const std::string& clip_dir, int joint,
               uint64_t seed, const std::string& out) {
    LoadedModel lm = load_checkpoint(checkpoint);
    Clip clip = load_clip(clip_dir);
    require_joint(clip, joint);
    Forecast fc = lm.model->forecast(clip, joint, seed);

    int dims = lm.model->config().dims;
    json j;
    j["format_version"] = 1;
    j["clip"] = clip.id;
    j["joint"] = joint;
    j["joint_name"] = clip.joints[size_t(joint)].name;
    j["seed"] = seed;
    j["dims"] = dims;
    j["n_past"] = fc.n_past;
    j["n_future"] = fc.n_future;
    json rows = json::array();
    for (const Vec3& w : fc.waypoints) {
        json row = json::array();
        for (int c = 0; c < dims; ++c) row.push_back(w[size_t(c)]);
        rows.push_back(row);
    }
    j["waypoints"] = rows;
    j["states"] = fc.states;

    std::ofstream of(out);
    if (!of) throw IoError("cannot write " + out);
    of << j.dump(2) << "\n";
    std::cout << "forecast for " << clip.id << " joint " << joint << " written to " << out << "\n";
}

// ---- eval ----

void cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split,
              uint64_t seed, const std::vector<int>& joints, double threshold,
              const std::string& out) {
    LoadedModel lm = load_checkpoint(checkpoint);
    DatasetIndex index = load_dataset_index(data);
    std::vector<Clip> clips = load_split(index, split);
    if (clips.empty()) throw ValidationError("dataset " + data + " has no " + split + " split");

    EvalOptions opt;
    opt.seed = seed;
    opt.joints = joints;
    opt.threshold = threshold;
    EvalReport report = evaluate(*lm.model, clips, opt);
    write_report(report, out);

    for (const TargetReport& t : report.targets) {
        std::cout << t.joint_name << ": ade " << t.ade << " fde " << t.fde << " (cvh ade "
                  << t.cvh_ade << ")";
        if (t.transition_mae) std::cout << ", transition mae " << *t.transition_mae << " frames";
        std::cout << "\n";
    }
    std::cout << "report written to " << out << "\n";
}

// ---- gradcheck ----

void corrupt_loss(Tensor& loss, const ParamStore& ps) {
    // numeric differences see this detached term, the tape does not
    double v = ps.get("traj.l1.W").values()[0];
    loss = add(loss, Tensor::from_data({1}, {0.01 * v}));
}

int cmd_gradcheck(uint64_t seed, bool corrupt, double tol, const std::string& prefixes_csv) {
    ModelConfig cfg;
    cfg.f = 6;
    cfg.x = 4;
    cfg.d_state = 2;
    cfg.heads = 2;
    cfg.ffn_mult = 1;
    cfg.vox_c1 = 2;
    cfg.vox_c2 = 3;
    cfg.S = 8;
    cfg.hmf_steps = 3;
    cfg.dims = 3;
    cfg.joint_preset = "synth3";
    cfg.seed = seed;
    ParamStore ps(cfg.seed);
    UniHandModel model(ps, cfg);

    ScenarioConfig sc;
    sc.scenario = "reach";
    sc.frames = 10;
    std::vector<Clip> clips = {synth_clip(sc, seed, 0), synth_clip(sc, seed, 1)};

    Rng rng = Rng::from(seed, "gradcheck");
    std::vector<SampleDraws> draws;
    for (const Clip& c : clips) draws.push_back(draw_sample(model, c, rng));

    LossWeights w;
    auto loss_fn = [&]() {
        Tensor total = Tensor::zeros({1});
        for (size_t i = 0; i < clips.size(); ++i)
            total = add(total, sample_loss(model, clips[i], 0, w, draws[i]));
        total = scale(total, 1.0 / double(clips.size()));
        if (corrupt) corrupt_loss(total, ps);
        return total;
    };

    GradCheckReport report;
    if (prefixes_csv.empty()) {
        report = grad_check(loss_fn, ps, 1e-5, tol);
    } else {
        std::vector<std::string> prefixes;
        std::stringstream ss(prefixes_csv);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) prefixes.push_back(item);
        std::vector<Tensor> subset;
        for (const auto& [name, t] : ps.all())
            for (const std::string& p : prefixes)
                if (name.rfind(p, 0) == 0) {
                    subset.push_back(t);
                    break;
                }
        if (subset.empty()) throw ValidationError("no parameters match --params " + prefixes_csv);
        report = grad_check(loss_fn, subset, 1e-5, tol);
    }

    std::cout << (report.pass ? "PASS" : "FAIL") << ": max rel err " << report.max_rel_err
              << " at " << report.worst_param << " (tol " << tol << ")\n";
    return report.pass ? 0 : 1;
}

// ---- exports ----

Forecast forecast_from_files(const std::string& checkpoint, const std::string& clip_dir, int joint,
                             uint64_t seed, int* dims_out, std::string* clip_id) {
    LoadedModel lm = load_checkpoint(checkpoint);
    Clip clip = load_clip(clip_dir);
    require_joint(clip, joint);
    if (dims_out) *dims_out = lm.model->config().dims;
    if (clip_id) *clip_id = clip.id;
    return lm.model->forecast(clip, joint, seed);
}

void cmd_export_actions(const std::string& checkpoint, const std::string& clip_dir, int joint,
                        uint64_t seed, double threshold, const std::string& out) {
    int dims = 0;
    std::string id;
    Forecast fc = forecast_from_files(checkpoint, clip_dir, joint, seed, &dims, &id);
    ActionSchedule schedule = make_action_schedule(fc, dims, threshold);
    write_action_schedule(schedule, out);
    std::cout << "action schedule for " << id << ": " << schedule.waypoints.size()
              << " waypoints, " << schedule.events.size() << " gripper events -> " << out << "\n";
}

void cmd_export_features(const std::string& checkpoint, const std::string& clip_dir, int joint,
                         uint64_t seed, const std::string& out) {
    Forecast fc = forecast_from_files(checkpoint, clip_dir, joint, seed, nullptr, nullptr);
    export_hm_features(fc, out);
    std::cout << "hand-motion features [" << fc.n_future << " x "
              << fc.hm_future.shape()[1] << "] -> " << out << "\n";
}

// ---- plot-errors ----

void cmd_plot_errors(const std::string& report_path, int joint, const std::string& out) {
    EvalReport report = load_report(report_path);
    if (report.targets.empty()) throw ValidationError("report has no targets");
    const TargetReport* target = nullptr;
    if (joint < 0) {
        target = &report.targets.front();
    } else {
        for (const TargetReport& t : report.targets)
            if (t.joint == joint) target = &t;
        if (!target)
            throw ValidationError("report has no target with joint id " + std::to_string(joint));
    }
    write_error_curve_csv(target->curve, out);
    std::cout << "error curve for " << target->joint_name << " (" << target->curve.size()
              << " frames) -> " << out << "\n";
}

int run(int argc, char** argv) {
    CLI::App app{"uni-hand: hand-motion forecasting toolkit"};
    app.require_subcommand(1);

    std::string config, data, out, checkpoint, clip_dir, report_path, params_csv, split = "test";
    uint64_t seed = 1;
    int joint = 0, report_joint = -1;
    double threshold = 0.5, tol = 1e-4;
    std::vector<int> joints;
    bool corrupt = false;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic benchmark dataset");
    synth->add_option("--config", config, "scenario + counts JSON")->required();
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--out", out, "dataset directory")->required();

    CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
    train->add_option("--config", config, "{\"model\":..., \"training\":...} JSON")->required();
    train->add_option("--data", data, "dataset directory")->required();
    train->add_option("--seed", seed, "overrides the training seed");
    train->add_option("--out", out, "checkpoint directory")->required();

    CLI::App* infer = app.add_subcommand("infer", "forecast one clip");
    infer->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    infer->add_option("--clip", clip_dir, "clip directory")->required();
    infer->add_option("--joint", joint, "target joint index");
    infer->add_option("--seed", seed, "sampling seed");
    infer->add_option("--out", out, "forecast JSON path")->required();

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    eval->add_option("--data", data, "dataset directory")->required();
    eval->add_option("--split", split, "train | val | test");
    eval->add_option("--seed", seed, "sampling seed");
    eval->add_option("--joints", joints, "target joint indices (default: all)");
    eval->add_option("--threshold", threshold, "contact binarization threshold");
    eval->add_option("--out", out, "report JSON path")->required();

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient self-test");
    gradcheck->add_option("--seed", seed, "model + data seed");
    gradcheck->add_option("--tol", tol, "relative error tolerance");
    gradcheck->add_option("--params", params_csv,
                          "comma-separated name prefixes to check (default: all)");
    gradcheck->add_flag("--corrupt", corrupt, "corrupt the loss to prove the check can fail");

    CLI::App* actions = app.add_subcommand("export-actions", "export a robot action schedule");
    actions->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    actions->add_option("--clip", clip_dir, "clip directory")->required();
    actions->add_option("--joint", joint, "target joint index");
    actions->add_option("--seed", seed, "sampling seed");
    actions->add_option("--threshold", threshold, "contact binarization threshold");
    actions->add_option("--out", out, "schedule JSON path")->required();

    CLI::App* features = app.add_subcommand("export-features", "export future hand-motion latents");
    features->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    features->add_option("--clip", clip_dir, "clip directory")->required();
    features->add_option("--joint", joint, "target joint index");
    features->add_option("--seed", seed, "sampling seed");
    features->add_option("--out", out, "tensor file path")->required();

    CLI::App* plot = app.add_subcommand("plot-errors", "write a report's error-over-time CSV");
    plot->add_option("--report", report_path, "evaluation report JSON")->required();
    plot->add_option("--joint", report_joint, "joint id (default: first target)");
    plot->add_option("--out", out, "CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    }

    if (synth->parsed()) {
        cmd_synth(config, seed, out);
    } else if (train->parsed()) {
        cmd_train(config, data, out, train->count("--seed") > 0, seed);
    } else if (infer->parsed()) {
        cmd_infer(checkpoint, clip_dir, joint, seed, out);
    } else if (eval->parsed()) {
        cmd_eval(checkpoint, data, split, seed, joints, threshold, out);
    } else if (gradcheck->parsed()) {
        return cmd_gradcheck(seed, corrupt, tol, params_csv);
    } else if (actions->parsed()) {
        cmd_export_actions(checkpoint, clip_dir, joint, seed, threshold, out);
    } else if (features->parsed()) {
        cmd_export_features(checkpoint, clip_dir, joint, seed, out);
    } else if (plot->parsed()) {
        cmd_plot_errors(report_path, report_joint, out);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
