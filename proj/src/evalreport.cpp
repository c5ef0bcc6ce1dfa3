#include "unihand/evalreport.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "unihand/errors.hpp"
#include "unihand/tensor_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace unihand {

// ------------------------------------------------------------- metrics

namespace {

void check_lengths(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
    if (pred.empty()) throw ValidationError("displacement metric: empty trajectory");
    if (pred.size() != gt.size())
        throw ValidationError("displacement metric: length mismatch (" +
                              std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) +
                              ")");
}

} // namespace

std::vector<double> error_curve(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
    check_lengths(pred, gt);
    std::vector<double> out(pred.size());
    for (size_t t = 0; t < pred.size(); ++t) out[t] = norm(pred[t] - gt[t]);
    return out;
}

double ade(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
    auto e = error_curve(pred, gt);
    double s = 0.0;
    for (double x : e) s += x;
    return s / double(e.size());
}

double fde(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
    check_lengths(pred, gt);
    return norm(pred.back() - gt.back());
}

std::vector<Transition> extract_transitions(const std::vector<double>& probs, double threshold) {
    std::vector<Transition> out;
    bool prev = false; // virtual leading 0
    for (size_t t = 0; t < probs.size(); ++t) {
        bool cur = probs[t] > threshold;
        if (cur != prev)
            out.push_back({int(t) + 1,
                           cur ? TransitionKind::contact : TransitionKind::separation});
        prev = cur;
    }
    return out;
}

std::optional<double> mae_transitions(const std::vector<double>& pred,
                                      const std::vector<double>& gt, int penalty_frames,
                                      double threshold) {
    auto pt = extract_transitions(pred, threshold);
    auto gtt = extract_transitions(gt, threshold);
    if (gtt.empty()) return std::nullopt;

    auto frames_of = [](const std::vector<Transition>& ts, TransitionKind k) {
        std::vector<int> out;
        for (const auto& t : ts)
            if (t.kind == k) out.push_back(t.frame);
        return out;
    };

    double sum = 0.0;
    int terms = 0;
    for (TransitionKind k : {TransitionKind::contact, TransitionKind::separation}) {
        auto pf = frames_of(pt, k);
        auto gf = frames_of(gtt, k);
        size_t matched = std::min(pf.size(), gf.size());
        for (size_t i = 0; i < matched; ++i) sum += std::abs(pf[i] - gf[i]);
        size_t unmatched = pf.size() + gf.size() - 2 * matched;
        sum += double(penalty_frames) * double(unmatched);
        terms += int(matched + unmatched);
    }
    return sum / double(terms);
}

// ------------------------------------------------------------- evaluate

namespace {

std::vector<Vec3> canvas_range(const Clip& clip, int joint, int r0, int r1) {
    auto canvas = clip_canvas_waypoints(clip, joint);
    std::vector<Vec3> out;
    out.reserve(size_t(r1 - r0));
    for (int t = r0; t < r1; ++t) {
        if (!canvas[size_t(t)].valid)
            throw ValidationError("clip " + clip.id + ": ground-truth waypoint at frame " +
                                  std::to_string(t) + " leaves the canvas");
        out.push_back(canvas[size_t(t)].p);
    }
    return out;
}

} // namespace

EvalReport evaluate(const UniHandModel& model, const std::vector<Clip>& clips,
                    const EvalOptions& opt) {
    if (clips.empty()) throw ValidationError("evaluate: no clips");
    const ModelConfig& cfg = model.config();

    std::vector<int> joints = opt.joints;
    if (joints.empty()) {
        joints.resize(size_t(cfg.num_joints()));
        for (size_t i = 0; i < joints.size(); ++i) joints[i] = int(i);
    }

    int frames = clips.front().frames;
    for (const auto& c : clips)
        if (c.frames != frames)
            throw ValidationError("evaluate: clips mix frame counts (" + std::to_string(frames) +
                                  " vs " + std::to_string(c.frames) + " in " + c.id + ")");

    EvalReport report;
    report.clips = int(clips.size());
    report.dims = cfg.dims;
    report.seed = opt.seed;
    report.config_json = config_to_json(cfg);

    auto presets = joint_preset(cfg.joint_preset);
    for (int joint : joints) {
        if (joint < 0 || joint >= int(presets.size()))
            throw ValidationError("evaluate: joint index " + std::to_string(joint) +
                                  " outside the preset");
        TargetReport tr;
        tr.joint = joint;
        tr.joint_name = presets[size_t(joint)].name;

        double mae_sum = 0.0;
        int mae_count = 0;
        for (const auto& clip : clips) {
            Forecast fc = model.forecast(clip, joint, opt.seed);
            report.n_past = fc.n_past;
            report.n_future = fc.n_future;
            auto gt = canvas_range(clip, joint, fc.n_past, fc.n_past + fc.n_future);
            auto past = canvas_range(clip, joint, 0, fc.n_past);

            tr.ade += ade(fc.waypoints, gt);
            tr.fde += fde(fc.waypoints, gt);
            auto curve = error_curve(fc.waypoints, gt);
            if (tr.curve.empty()) tr.curve.assign(curve.size(), 0.0);
            for (size_t t = 0; t < curve.size(); ++t) tr.curve[t] += curve[t];

            auto cvh = cvh_forecast(past, fc.n_future);
            tr.cvh_ade += ade(cvh, gt);
            tr.cvh_fde += fde(cvh, gt);

            std::vector<double> gt_states(clip.states.begin() + fc.n_past, clip.states.end());
            if (auto m = mae_transitions(fc.states, gt_states, fc.n_future, opt.threshold)) {
                mae_sum += *m;
                ++mae_count;
            }
            ++tr.clips;
        }
        double n = double(tr.clips);
        tr.ade /= n;
        tr.fde /= n;
        tr.cvh_ade /= n;
        tr.cvh_fde /= n;
        for (auto& x : tr.curve) x /= n;
        if (mae_count > 0) tr.transition_mae = mae_sum / double(mae_count);
        report.targets.push_back(std::move(tr));
    }
    return report;
}

// ------------------------------------------------------------- report io

namespace {

json target_to_json(const TargetReport& t) {
    json j;
    j["joint"] = t.joint;
    j["joint_name"] = t.joint_name;
    j["clips"] = t.clips;
    j["ade"] = t.ade;
    j["fde"] = t.fde;
    j["cvh_ade"] = t.cvh_ade;
    j["cvh_fde"] = t.cvh_fde;
    if (t.transition_mae)
        j["transition_mae_frames"] = *t.transition_mae;
    else
        j["transition_mae_frames"] = nullptr;
    j["curve"] = t.curve;
    return j;
}

TargetReport target_from_json(const json& j) {
    TargetReport t;
    t.joint = j.at("joint").get<int>();
    t.joint_name = j.at("joint_name").get<std::string>();
    t.clips = j.at("clips").get<int>();
    t.ade = j.at("ade").get<double>();
    t.fde = j.at("fde").get<double>();
    t.cvh_ade = j.at("cvh_ade").get<double>();
    t.cvh_fde = j.at("cvh_fde").get<double>();
    if (!j.at("transition_mae_frames").is_null())
        t.transition_mae = j.at("transition_mae_frames").get<double>();
    t.curve = j.at("curve").get<std::vector<double>>();
    return t;
}

} // namespace

std::string report_to_json(const EvalReport& r) {
    json j;
    j["format_version"] = r.format_version;
    j["clips"] = r.clips;
    j["n_past"] = r.n_past;
    j["n_future"] = r.n_future;
    j["dims"] = r.dims;
    j["seed"] = r.seed;
    j["mae_units"] = "frames";
    json targets = json::array();
    for (const auto& t : r.targets) targets.push_back(target_to_json(t));
    j["targets"] = targets;
    j["config"] = json::parse(r.config_json);
    return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
    try {
        json j = json::parse(text);
        EvalReport r;
        r.format_version = j.at("format_version").get<int>();
        if (r.format_version != 1)
            throw IoError("unsupported report format_version " +
                          std::to_string(r.format_version));
        r.clips = j.at("clips").get<int>();
        r.n_past = j.at("n_past").get<int>();
        r.n_future = j.at("n_future").get<int>();
        r.dims = j.at("dims").get<int>();
        r.seed = j.at("seed").get<uint64_t>();
        for (const auto& t : j.at("targets")) r.targets.push_back(target_from_json(t));
        r.config_json = j.at("config").dump(2);
        return r;
    } catch (const json::exception& e) {
        throw IoError(std::string("bad report json: ") + e.what());
    }
}

void write_report(const EvalReport& report, const std::string& path) {
    fs::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << report_to_json(report) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

EvalReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return report_from_json(ss.str());
}

void write_error_curve_csv(const std::vector<double>& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "frame,mean_error\n";
    out.precision(17);
    for (size_t t = 0; t < curve.size(); ++t) out << (t + 1) << "," << curve[t] << "\n";
    if (!out) throw IoError("write failed: " + path);
}

// ------------------------------------------------------------- schedules

ActionSchedule make_action_schedule(const Forecast& fc, int dims, double threshold) {
    if (dims != 3)
        throw ValidationError("action schedules need a 3-D trajectory (got dims=" +
                              std::to_string(dims) + ")");
    ActionSchedule s;
    s.waypoints = fc.waypoints;
    for (const auto& t : extract_transitions(fc.states, threshold))
        s.events.push_back({t.frame, t.kind == TransitionKind::contact ? "close" : "open"});
    return s;
}

std::string schedule_to_json(const ActionSchedule& s) {
    json j;
    j["format_version"] = s.format_version;
    json wps = json::array();
    for (const auto& w : s.waypoints) wps.push_back({w[0], w[1], w[2]});
    j["waypoints"] = wps;
    json evs = json::array();
    for (const auto& e : s.events) evs.push_back({{"frame", e.frame}, {"action", e.action}});
    j["gripper_events"] = evs;
    return j.dump(2);
}

void write_action_schedule(const ActionSchedule& schedule, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << schedule_to_json(schedule) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

void export_hm_features(const Forecast& fc, const std::string& path) {
    save_tensor(path, fc.hm_future, Dtype::f64);
}

} // namespace unihand
