#include "unihand/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>

#include <json.hpp>

#include "unihand/rng.hpp"
#include "unihand/tensor_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace unihand {

// ---------------------------------------------------------------- joints

std::vector<JointSpec> joint_preset(const std::string& name) {
    if (name == "synth3")
        return {{0, "wrist", {0.0, 0.0, 0.0}},
                {4, "thumb_tip", {-0.050, 0.040, 0.015}},
                {8, "index_tip", {0.015, 0.090, 0.010}}};
    if (name == "mano5")
        return {{0, "wrist", {0.0, 0.0, 0.0}},
                {1, "thumb_base", {-0.030, 0.025, 0.008}},
                {4, "thumb_tip", {-0.050, 0.040, 0.015}},
                {5, "index_base", {0.008, 0.045, 0.006}},
                {8, "index_tip", {0.015, 0.090, 0.010}}};
    if (name == "umetrack5")
        return {{0, "wrist", {0.0, 0.0, 0.0}},
                {1, "thumb_base", {-0.030, 0.025, 0.008}},
                {5, "index_base", {0.008, 0.045, 0.006}},
                {6, "index_mid", {0.012, 0.068, 0.008}},
                {8, "index_tip", {0.015, 0.090, 0.010}}};
    throw ConfigError("unknown joint preset: " + name);
}

std::pair<int, int> split_frames(int frames, const SplitSpec& spec) {
    if (frames < 2) throw ValidationError("split needs at least 2 frames, got " +
                                          std::to_string(frames));
    int np;
    if (spec.forced_np) {
        np = *spec.forced_np;
        if (np < 1 || np > frames - 1)
            throw ValidationError("forced N_p " + std::to_string(np) + " out of range for " +
                                  std::to_string(frames) + " frames");
    } else {
        np = int(std::llround(double(frames) * spec.past_fraction));
        np = std::clamp(np, 1, frames - 1);
    }
    return {np, frames - np};
}

// ---------------------------------------------------------------- clip

void Clip::validate() const {
    if (frames < 2) throw ValidationError("clip " + id + ": needs >= 2 frames");
    if (dims != 2 && dims != 3)
        throw ValidationError("clip " + id + ": dims must be 2 or 3, got " + std::to_string(dims));
    if (joints.empty()) throw ValidationError("clip " + id + ": no joints");
    if (waypoints.size() != joints.size())
        throw ValidationError("clip " + id + ": waypoint tracks " +
                              std::to_string(waypoints.size()) + " != joints " +
                              std::to_string(joints.size()));
    for (const auto& track : waypoints)
        if (int(track.size()) != frames)
            throw ValidationError("clip " + id + ": waypoint track length mismatch");
    if (int(states.size()) != frames)
        throw ValidationError("clip " + id + ": states length mismatch");
    if (int(homographies.size()) != frames)
        throw ValidationError("clip " + id + ": homography count mismatch");
    for (size_t t = 0; t < homographies.size(); ++t)
        if (std::fabs(mat3_det(homographies[t])) <= 1e-9)
            throw ValidationError("clip " + id + ": singular homography at frame " +
                                  std::to_string(t));
    Mat3 h0 = homographies[0];
    Mat3 id3 = mat3_identity();
    for (int i = 0; i < 9; ++i)
        if (std::fabs(h0[size_t(i)] - id3[size_t(i)]) > 1e-9)
            throw ValidationError("clip " + id + ": first-frame homography is not identity");
    if (dims == 3 && int(poses.size()) != frames)
        throw ValidationError("clip " + id + ": poses required for 3D clips");
    for (const auto& pose : poses)
        if (rotation_orthonormality_error(pose) > 1e-6)
            throw ValidationError("clip " + id + ": pose rotation not orthonormal");
    if (!points.empty() && int(points.size()) != frames)
        throw ValidationError("clip " + id + ": point cloud frame count mismatch");
    if (arm_mask.size() != points.size())
        throw ValidationError("clip " + id + ": arm mask frame count mismatch");
    for (size_t t = 0; t < points.size(); ++t)
        if (arm_mask[t].size() != points[t].size())
            throw ValidationError("clip " + id + ": arm mask size mismatch at frame " +
                                  std::to_string(t));
    for (const auto& track : object_tracks)
        if (int(track.size()) != frames)
            throw ValidationError("clip " + id + ": object track length mismatch");
}

// ---------------------------------------------------------------- canvas

std::vector<CanvasPoint> to_first_frame_canvas_3d(const std::vector<Vec3>& local,
                                                  const std::vector<Mat4>& poses) {
    if (local.size() != poses.size())
        throw ValidationError("canvas transform: " + std::to_string(local.size()) +
                              " points vs " + std::to_string(poses.size()) + " poses");
    if (poses.empty()) return {};
    for (const auto& p : poses)
        if (rotation_orthonormality_error(p) > 1e-6)
            throw ValidationError("canvas transform: pose rotation not orthonormal");
    Mat4 first_inv = mat4_rigid_inverse(poses[0]);
    std::vector<CanvasPoint> out(local.size());
    for (size_t t = 0; t < local.size(); ++t) {
        out[t].p = mat4_apply_point(mat4_mul(first_inv, poses[t]), local[t]);
        out[t].valid = true;
    }
    return out;
}

std::vector<CanvasPoint> to_first_frame_canvas_2d(const std::vector<Vec3>& pixels,
                                                  const std::vector<Mat3>& homographies,
                                                  const Pinhole& camera) {
    if (pixels.size() != homographies.size())
        throw ValidationError("canvas transform: pixel/homography count mismatch");
    std::vector<CanvasPoint> out(pixels.size());
    for (size_t t = 0; t < pixels.size(); ++t) {
        if (std::fabs(mat3_det(homographies[t])) <= 1e-9)
            throw ValidationError("canvas transform: singular homography at frame " +
                                  std::to_string(t));
        double u, v, w;
        homography_apply(homographies[t], pixels[t][0], pixels[t][1], u, v, w);
        out[t].valid = w > 0.0;
        out[t].p = {u / double(camera.width), v / double(camera.height), 0.0};
    }
    return out;
}

std::vector<CanvasPoint> clip_canvas_waypoints(const Clip& clip, int joint_index) {
    if (joint_index < 0 || joint_index >= int(clip.waypoints.size()))
        throw ValidationError("joint index " + std::to_string(joint_index) + " out of range");
    if (clip.dims == 3) return to_first_frame_canvas_3d(clip.waypoints[size_t(joint_index)], clip.poses);
    return to_first_frame_canvas_2d(clip.waypoints[size_t(joint_index)], clip.homographies,
                                    clip.camera);
}

// ---------------------------------------------------------------- cvh

std::vector<Vec3> cvh_forecast(const std::vector<Vec3>& past, int n_future) {
    if (past.empty()) throw ValidationError("cvh: empty past");
    if (n_future < 0) throw ValidationError("cvh: negative horizon");
    Vec3 last = past.back();
    Vec3 v{0, 0, 0};
    if (past.size() >= 2) v = last - past[past.size() - 2];
    std::vector<Vec3> out(static_cast<size_t>(n_future));
    for (int t = 1; t <= n_future; ++t) out[size_t(t - 1)] = last + double(t) * v;
    return out;
}

// ---------------------------------------------------------------- synth

double min_jerk(double tau) {
    tau = std::clamp(tau, 0.0, 1.0);
    double t3 = tau * tau * tau;
    return 10.0 * t3 - 15.0 * t3 * tau + 6.0 * t3 * tau * tau;
}

int scenario_default_frames(const std::string& scenario) {
    if (scenario == "reach") return 10;
    if (scenario == "push") return 16;
    if (scenario == "pick_place") return 20;
    if (scenario == "language") return 10;
    if (scenario == "long_horizon") return 40;
    throw ConfigError("unknown scenario: " + scenario);
}

namespace {

struct Phase {
    double a = 0.0, b = 1.0;
    Vec3 p0{0, 0, 0}, p1{0, 0, 0};
    double z_arc = 0.0; // parabolic lift peaking mid-phase
};

Vec3 eval_phases(const std::vector<Phase>& phases, double tau) {
    const Phase* ph = &phases.front();
    for (const auto& p : phases)
        if (tau >= p.a) ph = &p;
    double local = (ph->b > ph->a) ? (tau - ph->a) / (ph->b - ph->a) : 1.0;
    double s = min_jerk(local);
    Vec3 p = ph->p0 + s * (ph->p1 - ph->p0);
    p[2] += ph->z_arc * 4.0 * s * (1.0 - s);
    return p;
}

struct ObjectPlan {
    std::string name;
    Vec3 base{0, 0, 0};
    double attach = -1.0, release = -1.0; // clip fractions; <0 = static
};

Vec3 object_pos(const ObjectPlan& o, double tau,
                const std::function<Vec3(double)>& hand) {
    if (o.attach < 0.0 || tau < o.attach) return o.base;
    if (o.release >= 0.0 && tau > o.release) return hand(o.release);
    return hand(tau);
}

// Clamps |b - a| in the xy plane into [lo, hi], keeping direction.
Vec3 clamp_distance_xy(const Vec3& a, Vec3 b, double lo, double hi) {
    Vec3 d = b - a;
    d[2] = 0.0;
    double l = norm(d);
    if (l < 1e-6) d = {lo, 0.0, 0.0}, l = lo;
    double target = std::clamp(l, lo, hi);
    Vec3 out = a + (target / l) * d;
    out[2] = b[2];
    return out;
}

struct ScenePlan {
    std::vector<Phase> phases;
    std::vector<ObjectPlan> objects;
    std::string task;
    int instructed = -1;
};

ScenePlan plan_scene(const ScenarioConfig& cfg, Rng& rng) {
    ScenePlan plan;
    auto u = [&](double lo, double hi) { return rng.uniform(lo, hi); };

    if (cfg.scenario == "reach") {
        Vec3 s0{u(-0.28, 0.28), u(-0.22, -0.06), u(0.05, 0.13)};
        Vec3 obj{u(-0.30, 0.30), u(0.04, 0.28), 0.02};
        obj = clamp_distance_xy(s0, obj, 0.30, 0.55);
        plan.phases = {{0.0, 1.0, s0, obj, 0.0}};
        plan.objects = {{"block", obj, -1.0, -1.0}};
    } else if (cfg.scenario == "push") {
        Vec3 s0{u(-0.24, 0.24), u(-0.22, -0.08), u(0.08, 0.12)};
        Vec3 obj{u(-0.20, 0.20), u(0.00, 0.12), 0.02};
        obj = clamp_distance_xy(s0, obj, 0.28, 0.48);
        Vec3 place{u(-0.12, 0.12), u(0.22, 0.30), 0.02};
        place = clamp_distance_xy(obj, place, 0.20, 0.38);
        Vec3 away{s0[0] * 0.6, s0[1] * 0.8, 0.13};
        plan.phases = {{0.0, 0.50, s0, obj, 0.0},
                       {0.50, 0.85, obj, place, 0.0},
                       {0.85, 1.0, place, away, 0.0}};
        plan.objects = {{"block", obj, 0.50, 0.85}, {"cloth", place, -1.0, -1.0}};
        plan.task = "push the block onto the cloth";
    } else if (cfg.scenario == "pick_place") {
        Vec3 s0{u(-0.26, 0.26), u(-0.22, -0.10), u(0.09, 0.13)};
        Vec3 obj{u(-0.30, 0.30), u(0.06, 0.30), 0.02};
        obj = clamp_distance_xy(s0, obj, 0.50, 0.68);
        Vec3 place{u(-0.14, 0.14), u(0.20, 0.30), 0.02};
        place = clamp_distance_xy(obj, place, 0.24, 0.42);
        // keep the drop point clear of the approach line so the only contact
        // before the grasp is the block itself
        {
            Vec3 ab = obj - s0, ap = place - s0;
            ab[2] = ap[2] = 0.0;
            double tp = std::clamp(dot(ap, ab) / std::max(dot(ab, ab), 1e-12), 0.0, 1.0);
            Vec3 close = s0 + tp * ab;
            Vec3 perp = place - close;
            perp[2] = 0.0;
            if (norm(perp) < 0.09) {
                Vec3 side = normalized(Vec3{-ab[1], ab[0], 0.0});
                if (dot(perp, side) < 0.0) side = -1.0 * side;
                place = Vec3{close[0], close[1], place[2]} + 0.09 * side;
            }
        }
        double reach_end = u(0.78, 0.86);
        double place_end = u(0.92, 0.96);
        Vec3 away{s0[0] * 0.5 + place[0] * 0.2, s0[1] * 0.7, 0.16};
        plan.phases = {{0.0, reach_end, s0, obj, 0.0},
                       {reach_end, place_end, obj, place, 0.07},
                       {place_end, 1.0, place, away, 0.0}};
        plan.objects = {{"block", obj, reach_end, place_end}, {"cloth", place, -1.0, -1.0}};
        plan.task = "put the block onto the cloth";
    } else if (cfg.scenario == "language") {
        Vec3 s0{u(-0.05, 0.05), u(-0.19, -0.13), 0.07};
        Vec3 blue{-0.22 + u(-0.04, 0.04), 0.08 + u(-0.04, 0.04), 0.02};
        Vec3 red{0.22 + u(-0.04, 0.04), 0.08 + u(-0.04, 0.04), 0.02};
        Vec3 cloth{u(-0.03, 0.03), 0.26 + u(-0.02, 0.02), 0.02};
        Vec3 hover = s0 + Vec3{u(-0.04, 0.04), u(-0.02, 0.04), 0.01};
        plan.instructed = rng.below(2) == 0 ? 0 : 1;
        Vec3 target = plan.instructed == 0 ? blue : red;
        plan.phases = {{0.0, 0.31, s0, hover, 0.0},
                       {0.31, 0.62, hover, s0, 0.0},
                       {0.62, 1.0, s0, target, 0.0}};
        plan.objects = {{"blue_block", blue, -1.0, -1.0},
                        {"red_block", red, -1.0, -1.0},
                        {"cloth", cloth, -1.0, -1.0}};
        plan.task = plan.instructed == 0 ? "put the blue block onto the cloth"
                                         : "put the red block onto the cloth";
    } else if (cfg.scenario == "long_horizon") {
        Vec3 s0{u(-0.06, 0.06), u(-0.22, -0.16), 0.10};
        Vec3 plate{0.02 + u(-0.02, 0.02), 0.29 + u(-0.02, 0.02), 0.02};
        Vec3 a{-0.26 + u(-0.03, 0.03), 0.02 + u(-0.03, 0.03), 0.02};
        Vec3 b{0.26 + u(-0.03, 0.03), 0.02 + u(-0.03, 0.03), 0.02};
        Vec3 c{u(-0.04, 0.04), -0.08 + u(-0.03, 0.03), 0.02};
        Vec3 pa = plate + Vec3{-0.065, 0.0, 0.0};
        Vec3 pb = plate + Vec3{0.065, 0.0, 0.0};
        Vec3 pc = plate + Vec3{0.0, 0.065, 0.0};
        Vec3 away{s0[0], s0[1] * 0.8, 0.16};
        plan.phases = {{0.00, 0.18, s0, a, 0.0},  {0.18, 0.30, a, pa, 0.06},
                       {0.30, 0.50, pa, b, 0.02}, {0.50, 0.62, b, pb, 0.06},
                       {0.62, 0.82, pb, c, 0.02}, {0.82, 0.94, c, pc, 0.06},
                       {0.94, 1.00, pc, away, 0.0}};
        plan.objects = {{"block", a, 0.18, 0.30},
                        {"toy", b, 0.50, 0.62},
                        {"banana", c, 0.82, 0.94},
                        {"plate", plate, -1.0, -1.0}};
        plan.task = "put the block, the toy, and the banana onto the plate";
    } else {
        throw ConfigError("unknown scenario: " + cfg.scenario);
    }
    return plan;
}

} // namespace

Clip synth_clip(const ScenarioConfig& cfg, uint64_t seed, int index) {
    const int frames = cfg.frames > 0 ? cfg.frames : scenario_default_frames(cfg.scenario);
    if (frames < 2) throw ConfigError("synth: frames must be >= 2");
    if (cfg.dims != 2 && cfg.dims != 3) throw ConfigError("synth: dims must be 2 or 3");

    Rng rng = Rng::from(seed, "clip:" + cfg.scenario, uint64_t(index));
    ScenePlan plan = plan_scene(cfg, rng);
    auto hand_at = [&plan](double tau) { return eval_phases(plan.phases, tau); };

    Clip clip;
    clip.scenario = cfg.scenario;
    clip.task = plan.task;
    clip.frames = frames;
    clip.dims = cfg.dims;
    clip.contact_eps = cfg.contact_eps;
    clip.joints = joint_preset(cfg.joint_preset);
    clip.instructed_object = plan.instructed;
    {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s_%llu_%04d", cfg.scenario.c_str(),
                      static_cast<unsigned long long>(seed), index);
        clip.id = buf;
    }

    // Head rig: eye drifts with the tracked point, which follows the hand
    // through critically damped second-order dynamics with a 150 ms time
    // constant. Frame period is 100 ms.
    Vec3 eye_base{0.0 + rng.uniform(-0.02, 0.02), -0.62 + rng.uniform(-0.02, 0.02),
                  0.48 + rng.uniform(-0.015, 0.015)};
    const Vec3 up{0, 0, 1};
    const double omega = 1.0 / 0.15;
    const double sub_dt = 0.01;
    const int substeps = 10;

    // World point sets sampled once per clip; per-frame clouds re-center the
    // object clusters and the arm stub.
    const int n_table = 140, n_obj = 14, n_arm = 22;
    std::vector<Vec3> table_pts(static_cast<size_t>(n_table));
    for (auto& p : table_pts)
        p = {rng.uniform(-0.42, 0.42), rng.uniform(-0.30, 0.40), 0.0};
    std::vector<std::vector<Vec3>> cluster_offsets(plan.objects.size());
    for (auto& offs : cluster_offsets) {
        offs.resize(static_cast<size_t>(n_obj));
        for (auto& o : offs)
            o = {0.018 * rng.normal(), 0.018 * rng.normal(), 0.012 * std::fabs(rng.normal())};
    }
    std::vector<Vec3> arm_offsets(static_cast<size_t>(n_arm));
    for (size_t i = 0; i < arm_offsets.size(); ++i) {
        double along = 0.35 * double(i + 1) / double(n_arm);
        arm_offsets[i] = Vec3{0.0, -along, 0.30 * along} +
                         Vec3{0.012 * rng.normal(), 0.012 * rng.normal(), 0.012 * rng.normal()};
    }

    // Per-frame observation noise drawn up front so the draw order stays
    // fixed regardless of dims.
    std::vector<Vec3> wp_noise(size_t(frames) * clip.joints.size(), Vec3{0, 0, 0});
    if (cfg.waypoint_noise > 0.0)
        for (auto& n : wp_noise)
            n = {cfg.waypoint_noise * rng.normal(), cfg.waypoint_noise * rng.normal(),
                 cfg.waypoint_noise * rng.normal()};

    std::function<Vec3(double)> hand_fn = hand_at;

    Vec3 tracked = hand_at(0.0);
    Vec3 tracked0 = tracked;
    Vec3 tvel{0, 0, 0};

    std::vector<Mat4> world_from_cam(static_cast<size_t>(frames));
    std::vector<Vec3> hand_world(static_cast<size_t>(frames));
    std::vector<std::vector<Vec3>> obj_world(plan.objects.size(),
                                             std::vector<Vec3>(size_t(frames)));
    for (int t = 0; t < frames; ++t) {
        double tau = frames > 1 ? double(t) / double(frames - 1) : 0.0;
        hand_world[size_t(t)] = hand_at(tau);
        for (size_t o = 0; o < plan.objects.size(); ++o)
            obj_world[o][size_t(t)] = object_pos(plan.objects[o], tau, hand_fn);

        if (cfg.static_head) {
            world_from_cam[size_t(t)] = look_at(eye_base, Vec3{0.0, 0.05, 0.02}, up);
        } else {
            if (t > 0) {
                Vec3 goal = hand_world[size_t(t)];
                for (int s = 0; s < substeps; ++s) {
                    Vec3 acc = omega * omega * (goal - tracked) - 2.0 * omega * tvel;
                    tvel = tvel + sub_dt * acc;
                    tracked = tracked + sub_dt * tvel;
                }
            }
            Vec3 drift = tracked - tracked0;
            Vec3 eye{eye_base[0] + 0.25 * drift[0], eye_base[1] + 0.25 * drift[1],
                     eye_base[2] + 0.10 * drift[2]};
            world_from_cam[size_t(t)] = look_at(eye, tracked + Vec3{0, 0, 0.02}, up);
        }
    }

    Mat4 first_from_world = mat4_rigid_inverse(world_from_cam[0]);

    clip.poses.resize(size_t(frames));
    clip.homographies.resize(size_t(frames));
    clip.states.assign(size_t(frames), 0);
    clip.waypoints.assign(clip.joints.size(), std::vector<Vec3>(size_t(frames)));
    clip.points.resize(size_t(frames));
    clip.arm_mask.resize(size_t(frames));
    clip.object_names.clear();
    for (const auto& o : plan.objects) clip.object_names.push_back(o.name);
    clip.object_tracks.assign(plan.objects.size(), std::vector<Vec3>(size_t(frames)));

    const Vec3 plane_n_world{0, 0, 1};
    for (int t = 0; t < frames; ++t) {
        const Mat4& wc = world_from_cam[size_t(t)];
        Mat4 cam_from_world = mat4_rigid_inverse(wc);
        Mat4 pose = (t == 0) ? mat4_identity() : mat4_mul(first_from_world, wc);
        clip.poses[size_t(t)] = pose;

        if (t == 0 || cfg.static_head) {
            clip.homographies[size_t(t)] = mat3_identity();
        } else {
            Mat3 r_wc = mat4_rotation(wc);
            Mat3 r_cw = {r_wc[0], r_wc[3], r_wc[6], r_wc[1], r_wc[4],
                         r_wc[7], r_wc[2], r_wc[5], r_wc[8]};
            Vec3 n_cam = mat3_apply(r_cw, plane_n_world);
            double d_cam = -dot(plane_n_world, mat4_translation(wc));
            clip.homographies[size_t(t)] = plane_homography(clip.camera, pose, n_cam, d_cam);
        }

        // contact: the true hand against the nearest object
        double min_dist = 1e9;
        for (size_t o = 0; o < plan.objects.size(); ++o)
            min_dist = std::min(min_dist, norm(hand_world[size_t(t)] - obj_world[o][size_t(t)]));
        clip.states[size_t(t)] = min_dist < cfg.contact_eps ? 1 : 0;

        for (size_t j = 0; j < clip.joints.size(); ++j) {
            Vec3 joint_w = hand_world[size_t(t)] + clip.joints[j].offset +
                           wp_noise[size_t(t) * clip.joints.size() + j];
            Vec3 local = mat4_apply_point(cam_from_world, joint_w);
            if (cfg.dims == 3) {
                clip.waypoints[j][size_t(t)] = local;
            } else {
                double u = 0, v = 0;
                if (!pinhole_project(clip.camera, local, u, v))
                    throw ValidationError("synth: joint behind camera at frame " +
                                          std::to_string(t));
                clip.waypoints[j][size_t(t)] = {u, v, 0.0};
            }
        }

        auto& pts = clip.points[size_t(t)];
        auto& mask = clip.arm_mask[size_t(t)];
        pts.reserve(size_t(n_table + n_obj * int(plan.objects.size()) + n_arm));
        for (const auto& p : table_pts) {
            pts.push_back(mat4_apply_point(cam_from_world, p));
            mask.push_back(0);
        }
        for (size_t o = 0; o < plan.objects.size(); ++o)
            for (const auto& off : cluster_offsets[o]) {
                pts.push_back(mat4_apply_point(cam_from_world, obj_world[o][size_t(t)] + off));
                mask.push_back(0);
            }
        for (const auto& off : arm_offsets) {
            pts.push_back(mat4_apply_point(cam_from_world, hand_world[size_t(t)] + off));
            mask.push_back(1);
        }

        for (size_t o = 0; o < plan.objects.size(); ++o)
            clip.object_tracks[o][size_t(t)] =
                mat4_apply_point(first_from_world, obj_world[o][size_t(t)]);
    }

    if (cfg.dims == 2) {
        // a planar recording carries no depth-side sensor data; tracks stay
        // (they are labels, not observations)
        clip.poses.clear();
        clip.points.clear();
        clip.arm_mask.clear();
    }

    clip.validate();
    return clip;
}

// ---------------------------------------------------------------- disk

namespace {

Tensor vec3s_to_tensor(const std::vector<Vec3>& v, int dims) {
    std::vector<double> data;
    data.reserve(v.size() * size_t(dims));
    for (const auto& p : v)
        for (int d = 0; d < dims; ++d) data.push_back(p[size_t(d)]);
    return Tensor::from_data({int(v.size()), dims}, std::move(data));
}

} // namespace

void save_clip(const std::string& dir, const Clip& clip) {
    clip.validate();
    fs::create_directories(dir);

    json manifest;
    manifest["format_version"] = 1;
    manifest["id"] = clip.id;
    manifest["scenario"] = clip.scenario;
    manifest["task"] = clip.task;
    manifest["frames"] = clip.frames;
    manifest["dims"] = clip.dims;
    manifest["image"] = {{"width", clip.camera.width}, {"height", clip.camera.height}};
    manifest["intrinsics"] = {{"fx", clip.camera.fx},
                              {"fy", clip.camera.fy},
                              {"cx", clip.camera.cx},
                              {"cy", clip.camera.cy}};
    manifest["contact_eps"] = clip.contact_eps;
    manifest["instructed_object"] = clip.instructed_object;
    json joints = json::array();
    for (const auto& j : clip.joints)
        joints.push_back({{"id", j.id},
                          {"name", j.name},
                          {"offset", {j.offset[0], j.offset[1], j.offset[2]}}});
    manifest["joints"] = joints;
    manifest["objects"] = clip.object_names;

    json files;
    files["waypoints"] = "waypoints.uhnd";
    files["states"] = "states.uhnd";
    files["homographies"] = "homographies.uhnd";
    if (!clip.poses.empty()) files["poses"] = "poses.uhnd";
    if (!clip.object_tracks.empty()) files["objects"] = "objects.uhnd";
    if (!clip.points.empty()) {
        files["points_pattern"] = "points_%04d.uhnd";
        files["arm_pattern"] = "arm_%04d.uhnd";
    }
    manifest["files"] = files;

    {
        std::ofstream os(dir + "/manifest.json");
        if (!os) throw IoError("cannot write " + dir + "/manifest.json");
        os << manifest.dump(2) << "\n";
    }

    {
        std::vector<double> wp;
        wp.reserve(clip.waypoints.size() * size_t(clip.frames) * size_t(clip.dims));
        for (const auto& track : clip.waypoints)
            for (const auto& p : track)
                for (int d = 0; d < clip.dims; ++d) wp.push_back(p[size_t(d)]);
        save_raw(dir + "/waypoints.uhnd",
                 {int(clip.waypoints.size()), clip.frames, clip.dims}, wp);
    }
    {
        std::vector<double> st(clip.states.begin(), clip.states.end());
        save_raw(dir + "/states.uhnd", {clip.frames}, st);
    }
    {
        std::vector<double> h;
        for (const auto& m : clip.homographies) h.insert(h.end(), m.begin(), m.end());
        save_raw(dir + "/homographies.uhnd", {clip.frames, 3, 3}, h);
    }
    if (!clip.poses.empty()) {
        std::vector<double> p;
        for (const auto& m : clip.poses) p.insert(p.end(), m.begin(), m.end());
        save_raw(dir + "/poses.uhnd", {clip.frames, 4, 4}, p);
    }
    if (!clip.object_tracks.empty()) {
        std::vector<double> ob;
        for (const auto& track : clip.object_tracks)
            for (const auto& p : track) ob.insert(ob.end(), p.begin(), p.end());
        save_raw(dir + "/objects.uhnd", {int(clip.object_tracks.size()), clip.frames, 3}, ob);
    }
    char buf[64];
    for (int t = 0; t < int(clip.points.size()); ++t) {
        std::snprintf(buf, sizeof(buf), "/points_%04d.uhnd", t);
        save_tensor(dir + buf, vec3s_to_tensor(clip.points[size_t(t)], 3));
        std::snprintf(buf, sizeof(buf), "/arm_%04d.uhnd", t);
        std::vector<double> m(clip.arm_mask[size_t(t)].begin(), clip.arm_mask[size_t(t)].end());
        save_raw(dir + buf, {int(m.size())}, m);
    }
}

Clip load_clip(const std::string& dir) {
    std::ifstream is(dir + "/manifest.json");
    if (!is) throw IoError("cannot open " + dir + "/manifest.json");
    json manifest;
    try {
        is >> manifest;
    } catch (const json::exception& e) {
        throw IoError("bad clip manifest " + dir + ": " + e.what());
    }

    auto need = [&](const char* key) -> const json& {
        if (!manifest.contains(key))
            throw ValidationError("clip manifest missing field: " + std::string(key));
        return manifest[key];
    };

    Clip clip;
    clip.source_dir = dir;
    clip.id = need("id").get<std::string>();
    clip.scenario = manifest.value("scenario", "");
    clip.task = manifest.value("task", "");
    clip.frames = need("frames").get<int>();
    clip.dims = need("dims").get<int>();
    clip.contact_eps = manifest.value("contact_eps", 0.03);
    clip.instructed_object = manifest.value("instructed_object", -1);
    if (manifest.contains("image")) {
        clip.camera.width = manifest["image"].value("width", 640);
        clip.camera.height = manifest["image"].value("height", 480);
    }
    if (manifest.contains("intrinsics")) {
        clip.camera.fx = manifest["intrinsics"].value("fx", 300.0);
        clip.camera.fy = manifest["intrinsics"].value("fy", 300.0);
        clip.camera.cx = manifest["intrinsics"].value("cx", 320.0);
        clip.camera.cy = manifest["intrinsics"].value("cy", 240.0);
    }
    for (const auto& j : need("joints")) {
        JointSpec spec;
        spec.id = j.at("id").get<int>();
        spec.name = j.value("name", "");
        auto off = j.value("offset", std::vector<double>{0, 0, 0});
        for (int d = 0; d < 3 && d < int(off.size()); ++d) spec.offset[size_t(d)] = off[size_t(d)];
        clip.joints.push_back(spec);
    }
    if (manifest.contains("objects"))
        clip.object_names = manifest["objects"].get<std::vector<std::string>>();

    const json& files = need("files");
    auto file_of = [&](const char* key) -> std::string {
        if (!files.contains(key))
            throw ValidationError("clip manifest missing field: files." + std::string(key));
        return dir + "/" + files[key].get<std::string>();
    };

    {
        auto [shape, data] = load_raw(file_of("waypoints"));
        if (shape.size() != 3 || shape[0] != int(clip.joints.size()) || shape[1] != clip.frames ||
            shape[2] != clip.dims)
            throw ValidationError("clip " + clip.id + ": waypoint tensor shape " +
                                  shape_str(shape) + " inconsistent with manifest");
        clip.waypoints.assign(clip.joints.size(), std::vector<Vec3>(size_t(clip.frames)));
        size_t k = 0;
        for (auto& track : clip.waypoints)
            for (auto& p : track) {
                for (int d = 0; d < clip.dims; ++d) p[size_t(d)] = data[k++];
                if (clip.dims == 2) p[2] = 0.0;
            }
    }
    {
        auto [shape, data] = load_raw(file_of("states"));
        if (shape.size() != 1 || shape[0] != clip.frames)
            throw ValidationError("clip " + clip.id + ": states tensor shape mismatch");
        clip.states.resize(size_t(clip.frames));
        for (int t = 0; t < clip.frames; ++t) clip.states[size_t(t)] = data[size_t(t)] != 0.0;
    }
    {
        auto [shape, data] = load_raw(file_of("homographies"));
        if (shape.size() != 3 || shape[0] != clip.frames || shape[1] != 3 || shape[2] != 3)
            throw ValidationError("clip " + clip.id + ": homography tensor shape mismatch");
        clip.homographies.resize(size_t(clip.frames));
        for (int t = 0; t < clip.frames; ++t)
            std::copy_n(data.begin() + size_t(t) * 9, 9, clip.homographies[size_t(t)].begin());
    }
    if (files.contains("poses")) {
        auto [shape, data] = load_raw(file_of("poses"));
        if (shape.size() != 3 || shape[0] != clip.frames || shape[1] != 4 || shape[2] != 4)
            throw ValidationError("clip " + clip.id + ": pose tensor shape mismatch");
        clip.poses.resize(size_t(clip.frames));
        for (int t = 0; t < clip.frames; ++t)
            std::copy_n(data.begin() + size_t(t) * 16, 16, clip.poses[size_t(t)].begin());
    } else if (clip.dims == 3) {
        throw ValidationError("clip manifest missing field: files.poses (required for 3D)");
    }
    if (files.contains("objects")) {
        auto [shape, data] = load_raw(file_of("objects"));
        if (shape.size() != 3 || shape[1] != clip.frames || shape[2] != 3)
            throw ValidationError("clip " + clip.id + ": object tensor shape mismatch");
        clip.object_tracks.assign(size_t(shape[0]), std::vector<Vec3>(size_t(clip.frames)));
        size_t k = 0;
        for (auto& track : clip.object_tracks)
            for (auto& p : track)
                for (int d = 0; d < 3; ++d) p[size_t(d)] = data[k++];
    }
    if (files.contains("points_pattern")) {
        std::string pat = files["points_pattern"].get<std::string>();
        std::string arm_pat = files.contains("arm_pattern")
                                  ? files["arm_pattern"].get<std::string>()
                                  : std::string();
        clip.points.resize(size_t(clip.frames));
        clip.arm_mask.resize(size_t(clip.frames));
        char buf[128];
        for (int t = 0; t < clip.frames; ++t) {
            std::snprintf(buf, sizeof(buf), pat.c_str(), t);
            auto [shape, data] = load_raw(dir + "/" + buf);
            if (shape.size() != 2 || shape[1] != 3)
                throw ValidationError("clip " + clip.id + ": point tensor shape mismatch");
            auto& pts = clip.points[size_t(t)];
            pts.resize(size_t(shape[0]));
            for (int i = 0; i < shape[0]; ++i)
                pts[size_t(i)] = {data[size_t(i) * 3], data[size_t(i) * 3 + 1],
                                  data[size_t(i) * 3 + 2]};
            if (arm_pat.empty()) {
                clip.arm_mask[size_t(t)].assign(pts.size(), 0);
            } else {
                std::snprintf(buf, sizeof(buf), arm_pat.c_str(), t);
                auto [ashape, adata] = load_raw(dir + "/" + buf);
                if (ashape.size() != 1 || ashape[0] != shape[0])
                    throw ValidationError("clip " + clip.id + ": arm mask shape mismatch");
                auto& mask = clip.arm_mask[size_t(t)];
                mask.resize(size_t(ashape[0]));
                for (int i = 0; i < ashape[0]; ++i) mask[size_t(i)] = adata[size_t(i)] != 0.0;
            }
        }
    }

    clip.validate();
    return clip;
}

std::vector<std::string> DatasetIndex::dirs(const std::string& split) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
        if (e.split == split) out.push_back(root + "/" + e.dir);
    return out;
}

void save_dataset_index(const std::string& root, const DatasetIndex& index) {
    fs::create_directories(root);
    json j;
    j["format_version"] = 1;
    j["scenario"] = index.scenario;
    json clips = json::array();
    for (const auto& e : index.entries) clips.push_back({{"dir", e.dir}, {"split", e.split}});
    j["clips"] = clips;
    std::ofstream os(root + "/index.json");
    if (!os) throw IoError("cannot write " + root + "/index.json");
    os << j.dump(2) << "\n";
}

DatasetIndex load_dataset_index(const std::string& root) {
    std::ifstream is(root + "/index.json");
    if (!is) throw IoError("cannot open " + root + "/index.json");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw IoError("bad dataset index " + root + ": " + e.what());
    }
    DatasetIndex index;
    index.root = root;
    index.scenario = j.value("scenario", "");
    if (!j.contains("clips")) throw ValidationError("dataset index missing field: clips");
    for (const auto& c : j["clips"]) {
        DatasetEntry e;
        e.dir = c.at("dir").get<std::string>();
        e.split = c.value("split", "train");
        index.entries.push_back(e);
    }
    return index;
}

DatasetIndex synth_dataset(const ScenarioConfig& cfg, uint64_t seed, const DatasetCounts& counts,
                           const std::string& root) {
    DatasetIndex index;
    index.root = root;
    index.scenario = cfg.scenario;
    int n = 0;
    auto emit = [&](const std::string& split, int count) {
        for (int i = 0; i < count; ++i, ++n) {
            Clip clip = synth_clip(cfg, seed, n);
            char buf[32];
            std::snprintf(buf, sizeof(buf), "clip_%04d", n);
            save_clip(root + "/" + buf, clip);
            index.entries.push_back({buf, split});
        }
    };
    emit("train", counts.train);
    emit("val", counts.val);
    emit("test", counts.test);
    save_dataset_index(root, index);
    return index;
}

std::pair<ScenarioConfig, DatasetCounts> synth_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("synth config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("synth config: expected a JSON object");

    ScenarioConfig cfg;
    DatasetCounts counts;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "scenario") cfg.scenario = value.get<std::string>();
            else if (key == "frames") cfg.frames = value.get<int>();
            else if (key == "dims") cfg.dims = value.get<int>();
            else if (key == "contact_eps") cfg.contact_eps = value.get<double>();
            else if (key == "static_head") cfg.static_head = value.get<bool>();
            else if (key == "joint_preset") cfg.joint_preset = value.get<std::string>();
            else if (key == "waypoint_noise") cfg.waypoint_noise = value.get<double>();
            else if (key == "counts") {
                for (const auto& [ck, cv] : value.items()) {
                    if (ck == "train") counts.train = cv.get<int>();
                    else if (ck == "val") counts.val = cv.get<int>();
                    else if (ck == "test") counts.test = cv.get<int>();
                    else throw ConfigError("synth config: unknown counts key \"" + ck + "\"");
                }
            } else {
                throw ConfigError("synth config: unknown key \"" + key + "\"");
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("synth config: ") + e.what());
    }
    if (counts.train < 0 || counts.val < 0 || counts.test < 0)
        throw ConfigError("synth config: counts must be non-negative");
    if (counts.train + counts.val + counts.test < 1)
        throw ConfigError("synth config: at least one clip requested");
    return {cfg, counts};
}

std::string synth_config_to_json(const ScenarioConfig& cfg, const DatasetCounts& counts) {
    json j;
    j["scenario"] = cfg.scenario;
    j["frames"] = cfg.frames;
    j["dims"] = cfg.dims;
    j["contact_eps"] = cfg.contact_eps;
    j["static_head"] = cfg.static_head;
    j["joint_preset"] = cfg.joint_preset;
    j["waypoint_noise"] = cfg.waypoint_noise;
    j["counts"] = {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}};
    return j.dump(2);
}

} // namespace unihand
