#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "unihand/data.hpp"
#include "unihand/geometry.hpp"
#include "unihand/rng.hpp"

using namespace unihand;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
    auto dir = fs::temp_directory_path() / ("unihand_data_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

// contact intervals as (first contact frame, first release frame), 0-based;
// open intervals run to frames
std::vector<std::pair<int, int>> intervals(const std::vector<uint8_t>& states) {
    std::vector<std::pair<int, int>> out;
    int open = -1;
    for (int t = 0; t < int(states.size()); ++t) {
        if (states[size_t(t)] && open < 0) open = t;
        if (!states[size_t(t)] && open >= 0) {
            out.emplace_back(open, t);
            open = -1;
        }
    }
    if (open >= 0) out.emplace_back(open, int(states.size()));
    return out;
}

Vec3 canvas_of(const Clip& clip, int joint, int t) {
    return clip_canvas_waypoints(clip, joint)[size_t(t)].p;
}

} // namespace

TEST_CASE("min jerk endpoints, midpoint, monotone") {
    CHECK(min_jerk(0.0) == 0.0);
    CHECK(min_jerk(1.0) == 1.0);
    CHECK(min_jerk(0.5) == doctest::Approx(0.5).epsilon(1e-12));
    // zero velocity at both ends (forward differences)
    CHECK(min_jerk(1e-4) / 1e-4 < 1e-6);
    CHECK((1.0 - min_jerk(1.0 - 1e-4)) / 1e-4 < 1e-6);
    double prev = 0.0;
    for (int i = 1; i <= 100; ++i) {
        double s = min_jerk(double(i) / 100.0);
        CHECK(s >= prev);
        prev = s;
    }
    CHECK(min_jerk(-0.5) == 0.0);
    CHECK(min_jerk(1.5) == 1.0);
}

TEST_CASE("frame split rounding and clamping") {
    SplitSpec spec;
    CHECK(split_frames(10, spec) == std::pair<int, int>{6, 4});
    CHECK(split_frames(16, spec) == std::pair<int, int>{10, 6});
    CHECK(split_frames(20, spec) == std::pair<int, int>{12, 8});
    CHECK(split_frames(40, spec) == std::pair<int, int>{24, 16});
    spec.past_fraction = 0.9;
    CHECK(split_frames(2, spec) == std::pair<int, int>{1, 1});
    spec.past_fraction = 0.05;
    CHECK(split_frames(10, spec) == std::pair<int, int>{1, 9});
    SplitSpec forced;
    forced.forced_np = 1;
    CHECK(split_frames(12, forced) == std::pair<int, int>{1, 11});
    forced.forced_np = 12;
    CHECK_THROWS_AS(split_frames(12, forced), ValidationError);
    CHECK_THROWS_AS(split_frames(1, SplitSpec{}), ValidationError);
}

TEST_CASE("joint presets expose documented id sets") {
    auto ids = [](const std::vector<JointSpec>& v) {
        std::vector<int> out;
        for (const auto& j : v) out.push_back(j.id);
        return out;
    };
    CHECK(ids(joint_preset("synth3")) == std::vector<int>{0, 4, 8});
    CHECK(ids(joint_preset("mano5")) == std::vector<int>{0, 1, 4, 5, 8});
    CHECK(ids(joint_preset("umetrack5")) == std::vector<int>{0, 1, 5, 6, 8});
    CHECK(joint_preset("synth3")[0].name == "wrist");
    CHECK_THROWS_AS(joint_preset("nope"), ConfigError);
}

TEST_CASE("look_at places axes by the y-down convention") {
    Mat4 wc = look_at({0, -1, 0}, {0, 0, 0}, {0, 0, 1});
    // forward axis: 1m along camera z lands at the target
    Vec3 fwd = mat4_apply_point(wc, {0, 0, 1});
    CHECK(norm(fwd - Vec3{0, 0, 0}) < 1e-12);
    // camera x is world +x (right), camera y is world -z (down)
    Vec3 right = mat4_apply_point(wc, {1, 0, 0});
    CHECK(norm(right - Vec3{1, -1, 0}) < 1e-12);
    Vec3 down = mat4_apply_point(wc, {0, 1, 0});
    CHECK(norm(down - Vec3{0, -1, -1}) < 1e-12);
    CHECK(rotation_orthonormality_error(wc) < 1e-12);
}

TEST_CASE("rigid inverse and pinhole basics") {
    Mat4 wc = look_at({0.2, -0.5, 0.4}, {0.05, 0.1, 0.0}, {0, 0, 1});
    Mat4 prod = mat4_mul(wc, mat4_rigid_inverse(wc));
    Mat4 id = mat4_identity();
    for (int i = 0; i < 16; ++i)
        CHECK(std::fabs(prod[size_t(i)] - id[size_t(i)]) < 1e-12);

    Pinhole k;
    double u, v;
    CHECK(pinhole_project(k, {0, 0, 1}, u, v));
    CHECK(u == doctest::Approx(320.0));
    CHECK(v == doctest::Approx(240.0));
    CHECK(pinhole_project(k, {0.1, 0.05, 0.5}, u, v));
    CHECK(u == doctest::Approx(320.0 + 300.0 * 0.1 / 0.5));
    CHECK(v == doctest::Approx(240.0 + 300.0 * 0.05 / 0.5));
    CHECK_FALSE(pinhole_project(k, {0, 0, -1}, u, v));
}

TEST_CASE("plane homography matches direct two-camera projection") {
    Pinhole k;
    Mat4 wc0 = look_at({0.0, -0.6, 0.5}, {0.0, 0.0, 0.0}, {0, 0, 1});
    Mat4 wc1 = look_at({0.2, -0.55, 0.45}, {0.05, 0.05, 0.0}, {0, 0, 1});
    Mat4 c0_from_c1 = mat4_mul(mat4_rigid_inverse(wc0), wc1);

    // table plane z=0 expressed in camera-1 coordinates
    Vec3 n_w{0, 0, 1};
    Mat3 r1 = mat4_rotation(wc1);
    Mat3 r1t = {r1[0], r1[3], r1[6], r1[1], r1[4], r1[7], r1[2], r1[5], r1[8]};
    Vec3 n_c = mat3_apply(r1t, n_w);
    double d_c = -dot(n_w, mat4_translation(wc1));
    Mat3 h = plane_homography(k, c0_from_c1, n_c, d_c);
    CHECK(h[8] == 1.0);

    for (Vec3 q : {Vec3{0.1, 0.05, 0.0}, Vec3{-0.2, 0.15, 0.0}, Vec3{0.0, -0.1, 0.0}}) {
        double u1, v1, u0, v0;
        REQUIRE(pinhole_project(k, mat4_apply_point(mat4_rigid_inverse(wc1), q), u1, v1));
        REQUIRE(pinhole_project(k, mat4_apply_point(mat4_rigid_inverse(wc0), q), u0, v0));
        double mu, mv, mw;
        homography_apply(h, u1, v1, mu, mv, mw);
        CHECK(mw > 0.0);
        CHECK(mu == doctest::Approx(u0).epsilon(1e-9));
        CHECK(mv == doctest::Approx(v0).epsilon(1e-9));
    }

    // identity transform induces the identity homography
    Mat3 hi = plane_homography(k, mat4_identity(), n_c, d_c);
    Mat3 id3 = mat3_identity();
    for (int i = 0; i < 9; ++i) CHECK(std::fabs(hi[size_t(i)] - id3[size_t(i)]) < 1e-12);

    CHECK_THROWS_AS(plane_homography(k, c0_from_c1, n_c, 0.0), ValidationError);
}

TEST_CASE("3d canvas transform: identity poses are a bitwise no-op") {
    std::vector<Vec3> local = {{0.1, 0.2, 0.3}, {-0.05, 0.0, 0.9}};
    std::vector<Mat4> poses = {mat4_identity(), mat4_identity()};
    auto out = to_first_frame_canvas_3d(local, poses);
    REQUIRE(out.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(out[i].valid);
        for (int d = 0; d < 3; ++d) CHECK(out[i].p[size_t(d)] == local[i][size_t(d)]);
    }
}

TEST_CASE("3d canvas transform maps a fixed world point to a fixed canvas point") {
    // cameras moving around a static point: after the transform every frame
    // must agree on its first-frame coordinates
    Vec3 q_w{0.07, 0.12, 0.02};
    std::vector<Mat4> world_from_cam;
    for (int t = 0; t < 5; ++t) {
        double a = 0.1 * double(t);
        world_from_cam.push_back(
            look_at({0.3 * std::sin(a), -0.6 + 0.05 * a, 0.5 - 0.02 * a}, {0.0, 0.05, 0.0},
                    {0, 0, 1}));
    }
    std::vector<Vec3> local;
    for (const auto& wc : world_from_cam)
        local.push_back(mat4_apply_point(mat4_rigid_inverse(wc), q_w));
    auto out = to_first_frame_canvas_3d(local, world_from_cam);
    Vec3 expect = mat4_apply_point(mat4_rigid_inverse(world_from_cam[0]), q_w);
    for (const auto& c : out) {
        CHECK(c.valid);
        CHECK(norm(c.p - expect) < 1e-12);
    }

    // non-orthonormal rotation block is rejected
    std::vector<Mat4> bad = {mat4_identity(), mat4_identity()};
    bad[1][0] = 1.5;
    CHECK_THROWS_AS(to_first_frame_canvas_3d({q_w, q_w}, bad), ValidationError);
}

TEST_CASE("2d canvas transform normalizes and flags sign flips") {
    Pinhole k;
    std::vector<Vec3> pixels = {{640.0, 480.0, 0.0}, {320.0, 240.0, 0.0}, {100.0, 50.0, 0.0}};
    std::vector<Mat3> hs = {mat3_identity(), mat3_identity(), mat3_identity()};
    auto out = to_first_frame_canvas_2d(pixels, hs, k);
    CHECK(out[0].p[0] == doctest::Approx(1.0));
    CHECK(out[0].p[1] == doctest::Approx(1.0));
    CHECK(out[1].p[0] == doctest::Approx(0.5));
    CHECK(out[1].p[1] == doctest::Approx(0.5));
    CHECK(out[2].p[0] == doctest::Approx(100.0 / 640.0));
    for (const auto& c : out) CHECK(c.valid);

    // uniform pixel scaling
    Mat3 scale = mat3_identity();
    scale[0] = scale[4] = 2.0;
    out = to_first_frame_canvas_2d({{100.0, 50.0, 0.0}}, {scale}, k);
    CHECK(out[0].p[0] == doctest::Approx(200.0 / 640.0));
    CHECK(out[0].p[1] == doctest::Approx(100.0 / 480.0));

    // negative homogeneous w is flagged
    Mat3 flip = mat3_identity();
    flip[8] = -1.0;
    out = to_first_frame_canvas_2d({{10.0, 10.0, 0.0}}, {flip}, k);
    CHECK_FALSE(out[0].valid);

    Mat3 singular{};
    CHECK_THROWS_AS(to_first_frame_canvas_2d({{0, 0, 0}}, {singular}, k), ValidationError);
}

TEST_CASE("constant velocity baseline extrapolates the last step") {
    std::vector<Vec3> past = {{0, 0, 0}, {0.1, 0.2, -0.1}};
    auto pred = cvh_forecast(past, 3);
    REQUIRE(pred.size() == 3);
    CHECK(norm(pred[0] - Vec3{0.2, 0.4, -0.2}) < 1e-15);
    CHECK(norm(pred[1] - Vec3{0.3, 0.6, -0.3}) < 1e-15);
    CHECK(norm(pred[2] - Vec3{0.4, 0.8, -0.4}) < 1e-15);

    auto still = cvh_forecast({{1, 2, 3}}, 2);
    CHECK(norm(still[0] - Vec3{1, 2, 3}) < 1e-15);
    CHECK(norm(still[1] - Vec3{1, 2, 3}) < 1e-15);

    CHECK(cvh_forecast(past, 0).empty());
    CHECK_THROWS_AS(cvh_forecast({}, 2), ValidationError);
}

TEST_CASE("synthetic reach clip satisfies the pose and label invariants") {
    ScenarioConfig cfg;
    cfg.scenario = "reach";
    Clip clip = synth_clip(cfg, 7, 0);
    clip.validate();
    CHECK(clip.frames == 10);
    CHECK(clip.dims == 3);
    REQUIRE(clip.joints.size() == 3);
    CHECK(clip.object_names == std::vector<std::string>{"block"});

    // first-frame pose and homography are exactly identity
    Mat4 id4 = mat4_identity();
    for (int i = 0; i < 16; ++i) CHECK(clip.poses[0][size_t(i)] == id4[size_t(i)]);
    Mat3 id3 = mat3_identity();
    for (int i = 0; i < 9; ++i) CHECK(clip.homographies[0][size_t(i)] == id3[size_t(i)]);

    // the head actually moves: later poses differ from identity
    double moved = 0.0;
    for (int i = 0; i < 16; ++i)
        moved = std::max(moved, std::fabs(clip.poses.back()[size_t(i)] - id4[size_t(i)]));
    CHECK(moved > 1e-4);

    // contact labels agree with an independent recomputation from the canvas
    // tracks (rigid transforms preserve distances)
    auto wrist = clip_canvas_waypoints(clip, 0);
    for (int t = 0; t < clip.frames; ++t) {
        double mind = 1e9;
        for (const auto& track : clip.object_tracks)
            mind = std::min(mind, norm(wrist[size_t(t)].p - track[size_t(t)]));
        CHECK(int(clip.states[size_t(t)]) == int(mind < clip.contact_eps));
    }

    // single trailing contact interval that starts in the future window
    auto iv = intervals(clip.states);
    REQUIRE(iv.size() == 1);
    CHECK(iv[0].second == clip.frames);        // never releases
    CHECK(iv[0].first >= 6);                   // after the 6-frame past window
    CHECK(clip.states[0] == 0);
}

TEST_CASE("reach contact onset lands in the future window across seeds") {
    ScenarioConfig cfg;
    cfg.scenario = "reach";
    std::set<int> onsets;
    for (int i = 0; i < 30; ++i) {
        Clip clip = synth_clip(cfg, 11, i);
        auto iv = intervals(clip.states);
        REQUIRE(iv.size() == 1);
        CHECK(iv[0].first >= 6);
        CHECK(iv[0].first <= 9);
        onsets.insert(iv[0].first);
    }
    CHECK(onsets.size() >= 2); // timing varies with approach distance
}

TEST_CASE("pick and place: grasp and release both fall in the future window") {
    ScenarioConfig cfg;
    cfg.scenario = "pick_place";
    std::set<int> onsets, offsets;
    for (int i = 0; i < 30; ++i) {
        Clip clip = synth_clip(cfg, 3, i);
        CHECK(clip.frames == 20);
        auto iv = intervals(clip.states);
        REQUIRE(iv.size() == 1);
        CHECK(iv[0].first >= 12);  // 0-based: past window is frames 0..11
        CHECK(iv[0].first <= 14);
        CHECK(iv[0].second > iv[0].first);
        CHECK(iv[0].second < clip.frames); // release happens inside the clip
        onsets.insert(iv[0].first);
        offsets.insert(iv[0].second);
    }
    CHECK(onsets.size() >= 2);
}

TEST_CASE("push: contact in the past, release in the future") {
    ScenarioConfig cfg;
    cfg.scenario = "push";
    for (int i = 0; i < 12; ++i) {
        Clip clip = synth_clip(cfg, 5, i);
        CHECK(clip.frames == 16);
        auto iv = intervals(clip.states);
        REQUIRE(iv.size() == 1);
        CHECK(iv[0].first < 10);           // visible before the split
        CHECK(iv[0].second >= 10);         // releases in the forecast horizon
        CHECK(iv[0].second < clip.frames);
    }
}

TEST_CASE("long horizon produces three separated contact intervals") {
    ScenarioConfig cfg;
    cfg.scenario = "long_horizon";
    for (int i = 0; i < 6; ++i) {
        Clip clip = synth_clip(cfg, 13, i);
        CHECK(clip.frames == 40);
        auto iv = intervals(clip.states);
        REQUIRE(iv.size() == 3);
        for (size_t k = 0; k + 1 < iv.size(); ++k) CHECK(iv[k].second < iv[k + 1].first);
        CHECK(clip.states.back() == 0);
    }
}

TEST_CASE("language clips hover through the whole past window") {
    ScenarioConfig cfg;
    cfg.scenario = "language";
    int blue = 0, red = 0;
    for (int i = 0; i < 20; ++i) {
        Clip clip = synth_clip(cfg, 17, i);
        CHECK(clip.frames == 10);
        REQUIRE(clip.object_names.size() == 3);
        REQUIRE(clip.instructed_object >= 0);
        const std::string& name = clip.object_names[size_t(clip.instructed_object)];
        if (name == "blue_block") ++blue;
        if (name == "red_block") ++red;
        CHECK(clip.task.find(name == "blue_block" ? "blue" : "red") != std::string::npos);

        auto wrist = clip_canvas_waypoints(clip, 0);
        // past frames stay near the start: the motion itself cannot reveal
        // the goal, only the instruction can
        for (int t = 0; t < 6; ++t) {
            CHECK(norm(wrist[size_t(t)].p - wrist[0].p) < 0.12);
            CHECK(clip.states[size_t(t)] == 0);
        }
        // the hand ends on the instructed object
        Vec3 goal = clip.object_tracks[size_t(clip.instructed_object)].back();
        CHECK(norm(wrist.back().p - goal) < clip.contact_eps);
        // and far from the other block
        int other = clip.instructed_object == 0 ? 1 : 0;
        CHECK(norm(wrist.back().p - clip.object_tracks[size_t(other)].back()) > 0.15);
    }
    CHECK(blue >= 5);
    CHECK(red >= 5);
}

TEST_CASE("generated homographies stabilize table-plane points") {
    // the generator emits the table scatter first, so an early point index
    // is a static point on the table plane
    ScenarioConfig cfg;
    cfg.scenario = "pick_place";
    Clip clip = synth_clip(cfg, 23, 1);
    for (int idx : {0, 3, 11}) {
        std::vector<Vec3> pixels;
        for (int t = 0; t < clip.frames; ++t) {
            double u, v;
            REQUIRE(pinhole_project(clip.camera, clip.points[size_t(t)][size_t(idx)], u, v));
            pixels.push_back({u, v, 0.0});
        }
        auto canvas = to_first_frame_canvas_2d(pixels, clip.homographies, clip.camera);
        for (int t = 1; t < clip.frames; ++t) {
            CHECK(canvas[size_t(t)].valid);
            CHECK(norm(canvas[size_t(t)].p - canvas[0].p) < 1e-8);
        }
    }
}

TEST_CASE("static-head mode pins the camera") {
    ScenarioConfig cfg;
    cfg.scenario = "reach";
    cfg.static_head = true;
    Clip clip = synth_clip(cfg, 29, 0);
    Mat3 id3 = mat3_identity();
    Mat4 id4 = mat4_identity();
    for (int t = 0; t < clip.frames; ++t) {
        for (int i = 0; i < 9; ++i)
            CHECK(clip.homographies[size_t(t)][size_t(i)] == id3[size_t(i)]);
        for (int i = 0; i < 16; ++i)
            CHECK(std::fabs(clip.poses[size_t(t)][size_t(i)] - id4[size_t(i)]) < 1e-9);
    }
}

TEST_CASE("2d clips carry pixel waypoints") {
    ScenarioConfig cfg;
    cfg.scenario = "reach";
    cfg.dims = 2;
    Clip clip = synth_clip(cfg, 31, 2);
    clip.validate();
    CHECK(clip.dims == 2);
    for (const auto& track : clip.waypoints)
        for (const auto& p : track) {
            CHECK(p[0] > -200.0);
            CHECK(p[0] < 840.0);
            CHECK(p[1] > -200.0);
            CHECK(p[1] < 680.0);
            CHECK(p[2] == 0.0);
        }
    auto canvas = clip_canvas_waypoints(clip, 0);
    for (const auto& c : canvas) {
        CHECK(c.valid);
        CHECK(std::isfinite(c.p[0]));
        CHECK(std::isfinite(c.p[1]));
    }
}

TEST_CASE("same configuration and seed reproduce a clip bitwise") {
    ScenarioConfig cfg;
    cfg.scenario = "pick_place";
    cfg.waypoint_noise = 0.002;
    Clip a = synth_clip(cfg, 41, 3);
    Clip b = synth_clip(cfg, 41, 3);
    REQUIRE(a.frames == b.frames);
    for (size_t j = 0; j < a.waypoints.size(); ++j)
        for (int t = 0; t < a.frames; ++t)
            for (int d = 0; d < 3; ++d)
                CHECK(a.waypoints[j][size_t(t)][size_t(d)] == b.waypoints[j][size_t(t)][size_t(d)]);
    for (int t = 0; t < a.frames; ++t) {
        CHECK(a.states[size_t(t)] == b.states[size_t(t)]);
        for (int i = 0; i < 9; ++i)
            CHECK(a.homographies[size_t(t)][size_t(i)] == b.homographies[size_t(t)][size_t(i)]);
        for (int i = 0; i < 16; ++i)
            CHECK(a.poses[size_t(t)][size_t(i)] == b.poses[size_t(t)][size_t(i)]);
        REQUIRE(a.points[size_t(t)].size() == b.points[size_t(t)].size());
        for (size_t i = 0; i < a.points[size_t(t)].size(); ++i)
            CHECK(norm(a.points[size_t(t)][i] - b.points[size_t(t)][i]) == 0.0);
    }
    // different index gives a different clip
    Clip c = synth_clip(cfg, 41, 4);
    CHECK(norm(c.waypoints[0][0] - a.waypoints[0][0]) > 0.0);
}

TEST_CASE("clip round-trips through disk bitwise") {
    std::string dir = temp_dir("roundtrip");
    ScenarioConfig cfg;
    cfg.scenario = "language";
    Clip a = synth_clip(cfg, 43, 5);
    save_clip(dir + "/clip", a);
    Clip b = load_clip(dir + "/clip");

    CHECK(a.id == b.id);
    CHECK(a.scenario == b.scenario);
    CHECK(a.task == b.task);
    CHECK(a.frames == b.frames);
    CHECK(a.dims == b.dims);
    CHECK(a.contact_eps == b.contact_eps);
    CHECK(a.instructed_object == b.instructed_object);
    CHECK(a.object_names == b.object_names);
    REQUIRE(a.joints.size() == b.joints.size());
    for (size_t j = 0; j < a.joints.size(); ++j) {
        CHECK(a.joints[j].id == b.joints[j].id);
        CHECK(norm(a.joints[j].offset - b.joints[j].offset) == 0.0);
    }
    for (size_t j = 0; j < a.waypoints.size(); ++j)
        for (int t = 0; t < a.frames; ++t)
            CHECK(norm(a.waypoints[j][size_t(t)] - b.waypoints[j][size_t(t)]) == 0.0);
    CHECK(a.states == b.states);
    for (int t = 0; t < a.frames; ++t) {
        for (int i = 0; i < 9; ++i)
            CHECK(a.homographies[size_t(t)][size_t(i)] == b.homographies[size_t(t)][size_t(i)]);
        for (int i = 0; i < 16; ++i)
            CHECK(a.poses[size_t(t)][size_t(i)] == b.poses[size_t(t)][size_t(i)]);
        REQUIRE(a.points[size_t(t)].size() == b.points[size_t(t)].size());
        for (size_t i = 0; i < a.points[size_t(t)].size(); ++i)
            CHECK(norm(a.points[size_t(t)][i] - b.points[size_t(t)][i]) == 0.0);
        CHECK(a.arm_mask[size_t(t)] == b.arm_mask[size_t(t)]);
    }
    for (size_t o = 0; o < a.object_tracks.size(); ++o)
        for (int t = 0; t < a.frames; ++t)
            CHECK(norm(a.object_tracks[o][size_t(t)] - b.object_tracks[o][size_t(t)]) == 0.0);

    fs::remove_all(dir);
}

TEST_CASE("clip loading reports missing manifest fields by name") {
    std::string dir = temp_dir("manifest");
    ScenarioConfig cfg;
    Clip a = synth_clip(cfg, 47, 0);
    save_clip(dir + "/clip", a);

    nlohmann::json manifest;
    {
        std::ifstream is(dir + "/clip/manifest.json");
        is >> manifest;
    }
    manifest["files"].erase("homographies");
    {
        std::ofstream os(dir + "/clip/manifest.json");
        os << manifest.dump(2);
    }
    try {
        load_clip(dir + "/clip");
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("files.homographies") != std::string::npos);
    }
    CHECK_THROWS_AS(load_clip(dir + "/missing"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("dataset generation writes a loadable split index") {
    std::string root = temp_dir("dataset");
    ScenarioConfig cfg;
    cfg.scenario = "reach";
    DatasetCounts counts{3, 1, 2};
    DatasetIndex made = synth_dataset(cfg, 53, counts, root);
    CHECK(made.entries.size() == 6);

    DatasetIndex loaded = load_dataset_index(root);
    CHECK(loaded.scenario == "reach");
    CHECK(loaded.dirs("train").size() == 3);
    CHECK(loaded.dirs("val").size() == 1);
    CHECK(loaded.dirs("test").size() == 2);
    for (const auto& dir : loaded.dirs("test")) {
        Clip clip = load_clip(dir);
        CHECK(clip.scenario == "reach");
    }
    // every clip in the index is distinct
    Clip c0 = load_clip(loaded.dirs("train")[0]);
    Clip c1 = load_clip(loaded.dirs("train")[1]);
    CHECK(norm(c0.waypoints[0][0] - c1.waypoints[0][0]) > 0.0);
    fs::remove_all(root);
}

TEST_CASE("canvas geometry stays inside a one-meter working volume") {
    // the voxelization stage assumes the scene fits a fixed 1m cube in
    // first-frame coordinates; check the generator honors it
    Vec3 lo{1e9, 1e9, 1e9}, hi{-1e9, -1e9, -1e9};
    for (const char* scenario : {"reach", "push", "pick_place", "language", "long_horizon"}) {
        ScenarioConfig cfg;
        cfg.scenario = scenario;
        for (int i = 0; i < 4; ++i) {
            Clip clip = synth_clip(cfg, 59, i);
            auto wrist = clip_canvas_waypoints(clip, 0);
            for (const auto& c : wrist)
                for (int d = 0; d < 3; ++d) {
                    lo[size_t(d)] = std::min(lo[size_t(d)], c.p[size_t(d)]);
                    hi[size_t(d)] = std::max(hi[size_t(d)], c.p[size_t(d)]);
                }
            for (const auto& track : clip.object_tracks)
                for (const auto& p : track)
                    for (int d = 0; d < 3; ++d) {
                        lo[size_t(d)] = std::min(lo[size_t(d)], p[size_t(d)]);
                        hi[size_t(d)] = std::max(hi[size_t(d)], p[size_t(d)]);
                    }
        }
    }
    MESSAGE("canvas bounds: [" << lo[0] << ", " << lo[1] << ", " << lo[2] << "] .. [" << hi[0]
                               << ", " << hi[1] << ", " << hi[2] << "]");
    CHECK(hi[0] - lo[0] < 1.0);
    CHECK(hi[1] - lo[1] < 1.0);
    CHECK(hi[2] - lo[2] < 1.0);
}
