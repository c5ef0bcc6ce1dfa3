#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unihand/geometry.hpp"

namespace unihand {

// A hand joint the model can be asked to forecast. Offsets are rigid
// displacements from the wrist in world coordinates; the synthetic hand
// ignores orientation.
struct JointSpec {
    int id = 0;
    std::string name;
    Vec3 offset{0, 0, 0};
};

// Known joint-id subsets plus the synthetic three-joint set.
std::vector<JointSpec> joint_preset(const std::string& name);

struct SplitSpec {
    double past_fraction = 0.6;
    // Forces N_p regardless of the fraction (single-observation mode).
    std::optional<int> forced_np;
};

// N_p = clamp(round(frames * fraction), 1, frames - 1); N_f is the rest.
std::pair<int, int> split_frames(int frames, const SplitSpec& spec);

// One recorded manipulation clip. All per-frame quantities are stored in the
// frame's own camera coordinates; poses map each camera frame into the first
// camera frame (pose[0] is the identity), and homographies map each frame's
// pixels onto the first frame.
struct Clip {
    std::string id;
    std::string scenario;
    std::string task; // instruction text, may be empty
    int frames = 0;
    int dims = 3; // waypoint dimensionality (2 = normalized pixels, 3 = meters)
    Pinhole camera;
    double contact_eps = 0.03;

    std::vector<JointSpec> joints;
    // waypoints[j][t]: joint j at frame t, camera-t coordinates (2D: observed
    // pixel coordinates with the third component unused).
    std::vector<std::vector<Vec3>> waypoints;
    std::vector<uint8_t> states; // per-frame contact labels
    std::vector<Mat3> homographies;
    std::vector<Mat4> poses;
    std::vector<std::vector<Vec3>> points;       // [frame][point], camera-t coords
    std::vector<std::vector<uint8_t>> arm_mask;  // marks points on the actor's arm

    // Generator metadata: object trajectories in first-camera (canvas)
    // coordinates; used by evaluation, never consumed by the model.
    std::vector<std::string> object_names;
    std::vector<std::vector<Vec3>> object_tracks; // [object][frame]
    int instructed_object = -1;

    // Directory the clip was loaded from; empty for in-memory clips. Lets
    // file-based feature providers find side-car tensors.
    std::string source_dir;

    void validate() const; // throws ValidationError on inconsistent sizes
};

// ---- canvas transforms ----

struct CanvasPoint {
    Vec3 p{0, 0, 0};
    bool valid = true;
};

// 3D: p' = pose_first^-1 * pose_t * p. Rotation blocks must be orthonormal
// within 1e-6.
std::vector<CanvasPoint> to_first_frame_canvas_3d(const std::vector<Vec3>& local,
                                                  const std::vector<Mat4>& poses);

// 2D: homogeneous map through the frame's homography, then divide by image
// size so the first-frame pixel (w, h) lands at (1, 1). Points mapping to
// w' <= 0 are flagged invalid.
std::vector<CanvasPoint> to_first_frame_canvas_2d(const std::vector<Vec3>& pixels,
                                                  const std::vector<Mat3>& homographies,
                                                  const Pinhole& camera);

// Canvas waypoints of one joint over all frames of a clip.
std::vector<CanvasPoint> clip_canvas_waypoints(const Clip& clip, int joint_index);

// ---- constant-velocity baseline ----

// v = last - second_to_last past waypoint; prediction extrapolates linearly.
// A single past waypoint predicts a stationary hand.
std::vector<Vec3> cvh_forecast(const std::vector<Vec3>& past_canvas, int n_future);

// ---- synthetic benchmark ----

struct ScenarioConfig {
    std::string scenario = "reach"; // reach | push | pick_place | language | long_horizon
    int frames = 0;                 // 0 = scenario default
    int dims = 3;
    double contact_eps = 0.03;
    bool static_head = false; // static head, identity homographies
    std::string joint_preset = "synth3";
    double waypoint_noise = 0.0; // optional observation noise, meters
};

int scenario_default_frames(const std::string& scenario);

// Deterministic in (config, seed, index).
Clip synth_clip(const ScenarioConfig& cfg, uint64_t seed, int index);

// minimum-jerk interpolation factor: s(0)=0, s(1)=1, zero velocity and
// acceleration at both ends.
double min_jerk(double tau);

// ---- on-disk formats ----

void save_clip(const std::string& dir, const Clip& clip);
Clip load_clip(const std::string& dir);

struct DatasetEntry {
    std::string dir;   // relative to the index file
    std::string split; // train | val | test
};

struct DatasetIndex {
    std::string root;
    std::string scenario;
    std::vector<DatasetEntry> entries;

    std::vector<std::string> dirs(const std::string& split) const;
};

void save_dataset_index(const std::string& root, const DatasetIndex& index);
DatasetIndex load_dataset_index(const std::string& root);

struct DatasetCounts {
    int train = 0, val = 0, test = 0;
};

// Generates clips and writes <root>/clip_NNNN plus <root>/index.json.
DatasetIndex synth_dataset(const ScenarioConfig& cfg, uint64_t seed, const DatasetCounts& counts,
                           const std::string& root);

// Benchmark-generation config: scenario fields plus a "counts" object with
// train/val/test sizes. Unknown keys are rejected.
std::pair<ScenarioConfig, DatasetCounts> synth_config_from_json(const std::string& text);
std::string synth_config_to_json(const ScenarioConfig& cfg, const DatasetCounts& counts);

} // namespace unihand
