#pragma once

#include <memory>
#include <string>
#include <vector>

#include "unihand/data.hpp"
#include "unihand/nn.hpp"

namespace unihand {

// A latent track over clip frames: [n_past + n_future, f]. Past-only tracks
// have n_future == 0.
struct LatentSeq {
    Tensor values;
    int n_past = 0;
    int n_future = 0;

    int rows() const { return n_past + n_future; }
};

// ---- egomotion ----

// Shared two-layer MLP over flattened 3x3 homographies; row t depends only
// on M_t.
class EgomotionEncoder {
public:
    EgomotionEncoder() = default;
    EgomotionEncoder(ParamStore& ps, const std::string& prefix, int f);
    // [N, f]; rejects singular homographies.
    Tensor forward(const std::vector<Mat3>& homographies) const;

private:
    Mlp mlp_;
};

// ---- hand-motion side ----

// Per-frame MLP over canvas waypoints. Input width is the waypoint
// dimensionality (2 = normalized canvas, 3 = meters).
class WaypointEncoder {
public:
    WaypointEncoder() = default;
    WaypointEncoder(ParamStore& ps, const std::string& prefix, int dims, int x);
    // waypoints: [N, dims] canvas coordinates; rejects non-finite entries.
    Tensor forward(const std::vector<Vec3>& waypoints) const;

    int dims() const { return dims_; }

private:
    Mlp mlp_;
    int dims_ = 3;
};

// One-hot target indicator of width e.
std::vector<double> make_target_indicator(int index, int e);

// Frame-aligned vision-language features plus a per-instruction embedding.
class VlProvider {
public:
    virtual ~VlProvider() = default;
    // [rows, x], rows counted from clip frame 0.
    virtual Tensor vl_features(const Clip& clip, const std::string& prompt, int rows, int x) = 0;
    // [x]
    virtual Tensor task_embedding(const std::string& instruction, int x) = 0;
};

// Deterministic stand-in for a grounded vision-language backbone: each row
// is a seeded unit-norm hash of (frame index, prompt bytes). Distinct
// prompts give distinct directions with probability ~1.
class StubVlProvider : public VlProvider {
public:
    explicit StubVlProvider(uint64_t seed) : seed_(seed) {}
    Tensor vl_features(const Clip& clip, const std::string& prompt, int rows, int x) override;
    Tensor task_embedding(const std::string& instruction, int x) override;

private:
    uint64_t seed_;
};

// Reads vl.uhnd ([frames, x]) and task.uhnd ([x]) from the clip directory.
class FileVlProvider : public VlProvider {
public:
    Tensor vl_features(const Clip& clip, const std::string& prompt, int rows, int x) override;
    Tensor task_embedding(const std::string& instruction, int x) override;

    // task embeddings are keyed by the clip directory, set before use
    void set_clip_dir(const std::string& dir) { dir_ = dir; }

private:
    std::string dir_;
};

std::unique_ptr<VlProvider> make_vl_provider(const std::string& kind, uint64_t seed);

// Everything the hand-motion fusion consumes for one clip.
struct FeatureBundle {
    Tensor vl;     // [n_past + l, x]
    Tensor wp;     // [n_past + l, x]
    Tensor task;   // [x] leaf, or default-constructed when absent
    Tensor target; // [e] one-hot leaf
    int n_past = 0;
    int l = 0; // N_f in training mode, 0 at inference
};

// Per-frame concat [vl | wp | task tile | target tile] -> MLP -> f.
class VlFusion {
public:
    VlFusion() = default;
    VlFusion(ParamStore& ps, const std::string& prefix, int x, int e, int f);
    Tensor forward(const FeatureBundle& bundle) const;

private:
    Mlp mlp_;
    int x_ = 0, e_ = 0;
};

// ---- voxel context ----

struct VoxelGrid {
    int dims = 20;
    double resolution = 0.05;
    Vec3 origin{-0.40, -0.45, 0.50};
};

// Drops masked points, maps survivors through the rigid pose, keeps order.
std::vector<Vec3> preprocess_pointcloud(const std::vector<Vec3>& points,
                                        const std::vector<uint8_t>& arm_mask, const Mat4& pose);

// Count grid normalized by the max cell count; cell = floor((p - origin)/res)
// per axis, out-of-grid points dropped. Output shape [1, d, d, d].
Tensor voxelize(const std::vector<Vec3>& points, const VoxelGrid& grid);

// Two strided conv stages (20^3 -> 6^3 -> 3^3) + per-patch MLP -> [27, f].
class VoxelEncoder {
public:
    VoxelEncoder() = default;
    VoxelEncoder(ParamStore& ps, const std::string& prefix, int c1, int c2, int f);
    Tensor forward(const Tensor& grid) const;

private:
    Tensor k1_, b1_, k2_, b2_;
    Mlp patch_;
    int c1_ = 0, c2_ = 0;
};

// Purified global points of the past frames of a clip, voxelized. Nothing
// trainable upstream, so the result can be cached per clip.
Tensor clip_voxel_grid(const Clip& clip, int n_past, const VoxelGrid& grid);

} // namespace unihand
