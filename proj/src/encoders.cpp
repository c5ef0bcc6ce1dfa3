#include "unihand/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "unihand/tensor_io.hpp"

namespace unihand {

// ---------------------------------------------------------------- egomotion

EgomotionEncoder::EgomotionEncoder(ParamStore& ps, const std::string& prefix, int f)
    : mlp_(ps, prefix, 9, f, f) {}

Tensor EgomotionEncoder::forward(const std::vector<Mat3>& homographies) const {
    if (homographies.empty()) throw ValidationError("egomotion encoder: empty sequence");
    std::vector<double> flat;
    flat.reserve(homographies.size() * 9);
    for (size_t t = 0; t < homographies.size(); ++t) {
        if (std::fabs(mat3_det(homographies[t])) <= 1e-9)
            throw ValidationError("egomotion encoder: singular homography at frame " +
                                  std::to_string(t));
        flat.insert(flat.end(), homographies[t].begin(), homographies[t].end());
    }
    Tensor in = Tensor::from_data({int(homographies.size()), 9}, std::move(flat));
    return mlp_.forward(in);
}

// ---------------------------------------------------------------- waypoints

WaypointEncoder::WaypointEncoder(ParamStore& ps, const std::string& prefix, int dims, int x)
    : mlp_(ps, prefix, dims, x, x), dims_(dims) {
    if (dims != 2 && dims != 3) throw ConfigError("waypoint encoder: dims must be 2 or 3");
}

Tensor WaypointEncoder::forward(const std::vector<Vec3>& waypoints) const {
    if (waypoints.empty()) throw ValidationError("waypoint encoder: empty sequence");
    std::vector<double> flat;
    flat.reserve(waypoints.size() * size_t(dims_));
    for (size_t t = 0; t < waypoints.size(); ++t)
        for (int d = 0; d < dims_; ++d) {
            double v = waypoints[t][size_t(d)];
            if (!std::isfinite(v))
                throw ValidationError("waypoint encoder: non-finite input at frame " +
                                      std::to_string(t));
            flat.push_back(v);
        }
    Tensor in = Tensor::from_data({int(waypoints.size()), dims_}, std::move(flat));
    return mlp_.forward(in);
}

// ---------------------------------------------------------------- target

std::vector<double> make_target_indicator(int index, int e) {
    if (e < 1) throw ValidationError("target indicator: e must be positive");
    if (index < 0 || index >= e)
        throw ValidationError("target indicator: index " + std::to_string(index) +
                              " out of range for e=" + std::to_string(e));
    std::vector<double> v(static_cast<size_t>(e), 0.0);
    v[size_t(index)] = 1.0;
    return v;
}

// ---------------------------------------------------------------- providers

Tensor StubVlProvider::vl_features(const Clip&, const std::string& prompt, int rows, int x) {
    if (rows < 1 || x < 1) throw ValidationError("vl stub: rows and x must be positive");
    std::vector<double> data(size_t(rows) * size_t(x));
    for (int t = 0; t < rows; ++t) {
        Rng rng = Rng::from(seed_, "vl:" + prompt, uint64_t(t));
        double ss = 0.0;
        for (int i = 0; i < x; ++i) {
            double v = rng.normal();
            data[size_t(t) * size_t(x) + size_t(i)] = v;
            ss += v * v;
        }
        double inv = 1.0 / std::sqrt(std::max(ss, 1e-300));
        for (int i = 0; i < x; ++i) data[size_t(t) * size_t(x) + size_t(i)] *= inv;
    }
    return Tensor::from_data({rows, x}, std::move(data));
}

Tensor StubVlProvider::task_embedding(const std::string& instruction, int x) {
    if (x < 1) throw ValidationError("vl stub: x must be positive");
    Rng rng = Rng::from(seed_, "task:" + instruction);
    std::vector<double> data(static_cast<size_t>(x));
    double ss = 0.0;
    for (auto& v : data) {
        v = rng.normal();
        ss += v * v;
    }
    double inv = 1.0 / std::sqrt(std::max(ss, 1e-300));
    for (auto& v : data) v *= inv;
    return Tensor::from_data({x}, std::move(data));
}

Tensor FileVlProvider::vl_features(const Clip& clip, const std::string&, int rows, int x) {
    std::string dir = dir_.empty() ? clip.source_dir : dir_;
    if (dir.empty()) throw IoError("vl file provider: clip has no source directory");
    Tensor t = load_tensor(dir + "/vl.uhnd");
    if (t.shape().size() != 2 || t.shape()[1] != x)
        throw ValidationError("vl file provider: expected [frames, " + std::to_string(x) +
                              "], got " + shape_str(t.shape()));
    if (t.shape()[0] < rows)
        throw ValidationError("vl file provider: file has " + std::to_string(t.shape()[0]) +
                              " rows, need " + std::to_string(rows));
    if (t.shape()[0] == rows) return t;
    return slice_rows(t, 0, rows);
}

Tensor FileVlProvider::task_embedding(const std::string&, int x) {
    if (dir_.empty()) throw IoError("vl file provider: clip directory not set");
    Tensor t = load_tensor(dir_ + "/task.uhnd");
    if (t.shape().size() != 1 || t.shape()[0] != x)
        throw ValidationError("vl file provider: task embedding shape " + shape_str(t.shape()) +
                              ", expected [" + std::to_string(x) + "]");
    return t;
}

std::unique_ptr<VlProvider> make_vl_provider(const std::string& kind, uint64_t seed) {
    if (kind == "stub") return std::make_unique<StubVlProvider>(seed);
    if (kind == "file") return std::make_unique<FileVlProvider>();
    throw ConfigError("unknown vl provider: " + kind);
}

// ---------------------------------------------------------------- fusion

VlFusion::VlFusion(ParamStore& ps, const std::string& prefix, int x, int e, int f)
    : mlp_(ps, prefix, 3 * x + e, f, f), x_(x), e_(e) {}

Tensor VlFusion::forward(const FeatureBundle& bundle) const {
    int rows = bundle.n_past + bundle.l;
    if (rows < 1) throw ValidationError("vl fusion: empty bundle");
    if (bundle.vl.shape() != Shape{rows, x_})
        throw ValidationError("vl fusion: vl shape " + shape_str(bundle.vl.shape()) +
                              ", expected [" + std::to_string(rows) + ", " + std::to_string(x_) +
                              "]");
    if (bundle.wp.shape() != Shape{rows, x_})
        throw ValidationError("vl fusion: wp shape " + shape_str(bundle.wp.shape()) +
                              ", expected [" + std::to_string(rows) + ", " + std::to_string(x_) +
                              "]");
    if (bundle.target.shape() != Shape{e_})
        throw ValidationError("vl fusion: target shape " + shape_str(bundle.target.shape()) +
                              ", expected [" + std::to_string(e_) + "]");
    {
        double s = 0.0;
        int ones = 0;
        for (double v : bundle.target.values()) {
            s += v;
            if (v == 1.0) ++ones;
            else if (v != 0.0)
                throw ValidationError("vl fusion: target indicator is not one-hot");
        }
        if (ones != 1 || s != 1.0)
            throw ValidationError("vl fusion: target indicator is not one-hot");
    }

    // task and target are constants; tile them across rows as leaf data
    std::vector<double> tile(size_t(rows) * size_t(x_ + e_), 0.0);
    const std::vector<double>* task = nullptr;
    if (bundle.task.defined()) {
        if (bundle.task.shape() != Shape{x_})
            throw ValidationError("vl fusion: task shape " + shape_str(bundle.task.shape()) +
                                  ", expected [" + std::to_string(x_) + "]");
        task = &bundle.task.values();
    }
    const std::vector<double>& tar = bundle.target.values();
    for (int r = 0; r < rows; ++r) {
        double* row = tile.data() + size_t(r) * size_t(x_ + e_);
        if (task)
            for (int i = 0; i < x_; ++i) row[i] = (*task)[size_t(i)];
        for (int i = 0; i < e_; ++i) row[x_ + i] = tar[size_t(i)];
    }
    Tensor tiled = Tensor::from_data({rows, x_ + e_}, std::move(tile));
    Tensor in = concat_cols({bundle.vl, bundle.wp, tiled});
    return mlp_.forward(in);
}

// ---------------------------------------------------------------- voxels

std::vector<Vec3> preprocess_pointcloud(const std::vector<Vec3>& points,
                                        const std::vector<uint8_t>& arm_mask, const Mat4& pose) {
    if (points.size() != arm_mask.size())
        throw ValidationError("pointcloud: mask size " + std::to_string(arm_mask.size()) +
                              " != point count " + std::to_string(points.size()));
    if (rotation_orthonormality_error(pose) > 1e-6)
        throw ValidationError("pointcloud: pose rotation not orthonormal");
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (size_t i = 0; i < points.size(); ++i)
        if (!arm_mask[i]) out.push_back(mat4_apply_point(pose, points[i]));
    return out;
}

Tensor voxelize(const std::vector<Vec3>& points, const VoxelGrid& grid) {
    if (grid.dims < 1) throw ValidationError("voxelize: grid dims must be positive");
    if (grid.resolution <= 0.0) throw ValidationError("voxelize: resolution must be positive");
    const int d = grid.dims;
    std::vector<double> cells(size_t(d) * size_t(d) * size_t(d), 0.0);
    double maxc = 0.0;
    for (const auto& p : points) {
        int ix[3];
        bool in = true;
        for (int a = 0; a < 3; ++a) {
            double rel = (p[size_t(a)] - grid.origin[size_t(a)]) / grid.resolution;
            int c = int(std::floor(rel));
            if (c < 0 || c >= d) {
                in = false;
                break;
            }
            ix[a] = c;
        }
        if (!in) continue;
        double& cell = cells[(size_t(ix[0]) * size_t(d) + size_t(ix[1])) * size_t(d) +
                             size_t(ix[2])];
        cell += 1.0;
        maxc = std::max(maxc, cell);
    }
    if (maxc > 0.0)
        for (auto& c : cells) c /= maxc;
    return Tensor::from_data({1, d, d, d}, std::move(cells));
}

VoxelEncoder::VoxelEncoder(ParamStore& ps, const std::string& prefix, int c1, int c2, int f)
    : c1_(c1), c2_(c2) {
    k1_ = ps.uniform_fan_in(prefix + ".conv1.K", {c1, 1, 4, 4, 4}, 64);
    b1_ = ps.bias(prefix + ".conv1.b", c1);
    k2_ = ps.uniform_fan_in(prefix + ".conv2.K", {c2, c1, 2, 2, 2}, c1 * 8);
    b2_ = ps.bias(prefix + ".conv2.b", c2);
    patch_ = Mlp(ps, prefix + ".patch", c2, f, f);
}

Tensor VoxelEncoder::forward(const Tensor& grid) const {
    if (grid.shape() != Shape{1, 20, 20, 20})
        throw DimensionError("voxel encoder: expected grid [1, 20, 20, 20], got " +
                             shape_str(grid.shape()));
    Tensor h1 = silu(conv3d(grid, k1_, 3, b1_));   // [c1, 6, 6, 6]
    Tensor h2 = silu(conv3d(h1, k2_, 2, b2_));     // [c2, 3, 3, 3]
    Tensor flat = reshape(h2, {c2_, 27});
    return patch_.forward(transpose(flat)); // [27, f]
}

Tensor clip_voxel_grid(const Clip& clip, int n_past, const VoxelGrid& grid) {
    if (n_past < 1 || n_past > clip.frames)
        throw ValidationError("voxel grid: n_past out of range");
    if (clip.points.empty() || clip.poses.empty()) {
        int d = grid.dims;
        return Tensor::zeros({1, d, d, d});
    }
    std::vector<Vec3> all;
    for (int t = 0; t < n_past; ++t) {
        auto purified =
            preprocess_pointcloud(clip.points[size_t(t)], clip.arm_mask[size_t(t)],
                                  clip.poses[size_t(t)]);
        all.insert(all.end(), purified.begin(), purified.end());
    }
    return voxelize(all, grid);
}

} // namespace unihand
