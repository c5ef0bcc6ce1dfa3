#pragma once

#include <memory>
#include <string>
#include <vector>

#include "unihand/data.hpp"
#include "unihand/denoiser.hpp"
#include "unihand/diffusion.hpp"
#include "unihand/encoders.hpp"

namespace unihand {

// Everything needed to rebuild the network and its sampling behavior.
// Serialized inside checkpoints, so field changes bump the manifest format.
struct ModelConfig {
    // widths
    int f = 64;        // latent width shared by both branches
    int x = 64;        // context feature width (rgb rows, waypoint rows, task)
    int d_state = 8;   // scan state size per channel
    int heads = 4;
    int ffn_mult = 2;
    int vox_c1 = 8, vox_c2 = 16; // voxel conv channels
    std::string pattern = "eam_eam_sat";

    // diffusion
    int S = 200;
    std::string schedule = "sqrt";
    int hmf_steps = 20; // inference step count for the hand branch

    // data interface
    int dims = 3;
    std::string joint_preset = "synth3";
    double past_fraction = 0.6;
    VoxelGrid grid;

    // modalities and modes
    bool use_voxels = true;
    bool use_rgb = true;
    bool use_task = false;
    bool emf_enabled = true;
    bool single_frame = false; // condition on one observation frame only
    std::string vl_provider = "stub";
    std::string prompt = "a tabletop manipulation workspace";

    uint64_t seed = 1;

    int num_joints() const; // from joint_preset
};

std::string config_to_json(const ModelConfig& cfg);
// Strict: unknown keys are config errors (catches typos early).
ModelConfig config_from_json(const std::string& text);
ModelConfig load_config_file(const std::string& path);

// One forecast for one target joint, on the first-frame canvas.
struct Forecast {
    std::vector<Vec3> waypoints; // n_future points (z = 0 in 2-D mode)
    std::vector<double> states;  // n_future contact probabilities
    Tensor hm_future;            // [n_future, f] latents for downstream export
    Tensor em_holistic;          // [n_past + n_future, f]
    int n_past = 0, n_future = 0;
};

// The full dual-branch network. Parameters live in the ParamStore; the model
// holds views plus the schedule.
class UniHandModel {
public:
    UniHandModel(ParamStore& ps, const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    const DiffusionSchedule& schedule() const { return sched_; }

    // ---- encoding ----
    // Homography rows [0, rows) of the clip -> egomotion latents [rows, f].
    Tensor encode_egomotion(const Clip& clip, int rows) const;
    // Future rows replaced by copies of the last past homography (egomotion
    // forecast disabled).
    Tensor encode_egomotion_repeat_last(const Clip& clip, int n_past, int n_future) const;
    // Context bundle for one target joint; l = n_future in training, 0 at
    // inference. Honors use_rgb / use_task (zero rows / absent task when off).
    FeatureBundle make_bundle(const Clip& clip, int joint, int n_past, int l) const;
    // Fused hand-motion latents [n_past + l, f].
    Tensor encode_hand(const FeatureBundle& bundle) const;
    // Voxel patch context [27, f]; zero tensor rows when use_voxels is off.
    Tensor encode_voxel_context(const Clip& clip, int n_past) const;
    // Task embedding [x], or undefined when use_task is off.
    Tensor task_embedding(const Clip& clip) const;

    // ---- sampling ----
    // Egomotion branch: one-step prediction from pure noise at s = S.
    Tensor sample_emf(const Tensor& em_past, int n_future, Rng& rng) const;
    // Hand branch: reverse chain over the respaced step subsequence.
    Tensor sample_hmf(const Tensor& hm_past, const Tensor& em_holistic, const Tensor& voxels,
                      const Tensor& task, int n_future, int steps, Rng& rng) const;
    // End-to-end forecast of one joint. Splits the clip per config
    // (single_frame mode pins n_past = 1), runs both branches, decodes.
    Forecast forecast(const Clip& clip, int joint, uint64_t seed) const;

    // Number of past frames the model would condition on for this clip.
    int past_frames(const Clip& clip) const;

    // ---- submodules (owned views; training touches them directly) ----
    EgomotionEncoder em_enc;
    WaypointEncoder wp_enc;
    VlFusion fusion;
    VoxelEncoder vox_enc;
    EmfDenoiser emf;
    Hmtm hmtm;
    TrajectoryDecoder traj_dec;
    StateDecoder state_dec;

    // Appends a task-attention block for fine-tuning and updates the config
    // pattern to match.
    void append_task_block(ParamStore& ps);

    VlProvider& provider() const { return *provider_; }

private:
    ModelConfig cfg_;
    DiffusionSchedule sched_;
    std::unique_ptr<VlProvider> provider_;
};

// ---- checkpoints ----
// Layout: <dir>/manifest.json (format, config, parameter table) plus one
// .uhnd tensor file per parameter.
void save_checkpoint(const std::string& dir, const ParamStore& ps, const ModelConfig& cfg);

struct LoadedModel {
    std::unique_ptr<ParamStore> ps;
    std::unique_ptr<UniHandModel> model;
};
LoadedModel load_checkpoint(const std::string& dir);

} // namespace unihand
