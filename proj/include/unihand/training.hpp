#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "unihand/diffusion.hpp"
#include "unihand/model.hpp"

namespace unihand {

// ---- geometric and interaction losses ----
// All losses are scalar tensors on the tape.

// Mean Euclidean distance between corresponding rows of [N, d] matrices.
// Coincident rows contribute zero with a zero subgradient.
Tensor trajectory_distance_loss(const Tensor& pred, const Tensor& gt);

// Mean (1 - cos) between corresponding displacement vectors. Displacements
// are successive row differences with `base` (the last observed waypoint)
// prepended, so the first predicted step's direction is penalized too. A
// zero-length displacement on either side leaves that frame's term at zero.
Tensor heading_loss(const Tensor& pred, const Tensor& gt, const std::vector<double>& base);

// Mean binary cross entropy of contact probabilities [N, 1] against {0,1}
// labels. Probabilities are clamped to [1e-12, 1 - 1e-12] first, so a
// perfectly confident correct prediction costs ~1e-12, not -log(0).
Tensor interaction_loss(const Tensor& probs, const std::vector<double>& labels);

// ---- denoising reconstruction terms ----

// One term of the stepwise objective: noise the future rows of the clean
// latents to step s, run the denoiser, return the mean squared error of the
// predicted future rows. Differentiable in the latents through both the
// noising and the target, so the encoders train end to end.
Tensor denoise_recon_term(const DiffusionSchedule& sched, const Tensor& gt_latents, int n_past,
                          int s, const Tensor& noise, const Predictor& fwd);

// Mean of denoise_recon_term over every step s = 2..S. The trainer estimates
// this with a single uniformly drawn s per sample; this exhaustive form is
// the test oracle. noise_for_step supplies the per-step noise draw.
Tensor denoise_recon_all_steps(const DiffusionSchedule& sched, const Tensor& gt_latents,
                               int n_past, const std::function<Tensor(int)>& noise_for_step,
                               const Predictor& fwd);

// Final-step term: future rows start as pure noise (exactly the inference
// initialization) and the denoiser predicts the clean latents in one shot.
// future is the predicted future block [n_future, f], kept on the tape so
// downstream losses and the cross-branch conditioning train end to end.
struct OneShotRecon {
    Tensor loss;
    Tensor future;
};
OneShotRecon oneshot_recon(const DiffusionSchedule& sched, const Tensor& gt_latents, int n_past,
                           const Tensor& noise, const Predictor& fwd);

// ---- configuration ----

struct LossWeights {
    double em_denoise = 1.0;
    double hm_denoise = 1.0;
    double displacement = 1.0;
    double angle = 0.5;
    double pseudo = 0.5; // decoder consistency on clean ground-truth latents
    double interaction = 1.0;
};

struct TrainingConfig {
    double lr = 5e-4;
    double weight_decay = 0.01;
    int epochs = 500;
    int batch = 8;
    uint64_t seed = 1;
    LossWeights weights;
    std::vector<int> joints;   // target joints to train on; empty = all
    int val_every = 25;        // epochs between validation passes (0 = final epoch only)
    std::string finetune_from; // checkpoint dir; empty = train from scratch

    void validate() const; // throws ConfigError
};

TrainingConfig training_from_json(const std::string& text);
std::string training_to_json(const TrainingConfig& tc);

// ---- per-sample loss ----

// The random draws one sample's loss depends on, fixed up front so the loss
// is a pure function of the parameters (gradient checks re-evaluate it).
struct SampleDraws {
    int s_em = 2, s_hm = 2; // reconstruction steps, uniform on {2..S}
    Tensor em_step_noise;   // [n_future, f]
    Tensor em_final_noise;  // [n_future, f]
    Tensor hm_step_noise;   // [n_future, f]
    Tensor hm_final_noise;  // [n_future, f]
};

SampleDraws draw_sample(const UniHandModel& model, const Clip& clip, Rng& rng);

struct LossBreakdown {
    double em_denoise = 0.0, hm_denoise = 0.0;
    double displacement = 0.0, angle = 0.0, pseudo = 0.0, interaction = 0.0;
    double total = 0.0;

    LossBreakdown& operator+=(const LossBreakdown& o);
    void scale_by(double c);
};

// Weighted loss graph for one (clip, joint) sample. Terms with zero weight
// are never built, so parameters only they touch keep exactly zero
// gradients. parts (optional) receives the unweighted term values.
Tensor sample_loss(const UniHandModel& model, const Clip& clip, int joint,
                   const LossWeights& w, const SampleDraws& draws,
                   LossBreakdown* parts = nullptr);

// ---- optimizer ----

// Adam moments on the gradients plus decoupled weight decay. Decay applies
// only to matrix weights named "*.W"; biases, gains, norms, scan dynamics
// and attention projections stay undecayed.
class AdamW {
public:
    AdamW(ParamStore& ps, double lr, double weight_decay, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);

    // One update from the accumulated gradients, then clears them.
    void step();
    int steps_taken() const { return t_; }

private:
    ParamStore* ps_;
    double lr_, wd_, b1_, b2_, eps_;
    int t_ = 0;
    std::unordered_map<std::string, std::vector<double>> m_, v_;
};

// ---- training loop ----

struct EpochRecord {
    int epoch = 0;      // 1-based
    LossBreakdown mean; // means over the epoch's samples
    std::optional<double> val_ade, val_fde;
};

struct TrainResult {
    std::vector<EpochRecord> records;
};

// Full training run. Deterministic in (tc.seed, data, initial parameters):
// two identical runs produce bit-identical parameters and records. Every
// epoch appends one newline-delimited JSON record to log (when given). A
// non-finite batch loss aborts with the epoch, batch and clip ids.
TrainResult train_model(ParamStore& ps, UniHandModel& model,
                        const std::vector<Clip>& train_clips, const std::vector<Clip>& val_clips,
                        const TrainingConfig& tc, std::ostream* log = nullptr);

// Loads a checkpoint as the starting point for `target`. The target config
// must equal the checkpoint's except for one appended trailing task block in
// the pattern (plus the use_task switch). The fresh block starts with zero
// output projections, so on clips without an instruction the loaded behavior
// is preserved exactly until training moves it.
LoadedModel load_finetune_base(const std::string& dir, const ModelConfig& target);

} // namespace unihand
