#pragma once

#include <optional>
#include <string>
#include <vector>

#include "unihand/data.hpp"
#include "unihand/model.hpp"

namespace unihand {

// ---- trajectory metrics ----
// Mean / final Euclidean distance between corresponding points. 2-D
// trajectories carry z = 0, so one formula serves both modes (normalized
// canvas units in 2-D, meters in 3-D).
double ade(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);
double fde(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);
// Per-frame Euclidean errors; mean(error_curve) == ade by construction.
std::vector<double> error_curve(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);

// ---- interaction-state transitions ----
enum class TransitionKind { contact, separation };

struct Transition {
    int frame = 0; // 1-based position inside the sequence
    TransitionKind kind = TransitionKind::contact;
};

// Binarizes at the threshold and reports the first frame of every new run.
// The sequence is read as if preceded by a virtual 0, so kinds alternate
// starting with contact.
std::vector<Transition> extract_transitions(const std::vector<double>& probs,
                                            double threshold = 0.5);

// Timing error of predicted transitions, in frames. Same-kind transitions
// are matched greedily in order; every unmatched transition (on either side)
// costs penalty_frames. Returns nullopt when the ground truth has no
// transitions (the metric is undefined, not zero).
std::optional<double> mae_transitions(const std::vector<double>& pred,
                                      const std::vector<double>& gt, int penalty_frames,
                                      double threshold = 0.5);

// ---- evaluation report ----

struct TargetReport {
    int joint = 0;
    std::string joint_name;
    int clips = 0;
    double ade = 0.0, fde = 0.0;
    double cvh_ade = 0.0, cvh_fde = 0.0;
    std::optional<double> transition_mae; // frames; absent when no clip has GT transitions
    std::vector<double> curve;            // per-future-frame mean error, length n_future
};

struct EvalReport {
    int format_version = 1;
    int clips = 0;
    int n_past = 0, n_future = 0;
    int dims = 3;
    uint64_t seed = 0;
    std::vector<TargetReport> targets;
    std::string config_json; // model config echo
};

struct EvalOptions {
    uint64_t seed = 1;
    std::vector<int> joints; // empty = every joint of the model's preset
    double threshold = 0.5;  // contact binarization
};

// Forecasts every clip/joint pair and aggregates metrics against the canvas
// ground truth, with the constant-velocity baseline on the same clips.
// All clips must share one frame count (one scenario per dataset).
EvalReport evaluate(const UniHandModel& model, const std::vector<Clip>& clips,
                    const EvalOptions& opt);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
void write_report(const EvalReport& report, const std::string& path);
EvalReport load_report(const std::string& path);

// CSV with header "frame,mean_error", frames 1-based.
void write_error_curve_csv(const std::vector<double>& curve, const std::string& path);

// ---- robot action schedule ----

struct GripperEvent {
    int frame = 0;      // 1-based future frame
    std::string action; // "close" (contact) | "open" (separation)
};

struct ActionSchedule {
    int format_version = 1;
    std::vector<Vec3> waypoints;
    std::vector<GripperEvent> events;
};

// Gripper events come from the forecast's contact probabilities; waypoints
// pass through verbatim. Only 3-D trajectories can drive a robot arm, so
// dims != 3 is a validation error.
ActionSchedule make_action_schedule(const Forecast& fc, int dims, double threshold = 0.5);

std::string schedule_to_json(const ActionSchedule& schedule);
void write_action_schedule(const ActionSchedule& schedule, const std::string& path);

// Writes the predicted future hand-motion latents [n_future, f] as a tensor
// file for downstream fusion.
void export_hm_features(const Forecast& fc, const std::string& path);

} // namespace unihand
