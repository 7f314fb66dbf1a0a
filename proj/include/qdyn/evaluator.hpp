#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qdyn/data.hpp"
#include "qdyn/model.hpp"

// Sliding-window open-loop evaluation: roll the model T steps ahead with
// ground-truth actions, then report horizon-averaged velocity and attitude
// errors plus per-step error curves.
//
// Units: delta_z / delta_v / delta_omega are mean squared velocity errors
// ((m/s)^2, (rad/s)^2); delta_q is the mean quaternion-log angle in radians
// (half the geometric rotation angle).

namespace qdyn::eval {

struct WindowMetrics {
    int32_t traj = 0;
    int32_t start = 0;
    double delta_z = 0;     // 6-dim (v, omega) squared error, horizon mean
    double delta_v = 0;     // linear part only
    double delta_omega = 0; // angular part only
    double delta_q = 0;     // radians
};

struct RolloutReport {
    int64_t horizon = 0;
    std::vector<WindowMetrics> windows;
    // per-step statistics over all windows (population variance)
    std::vector<double> step_mse_z_mean, step_mse_z_var;
    std::vector<double> step_theta_mean, step_theta_var;
    // aggregates: arithmetic means over windows
    double mean_delta_z = 0, mean_delta_v = 0, mean_delta_omega = 0, mean_delta_q = 0;
};

RolloutReport evaluate(const nn::PredictorModel& model,
                       const std::vector<data::Trajectory>& trajs, int64_t horizon = 60,
                       int64_t stride = 10);

/// Oracle seam: predict the next state (10 values: v, omega, q) from a single
/// window. `next_index` is the absolute sample index being predicted.
using StepOracle = std::function<void(int32_t traj, int64_t next_index,
                                      std::span<const double> window_states,
                                      std::span<const double> window_actions,
                                      std::span<double> out_state)>;

RolloutReport evaluate_with(const StepOracle& oracle,
                            const std::vector<data::Trajectory>& trajs, int64_t history,
                            int64_t horizon, int64_t stride);

/// Rollout deltas over an already-gathered batch (horizon = batch.unroll).
struct BatchDeltas {
    double delta_z = 0, delta_v = 0, delta_omega = 0, delta_q = 0;
};
BatchDeltas evaluate_batch(const nn::PredictorModel& model, const data::WindowBatch& batch);

void write_report_csv(const std::string& path, const RolloutReport& report);
void write_curve_csv(const std::string& path, const RolloutReport& report);
std::string format_summary(const RolloutReport& report);

} // namespace qdyn::eval
