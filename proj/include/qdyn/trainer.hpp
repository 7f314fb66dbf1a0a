#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qdyn/data.hpp"
#include "qdyn/model.hpp"

// Multi-step unrolled training: the loss accumulates squared state error over
// U recursive predictions, with gradients flowing through the fed-back states.

namespace qdyn::train {

struct TrainConfig {
    int64_t iterations = 50'000;
    int64_t batch = 512;
    double lr_peak = 3e-4;
    int64_t warmup_iters = 5'000;
    double beta1 = 0.9, beta2 = 0.999;
    double weight_decay = 1e-4;
    int64_t unroll = 1;                 // U
    std::optional<double> grad_clip;    // unset: 10.0 when U > 5, else off
    uint64_t seed = 0;
    int64_t val_interval = 500;
    int64_t val_max_windows = 64;

    void validate() const;
    double resolved_grad_clip() const;  // 0 means off
};

/// Constant warmup at lr_peak, then cosine annealing to zero.
double lr_schedule(int64_t iter, const TrainConfig& cfg);

// Decoupled weight decay: applied straight to the weights, not via gradients.
class AdamW {
public:
    AdamW(double beta1, double beta2, double weight_decay, double eps = 1e-8);

    /// One update over a parameter group. NaN/Inf in any gradient aborts the
    /// iteration (no parameter is touched) and returns false.
    bool step(std::span<double* const> params, std::span<const int64_t> sizes,
              std::span<const double* const> grads, double lr);

    int64_t steps_taken() const { return t_; }

private:
    double b1_, b2_, wd_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Prediction hook so oracles can stand in for the model.
using StepFn = std::function<nn::PredictorModel::Step(
    nn::Binding&, const ad::Tensor& states, const ad::Tensor& actions, int64_t step)>;

/// Eq.-style unrolled loss: (1/(U*B)) sum over batch and steps of the squared
/// state error, quaternions compared componentwise after sign alignment to
/// the target. Predictions are fed back into the shifted window; actions come
/// from the batch's ground-truth future actions.
ad::Tensor multi_step_loss_with(const StepFn& step, nn::Binding& binding,
                                const data::WindowBatch& batch, int64_t unroll);

ad::Tensor multi_step_loss(const nn::PredictorModel& model, nn::Binding& binding,
                           const data::WindowBatch& batch, int64_t unroll);

struct TrainLogRow {
    int64_t iter;
    double loss, lr, grad_norm;
};

struct ValLogRow {
    int64_t iter;
    double delta_z, delta_v, delta_omega, delta_q;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    std::vector<ValLogRow> val_log;
    double best_val_delta_v = -1.0; // -1 when validation never ran
    int64_t best_iter = -1;
    double final_loss = 0.0;
};

/// Deterministic given cfg.seed. When validation runs, the model is left at
/// the parameters of the best validation delta_v. The val_set's unroll length
/// is the validation rollout horizon.
TrainResult train(nn::PredictorModel& model, const data::WindowDataset& train_set,
                  const data::WindowDataset& val_set, const TrainConfig& cfg);

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows);
void write_val_log_csv(const std::string& path, const std::vector<ValLogRow>& rows);

} // namespace qdyn::train
