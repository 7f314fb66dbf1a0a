#pragma once

#include <string>
#include <vector>

#include "qdyn/evaluator.hpp"
#include "qdyn/trainer.hpp"

// Ablation grids: train one model per (architecture, H, U, head, input-mask)
// cell and seed, evaluate open-loop rollouts on held-out trajectories, and
// report per-cell seed means.

namespace qdyn::eval {

struct GridSpec {
    std::vector<nn::EncoderKind> archs{nn::EncoderKind::Tcn};
    std::vector<int64_t> histories{20};
    std::vector<int64_t> unrolls{10};
    std::vector<nn::HeadKind> heads{nn::HeadKind::Decoupled};
    std::vector<nn::FeatureMask> masks{nn::FeatureMask{}};
    int64_t seeds = 3;

    train::TrainConfig train; // per-cell budget; seed is the base seed
    std::vector<int64_t> encoder_layers; // empty: per-kind defaults
    std::vector<int64_t> decoder_layers{512, 256, 256};
    int64_t kernel = 3, dilation_base = 2;
    int64_t eval_horizon = 60, eval_stride = 10;
};

struct GridCell {
    nn::EncoderKind arch{};
    int64_t history = 0, unroll = 0;
    nn::HeadKind head{};
    nn::FeatureMask mask{};
    bool valid = true;          // invalid cells stay blank in the outputs
    std::string note;           // reason when invalid
    std::vector<double> seed_delta_z, seed_delta_v, seed_delta_q;
    double mean_delta_z = 0, mean_delta_v = 0, mean_delta_q = 0;
};

struct GridResult {
    std::vector<GridCell> cells;
};

/// Sequence encoders require H > 1; such cells (and cells whose model cannot
/// be constructed) are emitted blank rather than aborting the grid.
GridResult ablation_grid(const std::vector<data::Trajectory>& train_trajs,
                         const std::vector<data::Trajectory>& val_trajs,
                         const std::vector<data::Trajectory>& test_trajs,
                         const GridSpec& spec, int64_t jobs = 1);

void write_grid_csv(const std::string& path, const GridResult& result);

/// Text table: rows are (H,U) pairs (and the input mask when several are
/// swept), columns are architectures, each holding delta_v and delta_q.
std::string format_grid_table(const GridResult& result);

} // namespace qdyn::eval
