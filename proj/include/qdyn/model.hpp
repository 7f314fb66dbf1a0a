#pragma once

#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qdyn/params.hpp"
#include "qdyn/tensor.hpp"

// History-windowed one-step predictors: four encoders (MLP, LSTM, GRU, TCN),
// a shared MLP decoder shape, and three head layouts (full-state, multi-head,
// decoupled). Every head predicts a state change, never an absolute state.

namespace qdyn::nn {

constexpr int64_t kStateFeatures = 10;  // v(3), omega(3), q(4)
constexpr int64_t kActionFeatures = 4;  // motor speeds, pre-scaled
constexpr int64_t kParamBudget = 5'200'000;
constexpr double kLeakySlope = 0.01;

enum class EncoderKind { Mlp, Lstm, Gru, Tcn };
enum class HeadKind { FullState, MultiHead, Decoupled };

std::string to_string(EncoderKind k);
std::string to_string(HeadKind k);
EncoderKind encoder_kind_from(const std::string& s);
HeadKind head_kind_from(const std::string& s);

// Which state feature groups feed the encoders. Actions are always included;
// the residual update always reads the full last state row regardless.
struct FeatureMask {
    bool linear_velocity = true;
    bool angular_velocity = true;
    bool attitude = true;

    int64_t state_features() const {
        return 3 * linear_velocity + 3 * angular_velocity + 4 * attitude;
    }
    std::string str() const; // e.g. "v,w,q"
    static FeatureMask from_string(const std::string& s);
};

struct EncoderConfig {
    EncoderKind kind = EncoderKind::Tcn;
    // unset: per-kind defaults; an explicitly empty list makes the MLP
    // encoder a flatten passthrough (useful for hand-set linear models)
    std::optional<std::vector<int64_t>> layer_sizes;
    int64_t kernel = 3;        // TCN only
    int64_t dilation_base = 2; // TCN only
    int64_t history = 20;      // H
    FeatureMask mask;

    std::vector<int64_t> resolved_layers() const;
    int64_t input_features() const { return mask.state_features() + kActionFeatures; }
    void validate() const;
};

struct ModelConfig {
    HeadKind head = HeadKind::Decoupled;
    EncoderConfig encoder;
    std::vector<int64_t> decoder_sizes = {512, 256, 256};

    void validate() const;
};

// ---- layers ------------------------------------------------------------

class Linear {
public:
    static Linear create(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                         bool zero_init, std::mt19937_64& rng);
    ad::Tensor forward(Binding& b, const ad::Tensor& x) const; // (B,in)->(B,out)
    int64_t in_features() const { return in_; }
    int64_t out_features() const { return out_; }

private:
    int w_ = -1, b_ = -1;
    int64_t in_ = 0, out_ = 0;
};

class Conv1d {
public:
    static Conv1d create(ParamStore& store, const std::string& name, int64_t cin, int64_t cout,
                         int64_t kernel, int64_t dilation, std::mt19937_64& rng);
    ad::Tensor forward(Binding& b, const ad::Tensor& x) const; // (B,Cin,L)->(B,Cout,L)
    int64_t out_channels() const { return cout_; }

private:
    int w_ = -1, b_ = -1;
    int64_t cin_ = 0, cout_ = 0, kernel_ = 0, dilation_ = 1;
};

class BatchNorm1d {
public:
    static BatchNorm1d create(ParamStore& store, const std::string& name, int64_t channels);
    ad::Tensor forward(Binding& b, const ad::Tensor& x) const;

private:
    int gamma_ = -1, beta_ = -1, rmean_ = -1, rvar_ = -1;
    int64_t channels_ = 0;
    mutable ad::BatchNormState state_;
};

// Hidden Linear layers with LeakyReLU, then a linear output layer.
struct MlpStack {
    std::vector<Linear> hidden;
    Linear out;

    static MlpStack create(ParamStore& store, const std::string& name, int64_t in,
                           std::span<const int64_t> hidden_sizes, int64_t out_dim,
                           bool zero_out, std::mt19937_64& rng);
    ad::Tensor forward(Binding& b, const ad::Tensor& x) const;
};

// ---- encoders ------------------------------------------------------------

class Encoder {
public:
    virtual ~Encoder() = default;
    /// window is (B,H,features); result is (B,out_features()).
    virtual ad::Tensor forward(Binding& b, const ad::Tensor& window) const = 0;
    virtual int64_t out_features() const = 0;
};

std::unique_ptr<Encoder> make_encoder(ParamStore& store, const std::string& name,
                                      const EncoderConfig& cfg, std::mt19937_64& rng);

// ---- the predictor --------------------------------------------------------

class PredictorModel {
public:
    PredictorModel(PredictorModel&&) = default;
    PredictorModel& operator=(PredictorModel&&) = default;
    PredictorModel(const PredictorModel&) = delete;
    PredictorModel& operator=(const PredictorModel&) = delete;

    static PredictorModel create(const ModelConfig& cfg, uint64_t seed);

    struct Step {
        ad::Tensor v;    // (B,3)
        ad::Tensor omega; // (B,3)
        ad::Tensor quat; // (B,4), unit rows
    };

    /// One prediction on whatever tape (or none) the binding carries.
    /// states (B,H,10) rows oldest->newest, actions (B,H,4) pre-scaled.
    Step step(Binding& b, const ad::Tensor& states, const ad::Tensor& actions) const;

    /// Inference one-step: returns B x 10 (v, omega, q). Validates the window.
    std::vector<double> predict_one_step(std::span<const double> states,
                                         std::span<const double> actions,
                                         int64_t batch) const;

    /// Open-loop rollout: predictions are fed back into the window while
    /// actions come from `future_actions` (B x T x 4). Returns B x T x 10.
    std::vector<double> rollout(std::span<const double> states,
                                std::span<const double> actions, int64_t batch,
                                std::span<const double> future_actions, int64_t steps) const;

    int64_t parameter_count() const { return store_.learnable_scalars(); }
    std::vector<std::pair<std::string, int64_t>> per_network_counts() const;

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    void save(const std::string& path) const;
    static PredictorModel load(const std::string& path);

private:
    PredictorModel() = default;
    void build(uint64_t seed);

    ModelConfig cfg_;
    ParamStore store_;
    std::unique_ptr<Encoder> enc_main_; // every head
    std::unique_ptr<Encoder> enc_att_;  // Decoupled only
    MlpStack dec_main_;                 // FullState -> 10, otherwise -> 6
    std::unique_ptr<MlpStack> dec_att_; // MultiHead / Decoupled -> 4
};

} // namespace qdyn::nn
