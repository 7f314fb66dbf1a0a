#include "qdyn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "qdyn/io.hpp"

namespace qdyn::nn {

// ---- ParamStore / Binding ------------------------------------------------

int ParamStore::add(std::string name, ad::Shape shape, std::vector<double> init,
                    bool learnable) {
    if (find(name) >= 0) throw Error("parameter '" + name + "' already registered");
    if (ad::numel(shape) != static_cast<int64_t>(init.size()))
        throw ShapeError("parameter '" + name + "': shape " + ad::shape_str(shape) +
                         " does not hold " + std::to_string(init.size()) + " values");
    entries_.push_back(ParamEntry{std::move(name), std::move(shape), std::move(init), learnable});
    return static_cast<int>(entries_.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
    for (size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name) return static_cast<int>(i);
    return -1;
}

ParamEntry& ParamStore::entry(const std::string& name) {
    const int id = find(name);
    if (id < 0) throw Error("no parameter named '" + name + "'");
    return entries_[id];
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
    const int id = find(name);
    if (id < 0) throw Error("no parameter named '" + name + "'");
    return entries_[id];
}

int64_t ParamStore::learnable_scalars() const {
    int64_t n = 0;
    for (const auto& e : entries_)
        if (e.learnable) n += static_cast<int64_t>(e.value.size());
    return n;
}

int64_t ParamStore::scalars_with_prefix(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& e : entries_)
        if (e.learnable && e.name.rfind(prefix, 0) == 0)
            n += static_cast<int64_t>(e.value.size());
    return n;
}

Binding::Binding(ParamStore& store, ad::Tape* tape, RunMode mode)
    : store_(&store), tape_(tape), mode_(mode), cache_(store.count()) {
    if (tape_) {
        // leaves first so the gradient map covers every learnable parameter
        for (size_t i = 0; i < store.count(); ++i) {
            const auto& e = store.entry(static_cast<int>(i));
            if (e.learnable) cache_[i] = tape_->leaf(e.shape, e.value);
        }
    }
}

const ad::Tensor& Binding::param(int id) {
    auto& slot = cache_[id];
    if (!slot) {
        const auto& e = store_->entry(id);
        slot = ad::Tensor(e.shape, e.value);
    }
    return *slot;
}

// ---- names / small config helpers -----------------------------------------

std::string to_string(EncoderKind k) {
    switch (k) {
    case EncoderKind::Mlp: return "mlp";
    case EncoderKind::Lstm: return "lstm";
    case EncoderKind::Gru: return "gru";
    case EncoderKind::Tcn: return "tcn";
    }
    return "?";
}

std::string to_string(HeadKind k) {
    switch (k) {
    case HeadKind::FullState: return "fullstate";
    case HeadKind::MultiHead: return "multihead";
    case HeadKind::Decoupled: return "decoupled";
    }
    return "?";
}

EncoderKind encoder_kind_from(const std::string& s) {
    if (s == "mlp") return EncoderKind::Mlp;
    if (s == "lstm") return EncoderKind::Lstm;
    if (s == "gru") return EncoderKind::Gru;
    if (s == "tcn") return EncoderKind::Tcn;
    throw ConfigError("unknown encoder '" + s + "' (mlp, lstm, gru, tcn)");
}

HeadKind head_kind_from(const std::string& s) {
    if (s == "fullstate") return HeadKind::FullState;
    if (s == "multihead") return HeadKind::MultiHead;
    if (s == "decoupled") return HeadKind::Decoupled;
    throw ConfigError("unknown head '" + s + "' (fullstate, multihead, decoupled)");
}

std::string FeatureMask::str() const {
    std::string s;
    if (linear_velocity) s += "v,";
    if (angular_velocity) s += "w,";
    if (attitude) s += "q,";
    if (!s.empty()) s.pop_back();
    return s;
}

FeatureMask FeatureMask::from_string(const std::string& s) {
    FeatureMask m{false, false, false};
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok == "v") m.linear_velocity = true;
        else if (tok == "w" || tok == "omega") m.angular_velocity = true;
        else if (tok == "q") m.attitude = true;
        else if (!tok.empty()) throw ConfigError("unknown input feature '" + tok + "'");
    }
    return m;
}

std::vector<int64_t> EncoderConfig::resolved_layers() const {
    if (layer_sizes) return *layer_sizes;
    switch (kind) {
    case EncoderKind::Mlp: return {1024, 512, 512};
    case EncoderKind::Lstm: return {512, 512, 512};
    case EncoderKind::Gru: return {512, 512, 512};
    case EncoderKind::Tcn: return {512, 256, 256};
    }
    return {};
}

void EncoderConfig::validate() const {
    if (history < 1) throw ConfigError("history must be >= 1");
    if (mask.state_features() + kActionFeatures < kActionFeatures + 1)
        throw ConfigError("input feature mask selects no state features");
    if (kind == EncoderKind::Tcn) {
        if (kernel < 1) throw ConfigError("TCN kernel must be >= 1");
        if (dilation_base < 1) throw ConfigError("TCN dilation base must be >= 1");
        if (resolved_layers().empty()) throw ConfigError("TCN needs at least one level");
    }
}

void ModelConfig::validate() const { encoder.validate(); }

// ---- init ------------------------------------------------------------------

namespace {

std::vector<double> glorot(int64_t n, int64_t fan_in, int64_t fan_out, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = dist(rng);
    return v;
}

ad::Tensor identity_quat_rows(int64_t batch) {
    std::vector<double> v(static_cast<size_t>(batch * 4), 0.0);
    for (int64_t i = 0; i < batch; ++i) v[i * 4] = 1.0;
    return ad::Tensor({batch, 4}, std::move(v));
}

} // namespace

// ---- layers ------------------------------------------------------------------

Linear Linear::create(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                      bool zero_init, std::mt19937_64& rng) {
    Linear l;
    l.in_ = in;
    l.out_ = out;
    std::vector<double> w = zero_init ? std::vector<double>(static_cast<size_t>(in * out), 0.0)
                                      : glorot(in * out, in, out, rng);
    l.w_ = store.add(name + ".w", {in, out}, std::move(w));
    l.b_ = store.add(name + ".b", {out}, std::vector<double>(static_cast<size_t>(out), 0.0));
    return l;
}

ad::Tensor Linear::forward(Binding& b, const ad::Tensor& x) const {
    return ad::add_bias(ad::matmul(x, b.param(w_)), b.param(b_));
}

Conv1d Conv1d::create(ParamStore& store, const std::string& name, int64_t cin, int64_t cout,
                      int64_t kernel, int64_t dilation, std::mt19937_64& rng) {
    Conv1d c;
    c.cin_ = cin;
    c.cout_ = cout;
    c.kernel_ = kernel;
    c.dilation_ = dilation;
    c.w_ = store.add(name + ".w", {cout, cin, kernel},
                     glorot(cout * cin * kernel, cin * kernel, cout * kernel, rng));
    c.b_ = store.add(name + ".b", {cout}, std::vector<double>(static_cast<size_t>(cout), 0.0));
    return c;
}

ad::Tensor Conv1d::forward(Binding& b, const ad::Tensor& x) const {
    return ad::conv1d_causal(x, b.param(w_), b.param(b_), dilation_);
}

BatchNorm1d BatchNorm1d::create(ParamStore& store, const std::string& name, int64_t channels) {
    BatchNorm1d bn;
    bn.channels_ = channels;
    const auto n = static_cast<size_t>(channels);
    bn.gamma_ = store.add(name + ".gamma", {channels}, std::vector<double>(n, 1.0));
    bn.beta_ = store.add(name + ".beta", {channels}, std::vector<double>(n, 0.0));
    bn.rmean_ = store.add(name + ".rmean", {channels}, std::vector<double>(n, 0.0), false);
    bn.rvar_ = store.add(name + ".rvar", {channels}, std::vector<double>(n, 1.0), false);
    return bn;
}

ad::Tensor BatchNorm1d::forward(Binding& b, const ad::Tensor& x) const {
    state_.running_mean = &b.store().entry(rmean_).value;
    state_.running_var = &b.store().entry(rvar_).value;
    ad::BatchNormMode mode = ad::BatchNormMode::Eval;
    if (b.mode() == RunMode::Train) mode = ad::BatchNormMode::Train;
    else if (b.mode() == RunMode::FrozenStats) mode = ad::BatchNormMode::FrozenBatch;
    return ad::batch_norm_1d(x, b.param(gamma_), b.param(beta_), state_, mode);
}

MlpStack MlpStack::create(ParamStore& store, const std::string& name, int64_t in,
                          std::span<const int64_t> hidden_sizes, int64_t out_dim,
                          bool zero_out, std::mt19937_64& rng) {
    MlpStack m;
    int64_t cur = in;
    for (size_t i = 0; i < hidden_sizes.size(); ++i) {
        m.hidden.push_back(Linear::create(store, name + ".l" + std::to_string(i), cur,
                                          hidden_sizes[i], false, rng));
        cur = hidden_sizes[i];
    }
    m.out = Linear::create(store, name + ".out", cur, out_dim, zero_out, rng);
    return m;
}

ad::Tensor MlpStack::forward(Binding& b, const ad::Tensor& x) const {
    ad::Tensor h = x;
    for (const auto& l : hidden) h = ad::leaky_relu(l.forward(b, h), kLeakySlope);
    return out.forward(b, h);
}

// ---- encoders -----------------------------------------------------------------

namespace {

class MlpEncoder final : public Encoder {
public:
    MlpEncoder(ParamStore& store, const std::string& name, const EncoderConfig& cfg,
               std::mt19937_64& rng) {
        const auto layers = cfg.resolved_layers();
        in_ = cfg.history * cfg.input_features();
        out_ = layers.empty() ? in_ : layers.back();
        int64_t cur = in_;
        for (size_t i = 0; i < layers.size(); ++i) {
            hidden_.push_back(
                Linear::create(store, name + ".l" + std::to_string(i), cur, layers[i], false, rng));
            cur = layers[i];
        }
    }

    ad::Tensor forward(Binding& b, const ad::Tensor& window) const override {
        const int64_t batch = window.shape()[0];
        ad::Tensor h = ad::reshape(window, {batch, in_});
        for (const auto& l : hidden_) h = ad::leaky_relu(l.forward(b, h), kLeakySlope);
        return h;
    }

    int64_t out_features() const override { return out_; }

private:
    std::vector<Linear> hidden_;
    int64_t in_ = 0, out_ = 0;
};

// One recurrent layer; gates packed along the output axis.
struct RecurrentWeights {
    int wx = -1, wh = -1, b = -1;
    int64_t in = 0, hidden = 0;

    static RecurrentWeights create(ParamStore& store, const std::string& name, int64_t in,
                                   int64_t hidden, int64_t gates, std::mt19937_64& rng) {
        RecurrentWeights r;
        r.in = in;
        r.hidden = hidden;
        r.wx = store.add(name + ".wx", {in, gates * hidden},
                         glorot(in * gates * hidden, in, hidden, rng));
        r.wh = store.add(name + ".wh", {hidden, gates * hidden},
                         glorot(hidden * gates * hidden, hidden, hidden, rng));
        r.b = store.add(name + ".b", {gates * hidden},
                        std::vector<double>(static_cast<size_t>(gates * hidden), 0.0));
        return r;
    }
};

class LstmEncoder final : public Encoder {
public:
    LstmEncoder(ParamStore& store, const std::string& name, const EncoderConfig& cfg,
                std::mt19937_64& rng)
        : history_(cfg.history) {
        const auto layers = cfg.resolved_layers();
        int64_t cur = cfg.input_features();
        for (size_t i = 0; i < layers.size(); ++i) {
            layers_.push_back(RecurrentWeights::create(store, name + ".l" + std::to_string(i),
                                                       cur, layers[i], 4, rng));
            cur = layers[i];
        }
        out_ = cur;
    }

    ad::Tensor forward(Binding& b, const ad::Tensor& window) const override {
        const int64_t batch = window.shape()[0];
        std::vector<ad::Tensor> seq;
        for (int64_t t = 0; t < history_; ++t)
            seq.push_back(ad::reshape(ad::slice(window, 1, t, 1),
                                      {batch, window.shape()[2]}));
        for (const auto& lw : layers_) {
            ad::Tensor h = ad::Tensor::zeros({batch, lw.hidden});
            ad::Tensor c = ad::Tensor::zeros({batch, lw.hidden});
            std::vector<ad::Tensor> next;
            for (const auto& x : seq) {
                ad::Tensor pre = ad::add_bias(
                    ad::add(ad::matmul(x, b.param(lw.wx)), ad::matmul(h, b.param(lw.wh))),
                    b.param(lw.b));
                ad::Tensor i = ad::sigmoid(ad::slice(pre, 1, 0, lw.hidden));
                ad::Tensor f = ad::sigmoid(ad::slice(pre, 1, lw.hidden, lw.hidden));
                ad::Tensor g = ad::tanh(ad::slice(pre, 1, 2 * lw.hidden, lw.hidden));
                ad::Tensor o = ad::sigmoid(ad::slice(pre, 1, 3 * lw.hidden, lw.hidden));
                c = ad::add(ad::mul(f, c), ad::mul(i, g));
                h = ad::mul(o, ad::tanh(c));
                next.push_back(h);
            }
            seq = std::move(next);
        }
        return seq.back();
    }

    int64_t out_features() const override { return out_; }

private:
    std::vector<RecurrentWeights> layers_;
    int64_t history_, out_ = 0;
};

class GruEncoder final : public Encoder {
public:
    GruEncoder(ParamStore& store, const std::string& name, const EncoderConfig& cfg,
               std::mt19937_64& rng)
        : history_(cfg.history) {
        const auto layers = cfg.resolved_layers();
        int64_t cur = cfg.input_features();
        for (size_t i = 0; i < layers.size(); ++i) {
            layers_.push_back(RecurrentWeights::create(store, name + ".l" + std::to_string(i),
                                                       cur, layers[i], 3, rng));
            cur = layers[i];
        }
        out_ = cur;
    }

    ad::Tensor forward(Binding& b, const ad::Tensor& window) const override {
        const int64_t batch = window.shape()[0];
        std::vector<ad::Tensor> seq;
        for (int64_t t = 0; t < history_; ++t)
            seq.push_back(ad::reshape(ad::slice(window, 1, t, 1),
                                      {batch, window.shape()[2]}));
        for (const auto& lw : layers_) {
            ad::Tensor h = ad::Tensor::zeros({batch, lw.hidden});
            std::vector<ad::Tensor> next;
            for (const auto& x : seq) {
                // gate order r, z, n; single bias on the input path
                ad::Tensor px = ad::add_bias(ad::matmul(x, b.param(lw.wx)), b.param(lw.b));
                ad::Tensor ph = ad::matmul(h, b.param(lw.wh));
                ad::Tensor r = ad::sigmoid(ad::add(ad::slice(px, 1, 0, lw.hidden),
                                                   ad::slice(ph, 1, 0, lw.hidden)));
                ad::Tensor z = ad::sigmoid(ad::add(ad::slice(px, 1, lw.hidden, lw.hidden),
                                                   ad::slice(ph, 1, lw.hidden, lw.hidden)));
                ad::Tensor n = ad::tanh(
                    ad::add(ad::slice(px, 1, 2 * lw.hidden, lw.hidden),
                            ad::mul(r, ad::slice(ph, 1, 2 * lw.hidden, lw.hidden))));
                // h' = (1 - z) * n + z * h
                ad::Tensor one_minus_z = ad::add_scalar(ad::mul_scalar(z, -1.0), 1.0);
                h = ad::add(ad::mul(one_minus_z, n), ad::mul(z, h));
                next.push_back(h);
            }
            seq = std::move(next);
        }
        return seq.back();
    }

    int64_t out_features() const override { return out_; }

private:
    std::vector<RecurrentWeights> layers_;
    int64_t history_, out_ = 0;
};

struct TcnBlock {
    Conv1d conv1, conv2;
    BatchNorm1d bn1, bn2;
    std::unique_ptr<Conv1d> skip; // 1x1 when channel counts differ
};

class TcnEncoder final : public Encoder {
public:
    TcnEncoder(ParamStore& store, const std::string& name, const EncoderConfig& cfg,
               std::mt19937_64& rng)
        : history_(cfg.history) {
        const auto channels = cfg.resolved_layers();
        kernel_ = std::min(cfg.kernel, cfg.history); // degenerate H=1 window stays usable
        int64_t cur = cfg.input_features();
        int64_t receptive = 1;
        for (size_t k = 0; k < channels.size(); ++k) {
            int64_t dil = 1;
            for (size_t p = 0; p < k; ++p) dil *= cfg.dilation_base;
            // keep every tap inside the window
            while (dil > 1 && dil * (kernel_ - 1) >= cfg.history) dil /= cfg.dilation_base;
            if (dil * (kernel_ - 1) >= cfg.history && kernel_ > 1)
                throw ConfigError("TCN kernel " + std::to_string(kernel_) +
                                  " does not fit history " + std::to_string(cfg.history));
            auto blk = std::make_unique<TcnBlock>();
            const std::string bn = name + ".b" + std::to_string(k);
            blk->conv1 = Conv1d::create(store, bn + ".conv1", cur, channels[k], kernel_, dil, rng);
            blk->bn1 = BatchNorm1d::create(store, bn + ".bn1", channels[k]);
            blk->conv2 =
                Conv1d::create(store, bn + ".conv2", channels[k], channels[k], kernel_, dil, rng);
            blk->bn2 = BatchNorm1d::create(store, bn + ".bn2", channels[k]);
            if (cur != channels[k])
                blk->skip = std::make_unique<Conv1d>(
                    Conv1d::create(store, bn + ".skip", cur, channels[k], 1, 1, rng));
            blocks_.push_back(std::move(blk));
            receptive += (kernel_ - 1) * dil * 2;
            cur = channels[k];
        }
        out_ = cur;
        if (receptive < cfg.history)
            throw ConfigError("TCN receptive field " + std::to_string(receptive) +
                              " does not cover history " + std::to_string(cfg.history));
    }

    ad::Tensor forward(Binding& b, const ad::Tensor& window) const override {
        const int64_t batch = window.shape()[0];
        ad::Tensor x = ad::swap_last_axes(window); // (B,features,H)
        for (const auto& blk : blocks_) {
            ad::Tensor y = ad::leaky_relu(blk->bn1.forward(b, blk->conv1.forward(b, x)),
                                          kLeakySlope);
            y = ad::leaky_relu(blk->bn2.forward(b, blk->conv2.forward(b, y)), kLeakySlope);
            ad::Tensor s = blk->skip ? blk->skip->forward(b, x) : x;
            x = ad::leaky_relu(ad::add(s, y), kLeakySlope);
        }
        return ad::reshape(ad::slice(x, 2, history_ - 1, 1), {batch, out_});
    }

    int64_t out_features() const override { return out_; }

private:
    std::vector<std::unique_ptr<TcnBlock>> blocks_;
    int64_t history_, kernel_ = 0, out_ = 0;
};

} // namespace

std::unique_ptr<Encoder> make_encoder(ParamStore& store, const std::string& name,
                                      const EncoderConfig& cfg, std::mt19937_64& rng) {
    switch (cfg.kind) {
    case EncoderKind::Mlp: return std::make_unique<MlpEncoder>(store, name, cfg, rng);
    case EncoderKind::Lstm: return std::make_unique<LstmEncoder>(store, name, cfg, rng);
    case EncoderKind::Gru: return std::make_unique<GruEncoder>(store, name, cfg, rng);
    case EncoderKind::Tcn: return std::make_unique<TcnEncoder>(store, name, cfg, rng);
    }
    throw ConfigError("bad encoder kind");
}

// ---- PredictorModel ---------------------------------------------------------

void PredictorModel::build(uint64_t seed) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const auto& ec = cfg_.encoder;
    switch (cfg_.head) {
    case HeadKind::FullState:
        enc_main_ = make_encoder(store_, "net.enc", ec, rng);
        dec_main_ = MlpStack::create(store_, "net.dec", enc_main_->out_features(),
                                     cfg_.decoder_sizes, kStateFeatures, true, rng);
        break;
    case HeadKind::MultiHead:
        enc_main_ = make_encoder(store_, "net.enc", ec, rng);
        dec_main_ = MlpStack::create(store_, "net.dec_vel", enc_main_->out_features(),
                                     cfg_.decoder_sizes, 6, true, rng);
        dec_att_ = std::make_unique<MlpStack>(MlpStack::create(
            store_, "net.dec_att", enc_main_->out_features(), cfg_.decoder_sizes, 4, true, rng));
        break;
    case HeadKind::Decoupled:
        enc_main_ = make_encoder(store_, "vel.enc", ec, rng);
        dec_main_ = MlpStack::create(store_, "vel.dec", enc_main_->out_features(),
                                     cfg_.decoder_sizes, 6, true, rng);
        enc_att_ = make_encoder(store_, "att.enc", ec, rng);
        dec_att_ = std::make_unique<MlpStack>(MlpStack::create(
            store_, "att.dec", enc_att_->out_features(), cfg_.decoder_sizes, 4, true, rng));
        break;
    }
    for (const auto& [net, count] : per_network_counts()) {
        if (count > kParamBudget)
            std::fprintf(stderr,
                         "warning: network '%s' has %lld learnable parameters, above the "
                         "%lld real-time budget\n",
                         net.c_str(), static_cast<long long>(count),
                         static_cast<long long>(kParamBudget));
    }
}

PredictorModel PredictorModel::create(const ModelConfig& cfg, uint64_t seed) {
    PredictorModel m;
    m.cfg_ = cfg;
    m.build(seed);
    return m;
}

std::vector<std::pair<std::string, int64_t>> PredictorModel::per_network_counts() const {
    switch (cfg_.head) {
    case HeadKind::FullState:
    case HeadKind::MultiHead:
        return {{"net", store_.scalars_with_prefix("net.")}};
    case HeadKind::Decoupled:
        return {{"vel", store_.scalars_with_prefix("vel.")},
                {"att", store_.scalars_with_prefix("att.")}};
    }
    return {};
}

PredictorModel::Step PredictorModel::step(Binding& b, const ad::Tensor& states,
                                          const ad::Tensor& actions) const {
    const auto& ec = cfg_.encoder;
    if (states.shape().size() != 3 || states.shape()[1] != ec.history ||
        states.shape()[2] != kStateFeatures)
        throw ShapeError("step: state window " + ad::shape_str(states.shape()) +
                         " does not match (B," + std::to_string(ec.history) + ",10)");
    if (actions.shape() != ad::Shape{states.shape()[0], ec.history, kActionFeatures})
        throw ShapeError("step: action window " + ad::shape_str(actions.shape()) +
                         " does not match the state window");
    const int64_t batch = states.shape()[0];

    // encoder input: masked state groups then scaled actions, oldest -> newest
    std::vector<ad::Tensor> groups;
    if (ec.mask.linear_velocity) groups.push_back(ad::slice(states, 2, 0, 3));
    if (ec.mask.angular_velocity) groups.push_back(ad::slice(states, 2, 3, 3));
    if (ec.mask.attitude) groups.push_back(ad::slice(states, 2, 6, 4));
    groups.push_back(actions);
    ad::Tensor enc_in = groups.size() == 1 ? groups[0] : ad::concat(groups, 2);

    // current state (last row)
    ad::Tensor last = ad::reshape(ad::slice(states, 1, ec.history - 1, 1),
                                  {batch, kStateFeatures});
    ad::Tensor v_t = ad::slice(last, 1, 0, 3);
    ad::Tensor w_t = ad::slice(last, 1, 3, 3);
    ad::Tensor q_t = ad::slice(last, 1, 6, 4);

    Step out;
    switch (cfg_.head) {
    case HeadKind::FullState: {
        ad::Tensor f = enc_main_->forward(b, enc_in);
        ad::Tensor d = dec_main_.forward(b, f);
        out.v = ad::add(v_t, ad::slice(d, 1, 0, 3));
        out.omega = ad::add(w_t, ad::slice(d, 1, 3, 3));
        out.quat = ad::rows_normalize(ad::add(q_t, ad::slice(d, 1, 6, 4)));
        break;
    }
    case HeadKind::MultiHead: {
        ad::Tensor f = enc_main_->forward(b, enc_in);
        ad::Tensor dz = dec_main_.forward(b, f);
        ad::Tensor dq = dec_att_->forward(b, f);
        out.v = ad::add(v_t, ad::slice(dz, 1, 0, 3));
        out.omega = ad::add(w_t, ad::slice(dz, 1, 3, 3));
        out.quat = ad::rows_normalize(ad::add(q_t, dq));
        break;
    }
    case HeadKind::Decoupled: {
        ad::Tensor dz = dec_main_.forward(b, enc_main_->forward(b, enc_in));
        out.v = ad::add(v_t, ad::slice(dz, 1, 0, 3));
        out.omega = ad::add(w_t, ad::slice(dz, 1, 3, 3));
        // attitude increment: raw head output biased toward identity, then a
        // left quaternion product with the current attitude
        ad::Tensor raw = dec_att_->forward(b, enc_att_->forward(b, enc_in));
        ad::Tensor inc = ad::rows_normalize(ad::add(raw, identity_quat_rows(batch)));
        out.quat = ad::rows_normalize(ad::quat_mul_rows(inc, q_t));
        break;
    }
    }
    return out;
}

namespace {
void check_unit_quat_rows(std::span<const double> states, int64_t batch, int64_t h) {
    for (int64_t i = 0; i < batch * h; ++i) {
        const double* q = states.data() + i * kStateFeatures + 6;
        const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        if (std::abs(n - 1.0) > 1e-6)
            throw Error("predict: window quaternion at row " + std::to_string(i) +
                        " is not unit (norm " + std::to_string(n) + ")");
    }
}
} // namespace

std::vector<double> PredictorModel::predict_one_step(std::span<const double> states,
                                                     std::span<const double> actions,
                                                     int64_t batch) const {
    const int64_t h = cfg_.encoder.history;
    if (static_cast<int64_t>(states.size()) != batch * h * kStateFeatures)
        throw ShapeError("predict: expected " + std::to_string(batch * h * kStateFeatures) +
                         " state values, got " + std::to_string(states.size()));
    if (static_cast<int64_t>(actions.size()) != batch * h * kActionFeatures)
        throw ShapeError("predict: expected " + std::to_string(batch * h * kActionFeatures) +
                         " action values, got " + std::to_string(actions.size()));
    check_unit_quat_rows(states, batch, h);

    Binding b(const_cast<ParamStore&>(store_), nullptr, RunMode::Eval);
    ad::Tensor st({batch, h, kStateFeatures}, std::vector<double>(states.begin(), states.end()));
    ad::Tensor ac({batch, h, kActionFeatures}, std::vector<double>(actions.begin(), actions.end()));
    Step s = step(b, st, ac);

    std::vector<double> out(static_cast<size_t>(batch * kStateFeatures));
    for (int64_t i = 0; i < batch; ++i) {
        for (int64_t j = 0; j < 3; ++j) out[i * 10 + j] = s.v.data()[i * 3 + j];
        for (int64_t j = 0; j < 3; ++j) out[i * 10 + 3 + j] = s.omega.data()[i * 3 + j];
        for (int64_t j = 0; j < 4; ++j) out[i * 10 + 6 + j] = s.quat.data()[i * 4 + j];
    }
    return out;
}

std::vector<double> PredictorModel::rollout(std::span<const double> states,
                                            std::span<const double> actions, int64_t batch,
                                            std::span<const double> future_actions,
                                            int64_t steps) const {
    if (steps < 1) throw Error("rollout: need at least one step");
    const int64_t h = cfg_.encoder.history;
    if (static_cast<int64_t>(future_actions.size()) < batch * steps * kActionFeatures)
        throw ShapeError("rollout: need " + std::to_string(batch * steps * kActionFeatures) +
                         " future action values, got " + std::to_string(future_actions.size()));

    std::vector<double> win_s(states.begin(), states.end());
    std::vector<double> win_a(actions.begin(), actions.end());
    std::vector<double> out(static_cast<size_t>(batch * steps * kStateFeatures));

    for (int64_t t = 0; t < steps; ++t) {
        std::vector<double> pred = predict_one_step(win_s, win_a, batch);
        for (int64_t i = 0; i < batch; ++i)
            std::copy(pred.begin() + i * 10, pred.begin() + (i + 1) * 10,
                      out.begin() + (i * steps + t) * 10);
        if (t + 1 == steps) break;
        // shift: drop the oldest row, append the prediction and the true action
        for (int64_t i = 0; i < batch; ++i) {
            double* srow = win_s.data() + i * h * kStateFeatures;
            double* arow = win_a.data() + i * h * kActionFeatures;
            std::copy(srow + kStateFeatures, srow + h * kStateFeatures, srow);
            std::copy(arow + kActionFeatures, arow + h * kActionFeatures, arow);
            std::copy(pred.begin() + i * 10, pred.begin() + (i + 1) * 10,
                      srow + (h - 1) * kStateFeatures);
            const double* na = future_actions.data() + (i * steps + t + 1) * kActionFeatures;
            std::copy(na, na + kActionFeatures, arow + (h - 1) * kActionFeatures);
        }
    }
    return out;
}

// ---- checkpoints ---------------------------------------------------------------

namespace {
std::string join_sizes(const std::vector<int64_t>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

std::vector<int64_t> parse_sizes(const std::string& s) {
    std::vector<int64_t> v;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) v.push_back(std::stoll(tok));
    return v;
}
} // namespace

void PredictorModel::save(const std::string& path) const {
    io::KvMap header;
    header["head"] = to_string(cfg_.head);
    header["arch"] = to_string(cfg_.encoder.kind);
    header["layers"] = join_sizes(cfg_.encoder.resolved_layers());
    header["decoder"] = join_sizes(cfg_.decoder_sizes);
    header["kernel"] = std::to_string(cfg_.encoder.kernel);
    header["dilation_base"] = std::to_string(cfg_.encoder.dilation_base);
    header["history"] = std::to_string(cfg_.encoder.history);
    header["features"] = cfg_.encoder.mask.str();
    io::save_checkpoint(path, header, store_);
}

PredictorModel PredictorModel::load(const std::string& path) {
    io::Checkpoint ck = io::load_checkpoint(path);
    auto need = [&](const char* key) {
        auto it = ck.header.find(key);
        if (it == ck.header.end())
            throw ConfigError(path + ": checkpoint header missing '" + key + "'");
        return it->second;
    };
    ModelConfig cfg;
    cfg.head = head_kind_from(need("head"));
    cfg.encoder.kind = encoder_kind_from(need("arch"));
    cfg.encoder.layer_sizes = parse_sizes(need("layers"));
    cfg.decoder_sizes = parse_sizes(need("decoder"));
    cfg.encoder.kernel = std::stoll(need("kernel"));
    cfg.encoder.dilation_base = std::stoll(need("dilation_base"));
    cfg.encoder.history = std::stoll(need("history"));
    cfg.encoder.mask = FeatureMask::from_string(need("features"));

    PredictorModel m = create(cfg, /*seed=*/0);
    if (m.store_.count() != ck.params.count())
        throw ConfigError(path + ": checkpoint holds " + std::to_string(ck.params.count()) +
                          " parameters, model expects " + std::to_string(m.store_.count()));
    for (size_t i = 0; i < m.store_.count(); ++i) {
        auto& dst = m.store_.entry(static_cast<int>(i));
        const auto& src = ck.params.entry(static_cast<int>(i));
        if (src.name != dst.name || src.shape != dst.shape)
            throw ConfigError(path + ": checkpoint parameter '" + src.name +
                              "' does not match model parameter '" + dst.name + "'");
        dst.value = src.value;
    }
    return m;
}

} // namespace qdyn::nn
