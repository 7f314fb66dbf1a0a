#include "qdyn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "qdyn/errors.hpp"
#include "qdyn/evaluator.hpp"

namespace qdyn::train {

void TrainConfig::validate() const {
    if (iterations < 1) throw ConfigError("train: iterations must be >= 1");
    if (warmup_iters >= iterations)
        throw ConfigError("train: warmup_iters must be below iterations");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (unroll < 1) throw ConfigError("train: unroll must be >= 1");
    if (lr_peak <= 0.0) throw ConfigError("train: lr_peak must be positive");
    if (grad_clip && *grad_clip <= 0.0) throw ConfigError("train: grad_clip must be positive");
}

double TrainConfig::resolved_grad_clip() const {
    if (grad_clip) return *grad_clip;
    return unroll > 5 ? 10.0 : 0.0;
}

double lr_schedule(int64_t iter, const TrainConfig& cfg) {
    if (iter < 0 || iter >= cfg.iterations) throw ConfigError("lr_schedule: iteration out of range");
    if (iter < cfg.warmup_iters) return cfg.lr_peak; // constant warmup
    const double progress = static_cast<double>(iter - cfg.warmup_iters) /
                            static_cast<double>(cfg.iterations - cfg.warmup_iters);
    return cfg.lr_peak * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// ---- AdamW -----------------------------------------------------------------

AdamW::AdamW(double beta1, double beta2, double weight_decay, double eps)
    : b1_(beta1), b2_(beta2), wd_(weight_decay), eps_(eps) {}

bool AdamW::step(std::span<double* const> params, std::span<const int64_t> sizes,
                 std::span<const double* const> grads, double lr) {
    if (params.size() != sizes.size() || params.size() != grads.size())
        throw ShapeError("adamw: parameter/gradient group size mismatch");
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(static_cast<size_t>(sizes[i]), 0.0);
            v_[i].assign(static_cast<size_t>(sizes[i]), 0.0);
        }
    }
    for (size_t i = 0; i < params.size(); ++i)
        for (int64_t j = 0; j < sizes[i]; ++j)
            if (!std::isfinite(grads[i][j])) {
                std::fprintf(stderr, "adamw: non-finite gradient in group %zu, iteration aborted\n",
                             i);
                return false;
            }

    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        double* p = params[i];
        const double* g = grads[i];
        auto& m = m_[i];
        auto& v = v_[i];
        for (int64_t j = 0; j < sizes[i]; ++j) {
            m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
            v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * wd_ * p[j];                      // decoupled decay
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
    return true;
}

// ---- multi-step loss ----------------------------------------------------------

ad::Tensor multi_step_loss_with(const StepFn& step, nn::Binding& binding,
                                const data::WindowBatch& batch, int64_t unroll) {
    if (unroll < 1) throw ConfigError("multi_step_loss: unroll must be >= 1");
    if (unroll > batch.unroll)
        throw Error("multi_step_loss: unroll " + std::to_string(unroll) +
                    " exceeds the " + std::to_string(batch.unroll) + " targets in the batch");
    const int64_t b = batch.count, h = batch.history;

    ad::Tensor states({b, h, 10},
                      std::vector<double>(batch.state_hist.begin(), batch.state_hist.end()));
    ad::Tensor actions({b, h, 4},
                       std::vector<double>(batch.action_hist.begin(), batch.action_hist.end()));

    const nn::RunMode entry_mode = binding.mode();
    ad::Tensor total;
    for (int64_t i = 0; i < unroll; ++i) {
        // batch-norm statistics freeze after the first unroll step so every
        // step normalizes identically
        if (entry_mode == nn::RunMode::Train)
            binding.set_mode(i == 0 ? nn::RunMode::Train : nn::RunMode::FrozenStats);
        auto pred = step(binding, states, actions, i);

        // gather target rows for step i
        std::vector<double> tgt(static_cast<size_t>(b * 10));
        for (int64_t wi = 0; wi < b; ++wi)
            std::copy(batch.target_states.begin() + (wi * batch.unroll + i) * 10,
                      batch.target_states.begin() + (wi * batch.unroll + i) * 10 + 10,
                      tgt.begin() + wi * 10);
        ad::Tensor target({b, 10}, std::move(tgt));

        // sign-align the predicted quaternion to the target (double cover)
        std::vector<double> sign(static_cast<size_t>(b), 1.0);
        {
            const auto qp = pred.quat.data();
            const auto qt = target.data();
            for (int64_t wi = 0; wi < b; ++wi) {
                double dot = 0;
                for (int64_t j = 0; j < 4; ++j)
                    dot += qp[wi * 4 + j] * qt[wi * 10 + 6 + j];
                if (dot < 0) sign[wi] = -1.0;
            }
        }
        ad::Tensor q_aligned = ad::scale_rows(pred.quat, std::move(sign));
        ad::Tensor pred_state = ad::concat({pred.v, pred.omega, q_aligned}, 1);
        ad::Tensor step_loss = ad::sum(ad::squared_difference(pred_state, target));
        total = i == 0 ? step_loss : ad::add(total, step_loss);

        if (i + 1 == unroll) break;

        // feed the (unaligned) prediction back into the shifted window with
        // the ground-truth next action
        ad::Tensor new_state = ad::reshape(ad::concat({pred.v, pred.omega, pred.quat}, 1),
                                           {b, 1, 10});
        std::vector<double> na(static_cast<size_t>(b * 4));
        for (int64_t wi = 0; wi < b; ++wi)
            std::copy(batch.future_actions.begin() + (wi * batch.unroll + i + 1) * 4,
                      batch.future_actions.begin() + (wi * batch.unroll + i + 1) * 4 + 4,
                      na.begin() + wi * 4);
        ad::Tensor new_action({b, 1, 4}, std::move(na));
        if (h > 1) {
            states = ad::concat({ad::slice(states, 1, 1, h - 1), new_state}, 1);
            actions = ad::concat({ad::slice(actions, 1, 1, h - 1), new_action}, 1);
        } else {
            states = new_state;
            actions = new_action;
        }
    }
    binding.set_mode(entry_mode);
    return ad::mul_scalar(total, 1.0 / static_cast<double>(unroll * b));
}

ad::Tensor multi_step_loss(const nn::PredictorModel& model, nn::Binding& binding,
                           const data::WindowBatch& batch, int64_t unroll) {
    return multi_step_loss_with(
        [&model](nn::Binding& b, const ad::Tensor& s, const ad::Tensor& a, int64_t) {
            return model.step(b, s, a);
        },
        binding, batch, unroll);
}

// ---- training loop --------------------------------------------------------------

namespace {

struct LearnableView {
    std::vector<double*> params;
    std::vector<int64_t> sizes;
    std::vector<int> ids;
};

LearnableView learnables(nn::ParamStore& store) {
    LearnableView v;
    for (size_t i = 0; i < store.count(); ++i) {
        auto& e = store.entry(static_cast<int>(i));
        if (!e.learnable) continue;
        v.params.push_back(e.value.data());
        v.sizes.push_back(static_cast<int64_t>(e.value.size()));
        v.ids.push_back(static_cast<int>(i));
    }
    return v;
}

std::vector<std::vector<double>> snapshot(const nn::ParamStore& store) {
    std::vector<std::vector<double>> s;
    for (const auto& e : store.entries()) s.push_back(e.value);
    return s;
}

void restore(nn::ParamStore& store, const std::vector<std::vector<double>>& snap) {
    for (size_t i = 0; i < store.count(); ++i) store.entry(static_cast<int>(i)).value = snap[i];
}

} // namespace

TrainResult train(nn::PredictorModel& model, const data::WindowDataset& train_set,
                  const data::WindowDataset& val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.size() < 1) throw Error("train: no training windows");
    if (cfg.unroll > train_set.unroll())
        throw Error("train: unroll exceeds the dataset's target length");

    std::mt19937_64 order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<int64_t> order(static_cast<size_t>(train_set.size()));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    size_t cursor = 0;

    // fixed validation subset, chosen once
    std::vector<int64_t> val_ids;
    if (val_set.size() > 0 && cfg.val_interval > 0) {
        std::mt19937_64 val_rng(cfg.seed ^ 0x7f4a7c159e3779b9ull);
        std::vector<int64_t> all(static_cast<size_t>(val_set.size()));
        std::iota(all.begin(), all.end(), 0);
        std::shuffle(all.begin(), all.end(), val_rng);
        const auto take = std::min<size_t>(all.size(), static_cast<size_t>(cfg.val_max_windows));
        val_ids.assign(all.begin(), all.begin() + take);
        std::sort(val_ids.begin(), val_ids.end());
    }

    AdamW opt(cfg.beta1, cfg.beta2, cfg.weight_decay);
    LearnableView view = learnables(model.params());
    const double clip = cfg.resolved_grad_clip();

    TrainResult result;
    std::vector<std::vector<double>> best;
    int consecutive_bad = 0;

    for (int64_t iter = 0; iter < cfg.iterations; ++iter) {
        // next batch from the seeded shuffle, reshuffling each epoch
        std::vector<int64_t> ids(static_cast<size_t>(cfg.batch));
        for (int64_t i = 0; i < cfg.batch; ++i) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), order_rng);
                cursor = 0;
            }
            ids[static_cast<size_t>(i)] = order[cursor++];
        }
        const data::WindowBatch batch = train_set.gather(ids);

        ad::Tape tape;
        nn::Binding binding(model.params(), &tape, nn::RunMode::Train);
        ad::Tensor loss = multi_step_loss(model, binding, batch, cfg.unroll);
        const double loss_v = loss.value();
        const double lr = lr_schedule(iter, cfg);

        if (!std::isfinite(loss_v)) {
            if (++consecutive_bad >= 10)
                throw TrainingInstabilityError(
                    "training instability: loss non-finite for 10 consecutive iterations "
                    "(iteration " + std::to_string(iter) + ")");
            result.log.push_back({iter, loss_v, lr, 0.0});
            continue;
        }

        ad::Gradients grads = tape.backward(loss);
        std::vector<std::vector<double>> gbufs;
        gbufs.reserve(view.ids.size());
        double gnorm_sq = 0.0;
        for (int id : view.ids) {
            ad::Tensor g = grads.grad(binding.param(id));
            std::vector<double> buf(g.data().begin(), g.data().end());
            for (double x : buf) gnorm_sq += x * x;
            gbufs.push_back(std::move(buf));
        }
        double gnorm = std::sqrt(gnorm_sq);
        if (clip > 0.0 && std::isfinite(gnorm) && gnorm > clip) {
            const double scale = clip / gnorm;
            for (auto& buf : gbufs)
                for (double& x : buf) x *= scale;
        }

        std::vector<const double*> gptrs;
        for (const auto& buf : gbufs) gptrs.push_back(buf.data());
        const bool ok = opt.step(view.params, view.sizes, gptrs, lr);
        if (ok) consecutive_bad = 0;
        else if (++consecutive_bad >= 10)
            throw TrainingInstabilityError(
                "training instability: non-finite gradients for 10 consecutive iterations "
                "(iteration " + std::to_string(iter) + ")");

        result.log.push_back({iter, loss_v, lr, gnorm});
        result.final_loss = loss_v;

        if (!val_ids.empty() && ((iter + 1) % cfg.val_interval == 0 || iter + 1 == cfg.iterations)) {
            const data::WindowBatch vb = val_set.gather(val_ids);
            const eval::BatchDeltas d = eval::evaluate_batch(model, vb);
            result.val_log.push_back({iter, d.delta_z, d.delta_v, d.delta_omega, d.delta_q});
            if (result.best_iter < 0 || d.delta_v < result.best_val_delta_v) {
                result.best_val_delta_v = d.delta_v;
                result.best_iter = iter;
                best = snapshot(model.params());
            }
        }
    }

    if (!best.empty()) restore(model.params(), best);
    return result;
}

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "iter,loss,lr,grad_norm\n";
    out.precision(12);
    for (const auto& r : rows)
        out << r.iter << ',' << r.loss << ',' << r.lr << ',' << r.grad_norm << '\n';
}

void write_val_log_csv(const std::string& path, const std::vector<ValLogRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "iter,delta_z,delta_v,delta_omega,delta_q\n";
    out.precision(12);
    for (const auto& r : rows)
        out << r.iter << ',' << r.delta_z << ',' << r.delta_v << ',' << r.delta_omega << ','
            << r.delta_q << '\n';
}

} // namespace qdyn::train
