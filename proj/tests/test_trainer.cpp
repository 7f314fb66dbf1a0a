#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "qdyn/sim.hpp"
#include "qdyn/trainer.hpp"
#include "helpers.hpp"

using namespace qdyn;
using nn::EncoderKind;
using nn::HeadKind;

namespace {

nn::ModelConfig mlp_decoupled(int64_t h, std::vector<int64_t> enc = {8},
                              std::vector<int64_t> dec = {8}) {
    nn::ModelConfig cfg;
    cfg.head = HeadKind::Decoupled;
    cfg.encoder.kind = EncoderKind::Mlp;
    cfg.encoder.layer_sizes = std::move(enc);
    cfg.encoder.history = h;
    cfg.decoder_sizes = std::move(dec);
    return cfg;
}

std::vector<data::Trajectory> tiny_dataset(uint64_t seed, double noise = 0.0) {
    sim::SimConfig cfg;
    cfg.kind = sim::RefKind::Lemniscate;
    cfg.noise.sigma_v = noise;
    cfg.noise.sigma_omega = noise;
    sim::SimResult res = sim::simulate(cfg, 5.0, seed);
    data::scale_actions(res.measured);
    std::vector<data::Trajectory> out;
    out.push_back(std::move(res.measured));
    return out;
}

double manual_one_step_loss(const nn::PredictorModel& m, const data::WindowBatch& b) {
    const auto pred = m.predict_one_step(b.state_hist, b.action_hist, b.count);
    double total = 0.0;
    for (int64_t wi = 0; wi < b.count; ++wi) {
        const double* p = pred.data() + wi * 10;
        const double* t = b.target_states.data() + wi * b.unroll * 10;
        double dot = 0;
        for (int j = 6; j < 10; ++j) dot += p[j] * t[j];
        const double sgn = dot < 0 ? -1.0 : 1.0;
        for (int j = 0; j < 10; ++j) {
            const double pj = j < 6 ? p[j] : sgn * p[j];
            const double d = pj - t[j];
            total += d * d;
        }
    }
    return total * (1.0 / static_cast<double>(b.count));
}

} // namespace

TEST_CASE("learning-rate schedule: constant warmup, cosine midpoint and tail") {
    train::TrainConfig cfg;
    cfg.iterations = 50'000;
    cfg.warmup_iters = 5'000;
    cfg.lr_peak = 3e-4;
    CHECK(train::lr_schedule(0, cfg) == cfg.lr_peak);
    CHECK(train::lr_schedule(4'999, cfg) == cfg.lr_peak);
    const int64_t mid = cfg.warmup_iters + (cfg.iterations - cfg.warmup_iters) / 2;
    CHECK(std::abs(train::lr_schedule(mid, cfg) - cfg.lr_peak / 2) < 1e-12);
    CHECK(train::lr_schedule(cfg.iterations - 1, cfg) < 1e-6 * cfg.lr_peak);
    CHECK_THROWS_AS(train::lr_schedule(cfg.iterations, cfg), ConfigError);
}

TEST_CASE("adamw: zero gradient and zero decay leave parameters unchanged") {
    train::AdamW opt(0.9, 0.999, 0.0);
    std::vector<double> p{1.5, -2.0};
    std::vector<double> g{0.0, 0.0};
    double* pp = p.data();
    const double* gp = g.data();
    const int64_t n = 2;
    CHECK(opt.step({&pp, 1}, {&n, 1}, {&gp, 1}, 0.01));
    CHECK(p[0] == 1.5);
    CHECK(p[1] == -2.0);
}

TEST_CASE("adamw: bias-corrected first step moves a scalar by about lr") {
    train::AdamW opt(0.9, 0.999, 0.0);
    std::vector<double> p{1.0};
    std::vector<double> g{1.0};
    double* pp = p.data();
    const double* gp = g.data();
    const int64_t n = 1;
    opt.step({&pp, 1}, {&n, 1}, {&gp, 1}, 0.001);
    CHECK(std::abs((1.0 - p[0]) - 0.001) < 1e-9); // mhat/(sqrt(vhat)+eps) ~ 1
}

TEST_CASE("adamw: decoupled decay multiplies the weight by (1 - lr*wd)") {
    train::AdamW opt(0.9, 0.999, 1e-4);
    std::vector<double> p{2.0};
    std::vector<double> g{0.0};
    double* pp = p.data();
    const double* gp = g.data();
    const int64_t n = 1;
    opt.step({&pp, 1}, {&n, 1}, {&gp, 1}, 0.01);
    CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 0.01 * 1e-4)).epsilon(1e-14));
}

TEST_CASE("adamw: lr=0 with zero decay is exactly the identity") {
    train::AdamW opt(0.9, 0.999, 0.0);
    std::vector<double> p{0.7, -0.3};
    std::vector<double> g{1.0, -2.0};
    double* pp = p.data();
    const double* gp = g.data();
    const int64_t n = 2;
    opt.step({&pp, 1}, {&n, 1}, {&gp, 1}, 0.0);
    CHECK(p[0] == 0.7);
    CHECK(p[1] == -0.3);
}

TEST_CASE("adamw: a non-finite gradient aborts the iteration without touching weights") {
    train::AdamW opt(0.9, 0.999, 1e-4);
    std::vector<double> p{1.0};
    std::vector<double> g{std::nan("")};
    double* pp = p.data();
    const double* gp = g.data();
    const int64_t n = 1;
    CHECK_FALSE(opt.step({&pp, 1}, {&n, 1}, {&gp, 1}, 0.01));
    CHECK(p[0] == 1.0);
}

TEST_CASE("multi-step loss with U=1 equals the one-step loss bit-identically") {
    auto trajs = tiny_dataset(5);
    const auto ds = data::WindowDataset::make(trajs, 4, 3);
    nn::PredictorModel m = nn::PredictorModel::create(mlp_decoupled(4), 3);
    // non-trivial predictions
    auto rng = test::test_rng(71);
    m.params().entry("vel.dec.out.b").value = test::random_values({6}, rng, -0.05, 0.05);
    m.params().entry("att.dec.out.b").value = test::random_values({4}, rng, -0.05, 0.05);

    const std::vector<int64_t> ids{0, 7, 19, 100};
    const data::WindowBatch batch = ds.gather(ids);

    ad::Tape tape;
    nn::Binding binding(m.params(), &tape, nn::RunMode::Eval);
    const double tape_loss = train::multi_step_loss(m, binding, batch, 1).value();
    const double manual = manual_one_step_loss(m, batch);
    CHECK(std::memcmp(&tape_loss, &manual, sizeof(double)) == 0);
}

TEST_CASE("a perfect oracle yields exactly zero loss") {
    auto trajs = tiny_dataset(6);
    const auto ds = data::WindowDataset::make(trajs, 3, 4);
    const std::vector<int64_t> ids{1, 2, 3};
    const data::WindowBatch batch = ds.gather(ids);

    // inject the targets as predictions
    train::StepFn oracle = [&](nn::Binding&, const ad::Tensor& states, const ad::Tensor&,
                               int64_t step) {
        const int64_t b = states.shape()[0];
        std::vector<double> v(b * 3), w(b * 3), q(b * 4);
        for (int64_t wi = 0; wi < b; ++wi) {
            const double* t = batch.target_states.data() + (wi * batch.unroll + step) * 10;
            std::copy(t, t + 3, v.begin() + wi * 3);
            std::copy(t + 3, t + 6, w.begin() + wi * 3);
            std::copy(t + 6, t + 10, q.begin() + wi * 4);
        }
        return nn::PredictorModel::Step{ad::Tensor({b, 3}, v), ad::Tensor({b, 3}, w),
                                        ad::Tensor({b, 4}, q)};
    };
    ad::Tape tape;
    nn::ParamStore store; // the oracle has no parameters
    nn::Binding binding(store, &tape, nn::RunMode::Eval);
    const double loss = train::multi_step_loss_with(oracle, binding, batch, 4).value();
    CHECK(loss == 0.0);
}

TEST_CASE("U=3 loss matches an independent hand-unrolled computation") {
    auto trajs = tiny_dataset(7);
    const int64_t H = 3, U = 3;
    const auto ds = data::WindowDataset::make(trajs, H, U);
    nn::PredictorModel m = nn::PredictorModel::create(mlp_decoupled(H), 9);
    auto rng = test::test_rng(72);
    m.params().entry("vel.dec.out.b").value = test::random_values({6}, rng, -0.05, 0.05);
    m.params().entry("att.dec.out.b").value = test::random_values({4}, rng, -0.05, 0.05);

    const std::vector<int64_t> ids{5, 42}; // 2-sample batch
    const data::WindowBatch batch = ds.gather(ids);

    ad::Tape tape;
    nn::Binding binding(m.params(), &tape, nn::RunMode::Eval);
    const double tape_loss = train::multi_step_loss(m, binding, batch, U).value();

    // hand unroll through the inference path, plain doubles
    double total = 0.0;
    const int64_t B = batch.count;
    std::vector<double> win_s = batch.state_hist;
    std::vector<double> win_a = batch.action_hist;
    for (int64_t i = 0; i < U; ++i) {
        const auto pred = m.predict_one_step(win_s, win_a, B);
        for (int64_t wi = 0; wi < B; ++wi) {
            const double* p = pred.data() + wi * 10;
            const double* t = batch.target_states.data() + (wi * U + i) * 10;
            double dot = 0;
            for (int j = 6; j < 10; ++j) dot += p[j] * t[j];
            const double sgn = dot < 0 ? -1.0 : 1.0;
            for (int j = 0; j < 10; ++j) {
                const double pj = j < 6 ? p[j] : sgn * p[j];
                total += (pj - t[j]) * (pj - t[j]);
            }
        }
        if (i + 1 == U) break;
        for (int64_t wi = 0; wi < B; ++wi) {
            double* srow = win_s.data() + wi * H * 10;
            double* arow = win_a.data() + wi * H * 4;
            std::memmove(srow, srow + 10, (H - 1) * 10 * sizeof(double));
            std::memmove(arow, arow + 4, (H - 1) * 4 * sizeof(double));
            std::copy(pred.begin() + wi * 10, pred.begin() + (wi + 1) * 10,
                      srow + (H - 1) * 10);
            const double* na = batch.future_actions.data() + (wi * U + i + 1) * 4;
            std::copy(na, na + 4, arow + (H - 1) * 4);
        }
    }
    const double manual = total / static_cast<double>(U * B);
    CHECK(std::abs(tape_loss - manual) < 1e-10);
}

TEST_CASE("loss rejects an unroll longer than the batch targets") {
    auto trajs = tiny_dataset(8);
    const auto ds = data::WindowDataset::make(trajs, 3, 2);
    const std::vector<int64_t> ids{0};
    const data::WindowBatch batch = ds.gather(ids);
    nn::PredictorModel m = nn::PredictorModel::create(mlp_decoupled(3), 1);
    ad::Tape tape;
    nn::Binding binding(m.params(), &tape, nn::RunMode::Eval);
    CHECK_THROWS_AS(train::multi_step_loss(m, binding, batch, 3), Error);
}

TEST_CASE("multi-step gradient matches finite differences through a U=3 unroll") {
    auto trajs = tiny_dataset(9);
    const int64_t H = 4, U = 3;
    const auto ds = data::WindowDataset::make(trajs, H, U);
    nn::PredictorModel m = nn::PredictorModel::create(mlp_decoupled(H, {8}, {8}), 13);
    const std::vector<int64_t> ids{3, 77};
    const data::WindowBatch batch = ds.gather(ids);

    auto loss_value = [&]() {
        ad::Tape tape;
        nn::Binding binding(m.params(), &tape, nn::RunMode::Train);
        return train::multi_step_loss(m, binding, batch, U).value();
    };

    ad::Tape tape;
    nn::Binding binding(m.params(), &tape, nn::RunMode::Train);
    ad::Tensor loss = train::multi_step_loss(m, binding, batch, U);
    ad::Gradients grads = tape.backward(loss);

    double worst = 0.0;
    const double h = 1e-5;
    for (size_t id = 0; id < m.params().count(); ++id) {
        auto& e = m.params().entry(static_cast<int>(id));
        if (!e.learnable) continue;
        const ad::Tensor g = grads.grad(binding.param(static_cast<int>(id)));
        // probe a handful of scalars per tensor to keep runtime sane
        const size_t step = std::max<size_t>(1, e.value.size() / 5);
        for (size_t j = 0; j < e.value.size(); j += step) {
            const double keep = e.value[j];
            e.value[j] = keep + h;
            const double up = loss_value();
            e.value[j] = keep - h;
            const double dn = loss_value();
            e.value[j] = keep;
            const double fd = (up - dn) / (2 * h);
            const double a = g.data()[j];
            worst = std::max(worst,
                             std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)}));
        }
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("short training run: loss decreases and is seed-reproducible") {
    auto trajs = tiny_dataset(10);
    const auto train_set = data::WindowDataset::make(trajs, 3, 2);

    train::TrainConfig cfg;
    cfg.iterations = 120;
    cfg.warmup_iters = 20;
    cfg.batch = 16;
    cfg.lr_peak = 1e-3;
    cfg.unroll = 2;
    cfg.seed = 77;
    cfg.val_interval = 0; // no validation set

    auto run = [&]() {
        nn::PredictorModel m = nn::PredictorModel::create(mlp_decoupled(3, {16}, {16}), cfg.seed);
        const train::TrainResult r = train::train(m, train_set, data::WindowDataset{}, cfg);
        return std::make_pair(std::move(m), r);
    };
    auto [m1, r1] = run();
    auto [m2, r2] = run();

    // early-mean vs late-mean loss
    double early = 0, late = 0;
    for (int i = 0; i < 20; ++i) early += r1.log[i].loss;
    for (int i = 0; i < 20; ++i) late += r1.log[r1.log.size() - 1 - i].loss;
    CHECK(late < early);

    // bit-identical parameters across identical runs
    for (size_t i = 0; i < m1.params().count(); ++i) {
        const auto& a = m1.params().entry(static_cast<int>(i)).value;
        const auto& b = m2.params().entry(static_cast<int>(i)).value;
        CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
    }
    CHECK(r1.final_loss == r2.final_loss);
}

TEST_CASE("persistent non-finite losses abort with a training-instability error") {
    auto trajs = tiny_dataset(11);
    const auto train_set = data::WindowDataset::make(trajs, 3, 1);
    nn::PredictorModel m = nn::PredictorModel::create(mlp_decoupled(3), 5);
    m.params().entry("vel.enc.l0.w").value[0] = std::nan("");

    train::TrainConfig cfg;
    cfg.iterations = 100;
    cfg.warmup_iters = 1;
    cfg.batch = 4;
    cfg.unroll = 1;
    cfg.val_interval = 0;
    CHECK_THROWS_AS(train::train(m, train_set, data::WindowDataset{}, cfg),
                    TrainingInstabilityError);
}

TEST_CASE("grad clip defaults: off at U<=5, 10.0 above, explicit value wins") {
    train::TrainConfig cfg;
    cfg.unroll = 5;
    CHECK(cfg.resolved_grad_clip() == 0.0);
    cfg.unroll = 6;
    CHECK(cfg.resolved_grad_clip() == 10.0);
    cfg.grad_clip = 3.0;
    CHECK(cfg.resolved_grad_clip() == 3.0);
}
