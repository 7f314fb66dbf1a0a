// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line. The heavy trend experiments (criteria 6 and 7) train real models on
// seeded synthetic data and check orderings of 3-seed means.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <random>

#include "qdyn/ablation.hpp"
#include "qdyn/evaluator.hpp"
#include "qdyn/io.hpp"
#include "qdyn/model.hpp"
#include "qdyn/quat.hpp"
#include "qdyn/sim.hpp"
#include "qdyn/tensor.hpp"
#include "qdyn/trainer.hpp"
#include "helpers.hpp"

using namespace qdyn;
using nn::EncoderKind;
using nn::HeadKind;

namespace {

struct Criterion {
    const char* name;
    bool ok = true;
    explicit Criterion(const char* n) : name(n) {
        std::printf("[%s] running...\n", name);
        std::fflush(stdout);
    }
    ~Criterion() {
        std::printf("[%s] %s\n", name, ok ? "PASS" : "FAIL");
        std::fflush(stdout);
    }
    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            std::printf("  failed: %s\n", what.c_str());
        }
        CHECK_MESSAGE(cond, what);
    }
};

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- synthetic desk-scale datasets -----------------------------------------

std::vector<data::Trajectory> desk_dataset(int count, uint64_t seed_base, double speed_lo,
                                           double speed_hi, double noise) {
    const sim::RefKind kinds[] = {sim::RefKind::Ellipse, sim::RefKind::Lemniscate,
                                  sim::RefKind::Parabola, sim::RefKind::Line};
    std::vector<data::Trajectory> out;
    for (int i = 0; i < count; ++i) {
        sim::SimConfig cfg;
        cfg.kind = kinds[i % 4];
        cfg.speed_scale = speed_lo + (speed_hi - speed_lo) * (i % 3) / 2.0;
        cfg.noise.sigma_v = noise;
        cfg.noise.sigma_omega = noise;
        cfg.noise.sigma_att = 0.2 * noise;
        sim::SimResult res = sim::simulate(cfg, 12.0, seed_base + static_cast<uint64_t>(i));
        res.measured.id = "desk" + std::to_string(i);
        data::scale_actions(res.measured);
        out.push_back(std::move(res.measured));
    }
    return out;
}

struct TrendModel {
    EncoderKind arch;
    HeadKind head;
    int64_t history, unroll;
};

// One desk-scale training run followed by a 60-step rollout evaluation.
eval::RolloutReport trend_run(const TrendModel& tm, const std::vector<data::Trajectory>& train,
                              const std::vector<data::Trajectory>& test, uint64_t seed,
                              int64_t iterations) {
    nn::ModelConfig mc;
    mc.head = tm.head;
    mc.encoder.kind = tm.arch;
    mc.encoder.history = tm.history;
    mc.encoder.layer_sizes = tm.arch == EncoderKind::Mlp ? std::vector<int64_t>{64, 64}
                                                         : std::vector<int64_t>{16, 16};
    mc.decoder_sizes = {32};

    train::TrainConfig tc;
    tc.iterations = iterations;
    tc.warmup_iters = iterations / 20;
    tc.batch = 32;
    tc.lr_peak = 1e-3;
    tc.unroll = tm.unroll;
    tc.seed = seed;
    tc.val_interval = 0; // evaluate the final parameters

    nn::PredictorModel model = nn::PredictorModel::create(mc, seed);
    const auto train_set = data::WindowDataset::make(train, tm.history, tm.unroll);
    train::train(model, train_set, data::WindowDataset{}, tc);
    return eval::evaluate(model, test, 60, 10);
}

} // namespace

TEST_CASE("criterion 01: gradient correctness across the model zoo") {
    Criterion c("criterion 01");
    const auto t0 = std::chrono::steady_clock::now();

    auto trajs = desk_dataset(1, 900, 1.0, 1.0, 0.0);
    const int64_t H = 4, U = 3;
    const auto ds = data::WindowDataset::make(trajs, H, U);
    const std::vector<int64_t> ids{10, 400};

    double worst = 0.0;
    for (auto arch : {EncoderKind::Mlp, EncoderKind::Lstm, EncoderKind::Gru, EncoderKind::Tcn}) {
        for (auto head : {HeadKind::FullState, HeadKind::MultiHead, HeadKind::Decoupled}) {
            nn::ModelConfig mc;
            mc.head = head;
            mc.encoder.kind = arch;
            // two TCN blocks (dilations 1,2) so the receptive field covers H=4
            mc.encoder.layer_sizes = arch == EncoderKind::Tcn ? std::vector<int64_t>{8, 8}
                                                              : std::vector<int64_t>{8};
            mc.encoder.kernel = 2;
            mc.encoder.history = H;
            mc.decoder_sizes = {8};
            nn::PredictorModel m = nn::PredictorModel::create(mc, 31 + static_cast<int>(arch));
            const data::WindowBatch batch = ds.gather(ids);

            auto loss_value = [&]() {
                ad::Tape tape;
                nn::Binding b(m.params(), &tape, nn::RunMode::Train);
                return train::multi_step_loss(m, b, batch, U).value();
            };
            ad::Tape tape;
            nn::Binding binding(m.params(), &tape, nn::RunMode::Train);
            ad::Tensor loss = train::multi_step_loss(m, binding, batch, U);
            ad::Gradients grads = tape.backward(loss);

            const double h = 1e-5;
            double arch_worst = 0.0;
            for (size_t id = 0; id < m.params().count(); ++id) {
                auto& e = m.params().entry(static_cast<int>(id));
                if (!e.learnable) continue;
                const ad::Tensor g = grads.grad(binding.param(static_cast<int>(id)));
                for (size_t j = 0; j < e.value.size(); ++j) {
                    const double keep = e.value[j];
                    e.value[j] = keep + h;
                    const double up = loss_value();
                    e.value[j] = keep - h;
                    const double dn = loss_value();
                    e.value[j] = keep;
                    const double fd = (up - dn) / (2 * h);
                    const double a = g.data()[j];
                    arch_worst = std::max(
                        arch_worst, std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)}));
                }
            }
            std::printf("  %s/%s: max fd error %.3g\n", nn::to_string(arch).c_str(),
                        nn::to_string(head).c_str(), arch_worst);
            worst = std::max(worst, arch_worst);
        }
    }
    c.expect(worst < 1e-5, "max relative gradient error " + std::to_string(worst));
    const double secs = seconds_since(t0);
    std::printf("  runtime %.1f s\n", secs);
    c.expect(secs < 120.0, "runtime under 2 minutes");
}

TEST_CASE("criterion 02: quaternion oracle equivalence") {
    Criterion c("criterion 02");
    auto rng = test::test_rng(101);
    std::normal_distribution<double> g(0.0, 1.0);
    auto random_unit = [&]() { return normalized(g(rng), g(rng), g(rng), g(rng)); };

    double worst_mat = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Quat a = random_unit(), b = random_unit();
        const auto direct = to_matrix(hamilton(a, b));
        const auto ra = to_matrix(a), rb = to_matrix(b);
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 3; ++col) {
                double acc = 0;
                for (int k = 0; k < 3; ++k) acc += ra[r * 3 + k] * rb[k * 3 + col];
                worst_mat = std::max(worst_mat, std::abs(direct[r * 3 + col] - acc));
            }
    }
    c.expect(worst_mat < 1e-12, "matrix-composition equivalence, worst " +
                                    std::to_string(worst_mat));

    double worst_axis = 0.0;
    std::uniform_real_distribution<double> ang(1e-3, M_PI - 1e-3);
    for (int i = 0; i < 1000; ++i) {
        const Quat base = random_unit();
        const double phi = ang(rng);
        std::array<double, 3> axis{g(rng), g(rng), g(rng)};
        const Quat rel = from_axis_angle(axis, phi);
        worst_axis = std::max(worst_axis,
                              std::abs(quat_error_angle(hamilton(rel, base), base) - phi / 2));
    }
    c.expect(worst_axis < 1e-10, "half-angle identity, worst " + std::to_string(worst_axis));

    bool exact = true;
    for (int i = 0; i < 1000; ++i) {
        const Quat q = random_unit();
        if (quat_error_angle(q, Quat{-q.w, -q.x, -q.y, -q.z}) != 0.0) exact = false;
    }
    c.expect(exact, "double-cover symmetry is exactly zero");
}

TEST_CASE("criterion 03: TCN strict causality, bit-exact") {
    Criterion c("criterion 03");
    auto rng = test::test_rng(102);

    // the block stack used by the TCN encoder, as a sequence-to-sequence map
    const int64_t B = 1, L = 16;
    const std::vector<int64_t> channels{5, 4};
    const std::vector<int64_t> dils{1, 2};
    const int64_t kern = 3;

    bool all_exact = true;
    for (int trial = 0; trial < 50 && all_exact; ++trial) {
        nn::ParamStore store;
        std::vector<nn::Conv1d> conv1, conv2, skip;
        std::vector<nn::BatchNorm1d> bn1, bn2;
        int64_t cin = 3;
        for (size_t k = 0; k < channels.size(); ++k) {
            const std::string n = "b" + std::to_string(k);
            conv1.push_back(nn::Conv1d::create(store, n + ".c1", cin, channels[k], kern,
                                               dils[k], rng));
            bn1.push_back(nn::BatchNorm1d::create(store, n + ".bn1", channels[k]));
            conv2.push_back(nn::Conv1d::create(store, n + ".c2", channels[k], channels[k], kern,
                                               dils[k], rng));
            bn2.push_back(nn::BatchNorm1d::create(store, n + ".bn2", channels[k]));
            skip.push_back(nn::Conv1d::create(store, n + ".skip", cin, channels[k], 1, 1, rng));
            cin = channels[k];
        }
        auto forward = [&](const std::vector<double>& xv) {
            nn::Binding b(store, nullptr, nn::RunMode::Eval);
            ad::Tensor x({B, 3, L}, xv);
            for (size_t k = 0; k < channels.size(); ++k) {
                ad::Tensor y = ad::leaky_relu(bn1[k].forward(b, conv1[k].forward(b, x)), 0.01);
                y = ad::leaky_relu(bn2[k].forward(b, conv2[k].forward(b, y)), 0.01);
                x = ad::leaky_relu(ad::add(skip[k].forward(b, x), y), 0.01);
            }
            return std::vector<double>(x.data().begin(), x.data().end());
        };

        auto xv = test::random_values({B, 3, L}, rng);
        const auto base = forward(xv);
        std::uniform_int_distribution<int64_t> pick(1, L - 1);
        const int64_t tp = pick(rng);
        for (int64_t ch = 0; ch < 3; ++ch) xv[ch * L + tp] += 3.5;
        const auto bumped = forward(xv);
        const int64_t cout = channels.back();
        for (int64_t ch = 0; ch < cout; ++ch)
            for (int64_t t = 0; t < tp; ++t)
                if (std::memcmp(&base[ch * L + t], &bumped[ch * L + t], sizeof(double)) != 0)
                    all_exact = false;
    }
    c.expect(all_exact, "outputs before the perturbed index are bit-identical");
}

TEST_CASE("criterion 04: multi-step loss identities") {
    Criterion c("criterion 04");
    auto trajs = desk_dataset(1, 903, 1.0, 1.0, 0.01);
    const int64_t H = 3, U = 3;
    const auto ds = data::WindowDataset::make(trajs, H, U);

    nn::ModelConfig mc;
    mc.head = HeadKind::Decoupled;
    mc.encoder.kind = EncoderKind::Mlp;
    mc.encoder.layer_sizes = std::vector<int64_t>{8};
    mc.encoder.history = H;
    mc.decoder_sizes = {8};
    nn::PredictorModel m = nn::PredictorModel::create(mc, 7);
    auto rng = test::test_rng(103);
    m.params().entry("vel.dec.out.b").value = test::random_values({6}, rng, -0.05, 0.05);
    m.params().entry("att.dec.out.b").value = test::random_values({4}, rng, -0.05, 0.05);

    const std::vector<int64_t> ids{17, 311};
    const data::WindowBatch batch = ds.gather(ids);

    // U=1 equals the one-step loss bit-identically
    {
        ad::Tape tape;
        nn::Binding b(m.params(), &tape, nn::RunMode::Eval);
        const double tape_loss = train::multi_step_loss(m, b, batch, 1).value();
        const auto pred = m.predict_one_step(batch.state_hist, batch.action_hist, batch.count);
        double manual = 0.0;
        for (int64_t wi = 0; wi < batch.count; ++wi) {
            const double* p = pred.data() + wi * 10;
            const double* t = batch.target_states.data() + wi * batch.unroll * 10;
            double dot = 0;
            for (int j = 6; j < 10; ++j) dot += p[j] * t[j];
            const double sgn = dot < 0 ? -1.0 : 1.0;
            for (int j = 0; j < 10; ++j) {
                const double pj = j < 6 ? p[j] : sgn * p[j];
                manual += (pj - t[j]) * (pj - t[j]);
            }
        }
        manual *= 1.0 / static_cast<double>(batch.count);
        c.expect(std::memcmp(&tape_loss, &manual, sizeof(double)) == 0,
                 "U=1 equals the one-step loss bit-identically");
    }

    // U=3 matches an independent hand unroll
    {
        ad::Tape tape;
        nn::Binding b(m.params(), &tape, nn::RunMode::Eval);
        const double tape_loss = train::multi_step_loss(m, b, batch, U).value();

        double total = 0.0;
        std::vector<double> ws = batch.state_hist, wa = batch.action_hist;
        for (int64_t i = 0; i < U; ++i) {
            const auto pred = m.predict_one_step(ws, wa, batch.count);
            for (int64_t wi = 0; wi < batch.count; ++wi) {
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
            for (int64_t wi = 0; wi < batch.count; ++wi) {
                double* srow = ws.data() + wi * H * 10;
                double* arow = wa.data() + wi * H * 4;
                std::memmove(srow, srow + 10, (H - 1) * 10 * sizeof(double));
                std::memmove(arow, arow + 4, (H - 1) * 4 * sizeof(double));
                std::copy(pred.begin() + wi * 10, pred.begin() + (wi + 1) * 10,
                          srow + (H - 1) * 10);
                const double* na = batch.future_actions.data() + (wi * U + i + 1) * 4;
                std::copy(na, na + 4, arow + (H - 1) * 4);
            }
        }
        const double manual = total / static_cast<double>(U * batch.count);
        c.expect(std::abs(tape_loss - manual) < 1e-10,
                 "U=3 matches the hand unroll, diff " + std::to_string(tape_loss - manual));
    }
}

TEST_CASE("criterion 05: overfit smoke test") {
    Criterion c("criterion 05");
    const auto t0 = std::chrono::steady_clock::now();

    // noise-free synthetic trajectory, exactly 200 windows
    sim::SimConfig scfg;
    scfg.kind = sim::RefKind::Lemniscate;
    sim::SimResult res = sim::simulate(scfg, 2.1, 905);
    data::scale_actions(res.measured);
    std::vector<data::Trajectory> trajs;
    res.measured.t.resize(205);
    res.measured.states.resize(205);
    res.measured.actions.resize(205);
    trajs.push_back(std::move(res.measured));

    const int64_t H = 5, U = 1;
    const auto train_set = data::WindowDataset::make(trajs, H, U);
    c.expect(train_set.size() == 200, "dataset holds exactly 200 windows");

    nn::ModelConfig mc;
    mc.head = HeadKind::Decoupled;
    mc.encoder.kind = EncoderKind::Mlp;
    mc.encoder.layer_sizes = std::vector<int64_t>{64, 64};
    mc.encoder.history = H;
    mc.decoder_sizes = {64};

    train::TrainConfig tc;
    tc.iterations = 5000;
    tc.warmup_iters = 500;
    tc.batch = 200; // full batch: deterministic gradients, smooth descent
    tc.lr_peak = 1e-4;
    tc.unroll = U;
    tc.seed = 9;
    tc.val_interval = 0;

    nn::PredictorModel model = nn::PredictorModel::create(mc, tc.seed);
    const train::TrainResult r = train::train(model, train_set, data::WindowDataset{}, tc);

    // 100-iteration moving average descends; Adam hunts slightly near its
    // floor, so the average must stay within 2x of its running minimum
    bool monotone = true;
    double best = 1e99;
    for (size_t i = 99; i < r.log.size(); i += 100) {
        double s = 0;
        for (size_t j = i - 99; j <= i; ++j) s += r.log[j].loss;
        s /= 100.0;
        if (best < 1e90 && s > 2.0 * best) monotone = false;
        best = std::min(best, s);
    }

    double final_avg = 0;
    for (size_t j = r.log.size() - 100; j < r.log.size(); ++j) final_avg += r.log[j].loss;
    final_avg /= 100.0;
    std::printf("  final loss %.3g (100-iter mean %.3g) after %zu iterations\n", r.final_loss,
                final_avg, r.log.size());
    c.expect(r.final_loss < 1e-5, "final training loss " + std::to_string(r.final_loss) +
                                      " < 1e-5");
    c.expect(monotone, "100-iteration loss average descends (within 2x of its running min)");
    const double secs = seconds_since(t0);
    std::printf("  runtime %.1f s\n", secs);
    c.expect(secs < 300.0, "runtime under 5 minutes");
}

TEST_CASE("criterion 06: history and multi-step trends at desk scale") {
    Criterion c("criterion 06");
    const auto t0 = std::chrono::steady_clock::now();
    const auto train = desk_dataset(10, 1000, 0.7, 1.3, 0.03);
    const auto test = desk_dataset(2, 2000, 0.9, 1.2, 0.03);
    const int64_t iters = 10'000;

    struct Agg {
        double dz = 0, dq = 0;
    };
    auto mean_over_seeds = [&](const TrendModel& tm) {
        Agg a;
        for (uint64_t s = 0; s < 3; ++s) {
            const eval::RolloutReport r = trend_run(tm, train, test, 100 + s, iters);
            std::printf("  %s H=%lld U=%lld seed %llu: delta_z %.4f delta_q %.4f\n",
                        nn::to_string(tm.arch).c_str(), (long long)tm.history,
                        (long long)tm.unroll, (unsigned long long)s, r.mean_delta_z,
                        r.mean_delta_q);
            std::fflush(stdout);
            a.dz += r.mean_delta_z / 3.0;
            a.dq += r.mean_delta_q / 3.0;
        }
        return a;
    };

    const Agg mlp11 = mean_over_seeds({EncoderKind::Mlp, HeadKind::Decoupled, 1, 1});
    const Agg tcn_u1 = mean_over_seeds({EncoderKind::Tcn, HeadKind::Decoupled, 10, 1});
    const Agg tcn_u5 = mean_over_seeds({EncoderKind::Tcn, HeadKind::Decoupled, 10, 5});

    std::printf("  3-seed means: mlp(1,1) dz %.4f dq %.4f | tcn(10,1) dz %.4f dq %.4f | "
                "tcn(10,5) dz %.4f dq %.4f\n",
                mlp11.dz, mlp11.dq, tcn_u1.dz, tcn_u1.dq, tcn_u5.dz, tcn_u5.dq);
    c.expect(tcn_u5.dz < mlp11.dz, "TCN(10,5) delta_z below MLP(1,1)");
    c.expect(tcn_u5.dq < mlp11.dq, "TCN(10,5) delta_q below MLP(1,1)");
    c.expect(tcn_u5.dz < tcn_u1.dz, "TCN(10,5) delta_z below TCN(10,1)");
    c.expect(tcn_u5.dq < tcn_u1.dq, "TCN(10,5) delta_q below TCN(10,1)");
    const double secs = seconds_since(t0);
    std::printf("  runtime %.0f s\n", secs);
    c.expect(secs < 7200.0, "runtime under 2 hours");
}

TEST_CASE("criterion 07: decoupled head trend on aggressive trajectories") {
    Criterion c("criterion 07");
    const auto t0 = std::chrono::steady_clock::now();
    const auto train = desk_dataset(10, 3000, 1.6, 2.2, 0.03);
    const auto test = desk_dataset(2, 4000, 1.8, 2.0, 0.03);
    const int64_t iters = 10'000;

    auto mean_dq = [&](HeadKind head) {
        double dq = 0;
        for (uint64_t s = 0; s < 3; ++s) {
            const eval::RolloutReport r =
                trend_run({EncoderKind::Tcn, head, 10, 5}, train, test, 200 + s, iters);
            std::printf("  %s seed %llu: delta_q %.4f (delta_z %.4f)\n",
                        nn::to_string(head).c_str(), (unsigned long long)s, r.mean_delta_q,
                        r.mean_delta_z);
            std::fflush(stdout);
            dq += r.mean_delta_q / 3.0;
        }
        return dq;
    };
    const double dec = mean_dq(HeadKind::Decoupled);
    const double full = mean_dq(HeadKind::FullState);
    std::printf("  3-seed mean delta_q: decoupled %.4f vs full-state %.4f\n", dec, full);
    c.expect(dec <= full, "decoupled delta_q <= full-state delta_q");
    const double secs = seconds_since(t0);
    std::printf("  runtime %.0f s\n", secs);
    c.expect(secs < 7200.0, "runtime under 2 hours");
}

TEST_CASE("criterion 08: end-to-end determinism") {
    Criterion c("criterion 08");
    auto train_trajs = desk_dataset(2, 5000, 1.0, 1.2, 0.02);
    auto test_trajs = desk_dataset(1, 5100, 1.0, 1.0, 0.02);

    auto run_once = [&](uint64_t* param_hash, std::vector<double>* metrics) {
        nn::ModelConfig mc;
        mc.head = HeadKind::Decoupled;
        mc.encoder.kind = EncoderKind::Tcn;
        mc.encoder.layer_sizes = std::vector<int64_t>{8, 8};
        mc.encoder.history = 6;
        mc.decoder_sizes = {16};
        train::TrainConfig tc;
        tc.iterations = 150;
        tc.warmup_iters = 20;
        tc.batch = 16;
        tc.unroll = 2;
        tc.seed = 11;
        tc.val_interval = 0;
        nn::PredictorModel m = nn::PredictorModel::create(mc, tc.seed);
        const auto train_set = data::WindowDataset::make(train_trajs, 6, 2);
        train::train(m, train_set, data::WindowDataset{}, tc);
        *param_hash = io::param_hash(m.params());
        const eval::RolloutReport r = eval::evaluate(m, test_trajs, 40, 20);
        metrics->assign({r.mean_delta_z, r.mean_delta_v, r.mean_delta_omega, r.mean_delta_q});
        for (const auto& w : r.windows) {
            metrics->push_back(w.delta_z);
            metrics->push_back(w.delta_q);
        }
    };

    uint64_t h1 = 0, h2 = 0;
    std::vector<double> m1, m2;
    run_once(&h1, &m1);
    run_once(&h2, &m2);
    c.expect(h1 == h2, "final parameters bit-identical across runs");
    c.expect(m1.size() == m2.size() &&
                 std::memcmp(m1.data(), m2.data(), m1.size() * sizeof(double)) == 0,
             "metric reports bit-identical across runs");
}

TEST_CASE("criterion 09: biased-predictor closed form") {
    Criterion c("criterion 09");
    std::vector<data::Trajectory> trajs{test::constant_trajectory(400, 0.5)};

    nn::ModelConfig mc;
    mc.head = HeadKind::Decoupled;
    mc.encoder.kind = EncoderKind::Mlp;
    mc.encoder.layer_sizes = std::vector<int64_t>{};
    mc.encoder.history = 1;
    mc.decoder_sizes = {};
    nn::PredictorModel m = nn::PredictorModel::create(mc, 0);
    m.params().entry("vel.dec.out.b").value = {0.1, 0, 0, 0, 0, 0};

    const int64_t T = 60;
    const eval::RolloutReport rep = eval::evaluate(m, trajs, T, 10);

    double sum_sq = 0.0; // arithmetic oracle: sum of i^2, i = 1..60
    for (int64_t i = 1; i <= T; ++i) sum_sq += static_cast<double>(i * i);
    const double want = 0.01 * sum_sq / static_cast<double>(T);
    std::printf("  delta_z %.12f, oracle %.12f (sum i^2 = %.0f)\n", rep.mean_delta_z, want,
                sum_sq);
    c.expect(std::abs(rep.mean_delta_z - want) < 1e-9,
             "delta_z matches 0.01*sum(i^2)/T within 1e-9");
}

TEST_CASE("criterion 10: optional extended run on the public datasets") {
    const char* dir = std::getenv("QDYN_EXTENDED_DATA");
    if (!dir) {
        std::printf("[criterion 10] SKIP (optional, not gating): set QDYN_EXTENDED_DATA to a "
                    "directory of ingested flight CSVs plus split_manifest.txt; see the README "
                    "reproduction recipe\n");
        return;
    }
    Criterion c("criterion 10");
    namespace fs = std::filesystem;
    const data::Splits split = data::load_split_manifest(std::string(dir) + "/split_manifest.txt");
    auto load = [&](const std::vector<std::string>& names) {
        std::vector<data::Trajectory> out;
        for (const auto& n : names) {
            data::Trajectory t = data::ingest_csv(std::string(dir) + "/" + n);
            data::scale_actions(t);
            out.push_back(std::move(t));
        }
        return out;
    };
    const auto train_trajs = load(split.train);
    const auto val_trajs = load(split.val);
    const auto test_trajs = load(split.test);

    nn::ModelConfig mc; // full-scale best cell: TCN, H=20, U=10, decoupled
    mc.head = HeadKind::Decoupled;
    mc.encoder.kind = EncoderKind::Tcn;
    mc.encoder.history = 20;
    train::TrainConfig tc;
    tc.unroll = 10;
    tc.seed = 0;
    nn::PredictorModel m = nn::PredictorModel::create(mc, tc.seed);
    const auto train_set = data::WindowDataset::make(train_trajs, 20, 10);
    const auto val_set = data::WindowDataset::make(val_trajs, 20, 60, 10);
    train::train(m, train_set, val_set, tc);
    const eval::RolloutReport r = eval::evaluate(m, test_trajs, 60, 10);
    std::printf("  delta_v %.4f delta_q %.4f (published full-scale cell: 0.062 / 0.016)\n",
                r.mean_delta_v, r.mean_delta_q);
    c.expect(r.windows.size() > 0, "extended run completed");
}
