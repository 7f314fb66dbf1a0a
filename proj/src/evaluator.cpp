#include "qdyn/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "qdyn/errors.hpp"
#include "qdyn/quat.hpp"

namespace qdyn::eval {

namespace {

constexpr int64_t kChunk = 256; // windows rolled out together

// Accumulates per-window deltas and per-step curve statistics.
struct Accum {
    int64_t horizon;
    std::vector<WindowMetrics> windows;
    std::vector<double> z_sum, z_sumsq, th_sum, th_sumsq;

    explicit Accum(int64_t t)
        : horizon(t), z_sum(t, 0.0), z_sumsq(t, 0.0), th_sum(t, 0.0), th_sumsq(t, 0.0) {}

    // predictions/targets: count x horizon x 10
    void add(int32_t traj, std::span<const int32_t> starts, std::span<const double> pred,
             std::span<const double> tgt, int64_t count) {
        for (int64_t w = 0; w < count; ++w) {
            WindowMetrics m;
            m.traj = traj;
            m.start = starts[w];
            for (int64_t i = 0; i < horizon; ++i) {
                const double* pp = pred.data() + (w * horizon + i) * 10;
                const double* pt = tgt.data() + (w * horizon + i) * 10;
                double ev = 0, ew = 0;
                for (int j = 0; j < 3; ++j) {
                    const double d = pp[j] - pt[j];
                    ev += d * d;
                }
                for (int j = 3; j < 6; ++j) {
                    const double d = pp[j] - pt[j];
                    ew += d * d;
                }
                const Quat qp{pp[6], pp[7], pp[8], pp[9]};
                const Quat qt{pt[6], pt[7], pt[8], pt[9]};
                const double theta = quat_error_angle(qt, qp);
                const double ez = ev + ew;
                m.delta_v += ev;
                m.delta_omega += ew;
                m.delta_z += ez;
                m.delta_q += theta;
                z_sum[i] += ez;
                z_sumsq[i] += ez * ez;
                th_sum[i] += theta;
                th_sumsq[i] += theta * theta;
            }
            const double inv = 1.0 / static_cast<double>(horizon);
            m.delta_v *= inv;
            m.delta_omega *= inv;
            m.delta_z *= inv;
            m.delta_q *= inv;
            windows.push_back(m);
        }
    }

    RolloutReport finish() const {
        RolloutReport r;
        r.horizon = horizon;
        r.windows = windows;
        const auto n = static_cast<double>(windows.size());
        r.step_mse_z_mean.resize(horizon);
        r.step_mse_z_var.resize(horizon);
        r.step_theta_mean.resize(horizon);
        r.step_theta_var.resize(horizon);
        for (int64_t i = 0; i < horizon && n > 0; ++i) {
            const double zm = z_sum[i] / n;
            const double tm = th_sum[i] / n;
            r.step_mse_z_mean[i] = zm;
            r.step_mse_z_var[i] = z_sumsq[i] / n - zm * zm;
            r.step_theta_mean[i] = tm;
            r.step_theta_var[i] = th_sumsq[i] / n - tm * tm;
        }
        for (const auto& m : windows) {
            r.mean_delta_z += m.delta_z;
            r.mean_delta_v += m.delta_v;
            r.mean_delta_omega += m.delta_omega;
            r.mean_delta_q += m.delta_q;
        }
        if (!windows.empty()) {
            r.mean_delta_z /= n;
            r.mean_delta_v /= n;
            r.mean_delta_omega /= n;
            r.mean_delta_q /= n;
        }
        return r;
    }
};

void put_state(double* dst, const data::State& s) {
    for (int i = 0; i < 3; ++i) dst[i] = s.v[i];
    for (int i = 0; i < 3; ++i) dst[3 + i] = s.omega[i];
    for (int i = 0; i < 4; ++i) dst[6 + i] = s.q[i];
}

} // namespace

RolloutReport evaluate(const nn::PredictorModel& model,
                       const std::vector<data::Trajectory>& trajs, int64_t horizon,
                       int64_t stride) {
    if (horizon < 1) throw ConfigError("evaluate: horizon must be >= 1");
    const int64_t h = model.config().encoder.history;
    Accum acc(horizon);

    for (size_t ti = 0; ti < trajs.size(); ++ti) {
        const auto& tr = trajs[ti];
        if (!tr.actions_scaled) throw Error("evaluate: trajectory actions must be scaled");
        const int64_t len = static_cast<int64_t>(tr.size());
        if (len < h + horizon) {
            std::fprintf(stderr, "warning: trajectory '%s' shorter than H+T, excluded\n",
                         tr.id.c_str());
            continue;
        }
        std::vector<int32_t> starts;
        for (int64_t s = 0; s + h + horizon <= len; s += stride)
            starts.push_back(static_cast<int32_t>(s));

        for (size_t base = 0; base < starts.size(); base += kChunk) {
            const auto count = static_cast<int64_t>(std::min<size_t>(kChunk, starts.size() - base));
            std::vector<double> ws(static_cast<size_t>(count * h * 10));
            std::vector<double> wa(static_cast<size_t>(count * h * 4));
            std::vector<double> fut(static_cast<size_t>(count * horizon * 4));
            std::vector<double> tgt(static_cast<size_t>(count * horizon * 10));
            for (int64_t w = 0; w < count; ++w) {
                const int64_t s0 = starts[base + w];
                for (int64_t k = 0; k < h; ++k) {
                    put_state(ws.data() + (w * h + k) * 10, tr.states[s0 + k]);
                    const auto& u = tr.actions[s0 + k];
                    std::copy(u.begin(), u.end(), wa.data() + (w * h + k) * 4);
                }
                for (int64_t k = 0; k < horizon; ++k) {
                    put_state(tgt.data() + (w * horizon + k) * 10, tr.states[s0 + h + k]);
                    const auto& u = tr.actions[s0 + h + k];
                    std::copy(u.begin(), u.end(), fut.data() + (w * horizon + k) * 4);
                }
            }
            const std::vector<double> pred = model.rollout(ws, wa, count, fut, horizon);
            acc.add(static_cast<int32_t>(ti),
                    std::span<const int32_t>(starts.data() + base, count), pred, tgt, count);
        }
    }
    return acc.finish();
}

RolloutReport evaluate_with(const StepOracle& oracle,
                            const std::vector<data::Trajectory>& trajs, int64_t history,
                            int64_t horizon, int64_t stride) {
    Accum acc(horizon);
    for (size_t ti = 0; ti < trajs.size(); ++ti) {
        const auto& tr = trajs[ti];
        const int64_t len = static_cast<int64_t>(tr.size());
        if (len < history + horizon) continue;
        for (int64_t s0 = 0; s0 + history + horizon <= len; s0 += stride) {
            std::vector<double> ws(static_cast<size_t>(history * 10));
            std::vector<double> wa(static_cast<size_t>(history * 4));
            for (int64_t k = 0; k < history; ++k) {
                put_state(ws.data() + k * 10, tr.states[s0 + k]);
                const auto& u = tr.actions[s0 + k];
                std::copy(u.begin(), u.end(), wa.data() + k * 4);
            }
            std::vector<double> pred(static_cast<size_t>(horizon * 10));
            std::vector<double> tgt(static_cast<size_t>(horizon * 10));
            for (int64_t t = 0; t < horizon; ++t) {
                const int64_t next = s0 + history + t;
                oracle(static_cast<int32_t>(ti), next, ws, wa,
                       std::span<double>(pred.data() + t * 10, 10));
                put_state(tgt.data() + t * 10, tr.states[next]);
                if (t + 1 == horizon) break;
                // shift window: predicted state in, ground-truth action in
                if (history > 1) {
                    std::memmove(ws.data(), ws.data() + 10, (history - 1) * 10 * sizeof(double));
                    std::memmove(wa.data(), wa.data() + 4, (history - 1) * 4 * sizeof(double));
                }
                std::copy_n(pred.data() + t * 10, 10, ws.data() + (history - 1) * 10);
                const auto& u = tr.actions[next];
                std::copy_n(u.begin(), 4, wa.data() + (history - 1) * 4);
            }
            const int32_t start32 = static_cast<int32_t>(s0);
            acc.add(static_cast<int32_t>(ti), std::span<const int32_t>(&start32, 1), pred, tgt,
                    1);
        }
    }
    return acc.finish();
}

BatchDeltas evaluate_batch(const nn::PredictorModel& model, const data::WindowBatch& batch) {
    Accum acc(batch.unroll);
    const std::vector<double> pred =
        model.rollout(batch.state_hist, batch.action_hist, batch.count, batch.future_actions,
                      batch.unroll);
    std::vector<int32_t> starts(static_cast<size_t>(batch.count), 0);
    acc.add(0, starts, pred, batch.target_states, batch.count);
    const RolloutReport r = acc.finish();
    return {r.mean_delta_z, r.mean_delta_v, r.mean_delta_omega, r.mean_delta_q};
}

void write_report_csv(const std::string& path, const RolloutReport& report) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "traj,start,delta_z,delta_v,delta_omega,delta_q\n";
    out.precision(12);
    for (const auto& m : report.windows)
        out << m.traj << ',' << m.start << ',' << m.delta_z << ',' << m.delta_v << ','
            << m.delta_omega << ',' << m.delta_q << '\n';
}

void write_curve_csv(const std::string& path, const RolloutReport& report) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "step,mse_z_mean,mse_z_var,theta_mean,theta_var\n";
    out.precision(12);
    for (int64_t i = 0; i < report.horizon; ++i)
        out << (i + 1) << ',' << report.step_mse_z_mean[i] << ',' << report.step_mse_z_var[i]
            << ',' << report.step_theta_mean[i] << ',' << report.step_theta_var[i] << '\n';
}

std::string format_summary(const RolloutReport& report) {
    std::ostringstream os;
    os.precision(6);
    os << "windows: " << report.windows.size() << ", horizon: " << report.horizon << " steps\n"
       << "delta_z     " << report.mean_delta_z << "   (squared 6-dim velocity error, "
          "(m/s)^2 + (rad/s)^2)\n"
       << "delta_v     " << report.mean_delta_v << "   (squared linear velocity error, (m/s)^2)\n"
       << "delta_omega " << report.mean_delta_omega
       << "   (squared angular velocity error, (rad/s)^2)\n"
       << "delta_q     " << report.mean_delta_q
       << "   (quaternion-log angle, radians; half the rotation angle)\n";
    return os.str();
}

} // namespace qdyn::eval
