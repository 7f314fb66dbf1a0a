#include "qdyn/sim.hpp"

#include <cmath>
#include <random>

#include "qdyn/errors.hpp"

namespace qdyn::sim {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

struct Deriv {
    Vec3 dp, dv;
    std::array<double, 4> dq;
    Vec3 dw;
};

Deriv dynamics(const SimConfig& cfg, const RigidState& s, const std::array<double, 4>& rpm) {
    // per-motor thrusts
    std::array<double, 4> f;
    double total = 0.0;
    for (int i = 0; i < 4; ++i) {
        f[i] = cfg.k_thrust * rpm[i] * rpm[i];
        total += f[i];
    }
    // plus configuration: motors 0..3 at +x, +y, -x, -y; alternating spin
    const double gamma = cfg.k_torque / cfg.k_thrust;
    const Vec3 tau{cfg.arm * (f[1] - f[3]), cfg.arm * (f[2] - f[0]),
                   gamma * (f[0] - f[1] + f[2] - f[3])};

    Deriv d;
    d.dp = s.v;
    const Vec3 thrust_world = rotate(s.q, Vec3{0.0, 0.0, total});
    d.dv = (1.0 / cfg.mass) * (thrust_world - cfg.drag * s.v);
    d.dv[2] -= cfg.gravity;

    // qdot = 1/2 q * (0, omega)
    const Quat& q = s.q;
    const Vec3& w = s.omega;
    d.dq = {0.5 * (-q.x * w[0] - q.y * w[1] - q.z * w[2]),
            0.5 * (q.w * w[0] + q.y * w[2] - q.z * w[1]),
            0.5 * (q.w * w[1] - q.x * w[2] + q.z * w[0]),
            0.5 * (q.w * w[2] + q.x * w[1] - q.y * w[0])};

    const Vec3 jw{cfg.inertia[0] * w[0], cfg.inertia[1] * w[1], cfg.inertia[2] * w[2]};
    const Vec3 gyro = cross(w, jw);
    d.dw = {(tau[0] - gyro[0]) / cfg.inertia[0], (tau[1] - gyro[1]) / cfg.inertia[1],
            (tau[2] - gyro[2]) / cfg.inertia[2]};
    return d;
}

RigidState advance(const RigidState& s, const Deriv& d, double h) {
    RigidState r = s;
    r.p = s.p + h * d.dp;
    r.v = s.v + h * d.dv;
    r.q = {s.q.w + h * d.dq[0], s.q.x + h * d.dq[1], s.q.y + h * d.dq[2], s.q.z + h * d.dq[3]};
    r.omega = s.omega + h * d.dw;
    return r;
}

} // namespace

RefKind ref_kind_from(const std::string& s) {
    if (s == "ellipse") return RefKind::Ellipse;
    if (s == "lemniscate") return RefKind::Lemniscate;
    if (s == "parabola") return RefKind::Parabola;
    if (s == "line") return RefKind::Line;
    throw ConfigError("unknown trajectory kind '" + s +
                      "' (ellipse, lemniscate, parabola, line)");
}

std::string to_string(RefKind k) {
    switch (k) {
    case RefKind::Ellipse: return "ellipse";
    case RefKind::Lemniscate: return "lemniscate";
    case RefKind::Parabola: return "parabola";
    case RefKind::Line: return "line";
    }
    return "?";
}

void SimConfig::validate() const {
    for (double x : {mass, arm, k_thrust, k_torque, gravity, inertia[0], inertia[1], inertia[2]})
        if (x <= 0.0) throw ConfigError("sim: physical constants must be positive");
    if (drag < 0.0) throw ConfigError("sim: drag must be nonnegative");
    if (speed_scale < 0.0) throw ConfigError("sim: speed scale must be nonnegative");
    if (sim_hz < record_hz || sim_hz < control_hz)
        throw ConfigError("sim: integrator rate must be at least the record/control rates");
}

RefPoint reference(RefKind kind, double speed_scale, double t) {
    RefPoint r;
    const double z0 = 1.5;
    switch (kind) {
    case RefKind::Ellipse: {
        const double a = 2.0, b = 1.2, w = 0.8 * speed_scale;
        r.p = {a * std::cos(w * t), b * std::sin(w * t), z0};
        r.v = {-a * w * std::sin(w * t), b * w * std::cos(w * t), 0.0};
        r.a = {-a * w * w * std::cos(w * t), -b * w * w * std::sin(w * t), 0.0};
        break;
    }
    case RefKind::Lemniscate: {
        const double a = 1.8, w = 0.7 * speed_scale;
        const double s = std::sin(w * t), c = std::cos(w * t);
        r.p = {a * s, a * s * c, z0};
        // y = a/2 sin(2wt)
        r.v = {a * w * c, a * w * std::cos(2 * w * t), 0.0};
        r.a = {-a * w * w * s, -2 * a * w * w * std::sin(2 * w * t), 0.0};
        break;
    }
    case RefKind::Parabola: {
        const double amp = 2.0, curv = 0.25, w = 0.7 * speed_scale;
        const double s = std::sin(w * t), c = std::cos(w * t);
        const double x = amp * s, xd = amp * w * c, xdd = -amp * w * w * s;
        r.p = {x, 0.0, z0 + curv * x * x};
        r.v = {xd, 0.0, 2 * curv * x * xd};
        r.a = {xdd, 0.0, 2 * curv * (xd * xd + x * xdd)};
        break;
    }
    case RefKind::Line: {
        const double amp = 2.5, w = 0.6 * speed_scale;
        const double s = std::sin(w * t), c = std::cos(w * t);
        r.p = {amp * s, 0.0, z0};
        r.v = {amp * w * c, 0.0, 0.0};
        r.a = {-amp * w * w * s, 0.0, 0.0};
        break;
    }
    }
    return r;
}

RigidState rk4_step(const SimConfig& cfg, const RigidState& s,
                    const std::array<double, 4>& motor_rpm, double dt) {
    const Deriv k1 = dynamics(cfg, s, motor_rpm);
    const Deriv k2 = dynamics(cfg, advance(s, k1, dt / 2), motor_rpm);
    const Deriv k3 = dynamics(cfg, advance(s, k2, dt / 2), motor_rpm);
    const Deriv k4 = dynamics(cfg, advance(s, k3, dt), motor_rpm);
    RigidState r = s;
    for (int i = 0; i < 3; ++i) {
        r.p[i] += dt / 6 * (k1.dp[i] + 2 * k2.dp[i] + 2 * k3.dp[i] + k4.dp[i]);
        r.v[i] += dt / 6 * (k1.dv[i] + 2 * k2.dv[i] + 2 * k3.dv[i] + k4.dv[i]);
        r.omega[i] += dt / 6 * (k1.dw[i] + 2 * k2.dw[i] + 2 * k3.dw[i] + k4.dw[i]);
    }
    const auto qk = [&](int i) {
        return dt / 6 * (k1.dq[i] + 2 * k2.dq[i] + 2 * k3.dq[i] + k4.dq[i]);
    };
    r.q = normalized(s.q.w + qk(0), s.q.x + qk(1), s.q.y + qk(2), s.q.z + qk(3));
    return r;
}

namespace {

std::array<double, 4> controller(const SimConfig& cfg, const RigidState& s, double t) {
    const RefPoint ref = reference(cfg.kind, cfg.speed_scale, t);
    const Vec3 ep = s.p - ref.p;
    const Vec3 ev = s.v - ref.v;

    // desired rotor force in the world frame; feed-forward gravity and drag
    Vec3 fdes = cfg.mass * (ref.a + Vec3{0, 0, cfg.gravity}) - cfg.kp * ep - cfg.kv * ev;
    fdes = fdes + cfg.drag * s.v;

    const auto rot = to_matrix(s.q);
    const Vec3 b3{rot[2], rot[5], rot[8]};
    double thrust = fdes[0] * b3[0] + fdes[1] * b3[1] + fdes[2] * b3[2];
    thrust = std::max(thrust, 0.05 * cfg.mass * cfg.gravity);

    // desired attitude from the force direction and a fixed heading
    const double fn = norm(fdes);
    const Vec3 b3d = fn > 1e-9 ? (1.0 / fn) * fdes : Vec3{0, 0, 1};
    const Vec3 b1ref{1, 0, 0};
    Vec3 b2d = cross(b3d, b1ref);
    const double b2n = norm(b2d);
    b2d = b2n > 1e-9 ? (1.0 / b2n) * b2d : Vec3{0, 1, 0};
    const Vec3 b1d = cross(b2d, b3d);

    // e_R = 1/2 vee(Rd^T R - R^T Rd)
    const std::array<double, 9> rd{b1d[0], b2d[0], b3d[0], b1d[1], b2d[1],
                                   b3d[1], b1d[2], b2d[2], b3d[2]};
    std::array<double, 9> m{}; // Rd^T R
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0;
            for (int k = 0; k < 3; ++k) acc += rd[k * 3 + i] * rot[k * 3 + j];
            m[i * 3 + j] = acc;
        }
    const Vec3 er{0.5 * (m[2 * 3 + 1] - m[1 * 3 + 2]), 0.5 * (m[0 * 3 + 2] - m[2 * 3 + 0]),
                  0.5 * (m[1 * 3 + 0] - m[0 * 3 + 1])};

    const Vec3 jw{cfg.inertia[0] * s.omega[0], cfg.inertia[1] * s.omega[1],
                  cfg.inertia[2] * s.omega[2]};
    const Vec3 tau = -cfg.kr * er - cfg.kw * s.omega + cross(s.omega, jw);

    // mixer (plus config): f = total, tx = l(f1-f3), ty = l(f2-f0), tz = g(f0-f1+f2-f3)
    const double gamma = cfg.k_torque / cfg.k_thrust;
    const double l = cfg.arm;
    std::array<double, 4> f{thrust / 4 - tau[1] / (2 * l) + tau[2] / (4 * gamma),
                            thrust / 4 + tau[0] / (2 * l) - tau[2] / (4 * gamma),
                            thrust / 4 + tau[1] / (2 * l) + tau[2] / (4 * gamma),
                            thrust / 4 - tau[0] / (2 * l) - tau[2] / (4 * gamma)};
    std::array<double, 4> rpm;
    for (int i = 0; i < 4; ++i) {
        f[i] = std::clamp(f[i], 0.0, 16.0 * cfg.mass * cfg.gravity);
        rpm[i] = std::sqrt(f[i] / cfg.k_thrust);
    }
    return rpm;
}

} // namespace

SimResult simulate(const SimConfig& cfg, double duration_s, uint64_t seed) {
    cfg.validate();
    if (duration_s < 1.0) throw ConfigError("sim: duration must be at least 1 s");

    const double dt = 1.0 / cfg.sim_hz;
    const auto steps_per_control = static_cast<int64_t>(std::llround(cfg.sim_hz / cfg.control_hz));
    const auto steps_per_record = static_cast<int64_t>(std::llround(cfg.sim_hz / cfg.record_hz));
    const auto total_steps = static_cast<int64_t>(std::llround(duration_s * cfg.sim_hz));

    RigidState s;
    const RefPoint r0 = reference(cfg.kind, cfg.speed_scale, 0.0);
    s.p = r0.p;
    s.v = r0.v;
    s.q = Quat::identity();
    s.omega = {0, 0, 0};

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SimResult out;
    out.truth.id = "sim";
    out.measured.id = "sim";

    std::array<double, 4> rpm{};
    auto record = [&](double t) {
        data::State truth;
        truth.p = s.p;
        truth.v = s.v;
        truth.q = {s.q.w, s.q.x, s.q.y, s.q.z};
        truth.omega = s.omega;
        out.truth.t.push_back(t);
        out.truth.states.push_back(truth);
        out.truth.actions.push_back(rpm);

        data::State meas = truth;
        const auto& nc = cfg.noise;
        for (int i = 0; i < 3; ++i) {
            meas.p[i] += nc.sigma_pos * gauss(rng);
            meas.v[i] += nc.sigma_v * gauss(rng);
            meas.omega[i] += nc.sigma_omega * gauss(rng);
        }
        if (nc.sigma_att > 0.0) {
            const Vec3 n{nc.sigma_att * gauss(rng), nc.sigma_att * gauss(rng),
                         nc.sigma_att * gauss(rng)};
            const double angle = norm(n);
            const Quat dq = angle > 1e-12 ? from_axis_angle(n, angle) : Quat::identity();
            const Quat qm = hamilton(dq, s.q);
            meas.q = {qm.w, qm.x, qm.y, qm.z};
        }
        out.measured.t.push_back(t);
        out.measured.states.push_back(meas);
        out.measured.actions.push_back(rpm);
    };

    for (int64_t k = 0; k < total_steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        if (k % steps_per_control == 0) rpm = controller(cfg, s, t);
        if (k % steps_per_record == 0) record(t);
        s = rk4_step(cfg, s, rpm, dt);
        if (norm(s.v) > cfg.max_speed)
            throw SimDivergedError("simulation diverged at t=" + std::to_string(t) +
                                   " s (speed " + std::to_string(norm(s.v)) + " m/s)");
    }

    // keep measured attitude signs continuous for additive-residual consumers
    for (size_t i = 1; i < out.measured.size(); ++i) {
        auto& q = out.measured.states[i].q;
        const auto& prev = out.measured.states[i - 1].q;
        if (prev[0] * q[0] + prev[1] * q[1] + prev[2] * q[2] + prev[3] * q[3] < 0.0)
            for (auto& c : q) c = -c;
    }
    return out;
}

} // namespace qdyn::sim
