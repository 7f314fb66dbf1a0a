#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "qdyn/data.hpp"
#include "qdyn/quat.hpp"

// Rigid-body quadrotor simulator with a geometric tracking controller.
// Produces desk-scale trajectory data in the same shape as flight logs:
// states at 100 Hz plus the motor speeds that were actually applied.

namespace qdyn::sim {

enum class RefKind { Ellipse, Lemniscate, Parabola, Line };

RefKind ref_kind_from(const std::string& s);
std::string to_string(RefKind k);

struct NoiseConfig {
    double sigma_v = 0.0;     // m/s per axis
    double sigma_omega = 0.0; // rad/s per axis
    double sigma_att = 0.0;   // rad, small-rotation perturbation
    double sigma_pos = 0.0;   // m per axis
};

struct SimConfig {
    double mass = 1.0;                              // kg
    std::array<double, 3> inertia = {0.01, 0.01, 0.02}; // kg m^2, diagonal
    double arm = 0.17;                              // m
    double k_thrust = 1.0e-7;                       // N / rpm^2
    double k_torque = 1.0e-9;                       // N m / rpm^2 (yaw drag)
    double drag = 0.15;                             // N / (m/s), linear
    double gravity = 9.81;                          // m/s^2

    double kp = 10.0, kv = 6.0;   // position / velocity gains
    double kr = 1.2, kw = 0.15;   // attitude / rate gains

    RefKind kind = RefKind::Ellipse;
    double speed_scale = 1.0;
    NoiseConfig noise;

    double record_hz = 100.0;
    double control_hz = 100.0;
    double sim_hz = 1000.0;
    double max_speed = 50.0; // m/s divergence guard

    void validate() const;
};

struct RigidState {
    std::array<double, 3> p{}, v{};
    Quat q{};
    std::array<double, 3> omega{};
};

/// Analytic reference curve (position, velocity, acceleration) at time t.
struct RefPoint {
    std::array<double, 3> p{}, v{}, a{};
};
RefPoint reference(RefKind kind, double speed_scale, double t);

/// One RK4 step of the rigid-body dynamics under fixed motor speeds (rpm).
RigidState rk4_step(const SimConfig& cfg, const RigidState& s,
                    const std::array<double, 4>& motor_rpm, double dt);

struct SimResult {
    data::Trajectory measured; // with sensor noise, what a logger would record
    data::Trajectory truth;    // noise-free states, same motor speeds
};

/// Closed-loop flight along the configured reference. Deterministic per seed.
SimResult simulate(const SimConfig& cfg, double duration_s, uint64_t seed);

} // namespace qdyn::sim
