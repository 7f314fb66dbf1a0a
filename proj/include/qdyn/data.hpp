#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qdyn/io.hpp"
#include "qdyn/quat.hpp"

// Trajectory ingestion, resampling, sliding-window dataset construction,
// and trajectory-level splits.

namespace qdyn::data {

struct State {
    std::array<double, 3> p{};         // m, inertial frame
    std::array<double, 3> v{};         // m/s, inertial frame
    std::array<double, 4> q{1, 0, 0, 0}; // unit quaternion (w,x,y,z), body->inertial
    std::array<double, 3> omega{};     // rad/s, body frame
};

struct Trajectory {
    std::string id;
    std::vector<double> t; // seconds, strictly increasing, nominally 100 Hz
    std::vector<State> states;
    std::vector<std::array<double, 4>> actions; // motor speeds (rpm until scaled)
    bool actions_scaled = false;                // 1e-3 motor scaling applied once

    size_t size() const { return t.size(); }
};

// Column-name mapping plus unit switches for trajectory CSV files.
struct CsvSchema {
    std::string timestamp = "t";
    std::array<std::string, 3> p = {"px", "py", "pz"};
    std::array<std::string, 3> v = {"vx", "vy", "vz"};
    std::array<std::string, 4> q = {"qw", "qx", "qy", "qz"};
    std::array<std::string, 3> omega = {"wx", "wy", "wz"};
    std::array<std::string, 4> motor = {"u0", "u1", "u2", "u3"};
    std::string time_unit = "s";       // s | ms | us
    std::string omega_unit = "rad_s";  // rad_s | deg_s

    static CsvSchema from_kv(const io::KvMap& kv);
    static CsvSchema from_file(const std::string& path);
};

/// Parse, validate, unit-convert, normalize attitudes (with sign continuity)
/// and resample to `target_hz` when the source rate differs by more than 10%.
Trajectory ingest_csv(const std::string& path, const CsvSchema& schema = {},
                      double target_hz = 100.0);

/// Uniform-grid resampling: linear interpolation for p, v, omega and actions,
/// spherical linear interpolation for attitude.
Trajectory resample(const Trajectory& traj, double hz);

/// Multiply motor speeds by `factor`, once. A second call is an error.
void scale_actions(Trajectory& traj, double factor = 1e-3);

void write_csv(const std::string& path, const Trajectory& traj);

// ---- windows ---------------------------------------------------------------

// One gathered training batch. Row-major layouts:
//   state_hist     B x H x 10   (v, omega, q), oldest -> newest
//   action_hist    B x H x 4    (scaled motor speeds)
//   target_states  B x U x 10
//   future_actions B x U x 4
struct WindowBatch {
    int64_t count = 0, history = 0, unroll = 0;
    std::vector<double> state_hist;
    std::vector<double> action_hist;
    std::vector<double> target_states;
    std::vector<double> future_actions;
};

class WindowDataset {
public:
    WindowDataset() = default;

    /// Windows never span trajectory boundaries; trajectories shorter than
    /// H+U are skipped with a warning. Requires scaled actions. The dataset
    /// refers into `trajs`, which must outlive it.
    static WindowDataset make(const std::vector<Trajectory>& trajs, int64_t history,
                              int64_t unroll, int64_t stride = 1);
    static WindowDataset make(std::vector<Trajectory>&& trajs, int64_t history, int64_t unroll,
                              int64_t stride = 1) = delete;

    int64_t size() const { return static_cast<int64_t>(index_.size()); }
    int64_t history() const { return history_; }
    int64_t unroll() const { return unroll_; }
    std::pair<int32_t, int32_t> location(int64_t window) const { return index_[window]; }

    WindowBatch gather(std::span<const int64_t> windows) const;

private:
    const std::vector<Trajectory>* trajs_ = nullptr;
    int64_t history_ = 0, unroll_ = 0;
    std::vector<std::pair<int32_t, int32_t>> index_; // (trajectory, start)
};

// ---- splits -----------------------------------------------------------------

struct Splits {
    std::vector<std::string> train, val, test;
};

/// Seeded random split at trajectory granularity.
Splits split_by_ratio(const std::vector<std::string>& ids, double train_frac,
                      double val_frac, uint64_t seed);

/// Explicit lists; every id must be known and appear in at most one split.
Splits split_explicit(const std::vector<std::string>& ids,
                      const std::vector<std::string>& train,
                      const std::vector<std::string>& val,
                      const std::vector<std::string>& test);

void save_split_manifest(const std::string& path, const Splits& s);
Splits load_split_manifest(const std::string& path);

} // namespace qdyn::data
