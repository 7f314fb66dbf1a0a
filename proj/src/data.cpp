#include "qdyn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_set>

#include "qdyn/errors.hpp"

namespace qdyn::data {

namespace {

std::vector<std::string> split_line(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_cell(const std::string& cell, size_t row, const std::string& col) {
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    while (first != last && (*first == ' ' || *first == '\t')) ++first;
    while (last != first && (*(last - 1) == ' ' || *(last - 1) == '\t')) --last;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last)
        throw IngestError("row " + std::to_string(row) + ", column '" + col +
                          "': cannot parse '" + cell + "'");
    if (std::isnan(v) || std::isinf(v))
        throw IngestError("row " + std::to_string(row) + ", column '" + col +
                          "': non-finite value");
    return v;
}

double lerp(double a, double b, double alpha) { return a + alpha * (b - a); }

double median_dt(const std::vector<double>& t) {
    if (t.size() < 2) return 0.0;
    std::vector<double> dt(t.size() - 1);
    for (size_t i = 0; i + 1 < t.size(); ++i) dt[i] = t[i + 1] - t[i];
    std::nth_element(dt.begin(), dt.begin() + dt.size() / 2, dt.end());
    return dt[dt.size() / 2];
}

} // namespace

CsvSchema CsvSchema::from_kv(const io::KvMap& kv) {
    CsvSchema s;
    auto get = [&](const char* key, std::string& field) {
        auto it = kv.find(key);
        if (it != kv.end()) field = it->second;
    };
    get("timestamp", s.timestamp);
    get("px", s.p[0]); get("py", s.p[1]); get("pz", s.p[2]);
    get("vx", s.v[0]); get("vy", s.v[1]); get("vz", s.v[2]);
    get("qw", s.q[0]); get("qx", s.q[1]); get("qy", s.q[2]); get("qz", s.q[3]);
    get("wx", s.omega[0]); get("wy", s.omega[1]); get("wz", s.omega[2]);
    get("u0", s.motor[0]); get("u1", s.motor[1]); get("u2", s.motor[2]); get("u3", s.motor[3]);
    get("time_unit", s.time_unit);
    get("omega_unit", s.omega_unit);
    if (s.time_unit != "s" && s.time_unit != "ms" && s.time_unit != "us")
        throw ConfigError("schema: time_unit must be s, ms or us");
    if (s.omega_unit != "rad_s" && s.omega_unit != "deg_s")
        throw ConfigError("schema: omega_unit must be rad_s or deg_s");
    return s;
}

CsvSchema CsvSchema::from_file(const std::string& path) {
    return from_kv(io::read_kv_file(path));
}

Trajectory ingest_csv(const std::string& path, const CsvSchema& schema, double target_hz) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IngestError(path + ": empty file");

    const auto headers = split_line(line, ',');
    auto col = [&](const std::string& name) -> size_t {
        for (size_t i = 0; i < headers.size(); ++i)
            if (headers[i] == name) return i;
        throw IngestError(path + ": missing column '" + name + "'");
    };

    const size_t ct = col(schema.timestamp);
    std::array<size_t, 3> cp{col(schema.p[0]), col(schema.p[1]), col(schema.p[2])};
    std::array<size_t, 3> cv{col(schema.v[0]), col(schema.v[1]), col(schema.v[2])};
    std::array<size_t, 4> cq{col(schema.q[0]), col(schema.q[1]), col(schema.q[2]),
                             col(schema.q[3])};
    std::array<size_t, 3> cw{col(schema.omega[0]), col(schema.omega[1]), col(schema.omega[2])};
    std::array<size_t, 4> cu{col(schema.motor[0]), col(schema.motor[1]), col(schema.motor[2]),
                             col(schema.motor[3])};

    const double tscale = schema.time_unit == "ms" ? 1e-3
                        : schema.time_unit == "us" ? 1e-6
                                                   : 1.0;
    const double wscale = schema.omega_unit == "deg_s" ? M_PI / 180.0 : 1.0;

    Trajectory traj;
    traj.id = path;
    size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = split_line(line, ',');
        if (cells.size() != headers.size())
            throw IngestError(path + ": row " + std::to_string(row) + " has " +
                              std::to_string(cells.size()) + " cells, header has " +
                              std::to_string(headers.size()));
        auto cell = [&](size_t c, const std::string& name) {
            return parse_cell(cells[c], row, name);
        };
        const double t = cell(ct, schema.timestamp) * tscale;
        if (!traj.t.empty() && t <= traj.t.back())
            throw IngestError(path + ": row " + std::to_string(row) +
                              ": timestamps not strictly increasing");
        State s;
        for (int i = 0; i < 3; ++i) s.p[i] = cell(cp[i], schema.p[i]);
        for (int i = 0; i < 3; ++i) s.v[i] = cell(cv[i], schema.v[i]);
        for (int i = 0; i < 4; ++i) s.q[i] = cell(cq[i], schema.q[i]);
        for (int i = 0; i < 3; ++i) s.omega[i] = cell(cw[i], schema.omega[i]) * wscale;
        std::array<double, 4> u;
        for (int i = 0; i < 4; ++i) u[i] = cell(cu[i], schema.motor[i]);
        traj.t.push_back(t);
        traj.states.push_back(s);
        traj.actions.push_back(u);
    }
    if (traj.size() < 2) throw IngestError(path + ": fewer than two samples");

    // normalize attitudes, keep the sign continuous along the trajectory
    for (size_t i = 0; i < traj.size(); ++i) {
        auto& q = traj.states[i].q;
        Quat n;
        try {
            n = normalized(q[0], q[1], q[2], q[3]);
        } catch (const Error&) {
            throw IngestError(path + ": row " + std::to_string(i + 1) +
                              ": degenerate quaternion");
        }
        if (i > 0) {
            const auto& prev = traj.states[i - 1].q;
            if (prev[0] * n.w + prev[1] * n.x + prev[2] * n.y + prev[3] * n.z < 0.0)
                n = {-n.w, -n.x, -n.y, -n.z};
        }
        q = {n.w, n.x, n.y, n.z};
    }

    // resample only when the source rate is off by more than 10%
    const double dt = median_dt(traj.t);
    const double want = 1.0 / target_hz;
    if (std::abs(dt - want) > 0.1 * want) return resample(traj, target_hz);
    return traj;
}

Trajectory resample(const Trajectory& traj, double hz) {
    if (traj.size() < 2) throw IngestError("resample: trajectory too short");
    const double dt = 1.0 / hz;
    const double t0 = traj.t.front();
    const double span = traj.t.back() - t0;
    const auto n = static_cast<size_t>(std::floor(span / dt + 1e-9)) + 1;

    Trajectory out;
    out.id = traj.id;
    out.actions_scaled = traj.actions_scaled;
    out.t.reserve(n);
    out.states.reserve(n);
    out.actions.reserve(n);

    size_t j = 0; // left bracket of the source interval
    for (size_t k = 0; k < n; ++k) {
        const double tk = t0 + static_cast<double>(k) * dt;
        while (j + 2 < traj.size() && traj.t[j + 1] <= tk) ++j;
        const double ta = traj.t[j], tb = traj.t[j + 1];
        const double alpha = std::clamp((tk - ta) / (tb - ta), 0.0, 1.0);

        const State& a = traj.states[j];
        const State& b = traj.states[j + 1];
        State s;
        for (int i = 0; i < 3; ++i) {
            s.p[i] = lerp(a.p[i], b.p[i], alpha);
            s.v[i] = lerp(a.v[i], b.v[i], alpha);
            s.omega[i] = lerp(a.omega[i], b.omega[i], alpha);
        }
        const Quat qa{a.q[0], a.q[1], a.q[2], a.q[3]};
        const Quat qb{b.q[0], b.q[1], b.q[2], b.q[3]};
        const Quat qi = slerp(qa, qb, alpha);
        s.q = {qi.w, qi.x, qi.y, qi.z};
        std::array<double, 4> u;
        for (int i = 0; i < 4; ++i) u[i] = lerp(traj.actions[j][i], traj.actions[j + 1][i], alpha);

        out.t.push_back(tk);
        out.states.push_back(s);
        out.actions.push_back(u);
    }
    // slerp already keeps signs continuous between brackets; re-check anyway
    for (size_t i = 1; i < out.size(); ++i) {
        auto& q = out.states[i].q;
        const auto& prev = out.states[i - 1].q;
        if (prev[0] * q[0] + prev[1] * q[1] + prev[2] * q[2] + prev[3] * q[3] < 0.0)
            for (auto& c : q) c = -c;
    }
    return out;
}

void scale_actions(Trajectory& traj, double factor) {
    if (traj.actions_scaled)
        throw Error("trajectory '" + traj.id + "': motor scaling already applied");
    for (auto& u : traj.actions)
        for (auto& x : u) x *= factor;
    traj.actions_scaled = true;
}

void write_csv(const std::string& path, const Trajectory& traj) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "t,px,py,pz,vx,vy,vz,qw,qx,qy,qz,wx,wy,wz,u0,u1,u2,u3\n";
    out.precision(17);
    for (size_t i = 0; i < traj.size(); ++i) {
        const State& s = traj.states[i];
        out << traj.t[i];
        for (double x : s.p) out << ',' << x;
        for (double x : s.v) out << ',' << x;
        for (double x : s.q) out << ',' << x;
        for (double x : s.omega) out << ',' << x;
        for (double x : traj.actions[i]) out << ',' << x;
        out << '\n';
    }
}

// ---- windows -----------------------------------------------------------------

WindowDataset WindowDataset::make(const std::vector<Trajectory>& trajs, int64_t history,
                                  int64_t unroll, int64_t stride) {
    if (history < 1 || unroll < 1) throw ConfigError("windows: need history >= 1, unroll >= 1");
    if (stride < 1) throw ConfigError("windows: stride must be >= 1");
    WindowDataset ds;
    ds.trajs_ = &trajs;
    ds.history_ = history;
    ds.unroll_ = unroll;
    for (size_t ti = 0; ti < trajs.size(); ++ti) {
        const auto& tr = trajs[ti];
        if (!tr.actions_scaled)
            throw Error("trajectory '" + tr.id + "': windows require scaled actions");
        const int64_t len = static_cast<int64_t>(tr.size());
        const int64_t last_start = len - history - unroll;
        if (last_start < 0) {
            std::fprintf(stderr, "warning: trajectory '%s' too short for H=%lld U=%lld, skipped\n",
                         tr.id.c_str(), static_cast<long long>(history),
                         static_cast<long long>(unroll));
            continue;
        }
        for (int64_t s = 0; s <= last_start; s += stride)
            ds.index_.emplace_back(static_cast<int32_t>(ti), static_cast<int32_t>(s));
    }
    return ds;
}

WindowBatch WindowDataset::gather(std::span<const int64_t> windows) const {
    const int64_t b = static_cast<int64_t>(windows.size());
    WindowBatch out;
    out.count = b;
    out.history = history_;
    out.unroll = unroll_;
    out.state_hist.resize(static_cast<size_t>(b * history_ * 10));
    out.action_hist.resize(static_cast<size_t>(b * history_ * 4));
    out.target_states.resize(static_cast<size_t>(b * unroll_ * 10));
    out.future_actions.resize(static_cast<size_t>(b * unroll_ * 4));

    auto put_state = [](double* dst, const State& s) {
        for (int i = 0; i < 3; ++i) dst[i] = s.v[i];
        for (int i = 0; i < 3; ++i) dst[3 + i] = s.omega[i];
        for (int i = 0; i < 4; ++i) dst[6 + i] = s.q[i];
    };

    for (int64_t wi = 0; wi < b; ++wi) {
        const auto [ti, start] = index_[windows[wi]];
        const auto& tr = (*trajs_)[ti];
        for (int64_t k = 0; k < history_; ++k) {
            put_state(out.state_hist.data() + (wi * history_ + k) * 10,
                      tr.states[start + k]);
            const auto& u = tr.actions[start + k];
            std::copy(u.begin(), u.end(), out.action_hist.data() + (wi * history_ + k) * 4);
        }
        for (int64_t k = 0; k < unroll_; ++k) {
            put_state(out.target_states.data() + (wi * unroll_ + k) * 10,
                      tr.states[start + history_ + k]);
            const auto& u = tr.actions[start + history_ + k];
            std::copy(u.begin(), u.end(), out.future_actions.data() + (wi * unroll_ + k) * 4);
        }
    }
    return out;
}

// ---- splits -------------------------------------------------------------------

Splits split_by_ratio(const std::vector<std::string>& ids, double train_frac,
                      double val_frac, uint64_t seed) {
    if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0)
        throw ConfigError("split: fractions must be nonnegative and sum to at most 1");
    std::vector<std::string> shuffled = ids;
    std::mt19937_64 rng(seed);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto n = shuffled.size();
    const auto ntrain = static_cast<size_t>(std::llround(train_frac * static_cast<double>(n)));
    const auto nval = static_cast<size_t>(std::llround(val_frac * static_cast<double>(n)));
    Splits s;
    s.train.assign(shuffled.begin(), shuffled.begin() + ntrain);
    s.val.assign(shuffled.begin() + ntrain, shuffled.begin() + std::min(n, ntrain + nval));
    s.test.assign(shuffled.begin() + std::min(n, ntrain + nval), shuffled.end());
    return s;
}

Splits split_explicit(const std::vector<std::string>& ids,
                      const std::vector<std::string>& train,
                      const std::vector<std::string>& val,
                      const std::vector<std::string>& test) {
    std::unordered_set<std::string> known(ids.begin(), ids.end());
    std::unordered_set<std::string> seen;
    for (const auto* list : {&train, &val, &test}) {
        for (const auto& id : *list) {
            if (!known.count(id)) throw Error("split: unknown trajectory '" + id + "'");
            if (!seen.insert(id).second)
                throw Error("split: trajectory '" + id + "' appears in two splits");
        }
    }
    return Splits{train, val, test};
}

void save_split_manifest(const std::string& path, const Splits& s) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    for (const auto& [name, list] :
         {std::pair<const char*, const std::vector<std::string>*>{"train", &s.train},
          {"val", &s.val},
          {"test", &s.test}}) {
        out << "[" << name << "]\n";
        for (const auto& id : *list) out << id << "\n";
    }
}

Splits load_split_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    Splits s;
    std::vector<std::string>* cur = nullptr;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line == "[train]") cur = &s.train;
        else if (line == "[val]") cur = &s.val;
        else if (line == "[test]") cur = &s.test;
        else if (cur) cur->push_back(line);
        else throw ConfigError(path + ": entry before any [train]/[val]/[test] section");
    }
    return s;
}

} // namespace qdyn::data
