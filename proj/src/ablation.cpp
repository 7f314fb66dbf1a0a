#include "qdyn/ablation.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "qdyn/errors.hpp"

namespace qdyn::eval {

namespace {

void run_cell(GridCell& cell, const GridSpec& spec,
              const std::vector<data::Trajectory>& train_trajs,
              const std::vector<data::Trajectory>& val_trajs,
              const std::vector<data::Trajectory>& test_trajs) {
    if (cell.arch != nn::EncoderKind::Mlp && cell.history <= 1) {
        cell.valid = false;
        cell.note = "sequence encoder without history";
        return;
    }
    try {
        nn::ModelConfig mc;
        mc.head = cell.head;
        mc.encoder.kind = cell.arch;
        if (!spec.encoder_layers.empty()) mc.encoder.layer_sizes = spec.encoder_layers;
        mc.encoder.kernel = spec.kernel;
        mc.encoder.dilation_base = spec.dilation_base;
        mc.encoder.history = cell.history;
        mc.encoder.mask = cell.mask;
        mc.decoder_sizes = spec.decoder_layers;

        const auto train_set =
            data::WindowDataset::make(train_trajs, cell.history, cell.unroll);
        const auto val_set =
            val_trajs.empty()
                ? data::WindowDataset{}
                : data::WindowDataset::make(val_trajs, cell.history, spec.eval_horizon);

        for (int64_t s = 0; s < spec.seeds; ++s) {
            train::TrainConfig tc = spec.train;
            tc.seed = spec.train.seed + static_cast<uint64_t>(s);
            tc.unroll = cell.unroll;
            nn::PredictorModel model = nn::PredictorModel::create(mc, tc.seed);
            train::train(model, train_set, val_set, tc);
            const RolloutReport rep =
                evaluate(model, test_trajs, spec.eval_horizon, spec.eval_stride);
            cell.seed_delta_z.push_back(rep.mean_delta_z);
            cell.seed_delta_v.push_back(rep.mean_delta_v);
            cell.seed_delta_q.push_back(rep.mean_delta_q);
        }
        const auto n = static_cast<double>(spec.seeds);
        for (double x : cell.seed_delta_z) cell.mean_delta_z += x / n;
        for (double x : cell.seed_delta_v) cell.mean_delta_v += x / n;
        for (double x : cell.seed_delta_q) cell.mean_delta_q += x / n;
    } catch (const Error& e) {
        cell.valid = false;
        cell.note = e.what();
    }
}

} // namespace

GridResult ablation_grid(const std::vector<data::Trajectory>& train_trajs,
                         const std::vector<data::Trajectory>& val_trajs,
                         const std::vector<data::Trajectory>& test_trajs,
                         const GridSpec& spec, int64_t jobs) {
    GridResult result;
    for (const auto mask : spec.masks)
        for (const auto head : spec.heads)
            for (const int64_t h : spec.histories)
                for (const int64_t u : spec.unrolls)
                    for (const auto arch : spec.archs) {
                        GridCell c;
                        c.arch = arch;
                        c.history = h;
                        c.unroll = u;
                        c.head = head;
                        c.mask = mask;
                        result.cells.push_back(c);
                    }

    const auto njobs = std::max<int64_t>(1, jobs);
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= result.cells.size()) return;
            run_cell(result.cells[i], spec, train_trajs, val_trajs, test_trajs);
        }
    };
    if (njobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int64_t j = 0; j < njobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return result;
}

void write_grid_csv(const std::string& path, const GridResult& result) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "arch,head,features,H,U,valid,delta_z,delta_v,delta_q,seed_delta_v,seed_delta_q\n";
    out.precision(12);
    for (const auto& c : result.cells) {
        out << nn::to_string(c.arch) << ',' << nn::to_string(c.head) << ',' << '"'
            << c.mask.str() << '"' << ',' << c.history << ',' << c.unroll << ','
            << (c.valid ? 1 : 0) << ',';
        if (c.valid) out << c.mean_delta_z << ',' << c.mean_delta_v << ',' << c.mean_delta_q;
        else out << ",,";
        out << ",\"";
        for (size_t i = 0; i < c.seed_delta_v.size(); ++i)
            out << (i ? ";" : "") << c.seed_delta_v[i];
        out << "\",\"";
        for (size_t i = 0; i < c.seed_delta_q.size(); ++i)
            out << (i ? ";" : "") << c.seed_delta_q[i];
        out << "\"\n";
    }
}

std::string format_grid_table(const GridResult& result) {
    // rows keyed by (mask, head, H, U); columns by architecture
    std::map<std::string, std::map<std::string, const GridCell*>> rows;
    std::vector<std::string> row_order, col_order;
    bool multi_mask = false, multi_head = false;
    {
        std::string mask0, head0;
        for (const auto& c : result.cells) {
            if (mask0.empty()) mask0 = c.mask.str();
            if (head0.empty()) head0 = nn::to_string(c.head);
            if (c.mask.str() != mask0) multi_mask = true;
            if (nn::to_string(c.head) != head0) multi_head = true;
        }
    }
    for (const auto& c : result.cells) {
        std::ostringstream key;
        if (multi_mask) key << "[" << c.mask.str() << "] ";
        if (multi_head) key << nn::to_string(c.head) << " ";
        key << "H=" << c.history << " U=" << c.unroll;
        const std::string col = nn::to_string(c.arch);
        if (!rows.count(key.str())) row_order.push_back(key.str());
        if (std::find(col_order.begin(), col_order.end(), col) == col_order.end())
            col_order.push_back(col);
        rows[key.str()][col] = &c;
    }

    std::ostringstream os;
    os << "delta_v: horizon-mean squared linear velocity error ((m/s)^2); "
          "delta_q: horizon-mean quaternion-log angle (rad)\n";
    const int label_w = 28;
    os << std::string(label_w, ' ');
    for (const auto& col : col_order) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), " %20s", col.c_str());
        os << buf;
    }
    os << "\n" << std::string(label_w, ' ');
    for (size_t i = 0; i < col_order.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), " %9s %10s", "delta_v", "delta_q");
        os << buf;
    }
    os << "\n";
    for (const auto& key : row_order) {
        char lbl[64];
        std::snprintf(lbl, sizeof(lbl), "%-*s", label_w, key.c_str());
        os << lbl;
        for (const auto& col : col_order) {
            const auto it = rows[key].find(col);
            if (it == rows[key].end() || !it->second->valid) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), " %9s %10s", "-", "-");
                os << buf;
            } else {
                char buf[64];
                std::snprintf(buf, sizeof(buf), " %9.4f %10.4f", it->second->mean_delta_v,
                              it->second->mean_delta_q);
                os << buf;
            }
        }
        os << "\n";
    }
    return os.str();
}

} // namespace qdyn::eval
