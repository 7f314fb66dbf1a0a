// qdyn: learn and evaluate long-horizon quadrotor dynamics models.
//
// Subcommands: gen-data, ingest, train, eval, ablate, bench-inference.
// Every run writes a manifest (config snapshot, seeds, dataset hashes) into
// its run directory so results can be reproduced and crawled.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "qdyn/ablation.hpp"
#include "qdyn/data.hpp"
#include "qdyn/errors.hpp"
#include "qdyn/evaluator.hpp"
#include "qdyn/io.hpp"
#include "qdyn/kernels.hpp"
#include "qdyn/model.hpp"
#include "qdyn/sim.hpp"
#include "qdyn/trainer.hpp"

namespace fs = std::filesystem;
using namespace qdyn;

namespace {

constexpr const char* kDatasetHint =
    "generate desk-scale data with `qdyn gen-data`, or download the public "
    "quadrotor datasets: PI-TCN flights "
    "(https://github.com/arplaboratory/data-driven-system-identification) and NeuroBEM "
    "(https://rpg.ifi.uzh.ch/NeuroBEM.html), converting them to the CSV schema in README.md";

std::vector<int64_t> parse_int_list(const std::string& s) {
    std::vector<int64_t> v;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) v.push_back(std::stoll(tok));
    return v;
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

void refuse_existing(const fs::path& p, bool force) {
    if (fs::exists(p) && !force)
        throw ConfigError(p.string() + " already exists; pass --force to overwrite");
}

fs::path make_run_dir(const std::string& out_dir, std::string run_name, uint64_t seed,
                      bool force) {
    if (run_name.empty()) run_name = timestamp_utc() + "_s" + std::to_string(seed);
    fs::path dir = fs::path(out_dir) / run_name;
    refuse_existing(dir, force);
    fs::create_directories(dir);
    return dir;
}

struct DataOptions {
    std::vector<std::string> files;
    std::string schema_file;
    double rate = 100.0;
};

void add_data_flags(CLI::App* cmd, DataOptions& d) {
    cmd->add_option("--data", d.files, "trajectory CSV files")->required();
    cmd->add_option("--schema", d.schema_file, "CSV schema key-value file (column names, units)");
    cmd->add_option("--rate", d.rate, "resampling rate [Hz]");
}

std::vector<data::Trajectory> load_trajectories(const DataOptions& d, io::KvMap* manifest) {
    data::CsvSchema schema =
        d.schema_file.empty() ? data::CsvSchema{} : data::CsvSchema::from_file(d.schema_file);
    std::vector<data::Trajectory> trajs;
    for (const auto& f : d.files) {
        if (!fs::exists(f))
            throw ConfigError("dataset file not found: " + f + "; " + kDatasetHint);
        data::Trajectory t = data::ingest_csv(f, schema, d.rate);
        data::scale_actions(t); // motor speeds scaled by 1e-3, exactly once
        if (manifest)
            (*manifest)["data." + fs::path(f).filename().string()] =
                io::hex64(io::fnv1a_file(f));
        trajs.push_back(std::move(t));
    }
    return trajs;
}

struct SplitOptions {
    double train_frac = 0.8, val_frac = 0.1;
    std::string manifest_file;
    uint64_t seed = 0;
};

void add_split_flags(CLI::App* cmd, SplitOptions& s) {
    cmd->add_option("--train-frac", s.train_frac, "trajectory fraction for training [0..1]");
    cmd->add_option("--val-frac", s.val_frac, "trajectory fraction for validation [0..1]");
    cmd->add_option("--split-manifest", s.manifest_file,
                    "explicit split manifest ([train]/[val]/[test] sections of file names)");
}

struct SplitTrajs {
    std::vector<data::Trajectory> train, val, test;
    data::Splits ids;
};

SplitTrajs split_trajectories(std::vector<data::Trajectory> trajs, const SplitOptions& opt) {
    std::vector<std::string> ids;
    for (const auto& t : trajs) ids.push_back(t.id);
    data::Splits s;
    if (!opt.manifest_file.empty()) {
        const data::Splits want = data::load_split_manifest(opt.manifest_file);
        // manifest may name files by basename; match either way
        auto resolve = [&](const std::vector<std::string>& names) {
            std::vector<std::string> out;
            for (const auto& n : names) {
                bool found = false;
                for (const auto& id : ids)
                    if (id == n || fs::path(id).filename() == n) {
                        out.push_back(id);
                        found = true;
                        break;
                    }
                if (!found) throw ConfigError("split manifest names unknown trajectory '" + n + "'");
            }
            return out;
        };
        s = data::split_explicit(ids, resolve(want.train), resolve(want.val), resolve(want.test));
    } else {
        s = data::split_by_ratio(ids, opt.train_frac, opt.val_frac, opt.seed);
    }
    SplitTrajs out;
    out.ids = s;
    auto in = [](const std::vector<std::string>& list, const std::string& id) {
        return std::find(list.begin(), list.end(), id) != list.end();
    };
    for (auto& t : trajs) {
        if (in(s.train, t.id)) out.train.push_back(std::move(t));
        else if (in(s.val, t.id)) out.val.push_back(std::move(t));
        else if (in(s.test, t.id)) out.test.push_back(std::move(t));
    }
    return out;
}

struct ModelOptions {
    std::string arch = "tcn";
    std::string head = "decoupled";
    int64_t history = 20;
    std::string enc_sizes, dec_sizes = "512,256,256";
    int64_t kernel = 3, dilation_base = 2;
    std::string features = "v,w,q";
};

void add_model_flags(CLI::App* cmd, ModelOptions& m) {
    cmd->add_option("--arch", m.arch, "encoder architecture: mlp | lstm | gru | tcn");
    cmd->add_option("--head", m.head, "predictor head: fullstate | multihead | decoupled");
    cmd->add_option("--H,--history", m.history, "history window length [samples at 100 Hz]");
    cmd->add_option("--enc-sizes", m.enc_sizes,
                    "encoder layer sizes, comma separated (default: per-architecture)");
    cmd->add_option("--dec-sizes", m.dec_sizes, "decoder layer sizes, comma separated");
    cmd->add_option("--kernel", m.kernel, "TCN kernel size [taps]");
    cmd->add_option("--dilation-base", m.dilation_base, "TCN dilation base (level k uses base^k)");
    cmd->add_option("--features", m.features,
                    "state feature groups fed to the encoder (of v,w,q; actions always included)");
}

nn::ModelConfig model_config(const ModelOptions& m) {
    nn::ModelConfig cfg;
    cfg.head = nn::head_kind_from(m.head);
    cfg.encoder.kind = nn::encoder_kind_from(m.arch);
    cfg.encoder.history = m.history;
    if (m.enc_sizes == "none") cfg.encoder.layer_sizes = std::vector<int64_t>{};
    else if (!m.enc_sizes.empty()) cfg.encoder.layer_sizes = parse_int_list(m.enc_sizes);
    cfg.decoder_sizes = parse_int_list(m.dec_sizes);
    cfg.encoder.kernel = m.kernel;
    cfg.encoder.dilation_base = m.dilation_base;
    cfg.encoder.mask = nn::FeatureMask::from_string(m.features);
    return cfg;
}

struct TrainOptions {
    int64_t iterations = 50'000, batch = 512, warmup = 5'000;
    double lr = 3e-4, weight_decay = 1e-4, grad_clip = -1.0;
    int64_t unroll = 10;
    uint64_t seed = 0;
    int64_t val_interval = 500, val_windows = 64, val_horizon = 60;
    bool allow_unstable = false;
};

void add_train_flags(CLI::App* cmd, TrainOptions& t) {
    cmd->add_option("--iterations", t.iterations, "optimizer iterations");
    cmd->add_option("--batch", t.batch, "windows per batch");
    cmd->add_option("--lr", t.lr, "peak learning rate");
    cmd->add_option("--warmup", t.warmup, "constant-warmup iterations before cosine annealing");
    cmd->add_option("--weight-decay", t.weight_decay, "decoupled weight decay");
    cmd->add_option("--grad-clip", t.grad_clip,
                    "global gradient-norm clip; <0 selects the default (10 when U > 5)");
    cmd->add_option("--U,--unroll", t.unroll, "multi-step loss unroll length [steps]");
    cmd->add_option("--seed", t.seed, "random seed (init, batch order, splits)");
    cmd->add_option("--val-interval", t.val_interval, "iterations between validation passes");
    cmd->add_option("--val-windows", t.val_windows, "validation windows per pass");
    cmd->add_option("--val-horizon", t.val_horizon, "validation rollout horizon [steps]");
    cmd->add_flag("--allow-unstable", t.allow_unstable,
                  "permit unroll lengths above 10 despite known training instability");
}

train::TrainConfig train_config(const TrainOptions& t) {
    if (t.unroll > 10 && !t.allow_unstable)
        throw ConfigError("unroll lengths above 10 destabilize training (gradients grow "
                          "through the long unroll); pass --allow-unstable to proceed");
    train::TrainConfig cfg;
    cfg.iterations = t.iterations;
    cfg.batch = t.batch;
    cfg.lr_peak = t.lr;
    cfg.warmup_iters = t.warmup;
    cfg.weight_decay = t.weight_decay;
    cfg.unroll = t.unroll;
    if (t.grad_clip >= 0.0) {
        if (t.grad_clip > 0.0) cfg.grad_clip = t.grad_clip;
        else cfg.grad_clip = std::nullopt; // 0 keeps the auto rule
    }
    cfg.seed = t.seed;
    cfg.val_interval = t.val_interval;
    cfg.val_max_windows = t.val_windows;
    return cfg;
}

void write_manifest(const fs::path& dir, io::KvMap kv) {
    kv["created_utc"] = timestamp_utc();
    io::write_kv_file((dir / "manifest.kv").string(), kv);
}

int run_gen_data(const std::string& kind, double speed_scale, double duration, double noise,
                 double noise_v, double noise_w, double noise_att, double noise_pos,
                 uint64_t seed, const std::string& out, const std::string& truth_out,
                 bool force) {
    sim::SimConfig cfg;
    cfg.kind = sim::ref_kind_from(kind);
    cfg.speed_scale = speed_scale;
    cfg.noise.sigma_v = noise_v >= 0 ? noise_v : noise;
    cfg.noise.sigma_omega = noise_w >= 0 ? noise_w : noise;
    cfg.noise.sigma_att = noise_att >= 0 ? noise_att : 0.2 * noise;
    cfg.noise.sigma_pos = noise_pos >= 0 ? noise_pos : 0.0;

    refuse_existing(out, force);
    if (!truth_out.empty()) refuse_existing(truth_out, force);
    const sim::SimResult res = sim::simulate(cfg, duration, seed);
    data::write_csv(out, res.measured);
    if (!truth_out.empty()) data::write_csv(truth_out, res.truth);
    std::printf("wrote %zu samples (%0.1f s at %.0f Hz) to %s\n", res.measured.size(), duration,
                cfg.record_hz, out.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"learned long-horizon quadrotor dynamics: data, training, evaluation"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "kernel threads (0 = OpenMP default)");

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "simulate a quadrotor flight and write a CSV");
    std::string g_kind = "ellipse", g_out, g_truth_out;
    double g_speed = 1.0, g_duration = 30.0;
    double g_noise = 0.0, g_noise_v = -1, g_noise_w = -1, g_noise_att = -1, g_noise_pos = -1;
    uint64_t g_seed = 0;
    bool g_force = false;
    gen->add_option("--traj-kind", g_kind, "reference: ellipse | lemniscate | parabola | line");
    gen->add_option("--speed-scale", g_speed, "reference speed multiplier (1 = nominal)");
    gen->add_option("--duration", g_duration, "flight time [s]");
    gen->add_option("--noise-sigma", g_noise,
                    "shorthand sensor noise: v,omega sigma [m/s, rad/s], attitude 0.2x [rad]");
    gen->add_option("--noise-v", g_noise_v, "velocity noise sigma [m/s]");
    gen->add_option("--noise-omega", g_noise_w, "angular velocity noise sigma [rad/s]");
    gen->add_option("--noise-att", g_noise_att, "attitude noise sigma [rad]");
    gen->add_option("--noise-pos", g_noise_pos, "position noise sigma [m]");
    gen->add_option("--seed", g_seed, "noise seed");
    gen->add_option("--out", g_out, "output CSV path")->required();
    gen->add_option("--truth-out", g_truth_out, "optional noise-free CSV path");
    gen->add_flag("--force", g_force, "overwrite existing outputs");
    gen->set_config("--config", "", "key-value config file (flags override)");

    // ---- ingest ----
    auto* ing = app.add_subcommand("ingest", "validate, normalize and resample a trajectory CSV");
    std::string i_input, i_schema, i_out;
    double i_rate = 100.0;
    bool i_force = false;
    ing->add_option("--input", i_input, "source CSV")->required();
    ing->add_option("--schema", i_schema, "CSV schema key-value file (column names, units)");
    ing->add_option("--rate", i_rate, "target sample rate [Hz]");
    ing->add_option("--out", i_out, "canonical CSV output path")->required();
    ing->add_flag("--force", i_force, "overwrite existing outputs");
    ing->set_config("--config", "", "key-value config file (flags override)");

    // ---- train ----
    auto* tr = app.add_subcommand("train", "train a predictor on trajectory CSVs");
    DataOptions t_data;
    SplitOptions t_split;
    ModelOptions t_model;
    TrainOptions t_train;
    std::string t_out_dir = "runs", t_run_name;
    bool t_force = false;
    add_data_flags(tr, t_data);
    add_split_flags(tr, t_split);
    add_model_flags(tr, t_model);
    add_train_flags(tr, t_train);
    tr->add_option("--out-dir", t_out_dir, "run directory root");
    tr->add_option("--run-name", t_run_name, "run directory name (default: timestamp + seed)");
    tr->add_flag("--force", t_force, "overwrite an existing run directory");
    tr->set_config("--config", "", "key-value config file (flags override)");

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "open-loop rollout evaluation of a checkpoint");
    DataOptions e_data;
    std::string e_ckpt, e_out_dir = "runs", e_run_name;
    int64_t e_horizon = 60, e_stride = 10;
    bool e_force = false;
    add_data_flags(ev, e_data);
    ev->add_option("--checkpoint", e_ckpt, "model checkpoint path")->required();
    ev->add_option("--horizon", e_horizon, "rollout horizon [steps at 100 Hz]");
    ev->add_option("--stride", e_stride, "window stride along test trajectories [samples]");
    ev->add_option("--out-dir", e_out_dir, "run directory root");
    ev->add_option("--run-name", e_run_name, "run directory name");
    ev->add_flag("--force", e_force, "overwrite an existing run directory");
    ev->set_config("--config", "", "key-value config file (flags override)");

    // ---- ablate ----
    auto* ab = app.add_subcommand("ablate", "train/evaluate a grid over architectures, H, U, "
                                            "heads and input masks");
    DataOptions a_data;
    SplitOptions a_split;
    TrainOptions a_train;
    std::string a_archs = "mlp,tcn", a_heads = "decoupled", a_masks = "v,w,q";
    std::string a_hs = "1,10", a_us = "1,5";
    std::string a_enc_sizes, a_dec_sizes = "512,256,256";
    int64_t a_kernel = 3, a_dbase = 2, a_seeds = 3, a_jobs = 1;
    int64_t a_horizon = 60, a_stride = 10;
    std::string a_out_dir = "runs", a_run_name;
    bool a_force = false;
    add_data_flags(ab, a_data);
    add_split_flags(ab, a_split);
    add_train_flags(ab, a_train);
    ab->add_option("--archs", a_archs, "encoder list, comma separated (mlp,lstm,gru,tcn)");
    ab->add_option("--heads", a_heads, "head list, comma separated");
    ab->add_option("--masks", a_masks, "input masks, ';' separated lists of v,w,q");
    ab->add_option("--Hs", a_hs, "history lengths, comma separated [samples]");
    ab->add_option("--Us", a_us, "unroll lengths, comma separated [steps]");
    ab->add_option("--enc-sizes", a_enc_sizes, "encoder sizes override, comma separated");
    ab->add_option("--dec-sizes", a_dec_sizes, "decoder sizes, comma separated");
    ab->add_option("--kernel", a_kernel, "TCN kernel [taps]");
    ab->add_option("--dilation-base", a_dbase, "TCN dilation base");
    ab->add_option("--seeds", a_seeds, "seeds per cell");
    ab->add_option("--jobs", a_jobs, "cells trained in parallel");
    ab->add_option("--eval-horizon", a_horizon, "rollout horizon [steps]");
    ab->add_option("--eval-stride", a_stride, "evaluation window stride [samples]");
    ab->add_option("--out-dir", a_out_dir, "run directory root");
    ab->add_option("--run-name", a_run_name, "run directory name");
    ab->add_flag("--force", a_force, "overwrite an existing run directory");
    ab->set_config("--config", "", "key-value config file (flags override)");

    // ---- bench-inference ----
    auto* be = app.add_subcommand(
        "bench-inference", "single-prediction latency vs parameter count on this machine");
    ModelOptions b_model;
    std::string b_ckpt;
    int64_t b_repeat = 200;
    add_model_flags(be, b_model);
    be->add_option("--checkpoint", b_ckpt, "time a saved model instead of a fresh one");
    be->add_option("--repeat", b_repeat, "timed predictions");
    be->set_config("--config", "", "key-value config file (flags override)");

    CLI11_PARSE(app, argc, argv);
    kernels::set_threads(threads);

    try {
        if (*gen)
            return run_gen_data(g_kind, g_speed, g_duration, g_noise, g_noise_v, g_noise_w,
                                g_noise_att, g_noise_pos, g_seed, g_out, g_truth_out, g_force);

        if (*ing) {
            refuse_existing(i_out, i_force);
            const data::CsvSchema schema =
                i_schema.empty() ? data::CsvSchema{} : data::CsvSchema::from_file(i_schema);
            if (!fs::exists(i_input))
                throw ConfigError("dataset file not found: " + i_input + "; " + kDatasetHint);
            const data::Trajectory t = data::ingest_csv(i_input, schema, i_rate);
            data::write_csv(i_out, t);
            std::printf("ingested %zu samples -> %s\n", t.size(), i_out.c_str());
            return 0;
        }

        if (*tr) {
            t_split.seed = t_train.seed;
            const train::TrainConfig tc = train_config(t_train);
            nn::ModelConfig mc = model_config(t_model);
            mc.validate();

            io::KvMap manifest;
            manifest["command"] = "train";
            std::vector<data::Trajectory> trajs = load_trajectories(t_data, &manifest);
            SplitTrajs split = split_trajectories(std::move(trajs), t_split);
            if (split.train.empty()) throw ConfigError("empty training split");

            const fs::path dir = make_run_dir(t_out_dir, t_run_name, t_train.seed, t_force);
            data::save_split_manifest((dir / "split_manifest.txt").string(), split.ids);

            nn::PredictorModel model = nn::PredictorModel::create(mc, t_train.seed);
            const auto train_set =
                data::WindowDataset::make(split.train, mc.encoder.history, tc.unroll);
            const auto val_set =
                split.val.empty() ? data::WindowDataset{}
                                  : data::WindowDataset::make(split.val, mc.encoder.history,
                                                              t_train.val_horizon);
            std::printf("training %s/%s H=%lld U=%lld on %lld windows (%lld parameters)\n",
                        t_model.arch.c_str(), t_model.head.c_str(),
                        static_cast<long long>(mc.encoder.history),
                        static_cast<long long>(tc.unroll),
                        static_cast<long long>(train_set.size()),
                        static_cast<long long>(model.parameter_count()));
            const train::TrainResult res = train::train(model, train_set, val_set, tc);

            const std::string ckpt = (dir / "checkpoint.qdyn").string();
            model.save(ckpt);
            train::write_train_log_csv((dir / "train_log.csv").string(), res.log);
            train::write_val_log_csv((dir / "val_log.csv").string(), res.val_log);

            manifest["seed"] = std::to_string(t_train.seed);
            manifest["arch"] = t_model.arch;
            manifest["head"] = t_model.head;
            manifest["history"] = std::to_string(mc.encoder.history);
            manifest["unroll"] = std::to_string(tc.unroll);
            manifest["iterations"] = std::to_string(tc.iterations);
            manifest["batch"] = std::to_string(tc.batch);
            manifest["lr_peak"] = std::to_string(tc.lr_peak);
            manifest["warmup_iters"] = std::to_string(tc.warmup_iters);
            manifest["weight_decay"] = std::to_string(tc.weight_decay);
            manifest["grad_clip"] = std::to_string(tc.resolved_grad_clip());
            manifest["parameters"] = std::to_string(model.parameter_count());
            manifest["checkpoint"] = ckpt;
            manifest["param_hash"] = io::hex64(io::param_hash(model.params()));
            manifest["final_loss"] = std::to_string(res.final_loss);
            if (res.best_iter >= 0) {
                manifest["best_iter"] = std::to_string(res.best_iter);
                manifest["best_val_delta_v"] = std::to_string(res.best_val_delta_v);
            }
            write_manifest(dir, manifest);
            std::printf("final loss %.6g; checkpoint %s\n", res.final_loss, ckpt.c_str());
            return 0;
        }

        if (*ev) {
            if (!fs::exists(e_ckpt)) throw ConfigError("checkpoint not found: " + e_ckpt);
            io::KvMap manifest;
            manifest["command"] = "eval";
            const std::vector<data::Trajectory> trajs = load_trajectories(e_data, &manifest);
            nn::PredictorModel model = nn::PredictorModel::load(e_ckpt);

            const fs::path dir = make_run_dir(e_out_dir, e_run_name, 0, e_force);
            const eval::RolloutReport rep = eval::evaluate(model, trajs, e_horizon, e_stride);
            eval::write_report_csv((dir / "report.csv").string(), rep);
            eval::write_curve_csv((dir / "curve.csv").string(), rep);
            const std::string summary = eval::format_summary(rep);
            std::ofstream((dir / "summary.txt").string()) << summary;

            manifest["checkpoint"] = e_ckpt;
            manifest["checkpoint_hash"] = io::hex64(io::fnv1a_file(e_ckpt));
            manifest["horizon"] = std::to_string(e_horizon);
            manifest["stride"] = std::to_string(e_stride);
            manifest["delta_z"] = std::to_string(rep.mean_delta_z);
            manifest["delta_v"] = std::to_string(rep.mean_delta_v);
            manifest["delta_omega"] = std::to_string(rep.mean_delta_omega);
            manifest["delta_q"] = std::to_string(rep.mean_delta_q);
            write_manifest(dir, manifest);
            std::fputs(summary.c_str(), stdout);
            return 0;
        }

        if (*ab) {
            a_split.seed = a_train.seed;
            io::KvMap manifest;
            manifest["command"] = "ablate";
            std::vector<data::Trajectory> trajs = load_trajectories(a_data, &manifest);
            SplitTrajs split = split_trajectories(std::move(trajs), a_split);
            if (split.train.empty() || split.test.empty())
                throw ConfigError("ablate needs nonempty train and test splits");

            eval::GridSpec spec;
            spec.histories = parse_int_list(a_hs);
            spec.unrolls = parse_int_list(a_us);
            spec.archs.clear();
            {
                std::stringstream ss(a_archs);
                std::string tok;
                while (std::getline(ss, tok, ','))
                    if (!tok.empty()) spec.archs.push_back(nn::encoder_kind_from(tok));
            }
            spec.heads.clear();
            {
                std::stringstream ss(a_heads);
                std::string tok;
                while (std::getline(ss, tok, ','))
                    if (!tok.empty()) spec.heads.push_back(nn::head_kind_from(tok));
            }
            spec.masks.clear();
            {
                std::stringstream ss(a_masks);
                std::string tok;
                while (std::getline(ss, tok, ';'))
                    if (!tok.empty()) spec.masks.push_back(nn::FeatureMask::from_string(tok));
            }
            spec.seeds = a_seeds;
            spec.train = train_config(a_train);
            if (!a_enc_sizes.empty()) spec.encoder_layers = parse_int_list(a_enc_sizes);
            spec.decoder_layers = parse_int_list(a_dec_sizes);
            spec.kernel = a_kernel;
            spec.dilation_base = a_dbase;
            spec.eval_horizon = a_horizon;
            spec.eval_stride = a_stride;

            const fs::path dir = make_run_dir(a_out_dir, a_run_name, a_train.seed, a_force);
            data::save_split_manifest((dir / "split_manifest.txt").string(), split.ids);
            const eval::GridResult grid =
                eval::ablation_grid(split.train, split.val, split.test, spec, a_jobs);
            eval::write_grid_csv((dir / "grid.csv").string(), grid);
            const std::string table = eval::format_grid_table(grid);
            std::ofstream((dir / "table.txt").string()) << table;
            manifest["seeds"] = std::to_string(a_seeds);
            manifest["cells"] = std::to_string(grid.cells.size());
            write_manifest(dir, manifest);
            std::fputs(table.c_str(), stdout);
            return 0;
        }

        if (*be) {
            nn::PredictorModel model = b_ckpt.empty()
                                           ? nn::PredictorModel::create(model_config(b_model), 0)
                                           : nn::PredictorModel::load(b_ckpt);
            const int64_t h = model.config().encoder.history;
            std::vector<double> states(static_cast<size_t>(h * 10), 0.0);
            for (int64_t k = 0; k < h; ++k) states[k * 10 + 6] = 1.0; // identity attitude
            std::vector<double> actions(static_cast<size_t>(h * 4), 5.0); // ~5000 rpm scaled

            for (int i = 0; i < 10; ++i) model.predict_one_step(states, actions, 1); // warmup
            const auto start = std::chrono::steady_clock::now();
            for (int64_t i = 0; i < b_repeat; ++i) model.predict_one_step(states, actions, 1);
            const auto stop = std::chrono::steady_clock::now();
            const double us =
                std::chrono::duration<double, std::micro>(stop - start).count() /
                static_cast<double>(b_repeat);
            std::printf("parameters: %lld (budget %lld)\n",
                        static_cast<long long>(model.parameter_count()),
                        static_cast<long long>(nn::kParamBudget));
            std::printf("single prediction: %.1f us mean over %lld reps "
                        "(host-machine numbers, %d kernel threads)\n",
                        us, static_cast<long long>(b_repeat), kernels::max_threads());
            std::printf("real-time budget at 100 Hz: %s\n", us < 10000.0 ? "met" : "exceeded");
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
