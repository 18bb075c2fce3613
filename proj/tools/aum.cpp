// Audio Mamba desk-scale toolkit: feature extraction, toy training,
// evaluation, the scaling bench, and the block-variant ablation grid.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "aum/bench.hpp"
#include "aum/checkpoint.hpp"
#include "aum/config.hpp"
#include "aum/dataset.hpp"
#include "aum/toy.hpp"

extern "C" void openblas_set_num_threads(int);

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kFeatureKeys = {
    "seed",    "sample_rate", "n_mels",   "target_frames", "window",   "hop",
    "mel_fmin", "mel_fmax",   "norm_mean", "norm_std",     "log_floor", "patch"};

const std::set<std::string> kTrainKeys = {
    "seed",        "num_classes", "multilabel", "loss",       "base_lr",     "warmup_steps",
    "epochs",      "batch_size",  "lr_start",   "lr_step",    "lr_decay",    "mixup",
    "specaug_freq", "specaug_time", "weight_decay", "beta1",  "beta2",       "adam_eps",
    "embed_dim",   "depth",       "state_dim",  "expand",     "conv_kernel", "patch",
    "variant",     "cls_position", "n_mels",    "target_frames",
    // toy-dataset knobs used by `ablate`
    "toy_samples", "toy_norm_mean", "toy_norm_std"};

aum::FeatureConfig feature_config_from(const aum::KeyValueConfig& c) {
    aum::FeatureConfig f;
    f.sample_rate = static_cast<int>(c.get_int("sample_rate", f.sample_rate));
    f.n_mels = static_cast<std::size_t>(c.get_int("n_mels", static_cast<long>(f.n_mels)));
    f.target_frames =
        static_cast<std::size_t>(c.get_int("target_frames", static_cast<long>(f.target_frames)));
    f.window = static_cast<std::size_t>(c.get_int("window", static_cast<long>(f.window)));
    f.hop = static_cast<std::size_t>(c.get_int("hop", static_cast<long>(f.hop)));
    f.mel_fmin = c.get_double("mel_fmin", f.mel_fmin);
    f.mel_fmax = c.get_double("mel_fmax", f.mel_fmax);
    f.log_floor = static_cast<float>(c.get_double("log_floor", f.log_floor));
    f.dataset_mean = static_cast<float>(c.get_double("norm_mean", 0.0));
    f.dataset_std = static_cast<float>(c.get_double("norm_std", 0.5));
    f.patch = static_cast<std::size_t>(c.get_int("patch", static_cast<long>(f.patch)));
    return f;
}

aum::ModelConfig model_config_from(const aum::KeyValueConfig& c) {
    aum::ModelConfig m;
    m.embed_dim = static_cast<std::size_t>(c.get_int("embed_dim", 16));
    m.depth = static_cast<std::size_t>(c.get_int("depth", 2));
    m.state_dim = static_cast<std::size_t>(c.get_int("state_dim", 8));
    m.expand = static_cast<std::size_t>(c.get_int("expand", 2));
    m.conv_kernel = static_cast<std::size_t>(c.get_int("conv_kernel", 4));
    m.patch = static_cast<std::size_t>(c.get_int("patch", 16));
    m.num_classes = static_cast<std::size_t>(c.get_int("num_classes", 2));
    m.n_mels = static_cast<std::size_t>(c.get_int("n_mels", 32));
    m.target_frames = static_cast<std::size_t>(c.get_int("target_frames", 32));
    m.variant = aum::variant_from_string(c.get_string("variant", "fobi"));
    m.cls_position = aum::cls_position_from_string(c.get_string("cls_position", "mid"));
    return m;
}

aum::TrainConfig train_config_from(const aum::KeyValueConfig& c) {
    aum::TrainConfig t;
    t.loss = aum::loss_from_string(c.get_string("loss", "ce"));
    t.mixup_alpha = static_cast<float>(c.get_double("mixup", 0.0));
    t.specaug_freq = static_cast<std::size_t>(c.get_int("specaug_freq", 0));
    t.specaug_time = static_cast<std::size_t>(c.get_int("specaug_time", 0));
    t.base_lr = c.get_double("base_lr", 1e-3);
    t.lr_start = static_cast<int>(c.get_int("lr_start", 10));
    t.lr_step = static_cast<int>(c.get_int("lr_step", 5));
    t.lr_decay = c.get_double("lr_decay", 0.5);
    t.epochs = static_cast<int>(c.get_int("epochs", 100));
    t.batch_size = static_cast<std::size_t>(c.get_int("batch_size", 12));
    t.seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
    t.warmup_steps = c.get_int("warmup_steps", 0);
    t.weight_decay = c.get_double("weight_decay", 5e-7);
    t.beta1 = c.get_double("beta1", 0.95);
    t.beta2 = c.get_double("beta2", 0.999);
    t.adam_eps = c.get_double("adam_eps", 1e-8);
    return t;
}

// Every command writes its outputs under one run directory:
//   config.echo, manifest.json, logs/, artifacts/
struct RunDir {
    fs::path root;
    json manifest;

    explicit RunDir(const std::string& out, const std::string& command, std::uint64_t seed,
                    const std::string& config_text) {
        root = out;
        fs::create_directories(root / "logs");
        fs::create_directories(root / "artifacts");
        std::ofstream echo(root / "config.echo");
        echo << config_text;
        manifest["command"] = command;
        manifest["seed"] = seed;
        manifest["config_hash"] = aum::fnv1a_hash(config_text);
        manifest["artifacts"] = json::array();
        manifest["status"] = "running";
        flush();
    }
    fs::path artifact(const std::string& name) {
        manifest["artifacts"].push_back((root / "artifacts" / name).string());
        return root / "artifacts" / name;
    }
    fs::path log(const std::string& name) { return root / "logs" / name; }
    void done() {
        manifest["status"] = "complete";
        flush();
    }
    void flush() {
        std::ofstream f(root / "manifest.json");
        f << manifest.dump(2) << "\n";
    }
};

int worker_count() {
    const char* env = std::getenv("AUM_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

int cmd_features(const std::string& manifest_path, const std::string& config_path,
                 const std::string& out) {
    aum::KeyValueConfig cfg = aum::KeyValueConfig::parse_file(config_path);
    cfg.validate_keys(kFeatureKeys);
    aum::FeatureConfig fc = feature_config_from(cfg);
    std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    RunDir run(out, "features", seed, cfg.text());
    run.manifest["inputs"] = {{"manifest", manifest_path}, {"config", config_path}};

    std::vector<aum::ManifestEntry> entries = aum::read_manifest_csv(manifest_path);
    std::vector<aum::ManifestEntry> index(entries.size());
    int workers = worker_count();
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string error_msg;
    std::mutex err_mu;
    auto work = [&]() {
        for (std::size_t i; (i = next.fetch_add(1)) < entries.size();) {
            if (failed.load()) return;
            try {
                aum::Waveform w = aum::load_waveform(entries[i].path);
                aum::Spectrogram s = aum::log_mel_spectrogram(w, fc);
                s = aum::normalize(s, fc.dataset_mean, fc.dataset_std);
                std::string rec =
                    (run.root / "artifacts" / ("clip" + std::to_string(i) + ".aumf")).string();
                aum::write_feature_record(s, rec);
                index[i] = {rec, entries[i].labels};
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mu);
                failed = true;
                error_msg = e.what();
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        aum::active_workers += workers;
        std::vector<std::thread> pool;
        for (int i = 0; i < workers; ++i) pool.emplace_back(work);
        for (auto& th : pool) th.join();
        aum::active_workers -= workers;
    }
    if (failed) throw aum::IoError("feature extraction failed: " + error_msg);

    aum::write_index_csv(index, (run.root / "index.csv").string());
    run.manifest["artifacts"].push_back((run.root / "index.csv").string());
    run.done();
    std::cout << "cached " << index.size() << " feature records under " << run.root
              << std::endl;
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out) {
    aum::KeyValueConfig cfg = aum::KeyValueConfig::parse_file(config_path);
    cfg.validate_keys(kTrainKeys);
    aum::ModelConfig mc = model_config_from(cfg);
    aum::TrainConfig tc = train_config_from(cfg);
    RunDir run(out, "train", tc.seed, cfg.text());
    run.manifest["inputs"] = {{"config", config_path}, {"data", data_dir}};

    aum::Dataset data = aum::load_dataset((fs::path(data_dir) / "index.csv").string());
    aum::ModelWeights<float> model = aum::init_model<float>(mc, tc.seed);
    aum::TrainResult result = aum::train(model, data, tc);
    aum::write_train_log_csv(result.log, run.log("train.csv").string());
    aum::save_checkpoint(model, run.artifact("model.aumc").string());
    run.done();
    const aum::EpochLog& last = result.log.back();
    std::cout << "trained " << tc.epochs << " epochs; final loss " << last.loss << ", metric "
              << last.metric << std::endl;
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& task,
             const std::string& out) {
    aum::ModelWeights<float> model = aum::load_checkpoint(ckpt);
    RunDir run(out, "eval", 0, "ckpt=" + ckpt + "\ntask=" + task + "\n");
    run.manifest["inputs"] = {{"ckpt", ckpt}, {"data", data_dir}, {"task", task}};
    aum::Dataset data = aum::load_dataset((fs::path(data_dir) / "index.csv").string());
    aum::Metrics m = aum::evaluate(model, data, task);
    json result = {{"acc", m.acc},
                   {"map", m.map},
                   {"map_classes_used", m.map_classes_used},
                   {"map_classes_skipped", m.map_classes_skipped}};
    std::ofstream(run.artifact("metrics.json")) << result.dump(2) << "\n";
    run.done();
    if (task == "acc")
        std::cout << "acc " << m.acc << std::endl;
    else
        std::cout << "map " << m.map << " (classes used " << m.map_classes_used << ", skipped "
                  << m.map_classes_skipped << ")" << std::endl;
    return 0;
}

int cmd_bench(const std::string& tokens_csv, const std::string& models_csv,
              std::size_t reps, std::size_t mem_limit_mb, std::uint64_t seed,
              const std::string& out, const std::string& gnuplot) {
    aum::BenchConfig bc;
    bc.reps = reps;
    bc.seed = seed;
    bc.mem_limit_bytes = mem_limit_mb << 20;
    std::stringstream ts(tokens_csv), ms(models_csv);
    std::string part;
    while (std::getline(ts, part, ','))
        bc.token_counts.push_back(static_cast<std::size_t>(std::stoul(part)));
    while (std::getline(ms, part, ',')) bc.models.push_back(part);

    RunDir run(out, "bench", seed,
               "tokens=" + tokens_csv + "\nmodels=" + models_csv + "\nreps=" +
                   std::to_string(reps) + "\nmem_limit_mb=" + std::to_string(mem_limit_mb) +
                   "\nseed=" + std::to_string(seed) + "\n");
    aum::ScalingReport report = aum::measure(bc);
    aum::write_scaling_csv(report, run.artifact("scaling.csv").string());
    if (!gnuplot.empty()) aum::write_gnuplot_data(report, gnuplot);
    run.done();
    for (const auto& [model, slope] : report.slopes)
        std::cout << model << " log-log slope " << slope << std::endl;
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out) {
    aum::KeyValueConfig cfg = aum::KeyValueConfig::parse_file(config_path);
    cfg.validate_keys(kTrainKeys);
    aum::TrainConfig tc = train_config_from(cfg);
    RunDir run(out, "ablate", tc.seed, cfg.text());
    run.manifest["inputs"] = {{"config", config_path}};

    aum::ToyConfig toy;
    toy.seed = tc.seed;
    toy.n_samples = static_cast<std::size_t>(cfg.get_int("toy_samples", 64));
    toy.norm_mean = static_cast<float>(cfg.get_double("toy_norm_mean", toy.norm_mean));
    toy.norm_std = static_cast<float>(cfg.get_double("toy_norm_std", toy.norm_std));
    aum::Dataset data = aum::make_toy_dataset(toy);

    const aum::BlockVariant variants[] = {aum::BlockVariant::FoFo, aum::BlockVariant::FoBi,
                                          aum::BlockVariant::BiBi};
    const aum::ClsPosition positions[] = {aum::ClsPosition::Head, aum::ClsPosition::Mid,
                                          aum::ClsPosition::End};
    std::ofstream grid(run.artifact("ablation.csv"));
    grid << "variant,head,mid,end\n";
    std::cout << "variant    head     mid      end\n";
    for (aum::BlockVariant v : variants) {
        grid << aum::to_string(v);
        std::cout << aum::to_string(v) << "      ";
        for (aum::ClsPosition p : positions) {
            aum::ModelConfig mc = aum::toy_model_config(v, p);
            mc.embed_dim = static_cast<std::size_t>(cfg.get_int("embed_dim", 16));
            mc.depth = static_cast<std::size_t>(cfg.get_int("depth", 2));
            aum::ModelWeights<float> model = aum::init_model<float>(mc, tc.seed);
            aum::train(model, data, tc);
            double acc = aum::evaluate(model, data, "acc").acc;
            grid << "," << acc;
            std::cout << "  " << acc;
        }
        grid << "\n";
        std::cout << "\n";
    }
    run.done();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    openblas_set_num_threads(1);
    CLI::App app{"Audio Mamba (AuM) desk-scale toolkit"};
    app.require_subcommand(1);

    auto* features = app.add_subcommand("features", "cache log-mel feature records");
    std::string f_manifest, f_config, f_out;
    features->add_option("--manifest", f_manifest, "CSV of path,label")->required();
    features->add_option("--config", f_config, "feature config file")->required();
    features->add_option("--out", f_out, "run directory")->required();

    auto* train = app.add_subcommand("train", "train a model on cached features");
    std::string t_config, t_data, t_out;
    train->add_option("--config", t_config)->required();
    train->add_option("--data", t_data, "features run directory")->required();
    train->add_option("--out", t_out, "run directory (checkpoint in artifacts/)")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string e_ckpt, e_data, e_task = "acc", e_out = "eval-run";
    eval->add_option("--ckpt", e_ckpt)->required();
    eval->add_option("--data", e_data)->required();
    eval->add_option("--task", e_task)->check(CLI::IsMember({"acc", "map"}));
    eval->add_option("--out", e_out, "run directory");

    auto* bench = app.add_subcommand("bench", "block-level scaling benchmark");
    std::string b_tokens = "512,1024,2048,4096", b_models = "aum-s,aum-b,attn-s,attn-b";
    std::string b_out = "bench-run", b_gnuplot;
    std::size_t b_reps = 3, b_mem = 2048;
    std::uint64_t b_seed = 0;
    bench->add_option("--tokens", b_tokens, "comma-separated token counts");
    bench->add_option("--models", b_models, "comma-separated model labels");
    bench->add_option("--reps", b_reps, "timed repetitions per cell");
    bench->add_option("--mem-limit-mb", b_mem, "allocation cap; exceeding it records a DNF");
    bench->add_option("--seed", b_seed);
    bench->add_option("--out", b_out, "run directory");
    bench->add_option("--gnuplot", b_gnuplot, "also write a gnuplot data file");

    auto* ablate = app.add_subcommand("ablate", "3x3 variant/cls-position grid on toy data");
    std::string a_config, a_out = "ablate-run";
    ablate->add_option("--config", a_config)->required();
    ablate->add_option("--out", a_out, "run directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (features->parsed()) return cmd_features(f_manifest, f_config, f_out);
        if (train->parsed()) return cmd_train(t_config, t_data, t_out);
        if (eval->parsed()) return cmd_eval(e_ckpt, e_data, e_task, e_out);
        if (bench->parsed())
            return cmd_bench(b_tokens, b_models, b_reps, b_mem, b_seed, b_out, b_gnuplot);
        if (ablate->parsed()) return cmd_ablate(a_config, a_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
