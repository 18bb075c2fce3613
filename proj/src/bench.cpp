#include "aum/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>

#include "aum/attention.hpp"
#include "aum/encoder.hpp"

namespace aum {

namespace {

struct BlockSpec {
    std::string label;
    bool attention;
    std::size_t dim;
    std::size_t heads;  // attention only
};

BlockSpec block_spec_for(const std::string& model) {
    if (model == "aum-s") return {model, false, 384, 0};
    if (model == "aum-b") return {model, false, 768, 0};
    if (model == "attn-s") return {model, true, 384, 6};
    if (model == "attn-b") return {model, true, 768, 12};
    throw ConfigError("unknown bench model '" + model +
                      "' (expected aum-s|aum-b|attn-s|attn-b)");
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// One forward (and optionally backward) pass of a single block on random
// tokens. Weights live outside; everything allocated here counts toward the
// cell's peak.
template <class RunFwd>
BenchRow run_cell(const std::string& label, std::size_t tokens, const BenchConfig& cfg,
                  RunFwd&& run) {
    BenchRow row;
    row.model = label;
    row.tokens = tokens;
    std::vector<double> fwd, fwdbwd;
    std::size_t peak = 0;
    try {
        for (std::size_t i = 0; i < cfg.warmup + cfg.reps; ++i) {
            mem::reset_high_water();
            std::size_t base = mem::current.load();
            Clock::time_point t0 = Clock::now();
            run(false);
            double t_fwd = ms_since(t0);
            t0 = Clock::now();
            run(true);
            double t_fb = ms_since(t0);
            peak = std::max(peak, mem::high_water.load() - base);
            if (i >= cfg.warmup) {
                fwd.push_back(t_fwd);
                fwdbwd.push_back(t_fb);
            }
        }
    } catch (const MemLimitError&) {
        row.status = "dnf";
        return row;
    }
    row.fwd_ms = median(fwd);
    row.fwdbwd_ms = median(fwdbwd);
    row.peak_bytes = peak;
    return row;
}

}  // namespace

ScalingReport measure(const BenchConfig& cfg) {
    if (active_workers.load() != 0)
        throw StateError("bench: refusing to run while a worker pool is active");
    for (std::size_t i = 1; i < cfg.token_counts.size(); ++i)
        if (cfg.token_counts[i] <= cfg.token_counts[i - 1])
            throw ConfigError("bench: token counts must be strictly increasing");

    struct LimitGuard {
        std::size_t old;
        LimitGuard(std::size_t next) : old(mem::limit.load()) { mem::limit.store(next); }
        ~LimitGuard() { mem::limit.store(old); }
    } guard(cfg.mem_limit_bytes);
    ScalingReport report;
    report.environment = "single-threaded, float32, block-level, mem limit " +
                         std::to_string(cfg.mem_limit_bytes) + " bytes";

    for (const std::string& model : cfg.models) {
        BlockSpec spec = block_spec_for(model);
        std::mt19937 rng(static_cast<std::uint32_t>(cfg.seed + 1));
        bool dnf = false;
        // weight allocation itself can trip the limit; then every cell is a DNF
        std::unique_ptr<AumBlockWeights<float>> aw;
        std::unique_ptr<AttnBlockWeights<float>> tw;
        ModelConfig mc;
        mc.embed_dim = spec.dim;
        mc.state_dim = 16;
        mc.expand = 2;
        mc.conv_kernel = 4;
        mc.variant = BlockVariant::FoBi;
        try {
            if (!spec.attention)
                aw = std::make_unique<AumBlockWeights<float>>(init_block<float>(mc, rng));
            else
                tw = std::make_unique<AttnBlockWeights<float>>(
                    init_attn_block<float>(spec.dim, spec.heads, rng));
        } catch (const MemLimitError&) {
            dnf = true;
        }
        for (std::size_t n : cfg.token_counts) {
            if (dnf) {
                report.rows.push_back({model, n, 0, 0, 0, "dnf"});
                continue;
            }
            BenchRow row;
            try {
                Array<float> x({n, spec.dim});
                fill_normal(x, rng, 0.f, 1.f);
                row = run_cell(model, n, cfg, [&](bool backward) {
                    Tape<float> tape;
                    Val<float> in = tape.leaf(x, backward);
                    Val<float> out;
                    if (!spec.attention)
                        out = block_forward(in, bind(tape, *aw, backward), mc.variant);
                    else
                        out = attention_block_forward(in, bind(tape, *tw, backward));
                    if (backward) tape.backward(sum_all(out));
                });
            } catch (const MemLimitError&) {
                row = BenchRow{model, n, 0, 0, 0, "dnf"};
            }
            dnf = !row.ok();
            report.rows.push_back(row);
        }
        try {
            report.slopes[model] = fit_exponent(report, model);
        } catch (const ConfigError&) {
            // fewer than 3 completed points; no slope for this model
        }
    }
    return report;
}

double fit_exponent(const ScalingReport& report, const std::string& model) {
    std::vector<double> xs, ys;
    for (const BenchRow& r : report.rows)
        if (r.model == model && r.ok() && r.fwd_ms > 0.0) {
            xs.push_back(std::log(static_cast<double>(r.tokens)));
            ys.push_back(std::log(r.fwd_ms));
        }
    if (xs.size() < 3)
        throw ConfigError("fit_exponent: need >= 3 completed points for " + model);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= xs.size();
    my /= ys.size();
    double num = 0, den = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    return num / den;
}

void write_scaling_csv(const ScalingReport& report, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "model,tokens,fwd_ms,fwdbwd_ms,peak_bytes,status\n";
    f.precision(6);
    for (const BenchRow& r : report.rows)
        f << r.model << "," << r.tokens << "," << r.fwd_ms << "," << r.fwdbwd_ms << ","
          << r.peak_bytes << "," << r.status << "\n";
    f << "# environment: " << report.environment << "\n";
    for (const auto& [model, slope] : report.slopes)
        f << "# slope," << model << "," << slope << "\n";
}

void write_gnuplot_data(const ScalingReport& report, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "# tokens fwd_ms fwdbwd_ms peak_bytes (one block per model)\n";
    std::string current;
    for (const BenchRow& r : report.rows) {
        if (r.model != current) {
            f << "\n\n# model: " << r.model << "\n";
            current = r.model;
        }
        if (r.ok())
            f << r.tokens << " " << r.fwd_ms << " " << r.fwdbwd_ms << " " << r.peak_bytes
              << "\n";
    }
}

}  // namespace aum
