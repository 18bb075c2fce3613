#include "aum/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "aum/metrics.hpp"

namespace aum {

Spectrogram spec_augment(const Spectrogram& s, std::size_t f_max, std::size_t t_max,
                         std::mt19937& rng) {
    Spectrogram out = s;
    if (f_max == 0 && t_max == 0) return out;
    f_max = std::min(f_max, s.n_mels);
    t_max = std::min(t_max, s.frames);
    float fill = s.mean();
    auto draw = [&rng](std::size_t max_width, std::size_t extent) {
        std::uniform_int_distribution<std::size_t> wd(0, max_width);
        std::size_t w = wd(rng);
        std::uniform_int_distribution<std::size_t> sd(0, extent - w);
        return std::pair<std::size_t, std::size_t>(sd(rng), w);
    };
    auto [f0, fw] = draw(f_max, s.n_mels);
    auto [t0, tw] = draw(t_max, s.frames);
    for (std::size_t f = f0; f < f0 + fw; ++f)
        for (std::size_t t = 0; t < s.frames; ++t) out.at(f, t) = fill;
    for (std::size_t t = t0; t < t0 + tw; ++t)
        for (std::size_t f = 0; f < s.n_mels; ++f) out.at(f, t) = fill;
    return out;
}

void blend_into(Spectrogram& a, const Spectrogram& b, float lambda) {
    if (!a.values.same_shape(b.values))
        throw ShapeError("blend: spectrogram shapes differ");
    for (std::size_t i = 0; i < a.values.numel(); ++i)
        a.values[i] = lambda * a.values[i] + (1.f - lambda) * b.values[i];
}

void mixup(Batch& batch, float alpha, std::mt19937& rng) {
    if (alpha < 0.f || alpha > 1.f) throw ConfigError("mixup: alpha must be in [0,1]");
    if (alpha == 0.f) return;
    std::size_t n = batch.specs.size(), classes = batch.targets.cols();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t(0));
    std::shuffle(perm.begin(), perm.end(), rng);
    std::uniform_real_distribution<float> u01(0.f, 1.f);
    // snapshot partners before blending in place
    std::vector<Spectrogram> partners;
    Array<float> tpart = batch.targets;
    partners.reserve(n);
    for (std::size_t i = 0; i < n; ++i) partners.push_back(batch.specs[perm[i]]);
    for (std::size_t i = 0; i < n; ++i) {
        bool apply = u01(rng) < alpha;
        float lambda = 0.5f + (u01(rng) - 0.5f) * (1.f - alpha);
        if (!apply || perm[i] == i) continue;
        blend_into(batch.specs[i], partners[i], lambda);
        for (std::size_t c = 0; c < classes; ++c)
            batch.targets.at2(i, c) =
                lambda * batch.targets.at2(i, c) + (1.f - lambda) * tpart.at2(perm[i], c);
    }
}

double lr_at(long step, int epoch, const TrainConfig& cfg) {
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return cfg.base_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    int k = 0;
    if (cfg.lr_step > 0)
        for (int m = cfg.lr_start; m <= epoch; m += cfg.lr_step) ++k;
    return cfg.base_lr * std::pow(cfg.lr_decay, k);
}

namespace {

Array<float> targets_for(const Dataset& data, const std::vector<std::size_t>& idx,
                         std::size_t num_classes) {
    Array<float> t({idx.size(), num_classes});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (int c : data[idx[i]].labels) {
            if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
                throw ConfigError("label id " + std::to_string(c) + " out of range for " +
                                  std::to_string(num_classes) + " classes");
            t.at2(i, static_cast<std::size_t>(c)) = 1.f;
        }
    return t;
}

std::mt19937 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
    return std::mt19937(seq);
}

}  // namespace

TrainResult train(ModelWeights<float>& model, const Dataset& data, const TrainConfig& cfg) {
    if (data.empty()) throw ConfigError("train: empty dataset");
    std::vector<ParamRef<float>> params = model_params(model);
    AdamState opt;
    opt.m.reserve(params.size());
    for (auto& p : params) {
        opt.m.push_back(Array<float>::zeros(p.array->shape));
        opt.v.push_back(Array<float>::zeros(p.array->shape));
    }

    TrainResult result;
    long global_step = 0;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t(0));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937 shuffle_rng = derived_rng(cfg.seed, 0xe90c, epoch);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        std::mt19937 mix_rng = derived_rng(cfg.seed, 0x31b2, epoch);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        double last_lr = 0.0;

        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            std::vector<std::size_t> idx(order.begin() + b0,
                                         order.begin() + std::min(order.size(),
                                                                  b0 + cfg.batch_size));
            Batch batch;
            batch.targets = targets_for(data, idx, model.cfg.num_classes);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                std::mt19937 aug_rng = derived_rng(cfg.seed, 0xa000 + epoch, idx[i]);
                batch.specs.push_back(spec_augment(data[idx[i]].spec, cfg.specaug_freq,
                                                   cfg.specaug_time, aug_rng));
            }
            mixup(batch, cfg.mixup_alpha, mix_rng);

            Tape<float> tape;
            ModelVals<float> vals = bind(tape, model);
            Val<float> total{};
            for (std::size_t i = 0; i < batch.specs.size(); ++i) {
                Val<float> logits = model_forward(tape, batch.specs[i], vals, model.cfg);
                Array<float> yi({model.cfg.num_classes});
                for (std::size_t c = 0; c < yi.numel(); ++c) yi[c] = batch.targets.at2(i, c);
                Val<float> li = loss(logits, yi, cfg.loss);
                total = i == 0 ? li : add(total, li);
            }
            Val<float> batch_loss = scale(total, 1.f / static_cast<float>(batch.specs.size()));
            double lval = batch_loss.v()[0];
            if (!std::isfinite(lval))
                throw NumericError("training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", step " +
                                   std::to_string(global_step));
            tape.backward(batch_loss);

            ++global_step;
            double lr = lr_at(global_step, epoch, cfg);
            last_lr = lr;
            opt.t += 1;
            double bc1 = 1.0 - std::pow(cfg.beta1, opt.t);
            double bc2 = 1.0 - std::pow(cfg.beta2, opt.t);
            std::vector<Val<float>> pvals = model_param_vals(vals);
            for (std::size_t p = 0; p < params.size(); ++p) {
                const Array<float>& g = tape.grad(pvals[p].id);
                Array<float>& w = *params[p].array;
                for (std::size_t i = 0; i < w.numel(); ++i) {
                    float m = opt.m[p][i] =
                        static_cast<float>(cfg.beta1) * opt.m[p][i] +
                        (1.f - static_cast<float>(cfg.beta1)) * g[i];
                    float v = opt.v[p][i] =
                        static_cast<float>(cfg.beta2) * opt.v[p][i] +
                        (1.f - static_cast<float>(cfg.beta2)) * g[i] * g[i];
                    double mhat = m / bc1, vhat = v / bc2;
                    w[i] -= static_cast<float>(lr * cfg.weight_decay) * w[i];
                    w[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
                }
            }
            epoch_loss += lval;
            ++batches;
        }

        Metrics m = evaluate(model, data, cfg.loss == LossKind::BCE ? "map" : "acc");
        result.log.push_back({epoch, global_step, last_lr, epoch_loss / batches,
                              cfg.loss == LossKind::BCE ? m.map : m.acc});
    }
    return result;
}

Array<float> predict_logits(ModelWeights<float>& model, const Dataset& data) {
    Array<float> out({data.size(), model.cfg.num_classes});
    for (std::size_t i = 0; i < data.size(); ++i) {
        Tape<float> tape;
        ModelVals<float> vals = bind(tape, model, /*rg=*/false);
        Val<float> logits = model_forward(tape, data[i].spec, vals, model.cfg);
        for (std::size_t c = 0; c < model.cfg.num_classes; ++c)
            out.at2(i, c) = logits.v()[c];
    }
    return out;
}

Metrics evaluate(ModelWeights<float>& model, const Dataset& data, const std::string& task) {
    if (task != "acc" && task != "map")
        throw ConfigError("evaluate: unknown task '" + task + "' (expected acc|map)");
    Array<float> logits = predict_logits(model, data);
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t(0));
    Array<float> targets({data.size(), model.cfg.num_classes});
    for (std::size_t i = 0; i < data.size(); ++i)
        for (int c : data[i].labels) targets.at2(i, static_cast<std::size_t>(c)) = 1.f;
    Metrics m;
    m.acc = accuracy(logits, targets);
    MapResult mr = mean_average_precision(logits, targets);
    m.map = mr.map;
    m.map_classes_used = mr.classes_used;
    m.map_classes_skipped = mr.classes_skipped;
    return m;
}

void write_train_log_csv(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "epoch,step,lr,loss,metric\n";
    f.precision(10);
    for (const EpochLog& e : log)
        f << e.epoch << "," << e.step << "," << e.lr << "," << e.loss << "," << e.metric
          << "\n";
}

}  // namespace aum
