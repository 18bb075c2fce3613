#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "aum/encoder.hpp"

namespace aum {

enum class LossKind { CE, BCE };

inline LossKind loss_from_string(const std::string& s) {
    if (s == "ce") return LossKind::CE;
    if (s == "bce") return LossKind::BCE;
    throw ConfigError("unknown loss '" + s + "' (expected ce|bce)");
}

// Table-5-shaped recipe: Adam with decoupled weight decay, linear warmup,
// MultiStepLR(start/step/decay), SpecAugment and mixup knobs.
struct TrainConfig {
    LossKind loss = LossKind::CE;
    float mixup_alpha = 0.f;            // in [0,1]
    std::size_t specaug_freq = 0;       // max frequency-mask width
    std::size_t specaug_time = 0;       // max time-mask width
    double base_lr = 1e-3;
    int lr_start = 10, lr_step = 5;     // milestone epochs: start, start+step, ...
    double lr_decay = 0.5;
    int epochs = 100;
    std::size_t batch_size = 12;
    std::uint64_t seed = 0;
    long warmup_steps = 0;
    double weight_decay = 5e-7;
    double beta1 = 0.95, beta2 = 0.999, adam_eps = 1e-8;
};

struct LabeledSpec {
    Spectrogram spec;
    std::vector<int> labels;  // class ids; one entry for single-label tasks
};
using Dataset = std::vector<LabeledSpec>;

struct Batch {
    std::vector<Spectrogram> specs;
    Array<float> targets;  // [B, num_classes], one/multi-hot or soft after mixup
};

// ---- losses (on-tape, differentiable) ----

// Softmax cross-entropy with soft targets, mean over rows.
template <class T>
Val<T> ce_loss(Val<T> logits, const Array<T>& targets) {
    Tape<T>& t = *logits.tape;
    detail::require_same_shape(logits.v(), targets, "ce_loss");
    std::size_t rows = logits.v().rank() == 2 ? logits.v().rows() : 1;
    Val<T> ls = log_softmax_lastdim(logits);
    return scale(neg(sum_all(mul(t.constant(targets), ls))), T(1) / static_cast<T>(rows));
}

// Per-class sigmoid cross-entropy (supports multi-hot / soft targets),
// mean over all entries: y*softplus(-z) + (1-y)*softplus(z).
template <class T>
Val<T> bce_loss(Val<T> logits, const Array<T>& targets) {
    Tape<T>& t = *logits.tape;
    detail::require_same_shape(logits.v(), targets, "bce_loss");
    Array<T> one_minus = targets;
    for (auto& v : one_minus.data) v = T(1) - v;
    Val<T> pos = mul(t.constant(targets), softplus(neg(logits)));
    Val<T> negp = mul(t.constant(std::move(one_minus)), softplus(logits));
    return mean_all(add(pos, negp));
}

template <class T>
Val<T> loss(Val<T> logits, const Array<T>& targets, LossKind kind) {
    return kind == LossKind::CE ? ce_loss(logits, targets) : bce_loss(logits, targets);
}

// ---- augmentation ----

// One frequency band (width ~ U{0..f_max}) and one time band (~ U{0..t_max})
// filled with the pre-mask spectrogram mean.
Spectrogram spec_augment(const Spectrogram& s, std::size_t f_max, std::size_t t_max,
                         std::mt19937& rng);

// Convex blend of a pair; exposed separately so the degenerate cases are
// testable.
void blend_into(Spectrogram& a, const Spectrogram& b, float lambda);

// With probability alpha each sample is blended with a random partner;
// lambda = 0.5 + (u - 0.5)*(1 - alpha) with u ~ U[0,1], so larger alpha
// sharpens the draw toward an even blend. alpha = 0 is the identity.
void mixup(Batch& batch, float alpha, std::mt19937& rng);

// ---- schedule / optimizer ----

// Linear warmup from 0 over warmup_steps (global steps); afterwards
// base_lr * decay^k with k = #{milestones <= epoch}.
double lr_at(long step, int epoch, const TrainConfig& cfg);

struct AdamState {
    std::vector<Array<float>> m, v;
    long t = 0;
};

// ---- training / evaluation ----

struct EpochLog {
    int epoch;
    long step;
    double lr, loss, metric;
};

struct TrainResult {
    std::vector<EpochLog> log;
};

TrainResult train(ModelWeights<float>& model, const Dataset& data, const TrainConfig& cfg);

struct Metrics {
    double acc = 0.0;
    double map = 0.0;
    std::size_t map_classes_used = 0;
    std::size_t map_classes_skipped = 0;  // classes with zero positives
};

// task: "acc" or "map"
Metrics evaluate(ModelWeights<float>& model, const Dataset& data, const std::string& task);

// Raw logits for every sample (no gradients); rows in dataset order.
Array<float> predict_logits(ModelWeights<float>& model, const Dataset& data);

void write_train_log_csv(const std::vector<EpochLog>& log, const std::string& path);

}  // namespace aum
