#include "aum/toy.hpp"

#include <cmath>

namespace aum {

Waveform make_toy_clip(int label, std::mt19937& rng, const ToyConfig& cfg) {
    const FeatureConfig& fc = cfg.features;
    std::size_t n = fc.window + (fc.target_frames - 1) * fc.hop;
    Waveform w;
    w.sample_rate = fc.sample_rate;
    w.samples.resize(n);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    if (label == 0) {
        // steady tone, random frequency well inside the mel range
        double freq = 200.0 + u01(rng) * 3300.0;
        double phase = u01(rng) * 2.0 * M_PI;
        for (std::size_t i = 0; i < n; ++i)
            w.samples[i] = static_cast<float>(
                0.5 * std::sin(2.0 * M_PI * freq * i / fc.sample_rate + phase) +
                0.002 * gauss(rng));
    } else {
        // white noise gated into on/off bursts
        std::size_t burst = fc.hop * 4;
        bool on = u01(rng) < 0.5;
        for (std::size_t i = 0; i < n; ++i) {
            if (i % burst == 0) on = u01(rng) < 0.6;
            w.samples[i] = static_cast<float>((on ? 0.3 : 0.01) * gauss(rng));
        }
    }
    return w;
}

Dataset make_toy_dataset(const ToyConfig& cfg) {
    std::mt19937 rng(static_cast<std::uint32_t>(cfg.seed * 2654435761u + 17u));
    Dataset data;
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        int label = static_cast<int>(i % 2);
        Waveform w = make_toy_clip(label, rng, cfg);
        Spectrogram s = normalize(log_mel_spectrogram(w, cfg.features), cfg.norm_mean,
                                  cfg.norm_std);
        data.push_back({std::move(s), {label}});
    }
    return data;
}

ModelConfig toy_model_config(BlockVariant variant, ClsPosition pos) {
    ModelConfig c;
    c.embed_dim = 16;
    c.depth = 2;
    c.state_dim = 8;
    c.expand = 2;
    c.conv_kernel = 4;
    c.patch = 16;
    c.num_classes = 2;
    c.n_mels = 32;
    c.target_frames = 32;
    c.variant = variant;
    c.cls_position = pos;
    return c;
}

}  // namespace aum
