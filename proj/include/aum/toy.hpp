#pragma once

#include <cstdint>

#include "aum/training.hpp"

namespace aum {

// Small synthetic 2-class corpus: class 0 = steady pure tones, class 1 =
// gated noise bursts. Used by the ablation grid and the overfit checks.

struct ToyConfig {
    std::size_t n_samples = 64;
    std::uint64_t seed = 0;
    FeatureConfig features;  // defaults below give 32x32 spectrograms
    float norm_mean = -16.f;
    float norm_std = 4.f;

    ToyConfig() {
        features.n_mels = 32;
        features.target_frames = 32;
        features.mel_fmax = 8000.0;
    }
};

Waveform make_toy_clip(int label, std::mt19937& rng, const ToyConfig& cfg);
Dataset make_toy_dataset(const ToyConfig& cfg);

// Tiny model preset matching the toy spectrogram geometry.
ModelConfig toy_model_config(BlockVariant variant, ClsPosition pos);

}  // namespace aum
