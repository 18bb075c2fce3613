#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aum/array.hpp"

namespace aum {

struct Waveform {
    std::vector<float> samples;  // mono, [-1, 1]
    int sample_rate = 16000;
};

struct Spectrogram {
    std::size_t n_mels = 0;   // F
    std::size_t frames = 0;   // T
    Array<float> values;      // [F, T] log-mel magnitudes
    bool normalized = false;
    float norm_mean = 0.f, norm_std = 0.f;

    float& at(std::size_t f, std::size_t t) { return values.at2(f, t); }
    float at(std::size_t f, std::size_t t) const { return values.at2(f, t); }
    float mean() const;
};

struct PatchSequence {
    Array<float> patches;  // [N, p*p], row-major within each patch
    std::size_t grid_f = 0, grid_t = 0, p = 0;
    std::size_t num_patches() const { return grid_f * grid_t; }
};

// Frontend constants. The paper inherits AST's convention: 25 ms Hann
// window, 10 ms hop, 128 mel bins, small additive floor before the log.
struct FeatureConfig {
    std::size_t n_mels = 128;
    std::size_t target_frames = 1024;
    std::size_t window = 400;  // samples
    std::size_t hop = 160;     // samples
    double mel_fmin = 20.0;
    double mel_fmax = 8000.0;
    int sample_rate = 16000;
    float log_floor = 1e-10f;
    float dataset_mean = 0.f;
    float dataset_std = 0.5f;  // values' = (v - mean) / (2 std); 0.5 = identity scale
    std::size_t patch = 16;
};

Waveform load_waveform(const std::string& path);
void save_waveform(const Waveform& w, const std::string& path);  // PCM16, test fixtures

Spectrogram log_mel_spectrogram(const Waveform& w, const FeatureConfig& cfg);

// values' = (values - mean) / (2 * std); AST's factor-2 convention.
Spectrogram normalize(const Spectrogram& s, float mean, float stddev);

PatchSequence patchify(const Spectrogram& s, std::size_t p);
Spectrogram unpatchify(const PatchSequence& ps);

// Mel filterbank geometry, exposed for tests (center frequency of band k).
double mel_band_center_hz(const FeatureConfig& cfg, std::size_t band);

// Per-clip binary cache record: magic "AUMF", version u32, F u32, T u32,
// then F*T little-endian 32-bit floats, row-major.
void write_feature_record(const Spectrogram& s, const std::string& path);
Spectrogram read_feature_record(const std::string& path);

}  // namespace aum
