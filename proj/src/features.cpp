#include "aum/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

namespace aum {

float Spectrogram::mean() const {
    double s = 0.0;
    for (float v : values.data) s += v;
    return static_cast<float>(s / values.numel());
}

// ---- WAV I/O (PCM16 / float32, mono or downmixed stereo) ----

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
    return p[0] | (p[1] << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
std::uint16_t rd_u16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

}  // namespace

Waveform load_waveform(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
        std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw FormatError("malformed WAV file: " + path);

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;
    std::size_t off = 12;
    while (off + 8 <= buf.size()) {
        std::uint32_t len = rd_u32(buf.data() + off + 4);
        if (off + 8 + len > buf.size()) throw IoError("truncated WAV chunk in " + path);
        if (std::memcmp(buf.data() + off, "fmt ", 4) == 0) {
            if (len < 16) throw IoError("short fmt chunk in " + path);
            format = rd_u16(buf.data() + off + 8);
            channels = rd_u16(buf.data() + off + 10);
            rate = rd_u32(buf.data() + off + 12);
            bits = rd_u16(buf.data() + off + 22);
        } else if (std::memcmp(buf.data() + off, "data", 4) == 0) {
            data = buf.data() + off + 8;
            data_len = len;
        }
        off += 8 + len + (len & 1);
    }
    if (!data || channels == 0) throw IoError("WAV file missing fmt/data chunk: " + path);

    Waveform w;
    w.sample_rate = static_cast<int>(rate);
    std::size_t bytes_per = bits / 8;
    std::size_t n_frames = data_len / (bytes_per * channels);
    if (n_frames == 0) throw FormatError("WAV file has no samples: " + path);
    w.samples.resize(n_frames);
    if (format == 1 && bits == 16) {
        for (std::size_t i = 0; i < n_frames; ++i) {
            double acc = 0.0;
            for (std::size_t c = 0; c < channels; ++c) {
                std::int16_t s;
                std::memcpy(&s, data + (i * channels + c) * 2, 2);
                acc += s / 32768.0;
            }
            w.samples[i] = static_cast<float>(acc / channels);
        }
    } else if (format == 3 && bits == 32) {
        for (std::size_t i = 0; i < n_frames; ++i) {
            double acc = 0.0;
            for (std::size_t c = 0; c < channels; ++c) {
                float s;
                std::memcpy(&s, data + (i * channels + c) * 4, 4);
                acc += s;
            }
            w.samples[i] = static_cast<float>(acc / channels);
        }
    } else {
        throw FormatError("unsupported WAV encoding (format=" + std::to_string(format) +
                          ", bits=" + std::to_string(bits) + "): " + path);
    }
    return w;
}

void save_waveform(const Waveform& w, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    auto wr_u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto wr_u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
    std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
    f.write("RIFF", 4);
    wr_u32(36 + data_len);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    wr_u32(16);
    wr_u16(1);  // PCM
    wr_u16(1);  // mono
    wr_u32(static_cast<std::uint32_t>(w.sample_rate));
    wr_u32(static_cast<std::uint32_t>(w.sample_rate) * 2);
    wr_u16(2);
    wr_u16(16);
    f.write("data", 4);
    wr_u32(data_len);
    for (float s : w.samples) {
        // scale by 32768 with clamping so s = k/32768 round-trips exactly
        long q = std::lround(static_cast<double>(s) * 32768.0);
        std::int16_t v = static_cast<std::int16_t>(std::clamp(q, -32768l, 32767l));
        f.write(reinterpret_cast<const char*>(&v), 2);
    }
}

// ---- log-mel pipeline ----

namespace {

// Iterative radix-2 FFT on power-of-two sizes; n_fft here is at most 512.
void fft_inplace(std::vector<std::complex<double>>& a) {
    std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * M_PI / static_cast<double>(len);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k], v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Triangular mel filterbank over FFT bins, [n_mels, n_fft/2+1].
std::vector<double> mel_filterbank(const FeatureConfig& cfg, std::size_t n_fft) {
    std::size_t n_bins = n_fft / 2 + 1;
    std::vector<double> fb(cfg.n_mels * n_bins, 0.0);
    double mel_lo = hz_to_mel(cfg.mel_fmin), mel_hi = hz_to_mel(cfg.mel_fmax);
    std::vector<double> centers(cfg.n_mels + 2);
    for (std::size_t i = 0; i < centers.size(); ++i)
        centers[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
        double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
        for (std::size_t b = 0; b < n_bins; ++b) {
            double hz = static_cast<double>(b) * cfg.sample_rate / n_fft;
            double w = 0.0;
            if (hz > lo && hz < hi)
                w = hz <= mid ? (hz - lo) / (mid - lo) : (hi - hz) / (hi - mid);
            fb[m * n_bins + b] = w;
        }
    }
    return fb;
}

}  // namespace

double mel_band_center_hz(const FeatureConfig& cfg, std::size_t band) {
    double mel_lo = hz_to_mel(cfg.mel_fmin), mel_hi = hz_to_mel(cfg.mel_fmax);
    return mel_to_hz(mel_lo + (mel_hi - mel_lo) * (band + 1) / (cfg.n_mels + 1));
}

Spectrogram log_mel_spectrogram(const Waveform& w, const FeatureConfig& cfg) {
    if (w.samples.empty()) throw FormatError("log_mel_spectrogram: empty waveform");
    // Pad/truncate at the waveform level so exactly target_frames frames exist.
    std::size_t need = cfg.window + (cfg.target_frames - 1) * cfg.hop;
    std::vector<float> samples = w.samples;
    samples.resize(need, 0.0f);

    std::size_t n_fft = next_pow2(cfg.window);
    std::size_t n_bins = n_fft / 2 + 1;
    std::vector<double> hann(cfg.window);
    for (std::size_t i = 0; i < cfg.window; ++i)
        hann[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (cfg.window - 1));
    std::vector<double> fb = mel_filterbank(cfg, n_fft);

    Spectrogram s;
    s.n_mels = cfg.n_mels;
    s.frames = cfg.target_frames;
    s.values = Array<float>({cfg.n_mels, cfg.target_frames});
    std::vector<std::complex<double>> frame(n_fft);
    std::vector<double> power(n_bins);
    for (std::size_t t = 0; t < cfg.target_frames; ++t) {
        for (std::size_t i = 0; i < n_fft; ++i)
            frame[i] = i < cfg.window
                           ? std::complex<double>(samples[t * cfg.hop + i] * hann[i], 0.0)
                           : std::complex<double>(0.0, 0.0);
        fft_inplace(frame);
        for (std::size_t b = 0; b < n_bins; ++b) power[b] = std::norm(frame[b]);
        for (std::size_t m = 0; m < cfg.n_mels; ++m) {
            double acc = 0.0;
            const double* row = fb.data() + m * n_bins;
            for (std::size_t b = 0; b < n_bins; ++b) acc += row[b] * power[b];
            s.values.at2(m, t) = static_cast<float>(std::log(acc + cfg.log_floor));
        }
    }
    return s;
}

Spectrogram normalize(const Spectrogram& s, float mean, float stddev) {
    if (s.normalized) throw StateError("normalize: spectrogram already normalized");
    if (!(stddev > 0.f)) throw ConfigError("normalize: std must be positive");
    Spectrogram out = s;
    for (float& v : out.values.data) v = (v - mean) / (2.0f * stddev);
    out.normalized = true;
    out.norm_mean = mean;
    out.norm_std = stddev;
    return out;
}

PatchSequence patchify(const Spectrogram& s, std::size_t p) {
    if (p == 0 || s.n_mels % p != 0 || s.frames % p != 0)
        throw ShapeError("patchify: F=" + std::to_string(s.n_mels) +
                         ", T=" + std::to_string(s.frames) + " not divisible by p=" +
                         std::to_string(p));
    PatchSequence ps;
    ps.p = p;
    ps.grid_f = s.n_mels / p;
    ps.grid_t = s.frames / p;
    ps.patches = Array<float>({ps.num_patches(), p * p});
    // time-major sequence order: all frequency rows of one time column block
    // are contiguous
    std::size_t idx = 0;
    for (std::size_t c = 0; c < ps.grid_t; ++c)
        for (std::size_t r = 0; r < ps.grid_f; ++r, ++idx)
            for (std::size_t lf = 0; lf < p; ++lf)
                for (std::size_t lt = 0; lt < p; ++lt)
                    ps.patches.at2(idx, lf * p + lt) = s.at(r * p + lf, c * p + lt);
    return ps;
}

Spectrogram unpatchify(const PatchSequence& ps) {
    Spectrogram s;
    s.n_mels = ps.grid_f * ps.p;
    s.frames = ps.grid_t * ps.p;
    s.values = Array<float>({s.n_mels, s.frames});
    std::size_t idx = 0;
    for (std::size_t c = 0; c < ps.grid_t; ++c)
        for (std::size_t r = 0; r < ps.grid_f; ++r, ++idx)
            for (std::size_t lf = 0; lf < ps.p; ++lf)
                for (std::size_t lt = 0; lt < ps.p; ++lt)
                    s.at(r * ps.p + lf, c * ps.p + lt) = ps.patches.at2(idx, lf * ps.p + lt);
    return s;
}

// ---- feature cache records ----

void write_feature_record(const Spectrogram& s, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write("AUMF", 4);
    std::uint32_t v = 1, F = static_cast<std::uint32_t>(s.n_mels),
                  T = static_cast<std::uint32_t>(s.frames);
    f.write(reinterpret_cast<const char*>(&v), 4);
    f.write(reinterpret_cast<const char*>(&F), 4);
    f.write(reinterpret_cast<const char*>(&T), 4);
    f.write(reinterpret_cast<const char*>(s.values.data.data()),
            static_cast<std::streamsize>(s.values.numel() * 4));
    if (!f) throw IoError("short write to " + path);
}

Spectrogram read_feature_record(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[4];
    std::uint32_t v = 0, F = 0, T = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&v), 4);
    f.read(reinterpret_cast<char*>(&F), 4);
    f.read(reinterpret_cast<char*>(&T), 4);
    if (!f || std::memcmp(magic, "AUMF", 4) != 0)
        throw FormatError("not a feature record: " + path);
    if (v != 1) throw FormatError("unsupported feature record version in " + path);
    Spectrogram s;
    s.n_mels = F;
    s.frames = T;
    s.values = Array<float>({F, T});
    f.read(reinterpret_cast<char*>(s.values.data.data()),
           static_cast<std::streamsize>(s.values.numel() * 4));
    if (!f) throw FormatError("truncated feature record: " + path);
    return s;
}

}  // namespace aum
