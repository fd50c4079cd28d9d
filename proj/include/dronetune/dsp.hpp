#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dronetune/wav.hpp"

namespace dronetune::dsp {

/// Feature extraction parameters. The defaults target drone acoustics:
/// blade-pass harmonics sit well below 8 kHz.
struct FeatureConfig {
    std::uint32_t sample_rate = 16000;
    std::size_t n_fft = 1024;
    std::size_t hop = 512;
    std::size_t n_mels = 64;
    double f_min = 0.0;
    double f_max = 8000.0;
    double log_offset = 1e-6;

    /// n_fft power of two, 1 <= hop <= n_fft, 0 <= f_min < f_max <= rate/2,
    /// n_mels >= 2. Throws ConfigError.
    void validate() const;
};

/// Log-power mel features, row-major [mel][frame].
/// n_frames = 1 + floor(n_samples / hop) under center padding.
struct MelSpectrogram {
    std::size_t n_mels = 0;
    std::size_t n_frames = 0;
    std::vector<float> values;
    FeatureConfig config;

    float at(std::size_t m, std::size_t t) const { return values[m * n_frames + t]; }
};

/// HTK mel scale: m = 2595·log10(1 + f/700). Monotone; throws on negative f.
double hz_to_mel(double f);
double mel_to_hz(double m);

/// One-sided complex STFT, frame-major [frame][bin], n_bins = n_fft/2 + 1.
/// Center padded (reflect), periodic Hann window.
struct ComplexFrames {
    std::size_t n_bins = 0;
    std::size_t n_frames = 0;
    std::vector<std::complex<double>> c;

    std::complex<double>& at(std::size_t t, std::size_t k) { return c[t * n_bins + k]; }
    std::complex<double> at(std::size_t t, std::size_t k) const { return c[t * n_bins + k]; }
};

ComplexFrames stft(std::span<const float> samples, std::size_t n_fft, std::size_t hop);

/// Weighted overlap-add inverse of stft(); output trimmed/padded to `length`.
std::vector<float> istft(const ComplexFrames& frames, std::size_t n_fft, std::size_t hop,
                         std::size_t length);

/// Triangular filters, centers equally spaced on the mel axis; row-major
/// [n_mels][n_fft/2 + 1].
std::vector<double> mel_filterbank(const FeatureConfig& cfg);

/// Pre-log mel power (filterbank · |stft|²), row-major [mel][frame].
std::vector<double> mel_power(const Waveform& w, const FeatureConfig& cfg);

/// log(mel_power + log_offset). The waveform must already be at
/// cfg.sample_rate (callers resample first).
MelSpectrogram log_mel(const Waveform& w, const FeatureConfig& cfg);

// Binary per-clip feature cache: "LFT1", u32le n_mels, u32le n_frames,
// then row-major f32le values.
void write_feature_cache(const std::filesystem::path& path, const MelSpectrogram& m);
MelSpectrogram read_feature_cache(const std::filesystem::path& path, const FeatureConfig& cfg);

namespace detail {
/// In-place radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);
} // namespace detail

} // namespace dronetune::dsp
