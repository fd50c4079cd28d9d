#include "dronetune/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "dronetune/errors.hpp"
#include "dronetune/kernels.hpp"

namespace dronetune::dsp {

void FeatureConfig::validate() const {
    if (n_fft == 0 || (n_fft & (n_fft - 1)) != 0)
        throw ConfigError("features.n_fft must be a power of two, got " + std::to_string(n_fft));
    if (hop == 0 || hop > n_fft)
        throw ConfigError("features.hop must lie in [1, n_fft], got " + std::to_string(hop));
    if (f_min < 0.0 || f_max <= f_min)
        throw ConfigError("feature frequency range requires 0 <= f_min < f_max");
    if (f_max > sample_rate / 2.0)
        throw ConfigError("features.f_max exceeds Nyquist (" +
                          std::to_string(sample_rate / 2.0) + " Hz)");
    if (n_mels < 2) throw ConfigError("features.n_mels must be >= 2");
    if (log_offset <= 0.0) throw ConfigError("features.log_offset must be positive");
}

double hz_to_mel(double f) {
    if (f < 0.0) throw std::invalid_argument("hz_to_mel: negative frequency");
    return 2595.0 * std::log10(1.0 + f / 700.0);
}

double mel_to_hz(double m) {
    return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

namespace detail {

void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
    std::size_t n = a.size();
    if (n < 2) return;
    // bit reversal
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                auto u = a[i + j];
                auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse)
        for (auto& x : a) x /= static_cast<double>(n);
}

// Reflect index without edge repetition (librosa-style center padding).
inline std::size_t reflect_index(long i, long n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return static_cast<std::size_t>(i);
}

std::vector<double> hann_periodic(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(n)));
    return w;
}

} // namespace detail

ComplexFrames stft(std::span<const float> samples, std::size_t n_fft, std::size_t hop) {
    if (samples.empty()) throw DataError("stft: empty signal");
    const long n = static_cast<long>(samples.size());
    ComplexFrames out;
    out.n_bins = n_fft / 2 + 1;
    out.n_frames = 1 + samples.size() / hop;
    out.c.resize(out.n_bins * out.n_frames);
    const auto window = detail::hann_periodic(n_fft);
    const long half = static_cast<long>(n_fft / 2);

    auto do_frame = [&](std::size_t t) {
        std::vector<std::complex<double>> buf(n_fft);
        long start = static_cast<long>(t * hop) - half;
        for (std::size_t i = 0; i < n_fft; ++i) {
            std::size_t src = detail::reflect_index(start + static_cast<long>(i), n);
            buf[i] = window[i] * static_cast<double>(samples[src]);
        }
        detail::fft_inplace(buf, false);
        for (std::size_t k = 0; k < out.n_bins; ++k) out.at(t, k) = buf[k];
    };

#if defined(_OPENMP)
    if (kernels::parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (long long t = 0; t < static_cast<long long>(out.n_frames); ++t)
            do_frame(static_cast<std::size_t>(t));
        return out;
    }
#endif
    for (std::size_t t = 0; t < out.n_frames; ++t) do_frame(t);
    return out;
}

std::vector<float> istft(const ComplexFrames& frames, std::size_t n_fft, std::size_t hop,
                         std::size_t length) {
    if (frames.n_frames == 0) return std::vector<float>(length, 0.0f);
    const auto window = detail::hann_periodic(n_fft);
    std::size_t padded = (frames.n_frames - 1) * hop + n_fft;
    std::vector<double> acc(padded, 0.0), wsum(padded, 0.0);
    std::vector<std::complex<double>> buf(n_fft);
    for (std::size_t t = 0; t < frames.n_frames; ++t) {
        for (std::size_t k = 0; k < frames.n_bins; ++k) buf[k] = frames.at(t, k);
        for (std::size_t k = frames.n_bins; k < n_fft; ++k)
            buf[k] = std::conj(frames.at(t, n_fft - k));
        detail::fft_inplace(buf, true);
        std::size_t off = t * hop;
        for (std::size_t i = 0; i < n_fft; ++i) {
            acc[off + i] += window[i] * buf[i].real();
            wsum[off + i] += window[i] * window[i];
        }
    }
    std::vector<float> out(length, 0.0f);
    std::size_t half = n_fft / 2;
    for (std::size_t i = 0; i < length; ++i) {
        std::size_t j = i + half;
        if (j < padded && wsum[j] > 1e-9) out[i] = static_cast<float>(acc[j] / wsum[j]);
    }
    return out;
}

std::vector<double> mel_filterbank(const FeatureConfig& cfg) {
    cfg.validate();
    const std::size_t n_bins = cfg.n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(cfg.f_min);
    const double mel_hi = hz_to_mel(cfg.f_max);
    std::vector<double> hz_pts(cfg.n_mels + 2);
    for (std::size_t i = 0; i < hz_pts.size(); ++i) {
        double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                  static_cast<double>(cfg.n_mels + 1);
        hz_pts[i] = mel_to_hz(mel);
    }
    std::vector<double> fb(cfg.n_mels * n_bins, 0.0);
    const double bin_hz = static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.n_fft);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
        double lo = hz_pts[m], mid = hz_pts[m + 1], hi = hz_pts[m + 2];
        for (std::size_t k = 0; k < n_bins; ++k) {
            double f = k * bin_hz;
            double up = (mid - lo) > 0.0 ? (f - lo) / (mid - lo) : 0.0;
            double down = (hi - mid) > 0.0 ? (hi - f) / (hi - mid) : 0.0;
            fb[m * n_bins + k] = std::max(0.0, std::min(up, down));
        }
    }
    return fb;
}

std::vector<double> mel_power(const Waveform& w, const FeatureConfig& cfg) {
    cfg.validate();
    if (w.sample_rate != cfg.sample_rate)
        throw DataError("log_mel: waveform rate " + std::to_string(w.sample_rate) +
                        " Hz differs from config rate " + std::to_string(cfg.sample_rate) +
                        " Hz; resample first");
    auto frames = stft(w.samples, cfg.n_fft, cfg.hop);
    auto fb = mel_filterbank(cfg);
    const std::size_t n_bins = frames.n_bins;
    std::vector<double> out(cfg.n_mels * frames.n_frames, 0.0);
    std::vector<double> frame_power(n_bins * frames.n_frames);
    for (std::size_t t = 0; t < frames.n_frames; ++t)
        for (std::size_t k = 0; k < n_bins; ++k)
            frame_power[t * n_bins + k] = std::norm(frames.at(t, k));
    for (std::size_t m = 0; m < cfg.n_mels; ++m)
        for (std::size_t t = 0; t < frames.n_frames; ++t) {
            double acc = 0.0;
            const double* fp = frame_power.data() + t * n_bins;
            const double* fbm = fb.data() + m * n_bins;
            for (std::size_t k = 0; k < n_bins; ++k) acc += fbm[k] * fp[k];
            out[m * frames.n_frames + t] = acc;
        }
    return out;
}

MelSpectrogram log_mel(const Waveform& w, const FeatureConfig& cfg) {
    auto power = mel_power(w, cfg);
    MelSpectrogram m;
    m.config = cfg;
    m.n_mels = cfg.n_mels;
    m.n_frames = power.size() / cfg.n_mels;
    m.values.resize(power.size());
    for (std::size_t i = 0; i < power.size(); ++i)
        m.values[i] = static_cast<float>(std::log(power[i] + cfg.log_offset));
    return m;
}

void write_feature_cache(const std::filesystem::path& path, const MelSpectrogram& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write feature cache: " + path.string());
    out.write("LFT1", 4);
    auto w32 = [&](std::uint32_t v) {
        char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                     char((v >> 24) & 0xff)};
        out.write(b, 4);
    };
    w32(static_cast<std::uint32_t>(m.n_mels));
    w32(static_cast<std::uint32_t>(m.n_frames));
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(m.values.data()),
              static_cast<std::streamsize>(m.values.size() * 4));
    if (!out) throw DataError("short write on feature cache: " + path.string());
}

MelSpectrogram read_feature_cache(const std::filesystem::path& path, const FeatureConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open feature cache: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "LFT1", 4) != 0)
        throw DataError(path.string() + ": bad feature cache magic (expected LFT1)");
    auto r32 = [&]() {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
               std::uint32_t(b[3]) << 24;
    };
    MelSpectrogram m;
    m.config = cfg;
    m.n_mels = r32();
    m.n_frames = r32();
    m.values.resize(m.n_mels * m.n_frames);
    in.read(reinterpret_cast<char*>(m.values.data()),
            static_cast<std::streamsize>(m.values.size() * 4));
    if (!in) throw DataError(path.string() + ": truncated feature cache");
    return m;
}

} // namespace dronetune::dsp
