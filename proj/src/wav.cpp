#include "dronetune/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "dronetune/errors.hpp"

namespace dronetune::dsp {

namespace {

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

std::uint16_t read_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return std::uint16_t(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                 char((v >> 24) & 0xff)};
    out.write(b, 4);
}

void write_u16(std::ostream& out, std::uint16_t v) {
    char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
    out.write(b, 2);
}

} // namespace

Waveform read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open WAV file: " + path.string());

    char tag[4];
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "RIFF", 4) != 0)
        throw DataError(path.string() + ": missing RIFF chunk id");
    read_u32(in); // riff size
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "WAVE", 4) != 0)
        throw DataError(path.string() + ": RIFF form type is not WAVE");

    bool have_fmt = false;
    std::uint16_t format_tag = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    std::vector<char> data;

    while (in.read(tag, 4)) {
        std::uint32_t size = read_u32(in);
        if (!in) break;
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            format_tag = read_u16(in);
            channels = read_u16(in);
            rate = read_u32(in);
            read_u32(in); // byte rate
            read_u16(in); // block align
            bits = read_u16(in);
            if (size > 16) in.seekg(size - 16, std::ios::cur);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            data.resize(size);
            in.read(data.data(), size);
            if (static_cast<std::uint32_t>(in.gcount()) != size)
                throw DataError(path.string() + ": data chunk truncated");
        } else {
            in.seekg(size + (size & 1), std::ios::cur); // chunks are word-aligned
        }
    }

    if (!have_fmt) throw DataError(path.string() + ": no fmt chunk");
    if (format_tag != 1)
        throw DataError(path.string() + ": unsupported format tag " + std::to_string(format_tag) +
                        " (expected 1 = PCM)");
    if (bits != 16)
        throw DataError(path.string() + ": unsupported bits_per_sample " + std::to_string(bits) +
                        " (expected 16)");
    if (channels != 1 && channels != 2)
        throw DataError(path.string() + ": unsupported channel count " + std::to_string(channels) +
                        " (expected mono or stereo)");
    if (rate == 0) throw DataError(path.string() + ": sample_rate field is zero");
    if (data.empty()) throw DataError(path.string() + ": no data chunk");

    std::size_t frames = data.size() / (2 * channels);
    Waveform w;
    w.sample_rate = rate;
    w.samples.resize(frames);
    const auto* pcm = reinterpret_cast<const unsigned char*>(data.data());
    for (std::size_t i = 0; i < frames; ++i) {
        float acc = 0.0f;
        for (std::uint16_t c = 0; c < channels; ++c) {
            std::size_t off = (i * channels + c) * 2;
            std::int16_t s = static_cast<std::int16_t>(pcm[off] | (pcm[off + 1] << 8));
            acc += static_cast<float>(s) / 32768.0f;
        }
        w.samples[i] = acc / static_cast<float>(channels);
    }
    return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write WAV file: " + path.string());
    std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    out.write("RIFF", 4);
    write_u32(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_u32(out, 16);
    write_u16(out, 1); // PCM
    write_u16(out, 1); // mono
    write_u32(out, w.sample_rate);
    write_u32(out, w.sample_rate * 2);
    write_u16(out, 2);
    write_u16(out, 16);
    out.write("data", 4);
    write_u32(out, data_bytes);
    for (float s : w.samples) {
        float c = std::clamp(s, -1.0f, 1.0f);
        auto q = static_cast<std::int16_t>(std::lrint(c * 32767.0));
        write_u16(out, static_cast<std::uint16_t>(q));
    }
    if (!out) throw DataError("short write on WAV file: " + path.string());
}

Waveform resample(const Waveform& w, std::uint32_t new_rate) {
    if (new_rate == 0) throw DataError("resample: target rate is zero");
    if (w.sample_rate == new_rate) return w;

    std::uint32_t g = std::gcd(w.sample_rate, new_rate);
    std::uint64_t up = new_rate / g;   // L
    std::uint64_t down = w.sample_rate / g; // M

    // Anti-alias cutoff at the lower Nyquist; kernel half-width widens with
    // the cutoff so downsampling keeps enough taps under the main lobe.
    double fc = std::min(1.0, double(up) / double(down)) * 0.945;
    int half = static_cast<int>(std::ceil(16.0 / fc));

    std::size_t n_in = w.samples.size();
    std::size_t n_out = (n_in * up) / down;
    Waveform out;
    out.sample_rate = new_rate;
    out.samples.resize(n_out);

    for (std::size_t j = 0; j < n_out; ++j) {
        std::uint64_t num = j * down;
        auto n0 = static_cast<long>(num / up);
        double frac = static_cast<double>(num % up) / static_cast<double>(up);
        double acc = 0.0, wsum = 0.0;
        for (long t = n0 - half + 1; t <= n0 + half; ++t) {
            double dx = (static_cast<double>(n0) + frac) - static_cast<double>(t);
            double window = 0.5 * (1.0 + std::cos(std::numbers::pi * dx / (half + 1.0)));
            double sx = std::numbers::pi * fc * dx;
            double sinc = (std::abs(sx) < 1e-12) ? 1.0 : std::sin(sx) / sx;
            double tap = fc * sinc * window;
            wsum += tap;
            if (t >= 0 && t < static_cast<long>(n_in)) acc += tap * w.samples[t];
        }
        out.samples[j] = static_cast<float>(wsum != 0.0 ? acc / wsum : 0.0);
    }
    return out;
}

Waveform ingest_wav(const std::filesystem::path& path, std::uint32_t target_rate) {
    Waveform w = resample(read_wav(path), target_rate);
    for (float& s : w.samples) s = std::clamp(s, -1.0f, 1.0f);
    return w;
}

} // namespace dronetune::dsp
