#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dronetune::dsp {

/// Time-domain clip. Samples are normalized to [-1, 1] on ingestion.
struct Waveform {
    std::vector<float> samples;
    std::uint32_t sample_rate = 16000;
};

/// Reads a 16-bit PCM WAV file, averaging stereo to mono and scaling
/// integers by 1/32768. Throws DataError naming the offending format field
/// for anything else.
Waveform read_wav(const std::filesystem::path& path);

/// Writes mono 16-bit PCM.
void write_wav(const std::filesystem::path& path, const Waveform& w);

/// Windowed-sinc polyphase resampling to new_rate (rational ratio).
Waveform resample(const Waveform& w, std::uint32_t new_rate);

/// read_wav + resample to target_rate, with samples clamped into [-1, 1].
Waveform ingest_wav(const std::filesystem::path& path, std::uint32_t target_rate);

} // namespace dronetune::dsp
