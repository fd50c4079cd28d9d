#pragma once

#include <cstdint>
#include <vector>

#include "dronetune/wav.hpp"

namespace dronetune::augment {

/// Waveform-level augmentation parameters: a time stretch followed by a sin
/// distortion, both drawn per (clip, index) from deterministic streams.
struct AugmentationSpec {
    double stretch_min = 0.8;
    double stretch_max = 1.25;
    double lambda_min = 0.3;
    double lambda_max = 0.9;

    void validate() const;
};

struct AugmentationPlan {
    int k = 3; // augmentations per training sample
    std::uint64_t global_seed = 0;
};

/// Phase-vocoder time stretch by `rate` (pitch preserved), padded with zeros
/// or truncated back to the original sample count. 0.25 <= rate <= 4.
dsp::Waveform time_stretch(const dsp::Waveform& w, double rate);

/// Endpoint-normalized sine waveshaper y = sin(π·λ·x/2)/sin(π·λ/2), odd and
/// monotone for λ in (0, 1]; identity in the λ→0 limit.
dsp::Waveform sin_distortion(const dsp::Waveform& w, double lambda);

struct AugmentDraw {
    double rate;
    double lambda;
};

/// Pure function of (global_seed, clip_id, aug_index).
AugmentDraw draw_params(std::uint64_t global_seed, long clip_id, int aug_index,
                        const AugmentationSpec& spec);

/// One augmented waveform for (clip_id, aug_index): stretch then distort.
dsp::Waveform augment_clip(const dsp::Waveform& w, long clip_id, int aug_index,
                           const AugmentationPlan& plan, const AugmentationSpec& spec);

/// The k augmented views of a clip. Originals are always retained by the
/// caller; these are additions.
std::vector<dsp::Waveform> apply_plan(const dsp::Waveform& w, long clip_id,
                                      const AugmentationPlan& plan,
                                      const AugmentationSpec& spec);

} // namespace dronetune::augment
