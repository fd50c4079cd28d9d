#include "dronetune/augment.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "dronetune/dsp.hpp"
#include "dronetune/errors.hpp"
#include "dronetune/rng.hpp"

namespace dronetune::augment {

void AugmentationSpec::validate() const {
    if (!(stretch_min > 0.0 && stretch_min <= stretch_max && stretch_max < 4.0))
        throw ConfigError("augment stretch range must be a nonempty subinterval of (0, 4)");
    if (!(lambda_min > 0.0 && lambda_min <= lambda_max && lambda_max <= 1.0))
        throw ConfigError("augment lambda range must be a nonempty subinterval of (0, 1]");
}

namespace {

constexpr std::size_t kPvFft = 1024;
constexpr std::size_t kPvHop = kPvFft / 4; // analysis hop n_fft/4

double wrap_pi(double x) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    x = std::fmod(x + std::numbers::pi, two_pi);
    if (x < 0) x += two_pi;
    return x - std::numbers::pi;
}

} // namespace

dsp::Waveform time_stretch(const dsp::Waveform& w, double rate) {
    if (!(rate >= 0.25 && rate <= 4.0))
        throw std::invalid_argument("time_stretch: rate must lie in [0.25, 4], got " +
                                    std::to_string(rate));
    const std::size_t n = w.samples.size();
    if (n < 2) return w;

    auto spec = dsp::stft(w.samples, kPvFft, kPvHop);
    const std::size_t bins = spec.n_bins;

    std::vector<double> steps;
    for (double t = 0.0; t < static_cast<double>(spec.n_frames); t += rate) steps.push_back(t);

    dsp::ComplexFrames out;
    out.n_bins = bins;
    out.n_frames = steps.size();
    out.c.resize(bins * steps.size());

    // expected per-hop phase advance of each bin
    std::vector<double> advance(bins);
    for (std::size_t k = 0; k < bins; ++k)
        advance[k] = 2.0 * std::numbers::pi * static_cast<double>(k * kPvHop) /
                     static_cast<double>(kPvFft);

    std::vector<double> phase(bins);
    for (std::size_t k = 0; k < bins; ++k) phase[k] = std::arg(spec.at(0, k));

    for (std::size_t s = 0; s < steps.size(); ++s) {
        double t = steps[s];
        auto i0 = static_cast<std::size_t>(t);
        std::size_t i1 = std::min(i0 + 1, spec.n_frames - 1);
        double frac = t - static_cast<double>(i0);
        for (std::size_t k = 0; k < bins; ++k) {
            double mag =
                (1.0 - frac) * std::abs(spec.at(i0, k)) + frac * std::abs(spec.at(i1, k));
            out.at(s, k) = std::polar(mag, phase[k]);
            double dphi = std::arg(spec.at(i1, k)) - std::arg(spec.at(i0, k)) - advance[k];
            phase[k] += advance[k] + wrap_pi(dphi);
        }
    }

    auto stretched = dsp::istft(out, kPvFft, kPvHop,
                                steps.empty() ? 0 : (steps.size() - 1) * kPvHop + 1);
    stretched.resize(n, 0.0f); // fixed-length contract: pad or truncate
    dsp::Waveform result{std::move(stretched), w.sample_rate};
    for (float& s : result.samples) s = std::clamp(s, -1.0f, 1.0f);
    return result;
}

dsp::Waveform sin_distortion(const dsp::Waveform& w, double lambda) {
    if (!(lambda > 0.0 && lambda <= 1.0))
        throw std::invalid_argument("sin_distortion: lambda must lie in (0, 1], got " +
                                    std::to_string(lambda));
    const double a = std::numbers::pi * lambda / 2.0;
    const double norm = 1.0 / std::sin(a);
    dsp::Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.resize(w.samples.size());
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
        double y = std::sin(a * static_cast<double>(w.samples[i])) * norm;
        out.samples[i] = static_cast<float>(std::clamp(y, -1.0, 1.0));
    }
    return out;
}

AugmentDraw draw_params(std::uint64_t global_seed, long clip_id, int aug_index,
                        const AugmentationSpec& spec) {
    spec.validate();
    Rng rng(Rng::mix(Rng::mix(global_seed, static_cast<std::uint64_t>(clip_id)),
                     static_cast<std::uint64_t>(aug_index)));
    AugmentDraw d;
    d.rate = rng.uniform(spec.stretch_min, spec.stretch_max);
    d.lambda = rng.uniform(spec.lambda_min, spec.lambda_max);
    return d;
}

dsp::Waveform augment_clip(const dsp::Waveform& w, long clip_id, int aug_index,
                           const AugmentationPlan& plan, const AugmentationSpec& spec) {
    AugmentDraw d = draw_params(plan.global_seed, clip_id, aug_index, spec);
    return sin_distortion(time_stretch(w, d.rate), d.lambda);
}

std::vector<dsp::Waveform> apply_plan(const dsp::Waveform& w, long clip_id,
                                      const AugmentationPlan& plan,
                                      const AugmentationSpec& spec) {
    std::vector<dsp::Waveform> out;
    out.reserve(plan.k > 0 ? plan.k : 0);
    for (int i = 0; i < plan.k; ++i) out.push_back(augment_clip(w, clip_id, i, plan, spec));
    return out;
}

} // namespace dronetune::augment
