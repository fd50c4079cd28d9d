#include <cmath>
#include <fstream>
#include <numbers>

#include "dronetune/data.hpp"
#include "dronetune/errors.hpp"
#include "dronetune/rng.hpp"

namespace dronetune::data {

void SynthConfig::validate() const {
    if (n_classes < 1) throw ConfigError("synth.n_classes must be >= 1");
    if (clips_per_class < 1) throw ConfigError("synth.clips_per_class must be >= 1");
    if (duration_s <= 0) throw ConfigError("synth.duration_s must be positive");
    if (sample_rate == 0) throw ConfigError("synth.sample_rate must be positive");
    if (f0_step < 20.0)
        throw ConfigError("synth.f0_step must be >= 20 Hz so class fundamentals stay distinct");
    if (f0_base <= 0) throw ConfigError("synth.f0_base must be positive");
    if (harmonics < 1) throw ConfigError("synth.harmonics must be >= 1");
    double top = f0(n_classes - 1) * harmonics;
    if (top >= sample_rate / 2.0)
        throw ConfigError("synth: highest harmonic " + std::to_string(top) +
                          " Hz exceeds Nyquist; lower f0 grid or harmonic count");
    if (am_min_hz <= 0 || am_max_hz < am_min_hz)
        throw ConfigError("synth blade-pass range is invalid");
    if (am_depth_min < 0 || am_depth_max < am_depth_min || am_depth_max > 1)
        throw ConfigError("synth AM depth range must lie inside [0, 1]");
    if (snr_max_db < snr_min_db) throw ConfigError("synth SNR range is invalid");
}

std::string SynthConfig::class_name(int class_index) const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "uav%02d", class_index);
    return buf;
}

std::filesystem::path synth_generate(const SynthConfig& cfg,
                                     const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir / "clips");

    const auto n = static_cast<std::size_t>(cfg.duration_s * cfg.sample_rate);
    const double dt = 1.0 / static_cast<double>(cfg.sample_rate);

    std::ofstream manifest(out_dir / "manifest.csv");
    if (!manifest) throw DataError("cannot write manifest under " + out_dir.string());
    manifest << "path,label\n";

    std::vector<double> x(n);
    for (int c = 0; c < cfg.n_classes; ++c) {
        const double f0 = cfg.f0(c);
        for (int clip = 0; clip < cfg.clips_per_class; ++clip) {
            Rng rng(Rng::mix(Rng::mix(cfg.seed, static_cast<std::uint64_t>(c)),
                             static_cast<std::uint64_t>(clip)));
            const double f_bp = rng.uniform(cfg.am_min_hz, cfg.am_max_hz);
            const double depth = rng.uniform(cfg.am_depth_min, cfg.am_depth_max);
            const double snr_db = rng.uniform(cfg.snr_min_db, cfg.snr_max_db);
            const double jitter = 1.0 + 0.005 * (2.0 * rng.uniform() - 1.0);
            const double am_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            std::vector<double> phases(cfg.harmonics);
            for (auto& p : phases) p = rng.uniform(0.0, 2.0 * std::numbers::pi);

            double power = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double t = static_cast<double>(i) * dt;
                double s = 0.0;
                for (int h = 1; h <= cfg.harmonics; ++h)
                    s += std::sin(2.0 * std::numbers::pi * h * f0 * jitter * t +
                                  phases[h - 1]) /
                         static_cast<double>(h);
                double am = 1.0 + depth * std::sin(2.0 * std::numbers::pi * f_bp * t + am_phase);
                x[i] = s * am;
                power += x[i] * x[i];
            }
            power /= static_cast<double>(n);
            const double sigma = std::sqrt(power) * std::pow(10.0, -snr_db / 20.0);
            double peak = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                x[i] += sigma * rng.normal();
                peak = std::max(peak, std::abs(x[i]));
            }
            const double gain = peak > 0.0 ? 0.9 / peak : 0.0;

            dsp::Waveform w;
            w.sample_rate = cfg.sample_rate;
            w.samples.resize(n);
            for (std::size_t i = 0; i < n; ++i)
                w.samples[i] = static_cast<float>(x[i] * gain);

            char name[64];
            std::snprintf(name, sizeof(name), "clips/%s_%03d.wav", cfg.class_name(c).c_str(),
                          clip);
            dsp::write_wav(out_dir / name, w);
            manifest << name << "," << cfg.class_name(c) << "\n";
        }
    }
    manifest.close();
    if (!manifest) throw DataError("short write on manifest under " + out_dir.string());
    return out_dir / "manifest.csv";
}

} // namespace dronetune::data
