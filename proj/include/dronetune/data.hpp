#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dronetune/augment.hpp"
#include "dronetune/dsp.hpp"
#include "dronetune/train.hpp"

namespace dronetune::data {

// Manifest parsing, stratified 60/20/10/10 splitting, the 5-fold plan with a
// fixed inference hold-out, augmentation-aware inflation, and the synthetic
// generator used for desk-scale verification.

struct ManifestEntry {
    std::string path;   // relative to the manifest's directory
    std::string label;
    long clip_id = 0;   // stable row index
    int label_index = 0;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> classes; // sorted; label_index refers here
    std::filesystem::path root;       // directory containing the manifest
};

/// CSV with header `path,label`; extra metadata columns are ignored but the
/// column count must be consistent. Errors carry line numbers.
Manifest parse_manifest(const std::filesystem::path& file);

enum class SplitRole { Train, Test, Validation, Inference };

std::string_view split_role_name(SplitRole r);

/// clip_id -> role. Validation and Inference never carry augmented clips.
struct SplitAssignment {
    std::vector<SplitRole> role_by_clip;

    SplitRole role(long clip_id) const { return role_by_clip[static_cast<std::size_t>(clip_id)]; }
};

/// Stratified split with exact per-class proportions when divisible and
/// largest-remainder rounding otherwise. Deterministic in (entries, seed).
SplitAssignment stratified_split(const Manifest& m,
                                 std::array<double, 4> ratios = {0.6, 0.2, 0.1, 0.1},
                                 std::uint64_t seed = 0);

/// Fixed stratified 10% inference hold-out plus k disjoint stratified
/// validation folds covering the remaining 90%; fold i trains on the other
/// k-1 folds.
struct KFoldPlan {
    std::vector<long> inference;            // identical across folds
    std::vector<std::vector<long>> folds;   // pairwise disjoint validation folds
};

KFoldPlan kfold_plan(const Manifest& m, std::size_t k = 5, std::uint64_t seed = 0);

/// Text report of clip_id assignments for audit.
std::string split_report(const Manifest& m, const SplitAssignment& a);
std::string kfold_report(const Manifest& m, const KFoldPlan& plan);

/// One training item: an original clip (aug_index -1) or an augmented view
/// carrying (source clip_id, aug_index) provenance.
struct DataItem {
    long clip_id = 0;
    int label_index = 0;
    std::string path;
    int aug_index = -1;
};

/// Originals plus plan.k augmented views per entry. Only fitting-time splits
/// may be inflated; Validation/Inference entries are refused.
std::vector<DataItem> inflate(const std::vector<ManifestEntry>& entries,
                              const SplitAssignment& assignment,
                              const augment::AugmentationPlan& plan);

std::vector<DataItem> originals_only(const std::vector<ManifestEntry>& entries);

/// Synthetic stand-in for the private drone corpus: per class a harmonic
/// stack at a distinct fundamental, amplitude-modulated at a blade-pass rate
/// and mixed with Gaussian noise at a drawn SNR.
struct SynthConfig {
    int n_classes = 8;
    int clips_per_class = 80;
    double duration_s = 2.0;
    std::uint32_t sample_rate = 16000;
    double f0_base = 110.0;
    double f0_step = 45.0; // per-class fundamentals must stay >= 20 Hz apart
    int harmonics = 6;
    double am_min_hz = 8.0;
    double am_max_hz = 30.0;
    double am_depth_min = 0.2;
    double am_depth_max = 0.6;
    double snr_min_db = 5.0;
    double snr_max_db = 20.0;
    std::uint64_t seed = 1234;

    void validate() const;
    double f0(int class_index) const { return f0_base + f0_step * class_index; }
    std::string class_name(int class_index) const;
};

/// Writes WAV clips plus manifest.csv under out_dir; returns the manifest
/// path. Byte-deterministic in the config.
std::filesystem::path synth_generate(const SynthConfig& cfg,
                                     const std::filesystem::path& out_dir);

/// Featurized items with owned storage; train::Example views borrow from it.
struct FeatureItem {
    long clip_id = 0;
    int label_index = 0;
    int aug_index = -1;
    std::size_t rows = 0, cols = 0;
    std::vector<float> values;
};

using FeatureSet = std::vector<FeatureItem>;

/// Loads, optionally augments, and featurizes every item (parallel across
/// items, deterministic). All clips must produce the same frame count.
/// When cache_dir is non-empty, per-item features are cached there in the
/// LFT1 format.
FeatureSet featurize_items(const std::vector<DataItem>& items, const Manifest& m,
                           const dsp::FeatureConfig& fcfg, const augment::AugmentationSpec& aspec,
                           const augment::AugmentationPlan& plan,
                           const std::filesystem::path& cache_dir = {});

train::ExampleSet to_examples(const FeatureSet& items);

} // namespace dronetune::data
