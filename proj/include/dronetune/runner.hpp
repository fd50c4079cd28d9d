#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dronetune/config.hpp"
#include "dronetune/train.hpp"

namespace dronetune::runner {

// Library-level command implementations; the CLI is a thin argv wrapper so
// tests can drive the exact same paths.

/// synth: writes the synthetic dataset under synth.out_dir, returns the
/// manifest path. Byte-deterministic in the config.
std::filesystem::path run_synth(const RunConfig& cfg);

struct TrainOutcome {
    std::filesystem::path run_dir;
    std::string model_family;
    std::string strategy;
    int augs = 0;
    double trainable_percent = 100.0;
    train::FitResult fit;
    double validation_accuracy = 0.0; // clean 10% split, best checkpoint
    double inference_accuracy = 0.0;  // fixed hold-out, best checkpoint
};

/// train: split -> inflate -> featurize -> fit; writes config echo,
/// metrics.jsonl, splits.csv, checkpoint.bin, inference_preds.csv and
/// summary.json into run.dir.
TrainOutcome run_train(const RunConfig& cfg);

struct KfoldOutcome {
    std::filesystem::path run_dir;
    std::vector<TrainOutcome> folds;
    double acc_mean = 0.0, acc_std = 0.0;
    std::string summary_row; // "MM.MM% ± S.SS%"
};

/// kfold: fixed inference hold-out, k folds, per-fold run directories plus
/// an aggregate summary.csv.
KfoldOutcome run_kfold(const RunConfig& cfg);

/// params: dry parameter accounting table (strategies × models), no
/// training.
std::string run_params(const RunConfig& cfg);

/// report: consolidated CSV over run directories (single runs or kfold
/// directories) plus a confusion.csv inside each run directory that has
/// inference predictions.
void run_report(const std::vector<std::filesystem::path>& run_dirs,
                const std::filesystem::path& out_csv);

/// Sample (n-1) standard deviation; 0 for fewer than two values.
double sample_std(const std::vector<double>& xs);

/// Table II cell style: "92.00% ± 2.00%".
std::string format_mean_std(double mean_fraction, double std_fraction);

} // namespace dronetune::runner
