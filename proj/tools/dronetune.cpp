// Command-line surface over the library: dataset synthesis, single training
// runs, 5-fold experiments, parameter accounting, and report generation.

#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "dronetune/errors.hpp"
#include "dronetune/runner.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    long seed = -1;
    long parallel_folds = -1;
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_path, "flat key=value config file");
    sub->add_option("--set", args.sets, "override a config key (key=value, repeatable)");
    sub->add_option("--seed", args.seed, "override the global seed");
    sub->add_option("--parallel-folds", args.parallel_folds,
                    "run k-fold folds in N worker threads (kernels go serial)");
}

dronetune::RunConfig resolve(const CommonArgs& args) {
    auto cfg = dronetune::RunConfig::defaults();
    if (!args.config_path.empty()) cfg.load_file(args.config_path);
    for (const auto& kv : args.sets) cfg.set_kv(kv);
    if (args.seed >= 0) cfg.set("seed", std::to_string(args.seed));
    if (args.parallel_folds >= 0)
        cfg.set("run.parallel_folds", std::to_string(args.parallel_folds));
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"UAV audio classification: features, augmentation, models, "
                 "fine-tuning strategies, and the cross-validation harness"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, kfold_args, params_args;
    auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
    add_common(synth, synth_args);
    auto* train = app.add_subcommand("train", "run one training experiment");
    add_common(train, train_args);
    auto* kfold = app.add_subcommand("kfold", "run the k-fold cross-validation experiment");
    add_common(kfold, kfold_args);
    auto* params = app.add_subcommand("params", "print trainable-parameter accounting");
    add_common(params, params_args);

    std::vector<std::string> report_dirs;
    std::string report_out = "summary.csv";
    auto* report = app.add_subcommand("report", "consolidate run directories into CSV");
    report->add_option("dirs", report_dirs, "run directories")->required();
    report->add_option("--out", report_out, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) {
            auto manifest = dronetune::runner::run_synth(resolve(synth_args));
            std::cout << "manifest: " << manifest.string() << "\n";
        } else if (train->parsed()) {
            auto out = dronetune::runner::run_train(resolve(train_args));
            std::cout << "run dir: " << out.run_dir.string() << "\n"
                      << "model=" << out.model_family << " strategy=" << out.strategy
                      << " augs=" << out.augs << " trainable=" << out.trainable_percent << "%\n"
                      << "best epoch " << out.fit.best_epoch << ": monitored acc "
                      << out.fit.best_accuracy << ", validation acc " << out.validation_accuracy
                      << ", inference acc " << out.inference_accuracy << "\n";
        } else if (kfold->parsed()) {
            auto out = dronetune::runner::run_kfold(resolve(kfold_args));
            std::cout << "run dir: " << out.run_dir.string() << "\n"
                      << "aggregate: mean over " << out.folds.size()
                      << " folds, sample (n-1) standard deviation\n";
            for (std::size_t f = 0; f < out.folds.size(); ++f)
                std::cout << "fold " << f << ": acc " << out.folds[f].fit.best_accuracy << "\n";
            std::cout << out.folds[0].model_family << " " << out.folds[0].strategy << " "
                      << out.folds[0].augs << " augs: " << out.summary_row << "\n";
        } else if (params->parsed()) {
            std::cout << dronetune::runner::run_params(resolve(params_args));
        } else if (report->parsed()) {
            std::vector<std::filesystem::path> dirs(report_dirs.begin(), report_dirs.end());
            dronetune::runner::run_report(dirs, report_out);
            std::cout << "wrote " << report_out << "\n";
        }
    } catch (const dronetune::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const dronetune::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const dronetune::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
