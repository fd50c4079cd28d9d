#include "dronetune/runner.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dronetune/checkpoint.hpp"
#include "dronetune/data.hpp"
#include "dronetune/errors.hpp"
#include "dronetune/kernels.hpp"
#include "dronetune/peft.hpp"

namespace dronetune::runner {

namespace fs = std::filesystem;

double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

std::string format_mean_std(double mean_fraction, double std_fraction) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f%% ± %.2f%%", 100.0 * mean_fraction,
                  100.0 * std_fraction);
    return buf;
}

namespace {

dsp::FeatureConfig feature_config(const RunConfig& cfg) {
    dsp::FeatureConfig f;
    f.sample_rate = static_cast<std::uint32_t>(cfg.get_int("features.sample_rate"));
    f.n_fft = static_cast<std::size_t>(cfg.get_int("features.n_fft"));
    f.hop = static_cast<std::size_t>(cfg.get_int("features.hop"));
    f.n_mels = static_cast<std::size_t>(cfg.get_int("features.n_mels"));
    f.f_min = cfg.get_double("features.f_min");
    f.f_max = cfg.get_double("features.f_max");
    f.log_offset = cfg.get_double("features.log_offset");
    f.validate();
    return f;
}

augment::AugmentationSpec augment_spec(const RunConfig& cfg) {
    augment::AugmentationSpec s;
    s.stretch_min = cfg.get_double("augment.stretch_min");
    s.stretch_max = cfg.get_double("augment.stretch_max");
    s.lambda_min = cfg.get_double("augment.lambda_min");
    s.lambda_max = cfg.get_double("augment.lambda_max");
    s.validate();
    return s;
}

data::SynthConfig synth_config(const RunConfig& cfg) {
    data::SynthConfig s;
    s.n_classes = static_cast<int>(cfg.get_int("synth.n_classes"));
    s.clips_per_class = static_cast<int>(cfg.get_int("synth.clips_per_class"));
    s.duration_s = cfg.get_double("synth.duration_s");
    s.sample_rate = static_cast<std::uint32_t>(cfg.get_int("synth.sample_rate"));
    s.f0_base = cfg.get_double("synth.f0_base");
    s.f0_step = cfg.get_double("synth.f0_step");
    s.harmonics = static_cast<int>(cfg.get_int("synth.harmonics"));
    s.am_min_hz = cfg.get_double("synth.am_min_hz");
    s.am_max_hz = cfg.get_double("synth.am_max_hz");
    s.am_depth_min = cfg.get_double("synth.am_depth_min");
    s.am_depth_max = cfg.get_double("synth.am_depth_max");
    s.snr_min_db = cfg.get_double("synth.snr_min_db");
    s.snr_max_db = cfg.get_double("synth.snr_max_db");
    s.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    s.validate();
    return s;
}

std::unique_ptr<Model<float>> build_model(const RunConfig& cfg, std::size_t n_classes,
                                          std::size_t input_frames, std::uint64_t seed) {
    const std::string& family = cfg.get("model.family");
    if (family == "cnn") {
        CompactCnnConfig c;
        c.hidden_fc = static_cast<std::size_t>(cfg.get_int("cnn.hidden_fc"));
        c.dropout_p = cfg.get_double("cnn.dropout");
        c.n_classes = n_classes;
        const std::string& pool = cfg.get("cnn.pool");
        if (pool != "max" && pool != "avg")
            throw ConfigError("cnn.pool must be 'max' or 'avg', got '" + pool + "'");
        c.avg_pool = pool == "avg";
        return std::make_unique<CompactCnn<float>>(c, seed);
    }
    if (family == "transformer") {
        SpecTransformerConfig c;
        c.patch = static_cast<std::size_t>(cfg.get_int("transformer.patch"));
        c.embed_dim = static_cast<std::size_t>(cfg.get_int("transformer.embed_dim"));
        c.heads = static_cast<std::size_t>(cfg.get_int("transformer.heads"));
        c.depth = static_cast<std::size_t>(cfg.get_int("transformer.depth"));
        c.mlp_ratio = static_cast<std::size_t>(cfg.get_int("transformer.mlp_ratio"));
        c.n_mels = static_cast<std::size_t>(cfg.get_int("features.n_mels"));
        c.input_frames = input_frames;
        c.n_classes = n_classes;
        return std::make_unique<SpecTransformer<float>>(c, seed);
    }
    throw ConfigError("model.family must be 'cnn' or 'transformer', got '" + family + "'");
}

peft::StrategyOptions strategy_options(const RunConfig& cfg) {
    peft::StrategyOptions o;
    o.oft_blocks = static_cast<std::size_t>(cfg.get_int("oft.blocks"));
    o.ia3_scale_query = cfg.get_bool("ia3.scale_query");
    return o;
}

train::FitConfig<float> fit_config(const RunConfig& cfg, ModelFamily family) {
    train::FitConfig<float> f;
    f.train.batch_size = static_cast<std::size_t>(cfg.get_int("train.batch_size"));
    f.train.accumulation_steps =
        static_cast<std::size_t>(cfg.get_int("train.accumulation_steps"));
    f.train.max_epochs = static_cast<int>(cfg.get_int("train.max_epochs"));
    f.train.early_stop_patience = static_cast<int>(cfg.get_int("train.early_stop_patience"));
    f.train.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    if (f.train.batch_size == 0 || f.train.accumulation_steps == 0)
        throw ConfigError("train.batch_size and train.accumulation_steps must be positive");

    const std::string& kind = cfg.get("optim.kind");
    if (kind == "adam")
        f.optim.kind = train::OptimKind::Adam;
    else if (kind == "adamw")
        f.optim.kind = train::OptimKind::AdamW;
    else if (kind == "auto") // the paper's pairing
        f.optim.kind = family == ModelFamily::Transformer ? train::OptimKind::AdamW
                                                          : train::OptimKind::Adam;
    else
        throw ConfigError("optim.kind must be auto|adam|adamw, got '" + kind + "'");
    f.optim.lr = static_cast<float>(cfg.get_double("optim.lr"));
    f.optim.beta1 = static_cast<float>(cfg.get_double("optim.beta1"));
    f.optim.beta2 = static_cast<float>(cfg.get_double("optim.beta2"));
    f.optim.eps = static_cast<float>(cfg.get_double("optim.eps"));
    const std::string& wd = cfg.get("optim.weight_decay");
    f.optim.weight_decay =
        wd == "auto" ? (f.optim.kind == train::OptimKind::AdamW ? 0.01f : 0.0f)
                     : static_cast<float>(cfg.get_double("optim.weight_decay"));

    f.sched.factor = static_cast<float>(cfg.get_double("sched.factor"));
    f.sched.threshold = static_cast<float>(cfg.get_double("sched.threshold"));
    f.sched.min_lr = static_cast<float>(cfg.get_double("sched.min_lr"));
    f.sched.patience = static_cast<int>(cfg.get_int("sched.patience"));
    return f;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    out << text;
}

void write_inference_preds(const fs::path& p, const data::Manifest& m,
                           const std::vector<data::ManifestEntry>& entries,
                           const std::vector<int>& preds) {
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    out << "clip_id,true_label,predicted_label\n";
    for (std::size_t i = 0; i < entries.size(); ++i)
        out << entries[i].clip_id << "," << entries[i].label << ","
            << m.classes[static_cast<std::size_t>(preds[i])] << "\n";
}

void write_summary_json(const fs::path& p, const TrainOutcome& o,
                        const std::string& monitored_split) {
    nlohmann::ordered_json j;
    j["model"] = o.model_family;
    j["strategy"] = o.strategy;
    j["augs"] = o.augs;
    j["monitored_split"] = monitored_split;
    j["best_epoch"] = o.fit.best_epoch;
    j["best_accuracy"] = o.fit.best_accuracy;
    j["best_f1"] = o.fit.best_f1;
    j["best_loss"] = o.fit.best_loss;
    j["validation_accuracy"] = o.validation_accuracy;
    j["inference_accuracy"] = o.inference_accuracy;
    j["trainable_percent"] = o.trainable_percent;
    j["epochs_run"] = o.fit.epochs_run;
    j["seconds"] = o.fit.seconds;
    write_text(p, j.dump(2) + "\n");
}

struct PreparedData {
    data::Manifest manifest;
    dsp::FeatureConfig fcfg;
    augment::AugmentationSpec aspec;
    augment::AugmentationPlan plan;
};

PreparedData prepare(const RunConfig& cfg) {
    if (cfg.empty("data.manifest"))
        throw ConfigError("data.manifest is required for this command");
    PreparedData p;
    p.manifest = data::parse_manifest(cfg.get("data.manifest"));
    p.fcfg = feature_config(cfg);
    p.aspec = augment_spec(cfg);
    p.plan.k = static_cast<int>(cfg.get_int("augment.k"));
    p.plan.global_seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    if (p.plan.k < 0) throw ConfigError("augment.k must be >= 0");
    return p;
}

// Core of both train and kfold: fit one model on prepared example sets and
// fill a run directory.
TrainOutcome fit_into_dir(const RunConfig& cfg, const PreparedData& pd, const fs::path& dir,
                          const train::ExampleSet& train_set, const std::string& monitored_name,
                          const train::ExampleSet& monitored_set,
                          const std::vector<std::pair<std::string, const train::ExampleSet*>>&
                              extra_evals,
                          const train::ExampleSet& inference_set,
                          const std::vector<data::ManifestEntry>& inference_entries,
                          const train::ExampleSet* validation_set, std::size_t input_frames,
                          std::uint64_t model_seed) {
    fs::create_directories(dir);
    write_text(dir / "config.txt", cfg.echo()); // run dirs are self-describing
    auto model = build_model(cfg, pd.manifest.classes.size(), input_frames, model_seed);
    auto strategy = peft::parse_strategy(cfg.get("strategy"));
    peft::apply_strategy(*model, strategy, strategy_options(cfg));
    auto stats = peft::param_stats(*model);

    auto fcfg = fit_config(cfg, model->family());
    train::JsonlLogger logger(dir / "metrics.jsonl");
    TrainOutcome out;
    out.run_dir = dir;
    out.model_family = std::string(family_name(model->family()));
    out.strategy = std::string(peft::strategy_name(strategy));
    out.augs = pd.plan.k;
    out.trainable_percent = stats.percent;
    out.fit = train::fit(*model, train_set, monitored_name, monitored_set, extra_evals, fcfg,
                         stats.percent, &logger);

    save_checkpoint(dir / "checkpoint.bin", *model);

    // clean evaluations of the restored best checkpoint
    if (validation_set && !validation_set->empty()) {
        auto v = train::evaluate(*model, *validation_set, fcfg.train.batch_size);
        out.validation_accuracy = v.report.accuracy;
    }
    auto inf = train::evaluate(*model, inference_set, fcfg.train.batch_size, true);
    out.inference_accuracy = inf.report.accuracy;
    inf.report.trainable_percent = stats.percent;
    logger.row(out.fit.best_epoch, "inference", inf.report, static_cast<double>(fcfg.optim.lr),
               false);
    logger.flush();
    write_inference_preds(dir / "inference_preds.csv", pd.manifest, inference_entries,
                          inf.predictions);
    write_summary_json(dir / "summary.json", out, monitored_name);
    return out;
}

void write_summary_csv(const fs::path& p,
                       const std::vector<std::array<std::string, 9>>& rows) {
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    out << "model,strategy,augs,acc_mean,acc_std,f1_mean,f1_std,time_mean_s,trainable_pct\n";
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
        out << "\n";
    }
}

std::array<std::string, 9> aggregate_row(const std::string& model, const std::string& strategy,
                                         int augs, const std::vector<double>& accs,
                                         const std::vector<double>& f1s,
                                         const std::vector<double>& times,
                                         double trainable_pct) {
    auto mean = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        return v.empty() ? 0.0 : m / static_cast<double>(v.size());
    };
    char buf[64];
    std::array<std::string, 9> row;
    row[0] = model;
    row[1] = strategy;
    row[2] = std::to_string(augs);
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.4f", v);
        return std::string(buf);
    };
    row[3] = fmt(mean(accs));
    row[4] = fmt(sample_std(accs));
    row[5] = fmt(mean(f1s));
    row[6] = fmt(sample_std(f1s));
    std::snprintf(buf, sizeof(buf), "%.2f", mean(times));
    row[7] = buf;
    std::snprintf(buf, sizeof(buf), "%.2f", trainable_pct);
    row[8] = buf;
    return row;
}

} // namespace

fs::path run_synth(const RunConfig& cfg) {
    if (cfg.empty("synth.out_dir"))
        throw ConfigError("synth.out_dir is required for the synth command");
    auto scfg = synth_config(cfg);
    fs::path out_dir = cfg.get("synth.out_dir");
    auto manifest = data::synth_generate(scfg, out_dir);
    write_text(out_dir / "config.txt", cfg.echo());
    return manifest;
}

TrainOutcome run_train(const RunConfig& cfg) {
    if (cfg.empty("run.dir")) throw ConfigError("run.dir is required for the train command");
    fs::path dir = cfg.get("run.dir");
    fs::create_directories(dir);
    write_text(dir / "config.txt", cfg.echo());

    auto pd = prepare(cfg);
    std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    auto assignment = data::stratified_split(pd.manifest, {0.6, 0.2, 0.1, 0.1}, seed);
    write_text(dir / "splits.csv", data::split_report(pd.manifest, assignment));

    std::vector<data::ManifestEntry> train_e, test_e, val_e, inf_e;
    for (const auto& e : pd.manifest.entries) {
        switch (assignment.role(e.clip_id)) {
        case data::SplitRole::Train: train_e.push_back(e); break;
        case data::SplitRole::Test: test_e.push_back(e); break;
        case data::SplitRole::Validation: val_e.push_back(e); break;
        default: inf_e.push_back(e); break;
        }
    }

    const fs::path cache = cfg.get("features.cache_dir");
    // train and test (the fitting-time splits) carry augmented data;
    // validation and inference stay clean
    auto train_items = data::inflate(train_e, assignment, pd.plan);
    auto test_items = data::inflate(test_e, assignment, pd.plan);
    auto train_f = data::featurize_items(train_items, pd.manifest, pd.fcfg, pd.aspec, pd.plan,
                                         cache);
    auto test_f =
        data::featurize_items(test_items, pd.manifest, pd.fcfg, pd.aspec, pd.plan, cache);
    auto val_f = data::featurize_items(data::originals_only(val_e), pd.manifest, pd.fcfg,
                                       pd.aspec, pd.plan, cache);
    auto inf_f = data::featurize_items(data::originals_only(inf_e), pd.manifest, pd.fcfg,
                                       pd.aspec, pd.plan, cache);

    auto train_x = data::to_examples(train_f);
    auto test_x = data::to_examples(test_f);
    auto val_x = data::to_examples(val_f);
    auto inf_x = data::to_examples(inf_f);

    std::vector<std::pair<std::string, const train::ExampleSet*>> extra{{"validation", &val_x}};
    return fit_into_dir(cfg, pd, dir, train_x, "test", test_x, extra, inf_x, inf_e, &val_x,
                        train_f.empty() ? 0 : train_f[0].cols, Rng::mix(seed, 0x0DE1));
}

KfoldOutcome run_kfold(const RunConfig& cfg) {
    if (cfg.empty("run.dir")) throw ConfigError("run.dir is required for the kfold command");
    fs::path dir = cfg.get("run.dir");
    fs::create_directories(dir);
    write_text(dir / "config.txt", cfg.echo());

    auto pd = prepare(cfg);
    std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    std::size_t k = static_cast<std::size_t>(cfg.get_int("kfold.k"));
    auto plan = data::kfold_plan(pd.manifest, k, seed);
    write_text(dir / "folds.csv", data::kfold_report(pd.manifest, plan));

    // Featurize the whole pool once: augmentation draws depend only on
    // (seed, clip, index), never on the fold.
    std::vector<char> in_inference(pd.manifest.entries.size(), 0);
    for (long id : plan.inference) in_inference[static_cast<std::size_t>(id)] = 1;
    std::vector<int> fold_of(pd.manifest.entries.size(), -1);
    for (std::size_t f = 0; f < k; ++f)
        for (long id : plan.folds[f]) fold_of[static_cast<std::size_t>(id)] = static_cast<int>(f);

    std::vector<data::ManifestEntry> pool_e, inf_e;
    for (const auto& e : pd.manifest.entries)
        (in_inference[static_cast<std::size_t>(e.clip_id)] ? inf_e : pool_e).push_back(e);

    data::SplitAssignment pool_roles;
    pool_roles.role_by_clip.assign(pd.manifest.entries.size(), data::SplitRole::Train);
    for (long id : plan.inference)
        pool_roles.role_by_clip[static_cast<std::size_t>(id)] = data::SplitRole::Inference;

    const fs::path cache = cfg.get("features.cache_dir");
    auto pool_items = data::inflate(pool_e, pool_roles, pd.plan);
    auto pool_f =
        data::featurize_items(pool_items, pd.manifest, pd.fcfg, pd.aspec, pd.plan, cache);
    auto inf_f = data::featurize_items(data::originals_only(inf_e), pd.manifest, pd.fcfg,
                                       pd.aspec, pd.plan, cache);
    auto inf_x = data::to_examples(inf_f);
    std::size_t frames = pool_f.empty() ? 0 : pool_f[0].cols;

    KfoldOutcome out;
    out.run_dir = dir;
    out.folds.resize(k);
    std::vector<std::string> fold_errors(k);

    long parallel = cfg.get_int("run.parallel_folds");
    auto prev_exec = kernels::execution();
    std::size_t workers = std::min<std::size_t>(k, std::max<long>(1, parallel));

    auto run_fold = [&](std::size_t f) {
        // fold f: validation = fold f's originals (clean); train = the other
        // folds' originals + augmented views
        train::ExampleSet train_x, fold_val_x;
        for (const auto& fi : pool_f) {
            int ff = fold_of[static_cast<std::size_t>(fi.clip_id)];
            if (ff == static_cast<int>(f)) {
                if (fi.aug_index < 0)
                    fold_val_x.push_back({fi.values, fi.rows, fi.cols, fi.label_index});
            } else {
                train_x.push_back({fi.values, fi.rows, fi.cols, fi.label_index});
            }
        }
        RunConfig fold_cfg = cfg;
        // keep the derived seed inside long range: it round-trips through
        // the config's integer parser
        fold_cfg.set("seed", std::to_string(Rng::mix(seed, f) & 0x7fffffffffffffffULL));
        out.folds[f] = fit_into_dir(fold_cfg, pd, dir / ("fold_" + std::to_string(f)), train_x,
                                    "validation", fold_val_x, {}, inf_x, inf_e, nullptr, frames,
                                    Rng::mix(Rng::mix(seed, 0x0DE1), f));
    };

    if (workers > 1) {
        // fold workers run concurrently; kernels drop to serial to avoid
        // oversubscription (results are bit-identical either way)
        kernels::set_execution(kernels::Exec::Serial);
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) {
            threads.emplace_back([&] {
                for (std::size_t f = next.fetch_add(1); f < k; f = next.fetch_add(1)) {
                    try {
                        run_fold(f);
                    } catch (const std::exception& e) {
                        fold_errors[f] = e.what();
                    }
                }
            });
        }
        for (auto& t : threads) t.join();
        kernels::set_execution(prev_exec);
        for (const auto& e : fold_errors)
            if (!e.empty()) throw DataError("kfold fold failed: " + e);
    } else {
        for (std::size_t f = 0; f < k; ++f) run_fold(f);
    }

    std::vector<double> accs, f1s, times;
    for (const auto& fold : out.folds) {
        accs.push_back(fold.fit.best_accuracy);
        f1s.push_back(fold.fit.best_f1);
        times.push_back(fold.fit.seconds);
    }
    double mean_acc = 0;
    for (double a : accs) mean_acc += a;
    mean_acc /= static_cast<double>(accs.size());
    out.acc_mean = mean_acc;
    out.acc_std = sample_std(accs);
    out.summary_row = format_mean_std(out.acc_mean, out.acc_std);

    write_summary_csv(dir / "summary.csv",
                      {aggregate_row(out.folds[0].model_family, out.folds[0].strategy,
                                     out.folds[0].augs, accs, f1s, times,
                                     out.folds[0].trainable_percent)});
    return out;
}

std::string run_params(const RunConfig& cfg) {
    using peft::Strategy;
    std::size_t n_classes = static_cast<std::size_t>(cfg.get_int("model.n_classes"));
    std::size_t frames = static_cast<std::size_t>(cfg.get_int("model.input_frames"));
    const std::array<Strategy, 6> strategies{Strategy::Full, Strategy::ClassifierOnly,
                                             Strategy::BatchNorm, Strategy::Ssf, Strategy::Ia3,
                                             Strategy::Oft};
    const std::array<const char*, 2> families{"cnn", "transformer"};

    std::ostringstream os;
    os << "strategy         ";
    for (auto f : families) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), " %28s", f);
        os << buf;
    }
    os << "\n";
    for (auto s : strategies) {
        char name[32];
        std::snprintf(name, sizeof(name), "%-17s", std::string(peft::strategy_name(s)).c_str());
        os << name;
        for (auto fam : families) {
            RunConfig c = cfg;
            c.set("model.family", fam);
            std::string cell = "-";
            ModelFamily family = std::string(fam) == "cnn" ? ModelFamily::Cnn
                                                           : ModelFamily::Transformer;
            if (peft::applicable(s, family)) {
                auto model = build_model(c, n_classes, frames,
                                         static_cast<std::uint64_t>(cfg.get_int("seed")));
                peft::apply_strategy(*model, s, strategy_options(cfg));
                auto st = peft::param_stats(*model);
                char buf[48];
                std::snprintf(buf, sizeof(buf), "%s%% (%zu/%zu)", st.percent_str().c_str(),
                              st.trainable, st.total);
                cell = buf;
            }
            char buf[48];
            std::snprintf(buf, sizeof(buf), " %28s", cell.c_str());
            os << buf;
        }
        os << "\n";
    }
    return os.str();
}

namespace {

struct RunRecord {
    std::string model, strategy;
    int augs = 0;
    double acc = 0, f1 = 0, seconds = 0, trainable_pct = 100;
};

// Re-derive a run's summary from config echo + metrics.jsonl alone.
RunRecord read_run_dir(const fs::path& dir) {
    RunRecord r;
    std::ifstream cfgf(dir / "config.txt");
    if (!cfgf) throw DataError("run directory missing config.txt: " + dir.string());
    std::string line;
    std::string family = "cnn";
    while (std::getline(cfgf, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        auto strip = [](std::string s) {
            while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
            while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.pop_back();
            return s;
        };
        key = strip(key);
        value = strip(value);
        if (key == "model.family") family = value;
        if (key == "strategy") r.strategy = value;
        if (key == "augment.k") r.augs = std::stoi(value);
    }
    r.model = family;

    std::ifstream mf(dir / "metrics.jsonl");
    if (!mf) throw DataError("run directory missing metrics.jsonl: " + dir.string());
    double best_acc = -1, best_loss = std::numeric_limits<double>::infinity(), best_f1 = 0;
    double seconds = 0;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        seconds += j.value("seconds", 0.0);
        r.trainable_pct = j.value("trainable_percent", 100.0);
        if (j.value("monitored", false)) {
            double acc = j.value("accuracy", 0.0);
            double loss = j.value("loss", 0.0);
            if (acc > best_acc || (acc == best_acc && loss < best_loss)) {
                best_acc = acc;
                best_loss = loss;
                best_f1 = j.value("f1", 0.0);
            }
        }
    }
    if (best_acc < 0) throw DataError("no monitored rows in " + (dir / "metrics.jsonl").string());
    r.acc = best_acc;
    r.f1 = best_f1;
    r.seconds = seconds;
    return r;
}

void write_confusion(const fs::path& dir) {
    std::ifstream in(dir / "inference_preds.csv");
    if (!in) return; // nothing inferencable here
    std::string line;
    std::getline(in, line); // header
    std::vector<std::pair<std::string, std::string>> pairs;
    std::set<std::string> classes;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto c1 = line.find(',');
        auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) continue;
        std::string truth = line.substr(c1 + 1, c2 - c1 - 1);
        std::string pred = line.substr(c2 + 1);
        if (!pred.empty() && pred.back() == '\r') pred.pop_back();
        pairs.emplace_back(truth, pred);
        classes.insert(truth);
        classes.insert(pred);
    }
    std::vector<std::string> cls(classes.begin(), classes.end());
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < cls.size(); ++i) idx[cls[i]] = i;
    std::vector<std::size_t> counts(cls.size() * cls.size(), 0);
    for (const auto& [t, p] : pairs) counts[idx[t] * cls.size() + idx[p]] += 1;

    std::ofstream out(dir / "confusion.csv");
    out << "truth\\pred";
    for (const auto& c : cls) out << "," << c;
    out << "\n";
    for (std::size_t i = 0; i < cls.size(); ++i) {
        out << cls[i];
        for (std::size_t j = 0; j < cls.size(); ++j) out << "," << counts[i * cls.size() + j];
        out << "\n";
    }
}

} // namespace

void run_report(const std::vector<fs::path>& run_dirs, const fs::path& out_csv) {
    if (run_dirs.empty()) throw ConfigError("report: at least one run directory is required");
    std::map<std::tuple<std::string, std::string, int>,
             std::tuple<std::vector<double>, std::vector<double>, std::vector<double>, double>>
        groups;

    auto ingest = [&](const fs::path& dir) {
        auto rec = read_run_dir(dir);
        auto& [accs, f1s, times, pct] =
            groups[{rec.model, rec.strategy, rec.augs}];
        accs.push_back(rec.acc);
        f1s.push_back(rec.f1);
        times.push_back(rec.seconds);
        pct = rec.trainable_pct;
        write_confusion(dir);
    };

    for (const auto& dir : run_dirs) {
        if (!fs::exists(dir)) throw DataError("run directory does not exist: " + dir.string());
        bool has_folds = false;
        for (std::size_t f = 0;; ++f) {
            fs::path fold = dir / ("fold_" + std::to_string(f));
            if (!fs::exists(fold)) break;
            has_folds = true;
            ingest(fold);
        }
        if (!has_folds) ingest(dir);
    }

    std::vector<std::array<std::string, 9>> rows;
    for (const auto& [key, agg] : groups) {
        const auto& [accs, f1s, times, pct] = agg;
        rows.push_back(aggregate_row(std::get<0>(key), std::get<1>(key), std::get<2>(key), accs,
                                     f1s, times, pct));
    }
    write_summary_csv(out_csv, rows);
}

} // namespace dronetune::runner
