#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dronetune/models.hpp"

namespace dronetune::train {

// Loss, optimizers, LR scheduling, the epoch loop with gradient
// accumulation, and metric computation.

enum class OptimKind { Adam, AdamW };

template <typename T>
struct OptimizerConfig {
    OptimKind kind = OptimKind::Adam;
    T lr = T(0.001);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0); // 0.01 decoupled for AdamW, 0 for Adam
};

/// Adam with bias correction; AdamW applies decoupled decay
/// θ ← θ − lr·wd·θ before the Adam update term. One state slot per
/// trainable parameter, nothing allocated for frozen ones.
template <typename T>
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor<T>> params, OptimizerConfig<T> cfg)
        : params_(std::move(params)), cfg_(cfg), lr_(cfg.lr) {
        slots_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            slots_[i].m.assign(params_[i].size(), T(0));
            slots_[i].v.assign(params_[i].size(), T(0));
        }
    }

    void step() {
        ++t_;
        T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(t_));
        T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& vals = params_[i].values();
            const auto& g = params_[i].grad();
            auto& m = slots_[i].m;
            auto& v = slots_[i].v;
            const bool decay = cfg_.kind == OptimKind::AdamW && cfg_.weight_decay > T(0);
            for (std::size_t j = 0; j < vals.size(); ++j) {
                if (decay) vals[j] -= lr_ * cfg_.weight_decay * vals[j];
                m[j] = cfg_.beta1 * m[j] + (T(1) - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (T(1) - cfg_.beta2) * g[j] * g[j];
                T mhat = m[j] / bc1;
                T vhat = v[j] / bc2;
                vals[j] -= lr_ * mhat / (std::sqrt(vhat) + cfg_.eps);
                if (!std::isfinite(static_cast<double>(vals[j])))
                    throw NumericError("optimizer produced a non-finite parameter value");
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    T lr() const { return lr_; }
    void set_lr(T lr) { lr_ = lr; }
    std::size_t n_slots() const { return slots_.size(); }
    long steps_taken() const { return t_; }

private:
    struct Slot {
        std::vector<T> m, v;
    };
    std::vector<Tensor<T>> params_;
    std::vector<Slot> slots_;
    OptimizerConfig<T> cfg_;
    T lr_;
    long t_ = 0;
};

template <typename T>
struct SchedulerConfig {
    T factor = T(0.1);
    T threshold = T(1e-4); // absolute improvement that resets the counter
    T min_lr = T(1e-6);
    int patience = 3;
};

/// Reduce-on-plateau over a monitored loss. The learning rate never
/// increases and floors at min_lr.
template <typename T>
class PlateauScheduler {
public:
    PlateauScheduler(SchedulerConfig<T> cfg, T initial_lr) : cfg_(cfg), lr_(initial_lr) {}

    /// Called once per epoch; returns the (possibly reduced) lr.
    T step(T monitored_loss) {
        if (monitored_loss < best_ - cfg_.threshold) {
            best_ = monitored_loss;
            bad_ = 0;
        } else if (++bad_ >= cfg_.patience) {
            lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
            bad_ = 0;
        }
        return lr_;
    }

    T lr() const { return lr_; }

private:
    SchedulerConfig<T> cfg_;
    T lr_;
    T best_ = std::numeric_limits<T>::infinity();
    int bad_ = 0;
};

/// Mean over the batch of −log softmax(logits)[label]; the gradient w.r.t.
/// logits is (softmax − one_hot)/B.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2)
        throw std::invalid_argument("cross_entropy: logits must be [batch, classes]");
    std::size_t b = logits.dim(0), c = logits.dim(1);
    if (labels.size() != b)
        throw std::invalid_argument("cross_entropy: labels length != batch size");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= c)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(l) +
                                        " outside [0, " + std::to_string(c) + ")");
    const T* z = logits.values().data();
    std::vector<T> soft(b * c);
    T loss = T(0);
    for (std::size_t i = 0; i < b; ++i) {
        const T* row = z + i * c;
        T mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T total = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            T e = std::exp(row[j] - mx);
            soft[i * c + j] = e;
            total += e;
        }
        T inv = T(1) / total;
        for (std::size_t j = 0; j < c; ++j) soft[i * c + j] *= inv;
        loss += std::log(total) + mx - row[labels[i]];
    }
    loss /= static_cast<T>(b);
    return make_op<T>("cross_entropy", {1}, {loss}, {logits},
                      [b, c, labels, soft = std::move(soft)](detail::Node<T>& nd) {
                          auto& nl = *nd.inputs[0];
                          T g = nd.cot[0] / static_cast<T>(b);
                          for (std::size_t i = 0; i < b; ++i)
                              for (std::size_t j = 0; j < c; ++j)
                                  nl.cot[i * c + j] +=
                                      g * (soft[i * c + j] -
                                           (static_cast<std::size_t>(labels[i]) == j ? T(1)
                                                                                     : T(0)));
                      });
}

// ---------------------------------------------------------------------------
// Datasets as borrowed views; the data module owns feature storage.
// ---------------------------------------------------------------------------

struct Example {
    std::span<const float> values; // rows × cols, row-major
    std::size_t rows = 0;
    std::size_t cols = 0;
    int label = 0;
};

using ExampleSet = std::vector<Example>;

template <typename T>
Tensor<T> make_batch(const ExampleSet& set, std::span<const std::size_t> idx) {
    if (idx.empty()) throw std::invalid_argument("make_batch: empty index list");
    std::size_t rows = set[idx[0]].rows, cols = set[idx[0]].cols;
    std::vector<T> v(idx.size() * rows * cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& ex = set[idx[i]];
        if (ex.rows != rows || ex.cols != cols)
            throw DataError("make_batch: mixed feature shapes in one dataset");
        for (std::size_t j = 0; j < rows * cols; ++j)
            v[i * rows * cols + j] = static_cast<T>(ex.values[j]);
    }
    return Tensor<T>::from_data(std::move(v), {idx.size(), 1, rows, cols});
}

struct MetricsReport {
    double loss = 0;
    double accuracy = 0;
    double f1 = 0; // macro-averaged
    double seconds = 0;
    double trainable_percent = 100.0;
};

/// Macro-F1 from a C×C confusion matrix (rows = truth, cols = prediction).
/// Classes absent from both prediction and truth contribute F1 = 0.
inline double macro_f1(const std::vector<std::size_t>& confusion, std::size_t c) {
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        std::size_t tp = confusion[k * c + k], fp = 0, fn = 0;
        for (std::size_t j = 0; j < c; ++j) {
            if (j != k) {
                fp += confusion[j * c + k];
                fn += confusion[k * c + j];
            }
        }
        double denom = static_cast<double>(2 * tp + fp + fn);
        total += denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    }
    return total / static_cast<double>(c);
}

template <typename T>
struct EvalResult {
    MetricsReport report;
    std::vector<int> predictions;
    std::vector<std::size_t> confusion; // truth-major C×C
};

template <typename T>
EvalResult<T> evaluate(Model<T>& model, const ExampleSet& set, std::size_t batch_size,
                       bool collect_predictions = false) {
    if (set.empty()) throw DataError("evaluate: empty split");
    std::size_t c = model.n_classes();
    EvalResult<T> res;
    res.confusion.assign(c * c, 0);
    if (collect_predictions) res.predictions.reserve(set.size());
    ForwardContext ctx{false, nullptr};
    double loss_sum = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        std::size_t end = std::min(set.size(), start + batch_size);
        idx.resize(end - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        auto batch = make_batch<T>(set, idx);
        std::vector<int> labels(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = set[idx[i]].label;
        auto logits = model.forward(batch, ctx);
        if (!logits.all_finite()) throw NumericError("evaluate: non-finite logits");
        auto loss = cross_entropy(logits, labels);
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
        const T* z = logits.values().data();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (z[i * c + j] > z[i * c + best]) best = j;
            res.confusion[static_cast<std::size_t>(labels[i]) * c + best] += 1;
            if (collect_predictions) res.predictions.push_back(static_cast<int>(best));
        }
    }
    std::size_t correct = 0;
    for (std::size_t k = 0; k < c; ++k) correct += res.confusion[k * c + k];
    res.report.loss = loss_sum / static_cast<double>(set.size());
    res.report.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
    res.report.f1 = macro_f1(res.confusion, c);
    return res;
}

struct TrainConfig {
    std::size_t batch_size = 8;
    std::size_t accumulation_steps = 2; // effective batch = 16
    int max_epochs = 50;
    int early_stop_patience = 10;
    std::uint64_t seed = 42;
};

/// One pass over the training set: gradients accumulate over
/// accumulation_steps micro-batches, scaled by 1/accumulation_steps, then
/// one optimizer step; a trailing partial group still steps. Grads are
/// zeroed after every step.
template <typename T>
MetricsReport train_epoch(Model<T>& model, const ExampleSet& set, AdamOptimizer<T>& opt,
                          const TrainConfig& cfg, int epoch) {
    if (set.empty()) throw DataError("train_epoch: empty dataset");
    std::vector<std::size_t> order(set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(Rng::mix(Rng::mix(cfg.seed, 0x5u), static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());
    Rng dropout_rng(Rng::mix(Rng::mix(cfg.seed, 0xDu), static_cast<std::uint64_t>(epoch)));
    ForwardContext ctx{true, &dropout_rng};

    std::size_t c = model.n_classes();
    std::vector<std::size_t> confusion(c * c, 0);
    double loss_sum = 0.0;
    std::size_t micro_batches = 0, in_group = 0;
    T inv_accum = T(1) / static_cast<T>(cfg.accumulation_steps);

    for (std::size_t start = 0; start < set.size(); start += cfg.batch_size) {
        std::size_t end = std::min(set.size(), start + cfg.batch_size);
        std::span<const std::size_t> idx(order.data() + start, end - start);
        auto batch = make_batch<T>(set, idx);
        std::vector<int> labels(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = set[idx[i]].label;
        auto logits = model.forward(batch, ctx);
        auto loss = cross_entropy(logits, labels);
        if (!loss.all_finite()) throw NumericError("train_epoch: non-finite loss");
        scale(loss, inv_accum).backward();
        loss_sum += static_cast<double>(loss.item());
        ++micro_batches;

        const T* z = logits.values().data();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (z[i * c + j] > z[i * c + best]) best = j;
            confusion[static_cast<std::size_t>(labels[i]) * c + best] += 1;
        }

        if (++in_group == cfg.accumulation_steps || end == set.size()) {
            opt.step();
            opt.zero_grad();
            in_group = 0;
        }
    }

    MetricsReport r;
    r.loss = loss_sum / static_cast<double>(micro_batches); // mean of micro-batch losses
    std::size_t correct = 0;
    for (std::size_t k = 0; k < c; ++k) correct += confusion[k * c + k];
    r.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
    r.f1 = macro_f1(confusion, c);
    return r;
}

/// Per-epoch metrics as JSON lines, one object per (epoch, split). The
/// `seconds` field is wall-clock and sits last so determinism checks can
/// strip it.
class JsonlLogger {
public:
    explicit JsonlLogger(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw DataError("cannot open metrics log: " + path.string());
    }

    void row(int epoch, std::string_view split, const MetricsReport& r, double lr,
             bool monitored) {
        nlohmann::ordered_json j;
        j["epoch"] = epoch;
        j["split"] = split;
        j["loss"] = r.loss;
        j["accuracy"] = r.accuracy;
        j["f1"] = r.f1;
        j["lr"] = lr;
        j["trainable_percent"] = r.trainable_percent;
        j["monitored"] = monitored;
        j["seconds"] = r.seconds;
        out_ << j.dump() << "\n";
    }

    void flush() { out_.flush(); }

private:
    std::ofstream out_;
};

template <typename T>
struct FitConfig {
    TrainConfig train;
    OptimizerConfig<T> optim;
    SchedulerConfig<T> sched;
};

struct FitResult {
    int best_epoch = 0;
    double best_accuracy = -1.0;
    double best_f1 = 0.0;
    double best_loss = std::numeric_limits<double>::infinity();
    int epochs_run = 0;
    double seconds = 0.0;
};

/// Full training run: scheduler and early stopping follow the monitored
/// split's loss; the checkpoint with the best monitored accuracy (ties:
/// lower loss, then earlier epoch) is restored into the model at the end.
template <typename T>
FitResult fit(Model<T>& model, const ExampleSet& train_set, const std::string& monitored_name,
              const ExampleSet& monitored_set,
              const std::vector<std::pair<std::string, const ExampleSet*>>& extra_evals,
              const FitConfig<T>& cfg, double trainable_percent, JsonlLogger* logger) {
    using clock = std::chrono::steady_clock;
    auto t0 = clock::now();
    auto seconds_since = [](clock::time_point a) {
        return std::chrono::duration<double>(clock::now() - a).count();
    };

    AdamOptimizer<T> opt(model.params().trainable_tensors(), cfg.optim);
    PlateauScheduler<T> sched(cfg.sched, cfg.optim.lr);
    FitResult res;
    std::map<std::string, std::vector<T>> best_state = model.params().snapshot();
    double best_monitor_loss = std::numeric_limits<double>::infinity();
    int stall = 0;

    for (int epoch = 1; epoch <= cfg.train.max_epochs; ++epoch) {
        auto te = clock::now();
        MetricsReport tr = train_epoch(model, train_set, opt, cfg.train, epoch);
        tr.seconds = seconds_since(te);
        tr.trainable_percent = trainable_percent;
        if (logger) logger->row(epoch, "train", tr, static_cast<double>(opt.lr()), false);

        auto tm = clock::now();
        auto ev = evaluate(model, monitored_set, cfg.train.batch_size);
        ev.report.seconds = seconds_since(tm);
        ev.report.trainable_percent = trainable_percent;
        if (logger)
            logger->row(epoch, monitored_name, ev.report, static_cast<double>(opt.lr()), true);

        for (const auto& [name, set] : extra_evals) {
            auto tx = clock::now();
            auto ex = evaluate(model, *set, cfg.train.batch_size);
            ex.report.seconds = seconds_since(tx);
            ex.report.trainable_percent = trainable_percent;
            if (logger) logger->row(epoch, name, ex.report, static_cast<double>(opt.lr()), false);
        }

        res.epochs_run = epoch;
        bool better = ev.report.accuracy > res.best_accuracy ||
                      (ev.report.accuracy == res.best_accuracy && ev.report.loss < res.best_loss);
        if (better) {
            res.best_accuracy = ev.report.accuracy;
            res.best_f1 = ev.report.f1;
            res.best_loss = ev.report.loss;
            res.best_epoch = epoch;
            best_state = model.params().snapshot();
        }

        opt.set_lr(sched.step(static_cast<T>(ev.report.loss)));

        if (ev.report.loss < best_monitor_loss - static_cast<double>(cfg.sched.threshold)) {
            best_monitor_loss = ev.report.loss;
            stall = 0;
        } else if (++stall >= cfg.train.early_stop_patience) {
            break;
        }
    }

    model.params().restore(best_state);
    res.seconds = seconds_since(t0);
    return res;
}

} // namespace dronetune::train
