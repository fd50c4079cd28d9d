#pragma once

#include <cstdio>
#include <optional>
#include <set>

#include "dronetune/models.hpp"

namespace dronetune::peft {

// The six fine-tuning strategies as parameter-masking plus layer-wrapping
// transforms. The classifier stays trainable under every strategy; base
// weights are frozen under the adapter strategies.

enum class Strategy { Full, ClassifierOnly, BatchNorm, Ssf, Ia3, Oft };

struct StrategyOptions {
    std::size_t oft_blocks = 4;
    bool ia3_scale_query = false; // the off-by-default "query" variant
    std::optional<std::set<std::string>> ssf_points; // restrict attach set
};

inline std::string_view strategy_name(Strategy s) {
    switch (s) {
    case Strategy::Full: return "full";
    case Strategy::ClassifierOnly: return "classifier_only";
    case Strategy::BatchNorm: return "batchnorm";
    case Strategy::Ssf: return "ssf";
    case Strategy::Ia3: return "ia3";
    default: return "oft";
    }
}

inline Strategy parse_strategy(std::string_view s) {
    if (s == "full") return Strategy::Full;
    if (s == "classifier_only" || s == "classifier") return Strategy::ClassifierOnly;
    if (s == "batchnorm") return Strategy::BatchNorm;
    if (s == "ssf") return Strategy::Ssf;
    if (s == "ia3") return Strategy::Ia3;
    if (s == "oft") return Strategy::Oft;
    throw ConfigError("unknown strategy: " + std::string(s));
}

/// Table II applicability: IA3 and OFT target attention, so transformer
/// only; batchnorm fine-tuning needs batchnorm layers, so CNN only.
inline bool applicable(Strategy s, ModelFamily f) {
    switch (s) {
    case Strategy::Ia3:
    case Strategy::Oft: return f == ModelFamily::Transformer;
    case Strategy::BatchNorm: return f == ModelFamily::Cnn;
    default: return true;
    }
}

struct ParamStats {
    std::size_t total = 0;
    std::size_t trainable = 0;
    double percent = 0.0; // 100·trainable/total, reported to two decimals

    std::string percent_str() const {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", percent);
        return buf;
    }
};

template <typename T>
ParamStats param_stats(const Model<T>& model) {
    ParamStats st;
    st.total = model.params().total_count();
    st.trainable = model.params().trainable_count();
    st.percent = st.total == 0 ? 0.0 : 100.0 * static_cast<double>(st.trainable) /
                                           static_cast<double>(st.total);
    return st;
}

namespace detail {

template <typename T>
void install_ssf(Model<T>& model, const StrategyOptions& opts) {
    auto attach = [&](const std::vector<std::tuple<std::string, std::size_t, std::size_t>>& pts) {
        for (const auto& [name, width, axis] : pts) {
            if (opts.ssf_points && !opts.ssf_points->count(name)) continue;
            SsfAdapter<T> a;
            a.axis = axis;
            a.scale = model.params().add("adapter.ssf." + name + ".scale",
                                         Tensor<T>::full({width}, T(1)), true);
            a.shift = model.params().add("adapter.ssf." + name + ".shift",
                                         Tensor<T>::zeros({width}), true);
            model.adapters.ssf_points.emplace_back(name, std::move(a));
        }
    };
    if (auto* cnn = dynamic_cast<CompactCnn<T>*>(&model)) {
        attach(cnn->ssf_attach_points());
    } else if (auto* tf = dynamic_cast<SpecTransformer<T>*>(&model)) {
        attach(tf->ssf_attach_points());
    }
    if (model.adapters.ssf_points.empty())
        throw ConfigError("ssf: attach set resolved to no points");
    model.adapters.ssf = true;
}

template <typename T>
void install_ia3(Model<T>& model, const StrategyOptions& opts) {
    auto* tf = dynamic_cast<SpecTransformer<T>*>(&model);
    const auto& cfg = tf->config();
    model.adapters.ia3_blocks.resize(cfg.depth);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        std::string p = "adapter.ia3.blocks." + std::to_string(i) + ".";
        auto& a = model.adapters.ia3_blocks[i];
        a.k = model.params().add(p + "k", Tensor<T>::full({cfg.embed_dim}, T(1)), true);
        a.v = model.params().add(p + "v", Tensor<T>::full({cfg.embed_dim}, T(1)), true);
        a.ff = model.params().add(p + "ff",
                                  Tensor<T>::full({cfg.embed_dim * cfg.mlp_ratio}, T(1)), true);
        if (opts.ia3_scale_query)
            a.q = model.params().add(p + "q", Tensor<T>::full({cfg.embed_dim}, T(1)), true);
    }
    model.adapters.ia3 = true;
    model.adapters.ia3_scale_query = opts.ia3_scale_query;
}

template <typename T>
void install_oft(Model<T>& model, const StrategyOptions& opts) {
    auto* tf = dynamic_cast<SpecTransformer<T>*>(&model);
    const auto& cfg = tf->config();
    if (opts.oft_blocks == 0 || cfg.embed_dim % opts.oft_blocks != 0)
        throw ConfigError("oft: embed_dim " + std::to_string(cfg.embed_dim) +
                          " not divisible by block count " + std::to_string(opts.oft_blocks));
    std::size_t p = cfg.embed_dim / opts.oft_blocks;
    std::size_t tri = p * (p - 1) / 2;
    model.adapters.oft_layers.resize(cfg.depth);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        std::string pre = "adapter.oft.blocks." + std::to_string(i) + ".";
        auto& a = model.adapters.oft_layers[i];
        auto zeros = [&] { return Tensor<T>::zeros({opts.oft_blocks, tri}); };
        a.q = model.params().add(pre + "q.skew", zeros(), true);
        a.k = model.params().add(pre + "k.skew", zeros(), true);
        a.v = model.params().add(pre + "v.skew", zeros(), true);
        a.proj = model.params().add(pre + "proj.skew", zeros(), true);
    }
    model.adapters.oft = true;
    model.adapters.oft_block_count = opts.oft_blocks;
}

} // namespace detail

/// Applies a fine-tuning strategy: freezes/unfreezes per the strategy,
/// installs adapters where required, and returns the trainable mask over the
/// parameter registry. Must be applied once, to a freshly built model.
template <typename T>
std::vector<std::pair<std::string, bool>> apply_strategy(Model<T>& model, Strategy strategy,
                                                         const StrategyOptions& opts = {}) {
    if (!applicable(strategy, model.family()))
        throw ConfigError("strategy '" + std::string(strategy_name(strategy)) +
                          "' is not applicable to model family '" +
                          std::string(family_name(model.family())) + "'");
    if (model.adapters.any())
        throw ConfigError("apply_strategy: model already has adapters installed");

    switch (strategy) {
    case Strategy::Full:
        model.params().set_all_trainable(true);
        break;
    case Strategy::ClassifierOnly:
        model.params().set_all_trainable(false);
        break;
    case Strategy::BatchNorm: {
        model.params().set_all_trainable(false);
        auto* cnn = dynamic_cast<CompactCnn<T>*>(&model);
        for (const auto& n : cnn->batchnorm_param_names()) model.params().set_trainable(n, true);
        break;
    }
    case Strategy::Ssf:
        model.params().set_all_trainable(false);
        detail::install_ssf(model, opts);
        break;
    case Strategy::Ia3:
        model.params().set_all_trainable(false);
        detail::install_ia3(model, opts);
        break;
    case Strategy::Oft:
        model.params().set_all_trainable(false);
        detail::install_oft(model, opts);
        break;
    }

    // classifier parameters stay trainable under every strategy
    for (const auto& n : model.classifier_param_names()) model.params().set_trainable(n, true);

    std::vector<std::pair<std::string, bool>> mask;
    for (const auto& e : model.params().entries()) mask.emplace_back(e.name, e.trainable);
    return mask;
}

/// Max over all OFT blocks of ‖RᵀR − I‖∞, re-deriving R from current skew
/// parameters. Zero (to fp rounding) by construction.
template <typename T>
T oft_orthogonality_error(Model<T>& model) {
    if (!model.adapters.oft) throw ConfigError("oft_orthogonality_error: no OFT adapters");
    auto* tf = dynamic_cast<SpecTransformer<T>*>(&model);
    std::size_t d = tf->config().embed_dim;
    std::size_t blocks = model.adapters.oft_block_count;
    std::size_t p = d / blocks;
    T worst = T(0);
    for (auto& layer : model.adapters.oft_layers) {
        for (const Tensor<T>* skew : {&layer.q, &layer.k, &layer.v, &layer.proj}) {
            auto r = cayley(*skew, p); // [blocks, p, p]
            for (std::size_t blk = 0; blk < blocks; ++blk) {
                const T* rb = r.values().data() + blk * p * p;
                for (std::size_t i = 0; i < p; ++i)
                    for (std::size_t j = 0; j < p; ++j) {
                        T acc = T(0);
                        for (std::size_t l = 0; l < p; ++l)
                            acc += rb[l * p + i] * rb[l * p + j]; // (RᵀR)_ij
                        T target = (i == j) ? T(1) : T(0);
                        worst = std::max(worst, std::abs(acc - target));
                    }
            }
        }
    }
    return worst;
}

} // namespace dronetune::peft
