#pragma once

#include <functional>

#include "dronetune/tensor.hpp"

namespace dronetune {

// Central-difference verification of analytic gradients. Meant to run in the
// 64-bit mode; 32-bit central differences are unreliable.

/// Max over checked coordinates of |analytic - central| / max(1, |central|).
/// f must be a pure scalar-valued function of x re-evaluated on each call.
/// When max_coords is smaller than x.size(), a deterministic subset of
/// coordinates is sampled through rng.
template <typename T, typename F>
T finite_diff_check(F&& f, Tensor<T> x, T h, std::size_t max_coords = SIZE_MAX,
                    Rng* rng = nullptr) {
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor<T> y = f(x);
    y.backward();
    std::vector<T> analytic = x.grad();

    std::vector<std::size_t> coords;
    if (max_coords >= x.size()) {
        coords.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) coords[i] = i;
    } else {
        Rng fallback(17);
        Rng& r = rng ? *rng : fallback;
        for (std::size_t i = 0; i < max_coords; ++i)
            coords.push_back(static_cast<std::size_t>(r.uniform_int(x.size())));
    }

    T max_rel = T(0);
    auto& vals = x.values();
    for (std::size_t i : coords) {
        T orig = vals[i];
        vals[i] = orig + h;
        T fp = f(x).item();
        vals[i] = orig - h;
        T fm = f(x).item();
        vals[i] = orig;
        T central = (fp - fm) / (T(2) * h);
        T denom = std::max(T(1), std::abs(central));
        max_rel = std::max(max_rel, std::abs(analytic[i] - central) / denom);
    }
    return max_rel;
}

/// Same check against a set of already-registered parameters: loss_fn
/// rebuilds the loss from current parameter values, grads are compared per
/// sampled coordinate of each parameter.
template <typename T, typename F>
T finite_diff_check_params(F&& loss_fn, std::vector<Tensor<T>> params, T h,
                           std::size_t coords_per_param, Rng& rng) {
    for (auto& p : params) p.zero_grad();
    Tensor<T> loss = loss_fn();
    loss.backward();
    std::vector<std::vector<T>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    T max_rel = T(0);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi].values();
        std::size_t n_coords = std::min(coords_per_param, vals.size());
        for (std::size_t ci = 0; ci < n_coords; ++ci) {
            std::size_t i = coords_per_param >= vals.size()
                                ? ci
                                : static_cast<std::size_t>(rng.uniform_int(vals.size()));
            T orig = vals[i];
            vals[i] = orig + h;
            T fp = loss_fn().item();
            vals[i] = orig - h;
            T fm = loss_fn().item();
            vals[i] = orig;
            T central = (fp - fm) / (T(2) * h);
            T denom = std::max(T(1), std::abs(central));
            max_rel = std::max(max_rel, std::abs(analytic[pi][i] - central) / denom);
        }
    }
    return max_rel;
}

} // namespace dronetune
