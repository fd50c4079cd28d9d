#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "dronetune/nn_ops.hpp"

namespace dronetune {

// Adapter state for the parameter-efficient strategies. Models consult an
// AdapterSet during forward; the peft module installs and registers the
// tensors. All three families are exact identities at initialization.

/// y = scale ⊙ x + shift along `axis`, broadcast over the rest.
template <typename T>
Tensor<T> ssf_apply(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                    std::size_t axis) {
    if (axis >= x.rank()) throw std::invalid_argument("ssf_apply: axis out of range");
    if (scale.size() != x.dim(axis) || shift.size() != x.dim(axis))
        throw std::invalid_argument("ssf_apply: vector length " + std::to_string(scale.size()) +
                                    " does not match axis extent " +
                                    std::to_string(x.dim(axis)));
    Shape bshape(x.rank(), 1);
    bshape[axis] = x.dim(axis);
    return add(mul(x, reshape(scale, bshape)), reshape(shift, bshape));
}

/// Expands packed upper-triangle parameters [b, p(p-1)/2] into skew-symmetric
/// matrices [b, p, p]; backward gathers dθ_ij = dS_ij − dS_ji.
template <typename T>
Tensor<T> skew_expand(const Tensor<T>& theta, std::size_t p) {
    std::size_t tri = p * (p - 1) / 2;
    if (theta.rank() != 2 || theta.dim(1) != tri)
        throw std::invalid_argument("skew_expand: parameters must be [blocks, p(p-1)/2]");
    std::size_t b = theta.dim(0);
    std::vector<T> out(b * p * p, T(0));
    const T* src = theta.values().data();
    for (std::size_t blk = 0; blk < b; ++blk) {
        std::size_t idx = 0;
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = i + 1; j < p; ++j, ++idx) {
                T v = src[blk * tri + idx];
                out[blk * p * p + i * p + j] = v;
                out[blk * p * p + j * p + i] = -v;
            }
    }
    return make_op<T>("skew_expand", {b, p, p}, std::move(out), {theta},
                      [b, p, tri](detail::Node<T>& nd) {
                          auto& nt = *nd.inputs[0];
                          for (std::size_t blk = 0; blk < b; ++blk) {
                              std::size_t idx = 0;
                              for (std::size_t i = 0; i < p; ++i)
                                  for (std::size_t j = i + 1; j < p; ++j, ++idx)
                                      nt.cot[blk * tri + idx] +=
                                          nd.cot[blk * p * p + i * p + j] -
                                          nd.cot[blk * p * p + j * p + i];
                          }
                      });
}

/// Cayley transform R = (I + S)(I − S)⁻¹ per block. Skew-symmetric S keeps R
/// orthogonal unconditionally; S = 0 gives R = I exactly.
template <typename T>
Tensor<T> cayley(const Tensor<T>& skew_upper, std::size_t p) {
    auto s = skew_expand(skew_upper, p);
    std::vector<T> eye(p * p, T(0));
    for (std::size_t i = 0; i < p; ++i) eye[i * p + i] = T(1);
    auto identity = Tensor<T>::from_data(std::move(eye), {p, p});
    auto plus = add(s, identity);
    auto minus = sub(identity, s);
    return matmul(plus, mat_inverse(minus));
}

/// Right-multiplies a [in, out] weight by the block-diagonal orthogonal
/// matrix derived from `skew_upper` ([blocks, p(p-1)/2], p = out/blocks):
/// the orthogonal rotation of the layer's output space.
template <typename T>
Tensor<T> oft_apply_weight(const Tensor<T>& w, const Tensor<T>& skew_upper,
                           std::size_t blocks) {
    if (w.rank() != 2) throw std::invalid_argument("oft_apply_weight: weight must be 2-D");
    std::size_t out = w.dim(1);
    if (blocks == 0 || out % blocks != 0)
        throw std::invalid_argument("oft_apply_weight: output width " + std::to_string(out) +
                                    " not divisible by block count " + std::to_string(blocks));
    std::size_t p = out / blocks;
    auto r = cayley(skew_upper, p); // [blocks, p, p]
    Tensor<T> result;
    for (std::size_t blk = 0; blk < blocks; ++blk) {
        auto wb = slice(w, 1, blk * p, p);
        auto rb = reshape(slice(r, 0, blk, 1), {p, p});
        auto rotated = matmul(wb, rb);
        result = blk == 0 ? rotated : concat(result, rotated, 1);
    }
    return result;
}

template <typename T>
struct SsfAdapter {
    Tensor<T> scale; // init 1
    Tensor<T> shift; // init 0
    std::size_t axis = 1;
};

template <typename T>
struct Ia3Adapter {
    Tensor<T> k;  // attention key scale, init 1
    Tensor<T> v;  // attention value scale, init 1
    Tensor<T> ff; // post-activation MLP scale, init 1
    Tensor<T> q;  // optional query scale (off-by-default variant)
};

template <typename T>
struct OftAdapter {
    // skew parameters per attention projection, [blocks, p(p-1)/2]
    Tensor<T> q, k, v, proj;
};

template <typename T>
struct AdapterSet {
    bool ssf = false;
    std::vector<std::pair<std::string, SsfAdapter<T>>> ssf_points;

    bool ia3 = false;
    bool ia3_scale_query = false;
    std::vector<Ia3Adapter<T>> ia3_blocks;

    bool oft = false;
    std::size_t oft_block_count = 4;
    std::vector<OftAdapter<T>> oft_layers;

    bool any() const { return ssf || ia3 || oft; }

    const SsfAdapter<T>* find_ssf(std::string_view name) const {
        if (!ssf) return nullptr;
        for (const auto& [n, a] : ssf_points)
            if (n == name) return &a;
        return nullptr;
    }

    /// Applies the SSF point when installed, otherwise passes through.
    Tensor<T> ssf_maybe(std::string_view name, const Tensor<T>& x) const {
        const auto* a = find_ssf(name);
        return a ? ssf_apply(x, a->scale, a->shift, a->axis) : x;
    }
};

} // namespace dronetune
