#pragma once

#include <cmath>
#include <optional>

#include "dronetune/tensor.hpp"

namespace dronetune {

// Layer-level differentiable ops on top of the tensor core.

/// 3×3 stride-1 pad-1 convolution, NCHW input, FCHW kernel. Output spatial
/// dims equal input dims. The models use no other configuration.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int padding = 1) {
    if (x.rank() != 4) throw std::invalid_argument("conv2d: input must be NCHW");
    if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3)
        throw std::invalid_argument("conv2d: kernel must be Fx C x3x3");
    if (padding != 1) throw std::invalid_argument("conv2d: only padding=1 is supported");
    if (w.dim(1) != x.dim(1))
        throw std::invalid_argument("conv2d: channel mismatch: input has " +
                                    std::to_string(x.dim(1)) + ", kernel expects " +
                                    std::to_string(w.dim(1)));
    std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3), co = w.dim(0);
    std::vector<T> out(n * co * h * wd);
    kernels::conv3x3_forward(x.values().data(), w.values().data(), out.data(), n, ci, h, wd, co);
    return make_op<T>("conv2d", {n, co, h, wd}, std::move(out), {x, w},
                      [n, ci, h, wd, co](detail::Node<T>& nd) {
                          auto& nx = *nd.inputs[0];
                          auto& nw = *nd.inputs[1];
                          if (nx.needs_grad) {
                              std::vector<T> dx(n * ci * h * wd);
                              kernels::conv3x3_backward_input(nd.cot.data(), nw.values.data(),
                                                              dx.data(), n, ci, h, wd, co);
                              detail::add_into(nx.cot.data(), dx.data(), dx.size());
                          }
                          if (nw.needs_grad) {
                              std::vector<T> dw(co * ci * 9);
                              kernels::conv3x3_backward_weight(nx.values.data(), nd.cot.data(),
                                                               dw.data(), n, ci, h, wd, co);
                              detail::add_into(nw.cot.data(), dw.data(), dw.size());
                          }
                      });
}

/// 2×2 max pooling, stride 2, floor semantics. Gradient flows to each
/// window's argmax only (first occurrence on ties).
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x) {
    if (x.rank() != 4) throw std::invalid_argument("max_pool2d: input must be NCHW");
    std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < 2 || w < 2) throw std::invalid_argument("max_pool2d: spatial dims must be >= 2");
    std::size_t oh = h / 2, ow = w / 2;
    std::vector<T> out(n * c * oh * ow);
    std::vector<std::size_t> argmax(out.size());
    const T* src = x.values().data();
    for (std::size_t nc = 0; nc < n * c; ++nc) {
        const T* plane = src + nc * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = (2 * oy) * w + 2 * ox;
                T bv = plane[best];
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
                        if (plane[idx] > bv) {
                            bv = plane[idx];
                            best = idx;
                        }
                    }
                out[nc * oh * ow + oy * ow + ox] = bv;
                argmax[nc * oh * ow + oy * ow + ox] = nc * h * w + best;
            }
        }
    }
    return make_op<T>("max_pool2d", {n, c, oh, ow}, std::move(out), {x},
                      [argmax = std::move(argmax)](detail::Node<T>& nd) {
                          auto& nx = *nd.inputs[0];
                          for (std::size_t i = 0; i < nd.size(); ++i)
                              nx.cot[argmax[i]] += nd.cot[i];
                      });
}

/// 2×2 average pooling, stride 2, floor semantics (config switch for the
/// pooling ambiguity in the CNN block).
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x) {
    if (x.rank() != 4) throw std::invalid_argument("avg_pool2d: input must be NCHW");
    std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < 2 || w < 2) throw std::invalid_argument("avg_pool2d: spatial dims must be >= 2");
    std::size_t oh = h / 2, ow = w / 2;
    std::vector<T> out(n * c * oh * ow);
    const T* src = x.values().data();
    for (std::size_t nc = 0; nc < n * c; ++nc) {
        const T* plane = src + nc * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                T acc = plane[(2 * oy) * w + 2 * ox] + plane[(2 * oy) * w + 2 * ox + 1] +
                        plane[(2 * oy + 1) * w + 2 * ox] + plane[(2 * oy + 1) * w + 2 * ox + 1];
                out[nc * oh * ow + oy * ow + ox] = acc * T(0.25);
            }
    }
    return make_op<T>("avg_pool2d", {n, c, oh, ow}, std::move(out), {x},
                      [h, w, oh, ow](detail::Node<T>& nd) {
                          auto& nx = *nd.inputs[0];
                          std::size_t planes = nd.size() / (oh * ow);
                          for (std::size_t nc = 0; nc < planes; ++nc)
                              for (std::size_t oy = 0; oy < oh; ++oy)
                                  for (std::size_t ox = 0; ox < ow; ++ox) {
                                      T g = nd.cot[nc * oh * ow + oy * ow + ox] * T(0.25);
                                      T* p = nx.cot.data() + nc * h * w;
                                      p[(2 * oy) * w + 2 * ox] += g;
                                      p[(2 * oy) * w + 2 * ox + 1] += g;
                                      p[(2 * oy + 1) * w + 2 * ox] += g;
                                      p[(2 * oy + 1) * w + 2 * ox + 1] += g;
                                  }
                      });
}

/// Adaptive average pooling to (oh, ow); window i covers
/// [floor(i·H/oh), ceil((i+1)·H/oh)).
template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, std::size_t oh, std::size_t ow) {
    if (x.rank() != 4) throw std::invalid_argument("adaptive_avg_pool2d: input must be NCHW");
    std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < oh || w < ow)
        throw std::invalid_argument("adaptive_avg_pool2d: input " + std::to_string(h) + "x" +
                                    std::to_string(w) + " smaller than target " +
                                    std::to_string(oh) + "x" + std::to_string(ow));
    auto lo = [](std::size_t i, std::size_t in, std::size_t out) { return i * in / out; };
    auto hi = [](std::size_t i, std::size_t in, std::size_t out) {
        return ((i + 1) * in + out - 1) / out;
    };
    std::vector<T> out(n * c * oh * ow);
    const T* src = x.values().data();
    for (std::size_t nc = 0; nc < n * c; ++nc) {
        const T* plane = src + nc * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            std::size_t y0 = lo(oy, h, oh), y1 = hi(oy, h, oh);
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t x0 = lo(ox, w, ow), x1 = hi(ox, w, ow);
                T acc = T(0);
                for (std::size_t iy = y0; iy < y1; ++iy)
                    for (std::size_t ix = x0; ix < x1; ++ix) acc += plane[iy * w + ix];
                out[nc * oh * ow + oy * ow + ox] =
                    acc / static_cast<T>((y1 - y0) * (x1 - x0));
            }
        }
    }
    return make_op<T>("adaptive_avg_pool2d", {n, c, oh, ow}, std::move(out), {x},
                      [h, w, oh, ow, lo, hi](detail::Node<T>& nd) {
                          auto& nx = *nd.inputs[0];
                          std::size_t planes = nd.size() / (oh * ow);
                          for (std::size_t nc = 0; nc < planes; ++nc) {
                              T* p = nx.cot.data() + nc * h * w;
                              for (std::size_t oy = 0; oy < oh; ++oy) {
                                  std::size_t y0 = lo(oy, h, oh), y1 = hi(oy, h, oh);
                                  for (std::size_t ox = 0; ox < ow; ++ox) {
                                      std::size_t x0 = lo(ox, w, ow), x1 = hi(ox, w, ow);
                                      T g = nd.cot[nc * oh * ow + oy * ow + ox] /
                                            static_cast<T>((y1 - y0) * (x1 - x0));
                                      for (std::size_t iy = y0; iy < y1; ++iy)
                                          for (std::size_t ix = x0; ix < x1; ++ix)
                                              p[iy * w + ix] += g;
                                  }
                              }
                          }
                      });
}

/// Per-channel running statistics owned by the model (buffers, not params).
template <typename T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);
};

/// 2-D batch norm over NCHW. Train mode normalizes by batch statistics and
/// updates running stats (unbiased var into the running estimate, biased for
/// normalization); eval mode uses running stats.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormState<T>& state, bool train) {
    if (x.rank() != 4) throw std::invalid_argument("batch_norm2d: input must be NCHW");
    std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (n == 0) throw std::invalid_argument("batch_norm2d: zero-size batch");
    if (gamma.size() != c || beta.size() != c || state.running_mean.size() != c ||
        state.running_var.size() != c)
        throw std::invalid_argument("batch_norm2d: per-channel parameter length != channels");
    std::size_t cnt = n * h * w;
    std::size_t plane = h * w;
    const T* src = x.values().data();
    std::vector<T> mean_c(c), invstd_c(c);
    if (train) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            T m = T(0);
            for (std::size_t ni = 0; ni < n; ++ni) {
                const T* p = src + (ni * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) m += p[i];
            }
            m /= static_cast<T>(cnt);
            T v = T(0);
            for (std::size_t ni = 0; ni < n; ++ni) {
                const T* p = src + (ni * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    T d = p[i] - m;
                    v += d * d;
                }
            }
            T var_biased = v / static_cast<T>(cnt);
            T var_unbiased = cnt > 1 ? v / static_cast<T>(cnt - 1) : var_biased;
            state.running_mean[ch] =
                (T(1) - state.momentum) * state.running_mean[ch] + state.momentum * m;
            state.running_var[ch] =
                (T(1) - state.momentum) * state.running_var[ch] + state.momentum * var_unbiased;
            mean_c[ch] = m;
            invstd_c[ch] = T(1) / std::sqrt(var_biased + state.eps);
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean_c[ch] = state.running_mean[ch];
            invstd_c[ch] = T(1) / std::sqrt(state.running_var[ch] + state.eps);
        }
    }
    std::vector<T> xhat(x.size());
    std::vector<T> out(x.size());
    const T* gm = gamma.values().data();
    const T* bt = beta.values().data();
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* p = src + (ni * c + ch) * plane;
            T* xh = xhat.data() + (ni * c + ch) * plane;
            T* po = out.data() + (ni * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mean_c[ch]) * invstd_c[ch];
                po[i] = gm[ch] * xh[i] + bt[ch];
            }
        }
    return make_op<T>(
        "batch_norm2d", x.shape(), std::move(out), {x, gamma, beta},
        [n, c, plane, cnt, train, xhat = std::move(xhat),
         invstd = std::move(invstd_c)](detail::Node<T>& nd) {
            auto& nx = *nd.inputs[0];
            auto& ng = *nd.inputs[1];
            auto& nb = *nd.inputs[2];
            const T* g = nd.cot.data();
            const T* gm = ng.values.data();
            for (std::size_t ch = 0; ch < c; ++ch) {
                T sum_g = T(0), sum_gx = T(0);
                for (std::size_t ni = 0; ni < n; ++ni) {
                    std::size_t base = (ni * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_g += g[base + i];
                        sum_gx += g[base + i] * xhat[base + i];
                    }
                }
                if (ng.needs_grad) ng.cot[ch] += sum_gx;
                if (nb.needs_grad) nb.cot[ch] += sum_g;
                if (nx.needs_grad) {
                    if (train) {
                        T inv_cnt = T(1) / static_cast<T>(cnt);
                        for (std::size_t ni = 0; ni < n; ++ni) {
                            std::size_t base = (ni * c + ch) * plane;
                            for (std::size_t i = 0; i < plane; ++i) {
                                T dxhat = g[base + i] * gm[ch];
                                nx.cot[base + i] +=
                                    invstd[ch] * (dxhat - inv_cnt * gm[ch] * sum_g -
                                                  inv_cnt * gm[ch] * sum_gx * xhat[base + i]);
                            }
                        }
                    } else {
                        for (std::size_t ni = 0; ni < n; ++ni) {
                            std::size_t base = (ni * c + ch) * plane;
                            for (std::size_t i = 0; i < plane; ++i)
                                nx.cot[base + i] += g[base + i] * gm[ch] * invstd[ch];
                        }
                    }
                }
            }
        });
}

/// Layer norm over the last axis (population variance), then affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    std::size_t d = x.dim(x.rank() - 1);
    if (gamma.size() != d || beta.size() != d)
        throw std::invalid_argument("layer_norm: affine parameter length != last axis");
    std::size_t rows = x.size() / d;
    std::vector<T> xhat(x.size()), out(x.size()), invstd(rows);
    const T* src = x.values().data();
    const T* gm = gamma.values().data();
    const T* bt = beta.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* p = src + r * d;
        T m = T(0);
        for (std::size_t i = 0; i < d; ++i) m += p[i];
        m /= static_cast<T>(d);
        T v = T(0);
        for (std::size_t i = 0; i < d; ++i) {
            T diff = p[i] - m;
            v += diff * diff;
        }
        v /= static_cast<T>(d);
        T is = T(1) / std::sqrt(v + eps);
        invstd[r] = is;
        T* xh = xhat.data() + r * d;
        T* po = out.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) {
            xh[i] = (p[i] - m) * is;
            po[i] = gm[i] * xh[i] + bt[i];
        }
    }
    return make_op<T>("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                      [rows, d, xhat = std::move(xhat),
                       invstd = std::move(invstd)](detail::Node<T>& nd) {
                          auto& nx = *nd.inputs[0];
                          auto& ng = *nd.inputs[1];
                          auto& nb = *nd.inputs[2];
                          const T* g = nd.cot.data();
                          const T* gm = ng.values.data();
                          for (std::size_t r = 0; r < rows; ++r) {
                              std::size_t base = r * d;
                              T sum_dxhat = T(0), sum_dxhat_x = T(0);
                              for (std::size_t i = 0; i < d; ++i) {
                                  T dxhat = g[base + i] * gm[i];
                                  sum_dxhat += dxhat;
                                  sum_dxhat_x += dxhat * xhat[base + i];
                                  if (ng.needs_grad) ng.cot[i] += g[base + i] * xhat[base + i];
                                  if (nb.needs_grad) nb.cot[i] += g[base + i];
                              }
                              if (nx.needs_grad) {
                                  T inv_d = T(1) / static_cast<T>(d);
                                  for (std::size_t i = 0; i < d; ++i) {
                                      T dxhat = g[base + i] * gm[i];
                                      nx.cot[base + i] +=
                                          invstd[r] * (dxhat - inv_d * sum_dxhat -
                                                       inv_d * xhat[base + i] * sum_dxhat_x);
                                  }
                              }
                          }
                      });
}

/// y = x·W + b with W of shape [in, out]; b broadcasts over leading axes.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    std::size_t in = w.dim(0), out = w.dim(1);
    if (x.dim(x.rank() - 1) != in)
        throw std::invalid_argument("linear: input width " + std::to_string(x.dim(x.rank() - 1)) +
                                    " != weight rows " + std::to_string(in));
    Shape flat{x.size() / in, in};
    Shape restore = x.shape();
    restore[restore.size() - 1] = out;
    auto y = matmul(reshape(x, flat), w);
    return add(reshape(y, restore), b);
}

/// softmax(Q·Kᵀ/√d)·V over the last two axes. Optional per-dimension scale
/// vectors are applied to K and V before use (IA3 hook); all-ones is exact
/// identity.
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const std::optional<Tensor<T>>& k_scale = std::nullopt,
                               const std::optional<Tensor<T>>& v_scale = std::nullopt) {
    std::size_t r = q.rank();
    if (r < 2) throw std::invalid_argument("attention: rank must be >= 2");
    std::size_t d = q.dim(r - 1);
    if (d == 0) throw std::invalid_argument("attention: head dimension is zero");
    if (k.dim(k.rank() - 1) != d || v.dim(v.rank() - 2) != k.dim(k.rank() - 2))
        throw std::invalid_argument("attention: Q/K/V shape mismatch");
    Tensor<T> kk = k_scale ? mul(k, *k_scale) : k;
    Tensor<T> vv = v_scale ? mul(v, *v_scale) : v;
    std::vector<std::size_t> perm(r);
    for (std::size_t i = 0; i < r; ++i) perm[i] = i;
    std::swap(perm[r - 1], perm[r - 2]);
    auto scores = scale(matmul(q, permute(kk, perm)), T(1) / std::sqrt(static_cast<T>(d)));
    return matmul(softmax(scores, -1), vv);
}

/// Batched inverse of small square matrices [..., p, p] by Gauss-Jordan with
/// partial pivoting. Backward: dX = -X⁻ᵀ·dY·X⁻ᵀ.
template <typename T>
Tensor<T> mat_inverse(const Tensor<T>& x) {
    std::size_t r = x.rank();
    if (r < 2 || x.dim(r - 1) != x.dim(r - 2))
        throw std::invalid_argument("mat_inverse: input must be [..., p, p]");
    std::size_t p = x.dim(r - 1);
    std::size_t batch = x.size() / (p * p);
    std::vector<T> inv(x.size());
    std::vector<T> a(p * p * 2);
    for (std::size_t b = 0; b < batch; ++b) {
        const T* src = x.values().data() + b * p * p;
        // augmented [A | I]
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < p; ++j) {
                a[i * 2 * p + j] = src[i * p + j];
                a[i * 2 * p + p + j] = (i == j) ? T(1) : T(0);
            }
        for (std::size_t col = 0; col < p; ++col) {
            std::size_t piv = col;
            T best = std::abs(a[col * 2 * p + col]);
            for (std::size_t i = col + 1; i < p; ++i) {
                T cand = std::abs(a[i * 2 * p + col]);
                if (cand > best) {
                    best = cand;
                    piv = i;
                }
            }
            if (!(best > T(1e-12)))
                throw NumericError("mat_inverse: matrix numerically singular");
            if (piv != col)
                for (std::size_t j = 0; j < 2 * p; ++j)
                    std::swap(a[piv * 2 * p + j], a[col * 2 * p + j]);
            T d = a[col * 2 * p + col];
            for (std::size_t j = 0; j < 2 * p; ++j) a[col * 2 * p + j] /= d;
            for (std::size_t i = 0; i < p; ++i) {
                if (i == col) continue;
                T f = a[i * 2 * p + col];
                if (f == T(0)) continue;
                for (std::size_t j = 0; j < 2 * p; ++j) a[i * 2 * p + j] -= f * a[col * 2 * p + j];
            }
        }
        T* dst = inv.data() + b * p * p;
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < p; ++j) dst[i * p + j] = a[i * 2 * p + p + j];
    }
    return make_op<T>("mat_inverse", x.shape(), std::move(inv), {x},
                      [batch, p](detail::Node<T>& nd) {
                          auto& nx = *nd.inputs[0];
                          const T* y = nd.values.data(); // X⁻¹
                          const T* g = nd.cot.data();
                          std::vector<T> yt(p * p), tmp(p * p), dx(p * p);
                          for (std::size_t b = 0; b < batch; ++b) {
                              const T* yb = y + b * p * p;
                              const T* gb = g + b * p * p;
                              for (std::size_t i = 0; i < p; ++i)
                                  for (std::size_t j = 0; j < p; ++j) yt[i * p + j] = yb[j * p + i];
                              kernels::gemm_serial(false, false, p, p, p, yt.data(), gb, tmp.data());
                              kernels::gemm_serial(false, false, p, p, p, tmp.data(), yt.data(),
                                                   dx.data());
                              for (std::size_t i = 0; i < p * p; ++i)
                                  nx.cot[b * p * p + i] -= dx[i];
                          }
                      });
}

} // namespace dronetune
