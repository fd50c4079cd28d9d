#pragma once

#include <atomic>
#include <cstddef>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace dronetune::kernels {

// Hot inner loops, each in a serial reference version and an OpenMP version.
// Both compute every output element with the same sequential reduction
// order, so results are bit-identical between the two and independent of
// thread count. The dispatching entry points pick a version from the
// process-wide execution mode; bench/ compares them directly.

enum class Exec { Serial, Parallel };

inline std::atomic<Exec>& exec_flag() {
#if defined(_OPENMP)
    static std::atomic<Exec> mode{Exec::Parallel};
#else
    static std::atomic<Exec> mode{Exec::Serial};
#endif
    return mode;
}

inline Exec execution() { return exec_flag().load(std::memory_order_relaxed); }
inline void set_execution(Exec e) { exec_flag().store(e, std::memory_order_relaxed); }

inline bool parallel_enabled() {
#if defined(_OPENMP)
    return execution() == Exec::Parallel;
#else
    return false;
#endif
}

// ---------------------------------------------------------------------------
// GEMM: C(m×n) = op(A)·op(B), row-major, C overwritten.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
inline void gemm_rows(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                      const T* a, const T* b, T* c, std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
        if (!ta && !tb) {
            for (std::size_t l = 0; l < k; ++l) {
                T av = a[i * k + l];
                const T* brow = b + l * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        } else if (!ta && tb) {
            const T* arow = a + i * k;
            for (std::size_t j = 0; j < n; ++j) {
                const T* brow = b + j * k;
                T acc = T(0);
                for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
                crow[j] = acc;
            }
        } else if (ta && !tb) {
            for (std::size_t l = 0; l < k; ++l) {
                T av = a[l * m + i];
                const T* brow = b + l * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        } else {
            for (std::size_t j = 0; j < n; ++j) {
                T acc = T(0);
                for (std::size_t l = 0; l < k; ++l) acc += a[l * m + i] * b[j * k + l];
                crow[j] = acc;
            }
        }
    }
}

} // namespace detail

template <typename T>
void gemm_serial(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                 const T* a, const T* b, T* c) {
    detail::gemm_rows(ta, tb, m, n, k, a, b, c, 0, m);
}

template <typename T>
void gemm_parallel(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                   const T* a, const T* b, T* c) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) if (m * n * k >= 16384)
    for (long long i = 0; i < static_cast<long long>(m); ++i) {
        detail::gemm_rows(ta, tb, m, n, k, a, b, c, static_cast<std::size_t>(i),
                          static_cast<std::size_t>(i) + 1);
    }
#else
    gemm_serial(ta, tb, m, n, k, a, b, c);
#endif
}

template <typename T>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c) {
    if (parallel_enabled())
        gemm_parallel(ta, tb, m, n, k, a, b, c);
    else
        gemm_serial(ta, tb, m, n, k, a, b, c);
}

/// Batched GEMM over contiguous matrices.
template <typename T>
void gemm_batched(bool ta, bool tb, std::size_t batch, std::size_t m, std::size_t n,
                  std::size_t k, const T* a, const T* b, T* c) {
    const std::size_t sa = m * k, sb = k * n, sc = m * n;
#if defined(_OPENMP)
    if (parallel_enabled() && batch > 1) {
#pragma omp parallel for schedule(static) if (batch * m * n * k >= 16384)
        for (long long bi = 0; bi < static_cast<long long>(batch); ++bi) {
            gemm_serial(ta, tb, m, n, k, a + bi * sa, b + bi * sb, c + bi * sc);
        }
        return;
    }
#endif
    for (std::size_t bi = 0; bi < batch; ++bi)
        gemm(ta, tb, m, n, k, a + bi * sa, b + bi * sb, c + bi * sc);
}

// ---------------------------------------------------------------------------
// 3×3 convolution, stride 1, pad 1, NCHW. The only configuration the models
// use, so the kernels are specialized for it.
// ---------------------------------------------------------------------------

namespace detail {

// y[n,f] for one (n,f) pair; y row assumed zeroed by caller.
template <typename T>
inline void conv3x3_fwd_one(const T* x, const T* w, T* y, std::size_t ci,
                            std::size_t h, std::size_t wd, std::size_t n_idx,
                            std::size_t f, std::size_t co) {
    (void)co;
    T* yb = y;
    for (std::size_t c = 0; c < ci; ++c) {
        const T* xc = x + (n_idx * ci + c) * h * wd;
        const T* wf = w + (f * ci + c) * 9;
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t oy = 0; oy < h; ++oy) {
                std::size_t iy = oy + ky;
                if (iy < 1 || iy > h) continue;
                const T* xr = xc + (iy - 1) * wd;
                T* yr = yb + oy * wd;
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    T wv = wf[ky * 3 + kx];
                    std::size_t lo = (kx < 1) ? 1 : 0;
                    std::size_t hi = (kx > 1) ? wd - 1 : wd;
                    for (std::size_t ox = lo; ox < hi; ++ox)
                        yr[ox] += wv * xr[ox + kx - 1];
                }
            }
        }
    }
}

template <typename T>
inline void conv3x3_bwd_input_one(const T* dy, const T* w, T* dx, std::size_t ci,
                                  std::size_t h, std::size_t wd, std::size_t n_idx,
                                  std::size_t c, std::size_t co) {
    T* dxc = dx;
    for (std::size_t f = 0; f < co; ++f) {
        const T* dyf = dy + (n_idx * co + f) * h * wd;
        const T* wf = w + (f * ci + c) * 9;
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t iy = 0; iy < h; ++iy) {
                std::size_t oy = iy + 1;
                if (oy < ky || oy - ky >= h) continue;
                const T* dyr = dyf + (oy - ky) * wd;
                T* dxr = dxc + iy * wd;
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    T wv = wf[ky * 3 + kx];
                    std::size_t lo = (kx > 1) ? kx - 1 : 0;
                    std::size_t hi = (kx < 1) ? wd - 1 : wd;
                    for (std::size_t ix = lo; ix < hi; ++ix)
                        dxr[ix] += wv * dyr[ix + 1 - kx];
                }
            }
        }
    }
}

// dw[f,c,·,·]; accumulates over batch and space in fixed order.
template <typename T>
inline void conv3x3_bwd_weight_one(const T* x, const T* dy, T* dw, std::size_t n,
                                   std::size_t ci, std::size_t h, std::size_t wd,
                                   std::size_t f, std::size_t c, std::size_t co) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
            T acc = T(0);
            for (std::size_t ni = 0; ni < n; ++ni) {
                const T* xc = x + (ni * ci + c) * h * wd;
                const T* dyf = dy + (ni * co + f) * h * wd;
                for (std::size_t oy = 0; oy < h; ++oy) {
                    std::size_t iy = oy + ky;
                    if (iy < 1 || iy > h) continue;
                    const T* xr = xc + (iy - 1) * wd;
                    const T* dyr = dyf + oy * wd;
                    std::size_t lo = (kx < 1) ? 1 : 0;
                    std::size_t hi = (kx > 1) ? wd - 1 : wd;
                    for (std::size_t ox = lo; ox < hi; ++ox)
                        acc += dyr[ox] * xr[ox + kx - 1];
                }
            }
            dw[(f * ci + c) * 9 + ky * 3 + kx] = acc;
        }
    }
}

} // namespace detail

template <typename T>
void conv3x3_forward_serial(const T* x, const T* w, T* y, std::size_t n,
                            std::size_t ci, std::size_t h, std::size_t wd,
                            std::size_t co) {
    for (std::size_t i = 0; i < n * co * h * wd; ++i) y[i] = T(0);
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t f = 0; f < co; ++f)
            detail::conv3x3_fwd_one(x, w, y + (ni * co + f) * h * wd, ci, h, wd, ni, f, co);
}

template <typename T>
void conv3x3_forward_parallel(const T* x, const T* w, T* y, std::size_t n,
                              std::size_t ci, std::size_t h, std::size_t wd,
                              std::size_t co) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < static_cast<long long>(n * co); ++idx) {
        std::size_t ni = static_cast<std::size_t>(idx) / co;
        std::size_t f = static_cast<std::size_t>(idx) % co;
        T* yb = y + (ni * co + f) * h * wd;
        for (std::size_t i = 0; i < h * wd; ++i) yb[i] = T(0);
        detail::conv3x3_fwd_one(x, w, yb, ci, h, wd, ni, f, co);
    }
#else
    conv3x3_forward_serial(x, w, y, n, ci, h, wd, co);
#endif
}

template <typename T>
void conv3x3_forward(const T* x, const T* w, T* y, std::size_t n, std::size_t ci,
                     std::size_t h, std::size_t wd, std::size_t co) {
    if (parallel_enabled())
        conv3x3_forward_parallel(x, w, y, n, ci, h, wd, co);
    else
        conv3x3_forward_serial(x, w, y, n, ci, h, wd, co);
}

template <typename T>
void conv3x3_backward_input_serial(const T* dy, const T* w, T* dx, std::size_t n,
                                   std::size_t ci, std::size_t h, std::size_t wd,
                                   std::size_t co) {
    for (std::size_t i = 0; i < n * ci * h * wd; ++i) dx[i] = T(0);
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t c = 0; c < ci; ++c)
            detail::conv3x3_bwd_input_one(dy, w, dx + (ni * ci + c) * h * wd, ci, h, wd, ni, c, co);
}

template <typename T>
void conv3x3_backward_input_parallel(const T* dy, const T* w, T* dx, std::size_t n,
                                     std::size_t ci, std::size_t h, std::size_t wd,
                                     std::size_t co) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < static_cast<long long>(n * ci); ++idx) {
        std::size_t ni = static_cast<std::size_t>(idx) / ci;
        std::size_t c = static_cast<std::size_t>(idx) % ci;
        T* dxb = dx + (ni * ci + c) * h * wd;
        for (std::size_t i = 0; i < h * wd; ++i) dxb[i] = T(0);
        detail::conv3x3_bwd_input_one(dy, w, dxb, ci, h, wd, ni, c, co);
    }
#else
    conv3x3_backward_input_serial(dy, w, dx, n, ci, h, wd, co);
#endif
}

template <typename T>
void conv3x3_backward_input(const T* dy, const T* w, T* dx, std::size_t n,
                            std::size_t ci, std::size_t h, std::size_t wd,
                            std::size_t co) {
    if (parallel_enabled())
        conv3x3_backward_input_parallel(dy, w, dx, n, ci, h, wd, co);
    else
        conv3x3_backward_input_serial(dy, w, dx, n, ci, h, wd, co);
}

template <typename T>
void conv3x3_backward_weight_serial(const T* x, const T* dy, T* dw, std::size_t n,
                                    std::size_t ci, std::size_t h, std::size_t wd,
                                    std::size_t co) {
    for (std::size_t f = 0; f < co; ++f)
        for (std::size_t c = 0; c < ci; ++c)
            detail::conv3x3_bwd_weight_one(x, dy, dw, n, ci, h, wd, f, c, co);
}

template <typename T>
void conv3x3_backward_weight_parallel(const T* x, const T* dy, T* dw, std::size_t n,
                                      std::size_t ci, std::size_t h, std::size_t wd,
                                      std::size_t co) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < static_cast<long long>(co * ci); ++idx) {
        std::size_t f = static_cast<std::size_t>(idx) / ci;
        std::size_t c = static_cast<std::size_t>(idx) % ci;
        detail::conv3x3_bwd_weight_one(x, dy, dw, n, ci, h, wd, f, c, co);
    }
#else
    conv3x3_backward_weight_serial(x, dy, dw, n, ci, h, wd, co);
#endif
}

template <typename T>
void conv3x3_backward_weight(const T* x, const T* dy, T* dw, std::size_t n,
                             std::size_t ci, std::size_t h, std::size_t wd,
                             std::size_t co) {
    if (parallel_enabled())
        conv3x3_backward_weight_parallel(x, dy, dw, n, ci, h, wd, co);
    else
        conv3x3_backward_weight_serial(x, dy, dw, n, ci, h, wd, co);
}

} // namespace dronetune::kernels
