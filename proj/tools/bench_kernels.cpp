// Benchmark comparing the serial reference kernels against the OpenMP
// versions: GEMM, the 3x3 convolution kernels, and the STFT frame loop.
// Outputs are checked bit-identical while timing.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "dronetune/dsp.hpp"
#include "dronetune/kernels.hpp"
#include "dronetune/rng.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

using namespace dronetune;

namespace {

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

template <typename F>
double best_of(int reps, F&& fn) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        double t0 = now_s();
        fn();
        best = std::min(best, now_s() - t0);
    }
    return best;
}

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    return v;
}

bool report(const char* name, double serial_s, double parallel_s, double gflop,
            bool bitexact) {
    std::printf("%-22s %9.2f ms %9.2f ms  x%4.2f  %7.2f GF/s  %s\n", name, serial_s * 1e3,
                parallel_s * 1e3, serial_s / parallel_s, gflop / parallel_s,
                bitexact ? "bit-exact" : "MISMATCH");
    return bitexact;
}

} // namespace

int main(int argc, char** argv) {
    bool quick = false;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--quick") == 0) quick = true;

    int reps = quick ? 2 : 5;
    Rng rng(42);
    bool all_ok = true;

#if defined(_OPENMP)
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("openmp: not enabled in this build\n");
#endif
    std::printf("%-22s %12s %12s %6s %13s\n", "kernel", "serial", "parallel", "speed", "rate");

    {
        std::size_t n = quick ? 192 : 512;
        auto a = random_vec(n * n, rng);
        auto b = random_vec(n * n, rng);
        std::vector<float> cs(n * n), cp(n * n);
        double ts = best_of(reps, [&] {
            kernels::gemm_serial(false, false, n, n, n, a.data(), b.data(), cs.data());
        });
        double tp = best_of(reps, [&] {
            kernels::gemm_parallel(false, false, n, n, n, a.data(), b.data(), cp.data());
        });
        all_ok &= report(("gemm " + std::to_string(n) + "^3").c_str(), ts, tp,
                         2.0 * n * n * n / 1e9, cs == cp);
    }

    {
        std::size_t bn = quick ? 4 : 8, ci = 16, h = 64, w = 63, co = 32;
        auto x = random_vec(bn * ci * h * w, rng);
        auto k = random_vec(co * ci * 9, rng);
        std::vector<float> ys(bn * co * h * w), yp(ys.size());
        double gflop = 2.0 * bn * co * ci * 9.0 * h * w / 1e9;
        double ts = best_of(reps, [&] {
            kernels::conv3x3_forward_serial(x.data(), k.data(), ys.data(), bn, ci, h, w, co);
        });
        double tp = best_of(reps, [&] {
            kernels::conv3x3_forward_parallel(x.data(), k.data(), yp.data(), bn, ci, h, w, co);
        });
        all_ok &= report("conv3x3 fwd", ts, tp, gflop, ys == yp);

        auto dy = random_vec(bn * co * h * w, rng);
        std::vector<float> dxs(bn * ci * h * w), dxp(dxs.size());
        ts = best_of(reps, [&] {
            kernels::conv3x3_backward_input_serial(dy.data(), k.data(), dxs.data(), bn, ci, h, w,
                                                   co);
        });
        tp = best_of(reps, [&] {
            kernels::conv3x3_backward_input_parallel(dy.data(), k.data(), dxp.data(), bn, ci, h,
                                                     w, co);
        });
        all_ok &= report("conv3x3 bwd input", ts, tp, gflop, dxs == dxp);

        std::vector<float> dws(co * ci * 9), dwp(dws.size());
        ts = best_of(reps, [&] {
            kernels::conv3x3_backward_weight_serial(x.data(), dy.data(), dws.data(), bn, ci, h,
                                                    w, co);
        });
        tp = best_of(reps, [&] {
            kernels::conv3x3_backward_weight_parallel(x.data(), dy.data(), dwp.data(), bn, ci, h,
                                                      w, co);
        });
        all_ok &= report("conv3x3 bwd weight", ts, tp, gflop, dws == dwp);
    }

    {
        std::size_t n = quick ? 16000 : 80000;
        auto x = random_vec(n, rng);
        auto prev = kernels::execution();
        dsp::ComplexFrames fs_out, fp_out;
        kernels::set_execution(kernels::Exec::Serial);
        double ts = best_of(reps, [&] { fs_out = dsp::stft(x, 1024, 512); });
        kernels::set_execution(kernels::Exec::Parallel);
        double tp = best_of(reps, [&] { fp_out = dsp::stft(x, 1024, 512); });
        kernels::set_execution(prev);
        bool same = fs_out.c == fp_out.c;
        std::size_t frames = 1 + n / 512;
        // 5 n log2(n) per FFT as the usual estimate
        double gflop = frames * 5.0 * 1024.0 * 10.0 / 1e9;
        all_ok &= report("stft 1024/512", ts, tp, gflop, same);
    }

    if (!all_ok) {
        std::printf("FAILURE: parallel kernels diverged from serial reference\n");
        return 1;
    }
    return 0;
}
