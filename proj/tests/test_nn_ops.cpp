#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dronetune/autodiff_check.hpp"
#include "dronetune/nn_ops.hpp"

using namespace dronetune;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, T lo = T(-2), T hi = T(2)) {
    std::vector<T> v(detail::numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return Tensor<T>::from_data(std::move(v), std::move(shape));
}

// Distinct per-window values keep maxpool argmax off ties.
template <typename T>
Tensor<T> ramped_tensor(Shape shape, Rng& rng) {
    std::vector<T> v(detail::numel(shape));
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = static_cast<T>(rng.uniform(-1, 1)) + static_cast<T>(i % 7) * T(0.37);
    return Tensor<T>::from_data(std::move(v), std::move(shape));
}

} // namespace

TEST_CASE("conv2d shape law and errors") {
    Rng rng(1);
    auto x = random_tensor<float>({2, 1, 64, 157}, rng);
    auto w = random_tensor<float>({16, 1, 3, 3}, rng);
    CHECK(conv2d(x, w).shape() == Shape{2, 16, 64, 157});

    auto wbad = random_tensor<float>({16, 3, 3, 3}, rng);
    CHECK_THROWS_AS(conv2d(x, wbad), std::invalid_argument); // channel mismatch
    CHECK_THROWS_AS(conv2d(x, w, 0), std::invalid_argument); // only pad 1
}

TEST_CASE("conv2d gradient vs finite differences (input and kernel)") {
    Rng rng(2);
    auto x = random_tensor<double>({2, 2, 5, 6}, rng);
    auto w = random_tensor<double>({3, 2, 3, 3}, rng);
    auto fx = [&w](const Tensor<double>& t) { return mean(conv2d(t, w)); };
    CHECK(finite_diff_check(fx, x, 1e-6) < 1e-7);
    auto fw = [&x](const Tensor<double>& t) { return mean(conv2d(x, t)); };
    CHECK(finite_diff_check(fw, w, 1e-6) < 1e-7);
}

TEST_CASE("max_pool2d basics") {
    auto x = Tensor<float>::from_data({1, 2, 3, 4}, {1, 1, 2, 2});
    auto y = max_pool2d(x);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.values()[0] == 4.0f);

    auto z = max_pool2d(Tensor<float>::zeros({1, 2, 4, 4}));
    for (float v : z.values()) CHECK(v == 0.0f);

    CHECK_THROWS_AS(max_pool2d(Tensor<float>::zeros({1, 1, 1, 4})), std::invalid_argument);
}

TEST_CASE("max_pool2d routes gradient to the argmax only") {
    auto x = Tensor<double>::from_data({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16},
                                       {1, 1, 4, 4});
    x.set_requires_grad(true);
    auto y = sum(max_pool2d(x));
    y.backward();
    std::vector<double> expect(16, 0.0);
    expect[5] = expect[7] = expect[13] = expect[15] = 1.0;
    CHECK(x.grad() == expect);
}

TEST_CASE("max_pool2d gradient vs finite differences away from ties") {
    Rng rng(3);
    auto x = ramped_tensor<double>({1, 2, 6, 6}, rng);
    auto f = [](const Tensor<double>& t) { return mean(max_pool2d(t)); };
    CHECK(finite_diff_check(f, x, 1e-7) < 1e-6);
}

TEST_CASE("avg_pool2d halves dims and averages") {
    auto x = Tensor<float>::from_data({1, 2, 3, 4}, {1, 1, 2, 2});
    CHECK(avg_pool2d(x).values()[0] == doctest::Approx(2.5f));
}

TEST_CASE("adaptive_avg_pool2d to 4x4") {
    Rng rng(4);
    auto x = random_tensor<double>({1, 3, 8, 19}, rng);
    auto y = adaptive_avg_pool2d(x, 4, 4);
    CHECK(y.shape() == Shape{1, 3, 4, 4});
    auto f = [](const Tensor<double>& t) { return mean(adaptive_avg_pool2d(t, 4, 4)); };
    CHECK(finite_diff_check(f, x, 1e-6) < 1e-7);

    // all-window mean equals global mean for a constant input
    auto c = Tensor<double>::full({1, 1, 9, 9}, 2.5);
    auto pooled = adaptive_avg_pool2d(c, 4, 4);
    for (double v : pooled.values()) CHECK(v == doctest::Approx(2.5));
}

TEST_CASE("batch_norm2d train mode: constant channel -> zeros") {
    auto x = Tensor<float>::full({4, 2, 3, 3}, 5.0f);
    auto gamma = Tensor<float>::full({2}, 1.0f);
    auto beta = Tensor<float>::zeros({2});
    BatchNormState<float> st{std::vector<float>(2, 0.0f), std::vector<float>(2, 1.0f)};
    auto y = batch_norm2d(x, gamma, beta, st, true);
    for (float v : y.values()) CHECK(v == doctest::Approx(0.0f).epsilon(1e-3));
    // running stats pulled toward batch stats
    CHECK(st.running_mean[0] == doctest::Approx(0.5f));
}

TEST_CASE("batch_norm2d eval mode with unit running stats is identity") {
    Rng rng(5);
    auto x = random_tensor<float>({2, 3, 4, 4}, rng);
    auto gamma = Tensor<float>::full({3}, 1.0f);
    auto beta = Tensor<float>::zeros({3});
    BatchNormState<float> st{std::vector<float>(3, 0.0f), std::vector<float>(3, 1.0f)};
    auto y = batch_norm2d(x, gamma, beta, st, false);
    for (std::size_t i = 0; i < y.size(); ++i)
        CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-4));
}

TEST_CASE("batch_norm2d gamma gradient vs finite differences, 32-bit tolerance") {
    Rng rng(6);
    auto x = random_tensor<float>({3, 2, 4, 4}, rng);
    auto gamma = Tensor<float>::from_data({1.3f, 0.8f}, {2});
    auto beta = Tensor<float>::from_data({0.1f, -0.2f}, {2});
    BatchNormState<float> st{std::vector<float>(2, 0.0f), std::vector<float>(2, 1.0f)};
    auto f = [&](const Tensor<float>& g) {
        BatchNormState<float> local = st; // keep running stats untouched per call
        return mean(mul(batch_norm2d(x, g, beta, local, true),
                        batch_norm2d(x, g, beta, local, true)));
    };
    CHECK(finite_diff_check(f, gamma, 1e-2f) < 1e-3f);
}

TEST_CASE("batch_norm2d full gradient in 64-bit (input, gamma, beta)") {
    Rng rng(7);
    auto x = random_tensor<double>({3, 2, 3, 5}, rng);
    auto gamma = Tensor<double>::from_data({1.1, 0.9}, {2});
    auto beta = Tensor<double>::from_data({0.2, -0.3}, {2});
    BatchNormState<double> st{std::vector<double>(2, 0.0), std::vector<double>(2, 1.0)};
    auto fx = [&](const Tensor<double>& t) {
        BatchNormState<double> local = st;
        auto y = batch_norm2d(t, gamma, beta, local, true);
        return mean(mul(y, y));
    };
    CHECK(finite_diff_check(fx, x, 1e-6) < 1e-6);
    auto fb = [&](const Tensor<double>& t) {
        BatchNormState<double> local = st;
        auto y = batch_norm2d(x, gamma, t, local, true);
        return mean(mul(y, y));
    };
    CHECK(finite_diff_check(fb, beta, 1e-6) < 1e-6);
}

TEST_CASE("batch_norm2d rejects zero batch and bad parameter lengths") {
    auto gamma = Tensor<float>::full({2}, 1.0f);
    auto beta = Tensor<float>::zeros({2});
    BatchNormState<float> st{std::vector<float>(2, 0.0f), std::vector<float>(2, 1.0f)};
    CHECK_THROWS_AS(batch_norm2d(Tensor<float>::zeros({0, 2, 2, 2}), gamma, beta, st, true),
                    std::invalid_argument);
    CHECK_THROWS_AS(batch_norm2d(Tensor<float>::zeros({1, 3, 2, 2}), gamma, beta, st, true),
                    std::invalid_argument);
}

TEST_CASE("layer_norm normalizes [1,2,3] to ±1.2247") {
    auto x = Tensor<double>::from_data({1, 2, 3}, {1, 3});
    auto gamma = Tensor<double>::full({3}, 1.0);
    auto beta = Tensor<double>::zeros({3});
    auto y = layer_norm(x, gamma, beta);
    CHECK(y.values()[0] == doctest::Approx(-1.2247).epsilon(1e-3));
    CHECK(y.values()[1] == doctest::Approx(0.0).epsilon(1e-3));
    CHECK(y.values()[2] == doctest::Approx(1.2247).epsilon(1e-3));

    // constant row -> zeros
    auto c = layer_norm(Tensor<double>::full({2, 4}, 3.0), Tensor<double>::full({4}, 1.0),
                        Tensor<double>::zeros({4}));
    for (double v : c.values()) CHECK(v == doctest::Approx(0.0));

    // gamma=2 doubles the normalized output
    auto y2 = layer_norm(x, Tensor<double>::full({3}, 2.0), beta);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(y2.values()[i] == doctest::Approx(2 * y.values()[i]));
}

TEST_CASE("layer_norm gradient vs finite differences") {
    Rng rng(8);
    auto x = random_tensor<double>({4, 6}, rng);
    auto gamma = random_tensor<double>({6}, rng, 0.5, 1.5);
    auto beta = random_tensor<double>({6}, rng, -0.5, 0.5);
    auto fx = [&](const Tensor<double>& t) {
        auto y = layer_norm(t, gamma, beta);
        return mean(mul(y, y));
    };
    CHECK(finite_diff_check(fx, x, 1e-6) < 1e-6);
    auto fg = [&](const Tensor<double>& t) {
        auto y = layer_norm(x, t, beta);
        return mean(mul(y, y));
    };
    CHECK(finite_diff_check(fg, gamma, 1e-6) < 1e-6);
}

TEST_CASE("attention: single token returns V row") {
    Rng rng(9);
    auto q = random_tensor<double>({1, 4}, rng);
    auto k = random_tensor<double>({1, 4}, rng);
    auto v = random_tensor<double>({1, 4}, rng);
    auto y = scaled_dot_attention(q, k, v);
    for (std::size_t i = 0; i < 4; ++i) CHECK(y.values()[i] == doctest::Approx(v.values()[i]));
}

TEST_CASE("attention: identical K rows give uniform weights") {
    Rng rng(10);
    auto q = random_tensor<double>({1, 4}, rng);
    std::vector<double> krow(4);
    for (auto& x : krow) x = rng.uniform(-1, 1);
    std::vector<double> kk = krow;
    kk.insert(kk.end(), krow.begin(), krow.end());
    auto k = Tensor<double>::from_data(kk, {2, 4});
    auto v = random_tensor<double>({2, 4}, rng);
    auto q2 = Tensor<double>::from_data({q.values()[0], q.values()[1], q.values()[2],
                                         q.values()[3], q.values()[0], q.values()[1],
                                         q.values()[2], q.values()[3]},
                                        {2, 4});
    auto y = scaled_dot_attention(q2, k, v);
    for (std::size_t i = 0; i < 4; ++i) {
        double meanv = 0.5 * (v.values()[i] + v.values()[4 + i]);
        CHECK(y.values()[i] == doctest::Approx(meanv));
    }
}

TEST_CASE("attention: all-ones IA3 scales are an exact identity") {
    Rng rng(11);
    auto q = random_tensor<double>({2, 3, 5, 4}, rng);
    auto k = random_tensor<double>({2, 3, 5, 4}, rng);
    auto v = random_tensor<double>({2, 3, 5, 4}, rng);
    std::optional<Tensor<double>> ones = Tensor<double>::full({4}, 1.0);
    auto base = scaled_dot_attention(q, k, v);
    auto scaled = scaled_dot_attention(q, k, v, ones, ones);
    CHECK(base.values() == scaled.values());
    CHECK_THROWS_AS(scaled_dot_attention(q, k, random_tensor<double>({2, 3, 4, 4}, rng)),
                    std::invalid_argument);
}

TEST_CASE("attention gradient vs finite differences") {
    Rng rng(12);
    auto q = random_tensor<double>({2, 3, 4}, rng);
    auto k = random_tensor<double>({2, 3, 4}, rng);
    auto v = random_tensor<double>({2, 3, 4}, rng);
    auto f = [&](const Tensor<double>& t) {
        auto y = scaled_dot_attention(t, k, v);
        return mean(mul(y, y));
    };
    CHECK(finite_diff_check(f, q, 1e-6) < 1e-6);
    auto fk = [&](const Tensor<double>& t) {
        auto y = scaled_dot_attention(q, t, v);
        return mean(mul(y, y));
    };
    CHECK(finite_diff_check(fk, k, 1e-6) < 1e-6);
}

TEST_CASE("mat_inverse inverts and differentiates") {
    auto eye = Tensor<double>::from_data({1, 0, 0, 1}, {2, 2});
    CHECK(mat_inverse(eye).values() == std::vector<double>{1, 0, 0, 1});

    Rng rng(13);
    // diagonally dominant, comfortably invertible
    std::vector<double> m(9);
    for (auto& x : m) x = rng.uniform(-0.3, 0.3);
    m[0] += 2.0;
    m[4] += 2.0;
    m[8] += 2.0;
    auto a = Tensor<double>::from_data(m, {1, 3, 3});
    auto inv = mat_inverse(a);
    std::vector<double> prod(9);
    kernels::gemm_serial(false, false, std::size_t(3), std::size_t(3), std::size_t(3),
                         a.values().data(), inv.values().data(), prod.data());
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(prod[i * 3 + j] == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));

    auto f = [](const Tensor<double>& t) {
        auto y = mat_inverse(t);
        return mean(mul(y, y));
    };
    CHECK(finite_diff_check(f, a, 1e-6) < 1e-6);

    CHECK_THROWS_AS(mat_inverse(Tensor<double>::zeros({2, 2})), NumericError);
}

TEST_CASE("linear layer composes matmul and broadcast bias") {
    Rng rng(14);
    auto x = random_tensor<double>({2, 5, 3}, rng);
    auto w = random_tensor<double>({3, 4}, rng);
    auto b = random_tensor<double>({4}, rng);
    auto y = linear(x, w, b);
    CHECK(y.shape() == Shape{2, 5, 4});
    auto f = [&](const Tensor<double>& t) { return mean(linear(x, w, t)); };
    CHECK(finite_diff_check(f, b, 1e-6) < 1e-7);
}
