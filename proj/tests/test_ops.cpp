#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "aanc/ops.hpp"
#include "aanc/tape.hpp"
#include "aanc/tensor.hpp"
#include "testutil.hpp"

using namespace aanc;
using testutil::gradcheck;
using testutil::random_tensor;

// ---------------------------------------------------------------------------
// Reference implementations (independent oracles, loops only)
// ---------------------------------------------------------------------------

static Tensor conv_ref(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), K = w.dim(2);
    const int OH = (H + 2 * pad - K) / stride + 1;
    const int OW = (W + 2 * pad - K) / stride + 1;
    Tensor out({B, Cout, OH, OW});
    for (int n = 0; n < B; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double acc = b.data()[co];
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int kh = 0; kh < K; ++kh)
                            for (int kw = 0; kw < K; ++kw) {
                                const int ih = oh * stride - pad + kh;
                                const int iw = ow * stride - pad + kw;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x.at({n, ci, ih, iw}) * w.at({co, ci, kh, kw});
                            }
                    out.at({n, co, oh, ow}) = acc;
                }
    return out;
}

static Tensor dwconv_ref(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int K = w.dim(2);
    const int OH = (H + 2 * pad - K) / stride + 1;
    const int OW = (W + 2 * pad - K) / stride + 1;
    Tensor out({B, C, OH, OW});
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double acc = b.data()[c];
                    for (int kh = 0; kh < K; ++kh)
                        for (int kw = 0; kw < K; ++kw) {
                            const int ih = oh * stride - pad + kh;
                            const int iw = ow * stride - pad + kw;
                            if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                            acc += x.at({n, c, ih, iw}) * w.at({c, 0, kh, kw});
                        }
                    out.at({n, c, oh, ow}) = acc;
                }
    return out;
}

static Tensor matmul_ref(const Tensor& a, const Tensor& b) {
    const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
    Tensor out({M, N});
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += a.at({i, k}) * b.at({k, j});
            out.at({i, j}) = acc;
        }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

TEST_CASE("conv2d: all-ones 3x3 kernel over all-ones 3x3 input sums to 9") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor b = Tensor::zeros({1});
    Tensor y = conv2d(x, w, b, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 9.0);
}

TEST_CASE("conv2d: 1x1 unit kernel is the identity map") {
    std::mt19937_64 rng(7);
    Tensor x = random_tensor({2, 3, 4, 5}, rng);
    Tensor w = Tensor::zeros({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) w.at({c, c, 0, 0}) = 1.0;
    Tensor y = conv2d(x, w, Tensor::zeros({3}), 1, 0);
    CHECK(testutil::bit_identical(y, x));
}

TEST_CASE("conv2d matches the quadruple-loop oracle") {
    std::mt19937_64 rng(11);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor got = conv2d(x, w, b, 1, 1);
    Tensor want = conv_ref(x, w, b, 1, 1);
    REQUIRE(got.shape() == want.shape());
    CHECK(testutil::max_abs_diff(got, want) <= 1e-12);

    // strided case
    Tensor xs = random_tensor({2, 3, 7, 7}, rng);
    Tensor ws = random_tensor({4, 3, 3, 3}, rng);
    Tensor bs = random_tensor({4}, rng);
    CHECK(testutil::max_abs_diff(conv2d(xs, ws, bs, 2, 1), conv_ref(xs, ws, bs, 2, 1)) <= 1e-12);
}

TEST_CASE("conv2d rejects bad geometry") {
    Tensor x = Tensor::zeros({1, 2, 5, 5});
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 4, 3, 3}), Tensor::zeros({3}), 1, 0), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 2, 3, 3}), Tensor::zeros({7}), 1, 0), ShapeError);
    // (5 - 3) not divisible by stride 2 leaves a ragged output extent
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 6, 6}), Tensor::zeros({3, 2, 3, 3}),
                           Tensor::zeros({3}), 2, 0),
                    ConfigError);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 2, 4, 4}), Tensor::zeros({3}), 1, 0), ConfigError);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 2, 3, 3}), Tensor::zeros({3}), 1, -1), ConfigError);
}

TEST_CASE("conv2d gradients match finite differences") {
    std::mt19937_64 rng(13);
    Tensor x = random_tensor({2, 2, 4, 4}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    auto res = gradcheck([&] { return sum_all(mul(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1))); },
                         {x, w, b});
    CHECK(res.max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// depthwise_conv2d
// ---------------------------------------------------------------------------

TEST_CASE("depthwise: all-ones kernels on constant-1 input give constant 9") {
    Tensor x = Tensor::full({1, 2, 5, 5}, 1.0);
    Tensor w = Tensor::full({2, 1, 3, 3}, 1.0);
    Tensor y = depthwise_conv2d(x, w, Tensor::zeros({2}), 1, 0);
    REQUIRE(y.shape() == Shape{1, 2, 3, 3});
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 9.0);
}

TEST_CASE("depthwise: zeroing input channel 0 zeroes only output channel 0") {
    std::mt19937_64 rng(17);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({2, 1, 3, 3}, rng);
    Tensor b = Tensor::zeros({2});
    Tensor base = depthwise_conv2d(x, w, b, 1, 1);
    Tensor x0 = x.clone();
    for (int i = 0; i < 5 * 5; ++i) x0.data()[i] = 0.0;
    Tensor got = depthwise_conv2d(x0, w, b, 1, 1);
    for (int i = 0; i < 5 * 5; ++i) {
        CHECK(got.data()[i] == 0.0);                       // channel 0 gone
        CHECK(got.data()[25 + i] == base.data()[25 + i]);  // channel 1 untouched
    }
}

TEST_CASE("depthwise matches the per-channel loop oracle") {
    std::mt19937_64 rng(19);
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    Tensor w = random_tensor({3, 1, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    CHECK(testutil::max_abs_diff(depthwise_conv2d(x, w, b, 1, 1), dwconv_ref(x, w, b, 1, 1)) <=
          1e-12);
}

TEST_CASE("depthwise gradients match finite differences") {
    std::mt19937_64 rng(23);
    Tensor x = random_tensor({1, 2, 4, 4}, rng);
    Tensor w = random_tensor({2, 1, 3, 3}, rng);
    Tensor b = random_tensor({2}, rng);
    auto res = gradcheck([&] { return mean_all(mul(depthwise_conv2d(x, w, b, 1, 1),
                                                   depthwise_conv2d(x, w, b, 1, 1))); },
                         {x, w, b});
    CHECK(res.max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

TEST_CASE("matmul: identity times A returns A; 1x1 is scalar product") {
    std::mt19937_64 rng(29);
    Tensor a = random_tensor({3, 3}, rng);
    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
    CHECK(testutil::max_abs_diff(matmul(eye, a), a) == 0.0);

    Tensor p = matmul(Tensor::full({1, 1}, 3.0), Tensor::full({1, 1}, -2.0));
    CHECK(p.item() == -6.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
    std::mt19937_64 rng(31);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    CHECK(testutil::max_abs_diff(matmul(a, b), matmul_ref(a, b)) <= 1e-12);
}

TEST_CASE("batched matmul broadcasts a shared rank-2 rhs") {
    std::mt19937_64 rng(37);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor w = random_tensor({4, 5}, rng);
    Tensor y = matmul(a, w);
    REQUIRE(y.shape() == Shape{2, 3, 5});
    for (int s = 0; s < 2; ++s) {
        Tensor slice = Tensor::zeros({3, 4});
        std::copy(a.data() + s * 12, a.data() + (s + 1) * 12, slice.data());
        Tensor want = matmul_ref(slice, w);
        for (int i = 0; i < 15; ++i) {
            CHECK(y.data()[s * 15 + i] == doctest::Approx(want.data()[i]).epsilon(1e-13));
        }
    }
    CHECK_THROWS_AS(matmul(a, random_tensor({5, 4}, rng)), ShapeError);
}

TEST_CASE("matmul gradients (shared and batched rhs) match finite differences") {
    std::mt19937_64 rng(41);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor w = random_tensor({4, 2}, rng);
    CHECK(gradcheck([&] { return sum_all(mul(matmul(a, w), matmul(a, w))); }, {a, w}).max_rel_err <
          1e-6);
    Tensor bb = random_tensor({2, 4, 2}, rng);
    CHECK(gradcheck([&] { return sum_all(mul(matmul(a, bb), matmul(a, bb))); }, {a, bb}).max_rel_err <
          1e-6);
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

TEST_CASE("softmax: equal logits are uniform, extreme logits saturate") {
    Tensor x = Tensor::full({1, 4}, 0.7);
    Tensor y = softmax(x, 1);
    for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(0.25).epsilon(1e-15));

    Tensor hot = Tensor::from_data({1, 2}, {0.0, 1000.0});
    Tensor yh = softmax(hot, 1);
    CHECK(yh.data()[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(yh.data()[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax matches the extended-precision exp/sum oracle") {
    std::mt19937_64 rng(43);
    Tensor x = random_tensor({1, 9}, rng, -5.0, 5.0);
    Tensor y = softmax(x, 1);
    long double sum = 0.0L;
    std::vector<long double> e(9);
    for (int i = 0; i < 9; ++i) {
        e[static_cast<std::size_t>(i)] = expl(static_cast<long double>(x.data()[i]));
        sum += e[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < 9; ++i) {
        CHECK(y.data()[i] ==
              doctest::Approx(static_cast<double>(e[static_cast<std::size_t>(i)] / sum)).epsilon(1e-13));
    }
}

TEST_CASE("softmax rows sum to one, lie in (0,1), and are shift-invariant") {
    std::mt19937_64 rng(47);
    for (int seed = 0; seed < 20; ++seed) {
        Tensor x = random_tensor({3, 7}, rng, -20.0, 20.0);
        Tensor y = softmax(x, 1);
        for (int r = 0; r < 3; ++r) {
            double s = 0.0;
            for (int c = 0; c < 7; ++c) {
                const double v = y.at({r, c});
                CHECK(v > 0.0);
                CHECK(v < 1.0);
                s += v;
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
        // exactly representable shifts leave the output bit-identical
        Tensor shifted = softmax(add_scalar(x, 4096.0), 1);
        CHECK(testutil::max_abs_diff(y, shifted) <= 1e-12);
    }
    // integer logits shifted by an integer: x+c is exact, so outputs match bitwise
    Tensor xi = Tensor::from_data({1, 4}, {1.0, -3.0, 2.0, 0.0});
    CHECK(testutil::bit_identical(softmax(xi, 1), softmax(add_scalar(xi, 16.0), 1)));
}

TEST_CASE("softmax gradients match finite differences") {
    std::mt19937_64 rng(53);
    Tensor x = random_tensor({2, 5}, rng, -3.0, 3.0);
    Tensor probe = random_tensor({2, 5}, rng);
    CHECK(gradcheck([&] { return sum_all(mul(softmax(x, 1), probe)); }, {x}).max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// layer_norm / normalize_over
// ---------------------------------------------------------------------------

TEST_CASE("layer_norm: constant rows go to zero; zero gamma returns beta") {
    Tensor x = Tensor::full({2, 6}, 4.5);  // dyadic, so the row mean is exact
    Tensor gamma = Tensor::full({6}, 1.0);
    Tensor beta = Tensor::zeros({6});
    Tensor y = layer_norm(x, gamma, beta);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
    Tensor y42 = layer_norm(Tensor::full({2, 6}, 4.2), gamma, beta);
    for (std::int64_t i = 0; i < y42.numel(); ++i) CHECK(std::abs(y42.data()[i]) < 1e-9);

    std::mt19937_64 rng(59);
    Tensor xr = random_tensor({2, 6}, rng);
    Tensor beta2 = random_tensor({6}, rng);
    Tensor y2 = layer_norm(xr, Tensor::zeros({6}), beta2);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 6; ++c) CHECK(y2.at({r, c}) == beta2.data()[c]);
}

TEST_CASE("layer_norm matches a two-pass mean/variance oracle") {
    std::mt19937_64 rng(61);
    const int D = 8;
    Tensor x = random_tensor({1, D}, rng);
    Tensor gamma = random_tensor({D}, rng);
    Tensor beta = random_tensor({D}, rng);
    const double eps = 1e-5;
    Tensor y = layer_norm(x, gamma, beta, eps);

    double mean = 0.0;
    for (int i = 0; i < D; ++i) mean += x.data()[i];
    mean /= D;
    double var = 0.0;
    for (int i = 0; i < D; ++i) var += (x.data()[i] - mean) * (x.data()[i] - mean);
    var /= D;
    for (int i = 0; i < D; ++i) {
        const double want = (x.data()[i] - mean) / std::sqrt(var + eps) * gamma.data()[i] + beta.data()[i];
        CHECK(y.data()[i] == doctest::Approx(want).epsilon(1e-13));
    }
    CHECK_THROWS_AS(layer_norm(x, Tensor::zeros({D + 1}), beta), ShapeError);
}

TEST_CASE("normalize_over handles multi-axis (batch-style) buckets") {
    std::mt19937_64 rng(67);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor y = normalize_over(x, {0, 2, 3}, 1e-5);
    // per channel: mean ~ 0, var ~ 1
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        int n = 0;
        for (int b = 0; b < 2; ++b)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) {
                    mean += y.at({b, c, i, j});
                    ++n;
                }
        mean /= n;
        for (int b = 0; b < 2; ++b)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) {
                    const double d = y.at({b, c, i, j}) - mean;
                    var += d * d;
                }
        var /= n;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
    CHECK_THROWS_AS(normalize_over(x, {0, 0}, 1e-5), ShapeError);
    CHECK_THROWS_AS(normalize_over(x, {4}, 1e-5), ShapeError);
}

TEST_CASE("normalization gradients match finite differences") {
    std::mt19937_64 rng(71);
    Tensor x = random_tensor({2, 3, 3}, rng);
    Tensor probe = random_tensor({2, 3, 3}, rng);
    CHECK(gradcheck([&] { return sum_all(mul(normalize_over(x, {2}, 1e-5), probe)); }, {x})
              .max_rel_err < 1e-5);
    Tensor x2 = random_tensor({2, 2, 4, 4}, rng);
    Tensor probe2 = random_tensor({2, 2, 4, 4}, rng);
    CHECK(gradcheck([&] { return sum_all(mul(normalize_over(x2, {0, 2, 3}, 1e-5), probe2)); }, {x2})
              .max_rel_err < 1e-5);
    Tensor g = random_tensor({3}, rng);
    Tensor be = random_tensor({3}, rng);
    Tensor x3 = random_tensor({2, 3}, rng);
    CHECK(gradcheck([&] { return sum_all(mul(layer_norm(x3, g, be), layer_norm(x3, g, be))); },
                    {x3, g, be})
              .max_rel_err < 1e-5);
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

TEST_CASE("relu and sigmoid fixed points") {
    Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0});
    Tensor y = relu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 0.0);
    CHECK(y.data()[2] == 2.0);
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
}

TEST_CASE("gelu matches the long-double erf oracle at 64 points") {
    for (int i = 0; i < 64; ++i) {
        const double v = -4.0 + 8.0 * i / 63.0;
        const long double want =
            0.5L * static_cast<long double>(v) *
            (1.0L + erfl(static_cast<long double>(v) / sqrtl(2.0L)));
        const double got = gelu(Tensor::scalar(v)).item();
        CHECK(got == doctest::Approx(static_cast<double>(want)).epsilon(1e-14));
    }
}

TEST_CASE("activation gradients match finite differences") {
    std::mt19937_64 rng(73);
    Tensor x = random_tensor({20}, rng, -2.0, 2.0, /*avoid_zero_band=*/0.05);
    CHECK(gradcheck([&] { return sum_all(mul(relu(x), relu(x))); }, {x}).max_rel_err < 1e-6);
    CHECK(gradcheck([&] { return sum_all(mul(gelu(x), gelu(x))); }, {x}).max_rel_err < 1e-6);
    CHECK(gradcheck([&] { return sum_all(mul(sigmoid(x), sigmoid(x))); }, {x}).max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

TEST_CASE("pooling fixed points") {
    Tensor c = Tensor::full({2, 3, 4, 4}, -2.5);
    Tensor ga = global_pool(c, PoolKind::avg);
    REQUIRE(ga.shape() == Shape{2, 3, 1, 1});
    for (std::int64_t i = 0; i < ga.numel(); ++i) CHECK(ga.data()[i] == -2.5);

    Tensor onehot = Tensor::zeros({1, 1, 3, 3});
    onehot.at({0, 0, 1, 2}) = 1.0;
    CHECK(global_pool(onehot, PoolKind::max).item() == 1.0);

    Tensor m = Tensor::from_data({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    CHECK(pool2d(m, PoolKind::max, 2, 2).item() == 4.0);
    CHECK(pool2d(m, PoolKind::avg, 2, 2).item() == 2.5);
    CHECK_THROWS_AS(pool2d(Tensor::zeros({1, 1, 5, 5}), PoolKind::max, 2, 2), ConfigError);
}

TEST_CASE("pooling gradients match finite differences") {
    std::mt19937_64 rng(79);
    // distinct values keep the max argument stable under the FD probe
    Tensor x = Tensor::zeros({1, 2, 4, 4});
    std::vector<int> perm(32);
    for (int i = 0; i < 32; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (int i = 31; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[rng() % static_cast<std::uint64_t>(i + 1)]);
    for (int i = 0; i < 32; ++i) x.data()[i] = 0.1 * perm[static_cast<std::size_t>(i)];

    Tensor probe = random_tensor({1, 2, 2, 2}, rng);
    CHECK(gradcheck([&] { return sum_all(mul(pool2d(x, PoolKind::max, 2, 2), probe)); }, {x})
              .max_rel_err < 1e-6);
    CHECK(gradcheck([&] { return sum_all(mul(pool2d(x, PoolKind::avg, 2, 2), probe)); }, {x})
              .max_rel_err < 1e-6);
    Tensor probe2 = random_tensor({1, 2, 1, 1}, rng);
    CHECK(gradcheck([&] { return sum_all(mul(global_pool(x, PoolKind::max), probe2)); }, {x})
              .max_rel_err < 1e-6);
    CHECK(gradcheck([&] { return sum_all(mul(global_pool(x, PoolKind::avg), probe2)); }, {x})
              .max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// bilinear upsampling
// ---------------------------------------------------------------------------

TEST_CASE("upsample: constants stay constant, 1x1 replicates") {
    Tensor c = Tensor::full({1, 2, 3, 3}, 5.0);
    Tensor y = upsample_bilinear2x(c);
    REQUIRE(y.shape() == Shape{1, 2, 6, 6});
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 5.0);

    Tensor one = Tensor::full({1, 1, 1, 1}, 3.25);
    Tensor yo = upsample_bilinear2x(one);
    REQUIRE(yo.shape() == Shape{1, 1, 2, 2});
    for (std::int64_t i = 0; i < 4; ++i) CHECK(yo.data()[i] == 3.25);
}

TEST_CASE("upsample: 2x2 ramp matches the closed-form bilinear grid") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor y = upsample_bilinear2x(x);
    // hand-computed with align-corners=false taps (-0.25, 0.25, 0.75, 1.25)
    const double want[16] = {1.0, 1.25, 1.75, 2.0,  1.5, 1.75, 2.25, 2.5,
                             2.5, 2.75, 3.25, 3.5,  3.0, 3.25, 3.75, 4.0};
    for (int i = 0; i < 16; ++i) CHECK(y.data()[i] == doctest::Approx(want[i]).epsilon(1e-15));
}

TEST_CASE("upsample gradients match finite differences") {
    std::mt19937_64 rng(83);
    Tensor x = random_tensor({1, 2, 3, 3}, rng);
    Tensor probe = random_tensor({1, 2, 6, 6}, rng);
    CHECK(gradcheck([&] { return sum_all(mul(upsample_bilinear2x(x), probe)); }, {x}).max_rel_err <
          1e-6);
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

TEST_CASE("dropout: p=0 and eval mode are bit-identical to identity") {
    std::mt19937_64 rng(89);
    Tensor x = random_tensor({100}, rng);
    std::mt19937_64 r1(1);
    Tensor y0 = dropout(x, 0.0, true, r1);
    CHECK(y0.same_storage(x));
    Tensor ye = dropout(x, 0.7, false, r1);
    CHECK(ye.same_storage(x));
    Tensor y1 = dropout(x, 1.0, true, r1);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y1.data()[i] == 0.0);
    CHECK_THROWS_AS(dropout(x, 1.5, true, r1), ConfigError);
}

TEST_CASE("dropout keep rate over 1e5 draws is within 0.01 of 1-p") {
    const double p = 0.3;
    Tensor x = Tensor::full({100000}, 1.0);
    std::mt19937_64 rng(97);
    Tensor y = dropout(x, p, true, rng);
    std::int64_t kept = 0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        if (y.data()[i] != 0.0) {
            ++kept;
            CHECK(y.data()[i] == doctest::Approx(1.0 / (1.0 - p)).epsilon(1e-12));
        }
    }
    const double rate = static_cast<double>(kept) / 1e5;
    CHECK(std::abs(rate - (1.0 - p)) < 0.01);
}

TEST_CASE("dropout with a fixed seed is differentiable and deterministic") {
    std::mt19937_64 rng(101);
    Tensor x = random_tensor({30}, rng);
    auto fwd = [&] {
        std::mt19937_64 drop_rng(555);
        Tensor y = dropout(x, 0.4, true, drop_rng);
        return sum_all(mul(y, y));
    };
    CHECK(gradcheck(fwd, {x}).max_rel_err < 1e-6);
    std::mt19937_64 ra(7), rb(7);
    CHECK(testutil::bit_identical(dropout(x, 0.4, true, ra), dropout(x, 0.4, true, rb)));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

TEST_CASE("concat joins channel maps and splits back exactly") {
    std::mt19937_64 rng(103);
    Tensor a = random_tensor({2, 3, 4, 4}, rng);
    Tensor b = random_tensor({2, 5, 4, 4}, rng);
    Tensor y = concat({a, b}, 1);
    REQUIRE(y.shape() == Shape{2, 8, 4, 4});
    // split back: channels [0,3) from a, [3,8) from b
    for (int n = 0; n < 2; ++n) {
        for (int c = 0; c < 8; ++c) {
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) {
                    const double want = c < 3 ? a.at({n, c, i, j}) : b.at({n, c - 3, i, j});
                    CHECK(y.at({n, c, i, j}) == want);
                }
        }
    }
    CHECK_THROWS_AS(concat({a, random_tensor({2, 5, 3, 4}, rng)}, 1), ShapeError);
    CHECK_THROWS_AS(concat(std::vector<Tensor>{}, 0), ShapeError);
}

TEST_CASE("reshape round-trip is the identity") {
    std::mt19937_64 rng(107);
    Tensor x = random_tensor({3, 4, 5}, rng);
    Tensor y = reshape(reshape(x, {60}), {3, 4, 5});
    CHECK(testutil::bit_identical(x, y));
    CHECK_THROWS_AS(reshape(x, {61}), ShapeError);
}

TEST_CASE("transpose permutes indices and composes to identity") {
    std::mt19937_64 rng(109);
    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor y = transpose(x, {2, 0, 1});
    REQUIRE(y.shape() == Shape{4, 2, 3});
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 4; ++k) CHECK(y.at({k, i, j}) == x.at({i, j, k}));
    Tensor back = transpose(y, {1, 2, 0});
    CHECK(testutil::bit_identical(back, x));
    CHECK_THROWS_AS(transpose(x, {0, 0, 1}), ShapeError);
}

TEST_CASE("shape op gradients match finite differences") {
    std::mt19937_64 rng(113);
    Tensor a = random_tensor({2, 2, 3, 3}, rng);
    Tensor b = random_tensor({2, 1, 3, 3}, rng);
    auto fwd = [&] {
        Tensor y = concat({a, b}, 1);
        Tensor t = transpose(y, {0, 2, 3, 1});
        Tensor r = reshape(t, {2, 9, 3});
        return sum_all(mul(r, r));
    };
    CHECK(gradcheck(fwd, {a, b}).max_rel_err < 1e-6);
}

// ---------------------------------------------------------------------------
// broadcast arithmetic and reductions
// ---------------------------------------------------------------------------

TEST_CASE("broadcast add/mul against explicit loops") {
    std::mt19937_64 rng(127);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor cs = random_tensor({1, 3, 1, 1}, rng);  // channel gate
    Tensor y = mul(x, cs);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j)
                    CHECK(y.at({n, c, i, j}) == x.at({n, c, i, j}) * cs.at({0, c, 0, 0}));

    Tensor bias = random_tensor({4}, rng);  // trailing-dim broadcast
    Tensor z = add(x, bias);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j)
                    CHECK(z.at({n, c, i, j}) == x.at({n, c, i, j}) + bias.data()[j]);

    CHECK_THROWS_AS(add(Tensor::zeros({3}), Tensor::zeros({4})), ShapeError);
}

TEST_CASE("broadcast gradients match finite differences") {
    std::mt19937_64 rng(131);
    Tensor x = random_tensor({2, 3, 2, 2}, rng);
    Tensor g = random_tensor({1, 3, 1, 1}, rng);
    Tensor s = random_tensor({1, 1, 2, 2}, rng);
    auto fwd = [&] {
        Tensor y = mul(add(mul(x, g), s), sub(x, g));
        return mean_all(mul(y, y));
    };
    CHECK(gradcheck(fwd, {x, g, s}).max_rel_err < 1e-5);
}

TEST_CASE("axis reductions match loops and differentiate") {
    std::mt19937_64 rng(137);
    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor ms = reduce_sum(x, 1, true);
    REQUIRE(ms.shape() == Shape{2, 1, 4});
    Tensor mm = reduce_mean(x, 1, false);
    REQUIRE(mm.shape() == Shape{2, 4});
    Tensor mx = reduce_max(x, 2, true);
    REQUIRE(mx.shape() == Shape{2, 3, 1});
    for (int n = 0; n < 2; ++n)
        for (int j = 0; j < 4; ++j) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) s += x.at({n, c, j});
            CHECK(ms.at({n, 0, j}) == doctest::Approx(s).epsilon(1e-14));
            CHECK(mm.at({n, j}) == doctest::Approx(s / 3.0).epsilon(1e-14));
        }
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c) {
            double best = x.at({n, c, 0});
            for (int j = 1; j < 4; ++j) best = std::max(best, x.at({n, c, j}));
            CHECK(mx.at({n, c, 0}) == best);
        }

    Tensor probe = random_tensor({2, 1, 4}, rng);
    CHECK(gradcheck([&] { return sum_all(mul(reduce_sum(x, 1, true), probe)); }, {x}).max_rel_err <
          1e-6);
    CHECK(gradcheck([&] { return sum_all(mul(reduce_mean(x, 1, true), probe)); }, {x}).max_rel_err <
          1e-6);
    Tensor probe2 = random_tensor({2, 3, 1}, rng);
    CHECK(gradcheck([&] { return sum_all(mul(reduce_max(x, 2, true), probe2)); }, {x}).max_rel_err <
          1e-6);
    CHECK_THROWS_AS(reduce_sum(x, 3, true), ShapeError);
}

// ---------------------------------------------------------------------------
// composite chains (the spec's backward examples)
// ---------------------------------------------------------------------------

TEST_CASE("grad of sum(A.B) matches finite differences") {
    std::mt19937_64 rng(139);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    CHECK(gradcheck([&] { return sum_all(matmul(a, b)); }, {a, b}).max_rel_err < 1e-7);
}

TEST_CASE("composite conv->relu->sum gradient under 1e-5 relative error") {
    std::mt19937_64 rng(149);
    Tensor x = random_tensor({1, 2, 5, 5}, rng, -2.0, 2.0, 0.05);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, -1.0, 1.0, 0.02);
    Tensor b = random_tensor({3}, rng);
    auto res = gradcheck([&] { return sum_all(relu(conv2d(x, w, b, 1, 1))); }, {x, w, b});
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("all forward ops are deterministic for identical inputs") {
    std::mt19937_64 rng(151);
    Tensor x = random_tensor({2, 4, 6, 6}, rng);
    Tensor w = random_tensor({4, 4, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    auto run = [&] {
        Tensor y = conv2d(x, w, b, 1, 1);
        y = relu(y);
        y = pool2d(y, PoolKind::max, 2, 2);
        y = upsample_bilinear2x(y);
        y = softmax(reshape(y, {2, 4 * 36}), 1);
        return y;
    };
    CHECK(testutil::bit_identical(run(), run()));
}
