#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "aa/error.hpp"
#include "aa/ops.hpp"
#include "aa/rng.hpp"
#include "aa/tensor.hpp"

using namespace aa;

namespace {

TensorPtr random_tensor(std::vector<int> shape, Rng& rng, float lo = -2.0f, float hi = 2.0f) {
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) {
        x = static_cast<float>(rng.uniform(lo, hi));
    }
    return Tensor::make(std::move(shape), std::move(v));
}

// Independent 6-nested-loop cross-correlation reference.
std::vector<float> conv_reference(const std::vector<float>& x, int N, int C, int H, int W,
                                  const std::vector<float>& k, int F, int ks, int stride, int pad) {
    const int Ho = (H + 2 * pad - ks) / stride + 1;
    const int Wo = (W + 2 * pad - ks) / stride + 1;
    std::vector<float> out(static_cast<std::size_t>(N) * F * Ho * Wo, 0.0f);
    for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f)
            for (int ho = 0; ho < Ho; ++ho)
                for (int wo = 0; wo < Wo; ++wo) {
                    double acc = 0.0;
                    for (int c = 0; c < C; ++c)
                        for (int ki = 0; ki < ks; ++ki)
                            for (int kj = 0; kj < ks; ++kj) {
                                const int hi = ho * stride - pad + ki;
                                const int wi = wo * stride - pad + kj;
                                if (hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
                                acc += static_cast<double>(x[((static_cast<std::size_t>(n) * C + c) * H + hi) * W + wi]) *
                                       k[((static_cast<std::size_t>(f) * C + c) * ks + ki) * ks + kj];
                            }
                    out[((static_cast<std::size_t>(n) * F + f) * Ho + ho) * Wo + wo] = static_cast<float>(acc);
                }
    return out;
}

}  // namespace

TEST_CASE("conv2d 1x1 identity kernel") {
    Rng rng(7);
    auto x = random_tensor({2, 1, 5, 5}, rng);
    auto k = Tensor::make({1, 1, 1, 1}, {1.0f});
    Tape tape;
    auto y = conv2d(tape, x, k, 1, 0);
    REQUIRE(y->shape() == x->shape());
    for (std::size_t i = 0; i < x->numel(); ++i) {
        CHECK(y->data[i] == doctest::Approx(x->data[i]).epsilon(1e-7));
    }
}

TEST_CASE("conv2d all-ones 3x3 on constant 3x3 input") {
    auto x = Tensor::full({1, 1, 3, 3}, 2.0f);
    auto k = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tape tape;
    auto y = conv2d(tape, x, k, 1, 0);
    REQUIRE(y->numel() == 1);
    CHECK(y->data[0] == doctest::Approx(18.0f));
}

TEST_CASE("conv2d stride-2 output size") {
    Rng rng(3);
    auto x = random_tensor({1, 1, 64, 64}, rng);
    auto k = random_tensor({4, 1, 3, 3}, rng);
    Tape tape;
    auto y = conv2d(tape, x, k, 2, 1);
    CHECK(y->shape() == std::vector<int>{1, 4, 32, 32});
}

TEST_CASE("conv2d matches the naive reference") {
    Rng rng(11);
    struct Case {
        int N, C, F, H, W, k, stride, pad;
    };
    for (const auto& c : {Case{2, 3, 4, 8, 8, 3, 1, 1}, Case{2, 3, 4, 8, 8, 3, 2, 1}, Case{1, 2, 5, 9, 7, 3, 1, 0},
                          Case{3, 1, 2, 6, 6, 1, 1, 0}, Case{1, 4, 3, 10, 10, 5, 1, 2}}) {
        auto x = random_tensor({c.N, c.C, c.H, c.W}, rng);
        auto k = random_tensor({c.F, c.C, c.k, c.k}, rng, -1.0f, 1.0f);
        Tape tape;
        auto y = conv2d(tape, x, k, c.stride, c.pad);
        auto ref = conv_reference(x->data, c.N, c.C, c.H, c.W, k->data, c.F, c.k, c.stride, c.pad);
        REQUIRE(y->numel() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            CHECK(std::fabs(y->data[i] - ref[i]) < 1e-5f);
        }
    }
}

TEST_CASE("conv2d rejects bad shapes") {
    Rng rng(5);
    auto x = random_tensor({1, 3, 8, 8}, rng);
    Tape tape;
    CHECK_THROWS_AS((void)conv2d(tape, x, random_tensor({4, 2, 3, 3}, rng), 1, 1), DimensionError);
    CHECK_THROWS_AS((void)conv2d(tape, x, random_tensor({4, 3, 2, 2}, rng), 1, 1), DimensionError);
    CHECK_THROWS_AS((void)conv2d(tape, x, random_tensor({4, 3, 9, 9}, rng), 1, 0), DimensionError);
    CHECK_THROWS_AS((void)conv2d(tape, random_tensor({1, 3, 8}, rng), random_tensor({4, 3, 3, 3}, rng), 1, 1),
                    DimensionError);
}

TEST_CASE("upsample_nearest replicates blocks") {
    auto x = Tensor::make({1, 1, 2, 2}, {1, 2, 3, 4});
    Tape tape;
    SUBCASE("factor 1 is the identity") {
        auto y = upsample_nearest(tape, x, 1);
        CHECK(y->data == x->data);
    }
    SUBCASE("factor 2 block replication") {
        auto y = upsample_nearest(tape, x, 2);
        const std::vector<float> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
        CHECK(y->data == want);
    }
    SUBCASE("backward sums over each block") {
        x->set_requires_grad(true);
        auto y = upsample_nearest(tape, x, 2);
        auto loss = sum_all(tape, y);
        tape.backward(loss);
        for (float g : x->grad) {
            CHECK(g == doctest::Approx(4.0f));
        }
    }
    SUBCASE("factor 0 rejected") {
        CHECK_THROWS_AS((void)upsample_nearest(tape, x, 0), ParamError);
    }
}

TEST_CASE("leaky_relu values") {
    auto x = Tensor::make({3}, {0.0f, -2.0f, 3.5f});
    Tape tape;
    auto y = leaky_relu(tape, x, 0.2f);
    CHECK(y->data[0] == 0.0f);
    CHECK(y->data[1] == doctest::Approx(-0.4f));
    CHECK(y->data[2] == doctest::Approx(3.5f));
    CHECK_THROWS_AS((void)leaky_relu(tape, x, 1.0f), ParamError);
}

TEST_CASE("sigmoid values and saturation") {
    auto x = Tensor::make({4}, {0.0f, 100.0f, std::log(3.0f), -100.0f});
    Tape tape;
    auto y = sigmoid(tape, x);
    CHECK(y->data[0] == doctest::Approx(0.5f));
    CHECK(y->data[1] > 1.0f - 1e-6f);
    CHECK(y->data[1] <= 1.0f);
    CHECK(y->data[2] == doctest::Approx(0.75f).epsilon(1e-5));
    CHECK(y->data[3] >= 0.0f);
    CHECK(std::isfinite(y->data[1]));
    CHECK(std::isfinite(y->data[3]));
}

TEST_CASE("dense affine map") {
    Tape tape;
    SUBCASE("identity weight, zero bias") {
        auto x = Tensor::make({1, 2}, {5.0f, -3.0f});
        auto w = Tensor::make({2, 2}, {1, 0, 0, 1});
        auto b = Tensor::zeros({2});
        auto y = dense(tape, x, w, b);
        CHECK(y->data == x->data);
    }
    SUBCASE("worked example") {
        auto x = Tensor::make({1, 2}, {1.0f, 2.0f});
        auto w = Tensor::make({2, 2}, {1, 0, 0, 1});
        auto b = Tensor::make({2}, {3.0f, 4.0f});
        auto y = dense(tape, x, w, b);
        CHECK(y->data[0] == doctest::Approx(4.0f));
        CHECK(y->data[1] == doctest::Approx(6.0f));
    }
    SUBCASE("large shape contract") {
        Rng rng(2);
        auto x = random_tensor({8, 4096}, rng);
        auto w = random_tensor({4096, 512}, rng, -0.05f, 0.05f);
        auto b = Tensor::zeros({512});
        auto y = dense(tape, x, w, b);
        CHECK(y->shape() == std::vector<int>{8, 512});
    }
    SUBCASE("inner mismatch") {
        Rng rng(2);
        CHECK_THROWS_AS((void)dense(tape, random_tensor({2, 3}, rng), random_tensor({4, 2}, rng), Tensor::zeros({2})),
                        DimensionError);
    }
}

TEST_CASE("backward populates gradients") {
    SUBCASE("sum gives all-ones") {
        Rng rng(9);
        auto x = random_tensor({3, 4}, rng);
        x->set_requires_grad(true);
        Tape tape;
        tape.backward(sum_all(tape, x));
        for (float g : x->grad) {
            CHECK(g == doctest::Approx(1.0f));
        }
    }
    SUBCASE("sum of squares") {
        auto x = Tensor::make({2}, {1.0f, -2.0f});
        x->set_requires_grad(true);
        Tape tape;
        tape.backward(sum_all(tape, mul(tape, x, x)));
        CHECK(x->grad[0] == doctest::Approx(2.0f));
        CHECK(x->grad[1] == doctest::Approx(-4.0f));
    }
    SUBCASE("diamond fan-out accumulates") {
        auto a = Tensor::make({1}, {3.0f});
        a->set_requires_grad(true);
        Tape tape;
        auto y = add(tape, a, a);
        tape.backward(sum_all(tape, y));
        CHECK(a->grad[0] == doctest::Approx(2.0f));
    }
    SUBCASE("non-scalar loss rejected") {
        Rng rng(1);
        auto x = random_tensor({2, 2}, rng);
        x->set_requires_grad(true);
        Tape tape;
        auto y = mul(tape, x, x);
        CHECK_THROWS_AS(tape.backward(y), ContractError);
    }
    SUBCASE("shared subexpression equals sum of per-path gradients") {
        Rng rng(17);
        auto x = random_tensor({6}, rng);
        x->set_requires_grad(true);
        Tape tape;
        // y = sum(x*x + x)  =>  dy/dx = 2x + 1
        auto y = sum_all(tape, add(tape, mul(tape, x, x), x));
        tape.backward(y);
        for (std::size_t i = 0; i < x->numel(); ++i) {
            CHECK(x->grad[i] == doctest::Approx(2.0f * x->data[i] + 1.0f).epsilon(1e-4));
        }
    }
}

TEST_CASE("finite differences confirm every op gradient") {
    Rng rng(23);
    const float tol = 1e-2f;

    SUBCASE("linear sum is exact") {
        auto x = random_tensor({4, 3}, rng);
        auto err = finite_diff_check([](Tape& t, const TensorPtr& v) { return sum_all(t, v); }, x, 1e-3f);
        CHECK(err < 1e-4f);
    }
    SUBCASE("sigmoid of conv, spec toy") {
        auto x = random_tensor({1, 1, 6, 6}, rng);
        auto k = random_tensor({1, 1, 3, 3}, rng, -1.0f, 1.0f);
        auto err = finite_diff_check(
            [&](Tape& t, const TensorPtr& v) { return sum_all(t, sigmoid(t, conv2d(t, v, k, 1, 0))); }, x, 1e-3f);
        CHECK(err < tol);
    }
    SUBCASE("conv kernel gradient") {
        auto x = random_tensor({2, 2, 6, 6}, rng);
        auto k = random_tensor({3, 2, 3, 3}, rng, -1.0f, 1.0f);
        auto err = finite_diff_check(
            [&](Tape& t, const TensorPtr& v) { return sum_all(t, sigmoid(t, conv2d(t, x, v, 2, 1))); }, k, 1e-3f);
        CHECK(err < tol);
    }
    SUBCASE("dense weight and input") {
        auto x = random_tensor({3, 5}, rng);
        auto w = random_tensor({5, 4}, rng, -1.0f, 1.0f);
        auto b = random_tensor({4}, rng, -0.5f, 0.5f);
        auto e1 = finite_diff_check(
            [&](Tape& t, const TensorPtr& v) { return sum_all(t, sigmoid(t, dense(t, v, w, b))); }, x, 1e-2f);
        auto e2 = finite_diff_check(
            [&](Tape& t, const TensorPtr& v) { return sum_all(t, sigmoid(t, dense(t, x, v, b))); }, w, 1e-3f);
        auto e3 = finite_diff_check(
            [&](Tape& t, const TensorPtr& v) { return sum_all(t, sigmoid(t, dense(t, x, w, v))); }, b, 1e-3f);
        CHECK(e1 < tol);
        CHECK(e2 < tol);
        CHECK(e3 < tol);
    }
    SUBCASE("elementwise chain") {
        auto x = random_tensor({5, 3}, rng, 0.5f, 2.0f);
        auto y = random_tensor({5, 3}, rng, 0.5f, 2.0f);
        auto err = finite_diff_check(
            [&](Tape& t, const TensorPtr& v) {
                auto z = mul(t, v, y);
                z = add(t, z, exp_elem(t, scale(t, v, -0.5f)));
                z = sub(t, z, log_elem(t, v));
                return mean_all(t, z);
            },
            x, 1e-3f);
        CHECK(err < tol);
    }
    SUBCASE("abs away from the kink") {
        auto x = random_tensor({8}, rng, 0.5f, 2.0f);
        for (std::size_t i = 0; i < 4; ++i) {
            x->data[i] = -x->data[i];
        }
        auto err = finite_diff_check([](Tape& t, const TensorPtr& v) { return sum_all(t, abs_elem(t, v)); }, x, 1e-3f);
        CHECK(err < 1e-4f);
    }
    SUBCASE("clamp interior") {
        auto x = random_tensor({8}, rng, -0.9f, 0.9f);
        auto err = finite_diff_check(
            [](Tape& t, const TensorPtr& v) { return sum_all(t, mul(t, clamp(t, v, -1.0f, 1.0f), v)); }, x, 1e-3f);
        CHECK(err < tol);
    }
    SUBCASE("leaky, upsample, pool, bias") {
        auto x = random_tensor({2, 3, 4, 4}, rng);
        auto b = random_tensor({3}, rng);
        auto err = finite_diff_check(
            [&](Tape& t, const TensorPtr& v) {
                auto h = leaky_relu(t, bias_channels(t, upsample_nearest(t, v, 2), b), 0.2f);
                return sum_all(t, mul(t, global_avg_pool(t, h), global_avg_pool(t, h)));
            },
            x, 1e-3f);
        CHECK(err < tol);
        auto errb = finite_diff_check(
            [&](Tape& t, const TensorPtr& v) {
                auto h = leaky_relu(t, bias_channels(t, upsample_nearest(t, x, 2), v), 0.2f);
                return sum_all(t, mul(t, global_avg_pool(t, h), global_avg_pool(t, h)));
            },
            b, 1e-3f);
        CHECK(errb < tol);
    }
    SUBCASE("reshape and flatten") {
        auto x = random_tensor({2, 2, 3, 3}, rng);
        auto err = finite_diff_check(
            [](Tape& t, const TensorPtr& v) {
                auto f = flatten2d(t, v);
                return mean_all(t, mul(t, f, f));
            },
            x, 1e-3f);
        CHECK(err < tol);
    }
}

TEST_CASE("forward ops keep finite inputs finite") {
    Rng rng(31);
    auto x = random_tensor({2, 2, 8, 8}, rng, -50.0f, 50.0f);
    auto k = random_tensor({4, 2, 3, 3}, rng, -3.0f, 3.0f);
    Tape tape(false);
    auto h = conv2d(tape, x, k, 2, 1);
    h = leaky_relu(tape, h, 0.2f);
    h = sigmoid(tape, h);
    auto g = global_avg_pool(tape, h);
    CHECK(h->all_finite());
    CHECK(g->all_finite());
    CHECK(sigmoid(tape, Tensor::make({2}, {1e4f, -1e4f}))->all_finite());
}
