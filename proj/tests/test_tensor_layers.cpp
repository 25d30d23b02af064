#include <doctest.h>

#include <cmath>

#include "objex/gradcheck.hpp"
#include "objex/layers.hpp"
#include "objex/rng.hpp"
#include "oracles.hpp"

using namespace objex;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform() * 2.0 - 1.0;
    return t;
}

}  // namespace

TEST_CASE("tensor invariants") {
    Tensor t({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK(t.all_finite());
    t.at(1, 2, 3) = 7.0;
    CHECK(t.data[23] == 7.0);
    CHECK_THROWS(Tensor({0, 3}));
}

TEST_CASE("degenerate 1x1 conv is affine") {
    LayerSpec s = LayerSpec::conv("c", 1, 1, 1, 1, 1, 0, /*relu=*/false);
    LayerParams p = make_params(s, {1, 1, 1});
    p.weights[0] = 2.5;
    p.biases[0] = -0.75;
    Tensor in({1, 1, 1});
    in[0] = 3.0;
    const Tensor out = conv_forward(in, p, s);
    CHECK(out.size() == 1);
    CHECK(out[0] == doctest::Approx(2.5 * 3.0 - 0.75).epsilon(1e-15));
}

TEST_CASE("identity kernel with padding preserves the channel slice") {
    LayerSpec s = LayerSpec::conv("c", 1, 3, 3, 1, 1, 1, false);
    LayerParams p = make_params(s, {5, 5, 1});
    p.weights.fill(0.0);
    p.weights.data[(1 * 3 + 1) * 1] = 1.0;  // center tap
    Rng rng(3);
    const Tensor in = random_tensor({5, 5, 1}, rng);
    const Tensor out = conv_forward(in, p, s);
    REQUIRE(out.shape == in.shape);
    for (int i = 0; i < in.size(); ++i) CHECK(out[i] == in[i]);
}

TEST_CASE("conv_forward equals quadruple-loop oracle bit-for-bit") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const int ih = 3 + static_cast<int>(rng.uniform_int(6));  // up to 8
        const int iw = 3 + static_cast<int>(rng.uniform_int(6));
        const int ic = 1 + static_cast<int>(rng.uniform_int(3));  // up to 3
        const int k = 1 + static_cast<int>(rng.uniform_int(3));
        const int kh = 1 + static_cast<int>(rng.uniform_int(3));
        const int kw = 1 + static_cast<int>(rng.uniform_int(3));
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int pad = static_cast<int>(rng.uniform_int(2));
        LayerSpec s = LayerSpec::conv("c", k, kh, kw, ic, stride, pad, trial % 2 == 0);
        LayerParams p = make_params(s, {ih, iw, ic});
        for (auto& v : p.weights.data) v = rng.uniform() * 2.0 - 1.0;
        for (auto& v : p.biases.data) v = rng.uniform() - 0.5;
        const Tensor in = random_tensor({ih, iw, ic}, rng);
        const Tensor got = conv_forward(in, p, s);
        const Tensor want = oracle::brute_conv(in, p, s);
        REQUIRE(got.shape == want.shape);
        for (int i = 0; i < got.size(); ++i) REQUIRE(got[i] == want[i]);  // bit-for-bit
    }
    // The 6x6x2 input / 3x3x2 kernel / stride 1 / no pad case explicitly.
    LayerSpec s = LayerSpec::conv("c", 1, 3, 3, 2, 1, 0, false);
    LayerParams p = make_params(s, {6, 6, 2});
    for (auto& v : p.weights.data) v = rng.uniform() * 2.0 - 1.0;
    for (auto& v : p.biases.data) v = rng.uniform() - 0.5;
    const Tensor in = random_tensor({6, 6, 2}, rng);
    const Tensor got = conv_forward(in, p, s);
    const Tensor want = oracle::brute_conv(in, p, s);
    CHECK(got.shape == std::vector<int>{4, 4, 1});
    for (int i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
}

TEST_CASE("conv output dims follow the floor formula") {
    LayerSpec s = LayerSpec::conv("c", 4, 3, 3, 2, 2, 1);
    const auto out = infer_output_shape(s, {9, 11, 2});
    CHECK(out == std::vector<int>{(9 + 2 - 3) / 2 + 1, (11 + 2 - 3) / 2 + 1, 4});
    CHECK_THROWS_WITH_AS(infer_output_shape(s, {9, 11, 3}), doctest::Contains("layer 'c'"),
                         std::runtime_error);
}

TEST_CASE("zero upstream gradient leaves grads and input grad zero") {
    Rng rng(5);
    LayerSpec s = LayerSpec::conv("c", 2, 3, 3, 2, 1, 1, true);
    LayerParams p = make_params(s, {5, 5, 2});
    for (auto& v : p.weights.data) v = rng.uniform() - 0.5;
    const Tensor in = random_tensor({5, 5, 2}, rng);
    LayerCache cache;
    const Tensor out = conv_forward(in, p, s, &cache);
    const Tensor up(out.shape);  // zeros
    const Tensor din = conv_backward(up, p, s, cache);
    for (double v : p.weight_grads.data) CHECK(v == 0.0);
    for (double v : p.bias_grads.data) CHECK(v == 0.0);
    for (double v : din.data) CHECK(v == 0.0);
}

TEST_CASE("1x1 affine backward matches analytic derivative") {
    LayerSpec s = LayerSpec::conv("c", 1, 1, 1, 1, 1, 0, false);
    LayerParams p = make_params(s, {1, 1, 1});
    p.weights[0] = 1.5;
    p.biases[0] = 0.25;
    Tensor in({1, 1, 1});
    in[0] = -2.0;
    LayerCache cache;
    conv_forward(in, p, s, &cache);
    Tensor up({1, 1, 1});
    up[0] = 1.0;
    const Tensor din = conv_backward(up, p, s, cache);
    CHECK(p.weight_grads[0] == doctest::Approx(-2.0));  // d(wx+b)/dw = x
    CHECK(p.bias_grads[0] == doctest::Approx(1.0));
    CHECK(din[0] == doctest::Approx(1.5));              // d(wx+b)/dx = w
}

TEST_CASE("maxpool of a constant tensor is constant; backward hits argmax only") {
    LayerSpec s = LayerSpec::maxpool("mp");
    Tensor in({5, 5, 2});
    in.fill(0.3);
    LayerCache cache;
    const Tensor out = maxpool_forward(in, s, &cache);
    CHECK(out.shape == std::vector<int>{2, 2, 2});
    for (double v : out.data) CHECK(v == 0.3);

    Tensor up(out.shape);
    up.fill(1.0);
    const Tensor din = maxpool_backward(up, s, cache);
    double total = 0.0;
    int nonzero = 0;
    for (double v : din.data) {
        total += v;
        nonzero += v != 0.0;
    }
    CHECK(total == doctest::Approx(static_cast<double>(out.size())));
    CHECK(nonzero <= out.size());  // only recorded argmax positions receive gradient
}

TEST_CASE("maxpool output equals window max") {
    Rng rng(9);
    const Tensor in = random_tensor({7, 7, 3}, rng);
    LayerSpec s = LayerSpec::maxpool("mp");
    const Tensor out = maxpool_forward(in, s);
    for (int y = 0; y < out.shape[0]; ++y)
        for (int x = 0; x < out.shape[1]; ++x)
            for (int c = 0; c < out.shape[2]; ++c) {
                double mx = -1e30;
                for (int py = 0; py < 3; ++py)
                    for (int px = 0; px < 3; ++px)
                        mx = std::max(mx, in.at(y * 2 + py, x * 2 + px, c));
                CHECK(out.at(y, x, c) == mx);
            }
}

TEST_CASE("logistic output") {
    Tensor in({3});
    in[0] = 0.0;
    in[1] = 40.0;
    in[2] = -40.0;
    const Tensor out = logistic_forward(in);
    CHECK(out[0] == 0.5);
    CHECK(out[1] < 1.0);
    CHECK(out[1] > 0.999);
    CHECK(out[2] > 0.0);
    CHECK(out[2] < 1e-3);
}

TEST_CASE("response norm keeps shape and normalizes downward") {
    Rng rng(21);
    Tensor in = random_tensor({3, 3, 8}, rng);
    for (auto& v : in.data) v = std::abs(v) + 0.5;
    LayerSpec s = LayerSpec::response_norm("rn");
    const Tensor out = response_norm_forward(in, s);
    REQUIRE(out.shape == in.shape);
    // k = 2 makes the denominator > 1, so magnitudes shrink.
    for (int i = 0; i < in.size(); ++i) CHECK(std::abs(out[i]) < std::abs(in[i]));
}

TEST_CASE("gradcheck: every layer kind matches central finite differences") {
    const auto reports = run_gradcheck(/*seed=*/1234, /*configs_per_kind=*/20);
    REQUIRE(reports.size() == 5);
    for (const auto& r : reports) {
        INFO(layer_kind_name(r.kind));
        CHECK(r.configs == 20);
        CHECK(r.max_rel_err < 1e-4);
        CHECK(r.passed);
    }
    CHECK(all_passed(reports));
}

TEST_CASE("gradcheck negative control: corrupted backward is detected") {
    const auto reports = run_gradcheck(99, 3, 1e-5, 1e-4, LayerKind::Conv);
    bool conv_failed = false;
    for (const auto& r : reports)
        if (r.kind == LayerKind::Conv) conv_failed = !r.passed;
    CHECK(conv_failed);
    CHECK_FALSE(all_passed(reports));
}

TEST_CASE("sgd_step") {
    LayerSpec s = LayerSpec::full_conn("fc", 1, false);
    LayerParams p = make_params(s, {1});

    SUBCASE("zero learning rate leaves parameters unchanged") {
        p.weights[0] = 1.25;
        p.weight_grads[0] = 17.0;
        sgd_step(p, 0.0);
        CHECK(p.weights[0] == 1.25);
        CHECK(p.weight_grads[0] == 0.0);  // grads are consumed
    }

    SUBCASE("single scalar step") {
        p.weights[0] = 1.0;
        p.weight_grads[0] = 2.0;
        sgd_step(p, 0.1);
        CHECK(p.weights[0] == doctest::Approx(0.8).epsilon(1e-15));
    }

    SUBCASE("repeated steps minimize a quadratic") {
        // 0.5 (w - 3)^2, gradient w - 3, analytic minimizer w = 3.
        p.weights[0] = -4.0;
        for (int i = 0; i < 200; ++i) {
            p.weight_grads[0] = p.weights[0] - 3.0;
            sgd_step(p, 0.2);
        }
        CHECK(p.weights[0] == doctest::Approx(3.0).epsilon(1e-6));
    }
}
