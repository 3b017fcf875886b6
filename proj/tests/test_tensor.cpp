#include "doctest.h"

#include "acq/errors.hpp"
#include "acq/graph.hpp"
#include "test_support.hpp"

using namespace acq;
using acq::testing::max_gradient_error;
using acq::testing::random_tensor;

namespace {

// Independent quadruple-loop cross-correlation used as the reference.
Tensor reference_conv(const Tensor& in, const Tensor& kernel, const Tensor& bias) {
    const std::size_t n_batch = in.dim(0), channels = in.dim(1), height = in.dim(2), width = in.dim(3);
    const std::size_t filters = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const std::size_t out_h = height - kh + 1, out_w = width - kw + 1;
    Tensor out({n_batch, filters, out_h, out_w});
    for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t k = 0; k < filters; ++k)
            for (std::size_t y = 0; y < out_h; ++y)
                for (std::size_t x = 0; x < out_w; ++x) {
                    double acc = bias[k];
                    for (std::size_t c = 0; c < channels; ++c)
                        for (std::size_t i = 0; i < kh; ++i)
                            for (std::size_t j = 0; j < kw; ++j)
                                acc += in[((n * channels + c) * height + y + i) * width + x + j] *
                                       kernel[((k * channels + c) * kh + i) * kw + j];
                    out[((n * filters + k) * out_h + y) * out_w + x] = acc;
                }
    return out;
}

Tensor integer_tensor(Shape shape, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dist(-9, 9);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    return t;
}

}  // namespace

TEST_CASE("tensor shape invariants") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), ContractError);
    CHECK_THROWS_AS(Tensor({0, 2}), ContractError);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ContractError);
}

TEST_CASE("conv2d forward") {
    SUBCASE("identity 1x1 kernel") {
        Graph g;
        auto x = g.input(Tensor({1, 1, 3, 3}, 1.0));
        auto k = g.input(Tensor({1, 1, 1, 1}, 1.0));
        auto b = g.input(Tensor({1}, 0.0));
        auto y = g.conv2d(x, k, b);
        g.forward();
        CHECK(g.value(y) == Tensor({1, 1, 3, 3}, 1.0));
    }
    SUBCASE("2x2 diagonal kernel") {
        Graph g;
        auto x = g.input(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
        auto k = g.input(Tensor({1, 1, 2, 2}, {1, 0, 0, 1}));
        auto b = g.input(Tensor({1}, 0.0));
        auto y = g.conv2d(x, k, b);
        g.forward();
        CHECK(g.value(y).shape() == Shape{1, 1, 1, 1});
        CHECK(g.value(y)[0] == 5.0);
    }
    SUBCASE("matches quadruple-loop reference exactly on integers") {
        std::mt19937_64 rng(7);
        for (int trial = 0; trial < 5; ++trial) {
            Tensor in = integer_tensor({2, 3, 9, 8}, rng);
            Tensor kernel = integer_tensor({4, 3, 3, 2}, rng);
            Tensor bias = integer_tensor({4}, rng);
            Graph g;
            auto y = g.conv2d(g.input(in), g.input(kernel), g.input(bias));
            g.forward();
            CHECK(g.value(y) == reference_conv(in, kernel, bias));
        }
    }
    SUBCASE("shape mismatch names both shapes") {
        Graph g;
        auto x = g.input(Tensor({1, 2, 5, 5}));
        auto k = g.input(Tensor({1, 3, 3, 3}));
        auto b = g.input(Tensor({1}));
        try {
            g.conv2d(x, k, b);
            FAIL("expected ContractError");
        } catch (const ContractError& e) {
            const std::string what = e.what();
            CHECK(what.find("[1,2,5,5]") != std::string::npos);
            CHECK(what.find("[1,3,3,3]") != std::string::npos);
        }
        auto big = g.input(Tensor({1, 2, 7, 7}));
        CHECK_THROWS_AS(g.conv2d(x, big, b), ContractError);
    }
}

TEST_CASE("conv2d gradients match finite differences") {
    std::mt19937_64 rng(11);
    Graph g;
    auto x = g.input(random_tensor({1, 1, 5, 5}, rng));
    auto k = g.input(random_tensor({2, 1, 3, 3}, rng));
    auto b = g.input(random_tensor({2}, rng));
    auto loss = g.sum(g.conv2d(x, k, b));
    CHECK(max_gradient_error(g, x, loss) < 1e-6);
    CHECK(max_gradient_error(g, k, loss) < 1e-6);
    CHECK(max_gradient_error(g, b, loss) < 1e-6);

    // A non-uniform downstream weighting exercises more than the all-ones case.
    Graph h;
    auto hx = h.input(random_tensor({2, 2, 6, 6}, rng));
    auto hk = h.input(random_tensor({3, 2, 3, 3}, rng));
    auto hb = h.input(random_tensor({3}, rng));
    auto hidden = h.flatten(h.conv2d(hx, hk, hb));
    auto w = h.input(random_tensor({3 * 16, 10}, rng));
    auto wb = h.input(random_tensor({10}, rng));
    auto hl = h.softmax_cross_entropy(h.dense(hidden, w, wb), {3, 7});
    CHECK(max_gradient_error(h, hx, hl) < 1e-6);
    CHECK(max_gradient_error(h, hk, hl) < 1e-6);
}

TEST_CASE("maxpool2x2") {
    SUBCASE("max of four") {
        Graph g;
        auto x = g.input(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
        auto y = g.maxpool2x2(x);
        g.forward();
        CHECK(g.value(y)[0] == 4.0);
    }
    SUBCASE("ties route gradient to the first window element") {
        Graph g;
        auto x = g.input(Tensor({1, 1, 4, 4}, 3.0));
        auto y = g.maxpool2x2(x);
        auto loss = g.sum(y);
        g.forward();
        CHECK(g.value(y) == Tensor({1, 1, 2, 2}, 3.0));
        g.backward(loss);
        const Tensor& dx = g.grad(x);
        const std::vector<double> expected = {1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0};
        CHECK(std::vector<double>(dx.data().begin(), dx.data().end()) == expected);
    }
    SUBCASE("matches brute-force window scan") {
        std::mt19937_64 rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor in = random_tensor({1, 1, 4, 4}, rng);
            Graph g;
            auto y = g.maxpool2x2(g.input(in));
            g.forward();
            for (std::size_t oy = 0; oy < 2; ++oy)
                for (std::size_t ox = 0; ox < 2; ++ox) {
                    double best = -1e300;
                    for (std::size_t i = 0; i < 2; ++i)
                        for (std::size_t j = 0; j < 2; ++j) best = std::max(best, in[(2 * oy + i) * 4 + 2 * ox + j]);
                    CHECK(g.value(y)[oy * 2 + ox] == best);
                }
        }
    }
    SUBCASE("odd sizes rejected") {
        Graph g;
        CHECK_THROWS_AS(g.maxpool2x2(g.input(Tensor({1, 1, 3, 4}))), ContractError);
    }
}

TEST_CASE("dense") {
    SUBCASE("identity weight") {
        Graph g;
        Tensor eye({3, 3});
        for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
        Tensor in({2, 3}, {1, -2, 3, 4, 5, -6});
        auto y = g.dense(g.input(in), g.input(eye), g.input(Tensor({3})));
        g.forward();
        CHECK(g.value(y) == in);
    }
    SUBCASE("hand dot product") {
        Graph g;
        auto y = g.dense(g.input(Tensor({1, 2}, {1, 2})), g.input(Tensor({2, 1}, {1, 1})),
                         g.input(Tensor({1}, {1})));
        g.forward();
        CHECK(g.value(y)[0] == 4.0);
    }
    SUBCASE("gradients") {
        std::mt19937_64 rng(5);
        Graph g;
        auto x = g.input(random_tensor({3, 6}, rng));
        auto w = g.input(random_tensor({6, 4}, rng));
        auto b = g.input(random_tensor({4}, rng));
        auto loss = g.sum(g.dense(x, w, b));
        CHECK(max_gradient_error(g, x, loss) < 1e-6);
        CHECK(max_gradient_error(g, w, loss) < 1e-6);
        CHECK(max_gradient_error(g, b, loss) < 1e-6);
    }
    SUBCASE("mismatch") {
        Graph g;
        CHECK_THROWS_AS(g.dense(g.input(Tensor({1, 3})), g.input(Tensor({2, 1})), g.input(Tensor({1}))),
                        ContractError);
    }
    SUBCASE("row results do not depend on batch composition") {
        std::mt19937_64 rng(9);
        Tensor w = random_tensor({40, 7}, rng);
        Tensor b = random_tensor({7}, rng);
        Tensor batch = random_tensor({9, 40}, rng);
        Graph full;
        auto yf = full.dense(full.input(batch), full.parameter(w), full.parameter(b));
        full.forward();
        for (std::size_t r = 0; r < 9; ++r) {
            Tensor row({1, 40}, std::vector<double>(batch.data().begin() + r * 40, batch.data().begin() + (r + 1) * 40));
            Graph single;
            auto ys = single.dense(single.input(row), single.parameter(w), single.parameter(b));
            single.forward();
            for (std::size_t m = 0; m < 7; ++m) CHECK(single.value(ys)[m] == full.value(yf)[r * 7 + m]);
        }
    }
}

TEST_CASE("relu") {
    Graph g;
    auto x = g.input(Tensor({3}, {-1, 0, 2}));
    auto y = g.relu(x);
    auto loss = g.sum(y);
    g.forward();
    CHECK(g.value(y) == Tensor({3}, {0, 0, 2}));
    g.backward(loss);
    CHECK(g.grad(x) == Tensor({3}, {0, 0, 1}));

    std::mt19937_64 rng(13);
    Graph pos;
    auto px = pos.input(random_tensor({8}, rng, 0.1, 1.0));
    auto py = pos.relu(px);
    auto pl = pos.sum(py);
    pos.forward();
    CHECK(pos.value(py) == pos.value(px));
    pos.backward(pl);
    CHECK(pos.grad(px) == Tensor({8}, 1.0));

    Graph fd;
    auto fx = fd.input(random_tensor({50}, rng));
    auto fl = fd.sum(fd.relu(fx));
    const Tensor vals = fd.value(fx);
    CHECK(max_gradient_error(fd, fx, fl, [&](std::size_t i) { return std::abs(vals[i]) <= 1e-3; }) < 1e-6);
}

TEST_CASE("softmax cross entropy") {
    SUBCASE("uniform logits") {
        Graph g;
        auto loss = g.softmax_cross_entropy(g.input(Tensor({1, 10}, 0.7)), {4});
        g.forward();
        CHECK(g.value(loss)[0] == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    }
    SUBCASE("large logit does not overflow") {
        Tensor logits({1, 10});
        logits[0] = 1000.0;
        Graph g;
        auto loss = g.softmax_cross_entropy(g.input(logits), {0});
        g.forward();
        CHECK(std::isfinite(g.value(loss)[0]));
        CHECK(g.value(loss)[0] < 1e-12);
        g.backward(loss);
        CHECK(g.grad(NodeId{0}).all_finite());
    }
    SUBCASE("gradient matches finite differences") {
        std::mt19937_64 rng(17);
        Graph g;
        auto z = g.input(random_tensor({4, 10}, rng, -3, 3));
        auto loss = g.softmax_cross_entropy(z, {0, 9, 3, 3});
        CHECK(max_gradient_error(g, z, loss) < 1e-6);
    }
    SUBCASE("label out of range") {
        Graph g;
        auto z = g.input(Tensor({2, 10}));
        CHECK_THROWS_AS(g.softmax_cross_entropy(z, {0, 10}), ContractError);
        CHECK_THROWS_AS(g.softmax_cross_entropy(z, {0, -1}), ContractError);
        CHECK_THROWS_AS(g.softmax_cross_entropy(z, {0}), ContractError);
    }
}

TEST_CASE("backward") {
    SUBCASE("sum gives ones") {
        Graph g;
        auto x = g.input(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
        auto loss = g.sum(x);
        g.forward();
        g.backward(loss);
        CHECK(g.grad(x) == Tensor({2, 3}, 1.0));
    }
    SUBCASE("backward before forward is a state error") {
        Graph g;
        auto loss = g.sum(g.input(Tensor({2})));
        CHECK_THROWS_AS(g.backward(loss), StateError);
        g.forward();
        g.set_input(NodeId{0}, Tensor({2}, 3.0));
        CHECK_THROWS_AS(g.backward(loss), StateError);
    }
    SUBCASE("repeated passes are bitwise identical") {
        std::mt19937_64 rng(23);
        Graph g;
        auto x = g.input(random_tensor({2, 1, 12, 12}, rng));
        auto k = g.input(random_tensor({4, 1, 5, 5}, rng));
        auto b = g.input(random_tensor({4}, rng));
        auto pooled = g.flatten(g.maxpool2x2(g.relu(g.conv2d(x, k, b))));
        auto w = g.input(random_tensor({64, 10}, rng));
        auto wb = g.input(random_tensor({10}, rng));
        auto loss = g.softmax_cross_entropy(g.dense(pooled, w, wb), {1, 2});
        g.forward();
        g.backward(loss);
        const Tensor first_value = g.value(loss);
        const Tensor first_dx = g.grad(x);
        const Tensor first_dk = g.grad(k);
        g.backward(loss);
        CHECK(g.grad(x) == first_dx);
        g.forward();
        g.backward(loss);
        CHECK(g.value(loss) == first_value);
        CHECK(g.grad(x) == first_dx);
        CHECK(g.grad(k) == first_dk);
        CHECK(first_dx.all_finite());
    }
    SUBCASE("gradient shapes equal value shapes") {
        std::mt19937_64 rng(29);
        Graph g;
        auto x = g.input(random_tensor({1, 1, 8, 8}, rng));
        auto c = g.conv2d(x, g.input(random_tensor({2, 1, 3, 3}, rng)), g.input(random_tensor({2}, rng)));
        auto p = g.maxpool2x2(c);
        auto loss = g.sum(p);
        g.forward();
        g.backward(loss);
        for (NodeId id : {x, c, p, loss}) CHECK(g.grad(id).shape() == g.value(id).shape());
    }
}
