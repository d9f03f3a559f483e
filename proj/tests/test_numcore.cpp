#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "unimse/gradcheck.hpp"
#include "unimse/rng.hpp"
#include "unimse/tensor.hpp"

using namespace unimse;
using namespace unimse::numcore;

namespace {

// Reference convolution oracle: literal sliding window, written independently
// of the op so the two can disagree.
std::vector<double> conv_oracle(const std::vector<double>& x, int len, int din,
                                const std::vector<double>& w, int k, int dout,
                                const std::vector<double>& b) {
    std::vector<double> y(static_cast<std::size_t>(len) * dout, 0.0);
    const int pad = (k - 1) / 2;
    for (int t = 0; t < len; ++t)
        for (int c = 0; c < dout; ++c) {
            double s = b[c];
            for (int tap = 0; tap < k; ++tap) {
                const int u = t + tap - pad;
                if (u < 0 || u >= len) continue;
                for (int d = 0; d < din; ++d)
                    s += x[static_cast<std::size_t>(u) * din + d] *
                         w[static_cast<std::size_t>(tap * din + d) * dout + c];
            }
            y[static_cast<std::size_t>(t) * dout + c] = s;
        }
    return y;
}

std::vector<double> random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, scale);
    return v;
}

} // namespace

TEST_CASE("matmul against identity and hand case", "[numcore]") {
    Graph g;
    Tensor a = Tensor::leaf(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor eye = Tensor::leaf(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor c = matmul(g, a, eye);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(c.data()[i] == a.data()[i]);

    Tensor b = Tensor::leaf(3, 2, {7, 8, 9, 10, 11, 12});
    Tensor d = matmul(g, a, b);
    REQUIRE(d.at(0, 0) == 58.0);
    REQUIRE(d.at(0, 1) == 64.0);
    REQUIRE(d.at(1, 0) == 139.0);
    REQUIRE(d.at(1, 1) == 154.0);

    // matmul_nt(a, b^T stored row-major as b') equals matmul(a, b)
    Tensor bt = Tensor::leaf(2, 3, {7, 9, 11, 8, 10, 12});
    Tensor d2 = matmul_nt(g, a, bt);
    for (std::size_t i = 0; i < d.size(); ++i) REQUIRE(d2.data()[i] == Catch::Approx(d.data()[i]));
}

TEST_CASE("softmax of uniform rows and row-stochastic property", "[numcore]") {
    Graph g;
    Tensor a = Tensor::leaf(1, 4, {5, 5, 5, 5});
    Tensor y = softmax_rows(g, a);
    for (int j = 0; j < 4; ++j) REQUIRE(std::abs(y.at(0, j) - 0.25) < 1e-15);

    Rng rng(11);
    Tensor r = Tensor::leaf(7, 9, random_vec(63, rng, 3.0));
    Tensor yr = softmax_rows(g, r);
    for (int i = 0; i < 7; ++i) {
        double s = 0.0;
        for (int j = 0; j < 9; ++j) {
            const double v = yr.at(i, j);
            REQUIRE(v > 0.0);
            REQUIRE(v < 1.0);
            s += v;
        }
        REQUIRE(std::abs(s - 1.0) < 1e-9);
    }

    // Stability: huge logits must not overflow.
    Tensor big = Tensor::leaf(1, 3, {1000.0, 1001.0, 999.0});
    Tensor yb = softmax_rows(g, big);
    REQUIRE(std::abs(yb.at(0, 0) + yb.at(0, 1) + yb.at(0, 2) - 1.0) < 1e-12);
}

TEST_CASE("masked softmax puts exactly zero weight on masked keys", "[numcore]") {
    Graph g;
    Tensor a = Tensor::leaf(2, 4, {3, 1, 2, 9, 0, 0, 0, 0});
    std::vector<std::uint8_t> keep = {1, 1, 0, 0, 1, 0, 1, 1};
    Tensor y = masked_softmax_rows(g, a, keep);
    REQUIRE(y.at(0, 2) == 0.0);
    REQUIRE(y.at(0, 3) == 0.0);
    REQUIRE(y.at(1, 1) == 0.0);
    REQUIRE(std::abs(y.at(0, 0) + y.at(0, 1) - 1.0) < 1e-12);
    // Masked-out logits are irrelevant: changing them must not move the output.
    Tensor a2 = Tensor::leaf(2, 4, {3, 1, -50, 1234, 0, 77, 0, 0});
    Tensor y2 = masked_softmax_rows(g, a2, keep);
    for (int j = 0; j < 4; ++j) {
        REQUIRE(y2.at(0, j) == Catch::Approx(y.at(0, j)).margin(1e-15));
        REQUIRE(y2.at(1, j) == Catch::Approx(y.at(1, j)).margin(1e-15));
    }
}

TEST_CASE("layer norm matches hand oracle and its statistics hold", "[numcore]") {
    Graph g;
    const double eps = 1e-5;
    Tensor x = Tensor::leaf(1, 4, {1, 2, 3, 4});
    Tensor gain = Tensor::leaf(1, 4, {1, 1, 1, 1});
    Tensor bias = Tensor::leaf(1, 4, {0, 0, 0, 0});
    Tensor y = layer_norm_rows(g, x, gain, bias, eps);
    // mean 2.5, population variance 1.25
    const double is = 1.0 / std::sqrt(1.25 + eps);
    REQUIRE(y.at(0, 0) == Catch::Approx(-1.5 * is).epsilon(1e-12));
    REQUIRE(y.at(0, 3) == Catch::Approx(1.5 * is).epsilon(1e-12));

    // Constant row normalizes to the bias.
    Tensor xc = Tensor::leaf(1, 4, {7, 7, 7, 7});
    Tensor b2 = Tensor::leaf(1, 4, {0.5, 0.5, 0.5, 0.5});
    Tensor yc = layer_norm_rows(g, xc, gain, b2, eps);
    for (int j = 0; j < 4; ++j) REQUIRE(std::abs(yc.at(0, j) - 0.5) < 1e-9);

    // Random rows: mean ~0, variance ~1.
    Rng rng(5);
    Tensor xr = Tensor::leaf(6, 16, random_vec(96, rng, 2.0));
    Tensor g16 = Tensor::full(1, 16, 1.0);
    Tensor b16 = Tensor::zeros(1, 16);
    Tensor yr = layer_norm_rows(g, xr, g16, b16, eps);
    for (int i = 0; i < 6; ++i) {
        double mean = 0.0, var = 0.0;
        for (int j = 0; j < 16; ++j) mean += yr.at(i, j);
        mean /= 16;
        for (int j = 0; j < 16; ++j) var += (yr.at(i, j) - mean) * (yr.at(i, j) - mean);
        var /= 16;
        REQUIRE(std::abs(mean) < 1e-9);
        REQUIRE(std::abs(var - 1.0) < 1e-4); // eps shrinks variance slightly below 1
    }
}

TEST_CASE("backward of a sum is all ones and visits each node once", "[numcore]") {
    Graph g;
    Tensor x = Tensor::leaf(3, 2, {1, 2, 3, 4, 5, 6}, true);
    Tensor s = sum_all(g, x);
    const std::size_t visits = g.backward(s);
    REQUIRE(visits == 1); // one op node on the tape
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(x.grad()[i] == 1.0);
}

TEST_CASE("hand-derived gradients: sigmoid, square, softmax+nll", "[numcore]") {
    {
        Graph g;
        Tensor x = Tensor::leaf(1, 1, {0.0}, true);
        Tensor y = sum_all(g, sigmoid(g, x));
        g.backward(y);
        REQUIRE(x.grad()[0] == Catch::Approx(0.25).epsilon(1e-12));
    }
    {
        Graph g;
        Tensor x = Tensor::leaf(1, 1, {3.0}, true);
        Tensor y = sum_all(g, mul(g, x, x));
        g.backward(y);
        REQUIRE(x.grad()[0] == Catch::Approx(6.0).epsilon(1e-12));
    }
    {
        // d(nll)/d(logit) = softmax(logits) - onehot(target)
        Graph g;
        Tensor logits = Tensor::leaf(1, 3, {0.2, -0.4, 1.1}, true);
        Tensor loss = cross_entropy_rows(g, logits, {2}, {1.0});
        g.backward(loss);
        double mx = 1.1;
        double z = std::exp(0.2 - mx) + std::exp(-0.4 - mx) + std::exp(1.1 - mx);
        const double p0 = std::exp(0.2 - mx) / z, p1 = std::exp(-0.4 - mx) / z, p2 = std::exp(1.1 - mx) / z;
        REQUIRE(logits.grad()[0] == Catch::Approx(p0).epsilon(1e-12));
        REQUIRE(logits.grad()[1] == Catch::Approx(p1).epsilon(1e-12));
        REQUIRE(logits.grad()[2] == Catch::Approx(p2 - 1.0).epsilon(1e-12));
    }
}

TEST_CASE("cross entropy of uniform logits is ln(num classes)", "[numcore]") {
    Graph g;
    Tensor logits = Tensor::leaf(2, 5, std::vector<double>(10, 0.37));
    Tensor loss = cross_entropy_rows(g, logits, {0, 4}, {1.0, 1.0});
    REQUIRE(loss.value() == Catch::Approx(std::log(5.0)).epsilon(1e-12));

    // Masked rows contribute nothing.
    Tensor l2 = Tensor::leaf(2, 5, {0, 0, 0, 0, 0, 100, 0, 0, 0, 0});
    Tensor loss2 = cross_entropy_rows(g, l2, {1, 0}, {1.0, 0.0});
    REQUIRE(loss2.value() == Catch::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("finite-difference check over composed random graphs", "[numcore]") {
    Rng rng(123);
    Tensor w1 = Tensor::leaf(4, 6, random_vec(24, rng, 0.5), true, "w1");
    Tensor b1 = Tensor::leaf(1, 6, random_vec(6, rng, 0.5), true, "b1");
    Tensor w2 = Tensor::leaf(6, 3, random_vec(18, rng, 0.5), true, "w2");
    Tensor gain = Tensor::leaf(1, 6, random_vec(6, rng, 0.2), true, "gain");
    Tensor bias = Tensor::leaf(1, 6, random_vec(6, rng, 0.2), true, "bias");
    Tensor cw = Tensor::leaf(3 * 6, 4, random_vec(72, rng, 0.4), true, "cw");
    Tensor cb = Tensor::leaf(1, 4, random_vec(4, rng, 0.4), true, "cb");
    const std::vector<double> xdata = random_vec(5 * 4, rng);

    auto build = [&](Graph& g) {
        Tensor x = Tensor::leaf(5, 4, xdata);
        Tensor h = add_rowvec(g, matmul(g, x, w1), b1);
        h = layer_norm_rows(g, h, gain, bias);
        h = tanh(g, h);
        Tensor c = conv1d_same(g, h, cw, cb, 3);
        Tensor sm = softmax_rows(g, matmul_nt(g, c, c));
        Tensor pooled = mean_rows_prefix(g, concat_cols(g, {h, c}), 4);
        Tensor logits = matmul(g, mul(g, h, h), w2);
        Tensor ce = cross_entropy_rows(g, logits, {0, 2, 1, 0, 2}, {1, 1, 0, 1, 1});
        return add(g, add(g, ce, sum_all(g, sm)), sum_all(g, sigmoid(g, pooled)));
    };

    auto report = grad_check({{"w1", w1}, {"b1", b1}, {"w2", w2}, {"gain", gain}, {"bias", bias},
                              {"cw", cw}, {"cb", cb}},
                             build, 1e-5, 1e-4);
    INFO(report.summary());
    REQUIRE(report.pass());
    REQUIRE(report.coords_checked == 24 + 6 + 18 + 6 + 6 + 72 + 4);
}

TEST_CASE("finite-difference check through slicing, embedding and dropout-free paths", "[numcore]") {
    Rng rng(77);
    Tensor table = Tensor::leaf(9, 4, random_vec(36, rng, 0.7), true, "table");
    Tensor w = Tensor::leaf(2, 5, random_vec(10, rng, 0.6), true, "w");
    const std::vector<int> ids = {3, 0, 3, 8, 5};

    auto build = [&](Graph& g) {
        Tensor e = embedding(g, table, ids); // 5 x 4
        Tensor left = col_slice(g, e, 0, 2);
        Tensor right = col_slice(g, e, 2, 4);
        Tensor folded = add(g, left, right);             // 5 x 2
        Tensor top = row_slice(g, folded, 0, 3);         // 3 x 2
        Tensor rep = repeat_row(g, mean_rows(g, top), 2); // 2 x 2
        Tensor out = matmul(g, rep, w);                  // 2 x 5
        return sum_all(g, exp(g, scale(g, out, 0.3)));
    };

    auto report = grad_check({{"table", table}, {"w", w}}, build, 1e-5, 1e-4);
    INFO(report.summary());
    REQUIRE(report.pass());
}

TEST_CASE("conv1d matches the sliding-window oracle", "[numcore]") {
    Rng rng(42);
    for (int k : {1, 2, 3, 5}) {
        const int len = 7, din = 3, dout = 4;
        const auto xd = random_vec(static_cast<std::size_t>(len) * din, rng);
        const auto wd = random_vec(static_cast<std::size_t>(k) * din * dout, rng);
        const auto bd = random_vec(dout, rng);
        Graph g;
        Tensor y = conv1d_same(g, Tensor::leaf(len, din, xd), Tensor::leaf(k * din, dout, wd),
                               Tensor::leaf(1, dout, bd), k);
        const auto ref = conv_oracle(xd, len, din, wd, k, dout, bd);
        for (std::size_t i = 0; i < ref.size(); ++i)
            REQUIRE(std::abs(y.data()[i] - ref[i]) < 1e-12);
    }
}

TEST_CASE("kernel size 1 convolution is a pointwise linear map", "[numcore]") {
    Rng rng(9);
    const auto xd = random_vec(6 * 2, rng);
    const auto wd = random_vec(2 * 3, rng);
    Graph g;
    Tensor x = Tensor::leaf(6, 2, xd);
    Tensor w = Tensor::leaf(2, 3, wd);
    Tensor zero_b = Tensor::zeros(1, 3);
    Tensor conv = conv1d_same(g, x, w, zero_b, 1);
    Tensor mm = matmul(g, x, w);
    for (std::size_t i = 0; i < conv.size(); ++i)
        REQUIRE(conv.data()[i] == Catch::Approx(mm.data()[i]).margin(1e-15));
}

TEST_CASE("shape mismatches raise errors that name the op and shapes", "[numcore]") {
    Graph g;
    Tensor a = Tensor::zeros(2, 3);
    Tensor b = Tensor::zeros(4, 2);
    REQUIRE_THROWS_WITH(matmul(g, a, b), Catch::Matchers::ContainsSubstring("matmul") &&
                                             Catch::Matchers::ContainsSubstring("2x3") &&
                                             Catch::Matchers::ContainsSubstring("4x2"));
    REQUIRE_THROWS_WITH(add(g, a, b), Catch::Matchers::ContainsSubstring("add"));
    REQUIRE_THROWS_WITH(layer_norm_rows(g, a, Tensor::zeros(1, 2), Tensor::zeros(1, 3)),
                        Catch::Matchers::ContainsSubstring("layer_norm_rows"));
    REQUIRE_THROWS_WITH(embedding(g, a, {5}), Catch::Matchers::ContainsSubstring("embedding"));
}

TEST_CASE("non-finite forward values are rejected at the producing op", "[numcore]") {
    Graph g;
    Tensor neg = Tensor::leaf(1, 1, {-1.0});
    REQUIRE_THROWS_WITH(log(g, neg), Catch::Matchers::ContainsSubstring("log"));
    Tensor zero = Tensor::leaf(1, 1, {0.0});
    REQUIRE_THROWS_WITH(log(g, zero), Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("identical graphs on identical seeds produce bit-identical values", "[numcore]") {
    auto run = [] {
        Rng rng(2024);
        Tensor w = Tensor::leaf(8, 8, [&] {
            std::vector<double> v(64);
            for (auto& x : v) x = rng.normal();
            return v;
        }(), true);
        Graph g(99);
        Tensor h = tanh(g, matmul(g, w, w));
        Tensor d = dropout(g, h, 0.25);
        Tensor s = sum_all(g, d);
        g.backward(s);
        return std::make_pair(s.value(), w.grad());
    };
    const auto [v1, g1] = run();
    const auto [v2, g2] = run();
    REQUIRE(v1 == v2);
    REQUIRE(g1 == g2);
}

TEST_CASE("dropout: rate zero is the identity, mask replays under the graph seed", "[numcore]") {
    Graph g(7);
    Tensor a = Tensor::leaf(4, 4, std::vector<double>(16, 1.0), true);
    Tensor same = dropout(g, a, 0.0);
    REQUIRE(same.node() == a.node());

    auto masked_sum = [](std::uint64_t seed) {
        Graph gg(seed);
        Tensor x = Tensor::full(10, 10, 1.0);
        return sum_all(gg, dropout(gg, x, 0.5)).value();
    };
    REQUIRE(masked_sum(3) == masked_sum(3));
    REQUIRE(masked_sum(3) != masked_sum(4)); // different seed, different mask (overwhelmingly)
}

TEST_CASE("double backward on one graph is rejected", "[numcore]") {
    Graph g;
    Tensor x = Tensor::leaf(1, 1, {2.0}, true);
    Tensor y = mul(g, x, x);
    g.backward(y);
    REQUIRE_THROWS_WITH(g.backward(y), Catch::Matchers::ContainsSubstring("backward"));
}

TEST_CASE("leaf gradients accumulate across graphs until zeroed", "[numcore]") {
    Tensor x = Tensor::leaf(1, 1, {1.5}, true);
    for (int i = 0; i < 2; ++i) {
        Graph g;
        g.backward(sum_all(g, scale(g, x, 3.0)));
    }
    REQUIRE(x.grad()[0] == 6.0);
    Tensor xcopy = x;
    xcopy.zero_grad();
    REQUIRE(x.grad()[0] == 0.0);
}
