#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gcv/autodiff.hpp"
#include "gcv/rng.hpp"

using gcv::Rng;
using gcv::Tensor;
namespace ad = gcv::ad;

namespace {

Tensor<double> random_tensor(std::vector<std::int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) {
        v = rng.normal() * scale;
    }
    return t;
}

}  // namespace

TEST_CASE("softmax of uniform logits is uniform") {
    auto x = ad::constant(Tensor<double>::from({1, 3}, {0.0, 0.0, 0.0}));
    auto y = ad::softmax_rows(x);
    CHECK(y->value[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(y->value[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(y->value[2] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and are nonnegative") {
    Rng rng(11);
    for (int round = 0; round < 20; ++round) {
        auto x = ad::constant(random_tensor({4, 7}, rng, 3.0));
        auto y = ad::softmax_rows(x);
        for (std::int64_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (std::int64_t j = 0; j < 7; ++j) {
                double p = y->value[r * 7 + j];
                CHECK(p >= 0.0);
                s += p;
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("sigmoid at zero is one half") {
    auto x = ad::constant(Tensor<double>::from({1}, {0.0}));
    CHECK(ad::sigmoid(x)->value[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("layer norm of a constant vector is the beta vector") {
    auto x = ad::constant(Tensor<double>::from({1, 4}, {2.5, 2.5, 2.5, 2.5}));
    auto gamma = ad::constant(Tensor<double>::from({4}, {1.0, 1.0, 1.0, 1.0}));
    auto beta = ad::constant(Tensor<double>::from({4}, {0.0, 0.0, 0.0, 0.0}));
    auto y = ad::layer_norm(x, gamma, beta, 1e-5);
    for (std::int64_t j = 0; j < 4; ++j) {
        CHECK(y->value[j] == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("evaluate is pure: identical bindings give bitwise identical outputs") {
    Rng rng(5);
    auto xt = random_tensor({3, 5}, rng);
    auto wt = random_tensor({5, 4}, rng);
    auto run = [&] {
        auto x = ad::constant(xt);
        auto w = ad::constant(wt);
        return ad::softmax_rows(ad::matmul(x, w))->value;
    };
    auto a = run();
    auto b = run();
    CHECK(gcv::bitwise_equal(a, b));
}

TEST_CASE("d/dx x^2 at x=3 is 6") {
    auto x = ad::leaf(Tensor<double>::from({1}, {3.0}), true);
    auto y = ad::mul(x, x);
    auto pass = ad::backward(y);
    auto g = ad::gradient_of(x, pass);
    CHECK(g.reached);
    CHECK(g.grad[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("gradient of sum is all ones") {
    auto x = ad::leaf(Tensor<double>::zeros({2, 3}), true);
    auto pass = ad::backward(ad::sum(x));
    auto g = ad::gradient_of(x, pass);
    REQUIRE(g.reached);
    for (auto v : g.grad.data) {
        CHECK(v == 1.0);
    }
}

TEST_CASE("gradient of unreachable leaf is zero and flagged") {
    auto x = ad::leaf(Tensor<double>::from({1}, {1.0}), true);
    auto z = ad::leaf(Tensor<double>::from({2}, {1.0, 2.0}), true);
    auto pass = ad::backward(ad::mul(x, x));
    auto g = ad::gradient_of(z, pass);
    CHECK_FALSE(g.reached);
    CHECK(g.grad.numel() == 2);
    CHECK(g.grad[0] == 0.0);
    CHECK(g.grad[1] == 0.0);
}

TEST_CASE("backward requires a scalar loss") {
    auto x = ad::leaf(Tensor<double>::zeros({2}), true);
    CHECK_THROWS_AS((void)ad::backward(x), gcv::ShapeError);
}

TEST_CASE("shape mismatch raises a structured error naming the op") {
    auto a = ad::constant(Tensor<double>::zeros({2, 2}));
    auto b = ad::constant(Tensor<double>::zeros({3}));
    try {
        (void)ad::add(a, b);
        FAIL("expected ShapeError");
    } catch (const gcv::ShapeError& e) {
        CHECK(std::string(e.what()).find("add") != std::string::npos);
    }
}

TEST_CASE("finite differences: linear map is exact") {
    Rng rng(21);
    auto w = ad::constant(random_tensor({6, 3}, rng));
    auto point = random_tensor({2, 6}, rng);
    double err = ad::finite_difference_check(
        [&](const ad::Var<double>& x) { return ad::sum(ad::matmul(x, w)); }, point, 1e-5);
    CHECK(err < 1e-8);
}

TEST_CASE("finite differences: elementwise and reduction ops") {
    Rng rng(22);
    auto point = random_tensor({3, 4}, rng);
    SUBCASE("relu") {
        double err = ad::finite_difference_check(
            [&](const ad::Var<double>& x) { return ad::sum(ad::relu(x)); }, point, 1e-6);
        CHECK(err < 1e-4);
    }
    SUBCASE("sigmoid") {
        double err = ad::finite_difference_check(
            [&](const ad::Var<double>& x) { return ad::sum(ad::sigmoid(x)); }, point, 1e-5);
        CHECK(err < 1e-4);
    }
    SUBCASE("mul and scale") {
        auto other = ad::constant(random_tensor({3, 4}, rng));
        double err = ad::finite_difference_check(
            [&](const ad::Var<double>& x) { return ad::mean(ad::scale(ad::mul(x, other), 1.7)); }, point,
            1e-5);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("finite differences: layer norm") {
    Rng rng(23);
    auto gamma = ad::constant(random_tensor({5}, rng));
    auto beta = ad::constant(random_tensor({5}, rng));
    auto weights = ad::constant(random_tensor({4, 5}, rng));
    auto point = random_tensor({4, 5}, rng);
    double err = ad::finite_difference_check(
        [&](const ad::Var<double>& x) {
            return ad::sum(ad::mul(ad::layer_norm(x, gamma, beta, 1e-5), weights));
        },
        point, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("finite differences: layer norm affine params") {
    Rng rng(231);
    auto x = ad::constant(random_tensor({3, 5}, rng));
    auto beta = ad::constant(random_tensor({5}, rng));
    auto weights = ad::constant(random_tensor({3, 5}, rng));
    auto point = random_tensor({5}, rng);
    double err = ad::finite_difference_check(
        [&](const ad::Var<double>& gamma) {
            return ad::sum(ad::mul(ad::layer_norm(x, gamma, beta, 1e-5), weights));
        },
        point, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("finite differences: softmax + cross entropy head") {
    Rng rng(24);
    std::vector<int> labels{2, 0, 1};
    std::vector<double> weights{0.7, 1.4, 0.9};
    auto point = random_tensor({3, 4}, rng);
    double err_logits = ad::finite_difference_check(
        [&](const ad::Var<double>& z) {
            return ad::cross_entropy_logits(z, labels, {1.0, 1.3, 0.7, 1.0}, ad::Reduction::Mean);
        },
        point, 1e-5);
    CHECK(err_logits < 1e-4);

    auto point3 = random_tensor({3, 3}, rng, 0.5);
    double err_probs = ad::finite_difference_check(
        [&](const ad::Var<double>& z) {
            return ad::cross_entropy_probs(ad::softmax_rows(z), labels, weights, ad::Reduction::Mean);
        },
        point3, 1e-5);
    CHECK(err_probs < 1e-4);
}

TEST_CASE("fused logits losses agree with probability-route losses") {
    Rng rng(25);
    auto z = random_tensor({4, 3}, rng);
    std::vector<int> labels{0, 2, 1, 1};
    std::vector<double> w{1.1, 0.6, 1.3};
    auto a = ad::cross_entropy_logits(ad::constant(z), labels, w, ad::Reduction::Mean)->value[0];
    auto b = ad::cross_entropy_probs(ad::softmax_rows(ad::constant(z)), labels, w, ad::Reduction::Mean)
                 ->value[0];
    CHECK(a == doctest::Approx(b).epsilon(1e-12));

    auto zb = random_tensor({5}, rng);
    std::vector<double> targets{1, 0, 1, 1, 0};
    auto c = ad::bce_logits(ad::constant(zb), targets, ad::Reduction::Mean)->value[0];
    auto d = ad::bce_probs(ad::sigmoid(ad::constant(zb)), targets, ad::Reduction::Mean)->value[0];
    CHECK(c == doctest::Approx(d).epsilon(1e-12));
}

TEST_CASE("finite differences: binary cross entropy") {
    Rng rng(26);
    std::vector<double> targets{1, 0, 1};
    auto point = random_tensor({3}, rng);
    double err = ad::finite_difference_check(
        [&](const ad::Var<double>& z) { return ad::bce_logits(z, targets, ad::Reduction::Mean); }, point,
        1e-5);
    CHECK(err < 1e-4);
    double err2 = ad::finite_difference_check(
        [&](const ad::Var<double>& z) {
            return ad::bce_probs(ad::sigmoid(z), targets, ad::Reduction::Mean);
        },
        point, 1e-5);
    CHECK(err2 < 1e-4);
}

TEST_CASE("finite differences: conv3d, pooling, global mean") {
    Rng rng(27);
    auto w = ad::constant(random_tensor({3, 3, 3, 2, 4}, rng, 0.4));
    auto b = ad::constant(random_tensor({4}, rng, 0.1));
    auto readout = ad::constant(random_tensor({4, 1}, rng));
    auto point = random_tensor({4, 5, 5, 2}, rng);
    double err = ad::finite_difference_check(
        [&](const ad::Var<double>& x) {
            auto c = ad::conv3d(x, w, b, {1, 1, 1}, {1, 1, 1});
            auto p = ad::avg_pool3d(ad::relu(c), 2);
            return ad::matmul(ad::global_mean_thw(p), readout);
        },
        point, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("finite differences: conv3d weight gradient") {
    Rng rng(28);
    auto x = ad::constant(random_tensor({3, 4, 4, 2}, rng));
    auto b = ad::constant(random_tensor({3}, rng, 0.1));
    auto point = random_tensor({2, 3, 3, 2, 3}, rng, 0.4);
    double err = ad::finite_difference_check(
        [&](const ad::Var<double>& w) {
            return ad::mean(ad::conv3d(x, w, b, {1, 2, 2}, {0, 1, 1}));
        },
        point, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("finite differences: attention block") {
    Rng rng(29);
    std::int64_t bsz = 2, l = 4, d = 6;
    auto wq = ad::constant(random_tensor({d, d}, rng, 0.5));
    auto wk = ad::constant(random_tensor({d, d}, rng, 0.5));
    auto wv = ad::constant(random_tensor({d, d}, rng, 0.5));
    Tensor<double> mask = Tensor<double>::full({bsz, l}, 1.0);
    mask[1 * l + 3] = 0.0;  // one padded key
    auto readout = ad::constant(random_tensor({d, 1}, rng));
    auto point = random_tensor({bsz, l, d}, rng);
    double err = ad::finite_difference_check(
        [&](const ad::Var<double>& x) {
            auto att = ad::attention(ad::matmul(x, wq), ad::matmul(x, wk), ad::matmul(x, wv), mask, 2);
            return ad::sum(ad::matmul(att, readout));
        },
        point, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("attention with padding mask matches the unpadded computation") {
    Rng rng(30);
    std::int64_t l = 3, d = 4;
    auto q1 = random_tensor({1, l, d}, rng);
    auto k1 = random_tensor({1, l, d}, rng);
    auto v1 = random_tensor({1, l, d}, rng);
    Tensor<double> m1 = Tensor<double>::full({1, l}, 1.0);
    auto out1 = ad::attention(ad::constant(q1), ad::constant(k1), ad::constant(v1), m1, 2)->value;

    std::int64_t lp = 5;
    auto pad = [&](const Tensor<double>& t) {
        Tensor<double> p = Tensor<double>::zeros({1, lp, d});
        std::copy(t.data.begin(), t.data.end(), p.data.begin());
        return p;
    };
    Tensor<double> m2 = Tensor<double>::zeros({1, lp});
    for (std::int64_t j = 0; j < l; ++j) {
        m2[j] = 1.0;
    }
    auto out2 =
        ad::attention(ad::constant(pad(q1)), ad::constant(pad(k1)), ad::constant(pad(v1)), m2, 2)->value;
    for (std::int64_t i = 0; i < l * d; ++i) {
        CHECK(out1[i] == doctest::Approx(out2[i]).epsilon(1e-12));
    }
}

TEST_CASE("gather, concat and pad_stack route gradients to the right rows") {
    Rng rng(31);
    auto a = random_tensor({2, 3}, rng);
    auto point = random_tensor({4, 3}, rng);
    double err = ad::finite_difference_check(
        [&](const ad::Var<double>& x) {
            auto cat = ad::concat_rows<double>({x, ad::constant(a)});
            auto picked = ad::gather_rows(cat, {5, 0, 2, 2});
            auto stacked = ad::pad_stack<double>({picked, ad::constant(a)}, 5);
            return ad::mean(ad::mul(stacked, stacked));
        },
        point, 1e-5);
    CHECK(err < 1e-4);
}
