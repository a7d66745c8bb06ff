#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gcv/analysis.hpp"
#include "gcv/rng.hpp"

using namespace gcv;
namespace fs = std::filesystem;

namespace {

// Independent O(n^2) midrank + direct Pearson-on-ranks implementation.
double spearman_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            int less = 0, equal = 0;
            for (std::size_t j = 0; j < v.size(); ++j) {
                less += v[j] < v[i];
                equal += v[j] == v[i];
            }
            r[i] = less + (equal + 1) / 2.0;
        }
        return r;
    };
    auto ra = ranks(a);
    auto rb = ranks(b);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(ra.size());
    mb /= static_cast<double>(rb.size());
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("spearman: perfectly monotone pairs score plus and minus one") {
    CHECK(spearman_rho({1, 2, 3}, {10, 20, 30}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(spearman_rho({1, 2, 3}, {30, 20, 10}) == doctest::Approx(-1.0).epsilon(1e-12));
    // indicator ranks monotone with activations give a positive correlation
    double rho = spearman_rho({1, 2, 3}, {0, 0, 1});
    CHECK(rho > 0.0);
    CHECK(rho == doctest::Approx(std::sqrt(3.0) / 2.0).epsilon(1e-9));
}

TEST_CASE("spearman is invariant under strictly monotone transforms") {
    Rng rng(3);
    for (int round = 0; round < 30; ++round) {
        std::vector<double> a, b;
        for (int i = 0; i < 25; ++i) {
            a.push_back(rng.normal());
            b.push_back(rng.normal());
        }
        double base = spearman_rho(a, b);
        std::vector<double> ta, tb;
        for (std::size_t i = 0; i < a.size(); ++i) {
            ta.push_back(std::exp(a[i]));                 // strictly increasing
            tb.push_back(std::atan(3.0 * b[i]) + b[i]);   // strictly increasing
        }
        CHECK(spearman_rho(ta, tb) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("ties are averaged and agree with the brute-force oracle") {
    Rng rng(4);
    for (int round = 0; round < 50; ++round) {
        std::vector<double> a, b;
        for (int i = 0; i < 30; ++i) {
            // coarse quantization forces duplicates
            a.push_back(std::floor(rng.uniform(0, 6)));
            b.push_back(std::floor(rng.uniform(0, 4)));
        }
        bool a_const = std::all_of(a.begin(), a.end(), [&](double v) { return v == a[0]; });
        bool b_const = std::all_of(b.begin(), b.end(), [&](double v) { return v == b[0]; });
        if (a_const || b_const) {
            continue;
        }
        CHECK(std::abs(spearman_rho(a, b) - spearman_oracle(a, b)) < 1e-12);
    }
}

TEST_CASE("correlation report flags constant columns as undefined") {
    Tensor<double> activations = Tensor<double>::from({4, 2}, {1, 5, 2, 5, 3, 5, 4, 5});
    Tensor<double> indicators = Tensor<double>::from({4, 2}, {0, 1, 1, 1, 0, 1, 1, 1});
    auto report = spearman_neuron_word(activations, indicators, 3);
    CHECK(report.at(0, 0).has_value());
    CHECK_FALSE(report.at(1, 0).has_value());  // constant activation column
    CHECK_FALSE(report.at(0, 1).has_value());  // constant indicator column
    REQUIRE(report.top_pairs.size() == 1);
    CHECK(report.top_pairs[0].neuron == 0);
    CHECK(report.top_pairs[0].word == 0);

    CHECK_THROWS_AS(
        (void)spearman_neuron_word(Tensor<double>::zeros({2, 2}), Tensor<double>::zeros({2, 2}), 3),
        ShapeError);
    Tensor<double> bad = Tensor<double>::from({3, 1}, {0, 2, 1});
    CHECK_THROWS_AS((void)spearman_neuron_word(activations, bad, 3), ShapeError);
}

TEST_CASE("top pairs are ordered by absolute correlation") {
    Rng rng(6);
    Tensor<double> activations({20, 4});
    Tensor<double> indicators({20, 2});
    for (std::int64_t v = 0; v < 20; ++v) {
        double flag = v % 2 == 0 ? 1.0 : 0.0;
        indicators[v * 2 + 0] = flag;
        indicators[v * 2 + 1] = v < 10 ? 1.0 : 0.0;
        activations[v * 4 + 0] = flag * 10 + rng.normal() * 0.01;   // strongly aligned with word 0
        activations[v * 4 + 1] = -flag * 10 + rng.normal() * 0.01;  // strongly anti-aligned
        activations[v * 4 + 2] = rng.normal();
        activations[v * 4 + 3] = rng.normal();
    }
    auto report = spearman_neuron_word(activations, indicators, 3);
    REQUIRE(report.top_pairs.size() == 3);
    CHECK(std::abs(report.top_pairs[0].rho) >= std::abs(report.top_pairs[1].rho));
    CHECK(std::abs(report.top_pairs[1].rho) >= std::abs(report.top_pairs[2].rho));
    CHECK(report.top_pairs[0].neuron <= 1);
}

TEST_CASE("top_k_indices returns the largest activations first") {
    auto idx = top_k_indices({0.5, 3.0, -1.0, 3.0, 2.0}, 3);
    REQUIRE(idx.size() == 3);
    CHECK(idx[0] == 1);  // ties keep the lower index first
    CHECK(idx[1] == 3);
    CHECK(idx[2] == 4);
}

TEST_CASE("pca reconstructs points that already live in a 2-D plane") {
    Rng rng(7);
    std::int64_t n = 40, d = 10;
    std::vector<double> u(d), v(d);
    for (std::int64_t j = 0; j < d; ++j) {
        u[static_cast<std::size_t>(j)] = rng.normal();
        v[static_cast<std::size_t>(j)] = rng.normal();
    }
    Tensor<double> points({n, d});
    for (std::int64_t i = 0; i < n; ++i) {
        double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
        for (std::int64_t j = 0; j < d; ++j) {
            points[i * d + j] = 5.0 + a * u[static_cast<std::size_t>(j)] +
                                b * v[static_cast<std::size_t>(j)];
        }
    }
    auto pca = export_embedding_2d(points);
    CHECK(pca.variance[0] >= pca.variance[1]);
    double worst = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d; ++j) {
            double rec = pca.mean[static_cast<std::size_t>(j)] +
                         pca.coords[static_cast<std::size_t>(i)][0] *
                             pca.components[0][static_cast<std::size_t>(j)] +
                         pca.coords[static_cast<std::size_t>(i)][1] *
                             pca.components[1][static_cast<std::size_t>(j)];
            worst = std::max(worst, std::abs(rec - points[i * d + j]));
        }
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("pca coordinates are translation invariant and sign-fixed") {
    Rng rng(8);
    std::int64_t n = 25, d = 6;
    Tensor<double> points({n, d});
    for (auto& p : points.data) {
        p = rng.normal();
    }
    auto base = export_embedding_2d(points);
    auto shifted = points;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d; ++j) {
            shifted[i * d + j] += 100.0 + static_cast<double>(j);
        }
    }
    auto moved = export_embedding_2d(shifted);
    for (std::int64_t i = 0; i < n; ++i) {
        CHECK(moved.coords[static_cast<std::size_t>(i)][0] ==
              doctest::Approx(base.coords[static_cast<std::size_t>(i)][0]).epsilon(1e-6));
        CHECK(moved.coords[static_cast<std::size_t>(i)][1] ==
              doctest::Approx(base.coords[static_cast<std::size_t>(i)][1]).epsilon(1e-6));
    }
    for (int pc = 0; pc < 2; ++pc) {
        const auto& comp = base.components[static_cast<std::size_t>(pc)];
        double biggest = 0.0;
        for (double c : comp) {
            if (std::abs(c) > std::abs(biggest)) {
                biggest = c;
            }
        }
        CHECK(biggest > 0.0);  // largest-magnitude loading is positive
    }
    // fewer points than dims still works (centering + eigensolve)
    Tensor<double> thin({3, 9});
    for (auto& p : thin.data) {
        p = rng.normal();
    }
    auto small = export_embedding_2d(thin);
    CHECK(small.coords.size() == 3);
}

TEST_CASE("csv exports carry the documented headers") {
    auto dir = fs::temp_directory_path() / "gcv_analysis_csv";
    fs::remove_all(dir);
    fs::create_directories(dir);

    Tensor<double> activations = Tensor<double>::from({4, 2}, {1, 2, 2, 1, 3, 4, 4, 3});
    Tensor<double> indicators = Tensor<double>::from({4, 1}, {0, 1, 0, 1});
    auto report = spearman_neuron_word(activations, indicators, 2);
    write_correlation_csv(dir / "corr.csv", report, {"verb:0"});
    std::ifstream corr(dir / "corr.csv");
    std::string header;
    std::getline(corr, header);
    CHECK(header == "neuron,word,rho");

    Tensor<double> pts({4, 3});
    Rng rng(9);
    for (auto& p : pts.data) {
        p = rng.normal();
    }
    auto pca = export_embedding_2d(pts);
    write_embedding_csv(dir / "emb.csv", pca, {{0, 0, 0}, {0, 1, 1}, {1, 0, 2}, {1, 1, 0}});
    std::ifstream emb(dir / "emb.csv");
    std::getline(emb, header);
    CHECK(header == "video,clip,label,x,y");
    int rows = 0;
    std::string line;
    while (std::getline(emb, line)) {
        rows += !line.empty();
    }
    CHECK(rows == 4);
    fs::remove_all(dir);
}
