#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "gcv/objectives.hpp"

using namespace gcv;

namespace {

std::vector<SequenceSpec> make_batch(int batch, int len, Rng& rng) {
    std::vector<SequenceSpec> specs(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        auto& s = specs[static_cast<std::size_t>(b)];
        int tau = 1 + static_cast<int>(rng.uniform_int(len - 1));
        for (int c = 0; c < len; ++c) {
            s.clips.push_back({b, c, c < tau ? 0 : (c == tau ? 1 : 2)});
        }
    }
    return specs;
}

}  // namespace

TEST_CASE("fail labels derive from the onset clip and are nondecreasing") {
    auto t = derive_fail_labels(3, 6);
    CHECK(t.labels == std::vector<int>({0, 0, 0, 1, 2, 2}));
    auto clean = derive_fail_labels(std::nullopt, 4);
    CHECK(clean.labels == std::vector<int>({0, 0, 0, 0}));

    Rng rng(17);
    for (int round = 0; round < 200; ++round) {
        int count = 2 + static_cast<int>(rng.uniform_int(10));
        int tau = 1 + static_cast<int>(rng.uniform_int(count - 1));
        auto labels = derive_fail_labels(tau, count).labels;
        for (std::size_t i = 1; i < labels.size(); ++i) {
            CHECK(labels[i] >= labels[i - 1]);
        }
        CHECK(labels[static_cast<std::size_t>(tau)] == 1);
    }
    CHECK_THROWS_AS((void)derive_fail_labels(0, 4), ShapeError);
    CHECK_THROWS_AS((void)derive_fail_labels(4, 4), ShapeError);
}

TEST_CASE("class weights: inverse frequency normalized to mean one") {
    auto equal = class_weights({7, 7, 7});
    CHECK(equal[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(equal[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(equal[2] == doctest::Approx(1.0).epsilon(1e-12));

    // counts (50, 10, 40): weights proportional to (1/50, 1/10, 1/40)
    auto w = class_weights({50, 10, 40});
    double mean = (w[0] + w[1] + w[2]) / 3.0;
    CHECK(mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w[0] == doctest::Approx(0.41379).epsilon(1e-3));
    CHECK(w[1] == doctest::Approx(2.06897).epsilon(1e-3));
    CHECK(w[2] == doctest::Approx(0.51724).epsilon(1e-3));
    CHECK(w[0] / w[1] == doctest::Approx(10.0 / 50.0).epsilon(1e-12));
    CHECK(w[2] / w[1] == doctest::Approx(10.0 / 40.0).epsilon(1e-12));

    // counts (50, 10, 20) give the (0.3529, 1.7647, 0.8824) triple
    auto w2 = class_weights({50, 10, 20});
    CHECK(w2[0] == doctest::Approx(0.3529).epsilon(1e-3));
    CHECK(w2[1] == doctest::Approx(1.7647).epsilon(1e-3));
    CHECK(w2[2] == doctest::Approx(0.8824).epsilon(1e-3));

    // invariant to scaling all counts
    auto scaled = class_weights({500, 100, 400});
    for (int c = 0; c < 3; ++c) {
        CHECK(scaled[static_cast<std::size_t>(c)] ==
              doctest::Approx(w[static_cast<std::size_t>(c)]).epsilon(1e-12));
    }

    try {
        (void)class_weights({3, 0, 5});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("resample") != std::string::npos);
    }
}

TEST_CASE("fail loss: perfect, uniform, and weighted cases") {
    std::array<double, 3> ones{1.0, 1.0, 1.0};
    std::vector<std::array<double, 3>> perfect{{1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}};
    CHECK(fail_loss(perfect, {0, 2}, ones) == doctest::Approx(0.0).epsilon(1e-9));

    std::vector<std::array<double, 3>> uniform{{1.0 / 3, 1.0 / 3, 1.0 / 3},
                                               {1.0 / 3, 1.0 / 3, 1.0 / 3}};
    CHECK(fail_loss(uniform, {0, 1}, ones) == doctest::Approx(std::log(3.0)).epsilon(1e-9));

    // doubling the weight of the true class doubles that clip's term
    std::vector<std::array<double, 3>> one_clip{{0.2, 0.5, 0.3}};
    double base = fail_loss(one_clip, {1}, {1.0, 1.0, 1.0});
    double doubled = fail_loss(one_clip, {1}, {1.0, 2.0, 1.0});
    CHECK(doubled == doctest::Approx(2.0 * base).epsilon(1e-12));

    // weights (1,1,1) equal plain cross-entropy
    double manual = -(std::log(0.5));
    CHECK(base == doctest::Approx(manual).epsilon(1e-12));

    CHECK_THROWS_AS((void)fail_loss({}, {}, ones), ShapeError);
}

TEST_CASE("nsp loss: half point, convergence, symmetry") {
    CHECK(nsp_loss(0.5, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(nsp_loss(0.5, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(nsp_loss(0.999999, 1.0) < 1e-5);
    CHECK(nsp_loss(1e-9, 0.0) < 1e-8);
    for (double p : {0.1, 0.37, 0.9}) {
        for (double y : {0.0, 1.0}) {
            CHECK(nsp_loss(p, y) == doctest::Approx(nsp_loss(1.0 - p, 1.0 - y)).epsilon(1e-12));
        }
    }
}

TEST_CASE("combined loss: paper lambda, degenerate lambda, linearity") {
    CHECK(combined_loss(1.0, 0.4, 0.5) == doctest::Approx(1.2).epsilon(1e-12));
    CHECK(combined_loss(0.7, 123.0, 0.0) == doctest::Approx(0.7).epsilon(1e-12));
    double a = combined_loss(0.3, 0.8, 0.5);
    double b = combined_loss(0.5, 0.2, 0.5);
    CHECK(combined_loss(0.8, 1.0, 0.5) == doctest::Approx(a + b).epsilon(1e-12));
    CHECK_THROWS_AS((void)combined_loss(1.0, 1.0, -0.1), ConfigError);
}

TEST_CASE("sampler: empirical split/perturb/swap rates match the configuration") {
    LossConfig cfg;
    Rng rng(20260810);
    std::int64_t total = 0, splits = 0, perturbed = 0, swaps = 0;
    while (total < 20000) {
        auto batch = make_batch(8, 8, rng);
        auto records = sample_nsp_perturbation(batch, cfg, rng);
        for (const auto& r : records) {
            ++total;
            if (r.split) {
                ++splits;
            }
            if (r.perturbed) {
                ++perturbed;
                if (r.kind == PerturbKind::Swap) {
                    ++swaps;
                }
            }
        }
    }
    double split_rate = static_cast<double>(splits) / static_cast<double>(total);
    double perturb_given_split = static_cast<double>(perturbed) / static_cast<double>(splits);
    double swap_given_perturbed = static_cast<double>(swaps) / static_cast<double>(perturbed);
    CHECK(std::abs(split_rate - 0.5) < 0.02);
    CHECK(std::abs(perturb_given_split - 0.5) < 0.02);
    CHECK(std::abs(swap_given_perturbed - 0.3) < 0.02);
}

TEST_CASE("sampler: unperturbed sequences keep their clip order and y = 1") {
    LossConfig cfg;
    Rng rng(5);
    for (int round = 0; round < 100; ++round) {
        auto batch = make_batch(4, 6, rng);
        auto originals = batch;
        auto records = sample_nsp_perturbation(batch, cfg, rng);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            if (!records[i].perturbed) {
                CHECK(batch[i].clips == originals[i].clips);
                CHECK(batch[i].y_nsp == 1.0);
            } else {
                // structural-change invariant: y=0 only with a real change
                CHECK(batch[i].y_nsp == 0.0);
                CHECK(batch[i].clips != originals[i].clips);
            }
        }
    }
}

TEST_CASE("sampler: swap turns A|B into B|A with the boundary after B") {
    LossConfig cfg;
    cfg.p_split = 1.0;
    cfg.p_perturb = 1.0;
    cfg.p_swap = 1.0;
    Rng rng(6);
    auto batch = make_batch(2, 6, rng);
    auto originals = batch;
    auto records = sample_nsp_perturbation(batch, cfg, rng);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        REQUIRE(records[i].kind == PerturbKind::Swap);
        int orig_split = 6 - *batch[i].split;
        std::vector<ClipRef> expected(originals[i].clips.begin() + orig_split,
                                      originals[i].clips.end());
        expected.insert(expected.end(), originals[i].clips.begin(),
                        originals[i].clips.begin() + orig_split);
        CHECK(batch[i].clips == expected);
        // labels traveled with their clips
        for (std::size_t c = 0; c < expected.size(); ++c) {
            CHECK(batch[i].clips[c].label == expected[c].label);
        }
    }
}

TEST_CASE("sampler: replacement takes a contiguous donor span with donor labels") {
    LossConfig cfg;
    cfg.p_split = 1.0;
    cfg.p_perturb = 1.0;
    cfg.p_swap = 0.0;
    Rng rng(7);
    for (int round = 0; round < 50; ++round) {
        auto batch = make_batch(3, 7, rng);
        auto originals = batch;
        auto records = sample_nsp_perturbation(batch, cfg, rng);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            REQUIRE(records[i].kind == PerturbKind::Replace);
            REQUIRE(records[i].donor_video >= 0);
            CHECK(records[i].donor_video != originals[i].clips[0].video);
            const auto& donor = originals[static_cast<std::size_t>(records[i].donor_video)];
            // the donated span appears verbatim (ids + labels) inside the result
            std::vector<ClipRef> span(donor.clips.begin() + records[i].donor_start,
                                      donor.clips.begin() + records[i].donor_start + records[i].donor_len);
            bool found = false;
            const auto& got = batch[i].clips;
            for (std::size_t at = 0; at + span.size() <= got.size() && !found; ++at) {
                found = std::equal(span.begin(), span.end(), got.begin() + static_cast<std::ptrdiff_t>(at));
            }
            CHECK(found);
            CHECK(batch[i].split.has_value());
        }
    }
}

TEST_CASE("sampler: replacement with a single-sequence batch falls back to swap") {
    LossConfig cfg;
    cfg.p_split = 1.0;
    cfg.p_perturb = 1.0;
    cfg.p_swap = 0.0;
    Rng rng(8);
    auto batch = make_batch(1, 5, rng);
    auto records = sample_nsp_perturbation(batch, cfg, rng);
    REQUIRE(records.size() == 1);
    CHECK(records[0].perturbed);
    CHECK(records[0].kind == PerturbKind::Swap);
    CHECK(records[0].fallback_swap);
}
