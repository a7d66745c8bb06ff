#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "gcv/decoders.hpp"

using namespace gcv;
namespace fs = std::filesystem;

namespace {

RetrievalIndex<double> random_index(int entries, int d, Rng& rng, int videos) {
    Tensor<double> vectors({entries, d});
    for (auto& v : vectors.data) {
        v = rng.normal();
    }
    std::vector<std::int64_t> vids;
    std::vector<int> clips;
    std::vector<std::uint8_t> flags;
    for (int i = 0; i < entries; ++i) {
        vids.push_back(i % videos);
        clips.push_back(i / videos);
        flags.push_back(static_cast<std::uint8_t>(rng.bernoulli(0.5)));
    }
    return make_retrieval_index(std::move(vectors), std::move(vids), std::move(clips), std::move(flags));
}

Tensor<double> row_of(const RetrievalIndex<double>& index, int i) {
    auto d = index.dim();
    Tensor<double> r({d});
    std::copy_n(index.vectors.data.begin() + static_cast<std::int64_t>(i) * d, d, r.data.begin());
    return r;
}

// Independent reference: repeated minimum extraction over the eligible set.
std::vector<Neighbor> knn_oracle(const RetrievalIndex<double>& index, const Tensor<double>& h, int k,
                                 std::int64_t exclude) {
    auto d = index.dim();
    double qn = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
        qn += h[j] * h[j];
    }
    qn = std::sqrt(qn);
    struct Item {
        double dist;
        std::int64_t video;
        int clip;
        bool flag;
        bool taken = false;
    };
    std::vector<Item> items;
    for (std::int64_t i = 0; i < index.size(); ++i) {
        if (index.video_ids[static_cast<std::size_t>(i)] == exclude) {
            continue;
        }
        double dot = 0.0, n = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            dot += h[j] * index.vectors[i * d + j];
            n += index.vectors[i * d + j] * index.vectors[i * d + j];
        }
        items.push_back({1.0 - dot / (qn * std::sqrt(n)), index.video_ids[static_cast<std::size_t>(i)],
                         index.clip_ids[static_cast<std::size_t>(i)],
                         index.oracle_flags[static_cast<std::size_t>(i)] != 0});
    }
    std::vector<Neighbor> out;
    while (static_cast<int>(out.size()) < k && out.size() < items.size()) {
        int best = -1;
        for (int i = 0; i < static_cast<int>(items.size()); ++i) {
            if (items[static_cast<std::size_t>(i)].taken) {
                continue;
            }
            if (best < 0) {
                best = i;
                continue;
            }
            const auto& a = items[static_cast<std::size_t>(i)];
            const auto& b = items[static_cast<std::size_t>(best)];
            if (a.dist < b.dist || (a.dist == b.dist && (a.video < b.video ||
                                                         (a.video == b.video && a.clip < b.clip)))) {
                best = i;
            }
        }
        auto& chosen = items[static_cast<std::size_t>(best)];
        chosen.taken = true;
        out.push_back({chosen.video, chosen.clip, chosen.dist, chosen.flag});
    }
    return out;
}

EmbeddingTable basis_table(int vocab, int dim) {
    EmbeddingTable t;
    t.vocab = vocab;
    t.dim = dim;
    t.seed = 0;
    t.rows = Tensor<double>::zeros({vocab, dim});
    for (int v = 0; v < vocab; ++v) {
        t.rows[static_cast<std::int64_t>(v) * dim + v] = 1.0;
    }
    return t;
}

}  // namespace

TEST_CASE("an indexed vector from another video is its own rank-1 neighbor at distance 0") {
    Rng rng(1);
    auto index = random_index(50, 8, rng, 5);
    auto q = row_of(index, 7);
    auto result = query_knn(index, q, 3, /*exclude_video=*/1234);
    REQUIRE(result.size() == 3);
    CHECK(result[0].video == index.video_ids[7]);
    CHECK(result[0].clip == index.clip_ids[7]);
    CHECK(result[0].distance == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("clips from the query's own video are never returned") {
    Rng rng(2);
    auto index = random_index(40, 8, rng, 4);
    auto q = row_of(index, 5);
    std::int64_t own = index.video_ids[5];
    auto result = query_knn(index, q, 40, own);
    CHECK_FALSE(result.empty());
    for (const auto& n : result) {
        CHECK(n.video != own);
    }
    // k beyond the eligible set returns everything eligible
    std::int64_t eligible = 0;
    for (auto v : index.video_ids) {
        eligible += v != own;
    }
    CHECK(static_cast<std::int64_t>(result.size()) == eligible);
}

TEST_CASE("query ranking matches an independent brute-force scan on 1000 vectors") {
    Rng rng(3);
    auto index = random_index(1000, 16, rng, 25);
    for (int round = 0; round < 20; ++round) {
        Tensor<double> q({16});
        for (auto& v : q.data) {
            v = rng.normal();
        }
        std::int64_t exclude = rng.uniform_int(25);
        auto got = query_knn(index, q, 10, exclude);
        auto want = knn_oracle(index, q, 10, exclude);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].video == want[i].video);
            CHECK(got[i].clip == want[i].clip);
        }
    }
}

TEST_CASE("cosine ranking is scale invariant and self distance is zero") {
    Rng rng(4);
    auto index = random_index(60, 8, rng, 6);
    Tensor<double> q({8});
    for (auto& v : q.data) {
        v = rng.normal();
    }
    auto base = query_knn(index, q, 10, -1);
    for (double c : {0.25, 3.0, 1000.0}) {
        auto scaled_q = q;
        for (auto& v : scaled_q.data) {
            v *= c;
        }
        auto scaled = query_knn(index, scaled_q, 10, -1);
        REQUIRE(scaled.size() == base.size());
        for (std::size_t i = 0; i < base.size(); ++i) {
            CHECK(scaled[i].video == base[i].video);
            CHECK(scaled[i].clip == base[i].clip);
        }
    }
    CHECK_THROWS_AS((void)query_knn(index, Tensor<double>::zeros({8}), 1, -1), ShapeError);
}

TEST_CASE("index round-trips through the GCIX container") {
    Rng rng(5);
    auto index = random_index(30, 8, rng, 3);
    auto dir = fs::temp_directory_path() / "gcv_index_io";
    fs::remove_all(dir);
    fs::create_directories(dir);
    save_retrieval_index(dir / "idx.gcix", index, "{}");
    auto loaded = load_retrieval_index<double>(dir / "idx.gcix");
    CHECK(bitwise_equal(loaded.vectors, index.vectors));
    CHECK(loaded.video_ids == index.video_ids);
    CHECK(loaded.clip_ids == index.clip_ids);
    CHECK(loaded.oracle_flags == index.oracle_flags);
    CHECK(retrieval_index_config(dir / "idx.gcix") == "{}");
    fs::remove_all(dir);
}

TEST_CASE("decode_svo yields three distributions that sum to one, deterministically") {
    auto subjects = pseudo_word_embedding(1, 6, 16);
    auto verbs = pseudo_word_embedding(2, 8, 16);
    auto objects = pseudo_word_embedding(3, 5, 16);
    auto dec = make_svo_decoder<double>(12, subjects, verbs, objects, 7);
    Rng rng(8);
    Tensor<double> h({12});
    for (auto& v : h.data) {
        v = rng.normal();
    }
    auto a = decode_svo(dec, h);
    auto b = decode_svo(dec, h);
    for (int slot = 0; slot < 3; ++slot) {
        double sum = 0.0;
        for (std::size_t i = 0; i < a[static_cast<std::size_t>(slot)].size(); ++i) {
            CHECK(a[static_cast<std::size_t>(slot)][i] ==
                  b[static_cast<std::size_t>(slot)][i]);  // bitwise deterministic
            sum += a[static_cast<std::size_t>(slot)][i];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(a[0].size() == 6);
    CHECK(a[1].size() == 8);
    CHECK(a[2].size() == 5);
}

TEST_CASE("softmax used by the decoder is invariant to constant logit shifts") {
    std::vector<double> z{0.3, -1.2, 2.0, 0.0};
    auto a = z;
    softmax_inplace(a);
    for (double c : {-5.0, 0.5, 40.0}) {
        auto b = z;
        for (auto& v : b) {
            v += c;
        }
        softmax_inplace(b);
        for (std::size_t i = 0; i < z.size(); ++i) {
            CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("on an orthonormal two-word vocabulary the matching row wins the argmax") {
    auto table = basis_table(2, 8);
    auto dec = make_svo_decoder<double>(8, table, table, table, 3);
    // projection = identity on the first 8 dims => decoder output equals h
    for (auto& e : dec.params.entries) {
        e.value = Tensor<double>::zeros({8, 8});
        for (int i = 0; i < 8; ++i) {
            e.value[static_cast<std::int64_t>(i) * 8 + i] = 1.0;
        }
    }
    Tensor<double> h = Tensor<double>::zeros({8});
    h[1] = 1.0;  // equals embedding row 1
    auto dists = decode_svo(dec, h);
    for (int slot = 0; slot < 3; ++slot) {
        CHECK(dists[static_cast<std::size_t>(slot)][1] > dists[static_cast<std::size_t>(slot)][0]);
    }
}

TEST_CASE("rank_of: descending rank with ties broken toward the lower id") {
    std::vector<double> dist{0.1, 0.4, 0.4, 0.05, 0.05};
    CHECK(rank_of(dist, 1) == 1);
    CHECK(rank_of(dist, 2) == 2);
    CHECK(rank_of(dist, 0) == 3);
    CHECK(rank_of(dist, 3) == 4);
    CHECK(rank_of(dist, 4) == 5);
    // uniform distribution: rank is id + 1, so top-1 chance is 1/vocab
    std::vector<double> uniform(10, 0.1);
    int correct = 0;
    for (int id = 0; id < 10; ++id) {
        correct += rank_of(uniform, id) <= 1;
    }
    CHECK(correct == 1);
    CHECK_THROWS_AS((void)rank_of(uniform, 10), ShapeError);
}

TEST_CASE("top-5 always contains top-1 and the multi-triple rule takes the best match") {
    std::array<std::vector<double>, 3> pooled;
    pooled[0] = {0.5, 0.2, 0.3};
    pooled[1] = {0.05, 0.15, 0.5, 0.2, 0.1};
    pooled[2] = {0.9, 0.1};
    std::vector<SvoTriple> truths{{2, 4, 1}, {0, 2, 1}};
    // slot 0: truth ids {2, 0}; top-1 is id 0 -> correct via the second triple
    CHECK(span_top_k_correct(pooled, truths, 0, 1));
    // slot 1: ids {4, 2}; top-1 is id 2 -> correct
    CHECK(span_top_k_correct(pooled, truths, 1, 1));
    // slot 2: ids {1, 1}; top-1 is id 0 -> wrong at k=1, right at k=5
    CHECK_FALSE(span_top_k_correct(pooled, truths, 2, 1));
    CHECK(span_top_k_correct(pooled, truths, 2, 5));
    // single triple, top-5 superset of top-1
    std::vector<SvoTriple> one{{0, 2, 0}};
    for (int slot = 0; slot < 3; ++slot) {
        if (span_top_k_correct(pooled, one, slot, 1)) {
            CHECK(span_top_k_correct(pooled, one, slot, 5));
        }
    }
}

TEST_CASE("decoder training learns separable data and leaves the upstream model alone") {
    // synthetic h: class determined by sign pattern of the first two coords
    Rng rng(10);
    auto subjects = pseudo_word_embedding(11, 4, 12);
    auto verbs = pseudo_word_embedding(12, 4, 12);
    auto objects = pseudo_word_embedding(13, 4, 12);
    auto dec = make_svo_decoder<double>(6, subjects, verbs, objects, 4);
    std::vector<SvoExample<double>> examples;
    for (int n = 0; n < 400; ++n) {
        int cls = static_cast<int>(rng.uniform_int(4));
        SvoExample<double> ex;
        ex.h = Tensor<double>::zeros({6});
        for (auto& v : ex.h.data) {
            v = rng.normal(0.0, 0.1);
        }
        ex.h[cls] += 2.0;
        ex.label = {cls, cls, cls};
        examples.push_back(std::move(ex));
    }
    DecoderTrainConfig cfg;
    cfg.epochs = 30;
    cfg.lr = 0.05;
    cfg.batch_size = 64;
    train_svo_decoder(dec, examples, cfg, 5);
    int correct = 0;
    for (int n = 0; n < 100; ++n) {
        const auto& ex = examples[static_cast<std::size_t>(n)];
        auto dists = decode_svo(dec, ex.h);
        correct += rank_of(dists[1], ex.label.verb) == 1;
    }
    CHECK(correct >= 90);
}

TEST_CASE("svo examples follow the label regime and skip transitional clips") {
    WorldConfig w;
    w.frame_height = 10;
    w.frame_width = 10;
    w.frames_per_clip = 4;
    w.clips_min = 5;
    w.clips_max = 5;
    w.failure_prob = 1.0;
    auto dir = fs::temp_directory_path() / "gcv_svo_examples";
    fs::remove_all(dir);
    generate_dataset(w, 6, 31, dir, 2);
    auto ds = load_dataset(dir);
    fs::remove_all(dir);

    EncoderConfig e;
    e.channels = {4};
    ModelConfig m;
    m.dim = 12;
    m.layers = 1;
    m.heads = 2;
    GoalModel<double> model(w, e, m, 2);
    auto params_before = model.params().checksum();
    auto trajs = collect_trajectories(ds, model, 2);
    auto examples = svo_examples(ds, trajs);
    CHECK(model.params().checksum() == params_before);

    std::int64_t expected = 0;
    for (const auto& v : ds.videos) {
        expected += static_cast<std::int64_t>(v.clips.size()) - 1;  // minus the transitional clip
    }
    CHECK(static_cast<std::int64_t>(examples.size()) == expected);
    for (const auto& ex : examples) {
        bool is_goal = false, is_failure = false;
        for (const auto& v : ds.videos) {
            is_goal = is_goal || ex.label == v.meta.goal_svo;
            is_failure = is_failure || (v.meta.failure_svo && ex.label == *v.meta.failure_svo);
        }
        CHECK((is_goal || is_failure));
    }
}

TEST_CASE("svo decoder round-trips through its container") {
    auto subjects = pseudo_word_embedding(1, 5, 10);
    auto verbs = pseudo_word_embedding(2, 6, 10);
    auto objects = pseudo_word_embedding(3, 4, 10);
    auto dec = make_svo_decoder<double>(8, subjects, verbs, objects, 9);
    auto dir = fs::temp_directory_path() / "gcv_decoder_io";
    fs::remove_all(dir);
    fs::create_directories(dir);
    save_svo_decoder(dir / "dec.gckp", dec, "{}");
    auto loaded = load_svo_decoder<double>(dir / "dec.gckp");
    CHECK(loaded.model_dim == dec.model_dim);
    CHECK(loaded.embed_dim == dec.embed_dim);
    CHECK(bitwise_equal(loaded.params[0], dec.params[0]));
    CHECK(bitwise_equal(loaded.verbs.rows, dec.verbs.rows));
    fs::remove_all(dir);
}
