#pragma once

#include <algorithm>

#include "gcv/container.hpp"
#include "gcv/trainer.hpp"

namespace gcv {

// ---------------------------------------------------------------------------
// nearest-neighbor retrieval over frozen clip representations
// ---------------------------------------------------------------------------

struct Neighbor {
    std::int64_t video = -1;
    int clip = -1;
    double distance = 0.0;  // cosine distance, ascending is closer
    bool oracle_intentional = false;
};

template <class T>
struct RetrievalIndex {
    Tensor<T> vectors;  // [N, d]
    std::vector<std::int64_t> video_ids;
    std::vector<int> clip_ids;
    std::vector<std::uint8_t> oracle_flags;
    std::vector<double> norms;

    std::int64_t size() const { return static_cast<std::int64_t>(video_ids.size()); }
    std::int64_t dim() const { return vectors.shape.empty() ? 0 : vectors.shape[1]; }
};

template <class T>
RetrievalIndex<T> make_retrieval_index(Tensor<T> vectors, std::vector<std::int64_t> video_ids,
                                       std::vector<int> clip_ids, std::vector<std::uint8_t> flags) {
    if (vectors.shape.size() != 2 ||
        vectors.shape[0] != static_cast<std::int64_t>(video_ids.size()) ||
        video_ids.size() != clip_ids.size() || video_ids.size() != flags.size()) {
        throw ShapeError("retrieval index: inconsistent table sizes");
    }
    RetrievalIndex<T> index;
    index.vectors = std::move(vectors);
    index.video_ids = std::move(video_ids);
    index.clip_ids = std::move(clip_ids);
    index.oracle_flags = std::move(flags);
    std::int64_t d = index.dim();
    index.norms.resize(static_cast<std::size_t>(index.size()));
    for (std::int64_t i = 0; i < index.size(); ++i) {
        double n2 = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            double v = static_cast<double>(index.vectors[i * d + j]);
            n2 += v * v;
        }
        if (n2 == 0.0) {
            throw ShapeError("retrieval index: zero vector at row " + std::to_string(i));
        }
        index.norms[static_cast<std::size_t>(i)] = std::sqrt(n2);
    }
    return index;
}

// Per-clip h vectors of the whole dataset plus oracle-intentionality flags
// computed from the generator's hidden tracks.
template <class T>
RetrievalIndex<T> build_retrieval_index(const Dataset& ds, const GoalModel<T>& model, int threads) {
    auto count = static_cast<std::int64_t>(ds.videos.size());
    std::vector<std::vector<Tensor<T>>> hs(static_cast<std::size_t>(count));
    std::vector<std::vector<std::uint8_t>> flags(static_cast<std::size_t>(count));
    parallel_for(count, threads, [&](std::int64_t v) {
        const auto& video = ds.videos[static_cast<std::size_t>(v)];
        std::vector<Tensor<T>> clips;
        for (const auto& c : video.clips) {
            clips.push_back(cast_tensor<T>(c));
        }
        auto fwd = forward_video(model, clips);
        auto st = generate_structure(ds.world, video.meta.seed);
        auto& hv = hs[static_cast<std::size_t>(v)];
        auto& fv = flags[static_cast<std::size_t>(v)];
        for (std::int64_t i = 0; i < fwd.trajectory.length(); ++i) {
            const auto& tag = fwd.trajectory.tags[static_cast<std::size_t>(i)];
            if (tag.is_special()) {
                continue;
            }
            hv.push_back(fwd.trajectory.row(i));
            double score = oracle_intentionality(clip_segment(st, ds.world, tag.clip_slot), st.goal_pos);
            fv.push_back(score >= 0.5 ? 1 : 0);
        }
    });
    std::int64_t total = 0;
    for (const auto& hv : hs) {
        total += static_cast<std::int64_t>(hv.size());
    }
    int d = model.dim();
    Tensor<T> vectors({total, d});
    std::vector<std::int64_t> video_ids;
    std::vector<int> clip_ids;
    std::vector<std::uint8_t> flat_flags;
    std::int64_t at = 0;
    for (std::int64_t v = 0; v < count; ++v) {
        for (std::size_t c = 0; c < hs[static_cast<std::size_t>(v)].size(); ++c) {
            std::copy(hs[static_cast<std::size_t>(v)][c].data.begin(),
                      hs[static_cast<std::size_t>(v)][c].data.end(), vectors.data.begin() + at * d);
            video_ids.push_back(ds.videos[static_cast<std::size_t>(v)].meta.id);
            clip_ids.push_back(static_cast<int>(c));
            flat_flags.push_back(flags[static_cast<std::size_t>(v)][c]);
            ++at;
        }
    }
    return make_retrieval_index(std::move(vectors), std::move(video_ids), std::move(clip_ids),
                                std::move(flat_flags));
}

// Exact scan: ascending cosine distance, same-video rows excluded, ties by
// (video, clip). k larger than the eligible set returns everything eligible.
template <class T>
std::vector<Neighbor> query_knn(const RetrievalIndex<T>& index, const Tensor<T>& h, int k,
                                std::int64_t exclude_video) {
    if (index.size() == 0) {
        throw ShapeError("query_knn: empty index");
    }
    if (k < 1) {
        throw ShapeError("query_knn: k must be >= 1");
    }
    std::int64_t d = index.dim();
    if (h.numel() != d) {
        throw ShapeError("query_knn: query dimension mismatch");
    }
    double qn2 = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
        double v = static_cast<double>(h[j]);
        qn2 += v * v;
    }
    if (qn2 == 0.0) {
        throw ShapeError("query_knn: zero query vector");
    }
    double qn = std::sqrt(qn2);
    std::vector<Neighbor> all;
    all.reserve(static_cast<std::size_t>(index.size()));
    for (std::int64_t i = 0; i < index.size(); ++i) {
        if (index.video_ids[static_cast<std::size_t>(i)] == exclude_video) {
            continue;
        }
        double dot = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            dot += static_cast<double>(h[j]) * static_cast<double>(index.vectors[i * d + j]);
        }
        Neighbor n;
        n.video = index.video_ids[static_cast<std::size_t>(i)];
        n.clip = index.clip_ids[static_cast<std::size_t>(i)];
        n.distance = 1.0 - dot / (qn * index.norms[static_cast<std::size_t>(i)]);
        n.oracle_intentional = index.oracle_flags[static_cast<std::size_t>(i)] != 0;
        all.push_back(n);
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
        if (a.distance != b.distance) {
            return a.distance < b.distance;
        }
        if (a.video != b.video) {
            return a.video < b.video;
        }
        return a.clip < b.clip;
    });
    if (static_cast<int>(all.size()) > k) {
        all.resize(static_cast<std::size_t>(k));
    }
    return all;
}

template <class T>
void save_retrieval_index(const std::filesystem::path& path, const RetrievalIndex<T>& index,
                          const std::string& config_echo) {
    Container c;
    c.magic = "GCIX";
    c.version = 1;
    c.records.push_back(make_tensor_record("vectors", index.vectors));
    c.records.push_back(make_i64_record("video_ids", index.video_ids));
    std::vector<std::int64_t> clips(index.clip_ids.begin(), index.clip_ids.end());
    c.records.push_back(make_i64_record("clip_ids", clips));
    c.records.push_back(make_blob_record("oracle_flags", index.oracle_flags));
    c.records.push_back(make_blob_record("__meta.config", config_echo));
    write_container(path, c);
}

template <class T>
RetrievalIndex<T> load_retrieval_index(const std::filesystem::path& path) {
    auto c = read_container(path, "GCIX");
    auto vecs = tensor_from_record<T>(c.require("vectors"));
    auto vids = i64_from_record(c.require("video_ids"));
    auto clips64 = i64_from_record(c.require("clip_ids"));
    std::vector<int> clips(clips64.begin(), clips64.end());
    auto flags_rec = c.require("oracle_flags");
    return make_retrieval_index(std::move(vecs), std::move(vids), std::move(clips),
                                flags_rec.bytes);
}

inline std::string retrieval_index_config(const std::filesystem::path& path) {
    auto c = read_container(path, "GCIX");
    return blob_as_text(c.require("__meta.config"));
}

// ---------------------------------------------------------------------------
// SVO categorization head over frozen trajectories
// ---------------------------------------------------------------------------

template <class T>
struct SvoDecoder {
    int model_dim = 0;
    int embed_dim = 0;
    EmbeddingTable subjects;
    EmbeddingTable verbs;
    EmbeddingTable objects;
    ParamSet<T> params;  // dec.subject.w / dec.verb.w / dec.object.w, each [d, e]

    const Tensor<T>& projection(int slot) const { return params[slot]; }
};

template <class T>
SvoDecoder<T> make_svo_decoder(int model_dim, const EmbeddingTable& subjects, const EmbeddingTable& verbs,
                               const EmbeddingTable& objects, std::uint64_t seed) {
    SvoDecoder<T> dec;
    dec.model_dim = model_dim;
    dec.embed_dim = subjects.dim;
    if (verbs.dim != dec.embed_dim || objects.dim != dec.embed_dim) {
        throw MismatchError("svo decoder: embedding tables must share one dimension");
    }
    dec.subjects = subjects;
    dec.verbs = verbs;
    dec.objects = objects;
    Rng rng = Rng(seed).child(0xdec0de);
    double stddev = std::sqrt(1.0 / model_dim);
    dec.params.add("dec.subject.w", init_normal<T>({model_dim, dec.embed_dim}, stddev, rng));
    dec.params.add("dec.verb.w", init_normal<T>({model_dim, dec.embed_dim}, stddev, rng));
    dec.params.add("dec.object.w", init_normal<T>({model_dim, dec.embed_dim}, stddev, rng));
    return dec;
}

template <class T>
const EmbeddingTable& svo_table(const SvoDecoder<T>& dec, int slot) {
    switch (slot) {
        case 0:
            return dec.subjects;
        case 1:
            return dec.verbs;
        default:
            return dec.objects;
    }
}

template <class T>
void softmax_inplace(std::vector<T>& logits) {
    T mx = *std::max_element(logits.begin(), logits.end());
    T z = T(0);
    for (auto& l : logits) {
        l = std::exp(l - mx);
        z += l;
    }
    for (auto& l : logits) {
        l /= z;
    }
}

// Scores are dot products between the projected vector and each embedding
// row, softmaxed per slot.
template <class T>
std::array<std::vector<T>, 3> decode_svo(const SvoDecoder<T>& dec, const Tensor<T>& h) {
    if (h.numel() != dec.model_dim) {
        throw ShapeError("decode_svo: h has wrong dimension");
    }
    std::array<std::vector<T>, 3> out;
    for (int slot = 0; slot < 3; ++slot) {
        const auto& table = svo_table(dec, slot);
        const auto& proj = dec.projection(slot);
        std::vector<T> projected(static_cast<std::size_t>(dec.embed_dim), T(0));
        for (int j = 0; j < dec.model_dim; ++j) {
            T hv = h[j];
            if (hv == T(0)) {
                continue;
            }
            for (int e = 0; e < dec.embed_dim; ++e) {
                projected[static_cast<std::size_t>(e)] +=
                    hv * proj[static_cast<std::int64_t>(j) * dec.embed_dim + e];
            }
        }
        std::vector<T> logits(static_cast<std::size_t>(table.vocab), T(0));
        for (int v = 0; v < table.vocab; ++v) {
            double acc = 0.0;
            for (int e = 0; e < dec.embed_dim; ++e) {
                acc += static_cast<double>(projected[static_cast<std::size_t>(e)]) *
                       table.rows[static_cast<std::int64_t>(v) * table.dim + e];
            }
            logits[static_cast<std::size_t>(v)] = static_cast<T>(acc);
        }
        softmax_inplace(logits);
        out[static_cast<std::size_t>(slot)] = std::move(logits);
    }
    return out;
}

// 1-based rank of a vocabulary id under descending probability; ties resolve
// by lower id.
template <class T>
int rank_of(const std::vector<T>& distribution, int id) {
    if (id < 0 || id >= static_cast<int>(distribution.size())) {
        throw ShapeError("rank_of: id outside the vocabulary");
    }
    int rank = 1;
    T p = distribution[static_cast<std::size_t>(id)];
    for (int v = 0; v < static_cast<int>(distribution.size()); ++v) {
        if (v == id) {
            continue;
        }
        T q = distribution[static_cast<std::size_t>(v)];
        if (q > p || (q == p && v < id)) {
            ++rank;
        }
    }
    return rank;
}

template <class T>
Tensor<T> transposed_table(const EmbeddingTable& table) {
    Tensor<T> t({table.dim, table.vocab});
    for (int v = 0; v < table.vocab; ++v) {
        for (int e = 0; e < table.dim; ++e) {
            t[static_cast<std::int64_t>(e) * table.vocab + v] =
                static_cast<T>(table.rows[static_cast<std::int64_t>(v) * table.dim + e]);
        }
    }
    return t;
}

template <class T>
struct SvoExample {
    Tensor<T> h;
    SvoTriple label;
};

// Label regime: clips before the onset carry the goal triple, clips after it
// carry the failure triple; transitional clips are skipped.
template <class T>
std::vector<SvoExample<T>> svo_examples(const Dataset& ds, const std::vector<Trajectory<T>>& trajectories) {
    if (ds.videos.size() != trajectories.size()) {
        throw ShapeError("svo_examples: one trajectory per video required");
    }
    std::vector<SvoExample<T>> out;
    for (std::size_t v = 0; v < ds.videos.size(); ++v) {
        const auto& meta = ds.videos[v].meta;
        auto labels = derive_fail_labels(meta.tau, static_cast<int>(ds.videos[v].clips.size())).labels;
        const auto& traj = trajectories[v];
        for (std::int64_t i = 0; i < traj.length(); ++i) {
            const auto& tag = traj.tags[static_cast<std::size_t>(i)];
            if (tag.is_special()) {
                continue;
            }
            int y = labels[static_cast<std::size_t>(tag.clip_slot)];
            if (y == 1) {
                continue;
            }
            SvoExample<T> ex;
            ex.h = traj.row(i);
            ex.label = y == 0 ? meta.goal_svo : *meta.failure_svo;
            out.push_back(std::move(ex));
        }
    }
    return out;
}

// Trains the three projections with the trajectory model frozen (examples
// are plain tensors, so no gradient can reach it by construction).
template <class T>
void train_svo_decoder(SvoDecoder<T>& dec, const std::vector<SvoExample<T>>& examples,
                       const DecoderTrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (examples.empty()) {
        throw ConfigError("train_svo_decoder: no training examples");
    }
    for (const auto& ex : examples) {
        if (ex.label.subject >= dec.subjects.vocab || ex.label.verb >= dec.verbs.vocab ||
            ex.label.object >= dec.objects.vocab) {
            throw MismatchError("train_svo_decoder: label outside the embedding vocabulary");
        }
    }
    Adam<T> adam(cfg.lr, dec.params.entries.size());
    Rng order_rng = Rng(seed).child(0x5600);
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    auto total = static_cast<std::int64_t>(examples.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(order_rng.uniform_int(static_cast<std::int64_t>(i)));
            std::swap(order[i - 1], order[j]);
        }
        for (std::int64_t at = 0; at < total; at += cfg.batch_size) {
            auto end = std::min<std::int64_t>(at + cfg.batch_size, total);
            auto b = end - at;
            Tensor<T> hs({b, dec.model_dim});
            std::array<std::vector<int>, 3> labels;
            for (std::int64_t r = 0; r < b; ++r) {
                const auto& ex = examples[order[static_cast<std::size_t>(at + r)]];
                std::copy(ex.h.data.begin(), ex.h.data.end(), hs.data.begin() + r * dec.model_dim);
                labels[0].push_back(ex.label.subject);
                labels[1].push_back(ex.label.verb);
                labels[2].push_back(ex.label.object);
            }
            auto bound = bind_params(dec.params, true);
            auto h_const = ad::constant(hs, "frozen_h");
            ad::Var<T> loss;
            for (int slot = 0; slot < 3; ++slot) {
                const auto& table = svo_table(dec, slot);
                auto logits = ad::matmul(ad::matmul(h_const, bound[slot]),
                                         ad::constant(transposed_table<T>(table), "emb"));
                std::vector<double> ones(static_cast<std::size_t>(table.vocab), 1.0);
                auto slot_loss = ad::cross_entropy_logits(logits, labels[static_cast<std::size_t>(slot)],
                                                          ones, ad::Reduction::Mean);
                loss = slot == 0 ? slot_loss : ad::add(loss, slot_loss);
            }
            auto pass = ad::backward(loss);
            std::vector<Tensor<T>> grads;
            for (const auto& leaf : bound.leaves) {
                grads.push_back(ad::gradient_of(leaf, pass).grad);
            }
            adam.step(dec.params, grads);
        }
    }
}

template <class T>
void save_svo_decoder(const std::filesystem::path& path, const SvoDecoder<T>& dec,
                      const std::string& config_echo) {
    Container c;
    c.magic = "GCKP";
    c.version = 1;
    for (const auto& e : dec.params.entries) {
        c.records.push_back(make_tensor_record(e.name, e.value));
    }
    c.records.push_back(make_tensor_record("emb.subjects", dec.subjects.rows));
    c.records.push_back(make_tensor_record("emb.verbs", dec.verbs.rows));
    c.records.push_back(make_tensor_record("emb.objects", dec.objects.rows));
    c.records.push_back(
        make_i64_record("emb.meta", {dec.model_dim, dec.embed_dim, dec.subjects.vocab, dec.verbs.vocab,
                                     dec.objects.vocab, static_cast<std::int64_t>(dec.subjects.seed)}));
    c.records.push_back(make_blob_record("__meta.config", config_echo));
    c.records.push_back(make_blob_record("__meta.kind", std::string("svo-decoder")));
    write_container(path, c);
}

template <class T>
SvoDecoder<T> load_svo_decoder(const std::filesystem::path& path) {
    auto c = read_container(path, "GCKP");
    if (blob_as_text(c.require("__meta.kind")) != "svo-decoder") {
        throw MismatchError("container is not an svo decoder: " + path.string());
    }
    auto meta = i64_from_record(c.require("emb.meta"));
    SvoDecoder<T> dec;
    dec.model_dim = static_cast<int>(meta.at(0));
    dec.embed_dim = static_cast<int>(meta.at(1));
    auto fill = [&](EmbeddingTable& t, int vocab, const char* name) {
        t.vocab = vocab;
        t.dim = dec.embed_dim;
        t.seed = static_cast<std::uint64_t>(meta.at(5));
        t.rows = tensor_from_record<double>(c.require(name));
    };
    fill(dec.subjects, static_cast<int>(meta.at(2)), "emb.subjects");
    fill(dec.verbs, static_cast<int>(meta.at(3)), "emb.verbs");
    fill(dec.objects, static_cast<int>(meta.at(4)), "emb.objects");
    dec.params.add("dec.subject.w", tensor_from_record<T>(c.require("dec.subject.w")));
    dec.params.add("dec.verb.w", tensor_from_record<T>(c.require("dec.verb.w")));
    dec.params.add("dec.object.w", tensor_from_record<T>(c.require("dec.object.w")));
    return dec;
}

// ---------------------------------------------------------------------------
// pooled per-span evaluation
// ---------------------------------------------------------------------------

// Correct when the prediction matches ANY supplied ground-truth triple's
// slot (the max-over-sentence-SVOs rule).
template <class T>
bool span_top_k_correct(const std::array<std::vector<T>, 3>& pooled,
                        const std::vector<SvoTriple>& truths, int slot, int k) {
    for (const auto& t : truths) {
        int id = slot == 0 ? t.subject : (slot == 1 ? t.verb : t.object);
        if (rank_of(pooled[static_cast<std::size_t>(slot)], id) <= k) {
            return true;
        }
    }
    return false;
}

struct PooledSvoReport {
    std::array<double, 3> goal_top1{};
    std::array<double, 3> goal_top5{};
    std::array<double, 3> failure_top1{};
    std::array<double, 3> failure_top5{};
    std::int64_t goal_spans = 0;
    std::int64_t failure_spans = 0;
    std::int64_t skipped_empty_spans = 0;
};

// Pool = mean of per-clip distributions over each span; goal span = clips
// before the onset, failure span = clips after it.
template <class T>
PooledSvoReport pooled_svo_eval(const Dataset& ds, const std::vector<Trajectory<T>>& trajectories,
                                const SvoDecoder<T>& dec) {
    if (ds.videos.size() != trajectories.size()) {
        throw ShapeError("pooled_svo_eval: one trajectory per video required");
    }
    PooledSvoReport report;
    std::array<std::array<std::int64_t, 3>, 2> top1{};  // [span][slot]
    std::array<std::array<std::int64_t, 3>, 2> top5{};
    std::array<std::int64_t, 2> spans{};
    for (std::size_t v = 0; v < ds.videos.size(); ++v) {
        const auto& meta = ds.videos[v].meta;
        auto labels = derive_fail_labels(meta.tau, static_cast<int>(ds.videos[v].clips.size())).labels;
        const auto& traj = trajectories[v];
        for (int span = 0; span < 2; ++span) {
            int want_label = span == 0 ? 0 : 2;
            if (span == 1 && !meta.failure_svo) {
                continue;
            }
            std::array<std::vector<T>, 3> pooled;
            std::int64_t pooled_count = 0;
            for (std::int64_t i = 0; i < traj.length(); ++i) {
                const auto& tag = traj.tags[static_cast<std::size_t>(i)];
                if (tag.is_special() || labels[static_cast<std::size_t>(tag.clip_slot)] != want_label) {
                    continue;
                }
                auto dists = decode_svo(dec, traj.row(i));
                for (int slot = 0; slot < 3; ++slot) {
                    auto& acc = pooled[static_cast<std::size_t>(slot)];
                    const auto& d = dists[static_cast<std::size_t>(slot)];
                    if (acc.empty()) {
                        acc.assign(d.size(), T(0));
                    }
                    for (std::size_t j = 0; j < d.size(); ++j) {
                        acc[j] += d[j];
                    }
                }
                ++pooled_count;
            }
            if (pooled_count == 0) {
                ++report.skipped_empty_spans;
                continue;
            }
            for (auto& acc : pooled) {
                for (auto& p : acc) {
                    p /= static_cast<T>(pooled_count);
                }
            }
            std::vector<SvoTriple> truths{span == 0 ? meta.goal_svo : *meta.failure_svo};
            ++spans[static_cast<std::size_t>(span)];
            for (int slot = 0; slot < 3; ++slot) {
                top1[static_cast<std::size_t>(span)][static_cast<std::size_t>(slot)] +=
                    span_top_k_correct(pooled, truths, slot, 1);
                top5[static_cast<std::size_t>(span)][static_cast<std::size_t>(slot)] +=
                    span_top_k_correct(pooled, truths, slot, 5);
            }
        }
    }
    report.goal_spans = spans[0];
    report.failure_spans = spans[1];
    for (int slot = 0; slot < 3; ++slot) {
        if (spans[0] > 0) {
            report.goal_top1[static_cast<std::size_t>(slot)] =
                static_cast<double>(top1[0][static_cast<std::size_t>(slot)]) / spans[0];
            report.goal_top5[static_cast<std::size_t>(slot)] =
                static_cast<double>(top5[0][static_cast<std::size_t>(slot)]) / spans[0];
        }
        if (spans[1] > 0) {
            report.failure_top1[static_cast<std::size_t>(slot)] =
                static_cast<double>(top1[1][static_cast<std::size_t>(slot)]) / spans[1];
            report.failure_top5[static_cast<std::size_t>(slot)] =
                static_cast<double>(top5[1][static_cast<std::size_t>(slot)]) / spans[1];
        }
    }
    return report;
}

// Intact-sequence trajectories for a whole dataset.
template <class T>
std::vector<Trajectory<T>> collect_trajectories(const Dataset& ds, const GoalModel<T>& model,
                                                int threads) {
    auto count = static_cast<std::int64_t>(ds.videos.size());
    std::vector<Trajectory<T>> out(static_cast<std::size_t>(count));
    parallel_for(count, threads, [&](std::int64_t v) {
        std::vector<Tensor<T>> clips;
        for (const auto& c : ds.videos[static_cast<std::size_t>(v)].clips) {
            clips.push_back(cast_tensor<T>(c));
        }
        out[static_cast<std::size_t>(v)] = forward_video(model, clips).trajectory;
    });
    return out;
}

}  // namespace gcv
