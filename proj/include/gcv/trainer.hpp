#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <ostream>
#include <sstream>

#include "gcv/container.hpp"
#include "gcv/model.hpp"
#include "gcv/objectives.hpp"
#include "gcv/world.hpp"

namespace gcv {

// ---------------------------------------------------------------------------
// checkpoints (GCKP)
// ---------------------------------------------------------------------------

template <class T>
void save_checkpoint(const std::filesystem::path& path, const GoalModel<T>& model, const RunConfig& cfg,
                     std::int64_t step, const Rng& rng) {
    Container c;
    c.magic = "GCKP";
    c.version = 1;
    for (const auto& e : model.params().entries) {
        c.records.push_back(make_tensor_record(e.name, e.value));
    }
    c.records.push_back(make_blob_record("__meta.config", cfg.echo_json()));
    c.records.push_back(make_i64_record("__meta.step", {step}));
    auto state = rng.serialize();
    std::vector<std::uint8_t> rng_bytes(sizeof(state));
    std::memcpy(rng_bytes.data(), state.data(), sizeof(state));
    c.records.push_back(make_blob_record("__meta.rng", rng_bytes));
    write_container(path, c);
}

// Reads only the embedded config (used to pick the precision before the
// typed load).
inline RunConfig peek_checkpoint_config(const std::filesystem::path& path) {
    auto c = read_container(path, "GCKP");
    return run_config_from_echo(blob_as_text(c.require("__meta.config")));
}

template <class T>
struct LoadedCheckpoint {
    GoalModel<T> model;
    RunConfig config;
    std::int64_t step = 0;
    Rng rng;

    LoadedCheckpoint(GoalModel<T> m, RunConfig cfg, std::int64_t s, Rng r)
        : model(std::move(m)), config(std::move(cfg)), step(s), rng(r) {}
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    auto c = read_container(path, "GCKP");
    RunConfig cfg = run_config_from_echo(blob_as_text(c.require("__meta.config")));
    if ((cfg.precision == Precision::Single) != (std::is_same_v<T, float>)) {
        throw MismatchError("checkpoint precision is " + precision_name(cfg.precision) +
                            "; load with the matching scalar type");
    }
    GoalModel<T> model(cfg.world, cfg.encoder, cfg.model, cfg.seed);
    std::size_t restored = 0;
    for (auto& e : model.params().entries) {
        e.value = tensor_from_record<T>(c.require(e.name));
        ++restored;
    }
    std::size_t meta = 0;
    for (const auto& r : c.records) {
        meta += r.name.rfind("__meta.", 0) == 0;
    }
    if (restored + meta != c.records.size()) {
        throw MismatchError("checkpoint contains parameters unknown to this configuration");
    }
    std::int64_t step = i64_from_record(c.require("__meta.step")).at(0);
    auto rng_rec = c.require("__meta.rng");
    std::array<std::uint64_t, 5> words{};
    if (rng_rec.bytes.size() != sizeof(words)) {
        throw IoError("checkpoint rng state has unexpected size");
    }
    std::memcpy(words.data(), rng_rec.bytes.data(), sizeof(words));
    return LoadedCheckpoint<T>(std::move(model), std::move(cfg), step, Rng::deserialize(words));
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

// Adaptive-moment gradient descent, lr 3e-4 default, no schedule.
template <class T>
class Adam {
public:
    Adam(double lr, std::size_t slots) : lr_(lr), m_(slots), v_(slots) {}

    void step(ParamSet<T>& params, const std::vector<Tensor<T>>& grads) {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t p = 0; p < params.entries.size(); ++p) {
            auto& value = params.entries[p].value;
            const auto& g = grads[p];
            if (m_[p].numel() == 0) {
                m_[p] = Tensor<T>::zeros(value.shape);
                v_[p] = Tensor<T>::zeros(value.shape);
            }
            for (std::int64_t i = 0; i < value.numel(); ++i) {
                double gi = static_cast<double>(g[i]);
                double m = beta1_ * static_cast<double>(m_[p][i]) + (1.0 - beta1_) * gi;
                double v = beta2_ * static_cast<double>(v_[p][i]) + (1.0 - beta2_) * gi * gi;
                m_[p][i] = static_cast<T>(m);
                v_[p][i] = static_cast<T>(v);
                double update = lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
                value[i] = static_cast<T>(static_cast<double>(value[i]) - update);
            }
        }
    }

private:
    double lr_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    std::int64_t t_ = 0;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
};

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct EpochMetrics {
    int epoch = 0;
    double fail_loss = 0.0;
    double nsp_loss = 0.0;
    double combined = 0.0;
};

template <class T>
struct TrainOutcome {
    GoalModel<T> model;
    std::vector<EpochMetrics> metrics;
    bool diverged = false;
    std::int64_t steps = 0;
    Rng rng_final;

    TrainOutcome(GoalModel<T> m, Rng r) : model(std::move(m)), rng_final(r) {}
};

namespace trainer_detail {

inline std::array<std::int64_t, 3> count_labels(const Dataset& ds) {
    std::array<std::int64_t, 3> counts{};
    for (const auto& v : ds.videos) {
        auto labels = derive_fail_labels(v.meta.tau, static_cast<int>(v.clips.size())).labels;
        for (int l : labels) {
            ++counts[static_cast<std::size_t>(l)];
        }
    }
    return counts;
}

// Contiguous window of n clips with labels, as sampler input.
inline SequenceSpec window_spec(const Dataset& ds, std::size_t video_index, int n, Rng& rng) {
    const auto& video = ds.videos[video_index];
    auto len = static_cast<int>(video.clips.size());
    n = std::min(n, len);
    int start = len == n ? 0 : static_cast<int>(rng.uniform_int(len - n + 1));
    auto labels = derive_fail_labels(video.meta.tau, len).labels;
    SequenceSpec spec;
    for (int c = start; c < start + n; ++c) {
        spec.clips.push_back(
            {static_cast<std::int64_t>(video_index), c, labels[static_cast<std::size_t>(c)]});
    }
    return spec;
}

template <class T>
struct ShardResult {
    std::vector<Tensor<T>> grads;
    double fail_sum = 0.0;  // sum over clips of weighted CE
    double nsp_sum = 0.0;   // sum over sequences of BCE
    std::int64_t clip_count = 0;
};

}  // namespace trainer_detail

template <class T>
struct SpecForward {
    Trajectory<T> trajectory;
    std::vector<std::array<T, 3>> fail_probs;
    T nsp_prob = T(0);
};

// Inference over an arbitrary (possibly perturbed/split) sequence spec.
template <class T>
SpecForward<T> forward_spec(const GoalModel<T>& model, const Dataset& ds, const SequenceSpec& spec) {
    auto bound = model.bind(false);
    std::vector<ad::Var<T>> embs;
    embs.reserve(spec.clips.size());
    for (const auto& ref : spec.clips) {
        embs.push_back(model.encode_clip(
            bound, cast_tensor<T>(ds.videos[static_cast<std::size_t>(ref.video)]
                                      .clips[static_cast<std::size_t>(ref.clip)])));
    }
    auto seq = model.build_token_sequence(bound, embs, spec.split);
    auto fwd = model.forward_batch(bound, {seq});
    SpecForward<T> out;
    out.trajectory = fwd.trajectory(0);
    out.nsp_prob = model.nsp_head(out.trajectory);
    for (std::int64_t i = 0; i < out.trajectory.length(); ++i) {
        if (!out.trajectory.tags[static_cast<std::size_t>(i)].is_special()) {
            out.fail_probs.push_back(model.fail_head(out.trajectory, i));
        }
    }
    return out;
}

// End-to-end training with the intentionality + consistency objectives.
// Deterministic for a fixed seed and thread count; bitwise reproducible at
// threads = 1. On a non-finite loss the last finished epoch's parameters are
// restored and the outcome is flagged diverged.
template <class T>
TrainOutcome<T> train_model(const Dataset& ds, const RunConfig& cfg, std::ostream* metrics_jsonl) {
    cfg.validate();
    if (ds.videos.empty()) {
        throw ConfigError("train: dataset is empty");
    }
    if (!ds.world.shape_compatible(cfg.world)) {
        throw MismatchError("train: dataset world does not match the run configuration");
    }
    auto weights3 = class_weights(trainer_detail::count_labels(ds));
    std::vector<double> weights{weights3[0], weights3[1], weights3[2]};

    int threads = resolve_threads(cfg.threads);
    Rng master(cfg.seed);
    TrainOutcome<T> out(GoalModel<T>(ds.world, cfg.encoder, cfg.model, cfg.seed), master);

    Adam<T> adam(cfg.train.lr, out.model.params().entries.size());
    std::vector<typename ParamSet<T>::Entry> last_good = out.model.params().entries;

    auto video_count = static_cast<std::int64_t>(ds.videos.size());
    std::vector<std::size_t> order(static_cast<std::size_t>(video_count));
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }

    for (int epoch = 0; epoch < cfg.train.epochs && !out.diverged; ++epoch) {
        Rng epoch_rng = master.child(0xE70C4, static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(epoch_rng.uniform_int(static_cast<std::int64_t>(i)));
            std::swap(order[i - 1], order[j]);
        }

        double epoch_fail = 0.0, epoch_nsp = 0.0, epoch_combined = 0.0;
        std::int64_t batches = 0;
        for (std::int64_t at = 0; at < video_count && !out.diverged; at += cfg.train.batch_size) {
            auto batch_end = std::min<std::int64_t>(at + cfg.train.batch_size, video_count);
            Rng batch_rng = master.child(0xBA7C4, static_cast<std::uint64_t>(epoch) * 1000003ULL +
                                                      static_cast<std::uint64_t>(at));
            std::vector<SequenceSpec> specs;
            for (std::int64_t b = at; b < batch_end; ++b) {
                int n = cfg.train.n_lo +
                        static_cast<int>(batch_rng.uniform_int(cfg.train.n_hi - cfg.train.n_lo + 1));
                specs.push_back(trainer_detail::window_spec(ds, order[static_cast<std::size_t>(b)], n,
                                                            batch_rng));
            }
            sample_nsp_perturbation(specs, cfg.loss, batch_rng);

            std::int64_t total_clips = 0;
            for (const auto& s : specs) {
                total_clips += s.length();
            }
            auto total_seqs = static_cast<std::int64_t>(specs.size());

            // Fixed partition into shards; each shard builds an independent
            // graph, grads are reduced in shard order.
            auto shard_count =
                static_cast<std::int64_t>(std::min<std::int64_t>(threads, total_seqs));
            std::vector<trainer_detail::ShardResult<T>> shards(static_cast<std::size_t>(shard_count));
            parallel_for(shard_count, threads, [&](std::int64_t shard) {
                auto lo = static_cast<std::size_t>(shard * total_seqs / shard_count);
                auto hi = static_cast<std::size_t>((shard + 1) * total_seqs / shard_count);
                auto& result = shards[static_cast<std::size_t>(shard)];
                if (lo >= hi) {
                    return;
                }
                auto bound = out.model.bind(true);
                std::vector<SeqTokens<T>> seqs;
                std::vector<double> nsp_targets;
                for (std::size_t s = lo; s < hi; ++s) {
                    const auto& spec = specs[s];
                    std::vector<ad::Var<T>> embs;
                    for (const auto& ref : spec.clips) {
                        embs.push_back(out.model.encode_clip(
                            bound, cast_tensor<T>(ds.videos[static_cast<std::size_t>(ref.video)]
                                                      .clips[static_cast<std::size_t>(ref.clip)])));
                    }
                    seqs.push_back(out.model.build_token_sequence(bound, embs, spec.split));
                    nsp_targets.push_back(spec.y_nsp);
                }
                Rng dropout_rng = master.child(0xD409, static_cast<std::uint64_t>(epoch) * 1000003ULL +
                                                           static_cast<std::uint64_t>(at) * 131ULL +
                                                           static_cast<std::uint64_t>(shard));
                auto fwd = out.model.forward_batch(bound, seqs,
                                                   cfg.model.dropout > 0.0 ? &dropout_rng : nullptr);

                std::vector<std::int64_t> clip_rows;
                std::vector<std::int64_t> h0_rows;
                std::vector<int> labels;
                for (std::size_t s = 0; s < seqs.size(); ++s) {
                    h0_rows.push_back(fwd.flat_index(static_cast<std::int64_t>(s), 0));
                    const auto& tags = fwd.tags[s];
                    for (std::size_t p = 0; p < tags.size(); ++p) {
                        if (tags[p].kind == TokenTag::Kind::Clip) {
                            clip_rows.push_back(
                                fwd.flat_index(static_cast<std::int64_t>(s), static_cast<std::int64_t>(p)));
                            labels.push_back(specs[lo + s].clips[static_cast<std::size_t>(tags[p].clip_slot)]
                                                 .label);
                        }
                    }
                }
                auto fail_sum = ad::cross_entropy_logits(
                    out.model.fail_logits(bound, ad::gather_rows(fwd.hidden, clip_rows)), labels, weights,
                    ad::Reduction::Sum);
                auto nsp_sum = ad::bce_logits(
                    out.model.nsp_logits(bound, ad::gather_rows(fwd.hidden, h0_rows)), nsp_targets,
                    ad::Reduction::Sum);
                auto loss = ad::add(ad::scale(fail_sum, 1.0 / static_cast<double>(total_clips)),
                                    ad::scale(nsp_sum, cfg.loss.lambda / static_cast<double>(total_seqs)));
                auto pass = ad::backward(loss);
                result.fail_sum = static_cast<double>(fail_sum->value[0]);
                result.nsp_sum = static_cast<double>(nsp_sum->value[0]);
                result.clip_count = static_cast<std::int64_t>(labels.size());
                result.grads.reserve(bound.leaves.size());
                for (const auto& leaf : bound.leaves) {
                    result.grads.push_back(ad::gradient_of(leaf, pass).grad);
                }
            });

            double fail_total = 0.0, nsp_total = 0.0;
            std::vector<Tensor<T>> grads;
            grads.reserve(out.model.params().entries.size());
            for (const auto& e : out.model.params().entries) {
                grads.push_back(Tensor<T>::zeros(e.value.shape));
            }
            for (const auto& shard : shards) {
                fail_total += shard.fail_sum;
                nsp_total += shard.nsp_sum;
                if (shard.grads.empty()) {
                    continue;
                }
                for (std::size_t p = 0; p < grads.size(); ++p) {
                    for (std::int64_t i = 0; i < grads[p].numel(); ++i) {
                        grads[p][i] += shard.grads[p][i];
                    }
                }
            }
            double batch_fail = fail_total / static_cast<double>(total_clips);
            double batch_nsp = nsp_total / static_cast<double>(total_seqs);
            double batch_loss = combined_loss(batch_fail, batch_nsp, cfg.loss.lambda);
            if (!std::isfinite(batch_loss)) {
                out.model.params().entries = last_good;
                out.diverged = true;
                break;
            }
            adam.step(out.model.params(), grads);
            ++out.steps;
            epoch_fail += batch_fail;
            epoch_nsp += batch_nsp;
            epoch_combined += batch_loss;
            ++batches;
        }
        if (out.diverged) {
            break;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.fail_loss = epoch_fail / std::max<std::int64_t>(1, batches);
        m.nsp_loss = epoch_nsp / std::max<std::int64_t>(1, batches);
        m.combined = epoch_combined / std::max<std::int64_t>(1, batches);
        out.metrics.push_back(m);
        if (metrics_jsonl != nullptr) {
            std::ostringstream line;
            line.precision(17);
            line << "{\"epoch\":" << m.epoch << ",\"fail_loss\":" << m.fail_loss
                 << ",\"nsp_loss\":" << m.nsp_loss << ",\"loss\":" << m.combined << "}";
            (*metrics_jsonl) << line.str() << "\n";
        }
        last_good = out.model.params().entries;
    }
    out.rng_final = master.child(0xF17A1, static_cast<std::uint64_t>(out.steps));
    return out;
}

// ---------------------------------------------------------------------------
// evaluation protocol
// ---------------------------------------------------------------------------

// Predicted onset: the clip with maximum transitional probability (or the
// unintentional class when selected); ties resolve to the earliest clip.
template <class T>
int localize_onset(const std::vector<std::array<T, 3>>& fail_probs, bool use_unintentional = false) {
    if (fail_probs.size() < 2) {
        throw ShapeError("localize_onset: need at least two clips");
    }
    int cls = use_unintentional ? 2 : 1;
    int best = 0;
    for (std::size_t i = 1; i < fail_probs.size(); ++i) {
        if (fail_probs[i][static_cast<std::size_t>(cls)] >
            fail_probs[static_cast<std::size_t>(best)][static_cast<std::size_t>(cls)]) {
            best = static_cast<int>(i);
        }
    }
    return best;
}

struct FailEvalReport {
    double clip_accuracy = 0.0;
    std::int64_t clip_count = 0;
    std::array<double, 3> per_class_accuracy{};
    std::array<std::int64_t, 3> per_class_counts{};
    double localization_accuracy = 0.0;  // |pred - tau| <= 1, failing videos only
    double localization_median_abs_error = 0.0;
    std::int64_t failing_videos = 0;
};

struct FailEvalAccumulator {
    std::int64_t correct = 0;
    std::int64_t total = 0;
    std::array<std::int64_t, 3> class_correct{};
    std::array<std::int64_t, 3> class_total{};
    std::vector<int> localization_errors;

    void add_video(const std::vector<int>& argmax, const std::vector<int>& labels, std::optional<int> tau,
                   std::optional<int> predicted_onset) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            int y = labels[i];
            ++total;
            ++class_total[static_cast<std::size_t>(y)];
            if (argmax[i] == y) {
                ++correct;
                ++class_correct[static_cast<std::size_t>(y)];
            }
        }
        if (tau && predicted_onset) {
            localization_errors.push_back(std::abs(*predicted_onset - *tau));
        }
    }

    FailEvalReport report() const {
        FailEvalReport r;
        r.clip_count = total;
        r.clip_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
        for (int c = 0; c < 3; ++c) {
            auto n = class_total[static_cast<std::size_t>(c)];
            r.per_class_counts[static_cast<std::size_t>(c)] = n;
            r.per_class_accuracy[static_cast<std::size_t>(c)] =
                n > 0 ? static_cast<double>(class_correct[static_cast<std::size_t>(c)]) /
                            static_cast<double>(n)
                      : 0.0;
        }
        r.failing_videos = static_cast<std::int64_t>(localization_errors.size());
        if (!localization_errors.empty()) {
            std::int64_t within = 0;
            for (int e : localization_errors) {
                within += e <= 1;
            }
            r.localization_accuracy =
                static_cast<double>(within) / static_cast<double>(localization_errors.size());
            auto sorted = localization_errors;
            std::sort(sorted.begin(), sorted.end());
            std::size_t n = sorted.size();
            r.localization_median_abs_error =
                n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
        }
        return r;
    }
};

template <class T>
FailEvalReport evaluate_fail(const Dataset& ds, const GoalModel<T>& model, int threads) {
    auto count = static_cast<std::int64_t>(ds.videos.size());
    std::vector<std::vector<int>> all_argmax(static_cast<std::size_t>(count));
    std::vector<std::optional<int>> all_pred(static_cast<std::size_t>(count));
    parallel_for(count, threads, [&](std::int64_t i) {
        const auto& video = ds.videos[static_cast<std::size_t>(i)];
        std::vector<Tensor<T>> clips;
        clips.reserve(video.clips.size());
        for (const auto& c : video.clips) {
            clips.push_back(cast_tensor<T>(c));
        }
        auto fwd = forward_video(model, clips);
        all_argmax[static_cast<std::size_t>(i)] = fwd.fail_argmax;
        if (video.meta.tau && fwd.fail_probs.size() >= 2) {
            all_pred[static_cast<std::size_t>(i)] = localize_onset(fwd.fail_probs);
        }
    });
    FailEvalAccumulator acc;
    for (std::int64_t i = 0; i < count; ++i) {
        const auto& video = ds.videos[static_cast<std::size_t>(i)];
        auto labels = derive_fail_labels(video.meta.tau, static_cast<int>(video.clips.size())).labels;
        acc.add_video(all_argmax[static_cast<std::size_t>(i)], labels, video.meta.tau,
                      all_pred[static_cast<std::size_t>(i)]);
    }
    return acc.report();
}

// Balanced consistency probe: every usable video contributes one split
// unperturbed sequence (y=1) and one split perturbed sequence (y=0), so a
// constant predictor scores exactly one half.
template <class T>
double evaluate_nsp_balanced(const Dataset& ds, const GoalModel<T>& model, const LossConfig& loss_cfg,
                             std::uint64_t seed, int threads) {
    std::vector<SequenceSpec> base;
    for (std::size_t v = 0; v < ds.videos.size(); ++v) {
        const auto& video = ds.videos[v];
        if (video.clips.size() < 2) {
            continue;
        }
        auto labels = derive_fail_labels(video.meta.tau, static_cast<int>(video.clips.size())).labels;
        SequenceSpec spec;
        for (std::size_t c = 0; c < video.clips.size(); ++c) {
            spec.clips.push_back({static_cast<std::int64_t>(v), static_cast<int>(c),
                                  labels[c]});
        }
        base.push_back(std::move(spec));
    }
    if (base.size() < 2) {
        throw ConfigError("evaluate_nsp_balanced: need at least two videos with two clips");
    }
    Rng rng = Rng(seed).child(0x45b);
    LossConfig clean = loss_cfg;
    clean.p_split = 1.0;
    clean.p_perturb = 0.0;
    auto positives = base;
    sample_nsp_perturbation(positives, clean, rng);
    LossConfig perturb = loss_cfg;
    perturb.p_split = 1.0;
    perturb.p_perturb = 1.0;
    auto negatives = base;
    sample_nsp_perturbation(negatives, perturb, rng);

    std::vector<SequenceSpec> all;
    all.reserve(positives.size() + negatives.size());
    all.insert(all.end(), positives.begin(), positives.end());
    all.insert(all.end(), negatives.begin(), negatives.end());
    std::vector<int> correct(all.size(), 0);
    parallel_for(static_cast<std::int64_t>(all.size()), threads, [&](std::int64_t i) {
        auto fwd = forward_spec(model, ds, all[static_cast<std::size_t>(i)]);
        int predicted = fwd.nsp_prob >= T(0.5) ? 1 : 0;
        int want = all[static_cast<std::size_t>(i)].y_nsp == 1.0 ? 1 : 0;
        correct[static_cast<std::size_t>(i)] = predicted == want;
    });
    std::int64_t right = 0;
    for (int c : correct) {
        right += c;
    }
    return static_cast<double>(right) / static_cast<double>(all.size());
}

}  // namespace gcv
