#pragma once

#include "gcv/decoders.hpp"

namespace gcv {

// ---------------------------------------------------------------------------
// latent trajectory correction: iterative target-class sign-gradient steps on
// the motion features within an L-inf ball, with a truncated coherence hinge
// ---------------------------------------------------------------------------

// phi = f(clips): one row per clip, computed once by the frozen encoder.
template <class T>
Tensor<T> motion_features(const GoalModel<T>& model, const std::vector<Tensor<T>>& clips) {
    if (clips.empty()) {
        throw ShapeError("motion_features: no clips");
    }
    auto bound = model.bind(false);
    Tensor<T> phi({static_cast<std::int64_t>(clips.size()), model.dim()});
    for (std::size_t i = 0; i < clips.size(); ++i) {
        auto emb = model.encode_clip(bound, clips[i]);
        std::copy(emb->value.data.begin(), emb->value.data.end(),
                  phi.data.begin() + static_cast<std::int64_t>(i) * model.dim());
    }
    return phi;
}

template <class T>
struct PhiForward {
    Trajectory<T> trajectory;
    std::vector<std::array<T, 3>> fail_probs;  // per clip
    std::vector<int> fail_argmax;
    T nsp_prob = T(0);
};

// Forward pass over a feature matrix (optionally SEP-split) without grads.
template <class T>
PhiForward<T> phi_forward(const GoalModel<T>& model, const Tensor<T>& phi, std::optional<int> split) {
    auto bound = model.bind(false);
    auto seq = model.build_token_sequence_from_matrix(bound, ad::constant(phi, "phi"), split);
    auto fwd = model.forward_batch(bound, {seq});
    PhiForward<T> out;
    out.trajectory = fwd.trajectory(0);
    out.nsp_prob = model.nsp_head(out.trajectory);
    for (std::int64_t i = 0; i < out.trajectory.length(); ++i) {
        if (out.trajectory.tags[static_cast<std::size_t>(i)].is_special()) {
            continue;
        }
        auto probs = model.fail_head(out.trajectory, i);
        out.fail_argmax.push_back(argmax_lowest(probs.data(), kFailClasses));
        out.fail_probs.push_back(probs);
    }
    return out;
}

struct JBreakdown {
    double nsp_term = 0.0;   // consistency loss of phi' at target y = 1
    double hinge = 0.0;      // max(0, nsp(phi') - nsp(phi))
    double fail_sum = 0.0;   // sum over modified clips of CE toward intentional
    double j = 0.0;          // hinge + lambda * fail_sum
};

// One sign-gradient step clipped to the epsilon ball around the original
// value; sign(0) moves nothing.
template <class T>
T attack_step(T current, T grad, T original, T alpha, T eps) {
    T step = grad > T(0) ? alpha : (grad < T(0) ? -alpha : T(0));
    T updated = current - step;
    T lo = original - eps;
    T hi = original + eps;
    return std::min(std::max(updated, lo), hi);
}

namespace autocorrect_detail {

template <class T>
double fail_sum_towards_intentional(const PhiForward<T>& fwd, const std::vector<int>& modified) {
    double sum = 0.0;
    for (int i : modified) {
        sum += -std::log(std::max(static_cast<double>(fwd.fail_probs[static_cast<std::size_t>(i)][0]),
                                  1e-12));
    }
    return sum;
}

}  // namespace autocorrect_detail

// J(phi') with the consistency hinge truncated at the original sequence's
// loss. The sequence is split at the first modified clip so the consistency
// head judges whether the corrected tail still follows the observed prefix.
template <class T>
JBreakdown objective_j(const GoalModel<T>& model, const Tensor<T>& phi_prime, const Tensor<T>& phi,
                       const std::vector<int>& modified, double lambda_ac) {
    if (!phi_prime.same_shape(phi)) {
        throw ShapeError("objective_j: phi' and phi must share a shape");
    }
    JBreakdown out;
    if (modified.empty()) {
        return out;
    }
    std::optional<int> split;
    if (modified.front() > 0) {
        split = modified.front();
    }
    auto fwd_orig = phi_forward(model, phi, split);
    auto fwd_new = phi_forward(model, phi_prime, split);
    double nsp_orig = nsp_loss(static_cast<double>(fwd_orig.nsp_prob), 1.0);
    out.nsp_term = nsp_loss(static_cast<double>(fwd_new.nsp_prob), 1.0);
    out.hinge = std::max(0.0, out.nsp_term - nsp_orig);
    out.fail_sum = autocorrect_detail::fail_sum_towards_intentional(fwd_new, modified);
    out.j = out.hinge + lambda_ac * out.fail_sum;
    return out;
}

template <class T>
struct CorrectionResult {
    Tensor<T> phi_original;   // [m, d]
    Tensor<T> phi_corrected;  // [m, d]; rows off the modified set are untouched
    std::vector<int> modified_clips;
    int onset = -1;  // first modified clip, -1 when nothing was modified
    int iterations = 0;
    bool fooled = true;
    double j_initial = 0.0;
    double j_final = 0.0;
    double nsp_loss_original = 0.0;
    double nsp_loss_corrected = 0.0;
    double max_residual = 0.0;  // |phi' - phi|_inf
    Trajectory<T> original_trajectory;   // intact-sequence forward over phi
    Trajectory<T> corrected_trajectory;  // intact-sequence forward over phi'
};

// The iterative target-class update
//   phi_{t:T} <- clip[phi_{t:T} - alpha * sign(grad J), phi +- epsilon]
// over the clips the model classifies unintentional, halting as soon as all
// of them flip to the intentional argmax or after k_max rounds. The final
// trajectory comes from one intact-sequence forward over phi'.
template <class T>
CorrectionResult<T> autocorrect_features(const GoalModel<T>& model, const Tensor<T>& phi,
                                         const AutocorrectConfig& cfg) {
    cfg.validate();
    if (phi.shape.size() != 2 || phi.shape[1] != model.dim()) {
        throw ShapeError("autocorrect_features: phi must be [clips, d]");
    }
    CorrectionResult<T> result;
    result.phi_original = phi;
    result.phi_corrected = phi;

    auto intact = phi_forward(model, phi, std::nullopt);
    result.original_trajectory = intact.trajectory;
    for (std::size_t i = 0; i < intact.fail_argmax.size(); ++i) {
        if (intact.fail_argmax[i] == 2) {
            result.modified_clips.push_back(static_cast<int>(i));
        }
    }
    if (result.modified_clips.empty()) {
        result.corrected_trajectory = intact.trajectory;
        result.nsp_loss_original = nsp_loss(static_cast<double>(intact.nsp_prob), 1.0);
        result.nsp_loss_corrected = result.nsp_loss_original;
        return result;
    }
    result.fooled = false;
    result.onset = result.modified_clips.front();
    std::optional<int> split;
    if (result.onset > 0) {
        split = result.onset;
    }

    auto split_orig = phi_forward(model, phi, split);
    double nsp_orig = nsp_loss(static_cast<double>(split_orig.nsp_prob), 1.0);
    result.nsp_loss_original = nsp_orig;
    result.j_initial =
        cfg.lambda * autocorrect_detail::fail_sum_towards_intentional(split_orig, result.modified_clips);
    result.j_final = result.j_initial;
    result.nsp_loss_corrected = nsp_orig;

    const auto& modified = result.modified_clips;
    std::vector<int> zero_labels(modified.size(), 0);
    std::vector<double> unit_weights{1.0, 1.0, 1.0};
    int d = model.dim();

    // One forward+backward per round over the transformer only; the encoder
    // is not part of this graph.
    struct Round {
        ad::Var<T> j;
        ad::Var<T> phi_leaf;
        std::vector<int> argmax;
        double nsp_value = 0.0;
        double j_value = 0.0;
    };
    auto run_round = [&](const Tensor<T>& phi_cur) {
        auto bound = model.bind(false);
        Round r;
        r.phi_leaf = ad::leaf(phi_cur, true, "phi");
        auto seq = model.build_token_sequence_from_matrix(bound, r.phi_leaf, split);
        auto fwd = model.forward_batch(bound, {seq});
        auto h0 = ad::gather_rows(fwd.hidden, {fwd.flat_index(0, 0)});
        auto nsp_var = ad::bce_logits(model.nsp_logits(bound, h0), {1.0}, ad::Reduction::Sum);
        auto hinge = ad::relu(ad::sub(nsp_var, ad::scalar_const<T>(static_cast<T>(nsp_orig))));
        std::vector<std::int64_t> rows;
        const auto& tags = fwd.tags[0];
        std::vector<std::int64_t> clip_positions;
        for (std::size_t p = 0; p < tags.size(); ++p) {
            if (tags[p].kind == TokenTag::Kind::Clip) {
                clip_positions.push_back(static_cast<std::int64_t>(p));
            }
        }
        for (int i : modified) {
            rows.push_back(fwd.flat_index(0, clip_positions[static_cast<std::size_t>(i)]));
        }
        auto fail_sum =
            ad::cross_entropy_logits(model.fail_logits(bound, ad::gather_rows(fwd.hidden, rows)),
                                     zero_labels, unit_weights, ad::Reduction::Sum);
        r.j = ad::add(hinge, ad::scale(fail_sum, cfg.lambda));
        r.nsp_value = static_cast<double>(nsp_var->value[0]);
        r.j_value = static_cast<double>(r.j->value[0]);
        auto traj = fwd.trajectory(0);
        for (std::int64_t p = 0; p < traj.length(); ++p) {
            if (!traj.tags[static_cast<std::size_t>(p)].is_special()) {
                auto probs = model.fail_head(traj, p);
                r.argmax.push_back(argmax_lowest(probs.data(), kFailClasses));
            }
        }
        return r;
    };

    Tensor<T> phi_cur = phi;
    Round round = run_round(phi_cur);
    auto eps = static_cast<T>(cfg.epsilon);
    auto alpha = static_cast<T>(cfg.alpha);
    for (int k = 1; k <= cfg.k_max; ++k) {
        auto pass = ad::backward(round.j);
        auto grad = ad::gradient_of(round.phi_leaf, pass).grad;
        for (int i : modified) {
            for (int j = 0; j < d; ++j) {
                std::int64_t at = static_cast<std::int64_t>(i) * d + j;
                phi_cur[at] = attack_step(phi_cur[at], grad[at], phi[at], alpha, eps);
            }
        }
        round = run_round(phi_cur);
        result.iterations = k;
        bool all_intentional = true;
        for (int i : modified) {
            all_intentional = all_intentional && round.argmax[static_cast<std::size_t>(i)] == 0;
        }
        if (all_intentional) {
            result.fooled = true;
            break;
        }
    }
    result.phi_corrected = phi_cur;
    result.j_final = round.j_value;
    result.nsp_loss_corrected = round.nsp_value;
    for (std::int64_t i = 0; i < phi.numel(); ++i) {
        result.max_residual =
            std::max(result.max_residual, std::abs(static_cast<double>(phi_cur[i] - phi[i])));
    }
    result.corrected_trajectory = phi_forward(model, phi_cur, std::nullopt).trajectory;
    return result;
}

// ---------------------------------------------------------------------------
// linearization baseline
// ---------------------------------------------------------------------------

// h_k = h_j + (k - j) * (h_j - h_0) / j for k in {j..n-1}; indices address
// clip-level trajectory points.
template <class T>
Tensor<T> linearize_baseline(const Tensor<T>& clip_trajectory, int onset_j) {
    if (clip_trajectory.shape.size() != 2) {
        throw ShapeError("linearize_baseline: expected [clips, d]");
    }
    std::int64_t n = clip_trajectory.shape[0];
    std::int64_t d = clip_trajectory.shape[1];
    if (onset_j < 1 || onset_j >= n) {
        throw ShapeError("linearize_baseline: onset must satisfy 1 <= j < clips (no observed "
                         "intentional motion otherwise)");
    }
    Tensor<T> out = clip_trajectory;
    for (std::int64_t k = onset_j; k < n; ++k) {
        auto scale_factor = static_cast<T>(k - onset_j) / static_cast<T>(onset_j);
        for (std::int64_t j = 0; j < d; ++j) {
            T hj = clip_trajectory[static_cast<std::int64_t>(onset_j) * d + j];
            T h0 = clip_trajectory[j];
            out[k * d + j] = hj + scale_factor * (hj - h0);
        }
    }
    return out;
}

// Clip-token rows of a trajectory as an [n, d] matrix.
template <class T>
Tensor<T> clip_rows(const Trajectory<T>& traj) {
    std::int64_t d = traj.points.last_dim();
    std::vector<std::int64_t> rows;
    for (std::int64_t i = 0; i < traj.length(); ++i) {
        if (!traj.tags[static_cast<std::size_t>(i)].is_special()) {
            rows.push_back(i);
        }
    }
    Tensor<T> out({static_cast<std::int64_t>(rows.size()), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(traj.points.data.begin() + rows[r] * d, d,
                    out.data.begin() + static_cast<std::int64_t>(r) * d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// correction evaluation against the retrieval index and the SVO decoder
// ---------------------------------------------------------------------------

struct VideoCorrectionReport {
    std::int64_t video_id = -1;
    int onset = -1;
    std::vector<int> modified_clips;
    int iterations = 0;
    bool fooled = true;
    double j_initial = 0.0;
    double j_final = 0.0;
    double max_residual = 0.0;
    bool prefix_untouched = true;
    std::vector<Neighbor> neighbors_before;  // top neighbor per modified clip
    std::vector<Neighbor> neighbors_after;
    std::vector<Neighbor> neighbors_linear;
    std::vector<std::array<int, 2>> goal_verb_ranks;     // (before, after) per modified clip
    std::vector<std::array<int, 2>> failure_verb_ranks;  // (before, after)
};

struct CorrectionAggregates {
    std::int64_t failing_videos = 0;
    std::int64_t corrected_videos = 0;
    std::int64_t modified_clips = 0;
    double fooling_rate = 0.0;
    double mean_iterations = 0.0;
    double j_decreased_fraction = 0.0;
    double neighbor_intentional_before = 0.0;
    double neighbor_intentional_after = 0.0;
    double neighbor_intentional_linear = 0.0;
    std::int64_t linear_clips = 0;
    double goal_verb_rank_before = 0.0;
    double goal_verb_rank_after = 0.0;
    double failure_verb_rank_before = 0.0;
    double failure_verb_rank_after = 0.0;
    bool residual_ok = true;
    bool prefix_ok = true;
};

template <class T>
struct CorrectionEvaluation {
    CorrectionAggregates aggregates;
    std::vector<VideoCorrectionReport> videos;
};

// Runs the attack on every ground-truth failing video and decodes the
// corrections by retrieval (is the top neighbor an oracle-intentional clip?)
// and, when a decoder is supplied, by goal/failure verb rank shifts.
template <class T>
CorrectionEvaluation<T> evaluate_correction(const Dataset& ds, const GoalModel<T>& model,
                                            const RetrievalIndex<T>& index, const SvoDecoder<T>* decoder,
                                            const AutocorrectConfig& cfg, int threads) {
    if (index.size() == 0) {
        throw ShapeError("evaluate_correction: empty retrieval index");
    }
    std::vector<std::size_t> failing;
    for (std::size_t v = 0; v < ds.videos.size(); ++v) {
        if (ds.videos[v].meta.tau) {
            failing.push_back(v);
        }
    }
    CorrectionEvaluation<T> eval;
    eval.videos.resize(failing.size());
    eval.aggregates.failing_videos = static_cast<std::int64_t>(failing.size());

    parallel_for(static_cast<std::int64_t>(failing.size()), threads, [&](std::int64_t fi) {
        const auto& video = ds.videos[failing[static_cast<std::size_t>(fi)]];
        auto& report = eval.videos[static_cast<std::size_t>(fi)];
        report.video_id = video.meta.id;
        std::vector<Tensor<T>> clips;
        for (const auto& c : video.clips) {
            clips.push_back(cast_tensor<T>(c));
        }
        auto phi = motion_features(model, clips);
        auto result = autocorrect_features(model, phi, cfg);
        report.onset = result.onset;
        report.modified_clips = result.modified_clips;
        report.iterations = result.iterations;
        report.fooled = result.fooled;
        report.j_initial = result.j_initial;
        report.j_final = result.j_final;
        report.max_residual = result.max_residual;
        int d = model.dim();
        for (std::int64_t i = 0; i < phi.rows(); ++i) {
            bool in_modified = std::find(result.modified_clips.begin(), result.modified_clips.end(),
                                         static_cast<int>(i)) != result.modified_clips.end();
            if (in_modified) {
                continue;
            }
            for (std::int64_t j = 0; j < d; ++j) {
                if (result.phi_corrected[i * d + j] != phi[i * d + j]) {
                    report.prefix_untouched = false;
                }
            }
        }
        if (result.modified_clips.empty()) {
            return;
        }
        auto before = clip_rows(result.original_trajectory);
        auto after = clip_rows(result.corrected_trajectory);
        std::optional<Tensor<T>> linear;
        if (result.onset >= 1) {
            linear = linearize_baseline(before, result.onset);
        }
        auto row_of = [d](const Tensor<T>& m, int i) {
            Tensor<T> r({d});
            std::copy_n(m.data.begin() + static_cast<std::int64_t>(i) * d, d, r.data.begin());
            return r;
        };
        for (int i : result.modified_clips) {
            auto nb = query_knn(index, row_of(before, i), 1, video.meta.id);
            auto na = query_knn(index, row_of(after, i), 1, video.meta.id);
            report.neighbors_before.push_back(nb.front());
            report.neighbors_after.push_back(na.front());
            if (linear) {
                auto nl = query_knn(index, row_of(*linear, i), 1, video.meta.id);
                report.neighbors_linear.push_back(nl.front());
            }
            if (decoder != nullptr) {
                auto db = decode_svo(*decoder, row_of(before, i));
                auto da = decode_svo(*decoder, row_of(after, i));
                report.goal_verb_ranks.push_back({rank_of(db[1], video.meta.goal_svo.verb),
                                                  rank_of(da[1], video.meta.goal_svo.verb)});
                report.failure_verb_ranks.push_back({rank_of(db[1], video.meta.failure_svo->verb),
                                                     rank_of(da[1], video.meta.failure_svo->verb)});
            }
        }
    });

    auto& agg = eval.aggregates;
    std::int64_t fooled = 0, j_down = 0;
    std::int64_t nb_before = 0, nb_after = 0, nb_linear = 0;
    double iter_sum = 0.0;
    double gr_before = 0.0, gr_after = 0.0, fr_before = 0.0, fr_after = 0.0;
    std::int64_t rank_clips = 0;
    for (const auto& r : eval.videos) {
        if (r.modified_clips.empty()) {
            continue;
        }
        ++agg.corrected_videos;
        agg.modified_clips += static_cast<std::int64_t>(r.modified_clips.size());
        fooled += r.fooled;
        j_down += r.j_final < r.j_initial;
        iter_sum += r.iterations;
        agg.residual_ok = agg.residual_ok && r.max_residual <= cfg.epsilon;
        agg.prefix_ok = agg.prefix_ok && r.prefix_untouched;
        for (const auto& n : r.neighbors_before) {
            nb_before += n.oracle_intentional;
        }
        for (const auto& n : r.neighbors_after) {
            nb_after += n.oracle_intentional;
        }
        for (const auto& n : r.neighbors_linear) {
            nb_linear += n.oracle_intentional;
        }
        agg.linear_clips += static_cast<std::int64_t>(r.neighbors_linear.size());
        for (const auto& g : r.goal_verb_ranks) {
            gr_before += g[0];
            gr_after += g[1];
            ++rank_clips;
        }
        for (const auto& f : r.failure_verb_ranks) {
            fr_before += f[0];
            fr_after += f[1];
        }
    }
    if (agg.corrected_videos > 0) {
        agg.fooling_rate = static_cast<double>(fooled) / static_cast<double>(agg.corrected_videos);
        agg.mean_iterations = iter_sum / static_cast<double>(agg.corrected_videos);
        agg.j_decreased_fraction = static_cast<double>(j_down) / static_cast<double>(agg.corrected_videos);
    }
    if (agg.modified_clips > 0) {
        agg.neighbor_intentional_before =
            static_cast<double>(nb_before) / static_cast<double>(agg.modified_clips);
        agg.neighbor_intentional_after =
            static_cast<double>(nb_after) / static_cast<double>(agg.modified_clips);
    }
    if (agg.linear_clips > 0) {
        agg.neighbor_intentional_linear =
            static_cast<double>(nb_linear) / static_cast<double>(agg.linear_clips);
    }
    if (rank_clips > 0) {
        agg.goal_verb_rank_before = gr_before / static_cast<double>(rank_clips);
        agg.goal_verb_rank_after = gr_after / static_cast<double>(rank_clips);
        agg.failure_verb_rank_before = fr_before / static_cast<double>(rank_clips);
        agg.failure_verb_rank_after = fr_after / static_cast<double>(rank_clips);
    }
    return eval;
}

}  // namespace gcv
