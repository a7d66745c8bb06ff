#pragma once

#include <array>
#include <optional>

#include "gcv/autodiff.hpp"
#include "gcv/config.hpp"
#include "gcv/rng.hpp"

namespace gcv {

// Per-clip intentionality labels derived from the onset clip: 0 before, 1 on
// the clip containing the onset frame, 2 after. Nondecreasing by
// construction.
struct FailTimeline {
    std::vector<int> labels;
};

inline FailTimeline derive_fail_labels(std::optional<int> tau, int clip_count) {
    if (clip_count < 1) {
        throw ShapeError("derive_fail_labels: empty video");
    }
    if (tau && (*tau < 1 || *tau >= clip_count)) {
        throw ShapeError("derive_fail_labels: onset clip outside (0, clip_count)");
    }
    FailTimeline t;
    t.labels.resize(static_cast<std::size_t>(clip_count), 0);
    if (tau) {
        for (int c = 0; c < clip_count; ++c) {
            t.labels[static_cast<std::size_t>(c)] = c < *tau ? 0 : (c == *tau ? 1 : 2);
        }
    }
    return t;
}

// Inverse-frequency class weights, normalized so the mean weight is 1.
inline std::array<double, 3> class_weights(const std::array<std::int64_t, 3>& counts) {
    std::array<double, 3> w{};
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) {
        if (counts[static_cast<std::size_t>(c)] <= 0) {
            throw ConfigError("class_weights: class " + std::to_string(c) +
                              " has zero occurrences; resample the training split");
        }
        w[static_cast<std::size_t>(c)] = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        sum += w[static_cast<std::size_t>(c)];
    }
    double mean = sum / 3.0;
    for (auto& v : w) {
        v /= mean;
    }
    return w;
}

// Mean over clips of weight[y] * (-log p[y]).
inline double fail_loss(const std::vector<std::array<double, 3>>& distributions,
                        const std::vector<int>& labels, const std::array<double, 3>& weights) {
    if (distributions.empty() || distributions.size() != labels.size()) {
        throw ShapeError("fail_loss: need one distribution per labeled clip");
    }
    const double clamp = 1e-12;
    double total = 0.0;
    for (std::size_t i = 0; i < distributions.size(); ++i) {
        int y = labels[i];
        if (y < 0 || y > 2) {
            throw ShapeError("fail_loss: label out of range");
        }
        double p = std::max(distributions[i][static_cast<std::size_t>(y)], clamp);
        total += weights[static_cast<std::size_t>(y)] * (-std::log(p));
    }
    return total / static_cast<double>(distributions.size());
}

// -[y log p + (1-y) log(1-p)]
inline double nsp_loss(double y_hat, double y) {
    const double clamp = 1e-12;
    double p = std::clamp(y_hat, clamp, 1.0 - clamp);
    return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

inline double combined_loss(double fail, double nsp, double lambda_train) {
    if (lambda_train < 0.0) {
        throw ConfigError("combined_loss: lambda must be >= 0");
    }
    return fail + lambda_train * nsp;
}

// ---------------------------------------------------------------------------
// consistency-perturbation sampler
// ---------------------------------------------------------------------------

struct ClipRef {
    std::int64_t video = -1;
    int clip = -1;  // clip index within the source video
    int label = 0;  // intentionality label travels with the clip

    bool operator==(const ClipRef&) const = default;
};

struct SequenceSpec {
    std::vector<ClipRef> clips;
    std::optional<int> split;
    double y_nsp = 1.0;

    int length() const { return static_cast<int>(clips.size()); }
};

enum class PerturbKind { Swap, Replace };

struct PerturbationRecord {
    std::optional<int> split;
    bool perturbed = false;
    std::optional<PerturbKind> kind;
    std::int64_t donor_video = -1;
    int donor_start = -1;
    int donor_len = 0;
    double y_nsp = 1.0;
    bool fallback_swap = false;  // replacement drawn with no donor available
};

// For each sequence: split with p_split at a uniform interior index; of the
// split ones perturb with p_perturb; a perturbation swaps the two halves
// with p_swap, otherwise replaces one half (uniform coin) with a randomly
// sized contiguous span from another sequence in the batch. y_nsp = 0 iff
// perturbed. Labels travel with their clips; replaced spans adopt donor
// labels. Mutates the batch in place and reports what happened.
inline std::vector<PerturbationRecord> sample_nsp_perturbation(std::vector<SequenceSpec>& batch,
                                                               const LossConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::vector<SequenceSpec> originals = batch;  // donor pool
    std::vector<PerturbationRecord> records(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto& seq = batch[i];
        auto& rec = records[i];
        seq.split.reset();
        seq.y_nsp = 1.0;
        int n = seq.length();
        if (n >= 2 && rng.bernoulli(cfg.p_split)) {
            int split = 1 + static_cast<int>(rng.uniform_int(n - 1));
            seq.split = split;
            rec.split = split;
            if (rng.bernoulli(cfg.p_perturb)) {
                rec.perturbed = true;
                seq.y_nsp = 0.0;
                bool swap = rng.bernoulli(cfg.p_swap);
                if (!swap && batch.size() < 2) {
                    swap = true;
                    rec.fallback_swap = true;
                }
                const auto& self = originals[i];
                if (swap) {
                    rec.kind = PerturbKind::Swap;
                    std::vector<ClipRef> rearranged(self.clips.begin() + split, self.clips.end());
                    rearranged.insert(rearranged.end(), self.clips.begin(), self.clips.begin() + split);
                    seq.clips = std::move(rearranged);
                    seq.split = n - split;
                    rec.split = seq.split;
                } else {
                    rec.kind = PerturbKind::Replace;
                    std::size_t donor = static_cast<std::size_t>(rng.uniform_int(
                        static_cast<std::int64_t>(batch.size()) - 1));
                    if (donor >= i) {
                        ++donor;
                    }
                    const auto& donor_seq = originals[donor];
                    int donor_n = donor_seq.length();
                    int len = 1 + static_cast<int>(rng.uniform_int(donor_n));
                    int start = static_cast<int>(rng.uniform_int(donor_n - len + 1));
                    rec.donor_video = donor_seq.clips.empty() ? -1 : donor_seq.clips[0].video;
                    rec.donor_start = start;
                    rec.donor_len = len;
                    std::vector<ClipRef> span(donor_seq.clips.begin() + start,
                                              donor_seq.clips.begin() + start + len);
                    bool replace_first = rng.bernoulli(0.5);
                    std::vector<ClipRef> rebuilt;
                    if (replace_first) {
                        rebuilt = span;
                        rebuilt.insert(rebuilt.end(), self.clips.begin() + split, self.clips.end());
                        seq.split = len;
                    } else {
                        rebuilt.assign(self.clips.begin(), self.clips.begin() + split);
                        rebuilt.insert(rebuilt.end(), span.begin(), span.end());
                        seq.split = split;
                    }
                    seq.clips = std::move(rebuilt);
                    rec.split = seq.split;
                }
            }
        }
        rec.y_nsp = seq.y_nsp;
    }
    return records;
}

}  // namespace gcv
