#pragma once

#include <optional>

#include "gcv/encoder.hpp"

namespace gcv {

struct TokenTag {
    enum class Kind { Start, Sep, Clip };
    Kind kind = Kind::Clip;
    int clip_slot = -1;  // index into the sequence's clip list

    bool is_special() const { return kind != Kind::Clip; }
};

// One assembled input sequence: START, clip embeddings and an optional SEP,
// with positional encodings already added.
template <class T>
struct SeqTokens {
    ad::Var<T> tokens;  // [L, d]
    std::vector<TokenTag> tags;
    std::optional<int> split;

    std::int64_t length() const { return static_cast<std::int64_t>(tags.size()); }
};

// Latent path aligned one-to-one with the input tokens; h0 is the START
// output used by the consistency head.
template <class T>
struct Trajectory {
    Tensor<T> points;  // [L, d]
    std::vector<TokenTag> tags;

    Tensor<T> row(std::int64_t i) const {
        std::int64_t d = points.last_dim();
        Tensor<T> r({d});
        std::copy_n(points.data.begin() + i * d, d, r.data.begin());
        return r;
    }
    std::int64_t length() const { return static_cast<std::int64_t>(tags.size()); }
};

template <class T>
struct BatchForward {
    ad::Var<T> hidden;  // [B, Lmax, d]
    Tensor<T> mask;     // [B, Lmax]
    std::vector<std::vector<TokenTag>> tags;
    std::int64_t l_max = 0;

    std::int64_t flat_index(std::int64_t seq, std::int64_t pos) const { return seq * l_max + pos; }

    Trajectory<T> trajectory(std::int64_t seq) const {
        std::int64_t d = hidden->value.last_dim();
        auto len = static_cast<std::int64_t>(tags[static_cast<std::size_t>(seq)].size());
        Trajectory<T> t;
        t.tags = tags[static_cast<std::size_t>(seq)];
        t.points = Tensor<T>({len, d});
        std::copy_n(hidden->value.data.begin() + seq * l_max * d, len * d, t.points.data.begin());
        return t;
    }
};

inline constexpr int kFailClasses = 3;  // intentional / transitional / unintentional

// Action level: pre-LN transformer over motion embeddings plus the two
// linear heads (3-way intentionality, scalar consistency). Bias-free heads
// keep the logits exactly linear in the parameters.
template <class T>
class GoalModel {
public:
    GoalModel(WorldConfig world, EncoderConfig encoder_cfg, ModelConfig model_cfg, std::uint64_t seed)
        : world_(std::move(world)), ecfg_(std::move(encoder_cfg)), mcfg_(model_cfg) {
        mcfg_.validate();
        Rng rng = Rng(seed).child(0xe17c0de);
        enc_ = register_motion_encoder<T>(params_, ecfg_, world_, mcfg_.dim, rng.child(1));
        int d = mcfg_.dim;
        int ff = mcfg_.resolved_ff();
        Rng lrng = rng.child(2);
        double wstd = std::sqrt(1.0 / d);
        double fstd = std::sqrt(1.0 / ff);
        layers_.resize(static_cast<std::size_t>(mcfg_.layers));
        for (int l = 0; l < mcfg_.layers; ++l) {
            auto& lay = layers_[static_cast<std::size_t>(l)];
            std::string p = "tr.l" + std::to_string(l) + ".";
            lay.ln1_g = params_.add(p + "ln1.g", Tensor<T>::full({d}, T(1)));
            lay.ln1_b = params_.add(p + "ln1.b", Tensor<T>::zeros({d}));
            lay.wq = params_.add(p + "attn.wq", init_normal<T>({d, d}, wstd, lrng));
            lay.bq = params_.add(p + "attn.bq", Tensor<T>::zeros({d}));
            lay.wk = params_.add(p + "attn.wk", init_normal<T>({d, d}, wstd, lrng));
            lay.bk = params_.add(p + "attn.bk", Tensor<T>::zeros({d}));
            lay.wv = params_.add(p + "attn.wv", init_normal<T>({d, d}, wstd, lrng));
            lay.bv = params_.add(p + "attn.bv", Tensor<T>::zeros({d}));
            lay.wo = params_.add(p + "attn.wo", init_normal<T>({d, d}, wstd, lrng));
            lay.bo = params_.add(p + "attn.bo", Tensor<T>::zeros({d}));
            lay.ln2_g = params_.add(p + "ln2.g", Tensor<T>::full({d}, T(1)));
            lay.ln2_b = params_.add(p + "ln2.b", Tensor<T>::zeros({d}));
            lay.ff1_w = params_.add(p + "ff1.w", init_normal<T>({d, ff}, wstd, lrng));
            lay.ff1_b = params_.add(p + "ff1.b", Tensor<T>::zeros({ff}));
            lay.ff2_w = params_.add(p + "ff2.w", init_normal<T>({ff, d}, fstd, lrng));
            lay.ff2_b = params_.add(p + "ff2.b", Tensor<T>::zeros({d}));
        }
        final_ln_g_ = params_.add("tr.final_ln.g", Tensor<T>::full({d}, T(1)));
        final_ln_b_ = params_.add("tr.final_ln.b", Tensor<T>::zeros({d}));
        // Zero-initialized heads: untrained models predict exactly uniform /
        // one half, and a lambda=0 run leaves the consistency head at chance.
        fail_w_ = params_.add("head.fail.w", Tensor<T>::zeros({d, kFailClasses}));
        nsp_w_ = params_.add("head.nsp.w", Tensor<T>::zeros({d, 1}));
    }

    const WorldConfig& world() const { return world_; }
    const EncoderConfig& encoder_config() const { return ecfg_; }
    const ModelConfig& model_config() const { return mcfg_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }
    int dim() const { return mcfg_.dim; }

    Bound<T> bind(bool requires_grad) const { return bind_params(params_, requires_grad); }

    ad::Var<T> encode_clip(const Bound<T>& bound, const Tensor<T>& clip) const {
        std::vector<std::int64_t> expect{world_.frames_per_clip, world_.frame_height, world_.frame_width,
                                         world_.channels};
        if (clip.shape != expect) {
            throw ShapeError("encode_clip: clip shape " + clip.shape_str() + " does not match the world");
        }
        return gcv::encode_clip(bound, enc_, ecfg_, ad::constant(clip, "clip"));
    }

    ad::Var<T> encode_clip_var(const Bound<T>& bound, const ad::Var<T>& clip) const {
        return gcv::encode_clip(bound, enc_, ecfg_, clip);
    }

    ad::Var<T> special_token(const Bound<T>& bound, SpecialToken kind) const {
        return gcv::special_token(bound, enc_, kind);
    }

    // START + clip embeddings (+ SEP at the split), positional codes added.
    SeqTokens<T> build_token_sequence(const Bound<T>& bound, const std::vector<ad::Var<T>>& clip_embs,
                                      std::optional<int> split, bool positional = true) const {
        auto n = static_cast<int>(clip_embs.size());
        if (n < 1) {
            throw ShapeError("build_token_sequence: need at least one embedding");
        }
        if (split && (*split < 1 || *split >= n)) {
            throw ShapeError("build_token_sequence: split index " + std::to_string(*split) +
                             " outside (0, " + std::to_string(n) + ")");
        }
        SeqTokens<T> seq;
        seq.split = split;
        std::vector<ad::Var<T>> parts;
        parts.push_back(gcv::special_token(bound, enc_, SpecialToken::Start));
        seq.tags.push_back({TokenTag::Kind::Start, -1});
        for (int i = 0; i < n; ++i) {
            if (split && i == *split) {
                parts.push_back(gcv::special_token(bound, enc_, SpecialToken::Sep));
                seq.tags.push_back({TokenTag::Kind::Sep, -1});
            }
            parts.push_back(clip_embs[static_cast<std::size_t>(i)]);
            seq.tags.push_back({TokenTag::Kind::Clip, i});
        }
        auto tokens = ad::concat_rows(parts);
        if (positional) {
            tokens = ad::add(tokens, ad::constant(positional_rows<T>(seq.length(), mcfg_.dim), "pos"));
        }
        seq.tokens = tokens;
        return seq;
    }

    // Same assembly, but clip embeddings come from rows of one [n, d] leaf so
    // the whole feature block can be attacked as a unit.
    SeqTokens<T> build_token_sequence_from_matrix(const Bound<T>& bound, const ad::Var<T>& phi,
                                                  std::optional<int> split) const {
        std::int64_t n = phi->value.rows();
        std::vector<ad::Var<T>> rows;
        rows.reserve(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            rows.push_back(ad::gather_rows(phi, {i}));
        }
        return build_token_sequence(bound, rows, split);
    }

    BatchForward<T> forward_batch(const Bound<T>& bound, const std::vector<SeqTokens<T>>& seqs,
                                  Rng* dropout_rng = nullptr) const {
        if (seqs.empty()) {
            throw ShapeError("forward_batch: empty batch");
        }
        std::int64_t l_max = 0;
        for (const auto& s : seqs) {
            l_max = std::max(l_max, s.length());
        }
        auto b = static_cast<std::int64_t>(seqs.size());
        int d = mcfg_.dim;
        std::vector<ad::Var<T>> token_mats;
        token_mats.reserve(seqs.size());
        BatchForward<T> out;
        out.l_max = l_max;
        out.mask = Tensor<T>::zeros({b, l_max});
        for (std::int64_t s = 0; s < b; ++s) {
            const auto& seq = seqs[static_cast<std::size_t>(s)];
            token_mats.push_back(seq.tokens);
            out.tags.push_back(seq.tags);
            for (std::int64_t p = 0; p < seq.length(); ++p) {
                out.mask[s * l_max + p] = T(1);
            }
        }
        ad::Var<T> x = ad::pad_stack(token_mats, l_max);
        for (const auto& lay : layers_) {
            auto h1 = ad::layer_norm(x, bound[lay.ln1_g], bound[lay.ln1_b], kLayerNormEps);
            auto q = ad::add_rowvec(ad::matmul(h1, bound[lay.wq]), bound[lay.bq]);
            auto k = ad::add_rowvec(ad::matmul(h1, bound[lay.wk]), bound[lay.bk]);
            auto v = ad::add_rowvec(ad::matmul(h1, bound[lay.wv]), bound[lay.bv]);
            auto att = ad::attention(q, k, v, out.mask, mcfg_.heads);
            auto o = ad::add_rowvec(ad::matmul(att, bound[lay.wo]), bound[lay.bo]);
            x = ad::add(x, apply_dropout(o, dropout_rng));
            auto h2 = ad::layer_norm(x, bound[lay.ln2_g], bound[lay.ln2_b], kLayerNormEps);
            auto f = ad::relu(ad::add_rowvec(ad::matmul(h2, bound[lay.ff1_w]), bound[lay.ff1_b]));
            auto f2 = ad::add_rowvec(ad::matmul(f, bound[lay.ff2_w]), bound[lay.ff2_b]);
            x = ad::add(x, apply_dropout(f2, dropout_rng));
        }
        out.hidden = ad::layer_norm(x, bound[final_ln_g_], bound[final_ln_b_], kLayerNormEps);
        return out;
    }

    // rows: [N, d] gathered clip-token outputs -> [N, 3] logits.
    ad::Var<T> fail_logits(const Bound<T>& bound, const ad::Var<T>& rows) const {
        return ad::matmul(rows, bound[fail_w_]);
    }

    // rows: [B, d] START outputs -> [B, 1] consistency logits.
    ad::Var<T> nsp_logits(const Bound<T>& bound, const ad::Var<T>& rows) const {
        return ad::matmul(rows, bound[nsp_w_]);
    }

    // Plain read-outs over trajectory points.
    std::array<T, 3> fail_head(const Trajectory<T>& traj, std::int64_t i) const {
        if (i < 0 || i >= traj.length()) {
            throw ShapeError("fail_head: token index out of range");
        }
        if (traj.tags[static_cast<std::size_t>(i)].is_special()) {
            throw ShapeError("fail_head: applied to a special token");
        }
        return fail_head_raw(traj.points.data.data() + i * mcfg_.dim);
    }

    std::array<T, 3> fail_head_raw(const T* h) const {
        const auto& w = params_[fail_w_];
        std::array<T, 3> logits{};
        for (int c = 0; c < kFailClasses; ++c) {
            T acc = T(0);
            for (int j = 0; j < mcfg_.dim; ++j) {
                acc += h[j] * w[static_cast<std::int64_t>(j) * kFailClasses + c];
            }
            logits[static_cast<std::size_t>(c)] = acc;
        }
        T mx = std::max({logits[0], logits[1], logits[2]});
        T z = T(0);
        for (auto& l : logits) {
            l = std::exp(l - mx);
            z += l;
        }
        for (auto& l : logits) {
            l /= z;
        }
        return logits;
    }

    T nsp_head(const Trajectory<T>& traj) const {
        if (traj.tags.empty() || traj.tags[0].kind != TokenTag::Kind::Start) {
            throw ShapeError("nsp_head: trajectory does not begin with the START token");
        }
        const auto& w = params_[nsp_w_];
        T acc = T(0);
        for (int j = 0; j < mcfg_.dim; ++j) {
            acc += traj.points[j] * w[j];
        }
        return ad::stable_sigmoid(acc);
    }

    static constexpr double kLayerNormEps = 1e-5;

private:
    struct LayerHandles {
        int ln1_g = -1, ln1_b = -1;
        int wq = -1, bq = -1, wk = -1, bk = -1, wv = -1, bv = -1, wo = -1, bo = -1;
        int ln2_g = -1, ln2_b = -1;
        int ff1_w = -1, ff1_b = -1, ff2_w = -1, ff2_b = -1;
    };

    ad::Var<T> apply_dropout(const ad::Var<T>& x, Rng* rng) const {
        if (rng == nullptr || mcfg_.dropout <= 0.0) {
            return x;
        }
        Tensor<T> mask(x->value.shape);
        T keep_inv = static_cast<T>(1.0 / (1.0 - mcfg_.dropout));
        for (auto& m : mask.data) {
            m = rng->bernoulli(mcfg_.dropout) ? T(0) : keep_inv;
        }
        return ad::mul(x, ad::constant(std::move(mask), "dropout"));
    }

    WorldConfig world_;
    EncoderConfig ecfg_;
    ModelConfig mcfg_;
    ParamSet<T> params_;
    MotionEncoderHandles<T> enc_;
    std::vector<LayerHandles> layers_;
    int final_ln_g_ = -1, final_ln_b_ = -1;
    int fail_w_ = -1, nsp_w_ = -1;
};

// Standard inference over one full video: continuous clips, no split.
template <class T>
struct VideoForward {
    Trajectory<T> trajectory;
    std::vector<std::array<T, 3>> fail_probs;  // per clip
    std::vector<int> fail_argmax;              // ties toward the lower class
    T nsp_prob = T(0);
};

template <class T>
VideoForward<T> forward_video(const GoalModel<T>& model, const std::vector<Tensor<T>>& clips,
                              std::optional<int> split = std::nullopt) {
    auto bound = model.bind(false);
    std::vector<ad::Var<T>> embs;
    embs.reserve(clips.size());
    for (const auto& c : clips) {
        embs.push_back(model.encode_clip(bound, c));
    }
    auto seq = model.build_token_sequence(bound, embs, split);
    auto fwd = model.forward_batch(bound, {seq});
    VideoForward<T> out;
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

}  // namespace gcv
