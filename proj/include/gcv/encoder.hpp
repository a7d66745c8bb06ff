#pragma once

#include <array>
#include <cmath>

#include "gcv/config.hpp"
#include "gcv/params.hpp"

namespace gcv {

// Fixed trigonometric position code: entry 2i = sin(pos / 10000^(2i/d)),
// entry 2i+1 = cos of the same argument. Parameter free, valid for any
// position, so the model runs on sequence lengths never seen in training.
template <class T>
Tensor<T> positional_encoding(std::int64_t position, int d) {
    if (position < 0 || d < 2 || d % 2 != 0) {
        throw ShapeError("positional_encoding: need position >= 0 and even d");
    }
    Tensor<T> row({d});
    for (int i = 0; i < d / 2; ++i) {
        double angle = static_cast<double>(position) / std::pow(10000.0, (2.0 * i) / d);
        row[2 * i] = static_cast<T>(std::sin(angle));
        row[2 * i + 1] = static_cast<T>(std::cos(angle));
    }
    return row;
}

template <class T>
Tensor<T> positional_rows(std::int64_t length, int d) {
    Tensor<T> rows({length, d});
    for (std::int64_t p = 0; p < length; ++p) {
        auto r = positional_encoding<T>(p, d);
        std::copy(r.data.begin(), r.data.end(), rows.data.begin() + p * d);
    }
    return rows;
}

enum class SpecialToken { Start, Sep };

// Motion level: a small 3-D conv stack over one clip, global average pool,
// then a linear map to the model width. Stands in for a full video backbone
// at desk scale; an optional spatial/temporal factorized variant is exposed
// through EncoderConfig::r2plus1d.
template <class T>
struct MotionEncoderHandles {
    struct Stage {
        int w = -1;   // full 3-D kernel (standard mode)
        int b = -1;
        int ws = -1;  // spatial kernel (factorized mode)
        int bs = -1;
        int wt = -1;  // temporal kernel (factorized mode)
        int bt = -1;
    };
    std::vector<Stage> stages;
    int proj_w = -1;
    int proj_b = -1;
    int tok_start = -1;
    int tok_sep = -1;
};

template <class T>
MotionEncoderHandles<T> register_motion_encoder(ParamSet<T>& params, const EncoderConfig& cfg,
                                                const WorldConfig& world, int d, Rng rng) {
    cfg.validate();
    MotionEncoderHandles<T> h;
    int k = cfg.kernel;
    int in_ch = world.channels;
    for (std::size_t s = 0; s < cfg.channels.size(); ++s) {
        int out_ch = cfg.channels[s];
        typename MotionEncoderHandles<T>::Stage stage;
        std::string prefix = "enc.stage" + std::to_string(s);
        if (cfg.r2plus1d) {
            double std_s = std::sqrt(2.0 / (1.0 * k * k * in_ch));
            double std_t = std::sqrt(2.0 / (1.0 * k * out_ch));
            stage.ws = params.add(prefix + ".ws", init_normal<T>({1, k, k, in_ch, out_ch}, std_s, rng));
            stage.bs = params.add(prefix + ".bs", Tensor<T>::zeros({out_ch}));
            stage.wt = params.add(prefix + ".wt", init_normal<T>({k, 1, 1, out_ch, out_ch}, std_t, rng));
            stage.bt = params.add(prefix + ".bt", Tensor<T>::zeros({out_ch}));
        } else {
            double stddev = std::sqrt(2.0 / (1.0 * k * k * k * in_ch));
            stage.w = params.add(prefix + ".w", init_normal<T>({k, k, k, in_ch, out_ch}, stddev, rng));
            stage.b = params.add(prefix + ".b", Tensor<T>::zeros({out_ch}));
        }
        h.stages.push_back(stage);
        in_ch = out_ch;
    }
    h.proj_w = params.add("enc.proj.w", init_normal<T>({in_ch, d}, std::sqrt(1.0 / in_ch), rng));
    h.proj_b = params.add("enc.proj.b", Tensor<T>::zeros({d}));
    h.tok_start = params.add("enc.tok.start", init_normal<T>({1, d}, 0.5, rng));
    h.tok_sep = params.add("enc.tok.sep", init_normal<T>({1, d}, 0.5, rng));
    return h;
}

// phi = f(clip): [frames, H, W, C] -> [1, d]; differentiable w.r.t. both the
// parameters and the clip input.
template <class T>
ad::Var<T> encode_clip(const Bound<T>& bound, const MotionEncoderHandles<T>& h, const EncoderConfig& cfg,
                       const ad::Var<T>& clip) {
    int pad = cfg.kernel / 2;
    std::array<int, 3> stride{cfg.stride, cfg.stride, cfg.stride};
    ad::Var<T> x = clip;
    for (const auto& stage : h.stages) {
        if (cfg.r2plus1d) {
            x = ad::relu(ad::conv3d(x, bound[stage.ws], bound[stage.bs], {1, cfg.stride, cfg.stride},
                                    {0, pad, pad}));
            x = ad::relu(ad::conv3d(x, bound[stage.wt], bound[stage.bt], {cfg.stride, 1, 1}, {pad, 0, 0}));
        } else {
            x = ad::relu(ad::conv3d(x, bound[stage.w], bound[stage.b], stride, {pad, pad, pad}));
        }
        x = ad::avg_pool3d(x, cfg.pool);
    }
    auto pooled = ad::global_mean_thw(x);
    return ad::add_rowvec(ad::matmul(pooled, bound[h.proj_w]), bound[h.proj_b]);
}

template <class T>
ad::Var<T> special_token(const Bound<T>& bound, const MotionEncoderHandles<T>& h, SpecialToken kind) {
    return kind == SpecialToken::Start ? bound[h.tok_start] : bound[h.tok_sep];
}

}  // namespace gcv
