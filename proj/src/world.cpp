#include "gcv/world.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "gcv/common.hpp"

namespace gcv {

using nlohmann::json;

namespace {

constexpr int kStamp = 5;   // stamp side length
constexpr int kMargin = 2;  // stamp half-extent; positions live in the margin box
constexpr double kObjectIntensity = 0.7;
constexpr double kSubjectIntensity = 1.0;

// Deterministic 5x5 binary pattern per vocabulary id; center pixel always on
// so every stamp is nonempty. kind 0 = subject namespace, 1 = object.
bool stamp_bit(int kind, int id, int i, int j) {
    if (i == kStamp / 2 && j == kStamp / 2) {
        return true;
    }
    std::uint64_t h = mix64((static_cast<std::uint64_t>(kind) << 40) ^
                            (static_cast<std::uint64_t>(static_cast<unsigned>(id)) << 16) ^
                            static_cast<std::uint64_t>(i * kStamp + j));
    return (h & 1ULL) != 0;
}

double dist(Vec2 a, Vec2 b) {
    double dx = a.x - b.x;
    double dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

Vec2 lerp(Vec2 a, Vec2 b, double u) { return {a.x + (b.x - a.x) * u, a.y + (b.y - a.y) * u}; }

enum class MotionPattern { Straight = 0, Arc = 1, Zigzag = 2, Accelerate = 3, Decelerate = 4 };

struct MotionParams {
    MotionPattern pattern = MotionPattern::Straight;
    double arc_offset = 0.0;  // signed fraction of start-goal distance
    double zig_amp = 0.0;     // fraction of start-goal distance
    int zig_cycles = 2;
};

// Intentional position at pacing parameter tt in [0, 1].
Vec2 intentional_pos(Vec2 start, Vec2 goal, const MotionParams& mp, double tt) {
    double u = tt;
    switch (mp.pattern) {
        case MotionPattern::Accelerate:
            u = tt * tt;
            break;
        case MotionPattern::Decelerate:
            u = 1.0 - (1.0 - tt) * (1.0 - tt);
            break;
        default:
            break;
    }
    double d = dist(start, goal);
    double px = -(goal.y - start.y) / (d > 0 ? d : 1.0);
    double py = (goal.x - start.x) / (d > 0 ? d : 1.0);
    if (mp.pattern == MotionPattern::Arc) {
        Vec2 mid = lerp(start, goal, 0.5);
        Vec2 ctrl{mid.x + px * mp.arc_offset * d, mid.y + py * mp.arc_offset * d};
        double a = (1.0 - u) * (1.0 - u);
        double b = 2.0 * u * (1.0 - u);
        double c = u * u;
        return {a * start.x + b * ctrl.x + c * goal.x, a * start.y + b * ctrl.y + c * goal.y};
    }
    Vec2 base = lerp(start, goal, u);
    if (mp.pattern == MotionPattern::Zigzag) {
        double w = mp.zig_amp * d * std::sin(2.0 * 3.14159265358979323846 * mp.zig_cycles * u);
        return {base.x + px * w, base.y + py * w};
    }
    return base;
}

}  // namespace

void WorldConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("world config: " + m); };
    if (frame_height < 8 || frame_width < 8) {
        fail("frame size must be at least 8x8");
    }
    if (channels < 1) {
        fail("channels must be >= 1");
    }
    if (frames_per_clip < 2) {
        fail("frames per clip must be >= 2");
    }
    if (clips_min < 2 || clips_min > clips_max) {
        fail("clip range must satisfy 2 <= clips_min <= clips_max");
    }
    if (failure_prob < 0.0 || failure_prob > 1.0) {
        fail("failure probability must be in [0, 1]");
    }
    if (subject_vocab < 2 || object_vocab < 2) {
        fail("subject/object vocabulary sizes must be >= 2");
    }
    if (verb_vocab < 4) {
        fail("verb vocabulary must be >= 4 (three ids are reserved for failure verbs)");
    }
    if (noise < 0.0) {
        fail("noise level must be >= 0");
    }
}

VideoStructure generate_structure(const WorldConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng video_rng(seed);
    Rng layout = video_rng.child(1);
    Rng motion = video_rng.child(2);
    Rng failure = video_rng.child(3);

    VideoStructure st;
    st.seed = seed;
    st.clip_count = cfg.clips_min + static_cast<int>(layout.uniform_int(cfg.clips_max - cfg.clips_min + 1));
    st.goal_svo.subject = static_cast<int>(layout.uniform_int(cfg.subject_vocab));
    st.goal_svo.verb = static_cast<int>(layout.uniform_int(cfg.goal_verb_count()));
    st.goal_svo.object = static_cast<int>(layout.uniform_int(cfg.object_vocab));

    double xmin = kMargin, xmax = cfg.frame_width - 1 - kMargin;
    double ymin = kMargin, ymax = cfg.frame_height - 1 - kMargin;
    double min_sep = 0.5 * std::min(cfg.frame_width, cfg.frame_height);
    for (;;) {
        st.start_pos = {layout.uniform(xmin, xmax), layout.uniform(ymin, ymax)};
        st.goal_pos = {layout.uniform(xmin, xmax), layout.uniform(ymin, ymax)};
        if (dist(st.start_pos, st.goal_pos) >= min_sep) {
            break;
        }
    }

    MotionParams mp;
    mp.pattern = static_cast<MotionPattern>(st.goal_svo.verb % 5);
    mp.arc_offset = (motion.bernoulli(0.5) ? 1.0 : -1.0) * motion.uniform(0.15, 0.3);
    mp.zig_amp = motion.uniform(0.04, 0.09);
    mp.zig_cycles = 2 + static_cast<int>(motion.uniform_int(2));

    int k = cfg.frames_per_clip;
    int frames = st.clip_count * k;

    if (failure.bernoulli(cfg.failure_prob)) {
        int tau = 1 + static_cast<int>(failure.uniform_int(st.clip_count - 1));
        // Onset strictly before the clip's final frame so the deviation is
        // visible inside clip tau itself.
        int onset = tau * k + static_cast<int>(failure.uniform_int(k - 1));
        auto mode = static_cast<FailureMode>(failure.uniform_int(3));
        st.onset_clip = tau;
        st.onset_frame = onset;
        st.mode = mode;
        st.failure_svo =
            SvoTriple{st.goal_svo.subject, cfg.failure_verb_id(static_cast<int>(mode)), st.goal_svo.object};
    }

    st.track.resize(static_cast<std::size_t>(frames));
    int onset = st.onset_frame.value_or(frames - 1);
    double denom = frames > 1 ? static_cast<double>(frames - 1) : 1.0;
    for (int t = 0; t <= onset; ++t) {
        st.track[static_cast<std::size_t>(t)] = intentional_pos(st.start_pos, st.goal_pos, mp, t / denom);
    }
    if (onset < frames - 1) {
        double step = dist(st.start_pos, st.goal_pos) / denom;
        Vec2 p = st.track[static_cast<std::size_t>(onset)];
        for (int t = onset + 1; t < frames; ++t) {
            switch (*st.mode) {
                case FailureMode::Reversal: {
                    double dg = dist(p, st.goal_pos);
                    Vec2 dir = dg > 1e-9 ? Vec2{(p.x - st.goal_pos.x) / dg, (p.y - st.goal_pos.y) / dg}
                                         : Vec2{1.0, 0.0};
                    p = {p.x + dir.x * 1.25 * step, p.y + dir.y * 1.25 * step};
                    break;
                }
                case FailureMode::RandomWalk: {
                    double ang = failure.uniform(0.0, 2.0 * 3.14159265358979323846);
                    p = {p.x + std::cos(ang) * 1.5 * step, p.y + std::sin(ang) * 1.5 * step};
                    break;
                }
                case FailureMode::Freeze:
                    break;
            }
            p.x = std::clamp(p.x, xmin, xmax);
            p.y = std::clamp(p.y, ymin, ymax);
            st.track[static_cast<std::size_t>(t)] = p;
        }
    }
    return st;
}

std::vector<Tensor<float>> render_clips(const WorldConfig& cfg, const VideoStructure& st) {
    Rng noise = Rng(st.seed).child(4);
    int k = cfg.frames_per_clip;
    int h = cfg.frame_height;
    int w = cfg.frame_width;
    int c = cfg.channels;
    std::vector<Tensor<float>> clips;
    clips.reserve(static_cast<std::size_t>(st.clip_count));

    auto stamp = [&](Tensor<float>& clip, int frame, Vec2 pos, int kind, int id, double intensity) {
        int cx = static_cast<int>(std::lround(pos.x));
        int cy = static_cast<int>(std::lround(pos.y));
        for (int i = 0; i < kStamp; ++i) {
            int y = cy + i - kStamp / 2;
            if (y < 0 || y >= h) {
                continue;
            }
            for (int j = 0; j < kStamp; ++j) {
                int x = cx + j - kStamp / 2;
                if (x < 0 || x >= w) {
                    continue;
                }
                if (!stamp_bit(kind, id, i, j)) {
                    continue;
                }
                for (int ch = 0; ch < c; ++ch) {
                    auto& v = clip[((static_cast<std::int64_t>(frame) * h + y) * w + x) * c + ch];
                    v = std::max(v, static_cast<float>(intensity));
                }
            }
        }
    };

    for (int ci = 0; ci < st.clip_count; ++ci) {
        Tensor<float> clip({k, h, w, c});
        for (int f = 0; f < k; ++f) {
            int t = ci * k + f;
            stamp(clip, f, st.goal_pos, 1, st.goal_svo.object, kObjectIntensity);
            stamp(clip, f, st.track[static_cast<std::size_t>(t)], 0, st.goal_svo.subject,
                  kSubjectIntensity);
        }
        if (cfg.noise > 0.0) {
            for (auto& v : clip.data) {
                v = std::clamp(v + static_cast<float>(noise.normal(0.0, cfg.noise)), 0.0f, 1.0f);
            }
        }
        clips.push_back(std::move(clip));
    }
    return clips;
}

SyntheticVideo generate_video(const WorldConfig& cfg, std::uint64_t seed) {
    SyntheticVideo v;
    v.structure = generate_structure(cfg, seed);
    v.clips = render_clips(cfg, v.structure);
    return v;
}

double oracle_intentionality(const std::vector<Vec2>& segment, Vec2 goal) {
    if (segment.size() < 2) {
        throw ShapeError("oracle_intentionality: segment must have at least 2 frames");
    }
    double path = 0.0;
    for (std::size_t t = 0; t + 1 < segment.size(); ++t) {
        path += dist(segment[t], segment[t + 1]);
    }
    double g_first = dist(segment.front(), goal);
    double g_last = dist(segment.back(), goal);
    if (path == 0.0) {
        return g_first == 0.0 ? 1.0 : 0.0;
    }
    double progress = std::clamp((g_first - g_last) / path, -1.0, 1.0);
    return 0.5 * (progress + 1.0);
}

std::vector<Vec2> clip_segment(const VideoStructure& st, const WorldConfig& cfg, int clip) {
    int k = cfg.frames_per_clip;
    auto begin = static_cast<std::size_t>(clip) * static_cast<std::size_t>(k);
    return {st.track.begin() + static_cast<std::ptrdiff_t>(begin),
            st.track.begin() + static_cast<std::ptrdiff_t>(begin + static_cast<std::size_t>(k))};
}

EmbeddingTable pseudo_word_embedding(std::uint64_t table_seed, int vocab_size, int dim) {
    if (dim < 8) {
        throw ConfigError("embedding dim must be >= 8");
    }
    if (vocab_size < 1) {
        throw ConfigError("embedding vocabulary must be >= 1");
    }
    EmbeddingTable t;
    t.vocab = vocab_size;
    t.dim = dim;
    t.seed = table_seed;
    t.rows = Tensor<double>::zeros({vocab_size, dim});
    Rng rng(table_seed);
    for (int r = 0; r < vocab_size; ++r) {
        double norm2 = 0.0;
        for (int j = 0; j < dim; ++j) {
            double v = rng.normal();
            t.rows[static_cast<std::int64_t>(r) * dim + j] = v;
            norm2 += v * v;
        }
        double inv = 1.0 / std::sqrt(norm2);
        for (int j = 0; j < dim; ++j) {
            t.rows[static_cast<std::int64_t>(r) * dim + j] *= inv;
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// disk format
// ---------------------------------------------------------------------------

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

json svo_to_json(const SvoTriple& s) { return json::array({s.subject, s.verb, s.object}); }

SvoTriple svo_from_json(const json& j) {
    return SvoTriple{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()};
}

}  // namespace

std::string video_file_name(std::int64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "video_%06lld.gcv", static_cast<long long>(id));
    return buf;
}

void write_video_file(const std::filesystem::path& path, const std::vector<Tensor<float>>& clips) {
    if (clips.empty()) {
        throw ShapeError("write_video_file: no clips");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw IoError("cannot open for writing: " + path.string());
    }
    os.write("GCV1", 4);
    write_u32(os, static_cast<std::uint32_t>(clips.size()));
    write_u32(os, 4);
    for (int a = 0; a < 4; ++a) {
        write_u32(os, static_cast<std::uint32_t>(clips[0].shape[static_cast<std::size_t>(a)]));
    }
    for (const auto& clip : clips) {
        if (clip.shape != clips[0].shape) {
            throw ShapeError("write_video_file: ragged clip shapes");
        }
        os.write(reinterpret_cast<const char*>(clip.data.data()),
                 static_cast<std::streamsize>(clip.data.size() * sizeof(float)));
    }
    if (!os) {
        throw IoError("write failed: " + path.string());
    }
}

std::vector<Tensor<float>> read_video_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open video file: " + path.string());
    }
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GCV1", 4) != 0) {
        throw IoError("bad magic in video file: " + path.string());
    }
    std::uint32_t clip_count = read_u32(is);
    std::uint32_t ndims = read_u32(is);
    if (ndims != 4) {
        throw IoError("unexpected tensor rank in video file: " + path.string());
    }
    std::vector<std::int64_t> shape(4);
    for (auto& e : shape) {
        e = read_u32(is);
    }
    std::vector<Tensor<float>> clips;
    clips.reserve(clip_count);
    for (std::uint32_t i = 0; i < clip_count; ++i) {
        Tensor<float> clip(shape);
        is.read(reinterpret_cast<char*>(clip.data.data()),
                static_cast<std::streamsize>(clip.data.size() * sizeof(float)));
        if (!is) {
            throw IoError("truncated video file: " + path.string());
        }
        clips.push_back(std::move(clip));
    }
    return clips;
}

DatasetStats generate_dataset(const WorldConfig& cfg, std::int64_t count, std::uint64_t seed,
                              const std::filesystem::path& out_dir, int threads) {
    cfg.validate();
    if (count < 1) {
        throw ConfigError("dataset count must be >= 1");
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "videos", ec);
    if (ec) {
        throw IoError("cannot create output directory: " + (out_dir / "videos").string());
    }

    Rng master(seed);
    std::vector<VideoStructure> structures(static_cast<std::size_t>(count));
    parallel_for(count, threads, [&](std::int64_t i) {
        std::uint64_t video_seed = master.child(static_cast<std::uint64_t>(i)).seed();
        auto video = generate_video(cfg, video_seed);
        write_video_file(out_dir / "videos" / video_file_name(i), video.clips);
        structures[static_cast<std::size_t>(i)] = std::move(video.structure);
    });

    std::ofstream manifest(out_dir / "manifest.jsonl");
    if (!manifest) {
        throw IoError("cannot write manifest: " + (out_dir / "manifest.jsonl").string());
    }
    DatasetStats stats;
    stats.video_count = count;
    for (std::int64_t i = 0; i < count; ++i) {
        const auto& st = structures[static_cast<std::size_t>(i)];
        json line;
        line["id"] = i;
        line["tau"] = st.onset_clip ? json(*st.onset_clip) : json(nullptr);
        line["goal_svo"] = svo_to_json(st.goal_svo);
        line["failure_svo"] = st.failure_svo ? svo_to_json(*st.failure_svo) : json(nullptr);
        line["seed"] = st.seed;
        manifest << line.dump() << "\n";
        if (st.onset_clip) {
            ++stats.failing_videos;
            stats.label_counts[0] += *st.onset_clip;
            stats.label_counts[1] += 1;
            stats.label_counts[2] += st.clip_count - *st.onset_clip - 1;
        } else {
            stats.label_counts[0] += st.clip_count;
        }
    }
    if (!manifest) {
        throw IoError("manifest write failed");
    }
    write_world_json(out_dir / "world.json", cfg);
    return stats;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open manifest: " + path.string());
    }
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw IoError("malformed manifest line in " + path.string());
        }
        ManifestEntry e;
        e.id = j.at("id").get<std::int64_t>();
        if (!j.at("tau").is_null()) {
            e.tau = j.at("tau").get<int>();
        }
        e.goal_svo = svo_from_json(j.at("goal_svo"));
        if (!j.at("failure_svo").is_null()) {
            e.failure_svo = svo_from_json(j.at("failure_svo"));
        }
        e.seed = j.at("seed").get<std::uint64_t>();
        entries.push_back(e);
    }
    return entries;
}

WorldConfig read_world_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open world config: " + path.string());
    }
    json j = json::parse(is, nullptr, false);
    if (j.is_discarded()) {
        throw IoError("malformed world config: " + path.string());
    }
    WorldConfig cfg;
    cfg.frame_height = j.at("frame_height").get<int>();
    cfg.frame_width = j.at("frame_width").get<int>();
    cfg.channels = j.at("channels").get<int>();
    cfg.frames_per_clip = j.at("frames_per_clip").get<int>();
    cfg.clips_min = j.at("clips_min").get<int>();
    cfg.clips_max = j.at("clips_max").get<int>();
    cfg.failure_prob = j.at("failure_prob").get<double>();
    cfg.subject_vocab = j.at("subject_vocab").get<int>();
    cfg.verb_vocab = j.at("verb_vocab").get<int>();
    cfg.object_vocab = j.at("object_vocab").get<int>();
    cfg.noise = j.at("noise").get<double>();
    cfg.fps = j.at("fps").get<double>();
    return cfg;
}

void write_world_json(const std::filesystem::path& path, const WorldConfig& cfg) {
    json j;
    j["frame_height"] = cfg.frame_height;
    j["frame_width"] = cfg.frame_width;
    j["channels"] = cfg.channels;
    j["frames_per_clip"] = cfg.frames_per_clip;
    j["clips_min"] = cfg.clips_min;
    j["clips_max"] = cfg.clips_max;
    j["failure_prob"] = cfg.failure_prob;
    j["subject_vocab"] = cfg.subject_vocab;
    j["verb_vocab"] = cfg.verb_vocab;
    j["object_vocab"] = cfg.object_vocab;
    j["noise"] = cfg.noise;
    j["fps"] = cfg.fps;
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot write world config: " + path.string());
    }
    os << j.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.world = read_world_json(dir / "world.json");
    auto entries = read_manifest(dir / "manifest.jsonl");
    ds.videos.reserve(entries.size());
    for (const auto& e : entries) {
        VideoRecord rec;
        rec.meta = e;
        rec.clips = read_video_file(dir / "videos" / video_file_name(e.id));
        ds.videos.push_back(std::move(rec));
    }
    return ds;
}

}  // namespace gcv
