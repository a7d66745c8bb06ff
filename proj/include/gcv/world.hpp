#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gcv/rng.hpp"
#include "gcv/tensor.hpp"

namespace gcv {

struct SvoTriple {
    int subject = 0;
    int verb = 0;
    int object = 0;

    bool operator==(const SvoTriple&) const = default;
};

// Procedural stand-in for real intentional/unintentional video. A subject
// stamp moves toward an object stamp following a verb-specific motion
// pattern; failing videos deviate from the onset frame on.
struct WorldConfig {
    int frame_height = 16;
    int frame_width = 16;
    int channels = 1;
    int frames_per_clip = 16;
    int clips_min = 8;
    int clips_max = 12;
    double failure_prob = 0.5;
    int subject_vocab = 6;
    int verb_vocab = 8;  // last 3 ids are the failure verbs
    int object_vocab = 6;
    double noise = 0.02;
    double fps = 16.0;  // metadata only

    void validate() const;
    int goal_verb_count() const { return verb_vocab - 3; }
    int failure_verb_id(int mode) const { return goal_verb_count() + mode; }
    bool shape_compatible(const WorldConfig& o) const {
        return frame_height == o.frame_height && frame_width == o.frame_width && channels == o.channels &&
               frames_per_clip == o.frames_per_clip && subject_vocab == o.subject_vocab &&
               verb_vocab == o.verb_vocab && object_vocab == o.object_vocab;
    }
};

enum class FailureMode : int { Reversal = 0, RandomWalk = 1, Freeze = 2 };

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Everything about a video except pixels; cheap to regenerate from the seed.
struct VideoStructure {
    std::uint64_t seed = 0;
    int clip_count = 0;
    SvoTriple goal_svo;
    std::optional<SvoTriple> failure_svo;
    std::optional<int> onset_clip;   // tau
    std::optional<int> onset_frame;  // absolute frame index, inside clip tau
    std::optional<FailureMode> mode;
    Vec2 start_pos;
    Vec2 goal_pos;
    std::vector<Vec2> track;  // per-frame agent center, hidden from the model
};

struct SyntheticVideo {
    VideoStructure structure;
    std::vector<Tensor<float>> clips;  // each [frames, H, W, C]
};

VideoStructure generate_structure(const WorldConfig& cfg, std::uint64_t seed);
std::vector<Tensor<float>> render_clips(const WorldConfig& cfg, const VideoStructure& st);
SyntheticVideo generate_video(const WorldConfig& cfg, std::uint64_t seed);

// Goal-directedness of a track segment: net progress toward the goal over
// path length, mapped to [0, 1]; >= 0.5 counts as oracle-intentional.
double oracle_intentionality(const std::vector<Vec2>& segment, Vec2 goal);

// Segment of the track covered by one clip.
std::vector<Vec2> clip_segment(const VideoStructure& st, const WorldConfig& cfg, int clip);

struct EmbeddingTable {
    int vocab = 0;
    int dim = 0;
    std::uint64_t seed = 0;
    Tensor<double> rows;  // [vocab, dim], each row unit norm
};

EmbeddingTable pseudo_word_embedding(std::uint64_t table_seed, int vocab_size, int dim);

// ---------------------------------------------------------------------------
// dataset on disk: GCV1 tensor files plus a JSON-lines manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::int64_t id = 0;
    std::optional<int> tau;
    SvoTriple goal_svo;
    std::optional<SvoTriple> failure_svo;
    std::uint64_t seed = 0;
};

struct VideoRecord {
    ManifestEntry meta;
    std::vector<Tensor<float>> clips;
};

struct Dataset {
    WorldConfig world;
    std::vector<VideoRecord> videos;

    VideoStructure structure_of(std::size_t index) const {
        return generate_structure(world, videos[index].meta.seed);
    }
};

struct DatasetStats {
    std::int64_t video_count = 0;
    std::int64_t failing_videos = 0;
    std::array<std::int64_t, 3> label_counts{};  // intentional / transitional / unintentional clips
};

void write_video_file(const std::filesystem::path& path, const std::vector<Tensor<float>>& clips);
std::vector<Tensor<float>> read_video_file(const std::filesystem::path& path);

DatasetStats generate_dataset(const WorldConfig& cfg, std::int64_t count, std::uint64_t seed,
                              const std::filesystem::path& out_dir, int threads);

Dataset load_dataset(const std::filesystem::path& dir);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
WorldConfig read_world_json(const std::filesystem::path& path);
void write_world_json(const std::filesystem::path& path, const WorldConfig& cfg);

std::string video_file_name(std::int64_t id);

}  // namespace gcv
