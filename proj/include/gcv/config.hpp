#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gcv/world.hpp"

namespace gcv {

enum class Precision { Single, Double };

struct EncoderConfig {
    std::vector<int> channels{8, 16, 32};
    int kernel = 3;  // cubic kernel extent, odd
    int stride = 1;
    int pool = 2;  // pooling window per stage (clamped to extent)
    bool r2plus1d = false;

    void validate() const;
};

struct ModelConfig {
    int dim = 512;
    int layers = 4;
    int heads = 8;
    int ff_width = 0;  // 0 -> 4 * dim
    double dropout = 0.0;

    int resolved_ff() const { return ff_width > 0 ? ff_width : 4 * dim; }
    void validate() const;
};

struct LossConfig {
    double lambda = 0.5;
    double p_split = 0.5;
    double p_perturb = 0.5;
    double p_swap = 0.3;

    void validate() const;
};

struct TrainConfig {
    int n_lo = 6;
    int n_hi = 10;
    int batch_size = 16;
    int epochs = 10;
    double lr = 3e-4;

    void validate() const;
};

struct DecoderTrainConfig {
    int epochs = 10;
    double lr = 1e-2;
    int batch_size = 256;

    void validate() const;
};

struct AutocorrectConfig {
    int k_max = 25;
    double alpha = 0.03;
    double epsilon = 1.0;
    double lambda = 2.0;
    int knn = 1;

    void validate() const;
};

struct EmbedConfig {
    int dim = 32;
    std::uint64_t seed = 1234;

    void validate() const;
};

// One key-value document per run; unknown keys are rejected.
struct RunConfig {
    std::uint64_t seed = 7;
    Precision precision = Precision::Single;
    int threads = 0;  // 0 = all cores

    WorldConfig world;
    EncoderConfig encoder;
    ModelConfig model;
    LossConfig loss;
    TrainConfig train;
    DecoderTrainConfig decoder;
    AutocorrectConfig autocorrect;
    EmbedConfig embed;

    void validate() const;

    // Canonical JSON echo (sorted keys), embedded in every report and
    // checkpoint for provenance.
    std::string echo_json() const;
};

RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_echo(const std::string& echo_json);

std::string precision_name(Precision p);

}  // namespace gcv
