#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gcv/tensor.hpp"

namespace gcv {

// Average-rank (midrank) transform used by the Spearman correlation.
std::vector<double> midranks(const std::vector<double>& values);

struct NeuronWordPair {
    int neuron = 0;
    int word = 0;
    double rho = 0.0;
};

struct CorrelationReport {
    int neurons = 0;
    int words = 0;
    // row-major neurons x words; nullopt where a column is constant
    std::vector<std::optional<double>> rho;
    std::vector<NeuronWordPair> top_pairs;

    const std::optional<double>& at(int neuron, int word) const {
        return rho[static_cast<std::size_t>(neuron) * static_cast<std::size_t>(words) +
                   static_cast<std::size_t>(word)];
    }
};

// activations: [videos, d]; indicators: [videos, vocab] with entries in {0,1}.
CorrelationReport spearman_neuron_word(const Tensor<double>& activations, const Tensor<double>& indicators,
                                       int top_k = 3);

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

// Indices of the k largest values, ties broken by lower index.
std::vector<std::int64_t> top_k_indices(const std::vector<double>& values, int k);

struct Pca2d {
    std::vector<std::array<double, 2>> coords;     // per input point
    std::array<std::vector<double>, 2> components; // loading vectors, length d
    std::array<double, 2> variance{};              // eigenvalues for PC1 >= PC2
    std::vector<double> mean;                      // centering offset
};

// Top-2 principal components via centering and a Jacobi eigensolve of the
// covariance; deterministic sign convention (largest-magnitude loading > 0).
Pca2d export_embedding_2d(const Tensor<double>& points);

// CSV: header "neuron,word,rho"; rho empty when undefined.
void write_correlation_csv(const std::filesystem::path& path, const CorrelationReport& report,
                           const std::vector<std::string>& word_names);

struct EmbeddingCsvRow {
    std::int64_t video = 0;
    int clip = 0;
    int label = 0;
};

// CSV: header "video,clip,label,x,y".
void write_embedding_csv(const std::filesystem::path& path, const Pca2d& pca,
                         const std::vector<EmbeddingCsvRow>& rows);

}  // namespace gcv
