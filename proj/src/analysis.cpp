#include "gcv/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "gcv/common.hpp"

namespace gcv {

std::vector<double> midranks(const std::vector<double>& values) {
    std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) {
            ++j;
        }
        double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    return ranks;
}

namespace {

// Pearson correlation; nullopt when either side has zero variance.
std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
    std::size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double da = a[i] - ma;
        double db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0) {
        return std::nullopt;
    }
    return cov / std::sqrt(va * vb);
}

}  // namespace

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 3) {
        throw ShapeError("spearman_rho: need two equally sized series with >= 3 observations");
    }
    auto r = pearson(midranks(a), midranks(b));
    if (!r) {
        throw ShapeError("spearman_rho: undefined for a constant series");
    }
    return *r;
}

CorrelationReport spearman_neuron_word(const Tensor<double>& activations, const Tensor<double>& indicators,
                                       int top_k) {
    if (activations.shape.size() != 2 || indicators.shape.size() != 2) {
        throw ShapeError("spearman_neuron_word: expected [videos, d] and [videos, vocab]");
    }
    std::int64_t videos = activations.shape[0];
    if (videos < 3) {
        throw ShapeError("spearman_neuron_word: need at least 3 observations");
    }
    if (indicators.shape[0] != videos) {
        throw ShapeError("spearman_neuron_word: observation counts differ");
    }
    std::int64_t d = activations.shape[1];
    std::int64_t vocab = indicators.shape[1];
    for (double v : indicators.data) {
        if (v != 0.0 && v != 1.0) {
            throw ShapeError("spearman_neuron_word: indicators must be binary");
        }
    }

    // Rank each column once.
    std::vector<std::vector<double>> act_ranks(static_cast<std::size_t>(d));
    std::vector<bool> act_const(static_cast<std::size_t>(d), false);
    std::vector<double> col(static_cast<std::size_t>(videos));
    for (std::int64_t j = 0; j < d; ++j) {
        for (std::int64_t v = 0; v < videos; ++v) {
            col[static_cast<std::size_t>(v)] = activations[v * d + j];
        }
        act_const[static_cast<std::size_t>(j)] =
            std::all_of(col.begin(), col.end(), [&](double x) { return x == col[0]; });
        act_ranks[static_cast<std::size_t>(j)] = midranks(col);
    }
    std::vector<std::vector<double>> word_ranks(static_cast<std::size_t>(vocab));
    std::vector<bool> word_const(static_cast<std::size_t>(vocab), false);
    for (std::int64_t w = 0; w < vocab; ++w) {
        for (std::int64_t v = 0; v < videos; ++v) {
            col[static_cast<std::size_t>(v)] = indicators[v * vocab + w];
        }
        word_const[static_cast<std::size_t>(w)] =
            std::all_of(col.begin(), col.end(), [&](double x) { return x == col[0]; });
        word_ranks[static_cast<std::size_t>(w)] = midranks(col);
    }

    CorrelationReport report;
    report.neurons = static_cast<int>(d);
    report.words = static_cast<int>(vocab);
    report.rho.resize(static_cast<std::size_t>(d * vocab));
    for (std::int64_t j = 0; j < d; ++j) {
        for (std::int64_t w = 0; w < vocab; ++w) {
            auto& slot = report.rho[static_cast<std::size_t>(j * vocab + w)];
            if (act_const[static_cast<std::size_t>(j)] || word_const[static_cast<std::size_t>(w)]) {
                slot = std::nullopt;
                continue;
            }
            slot = pearson(act_ranks[static_cast<std::size_t>(j)], word_ranks[static_cast<std::size_t>(w)]);
        }
    }

    std::vector<NeuronWordPair> pairs;
    for (std::int64_t j = 0; j < d; ++j) {
        for (std::int64_t w = 0; w < vocab; ++w) {
            const auto& r = report.rho[static_cast<std::size_t>(j * vocab + w)];
            if (r) {
                pairs.push_back({static_cast<int>(j), static_cast<int>(w), *r});
            }
        }
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const NeuronWordPair& a, const NeuronWordPair& b) {
        return std::abs(a.rho) > std::abs(b.rho);
    });
    if (static_cast<int>(pairs.size()) > top_k) {
        pairs.resize(static_cast<std::size_t>(top_k));
    }
    report.top_pairs = std::move(pairs);
    return report;
}

std::vector<std::int64_t> top_k_indices(const std::vector<double>& values, int k) {
    std::vector<std::int64_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
        return values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(b)];
    });
    if (static_cast<int>(idx.size()) > k) {
        idx.resize(static_cast<std::size_t>(k));
    }
    return idx;
}

namespace {

// Cyclic Jacobi eigensolver for a symmetric matrix; returns eigenvalues and
// eigenvectors (columns of v).
void jacobi_eigen(std::vector<double>& a, std::int64_t n, std::vector<double>& eigvals,
                  std::vector<double>& v) {
    v.assign(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        v[static_cast<std::size_t>(i * n + i)] = 1.0;
    }
    auto at = [&](std::int64_t r, std::int64_t c) -> double& {
        return a[static_cast<std::size_t>(r * n + c)];
    };
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (std::int64_t p = 0; p < n; ++p) {
            for (std::int64_t q = p + 1; q < n; ++q) {
                off += at(p, q) * at(p, q);
            }
        }
        if (off < 1e-24) {
            break;
        }
        for (std::int64_t p = 0; p < n; ++p) {
            for (std::int64_t q = p + 1; q < n; ++q) {
                double apq = at(p, q);
                if (std::abs(apq) < 1e-300) {
                    continue;
                }
                double app = at(p, p);
                double aqq = at(q, q);
                double theta = 0.5 * (aqq - app) / apq;
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::int64_t i = 0; i < n; ++i) {
                    double aip = at(i, p);
                    double aiq = at(i, q);
                    at(i, p) = c * aip - s * aiq;
                    at(i, q) = s * aip + c * aiq;
                }
                for (std::int64_t i = 0; i < n; ++i) {
                    double api = at(p, i);
                    double aqi = at(q, i);
                    at(p, i) = c * api - s * aqi;
                    at(q, i) = s * api + c * aqi;
                }
                for (std::int64_t i = 0; i < n; ++i) {
                    double vip = v[static_cast<std::size_t>(i * n + p)];
                    double viq = v[static_cast<std::size_t>(i * n + q)];
                    v[static_cast<std::size_t>(i * n + p)] = c * vip - s * viq;
                    v[static_cast<std::size_t>(i * n + q)] = s * vip + c * viq;
                }
            }
        }
    }
    eigvals.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        eigvals[static_cast<std::size_t>(i)] = at(i, i);
    }
}

}  // namespace

Pca2d export_embedding_2d(const Tensor<double>& points) {
    if (points.shape.size() != 2) {
        throw ShapeError("export_embedding_2d: expected [n, d]");
    }
    std::int64_t n = points.shape[0];
    std::int64_t d = points.shape[1];
    if (n < 3) {
        throw ShapeError("export_embedding_2d: need at least 3 points");
    }
    Pca2d out;
    out.mean.assign(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d; ++j) {
            out.mean[static_cast<std::size_t>(j)] += points[i * d + j];
        }
    }
    for (auto& m : out.mean) {
        m /= static_cast<double>(n);
    }
    std::vector<double> centered(static_cast<std::size_t>(n * d));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d; ++j) {
            centered[static_cast<std::size_t>(i * d + j)] =
                points[i * d + j] - out.mean[static_cast<std::size_t>(j)];
        }
    }
    std::vector<double> cov(static_cast<std::size_t>(d * d), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = centered.data() + i * d;
        for (std::int64_t a = 0; a < d; ++a) {
            for (std::int64_t b = a; b < d; ++b) {
                cov[static_cast<std::size_t>(a * d + b)] += row[a] * row[b];
            }
        }
    }
    for (std::int64_t a = 0; a < d; ++a) {
        for (std::int64_t b = a; b < d; ++b) {
            double v = cov[static_cast<std::size_t>(a * d + b)] / static_cast<double>(n);
            cov[static_cast<std::size_t>(a * d + b)] = v;
            cov[static_cast<std::size_t>(b * d + a)] = v;
        }
    }
    std::vector<double> eigvals;
    std::vector<double> vecs;
    jacobi_eigen(cov, d, eigvals, vecs);

    std::array<std::int64_t, 2> top{0, 0};
    std::vector<std::int64_t> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        return eigvals[static_cast<std::size_t>(a)] > eigvals[static_cast<std::size_t>(b)];
    });
    top[0] = order[0];
    top[1] = d > 1 ? order[1] : order[0];

    for (int pc = 0; pc < 2; ++pc) {
        out.components[static_cast<std::size_t>(pc)].resize(static_cast<std::size_t>(d));
        out.variance[static_cast<std::size_t>(pc)] =
            std::max(0.0, eigvals[static_cast<std::size_t>(top[static_cast<std::size_t>(pc)])]);
        for (std::int64_t j = 0; j < d; ++j) {
            out.components[static_cast<std::size_t>(pc)][static_cast<std::size_t>(j)] =
                vecs[static_cast<std::size_t>(j * d + top[static_cast<std::size_t>(pc)])];
        }
        // Sign convention: make the largest-magnitude loading positive.
        auto& comp = out.components[static_cast<std::size_t>(pc)];
        std::size_t arg = 0;
        for (std::size_t j = 1; j < comp.size(); ++j) {
            if (std::abs(comp[j]) > std::abs(comp[arg])) {
                arg = j;
            }
        }
        if (comp[arg] < 0.0) {
            for (auto& c : comp) {
                c = -c;
            }
        }
    }

    out.coords.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        for (int pc = 0; pc < 2; ++pc) {
            double acc = 0.0;
            const auto& comp = out.components[static_cast<std::size_t>(pc)];
            for (std::int64_t j = 0; j < d; ++j) {
                acc += centered[static_cast<std::size_t>(i * d + j)] * comp[static_cast<std::size_t>(j)];
            }
            out.coords[static_cast<std::size_t>(i)][static_cast<std::size_t>(pc)] = acc;
        }
    }
    return out;
}

void write_correlation_csv(const std::filesystem::path& path, const CorrelationReport& report,
                           const std::vector<std::string>& word_names) {
    if (static_cast<int>(word_names.size()) != report.words) {
        throw ShapeError("write_correlation_csv: one name per word required");
    }
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot write csv: " + path.string());
    }
    os << "neuron,word,rho\n";
    os.precision(17);
    for (int j = 0; j < report.neurons; ++j) {
        for (int w = 0; w < report.words; ++w) {
            os << j << "," << word_names[static_cast<std::size_t>(w)] << ",";
            const auto& r = report.at(j, w);
            if (r) {
                os << *r;
            }
            os << "\n";
        }
    }
    if (!os) {
        throw IoError("csv write failed: " + path.string());
    }
}

void write_embedding_csv(const std::filesystem::path& path, const Pca2d& pca,
                         const std::vector<EmbeddingCsvRow>& rows) {
    if (rows.size() != pca.coords.size()) {
        throw ShapeError("write_embedding_csv: one metadata row per point required");
    }
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot write csv: " + path.string());
    }
    os << "video,clip,label,x,y\n";
    os.precision(17);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        os << rows[i].video << "," << rows[i].clip << "," << rows[i].label << "," << pca.coords[i][0]
           << "," << pca.coords[i][1] << "\n";
    }
    if (!os) {
        throw IoError("csv write failed: " + path.string());
    }
}

}  // namespace gcv
