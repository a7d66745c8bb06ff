// gcv: goal-oriented video trajectory learning on a synthetic world.
// Subcommands cover the whole pipeline: data generation, training,
// evaluation, trajectory auto-correction, retrieval, SVO decoding and
// representation analysis. Exit codes: 0 ok, 2 invalid config, 3 I/O
// failure, 4 missing checkpoint, 5 dataset/checkpoint mismatch.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "gcv/analysis.hpp"
#include "gcv/autocorrect.hpp"
#include "gcv/config.hpp"
#include "gcv/decoders.hpp"
#include "gcv/trainer.hpp"
#include "gcv/world.hpp"

using namespace gcv;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::optional<int> threads_override;
    std::string out_path;  // empty -> stdout
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_out = true) {
    cmd->add_option("--config", args.config_path, "run configuration file")->required();
    cmd->add_option("--seed", args.seed_override, "override the configured seed");
    cmd->add_option("--threads", args.threads_override, "override the configured worker count");
    if (with_out) {
        cmd->add_option("--out", args.out_path, "write the JSON report here instead of stdout");
    }
}

RunConfig load_config(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path);
    if (args.seed_override) {
        cfg.seed = *args.seed_override;
    }
    if (args.threads_override) {
        cfg.threads = *args.threads_override;
    }
    cfg.validate();
    return cfg;
}

void emit_report(const json& report, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << report.dump(2) << "\n";
        return;
    }
    std::ofstream os(out_path);
    if (!os) {
        throw IoError("cannot write report: " + out_path);
    }
    os << report.dump(2) << "\n";
}

json base_report(const char* command, const RunConfig& cfg) {
    json r;
    r["command"] = command;
    r["config"] = json::parse(cfg.echo_json());
    return r;
}

json svo_json(const SvoTriple& s) { return json::array({s.subject, s.verb, s.object}); }

json neighbor_json(const Neighbor& n) {
    return json{{"video", n.video},
                {"clip", n.clip},
                {"distance", n.distance},
                {"oracle_intentional", n.oracle_intentional}};
}

struct MissingCheckpoint : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_checkpoint(const std::string& path) {
    if (!fs::exists(path)) {
        throw MissingCheckpoint("checkpoint not found: " + path);
    }
}

Dataset load_dataset_checked(const std::string& dir) {
    if (!fs::exists(fs::path(dir) / "manifest.jsonl")) {
        throw IoError("dataset manifest not found under: " + dir);
    }
    return load_dataset(dir);
}

void require_world_match(const WorldConfig& checkpoint_world, const WorldConfig& dataset_world) {
    if (!checkpoint_world.shape_compatible(dataset_world)) {
        throw MismatchError("dataset world shape does not match the checkpoint's world");
    }
}

std::array<EmbeddingTable, 3> embedding_tables(const RunConfig& cfg) {
    return {pseudo_word_embedding(cfg.embed.seed, cfg.world.subject_vocab, cfg.embed.dim),
            pseudo_word_embedding(cfg.embed.seed + 1, cfg.world.verb_vocab, cfg.embed.dim),
            pseudo_word_embedding(cfg.embed.seed + 2, cfg.world.object_vocab, cfg.embed.dim)};
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
    CommonArgs common;
    std::string out_dir;
    std::int64_t count = 0;
};

int run_gen_data(const GenDataArgs& args) {
    RunConfig cfg = load_config(args.common);
    auto stats = generate_dataset(cfg.world, args.count, cfg.seed, args.out_dir, cfg.threads);
    json report = base_report("gen-data", cfg);
    report["out"] = args.out_dir;
    report["count"] = stats.video_count;
    report["failing_videos"] = stats.failing_videos;
    report["label_counts"] = stats.label_counts;
    emit_report(report, args.common.out_path);
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    CommonArgs common;
    std::string data_dir;
    std::string checkpoint_out;
    std::string metrics_path;
};

template <class T>
int run_train_typed(const TrainArgs& args, const RunConfig& cfg, const Dataset& ds) {
    std::ofstream metrics;
    std::ostream* metrics_out = nullptr;
    if (!args.metrics_path.empty()) {
        metrics.open(args.metrics_path);
        if (!metrics) {
            throw IoError("cannot write metrics log: " + args.metrics_path);
        }
        metrics_out = &metrics;
    }
    auto outcome = train_model<T>(ds, cfg, metrics_out);
    save_checkpoint(args.checkpoint_out, outcome.model, cfg, outcome.steps, outcome.rng_final);

    json report = base_report("train", cfg);
    report["data"] = args.data_dir;
    report["checkpoint"] = args.checkpoint_out;
    report["metrics"] = args.metrics_path.empty() ? json(nullptr) : json(args.metrics_path);
    report["diverged"] = outcome.diverged;
    report["steps"] = outcome.steps;
    report["epochs_run"] = outcome.metrics.size();
    if (!outcome.metrics.empty()) {
        report["final_fail_loss"] = outcome.metrics.back().fail_loss;
        report["final_nsp_loss"] = outcome.metrics.back().nsp_loss;
        report["final_loss"] = outcome.metrics.back().combined;
    }
    emit_report(report, args.common.out_path);
    if (outcome.diverged) {
        std::cerr << "training diverged (non-finite loss); last good checkpoint saved to "
                  << args.checkpoint_out << "\n";
        return 1;
    }
    return 0;
}

int run_train(const TrainArgs& args) {
    RunConfig cfg = load_config(args.common);
    auto ds = load_dataset_checked(args.data_dir);
    require_world_match(cfg.world, ds.world);
    return cfg.precision == Precision::Single ? run_train_typed<float>(args, cfg, ds)
                                              : run_train_typed<double>(args, cfg, ds);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    CommonArgs common;
    std::string data_dir;
    std::string checkpoint;
    std::string predictions;
    bool skip_nsp = false;
};

json fail_report_json(const FailEvalReport& r) {
    json j;
    j["clip_accuracy"] = r.clip_accuracy;
    j["clip_count"] = r.clip_count;
    j["per_class_accuracy"] = r.per_class_accuracy;
    j["per_class_counts"] = r.per_class_counts;
    j["localization_accuracy"] = r.localization_accuracy;
    j["localization_median_abs_error"] = r.localization_median_abs_error;
    j["failing_videos"] = r.failing_videos;
    return j;
}

// Predictions fixture: one JSON line per video {"id":..,"probs":[[p0,p1,p2],..]}.
FailEvalReport eval_from_predictions(const Dataset& ds, const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open predictions file: " + path);
    }
    std::map<std::int64_t, std::vector<std::array<double, 3>>> by_id;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw IoError("malformed predictions line in " + path);
        }
        std::vector<std::array<double, 3>> probs;
        for (const auto& row : j.at("probs")) {
            probs.push_back({row.at(0).get<double>(), row.at(1).get<double>(), row.at(2).get<double>()});
        }
        by_id[j.at("id").get<std::int64_t>()] = std::move(probs);
    }
    FailEvalAccumulator acc;
    for (const auto& video : ds.videos) {
        auto it = by_id.find(video.meta.id);
        if (it == by_id.end() || it->second.size() != video.clips.size()) {
            throw MismatchError("predictions do not cover video " + std::to_string(video.meta.id));
        }
        auto labels = derive_fail_labels(video.meta.tau, static_cast<int>(video.clips.size())).labels;
        std::vector<int> argmax;
        for (const auto& p : it->second) {
            argmax.push_back(argmax_lowest(p.data(), 3));
        }
        std::optional<int> predicted;
        if (video.meta.tau && it->second.size() >= 2) {
            predicted = localize_onset(it->second);
        }
        acc.add_video(argmax, labels, video.meta.tau, predicted);
    }
    return acc.report();
}

template <class T>
int run_eval_typed(const EvalArgs& args, RunConfig run_cfg, const Dataset& ds) {
    auto loaded = load_checkpoint<T>(args.checkpoint);
    require_world_match(loaded.config.world, ds.world);
    auto report = base_report("eval", run_cfg);
    report["data"] = args.data_dir;
    report["checkpoint"] = args.checkpoint;
    report["fail"] = fail_report_json(evaluate_fail(ds, loaded.model, run_cfg.threads));
    if (!args.skip_nsp && ds.videos.size() >= 2) {
        report["nsp_balanced_accuracy"] =
            evaluate_nsp_balanced(ds, loaded.model, run_cfg.loss, run_cfg.seed, run_cfg.threads);
    } else {
        report["nsp_balanced_accuracy"] = nullptr;
    }
    emit_report(report, args.common.out_path);
    return 0;
}

int run_eval(const EvalArgs& args) {
    RunConfig cfg = load_config(args.common);
    auto ds = load_dataset_checked(args.data_dir);
    if (!args.predictions.empty()) {
        auto report = base_report("eval", cfg);
        report["data"] = args.data_dir;
        report["predictions"] = args.predictions;
        report["fail"] = fail_report_json(eval_from_predictions(ds, args.predictions));
        report["nsp_balanced_accuracy"] = nullptr;
        emit_report(report, args.common.out_path);
        return 0;
    }
    require_checkpoint(args.checkpoint);
    auto ckpt_cfg = peek_checkpoint_config(args.checkpoint);
    return ckpt_cfg.precision == Precision::Single ? run_eval_typed<float>(args, cfg, ds)
                                                   : run_eval_typed<double>(args, cfg, ds);
}

// ---------------------------------------------------------------------------
// autocorrect
// ---------------------------------------------------------------------------

struct AutocorrectArgs {
    CommonArgs common;
    std::string data_dir;
    std::string checkpoint;
    std::string index_path;    // optional: prebuilt GCIX
    std::string decoder_path;  // optional: trained SVO decoder
};

template <class T>
int run_autocorrect_typed(const AutocorrectArgs& args, RunConfig run_cfg, const Dataset& ds) {
    auto loaded = load_checkpoint<T>(args.checkpoint);
    require_world_match(loaded.config.world, ds.world);
    RetrievalIndex<T> index = args.index_path.empty()
                                  ? build_retrieval_index(ds, loaded.model, run_cfg.threads)
                                  : load_retrieval_index<T>(args.index_path);
    std::optional<SvoDecoder<T>> decoder;
    if (!args.decoder_path.empty()) {
        decoder = load_svo_decoder<T>(args.decoder_path);
        if (decoder->model_dim != loaded.model.dim()) {
            throw MismatchError("decoder width does not match the checkpoint");
        }
    }
    auto eval = evaluate_correction(ds, loaded.model, index, decoder ? &*decoder : nullptr,
                                    run_cfg.autocorrect, run_cfg.threads);

    auto report = base_report("autocorrect", run_cfg);
    report["data"] = args.data_dir;
    report["checkpoint"] = args.checkpoint;
    report["index"] = args.index_path.empty() ? json(nullptr) : json(args.index_path);
    report["decoder"] = args.decoder_path.empty() ? json(nullptr) : json(args.decoder_path);
    const auto& a = eval.aggregates;
    report["aggregates"] = json{{"failing_videos", a.failing_videos},
                                {"corrected_videos", a.corrected_videos},
                                {"modified_clips", a.modified_clips},
                                {"fooling_rate", a.fooling_rate},
                                {"mean_iterations", a.mean_iterations},
                                {"j_decreased_fraction", a.j_decreased_fraction},
                                {"neighbor_intentional_before", a.neighbor_intentional_before},
                                {"neighbor_intentional_after", a.neighbor_intentional_after},
                                {"neighbor_intentional_linear", a.neighbor_intentional_linear},
                                {"linear_clips", a.linear_clips},
                                {"goal_verb_rank_before", a.goal_verb_rank_before},
                                {"goal_verb_rank_after", a.goal_verb_rank_after},
                                {"failure_verb_rank_before", a.failure_verb_rank_before},
                                {"failure_verb_rank_after", a.failure_verb_rank_after},
                                {"residual_ok", a.residual_ok},
                                {"prefix_ok", a.prefix_ok}};
    json videos = json::array();
    for (const auto& v : eval.videos) {
        json jv;
        jv["id"] = v.video_id;
        jv["t"] = v.onset;
        jv["modified_clips"] = v.modified_clips;
        jv["iterations"] = v.iterations;
        jv["fooled"] = v.fooled;
        jv["j_initial"] = v.j_initial;
        jv["j_final"] = v.j_final;
        jv["max_residual"] = v.max_residual;
        json nb = json::array(), na = json::array(), nl = json::array();
        for (const auto& n : v.neighbors_before) {
            nb.push_back(neighbor_json(n));
        }
        for (const auto& n : v.neighbors_after) {
            na.push_back(neighbor_json(n));
        }
        for (const auto& n : v.neighbors_linear) {
            nl.push_back(neighbor_json(n));
        }
        jv["neighbors_before"] = nb;
        jv["neighbors_after"] = na;
        jv["neighbors_linear"] = nl;
        if (!v.goal_verb_ranks.empty()) {
            json gr = json::array(), fr = json::array();
            for (const auto& g : v.goal_verb_ranks) {
                gr.push_back(g);
            }
            for (const auto& f : v.failure_verb_ranks) {
                fr.push_back(f);
            }
            jv["goal_verb_ranks"] = gr;
            jv["failure_verb_ranks"] = fr;
        }
        videos.push_back(jv);
    }
    report["videos"] = videos;
    emit_report(report, args.common.out_path);
    return 0;
}

int run_autocorrect(const AutocorrectArgs& args) {
    RunConfig cfg = load_config(args.common);
    auto ds = load_dataset_checked(args.data_dir);
    require_checkpoint(args.checkpoint);
    auto ckpt_cfg = peek_checkpoint_config(args.checkpoint);
    return ckpt_cfg.precision == Precision::Single ? run_autocorrect_typed<float>(args, cfg, ds)
                                                   : run_autocorrect_typed<double>(args, cfg, ds);
}

// ---------------------------------------------------------------------------
// retrieve
// ---------------------------------------------------------------------------

struct RetrieveArgs {
    CommonArgs common;
    std::string data_dir;
    std::string checkpoint;
    std::string build_index;  // output path
    std::string index_path;   // query mode
    std::int64_t query_video = -1;
    int query_clip = -1;
    int k = 5;
};

template <class T>
int run_retrieve_typed(const RetrieveArgs& args, RunConfig run_cfg, const Dataset& ds) {
    auto loaded = load_checkpoint<T>(args.checkpoint);
    require_world_match(loaded.config.world, ds.world);
    auto report = base_report("retrieve", run_cfg);
    report["data"] = args.data_dir;
    report["checkpoint"] = args.checkpoint;
    if (!args.build_index.empty()) {
        auto index = build_retrieval_index(ds, loaded.model, run_cfg.threads);
        save_retrieval_index(args.build_index, index, run_cfg.echo_json());
        report["index"] = args.build_index;
        report["entries"] = index.size();
        emit_report(report, args.common.out_path);
        return 0;
    }
    if (args.query_video < 0 || args.query_clip < 0) {
        throw ConfigError("retrieve: query mode needs --query-video and --query-clip");
    }
    RetrievalIndex<T> index = args.index_path.empty()
                                  ? build_retrieval_index(ds, loaded.model, run_cfg.threads)
                                  : load_retrieval_index<T>(args.index_path);
    const VideoRecord* video = nullptr;
    for (const auto& v : ds.videos) {
        if (v.meta.id == args.query_video) {
            video = &v;
        }
    }
    if (video == nullptr) {
        throw IoError("query video not present in the dataset");
    }
    if (args.query_clip >= static_cast<int>(video->clips.size())) {
        throw ConfigError("query clip index out of range");
    }
    std::vector<Tensor<T>> clips;
    for (const auto& c : video->clips) {
        clips.push_back(cast_tensor<T>(c));
    }
    auto fwd = forward_video(loaded.model, clips);
    auto h = fwd.trajectory.row(1 + args.query_clip);  // skip the START token
    auto neighbors = query_knn(index, h, args.k, args.query_video);
    report["index"] = args.index_path.empty() ? json(nullptr) : json(args.index_path);
    report["query"] = json{{"video", args.query_video}, {"clip", args.query_clip}, {"k", args.k}};
    json out = json::array();
    for (const auto& n : neighbors) {
        out.push_back(neighbor_json(n));
    }
    report["neighbors"] = out;
    emit_report(report, args.common.out_path);
    return 0;
}

int run_retrieve(const RetrieveArgs& args) {
    RunConfig cfg = load_config(args.common);
    auto ds = load_dataset_checked(args.data_dir);
    require_checkpoint(args.checkpoint);
    auto ckpt_cfg = peek_checkpoint_config(args.checkpoint);
    return ckpt_cfg.precision == Precision::Single ? run_retrieve_typed<float>(args, cfg, ds)
                                                   : run_retrieve_typed<double>(args, cfg, ds);
}

// ---------------------------------------------------------------------------
// decode-svo
// ---------------------------------------------------------------------------

struct DecodeSvoArgs {
    CommonArgs common;
    std::string data_dir;       // decoder training split
    std::string eval_data_dir;  // held-out split (defaults to data_dir)
    std::string checkpoint;
    std::string decoder_in;
    std::string decoder_out;
};

json pooled_json(const PooledSvoReport& r) {
    auto slots = [](const std::array<double, 3>& v) {
        return json{{"subject", v[0]}, {"verb", v[1]}, {"object", v[2]}};
    };
    json j;
    j["goal_top1"] = slots(r.goal_top1);
    j["goal_top5"] = slots(r.goal_top5);
    j["failure_top1"] = slots(r.failure_top1);
    j["failure_top5"] = slots(r.failure_top5);
    j["goal_spans"] = r.goal_spans;
    j["failure_spans"] = r.failure_spans;
    j["skipped_empty_spans"] = r.skipped_empty_spans;
    return j;
}

template <class T>
int run_decode_svo_typed(const DecodeSvoArgs& args, RunConfig run_cfg, const Dataset& train_ds,
                         const Dataset& eval_ds) {
    auto loaded = load_checkpoint<T>(args.checkpoint);
    require_world_match(loaded.config.world, train_ds.world);
    require_world_match(loaded.config.world, eval_ds.world);
    auto params_before = loaded.model.params().checksum();

    SvoDecoder<T> decoder = [&] {
        if (!args.decoder_in.empty()) {
            return load_svo_decoder<T>(args.decoder_in);
        }
        auto tables = embedding_tables(run_cfg);
        auto dec = make_svo_decoder<T>(loaded.model.dim(), tables[0], tables[1], tables[2], run_cfg.seed);
        auto trajs = collect_trajectories(train_ds, loaded.model, run_cfg.threads);
        auto examples = svo_examples(train_ds, trajs);
        train_svo_decoder(dec, examples, run_cfg.decoder, run_cfg.seed);
        return dec;
    }();
    if (loaded.model.params().checksum() != params_before) {
        throw MismatchError("decoder training touched frozen trajectory parameters");
    }
    if (!args.decoder_out.empty()) {
        save_svo_decoder(args.decoder_out, decoder, run_cfg.echo_json());
    }
    auto eval_trajs = collect_trajectories(eval_ds, loaded.model, run_cfg.threads);
    auto pooled = pooled_svo_eval(eval_ds, eval_trajs, decoder);

    auto report = base_report("decode-svo", run_cfg);
    report["data"] = args.data_dir;
    report["eval_data"] = args.eval_data_dir.empty() ? args.data_dir : args.eval_data_dir;
    report["checkpoint"] = args.checkpoint;
    report["decoder_in"] = args.decoder_in.empty() ? json(nullptr) : json(args.decoder_in);
    report["decoder_out"] = args.decoder_out.empty() ? json(nullptr) : json(args.decoder_out);
    report["pooled"] = pooled_json(pooled);
    report["verb_chance"] = 1.0 / run_cfg.world.verb_vocab;
    emit_report(report, args.common.out_path);
    return 0;
}

int run_decode_svo(const DecodeSvoArgs& args) {
    RunConfig cfg = load_config(args.common);
    auto train_ds = load_dataset_checked(args.data_dir);
    auto eval_ds = args.eval_data_dir.empty() ? train_ds : load_dataset_checked(args.eval_data_dir);
    require_checkpoint(args.checkpoint);
    auto ckpt_cfg = peek_checkpoint_config(args.checkpoint);
    return ckpt_cfg.precision == Precision::Single
               ? run_decode_svo_typed<float>(args, cfg, train_ds, eval_ds)
               : run_decode_svo_typed<double>(args, cfg, train_ds, eval_ds);
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
    CommonArgs common;
    std::string data_dir;
    std::string checkpoint;
    std::string out_dir;
};

template <class T>
int run_analyze_typed(const AnalyzeArgs& args, RunConfig run_cfg, const Dataset& ds) {
    auto loaded = load_checkpoint<T>(args.checkpoint);
    require_world_match(loaded.config.world, ds.world);
    std::error_code ec;
    fs::create_directories(args.out_dir, ec);
    if (ec) {
        throw IoError("cannot create output directory: " + args.out_dir);
    }
    auto trajs = collect_trajectories(ds, loaded.model, run_cfg.threads);

    int d = loaded.model.dim();
    int ns = run_cfg.world.subject_vocab;
    int nv = run_cfg.world.verb_vocab;
    int no = run_cfg.world.object_vocab;
    int vocab = ns + nv + no;
    auto videos = static_cast<std::int64_t>(ds.videos.size());

    // Per-video activation = mean over clip tokens; indicators mark every
    // word present in the goal or failure triple.
    Tensor<double> activations({videos, d});
    Tensor<double> indicators({videos, vocab});
    std::vector<EmbeddingCsvRow> point_rows;
    std::int64_t total_clips = 0;
    for (const auto& traj : trajs) {
        for (const auto& tag : traj.tags) {
            total_clips += !tag.is_special();
        }
    }
    Tensor<double> points({total_clips, d});
    std::vector<std::vector<double>> clip_activations(static_cast<std::size_t>(d));
    std::vector<std::array<std::int64_t, 2>> clip_origin;
    std::int64_t point_at = 0;
    for (std::int64_t v = 0; v < videos; ++v) {
        const auto& meta = ds.videos[static_cast<std::size_t>(v)].meta;
        const auto& traj = trajs[static_cast<std::size_t>(v)];
        auto labels =
            derive_fail_labels(meta.tau, static_cast<int>(ds.videos[static_cast<std::size_t>(v)].clips.size()))
                .labels;
        std::int64_t clips = 0;
        for (std::int64_t i = 0; i < traj.length(); ++i) {
            const auto& tag = traj.tags[static_cast<std::size_t>(i)];
            if (tag.is_special()) {
                continue;
            }
            for (int j = 0; j < d; ++j) {
                double value = static_cast<double>(traj.points[i * d + j]);
                activations[v * d + j] += value;
                points[point_at * d + j] = value;
                clip_activations[static_cast<std::size_t>(j)].push_back(value);
            }
            point_rows.push_back({meta.id, tag.clip_slot, labels[static_cast<std::size_t>(tag.clip_slot)]});
            clip_origin.push_back({meta.id, tag.clip_slot});
            ++point_at;
            ++clips;
        }
        for (int j = 0; j < d; ++j) {
            activations[v * d + j] /= static_cast<double>(clips);
        }
        auto mark = [&](const SvoTriple& s) {
            indicators[v * vocab + s.subject] = 1.0;
            indicators[v * vocab + ns + s.verb] = 1.0;
            indicators[v * vocab + ns + nv + s.object] = 1.0;
        };
        mark(meta.goal_svo);
        if (meta.failure_svo) {
            mark(*meta.failure_svo);
        }
    }

    auto correlation = spearman_neuron_word(activations, indicators, 3);
    std::vector<std::string> word_names;
    for (int s = 0; s < ns; ++s) {
        word_names.push_back("subject:" + std::to_string(s));
    }
    for (int s = 0; s < nv; ++s) {
        word_names.push_back("verb:" + std::to_string(s));
    }
    for (int s = 0; s < no; ++s) {
        word_names.push_back("object:" + std::to_string(s));
    }
    auto corr_csv = fs::path(args.out_dir) / "correlations.csv";
    write_correlation_csv(corr_csv, correlation, word_names);

    auto pca = export_embedding_2d(points);
    auto emb_csv = fs::path(args.out_dir) / "embedding2d.csv";
    write_embedding_csv(emb_csv, pca, point_rows);

    auto report = base_report("analyze", run_cfg);
    report["data"] = args.data_dir;
    report["checkpoint"] = args.checkpoint;
    report["correlations_csv"] = corr_csv.string();
    report["embedding_csv"] = emb_csv.string();
    report["pc_variance"] = pca.variance;
    json pairs = json::array();
    for (const auto& p : correlation.top_pairs) {
        json jp;
        jp["neuron"] = p.neuron;
        jp["word"] = word_names[static_cast<std::size_t>(p.word)];
        jp["rho"] = p.rho;
        auto top_clips = top_k_indices(clip_activations[static_cast<std::size_t>(p.neuron)], 5);
        json clips = json::array();
        for (auto c : top_clips) {
            clips.push_back(json::array(
                {clip_origin[static_cast<std::size_t>(c)][0], clip_origin[static_cast<std::size_t>(c)][1]}));
        }
        jp["top_clips"] = clips;
        pairs.push_back(jp);
    }
    report["top_pairs"] = pairs;
    emit_report(report, args.common.out_path);
    return 0;
}

int run_analyze(const AnalyzeArgs& args) {
    RunConfig cfg = load_config(args.common);
    auto ds = load_dataset_checked(args.data_dir);
    require_checkpoint(args.checkpoint);
    auto ckpt_cfg = peek_checkpoint_config(args.checkpoint);
    return ckpt_cfg.precision == Precision::Single ? run_analyze_typed<float>(args, cfg, ds)
                                                   : run_analyze_typed<double>(args, cfg, ds);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"goal-oriented video trajectory learning on a synthetic world"};
    app.require_subcommand(1);

    GenDataArgs gen_args;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, gen_args.common, /*with_out=*/false);
    gen->add_option("--out", gen_args.out_dir, "output dataset directory")->required();
    gen->add_option("--count", gen_args.count, "number of videos")->required();
    gen->add_option("--report", gen_args.common.out_path, "write the JSON report here instead of stdout");

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "train the trajectory model");
    add_common(train, train_args.common);
    train->add_option("--data", train_args.data_dir, "training dataset directory")->required();
    train->add_option("--checkpoint-out", train_args.checkpoint_out, "checkpoint output path")
        ->required();
    train->add_option("--metrics", train_args.metrics_path, "JSON-lines metrics log path");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "intentionality classification and localization");
    add_common(eval, eval_args.common);
    eval->add_option("--data", eval_args.data_dir, "evaluation dataset directory")->required();
    eval->add_option("--checkpoint", eval_args.checkpoint, "trained checkpoint");
    eval->add_option("--predictions", eval_args.predictions,
                     "JSON-lines per-clip probability fixture (bypasses the checkpoint)");
    eval->add_flag("--skip-nsp", eval_args.skip_nsp, "skip the consistency probe");

    AutocorrectArgs ac_args;
    auto* ac = app.add_subcommand("autocorrect", "correct unintentional-action trajectories");
    add_common(ac, ac_args.common);
    ac->add_option("--data", ac_args.data_dir, "dataset directory")->required();
    ac->add_option("--checkpoint", ac_args.checkpoint, "trained checkpoint")->required();
    ac->add_option("--index", ac_args.index_path, "prebuilt retrieval index (GCIX)");
    ac->add_option("--decoder", ac_args.decoder_path, "trained SVO decoder");

    RetrieveArgs ret_args;
    auto* ret = app.add_subcommand("retrieve", "build or query the cosine kNN index");
    add_common(ret, ret_args.common);
    ret->add_option("--data", ret_args.data_dir, "dataset directory")->required();
    ret->add_option("--checkpoint", ret_args.checkpoint, "trained checkpoint")->required();
    ret->add_option("--build-index", ret_args.build_index, "write the index here and exit");
    ret->add_option("--index", ret_args.index_path, "prebuilt index for query mode");
    ret->add_option("--query-video", ret_args.query_video, "query video id");
    ret->add_option("--query-clip", ret_args.query_clip, "query clip index");
    ret->add_option("--k", ret_args.k, "neighbors to return");

    DecodeSvoArgs svo_args;
    auto* svo = app.add_subcommand("decode-svo", "train/evaluate the SVO decoder on frozen trajectories");
    add_common(svo, svo_args.common);
    svo->add_option("--data", svo_args.data_dir, "decoder training dataset")->required();
    svo->add_option("--eval-data", svo_args.eval_data_dir, "held-out dataset for pooled evaluation");
    svo->add_option("--checkpoint", svo_args.checkpoint, "trained checkpoint")->required();
    svo->add_option("--decoder", svo_args.decoder_in, "load a trained decoder instead of training");
    svo->add_option("--save-decoder", svo_args.decoder_out, "persist the trained decoder here");

    AnalyzeArgs an_args;
    auto* an = app.add_subcommand("analyze", "neuron-word correlations and 2-D trajectory export");
    add_common(an, an_args.common);
    an->add_option("--data", an_args.data_dir, "dataset directory")->required();
    an->add_option("--checkpoint", an_args.checkpoint, "trained checkpoint")->required();
    an->add_option("--out-dir", an_args.out_dir, "directory for CSV exports")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            return run_gen_data(gen_args);
        }
        if (train->parsed()) {
            return run_train(train_args);
        }
        if (eval->parsed()) {
            if (eval_args.checkpoint.empty() && eval_args.predictions.empty()) {
                throw MissingCheckpoint("eval needs --checkpoint or --predictions");
            }
            return run_eval(eval_args);
        }
        if (ac->parsed()) {
            return run_autocorrect(ac_args);
        }
        if (ret->parsed()) {
            return run_retrieve(ret_args);
        }
        if (svo->parsed()) {
            return run_decode_svo(svo_args);
        }
        if (an->parsed()) {
            return run_analyze(an_args);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MissingCheckpoint& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const MismatchError& e) {
        std::cerr << "mismatch: " << e.what() << "\n";
        return 5;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
