#include "gcv/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "gcv/common.hpp"

namespace gcv {

using nlohmann::json;

void EncoderConfig::validate() const {
    if (channels.empty()) {
        throw ConfigError("encoder.channels must list at least one stage");
    }
    for (int c : channels) {
        if (c < 1) {
            throw ConfigError("encoder.channels entries must be >= 1");
        }
    }
    if (kernel < 1 || kernel % 2 == 0) {
        throw ConfigError("encoder.kernel must be odd and >= 1");
    }
    if (stride < 1) {
        throw ConfigError("encoder.stride must be >= 1");
    }
    if (pool < 1) {
        throw ConfigError("encoder.pool must be >= 1");
    }
}

void ModelConfig::validate() const {
    if (dim < 2 || dim % 2 != 0) {
        throw ConfigError("model.dim must be a positive even number");
    }
    if (layers < 1) {
        throw ConfigError("model.layers must be >= 1");
    }
    if (heads < 1 || dim % heads != 0) {
        throw ConfigError("model.dim must be divisible by model.heads");
    }
    if (ff_width < 0) {
        throw ConfigError("model.ff_width must be >= 0 (0 selects 4*dim)");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw ConfigError("model.dropout must be in [0, 1)");
    }
}

void LossConfig::validate() const {
    if (lambda < 0.0) {
        throw ConfigError("loss.lambda must be >= 0");
    }
    for (double p : {p_split, p_perturb, p_swap}) {
        if (p < 0.0 || p > 1.0) {
            throw ConfigError("loss sampling probabilities must be in [0, 1]");
        }
    }
}

void TrainConfig::validate() const {
    if (n_lo < 1 || n_lo > n_hi) {
        throw ConfigError("train clip range must satisfy 1 <= n_lo <= n_hi");
    }
    if (batch_size < 1) {
        throw ConfigError("train.batch_size must be >= 1");
    }
    if (epochs < 0) {
        throw ConfigError("train.epochs must be >= 0");
    }
    if (lr <= 0.0) {
        throw ConfigError("train.lr must be positive");
    }
}

void DecoderTrainConfig::validate() const {
    if (epochs < 1) {
        throw ConfigError("decoder.epochs must be >= 1");
    }
    if (lr <= 0.0) {
        throw ConfigError("decoder.lr must be positive");
    }
    if (batch_size < 1) {
        throw ConfigError("decoder.batch_size must be >= 1");
    }
}

void AutocorrectConfig::validate() const {
    if (k_max < 1) {
        throw ConfigError("autocorrect.k_max must be >= 1");
    }
    if (alpha <= 0.0 || epsilon <= 0.0 || lambda <= 0.0) {
        throw ConfigError("autocorrect.alpha/epsilon/lambda must all be positive");
    }
    if (alpha > epsilon) {
        throw ConfigError("autocorrect.alpha must not exceed autocorrect.epsilon");
    }
    if (knn < 1) {
        throw ConfigError("autocorrect.knn must be >= 1");
    }
}

void EmbedConfig::validate() const {
    if (dim < 8) {
        throw ConfigError("embed.dim must be >= 8");
    }
}

void RunConfig::validate() const {
    if (threads < 0) {
        throw ConfigError("threads must be >= 0");
    }
    world.validate();
    encoder.validate();
    model.validate();
    loss.validate();
    train.validate();
    decoder.validate();
    autocorrect.validate();
    embed.validate();
}

std::string precision_name(Precision p) { return p == Precision::Single ? "single" : "double"; }

namespace {

struct KeyBinding {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<json(const RunConfig&)> get;
};

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        int r = std::stoi(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double r = std::stod(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected number, got '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        std::uint64_t r = std::stoull(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected unsigned integer, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") {
        return true;
    }
    if (v == "false" || v == "0") {
        return false;
    }
    throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, ',')) {
        out.push_back(parse_int(key, item));
    }
    if (out.empty()) {
        throw ConfigError("key '" + key + "': expected a comma separated integer list");
    }
    return out;
}

#define INT_KEY(field)                                                                       \
    KeyBinding {                                                                             \
        [](RunConfig& c, const std::string& v) { c.field = parse_int(#field, v); },          \
            [](const RunConfig& c) { return json(c.field); }                                 \
    }
#define DOUBLE_KEY(field)                                                                    \
    KeyBinding {                                                                             \
        [](RunConfig& c, const std::string& v) { c.field = parse_double(#field, v); },       \
            [](const RunConfig& c) { return json(c.field); }                                 \
    }

const std::map<std::string, KeyBinding>& key_table() {
    static const std::map<std::string, KeyBinding> table = [] {
        std::map<std::string, KeyBinding> t;
        t["seed"] = {[](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
                     [](const RunConfig& c) { return json(c.seed); }};
        t["threads"] = {[](RunConfig& c, const std::string& v) { c.threads = parse_int("threads", v); },
                        [](const RunConfig& c) { return json(c.threads); }};
        t["precision"] = {[](RunConfig& c, const std::string& v) {
                              if (v == "single") {
                                  c.precision = Precision::Single;
                              } else if (v == "double") {
                                  c.precision = Precision::Double;
                              } else {
                                  throw ConfigError("key 'precision': expected single|double, got '" + v +
                                                    "'");
                              }
                          },
                          [](const RunConfig& c) { return json(precision_name(c.precision)); }};

        t["world.frame_height"] = INT_KEY(world.frame_height);
        t["world.frame_width"] = INT_KEY(world.frame_width);
        t["world.channels"] = INT_KEY(world.channels);
        t["world.frames_per_clip"] = INT_KEY(world.frames_per_clip);
        t["world.clips_min"] = INT_KEY(world.clips_min);
        t["world.clips_max"] = INT_KEY(world.clips_max);
        t["world.failure_prob"] = DOUBLE_KEY(world.failure_prob);
        t["world.subject_vocab"] = INT_KEY(world.subject_vocab);
        t["world.verb_vocab"] = INT_KEY(world.verb_vocab);
        t["world.object_vocab"] = INT_KEY(world.object_vocab);
        t["world.noise"] = DOUBLE_KEY(world.noise);
        t["world.fps"] = DOUBLE_KEY(world.fps);

        t["encoder.channels"] = {
            [](RunConfig& c, const std::string& v) { c.encoder.channels = parse_int_list("encoder.channels", v); },
            [](const RunConfig& c) { return json(c.encoder.channels); }};
        t["encoder.kernel"] = INT_KEY(encoder.kernel);
        t["encoder.stride"] = INT_KEY(encoder.stride);
        t["encoder.pool"] = INT_KEY(encoder.pool);
        t["encoder.r2plus1d"] = {
            [](RunConfig& c, const std::string& v) { c.encoder.r2plus1d = parse_bool("encoder.r2plus1d", v); },
            [](const RunConfig& c) { return json(c.encoder.r2plus1d); }};

        t["model.dim"] = INT_KEY(model.dim);
        t["model.layers"] = INT_KEY(model.layers);
        t["model.heads"] = INT_KEY(model.heads);
        t["model.ff_width"] = INT_KEY(model.ff_width);
        t["model.dropout"] = DOUBLE_KEY(model.dropout);

        t["loss.lambda"] = DOUBLE_KEY(loss.lambda);
        t["loss.p_split"] = DOUBLE_KEY(loss.p_split);
        t["loss.p_perturb"] = DOUBLE_KEY(loss.p_perturb);
        t["loss.p_swap"] = DOUBLE_KEY(loss.p_swap);

        t["train.n_lo"] = INT_KEY(train.n_lo);
        t["train.n_hi"] = INT_KEY(train.n_hi);
        t["train.batch_size"] = INT_KEY(train.batch_size);
        t["train.epochs"] = INT_KEY(train.epochs);
        t["train.lr"] = DOUBLE_KEY(train.lr);

        t["decoder.epochs"] = INT_KEY(decoder.epochs);
        t["decoder.lr"] = DOUBLE_KEY(decoder.lr);
        t["decoder.batch_size"] = INT_KEY(decoder.batch_size);

        t["autocorrect.k_max"] = INT_KEY(autocorrect.k_max);
        t["autocorrect.alpha"] = DOUBLE_KEY(autocorrect.alpha);
        t["autocorrect.epsilon"] = DOUBLE_KEY(autocorrect.epsilon);
        t["autocorrect.lambda"] = DOUBLE_KEY(autocorrect.lambda);
        t["autocorrect.knn"] = INT_KEY(autocorrect.knn);

        t["embed.dim"] = INT_KEY(embed.dim);
        t["embed.seed"] = {[](RunConfig& c, const std::string& v) { c.embed.seed = parse_u64("embed.seed", v); },
                           [](const RunConfig& c) { return json(c.embed.seed); }};
        return t;
    }();
    return table;
}

#undef INT_KEY
#undef DOUBLE_KEY

std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) {
        ++a;
    }
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) {
        --b;
    }
    return s.substr(a, b - a);
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
    RunConfig cfg;
    const auto& table = key_table();
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        auto it = table.find(key);
        if (it == table.end()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
        it->second.set(cfg, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw ConfigError("cannot open config file: " + path.string());
    }
    std::ostringstream buffer;
    buffer << is.rdbuf();
    return parse_run_config_text(buffer.str());
}

std::string RunConfig::echo_json() const {
    json j;
    for (const auto& [key, binding] : key_table()) {
        j[key] = binding.get(*this);
    }
    return j.dump();
}

RunConfig run_config_from_echo(const std::string& echo_json) {
    json j = json::parse(echo_json, nullptr, false);
    if (j.is_discarded()) {
        throw ConfigError("malformed config echo");
    }
    RunConfig cfg;
    const auto& table = key_table();
    for (const auto& [key, binding] : table) {
        if (!j.contains(key)) {
            throw ConfigError("config echo is missing key '" + key + "'");
        }
        const auto& v = j.at(key);
        std::string text;
        if (v.is_string()) {
            text = v.get<std::string>();
        } else if (v.is_boolean()) {
            text = v.get<bool>() ? "true" : "false";
        } else if (v.is_array()) {
            std::ostringstream os;
            for (std::size_t i = 0; i < v.size(); ++i) {
                os << (i ? "," : "") << v.at(i).get<int>();
            }
            text = os.str();
        } else {
            text = v.dump();
        }
        binding.set(cfg, text);
    }
    cfg.validate();
    return cfg;
}

}  // namespace gcv
