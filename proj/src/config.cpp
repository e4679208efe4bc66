#include "coco/config.hpp"

#include <cstdlib>
#include <fstream>
#include <istream>
#include <sstream>

#include "coco/errors.hpp"

namespace coco {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return s.substr(a, b - a);
}

double to_double(const std::string& key, const std::string& value) {
    const char* s = value.c_str();
    char* end = nullptr;
    const double v = std::strtod(s, &end);
    if (end == s || *end != '\0')
        throw ConfigError(key + ": bad number '" + value + "'");
    return v;
}

long to_long(const std::string& key, const std::string& value) {
    const char* s = value.c_str();
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    if (end == s || *end != '\0')
        throw ConfigError(key + ": bad integer '" + value + "'");
    return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
    const char* s = value.c_str();
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0' || value[0] == '-')
        throw ConfigError(key + ": bad unsigned integer '" + value + "'");
    return v;
}

std::vector<std::size_t> to_dims(const std::string& key, const std::string& value) {
    if (value == "none") return {};
    std::vector<std::size_t> dims;
    std::string cur;
    std::istringstream ss(value);
    while (std::getline(ss, cur, ',')) {
        const long v = to_long(key, trim(cur));
        if (v < 1) throw ConfigError(key + ": dims must be >= 1");
        dims.push_back(static_cast<std::size_t>(v));
    }
    if (dims.empty()) throw ConfigError(key + ": empty dim list");
    return dims;
}

void apply_key(ExperimentConfig& cfg, const std::string& key,
               const std::string& value) {
    if (key == "num_classes") {
        cfg.num_classes = static_cast<int>(to_long(key, value));
    } else if (key == "per_class") {
        cfg.per_class = static_cast<int>(to_long(key, value));
    } else if (key == "input_dim") {
        cfg.input_dim = static_cast<int>(to_long(key, value));
    } else if (key == "spread") {
        cfg.spread = to_double(key, value);
    } else if (key == "hidden_dims") {
        cfg.hidden_dims = to_dims(key, value);
    } else if (key == "embedding_dim") {
        const long v = to_long(key, value);
        if (v < 1) throw ConfigError("embedding_dim must be >= 1");
        cfg.embedding_dim = static_cast<std::size_t>(v);
    } else if (key == "activation") {
        if (value == "relu")
            cfg.activation = Activation::Relu;
        else if (value == "tanh")
            cfg.activation = Activation::Tanh;
        else
            throw ConfigError("activation: unknown value '" + value + "'");
    } else if (key == "learning_rate") {
        cfg.train.learning_rate = to_double(key, value);
    } else if (key == "lr_decay_factor") {
        cfg.train.lr_decay_factor = to_double(key, value);
    } else if (key == "lr_decay_every") {
        cfg.train.lr_decay_every = static_cast<int>(to_long(key, value));
    } else if (key == "weight_decay") {
        cfg.train.weight_decay = to_double(key, value);
    } else if (key == "momentum") {
        cfg.train.momentum = to_double(key, value);
    } else if (key == "optimizer") {
        if (value == "adam")
            cfg.train.optimizer = Optimizer::Adam;
        else if (value == "sgd_momentum")
            cfg.train.optimizer = Optimizer::SgdMomentum;
        else
            throw ConfigError("optimizer: unknown value '" + value + "'");
    } else if (key == "epochs") {
        cfg.train.epochs = static_cast<int>(to_long(key, value));
    } else if (key == "batch_size") {
        cfg.train.batch_size = static_cast<int>(to_long(key, value));
    } else if (key == "centroid_mode") {
        if (value == "parametric")
            cfg.train.centroid_mode = CentroidMode::Parametric;
        else if (value == "batch")
            cfg.train.centroid_mode = CentroidMode::BatchComputed;
        else
            throw ConfigError("centroid_mode: unknown value '" + value + "'");
    } else if (key == "temperature") {
        cfg.train.temperature = to_double(key, value);
    } else if (key == "epsilon") {
        cfg.train.epsilon = to_double(key, value);
    } else if (key == "seed") {
        cfg.train.seed = to_u64(key, value);
    } else if (key == "loss") {
        if (value != "coco" && value != "softmax")
            throw ConfigError("loss: unknown value '" + value + "'");
        cfg.loss = value;
    } else if (key == "preset") {
        if (value == "default") {
            cfg.train.learning_rate = 0.005;
            cfg.train.lr_decay_factor = 0.20;
            cfg.train.lr_decay_every = 10;
        } else if (value == "face") {
            cfg.train.learning_rate = 0.001;
            cfg.train.lr_decay_factor = 0.10;
            cfg.train.lr_decay_every = 20;
        } else {
            throw ConfigError("preset: unknown value '" + value + "'");
        }
    } else if (key == "gc_step") {
        cfg.gc_step = to_double(key, value);
    } else if (key == "gc_tol") {
        cfg.gc_tol = to_double(key, value);
    } else if (key == "gc_batch_size") {
        cfg.gc_batch_size = static_cast<int>(to_long(key, value));
    } else if (key == "fit_iterations") {
        cfg.fit_iterations = static_cast<int>(to_long(key, value));
    } else if (key == "fit_learning_rate") {
        cfg.fit_learning_rate = to_double(key, value);
    } else if (key == "fit_max_pairs") {
        cfg.fit_max_pairs = static_cast<int>(to_long(key, value));
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

}  // namespace

std::vector<std::size_t> ExperimentConfig::layer_dims() const {
    std::vector<std::size_t> dims;
    dims.push_back(static_cast<std::size_t>(input_dim));
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(embedding_dim);
    return dims;
}

void ExperimentConfig::validate() const {
    train.validate();
    if (embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
    for (std::size_t d : hidden_dims) {
        if (d < 1) throw ConfigError("hidden_dims must all be >= 1");
    }
    if (!(gc_step > 0.0)) throw ConfigError("gc_step must be > 0");
    if (!(gc_tol > 0.0)) throw ConfigError("gc_tol must be > 0");
    if (gc_batch_size < 1) throw ConfigError("gc_batch_size must be >= 1");
    if (fit_iterations < 1) throw ConfigError("fit_iterations must be >= 1");
    if (!(fit_learning_rate > 0.0))
        throw ConfigError("fit_learning_rate must be > 0");
    if (fit_max_pairs < 0) throw ConfigError("fit_max_pairs must be >= 0");
}

ExperimentConfig parse_experiment_config(std::istream& in, const std::string& name) {
    ExperimentConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError(name + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty())
            throw ConfigError(name + ":" + std::to_string(lineno) + ": empty key");
        if (value.empty())
            throw ConfigError(name + ":" + std::to_string(lineno) +
                              ": empty value for key '" + key + "'");
        apply_key(cfg, key, value);
    }
    return cfg;
}

ExperimentConfig read_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    return parse_experiment_config(in, path);
}

}  // namespace coco
