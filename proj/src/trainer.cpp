#include "coco/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "coco/errors.hpp"
#include "coco/numerics.hpp"

namespace coco {

namespace {

constexpr int kMaxPlacementAttempts = 10000;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;
constexpr std::size_t kGradCheckParamLimit = 10000;
constexpr std::uint64_t kHeadInitStream = 0x736f66746d6178ULL;  // distinct init rng

double parse_double(const std::string& field, const std::string& where) {
    const char* s = field.c_str();
    char* end = nullptr;
    const double v = std::strtod(s, &end);
    while (end && *end == ' ') ++end;
    if (end == s || (end && *end != '\0'))
        throw IoError(where + ": bad number '" + field + "'");
    return v;
}

long parse_long(const std::string& field, const std::string& where) {
    const char* s = field.c_str();
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    while (end && *end == ' ') ++end;
    if (end == s || (end && *end != '\0'))
        throw IoError(where + ": bad integer '" + field + "'");
    return v;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

// One optimizer slot per parameter tensor; slot order must be stable across
// steps since moment buffers are indexed by position.
struct ParamSlot {
    double* value;
    const double* grad;
    std::size_t count;
    bool decay;
};

class OptimizerState {
  public:
    explicit OptimizerState(const TrainConfig& cfg) : cfg_(cfg) {}

    void step(const std::vector<ParamSlot>& slots, double lr) {
        if (m_.empty()) {
            m_.resize(slots.size());
            v_.resize(slots.size());
            for (std::size_t s = 0; s < slots.size(); ++s) {
                m_[s].assign(slots[s].count, 0.0);
                if (cfg_.optimizer == Optimizer::Adam) v_[s].assign(slots[s].count, 0.0);
            }
        }
        const double b1 = cfg_.momentum;
        if (cfg_.optimizer == Optimizer::Adam) {
            b1pow_ *= b1;
            b2pow_ *= kAdamBeta2;
        }
        for (std::size_t s = 0; s < slots.size(); ++s) {
            const ParamSlot& slot = slots[s];
            for (std::size_t i = 0; i < slot.count; ++i) {
                const double g =
                    slot.grad[i] + (slot.decay ? cfg_.weight_decay * slot.value[i] : 0.0);
                if (cfg_.optimizer == Optimizer::Adam) {
                    m_[s][i] = b1 * m_[s][i] + (1.0 - b1) * g;
                    v_[s][i] = kAdamBeta2 * v_[s][i] + (1.0 - kAdamBeta2) * g * g;
                    const double mh = m_[s][i] / (1.0 - b1pow_);
                    const double vh = v_[s][i] / (1.0 - b2pow_);
                    slot.value[i] -= lr * mh / (std::sqrt(vh) + kAdamEpsilon);
                } else {
                    m_[s][i] = b1 * m_[s][i] + g;
                    slot.value[i] -= lr * m_[s][i];
                }
            }
        }
    }

  private:
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    double b1pow_ = 1.0, b2pow_ = 1.0;
};

double epoch_lr(const TrainConfig& cfg, int epoch) {
    return cfg.learning_rate *
           std::pow(1.0 - cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n,
                                                       std::size_t batch_size,
                                                       std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(idx.begin() + start, idx.begin() + end);
    }
    return batches;
}

// ceil(batch_size / K) samples from every class per batch, cursors wrapping
// around each class's shuffled list, so per-batch class averages never see an
// empty class.
std::vector<std::vector<std::size_t>> balanced_batches(const std::vector<int>& labels,
                                                       int num_classes,
                                                       std::size_t batch_size,
                                                       std::mt19937_64& rng) {
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    for (auto& list : by_class) std::shuffle(list.begin(), list.end(), rng);

    const std::size_t per =
        (batch_size + static_cast<std::size_t>(num_classes) - 1) / num_classes;
    const std::size_t chunk = per * static_cast<std::size_t>(num_classes);
    const std::size_t num_batches = std::max<std::size_t>(1, (labels.size() + chunk - 1) / chunk);

    std::vector<std::size_t> cursor(num_classes, 0);
    std::vector<std::vector<std::size_t>> batches(num_batches);
    for (auto& batch : batches) {
        batch.reserve(chunk);
        for (int k = 0; k < num_classes; ++k) {
            for (std::size_t j = 0; j < per; ++j) {
                batch.push_back(by_class[k][cursor[k] % by_class[k].size()]);
                ++cursor[k];
            }
        }
    }
    return batches;
}

void gather(const Dataset& data, const std::vector<std::size_t>& idx,
            DenseMatrix& inputs, std::vector<int>& labels) {
    inputs = DenseMatrix(idx.size(), data.dim());
    labels.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const double* src = data.inputs.row(idx[r]);
        std::copy(src, src + data.dim(), inputs.row(r));
        labels[r] = data.labels[idx[r]];
    }
}

void renormalize_rows(DenseMatrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double n = norm({m.row(r), m.cols()});
        if (n <= kNormEpsilon)
            throw ZeroNormError("centroid row " + std::to_string(r) +
                                " collapsed to zero norm");
        for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) /= n;
    }
}

std::vector<ParamSlot> model_slots(MlpModel& model, const MlpGrads& grads) {
    std::vector<ParamSlot> slots;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        slots.push_back({model.layers[l].weights.data(), grads.weights[l].data(),
                         model.layers[l].weights.size(), true});
        slots.push_back({model.layers[l].bias.data(), grads.bias[l].data(),
                         model.layers[l].bias.size(), false});
    }
    return slots;
}

std::size_t argmax_row(const double* row, std::size_t k) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
        if (row[j] > row[best]) best = j;
    }
    return best;
}

}  // namespace

void Dataset::validate() const {
    if (inputs.empty()) throw ConfigError("dataset is empty");
    if (labels.size() != inputs.rows())
        throw LengthMismatchError("dataset has " + std::to_string(inputs.rows()) +
                                  " rows but " + std::to_string(labels.size()) +
                                  " labels");
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (!inputs.all_finite()) throw ConfigError("dataset contains non-finite values");
    std::vector<char> seen(num_classes, 0);
    for (int l : labels) {
        if (l < 0 || l >= num_classes)
            throw ConfigError("label " + std::to_string(l) + " outside [0, " +
                              std::to_string(num_classes) + ")");
        seen[l] = 1;
    }
    for (int k = 0; k < num_classes; ++k) {
        if (!seen[k])
            throw ConfigError("dataset has no samples of class " + std::to_string(k));
    }
}

Dataset make_blobs(int num_classes, int per_class, int input_dim, double spread,
                   std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (per_class < 1) throw ConfigError("per_class must be >= 1");
    if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
    if (!(spread > 0.0)) throw ConfigError("spread must be > 0");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    const double min_dist = 4.0 * spread;

    DenseMatrix means(num_classes, input_dim);
    std::vector<double> cand(input_dim);
    int placed = 0, attempts = 0;
    while (placed < num_classes) {
        if (attempts >= kMaxPlacementAttempts)
            throw PlacementFailureError(
                "placed " + std::to_string(placed) + " of " +
                std::to_string(num_classes) + " class means at separation " +
                std::to_string(min_dist) + " within " +
                std::to_string(kMaxPlacementAttempts) + " attempts");
        ++attempts;
        for (int d = 0; d < input_dim; ++d) cand[d] = uni(rng);
        bool ok = true;
        for (int k = 0; k < placed && ok; ++k) {
            double sq = 0.0;
            for (int d = 0; d < input_dim; ++d) {
                const double diff = cand[d] - means(k, d);
                sq += diff * diff;
            }
            ok = sq >= min_dist * min_dist;
        }
        if (ok) {
            std::copy(cand.begin(), cand.end(), means.row(placed));
            ++placed;
        }
    }

    std::normal_distribution<double> gauss(0.0, 1.0);
    Dataset ds;
    ds.num_classes = num_classes;
    ds.class_means = means;
    ds.inputs = DenseMatrix(static_cast<std::size_t>(num_classes) * per_class, input_dim);
    ds.labels.resize(ds.inputs.rows());
    std::size_t row = 0;
    for (int k = 0; k < num_classes; ++k) {
        for (int i = 0; i < per_class; ++i, ++row) {
            for (int d = 0; d < input_dim; ++d)
                ds.inputs(row, d) = means(k, d) + spread * gauss(rng);
            ds.labels[row] = k;
        }
    }
    return ds;
}

Dataset read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset: " + path);
    Dataset ds;
    std::vector<double> values;
    std::size_t width = 0, rows = 0, lineno = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::string where = path + ":" + std::to_string(lineno);
        const auto fields = split_csv(line);
        if (fields.size() < 2) throw IoError(where + ": expected label,x1,...");
        if (width == 0)
            width = fields.size() - 1;
        else if (fields.size() - 1 != width)
            throw IoError(where + ": inconsistent column count");
        const long label = parse_long(fields[0], where);
        if (label < 0) throw IoError(where + ": negative label");
        ds.labels.push_back(static_cast<int>(label));
        for (std::size_t f = 1; f < fields.size(); ++f)
            values.push_back(parse_double(fields[f], where));
        ++rows;
    }
    if (rows == 0) throw IoError("dataset has no rows: " + path);
    ds.inputs = DenseMatrix(rows, width);
    std::copy(values.begin(), values.end(), ds.inputs.data());
    ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    return ds;
}

void write_dataset_csv(const std::string& path, const Dataset& data,
                       const std::string& metadata) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write dataset: " + path);
    if (!metadata.empty()) out << "# " << metadata << "\n";
    char buf[40];
    for (std::size_t r = 0; r < data.inputs.rows(); ++r) {
        out << data.labels[r];
        for (std::size_t c = 0; c < data.inputs.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", data.inputs(r, c));
            out << ',' << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning_rate must be >= 0");
    if (!(lr_decay_factor >= 0.0 && lr_decay_factor <= 1.0))
        throw ConfigError("lr_decay_factor must be in [0, 1]");
    if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw ConfigError("momentum must be in [0, 1)");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
}

CentroidSet initial_centroids(const MlpModel& model, const Dataset& data,
                              CentroidMode mode, double epsilon) {
    data.validate();
    EmbeddingBatch all{mlp_forward(model, data.inputs), data.labels, data.num_classes};
    CentroidSet cents = batch_centroids(all, epsilon);
    cents.mode = mode;
    if (mode == CentroidMode::Parametric) renormalize_rows(cents.centroids);
    return cents;
}

std::vector<EpochStats> train_coco(MlpModel& model, CentroidSet& cents,
                                   const Dataset& data, const TrainConfig& config) {
    config.validate();
    data.validate();
    model.validate();
    if (data.dim() != model.input_dim())
        throw DimMismatchError("dataset dim " + std::to_string(data.dim()) +
                               " does not match model input dim " +
                               std::to_string(model.input_dim()));
    if (data.num_classes < 2) throw ConfigError("training needs at least 2 classes");
    const int k = data.num_classes;
    const std::size_t d = model.output_dim();

    if (cents.centroids.empty()) {
        cents = initial_centroids(model, data, cents.mode, config.epsilon);
    } else if (cents.num_classes() != static_cast<std::size_t>(k) || cents.dim() != d) {
        throw DimMismatchError("centroid set is " + std::to_string(cents.num_classes()) +
                               "x" + std::to_string(cents.dim()) + ", expected " +
                               std::to_string(k) + "x" + std::to_string(d));
    }

    std::mt19937_64 rng(config.seed);
    OptimizerState opt(config);
    std::vector<EpochStats> stats;
    DenseMatrix batch_inputs;
    std::vector<int> batch_labels;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = epoch_lr(config, epoch);
        const auto batches =
            cents.mode == CentroidMode::BatchComputed
                ? balanced_batches(data.labels, k, config.batch_size, rng)
                : shuffled_batches(data.size(), config.batch_size, rng);
        double loss_sum = 0.0;
        std::size_t seen = 0, correct = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            gather(data, batches[b], batch_inputs, batch_labels);
            MlpCache cache;
            const DenseMatrix& emb = mlp_forward_cached(model, batch_inputs, cache);
            if (!emb.all_finite())
                throw NonFiniteLossError("non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(b));
            EmbeddingBatch eb{emb, batch_labels, k};
            const CentroidSet batch_cents = cents.mode == CentroidMode::BatchComputed
                                                ? batch_centroids(eb, config.epsilon)
                                                : cents;
            const LossResult res =
                coco_backward(eb, batch_cents, config.temperature, true);
            if (!std::isfinite(res.loss))
                throw NonFiniteLossError("non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(b));
            const std::size_t m = eb.size();
            loss_sum += res.loss * static_cast<double>(m);
            seen += m;
            for (std::size_t i = 0; i < m; ++i) {
                if (argmax_row(res.logits.row(i), res.logits.cols()) ==
                    static_cast<std::size_t>(batch_labels[i]))
                    ++correct;
            }

            const MlpGrads grads = mlp_backward(model, batch_inputs, cache,
                                                res.grad_features);
            auto slots = model_slots(model, grads);
            if (cents.mode == CentroidMode::Parametric)
                slots.push_back({cents.centroids.data(), res.grad_centroids.data(),
                                 cents.centroids.size(), false});
            opt.step(slots, lr);
            if (cents.mode == CentroidMode::Parametric)
                renormalize_rows(cents.centroids);
        }
        stats.push_back({loss_sum / static_cast<double>(seen),
                         static_cast<double>(correct) / static_cast<double>(seen)});
    }
    // Leave the returned set in sync with the final model in batch mode, where
    // the per-batch averages never touched it.
    if (cents.mode == CentroidMode::BatchComputed && config.epochs > 0)
        cents = initial_centroids(model, data, cents.mode, config.epsilon);
    return stats;
}

std::vector<EpochStats> train_softmax_baseline(MlpModel& model, DenseMatrix& head,
                                               const Dataset& data,
                                               const TrainConfig& config) {
    config.validate();
    data.validate();
    model.validate();
    if (data.dim() != model.input_dim())
        throw DimMismatchError("dataset dim does not match model input dim");
    if (data.num_classes < 2) throw ConfigError("training needs at least 2 classes");
    const int k = data.num_classes;
    const std::size_t d = model.output_dim();

    if (head.empty()) {
        head = DenseMatrix(k, d);
        std::mt19937_64 init_rng(config.seed ^ kHeadInitStream);
        std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(d)));
        for (std::size_t i = 0; i < head.size(); ++i) head.data()[i] = dist(init_rng);
    } else if (head.rows() != static_cast<std::size_t>(k) || head.cols() != d) {
        throw DimMismatchError("classifier head shape mismatch");
    }

    std::mt19937_64 rng(config.seed);
    OptimizerState opt(config);
    std::vector<EpochStats> stats;
    DenseMatrix batch_inputs;
    std::vector<int> batch_labels;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = epoch_lr(config, epoch);
        const auto batches = shuffled_batches(data.size(), config.batch_size, rng);
        double loss_sum = 0.0;
        std::size_t seen = 0, correct = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            gather(data, batches[b], batch_inputs, batch_labels);
            MlpCache cache;
            const DenseMatrix& emb = mlp_forward_cached(model, batch_inputs, cache);
            const std::size_t m = emb.rows();
            DenseMatrix logits(m, k);
            kernels::matmul_nt(emb.data(), head.data(), logits.data(), m, k, d);
            SoftmaxCeResult res;
            try {
                res = softmax_ce_baseline(logits, batch_labels);
            } catch (const NonFiniteLossError&) {
                throw NonFiniteLossError("non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(b));
            }
            loss_sum += res.loss * static_cast<double>(m);
            seen += m;
            for (std::size_t i = 0; i < m; ++i) {
                if (argmax_row(logits.row(i), logits.cols()) ==
                    static_cast<std::size_t>(batch_labels[i]))
                    ++correct;
            }

            DenseMatrix head_grad(k, d);
            kernels::grad_weights(res.grad_logits.data(), emb.data(), head_grad.data(),
                                  m, d, k);
            DenseMatrix emb_grad(m, d);
            kernels::matmul_nn(res.grad_logits.data(), head.data(), emb_grad.data(),
                               m, k, d);
            const MlpGrads grads = mlp_backward(model, batch_inputs, cache, emb_grad);
            auto slots = model_slots(model, grads);
            slots.push_back({head.data(), head_grad.data(), head.size(), true});
            opt.step(slots, lr);
        }
        stats.push_back({loss_sum / static_cast<double>(seen),
                         static_cast<double>(correct) / static_cast<double>(seen)});
    }
    return stats;
}

std::vector<double> flatten_params(const MlpModel& model, const CentroidSet& cents) {
    std::vector<double> flat;
    flat.reserve(model.num_params() + cents.centroids.size());
    for (const auto& layer : model.layers) {
        flat.insert(flat.end(), layer.weights.storage().begin(),
                    layer.weights.storage().end());
        flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
    }
    if (cents.mode == CentroidMode::Parametric)
        flat.insert(flat.end(), cents.centroids.storage().begin(),
                    cents.centroids.storage().end());
    return flat;
}

void unflatten_params(const std::vector<double>& flat, MlpModel& model,
                      CentroidSet& cents) {
    std::size_t expected = model.num_params();
    if (cents.mode == CentroidMode::Parametric) expected += cents.centroids.size();
    if (flat.size() != expected)
        throw LengthMismatchError("flat parameter vector has " +
                                  std::to_string(flat.size()) + " entries, expected " +
                                  std::to_string(expected));
    auto it = flat.begin();
    for (auto& layer : model.layers) {
        std::copy(it, it + layer.weights.size(), layer.weights.data());
        it += layer.weights.size();
        std::copy(it, it + layer.bias.size(), layer.bias.begin());
        it += layer.bias.size();
    }
    if (cents.mode == CentroidMode::Parametric)
        std::copy(it, flat.end(), cents.centroids.data());
}

std::string describe_param(const MlpModel& model, const CentroidSet& cents,
                           std::size_t flat_index) {
    std::size_t i = flat_index;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        if (i < layer.weights.size())
            return "layer " + std::to_string(l) + " weights[" +
                   std::to_string(i / layer.weights.cols()) + "," +
                   std::to_string(i % layer.weights.cols()) + "]";
        i -= layer.weights.size();
        if (i < layer.bias.size())
            return "layer " + std::to_string(l) + " bias[" + std::to_string(i) + "]";
        i -= layer.bias.size();
    }
    if (cents.mode == CentroidMode::Parametric && i < cents.centroids.size())
        return "centroids[" + std::to_string(i / cents.dim()) + "," +
               std::to_string(i % cents.dim()) + "]";
    return "param[" + std::to_string(flat_index) + "]";
}

namespace {

// BatchComputed centroids are evaluated from the unperturbed model and then
// frozen; the loss treats centroids as constants within a step, so the check
// must too.
CentroidSet frozen_centroids(const MlpModel& model, const CentroidSet& cents,
                             const Dataset& batch) {
    if (cents.mode != CentroidMode::BatchComputed) return cents;
    EmbeddingBatch eb{mlp_forward(model, batch.inputs), batch.labels,
                      batch.num_classes};
    CentroidSet frozen = batch_centroids(eb);
    frozen.mode = CentroidMode::BatchComputed;
    return frozen;
}

}  // namespace

std::vector<double> analytic_param_grads(const MlpModel& model,
                                         const CentroidSet& cents,
                                         const Dataset& batch, double temperature) {
    batch.validate();
    const CentroidSet eval = frozen_centroids(model, cents, batch);
    MlpCache cache;
    const DenseMatrix& emb = mlp_forward_cached(model, batch.inputs, cache);
    EmbeddingBatch eb{emb, batch.labels, batch.num_classes};
    const LossResult res = coco_backward(eb, eval, temperature, false);
    const MlpGrads grads = mlp_backward(model, batch.inputs, cache, res.grad_features);

    std::vector<double> flat;
    flat.reserve(model.num_params() + res.grad_centroids.size());
    for (std::size_t l = 0; l < grads.weights.size(); ++l) {
        flat.insert(flat.end(), grads.weights[l].storage().begin(),
                    grads.weights[l].storage().end());
        flat.insert(flat.end(), grads.bias[l].begin(), grads.bias[l].end());
    }
    if (cents.mode == CentroidMode::Parametric)
        flat.insert(flat.end(), res.grad_centroids.storage().begin(),
                    res.grad_centroids.storage().end());
    return flat;
}

std::vector<double> fd_param_grads(const MlpModel& model, const CentroidSet& cents,
                                   const Dataset& batch, double temperature,
                                   double step) {
    batch.validate();
    const CentroidSet eval = frozen_centroids(model, cents, batch);
    const std::vector<double> point = flatten_params(model, cents);
    auto loss_at = [&](const std::vector<double>& p) {
        MlpModel probe_model = model;
        CentroidSet probe_cents = eval;
        unflatten_params(p, probe_model, probe_cents);
        EmbeddingBatch eb{mlp_forward(probe_model, batch.inputs), batch.labels,
                          batch.num_classes};
        return coco_forward(eb, probe_cents, temperature, false).loss;
    };
    return finite_difference_grad(loss_at, point, step);
}

GradCheckReport compare_grads(const std::vector<double>& analytic,
                              const std::vector<double>& fd,
                              const MlpModel& model, const CentroidSet& cents,
                              double tol) {
    if (analytic.size() != fd.size())
        throw LengthMismatchError("gradient vectors differ in length");
    GradCheckReport report;
    report.param_count = analytic.size();
    std::size_t worst = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        // The 1e-4 floor turns the check absolute below it: central
        // differences at step 1e-6 carry ~1e-10 roundoff, which would read
        // as a large relative error on near-zero entries.
        const double denom =
            std::max({std::fabs(analytic[i]), std::fabs(fd[i]), 1e-4});
        const double rel = std::fabs(analytic[i] - fd[i]) / denom;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            worst = i;
        }
    }
    report.location = describe_param(model, cents, worst);
    report.passed = report.max_rel_err < tol;
    return report;
}

GradCheckReport grad_check(const MlpModel& model, const CentroidSet& cents,
                           const Dataset& batch, double step, double tol,
                           double temperature) {
    std::size_t params = model.num_params();
    if (cents.mode == CentroidMode::Parametric) params += cents.centroids.size();
    if (params > kGradCheckParamLimit)
        throw ConfigError("model too large for gradient checking (" +
                          std::to_string(params) + " > " +
                          std::to_string(kGradCheckParamLimit) + " parameters)");
    const auto analytic = analytic_param_grads(model, cents, batch, temperature);
    const auto fd = fd_param_grads(model, cents, batch, temperature, step);
    return compare_grads(analytic, fd, model, cents, tol);
}

SeparationStats separation_stats(const DenseMatrix& embeddings,
                                 const std::vector<int>& labels) {
    if (embeddings.rows() != labels.size())
        throw LengthMismatchError("embedding rows and labels differ in count");
    if (embeddings.rows() < 2) throw NoPairsError("need at least two samples");

    DenseMatrix unit(embeddings.rows(), embeddings.cols());
    std::vector<double> norms(embeddings.rows());
    const std::size_t bad =
        kernels::row_l2_normalize(embeddings.data(), unit.data(), norms.data(),
                                  embeddings.rows(), embeddings.cols(), kNormEpsilon);
    if (bad != kernels::npos)
        throw ZeroNormError("embedding row " + std::to_string(bad) + " has zero norm");

    kernels::PairStats ps;
    kernels::pair_cosine_stats(unit.data(), labels.data(), embeddings.rows(),
                               embeddings.cols(), ps);
    if (ps.intra_count == 0) throw NoPairsError("no same-class pairs");
    if (ps.inter_count == 0) throw NoPairsError("no cross-class pairs");

    SeparationStats out;
    out.mean_intra_cosine = ps.intra_sum / static_cast<double>(ps.intra_count);
    out.mean_inter_cosine = ps.inter_sum / static_cast<double>(ps.inter_count);
    out.margin = out.mean_intra_cosine - out.mean_inter_cosine;
    out.intra_pairs = ps.intra_count;
    out.inter_pairs = ps.inter_count;
    std::copy(std::begin(ps.hist_intra), std::end(ps.hist_intra),
              out.histogram_intra.begin());
    std::copy(std::begin(ps.hist_inter), std::end(ps.hist_inter),
              out.histogram_inter.begin());
    return out;
}

}  // namespace coco
