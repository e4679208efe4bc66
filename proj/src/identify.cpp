#include "coco/identify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "coco/errors.hpp"
#include "coco/kernels.hpp"
#include "coco/numerics.hpp"

namespace coco {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
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

// Unit-normalizes each record's features into `unit` rows; zero-norm records
// are zeroed, flagged 0 in `ok`, and reported on `warn`.
void normalize_records(const std::vector<EmbeddingRecord>& records,
                       std::size_t dim, int region_id, const char* role,
                       DenseMatrix& unit, std::vector<char>& ok,
                       std::ostream& warn) {
    unit = DenseMatrix(records.size(), dim);
    ok.assign(records.size(), 1);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const double n = norm({records[i].features.data(), dim});
        if (n <= kNormEpsilon || !std::isfinite(n)) {
            ok[i] = 0;
            warn << "warning: region " << region_id << " " << role << " '"
                 << records[i].instance_id
                 << "' has a zero-norm feature; its scores are masked\n";
            continue;
        }
        for (std::size_t c = 0; c < dim; ++c)
            unit(i, c) = records[i].features[c] / n;
    }
}

}  // namespace

void RegionEmbeddings::validate() const {
    if (region_id < 1) throw ConfigError("region id must be >= 1");
    if (dim < 1) throw ConfigError("embedding dim must be >= 1");
    std::unordered_set<std::string> seen;
    for (const auto& rec : records) {
        if (rec.instance_id.empty()) throw ConfigError("empty instance id");
        if (rec.features.size() != dim)
            throw DimMismatchError("instance '" + rec.instance_id + "' has " +
                                   std::to_string(rec.features.size()) +
                                   " features, expected " + std::to_string(dim));
        if (!seen.insert(rec.instance_id).second)
            throw ConfigError("duplicate instance id '" + rec.instance_id + "'");
    }
}

void RegionEmbeddingStore::validate() const {
    gallery.validate();
    probes.validate();
    if (gallery.region_id != region_id || probes.region_id != region_id)
        throw UniverseMismatchError(
            "gallery is region " + std::to_string(gallery.region_id) +
            ", probes are region " + std::to_string(probes.region_id) +
            ", store expects region " + std::to_string(region_id));
    if (gallery.dim != probes.dim)
        throw DimMismatchError("gallery dim " + std::to_string(gallery.dim) +
                               " != probe dim " + std::to_string(probes.dim));
    if (gallery.records.empty()) throw ConfigError("gallery is empty");
    if (probes.records.empty()) throw ConfigError("probe set is empty");
    for (const auto& rec : gallery.records) {
        if (rec.label < 0)
            throw ConfigError("gallery instance '" + rec.instance_id +
                              "' has no identity label");
    }
}

void FusionConfig::validate() const {
    if (regions.empty()) throw ConfigError("fusion config lists no regions");
    bool any_positive = false;
    double total = 0.0;
    std::unordered_set<int> ids;
    for (const auto& r : regions) {
        if (r.region_id < 1) throw ConfigError("region id must be >= 1");
        if (!ids.insert(r.region_id).second)
            throw ConfigError("duplicate fusion parameters for region " +
                              std::to_string(r.region_id));
        if (!(r.gamma >= 0.0) || !std::isfinite(r.gamma))
            throw ConfigError("gamma for region " + std::to_string(r.region_id) +
                              " must be finite and >= 0");
        if (!std::isfinite(r.beta0) || !std::isfinite(r.beta1))
            throw ConfigError("beta parameters must be finite");
        any_positive = any_positive || r.gamma > 0.0;
        total += r.gamma;
    }
    if (!any_positive) throw ConfigError("at least one gamma must be > 0");
    if (!std::isfinite(total)) throw ConfigError("gamma sum must be finite");
}

const RegionFusionParams* FusionConfig::find(int region_id) const {
    for (const auto& r : regions) {
        if (r.region_id == region_id) return &r;
    }
    return nullptr;
}

ScoreMatrix raw_scores(const RegionEmbeddingStore& store, std::ostream* warnings) {
    store.validate();
    std::ostream& warn = warnings ? *warnings : std::cerr;
    const std::size_t p = store.probes.records.size();
    const std::size_t g = store.gallery.records.size();
    const std::size_t d = store.gallery.dim;

    DenseMatrix probe_unit, gallery_unit;
    std::vector<char> probe_ok, gallery_ok;
    normalize_records(store.probes.records, d, store.region_id, "probe",
                      probe_unit, probe_ok, warn);
    normalize_records(store.gallery.records, d, store.region_id, "gallery entry",
                      gallery_unit, gallery_ok, warn);

    ScoreMatrix out;
    out.region_id = store.region_id;
    out.probe_ids.reserve(p);
    for (const auto& rec : store.probes.records) out.probe_ids.push_back(rec.instance_id);
    out.gallery_ids.reserve(g);
    for (const auto& rec : store.gallery.records) out.gallery_ids.push_back(rec.instance_id);

    out.values = DenseMatrix(p, g);
    kernels::matmul_nt(probe_unit.data(), gallery_unit.data(), out.values.data(),
                       p, g, d);
    out.mask.assign(p * g, 1);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < g; ++j) {
            if (!probe_ok[i] || !gallery_ok[j]) {
                out.values(i, j) = 0.0;
                out.set_available(i, j, false);
            } else {
                out.values(i, j) = std::clamp(out.values(i, j), -1.0, 1.0);
            }
        }
    }
    return out;
}

ScoreMatrix normalize_scores(const ScoreMatrix& raw, double beta0, double beta1) {
    ScoreMatrix out = raw;
    for (std::size_t i = 0; i < out.num_probes(); ++i) {
        for (std::size_t j = 0; j < out.num_gallery(); ++j) {
            out.values(i, j) = out.available(i, j)
                                   ? sigmoid(beta0 + beta1 * raw.values(i, j))
                                   : 0.0;
        }
    }
    return out;
}

ScoreMatrix expand_to_universe(const ScoreMatrix& m,
                               const std::vector<std::string>& probe_ids,
                               const std::vector<std::string>& gallery_ids) {
    std::unordered_map<std::string, std::size_t> probe_pos, gallery_pos;
    for (std::size_t i = 0; i < m.probe_ids.size(); ++i) probe_pos[m.probe_ids[i]] = i;
    for (std::size_t j = 0; j < m.gallery_ids.size(); ++j)
        gallery_pos[m.gallery_ids[j]] = j;

    ScoreMatrix out;
    out.region_id = m.region_id;
    out.probe_ids = probe_ids;
    out.gallery_ids = gallery_ids;
    out.values = DenseMatrix(probe_ids.size(), gallery_ids.size());
    out.mask.assign(probe_ids.size() * gallery_ids.size(), 0);
    for (std::size_t i = 0; i < probe_ids.size(); ++i) {
        const auto pi = probe_pos.find(probe_ids[i]);
        if (pi == probe_pos.end()) continue;
        for (std::size_t j = 0; j < gallery_ids.size(); ++j) {
            const auto gj = gallery_pos.find(gallery_ids[j]);
            if (gj == gallery_pos.end()) continue;
            if (m.available(pi->second, gj->second)) {
                out.values(i, j) = m.values(pi->second, gj->second);
                out.set_available(i, j, true);
            }
        }
    }
    return out;
}

ScoreMatrix fuse_scores(const std::vector<ScoreMatrix>& per_region,
                        const FusionConfig& config) {
    if (per_region.empty()) throw ConfigError("nothing to fuse");
    config.validate();
    const ScoreMatrix& first = per_region.front();
    std::vector<double> gammas;
    for (const auto& m : per_region) {
        if (m.probe_ids != first.probe_ids || m.gallery_ids != first.gallery_ids)
            throw UniverseMismatchError(
                "score matrices are not indexed over the same instance universe");
        const RegionFusionParams* params = config.find(m.region_id);
        if (!params)
            throw ConfigError("no fusion parameters for region " +
                              std::to_string(m.region_id));
        gammas.push_back(params->gamma);
    }

    ScoreMatrix out;
    out.region_id = 0;
    out.probe_ids = first.probe_ids;
    out.gallery_ids = first.gallery_ids;
    out.values = DenseMatrix(first.num_probes(), first.num_gallery());
    out.mask.assign(first.num_probes() * first.num_gallery(), 0);

    for (std::size_t i = 0; i < out.num_probes(); ++i) {
        bool row_has_entry = false;
        for (std::size_t j = 0; j < out.num_gallery(); ++j) {
            double weighted = 0.0, gamma_sum = 0.0;
            bool any = false;
            for (std::size_t r = 0; r < per_region.size(); ++r) {
                if (!per_region[r].available(i, j)) continue;
                any = true;
                weighted += gammas[r] * per_region[r].values(i, j);
                gamma_sum += gammas[r];
            }
            if (!any) continue;
            row_has_entry = true;
            out.set_available(i, j, true);
            if (config.policy == MissingRegionPolicy::RenormalizeGamma)
                out.values(i, j) = gamma_sum > 0.0 ? weighted / gamma_sum : 0.0;
            else
                out.values(i, j) = weighted;
        }
        if (!row_has_entry)
            throw EmptyFusionError("probe '" + out.probe_ids[i] +
                                   "' has no available score in any region");
    }
    return out;
}

std::vector<int> predict_identity(const ScoreMatrix& fused,
                                  const std::vector<int>& gallery_labels,
                                  std::vector<double>* best_scores) {
    if (gallery_labels.size() != fused.num_gallery())
        throw LengthMismatchError("gallery label count " +
                                  std::to_string(gallery_labels.size()) +
                                  " != gallery size " +
                                  std::to_string(fused.num_gallery()));
    std::vector<int> predicted(fused.num_probes());
    if (best_scores) best_scores->assign(fused.num_probes(), 0.0);
    for (std::size_t i = 0; i < fused.num_probes(); ++i) {
        std::size_t best = kernels::npos;
        double best_v = 0.0;
        for (std::size_t j = 0; j < fused.num_gallery(); ++j) {
            if (!fused.available(i, j)) continue;
            if (best == kernels::npos || fused.values(i, j) > best_v) {
                best = j;
                best_v = fused.values(i, j);
            }
        }
        if (best == kernels::npos)
            throw EmptyRowError("probe '" + fused.probe_ids[i] +
                                "' has no available gallery score");
        predicted[i] = gallery_labels[best];
        if (best_scores) (*best_scores)[i] = best_v;
    }
    return predicted;
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& truth) {
    if (predictions.size() != truth.size())
        throw LengthMismatchError("prediction count " +
                                  std::to_string(predictions.size()) +
                                  " != truth count " + std::to_string(truth.size()));
    if (predictions.empty()) throw LengthMismatchError("nothing to score");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == truth[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

LogisticFit fit_logistic(const std::vector<double>& positive_scores,
                         const std::vector<double>& negative_scores,
                         int iterations, double learning_rate) {
    if (positive_scores.empty()) throw DegenerateFitError("no positive scores");
    if (negative_scores.empty()) throw DegenerateFitError("no negative scores");
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    for (double s : positive_scores) {
        if (!(s >= -1.0 && s <= 1.0))
            throw ConfigError("positive score " + fmt17(s) + " outside [-1, 1]");
    }
    for (double s : negative_scores) {
        if (!(s >= -1.0 && s <= 1.0))
            throw ConfigError("negative score " + fmt17(s) + " outside [-1, 1]");
    }
    {
        std::vector<double> pos = positive_scores, neg = negative_scores;
        std::sort(pos.begin(), pos.end());
        std::sort(neg.begin(), neg.end());
        if (pos == neg)
            throw DegenerateFitError(
                "positive and negative scores are identical multisets");
    }

    const double n =
        static_cast<double>(positive_scores.size() + negative_scores.size());
    double b0 = 0.0, b1 = 0.0;
    for (int it = 0; it < iterations; ++it) {
        double g0 = 0.0, g1 = 0.0;
        for (double s : positive_scores) {
            const double r = sigmoid(b0 + b1 * s) - 1.0;
            g0 += r;
            g1 += r * s;
        }
        for (double s : negative_scores) {
            const double r = sigmoid(b0 + b1 * s);
            g0 += r;
            g1 += r * s;
        }
        b0 -= learning_rate * g0 / n;
        b1 -= learning_rate * g1 / n;
        if (b1 < 0.0) b1 = 0.0;
    }
    return {b0, b1};
}

RegionEmbeddings read_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open embedding file: " + path);
    RegionEmbeddings emb;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::string where = path + ":" + std::to_string(lineno);
        if (!have_header) {
            std::istringstream hs(line);
            std::string kw_region, kw_dim;
            long r = 0, d = 0;
            if (!(hs >> kw_region >> r >> kw_dim >> d) || kw_region != "region" ||
                kw_dim != "dim" || r < 1 || d < 1)
                throw IoError(where + ": expected header 'region <r> dim <D>'");
            std::string extra;
            if (hs >> extra) throw IoError(where + ": trailing tokens in header");
            emb.region_id = static_cast<int>(r);
            emb.dim = static_cast<std::size_t>(d);
            have_header = true;
            continue;
        }
        const auto fields = split_csv(line);
        if (fields.size() != emb.dim + 2)
            throw IoError(where + ": expected instance_id,label," +
                          std::to_string(emb.dim) + " features");
        EmbeddingRecord rec;
        rec.instance_id = fields[0];
        if (rec.instance_id.empty()) throw IoError(where + ": empty instance id");
        if (fields[1] == "?") {
            rec.label = kUnlabeled;
        } else {
            const char* s = fields[1].c_str();
            char* end = nullptr;
            const long v = std::strtol(s, &end, 10);
            if (end == s || *end != '\0' || v < 0)
                throw IoError(where + ": bad label '" + fields[1] + "'");
            rec.label = static_cast<int>(v);
        }
        rec.features.reserve(emb.dim);
        for (std::size_t f = 2; f < fields.size(); ++f) {
            const char* s = fields[f].c_str();
            char* end = nullptr;
            const double v = std::strtod(s, &end);
            if (end == s || *end != '\0')
                throw IoError(where + ": bad feature '" + fields[f] + "'");
            rec.features.push_back(v);
        }
        emb.records.push_back(std::move(rec));
    }
    if (!have_header) throw IoError("missing header line: " + path);
    if (emb.records.empty()) throw IoError("embedding file has no records: " + path);
    emb.validate();
    return emb;
}

void write_embeddings(const std::string& path, const RegionEmbeddings& emb) {
    emb.validate();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write embedding file: " + path);
    out << "region " << emb.region_id << " dim " << emb.dim << "\n";
    for (const auto& rec : emb.records) {
        out << rec.instance_id << ',';
        if (rec.label < 0)
            out << '?';
        else
            out << rec.label;
        for (double f : rec.features) out << ',' << fmt17(f);
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

FusionConfig read_fusion_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open fusion config: " + path);
    FusionConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string head;
        if (!(ls >> head)) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        if (head == "policy") {
            std::string value;
            if (!(ls >> value)) throw ConfigError(where + ": policy needs a value");
            if (value == "renormalize")
                cfg.policy = MissingRegionPolicy::RenormalizeGamma;
            else if (value == "zero")
                cfg.policy = MissingRegionPolicy::ZeroScore;
            else
                throw ConfigError(where + ": unknown policy '" + value + "'");
        } else if (head == "region") {
            RegionFusionParams params;
            std::string kw0, kw1, kwg;
            if (!(ls >> params.region_id >> kw0 >> params.beta0 >> kw1 >>
                  params.beta1 >> kwg >> params.gamma) ||
                kw0 != "beta0" || kw1 != "beta1" || kwg != "gamma")
                throw ConfigError(
                    where + ": expected 'region <r> beta0 <v> beta1 <v> gamma <v>'");
            cfg.regions.push_back(params);
        } else {
            throw ConfigError(where + ": unknown directive '" + head + "'");
        }
        std::string extra;
        if (ls >> extra) throw ConfigError(where + ": trailing tokens");
    }
    cfg.validate();
    return cfg;
}

void write_fusion_config(const std::string& path, const FusionConfig& config) {
    config.validate();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write fusion config: " + path);
    out << "policy "
        << (config.policy == MissingRegionPolicy::RenormalizeGamma ? "renormalize"
                                                                   : "zero")
        << "\n";
    for (const auto& r : config.regions) {
        out << "region " << r.region_id << " beta0 " << fmt17(r.beta0) << " beta1 "
            << fmt17(r.beta1) << " gamma " << fmt17(r.gamma) << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

IdentificationResult run_identification(const std::vector<RegionPair>& regions,
                                        const FusionConfig& config,
                                        bool skip_normalization,
                                        std::ostream* warnings) {
    if (regions.empty()) throw ConfigError("need at least one region");
    config.validate();

    std::vector<std::string> probe_ids, gallery_ids;
    std::vector<int> gallery_labels;
    std::unordered_map<std::string, std::size_t> probe_pos, gallery_pos;
    std::unordered_map<std::string, int> truth;
    std::unordered_set<int> region_ids;

    for (const auto& pair : regions) {
        if (pair.gallery.region_id != pair.probes.region_id)
            throw UniverseMismatchError(
                "gallery file is region " + std::to_string(pair.gallery.region_id) +
                " but probe file is region " + std::to_string(pair.probes.region_id));
        RegionEmbeddingStore store{pair.gallery.region_id, pair.gallery, pair.probes};
        store.validate();
        if (!region_ids.insert(pair.gallery.region_id).second)
            throw ConfigError("region " + std::to_string(pair.gallery.region_id) +
                              " appears twice");
        for (const auto& rec : pair.gallery.records) {
            const auto it = gallery_pos.find(rec.instance_id);
            if (it == gallery_pos.end()) {
                gallery_pos[rec.instance_id] = gallery_ids.size();
                gallery_ids.push_back(rec.instance_id);
                gallery_labels.push_back(rec.label);
            } else if (gallery_labels[it->second] != rec.label) {
                throw UniverseMismatchError(
                    "gallery instance '" + rec.instance_id + "' is labeled " +
                    std::to_string(gallery_labels[it->second]) + " in one region and " +
                    std::to_string(rec.label) + " in another");
            }
        }
        for (const auto& rec : pair.probes.records) {
            if (probe_pos.find(rec.instance_id) == probe_pos.end()) {
                probe_pos[rec.instance_id] = probe_ids.size();
                probe_ids.push_back(rec.instance_id);
            }
            if (rec.label >= 0) {
                const auto it = truth.find(rec.instance_id);
                if (it != truth.end() && it->second != rec.label)
                    throw UniverseMismatchError(
                        "probe '" + rec.instance_id + "' carries truth label " +
                        std::to_string(it->second) + " in one region and " +
                        std::to_string(rec.label) + " in another");
                truth[rec.instance_id] = rec.label;
            }
        }
    }

    std::vector<ScoreMatrix> expanded;
    expanded.reserve(regions.size());
    for (const auto& pair : regions) {
        RegionEmbeddingStore store{pair.gallery.region_id, pair.gallery, pair.probes};
        const ScoreMatrix raw = raw_scores(store, warnings);
        const RegionFusionParams* params = config.find(store.region_id);
        if (!params)
            throw ConfigError("no fusion parameters for region " +
                              std::to_string(store.region_id));
        const ScoreMatrix scored =
            skip_normalization ? raw
                               : normalize_scores(raw, params->beta0, params->beta1);
        expanded.push_back(expand_to_universe(scored, probe_ids, gallery_ids));
    }

    IdentificationResult result;
    result.fused = fuse_scores(expanded, config);
    result.probe_ids = probe_ids;
    result.predicted =
        predict_identity(result.fused, gallery_labels, &result.best_scores);

    std::size_t correct = 0;
    for (std::size_t i = 0; i < probe_ids.size(); ++i) {
        const auto it = truth.find(probe_ids[i]);
        if (it == truth.end()) continue;
        ++result.evaluated;
        if (result.predicted[i] == it->second) ++correct;
    }
    result.has_accuracy = result.evaluated > 0;
    result.accuracy = result.has_accuracy
                          ? static_cast<double>(correct) /
                                static_cast<double>(result.evaluated)
                          : 0.0;
    return result;
}

}  // namespace coco
