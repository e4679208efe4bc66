#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "coco/matrix.hpp"

namespace coco {

// Label value for probes whose identity is unknown ('?' in files).
inline constexpr int kUnlabeled = -1;

struct EmbeddingRecord {
    std::string instance_id;
    int label = kUnlabeled;
    std::vector<double> features;
};

// One embedding file: every record of one body region for one split.
struct RegionEmbeddings {
    int region_id = 0;
    std::size_t dim = 0;
    std::vector<EmbeddingRecord> records;

    // Consistent dims, unique instance ids.
    void validate() const;
};

// Gallery plus probes of one region. Gallery records must be labeled.
struct RegionEmbeddingStore {
    int region_id = 0;
    RegionEmbeddings gallery;
    RegionEmbeddings probes;

    void validate() const;
};

// probes x gallery score grid with an availability mask; masked entries are
// excluded from every reduction.
struct ScoreMatrix {
    int region_id = 0;
    std::vector<std::string> probe_ids;
    std::vector<std::string> gallery_ids;
    DenseMatrix values;      // probes x gallery
    std::vector<char> mask;  // parallel to values, 1 = available

    std::size_t num_probes() const { return probe_ids.size(); }
    std::size_t num_gallery() const { return gallery_ids.size(); }
    bool available(std::size_t i, std::size_t j) const {
        return mask[i * gallery_ids.size() + j] != 0;
    }
    void set_available(std::size_t i, std::size_t j, bool a) {
        mask[i * gallery_ids.size() + j] = a ? 1 : 0;
    }
};

enum class MissingRegionPolicy { RenormalizeGamma, ZeroScore };

struct RegionFusionParams {
    int region_id = 0;
    double beta0 = 0.0;
    double beta1 = 1.0;
    double gamma = 1.0;
};

struct FusionConfig {
    std::vector<RegionFusionParams> regions;
    MissingRegionPolicy policy = MissingRegionPolicy::RenormalizeGamma;

    // gammas >= 0 and finite, at least one positive, region ids unique.
    void validate() const;
    const RegionFusionParams* find(int region_id) const;
};

// Cosine of every (probe, gallery) pair. Features that cannot be unit
// normalized are masked out (whole row or column) with a warning line on
// `warnings` (stderr when null) instead of failing the run.
ScoreMatrix raw_scores(const RegionEmbeddingStore& store,
                       std::ostream* warnings = nullptr);

// Elementwise logistic 1 / (1 + exp(-(beta0 + beta1 * s))); masks preserved.
ScoreMatrix normalize_scores(const ScoreMatrix& raw, double beta0, double beta1);

// Re-indexes a region matrix onto a shared id universe; pairs the region
// never saw become masked entries.
ScoreMatrix expand_to_universe(const ScoreMatrix& m,
                               const std::vector<std::string>& probe_ids,
                               const std::vector<std::string>& gallery_ids);

// Weighted sum of per-region normalized scores over available regions.
// RenormalizeGamma divides each entry by the sum of the gammas that were
// available for it; ZeroScore lets missing regions contribute zero. Entries
// available in no region are masked; a fully masked probe row is an error.
ScoreMatrix fuse_scores(const std::vector<ScoreMatrix>& per_region,
                        const FusionConfig& config);

// Argmax over each probe row, ties broken by lowest gallery index; returns
// the winning gallery entry's label per probe. best_scores, when non-null,
// receives the winning score.
std::vector<int> predict_identity(const ScoreMatrix& fused,
                                  const std::vector<int>& gallery_labels,
                                  std::vector<double>* best_scores = nullptr);

double accuracy(const std::vector<int>& predictions, const std::vector<int>& truth);

struct LogisticFit {
    double beta0 = 0.0;
    double beta1 = 0.0;
};

// Two-parameter logistic regression (match probability vs. cosine score) by
// full-batch gradient descent on binary cross-entropy. beta1 is clamped to
// >= 0: a higher cosine must never lower the match probability.
LogisticFit fit_logistic(const std::vector<double>& positive_scores,
                         const std::vector<double>& negative_scores,
                         int iterations, double learning_rate);

// Embedding file: header `region <r> dim <D>`, then one record per line
// `instance_id,label,f1,...,fD` with label `?` when unknown.
RegionEmbeddings read_embeddings(const std::string& path);
void write_embeddings(const std::string& path, const RegionEmbeddings& emb);

// Fusion config file: `policy renormalize|zero` line plus one
// `region <r> beta0 <v> beta1 <v> gamma <v>` line per region; '#' comments.
FusionConfig read_fusion_config(const std::string& path);
void write_fusion_config(const std::string& path, const FusionConfig& config);

struct RegionPair {
    RegionEmbeddings gallery;
    RegionEmbeddings probes;
};

struct IdentificationResult {
    std::vector<std::string> probe_ids;
    std::vector<int> predicted;       // identity labels
    std::vector<double> best_scores;  // fused score behind each prediction
    ScoreMatrix fused;
    double accuracy = 0.0;  // over probes that carry truth labels
    std::uint64_t evaluated = 0;
    bool has_accuracy = false;
};

// Full pipeline: per-region cosine scores, logistic normalization (skipped
// when skip_normalization), expansion onto the union id universe, weighted
// fusion, argmax prediction, accuracy over labeled probes.
IdentificationResult run_identification(const std::vector<RegionPair>& regions,
                                        const FusionConfig& config,
                                        bool skip_normalization = false,
                                        std::ostream* warnings = nullptr);

}  // namespace coco
