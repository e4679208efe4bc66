#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coco/config.hpp"
#include "coco/errors.hpp"
#include "coco/identify.hpp"
#include "coco/mlp.hpp"
#include "coco/trainer.hpp"

namespace {

using namespace coco;

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Exit codes are part of the command contract.
int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const PlacementFailureError*>(&e)) return 2;
    if (dynamic_cast<const IoError*>(&e)) return 3;
    if (dynamic_cast<const NonFiniteLossError*>(&e)) return 4;
    if (dynamic_cast<const DimMismatchError*>(&e)) return 5;
    if (dynamic_cast<const UniverseMismatchError*>(&e)) return 6;
    if (dynamic_cast<const NoPairsError*>(&e)) return 7;
    if (dynamic_cast<const DegenerateFitError*>(&e)) return 8;
    return 1;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write: " + path);
    return out;
}

int run_gen_data(const ExperimentConfig& cfg, std::string out) {
    if (out.empty()) out = "dataset.csv";
    const Dataset ds = make_blobs(cfg.num_classes, cfg.per_class, cfg.input_dim,
                                  cfg.spread, cfg.train.seed);
    std::ostringstream meta;
    meta << "num_classes=" << cfg.num_classes << " per_class=" << cfg.per_class
         << " input_dim=" << cfg.input_dim << " spread=" << fmt17(cfg.spread)
         << " seed=" << cfg.train.seed;
    write_dataset_csv(out, ds, meta.str());
    std::cout << "wrote " << ds.size() << " rows (" << cfg.num_classes
              << " classes) to " << out << "\n";
    return 0;
}

int run_train(const ExperimentConfig& cfg, const std::string& data_path,
              std::string out, std::string stats_path) {
    if (out.empty()) out = "checkpoint.bin";
    if (stats_path.empty()) stats_path = out + ".stats.csv";
    Dataset ds = read_dataset_csv(data_path);
    ds.validate();

    auto dims = cfg.layer_dims();
    dims.front() = ds.dim();  // model input width follows the data
    MlpModel model = make_mlp(dims, cfg.activation, cfg.train.seed);

    std::vector<EpochStats> stats;
    CentroidSet cents;
    if (cfg.loss == "coco") {
        cents.mode = cfg.train.centroid_mode;
        stats = train_coco(model, cents, ds, cfg.train);
    } else {
        DenseMatrix head;
        stats = train_softmax_baseline(model, head, ds, cfg.train);
        cents.centroids = head;
        cents.mode = CentroidMode::Parametric;
    }

    save_checkpoint(out, model, cents);
    {
        std::ofstream sf = open_output(stats_path);
        sf << "epoch,loss,accuracy\n";
        for (std::size_t e = 0; e < stats.size(); ++e)
            sf << e << ',' << fmt17(stats[e].loss) << ','
               << fmt17(stats[e].train_accuracy) << "\n";
        if (!sf) throw IoError("write failed: " + stats_path);
    }
    if (stats.empty()) {
        std::cout << "trained " << cfg.loss << " for 0 epochs\n";
    } else {
        std::cout << "trained " << cfg.loss << " for " << stats.size()
                  << " epochs: final loss " << fmt17(stats.back().loss)
                  << ", accuracy " << fmt17(stats.back().train_accuracy) << "\n";
    }
    std::cout << "wrote " << out << " and " << stats_path << "\n";
    return 0;
}

int run_embed(const std::string& ckpt_path, const std::string& data_path,
              int region, std::string out) {
    if (out.empty()) out = "embeddings.txt";
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const Dataset ds = read_dataset_csv(data_path);
    const DenseMatrix emb = mlp_forward(ck.model, ds.inputs);

    RegionEmbeddings file;
    file.region_id = region;
    file.dim = emb.cols();
    file.records.reserve(emb.rows());
    for (std::size_t i = 0; i < emb.rows(); ++i) {
        EmbeddingRecord rec;
        rec.instance_id = std::to_string(i);
        rec.label = ds.labels[i];
        rec.features.assign(emb.row(i), emb.row(i) + emb.cols());
        file.records.push_back(std::move(rec));
    }
    write_embeddings(out, file);
    std::cout << "wrote " << file.records.size() << " embeddings (region " << region
              << ", dim " << file.dim << ") to " << out << "\n";
    return 0;
}

std::vector<RegionPair> load_region_pairs(const std::vector<std::string>& gallery,
                                          const std::vector<std::string>& probes) {
    if (gallery.size() != probes.size())
        throw ConfigError("need one probe file per gallery file (" +
                          std::to_string(gallery.size()) + " vs " +
                          std::to_string(probes.size()) + ")");
    if (gallery.empty()) throw ConfigError("need at least one region file pair");
    std::vector<RegionPair> pairs;
    pairs.reserve(gallery.size());
    for (std::size_t i = 0; i < gallery.size(); ++i)
        pairs.push_back({read_embeddings(gallery[i]), read_embeddings(probes[i])});
    return pairs;
}

FusionConfig default_fusion(const std::vector<RegionPair>& pairs) {
    FusionConfig fc;
    const double gamma = 1.0 / static_cast<double>(pairs.size());
    for (const auto& pair : pairs)
        fc.regions.push_back({pair.gallery.region_id, 0.0, 1.0, gamma});
    return fc;
}

int run_identify(const std::vector<std::string>& gallery,
                 const std::vector<std::string>& probes,
                 const std::string& fusion_path, bool raw,
                 const std::string& out) {
    const auto pairs = load_region_pairs(gallery, probes);
    const FusionConfig fc =
        fusion_path.empty() ? default_fusion(pairs) : read_fusion_config(fusion_path);
    const IdentificationResult result = run_identification(pairs, fc, raw);

    std::ostringstream rows;
    for (std::size_t i = 0; i < result.probe_ids.size(); ++i)
        rows << result.probe_ids[i] << ',' << result.predicted[i] << ','
             << fmt17(result.best_scores[i]) << "\n";
    if (result.has_accuracy) rows << "accuracy," << fmt17(result.accuracy) << "\n";

    if (out.empty()) {
        std::cout << rows.str();
    } else {
        std::ofstream of = open_output(out);
        of << rows.str();
        if (!of) throw IoError("write failed: " + out);
        std::cout << "wrote " << result.probe_ids.size() << " predictions to " << out
                  << "\n";
        if (result.has_accuracy)
            std::cout << "accuracy," << fmt17(result.accuracy) << "\n";
    }
    return 0;
}

int run_gradcheck(ExperimentConfig cfg, const std::string& mode,
                  std::optional<double> step, std::optional<double> tol) {
    if (!mode.empty()) {
        if (mode == "parametric")
            cfg.train.centroid_mode = CentroidMode::Parametric;
        else if (mode == "batch")
            cfg.train.centroid_mode = CentroidMode::BatchComputed;
        else
            throw ConfigError("centroid-mode must be 'parametric' or 'batch'");
    }
    if (step) cfg.gc_step = *step;
    if (tol) cfg.gc_tol = *tol;
    cfg.validate();

    const int per_class =
        std::max(1, (cfg.gc_batch_size + cfg.num_classes - 1) / cfg.num_classes);
    const Dataset batch = make_blobs(cfg.num_classes, per_class, cfg.input_dim,
                                     cfg.spread, cfg.train.seed);
    const MlpModel model = make_mlp(cfg.layer_dims(), cfg.activation, cfg.train.seed);
    const CentroidSet cents =
        initial_centroids(model, batch, cfg.train.centroid_mode, cfg.train.epsilon);
    const GradCheckReport report = grad_check(model, cents, batch, cfg.gc_step,
                                              cfg.gc_tol, cfg.train.temperature);
    std::cout << "params," << report.param_count << "\n"
              << "max_rel_err," << fmt17(report.max_rel_err) << "\n"
              << "worst," << report.location << "\n"
              << "tol," << fmt17(cfg.gc_tol) << "\n"
              << "result," << (report.passed ? "PASS" : "FAIL") << "\n";
    return report.passed ? 0 : 1;
}

int run_stats(const std::string& emb_path, const std::string& out) {
    const RegionEmbeddings emb = read_embeddings(emb_path);
    DenseMatrix features(emb.records.size(), emb.dim);
    std::vector<int> labels(emb.records.size());
    for (std::size_t i = 0; i < emb.records.size(); ++i) {
        const auto& rec = emb.records[i];
        if (rec.label < 0)
            throw ConfigError("instance '" + rec.instance_id +
                              "' has no label; separation needs labeled embeddings");
        std::copy(rec.features.begin(), rec.features.end(), features.row(i));
        labels[i] = rec.label;
    }
    const SeparationStats s = separation_stats(features, labels);

    std::ostringstream body;
    body << "mean_intra_cosine," << fmt17(s.mean_intra_cosine) << "\n"
         << "mean_inter_cosine," << fmt17(s.mean_inter_cosine) << "\n"
         << "margin," << fmt17(s.margin) << "\n"
         << "intra_pairs," << s.intra_pairs << "\n"
         << "inter_pairs," << s.inter_pairs << "\n"
         << "bin,low,high,intra_count,inter_count\n";
    const double width = 2.0 / kernels::kHistogramBins;
    for (int b = 0; b < kernels::kHistogramBins; ++b)
        body << b << ',' << fmt17(-1.0 + b * width) << ','
             << fmt17(-1.0 + (b + 1) * width) << ',' << s.histogram_intra[b] << ','
             << s.histogram_inter[b] << "\n";

    if (out.empty()) {
        std::cout << body.str();
    } else {
        std::ofstream of = open_output(out);
        of << body.str();
        if (!of) throw IoError("write failed: " + out);
        std::cout << "margin," << fmt17(s.margin) << "\n"
                  << "wrote histogram data to " << out << "\n";
    }
    return 0;
}

// Every ceil(n/cap)-th element, keeping fits tractable on quadratic pair sets
// without losing determinism.
std::vector<double> stride_cap(const std::vector<double>& scores, int cap) {
    if (cap <= 0 || scores.size() <= static_cast<std::size_t>(cap)) return scores;
    const std::size_t stride =
        (scores.size() + static_cast<std::size_t>(cap) - 1) /
        static_cast<std::size_t>(cap);
    std::vector<double> kept;
    kept.reserve(scores.size() / stride + 1);
    for (std::size_t i = 0; i < scores.size(); i += stride) kept.push_back(scores[i]);
    return kept;
}

int run_fit_fusion(const ExperimentConfig& cfg,
                   const std::vector<std::string>& gallery,
                   const std::vector<std::string>& probes,
                   const std::string& policy, const std::vector<double>& gammas,
                   std::string out) {
    if (out.empty()) out = "fusion.txt";
    const auto pairs = load_region_pairs(gallery, probes);
    if (!gammas.empty() && gammas.size() != pairs.size())
        throw ConfigError("got " + std::to_string(gammas.size()) +
                          " gamma values for " + std::to_string(pairs.size()) +
                          " regions");

    FusionConfig fc;
    if (policy == "renormalize")
        fc.policy = MissingRegionPolicy::RenormalizeGamma;
    else if (policy == "zero")
        fc.policy = MissingRegionPolicy::ZeroScore;
    else
        throw ConfigError("policy must be 'renormalize' or 'zero'");

    std::ostringstream report;
    for (std::size_t r = 0; r < pairs.size(); ++r) {
        const auto& pair = pairs[r];
        for (const auto& rec : pair.probes.records) {
            if (rec.label < 0)
                throw ConfigError("validation probe '" + rec.instance_id +
                                  "' has no label");
        }
        RegionEmbeddingStore store{pair.gallery.region_id, pair.gallery, pair.probes};
        const ScoreMatrix raw = raw_scores(store);
        std::vector<double> pos, neg;
        for (std::size_t i = 0; i < raw.num_probes(); ++i) {
            for (std::size_t j = 0; j < raw.num_gallery(); ++j) {
                if (!raw.available(i, j)) continue;
                const bool same =
                    pair.probes.records[i].label == pair.gallery.records[j].label;
                (same ? pos : neg).push_back(raw.values(i, j));
            }
        }
        pos = stride_cap(pos, cfg.fit_max_pairs);
        neg = stride_cap(neg, cfg.fit_max_pairs);
        const LogisticFit fit =
            fit_logistic(pos, neg, cfg.fit_iterations, cfg.fit_learning_rate);
        const double gamma = gammas.empty()
                                 ? 1.0 / static_cast<double>(pairs.size())
                                 : gammas[r];
        fc.regions.push_back({pair.gallery.region_id, fit.beta0, fit.beta1, gamma});
        report << "region " << pair.gallery.region_id << ": beta0="
               << fmt17(fit.beta0) << " beta1=" << fmt17(fit.beta1) << " gamma="
               << fmt17(gamma) << " (" << pos.size() << " positive, " << neg.size()
               << " negative pairs)\n";
    }
    write_fusion_config(out, fc);
    std::cout << report.str() << "wrote " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"congenerous cosine embedding trainer and identification pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_path;
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
    app.add_option("--config", config_path, "experiment config file (key = value)");
    app.add_option("--out", out_path, "primary output path");

    auto* gen = app.add_subcommand("gen-data", "generate a Gaussian blob dataset");
    gen->fallthrough();

    std::string train_data, train_stats, train_loss;
    auto* train = app.add_subcommand("train", "train an embedding model");
    train->fallthrough();
    train->add_option("--data", train_data, "dataset CSV")->required();
    train->add_option("--stats", train_stats, "per-epoch stats CSV path");
    train->add_option("--loss", train_loss, "loss to train: coco | softmax");

    std::string embed_ckpt, embed_data;
    int embed_region = 1;
    auto* embed = app.add_subcommand("embed", "export embeddings for a dataset");
    embed->fallthrough();
    embed->add_option("--checkpoint", embed_ckpt, "trained checkpoint")->required();
    embed->add_option("--data", embed_data, "dataset CSV")->required();
    embed->add_option("--region", embed_region, "region id for the output file");

    std::vector<std::string> id_gallery, id_probes;
    std::string id_fusion;
    bool id_raw = false;
    auto* identify = app.add_subcommand("identify", "predict probe identities");
    identify->fallthrough();
    identify->add_option("--gallery", id_gallery, "gallery embedding files")
        ->required();
    identify->add_option("--probes", id_probes, "probe embedding files")->required();
    identify->add_option("--fusion", id_fusion, "fusion config file");
    identify->add_flag("--raw", id_raw, "skip logistic normalization");

    std::string gc_mode;
    std::optional<double> gc_step, gc_tol;
    auto* gradcheck =
        app.add_subcommand("gradcheck", "verify analytic gradients numerically");
    gradcheck->fallthrough();
    gradcheck->add_option("--centroid-mode", gc_mode, "parametric | batch");
    gradcheck->add_option("--step", gc_step, "finite difference step");
    gradcheck->add_option("--tol", gc_tol, "max relative error to pass");

    std::string stats_emb;
    auto* stats = app.add_subcommand("stats", "pairwise cosine separation stats");
    stats->fallthrough();
    stats->add_option("--embeddings", stats_emb, "labeled embedding file")
        ->required();

    std::vector<std::string> ff_gallery, ff_probes;
    std::vector<double> ff_gammas;
    std::string ff_policy = "renormalize";
    auto* fit_fusion =
        app.add_subcommand("fit-fusion", "fit per-region logistic score maps");
    fit_fusion->fallthrough();
    fit_fusion->add_option("--gallery", ff_gallery, "validation gallery files")
        ->required();
    fit_fusion->add_option("--probes", ff_probes, "validation probe files")
        ->required();
    fit_fusion->add_option("--gamma", ff_gammas, "per-region fusion weights");
    fit_fusion->add_option("--policy", ff_policy,
                           "missing region policy: renormalize | zero");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        ExperimentConfig cfg = config_path.empty()
                                   ? ExperimentConfig{}
                                   : read_experiment_config(config_path);
        if (seed_opt->count() > 0) cfg.train.seed = seed;
        cfg.validate();
        if (!train_loss.empty()) {
            if (train_loss != "coco" && train_loss != "softmax")
                throw ConfigError("loss: unknown value '" + train_loss + "'");
            cfg.loss = train_loss;
        }

        if (gen->parsed()) return run_gen_data(cfg, out_path);
        if (train->parsed()) return run_train(cfg, train_data, out_path, train_stats);
        if (embed->parsed())
            return run_embed(embed_ckpt, embed_data, embed_region, out_path);
        if (identify->parsed())
            return run_identify(id_gallery, id_probes, id_fusion, id_raw, out_path);
        if (gradcheck->parsed()) return run_gradcheck(cfg, gc_mode, gc_step, gc_tol);
        if (stats->parsed()) return run_stats(stats_emb, out_path);
        if (fit_fusion->parsed())
            return run_fit_fusion(cfg, ff_gallery, ff_probes, ff_policy, ff_gammas,
                                  out_path);
        std::cerr << "error: no subcommand\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}
