#define DOCTEST_CONFIG_IMPLEMENT
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "coco/identify.hpp"
#include "coco/mlp.hpp"
#include "coco/trainer.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace coco;
using coco::test::TempDir;

namespace {

std::string g_cli;  // path to the coco executable, first plain argv entry

struct CmdResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Runs the CLI inside `dir` so default output paths stay inside the scratch
// area.
CmdResult run_cli(const TempDir& dir, const std::string& args) {
    const std::string out_path = dir.file("_stdout"), err_path = dir.file("_stderr");
    const std::string cmd = "cd '" + dir.path.string() + "' && '" + g_cli + "' " +
                            args + " > '" + out_path + "' 2> '" + err_path + "'";
    const int status = std::system(cmd.c_str());
    CmdResult res;
    res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    res.out = slurp(out_path);
    res.err = slurp(err_path);
    return res;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

// label,loss,accuracy rows from a stats CSV, header skipped
std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (!fields.empty()) rows.push_back(std::move(fields));
    }
    return rows;
}

// small 3-class setup shared by the pipeline tests
const char* kSmallConfig =
    "num_classes = 3\nper_class = 30\nspread = 0.05\nepochs = 10\n"
    "batch_size = 16\nseed = 5\n";

}  // namespace

TEST_CASE("gen-data writes a deterministic dataset") {
    TempDir dir("cli_gen");
    const CmdResult first = run_cli(dir, "gen-data");
    CHECK(first.code == 0);
    CHECK(first.out.find("wrote 2000 rows (10 classes)") != std::string::npos);

    const CmdResult second = run_cli(dir, "gen-data --out again.csv");
    CHECK(second.code == 0);
    CHECK(slurp(dir.file("dataset.csv")) == slurp(dir.file("again.csv")));

    // the file reloads to exactly the generator's output
    const Dataset loaded = read_dataset_csv(dir.file("dataset.csv"));
    const Dataset direct = make_blobs(10, 200, 2, 0.05, 0);
    CHECK(loaded.inputs == direct.inputs);
    CHECK(loaded.labels == direct.labels);
    CHECK(loaded.num_classes == direct.num_classes);
}

TEST_CASE("gen-data honors the seed override") {
    TempDir dir("cli_gen_seed");
    CHECK(run_cli(dir, "gen-data --seed 5 --out s5.csv").code == 0);
    const Dataset loaded = read_dataset_csv(dir.file("s5.csv"));
    const Dataset direct = make_blobs(10, 200, 2, 0.05, 5);
    CHECK(loaded.inputs == direct.inputs);
}

TEST_CASE("config errors name the offending key and exit 2") {
    TempDir dir("cli_cfg");
    write_file(dir.file("bad.cfg"), "per_class = 0\n");
    const CmdResult res = run_cli(dir, "gen-data --config bad.cfg");
    CHECK(res.code == 2);
    CHECK(res.err.find("per_class") != std::string::npos);

    write_file(dir.file("typo.cfg"), "per_clazz = 10\n");
    const CmdResult typo = run_cli(dir, "gen-data --config typo.cfg");
    CHECK(typo.code == 2);
    CHECK(typo.err.find("per_clazz") != std::string::npos);

    CHECK(run_cli(dir, "gen-data --config nowhere.cfg").code == 3);
}

TEST_CASE("command line parse failures exit 2") {
    TempDir dir("cli_parse");
    CHECK(run_cli(dir, "frobnicate").code == 2);
    CHECK(run_cli(dir, "").code == 2);
    CHECK(run_cli(dir, "train").code == 2);  // missing required --data
    CHECK(run_cli(dir, "--help").code == 0);
}

TEST_CASE("train emits a checkpoint and per-epoch stats") {
    TempDir dir("cli_train");
    write_file(dir.file("exp.cfg"), kSmallConfig);
    REQUIRE(run_cli(dir, "gen-data --config exp.cfg --out data.csv").code == 0);
    const CmdResult res =
        run_cli(dir, "train --config exp.cfg --data data.csv --out model.bin");
    CHECK(res.code == 0);
    CHECK(res.out.find("trained coco for 10 epochs") != std::string::npos);

    const auto rows = read_csv(dir.file("model.bin.stats.csv"));
    REQUIRE(rows.size() == 11);  // header + 10 epochs
    CHECK(rows[0] == std::vector<std::string>{"epoch", "loss", "accuracy"});

    const Checkpoint ck = load_checkpoint(dir.file("model.bin"));
    CHECK(ck.model.layer_dims == std::vector<std::size_t>{2, 32, 8});
    CHECK(ck.centroids.centroids.rows() == 3);
}

TEST_CASE("train with zero learning rate reports a constant loss") {
    TempDir dir("cli_train_lr0");
    write_file(dir.file("exp.cfg"), std::string(kSmallConfig) + "learning_rate = 0\n");
    REQUIRE(run_cli(dir, "gen-data --config exp.cfg --out data.csv").code == 0);
    REQUIRE(run_cli(dir, "train --config exp.cfg --data data.csv --out m.bin").code ==
            0);
    const auto rows = read_csv(dir.file("m.bin.stats.csv"));
    REQUIRE(rows.size() == 11);
    const double first = std::stod(rows[1][1]);
    for (std::size_t r = 2; r < rows.size(); ++r)
        CHECK(std::abs(std::stod(rows[r][1]) - first) <= 1e-12);
}

TEST_CASE("train dispatches to the softmax baseline on request") {
    TempDir dir("cli_train_softmax");
    write_file(dir.file("exp.cfg"), kSmallConfig);
    REQUIRE(run_cli(dir, "gen-data --config exp.cfg --out data.csv").code == 0);
    const CmdResult res = run_cli(
        dir, "train --config exp.cfg --data data.csv --loss softmax --out s.bin");
    CHECK(res.code == 0);
    CHECK(res.out.find("trained softmax") != std::string::npos);
    CHECK(run_cli(dir, "train --config exp.cfg --data data.csv --loss mse").code == 2);
}

TEST_CASE("training failures map to their contract exit codes") {
    TempDir dir("cli_train_fail");
    CHECK(run_cli(dir, "train --data missing.csv").code == 3);

    write_file(dir.file("explode.cfg"),
               std::string(kSmallConfig) +
                   "optimizer = sgd_momentum\nweight_decay = 1e200\n");
    REQUIRE(run_cli(dir, "gen-data --config explode.cfg --out data.csv").code == 0);
    const CmdResult res =
        run_cli(dir, "train --config explode.cfg --data data.csv --out b.bin");
    CHECK(res.code == 4);
    CHECK(res.err.find("non-finite loss") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(dir.file("b.bin")));  // no partial output
}

TEST_CASE("embed exports features that match the checkpoint's forward pass") {
    TempDir dir("cli_embed");
    write_file(dir.file("exp.cfg"), kSmallConfig);
    REQUIRE(run_cli(dir, "gen-data --config exp.cfg --out data.csv").code == 0);
    REQUIRE(run_cli(dir, "train --config exp.cfg --data data.csv --out m.bin").code ==
            0);
    const CmdResult res =
        run_cli(dir, "embed --checkpoint m.bin --data data.csv --region 2");
    CHECK(res.code == 0);

    const RegionEmbeddings emb = read_embeddings(dir.file("embeddings.txt"));
    CHECK(emb.region_id == 2);
    const Checkpoint ck = load_checkpoint(dir.file("m.bin"));
    const Dataset ds = read_dataset_csv(dir.file("data.csv"));
    const DenseMatrix expect = mlp_forward(ck.model, ds.inputs);
    REQUIRE(emb.records.size() == expect.rows());
    for (std::size_t i = 0; i < expect.rows(); ++i) {
        CHECK(emb.records[i].label == ds.labels[i]);
        for (std::size_t j = 0; j < expect.cols(); ++j)
            CHECK(emb.records[i].features[j] == expect(i, j));  // 17-digit round trip
    }
}

TEST_CASE("embed rejects data whose width differs from the checkpoint") {
    TempDir dir("cli_embed_dim");
    write_file(dir.file("exp.cfg"), kSmallConfig);
    write_file(dir.file("wide.cfg"), std::string(kSmallConfig) + "input_dim = 3\n");
    REQUIRE(run_cli(dir, "gen-data --config exp.cfg --out data.csv").code == 0);
    REQUIRE(run_cli(dir, "gen-data --config wide.cfg --out wide.csv").code == 0);
    REQUIRE(run_cli(dir, "train --config exp.cfg --data data.csv --out m.bin").code ==
            0);
    CHECK(run_cli(dir, "embed --checkpoint m.bin --data wide.csv").code == 5);
    CHECK(run_cli(dir, "embed --checkpoint m.bin --data nope.csv").code == 3);
    CHECK(run_cli(dir, "embed --checkpoint data.csv --data data.csv").code == 3);
}

TEST_CASE("gradcheck passes at the documented tolerance and fails at 1e-12") {
    TempDir dir("cli_gradcheck");
    const CmdResult ok = run_cli(dir, "gradcheck");
    CHECK(ok.code == 0);
    CHECK(ok.out.find("result,PASS") != std::string::npos);

    const CmdResult batch = run_cli(dir, "gradcheck --centroid-mode batch");
    CHECK(batch.code == 0);

    const CmdResult strict = run_cli(dir, "gradcheck --tol 1e-12");
    CHECK(strict.code == 1);
    CHECK(strict.out.find("result,FAIL") != std::string::npos);

    CHECK(run_cli(dir, "gradcheck --centroid-mode sideways").code == 2);
}

TEST_CASE("identify on a self-matching gallery reports accuracy 1") {
    TempDir dir("cli_identify");
    write_file(dir.file("exp.cfg"), kSmallConfig);
    REQUIRE(run_cli(dir, "gen-data --config exp.cfg --out data.csv").code == 0);
    REQUIRE(run_cli(dir, "train --config exp.cfg --data data.csv --out m.bin").code ==
            0);
    REQUIRE(run_cli(dir, "embed --checkpoint m.bin --data data.csv --out e.txt").code ==
            0);

    const CmdResult res = run_cli(dir, "identify --gallery e.txt --probes e.txt");
    CHECK(res.code == 0);
    CHECK(res.out.find("accuracy,1\n") != std::string::npos);

    // same command into a file, twice: identical bytes
    REQUIRE(run_cli(dir, "identify --gallery e.txt --probes e.txt --out p1.csv").code ==
            0);
    REQUIRE(run_cli(dir, "identify --gallery e.txt --probes e.txt --out p2.csv").code ==
            0);
    CHECK(slurp(dir.file("p1.csv")) == slurp(dir.file("p2.csv")));
    CHECK_FALSE(slurp(dir.file("p1.csv")).empty());
}

TEST_CASE("single-region predictions agree with and without normalization") {
    TempDir dir("cli_identify_raw");
    write_file(dir.file("exp.cfg"), kSmallConfig);
    REQUIRE(run_cli(dir, "gen-data --config exp.cfg --out data.csv").code == 0);
    REQUIRE(run_cli(dir, "train --config exp.cfg --data data.csv --out m.bin").code ==
            0);
    REQUIRE(run_cli(dir, "embed --checkpoint m.bin --data data.csv --out e.txt").code ==
            0);
    const CmdResult raw = run_cli(dir, "identify --gallery e.txt --probes e.txt --raw");
    const CmdResult cooked = run_cli(dir, "identify --gallery e.txt --probes e.txt");
    REQUIRE(raw.code == 0);
    REQUIRE(cooked.code == 0);

    auto predictions = [](const std::string& text) {
        std::vector<std::string> ids;
        std::stringstream ss(text);
        std::string line;
        while (std::getline(ss, line)) {
            const auto c1 = line.find(',');
            const auto c2 = line.find(',', c1 + 1);
            if (line.rfind("accuracy,", 0) == 0) continue;
            ids.push_back(line.substr(0, c2));  // instance_id,predicted
        }
        return ids;
    };
    CHECK(predictions(raw.out) == predictions(cooked.out));
    CHECK(raw.out != cooked.out);  // the scores themselves differ
}

TEST_CASE("identify flags mismatched region pairings with exit 6") {
    TempDir dir("cli_identify_mismatch");
    write_file(dir.file("exp.cfg"), kSmallConfig);
    REQUIRE(run_cli(dir, "gen-data --config exp.cfg --out data.csv").code == 0);
    REQUIRE(run_cli(dir, "train --config exp.cfg --data data.csv --out m.bin").code ==
            0);
    REQUIRE(run_cli(dir,
                    "embed --checkpoint m.bin --data data.csv --region 1 --out r1.txt")
                .code == 0);
    REQUIRE(run_cli(dir,
                    "embed --checkpoint m.bin --data data.csv --region 2 --out r2.txt")
                .code == 0);
    CHECK(run_cli(dir, "identify --gallery r1.txt --probes r2.txt").code == 6);
    CHECK(run_cli(dir, "identify --gallery r1.txt r2.txt --probes r1.txt").code == 2);
}

TEST_CASE("multi-region identify matches the library pipeline") {
    TempDir dir("cli_identify_multi");
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);

    std::vector<RegionPair> pairs;
    FusionConfig fc;
    std::vector<std::string> gallery_args, probe_args;
    for (int r = 1; r <= 4; ++r) {
        RegionEmbeddings gal, prb;
        gal.region_id = prb.region_id = r;
        gal.dim = prb.dim = 5;
        for (int g = 0; g < 6; ++g) {
            EmbeddingRecord rec{"g" + std::to_string(g), g % 3, {}};
            for (int t = 0; t < 5; ++t) rec.features.push_back(dist(rng) + 1.2);
            gal.records.push_back(rec);
        }
        for (int p = 0; p < 4; ++p) {
            // region 3 misses probe 2 entirely
            if (r == 3 && p == 2) continue;
            EmbeddingRecord rec{"p" + std::to_string(p), p % 3, {}};
            for (int t = 0; t < 5; ++t) rec.features.push_back(dist(rng) + 1.2);
            prb.records.push_back(rec);
        }
        const std::string gpath = dir.file("g" + std::to_string(r) + ".txt");
        const std::string ppath = dir.file("p" + std::to_string(r) + ".txt");
        write_embeddings(gpath, gal);
        write_embeddings(ppath, prb);
        gallery_args.push_back("g" + std::to_string(r) + ".txt");
        probe_args.push_back("p" + std::to_string(r) + ".txt");
        pairs.push_back({gal, prb});
        fc.regions.push_back({r, -0.2 * r, 0.5 + 0.25 * r, 0.1 * r});
    }
    write_fusion_config(dir.file("fusion.txt"), fc);

    std::string args = "identify --gallery";
    for (const auto& g : gallery_args) args += " " + g;
    args += " --probes";
    for (const auto& p : probe_args) args += " " + p;
    args += " --fusion fusion.txt --out pred.csv";
    REQUIRE(run_cli(dir, args).code == 0);

    const IdentificationResult expect = run_identification(pairs, fc);
    const auto rows = read_csv(dir.file("pred.csv"));
    REQUIRE(rows.size() == expect.probe_ids.size() + 1);  // + accuracy line
    for (std::size_t i = 0; i < expect.probe_ids.size(); ++i) {
        CHECK(rows[i][0] == expect.probe_ids[i]);
        CHECK(std::stoi(rows[i][1]) == expect.predicted[i]);
        CHECK(std::stod(rows[i][2]) == expect.best_scores[i]);
    }
    CHECK(rows.back()[0] == "accuracy");
    CHECK(std::stod(rows.back()[1]) == expect.accuracy);
}

TEST_CASE("stats emits means, margin, and complete histograms") {
    TempDir dir("cli_stats");
    write_file(dir.file("exp.cfg"), kSmallConfig);
    REQUIRE(run_cli(dir, "gen-data --config exp.cfg --out data.csv").code == 0);
    REQUIRE(run_cli(dir, "train --config exp.cfg --data data.csv --out m.bin").code ==
            0);
    REQUIRE(run_cli(dir, "embed --checkpoint m.bin --data data.csv --out e.txt").code ==
            0);
    const CmdResult res = run_cli(dir, "stats --embeddings e.txt");
    CHECK(res.code == 0);

    const auto rows = read_csv(dir.file("_stdout"));
    std::uint64_t intra = 0, inter = 0;
    double margin = 0.0, mean_intra = 0.0, mean_inter = 0.0;
    std::uint64_t hist_total = 0;
    for (const auto& row : rows) {
        if (row[0] == "margin") margin = std::stod(row[1]);
        if (row[0] == "mean_intra_cosine") mean_intra = std::stod(row[1]);
        if (row[0] == "mean_inter_cosine") mean_inter = std::stod(row[1]);
        if (row[0] == "intra_pairs") intra = std::stoull(row[1]);
        if (row[0] == "inter_pairs") inter = std::stoull(row[1]);
        if (row.size() == 5 && row[0] != "bin")
            hist_total += std::stoull(row[3]) + std::stoull(row[4]);
    }
    const std::uint64_t n = 90;  // 3 classes x 30
    CHECK(intra + inter == n * (n - 1) / 2);
    CHECK(hist_total == n * (n - 1) / 2);
    CHECK(std::abs(margin - (mean_intra - mean_inter)) <= 1e-12);
    CHECK(margin > 0.0);  // trained embeddings separate
}

TEST_CASE("stats rejects unlabeled or single-class embeddings") {
    TempDir dir("cli_stats_bad");
    RegionEmbeddings unlabeled;
    unlabeled.region_id = 1;
    unlabeled.dim = 2;
    unlabeled.records = {{"a", kUnlabeled, {1.0, 0.0}}, {"b", 0, {0.0, 1.0}}};
    write_embeddings(dir.file("unlabeled.txt"), unlabeled);
    const CmdResult res = run_cli(dir, "stats --embeddings unlabeled.txt");
    CHECK(res.code == 2);
    CHECK(res.err.find("'a'") != std::string::npos);

    RegionEmbeddings single;
    single.region_id = 1;
    single.dim = 2;
    single.records = {{"a", 0, {1.0, 0.0}}, {"b", 0, {0.0, 1.0}}};
    write_embeddings(dir.file("single.txt"), single);
    CHECK(run_cli(dir, "stats --embeddings single.txt").code == 7);
}

TEST_CASE("fit-fusion on separable data produces a sharp logistic") {
    TempDir dir("cli_fit");
    // two tight clusters: same-identity cosine 1, cross-identity cosine 0
    RegionEmbeddings emb;
    emb.region_id = 1;
    emb.dim = 2;
    for (int i = 0; i < 4; ++i)
        emb.records.push_back({"x" + std::to_string(i), i % 2,
                               {i % 2 ? 1.0 : 0.0, i % 2 ? 0.0 : 1.0}});
    write_embeddings(dir.file("emb.txt"), emb);

    const CmdResult res =
        run_cli(dir, "fit-fusion --gallery emb.txt --probes emb.txt --out fit.txt");
    CHECK(res.code == 0);
    const FusionConfig fc = read_fusion_config(dir.file("fit.txt"));
    REQUIRE(fc.regions.size() == 1);
    CHECK(fc.regions[0].gamma == 1.0);  // single region
    const double b0 = fc.regions[0].beta0, b1 = fc.regions[0].beta1;
    CHECK(1.0 / (1.0 + std::exp(-(b0 + b1 * 1.0))) > 0.99);
    CHECK(1.0 / (1.0 + std::exp(-(b0 + b1 * 0.0))) < 0.01);

    // refitting the same inputs reproduces the file byte for byte
    REQUIRE(run_cli(dir, "fit-fusion --gallery emb.txt --probes emb.txt --out f2.txt")
                .code == 0);
    CHECK(slurp(dir.file("fit.txt")) == slurp(dir.file("f2.txt")));

    // the fitted config drives identification end to end
    CHECK(run_cli(dir, "identify --gallery emb.txt --probes emb.txt --fusion fit.txt")
              .out.find("accuracy,1\n") != std::string::npos);
}

TEST_CASE("fit-fusion validates probes, gammas, and separability") {
    TempDir dir("cli_fit_bad");
    RegionEmbeddings emb;
    emb.region_id = 1;
    emb.dim = 2;
    emb.records = {{"a", 0, {1.0, 0.0}}, {"b", kUnlabeled, {0.0, 1.0}}};
    write_embeddings(dir.file("unlabeled.txt"), emb);
    CHECK(run_cli(dir, "fit-fusion --gallery unlabeled.txt --probes unlabeled.txt")
              .code == 2);

    // identical positive and negative score multisets cannot be fit
    RegionEmbeddings degenerate;
    degenerate.region_id = 1;
    degenerate.dim = 2;
    degenerate.records = {{"a", 0, {1.0, 0.0}}, {"b", 1, {1.0, 0.0}}};
    write_embeddings(dir.file("deg.txt"), degenerate);
    const CmdResult res =
        run_cli(dir, "fit-fusion --gallery deg.txt --probes deg.txt");
    CHECK(res.code == 8);

    RegionEmbeddings ok;
    ok.region_id = 1;
    ok.dim = 2;
    ok.records = {{"a", 0, {1.0, 0.0}}, {"b", 1, {0.0, 1.0}}};
    write_embeddings(dir.file("ok.txt"), ok);
    CHECK(run_cli(dir, "fit-fusion --gallery ok.txt --probes ok.txt --gamma 0.5 0.5")
              .code == 2);  // two gammas, one region
    CHECK(run_cli(dir, "fit-fusion --gallery ok.txt --probes ok.txt --policy maybe")
              .code == 2);
}

int main(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        if (argv[i][0] != '-') {
            g_cli = argv[i];
            break;
        }
    }
    if (g_cli.empty()) {
        const char* env = std::getenv("COCO_CLI");
        if (env) g_cli = env;
    }
    if (g_cli.empty()) {
        std::fprintf(stderr, "usage: test_cli <path-to-coco-cli>\n");
        return 1;
    }
    doctest::Context ctx;
    ctx.applyCommandLine(argc, argv);
    return ctx.run();
}
