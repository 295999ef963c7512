#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mope/artifacts.hpp"
#include "mope/checkpoint.hpp"
#include "mope/data.hpp"
#include "mope/pruning.hpp"
#include "mope/report.hpp"
#include "test_util.hpp"

using namespace mope;
using namespace mope::testing;
namespace fs = std::filesystem;

#ifndef MOPE_CLI_PATH
#define MOPE_CLI_PATH ""
#endif

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("mope_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(MOPE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    return std::system(cmd.c_str());
}

}  // namespace

TEST(Dataset, SameSeedIsByteIdentical) {
    const Dataset a = generate_dataset(tiny_data_spec(42));
    const Dataset b = generate_dataset(tiny_data_spec(42));
    EXPECT_EQ(dataset_to_json(a).dump(), dataset_to_json(b).dump());
    const Dataset c = generate_dataset(tiny_data_spec(43));
    EXPECT_NE(a.hash, c.hash);
}

TEST(Dataset, NoiseFreeTemplatesRepeatExactly) {
    // With noise 0, a concept's tokens are its template: growing the split
    // must reproduce the shared prefix of concepts identically.
    SyntheticSpec small = tiny_data_spec(42);
    small.noise_rate = 0.0;
    small.n_train = 8;
    SyntheticSpec large = small;
    large.n_train = 16;
    const Dataset a = generate_dataset(small);
    const Dataset b = generate_dataset(large);
    for (int i = 0; i < 8; ++i) {
        EXPECT_EQ(a.train.pairs[static_cast<std::size_t>(i)].v, b.train.pairs[static_cast<std::size_t>(i)].v);
        EXPECT_EQ(a.train.pairs[static_cast<std::size_t>(i)].t, b.train.pairs[static_cast<std::size_t>(i)].t);
    }
}

TEST(Dataset, SplitsAreConceptDisjoint) {
    const Dataset ds = generate_dataset(tiny_data_spec());
    std::set<int> train_c, val_c, test_c;
    for (const auto& p : ds.train.pairs) train_c.insert(p.concept_id);
    for (const auto& p : ds.val.pairs) val_c.insert(p.concept_id);
    for (const auto& p : ds.test.pairs) test_c.insert(p.concept_id);
    for (int c : val_c) {
        EXPECT_FALSE(train_c.count(c));
        EXPECT_FALSE(test_c.count(c));
    }
}

TEST(Dataset, SpecErrors) {
    SyntheticSpec s = tiny_data_spec();
    s.noise_rate = 0.6;
    EXPECT_THROW(generate_dataset(s), Error);
    s = tiny_data_spec();
    s.n_concepts = 10;  // fewer than total pairs
    EXPECT_THROW(generate_dataset(s), Error);
    s = tiny_data_spec();
    s.vocab_t = s.vocab_v - 1;  // injection impossible
    EXPECT_THROW(generate_dataset(s), Error);
    s = tiny_data_spec();
    s.vocab_v = 2;
    s.seq_v = 2;
    s.n_concepts = 64;  // 2^2 templates cannot cover 64 concepts
    EXPECT_THROW(generate_dataset(s), Error);
}

TEST(Dataset, JsonRoundTripVerifiesHash) {
    const Dataset ds = generate_dataset(tiny_data_spec());
    nlohmann::json j = dataset_to_json(ds);
    const Dataset back = dataset_from_json(j);
    EXPECT_EQ(back.hash, ds.hash);
    j["splits"]["train"][0]["v"][0] = 999;  // content no longer matches hash
    EXPECT_THROW(dataset_from_json(j), Error);
}

TEST(Checkpoint, RoundTripIsBitwiseLossless) {
    const fs::path dir = temp_dir("ckpt");
    const DualEncoder m = init_model(tiny_model_config(42));
    const fs::path path = dir / "model.ckpt";
    save_checkpoint(m, path.string(), Json{{"kind", "test"}});
    const LoadedCheckpoint loaded = load_checkpoint(path.string());
    EXPECT_EQ(model_hash(loaded.model), model_hash(m));
    EXPECT_EQ(loaded.provenance.at("kind"), "test");

    // save(load(x)) == x byte-for-byte.
    const fs::path path2 = dir / "model2.ckpt";
    save_checkpoint(loaded.model, path2.string(), loaded.provenance);
    EXPECT_EQ(read_file(path), read_file(path2));
}

TEST(Checkpoint, TruncatedPayloadIsFormatError) {
    const fs::path dir = temp_dir("ckpt_trunc");
    const DualEncoder m = init_model(tiny_model_config(42));
    const fs::path path = dir / "model.ckpt";
    save_checkpoint(m, path.string());
    std::string bytes = read_file(path);
    bytes.resize(bytes.size() - 64);
    const fs::path cut = dir / "cut.ckpt";
    write_file(cut, bytes);
    try {
        load_checkpoint(cut.string());
        FAIL() << "expected format error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), "format");
        // 64 bytes cut reach into the text projection; the error names it.
        EXPECT_NE(std::string(e.what()).find("text.proj"), std::string::npos)
            << "error should name the offending tensor: " << e.what();
    }
}

TEST(Checkpoint, CorruptMagicAndManifest) {
    const fs::path dir = temp_dir("ckpt_bad");
    const DualEncoder m = init_model(tiny_model_config(42));
    const fs::path path = dir / "model.ckpt";
    save_checkpoint(m, path.string());
    std::string bytes = read_file(path);
    std::string bad = bytes;
    bad[0] = 'X';
    write_file(dir / "bad_magic.ckpt", bad);
    EXPECT_THROW(load_checkpoint((dir / "bad_magic.ckpt").string()), Error);
    std::string garbled = bytes;
    garbled[20] = '!';  // inside the JSON manifest
    write_file(dir / "bad_manifest.ckpt", garbled);
    EXPECT_THROW(load_checkpoint((dir / "bad_manifest.ckpt").string()), Error);
}

TEST(Checkpoint, PrunedModelRoundTripKeepsArchitecture) {
    const fs::path dir = temp_dir("ckpt_pruned");
    const DualEncoder m = init_model(tiny_model_config(42));
    const DualEncoder pruned = structural_prune(
        m, {ModuleId::head(EncoderSide::Vision, 0, 1), ModuleId::group(EncoderSide::Text, 1, 2),
            ModuleId::layer_id(EncoderSide::Vision, 1)});
    const fs::path path = dir / "pruned.ckpt";
    save_checkpoint(pruned, path.string());
    const DualEncoder back = load_checkpoint(path.string()).model;
    ASSERT_EQ(back.vision.n_layers(), pruned.vision.n_layers());
    for (int l = 0; l < back.vision.n_layers(); ++l) {
        EXPECT_EQ(back.vision.layers[static_cast<std::size_t>(l)].n_heads,
                  pruned.vision.layers[static_cast<std::size_t>(l)].n_heads);
        EXPECT_EQ(back.vision.layers[static_cast<std::size_t>(l)].origin,
                  pruned.vision.layers[static_cast<std::size_t>(l)].origin);
    }
    EXPECT_EQ(back.text.layers[1].d_ff, pruned.text.layers[1].d_ff);
    EXPECT_EQ(model_hash(back), model_hash(pruned));
}

TEST(Report, MarkdownAndCsvCarryIdenticalValues) {
    nlohmann::json comparison = {
        {"kind", "depth-strategy"},
        {"rows", nlohmann::json::array()},
    };
    RetrievalMetrics m;
    for (int k : {1, 5, 10}) {
        m.tr_at[k] = 0.125 + k * 0.0625;
        m.ir_at[k] = 0.25 + k * 0.03125;
    }
    m.tr_mean = 0.333333333333333314829616256247390992939472198486328125;
    m.ir_mean = 0.5;
    m.recall_mean = 0.4166666666666666574148081281236954964697360992431640625;
    comparison["rows"].push_back(
        {{"name", "mope"}, {"params", 12345}, {"metrics", metrics_to_json(m)}});
    comparison["rows"].push_back(
        {{"name", "every-other"}, {"params", 12345}, {"metrics", metrics_to_json(m)}});

    const ReportTable table = comparison_table(comparison);
    const std::string md = render_markdown(table);
    const std::string csv = render_csv(table);

    // Parse both back and compare cell-for-cell.
    std::vector<std::vector<std::string>> md_rows;
    std::istringstream md_stream(md);
    std::string line;
    while (std::getline(md_stream, line)) {
        if (line.empty() || line[0] != '|' || line.find("---") != std::string::npos ||
            line.find("strategy") != std::string::npos)
            continue;
        std::vector<std::string> cells;
        std::string cell;
        for (std::size_t i = 1; i < line.size(); ++i) {
            if (line[i] == '|') {
                cells.push_back(cell.substr(1, cell.size() - 2));
                cell.clear();
            } else {
                cell += line[i];
            }
        }
        md_rows.push_back(cells);
    }
    std::vector<std::vector<std::string>> csv_rows;
    std::istringstream csv_stream(csv);
    bool header = true;
    while (std::getline(csv_stream, line)) {
        if (header) {
            header = false;
            continue;
        }
        std::vector<std::string> cells;
        std::string cell;
        for (char c : line) {
            if (c == ',') {
                cells.push_back(cell);
                cell.clear();
            } else {
                cell += c;
            }
        }
        cells.push_back(cell);
        csv_rows.push_back(cells);
    }
    ASSERT_EQ(md_rows.size(), csv_rows.size());
    for (std::size_t r = 0; r < md_rows.size(); ++r) {
        ASSERT_EQ(md_rows[r].size(), csv_rows[r].size());
        for (std::size_t c = 0; c < md_rows[r].size(); ++c)
            EXPECT_EQ(md_rows[r][c], csv_rows[r][c]);
    }
}

TEST(Report, LossAblationSchemaEnforced) {
    nlohmann::json comparison = {{"kind", "loss-ablation"}, {"rows", nlohmann::json::array()}};
    RetrievalMetrics m;
    for (int k : {1, 5, 10}) {
        m.tr_at[k] = 0.5;
        m.ir_at[k] = 0.5;
    }
    for (const char* name : {"full", "no-sim", "no-feat", "no-hidn", "no-distill"})
        comparison["rows"].push_back(
            {{"name", name}, {"params", 1}, {"metrics", metrics_to_json(m)}});
    EXPECT_NO_THROW(loss_ablation_table(comparison));

    comparison["rows"].erase(2);  // drop no-feat
    try {
        loss_ablation_table(comparison);
        FAIL() << "expected report error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), "report");
        EXPECT_NE(std::string(e.what()).find("no-feat"), std::string::npos);
    }
}

TEST(Report, EmptyComparisonIsReportError) {
    nlohmann::json comparison = {{"kind", "depth-strategy"}, {"rows", nlohmann::json::array()}};
    EXPECT_THROW(comparison_table(comparison), Error);
}

TEST(Manifest, WallTimesSeparatedFromPayload) {
    RunManifest a("demo", Json{{"seed", 1}});
    a.add_input_hash("x", "abc");
    a.add_wall_time("phase", 1.25);
    RunManifest b("demo", Json{{"seed", 1}});
    b.add_input_hash("x", "abc");
    b.add_wall_time("phase", 99.0);
    Json ja = a.to_json();
    Json jb = b.to_json();
    EXPECT_NE(ja, jb);
    ja.erase("wall_times");
    jb.erase("wall_times");
    EXPECT_EQ(ja, jb);
}

TEST(DirLock, RejectsConcurrentWriter) {
    const fs::path dir = temp_dir("lock");
    DirLock first(dir);
    EXPECT_THROW(DirLock second(dir), Error);
}

// CLI end-to-end flows (driven through the real binary).

TEST(Cli, GenDataSameSeedSameManifest) {
    ASSERT_NE(std::string(MOPE_CLI_PATH), "");
    const fs::path a = temp_dir("cli_gen_a");
    const fs::path b = temp_dir("cli_gen_b");
    ASSERT_EQ(run_cli("gen-data --out " + a.string()), 0);
    ASSERT_EQ(run_cli("gen-data --out " + b.string()), 0);
    EXPECT_EQ(read_file(a / "dataset.json"), read_file(b / "dataset.json"));
    Json ma = read_json(a / "manifest.json");
    Json mb = read_json(b / "manifest.json");
    ma.erase("wall_times");
    mb.erase("wall_times");
    EXPECT_EQ(ma.dump(), mb.dump());
}

TEST(Cli, EvalPrintsMetricsAndExitsZero) {
    const fs::path dir = temp_dir("cli_eval");
    const Json cfg = {{"model", config_to_json(tiny_model_config())},
                      {"data", spec_to_json(tiny_data_spec())},
                      {"teacher_train", {{"epochs", 1}, {"lr", 3e-4}, {"batch_size", 16},
                                         {"warmup_ratio", 0.1}, {"weight_decay", 3e-4},
                                         {"adam_beta1", 0.9}, {"adam_beta2", 0.98}, {"seed", 42}}}};
    write_file(dir / "cfg.json", cfg.dump());
    ASSERT_EQ(run_cli("gen-data --config " + (dir / "cfg.json").string() + " --out " +
                      (dir / "d").string()),
              0);
    ASSERT_EQ(run_cli("train-teacher --config " + (dir / "cfg.json").string() + " --data " +
                      (dir / "d" / "dataset.json").string() + " --out " + (dir / "t").string()),
              0);
    ASSERT_EQ(run_cli("eval --config " + (dir / "cfg.json").string() + " --data " +
                      (dir / "d" / "dataset.json").string() + " --model " +
                      (dir / "t" / "teacher.ckpt").string() + " --out " + (dir / "e").string()),
              0);
    const Json metrics = read_json(dir / "e" / "metrics.json");
    EXPECT_TRUE(metrics.contains("recall_mean"));
    // Unknown flags exit nonzero.
    EXPECT_NE(run_cli("eval --bogus-flag 1"), 0);
    // Missing input artifact exits nonzero.
    EXPECT_NE(run_cli("eval --data /nonexistent.json --model /nonexistent.ckpt"), 0);
}

TEST(Cli, ScorePlanPruneParamConsistency) {
    const fs::path dir = temp_dir("cli_spp");
    const Json cfg = {{"model", config_to_json(tiny_model_config())},
                      {"data", spec_to_json(tiny_data_spec())}};
    write_file(dir / "cfg.json", cfg.dump());
    const std::string c = " --config " + (dir / "cfg.json").string();
    ASSERT_EQ(run_cli("gen-data" + c + " --out " + (dir / "d").string()), 0);
    // Score an untrained model; plan half width and one layer.
    const fs::path init_dir = dir / "t";
    fs::create_directories(init_dir);
    save_checkpoint(init_model(tiny_model_config()), (init_dir / "model.ckpt").string());
    const std::string run = (dir / "run").string();
    ASSERT_EQ(run_cli("score" + c + " --data " + (dir / "d" / "dataset.json").string() +
                      " --model " + (init_dir / "model.ckpt").string() + " --out " + run),
              0);
    ASSERT_EQ(run_cli("plan" + c + " --width 0.5 --depth 1 --out " + run), 0);
    ASSERT_EQ(run_cli("prune" + c + " --out " + run), 0);
    const Json plan = read_json(fs::path(run) / "plan.json");
    const DualEncoder student = load_checkpoint((fs::path(run) / "student.ckpt").string()).model;
    EXPECT_EQ(param_count(student), plan.at("predicted_params").get<long long>());
}

TEST(Cli, HashMismatchRejected) {
    const fs::path dir = temp_dir("cli_hash");
    ASSERT_EQ(run_cli("gen-data --out " + (dir / "d").string()), 0);
    const Json cfg = {{"expect", {{"dataset.json", "0000000000000000"}}}};
    write_file(dir / "cfg.json", cfg.dump());
    EXPECT_NE(run_cli("eval --config " + (dir / "cfg.json").string() + " --data " +
                      (dir / "d" / "dataset.json").string() + " --model x.ckpt --out " +
                      (dir / "e").string()),
              0);
}
