// Command-line workbench for the dual-encoder pruning toolkit. Every
// subcommand reads one JSON config (flags override leaf keys), writes its
// artifacts plus a run manifest into --out, and exits nonzero with a
// one-line machine-parsable error on failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mope/artifacts.hpp"
#include "mope/checkpoint.hpp"
#include "mope/data.hpp"
#include "mope/distill.hpp"
#include "mope/evaluation.hpp"
#include "mope/model.hpp"
#include "mope/pruning.hpp"
#include "mope/report.hpp"
#include "mope/scoring.hpp"
#include "mope/surgery.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::json;
using namespace mope;

namespace {

Json default_config() {
    return Json{
        {"seed", 42},
        {"checked", true},
        {"workers", 0},
        {"model",
         {{"d", 64},
          {"n_heads", 4},
          {"d_ff", 0},
          {"n_layers_v", 4},
          {"n_layers_t", 4},
          {"vocab_v", 64},
          {"vocab_t", 64},
          {"seq_v", 8},
          {"seq_t", 8},
          {"e", 64},
          {"seed", 42}}},
        {"data",
         {{"n_train", 256},
          {"n_val", 128},
          {"n_test", 128},
          {"n_concepts", 512},
          {"vocab_v", 64},
          {"vocab_t", 64},
          {"seq_v", 8},
          {"seq_t", 8},
          {"noise_rate", 0.02},
          {"seed", 42}}},
        {"teacher_train",
         {{"lr", 3e-4},
          {"epochs", 50},
          {"batch_size", 32},
          {"warmup_ratio", 0.1},
          {"weight_decay", 3e-4},
          {"adam_beta1", 0.9},
          {"adam_beta2", 0.98},
          {"seed", 42}}},
        {"distill",
         {{"alpha", 1.0},
          {"beta", 1000.0},
          {"gamma", 1.0},
          {"lr", 3e-4},
          {"warmup_ratio", 0.1},
          {"epochs", 20},
          {"batch_size", 32},
          {"weight_decay", 3e-4},
          {"adam_beta1", 0.9},
          {"adam_beta2", 0.98},
          {"seed", 42},
          {"freeze_logit_scale", false},
          {"scale_in_sim", false},
          {"sim_bidirectional", true}}},
        {"score", {{"n_groups", 8}, {"objective", "recall-mean"}, {"eval_batch", 32}}},
        {"prune",
         {{"mode", "uniform"},
          {"width", 1.0},
          {"depth_v", 0},
          {"depth_t", 0},
          {"budget_v", 0},
          {"budget_t", 0},
          {"strategy", "mope"}}},
        {"expect", Json::object()},
    };
}

void merge_json(Json& base, const Json& overlay) {
    for (const auto& [key, value] : overlay.items()) {
        if (value.is_object() && base.contains(key) && base[key].is_object())
            merge_json(base[key], value);
        else
            base[key] = value;
    }
}

struct CliArgs {
    std::string config_path;
    std::string out_dir = "run";
    std::string data_path;
    std::string model_path;
    std::string teacher_path;
    std::string split = "val";
    std::string stage = "finetune";
    std::string kind = "depth";
    std::string strategies = "mope,every-other";
    std::string objective;
    std::string strategy;
    double width = -1.0;
    int depth = -1;
    long long budget = -1;
    long long seed = -1;
    int workers = -1;
    int epochs = -1;
};

Json load_config(const CliArgs& args) {
    Json cfg = default_config();
    if (!args.config_path.empty()) merge_json(cfg, read_json(args.config_path));
    if (args.seed >= 0) {
        cfg["seed"] = args.seed;
        cfg["model"]["seed"] = args.seed;
        cfg["data"]["seed"] = args.seed;
        cfg["teacher_train"]["seed"] = args.seed;
        cfg["distill"]["seed"] = args.seed;
    }
    if (args.workers >= 0) cfg["workers"] = args.workers;
    if (args.width >= 0) cfg["prune"]["width"] = args.width;
    if (args.depth >= 0) {
        cfg["prune"]["depth_v"] = args.depth;
        cfg["prune"]["depth_t"] = args.depth;
    }
    if (args.budget >= 0) {
        cfg["prune"]["mode"] = "budget";
        cfg["prune"]["budget_v"] = args.budget;
        cfg["prune"]["budget_t"] = args.budget;
    }
    if (!args.objective.empty()) cfg["score"]["objective"] = args.objective;
    if (!args.strategy.empty()) cfg["prune"]["strategy"] = args.strategy;
    if (args.epochs >= 0) cfg["distill"]["epochs"] = args.epochs;
    set_checked_mode(cfg.value("checked", true));
    return cfg;
}

ModelConfig model_config_from(const Json& cfg) { return config_from_json(cfg.at("model")); }

SyntheticSpec data_spec_from(const Json& cfg) { return spec_from_json(cfg.at("data")); }

DistillConfig distill_config_from(const Json& j) {
    DistillConfig dc;
    dc.alpha = j.value("alpha", 0.0);
    dc.beta = j.value("beta", 0.0);
    dc.gamma = j.value("gamma", 0.0);
    dc.lr = j.at("lr").get<double>();
    dc.warmup_ratio = j.at("warmup_ratio").get<double>();
    dc.epochs = j.at("epochs").get<int>();
    dc.batch_size = j.at("batch_size").get<int>();
    dc.weight_decay = j.at("weight_decay").get<double>();
    dc.adam_beta1 = j.at("adam_beta1").get<double>();
    dc.adam_beta2 = j.at("adam_beta2").get<double>();
    dc.seed = j.at("seed").get<std::uint64_t>();
    dc.freeze_logit_scale = j.value("freeze_logit_scale", false);
    dc.scale_in_sim = j.value("scale_in_sim", false);
    dc.sim_bidirectional = j.value("sim_bidirectional", true);
    return dc;
}

ScoreConfig score_config_from(const Json& cfg) {
    ScoreConfig sc;
    sc.n_groups = cfg.at("score").at("n_groups").get<int>();
    sc.objective = EvalObjective::from_name(cfg.at("score").at("objective").get<std::string>());
    sc.eval_batch = cfg.at("score").at("eval_batch").get<int>();
    sc.workers = cfg.value("workers", 0);
    return sc;
}

PruneTarget prune_target_from(const Json& cfg) {
    const Json& p = cfg.at("prune");
    PruneTarget target;
    const std::string mode = p.at("mode").get<std::string>();
    target.mode = mode == "budget" ? PruneTarget::Mode::Budget : PruneTarget::Mode::Uniform;
    target.vision.width_fraction = p.at("width").get<double>();
    target.text.width_fraction = p.at("width").get<double>();
    if (p.at("depth_v").get<int>() > 0) target.vision.depth_keep = p.at("depth_v").get<int>();
    if (p.at("depth_t").get<int>() > 0) target.text.depth_keep = p.at("depth_t").get<int>();
    if (target.mode == PruneTarget::Mode::Budget) {
        target.vision.param_budget = p.at("budget_v").get<long long>();
        target.text.param_budget = p.at("budget_t").get<long long>();
    }
    return target;
}

StageConfig stage_config_from(const Json& cfg) {
    StageConfig sc;
    sc.score = score_config_from(cfg);
    sc.distill_width = distill_config_from(cfg.at("distill"));
    Json depth_cfg = cfg.at("distill");
    if (cfg.contains("distill_depth")) merge_json(depth_cfg, cfg.at("distill_depth"));
    sc.distill_depth = distill_config_from(depth_cfg);
    sc.strategy = metric_from_name(cfg.at("prune").at("strategy").get<std::string>());
    return sc;
}

// Declared input hashes ("expect": {filename: sha256}) are verified before
// the artifact is used.
void check_expected_hash(const Json& cfg, const fs::path& path) {
    const Json& expect = cfg.value("expect", Json::object());
    const std::string name = path.filename().string();
    if (!expect.contains(name)) return;
    const std::string actual = file_hash(path);
    const std::string declared = expect.at(name).get<std::string>();
    if (actual != declared)
        throw_error("hash-mismatch",
                    "input " + name + " has hash " + actual + ", config declares " + declared);
}

Dataset load_dataset(const Json& cfg, const CliArgs& args) {
    if (args.data_path.empty()) throw_error("usage", "missing --data");
    check_expected_hash(cfg, args.data_path);
    return dataset_from_json(read_json(args.data_path));
}

const Split& pick_split(const Dataset& ds, const std::string& name) {
    if (name == "train") return ds.train;
    if (name == "val") return ds.val;
    if (name == "test") return ds.test;
    throw_error("usage", "unknown split: " + name);
}

Json train_report_to_json(const TrainReport& rep) {
    Json steps = Json::array();
    for (const auto& s : rep.steps)
        steps.push_back(Json{{"itc", s.itc},
                             {"sim", s.sim},
                             {"feat", s.feat},
                             {"hidn", s.hidn},
                             {"total", s.total},
                             {"lr", s.lr}});
    Json epochs = Json::array();
    for (const auto& s : rep.epoch_means)
        epochs.push_back(Json{{"itc", s.itc},
                              {"sim", s.sim},
                              {"feat", s.feat},
                              {"hidn", s.hidn},
                              {"total", s.total},
                              {"lr", s.lr}});
    // Wall time stays out of the artifact (it lives in the manifest's
    // wall_times) so reruns serialize byte-identically.
    return Json{{"steps", steps},
                {"epoch_means", epochs},
                {"final_metrics", metrics_to_json(rep.final_metrics)},
                {"seed", rep.seed},
                {"epochs", rep.epochs},
                {"total_steps", rep.total_steps}};
}

Json comparison_to_json(const ComparisonReport& report) {
    Json rows = Json::array();
    for (const auto& row : report.rows)
        rows.push_back(Json{{"name", row.name},
                            {"params", row.params},
                            {"metrics", metrics_to_json(row.metrics)}});
    return Json{{"kind", report.kind}, {"rows", rows}};
}

Json phases_to_json(const std::vector<PhaseLog>& phases) {
    Json arr = Json::array();
    for (const auto& p : phases)
        arr.push_back(Json{{"name", p.name},
                           {"params", p.params},
                           {"model_hash", p.model_hash},
                           {"metrics", metrics_to_json(p.metrics)}});
    return arr;
}

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : csv) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

int cmd_gen_data(const CliArgs& args, const Json& cfg) {
    DirLock lock(args.out_dir);
    WallTimer timer;
    const Dataset ds = generate_dataset(data_spec_from(cfg));
    const fs::path out = fs::path(args.out_dir) / "dataset.json";
    write_file(out, dump_canonical(dataset_to_json(ds)));
    RunManifest manifest("gen-data", cfg);
    manifest.add_output(out);
    manifest.add_wall_time("gen-data", timer.seconds());
    manifest.write(args.out_dir);
    std::cout << "dataset " << ds.hash << " (" << ds.train.size() << "/" << ds.val.size() << "/"
              << ds.test.size() << " pairs)\n";
    return 0;
}

int cmd_train_teacher(const CliArgs& args, const Json& cfg) {
    DirLock lock(args.out_dir);
    WallTimer timer;
    const Dataset ds = load_dataset(cfg, args);
    DualEncoder model = init_model(model_config_from(cfg));
    DistillConfig tc = distill_config_from(cfg.at("teacher_train"));
    tc.alpha = tc.beta = tc.gamma = 0.0;
    const TrainReport rep = train_contrastive(model, ds.train, tc, &ds.val);

    const fs::path ckpt = fs::path(args.out_dir) / "teacher.ckpt";
    save_checkpoint(model, ckpt.string(), Json{{"kind", "teacher"}, {"dataset", ds.hash}});
    const fs::path report_path = fs::path(args.out_dir) / "train_report.json";
    write_file(report_path, dump_canonical(train_report_to_json(rep)));
    const fs::path metrics_path = fs::path(args.out_dir) / "metrics.json";
    write_file(metrics_path, dump_canonical(metrics_to_json(rep.final_metrics)));

    RunManifest manifest("train-teacher", cfg);
    manifest.add_input(args.data_path);
    manifest.add_output(ckpt);
    manifest.add_output(report_path);
    manifest.add_output(metrics_path);
    manifest.add_wall_time("train", rep.wall_seconds);
    manifest.add_wall_time("train-teacher", timer.seconds());
    manifest.write(args.out_dir);
    std::cout << dump_canonical(metrics_to_json(rep.final_metrics));
    return 0;
}

int cmd_score(const CliArgs& args, const Json& cfg) {
    DirLock lock(args.out_dir);
    WallTimer timer;
    const Dataset ds = load_dataset(cfg, args);
    if (args.model_path.empty()) throw_error("usage", "missing --model");
    check_expected_hash(cfg, args.model_path);
    const DualEncoder model = load_checkpoint(args.model_path).model;

    TableKinds kinds;
    kinds.layers = true;  // standalone scoring produces all three tables
    const BuildTablesResult built =
        build_cost_tables(model, pick_split(ds, args.split), score_config_from(cfg), kinds);

    const fs::path tables_path = fs::path(args.out_dir) / "cost_tables.json";
    write_file(tables_path, dump_canonical(cost_tables_to_json(built.tables)));
    const fs::path rewired_path = fs::path(args.out_dir) / "model_rewired.ckpt";
    save_checkpoint(built.rewired, rewired_path.string(),
                    Json{{"kind", "rewired"}, {"source_hash", built.tables.meta.model_hash}});

    RunManifest manifest("score", cfg);
    manifest.add_input(args.data_path);
    manifest.add_input(args.model_path);
    manifest.add_output(tables_path);
    manifest.add_output(rewired_path);
    manifest.add_wall_time("score", timer.seconds());
    manifest.write(args.out_dir);
    std::cout << "cost tables: " << built.tables.heads.size() << " heads, "
              << built.tables.neuron_groups.size() << " neuron groups, "
              << built.tables.layers.size() << " layers\n";
    return 0;
}

int cmd_plan(const CliArgs& args, const Json& cfg) {
    DirLock lock(args.out_dir);
    WallTimer timer;
    const fs::path tables_path = fs::path(args.out_dir) / "cost_tables.json";
    const CostTables tables = cost_tables_from_json(read_json(tables_path));
    const PruneTarget target = prune_target_from(cfg);

    PruningPlan plan = make_width_plan(tables, target);
    const bool with_depth =
        target.vision.depth_keep.has_value() || target.text.depth_keep.has_value();
    if (with_depth) {
        if (tables.layers.empty()) throw_error("plan", "cost tables carry no layer scores");
        const int keep_v =
            target.vision.depth_keep.value_or(static_cast<int>(tables.vision_arch.layers.size()));
        const int keep_t =
            target.text.depth_keep.value_or(static_cast<int>(tables.text_arch.layers.size()));
        const PruningPlan depth = make_depth_plan(tables, keep_v, keep_t,
                                                  cfg.at("prune").at("strategy").get<std::string>());
        plan = merge_plans(plan, depth);
    }

    const fs::path plan_path = fs::path(args.out_dir) / "plan.json";
    write_file(plan_path, dump_canonical(plan_to_json(plan)));
    RunManifest manifest("plan", cfg);
    manifest.add_input(tables_path);
    manifest.add_output(plan_path);
    manifest.add_wall_time("plan", timer.seconds());
    manifest.write(args.out_dir);
    std::cout << "plan removes " << plan.remove.size() << " modules; predicted params "
              << plan.predicted_params() << "\n";
    return 0;
}

int cmd_prune(const CliArgs& args, const Json& cfg) {
    DirLock lock(args.out_dir);
    WallTimer timer;
    const fs::path plan_path = fs::path(args.out_dir) / "plan.json";
    const PruningPlan plan = plan_from_json(read_json(plan_path));
    const fs::path model_path = args.model_path.empty()
                                    ? fs::path(args.out_dir) / "model_rewired.ckpt"
                                    : fs::path(args.model_path);
    check_expected_hash(cfg, model_path);
    const DualEncoder model = load_checkpoint(model_path.string()).model;

    const DualEncoder student = apply_plan(model, plan);
    const fs::path out = fs::path(args.out_dir) / "student.ckpt";
    save_checkpoint(student, out.string(),
                    Json{{"kind", "pruned"},
                         {"plan_hash", plan_hash(plan)},
                         {"source_hash", model_hash(model)}});
    RunManifest manifest("prune", cfg);
    manifest.add_input(plan_path);
    manifest.add_input(model_path);
    manifest.add_output(out);
    manifest.add_wall_time("prune", timer.seconds());
    manifest.write(args.out_dir);
    std::cout << "pruned model params " << param_count(student) << "\n";
    return 0;
}

int cmd_distill(const CliArgs& args, const Json& cfg) {
    DirLock lock(args.out_dir);
    WallTimer timer;
    const Dataset ds = load_dataset(cfg, args);
    if (args.model_path.empty()) throw_error("usage", "missing --model");
    if (args.teacher_path.empty()) throw_error("usage", "missing --teacher");
    check_expected_hash(cfg, args.model_path);
    check_expected_hash(cfg, args.teacher_path);
    DualEncoder student = load_checkpoint(args.model_path).model;
    const DualEncoder teacher = load_checkpoint(args.teacher_path).model;

    const DistillConfig dc = distill_config_from(cfg.at("distill"));
    TrainReport rep;
    try {
        rep = train_distill(student, &teacher, ds.train, dc, &ds.val);
    } catch (const TrainError& e) {
        const fs::path rescue = fs::path(args.out_dir) / "last_good.ckpt";
        if (e.last_good())
            save_checkpoint(*e.last_good(), rescue.string(),
                            Json{{"kind", "last-good"}, {"epoch", e.last_good_epoch()}});
        throw_error("training",
                    std::string(e.what()) + "; last-good checkpoint: " + rescue.string());
    }

    const fs::path out = fs::path(args.out_dir) / "student_distilled.ckpt";
    save_checkpoint(student, out.string(),
                    Json{{"kind", "distilled"}, {"teacher_hash", model_hash(teacher)}});
    const fs::path report_path = fs::path(args.out_dir) / "train_report.json";
    write_file(report_path, dump_canonical(train_report_to_json(rep)));
    const fs::path metrics_path = fs::path(args.out_dir) / "metrics.json";
    write_file(metrics_path, dump_canonical(metrics_to_json(rep.final_metrics)));

    RunManifest manifest("distill", cfg);
    manifest.add_input(args.data_path);
    manifest.add_input(args.model_path);
    manifest.add_input(args.teacher_path);
    manifest.add_output(out);
    manifest.add_output(report_path);
    manifest.add_output(metrics_path);
    manifest.add_wall_time("train", rep.wall_seconds);
    manifest.add_wall_time("distill", timer.seconds());
    manifest.write(args.out_dir);
    std::cout << dump_canonical(metrics_to_json(rep.final_metrics));
    return 0;
}

int cmd_eval(const CliArgs& args, const Json& cfg) {
    DirLock lock(args.out_dir);
    WallTimer timer;
    const Dataset ds = load_dataset(cfg, args);
    if (args.model_path.empty()) throw_error("usage", "missing --model");
    check_expected_hash(cfg, args.model_path);
    const DualEncoder model = load_checkpoint(args.model_path).model;
    const RetrievalMetrics metrics = evaluate(model, pick_split(ds, args.split).batch());

    const fs::path metrics_path = fs::path(args.out_dir) / "metrics.json";
    write_file(metrics_path, dump_canonical(metrics_to_json(metrics)));
    RunManifest manifest("eval", cfg);
    manifest.add_input(args.data_path);
    manifest.add_input(args.model_path);
    manifest.add_output(metrics_path);
    manifest.add_wall_time("eval", timer.seconds());
    manifest.write(args.out_dir);
    std::cout << dump_canonical(metrics_to_json(metrics));
    return 0;
}

int cmd_pipeline(const CliArgs& args, const Json& cfg) {
    DirLock lock(args.out_dir);
    WallTimer timer;
    const Dataset ds = load_dataset(cfg, args);
    if (args.teacher_path.empty()) throw_error("usage", "missing --teacher");
    check_expected_hash(cfg, args.teacher_path);
    const DualEncoder teacher = load_checkpoint(args.teacher_path).model;
    const PruneTarget target = prune_target_from(cfg);
    const StageConfig stage_cfg = stage_config_from(cfg);

    PipelineResult result;
    if (args.stage == "finetune")
        result = run_finetune_pipeline(teacher, ds, target, stage_cfg);
    else if (args.stage == "pretrain")
        result = run_pretrain_pipeline(teacher, ds, target, stage_cfg);
    else
        throw_error("usage", "unknown stage: " + args.stage);

    const fs::path dir(args.out_dir);
    RunManifest manifest("pipeline --stage " + args.stage, cfg);
    manifest.add_input(args.data_path);
    manifest.add_input(args.teacher_path);

    const fs::path tables_path = dir / "cost_tables.json";
    write_file(tables_path, dump_canonical(cost_tables_to_json(result.width_tables)));
    manifest.add_output(tables_path);
    const fs::path plan_path = dir / "plan.json";
    write_file(plan_path, dump_canonical(plan_to_json(result.width_plan)));
    manifest.add_output(plan_path);
    if (result.layer_tables) {
        const fs::path p = dir / "layer_tables.json";
        write_file(p, dump_canonical(cost_tables_to_json(*result.layer_tables)));
        manifest.add_output(p);
    }
    if (result.depth_plan) {
        const fs::path p = dir / "depth_plan.json";
        write_file(p, dump_canonical(plan_to_json(*result.depth_plan)));
        manifest.add_output(p);
    }
    for (std::size_t i = 0; i < result.train_reports.size(); ++i) {
        const fs::path p = dir / ("train_report_" + std::to_string(i + 1) + ".json");
        write_file(p, dump_canonical(train_report_to_json(result.train_reports[i])));
        manifest.add_output(p);
        manifest.add_wall_time("distill_phase_" + std::to_string(i + 1),
                               result.train_reports[i].wall_seconds);
    }
    const fs::path phases_path = dir / "phases.json";
    write_file(phases_path, dump_canonical(phases_to_json(result.phases)));
    manifest.add_output(phases_path);
    const fs::path student_path = dir / "student.ckpt";
    save_checkpoint(result.student, student_path.string(),
                    Json{{"kind", "pipeline-" + args.stage},
                         {"teacher_hash", model_hash(teacher)},
                         {"plan_hash", plan_hash(result.width_plan)}});
    manifest.add_output(student_path);
    const fs::path metrics_path = dir / "metrics.json";
    write_file(metrics_path, dump_canonical(metrics_to_json(result.phases.back().metrics)));
    manifest.add_output(metrics_path);

    manifest.add_wall_time("pipeline", timer.seconds());
    manifest.write(args.out_dir);
    std::cout << dump_canonical(metrics_to_json(result.phases.back().metrics));
    return 0;
}

int cmd_compare(const CliArgs& args, const Json& cfg) {
    DirLock lock(args.out_dir);
    WallTimer timer;
    const Dataset ds = load_dataset(cfg, args);
    if (args.teacher_path.empty()) throw_error("usage", "missing --teacher");
    const DualEncoder teacher = load_checkpoint(args.teacher_path).model;
    const PruneTarget target = prune_target_from(cfg);
    const StageConfig stage_cfg = stage_config_from(cfg);
    const std::vector<std::string> names = split_csv(args.strategies);

    ComparisonReport report;
    if (args.kind == "depth") {
        std::vector<ImportanceMetric> metrics;
        for (const auto& n : names) metrics.push_back(metric_from_name(n));
        report = compare_depth_strategies(teacher, ds, target, metrics, stage_cfg);
    } else if (args.kind == "framework") {
        report = compare_frameworks(teacher, ds, target, names, stage_cfg);
    } else if (args.kind == "losses") {
        report = compare_loss_ablations(teacher, ds, target, names, stage_cfg);
    } else {
        throw_error("usage", "unknown comparison kind: " + args.kind);
    }

    const fs::path out = fs::path(args.out_dir) / "comparison.json";
    write_file(out, dump_canonical(comparison_to_json(report)));
    RunManifest manifest("compare --kind " + args.kind, cfg);
    manifest.add_input(args.data_path);
    manifest.add_input(args.teacher_path);
    manifest.add_output(out);
    manifest.add_wall_time("compare", timer.seconds());
    manifest.write(args.out_dir);
    std::cout << "comparison rows: " << report.rows.size() << "\n";
    return 0;
}

int cmd_report(const CliArgs& args, const Json& cfg) {
    DirLock lock(args.out_dir);
    WallTimer timer;
    const fs::path comparison_path = fs::path(args.out_dir) / "comparison.json";
    const Json comparison = read_json(comparison_path);
    const ReportTable table =
        args.kind == "losses" ? loss_ablation_table(comparison) : comparison_table(comparison);
    const fs::path md_path = fs::path(args.out_dir) / "report.md";
    const fs::path csv_path = fs::path(args.out_dir) / "report.csv";
    write_file(md_path, render_markdown(table));
    write_file(csv_path, render_csv(table));
    RunManifest manifest("report", cfg);
    manifest.add_input(comparison_path);
    manifest.add_output(md_path);
    manifest.add_output(csv_path);
    manifest.add_wall_time("report", timer.seconds());
    manifest.write(args.out_dir);
    std::cout << "report written to " << md_path.string() << " and " << csv_path.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structured pruning workbench for dual-encoder retrieval models"};
    app.require_subcommand(1);

    CliArgs args;
    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_path, "JSON config file");
        sub->add_option("--out", args.out_dir, "artifact output directory");
        sub->add_option("--seed", args.seed, "override every seed in the config");
        sub->add_option("--workers", args.workers, "parallel scoring workers");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic paired dataset");
    add_common(gen);
    CLI::App* train = app.add_subcommand("train-teacher", "contrastive-train a teacher model");
    add_common(train);
    train->add_option("--data", args.data_path, "dataset.json");
    CLI::App* score = app.add_subcommand("score", "build cost tables for a model");
    add_common(score);
    score->add_option("--data", args.data_path, "dataset.json");
    score->add_option("--model", args.model_path, "model checkpoint");
    score->add_option("--split", args.split, "scoring split (default val)");
    score->add_option("--objective", args.objective, "tr-mean|ir-mean|recall-mean");
    CLI::App* plan = app.add_subcommand("plan", "turn cost tables into a pruning plan");
    add_common(plan);
    plan->add_option("--width", args.width, "kept width fraction");
    plan->add_option("--depth", args.depth, "retained layer count");
    plan->add_option("--budget", args.budget, "per-encoder parameter budget");
    plan->add_option("--strategy", args.strategy, "depth selection strategy");
    CLI::App* prune = app.add_subcommand("prune", "apply a pruning plan with weight surgery");
    add_common(prune);
    prune->add_option("--model", args.model_path, "model checkpoint (default model_rewired.ckpt)");
    CLI::App* distill = app.add_subcommand("distill", "retrain a pruned student against a teacher");
    add_common(distill);
    distill->add_option("--data", args.data_path, "dataset.json");
    distill->add_option("--model", args.model_path, "student checkpoint");
    distill->add_option("--teacher", args.teacher_path, "teacher checkpoint");
    distill->add_option("--epochs", args.epochs, "training epochs");
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate retrieval metrics");
    add_common(eval_cmd);
    eval_cmd->add_option("--data", args.data_path, "dataset.json");
    eval_cmd->add_option("--model", args.model_path, "model checkpoint");
    eval_cmd->add_option("--split", args.split, "train|val|test");
    CLI::App* pipeline = app.add_subcommand("pipeline", "run a full pruning pipeline");
    add_common(pipeline);
    pipeline->add_option("--stage", args.stage, "finetune|pretrain")->required();
    pipeline->add_option("--data", args.data_path, "dataset.json");
    pipeline->add_option("--teacher", args.teacher_path, "teacher checkpoint");
    pipeline->add_option("--width", args.width, "kept width fraction");
    pipeline->add_option("--depth", args.depth, "retained layer count");
    pipeline->add_option("--budget", args.budget, "per-encoder parameter budget");
    pipeline->add_option("--strategy", args.strategy, "depth selection strategy");
    pipeline->add_option("--objective", args.objective, "scoring objective");
    CLI::App* compare = app.add_subcommand("compare", "run a strategy comparison");
    add_common(compare);
    compare->add_option("--kind", args.kind, "depth|framework|losses");
    compare->add_option("--strategies", args.strategies, "comma-separated strategy names");
    compare->add_option("--data", args.data_path, "dataset.json");
    compare->add_option("--teacher", args.teacher_path, "teacher checkpoint");
    compare->add_option("--width", args.width, "kept width fraction");
    compare->add_option("--depth", args.depth, "retained layer count");
    CLI::App* report = app.add_subcommand("report", "render comparison artifacts to md/csv");
    add_common(report);
    report->add_option("--kind", args.kind, "comparison kind (losses enables the fixed schema)");

    try {
        app.parse(argc, argv);
        const Json cfg = load_config(args);
        if (gen->parsed()) return cmd_gen_data(args, cfg);
        if (train->parsed()) return cmd_train_teacher(args, cfg);
        if (score->parsed()) return cmd_score(args, cfg);
        if (plan->parsed()) return cmd_plan(args, cfg);
        if (prune->parsed()) return cmd_prune(args, cfg);
        if (distill->parsed()) return cmd_distill(args, cfg);
        if (eval_cmd->parsed()) return cmd_eval(args, cfg);
        if (pipeline->parsed()) return cmd_pipeline(args, cfg);
        if (compare->parsed()) return cmd_compare(args, cfg);
        if (report->parsed()) return cmd_report(args, cfg);
        throw_error("usage", "no subcommand");
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error: usage: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 3;
    }
}
