#include <gtest/gtest.h>

#include "mope/artifacts.hpp"
#include "mope/checkpoint.hpp"
#include "mope/pruning.hpp"
#include "test_util.hpp"

using namespace mope;
using namespace mope::testing;

namespace {

// Synthetic cost tables over a hand-specified architecture; no model needed
// for plan-level tests.
CostTables synthetic_tables(int n_layers, int n_heads, int d, int d_head, int d_ff, int n_groups,
                            const std::map<ModuleId, double>& scores) {
    CostTables t;
    t.meta.n_groups = n_groups;
    for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
        auto& arch = side == EncoderSide::Vision ? t.vision_arch : t.text_arch;
        arch.d = d;
        arch.d_head = d_head;
        arch.n_heads_full = n_heads;
        arch.vocab = 8;
        arch.seq = 4;
        arch.e = 8;
        for (int l = 0; l < n_layers; ++l) {
            arch.layers.push_back({n_heads, d_ff, l});
            for (int h = 0; h < n_heads; ++h) {
                const ModuleId id = ModuleId::head(side, l, h);
                auto it = scores.find(id);
                t.heads.push_back({id, it == scores.end() ? 1.0 : it->second});
            }
            for (int g = 0; g < group_count(d_ff, n_groups); ++g) {
                const ModuleId id = ModuleId::group(side, l, g);
                auto it = scores.find(id);
                t.neuron_groups.push_back({id, it == scores.end() ? 1.0 : it->second});
            }
            const ModuleId lid = ModuleId::layer_id(side, l);
            auto it = scores.find(lid);
            t.layers.push_back({lid, it == scores.end() ? 1.0 : it->second});
        }
    }
    return t;
}

StageConfig fast_stage_config(int epochs = 1) {
    StageConfig cfg;
    cfg.score.workers = 2;
    cfg.distill_width.epochs = epochs;
    cfg.distill_width.batch_size = 16;
    cfg.distill_depth = cfg.distill_width;
    return cfg;
}

}  // namespace

TEST(WidthPlan, FullFractionIsEmptyPlan) {
    const CostTables tables = synthetic_tables(2, 4, 16, 4, 16, 8, {});
    PruneTarget target;  // width_fraction defaults to 1.0
    const PruningPlan plan = make_width_plan(tables, target);
    EXPECT_TRUE(plan.remove.empty());
    EXPECT_EQ(plan.predicted_params(), 2 * param_count(tables.vision_arch) + 1);
}

TEST(WidthPlan, RemovesLowestScoresWithIndexTieBreak) {
    // Head scores {0.9, 0.1, 0.5, 0.1}: removing two must take both 0.1
    // entries, lower index first.
    std::map<ModuleId, double> scores;
    scores[ModuleId::head(EncoderSide::Vision, 0, 0)] = 0.9;
    scores[ModuleId::head(EncoderSide::Vision, 0, 1)] = 0.1;
    scores[ModuleId::head(EncoderSide::Vision, 0, 2)] = 0.5;
    scores[ModuleId::head(EncoderSide::Vision, 0, 3)] = 0.1;
    const CostTables tables = synthetic_tables(1, 4, 16, 4, 16, 8, scores);
    PruneTarget target;
    target.vision.width_fraction = 0.5;
    target.text.width_fraction = 1.0;
    const PruningPlan plan = make_width_plan(tables, target);
    std::vector<ModuleId> removed_heads;
    for (const auto& id : plan.remove)
        if (id.kind == ModuleId::Kind::Head) removed_heads.push_back(id);
    ASSERT_EQ(removed_heads.size(), 2u);
    EXPECT_EQ(removed_heads[0], ModuleId::head(EncoderSide::Vision, 0, 1));
    EXPECT_EQ(removed_heads[1], ModuleId::head(EncoderSide::Vision, 0, 3));
}

TEST(WidthPlan, PaperExemplarKeepsSixOfSixteenHeads) {
    // 1024-wide encoder with 16 heads at fraction 0.375 keeps 6 heads per
    // layer; reported width 1024 * 6/16 = 384.
    const CostTables tables = synthetic_tables(2, 16, 1024, 64, 4096, 8, {});
    PruneTarget target;
    target.vision.width_fraction = 0.375;
    target.text.width_fraction = 0.375;
    const PruningPlan plan = make_width_plan(tables, target);
    for (const auto& layer : plan.vision_arch.layers) EXPECT_EQ(layer.n_heads, 6);
    const double reported =
        1024.0 * plan.vision_arch.layers[0].n_heads / plan.vision_arch.n_heads_full;
    EXPECT_DOUBLE_EQ(reported, 384.0);
}

TEST(WidthPlan, KeepsAtLeastOneModulePerLayer) {
    const CostTables tables = synthetic_tables(1, 2, 8, 4, 8, 8, {});
    PruneTarget target;
    target.vision.width_fraction = 0.01;
    target.text.width_fraction = 0.01;
    const PruningPlan plan = make_width_plan(tables, target);
    for (const auto& layer : plan.vision_arch.layers) {
        EXPECT_GE(layer.n_heads, 1);
        EXPECT_GE(layer.d_ff, 1);
    }
}

TEST(WidthPlan, BudgetModeGreedyMinimal) {
    std::map<ModuleId, double> scores;
    // Make vision layer-0 head-1 the cheapest to drop, then head-0 groups.
    scores[ModuleId::head(EncoderSide::Vision, 0, 1)] = 0.01;
    const CostTables tables = synthetic_tables(1, 4, 16, 4, 16, 8, scores);
    const long long full = param_count(tables.vision_arch);
    const long long head_delta = 3 * (16 * 4 + 4) + 4 * 16;  // 268
    PruneTarget target;
    target.mode = PruneTarget::Mode::Budget;
    target.vision.param_budget = full - head_delta;  // exactly one head must go
    target.text.param_budget = full;                 // nothing to do
    const PruningPlan plan = make_width_plan(tables, target);
    ASSERT_EQ(plan.remove.size(), 1u);
    EXPECT_EQ(plan.remove[0], ModuleId::head(EncoderSide::Vision, 0, 1));
    EXPECT_EQ(param_count(plan.vision_arch), full - head_delta);
}

TEST(WidthPlan, UnmeetableBudgetIsPlanError) {
    const CostTables tables = synthetic_tables(1, 2, 8, 4, 8, 8, {});
    PruneTarget target;
    target.mode = PruneTarget::Mode::Budget;
    target.vision.param_budget = 1;
    target.text.param_budget = 1;
    EXPECT_THROW(make_width_plan(tables, target), Error);
}

TEST(DepthPlan, KeepAllIsEmpty) {
    const CostTables tables = synthetic_tables(4, 2, 8, 4, 8, 8, {});
    const PruningPlan plan = make_depth_plan(tables, 4, 4);
    EXPECT_TRUE(plan.remove.empty());
}

TEST(DepthPlan, KeepOutOfRange) {
    const CostTables tables = synthetic_tables(4, 2, 8, 4, 8, 8, {});
    EXPECT_THROW(make_depth_plan(tables, 0, 4), Error);
    EXPECT_THROW(make_depth_plan(tables, 5, 4), Error);
}

TEST(DepthPlan, MopeRemovesArgminSetExhaustively) {
    std::map<ModuleId, double> scores;
    const std::vector<double> layer_scores = {0.4, 0.1, 0.9, 0.2, 0.5, 0.3};
    for (int l = 0; l < 6; ++l) {
        scores[ModuleId::layer_id(EncoderSide::Vision, l)] = layer_scores[static_cast<std::size_t>(l)];
        scores[ModuleId::layer_id(EncoderSide::Text, l)] = layer_scores[static_cast<std::size_t>(l)];
    }
    const CostTables tables = synthetic_tables(6, 2, 8, 4, 8, 8, scores);
    const int keep = 3;
    const PruningPlan plan = make_depth_plan(tables, keep, keep);

    // Exhaustive oracle: among all C(6,3) removal sets, the plan's set has
    // the minimum score sum.
    std::vector<int> removed;
    for (const auto& id : plan.remove)
        if (id.encoder == EncoderSide::Vision) removed.push_back(id.layer);
    double plan_sum = 0.0;
    for (int l : removed) plan_sum += layer_scores[static_cast<std::size_t>(l)];
    for (int a = 0; a < 6; ++a)
        for (int b = a + 1; b < 6; ++b)
            for (int c = b + 1; c < 6; ++c) {
                const double sum = layer_scores[static_cast<std::size_t>(a)] +
                                   layer_scores[static_cast<std::size_t>(b)] +
                                   layer_scores[static_cast<std::size_t>(c)];
                EXPECT_GE(sum + 1e-15, plan_sum);
            }
    EXPECT_EQ(removed, (std::vector<int>{1, 3, 5}));  // scores 0.1, 0.2, 0.3
}

TEST(Plans, PureFunctionOfInputs) {
    std::map<ModuleId, double> scores;
    scores[ModuleId::head(EncoderSide::Text, 1, 0)] = 0.2;
    const CostTables tables = synthetic_tables(2, 4, 16, 4, 16, 8, scores);
    PruneTarget target;
    target.vision.width_fraction = 0.5;
    target.text.width_fraction = 0.5;
    const std::string a = plan_to_json(make_width_plan(tables, target)).dump();
    const std::string b = plan_to_json(make_width_plan(tables, target)).dump();
    EXPECT_EQ(a, b);
}

TEST(Plans, MergeKeepsIdsDisjoint) {
    const CostTables tables = synthetic_tables(3, 2, 8, 4, 8, 8, {});
    PruneTarget target;
    target.vision.width_fraction = 0.5;
    target.text.width_fraction = 0.5;
    const PruningPlan width = make_width_plan(tables, target);
    const PruningPlan depth = make_depth_plan(tables, 2, 2);
    const PruningPlan merged = merge_plans(width, depth);
    std::set<std::pair<int, int>> removed_layers;
    for (const auto& id : merged.remove)
        if (id.kind == ModuleId::Kind::Layer)
            removed_layers.emplace(static_cast<int>(id.encoder), id.layer);
    for (const auto& id : merged.remove)
        if (id.kind != ModuleId::Kind::Layer)
            EXPECT_FALSE(removed_layers.count({static_cast<int>(id.encoder), id.layer}))
                << "width removal inside removed layer: " << id.str();
    EXPECT_EQ(merged.vision_arch.layers.size(), 2u);
}

TEST(Plans, JsonRoundTrip) {
    const CostTables tables = synthetic_tables(2, 4, 16, 4, 16, 8, {});
    PruneTarget target;
    target.vision.width_fraction = 0.5;
    target.text.width_fraction = 0.75;
    const PruningPlan plan = make_width_plan(tables, target);
    const PruningPlan back = plan_from_json(plan_to_json(plan));
    EXPECT_EQ(plan_to_json(back).dump(), plan_to_json(plan).dump());
    EXPECT_EQ(plan_hash(back), plan_hash(plan));
}

TEST(Pipeline, IdentityTargetWithZeroStepsKeepsTeacherBitwise) {
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const Dataset ds = generate_dataset(tiny_data_spec(42));
    PruneTarget target;  // fractions 1.0, no depth targets
    StageConfig cfg = fast_stage_config(0);
    const PipelineResult result = run_finetune_pipeline(teacher, ds, target, cfg);
    EXPECT_EQ(model_hash(result.student), model_hash(teacher));
    EXPECT_EQ(result.train_reports.size(), 2u);
    for (const auto& rep : result.train_reports) EXPECT_EQ(rep.total_steps, 0);
}

TEST(Pipeline, FineTuneRecordsTwoPhasesAndProvenance) {
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const Dataset ds = generate_dataset(tiny_data_spec(42));
    PruneTarget target;
    target.vision.width_fraction = 0.5;
    target.text.width_fraction = 0.5;
    target.vision.depth_keep = 1;
    target.text.depth_keep = 1;
    const StageConfig cfg = fast_stage_config(1);
    const PipelineResult result = run_finetune_pipeline(teacher, ds, target, cfg);

    EXPECT_EQ(result.train_reports.size(), 2u);
    ASSERT_TRUE(result.layer_tables.has_value());
    // Layer tables must refer to the retrained width-pruned model, not the
    // teacher (width-first-then-depth contract).
    EXPECT_NE(result.layer_tables->meta.model_hash, model_hash(teacher));
    bool found = false;
    for (const auto& phase : result.phases)
        if (phase.name == "width-distilled") {
            EXPECT_EQ(result.layer_tables->meta.model_hash, phase.model_hash);
            found = true;
        }
    EXPECT_TRUE(found);
    EXPECT_EQ(result.student.vision.n_layers(), 1);
    EXPECT_EQ(param_count(result.student), result.depth_plan->predicted_params());
}

TEST(Pipeline, PreTrainSingleDistillPhase) {
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const Dataset ds = generate_dataset(tiny_data_spec(42));
    PruneTarget target;
    target.vision.width_fraction = 0.5;
    target.text.width_fraction = 0.5;
    target.vision.depth_keep = 1;
    target.text.depth_keep = 1;
    const StageConfig cfg = fast_stage_config(1);
    const PipelineResult result = run_pretrain_pipeline(teacher, ds, target, cfg);
    EXPECT_EQ(result.train_reports.size(), 1u);
    EXPECT_FALSE(result.width_tables.layers.empty());
    EXPECT_EQ(result.student.vision.n_layers(), 1);
}

TEST(Pipeline, StageParityOnParameterCounts) {
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const Dataset ds = generate_dataset(tiny_data_spec(42));
    PruneTarget target;
    target.vision.width_fraction = 0.5;
    target.text.width_fraction = 0.5;
    target.vision.depth_keep = 1;
    target.text.depth_keep = 1;
    const StageConfig cfg = fast_stage_config(1);
    const PipelineResult ft = run_finetune_pipeline(teacher, ds, target, cfg);
    const PipelineResult pt = run_pretrain_pipeline(teacher, ds, target, cfg);
    EXPECT_EQ(param_count(ft.student), param_count(pt.student));
}

TEST(Pipeline, PlanningAfterTablesIsFast) {
    // Plan construction is pure table arithmetic; no model evaluation.
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const Dataset ds = generate_dataset(tiny_data_spec(42));
    ScoreConfig sc;
    sc.workers = 2;
    TableKinds kinds;
    kinds.layers = true;
    const CostTables tables = build_cost_tables(teacher, ds.val, sc, kinds).tables;
    PruneTarget target;
    target.vision.width_fraction = 0.5;
    target.text.width_fraction = 0.5;
    const WallTimer timer;
    const PruningPlan width = make_width_plan(tables, target);
    const PruningPlan depth = make_depth_plan(tables, 1, 1);
    merge_plans(width, depth);
    EXPECT_LT(timer.seconds(), 1.0);
}

TEST(Compare, SingleStrategyIsUsageError) {
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const Dataset ds = generate_dataset(tiny_data_spec(42));
    PruneTarget target;
    EXPECT_THROW(compare_depth_strategies(teacher, ds, target, {ImportanceMetric::MoPE},
                                          fast_stage_config(0)),
                 Error);
    EXPECT_THROW(
        compare_frameworks(teacher, ds, target, {"width-first-then-depth"}, fast_stage_config(0)),
        Error);
}

TEST(Compare, DeterministicReruns) {
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const Dataset ds = generate_dataset(tiny_data_spec(42));
    PruneTarget target;
    target.vision.width_fraction = 0.5;
    target.text.width_fraction = 0.5;
    target.vision.depth_keep = 1;
    target.text.depth_keep = 1;
    const StageConfig cfg = fast_stage_config(1);
    const auto run = [&]() {
        const ComparisonReport rep = compare_depth_strategies(
            teacher, ds, target, {ImportanceMetric::MoPE, ImportanceMetric::EveryOther}, cfg);
        std::string out;
        for (const auto& row : rep.rows)
            out += row.name + ":" + std::to_string(row.metrics.recall_mean) + ";";
        return out;
    };
    EXPECT_EQ(run(), run());
}

TEST(Compare, LossAblationVariants) {
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const Dataset ds = generate_dataset(tiny_data_spec(42));
    PruneTarget target;
    target.vision.width_fraction = 0.5;
    target.text.width_fraction = 0.5;
    const ComparisonReport rep = compare_loss_ablations(
        teacher, ds, target, {"full", "no-sim", "no-feat", "no-hidn", "no-distill"},
        fast_stage_config(1));
    EXPECT_EQ(rep.rows.size(), 5u);
    EXPECT_THROW(
        compare_loss_ablations(teacher, ds, target, {"bogus"}, fast_stage_config(1)), Error);
}
