#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "mope/scoring.hpp"
#include "mope/surgery.hpp"

namespace mope {

// Closed-form parameter count from an architecture snapshot (same formula
// as param_count over a live encoder).
inline long long param_count(const CostTables::EncoderArch& a) {
    const long long d = a.d;
    long long total = static_cast<long long>(a.vocab) * d + static_cast<long long>(a.seq) * d;
    for (const auto& l : a.layers) {
        const long long hd = static_cast<long long>(l.n_heads) * a.d_head;
        const long long f = l.d_ff;
        total += 3 * (d * hd + hd) + hd * d + d + 2 * (2 * d) + d * f + f + f * d + d;
    }
    total += 2 * d;
    total += d * static_cast<long long>(a.e);
    return total;
}

struct PruneTarget {
    enum class Mode { Uniform, Budget };
    struct EncoderTarget {
        double width_fraction = 1.0;        // kept fraction of heads and neuron groups
        std::optional<int> depth_keep;      // retained layer count (uniform mode)
        std::optional<long long> param_budget;  // budget mode
    };
    Mode mode = Mode::Uniform;
    EncoderTarget vision, text;

    const EncoderTarget& side(EncoderSide s) const {
        return s == EncoderSide::Vision ? vision : text;
    }

    void validate() const {
        for (const auto* t : {&vision, &text}) {
            if (mode == Mode::Uniform) {
                if (t->param_budget)
                    throw_error("config", "prune target: budget set in uniform mode");
                if (t->width_fraction <= 0.0 || t->width_fraction > 1.0)
                    throw_error("config", "prune target: width_fraction must be in (0, 1]");
                if (t->depth_keep && *t->depth_keep < 1)
                    throw_error("config", "prune target: depth_keep must be >= 1");
            } else if (!t->param_budget || *t->param_budget < 1) {
                throw_error("config", "prune target: budget mode requires param_budget");
            }
        }
    }
};

struct PruningPlan {
    std::vector<ModuleId> remove;  // ordered by (encoder, layer, kind, index)
    CostTables::EncoderArch vision_arch, text_arch;  // architecture after applying the plan
    struct Provenance {
        std::string cost_tables_hash;
        std::string mode;  // "uniform" | "budget" | "depth"
        std::string strategy = "mope";
        int n_groups = 8;
    } provenance;

    long long predicted_params() const {
        return param_count(vision_arch) + param_count(text_arch) + 1;
    }

    const CostTables::EncoderArch& arch(EncoderSide s) const {
        return s == EncoderSide::Vision ? vision_arch : text_arch;
    }
};

namespace detail {

inline void sort_plan(std::vector<ModuleId>& ids) {
    std::sort(ids.begin(), ids.end(), [](const ModuleId& a, const ModuleId& b) {
        return std::tuple(static_cast<int>(a.encoder), a.layer, static_cast<int>(a.kind), a.index) <
               std::tuple(static_cast<int>(b.encoder), b.layer, static_cast<int>(b.kind), b.index);
    });
}

// Rounded kept count: round-to-nearest with a floor of one module.
inline int kept_count(int total, double fraction) {
    const int k = static_cast<int>(std::llround(fraction * total));
    return std::max(1, std::min(total, k));
}

struct ScoreLookup {
    std::map<ModuleId, double> scores;
    explicit ScoreLookup(const std::vector<ScoreEntry>& entries) {
        for (const auto& e : entries) scores.emplace(e.id, e.score);
    }
    double at(const ModuleId& id) const {
        auto it = scores.find(id);
        if (it == scores.end()) throw_error("plan", "cost table missing entry: " + id.str());
        return it->second;
    }
};

}  // namespace detail

// Width plan. Uniform mode keeps the round(N*fraction) highest-scored heads
// and neuron groups per layer; budget mode greedily removes the
// lowest-scored width module of the encoder (never emptying a layer) until
// the parameter budget is met. Ties break by ascending (encoder, layer,
// index).
inline PruningPlan make_width_plan(const CostTables& tables, const PruneTarget& target) {
    target.validate();
    PruningPlan plan;
    plan.vision_arch = tables.vision_arch;
    plan.text_arch = tables.text_arch;
    plan.provenance.cost_tables_hash = cost_tables_hash(tables);
    plan.provenance.mode = target.mode == PruneTarget::Mode::Uniform ? "uniform" : "budget";
    plan.provenance.strategy = tables.meta.metric;
    plan.provenance.n_groups = tables.meta.n_groups;
    const int n_groups = tables.meta.n_groups;
    const detail::ScoreLookup head_scores(tables.heads);
    const detail::ScoreLookup group_scores(tables.neuron_groups);

    for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
        auto& arch = side == EncoderSide::Vision ? plan.vision_arch : plan.text_arch;
        const auto& etarget = target.side(side);

        if (target.mode == PruneTarget::Mode::Uniform) {
            for (int l = 0; l < static_cast<int>(arch.layers.size()); ++l) {
                auto& layer = arch.layers[static_cast<std::size_t>(l)];
                // Heads: keep the top-scored, remove the rest.
                {
                    std::vector<int> order(static_cast<std::size_t>(layer.n_heads));
                    for (int h = 0; h < layer.n_heads; ++h) order[static_cast<std::size_t>(h)] = h;
                    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                        return head_scores.at(ModuleId::head(side, l, a)) >
                               head_scores.at(ModuleId::head(side, l, b));
                    });
                    const int keep = detail::kept_count(layer.n_heads, etarget.width_fraction);
                    for (std::size_t i = static_cast<std::size_t>(keep); i < order.size(); ++i)
                        plan.remove.push_back(ModuleId::head(side, l, order[i]));
                    layer.n_heads = keep;
                }
                // Neuron groups.
                {
                    const int groups = group_count(layer.d_ff, n_groups);
                    std::vector<int> order(static_cast<std::size_t>(groups));
                    for (int g = 0; g < groups; ++g) order[static_cast<std::size_t>(g)] = g;
                    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                        return group_scores.at(ModuleId::group(side, l, a)) >
                               group_scores.at(ModuleId::group(side, l, b));
                    });
                    const int keep = detail::kept_count(groups, etarget.width_fraction);
                    int removed_neurons = 0;
                    for (std::size_t i = static_cast<std::size_t>(keep); i < order.size(); ++i) {
                        plan.remove.push_back(ModuleId::group(side, l, order[i]));
                        const auto [lo, hi] = group_range(layer.d_ff, n_groups, order[i]);
                        removed_neurons += hi - lo;
                    }
                    layer.d_ff -= removed_neurons;
                }
            }
        } else {
            // Global greedy within the encoder.
            struct Candidate {
                ModuleId id;
                double score;
                long long delta;  // parameter saving
            };
            std::vector<Candidate> candidates;
            const long long d = arch.d;
            for (int l = 0; l < static_cast<int>(arch.layers.size()); ++l) {
                const auto& layer = arch.layers[static_cast<std::size_t>(l)];
                const long long head_delta = 3 * (d * arch.d_head + arch.d_head) + arch.d_head * d;
                for (int h = 0; h < layer.n_heads; ++h)
                    candidates.push_back(
                        {ModuleId::head(side, l, h), head_scores.at(ModuleId::head(side, l, h)),
                         head_delta});
                const int groups = group_count(layer.d_ff, n_groups);
                for (int g = 0; g < groups; ++g) {
                    const auto [lo, hi] = group_range(layer.d_ff, n_groups, g);
                    candidates.push_back({ModuleId::group(side, l, g),
                                          group_scores.at(ModuleId::group(side, l, g)),
                                          static_cast<long long>(hi - lo) * (2 * d + 1)});
                }
            }
            std::stable_sort(candidates.begin(), candidates.end(),
                             [](const Candidate& a, const Candidate& b) {
                                 if (a.score != b.score) return a.score < b.score;
                                 return std::tuple(static_cast<int>(a.id.encoder), a.id.layer,
                                                   a.id.index) <
                                        std::tuple(static_cast<int>(b.id.encoder), b.id.layer,
                                                   b.id.index);
                             });
            std::vector<int> heads_left(arch.layers.size()), groups_left(arch.layers.size());
            for (std::size_t l = 0; l < arch.layers.size(); ++l) {
                heads_left[l] = arch.layers[l].n_heads;
                groups_left[l] = group_count(arch.layers[l].d_ff, n_groups);
            }
            long long params = param_count(arch);
            const long long budget = *etarget.param_budget;
            for (const auto& c : candidates) {
                if (params <= budget) break;
                auto& left = c.id.kind == ModuleId::Kind::Head
                                 ? heads_left[static_cast<std::size_t>(c.id.layer)]
                                 : groups_left[static_cast<std::size_t>(c.id.layer)];
                if (left <= 1) continue;  // never empty a layer
                --left;
                params -= c.delta;
                plan.remove.push_back(c.id);
            }
            if (params > budget)
                throw_error("plan", "width plan: parameter budget unmeetable without emptying a layer");
            // Fold the removals into the architecture record.
            for (std::size_t l = 0; l < arch.layers.size(); ++l) {
                const auto& orig =
                    (side == EncoderSide::Vision ? tables.vision_arch : tables.text_arch).layers[l];
                int removed_heads = 0, removed_neurons = 0;
                for (const auto& id : plan.remove) {
                    if (id.encoder != side || id.layer != static_cast<int>(l)) continue;
                    if (id.kind == ModuleId::Kind::Head) {
                        ++removed_heads;
                    } else if (id.kind == ModuleId::Kind::NeuronGroup) {
                        const auto [lo, hi] = group_range(orig.d_ff, n_groups, id.index);
                        removed_neurons += hi - lo;
                    }
                }
                arch.layers[l].n_heads = orig.n_heads - removed_heads;
                arch.layers[l].d_ff = orig.d_ff - removed_neurons;
            }
        }
    }
    detail::sort_plan(plan.remove);
    return plan;
}

// Depth plan: remove the lowest-priority layers per encoder until `keep`
// remain; ties break by ascending layer index.
inline PruningPlan make_depth_plan(const CostTables& tables, int keep_v, int keep_t,
                                   const std::string& strategy = "mope") {
    PruningPlan plan;
    plan.vision_arch = tables.vision_arch;
    plan.text_arch = tables.text_arch;
    plan.provenance.cost_tables_hash = cost_tables_hash(tables);
    plan.provenance.mode = "depth";
    plan.provenance.strategy = strategy;
    plan.provenance.n_groups = tables.meta.n_groups;
    const detail::ScoreLookup layer_scores(tables.layers);

    for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
        auto& arch = side == EncoderSide::Vision ? plan.vision_arch : plan.text_arch;
        const int L = static_cast<int>(arch.layers.size());
        const int keep = side == EncoderSide::Vision ? keep_v : keep_t;
        if (keep < 1 || keep > L) throw_error("range", "depth plan: keep out of range");
        std::vector<int> order(static_cast<std::size_t>(L));
        for (int l = 0; l < L; ++l) order[static_cast<std::size_t>(l)] = l;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return layer_scores.at(ModuleId::layer_id(side, a)) <
                   layer_scores.at(ModuleId::layer_id(side, b));
        });
        std::vector<char> removed(static_cast<std::size_t>(L), 0);
        for (int i = 0; i < L - keep; ++i) {
            plan.remove.push_back(ModuleId::layer_id(side, order[static_cast<std::size_t>(i)]));
            removed[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
        }
        std::vector<CostTables::LayerArch> kept;
        for (int l = 0; l < L; ++l)
            if (!removed[static_cast<std::size_t>(l)])
                kept.push_back(arch.layers[static_cast<std::size_t>(l)]);
        arch.layers = std::move(kept);
    }
    detail::sort_plan(plan.remove);
    return plan;
}

// Merge a width plan and a depth plan over the same architecture into one
// combined plan: width removals inside removed layers are dropped so the
// id set stays disjoint.
inline PruningPlan merge_plans(const PruningPlan& width, const PruningPlan& depth) {
    PruningPlan plan;
    plan.provenance = width.provenance;
    plan.provenance.mode = width.provenance.mode + "+depth";
    std::set<std::pair<int, int>> dropped;
    for (const auto& id : depth.remove) {
        plan.remove.push_back(id);
        dropped.emplace(static_cast<int>(id.encoder), id.layer);
    }
    for (const auto& id : width.remove)
        if (!dropped.count({static_cast<int>(id.encoder), id.layer})) plan.remove.push_back(id);
    // Resulting arch: width-pruned arch minus removed layers.
    for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
        const auto& warch = width.arch(side);
        auto& arch = side == EncoderSide::Vision ? plan.vision_arch : plan.text_arch;
        arch = warch;
        std::vector<CostTables::LayerArch> kept;
        for (int l = 0; l < static_cast<int>(warch.layers.size()); ++l)
            if (!dropped.count({static_cast<int>(side), l}))
                kept.push_back(warch.layers[static_cast<std::size_t>(l)]);
        arch.layers = std::move(kept);
    }
    detail::sort_plan(plan.remove);
    return plan;
}

inline Json plan_to_json(const PruningPlan& plan) {
    Json remove = Json::array();
    for (const auto& id : plan.remove) remove.push_back(module_id_to_json(id));
    return Json{{"remove", remove},
                {"arch", {{"vision", arch_to_json(plan.vision_arch)},
                          {"text", arch_to_json(plan.text_arch)}}},
                {"predicted_params", plan.predicted_params()},
                {"provenance",
                 {{"cost_tables_hash", plan.provenance.cost_tables_hash},
                  {"mode", plan.provenance.mode},
                  {"strategy", plan.provenance.strategy},
                  {"n_groups", plan.provenance.n_groups}}}};
}

inline PruningPlan plan_from_json(const Json& j) {
    PruningPlan plan;
    for (const auto& e : j.at("remove")) plan.remove.push_back(module_id_from_json(e));
    plan.vision_arch = arch_from_json(j.at("arch").at("vision"));
    plan.text_arch = arch_from_json(j.at("arch").at("text"));
    const Json& p = j.at("provenance");
    plan.provenance.cost_tables_hash = p.at("cost_tables_hash").get<std::string>();
    plan.provenance.mode = p.at("mode").get<std::string>();
    plan.provenance.strategy = p.at("strategy").get<std::string>();
    plan.provenance.n_groups = p.at("n_groups").get<int>();
    return plan;
}

inline std::string plan_hash(const PruningPlan& plan) {
    return Sha256::hex(plan_to_json(plan).dump());
}

// Apply a plan with surgery and check the result against the plan's
// architecture record.
inline DualEncoder apply_plan(const DualEncoder& model, const PruningPlan& plan) {
    DualEncoder pruned = structural_prune(model, plan.remove, plan.provenance.n_groups);
    for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
        const auto& arch = plan.arch(side);
        const auto& enc = pruned.encoder(side);
        if (static_cast<int>(arch.layers.size()) != enc.n_layers())
            throw_error("plan", "apply_plan: layer count mismatch against plan record");
        for (int l = 0; l < enc.n_layers(); ++l) {
            const auto& lw = enc.layers[static_cast<std::size_t>(l)];
            const auto& la = arch.layers[static_cast<std::size_t>(l)];
            if (lw.n_heads != la.n_heads || lw.d_ff != la.d_ff || lw.origin != la.origin)
                throw_error("plan", "apply_plan: layer record mismatch after surgery");
        }
    }
    if (param_count(pruned) != plan.predicted_params())
        throw_error("plan", "apply_plan: parameter count mismatch against plan record");
    return pruned;
}

// Layer cost tables built from a baseline importance metric instead of the
// pruning-error metric.
inline CostTables layer_tables_from_baseline(const DualEncoder& model, ImportanceMetric metric,
                                             const Split* split, int n_groups = 8,
                                             int eval_batch = 32) {
    CostTables tables;
    tables.vision_arch = snapshot_arch(model.vision);
    tables.text_arch = snapshot_arch(model.text);
    tables.meta.metric = metric_name(metric);
    tables.meta.model_hash = model_hash(model);
    tables.meta.rewired_model_hash = tables.meta.model_hash;
    tables.meta.split_id = split ? split->id : "";
    tables.meta.n_groups = n_groups;
    tables.layers = baseline_scores(model, metric, ModuleId::Kind::Layer, split, n_groups, eval_batch);
    return tables;
}

struct StageConfig {
    enum class Stage { FineTune, PreTrain };
    Stage stage = Stage::FineTune;
    ScoreConfig score;
    DistillConfig distill_width;  // retraining after width pruning / the single pre-train phase
    DistillConfig distill_depth;  // second fine-tune retraining phase
    ImportanceMetric strategy = ImportanceMetric::MoPE;  // depth selection
};

struct PhaseLog {
    std::string name;
    RetrievalMetrics metrics;  // validation split
    long long params = 0;
    std::string model_hash;
};

struct PipelineResult {
    DualEncoder student;
    CostTables width_tables;               // pre-train stage: all three kinds
    std::optional<CostTables> layer_tables;  // fine-tune stage second scoring pass
    PruningPlan width_plan;                // pre-train stage: the combined plan
    std::optional<PruningPlan> depth_plan;
    std::vector<TrainReport> train_reports;
    std::vector<PhaseLog> phases;
};

namespace detail {

// Group removals index into the rewired model's neuron order; plans that
// leave every group in place apply to the original weights so an identity
// target reproduces the input bitwise.
inline const DualEncoder& surgery_base(const PruningPlan& plan, const DualEncoder& original,
                                       const DualEncoder& rewired) {
    for (const auto& id : plan.remove)
        if (id.kind == ModuleId::Kind::NeuronGroup) return rewired;
    return original;
}

inline PhaseLog log_phase(const std::string& name, const DualEncoder& model, const Split& val) {
    PhaseLog log;
    log.name = name;
    log.metrics = evaluate(model, val.batch());
    log.params = param_count(model);
    log.model_hash = model_hash(model);
    return log;
}

inline CostTables depth_tables_for_strategy(const DualEncoder& model, ImportanceMetric strategy,
                                            const Split& val, const ScoreConfig& score) {
    if (strategy == ImportanceMetric::MoPE) {
        TableKinds kinds;
        kinds.heads = false;
        kinds.neuron_groups = false;
        kinds.layers = true;
        return build_cost_tables(model, val, score, kinds).tables;
    }
    return layer_tables_from_baseline(model, strategy, &val, score.n_groups, score.eval_batch);
}

}  // namespace detail

// Fine-tuning stage: width-first-then-depth. Head/group tables on the
// teacher drive a width plan; the width-pruned student is distilled against
// the fixed teacher; layer tables are then rebuilt on that retrained
// student before depth pruning and a second distillation.
inline PipelineResult run_finetune_pipeline(const DualEncoder& teacher, const Dataset& data,
                                            const PruneTarget& target, const StageConfig& cfg) {
    target.validate();
    PipelineResult result;
    result.phases.push_back(detail::log_phase("teacher", teacher, data.val));

    TableKinds width_kinds;
    width_kinds.heads = true;
    width_kinds.neuron_groups = true;
    width_kinds.layers = false;
    BuildTablesResult scored = build_cost_tables(teacher, data.val, cfg.score, width_kinds);
    result.width_tables = scored.tables;
    result.width_plan = make_width_plan(scored.tables, target);

    DualEncoder student =
        apply_plan(detail::surgery_base(result.width_plan, teacher, scored.rewired),
                   result.width_plan);
    result.phases.push_back(detail::log_phase("width-pruned", student, data.val));

    result.train_reports.push_back(
        train_distill(student, &teacher, data.train, cfg.distill_width, &data.val));
    result.phases.push_back(detail::log_phase("width-distilled", student, data.val));

    const int keep_v = target.vision.depth_keep.value_or(student.vision.n_layers());
    const int keep_t = target.text.depth_keep.value_or(student.text.n_layers());
    CostTables layer_tables =
        detail::depth_tables_for_strategy(student, cfg.strategy, data.val, cfg.score);
    result.layer_tables = layer_tables;
    result.depth_plan =
        make_depth_plan(layer_tables, keep_v, keep_t, metric_name(cfg.strategy));

    student = apply_plan(student, *result.depth_plan);
    result.phases.push_back(detail::log_phase("depth-pruned", student, data.val));

    result.train_reports.push_back(
        train_distill(student, &teacher, data.train, cfg.distill_depth, &data.val));
    result.phases.push_back(detail::log_phase("final", student, data.val));

    result.student = std::move(student);
    return result;
}

// Pre-training stage: width-and-depth in one pass. All three cost tables
// are built on the unmodified model, one combined plan is applied, and a
// single distillation run follows.
inline PipelineResult run_pretrain_pipeline(const DualEncoder& model, const Dataset& data,
                                            const PruneTarget& target, const StageConfig& cfg) {
    target.validate();
    PipelineResult result;
    result.phases.push_back(detail::log_phase("teacher", model, data.val));

    TableKinds kinds;
    kinds.heads = true;
    kinds.neuron_groups = true;
    kinds.layers = true;
    BuildTablesResult scored = build_cost_tables(model, data.val, cfg.score, kinds);
    result.width_tables = scored.tables;

    const PruningPlan width_plan = make_width_plan(scored.tables, target);
    const int keep_v = target.vision.depth_keep.value_or(model.vision.n_layers());
    const int keep_t = target.text.depth_keep.value_or(model.text.n_layers());
    const PruningPlan depth_plan =
        make_depth_plan(scored.tables, keep_v, keep_t, metric_name(cfg.strategy));
    result.width_plan = merge_plans(width_plan, depth_plan);

    DualEncoder student = apply_plan(
        detail::surgery_base(result.width_plan, model, scored.rewired), result.width_plan);
    result.phases.push_back(detail::log_phase("pruned", student, data.val));

    result.train_reports.push_back(
        train_distill(student, &model, data.train, cfg.distill_width, &data.val));
    result.phases.push_back(detail::log_phase("final", student, data.val));

    result.student = std::move(student);
    return result;
}

struct ComparisonRow {
    std::string name;
    RetrievalMetrics metrics;
    long long params = 0;
};

struct ComparisonReport {
    std::string kind;
    std::vector<ComparisonRow> rows;  // ranked by recall mean, ties by name
};

namespace detail {

inline void rank_rows(std::vector<ComparisonRow>& rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
        if (a.metrics.recall_mean != b.metrics.recall_mean)
            return a.metrics.recall_mean > b.metrics.recall_mean;
        return a.name < b.name;
    });
}

}  // namespace detail

// Depth-selection comparison: identical width phase and distillation
// budgets; only the layer-selection strategy differs.
inline ComparisonReport compare_depth_strategies(const DualEncoder& teacher, const Dataset& data,
                                                 const PruneTarget& target,
                                                 const std::vector<ImportanceMetric>& strategies,
                                                 const StageConfig& cfg) {
    if (strategies.size() < 2)
        throw_error("usage", "compare: need at least two strategies");
    target.validate();
    ComparisonReport report;
    report.kind = "depth-strategy";

    // Shared width phase.
    TableKinds width_kinds;
    width_kinds.layers = false;
    BuildTablesResult scored = build_cost_tables(teacher, data.val, cfg.score, width_kinds);
    const PruningPlan width_plan = make_width_plan(scored.tables, target);
    DualEncoder base = apply_plan(detail::surgery_base(width_plan, teacher, scored.rewired),
                                  width_plan);
    train_distill(base, &teacher, data.train, cfg.distill_width, nullptr);

    for (ImportanceMetric strategy : strategies) {
        const CostTables layer_tables =
            detail::depth_tables_for_strategy(base, strategy, data.val, cfg.score);
        const int keep_v = target.vision.depth_keep.value_or(base.vision.n_layers());
        const int keep_t = target.text.depth_keep.value_or(base.text.n_layers());
        const PruningPlan depth_plan =
            make_depth_plan(layer_tables, keep_v, keep_t, metric_name(strategy));
        DualEncoder student = apply_plan(base, depth_plan);
        train_distill(student, &teacher, data.train, cfg.distill_depth, nullptr);
        ComparisonRow row;
        row.name = metric_name(strategy);
        row.metrics = evaluate(student, data.val.batch());
        row.params = param_count(student);
        report.rows.push_back(std::move(row));
    }
    detail::rank_rows(report.rows);
    return report;
}

// Framework comparison: width-first-then-depth versus depth-first-then-width
// versus width-and-depth, same targets and budgets. Depth-first exists only
// here; it is not a supported deployment path.
inline ComparisonReport compare_frameworks(const DualEncoder& teacher, const Dataset& data,
                                           const PruneTarget& target,
                                           const std::vector<std::string>& frameworks,
                                           const StageConfig& cfg) {
    if (frameworks.size() < 2) throw_error("usage", "compare: need at least two frameworks");
    target.validate();
    ComparisonReport report;
    report.kind = "framework";
    for (const std::string& name : frameworks) {
        DualEncoder student;
        if (name == "width-first-then-depth") {
            student = run_finetune_pipeline(teacher, data, target, cfg).student;
        } else if (name == "width-and-depth") {
            student = run_pretrain_pipeline(teacher, data, target, cfg).student;
        } else if (name == "depth-first-then-width") {
            const CostTables layer_tables =
                detail::depth_tables_for_strategy(teacher, cfg.strategy, data.val, cfg.score);
            const int keep_v = target.vision.depth_keep.value_or(teacher.vision.n_layers());
            const int keep_t = target.text.depth_keep.value_or(teacher.text.n_layers());
            const PruningPlan depth_plan =
                make_depth_plan(layer_tables, keep_v, keep_t, metric_name(cfg.strategy));
            student = apply_plan(teacher, depth_plan);
            train_distill(student, &teacher, data.train, cfg.distill_width, nullptr);
            TableKinds width_kinds;
            width_kinds.layers = false;
            BuildTablesResult scored = build_cost_tables(student, data.val, cfg.score, width_kinds);
            const PruningPlan width_plan = make_width_plan(scored.tables, target);
            student = apply_plan(detail::surgery_base(width_plan, student, scored.rewired),
                                 width_plan);
            train_distill(student, &teacher, data.train, cfg.distill_depth, nullptr);
        } else {
            throw_error("usage", "compare: unknown framework: " + name);
        }
        ComparisonRow row;
        row.name = name;
        row.metrics = evaluate(student, data.val.batch());
        row.params = param_count(student);
        report.rows.push_back(std::move(row));
    }
    detail::rank_rows(report.rows);
    return report;
}

// Loss-ablation comparison: one width-pruned student retrained under loss
// variants with identical step budgets.
inline ComparisonReport compare_loss_ablations(const DualEncoder& teacher, const Dataset& data,
                                               const PruneTarget& target,
                                               const std::vector<std::string>& variants,
                                               const StageConfig& cfg) {
    if (variants.empty()) throw_error("usage", "compare: no loss variants requested");
    target.validate();
    ComparisonReport report;
    report.kind = "loss-ablation";

    TableKinds width_kinds;
    width_kinds.layers = false;
    BuildTablesResult scored = build_cost_tables(teacher, data.val, cfg.score, width_kinds);
    const PruningPlan width_plan = make_width_plan(scored.tables, target);
    const DualEncoder base = apply_plan(
        detail::surgery_base(width_plan, teacher, scored.rewired), width_plan);

    for (const std::string& name : variants) {
        DistillConfig dc = cfg.distill_width;
        const DualEncoder* t = &teacher;
        if (name == "full") {
        } else if (name == "no-sim") {
            dc.alpha = 0.0;
        } else if (name == "no-feat") {
            dc.beta = 0.0;
        } else if (name == "no-hidn") {
            dc.gamma = 0.0;
        } else if (name == "no-distill") {
            t = nullptr;
        } else {
            throw_error("usage", "compare: unknown loss variant: " + name);
        }
        DualEncoder student = base;
        train_distill(student, t, data.train, dc, nullptr);
        ComparisonRow row;
        row.name = name;
        row.metrics = evaluate(student, data.val.batch());
        row.params = param_count(student);
        report.rows.push_back(std::move(row));
    }
    detail::rank_rows(report.rows);
    return report;
}

}  // namespace mope
