#pragma once

#include <algorithm>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mope/checkpoint.hpp"
#include "mope/data.hpp"
#include "mope/distill.hpp"
#include "mope/evaluation.hpp"
#include "mope/model.hpp"
#include "mope/threadpool.hpp"

namespace mope {

enum class ImportanceMetric { MoPE, Magnitude, LossGradient, EveryOther, TopLayers, BottomLayers };

inline const char* metric_name(ImportanceMetric m) {
    switch (m) {
        case ImportanceMetric::MoPE: return "mope";
        case ImportanceMetric::Magnitude: return "magnitude";
        case ImportanceMetric::LossGradient: return "loss-gradient";
        case ImportanceMetric::EveryOther: return "every-other";
        case ImportanceMetric::TopLayers: return "top-layers";
        case ImportanceMetric::BottomLayers: return "bottom-layers";
    }
    return "mope";
}

inline ImportanceMetric metric_from_name(const std::string& s) {
    if (s == "mope") return ImportanceMetric::MoPE;
    if (s == "magnitude") return ImportanceMetric::Magnitude;
    if (s == "loss-gradient") return ImportanceMetric::LossGradient;
    if (s == "every-other") return ImportanceMetric::EveryOther;
    if (s == "top-layers") return ImportanceMetric::TopLayers;
    if (s == "bottom-layers") return ImportanceMetric::BottomLayers;
    throw_error("usage", "unknown importance metric: " + s);
}

struct ScoreConfig {
    int n_groups = 8;
    EvalObjective objective;
    int workers = 0;      // 0 -> MOPE_WORKERS env or hardware
    int eval_batch = 32;  // batching for gradient-based importance
};

struct ScoreEntry {
    ModuleId id;
    double score = 0.0;
};

struct CostTables {
    std::vector<ScoreEntry> heads;
    std::vector<ScoreEntry> neuron_groups;
    std::vector<ScoreEntry> layers;
    struct Meta {
        std::string objective = "recall-mean";
        std::string split_id;
        std::string model_hash;          // model the head/layer scores refer to
        std::string rewired_model_hash;  // model the group scores refer to
        double z_full = 0.0;
        double z_full_rewired = 0.0;
        int n_groups = 8;
        std::string metric = "mope";
    } meta;

    // Architecture snapshot so planners can do parameter arithmetic without
    // the model itself.
    struct LayerArch {
        int n_heads = 0;
        int d_ff = 0;
        int origin = 0;
    };
    struct EncoderArch {
        int d = 0;
        int d_head = 0;
        int n_heads_full = 0;
        int vocab = 0;
        int seq = 0;
        int e = 0;
        std::vector<LayerArch> layers;
    };
    EncoderArch vision_arch, text_arch;

    const EncoderArch& arch(EncoderSide s) const {
        return s == EncoderSide::Vision ? vision_arch : text_arch;
    }
};

inline CostTables::EncoderArch snapshot_arch(const EncoderWeights& enc) {
    CostTables::EncoderArch a;
    a.d = enc.d;
    a.d_head = enc.d_head;
    a.n_heads_full = enc.n_heads_full;
    a.vocab = enc.vocab;
    a.seq = enc.seq;
    a.e = enc.e;
    for (const auto& lw : enc.layers) a.layers.push_back({lw.n_heads, lw.d_ff, lw.origin});
    return a;
}

// Z_full cache keyed by (model hash, split id, objective): the metric
// subtracts the same baseline for every module of a model.
class ZFullCache {
public:
    double get(const DualEncoder& model, const std::string& model_hash, const Split& split,
               const EvalObjective& objective) {
        const auto key = std::make_tuple(model_hash, split.id, objective.name());
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        const double z = objective_value(evaluate(model, split.batch()), objective);
        std::lock_guard<std::mutex> lock(mutex_);
        cache_.emplace(key, z);
        return z;
    }

private:
    std::mutex mutex_;
    std::map<std::tuple<std::string, std::string, std::string>, double> cache_;
};

inline ZFullCache& z_full_cache() {
    static ZFullCache cache;
    return cache;
}

namespace detail {

// Ablated evaluation reusing baseline features for the untouched encoder.
// Bitwise-identical to a from-scratch evaluate() because each encoder's
// forward pass is independent of the other.
inline double objective_with_ablation(const DualEncoder& model, const Split& split,
                                      const AblationSet& ablation, const EvalObjective& objective,
                                      const Tensor* baseline_fv, const Tensor* baseline_fl) {
    const PairBatch batch = split.batch();
    const Tensor fv =
        (baseline_fv && !ablation.touches(EncoderSide::Vision))
            ? *baseline_fv
            : encode_features(model.vision, EncoderSide::Vision, batch.v_tokens, ablation);
    const Tensor fl = (baseline_fl && !ablation.touches(EncoderSide::Text))
                          ? *baseline_fl
                          : encode_features(model.text, EncoderSide::Text, batch.t_tokens, ablation);
    return objective_value(metrics_from_similarity(similarity_matrix(fv, fl)), objective);
}

}  // namespace detail

// Module-wise pruning error: the drop in the evaluation objective when this
// single module is ablated. Higher = more important.
inline double mope_score(const DualEncoder& model, const ModuleId& module, const Split& split,
                         const EvalObjective& objective, int n_groups = 8,
                         std::optional<double> z_full = std::nullopt) {
    AblationSet ablation = AblationSet::single(module, n_groups);
    ablation.validate(model);
    const double z0 =
        z_full ? *z_full : z_full_cache().get(model, model_hash(model), split, objective);
    const double z1 =
        detail::objective_with_ablation(model, split, ablation, objective, nullptr, nullptr);
    return z0 - z1;
}

// Per-neuron first-order saliency at the FFN intermediate output:
// score(j) = sum over split batches of |activation_j . dL_itc/dactivation_j|.
struct NeuronImportance {
    std::vector<std::vector<double>> vision;  // [layer][neuron]
    std::vector<std::vector<double>> text;

    std::vector<std::vector<double>>& side(EncoderSide s) {
        return s == EncoderSide::Vision ? vision : text;
    }
    const std::vector<std::vector<double>>& side(EncoderSide s) const {
        return s == EncoderSide::Vision ? vision : text;
    }
};

namespace detail {

// Shared driver: forward + backward of L_itc per split batch, handing the
// per-batch graphs to an accumulator.
template <typename Fn>
inline void for_each_itc_batch(const DualEncoder& model, const Split& split, int eval_batch,
                               Fn&& consume) {
    if (split.size() == 0) throw_error("input", "importance scoring: empty split");
    const int n = static_cast<int>(split.size());
    for (int start = 0; start < n; start += eval_batch) {
        const int count = std::min(eval_batch, n - start);
        if (count < 2) break;  // contrastive loss needs at least two pairs
        std::vector<int> idx(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
        const PairBatch batch = split.batch(idx);

        ParamBinder bind(true);
        EncodeGraph gv =
            encode_graph(model.vision, EncoderSide::Vision, batch.v_tokens, AblationSet(), bind);
        EncodeGraph gt =
            encode_graph(model.text, EncoderSide::Text, batch.t_tokens, AblationSet(), bind);
        NodePtr loss = itc_loss(gv.features, gt.features, bind(model.logit_scale));
        backward(loss);
        consume(gv, gt);
    }
}

// |sum(activation * grad)| over one node's elements grouped by last-dim column.
inline void accumulate_column_saliency(const NodePtr& node, std::vector<double>& out) {
    const Tensor& a = node->value;
    if (node->grad.vec().size() != a.numel()) return;
    const int f = a.dim(a.rank() - 1);
    const std::size_t rows = a.numel() / static_cast<std::size_t>(f);
    for (int j = 0; j < f; ++j) {
        double dot = 0.0;
        for (std::size_t r = 0; r < rows; ++r) dot += a[r * f + j] * node->grad[r * f + j];
        out[static_cast<std::size_t>(j)] += std::abs(dot);
    }
}

}  // namespace detail

inline NeuronImportance neuron_importance(const DualEncoder& model, const Split& split,
                                          int eval_batch = 32) {
    NeuronImportance imp;
    for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text})
        for (const auto& lw : model.encoder(side).layers)
            imp.side(side).emplace_back(static_cast<std::size_t>(lw.d_ff), 0.0);
    detail::for_each_itc_batch(model, split, eval_batch, [&](EncodeGraph& gv, EncodeGraph& gt) {
        for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
            const auto& acts = side == EncoderSide::Vision ? gv.ffn_acts : gt.ffn_acts;
            auto& per_layer = imp.side(side);
            for (std::size_t l = 0; l < acts.size(); ++l)
                if (acts[l]) detail::accumulate_column_saliency(acts[l], per_layer[l]);
        }
    });
    return imp;
}

// Layer-level gradient saliency: per-batch |activation x grad|, summed over
// every head context and FFN neuron inside the layer.
inline std::pair<std::vector<double>, std::vector<double>> layer_gradient_scores(
    const DualEncoder& model, const Split& split, int eval_batch = 32) {
    std::vector<double> v(static_cast<std::size_t>(model.vision.n_layers()), 0.0);
    std::vector<double> t(static_cast<std::size_t>(model.text.n_layers()), 0.0);
    detail::for_each_itc_batch(model, split, eval_batch, [&](EncodeGraph& gv, EncodeGraph& gt) {
        for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
            const EncodeGraph& g = side == EncoderSide::Vision ? gv : gt;
            auto& scores = side == EncoderSide::Vision ? v : t;
            for (std::size_t l = 0; l < g.ffn_acts.size(); ++l) {
                if (g.ffn_acts[l]) {
                    std::vector<double> cols(
                        static_cast<std::size_t>(g.ffn_acts[l]->value.dim(2)), 0.0);
                    detail::accumulate_column_saliency(g.ffn_acts[l], cols);
                    for (double c : cols) scores[l] += c;
                }
                for (const auto& ctx : g.head_ctx[l]) {
                    if (!ctx) continue;
                    std::vector<double> cols(static_cast<std::size_t>(ctx->value.dim(2)), 0.0);
                    detail::accumulate_column_saliency(ctx, cols);
                    for (double c : cols) scores[l] += c;
                }
            }
        }
    });
    return {v, t};
}

struct RewireResult {
    DualEncoder model;
    // perms[l][p] = original index of the neuron now at position p.
    std::vector<std::vector<int>> vision_perms;
    std::vector<std::vector<int>> text_perms;
};

// Sort each layer's FFN neurons by descending importance (ties by ascending
// index) and permute W1 columns, its bias, and W2 rows consistently. The
// rewired model computes the same function as the input.
inline RewireResult rewire_ffn(const DualEncoder& model, const Split& split, int eval_batch = 32) {
    const NeuronImportance imp = neuron_importance(model, split, eval_batch);
    RewireResult out;
    out.model = model;
    for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
        auto& enc = out.model.encoder(side);
        auto& perms = side == EncoderSide::Vision ? out.vision_perms : out.text_perms;
        const auto& scores = imp.side(side);
        for (std::size_t l = 0; l < enc.layers.size(); ++l) {
            auto& lw = enc.layers[l];
            std::vector<int> perm(static_cast<std::size_t>(lw.d_ff));
            for (int j = 0; j < lw.d_ff; ++j) perm[static_cast<std::size_t>(j)] = j;
            std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) {
                return scores[l][static_cast<std::size_t>(a)] >
                       scores[l][static_cast<std::size_t>(b)];
            });
            Tensor w1(lw.w1.shape()), b1(lw.b1.shape()), w2(lw.w2.shape());
            const int d = enc.d;
            for (int p = 0; p < lw.d_ff; ++p) {
                const int src = perm[static_cast<std::size_t>(p)];
                for (int i = 0; i < d; ++i) w1.at(i, p) = lw.w1.at(i, src);
                b1[static_cast<std::size_t>(p)] = lw.b1[static_cast<std::size_t>(src)];
                for (int j = 0; j < d; ++j) w2.at(p, j) = lw.w2.at(src, j);
            }
            lw.w1 = std::move(w1);
            lw.b1 = std::move(b1);
            lw.w2 = std::move(w2);
            perms.push_back(std::move(perm));
        }
    }
    return out;
}

struct TableKinds {
    bool heads = true;
    bool neuron_groups = true;
    bool layers = false;
};

struct BuildTablesResult {
    CostTables tables;
    // Model whose FFN neurons were rewired before group scoring; group ids
    // and width plans refer to this model.
    DualEncoder rewired;
    std::vector<std::vector<int>> vision_perms, text_perms;
};

// Cost-table construction. Heads and layers are scored against the input
// model; neuron groups are scored against the rewired model. Module
// evaluations are independent and run in a deterministic parallel map, so
// tables do not depend on worker count or scheduling.
inline BuildTablesResult build_cost_tables(const DualEncoder& model, const Split& split,
                                           const ScoreConfig& cfg,
                                           TableKinds kinds = TableKinds{}) {
    if (split.size() == 0) throw_error("input", "build_cost_tables: empty split");
    BuildTablesResult result;
    CostTables& tables = result.tables;
    tables.meta.objective = cfg.objective.name();
    tables.meta.split_id = split.id;
    tables.meta.n_groups = cfg.n_groups;
    tables.vision_arch = snapshot_arch(model.vision);
    tables.text_arch = snapshot_arch(model.text);
    tables.meta.model_hash = model_hash(model);

    const int workers = resolve_workers(cfg.workers);
    const PairBatch batch = split.batch();

    const auto score_ids = [&](const DualEncoder& target, const std::vector<ModuleId>& ids,
                               double z_full, const Tensor& fv, const Tensor& fl) {
        std::vector<ScoreEntry> entries(ids.size());
        parallel_for(static_cast<int>(ids.size()), workers, [&](int i) {
            const ModuleId& id = ids[static_cast<std::size_t>(i)];
            const AblationSet ablation = AblationSet::single(id, cfg.n_groups);
            const double z =
                detail::objective_with_ablation(target, split, ablation, cfg.objective, &fv, &fl);
            entries[static_cast<std::size_t>(i)] = {id, z_full - z};
        });
        return entries;
    };

    Tensor fv = encode_features(model.vision, EncoderSide::Vision, batch.v_tokens, AblationSet());
    Tensor fl = encode_features(model.text, EncoderSide::Text, batch.t_tokens, AblationSet());
    tables.meta.z_full =
        objective_value(metrics_from_similarity(similarity_matrix(fv, fl)), cfg.objective);

    if (kinds.heads) {
        std::vector<ModuleId> ids;
        for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
            const auto& enc = model.encoder(side);
            for (int l = 0; l < enc.n_layers(); ++l)
                for (int h = 0; h < enc.layers[static_cast<std::size_t>(l)].n_heads; ++h)
                    ids.push_back(ModuleId::head(side, l, h));
        }
        tables.heads = score_ids(model, ids, tables.meta.z_full, fv, fl);
    }

    if (kinds.layers) {
        std::vector<ModuleId> ids;
        for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
            const auto& enc = model.encoder(side);
            for (int l = 0; l < enc.n_layers(); ++l) ids.push_back(ModuleId::layer_id(side, l));
        }
        tables.layers = score_ids(model, ids, tables.meta.z_full, fv, fl);
    }

    if (kinds.neuron_groups) {
        RewireResult rewired = rewire_ffn(model, split, cfg.eval_batch);
        result.vision_perms = std::move(rewired.vision_perms);
        result.text_perms = std::move(rewired.text_perms);
        result.rewired = std::move(rewired.model);
        tables.meta.rewired_model_hash = model_hash(result.rewired);
        const Tensor fv2 = encode_features(result.rewired.vision, EncoderSide::Vision,
                                           batch.v_tokens, AblationSet());
        const Tensor fl2 =
            encode_features(result.rewired.text, EncoderSide::Text, batch.t_tokens, AblationSet());
        tables.meta.z_full_rewired =
            objective_value(metrics_from_similarity(similarity_matrix(fv2, fl2)), cfg.objective);
        std::vector<ModuleId> ids;
        for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
            const auto& enc = result.rewired.encoder(side);
            for (int l = 0; l < enc.n_layers(); ++l) {
                const int groups =
                    group_count(enc.layers[static_cast<std::size_t>(l)].d_ff, cfg.n_groups);
                for (int g = 0; g < groups; ++g) ids.push_back(ModuleId::group(side, l, g));
            }
        }
        tables.neuron_groups = score_ids(result.rewired, ids, tables.meta.z_full_rewired, fv2, fl2);
    } else {
        result.rewired = model;
        tables.meta.rewired_model_hash = tables.meta.model_hash;
        tables.meta.z_full_rewired = tables.meta.z_full;
    }
    return result;
}

inline Json module_id_to_json(const ModuleId& id) {
    Json j{{"kind", id.kind == ModuleId::Kind::Head          ? "head"
                    : id.kind == ModuleId::Kind::NeuronGroup ? "group"
                                                             : "layer"},
           {"encoder", side_name(id.encoder)},
           {"layer", id.layer}};
    if (id.kind != ModuleId::Kind::Layer) j["index"] = id.index;
    return j;
}

inline ModuleId module_id_from_json(const Json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    const EncoderSide side = side_from_name(j.at("encoder").get<std::string>());
    const int layer = j.at("layer").get<int>();
    if (kind == "head") return ModuleId::head(side, layer, j.at("index").get<int>());
    if (kind == "group") return ModuleId::group(side, layer, j.at("index").get<int>());
    if (kind == "layer") return ModuleId::layer_id(side, layer);
    throw_error("format", "unknown module kind: " + kind);
}

inline Json arch_to_json(const CostTables::EncoderArch& a) {
    Json layers = Json::array();
    for (const auto& l : a.layers)
        layers.push_back(Json{{"n_heads", l.n_heads}, {"d_ff", l.d_ff}, {"origin", l.origin}});
    return Json{{"d", a.d},         {"d_head", a.d_head}, {"n_heads_full", a.n_heads_full},
                {"vocab", a.vocab}, {"seq", a.seq},       {"e", a.e},
                {"layers", layers}};
}

inline CostTables::EncoderArch arch_from_json(const Json& j) {
    CostTables::EncoderArch a;
    a.d = j.at("d").get<int>();
    a.d_head = j.at("d_head").get<int>();
    a.n_heads_full = j.at("n_heads_full").get<int>();
    a.vocab = j.at("vocab").get<int>();
    a.seq = j.at("seq").get<int>();
    a.e = j.at("e").get<int>();
    for (const auto& lj : j.at("layers"))
        a.layers.push_back(
            {lj.at("n_heads").get<int>(), lj.at("d_ff").get<int>(), lj.at("origin").get<int>()});
    return a;
}

// Canonical JSON for cost tables: object keys sort lexicographically and
// entry arrays keep deterministic (encoder, layer, index) order, so equal
// tables serialize to identical bytes.
inline Json cost_tables_to_json(const CostTables& tables) {
    const auto entries_json = [](const std::vector<ScoreEntry>& entries) {
        std::vector<ScoreEntry> sorted = entries;
        std::sort(sorted.begin(), sorted.end(),
                  [](const ScoreEntry& a, const ScoreEntry& b) { return a.id < b.id; });
        Json arr = Json::array();
        for (const auto& e : sorted) {
            Json j = module_id_to_json(e.id);
            j["score"] = e.score;
            arr.push_back(std::move(j));
        }
        return arr;
    };
    return Json{{"heads", entries_json(tables.heads)},
                {"neuron_groups", entries_json(tables.neuron_groups)},
                {"layers", entries_json(tables.layers)},
                {"meta",
                 {{"objective", tables.meta.objective},
                  {"split_id", tables.meta.split_id},
                  {"model_hash", tables.meta.model_hash},
                  {"rewired_model_hash", tables.meta.rewired_model_hash},
                  {"z_full", tables.meta.z_full},
                  {"z_full_rewired", tables.meta.z_full_rewired},
                  {"n_groups", tables.meta.n_groups},
                  {"metric", tables.meta.metric}}},
                {"arch", {{"vision", arch_to_json(tables.vision_arch)}, {"text", arch_to_json(tables.text_arch)}}}};
}

inline CostTables cost_tables_from_json(const Json& j) {
    CostTables tables;
    const auto read_entries = [](const Json& arr) {
        std::vector<ScoreEntry> out;
        for (const auto& e : arr)
            out.push_back({module_id_from_json(e), e.at("score").get<double>()});
        return out;
    };
    tables.heads = read_entries(j.at("heads"));
    tables.neuron_groups = read_entries(j.at("neuron_groups"));
    tables.layers = read_entries(j.at("layers"));
    const Json& meta = j.at("meta");
    tables.meta.objective = meta.at("objective").get<std::string>();
    tables.meta.split_id = meta.at("split_id").get<std::string>();
    tables.meta.model_hash = meta.at("model_hash").get<std::string>();
    tables.meta.rewired_model_hash = meta.at("rewired_model_hash").get<std::string>();
    tables.meta.z_full = meta.at("z_full").get<double>();
    tables.meta.z_full_rewired = meta.at("z_full_rewired").get<double>();
    tables.meta.n_groups = meta.at("n_groups").get<int>();
    tables.meta.metric = meta.at("metric").get<std::string>();
    tables.vision_arch = arch_from_json(j.at("arch").at("vision"));
    tables.text_arch = arch_from_json(j.at("arch").at("text"));
    return tables;
}

inline std::string cost_tables_hash(const CostTables& tables) {
    return Sha256::hex(cost_tables_to_json(tables).dump());
}

// Baseline importance scores for one module kind. Magnitude covers heads
// and neuron groups; LossGradient and the positional strategies cover
// layers. Higher score = more important.
inline std::vector<ScoreEntry> baseline_scores(const DualEncoder& model, ImportanceMetric metric,
                                               ModuleId::Kind kind, const Split* split = nullptr,
                                               int n_groups = 8, int eval_batch = 32) {
    std::vector<ScoreEntry> out;
    switch (metric) {
        case ImportanceMetric::MoPE:
            throw_error("usage", "baseline_scores: use build_cost_tables for the mope metric");
        case ImportanceMetric::Magnitude: {
            if (kind == ModuleId::Kind::Head) {
                for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
                    const auto& enc = model.encoder(side);
                    for (int l = 0; l < enc.n_layers(); ++l) {
                        const auto& lw = enc.layers[static_cast<std::size_t>(l)];
                        for (int h = 0; h < lw.n_heads; ++h) {
                            double sq = 0.0;
                            for (int i = 0; i < enc.d; ++i)
                                for (int j = h * enc.d_head; j < (h + 1) * enc.d_head; ++j)
                                    sq += lw.w_q.at(i, j) * lw.w_q.at(i, j) +
                                          lw.w_k.at(i, j) * lw.w_k.at(i, j) +
                                          lw.w_v.at(i, j) * lw.w_v.at(i, j);
                            for (int i = h * enc.d_head; i < (h + 1) * enc.d_head; ++i)
                                for (int j = 0; j < enc.d; ++j)
                                    sq += lw.w_o.at(i, j) * lw.w_o.at(i, j);
                            out.push_back({ModuleId::head(side, l, h), std::sqrt(sq)});
                        }
                    }
                }
            } else if (kind == ModuleId::Kind::NeuronGroup) {
                for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
                    const auto& enc = model.encoder(side);
                    for (int l = 0; l < enc.n_layers(); ++l) {
                        const auto& lw = enc.layers[static_cast<std::size_t>(l)];
                        const int groups = group_count(lw.d_ff, n_groups);
                        for (int g = 0; g < groups; ++g) {
                            const auto [lo, hi] = group_range(lw.d_ff, n_groups, g);
                            double sq = 0.0;
                            for (int j = lo; j < hi; ++j)
                                for (int i = 0; i < enc.d; ++i)
                                    sq += lw.w1.at(i, j) * lw.w1.at(i, j) +
                                          lw.w2.at(j, i) * lw.w2.at(j, i);
                            out.push_back({ModuleId::group(side, l, g), std::sqrt(sq)});
                        }
                    }
                }
            } else {
                throw_error("usage", "magnitude baseline applies to heads or neuron groups");
            }
            break;
        }
        case ImportanceMetric::LossGradient: {
            if (kind != ModuleId::Kind::Layer)
                throw_error("usage", "loss-gradient baseline applies to layers");
            if (!split) throw_error("usage", "loss-gradient baseline requires a split");
            const auto [v, t] = layer_gradient_scores(model, *split, eval_batch);
            for (int l = 0; l < static_cast<int>(v.size()); ++l)
                out.push_back({ModuleId::layer_id(EncoderSide::Vision, l), v[static_cast<std::size_t>(l)]});
            for (int l = 0; l < static_cast<int>(t.size()); ++l)
                out.push_back({ModuleId::layer_id(EncoderSide::Text, l), t[static_cast<std::size_t>(l)]});
            break;
        }
        case ImportanceMetric::EveryOther:
        case ImportanceMetric::TopLayers:
        case ImportanceMetric::BottomLayers: {
            if (kind != ModuleId::Kind::Layer)
                throw_error("usage", std::string(metric_name(metric)) + " applies to layers");
            for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
                const int L = model.encoder(side).n_layers();
                for (int l = 0; l < L; ++l) {
                    double score = 0.0;
                    if (metric == ImportanceMetric::EveryOther)
                        score = l % 2 == 0 ? 1.0 : 0.0;  // odd layers drop first
                    else if (metric == ImportanceMetric::TopLayers)
                        score = static_cast<double>(L - l);  // deepest layers drop first
                    else
                        score = static_cast<double>(l + 1);  // earliest layers drop first
                    out.push_back({ModuleId::layer_id(side, l), score});
                }
            }
            break;
        }
    }
    return out;
}

}  // namespace mope
