#pragma once

#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "mope/autodiff.hpp"
#include "mope/common.hpp"
#include "mope/tensor.hpp"

namespace mope {

struct ModelConfig {
    int d = 64;
    int n_heads = 4;
    int d_ff = 0;  // 0 -> defaults to 4*d
    int n_layers_v = 4;
    int n_layers_t = 4;
    int vocab_v = 64;
    int vocab_t = 64;
    int seq_v = 8;
    int seq_t = 8;
    int e = 64;
    std::uint64_t seed = 42;

    int d_head() const { return d / n_heads; }
    int ffn_dim() const { return d_ff > 0 ? d_ff : 4 * d; }

    void validate() const {
        if (d < 1 || n_heads < 1 || n_layers_v < 1 || n_layers_t < 1 || vocab_v < 1 ||
            vocab_t < 1 || seq_v < 1 || seq_t < 1 || e < 1)
            throw_error("config", "model config: all sizes must be >= 1");
        if (d % n_heads != 0) throw_error("config", "model config: d must be divisible by n_heads");
        if (d_ff < 0) throw_error("config", "model config: d_ff must be >= 0");
    }
};

enum class EncoderSide { Vision, Text };

inline const char* side_name(EncoderSide s) { return s == EncoderSide::Vision ? "vision" : "text"; }

inline EncoderSide side_from_name(const std::string& s) {
    if (s == "vision") return EncoderSide::Vision;
    if (s == "text") return EncoderSide::Text;
    throw_error("format", "unknown encoder side: " + s);
}

// Addressable prunable unit: one attention head, one FFN neuron group, or
// one whole transformer layer. Layer indices refer to the model's current
// architecture, not the original one.
struct ModuleId {
    enum class Kind { Head, NeuronGroup, Layer };
    Kind kind = Kind::Head;
    EncoderSide encoder = EncoderSide::Vision;
    int layer = 0;
    int index = 0;  // head or group index; unused for Layer

    static ModuleId head(EncoderSide e, int l, int h) { return {Kind::Head, e, l, h}; }
    static ModuleId group(EncoderSide e, int l, int g) { return {Kind::NeuronGroup, e, l, g}; }
    static ModuleId layer_id(EncoderSide e, int l) { return {Kind::Layer, e, l, 0}; }

    friend bool operator<(const ModuleId& a, const ModuleId& b) {
        const auto key = [](const ModuleId& m) {
            return std::tuple<int, int, int, int>(static_cast<int>(m.kind),
                                                  static_cast<int>(m.encoder), m.layer, m.index);
        };
        return key(a) < key(b);
    }
    friend bool operator==(const ModuleId& a, const ModuleId& b) {
        return a.kind == b.kind && a.encoder == b.encoder && a.layer == b.layer &&
               a.index == b.index;
    }

    std::string str() const {
        std::string k = kind == Kind::Head ? "head" : kind == Kind::NeuronGroup ? "group" : "layer";
        std::string s = k + "/" + side_name(encoder) + "/" + std::to_string(layer);
        if (kind != Kind::Layer) s += "/" + std::to_string(index);
        return s;
    }
};

// One transformer block. Q/K/V project d -> n_heads*d_head; width pruning
// shrinks n_heads and d_ff but never the residual width d.
struct LayerWeights {
    Tensor w_q, b_q, w_k, b_k, w_v, b_v;  // d x (h*dh), (h*dh)
    Tensor w_o, b_o;                      // (h*dh) x d, (d)
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;    // (d)
    Tensor w1, b1;                        // d x f, (f)   up-projection
    Tensor w2, b2;                        // f x d, (d)   down-projection
    int n_heads = 0;
    int d_ff = 0;
    int origin = 0;  // layer index in the unpruned ancestor, for layer mapping
};

struct EncoderWeights {
    Tensor tok_embed;  // vocab x d
    Tensor pos_embed;  // seq x d
    std::vector<LayerWeights> layers;
    Tensor final_g, final_b;  // (d)
    Tensor proj;              // d x e
    int d = 0;
    int d_head = 0;
    int n_heads_full = 0;  // head count before any pruning, for width reporting
    int vocab = 0;
    int seq = 0;
    int e = 0;

    int n_layers() const { return static_cast<int>(layers.size()); }

    // Reported width = d * (kept-head fraction); the residual stream stays d.
    double reported_width() const {
        if (layers.empty()) return d;
        double kept = 0.0;
        for (const auto& l : layers) kept += l.n_heads;
        return static_cast<double>(d) * kept / (static_cast<double>(n_heads_full) * layers.size());
    }
};

struct DualEncoder {
    EncoderWeights vision;
    EncoderWeights text;
    Tensor logit_scale;  // scalar, ln(1/temperature)
    ModelConfig config;  // configuration the model was initialized from

    const EncoderWeights& encoder(EncoderSide s) const {
        return s == EncoderSide::Vision ? vision : text;
    }
    EncoderWeights& encoder(EncoderSide s) { return s == EncoderSide::Vision ? vision : text; }
};

// Non-destructive forward-time mask. Group ids resolve to neuron ranges via
// n_groups (last group absorbs any remainder).
struct AblationSet {
    std::set<ModuleId> ids;
    int n_groups = 8;

    AblationSet() = default;
    explicit AblationSet(std::set<ModuleId> s, int groups = 8)
        : ids(std::move(s)), n_groups(groups) {}
    static AblationSet single(ModuleId id, int groups = 8) {
        return AblationSet(std::set<ModuleId>{id}, groups);
    }

    bool empty() const { return ids.empty(); }

    bool layer_ablated(EncoderSide e, int l) const {
        return ids.count(ModuleId::layer_id(e, l)) > 0;
    }
    bool head_ablated(EncoderSide e, int l, int h) const {
        return ids.count(ModuleId::head(e, l, h)) > 0;
    }
    std::vector<int> groups_ablated(EncoderSide e, int l) const {
        std::vector<int> out;
        for (const auto& id : ids)
            if (id.kind == ModuleId::Kind::NeuronGroup && id.encoder == e && id.layer == l)
                out.push_back(id.index);
        return out;
    }

    bool touches(EncoderSide e) const {
        for (const auto& id : ids)
            if (id.encoder == e) return true;
        return false;
    }

    void validate(const DualEncoder& model) const {
        if (n_groups < 1) throw_error("id", "ablation: n_groups must be >= 1");
        for (const auto& id : ids) {
            const auto& enc = model.encoder(id.encoder);
            if (id.layer < 0 || id.layer >= enc.n_layers())
                throw_error("id", "ablation: layer index out of range: " + id.str());
            const auto& lw = enc.layers[static_cast<std::size_t>(id.layer)];
            if (id.kind == ModuleId::Kind::Head && (id.index < 0 || id.index >= lw.n_heads))
                throw_error("id", "ablation: head index out of range: " + id.str());
            if (id.kind == ModuleId::Kind::NeuronGroup &&
                (id.index < 0 || id.index >= std::min(n_groups, lw.d_ff)))
                throw_error("id", "ablation: group index out of range: " + id.str());
        }
    }
};

// Neuron index range [lo, hi) covered by group g of a layer with f neurons
// split into n_groups blocks; the last block absorbs the remainder.
inline std::pair<int, int> group_range(int f, int n_groups, int g) {
    const int groups = std::min(n_groups, f);
    if (g < 0 || g >= groups) throw_error("id", "group index out of range");
    const int base = f / groups;
    const int lo = g * base;
    const int hi = (g == groups - 1) ? f : lo + base;
    return {lo, hi};
}

inline int group_count(int f, int n_groups) { return std::min(n_groups, f); }

namespace detail {

inline Tensor normal_tensor(Rng& rng, std::vector<int> shape, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

inline LayerWeights init_layer(Rng& rng, int d, int n_heads, int d_head, int d_ff, int origin) {
    LayerWeights lw;
    const int hd = n_heads * d_head;
    const double std_w = 0.02;
    lw.w_q = normal_tensor(rng, {d, hd}, std_w);
    lw.b_q = Tensor::zeros({hd});
    lw.w_k = normal_tensor(rng, {d, hd}, std_w);
    lw.b_k = Tensor::zeros({hd});
    lw.w_v = normal_tensor(rng, {d, hd}, std_w);
    lw.b_v = Tensor::zeros({hd});
    lw.w_o = normal_tensor(rng, {hd, d}, std_w);
    lw.b_o = Tensor::zeros({d});
    lw.ln1_g = Tensor::full({d}, 1.0);
    lw.ln1_b = Tensor::zeros({d});
    lw.ln2_g = Tensor::full({d}, 1.0);
    lw.ln2_b = Tensor::zeros({d});
    lw.w1 = normal_tensor(rng, {d, d_ff}, std_w);
    lw.b1 = Tensor::zeros({d_ff});
    lw.w2 = normal_tensor(rng, {d_ff, d}, std_w);
    lw.b2 = Tensor::zeros({d});
    lw.n_heads = n_heads;
    lw.d_ff = d_ff;
    lw.origin = origin;
    return lw;
}

inline EncoderWeights init_encoder(Rng& rng, const ModelConfig& cfg, int n_layers, int vocab,
                                   int seq) {
    EncoderWeights enc;
    enc.d = cfg.d;
    enc.d_head = cfg.d_head();
    enc.n_heads_full = cfg.n_heads;
    enc.vocab = vocab;
    enc.seq = seq;
    enc.e = cfg.e;
    enc.tok_embed = normal_tensor(rng, {vocab, cfg.d}, 0.02);
    enc.pos_embed = normal_tensor(rng, {seq, cfg.d}, 0.02);
    enc.layers.reserve(static_cast<std::size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l)
        enc.layers.push_back(init_layer(rng, cfg.d, cfg.n_heads, cfg.d_head(), cfg.ffn_dim(), l));
    enc.final_g = Tensor::full({cfg.d}, 1.0);
    enc.final_b = Tensor::zeros({cfg.d});
    enc.proj = normal_tensor(rng, {cfg.d, cfg.e}, 0.02);
    return enc;
}

}  // namespace detail

// Seeded initialization: weights from Normal(0, 0.02), biases zero,
// logit_scale = ln(1/0.07). Same seed gives bitwise-identical models.
inline DualEncoder init_model(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    DualEncoder model;
    model.config = cfg;
    model.vision = detail::init_encoder(rng, cfg, cfg.n_layers_v, cfg.vocab_v, cfg.seq_v);
    model.text = detail::init_encoder(rng, cfg, cfg.n_layers_t, cfg.vocab_t, cfg.seq_t);
    model.logit_scale = Tensor::scalar(std::log(1.0 / 0.07));
    return model;
}

// Fixed, deterministic parameter ordering (drives the optimizer, the
// checkpoint layout and model hashing).
inline std::vector<std::pair<std::string, const Tensor*>> named_parameters(
    const DualEncoder& model) {
    std::vector<std::pair<std::string, const Tensor*>> out;
    const auto add_encoder = [&](const char* prefix, const EncoderWeights& enc) {
        const std::string p(prefix);
        out.emplace_back(p + ".tok_embed", &enc.tok_embed);
        out.emplace_back(p + ".pos_embed", &enc.pos_embed);
        for (int l = 0; l < enc.n_layers(); ++l) {
            const auto& lw = enc.layers[static_cast<std::size_t>(l)];
            const std::string lp = p + ".layers." + std::to_string(l) + ".";
            out.emplace_back(lp + "w_q", &lw.w_q);
            out.emplace_back(lp + "b_q", &lw.b_q);
            out.emplace_back(lp + "w_k", &lw.w_k);
            out.emplace_back(lp + "b_k", &lw.b_k);
            out.emplace_back(lp + "w_v", &lw.w_v);
            out.emplace_back(lp + "b_v", &lw.b_v);
            out.emplace_back(lp + "w_o", &lw.w_o);
            out.emplace_back(lp + "b_o", &lw.b_o);
            out.emplace_back(lp + "ln1_g", &lw.ln1_g);
            out.emplace_back(lp + "ln1_b", &lw.ln1_b);
            out.emplace_back(lp + "ln2_g", &lw.ln2_g);
            out.emplace_back(lp + "ln2_b", &lw.ln2_b);
            out.emplace_back(lp + "w1", &lw.w1);
            out.emplace_back(lp + "b1", &lw.b1);
            out.emplace_back(lp + "w2", &lw.w2);
            out.emplace_back(lp + "b2", &lw.b2);
        }
        out.emplace_back(p + ".final_g", &enc.final_g);
        out.emplace_back(p + ".final_b", &enc.final_b);
        out.emplace_back(p + ".proj", &enc.proj);
    };
    add_encoder("vision", model.vision);
    add_encoder("text", model.text);
    out.emplace_back("logit_scale", &model.logit_scale);
    return out;
}

inline std::vector<std::pair<std::string, Tensor*>> named_parameters(DualEncoder& model) {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& [name, t] : named_parameters(static_cast<const DualEncoder&>(model)))
        out.emplace_back(name, const_cast<Tensor*>(t));
    return out;
}

// Binds model tensors to graph nodes: leaves when trainable, constants
// otherwise. Each tensor is bound once so gradients accumulate correctly
// across layers and both loss paths.
class ParamBinder {
public:
    explicit ParamBinder(bool trainable) : trainable_(trainable) {}

    NodePtr operator()(const Tensor& t) {
        auto it = bound_.find(&t);
        if (it != bound_.end()) return it->second;
        NodePtr n = trainable_ ? leaf(t) : constant(t);
        bound_.emplace(&t, n);
        return n;
    }

    NodePtr find(const Tensor& t) const {
        auto it = bound_.find(&t);
        return it == bound_.end() ? nullptr : it->second;
    }

    bool trainable() const { return trainable_; }

private:
    bool trainable_;
    std::unordered_map<const Tensor*, NodePtr> bound_;
};

struct EncodeGraph {
    NodePtr features;              // (B, e), rows unit-norm
    std::vector<NodePtr> hiddens;  // one (B, S, d) per retained layer
    std::vector<NodePtr> ffn_acts;  // post-GELU intermediate output per layer
    std::vector<std::vector<NodePtr>> head_ctx;  // per layer, per head context
};

// Pre-norm transformer forward over a batch of fixed-length token
// sequences. Ablated heads and neuron groups contribute exactly zero;
// ablated layers pass the residual stream through unchanged.
inline EncodeGraph encode_graph(const EncoderWeights& enc, EncoderSide side,
                                const std::vector<std::vector<int>>& tokens,
                                const AblationSet& ablation, ParamBinder& bind) {
    if (tokens.empty()) throw_error("input", "encode: empty batch");
    for (const auto& seq : tokens) {
        if (static_cast<int>(seq.size()) != enc.seq)
            throw_error("input", "encode: sequence length mismatch");
        for (int id : seq)
            if (id < 0 || id >= enc.vocab) throw_error("input", "encode: token id out of range");
    }
    const int batch = static_cast<int>(tokens.size());
    const int seq = enc.seq;
    const int d = enc.d;

    NodePtr x = embedding(bind(enc.tok_embed), tokens);
    {
        // Positional embeddings broadcast over the batch.
        NodePtr pos = bind(enc.pos_embed);
        Tensor rep({batch, seq, d});
        for (int b = 0; b < batch; ++b)
            for (int s = 0; s < seq; ++s)
                for (int j = 0; j < d; ++j)
                    rep.at(b, s, j) = enc.pos_embed.at(s, j);
        if (bind.trainable()) {
            // Differentiable broadcast: concat of per-batch slices would be
            // wasteful; use add with a custom-expanded node.
            auto expanded = detail::make_op(std::move(rep), OpTag::AddBias, {pos});
            expanded->backprop = [batch, seq, d](Node& self) {
                auto& p = self.parents[0];
                detail::ensure_grad(*p);
                for (int b = 0; b < batch; ++b)
                    for (int s = 0; s < seq; ++s) {
                        const double* g = self.grad.data() + (static_cast<std::size_t>(b) * seq + s) * d;
                        double* dst = p->grad.data() + static_cast<std::size_t>(s) * d;
                        for (int j = 0; j < d; ++j) dst[j] += g[j];
                    }
            };
            x = add(x, expanded);
        } else {
            x = add(x, constant(std::move(rep)));
        }
    }

    EncodeGraph out;
    out.hiddens.reserve(enc.layers.size());
    out.ffn_acts.reserve(enc.layers.size());
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(enc.d_head));

    for (int l = 0; l < enc.n_layers(); ++l) {
        const auto& lw = enc.layers[static_cast<std::size_t>(l)];
        if (ablation.layer_ablated(side, l)) {
            out.hiddens.push_back(x);
            out.ffn_acts.push_back(nullptr);
            out.head_ctx.emplace_back();
            continue;
        }
        // Attention sublayer.
        NodePtr h = layer_norm(x, bind(lw.ln1_g), bind(lw.ln1_b));
        NodePtr q = add_bias(matmul(h, bind(lw.w_q)), bind(lw.b_q));
        NodePtr k = add_bias(matmul(h, bind(lw.w_k)), bind(lw.b_k));
        NodePtr v = add_bias(matmul(h, bind(lw.w_v)), bind(lw.b_v));
        std::vector<NodePtr> contexts;
        contexts.reserve(static_cast<std::size_t>(lw.n_heads));
        for (int head = 0; head < lw.n_heads; ++head) {
            if (ablation.head_ablated(side, l, head)) {
                contexts.push_back(constant(Tensor::zeros({batch, seq, enc.d_head})));
                continue;
            }
            const int off = head * enc.d_head;
            NodePtr qh = slice_last(q, off, enc.d_head);
            NodePtr kh = slice_last(k, off, enc.d_head);
            NodePtr vh = slice_last(v, off, enc.d_head);
            NodePtr scores = scale(matmul(qh, transpose_last(kh)), attn_scale);
            NodePtr attn = softmax_rows(scores);
            contexts.push_back(matmul(attn, vh));
        }
        NodePtr ctx = concat_last(contexts);
        out.head_ctx.push_back(contexts);
        NodePtr attn_out = add_bias(matmul(ctx, bind(lw.w_o)), bind(lw.b_o));
        x = add(x, attn_out);

        // FFN sublayer.
        NodePtr h2 = layer_norm(x, bind(lw.ln2_g), bind(lw.ln2_b));
        NodePtr act = gelu(add_bias(matmul(h2, bind(lw.w1)), bind(lw.b1)));
        const auto ablated_groups = ablation.groups_ablated(side, l);
        if (!ablated_groups.empty()) {
            std::vector<std::pair<int, int>> ranges;
            ranges.reserve(ablated_groups.size());
            for (int g : ablated_groups) ranges.push_back(group_range(lw.d_ff, ablation.n_groups, g));
            act = zero_last_ranges(act, ranges);
        }
        out.ffn_acts.push_back(act);
        NodePtr ffn_out = add_bias(matmul(act, bind(lw.w2)), bind(lw.b2));
        x = add(x, ffn_out);
        out.hiddens.push_back(x);
    }

    x = layer_norm(x, bind(enc.final_g), bind(enc.final_b));
    NodePtr pooled = mean_axis1(x);
    out.features = l2_normalize_rows(matmul(pooled, bind(enc.proj)));
    return out;
}

struct EncodeResult {
    Tensor features;
    std::vector<Tensor> hiddens;
};

// Plain (no-gradient) forward pass.
inline EncodeResult encode(const EncoderWeights& enc, EncoderSide side,
                           const std::vector<std::vector<int>>& tokens,
                           const AblationSet& ablation = AblationSet()) {
    ParamBinder bind(false);
    EncodeGraph g = encode_graph(enc, side, tokens, ablation, bind);
    EncodeResult r;
    r.features = g.features->value;
    r.hiddens.reserve(g.hiddens.size());
    for (const auto& h : g.hiddens) r.hiddens.push_back(h->value);
    return r;
}

inline EncodeResult encode(const EncoderWeights& enc, EncoderSide side,
                           const std::vector<int>& tokens,
                           const AblationSet& ablation = AblationSet()) {
    return encode(enc, side, std::vector<std::vector<int>>{tokens}, ablation);
}

}  // namespace mope
