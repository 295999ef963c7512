#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "mope/model.hpp"

namespace mope {

// Closed-form parameter count for one encoder:
//   embeddings:  vocab*d + seq*d
//   per layer:   3*(d*(h*dh) + h*dh)        query/key/value + biases
//              + (h*dh)*d + d               output projection + bias
//              + 2*(2d)                     two layer norms
//              + d*f + f + f*d + d          FFN up/down + biases
//   final norm:  2d
//   projection:  d*e
inline long long param_count(const EncoderWeights& enc) {
    const long long d = enc.d;
    long long total = static_cast<long long>(enc.vocab) * d + static_cast<long long>(enc.seq) * d;
    for (const auto& lw : enc.layers) {
        const long long hd = static_cast<long long>(lw.n_heads) * enc.d_head;
        const long long f = lw.d_ff;
        total += 3 * (d * hd + hd) + hd * d + d + 2 * (2 * d) + d * f + f + f * d + d;
    }
    total += 2 * d;
    total += d * static_cast<long long>(enc.e);
    return total;
}

// Whole model: both encoders plus the logit scale.
inline long long param_count(const DualEncoder& model) {
    return param_count(model.vision) + param_count(model.text) + 1;
}

// Actual element count over all tensors; must agree with the formula.
inline long long param_count_tensors(const DualEncoder& model) {
    long long total = 0;
    for (const auto& [name, t] : named_parameters(model))
        total += static_cast<long long>(t->numel());
    return total;
}

namespace detail {

inline Tensor keep_cols(const Tensor& t, const std::vector<int>& cols) {
    const int rows = t.dim(0);
    const int out_c = static_cast<int>(cols.size());
    Tensor out({rows, out_c});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < out_c; ++j)
            out.at(i, j) = t.at(i, cols[static_cast<std::size_t>(j)]);
    return out;
}

inline Tensor keep_rows(const Tensor& t, const std::vector<int>& rows) {
    const int out_r = static_cast<int>(rows.size());
    const int cols = t.dim(1);
    Tensor out({out_r, cols});
    for (int i = 0; i < out_r; ++i)
        for (int j = 0; j < cols; ++j)
            out.at(i, j) = t.at(rows[static_cast<std::size_t>(i)], j);
    return out;
}

inline Tensor keep_entries(const Tensor& t, const std::vector<int>& idx) {
    Tensor out({static_cast<int>(idx.size())});
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = t[static_cast<std::size_t>(idx[i])];
    return out;
}

}  // namespace detail

// Physically remove the listed modules and return a new model; the input
// model is left untouched. Head removal drops the head's Q/K/V columns and
// W_o rows; neuron-group removal drops W1 columns / W2 rows; layer removal
// drops the whole block. Plans that would empty a layer or an encoder are
// refused.
inline DualEncoder structural_prune(const DualEncoder& model, const std::vector<ModuleId>& remove,
                                    int n_groups = 8) {
    // Index the removals per encoder/layer.
    struct LayerEdit {
        std::set<int> heads;
        std::set<int> groups;
        bool drop_layer = false;
    };
    std::map<std::pair<int, int>, LayerEdit> edits;  // (encoder, layer) -> edit
    for (const auto& id : remove) {
        const auto& enc = model.encoder(id.encoder);
        if (id.layer < 0 || id.layer >= enc.n_layers())
            throw_error("id", "prune: layer index out of range: " + id.str());
        const auto& lw = enc.layers[static_cast<std::size_t>(id.layer)];
        auto& edit = edits[{static_cast<int>(id.encoder), id.layer}];
        switch (id.kind) {
            case ModuleId::Kind::Head:
                if (id.index < 0 || id.index >= lw.n_heads)
                    throw_error("id", "prune: head index out of range: " + id.str());
                if (!edit.heads.insert(id.index).second)
                    throw_error("id", "prune: duplicate head in plan: " + id.str());
                break;
            case ModuleId::Kind::NeuronGroup:
                if (id.index < 0 || id.index >= group_count(lw.d_ff, n_groups))
                    throw_error("id", "prune: group index out of range: " + id.str());
                if (!edit.groups.insert(id.index).second)
                    throw_error("id", "prune: duplicate group in plan: " + id.str());
                break;
            case ModuleId::Kind::Layer:
                edit.drop_layer = true;
                break;
        }
    }
    // Disjointness: a removed layer must not also list its heads/groups.
    for (const auto& [key, edit] : edits)
        if (edit.drop_layer && (!edit.heads.empty() || !edit.groups.empty()))
            throw_error("plan", "prune: plan lists modules inside a removed layer");

    DualEncoder out = model;
    for (EncoderSide side : {EncoderSide::Vision, EncoderSide::Text}) {
        auto& enc = out.encoder(side);
        std::vector<LayerWeights> kept;
        kept.reserve(enc.layers.size());
        for (int l = 0; l < enc.n_layers(); ++l) {
            auto it = edits.find({static_cast<int>(side), l});
            if (it == edits.end()) {
                kept.push_back(enc.layers[static_cast<std::size_t>(l)]);
                continue;
            }
            const LayerEdit& edit = it->second;
            if (edit.drop_layer) continue;
            LayerWeights lw = enc.layers[static_cast<std::size_t>(l)];
            if (!edit.heads.empty()) {
                if (static_cast<int>(edit.heads.size()) >= lw.n_heads)
                    throw_error("refusal", "prune: plan would remove every head of a layer");
                std::vector<int> head_cols;
                std::vector<int> kept_heads;
                for (int h = 0; h < lw.n_heads; ++h) {
                    if (edit.heads.count(h)) continue;
                    kept_heads.push_back(h);
                    for (int j = 0; j < enc.d_head; ++j) head_cols.push_back(h * enc.d_head + j);
                }
                lw.w_q = detail::keep_cols(lw.w_q, head_cols);
                lw.b_q = detail::keep_entries(lw.b_q, head_cols);
                lw.w_k = detail::keep_cols(lw.w_k, head_cols);
                lw.b_k = detail::keep_entries(lw.b_k, head_cols);
                lw.w_v = detail::keep_cols(lw.w_v, head_cols);
                lw.b_v = detail::keep_entries(lw.b_v, head_cols);
                lw.w_o = detail::keep_rows(lw.w_o, head_cols);
                lw.n_heads = static_cast<int>(kept_heads.size());
            }
            if (!edit.groups.empty()) {
                const int groups = group_count(lw.d_ff, n_groups);
                if (static_cast<int>(edit.groups.size()) >= groups)
                    throw_error("refusal", "prune: plan would remove every neuron group of a layer");
                std::vector<int> neuron_idx;
                for (int g = 0; g < groups; ++g) {
                    if (edit.groups.count(g)) continue;
                    const auto [lo, hi] = group_range(lw.d_ff, n_groups, g);
                    for (int j = lo; j < hi; ++j) neuron_idx.push_back(j);
                }
                lw.w1 = detail::keep_cols(lw.w1, neuron_idx);
                lw.b1 = detail::keep_entries(lw.b1, neuron_idx);
                lw.w2 = detail::keep_rows(lw.w2, neuron_idx);
                lw.d_ff = static_cast<int>(neuron_idx.size());
            }
            kept.push_back(std::move(lw));
        }
        if (kept.empty()) throw_error("refusal", "prune: plan would remove every layer of an encoder");
        enc.layers = std::move(kept);
    }
    return out;
}

}  // namespace mope
