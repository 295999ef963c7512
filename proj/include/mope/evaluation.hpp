#pragma once

#include <algorithm>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "mope/model.hpp"

namespace mope {

struct RetrievalMetrics {
    std::map<int, double> tr_at;  // image -> text, keyed by requested K
    std::map<int, double> ir_at;  // text -> image
    double tr_mean = 0.0;
    double ir_mean = 0.0;
    double recall_mean = 0.0;
};

struct EvalObjective {
    enum class Variant { TRMean, IRMean, RecallMean };
    Variant variant = Variant::RecallMean;
    std::vector<int> ks{1, 5, 10};

    std::string name() const {
        switch (variant) {
            case Variant::TRMean: return "tr-mean";
            case Variant::IRMean: return "ir-mean";
            case Variant::RecallMean: return "recall-mean";
        }
        return "recall-mean";
    }

    static EvalObjective from_name(const std::string& s) {
        EvalObjective o;
        if (s == "tr-mean")
            o.variant = Variant::TRMean;
        else if (s == "ir-mean")
            o.variant = Variant::IRMean;
        else if (s == "recall-mean")
            o.variant = Variant::RecallMean;
        else
            throw_error("usage", "unknown objective: " + s);
        return o;
    }
};

enum class Direction { ImageToText, TextToImage };

// S = Fv * Fl^T; with unit-norm rows these are cosine similarities.
inline Tensor similarity_matrix(const Tensor& fv, const Tensor& fl) {
    if (fv.rank() != 2 || fl.rank() != 2 || fv.dim(1) != fl.dim(1))
        throw_error("dimension", "similarity_matrix: embedding dims mismatch");
    const int n = fv.dim(0), m = fl.dim(0), e = fv.dim(1);
    Tensor s({n, m});
    for (int i = 0; i < n; ++i) {
        const double* a = fv.data() + static_cast<std::size_t>(i) * e;
        for (int j = 0; j < m; ++j) {
            const double* b = fl.data() + static_cast<std::size_t>(j) * e;
            double acc = 0.0;
            for (int k = 0; k < e; ++k) acc += a[k] * b[k];
            s.at(i, j) = acc;
        }
    }
    return s;
}

// Fraction of queries whose diagonal match ranks in the top k under
// descending similarity; ties break by ascending index, so results are
// fully deterministic.
inline double recall_at_k(const Tensor& s, int k, Direction dir) {
    if (s.rank() != 2 || s.dim(0) != s.dim(1))
        throw_error("dimension", "recall_at_k: square matrix required");
    const int n = s.dim(0);
    if (k < 1 || k > n) throw_error("range", "recall_at_k: k out of range");
    int hits = 0;
    for (int q = 0; q < n; ++q) {
        const double truth = s.at(q, q);
        int rank = 1;
        for (int j = 0; j < n; ++j) {
            if (j == q) continue;
            const double v = dir == Direction::ImageToText ? s.at(q, j) : s.at(j, q);
            if (v > truth || (v == truth && j < q)) ++rank;
        }
        if (rank <= k) ++hits;
    }
    return static_cast<double>(hits) / n;
}

// Metrics over the standard K set; Ks larger than the gallery are clamped
// (with a warning) so tiny splits still evaluate.
inline RetrievalMetrics metrics_from_similarity(const Tensor& s,
                                                const std::vector<int>& ks = {1, 5, 10}) {
    const int n = s.dim(0);
    RetrievalMetrics m;
    static std::atomic<bool> warned{false};
    double tr_sum = 0.0, ir_sum = 0.0;
    for (int k : ks) {
        int kc = k;
        if (kc > n) {
            if (!warned.exchange(true))
                std::cerr << "warning: recall K clamped to dataset size " << n << "\n";
            kc = n;
        }
        m.tr_at[k] = recall_at_k(s, kc, Direction::ImageToText);
        m.ir_at[k] = recall_at_k(s, kc, Direction::TextToImage);
        tr_sum += m.tr_at[k];
        ir_sum += m.ir_at[k];
    }
    m.tr_mean = tr_sum / static_cast<double>(ks.size());
    m.ir_mean = ir_sum / static_cast<double>(ks.size());
    m.recall_mean = (tr_sum + ir_sum) / (2.0 * static_cast<double>(ks.size()));
    return m;
}

inline double objective_value(const RetrievalMetrics& m, const EvalObjective& obj) {
    for (int k : obj.ks)
        if (!m.tr_at.count(k) || !m.ir_at.count(k))
            throw_error("contract", "objective_value: metrics missing K=" + std::to_string(k));
    switch (obj.variant) {
        case EvalObjective::Variant::TRMean: return m.tr_mean;
        case EvalObjective::Variant::IRMean: return m.ir_mean;
        case EvalObjective::Variant::RecallMean: return m.recall_mean;
    }
    return m.recall_mean;
}

struct PairBatch {
    std::vector<std::vector<int>> v_tokens;
    std::vector<std::vector<int>> t_tokens;
    std::size_t size() const { return v_tokens.size(); }
};

// Encode one side of every pair in fixed-size chunks. Chunking never
// changes values: each example's forward pass is independent.
inline Tensor encode_features(const EncoderWeights& enc, EncoderSide side,
                              const std::vector<std::vector<int>>& tokens,
                              const AblationSet& ablation, int chunk = 64) {
    const int n = static_cast<int>(tokens.size());
    Tensor features({n, enc.e});
    for (int start = 0; start < n; start += chunk) {
        const int count = std::min(chunk, n - start);
        std::vector<std::vector<int>> part(tokens.begin() + start, tokens.begin() + start + count);
        EncodeResult r = encode(enc, side, part, ablation);
        for (int i = 0; i < count; ++i)
            for (int j = 0; j < enc.e; ++j) features.at(start + i, j) = r.features.at(i, j);
    }
    return features;
}

// Full retrieval evaluation of a paired split under an optional ablation.
inline RetrievalMetrics evaluate(const DualEncoder& model, const PairBatch& split,
                                 const AblationSet& ablation = AblationSet(),
                                 const std::vector<int>& ks = {1, 5, 10}) {
    if (split.size() == 0) throw_error("input", "evaluate: empty split");
    if (split.v_tokens.size() != split.t_tokens.size())
        throw_error("input", "evaluate: unpaired split");
    ablation.validate(model);
    const Tensor fv = encode_features(model.vision, EncoderSide::Vision, split.v_tokens, ablation);
    const Tensor fl = encode_features(model.text, EncoderSide::Text, split.t_tokens, ablation);
    return metrics_from_similarity(similarity_matrix(fv, fl), ks);
}

}  // namespace mope
