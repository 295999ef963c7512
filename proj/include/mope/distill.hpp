#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mope/data.hpp"
#include "mope/evaluation.hpp"
#include "mope/model.hpp"

namespace mope {

struct DistillConfig {
    double alpha = 1.0;     // weight of the similarity-matrix loss
    double beta = 1000.0;   // weight of the feature loss
    double gamma = 1.0;     // weight of the hidden-state loss
    double lr = 3e-4;
    double warmup_ratio = 0.1;
    int epochs = 20;
    int batch_size = 32;
    double weight_decay = 3e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    std::uint64_t seed = 42;
    bool freeze_logit_scale = false;
    // Student similarity matrices use raw cosine by default; flip to apply
    // the student's logit scale inside the similarity loss as well.
    bool scale_in_sim = false;
    bool sim_bidirectional = true;

    void validate() const {
        if (alpha < 0 || beta < 0 || gamma < 0)
            throw_error("config", "distill config: loss weights must be >= 0");
        if (warmup_ratio < 0.0 || warmup_ratio >= 1.0)
            throw_error("config", "distill config: warmup_ratio must be in [0, 1)");
        if (epochs < 0 || batch_size < 2)
            throw_error("config", "distill config: epochs >= 0, batch_size >= 2");
        if (lr <= 0.0) throw_error("config", "distill config: lr must be positive");
    }
};

// Pairs each retained student layer with the teacher layer it originated
// from (strictly increasing teacher indices).
struct LayerMap {
    std::vector<int> vision;
    std::vector<int> text;
};

inline std::vector<int> derive_side_map(const EncoderWeights& student,
                                        const EncoderWeights& teacher) {
    std::vector<int> map;
    map.reserve(student.layers.size());
    int prev = -1;
    for (const auto& sl : student.layers) {
        int found = -1;
        for (int tl = 0; tl < teacher.n_layers(); ++tl)
            if (teacher.layers[static_cast<std::size_t>(tl)].origin == sl.origin) {
                found = tl;
                break;
            }
        if (found < 0)
            throw_error("contract", "layer map: student layer origin missing from teacher");
        if (found <= prev) throw_error("contract", "layer map: teacher indices must increase");
        prev = found;
        map.push_back(found);
    }
    return map;
}

inline LayerMap derive_layer_map(const DualEncoder& student, const DualEncoder& teacher) {
    return {derive_side_map(student.vision, teacher.vision),
            derive_side_map(student.text, teacher.text)};
}

// Symmetric InfoNCE with diagonal targets over exp(logit_scale)-scaled
// cosine logits.
inline NodePtr itc_loss(const NodePtr& fv, const NodePtr& fl, const NodePtr& logit_scale) {
    if (fv->value.dim(0) < 2) throw_error("input", "itc_loss: batch must be >= 2");
    NodePtr logits = scalar_mul(exp_node(logit_scale), matmul(fv, transpose_last(fl)));
    NodePtr row_loss = scale(diag_mean(log_softmax_rows(logits)), -1.0);
    NodePtr col_loss = scale(diag_mean(log_softmax_rows(transpose_last(logits))), -1.0);
    return scale(add(row_loss, col_loss), 0.5);
}

// Soft cross-entropy between student and (detached) teacher similarity
// matrices, averaged over both retrieval directions.
inline NodePtr sim_loss(const NodePtr& s, const Tensor& s_teacher, bool bidirectional = true) {
    require_same_shape(s->value, s_teacher, "sim_loss");
    const int n = s->value.dim(0);
    const auto sce_rows = [&](const NodePtr& logits, const Tensor& target_logits) {
        NodePtr targets = softmax_rows(constant(target_logits));
        NodePtr ce = scale(sum_all(mul(targets, log_softmax_rows(logits))),
                           -1.0 / static_cast<double>(n));
        return ce;
    };
    NodePtr row = sce_rows(s, s_teacher);
    if (!bidirectional) return row;
    Tensor teacher_t({s_teacher.dim(1), s_teacher.dim(0)});
    for (int i = 0; i < s_teacher.dim(0); ++i)
        for (int j = 0; j < s_teacher.dim(1); ++j) teacher_t.at(j, i) = s_teacher.at(i, j);
    NodePtr col = sce_rows(transpose_last(s), teacher_t);
    return scale(add(row, col), 0.5);
}

// (1/2) MSE(Fv, teacher Fv) + (1/2) MSE(Fl, teacher Fl), element-mean.
inline NodePtr feat_loss(const NodePtr& fv, const NodePtr& fl, const Tensor& fv_teacher,
                         const Tensor& fl_teacher) {
    require_same_shape(fv->value, fv_teacher, "feat_loss");
    require_same_shape(fl->value, fl_teacher, "feat_loss");
    NodePtr v = mse(fv, constant(fv_teacher));
    NodePtr l = mse(fl, constant(fl_teacher));
    return scale(add(v, l), 0.5);
}

// Per encoder: sum over retained student layers of MSE against the mapped
// teacher hidden state; combined as the mean of the two encoder sums.
inline NodePtr hidden_loss(const std::vector<NodePtr>& student_v,
                           const std::vector<NodePtr>& student_t,
                           const std::vector<Tensor>& teacher_v,
                           const std::vector<Tensor>& teacher_t, const LayerMap& map) {
    if (map.vision.size() != student_v.size() || map.text.size() != student_t.size())
        throw_error("dimension", "hidden_loss: layer map does not match student depth");
    const auto side_sum = [](const std::vector<NodePtr>& student,
                             const std::vector<Tensor>& teacher,
                             const std::vector<int>& side_map) {
        NodePtr acc;
        for (std::size_t m = 0; m < student.size(); ++m) {
            const int tl = side_map[m];
            if (tl < 0 || tl >= static_cast<int>(teacher.size()))
                throw_error("dimension", "hidden_loss: teacher layer index out of range");
            require_same_shape(student[m]->value, teacher[static_cast<std::size_t>(tl)],
                               "hidden_loss");
            NodePtr term = mse(student[m], constant(teacher[static_cast<std::size_t>(tl)]));
            acc = acc ? add(acc, term) : term;
        }
        return acc ? acc : constant(Tensor::scalar(0.0));
    };
    NodePtr v = side_sum(student_v, teacher_v, map.vision);
    NodePtr t = side_sum(student_t, teacher_t, map.text);
    return scale(add(v, t), 0.5);
}

struct LossWeights {
    double alpha = 1.0, beta = 1000.0, gamma = 1.0;
};

inline NodePtr total_loss(const NodePtr& itc, const NodePtr& sim, const NodePtr& feat,
                          const NodePtr& hidn, const LossWeights& w) {
    NodePtr total = itc;
    total = add(total, scale(sim, w.alpha));
    total = add(total, scale(feat, w.beta));
    total = add(total, scale(hidn, w.gamma));
    return total;
}

// Linear warmup to the peak rate, then cosine decay to ~0. Step is 0-based;
// the first step runs at lr/warmup_steps.
inline double lr_at(double peak_lr, double warmup_ratio, long long step, long long total_steps) {
    if (total_steps <= 0) return peak_lr;
    const long long warmup_steps =
        static_cast<long long>(std::floor(warmup_ratio * static_cast<double>(total_steps)));
    if (step < warmup_steps)
        return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    const long long decay_steps = total_steps - warmup_steps;
    if (decay_steps <= 0) return peak_lr;
    const double progress =
        static_cast<double>(step - warmup_steps + 1) / static_cast<double>(decay_steps);
    return peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Adam with decoupled weight decay. Decay applies to matrices and embedding
// tables only (rank >= 2); norms, biases and the logit scale are exempt.
class AdamW {
public:
    AdamW(double beta1, double beta2, double weight_decay, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {}

    void step(std::vector<std::pair<std::string, Tensor*>>& params,
              const std::vector<Tensor>& grads, double lr) {
        if (state_.size() != params.size()) {
            state_.clear();
            for (auto& [name, t] : params) state_.push_back({Tensor::zeros(t->shape()), Tensor::zeros(t->shape())});
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            Tensor& p = *params[pi].second;
            const Tensor& g = grads[pi];
            auto& [m, v] = state_[pi];
            const bool decay = p.rank() >= 2;
            for (std::size_t i = 0; i < p.numel(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                double x = p[i] - lr * mhat / (std::sqrt(vhat) + eps_);
                if (decay) x -= lr * weight_decay_ * p[i];
                p[i] = x;
            }
        }
    }

private:
    double beta1_, beta2_, weight_decay_, eps_;
    long long t_ = 0;
    std::vector<std::pair<Tensor, Tensor>> state_;
};

struct StepLog {
    double itc = 0.0, sim = 0.0, feat = 0.0, hidn = 0.0, total = 0.0, lr = 0.0;
};

struct TrainReport {
    std::vector<StepLog> steps;
    std::vector<StepLog> epoch_means;
    RetrievalMetrics final_metrics;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    int epochs = 0;
    long long total_steps = 0;
};

class TrainError : public Error {
public:
    TrainError(const std::string& msg, int last_good_epoch, std::shared_ptr<DualEncoder> last_good)
        : Error("training", msg), last_good_epoch_(last_good_epoch), last_good_(std::move(last_good)) {}
    int last_good_epoch() const { return last_good_epoch_; }
    const std::shared_ptr<DualEncoder>& last_good() const { return last_good_; }

private:
    int last_good_epoch_;
    std::shared_ptr<DualEncoder> last_good_;
};

namespace detail {

struct TeacherBatchOutputs {
    Tensor fv, fl, sim;
    std::vector<Tensor> hiddens_v, hiddens_t;
};

inline TeacherBatchOutputs teacher_forward(const DualEncoder& teacher, const PairBatch& batch,
                                           bool scale_in_sim) {
    TeacherBatchOutputs out;
    EncodeResult v = encode(teacher.vision, EncoderSide::Vision, batch.v_tokens);
    EncodeResult t = encode(teacher.text, EncoderSide::Text, batch.t_tokens);
    out.fv = std::move(v.features);
    out.fl = std::move(t.features);
    out.hiddens_v = std::move(v.hiddens);
    out.hiddens_t = std::move(t.hiddens);
    out.sim = similarity_matrix(out.fv, out.fl);
    if (scale_in_sim) {
        const double s = std::exp(teacher.logit_scale[0]);
        for (std::size_t i = 0; i < out.sim.numel(); ++i) out.sim[i] *= s;
    }
    return out;
}

}  // namespace detail

// Distillation training loop. The teacher stays frozen throughout; pass
// nullptr to train with the contrastive loss alone (used for teachers and
// the no-distillation ablation). Deterministic given the config seed.
inline TrainReport train_distill(DualEncoder& student, const DualEncoder* teacher,
                                 const Split& train_split, const DistillConfig& cfg,
                                 const Split* eval_split = nullptr) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();

    std::optional<LayerMap> layer_map;
    if (teacher) layer_map = derive_layer_map(student, *teacher);

    const int n = static_cast<int>(train_split.size());
    if (teacher == nullptr && n < 2) throw_error("input", "train: need at least 2 pairs");

    // Enumerate batches per epoch up front so total_steps is known for the
    // schedule. Batches are contiguous chunks of a seeded shuffle; a
    // trailing chunk smaller than 2 is dropped (the contrastive loss needs
    // at least two pairs).
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle_rng(cfg.seed);
    std::vector<std::vector<std::vector<int>>> epoch_batches;
    epoch_batches.reserve(static_cast<std::size_t>(cfg.epochs));
    for (int ep = 0; ep < cfg.epochs; ++ep) {
        shuffle_rng.shuffle(order);
        std::vector<std::vector<int>> batches;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int count = std::min(cfg.batch_size, n - start);
            if (count < 2) break;
            batches.emplace_back(order.begin() + start, order.begin() + start + count);
        }
        epoch_batches.push_back(std::move(batches));
    }
    long long total_steps = 0;
    for (const auto& b : epoch_batches) total_steps += static_cast<long long>(b.size());

    TrainReport report;
    report.seed = cfg.seed;
    report.epochs = cfg.epochs;
    report.total_steps = total_steps;

    AdamW opt(cfg.adam_beta1, cfg.adam_beta2, cfg.weight_decay);
    const LossWeights weights{cfg.alpha, cfg.beta, cfg.gamma};
    long long step = 0;
    auto last_good = std::make_shared<DualEncoder>(student);
    const double max_logit_scale = std::log(100.0);

    for (int ep = 0; ep < cfg.epochs; ++ep) {
        StepLog epoch_acc;
        int epoch_steps = 0;
        for (const auto& batch_idx : epoch_batches[static_cast<std::size_t>(ep)]) {
            const PairBatch batch = train_split.batch(batch_idx);

            std::optional<detail::TeacherBatchOutputs> tout;
            if (teacher) tout = detail::teacher_forward(*teacher, batch, cfg.scale_in_sim);

            ParamBinder bind(true);
            EncodeGraph gv = encode_graph(student.vision, EncoderSide::Vision, batch.v_tokens,
                                          AblationSet(), bind);
            EncodeGraph gt = encode_graph(student.text, EncoderSide::Text, batch.t_tokens,
                                          AblationSet(), bind);
            NodePtr ls_node = cfg.freeze_logit_scale ? constant(student.logit_scale)
                                                     : bind(student.logit_scale);

            NodePtr l_itc = itc_loss(gv.features, gt.features, ls_node);
            NodePtr l_sim, l_feat, l_hidn;
            if (teacher) {
                NodePtr s = matmul(gv.features, transpose_last(gt.features));
                if (cfg.scale_in_sim) s = scalar_mul(exp_node(ls_node), s);
                l_sim = sim_loss(s, tout->sim, cfg.sim_bidirectional);
                l_feat = feat_loss(gv.features, gt.features, tout->fv, tout->fl);
                l_hidn = hidden_loss(gv.hiddens, gt.hiddens, tout->hiddens_v, tout->hiddens_t,
                                     *layer_map);
            } else {
                l_sim = constant(Tensor::scalar(0.0));
                l_feat = constant(Tensor::scalar(0.0));
                l_hidn = constant(Tensor::scalar(0.0));
            }
            NodePtr total = total_loss(l_itc, l_sim, l_feat, l_hidn, weights);

            if (!std::isfinite(total->value[0])) {
                student = *last_good;
                throw TrainError("training diverged (non-finite loss) at step " +
                                     std::to_string(step) + "; restored last-good state from epoch " +
                                     std::to_string(ep),
                                 ep - 1, last_good);
            }

            backward(total);

            auto params = named_parameters(student);
            std::vector<Tensor> grads;
            grads.reserve(params.size());
            for (auto& [name, t] : params) {
                NodePtr node = bind.find(*t);
                if (node && node->grad.vec().size() == t->numel())
                    grads.push_back(node->grad);
                else
                    grads.push_back(Tensor::zeros(t->shape()));
            }
            const double lr = lr_at(cfg.lr, cfg.warmup_ratio, step, total_steps);
            opt.step(params, grads, lr);
            if (student.logit_scale[0] > max_logit_scale) student.logit_scale[0] = max_logit_scale;

            StepLog log;
            log.itc = l_itc->value[0];
            log.sim = l_sim->value[0];
            log.feat = l_feat->value[0];
            log.hidn = l_hidn->value[0];
            log.total = total->value[0];
            log.lr = lr;
            report.steps.push_back(log);
            epoch_acc.itc += log.itc;
            epoch_acc.sim += log.sim;
            epoch_acc.feat += log.feat;
            epoch_acc.hidn += log.hidn;
            epoch_acc.total += log.total;
            epoch_acc.lr += log.lr;
            ++epoch_steps;
            ++step;
        }
        if (epoch_steps > 0) {
            epoch_acc.itc /= epoch_steps;
            epoch_acc.sim /= epoch_steps;
            epoch_acc.feat /= epoch_steps;
            epoch_acc.hidn /= epoch_steps;
            epoch_acc.total /= epoch_steps;
            epoch_acc.lr /= epoch_steps;
        }
        report.epoch_means.push_back(epoch_acc);
        *last_good = student;
    }

    if (eval_split && eval_split->size() > 0)
        report.final_metrics = evaluate(student, eval_split->batch());
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// Contrastive-only training (teacher preparation).
inline TrainReport train_contrastive(DualEncoder& model, const Split& train_split,
                                     const DistillConfig& cfg, const Split* eval_split = nullptr) {
    return train_distill(model, nullptr, train_split, cfg, eval_split);
}

}  // namespace mope
