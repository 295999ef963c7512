#include <gtest/gtest.h>

#include <cmath>

#include "mope/checkpoint.hpp"
#include "mope/distill.hpp"
#include "mope/grad_check.hpp"
#include "mope/pruning.hpp"
#include "test_util.hpp"

using namespace mope;
using namespace mope::testing;

namespace {

Tensor unit_rows(Rng& rng, int n, int e) {
    Tensor t({n, e});
    for (int i = 0; i < n; ++i) {
        double norm = 0.0;
        for (int j = 0; j < e; ++j) {
            t.at(i, j) = rng.normal();
            norm += t.at(i, j) * t.at(i, j);
        }
        norm = std::sqrt(norm);
        for (int j = 0; j < e; ++j) t.at(i, j) /= norm;
    }
    return t;
}

}  // namespace

TEST(ItcLoss, PerfectAlignmentLimit) {
    // Orthonormal features with a large scale drive the loss to zero.
    Tensor f = Tensor::identity(4);
    auto loss = itc_loss(constant(f), constant(f), constant(Tensor::scalar(std::log(200.0))));
    EXPECT_LT(loss->value[0], 1e-6);
}

TEST(ItcLoss, TwoIdenticalPairsGiveLn2) {
    Rng rng(2);
    Tensor row = unit_rows(rng, 1, 6);
    Tensor fv({2, 6}), fl({2, 6});
    for (int j = 0; j < 6; ++j) {
        fv.at(0, j) = fv.at(1, j) = row.at(0, j);
        fl.at(0, j) = fl.at(1, j) = row.at(0, j);
    }
    auto loss = itc_loss(constant(fv), constant(fl), constant(Tensor::scalar(0.0)));
    EXPECT_NEAR(loss->value[0], std::log(2.0), 1e-12);
}

TEST(ItcLoss, MatchesDirectSoftmaxNllOracle) {
    Rng rng(3);
    const int n = 5, e = 7;
    Tensor fv = unit_rows(rng, n, e);
    Tensor fl = unit_rows(rng, n, e);
    const double ls = 1.3;
    auto loss = itc_loss(constant(fv), constant(fl), constant(Tensor::scalar(ls)));

    // Direct per-row softmax + NLL oracle, both directions.
    const double scale = std::exp(ls);
    double total = 0.0;
    for (int dir = 0; dir < 2; ++dir) {
        for (int i = 0; i < n; ++i) {
            double denom = 0.0, target = 0.0;
            for (int j = 0; j < n; ++j) {
                double dot = 0.0;
                for (int k = 0; k < e; ++k)
                    dot += dir == 0 ? fv.at(i, k) * fl.at(j, k) : fl.at(i, k) * fv.at(j, k);
                denom += std::exp(scale * dot);
                if (j == i) target = scale * dot;
            }
            total += -(target - std::log(denom));
        }
    }
    EXPECT_NEAR(loss->value[0], total / (2.0 * n), 1e-12);
}

TEST(ItcLoss, BatchOfOneRejected) {
    Tensor f({1, 4}, {1.0, 0.0, 0.0, 0.0});
    EXPECT_THROW(itc_loss(constant(f), constant(f), constant(Tensor::scalar(0.0))), Error);
}

TEST(SimLoss, SelfDistillationStationaryPoint) {
    Rng rng(4);
    Tensor s({3, 3});
    for (std::size_t i = 0; i < s.numel(); ++i) s[i] = rng.normal();
    auto student = leaf(s);
    auto loss = sim_loss(student, s, true);
    backward(loss);
    // Gradient w.r.t. S vanishes at S == teacher.
    for (std::size_t i = 0; i < student->grad.numel(); ++i)
        EXPECT_NEAR(student->grad[i], 0.0, 1e-12);
    // Value equals the mean teacher row entropy (rows of S and S^T).
    double entropy = 0.0;
    for (int dir = 0; dir < 2; ++dir)
        for (int i = 0; i < 3; ++i) {
            double denom = 0.0;
            for (int j = 0; j < 3; ++j) denom += std::exp(dir == 0 ? s.at(i, j) : s.at(j, i));
            for (int j = 0; j < 3; ++j) {
                const double p = std::exp(dir == 0 ? s.at(i, j) : s.at(j, i)) / denom;
                entropy -= p * std::log(p);
            }
        }
    EXPECT_NEAR(loss->value[0], entropy / 6.0, 1e-12);
}

TEST(SimLoss, HandComputedTwoByTwo) {
    const Tensor eye = Tensor::identity(2);
    auto loss = sim_loss(constant(eye), eye, true);
    // softmax([1,0]) = [e/(e+1), 1/(e+1)]; value = its entropy (all rows equal).
    const double p = std::exp(1.0) / (std::exp(1.0) + 1.0);
    const double expect = -(p * std::log(p) + (1.0 - p) * std::log(1.0 - p));
    EXPECT_NEAR(loss->value[0], expect, 1e-12);
}

TEST(SimLoss, GradientMatchesFiniteDifferences) {
    Rng rng(5);
    Tensor target({4, 4});
    for (std::size_t i = 0; i < target.numel(); ++i) target[i] = rng.normal();
    Tensor s({4, 4});
    for (std::size_t i = 0; i < s.numel(); ++i) s[i] = rng.normal();
    const double err = grad_check(
        [&](const std::vector<NodePtr>& p) { return sim_loss(p[0], target, true); }, {s}, 1e-5);
    EXPECT_LT(err, 1e-4);
}

TEST(SimLoss, RowOnlyVariant) {
    Rng rng(6);
    Tensor t({3, 3});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    Tensor s({3, 3});
    for (std::size_t i = 0; i < s.numel(); ++i) s[i] = rng.normal();
    auto bidir = sim_loss(constant(s), t, true);
    auto row_only = sim_loss(constant(s), t, false);
    EXPECT_NE(bidir->value[0], row_only->value[0]);
}

TEST(FeatLoss, ZeroAtIdentityAndEpsilonCase) {
    Rng rng(7);
    Tensor fv = unit_rows(rng, 3, 5);
    Tensor fl = unit_rows(rng, 3, 5);
    auto zero = feat_loss(constant(fv), constant(fl), fv, fl);
    EXPECT_DOUBLE_EQ(zero->value[0], 0.0);

    const double eps = 0.01;
    Tensor fv_off = fv;
    for (std::size_t i = 0; i < fv_off.numel(); ++i) fv_off[i] += eps;
    auto shifted = feat_loss(constant(fv_off), constant(fl), fv, fl);
    EXPECT_NEAR(shifted->value[0], 0.5 * eps * eps, 1e-12);
}

TEST(FeatLoss, MatchesDirectMseOracle) {
    Rng rng(8);
    Tensor fv = unit_rows(rng, 4, 6), fl = unit_rows(rng, 4, 6);
    Tensor tv = unit_rows(rng, 4, 6), tl = unit_rows(rng, 4, 6);
    auto loss = feat_loss(constant(fv), constant(fl), tv, tl);
    double mse_v = 0.0, mse_l = 0.0;
    for (std::size_t i = 0; i < fv.numel(); ++i) {
        mse_v += (fv[i] - tv[i]) * (fv[i] - tv[i]);
        mse_l += (fl[i] - tl[i]) * (fl[i] - tl[i]);
    }
    mse_v /= static_cast<double>(fv.numel());
    mse_l /= static_cast<double>(fl.numel());
    EXPECT_NEAR(loss->value[0], 0.5 * mse_v + 0.5 * mse_l, 1e-12);
}

TEST(HiddenLoss, ZeroAtIdentity) {
    Rng rng(9);
    std::vector<Tensor> teacher_v, teacher_t;
    std::vector<NodePtr> student_v, student_t;
    for (int l = 0; l < 2; ++l) {
        Tensor h({2, 3, 4});
        for (std::size_t i = 0; i < h.numel(); ++i) h[i] = rng.normal();
        teacher_v.push_back(h);
        teacher_t.push_back(h);
        student_v.push_back(constant(h));
        student_t.push_back(constant(h));
    }
    LayerMap map{{0, 1}, {0, 1}};
    auto loss = hidden_loss(student_v, student_t, teacher_v, teacher_t, map);
    EXPECT_DOUBLE_EQ(loss->value[0], 0.0);
}

TEST(HiddenLoss, SingleLayerEpsilonCase) {
    // One-layer vision encoder off by eps everywhere, text identical:
    // vision sum = eps^2, combined = eps^2 / 2.
    Rng rng(10);
    Tensor h({2, 3, 4});
    for (std::size_t i = 0; i < h.numel(); ++i) h[i] = rng.normal();
    const double eps = 0.125;
    Tensor h_off = h;
    for (std::size_t i = 0; i < h_off.numel(); ++i) h_off[i] += eps;
    LayerMap map{{0}, {0}};
    auto loss = hidden_loss({constant(h_off)}, {constant(h)}, {h}, {h}, map);
    EXPECT_NEAR(loss->value[0], 0.5 * eps * eps, 1e-12);
}

TEST(HiddenLoss, ExplicitThreeTermSumForPrunedMap) {
    // Student keeps 3 of 4 teacher layers: map {0->0, 1->1, 2->3}.
    Rng rng(11);
    std::vector<Tensor> teacher(4, Tensor({1, 2, 3}));
    for (auto& t : teacher)
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    std::vector<NodePtr> student_nodes;
    std::vector<Tensor> student(3, Tensor({1, 2, 3}));
    for (auto& t : student) {
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
        student_nodes.push_back(constant(t));
    }
    const std::vector<int> vmap = {0, 1, 3};
    std::vector<NodePtr> text_nodes = {constant(teacher[0])};
    LayerMap map{vmap, {0}};
    auto loss = hidden_loss(student_nodes, text_nodes, teacher, {teacher[0]}, map);

    double vision_sum = 0.0;
    for (int m = 0; m < 3; ++m) {
        double mse = 0.0;
        const Tensor& t = teacher[static_cast<std::size_t>(vmap[static_cast<std::size_t>(m)])];
        for (std::size_t i = 0; i < t.numel(); ++i)
            mse += (student[static_cast<std::size_t>(m)][i] - t[i]) *
                   (student[static_cast<std::size_t>(m)][i] - t[i]);
        vision_sum += mse / static_cast<double>(t.numel());
    }
    EXPECT_NEAR(loss->value[0], 0.5 * (vision_sum + 0.0), 1e-12);
}

TEST(TotalLoss, WeightedArithmetic) {
    const LossWeights w{1.0, 1000.0, 1.0};
    auto total = total_loss(constant(Tensor::scalar(0.5)), constant(Tensor::scalar(0.2)),
                            constant(Tensor::scalar(0.001)), constant(Tensor::scalar(0.3)), w);
    EXPECT_NEAR(total->value[0], 2.0, 1e-12);
}

TEST(TotalLoss, ZeroBetaDropsFeatureTerm) {
    const LossWeights w{1.0, 0.0, 1.0};
    auto total = total_loss(constant(Tensor::scalar(0.5)), constant(Tensor::scalar(0.2)),
                            constant(Tensor::scalar(123.0)), constant(Tensor::scalar(0.3)), w);
    EXPECT_NEAR(total->value[0], 1.0, 1e-12);
}

TEST(LayerMap, DerivedFromOrigins) {
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const DualEncoder student = structural_prune(teacher, {ModuleId::layer_id(EncoderSide::Vision, 0)});
    const LayerMap map = derive_layer_map(student, teacher);
    EXPECT_EQ(map.vision, (std::vector<int>{1}));
    EXPECT_EQ(map.text, (std::vector<int>{0, 1}));
    // A teacher missing the student's origin is a contract error.
    EXPECT_THROW(derive_layer_map(teacher, student), Error);
}

TEST(Schedule, WarmupThenCosine) {
    const double lr = 1e-3;
    const long long total = 100;
    const double ratio = 0.1;  // 10 warmup steps
    EXPECT_DOUBLE_EQ(lr_at(lr, ratio, 0, total), lr / 10.0);
    EXPECT_DOUBLE_EQ(lr_at(lr, ratio, 4, total), lr * 5.0 / 10.0);
    EXPECT_DOUBLE_EQ(lr_at(lr, ratio, 9, total), lr);
    EXPECT_GT(lr_at(lr, ratio, 10, total), lr_at(lr, ratio, 50, total));
    EXPECT_NEAR(lr_at(lr, ratio, 99, total), 0.0, 1e-12);
    // Bitwise-reproducible sequence.
    for (long long s = 0; s < total; ++s)
        EXPECT_EQ(lr_at(lr, ratio, s, total), lr_at(lr, ratio, s, total));
}

TEST(TrainDistill, ZeroEpochsLeavesStudentBitwise) {
    DualEncoder student = init_model(tiny_model_config(42));
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const Dataset ds = generate_dataset(tiny_data_spec());
    DistillConfig cfg;
    cfg.epochs = 0;
    const std::string before = model_hash(student);
    const TrainReport rep = train_distill(student, &teacher, ds.train, cfg);
    EXPECT_EQ(model_hash(student), before);
    EXPECT_EQ(rep.total_steps, 0);
}

TEST(TrainDistill, SelfDistillationStartsAtFloor) {
    // Teacher as its own student: feat and hidden terms are exactly zero at
    // every step; the sim term sits at the teacher-entropy floor.
    DualEncoder student = init_model(tiny_model_config(42));
    const DualEncoder teacher = student;
    const Dataset ds = generate_dataset(tiny_data_spec());
    DistillConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    cfg.lr = 1e-9;  // negligible updates; inspect step 0 behavior
    const TrainReport rep = train_distill(student, &teacher, ds.train, cfg);
    ASSERT_FALSE(rep.steps.empty());
    EXPECT_DOUBLE_EQ(rep.steps[0].feat, 0.0);
    EXPECT_DOUBLE_EQ(rep.steps[0].hidn, 0.0);
    EXPECT_GT(rep.steps[0].sim, 0.0);
    EXPECT_NEAR(rep.steps[0].total, rep.steps[0].itc + rep.steps[0].sim, 1e-12);
}

TEST(TrainDistill, TeacherFrozen) {
    DualEncoder student = init_model(tiny_model_config(43));
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const std::string teacher_hash = model_hash(teacher);
    const Dataset ds = generate_dataset(tiny_data_spec());
    DistillConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    train_distill(student, &teacher, ds.train, cfg);
    EXPECT_EQ(model_hash(teacher), teacher_hash);
}

TEST(TrainDistill, LossLedgerIdentityEveryStep) {
    DualEncoder student = init_model(tiny_model_config(43));
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const Dataset ds = generate_dataset(tiny_data_spec());
    DistillConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.alpha = 1.0;
    cfg.beta = 1000.0;
    cfg.gamma = 1.0;
    const TrainReport rep = train_distill(student, &teacher, ds.train, cfg);
    for (const auto& s : rep.steps)
        EXPECT_NEAR(s.total, s.itc + cfg.alpha * s.sim + cfg.beta * s.feat + cfg.gamma * s.hidn,
                    1e-9);
    // Logged learning rates follow the schedule exactly.
    for (std::size_t i = 0; i < rep.steps.size(); ++i)
        EXPECT_EQ(rep.steps[i].lr,
                  lr_at(cfg.lr, cfg.warmup_ratio, static_cast<long long>(i), rep.total_steps));
}

TEST(TrainDistill, DeterministicGivenSeed) {
    const Dataset ds = generate_dataset(tiny_data_spec());
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const auto run = [&]() {
        DualEncoder student = init_model(tiny_model_config(43));
        DistillConfig cfg;
        cfg.epochs = 2;
        cfg.batch_size = 16;
        cfg.seed = 7;
        train_distill(student, &teacher, ds.train, cfg);
        return model_hash(student);
    };
    EXPECT_EQ(run(), run());
}

TEST(TrainDistill, DivergenceRaisesTrainingError) {
    set_checked_mode(false);
    DualEncoder student = init_model(tiny_model_config(43));
    student.vision.layers[0].w1.at(0, 0) = std::nan("");  // poisoned weights
    const DualEncoder teacher = init_model(tiny_model_config(42));
    const Dataset ds = generate_dataset(tiny_data_spec());
    DistillConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    bool threw = false;
    try {
        train_distill(student, &teacher, ds.train, cfg);
    } catch (const TrainError& e) {
        threw = true;
        EXPECT_EQ(e.kind(), "training");
        EXPECT_NE(e.last_good(), nullptr);
    }
    set_checked_mode(true);
    EXPECT_TRUE(threw);
}

TEST(TrainDistill, ImprovesPrunedStudent) {
    // A width-pruned model distilled briefly recovers ground against its
    // pre-distillation metrics on the tiny task.
    const Dataset ds = generate_dataset(tiny_data_spec(42));
    DualEncoder teacher = init_model(tiny_model_config(42));
    DistillConfig tcfg;
    tcfg.epochs = 40;
    tcfg.batch_size = 16;
    train_contrastive(teacher, ds.train, tcfg);

    ScoreConfig sc;
    sc.workers = 2;
    const BuildTablesResult built = build_cost_tables(teacher, ds.val, sc);
    PruneTarget target;
    target.vision.width_fraction = 0.5;
    target.text.width_fraction = 0.5;
    const PruningPlan plan = make_width_plan(built.tables, target);
    DualEncoder student = apply_plan(built.rewired, plan);
    const double before = evaluate(student, ds.val.batch()).recall_mean;

    DistillConfig dcfg;
    dcfg.epochs = 20;
    dcfg.batch_size = 16;
    const TrainReport rep = train_distill(student, &teacher, ds.train, dcfg, &ds.val);
    EXPECT_GT(rep.final_metrics.recall_mean, before);
}
