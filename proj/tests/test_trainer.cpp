#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"

using namespace fss;
using nn::Mat;

namespace {

FewShotTask synthetic_task(std::uint64_t seed, int k = 1) {
    static const Dataset ds = synth_blobs(synthetic_preset());
    return make_task(ds, TaskRequest{k, seed});
}

SegModel<float> preset_model(Method m) {
    return make_model<float>(std::make_unique<TinyEncoder<float>>(tiny_preset()), m,
                             ClassCatalog::numbered(3, true), 7);
}

TrainConfig short_config(Method m, std::uint64_t seed, int epochs = 3) {
    auto c = synthetic_train_preset(m, seed);
    c.epochs = epochs;
    return c;
}

}  // namespace

TEST(Schedule, PolyExamples) {
    EXPECT_DOUBLE_EQ(poly_lr(0, 100, 0.2), 0.2);
    EXPECT_DOUBLE_EQ(poly_lr(100, 100, 0.2), 0.0);
    EXPECT_NEAR(poly_lr(50, 100, 0.2), 0.2 * std::pow(0.5, 0.9), 1e-15);
    EXPECT_NEAR(poly_lr(25, 100, 1.0, 1.0), 0.75, 1e-15);
    EXPECT_THROW(poly_lr(101, 100, 0.2), Error);
    EXPECT_THROW(poly_lr(-1, 100, 0.2), Error);
    EXPECT_THROW(poly_lr(0, 0, 0.2), Error);
    double prev = poly_lr(0, 977, 0.05);
    for (int s = 1; s <= 977; ++s) {
        const double v = poly_lr(s, 977, 0.05);
        EXPECT_LE(v, prev);
        prev = v;
    }
}

TEST(Schedule, StepsPerEpoch) {
    EXPECT_EQ(steps_per_epoch(5, 2), 3);
    EXPECT_EQ(steps_per_epoch(4, 4), 1);
    EXPECT_EQ(steps_per_epoch(1, 4), 1);
    EXPECT_THROW(steps_per_epoch(0, 4), InfeasibleTask);
    EXPECT_THROW(steps_per_epoch(3, 0), Error);
}

TEST(Loss, PeakedUniformAndIgnore) {
    const auto cat = ClassCatalog::numbered(4, true);
    const LabelMask gt(1, 4, std::vector<ClassId>{0, 1, 2, 3});
    Mat<double> peaked = Mat<double>::Zero(4, 4);
    for (int i = 0; i < 4; ++i) peaked(i, i) = 20.0;
    EXPECT_LT(seg_loss(peaked, gt, cat), 0.01);
    EXPECT_NEAR(seg_loss(Mat<double>(Mat<double>::Zero(4, 4)), gt, cat), std::log(4.0), 1e-12);
    const LabelMask ign(1, 4, kDefaultIgnoreId);
    EXPECT_THROW(seg_loss(peaked, ign, cat), Error);
    // Ignored pixels contribute nothing.
    LabelMask part = gt;
    part.data()[0] = kDefaultIgnoreId;
    Mat<double> wrong = peaked;
    wrong.row(0).setZero();
    wrong(0, 3) = 50.0;
    EXPECT_LT(seg_loss(wrong, part, cat), 0.01);
    EXPECT_THROW(seg_loss(Mat<double>(Mat<double>::Zero(3, 4)), gt, cat), ShapeError);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
    const auto cat = ClassCatalog::numbered(3, true);
    Rng rng(1);
    const LabelMask gt = test::random_mask(rng, 2, 3, 3, 0.2);
    Mat<double> z(6, 3);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = standard_normal(rng);
    Mat<double> g;
    cross_entropy_sum<double>(z, gt, ClassIndexer(cat), &g);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        Mat<double> a = z, b = z;
        a.data()[i] += 1e-6;
        b.data()[i] -= 1e-6;
        const double fd = (cross_entropy_sum<double>(a, gt, ClassIndexer(cat), nullptr).sum -
                           cross_entropy_sum<double>(b, gt, ClassIndexer(cat), nullptr).sum) / 2e-6;
        EXPECT_NEAR(g.data()[i], fd, 1e-7);
    }
}

TEST(Optimizer, OnlyTrainableParametersMove) {
    for (auto spec : {OptimizerSpec::adamw(), OptimizerSpec::sgd()}) {
        ParamTable<double> t;
        t.add("a", 2, 2, true).value.setOnes();
        t.add("b", 2, 2, false).value.setOnes();
        t.at("a").grad.setConstant(0.5);
        t.at("b").grad.setConstant(0.5);
        Optimizer<double> opt(spec);
        opt.step({&t}, 0.1);
        EXPECT_TRUE((t.value("a").array() < 1.0).all()) << spec.name();
        EXPECT_TRUE((t.value("b").array() == 1.0).all()) << spec.name();
    }
}

TEST(Optimizer, MinimizesQuadratic) {
    ParamTable<double> t;
    t.add("x", 1, 3, true).value << 3.0, -2.0, 1.0;
    OptimizerSpec spec = OptimizerSpec::adamw();
    spec.weight_decay = 0.0;
    Optimizer<double> opt(spec);
    for (int i = 0; i < 500; ++i) {
        t.at("x").grad = 2.0 * t.value("x");
        opt.step({&t}, poly_lr(i, 500, 0.1));
    }
    EXPECT_LT(t.value("x").cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Optimizer, SpecJsonRoundTrip) {
    const auto s = OptimizerSpec::sgd();
    const auto back = OptimizerSpec::from_json(s.to_json());
    EXPECT_EQ(back.name(), "sgd");
    EXPECT_EQ(back.weight_decay, s.weight_decay);
    EXPECT_THROW(OptimizerSpec::from_json({{"name", "lamb"}}), Error);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
    auto c = synthetic_train_preset(Method::Lora, 5);
    c.method_config.lora.rank = 8;
    const auto back = TrainConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    EXPECT_EQ(back.lr_for_stage(1), 0.05);
    EXPECT_EQ(back.lr_for_stage(2), 1e-3);
    auto bad = c;
    bad.epochs = 0;
    EXPECT_THROW(bad.validate(), Error);
    bad = c;
    bad.base_lr = -1;
    EXPECT_THROW(bad.validate(), Error);
}

TEST(Presets, FamiliesAndGrid) {
    EXPECT_EQ(preset_epochs("cityscapes"), 200);
    EXPECT_EQ(preset_epochs("ppd"), 200);
    EXPECT_EQ(preset_epochs("coco"), 100);
    EXPECT_DOUBLE_EQ(preset_linear_lr("cityscapes"), 0.2);
    EXPECT_DOUBLE_EQ(preset_linear_lr("coco"), 0.05);
    EXPECT_DOUBLE_EQ(preset_linear_lr("ppd"), 0.001);
    EXPECT_THROW(preset_epochs("imagenet"), Error);
    EXPECT_EQ(default_lr_grid(), (std::vector<double>{1e-2, 1e-3, 1e-4, 1e-5, 1e-6}));
}

TEST(GridSearch, BestMeanAndTies) {
    const auto r = grid_search_lr({1e-2, 1e-3, 1e-4}, {1, 2}, [](double lr, std::uint64_t s) {
        if (lr == 1e-3) return 0.6 + 0.01 * static_cast<double>(s);
        return 0.5;
    });
    EXPECT_DOUBLE_EQ(r.best_lr, 1e-3);
    ASSERT_EQ(r.table.size(), 3u);
    EXPECT_NEAR(*r.table[1].mean, 0.615, 1e-12);

    const auto tie = grid_search_lr({1e-4, 1e-2, 1e-3}, {1}, [](double, std::uint64_t) { return 0.5; });
    EXPECT_DOUBLE_EQ(tie.best_lr, 1e-2);
}

TEST(GridSearch, FailuresExcludedOrFatal) {
    const auto r = grid_search_lr({1e-2, 1e-3}, {1, 2}, [](double lr, std::uint64_t s) -> double {
        if (lr == 1e-2) throw Error("diverged");
        if (s == 2) return std::nan("");
        return 0.3;
    });
    EXPECT_DOUBLE_EQ(r.best_lr, 1e-3);
    EXPECT_EQ(r.table[0].errors.size(), 2u);
    EXPECT_FALSE(r.table[0].mean.has_value());
    EXPECT_EQ(r.table[1].errors.size(), 1u);
    EXPECT_THROW(grid_search_lr({1e-2}, {1}, [](double, std::uint64_t) -> double { throw Error("boom"); }), Error);
    EXPECT_THROW(grid_search_lr({}, {1}, [](double, std::uint64_t) { return 0.0; }), Error);
}

TEST(Training, DeterministicForSeed) {
    const auto task = synthetic_task(3);
    auto a = preset_model(Method::Linear), b = preset_model(Method::Linear);
    const auto ra = train_stage1(a, task, short_config(Method::Linear, 3));
    const auto rb = train_stage1(b, task, short_config(Method::Linear, 3));
    EXPECT_EQ(ra.loss_curve, rb.loss_curve);
    EXPECT_EQ(a.head.params().hashes(), b.head.params().hashes());
}

TEST(Training, StageOneLeavesEncoderUntouched) {
    const auto task = synthetic_task(4);
    auto m = preset_model(Method::Multilayer);
    const auto before = m.encoder->params().hashes();
    const auto head_before = m.head.params().hashes();
    const auto r = train_stage1(m, task, short_config(Method::Multilayer, 4));
    EXPECT_EQ(m.encoder->params().hashes(), before);
    EXPECT_NE(m.head.params().hashes(), head_before);
    EXPECT_EQ(r.trainable.trainable, m.head.params().total_count());
    // 3 support images, batch 4, 3 epochs.
    EXPECT_EQ(r.steps, 3);
    EXPECT_EQ(r.loss_curve.size(), 3u);
    EXPECT_LT(r.final_support_loss, r.initial_support_loss);
}

TEST(Training, StageOneRequiresFrozenEncoder) {
    const auto task = synthetic_task(4);
    auto m = preset_model(Method::Finetune);
    finetune_apply(m.encoder->params());
    EXPECT_THROW(train_stage1(m, task, short_config(Method::Finetune, 4)), Error);
}

TEST(Training, LinearStageTwoIsNoOp) {
    const auto task = synthetic_task(5);
    auto m = preset_model(Method::Linear);
    train_stage1(m, task, short_config(Method::Linear, 5));
    const auto enc = m.encoder->params().hashes();
    const auto head = m.head.params().hashes();
    const auto r = train_stage2(m, task, short_config(Method::Linear, 5));
    EXPECT_TRUE(r.skipped);
    EXPECT_EQ(r.steps, 0);
    EXPECT_EQ(m.encoder->params().hashes(), enc);
    EXPECT_EQ(m.head.params().hashes(), head);
}

TEST(Training, SvfStageTwoAccountingAndContinuity) {
    const auto task = synthetic_task(6);
    auto m = preset_model(Method::Svf);
    const auto cfg = short_config(Method::Svf, 6);
    const auto s1 = train_stage1(m, task, cfg);
    const auto s2 = train_stage2(m, task, cfg);
    std::int64_t sv = 0;
    const auto& tc = tiny_preset();
    sv += tc.n_blocks * (4 * tc.embed_dim + 2 * std::min(tc.embed_dim, tc.embed_dim * tc.mlp_ratio));
    EXPECT_EQ(s2.trainable.trainable, sv + m.head.params().total_count());
    EXPECT_EQ(s2.trainable.group_count(nn::groups::kSvfSingularValues), sv);
    EXPECT_NEAR(s2.initial_support_loss, s1.final_support_loss, 1e-5);
    // 3 support images, batch 2.
    EXPECT_EQ(s2.steps, 2 * 3);
}

TEST(Training, LinearFitsItsSupport) {
    const auto task = synthetic_task(0);
    auto m = preset_model(Method::Linear);
    train_stage1(m, task, synthetic_train_preset(Method::Linear, 0));
    FewShotTask on_support = task;
    on_support.query = task.support;
    EXPECT_GE(miou(evaluate_query(m, on_support).confusion), 0.9);
}
