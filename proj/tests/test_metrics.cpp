#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace fss;

namespace {

ClassCatalog two_classes() { return ClassCatalog::numbered(2, true); }

// Straight per-class counting over pixels, no confusion matrix involved.
double oracle_miou(const std::vector<LabelMask>& preds, const std::vector<LabelMask>& gts, int n_classes,
                   ClassId ignore) {
    double sum = 0.0;
    int used = 0;
    for (int c = 0; c < n_classes; ++c) {
        std::uint64_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < gts.size(); ++i)
            for (int y = 0; y < gts[i].height(); ++y)
                for (int x = 0; x < gts[i].width(); ++x) {
                    const ClassId g = gts[i].at(y, x), p = preds[i].at(y, x);
                    if (g == ignore) continue;
                    tp += g == c && p == c;
                    fp += g != c && p == c;
                    fn += g == c && p != c;
                }
        if (tp + fp + fn == 0) continue;
        sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        ++used;
    }
    return sum / used;
}

}  // namespace

TEST(Confusion, TwoByTwoExample) {
    const LabelMask gt(2, 2, std::vector<ClassId>{0, 0, 1, 1});
    const LabelMask pred(2, 2, std::vector<ClassId>{0, 1, 1, 1});
    ConfusionMatrix cm(two_classes());
    cm.update(pred, gt);
    EXPECT_EQ(cm.at(0, 0), 1u);
    EXPECT_EQ(cm.at(0, 1), 1u);
    EXPECT_EQ(cm.at(1, 0), 0u);
    EXPECT_EQ(cm.at(1, 1), 2u);
    EXPECT_DOUBLE_EQ(*iou(cm, 0), 0.5);
    EXPECT_NEAR(*iou(cm, 1), 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(miou(cm), (0.5 + 2.0 / 3.0) / 2.0, 1e-12);
}

TEST(Confusion, IgnoredPixelsSkipped) {
    const LabelMask gt(1, 3, std::vector<ClassId>{0, kDefaultIgnoreId, 1});
    const LabelMask pred(1, 3, std::vector<ClassId>{0, 1, 1});
    ConfusionMatrix cm(two_classes());
    cm.update(pred, gt);
    EXPECT_EQ(cm.total(), 2u);
    EXPECT_DOUBLE_EQ(miou(cm), 1.0);
}

TEST(Confusion, LabelOutsideCatalogRejected) {
    ConfusionMatrix cm(two_classes());
    EXPECT_THROW(cm.update(LabelMask(1, 1, 7), LabelMask(1, 1, 0)), Error);
    EXPECT_THROW(cm.update(LabelMask(1, 2, 0), LabelMask(1, 1, 0)), ShapeError);
}

TEST(Iou, Examples) {
    ConfusionMatrix cm(ClassCatalog::numbered(3, true));
    cm.at(0, 0) = 3;
    cm.at(0, 1) = 1;
    EXPECT_DOUBLE_EQ(*iou(cm, 0), 0.75);
    EXPECT_FALSE(iou(cm, 2).has_value());
    EXPECT_DOUBLE_EQ(*iou(cm, 1), 0.0);
    // Class 2 is absent from ground truth and prediction: excluded.
    const auto d = miou_detail(cm);
    EXPECT_EQ(d.n_used, 2u);
    EXPECT_EQ(d.n_excluded, 1u);
    EXPECT_DOUBLE_EQ(d.miou, 0.375);
}

TEST(Iou, HalfAndMeanExample) {
    ConfusionMatrix cm(two_classes());
    cm.at(0, 0) = 1;
    cm.at(1, 0) = 1;
    cm.at(1, 1) = 3;
    EXPECT_DOUBLE_EQ(*iou(cm, 0), 0.5);
    EXPECT_DOUBLE_EQ(*iou(cm, 1), 0.75);
    EXPECT_DOUBLE_EQ(miou(cm), 0.625);
}

TEST(Iou, EmptyMatrixHasNoMiou) { EXPECT_THROW(miou(ConfusionMatrix(two_classes())), Error); }

TEST(Miou, PerfectAndDisjoint) {
    Rng rng(3);
    const auto cat = ClassCatalog::numbered(4, true);
    for (int t = 0; t < 20; ++t) {
        const LabelMask gt = test::random_mask(rng, 9, 7, 4, 0.1);
        ConfusionMatrix perfect(cat);
        perfect.update(gt, gt);
        EXPECT_DOUBLE_EQ(miou(perfect), 1.0);
        LabelMask shifted = gt;
        for (auto& v : shifted.data()) v = v == kDefaultIgnoreId ? 0 : (v + 1) % 4;
        ConfusionMatrix wrong(cat);
        wrong.update(shifted, gt);
        EXPECT_DOUBLE_EQ(miou(wrong), 0.0);
    }
}

TEST(Miou, MatchesTripleLoopOracle) {
    Rng rng(11);
    const int n = 6;
    const auto cat = ClassCatalog::numbered(n, true);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<LabelMask> preds, gts;
        ConfusionMatrix cm(cat);
        for (int i = 0; i < 3; ++i) {
            gts.push_back(test::random_mask(rng, 12, 10, n, 0.15));
            preds.push_back(test::random_mask(rng, 12, 10, n));
            cm.update(preds.back(), gts.back());
        }
        EXPECT_NEAR(miou(cm), oracle_miou(preds, gts, n, kDefaultIgnoreId), 1e-12);
    }
}

TEST(Merge, IdentityCommutativeAssociative) {
    Rng rng(21);
    const auto cat = ClassCatalog::numbered(5, true);
    auto random_cm = [&] {
        ConfusionMatrix cm(cat);
        cm.update(test::random_mask(rng, 8, 8, 5), test::random_mask(rng, 8, 8, 5, 0.2));
        return cm;
    };
    for (int t = 0; t < 10; ++t) {
        const auto a = random_cm(), b = random_cm(), c = random_cm();
        EXPECT_EQ(merge(a, ConfusionMatrix(cat)), a);
        EXPECT_EQ(merge(a, b), merge(b, a));
        EXPECT_EQ(merge(merge(a, b), c), merge(a, merge(b, c)));
    }
}

TEST(Merge, SplittingRowsDoesNotChangeTotal) {
    Rng rng(4);
    const auto cat = ClassCatalog::numbered(3, true);
    const LabelMask gt = test::random_mask(rng, 10, 6, 3, 0.1), pred = test::random_mask(rng, 10, 6, 3);
    ConfusionMatrix whole(cat), top(cat), bottom(cat);
    whole.update(pred, gt);
    auto rows = [](const LabelMask& m, int y0, int y1) {
        std::vector<ClassId> d(m.data().begin() + y0 * m.width(), m.data().begin() + y1 * m.width());
        return LabelMask(y1 - y0, m.width(), d);
    };
    top.update(rows(pred, 0, 4), rows(gt, 0, 4));
    bottom.update(rows(pred, 4, 10), rows(gt, 4, 10));
    EXPECT_EQ(merge(top, bottom), whole);
}

TEST(Merge, CatalogMismatch) {
    EXPECT_THROW(merge(ConfusionMatrix(ClassCatalog::numbered(2)), ConfusionMatrix(ClassCatalog::numbered(3))),
                 Error);
}

TEST(Aggregate, Examples) {
    const std::vector<double> a{1.0, 2.0, 3.0};
    const auto s = aggregate_runs(a);
    EXPECT_DOUBLE_EQ(s.mean, 2.0);
    EXPECT_DOUBLE_EQ(s.std, 1.0);
    const std::vector<double> same{0.4, 0.4, 0.4};
    EXPECT_DOUBLE_EQ(aggregate_runs(same).std, 0.0);
    const std::vector<double> two{0.5, 0.7};
    EXPECT_NEAR(aggregate_runs(two).mean, 0.6, 1e-12);
    EXPECT_NEAR(aggregate_runs(two).std, 0.1414213562, 1e-9);
    const std::vector<double> one{0.5};
    EXPECT_THROW(aggregate_runs(one), Error);
    EXPECT_THROW(aggregate_runs({}), Error);
}

TEST(Aggregate, PermutationInvariant) {
    std::vector<double> v{0.3, 0.9, 0.1, 0.55, 0.72};
    const auto ref = aggregate_runs(v);
    Rng rng(2);
    for (int t = 0; t < 10; ++t) {
        shuffle(rng, v);
        const auto s = aggregate_runs(v);
        EXPECT_NEAR(s.mean, ref.mean, 1e-12);
        EXPECT_NEAR(s.std, ref.std, 1e-12);
    }
}

TEST(ObjectSize, Examples) {
    const LabelMask gt1(2, 2, std::vector<ClassId>{1, 1, 0, 0});
    const LabelMask pr1(2, 2, std::vector<ClassId>{1, 0, 0, 0});
    const LabelMask gt2(2, 2, std::vector<ClassId>{0, 0, 0, 0});
    const LabelMask gt3(2, 2, std::vector<ClassId>{1, 1, 1, kDefaultIgnoreId});
    const LabelMask pr3(2, 2, std::vector<ClassId>{1, 1, 1, 1});
    const std::vector<LabelMask> preds{pr1, gt2, pr3}, gts{gt1, gt2, gt3};
    const std::vector<std::string> ids{"a", "b", "c"};
    const auto pts = object_size_report(preds, gts, 1, kDefaultIgnoreId, ids);
    ASSERT_EQ(pts.size(), 2u);  // "b" has neither ground truth nor prediction
    EXPECT_EQ(pts[0].image_id, "a");
    EXPECT_EQ(pts[0].area, 2u);
    EXPECT_DOUBLE_EQ(pts[0].iou, 0.5);
    EXPECT_EQ(pts[1].image_id, "c");
    EXPECT_EQ(pts[1].area, 3u);
    EXPECT_DOUBLE_EQ(pts[1].iou, 1.0);
}

TEST(ObjectSize, PermutationOfImagesPermutesPoints) {
    Rng rng(8);
    std::vector<LabelMask> preds, gts;
    std::vector<std::string> ids;
    for (int i = 0; i < 12; ++i) {
        gts.push_back(test::random_mask(rng, 6, 6, 3, 0.1));
        preds.push_back(test::random_mask(rng, 6, 6, 3));
        ids.push_back(fmt::format("im{}", i));
    }
    auto as_map = [](const std::vector<ObjectSizePoint>& pts) {
        std::map<std::string, std::pair<std::uint64_t, double>> m;
        for (const auto& p : pts) m[p.image_id] = {p.area, p.iou};
        return m;
    };
    const auto ref = as_map(object_size_report(preds, gts, 2, kDefaultIgnoreId, ids));
    std::vector<std::size_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(rng, perm);
    std::vector<LabelMask> p2, g2;
    std::vector<std::string> i2;
    for (auto i : perm) {
        p2.push_back(preds[i]);
        g2.push_back(gts[i]);
        i2.push_back(ids[i]);
    }
    EXPECT_EQ(as_map(object_size_report(p2, g2, 2, kDefaultIgnoreId, i2)), ref);
}
