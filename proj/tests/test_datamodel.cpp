#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace fss;

TEST(Catalog, RejectsDuplicateAndIgnoreCollision) {
    EXPECT_THROW(ClassCatalog({{0, "a"}, {0, "b"}}), Error);
    EXPECT_THROW(ClassCatalog({{0, "a"}, {255, "b"}}), Error);
    EXPECT_THROW(ClassCatalog({{-1, "a"}}), Error);
    EXPECT_THROW(ClassCatalog({{1, "a"}}, 255, true), Error);
}

TEST(ValidateMask, LegalValuesAreOk) {
    const auto cat = ClassCatalog::numbered(2);
    LabelMask m(2, 2, 0);
    m.at(0, 1) = 1;
    m.at(1, 1) = 255;
    EXPECT_TRUE(validate_mask(m, cat).ok());
}

TEST(ValidateMask, UnknownClassIsNamed) {
    const auto cat = ClassCatalog::numbered(2);
    LabelMask m(3, 3, 0);
    m.at(2, 1) = 7;
    const auto r = validate_mask(m, cat);
    ASSERT_FALSE(r.ok());
    ASSERT_EQ(r.violations.size(), 1u);
    EXPECT_NE(r.violations[0].message.find("unknown class 7"), std::string::npos);
    EXPECT_EQ(r.violations[0].y, 2);
    EXPECT_EQ(r.violations[0].x, 1);
}

TEST(ValidateMask, EmptyMaskIsStructuralError) {
    EXPECT_THROW(validate_mask(LabelMask(0, 0, 0), ClassCatalog::numbered(2)), ShapeError);
}

TEST(ClassPresence, Examples) {
    EXPECT_EQ(class_presence(LabelMask(4, 4, 0), 1), (std::set<ClassId>{0}));
    LabelMask m(4, 4, 0);
    m.at(0, 0) = m.at(1, 1) = m.at(2, 2) = 2;
    EXPECT_FALSE(class_presence(m, 5).contains(2));
    EXPECT_TRUE(class_presence(m, 3).contains(2));
    EXPECT_TRUE(class_presence(LabelMask(4, 4, 255), 1).empty());
}

TEST(ClassPresence, EqualsDistinctValuesAndIsMonotone) {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const LabelMask m = test::random_mask(rng, 8, 8, 6, 0.2);
        std::set<ClassId> distinct;
        for (auto v : m.data())
            if (v != kDefaultIgnoreId) distinct.insert(v);
        EXPECT_EQ(class_presence(m, 1), distinct);
        for (int p = 1; p < 20; ++p) {
            const auto a = class_presence(m, p), b = class_presence(m, p + 1);
            EXPECT_TRUE(std::includes(a.begin(), a.end(), b.begin(), b.end()));
        }
    }
}

TEST(ValidateSample, ShapeMismatchThrows) {
    SegSample s{"x", Image(4, 4, 3), LabelMask(4, 5, 0)};
    EXPECT_THROW(validate_sample(s, ClassCatalog::numbered(2)), Error);
}
