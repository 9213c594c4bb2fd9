#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace fss;

namespace {

// Small in-memory dataset: each train image contains the listed classes
// (one pixel each on a background of class 0), plus `n_val` query images.
Dataset presence_dataset(const std::vector<std::vector<ClassId>>& contents, int n_classes, int n_val = 2,
                         bool background_is_class = false) {
    auto store = std::make_shared<std::map<std::string, SegSample>>();
    std::vector<std::string> ids;
    std::map<std::string, std::string> splits;
    const ClassId fill = background_is_class ? 0 : kDefaultIgnoreId;
    auto add = [&](const std::string& id, const std::vector<ClassId>& cls, std::string_view split) {
        SegSample s{id, Image(4, 4, 3, 0.5f), LabelMask(4, 4, fill)};
        for (std::size_t i = 0; i < cls.size(); ++i) s.mask.data()[i] = cls[i];
        ids.push_back(id);
        splits[id] = std::string(split);
        store->emplace(id, std::move(s));
    };
    for (std::size_t i = 0; i < contents.size(); ++i) add(fmt::format("t{:02d}", i + 1), contents[i], kTrainSplit);
    for (int i = 0; i < n_val; ++i) add(fmt::format("v{:02d}", i + 1), {}, kValSplit);
    std::vector<ClassEntry> cls;
    for (int c = background_is_class ? 0 : 1; c <= n_classes; ++c) cls.push_back({c, fmt::format("c{}", c)});
    return Dataset("fixture", ClassCatalog(cls, kDefaultIgnoreId, background_is_class), ids, splits,
                   [store](const std::string& id) { return store->at(id); });
}

}  // namespace

TEST(Index, UniversalPresenceListsEveryImage) {
    std::vector<std::vector<ClassId>> contents(8, {1, 2, 3, 4, 5});
    const Dataset ds = presence_dataset(contents, 5);
    const auto idx = build_index(ds);
    ASSERT_EQ(idx.lists.size(), 5u);
    for (const auto& [c, list] : idx.lists) EXPECT_EQ(list, ds.ids_in(kTrainSplit)) << c;
}

TEST(Index, PresenceListFixture) {
    // Class 3 appears only in images 2 and 5.
    const Dataset ds = presence_dataset({{1}, {1, 3}, {2}, {2}, {3}, {1, 2}}, 3);
    const auto idx = build_index(ds);
    EXPECT_EQ(idx.lists.at(3), (std::vector<std::string>{"t02", "t05"}));
    EXPECT_EQ(idx.lists.at(1), (std::vector<std::string>{"t01", "t02", "t06"}));
}

TEST(Index, UnsatisfiableClassNamed) {
    const Dataset ds = presence_dataset({{1}, {2}}, 3);
    try {
        build_index(ds);
        FAIL() << "expected UnsatisfiableClass";
    } catch (const UnsatisfiableClass& e) {
        EXPECT_EQ(e.class_id(), 3);
    }
}

TEST(Index, MinPixelsThreshold) {
    const Dataset ds = presence_dataset({{1, 1, 2}, {1, 2, 2}}, 2);
    EXPECT_EQ(build_index(ds, 2).lists.at(1), (std::vector<std::string>{"t01"}));
    EXPECT_EQ(build_index(ds, 2).lists.at(2), (std::vector<std::string>{"t02"}));
    EXPECT_THROW(build_index(ds, 3), UnsatisfiableClass);
    EXPECT_THROW(build_index(ds, 0), Error);
}

TEST(Sampler, DisjointSupportHasNkImages) {
    // Every image holds every class, so no image can serve two classes.
    std::vector<std::vector<ClassId>> contents(30, {1, 2, 3, 4, 5});
    const Dataset ds = presence_dataset(contents, 5);
    const auto idx = build_index(ds);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = sample_support(idx, {2, seed, {}, 1000});
        EXPECT_EQ(s.size(), 10u);
        EXPECT_EQ(std::set<std::string>(s.begin(), s.end()).size(), 10u);
    }
}

TEST(Sampler, TwoClassOneShot) {
    // PPD-like: background and one foreground class in every image.
    std::vector<std::vector<ClassId>> contents(12, {0, 1});
    const Dataset ds = presence_dataset(contents, 1, 4, true);
    const auto m = sample_manifest(ds, TaskRequest{1, 3});
    EXPECT_EQ(m.support.size(), 2u);
    EXPECT_NE(m.support[0], m.support[1]);
    EXPECT_EQ(m.class_order, (std::vector<ClassId>{0, 1}));
}

TEST(Sampler, EachClassGetsKImagesContainingIt) {
    Rng rng(5);
    std::vector<std::vector<ClassId>> contents;
    for (int i = 0; i < 40; ++i) {
        std::vector<ClassId> c;
        for (ClassId k = 1; k <= 4; ++k)
            if (uniform01(rng) < 0.4) c.push_back(k);
        if (c.empty()) c.push_back(1 + static_cast<ClassId>(i % 4));
        contents.push_back(c);
    }
    const Dataset ds = presence_dataset(contents, 4);
    const auto idx = build_index(ds);
    for (int k : {1, 2, 3}) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto s = sample_support(idx, {k, seed, {}, 1000});
            ASSERT_EQ(s.size(), static_cast<std::size_t>(4 * k));
            EXPECT_EQ(std::set<std::string>(s.begin(), s.end()).size(), s.size());
            for (ClassId c = 1; c <= 4; ++c) {
                const auto& list = idx.lists.at(c);
                for (int j = 0; j < k; ++j) {
                    const auto& id = s[static_cast<std::size_t>((c - 1) * k + j)];
                    EXPECT_TRUE(std::binary_search(list.begin(), list.end(), id));
                }
            }
        }
    }
}

TEST(Sampler, DeterministicForSeed) {
    std::vector<std::vector<ClassId>> contents(20, {1, 2, 3});
    const Dataset ds = presence_dataset(contents, 3);
    const auto a = sample_manifest(ds, TaskRequest{2, 99});
    const auto b = sample_manifest(ds, TaskRequest{2, 99});
    EXPECT_EQ(a.dump(), b.dump());
    bool differs = false;
    for (std::uint64_t s = 100; s < 110 && !differs; ++s) differs = sample_manifest(ds, TaskRequest{2, s}).support != a.support;
    EXPECT_TRUE(differs);
}

TEST(Sampler, InfeasibleK) {
    const Dataset ds = presence_dataset({{1, 2}, {1, 2}, {1}}, 2);
    EXPECT_THROW(sample_manifest(ds, TaskRequest{3, 0}), InfeasibleTask);
    // Both classes have 2+ images, but jointly there are only 3.
    EXPECT_THROW(sample_support(build_index(ds), {2, 0, {2, 1}, 50}), InfeasibleTask);
    EXPECT_THROW(sample_support(build_index(ds), {0, 0, {}, 50}), Error);
}

TEST(Sampler, ClassOrderMustBePermutation) {
    std::vector<std::vector<ClassId>> contents(6, {1, 2});
    const auto idx = build_index(presence_dataset(contents, 2));
    EXPECT_THROW(sample_support(idx, {1, 0, {1}, 10}), Error);
    EXPECT_NO_THROW(sample_support(idx, {1, 0, {2, 1}, 10}));
}

TEST(Task, SupportAndQueryDisjoint) {
    SyntheticBlobConfig c;
    c.images = 30;
    const Dataset ds = synth_blobs(c);
    const auto task = make_task(ds, TaskRequest{2, 5});
    std::set<std::string> q;
    for (const auto& s : task.query) q.insert(s.image_id);
    for (const auto& s : task.support) EXPECT_FALSE(q.contains(s.image_id));
    EXPECT_EQ(task.query.size(), ds.ids_in(kValSplit).size());
    EXPECT_EQ(task.support.size(), static_cast<std::size_t>(2 * 3));
}

TEST(Manifest, RoundTripAndDigestCheck) {
    SyntheticBlobConfig c;
    c.images = 20;
    const Dataset ds = synth_blobs(c);
    const auto m = sample_manifest(ds, TaskRequest{1, 8});
    const auto back = TaskManifest::from_json(nlohmann::json::parse(m.dump()));
    EXPECT_EQ(back.dump(), m.dump());
    EXPECT_EQ(back.digest(), m.digest());
    const auto t1 = load_task(ds, back);
    const auto t2 = make_task(ds, TaskRequest{1, 8});
    ASSERT_EQ(t1.support.size(), t2.support.size());
    for (std::size_t i = 0; i < t1.support.size(); ++i) EXPECT_EQ(t1.support[i].image_id, t2.support[i].image_id);

    c.seed = 1;
    const Dataset other = synth_blobs(c);
    EXPECT_THROW(load_task(other, m), Error);
}
