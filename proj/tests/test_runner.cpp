#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "helpers.hpp"

using namespace fss;
namespace fs = std::filesystem;

namespace {

ExperimentSpec small_spec(const fs::path& out, std::vector<Method> methods = {Method::Linear}) {
    ExperimentSpec s;
    auto ds = synthetic_preset();
    ds.images = 24;
    s.datasets = {synthetic_config_to_json(ds)};
    s.methods = std::move(methods);
    s.shots = {1, 2};
    s.seeds = {17, 23, 42};
    s.train = synthetic_train_preset(Method::Linear, 0);
    s.train.epochs = 2;
    s.output = out.string();
    return s;
}

RunRecord fake(std::string ds, Method m, std::uint64_t seed, int shots, double miou, std::string role = "main") {
    RunRecord r;
    r.dataset = std::move(ds);
    r.encoder = "tiny";
    r.method = m;
    r.seed = seed;
    r.shots = shots;
    r.miou = miou;
    r.role = std::move(role);
    r.lr_stage1 = 0.05;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Records, JsonRoundTrip) {
    auto r = fake("a", Method::Lora, 3, 2, 0.5);
    r.lr_stage2 = 1e-3;
    r.per_class = {{0, "background", 0.9}, {1, "x", std::nullopt}};
    r.object_sizes = {{1, "img", 40, 0.25}};
    r.loss_stage1 = {1.0, 0.5};
    const auto back = RunRecord::from_json(r.to_json());
    EXPECT_EQ(back.to_json(), r.to_json());
    EXPECT_DOUBLE_EQ(back.tuned_lr(), 1e-3);
}

TEST(Experiment, RunsCachesAndShares) {
    const auto dir = test::temp_dir("runner_exp");
    const auto spec = small_spec(dir, {Method::Linear, Method::Multilayer});
    const auto res = run_experiment(spec);
    ASSERT_EQ(res.records.size(), 12u);
    std::map<std::pair<std::uint64_t, int>, std::set<std::string>> digests;
    for (const auto& r : res.records) {
        EXPECT_EQ(r.status, "ok") << r.error;
        ASSERT_TRUE(r.miou.has_value());
        digests[{r.seed, r.shots}].insert(r.manifest_digest);
    }
    // Methods see the same task for a given (seed, shots).
    EXPECT_EQ(digests.size(), 6u);
    for (const auto& [_, d] : digests) EXPECT_EQ(d.size(), 1u);

    const auto again = run_experiment(spec);
    for (std::size_t i = 0; i < again.records.size(); ++i) {
        EXPECT_EQ(again.records[i].status, "cached");
        EXPECT_EQ(again.records[i].miou, res.records[i].miou);
    }
    EXPECT_EQ(collect_records(dir).size(), 12u);
}

TEST(Experiment, FailureIsRecordedNotFatal) {
    const auto dir = test::temp_dir("runner_fail");
    auto spec = small_spec(dir);
    spec.seeds = {1};
    spec.shots = {1, 50};
    const auto res = run_experiment(spec);
    ASSERT_EQ(res.records.size(), 2u);
    EXPECT_EQ(res.records[0].status, "ok");
    EXPECT_EQ(res.records[1].status, "failed");
    EXPECT_NE(res.records[1].error.find("infeasible"), std::string::npos);
    // Failed cells are retried rather than served from cache.
    const auto again = run_experiment(spec);
    EXPECT_EQ(again.records[0].status, "cached");
    EXPECT_EQ(again.records[1].status, "failed");
}

TEST(Experiment, SpecHashSeparatesMethods) {
    ExperimentSpec s = small_spec("/tmp/unused");
    const auto a = spec_hash(cell_spec_json(s, s.datasets[0], Method::Linear));
    const auto b = spec_hash(cell_spec_json(s, s.datasets[0], Method::Svf));
    EXPECT_NE(a, b);
    EXPECT_EQ(a.size(), 16u);
    s.seeds = {1, 2};
    EXPECT_EQ(a, spec_hash(cell_spec_json(s, s.datasets[0], Method::Linear)));
    const auto back = ExperimentSpec::from_json(s.to_json());
    EXPECT_EQ(back.to_json(), s.to_json());
}

TEST(Summarize, MeanStdFormatting) {
    std::vector<RunRecord> rs{fake("a", Method::Linear, 1, 1, 0.50), fake("a", Method::Linear, 2, 1, 0.52),
                              fake("a", Method::Linear, 3, 1, 0.54)};
    const auto t = summarize(rs);
    ASSERT_EQ(t.size(), 1u);
    EXPECT_NEAR(t[0].mean, 0.52, 1e-12);
    EXPECT_NEAR(*t[0].std, 0.02, 1e-12);
    EXPECT_EQ(format_mean_std(t[0].mean, t[0].std), "0.52 ± 0.02");
    EXPECT_EQ(format_mean_std(0.5, std::nullopt), "0.50 ± n/a");
    EXPECT_FALSE(summarize({fake("a", Method::Linear, 1, 1, 0.5)})[0].std.has_value());
}

TEST(Summarize, AveragesDatasetsPerSeedFirst) {
    std::vector<RunRecord> rs{fake("a", Method::Svf, 1, 1, 0.2), fake("b", Method::Svf, 1, 1, 0.4),
                              fake("a", Method::Svf, 2, 1, 0.6), fake("b", Method::Svf, 2, 1, 0.8)};
    auto failed = fake("c", Method::Svf, 1, 1, 0.0);
    failed.status = "failed";
    failed.miou.reset();
    rs.push_back(failed);
    rs.push_back(fake("a", Method::Svf, 3, 1, 0.99, "grid"));
    const auto t = summarize(rs);
    ASSERT_EQ(t.size(), 1u);
    EXPECT_NEAR(t[0].per_seed.at(1), 0.3, 1e-12);
    EXPECT_NEAR(t[0].per_seed.at(2), 0.7, 1e-12);
    EXPECT_NEAR(t[0].mean, 0.5, 1e-12);
    EXPECT_NEAR(*t[0].std, std::sqrt(0.08), 1e-12);
    EXPECT_EQ(t[0].datasets, (std::vector<std::string>{"a", "b"}));
}

TEST(Summarize, PermutationInvariant) {
    std::vector<RunRecord> rs;
    Rng rng(1);
    for (auto m : {Method::Linear, Method::Lora})
        for (std::uint64_t s : {1, 2, 3})
            for (int k : {1, 5}) rs.push_back(fake("a", m, s, k, uniform01(rng)));
    const auto ref = summarize(rs);
    for (int t = 0; t < 5; ++t) {
        shuffle(rng, rs);
        const auto got = summarize(rs);
        ASSERT_EQ(got.size(), ref.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_EQ(got[i].method, ref[i].method);
            EXPECT_NEAR(got[i].mean, ref[i].mean, 1e-12);
            EXPECT_NEAR(*got[i].std, *ref[i].std, 1e-12);
        }
    }
}

TEST(LrTransfer, Fixture) {
    const LrScores sc = {{"city", {{1e-2, 0.40}, {1e-3, 0.50}, {1e-4, 0.45}}},
                         {"coco", {{1e-2, 0.30}, {1e-3, 0.20}, {1e-4, 0.10}}},
                         {"ppd", {{1e-2, 0.60}, {1e-3, 0.70}}}};
    const auto t = lr_transfer(sc);
    ASSERT_EQ(t.datasets, (std::vector<std::string>{"city", "coco", "ppd"}));
    EXPECT_DOUBLE_EQ(t.best.at("city"), 1e-3);
    EXPECT_DOUBLE_EQ(t.best.at("coco"), 1e-2);
    EXPECT_EQ(t.cells[0][0].text(), "-");
    EXPECT_NEAR(t.cells[0][1].drop, 0.10, 1e-12);  // city lr on coco
    EXPECT_NEAR(t.cells[1][0].drop, 0.10, 1e-12);  // coco lr on city
    EXPECT_NEAR(t.cells[0][2].drop, 0.0, 1e-12);   // same best lr
    EXPECT_NEAR(t.cells[1][2].drop, 0.10, 1e-12);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (t.cells[i][j].kind == TransferCell::Kind::Value) EXPECT_GE(t.cells[i][j].drop, 0.0);

    const LrScores gap = {{"a", {{1e-2, 0.5}}}, {"b", {{1e-3, 0.4}}}};
    EXPECT_EQ(lr_transfer(gap).cells[0][1].text(), "n/a");
    EXPECT_DOUBLE_EQ(best_lr({{1e-3, 0.5}, {1e-2, 0.5}}), 1e-2);
}

TEST(Report, DeterministicFilesAndFormats) {
    std::vector<RunRecord> rs;
    for (auto m : {Method::Linear, Method::Svf, Method::Lora})
        for (std::uint64_t s : {17, 23})
            for (int k : {1, 2}) rs.push_back(fake("synthetic", m, s, k, 0.3 + 0.1 * k + 0.01 * s));
    for (double lr : {1e-2, 1e-3}) {
        auto g = fake("synthetic", Method::Svf, 17, 1, lr > 5e-3 ? 0.4 : 0.5, "grid");
        g.lr_stage2 = lr;
        rs.push_back(g);
    }
    const auto a = test::temp_dir("report_a"), b = test::temp_dir("report_b");
    const auto files = emit_report(rs, all_report_formats(), a);
    auto shuffled = rs;
    Rng rng(3);
    shuffle(rng, shuffled);
    emit_report(shuffled, all_report_formats(), b);
    for (const auto& f : files) EXPECT_EQ(slurp(f), slurp(b / f.filename())) << f.filename();
    for (const char* f : {"summary.csv", "report.json", "miou_vs_shots.svg", "report_manifest.json",
                          "lr_transfer_svf.csv"})
        EXPECT_TRUE(fs::exists(a / f)) << f;

    const std::string svg = slurp(a / "miou_vs_shots.svg");
    std::size_t series = 0;
    for (auto p = svg.find("class=\"series\""); p != std::string::npos; p = svg.find("class=\"series\"", p + 1))
        ++series;
    EXPECT_EQ(series, 3u);
    EXPECT_NE(slurp(a / "summary.csv").find("±"), std::string::npos);
}

TEST(Report, EmptyFormatsAndErrors) {
    const std::vector<RunRecord> rs{fake("a", Method::Linear, 1, 1, 0.5), fake("a", Method::Linear, 2, 1, 0.6)};
    const auto dir = test::temp_dir("report_min");
    const auto files = emit_report(rs, {}, dir);
    ASSERT_EQ(files.size(), 1u);
    EXPECT_EQ(files[0].filename(), "report_manifest.json");
    EXPECT_THROW(emit_report(rs, {"pdf"}, dir), Error);
    EXPECT_THROW(emit_report({}, {"csv"}, dir), Error);
    // A regular file where the output directory should be.
    std::ofstream(dir / "blocker") << "x";
    EXPECT_THROW(emit_report(rs, {"csv"}, dir / "blocker" / "out"), Error);
}

TEST(Checkpoint, RoundTrip) {
    auto model = test::tiny_model<double>(Method::Lora, 3, 4);
    lora_inject(model, LoraConfig{}, 2);
    Rng rng(5);
    for (auto& [name, p] : model.encoder->params())
        if (name.ends_with("lora_B")) p.value.setConstant(0.01);
    model.head.set_running_stats(nn::RowVec<double>::Constant(32, 0.1), nn::RowVec<double>::Constant(32, 2.0));
    const auto dir = test::temp_dir("ckpt");
    save_checkpoint(dir / "m.bin", model);
    auto fresh = test::tiny_model<double>(Method::Lora, 3, 99);
    load_checkpoint(dir / "m.bin", fresh);
    EXPECT_EQ(fresh.encoder->params().hashes(), model.encoder->params().hashes());
    EXPECT_EQ(fresh.head.params().hashes(), model.head.params().hashes());
    EXPECT_EQ(fresh.head.running_var(), model.head.running_var());
    const auto img = test::random_image(rng, 64, 64);
    EXPECT_EQ(fresh.encoder->extract(img).data, model.encoder->extract(img).data);
    std::ofstream(dir / "bad.bin") << "garbage";
    EXPECT_THROW(load_checkpoint(dir / "bad.bin", fresh), Error);
}
