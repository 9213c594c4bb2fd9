// fss: sample tasks, train and evaluate single runs, sweep experiments,
// emit reports.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "fss.hpp"

namespace fs = std::filesystem;
using fss::json;

namespace {

/// "synthetic", a dataset directory, or a JSON file holding a dataset ref.
json dataset_ref_from_arg(const std::string& arg) {
    if (arg == "synthetic") return fss::synthetic_config_to_json(fss::synthetic_preset());
    if (fs::is_directory(arg)) return {{"kind", "dir"}, {"path", arg}};
    return fss::read_json_file(arg);
}

fss::ExperimentSpec load_spec(const std::string& path) {
    return fss::ExperimentSpec::from_json(fss::read_json_file(path));
}

void print_record(const fss::RunRecord& r) {
    if (!r.succeeded()) {
        fmt::print("{:<8} {:<12} {:<10} seed={:<6} shots={:<3} error: {}\n", r.status, r.dataset,
                   fss::method_name(r.method), r.seed, r.shots, r.error);
        return;
    }
    fmt::print("{:<8} {:<12} {:<10} seed={:<6} shots={:<3} lr={:<8g} mIoU={:.4f}\n", r.status, r.dataset,
               fss::method_name(r.method), r.seed, r.shots, r.tuned_lr(), *r.miou);
}

int cmd_sample(const std::string& dataset, int shots, std::uint64_t seed, int min_pixels, const std::string& out) {
    const fss::Dataset ds = fss::open_dataset(dataset_ref_from_arg(dataset));
    fss::TaskRequest req;
    req.k = shots;
    req.seed = seed;
    req.min_pixels = min_pixels;
    const fss::TaskManifest m = fss::sample_manifest(ds, req);
    if (out.empty())
        std::cout << m.dump();
    else
        fss::write_text_atomic(out, m.dump());
    return 0;
}

int cmd_train(const std::string& config, const std::string& out) {
    const fss::ExperimentSpec spec = load_spec(config);
    if (spec.lr.kind == fss::LrPolicyKind::Grid)
        throw fss::Error("train runs a single configuration; use 'fss sweep' for grid searches");
    const json& dref = spec.datasets.front();
    const fss::Dataset ds = fss::open_dataset(dref);
    const fss::Method method = spec.methods.front();
    fss::CellRequest req;
    req.dataset = &ds;
    req.dataset_ref = dref;
    req.encoder_ref = spec.encoder;
    req.min_pixels = spec.min_pixels;
    req.spec = fss::cell_spec_json(spec, dref, method);
    req.spec_hash = fss::spec_hash(req.spec);
    req.train = spec.train;
    req.train.method = method;
    req.train.seed = spec.seeds.front();
    req.train.base_lr = fss::stage1_lr(spec, dref);
    req.shots = spec.shots.front();

    const fs::path dir = out;
    json cfg = req.spec;
    cfg["seed"] = req.train.seed;
    cfg["shots"] = req.shots;
    cfg["lr_stage1"] = req.train.base_lr;
    cfg["lr_stage2"] = req.train.lr_for_stage(2);
    fss::write_text_atomic(dir / "config.json", cfg.dump(2) + "\n");
    fss::CellOutput res = fss::run_cell(req, true);
    fss::write_text_atomic(dir / "manifest.json", res.manifest.dump());
    fss::write_text_atomic(dir / "record.json", res.record.to_json().dump(2) + "\n");
    fss::save_checkpoint(dir / "params.bin", *res.model);
    print_record(res.record);
    const auto& t = *res.record.trainable;
    fmt::print("trainable {} / {} ({:.4f}%)\n", t.trainable, t.total, 100.0 * t.fraction);
    return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& dataset_override) {
    const fs::path dir = run_dir;
    const json cfg = fss::read_json_file(dir / "config.json");
    const json dref = dataset_override.empty() ? cfg.at("dataset") : dataset_ref_from_arg(dataset_override);
    const fss::Dataset ds = fss::open_dataset(dref);
    const fss::TaskManifest m = fss::TaskManifest::from_json(fss::read_json_file(dir / "manifest.json"));
    const fss::FewShotTask task = fss::load_task(ds, m);
    const fss::Method method = fss::parse_method(cfg.at("train").at("method").get<std::string>());
    fss::SegModel<double> model =
        fss::make_model<double>(fss::make_encoder<double>(cfg.at("encoder")), method, task.catalog, m.seed);
    fss::load_checkpoint(dir / "params.bin", model);
    const fss::QueryEvaluation ev = fss::evaluate_query(model, task);
    const fss::MiouResult r = fss::miou_detail(ev.confusion);
    fmt::print("query images: {}\nmIoU: {:.4f}\n", task.query.size(), r.miou);
    for (std::size_t i = 0; i < task.catalog.size(); ++i) {
        const auto& c = task.catalog.classes()[i];
        if (r.per_class[i])
            fmt::print("  {:>4} {:<20} {:.4f}\n", c.id, c.name, *r.per_class[i]);
        else
            fmt::print("  {:>4} {:<20} n/a\n", c.id, c.name);
    }
    return 0;
}

int cmd_sweep(const std::string& config, const std::string& out) {
    fss::ExperimentSpec spec = load_spec(config);
    if (!out.empty()) spec.output = out;
    const auto res = fss::run_experiment(spec, [](const fss::RunRecord& r, const fs::path&) { print_record(r); });
    for (const auto& [key, gs] : res.grid) fmt::print("grid {}: best lr {:g}\n", key, gs.best_lr);
    std::size_t failed = 0;
    for (const auto& r : res.records) failed += !r.succeeded();
    const fss::ReportTable table = fss::summarize(res.records);
    for (const auto& c : table)
        fmt::print("{:<10} {:<10} {:>3}-shot  {}\n", c.encoder, c.method, c.shots, fss::format_mean_std(c.mean, c.std));
    fmt::print("{} runs, {} failed, results under {}\n", res.records.size(), failed, spec.output_root().string());
    return failed == 0 ? 0 : 2;
}

int cmd_report(const std::string& records, const std::string& out, const std::vector<std::string>& formats) {
    std::vector<fss::RunRecord> rs;
    const fs::path p = records.empty() ? fss::results_root() : fs::path(records);
    if (fs::is_directory(p))
        rs = fss::collect_records(p);
    else
        rs = fss::read_records_jsonl(p);
    const auto written = fss::emit_report(rs, formats, out);
    for (const auto& c : fss::summarize(rs))
        fmt::print("{:<10} {:<10} {:>3}-shot  {}\n", c.encoder, c.method, c.shots, fss::format_mean_std(c.mean, c.std));
    for (const auto& f : written) fmt::print("wrote {}\n", f.string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot segmentation benchmark toolkit"};
    app.set_version_flag("--version", std::string(fss::kToolkitVersion));
    app.require_subcommand(1);

    std::string dataset = "synthetic", out, config, run_dir, records;
    int shots = 1, min_pixels = 1;
    std::uint64_t seed = 0;
    std::vector<std::string> formats = fss::all_report_formats();

    auto* sample = app.add_subcommand("sample", "Sample a k-shot task and print its manifest");
    sample->add_option("--dataset", dataset, "'synthetic', a dataset directory or a dataset ref JSON file");
    sample->add_option("--shots,-k", shots, "Shots per class")->check(CLI::PositiveNumber);
    sample->add_option("--seed", seed, "Sampler seed");
    sample->add_option("--min-pixels", min_pixels, "Pixels needed for a class to count as present")
        ->check(CLI::PositiveNumber);
    sample->add_option("--out", out, "Write the manifest here instead of stdout");

    auto* train = app.add_subcommand("train", "Train one configuration and save a checkpoint");
    train->add_option("--config", config, "Experiment config (first dataset, method, seed and shots)")->required();
    train->add_option("--out", out, "Run directory")->required();

    auto* eval = app.add_subcommand("eval", "Evaluate a trained run on its query split");
    eval->add_option("--run", run_dir, "Run directory written by 'train'")->required();
    eval->add_option("--dataset", dataset, "Override the dataset reference");

    auto* sweep = app.add_subcommand("sweep", "Run every cell of an experiment config");
    sweep->add_option("--config", config, "Experiment config")->required();
    sweep->add_option("--out", out, "Results root (default: $FSS_RESULTS_ROOT or ./results)");

    auto* report = app.add_subcommand("report", "Summarize records and write report files");
    report->add_option("--records", records, "Results root or records.jsonl (default: results root)");
    report->add_option("--out", out, "Report directory")->required();
    report->add_option("--formats", formats, "Any of csv, json, objects, svg")->delimiter(',');

    CLI11_PARSE(app, argc, argv);
    try {
        if (*sample) return cmd_sample(dataset, shots, seed, min_pixels, out);
        if (*train) return cmd_train(config, out);
        if (*eval) return cmd_eval(run_dir, eval->count("--dataset") ? dataset : std::string());
        if (*sweep) return cmd_sweep(config, out);
        if (*report) return cmd_report(records, out, formats);
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 0;
}
