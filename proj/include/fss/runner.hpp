#pragma once

// Experiment orchestration: per-cell runs with on-disk caching, summaries,
// learning-rate transfer and report emission.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <fmt/format.h>

#include "fss/config.hpp"
#include "fss/metrics.hpp"
#include "fss/sampler.hpp"
#include "fss/trainer.hpp"

namespace fss {

// ---------------------------------------------------------------------------
// Records

struct ClassScore {
    ClassId id = 0;
    std::string name;
    std::optional<double> iou;
};

struct ObjectSizeEntry {
    ClassId class_id = 0;
    std::string image_id;
    std::uint64_t area = 0;
    double iou = 0.0;
};

struct RunRecord {
    std::string status = "ok";  // ok | failed | cached
    std::string error;
    std::string role = "main";  // main | grid
    json spec;
    std::string spec_hash;
    std::string dataset;
    std::string encoder;
    Method method = Method::Linear;
    std::uint64_t seed = 0;
    int shots = 1;
    double lr_stage1 = 0.0;
    std::optional<double> lr_stage2;
    std::string manifest_digest;
    std::optional<double> miou;
    std::vector<ClassScore> per_class;
    std::optional<TrainableReport> trainable;
    std::vector<double> loss_stage1;
    std::vector<double> loss_stage2;
    std::optional<double> support_loss_stage1;
    std::optional<double> support_loss_stage2_initial;
    std::optional<double> support_loss_stage2_final;
    std::vector<ObjectSizeEntry> object_sizes;
    double wall_seconds = 0.0;
    std::string toolkit_version{kToolkitVersion};

    bool succeeded() const { return status == "ok" || status == "cached"; }
    /// The learning rate the grid search tunes for this method.
    double tuned_lr() const { return has_stage2(method) && lr_stage2 ? *lr_stage2 : lr_stage1; }

    json to_json() const {
        auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
        json pc = json::array();
        for (const auto& c : per_class) pc.push_back({{"id", c.id}, {"name", c.name}, {"iou", opt(c.iou)}});
        json tr = nullptr;
        if (trainable) {
            json groups = json::array();
            for (const auto& g : trainable->groups)
                groups.push_back({{"name", g.name}, {"count", g.count}, {"trainable", g.trainable}});
            tr = {{"total", trainable->total}, {"trainable", trainable->trainable},
                  {"fraction", trainable->fraction}, {"groups", groups}};
        }
        json os = json::array();
        for (const auto& o : object_sizes)
            os.push_back({{"class_id", o.class_id}, {"image_id", o.image_id}, {"area", o.area}, {"iou", o.iou}});
        return {{"status", status},
                {"error", error},
                {"role", role},
                {"spec", spec},
                {"spec_hash", spec_hash},
                {"dataset", dataset},
                {"encoder", encoder},
                {"method", std::string(method_name(method))},
                {"seed", seed},
                {"shots", shots},
                {"lr_stage1", lr_stage1},
                {"lr_stage2", opt(lr_stage2)},
                {"manifest_digest", manifest_digest},
                {"miou", opt(miou)},
                {"per_class", pc},
                {"trainable", tr},
                {"loss_curves", {{"stage1", loss_stage1}, {"stage2", loss_stage2}}},
                {"support_loss",
                 {{"stage1_final", opt(support_loss_stage1)},
                  {"stage2_initial", opt(support_loss_stage2_initial)},
                  {"stage2_final", opt(support_loss_stage2_final)}}},
                {"object_sizes", os},
                {"wall_seconds", wall_seconds},
                {"toolkit_version", toolkit_version}};
    }

    static RunRecord from_json(const json& j) {
        auto opt = [](const json& v) { return v.is_null() ? std::optional<double>() : std::optional<double>(v.get<double>()); };
        RunRecord r;
        r.status = j.at("status").get<std::string>();
        r.error = j.value("error", std::string());
        r.role = j.value("role", std::string("main"));
        r.spec = j.value("spec", json::object());
        r.spec_hash = j.value("spec_hash", std::string());
        r.dataset = j.at("dataset").get<std::string>();
        r.encoder = j.value("encoder", std::string());
        r.method = parse_method(j.at("method").get<std::string>());
        r.seed = j.at("seed").get<std::uint64_t>();
        r.shots = j.at("shots").get<int>();
        r.lr_stage1 = j.value("lr_stage1", 0.0);
        r.lr_stage2 = opt(j.value("lr_stage2", json(nullptr)));
        r.manifest_digest = j.value("manifest_digest", std::string());
        r.miou = opt(j.value("miou", json(nullptr)));
        for (const auto& c : j.value("per_class", json::array()))
            r.per_class.push_back({c.at("id").get<ClassId>(), c.at("name").get<std::string>(), opt(c.at("iou"))});
        if (j.contains("trainable") && !j.at("trainable").is_null()) {
            const auto& t = j.at("trainable");
            TrainableReport tr;
            tr.total = t.at("total").get<std::int64_t>();
            tr.trainable = t.at("trainable").get<std::int64_t>();
            tr.fraction = t.at("fraction").get<double>();
            for (const auto& g : t.at("groups"))
                tr.groups.push_back({g.at("name").get<std::string>(), g.at("count").get<std::int64_t>(),
                                     g.at("trainable").get<bool>()});
            r.trainable = tr;
        }
        if (j.contains("loss_curves")) {
            r.loss_stage1 = j.at("loss_curves").value("stage1", std::vector<double>{});
            r.loss_stage2 = j.at("loss_curves").value("stage2", std::vector<double>{});
        }
        if (j.contains("support_loss")) {
            const auto& s = j.at("support_loss");
            r.support_loss_stage1 = opt(s.value("stage1_final", json(nullptr)));
            r.support_loss_stage2_initial = opt(s.value("stage2_initial", json(nullptr)));
            r.support_loss_stage2_final = opt(s.value("stage2_final", json(nullptr)));
        }
        for (const auto& o : j.value("object_sizes", json::array()))
            r.object_sizes.push_back({o.at("class_id").get<ClassId>(), o.at("image_id").get<std::string>(),
                                      o.at("area").get<std::uint64_t>(), o.at("iou").get<double>()});
        r.wall_seconds = j.value("wall_seconds", 0.0);
        r.toolkit_version = j.value("toolkit_version", std::string());
        return r;
    }
};

inline std::vector<RunRecord> read_records_jsonl(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw Error(fmt::format("cannot open '{}'", p.string()));
    std::vector<RunRecord> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(RunRecord::from_json(json::parse(line)));
    return out;
}

/// Every record.json under `root`, in path order.
inline std::vector<RunRecord> collect_records(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    if (fs::is_directory(root))
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_regular_file() && e.path().filename() == "record.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<RunRecord> out;
    for (const auto& f : files) out.push_back(RunRecord::from_json(read_json_file(f)));
    return out;
}

// ---------------------------------------------------------------------------
// One cell

struct CellRequest {
    const Dataset* dataset = nullptr;
    const PresenceIndex* index = nullptr;
    json dataset_ref;
    json encoder_ref;
    TrainConfig train;  // method, seed and lrs filled in
    int shots = 1;
    int min_pixels = 1;
    std::string role = "main";
    json spec;
    std::string spec_hash;
};

struct CellOutput {
    RunRecord record;
    TaskManifest manifest;
    std::optional<SegModel<double>> model;
};

/// Samples the task, trains both stages and evaluates on the query split.
/// Exceptions propagate.
inline CellOutput run_cell(const CellRequest& req, bool keep_model = false) {
    const auto t0 = std::chrono::steady_clock::now();
    CellOutput out;
    RunRecord& r = out.record;
    r.role = req.role;
    r.spec = req.spec;
    r.spec_hash = req.spec_hash;
    r.dataset = req.dataset->name();
    r.encoder = encoder_label(req.encoder_ref);
    r.method = req.train.method;
    r.seed = req.train.seed;
    r.shots = req.shots;
    r.lr_stage1 = req.train.base_lr;
    if (has_stage2(req.train.method)) r.lr_stage2 = req.train.lr_for_stage(2);

    TaskRequest treq;
    treq.k = req.shots;
    treq.seed = req.train.seed;
    treq.min_pixels = req.min_pixels;
    out.manifest = req.index ? sample_manifest(*req.dataset, *req.index, treq) : sample_manifest(*req.dataset, treq);
    r.manifest_digest = out.manifest.digest();
    const FewShotTask task = load_task(*req.dataset, out.manifest);

    SegModel<double> model =
        make_model<double>(make_encoder<double>(req.encoder_ref), req.train.method, task.catalog, req.train.seed);
    const StageResult s1 = train_stage1(model, task, req.train);
    r.loss_stage1 = s1.loss_curve;
    r.support_loss_stage1 = s1.final_support_loss;
    const StageResult s2 = train_stage2(model, task, req.train);
    if (!s2.skipped) {
        r.loss_stage2 = s2.loss_curve;
        r.support_loss_stage2_initial = s2.initial_support_loss;
        r.support_loss_stage2_final = s2.final_support_loss;
    }
    r.trainable = s2.skipped ? s1.trainable : s2.trainable;

    const QueryEvaluation ev = evaluate_query(model, task, true);
    const MiouResult m = miou_detail(ev.confusion);
    r.miou = m.miou;
    for (std::size_t i = 0; i < task.catalog.size(); ++i)
        r.per_class.push_back({task.catalog.classes()[i].id, task.catalog.classes()[i].name, m.per_class[i]});
    std::vector<LabelMask> gts;
    std::vector<std::string> ids;
    for (const auto& q : task.query) {
        gts.push_back(q.mask);
        ids.push_back(q.image_id);
    }
    for (const auto& c : task.catalog.classes())
        for (const auto& p : object_size_report(ev.predictions, gts, c.id, task.catalog.ignore_id(), ids))
            r.object_sizes.push_back({c.id, p.image_id, p.area, p.iou});
    if (keep_model) out.model = std::move(model);
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentResult {
    std::vector<RunRecord> records;       // main cells
    std::vector<RunRecord> grid_records;  // lr search cells
    std::map<std::string, GridSearchResult> grid;  // "dataset/method" -> search
};

using ProgressFn = std::function<void(const RunRecord&, const std::filesystem::path&)>;

namespace detail {

inline void append_line(const std::filesystem::path& p, const std::string& line) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::app | std::ios::binary);
    if (!out) throw Error(fmt::format("cannot append to '{}'", p.string()));
    const std::string l = line + "\n";
    out.write(l.data(), static_cast<std::streamsize>(l.size()));
}

inline std::string lr_tag(double lr) { return fmt::format("{:g}", lr); }

/// Runs a cell unless `dir` holds a successful record; persists the outcome.
inline RunRecord run_or_load(const CellRequest& req, const std::filesystem::path& dir,
                             const std::filesystem::path& root, const ProgressFn& progress) {
    namespace fs = std::filesystem;
    const fs::path rec_path = dir / "record.json";
    if (fs::exists(rec_path)) {
        RunRecord cached = RunRecord::from_json(read_json_file(rec_path));
        if (cached.status == "ok") {
            cached.status = "cached";
            if (progress) progress(cached, dir);
            return cached;
        }
    }
    fs::create_directories(dir);
    json cfg = req.spec;
    cfg["seed"] = req.train.seed;
    cfg["shots"] = req.shots;
    cfg["role"] = req.role;
    cfg["lr_stage1"] = req.train.base_lr;
    cfg["lr_stage2"] = req.train.lr_for_stage(2);
    write_text_atomic(dir / "config.json", cfg.dump(2) + "\n");
    RunRecord r;
    try {
        CellOutput out = run_cell(req);
        write_text_atomic(dir / "manifest.json", out.manifest.dump());
        r = std::move(out.record);
    } catch (const std::exception& e) {
        r = RunRecord{};
        r.status = "failed";
        r.error = e.what();
        r.role = req.role;
        r.spec = req.spec;
        r.spec_hash = req.spec_hash;
        r.dataset = req.dataset->name();
        r.encoder = encoder_label(req.encoder_ref);
        r.method = req.train.method;
        r.seed = req.train.seed;
        r.shots = req.shots;
        r.lr_stage1 = req.train.base_lr;
        if (has_stage2(req.train.method)) r.lr_stage2 = req.train.lr_for_stage(2);
    }
    const std::string text = r.to_json().dump(2) + "\n";
    write_text_atomic(rec_path, text);
    append_line(root / "records.jsonl", r.to_json().dump());
    if (progress) progress(r, dir);
    return r;
}

}  // namespace detail

/// Stage-1 lr before any grid search.
inline double stage1_lr(const ExperimentSpec& spec, const json& dataset_ref) {
    switch (spec.lr.kind) {
        case LrPolicyKind::Preset: {
            const std::string fam = spec.lr.family.empty() ? dataset_family(dataset_ref) : spec.lr.family;
            if (fam == "synthetic") return synthetic_train_preset(Method::Linear, 0).base_lr;
            return preset_linear_lr(fam);
        }
        case LrPolicyKind::Fixed: return spec.lr.lr;
        case LrPolicyKind::Grid: return spec.train.base_lr;
    }
    return spec.train.base_lr;
}

/// Runs every (dataset, method, seed, shots) cell. With a grid policy, each
/// (dataset, method) first searches its tuned lr on 1-shot tasks: the
/// stage-1 lr for probing methods, the stage-2 lr otherwise.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, const ProgressFn& progress = {}) {
    spec.validate();
    namespace fs = std::filesystem;
    const fs::path root = spec.output_root();
    ExperimentResult res;
    for (const auto& dref : spec.datasets) {
        const Dataset ds = open_dataset(dref);
        const PresenceIndex index = build_index(ds, spec.min_pixels);
        for (Method m : spec.methods) {
            const json cspec = cell_spec_json(spec, dref, m);
            const std::string hash = spec_hash(cspec);
            const fs::path base = root / "runs" / hash;
            write_text_atomic(base / "spec.json", cspec.dump(2) + "\n");
            CellRequest req;
            req.dataset = &ds;
            req.index = &index;
            req.dataset_ref = dref;
            req.encoder_ref = spec.encoder;
            req.min_pixels = spec.min_pixels;
            req.spec = cspec;
            req.spec_hash = hash;
            req.train = spec.train;
            req.train.method = m;
            req.train.base_lr = stage1_lr(spec, dref);

            if (spec.lr.kind == LrPolicyKind::Grid) {
                std::map<std::pair<double, std::uint64_t>, RunRecord> runs;
                auto score = [&](double lr, std::uint64_t seed) {
                    CellRequest g = req;
                    g.role = "grid";
                    g.shots = 1;
                    g.train.seed = seed;
                    if (has_stage2(m))
                        g.train.stage2_lr = lr;
                    else
                        g.train.base_lr = lr;
                    RunRecord r = detail::run_or_load(
                        g, base / "grid" / fmt::format("lr-{}_seed-{}", detail::lr_tag(lr), seed), root, progress);
                    res.grid_records.push_back(r);
                    if (!r.succeeded()) throw Error(r.error);
                    return *r.miou;
                };
                GridSearchResult gs = grid_search_lr(spec.lr.grid, spec.seeds, score);
                if (has_stage2(m))
                    req.train.stage2_lr = gs.best_lr;
                else
                    req.train.base_lr = gs.best_lr;
                res.grid[ds.name() + "/" + std::string(method_name(m))] = std::move(gs);
            }

            for (auto seed : spec.seeds)
                for (int k : spec.shots) {
                    CellRequest c = req;
                    c.train.seed = seed;
                    c.shots = k;
                    res.records.push_back(detail::run_or_load(
                        c, base / fmt::format("seed-{}_shots-{}", seed, k), root, progress));
                }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Summaries

struct ReportCell {
    std::string encoder;
    std::string method;
    int shots = 0;
    std::vector<std::string> datasets;
    std::map<std::uint64_t, double> per_seed;  // dataset-averaged
    double mean = 0.0;
    std::optional<double> std;  // unavailable below two seeds
};

using ReportTable = std::vector<ReportCell>;

inline std::string format_mean_std(double mean, const std::optional<double>& sd, int precision = 2) {
    if (!sd) return fmt::format("{:.{}f} ± n/a", mean, precision);
    return fmt::format("{:.{}f} ± {:.{}f}", mean, precision, *sd, precision);
}

/// Rows keyed by (encoder, method, shots). Per seed, mIoU is first averaged
/// over datasets; the seed values are then aggregated. Failed and grid
/// records are excluded.
inline ReportTable summarize(const std::vector<RunRecord>& records) {
    using Key = std::tuple<std::string, std::string, int>;
    std::map<Key, std::map<std::uint64_t, std::map<std::string, double>>> groups;
    for (const auto& r : records) {
        if (!r.succeeded() || r.role != "main" || !r.miou) continue;
        auto& slot = groups[{r.encoder, std::string(method_name(r.method)), r.shots}][r.seed];
        if (slot.contains(r.dataset))
            throw Error(fmt::format("summarize: duplicate record for {} / {} / seed {} / {} shots", r.dataset,
                                    method_name(r.method), r.seed, r.shots));
        slot[r.dataset] = *r.miou;
    }
    ReportTable table;
    for (const auto& [key, seeds] : groups) {
        ReportCell c;
        std::tie(c.encoder, c.method, c.shots) = key;
        std::set<std::string> ds;
        std::vector<double> values;
        for (const auto& [seed, by_ds] : seeds) {
            double s = 0.0;
            for (const auto& [name, v] : by_ds) {
                s += v;
                ds.insert(name);
            }
            const double avg = s / static_cast<double>(by_ds.size());
            c.per_seed[seed] = avg;
            values.push_back(avg);
        }
        c.datasets.assign(ds.begin(), ds.end());
        if (values.size() >= 2) {
            const RunSummary rs = aggregate_runs(values);
            c.mean = rs.mean;
            c.std = rs.std;
        } else {
            c.mean = mean_of(values);
        }
        table.push_back(std::move(c));
    }
    return table;
}

// ---------------------------------------------------------------------------
// Learning-rate transfer

/// dataset -> (lr -> mean score)
using LrScores = std::map<std::string, std::map<double, double>>;

/// Argmax lr; ties go to the larger lr.
inline double best_lr(const std::map<double, double>& scores) {
    if (scores.empty()) throw Error("best_lr: no scores");
    auto best = scores.begin();
    for (auto it = scores.begin(); it != scores.end(); ++it)
        if (it->second >= best->second) best = it;
    return best->first;
}

struct TransferCell {
    enum class Kind { Diagonal, Unavailable, Value } kind = Kind::Unavailable;
    double drop = 0.0;

    std::string text(int precision = 4) const {
        switch (kind) {
            case Kind::Diagonal: return "-";
            case Kind::Unavailable: return "n/a";
            case Kind::Value: return fmt::format("{:.{}f}", drop, precision);
        }
        return "";
    }
};

struct LrTransfer {
    std::vector<std::string> datasets;
    std::map<std::string, double> best;
    std::vector<std::vector<TransferCell>> cells;  // [source][target]
};

/// cells[s][t] = score_t(best_t) - score_t(best_s).
inline LrTransfer lr_transfer(const LrScores& scores) {
    LrTransfer out;
    for (const auto& [name, s] : scores) {
        out.datasets.push_back(name);
        if (!s.empty()) out.best[name] = best_lr(s);
    }
    const std::size_t n = out.datasets.size();
    out.cells.assign(n, std::vector<TransferCell>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            auto& c = out.cells[i][j];
            if (i == j) {
                c.kind = TransferCell::Kind::Diagonal;
                continue;
            }
            const auto& src = out.datasets[i];
            const auto& tgt = out.datasets[j];
            if (!out.best.contains(src) || !out.best.contains(tgt)) continue;
            const auto& ts = scores.at(tgt);
            auto it = ts.find(out.best.at(src));
            if (it == ts.end()) continue;
            c.kind = TransferCell::Kind::Value;
            c.drop = ts.at(out.best.at(tgt)) - it->second;
        }
    return out;
}

/// Mean grid-search mIoU per (dataset, tuned lr) for one method.
inline LrScores grid_scores(const std::vector<RunRecord>& records, Method method) {
    std::map<std::string, std::map<double, std::map<std::uint64_t, double>>> acc;
    for (const auto& r : records)
        if (r.role == "grid" && r.method == method && r.succeeded() && r.miou)
            acc[r.dataset][r.tuned_lr()][r.seed] = *r.miou;
    LrScores out;
    for (const auto& [ds, by_lr] : acc)
        for (const auto& [lr, seeds] : by_lr) {
            double s = 0.0;
            for (const auto& [_, v] : seeds) s += v;
            out[ds][lr] = s / static_cast<double>(seeds.size());
        }
    return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string num(double v) { return fmt::format("{:.6f}", v); }

inline std::vector<RunRecord> canonical_order(std::vector<RunRecord> rs) {
    std::stable_sort(rs.begin(), rs.end(), [](const RunRecord& a, const RunRecord& b) {
        return std::make_tuple(a.role, a.dataset, a.encoder, method_name(a.method), a.shots, a.seed, a.tuned_lr()) <
               std::make_tuple(b.role, b.dataset, b.encoder, method_name(b.method), b.shots, b.seed, b.tuned_lr());
    });
    return rs;
}

inline std::string summary_csv(const ReportTable& t) {
    std::string s = "encoder,method,shots,n_seeds,datasets,mean,std,cell\n";
    for (const auto& c : t) {
        std::string ds;
        for (const auto& d : c.datasets) ds += (ds.empty() ? "" : ";") + d;
        s += fmt::format("{},{},{},{},{},{},{},{}\n", csv_field(c.encoder), c.method, c.shots, c.per_seed.size(),
                         csv_field(ds), num(c.mean), c.std ? num(*c.std) : "n/a",
                         csv_field(format_mean_std(c.mean, c.std)));
    }
    return s;
}

inline std::string transfer_csv(const LrTransfer& t) {
    std::string s = "source\\target";
    for (const auto& d : t.datasets) s += "," + csv_field(d);
    s += "\n";
    for (std::size_t i = 0; i < t.datasets.size(); ++i) {
        s += csv_field(t.datasets[i]);
        for (const auto& c : t.cells[i]) s += "," + c.text();
        s += "\n";
    }
    s += "\ndataset,best_lr\n";
    for (const auto& [d, lr] : t.best) s += fmt::format("{},{:g}\n", csv_field(d), lr);
    return s;
}

/// mIoU against shots, one polyline per encoder/method series.
inline std::string shots_svg(const ReportTable& t) {
    const int W = 640, H = 400, L = 60, R = 170, T = 30, B = 50;
    std::set<int> shot_set;
    std::map<std::string, std::vector<std::pair<int, double>>> series;
    for (const auto& c : t) {
        shot_set.insert(c.shots);
        series[c.encoder + "/" + c.method].emplace_back(c.shots, c.mean);
    }
    const std::vector<int> shots(shot_set.begin(), shot_set.end());
    auto xpos = [&](int k) {
        const auto i = static_cast<double>(std::lower_bound(shots.begin(), shots.end(), k) - shots.begin());
        const double n = static_cast<double>(std::max<std::size_t>(shots.size(), 2) - 1);
        return L + (W - L - R) * (shots.size() < 2 ? 0.5 : i / n);
    };
    auto ypos = [&](double v) { return T + (H - T - B) * (1.0 - std::clamp(v, 0.0, 1.0)); };
    static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
                                    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    std::string s = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
        "font-family=\"sans-serif\" font-size=\"12\">\n",
        W, H, W, H);
    s += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", W, H);
    s += fmt::format("<text x=\"{}\" y=\"18\" text-anchor=\"middle\">mIoU vs shots</text>\n", (W - R + L) / 2);
    for (int g = 0; g <= 5; ++g) {
        const double v = g / 5.0;
        s += fmt::format("<line x1=\"{}\" y1=\"{:.1f}\" x2=\"{}\" y2=\"{:.1f}\" stroke=\"#dddddd\"/>\n", L, ypos(v),
                         W - R, ypos(v));
        s += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.1f}</text>\n", L - 6, ypos(v) + 4, v);
    }
    s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", L, H - B, W - R, H - B);
    s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", L, T, L, H - B);
    for (int k : shots)
        s += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", xpos(k), H - B + 18, k);
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">shots</text>\n", (W - R + L) / 2, H - 12);
    s += fmt::format(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">mIoU</text>\n",
        (H - B + T) / 2, (H - B + T) / 2);
    std::size_t i = 0;
    for (auto& [name, pts] : series) {
        std::sort(pts.begin(), pts.end());
        const char* col = colours[i % std::size(colours)];
        s += fmt::format("<g class=\"series\" data-name=\"{}\">\n<polyline fill=\"none\" stroke=\"{}\" "
                         "stroke-width=\"2\" points=\"",
                         name, col);
        for (std::size_t p = 0; p < pts.size(); ++p)
            s += fmt::format("{}{:.1f},{:.1f}", p ? " " : "", xpos(pts[p].first), ypos(pts[p].second));
        s += "\"/>\n";
        for (const auto& [k, v] : pts)
            s += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"{}\"/>\n", xpos(k), ypos(v), col);
        const double ly = T + 10 + 18.0 * static_cast<double>(i);
        s += fmt::format("<line x1=\"{}\" y1=\"{:.1f}\" x2=\"{}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                         W - R + 12, ly, W - R + 32, ly, col);
        s += fmt::format("<text x=\"{}\" y=\"{:.1f}\">{}</text>\n</g>\n", W - R + 38, ly + 4, name);
        ++i;
    }
    s += "</svg>\n";
    return s;
}

}  // namespace detail

inline const std::vector<std::string>& all_report_formats() {
    static const std::vector<std::string> f = {"csv", "json", "objects", "svg"};
    return f;
}

/// Writes the requested formats plus report_manifest.json into `out_dir`
/// and returns the written paths. Output depends only on the records.
inline std::vector<std::filesystem::path> emit_report(const std::vector<RunRecord>& records,
                                                      const std::vector<std::string>& formats,
                                                      const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (records.empty()) throw Error("emit_report: no records");
    for (const auto& f : formats)
        if (std::find(all_report_formats().begin(), all_report_formats().end(), f) == all_report_formats().end())
            throw Error(fmt::format("emit_report: unknown format '{}'", f));
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir))
        throw Error(fmt::format("emit_report: cannot create '{}'", out_dir.string()));
    auto want = [&](const char* f) { return std::find(formats.begin(), formats.end(), f) != formats.end(); };

    const auto ordered = detail::canonical_order(records);
    const ReportTable table = summarize(ordered);
    std::map<std::string, std::string> files;

    if (want("csv")) {
        files["summary.csv"] = detail::summary_csv(table);
        std::set<Method> grid_methods;
        for (const auto& r : ordered)
            if (r.role == "grid") grid_methods.insert(r.method);
        for (Method m : grid_methods) {
            const LrScores sc = grid_scores(ordered, m);
            if (!sc.empty())
                files[fmt::format("lr_transfer_{}.csv", method_name(m))] = detail::transfer_csv(lr_transfer(sc));
        }
    }
    if (want("json")) {
        json detail_j = json::array();
        for (const auto& r : ordered) detail_j.push_back(r.to_json());
        json summary = json::array();
        for (const auto& c : table)
            summary.push_back({{"encoder", c.encoder},
                               {"method", c.method},
                               {"shots", c.shots},
                               {"datasets", c.datasets},
                               {"per_seed", [&] {
                                    json p = json::object();
                                    for (const auto& [s, v] : c.per_seed) p[std::to_string(s)] = v;
                                    return p;
                                }()},
                               {"mean", c.mean},
                               {"std", c.std ? json(*c.std) : json(nullptr)}});
        files["report.json"] = json{{"summary", summary}, {"records", detail_j}}.dump(2) + "\n";
    }
    if (want("objects")) {
        std::map<ClassId, std::string> per_class;
        for (const auto& r : ordered) {
            if (!r.succeeded() || r.role != "main") continue;
            for (const auto& o : r.object_sizes) {
                auto& s = per_class[o.class_id];
                if (s.empty()) s = "dataset,encoder,method,shots,seed,image_id,area,iou\n";
                s += fmt::format("{},{},{},{},{},{},{},{}\n", detail::csv_field(r.dataset),
                                 detail::csv_field(r.encoder), method_name(r.method), r.shots, r.seed,
                                 detail::csv_field(o.image_id), o.area, detail::num(o.iou));
            }
        }
        for (const auto& [c, s] : per_class) files[fmt::format("object_sizes_class-{}.csv", c)] = s;
    }
    if (want("svg") && !table.empty()) files["miou_vs_shots.svg"] = detail::shots_svg(table);

    std::vector<fs::path> written;
    json listing = json::array();
    for (const auto& [name, text] : files) {
        write_text_atomic(out_dir / name, text);
        written.push_back(out_dir / name);
        listing.push_back({{"file", name}, {"sha256", sha256_hex(text)}, {"bytes", text.size()}});
    }
    std::vector<std::string> fmts = formats;
    std::sort(fmts.begin(), fmts.end());
    const json manifest = {{"toolkit_version", std::string(kToolkitVersion)},
                           {"formats", fmts},
                           {"n_records", ordered.size()},
                           {"files", listing}};
    write_text_atomic(out_dir / "report_manifest.json", manifest.dump(2) + "\n");
    written.push_back(out_dir / "report_manifest.json");
    return written;
}

}  // namespace fss
