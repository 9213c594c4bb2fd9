#pragma once

// Experiment specifications, dataset/encoder references and model
// checkpoints.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fss/trainer.hpp"

namespace fss {

using json = nlohmann::json;

inline const std::vector<std::uint64_t>& default_seeds() {
    static const std::vector<std::uint64_t> s = {17, 23, 42};
    return s;
}

inline const std::vector<int>& default_shots() {
    static const std::vector<int> s = {1, 2, 5, 10};
    return s;
}

/// Results root: $FSS_RESULTS_ROOT, else ./results.
inline std::filesystem::path results_root() {
    if (const char* r = std::getenv("FSS_RESULTS_ROOT"); r && *r) return r;
    return "results";
}

inline json read_json_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw Error(fmt::format("cannot open '{}'", p.string()));
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(fmt::format("'{}': {}", p.string(), e.what()));
    }
}

/// Writes via a temporary file and rename.
inline void write_text_atomic(const std::filesystem::path& p, const std::string& text) {
    namespace fs = std::filesystem;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(fmt::format("cannot write '{}'", tmp.string()));
        out << text;
        if (!out) throw Error(fmt::format("write to '{}' failed", tmp.string()));
    }
    fs::rename(tmp, p);
}

// ---------------------------------------------------------------------------
// Dataset references

inline SyntheticBlobConfig synthetic_config_from_json(const json& j) {
    SyntheticBlobConfig c;
    c.n_classes = j.value("n_classes", c.n_classes);
    c.images = j.value("images", c.images);
    c.image_size = j.value("image_size", c.image_size);
    c.blobs_per_image = j.value("blobs_per_image", c.blobs_per_image);
    c.color_correspondence = j.value("color_correspondence", c.color_correspondence);
    c.noise = j.value("noise", c.noise);
    c.seed = j.value("seed", c.seed);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.name = j.value("name", c.name);
    return c;
}

inline json synthetic_config_to_json(const SyntheticBlobConfig& c) {
    return {{"kind", "synthetic"},   {"n_classes", c.n_classes},
            {"images", c.images},    {"image_size", c.image_size},
            {"blobs_per_image", c.blobs_per_image}, {"color_correspondence", c.color_correspondence},
            {"noise", c.noise},      {"seed", c.seed},
            {"train_fraction", c.train_fraction},   {"name", c.name}};
}

/// {"kind": "synthetic", ...blob parameters} or
/// {"kind": "dir", "path": ..., "resize": [h, w], "train_fraction": f, "split_seed": s}.
inline Dataset open_dataset(const json& ref) {
    const std::string kind = ref.value("kind", std::string("synthetic"));
    if (kind == "synthetic") return synth_blobs(synthetic_config_from_json(ref));
    if (kind != "dir") throw Error(fmt::format("unknown dataset kind '{}'", kind));
    Dataset ds = open_dataset_dir(ref.at("path").get<std::string>());
    if (ref.contains("train_fraction"))
        ds = apply_fixed_split(ds, ref.at("train_fraction").get<double>(), ref.value("split_seed", std::uint64_t{0}));
    if (ref.contains("resize")) {
        const int h = ref.at("resize").at(0).get<int>(), w = ref.at("resize").at(1).get<int>();
        Dataset base = ds;
        Dataset::Loader loader = [base, h, w](const std::string& id) { return resize_to(base.load(id), h, w); };
        ds = Dataset(base.name(), base.catalog(), base.ids(), base.split_table(), std::move(loader), base.root());
    }
    return ds;
}

/// Family used for learning-rate and epoch presets.
inline std::string dataset_family(const json& ref) {
    if (ref.contains("family")) return ref.at("family").get<std::string>();
    return ref.value("kind", std::string("synthetic")) == "synthetic" ? "synthetic" : ref.value("name", std::string());
}

// ---------------------------------------------------------------------------
// Encoder references

inline TinyEncoderConfig tiny_config_from_json(const json& j) {
    TinyEncoderConfig c;
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.n_blocks = j.value("n_blocks", c.n_blocks);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.in_channels = j.value("in_channels", c.in_channels);
    if (j.contains("native")) c.native_resolution = {j.at("native").at(0).get<int>(), j.at("native").at(1).get<int>()};
    c.seed = j.value("seed", c.seed);
    return c;
}

inline json tiny_config_to_json(const TinyEncoderConfig& c) {
    return {{"kind", "tiny"},
            {"embed_dim", c.embed_dim},
            {"n_blocks", c.n_blocks},
            {"patch_size", c.patch_size},
            {"n_heads", c.n_heads},
            {"mlp_ratio", c.mlp_ratio},
            {"in_channels", c.in_channels},
            {"native", {c.native_resolution.height, c.native_resolution.width}},
            {"seed", c.seed}};
}

template <typename T>
std::unique_ptr<FeatureExtractor<T>> make_encoder(const json& ref) {
    const std::string kind = ref.value("kind", std::string("tiny"));
    if (kind != "tiny") throw Error(fmt::format("unknown encoder kind '{}'", kind));
    return std::make_unique<TinyEncoder<T>>(tiny_config_from_json(ref));
}

inline std::string encoder_label(const json& ref) {
    return ref.value("name", ref.value("kind", std::string("tiny")));
}

// ---------------------------------------------------------------------------
// Desk-scale presets

/// 3-class colour-separable blobs, 64x64.
inline SyntheticBlobConfig synthetic_preset() {
    SyntheticBlobConfig c;
    c.n_classes = 3;
    c.images = 40;
    c.image_size = 64;
    return c;
}

/// Tiny ViT for the synthetic preset: dim 32, 2 blocks, 4-pixel patches.
inline TinyEncoderConfig tiny_preset() {
    TinyEncoderConfig c;
    c.patch_size = 4;
    c.seed = 7;
    return c;
}

/// Flip, rescale and crop; no photometric RandAug ops.
inline AugmentationConfig synthetic_augmentation() {
    AugmentationConfig a;
    a.scale_min = 48;
    a.scale_max = 96;
    a.crop_height = 64;
    a.crop_width = 64;
    a.randaug_n = 0;
    return a;
}

inline TrainConfig synthetic_train_preset(Method m, std::uint64_t seed) {
    TrainConfig c;
    c.method = m;
    c.seed = seed;
    c.base_lr = 0.05;
    c.stage2_lr = 1e-3;
    c.epochs = preset_epochs("synthetic");
    c.augmentation = synthetic_augmentation();
    return c;
}

// ---------------------------------------------------------------------------
// Experiment specification

enum class LrPolicyKind { Preset, Fixed, Grid };

struct LrPolicy {
    LrPolicyKind kind = LrPolicyKind::Preset;
    std::string family;              // preset; empty = the dataset's family
    double lr = 0.0;                 // fixed
    std::vector<double> grid = default_lr_grid();

    json to_json() const {
        switch (kind) {
            case LrPolicyKind::Preset: return {{"kind", "preset"}, {"family", family}};
            case LrPolicyKind::Fixed: return {{"kind", "fixed"}, {"lr", lr}};
            case LrPolicyKind::Grid: return {{"kind", "grid"}, {"grid", grid}};
        }
        return {};
    }
    static LrPolicy from_json(const json& j) {
        LrPolicy p;
        const std::string k = j.value("kind", std::string("preset"));
        if (k == "preset") {
            p.kind = LrPolicyKind::Preset;
            p.family = j.value("family", std::string());
        } else if (k == "fixed") {
            p.kind = LrPolicyKind::Fixed;
            p.lr = j.at("lr").get<double>();
            if (!(p.lr > 0.0)) throw Error("lr policy: lr must be positive");
        } else if (k == "grid") {
            p.kind = LrPolicyKind::Grid;
            p.grid = j.value("grid", p.grid);
            if (p.grid.empty()) throw Error("lr policy: empty grid");
        } else {
            throw Error(fmt::format("unknown lr policy '{}'", k));
        }
        return p;
    }
};

struct ExperimentSpec {
    std::string name = "experiment";
    std::vector<json> datasets;
    json encoder = tiny_config_to_json(tiny_preset());
    std::vector<Method> methods = {Method::Linear};
    std::vector<int> shots = default_shots();
    std::vector<std::uint64_t> seeds = default_seeds();
    LrPolicy lr;
    TrainConfig train;  // seed and method are per cell
    int min_pixels = 1;
    std::string output;  // empty = results_root()

    void validate() const {
        if (datasets.empty()) throw Error("spec: no dataset");
        if (methods.empty()) throw Error("spec: no method");
        if (shots.empty()) throw Error("spec: shots list is empty");
        for (int k : shots)
            if (k < 1) throw Error(fmt::format("spec: shots must be >= 1 (got {})", k));
        if (seeds.empty()) throw Error("spec: seeds list is empty");
        if (min_pixels < 1) throw Error("spec: min_pixels must be >= 1");
        train.validate();
    }

    json to_json() const {
        std::vector<std::string> ms;
        for (auto m : methods) ms.emplace_back(method_name(m));
        json t = train.to_json();
        t.erase("method");
        t.erase("seed");
        return {{"name", name}, {"datasets", datasets}, {"encoder", encoder},   {"methods", ms},
                {"shots", shots}, {"seeds", seeds},     {"lr_policy", lr.to_json()}, {"train", t},
                {"min_pixels", min_pixels}, {"output", output}};
    }

    static ExperimentSpec from_json(const json& j) {
        ExperimentSpec s;
        s.name = j.value("name", s.name);
        if (j.contains("datasets")) s.datasets = j.at("datasets").get<std::vector<json>>();
        if (j.contains("dataset")) s.datasets.push_back(j.at("dataset"));
        if (j.contains("encoder")) s.encoder = j.at("encoder");
        if (j.contains("methods")) {
            s.methods.clear();
            for (const auto& m : j.at("methods")) s.methods.push_back(parse_method(m.get<std::string>()));
        } else if (j.contains("method")) {
            s.methods = {parse_method(j.at("method").get<std::string>())};
        }
        s.shots = j.value("shots", s.shots);
        s.seeds = j.value("seeds", s.seeds);
        if (j.contains("lr_policy")) s.lr = LrPolicy::from_json(j.at("lr_policy"));
        if (j.contains("train")) {
            json t = j.at("train");
            t["method"] = "linear";
            s.train = TrainConfig::from_json(t);
        }
        s.min_pixels = j.value("min_pixels", s.min_pixels);
        s.output = j.value("output", s.output);
        s.validate();
        return s;
    }

    std::filesystem::path output_root() const { return output.empty() ? results_root() : std::filesystem::path(output); }
};

/// The (dataset, method) slice of a spec that determines a cell's results;
/// shots and seeds are the cell axes and stay out.
inline json cell_spec_json(const ExperimentSpec& s, const json& dataset, Method m) {
    json t = s.train.to_json();
    t.erase("seed");
    t["method"] = std::string(method_name(m));
    return {{"dataset", dataset},       {"encoder", s.encoder},       {"lr_policy", s.lr.to_json()},
            {"train", t},               {"min_pixels", s.min_pixels}, {"toolkit_version", std::string(kToolkitVersion)}};
}

inline std::string spec_hash(const json& cell_spec) { return sha256_hex(cell_spec.dump()).substr(0, 16); }

// ---------------------------------------------------------------------------
// Checkpoints: "FSSCKPT1", u64 header length, JSON header, raw values.

namespace detail {

template <typename T>
json table_header(const ParamTable<T>& t, std::uint64_t& offset) {
    json entries = json::array();
    for (const auto& [name, p] : t) {
        if (!p.allocated()) throw Error(fmt::format("checkpoint: '{}' has no values", name));
        entries.push_back({{"name", name}, {"rows", p.rows},       {"cols", p.cols},
                           {"trainable", p.trainable}, {"group", p.group}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(p.numel());
    }
    return {{"params", entries}, {"attributes", t.attributes()}};
}

template <typename T>
ParamTable<T> table_from(const json& h, const std::vector<T>& values) {
    ParamTable<T> t;
    for (const auto& e : h.at("params")) {
        auto& p = t.add(e.at("name").get<std::string>(), e.at("rows").get<Eigen::Index>(),
                        e.at("cols").get<Eigen::Index>(), e.at("trainable").get<bool>(),
                        e.at("group").get<std::string>());
        const auto off = e.at("offset").get<std::uint64_t>();
        if (off + static_cast<std::uint64_t>(p.numel()) > values.size()) throw Error("checkpoint: truncated data");
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), p.numel(), p.value.data());
    }
    t.attributes() = h.at("attributes").get<std::map<std::string, double>>();
    return t;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const SegModel<T>& model) {
    std::uint64_t offset = 0;
    json h;
    h["scalar_bytes"] = sizeof(T);
    h["encoder"] = detail::table_header(model.encoder->params(), offset);
    h["head"] = detail::table_header(model.head.params(), offset);
    const auto c = model.head.in_channels();
    h["head_running_offset"] = offset;
    h["head_channels"] = c;
    h["head_taps"] = model.head.n_taps();
    offset += 2 * static_cast<std::uint64_t>(c);
    std::vector<T> values;
    values.reserve(offset);
    for (const ParamTable<T>* t : std::initializer_list<const ParamTable<T>*>{&model.encoder->params(), &model.head.params()})
        for (const auto& [_, p] : *t) values.insert(values.end(), p.value.data(), p.value.data() + p.value.size());
    const auto& rm = model.head.running_mean();
    const auto& rv = model.head.running_var();
    values.insert(values.end(), rm.data(), rm.data() + rm.size());
    values.insert(values.end(), rv.data(), rv.data() + rv.size());

    const std::string header = h.dump();
    std::string blob = "FSSCKPT1";
    const std::uint64_t n = header.size();
    blob.append(reinterpret_cast<const char*>(&n), sizeof(n));
    blob += header;
    blob.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(T));
    write_text_atomic(path, blob);
}

/// Restores tables into a model built with the same encoder reference and
/// class count; the checkpoint's layer forms (plain/SVF/LoRA) replace the
/// model's.
template <typename T>
void load_checkpoint(const std::filesystem::path& path, SegModel<T>& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot open checkpoint '{}'", path.string()));
    std::string magic(8, '\0');
    in.read(magic.data(), 8);
    if (magic != "FSSCKPT1") throw Error(fmt::format("'{}' is not a checkpoint", path.string()));
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    std::string header(n, '\0');
    in.read(header.data(), static_cast<std::streamsize>(n));
    const json h = json::parse(header);
    if (h.at("scalar_bytes").get<std::size_t>() != sizeof(T)) throw Error("checkpoint: scalar type mismatch");
    std::vector<T> values;
    T v;
    while (in.read(reinterpret_cast<char*>(&v), sizeof(T))) values.push_back(v);
    const int c = h.at("head_channels").get<int>();
    if (c != model.head.in_channels() || h.at("head_taps").get<int>() != model.head.n_taps())
        throw ShapeError("checkpoint: head layout differs from the model");
    model.encoder->params() = detail::table_from<T>(h.at("encoder"), values);
    model.head.params() = detail::table_from<T>(h.at("head"), values);
    const auto off = h.at("head_running_offset").get<std::size_t>();
    if (off + 2 * static_cast<std::size_t>(c) > values.size()) throw Error("checkpoint: truncated data");
    nn::RowVec<T> rm(c), rv(c);
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), c, rm.data());
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off) + c, c, rv.data());
    model.head.set_running_stats(std::move(rm), std::move(rv));
}

}  // namespace fss
