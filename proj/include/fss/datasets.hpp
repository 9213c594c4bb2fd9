#pragma once

// Dataset adapters, deterministic splits, the training augmentation
// pipeline and a synthetic blob dataset used as the desk-scale substrate.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fss/common.hpp"
#include "fss/datamodel.hpp"
#include "fss/image_io.hpp"
#include "fss/resample.hpp"

namespace fss {

inline constexpr std::string_view kTrainSplit = "train";
inline constexpr std::string_view kValSplit = "val";

/// A named collection of labeled images with a split table. Samples are
/// produced on demand by `loader`; in-memory datasets capture their storage.
class Dataset {
public:
    using Loader = std::function<SegSample(const std::string&)>;

    Dataset() = default;
    Dataset(std::string name, ClassCatalog catalog, std::vector<std::string> ids,
            std::map<std::string, std::string> splits, Loader loader, std::filesystem::path root = {})
        : name_(std::move(name)), root_(std::move(root)), catalog_(std::move(catalog)), ids_(std::move(ids)),
          splits_(std::move(splits)), loader_(std::move(loader)) {
        std::set<std::string> uniq(ids_.begin(), ids_.end());
        if (uniq.size() != ids_.size()) throw Error(fmt::format("dataset '{}': duplicate image ids", name_));
        for (const auto& id : ids_)
            if (!splits_.contains(id)) throw Error(fmt::format("dataset '{}': '{}' has no split", name_, id));
    }

    const std::string& name() const noexcept { return name_; }
    const std::filesystem::path& root() const noexcept { return root_; }
    const ClassCatalog& catalog() const noexcept { return catalog_; }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    const std::map<std::string, std::string>& split_table() const noexcept { return splits_; }
    std::size_t size() const noexcept { return ids_.size(); }

    bool contains(const std::string& id) const { return splits_.contains(id); }

    /// Ids of one split, in dataset order.
    std::vector<std::string> ids_in(std::string_view split) const {
        std::vector<std::string> out;
        for (const auto& id : ids_)
            if (splits_.at(id) == split) out.push_back(id);
        return out;
    }

    /// Validated sample for `id`.
    SegSample load(const std::string& id) const {
        if (!contains(id)) throw Error(fmt::format("dataset '{}': unknown image '{}'", name_, id));
        SegSample s = loader_(id);
        s.image_id = id;
        validate_sample(s, catalog_);
        return s;
    }

    /// Same images with a different split table.
    Dataset with_splits(std::map<std::string, std::string> splits) const {
        return Dataset(name_, catalog_, ids_, std::move(splits), loader_, root_);
    }

    /// Subset restricted to `keep` (dataset order preserved).
    Dataset subset(const std::set<std::string>& keep, std::string suffix) const {
        std::vector<std::string> ids;
        std::map<std::string, std::string> splits;
        for (const auto& id : ids_)
            if (keep.contains(id)) {
                ids.push_back(id);
                splits[id] = splits_.at(id);
            }
        return Dataset(name_ + suffix, catalog_, std::move(ids), std::move(splits), loader_, root_);
    }

    /// Content digest over catalog, split table and every sample's pixels.
    std::string digest() const {
        if (digest_) return *digest_;
        Sha256 h;
        h.update(name_).update(std::string_view("\0", 1));
        h.update_pod(catalog_.ignore_id()).update_pod(catalog_.background_is_class());
        for (const auto& c : catalog_.classes()) h.update_pod(c.id).update(c.name);
        for (const auto& id : ids_) {
            const SegSample s = load(id);
            h.update(id).update(splits_.at(id));
            const int dims[3] = {s.image.height(), s.image.width(), s.image.channels()};
            h.update(dims, sizeof(dims));
            h.update_span(std::span<const float>(s.image.data()));
            h.update_span(std::span<const ClassId>(s.mask.data()));
        }
        digest_ = std::make_shared<std::string>(h.hex());
        return *digest_;
    }

private:
    std::string name_;
    std::filesystem::path root_;
    ClassCatalog catalog_;
    std::vector<std::string> ids_;
    std::map<std::string, std::string> splits_;
    Loader loader_;
    mutable std::shared_ptr<std::string> digest_;
};

// ---------------------------------------------------------------------------
// Catalog presets

inline ClassCatalog cityscapes_catalog() {
    static const char* names[] = {"road",       "sidewalk", "building", "wall",   "fence",
                                  "pole",       "traffic light", "traffic sign", "vegetation", "terrain",
                                  "sky",        "person",   "rider",    "car",    "truck",
                                  "bus",        "train",    "motorcycle", "bicycle"};
    std::vector<ClassEntry> cls;
    for (int i = 0; i < 19; ++i) cls.push_back({i, names[i]});
    return ClassCatalog(std::move(cls), 255, false);
}

/// Cityscapes labelIds -> 19 evaluation ids; everything else is ignored.
inline ClassId cityscapes_label_to_train_id(int label_id) {
    static const std::map<int, ClassId> table = {
        {7, 0},   {8, 1},   {11, 2},  {12, 3},  {13, 4},  {17, 5},  {19, 6},
        {20, 7},  {21, 8},  {22, 9},  {23, 10}, {24, 11}, {25, 12}, {26, 13},
        {27, 14}, {28, 15}, {31, 16}, {32, 17}, {33, 18}};
    auto it = table.find(label_id);
    return it == table.end() ? 255 : it->second;
}

/// Plant phenotyping: foreground/background with the background scored.
inline ClassCatalog ppd_catalog() {
    return ClassCatalog({{0, "background"}, {1, "plant"}}, 255, true);
}

// ---------------------------------------------------------------------------
// On-disk layout
//
//   <root>/catalog.json            classes, ignore_id, background flag, convention
//   <root>/images/<id>.png         8-bit RGB (or gray) images
//   <root>/masks/<id>.png          single-channel index masks
//   <root>/splits/<split>.txt      one image id per line

enum class MaskConvention { Index, CityscapesLabelIds, Binary };

inline MaskConvention parse_mask_convention(const std::string& s) {
    if (s == "index") return MaskConvention::Index;
    if (s == "cityscapes_label_ids") return MaskConvention::CityscapesLabelIds;
    if (s == "binary") return MaskConvention::Binary;
    throw Error(fmt::format("unknown mask convention '{}'", s));
}

inline nlohmann::json catalog_to_json(const ClassCatalog& c) {
    nlohmann::json j;
    j["ignore_id"] = c.ignore_id();
    j["background_is_class"] = c.background_is_class();
    j["classes"] = nlohmann::json::array();
    for (const auto& e : c.classes()) j["classes"].push_back({{"id", e.id}, {"name", e.name}});
    return j;
}

inline ClassCatalog catalog_from_json(const nlohmann::json& j) {
    std::vector<ClassEntry> cls;
    for (const auto& e : j.at("classes")) cls.push_back({e.at("id").get<ClassId>(), e.at("name").get<std::string>()});
    return ClassCatalog(std::move(cls), j.value("ignore_id", kDefaultIgnoreId), j.value("background_is_class", false));
}

inline LabelMask apply_convention(LabelMask raw, MaskConvention conv, ClassId ignore_id) {
    for (auto& v : raw.data()) {
        switch (conv) {
            case MaskConvention::Index: break;
            case MaskConvention::CityscapesLabelIds: v = cityscapes_label_to_train_id(v); break;
            case MaskConvention::Binary: v = (v == ignore_id) ? ignore_id : (v != 0 ? 1 : 0); break;
        }
    }
    return raw;
}

inline std::vector<std::string> read_id_list(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw Error(fmt::format("cannot read split file '{}'", p.string()));
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

/// Opens a dataset directory. Every split file under splits/ contributes its
/// ids; an id listed in two splits is an error.
inline Dataset open_dataset_dir(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::ifstream cf(root / "catalog.json");
    if (!cf) throw Error(fmt::format("dataset '{}': missing catalog.json", root.string()));
    const nlohmann::json cj = nlohmann::json::parse(cf);
    ClassCatalog catalog = catalog_from_json(cj);
    const MaskConvention conv = parse_mask_convention(cj.value("mask_convention", std::string("index")));
    const std::string name = cj.value("name", root.filename().string());

    std::vector<fs::path> split_files;
    for (const auto& e : fs::directory_iterator(root / "splits"))
        if (e.path().extension() == ".txt") split_files.push_back(e.path());
    std::sort(split_files.begin(), split_files.end());

    std::vector<std::string> ids;
    std::map<std::string, std::string> splits;
    for (const auto& f : split_files) {
        const std::string split = f.stem().string();
        for (auto& id : read_id_list(f)) {
            if (!splits.emplace(id, split).second)
                throw Error(fmt::format("dataset '{}': '{}' appears in more than one split", name, id));
            ids.push_back(id);
        }
    }

    const ClassId ignore = catalog.ignore_id();
    Dataset::Loader loader = [root, conv, ignore](const std::string& id) {
        SegSample s;
        s.image_id = id;
        s.image = io::read_image_png(root / "images" / (id + ".png"));
        s.mask = apply_convention(io::read_mask_png(root / "masks" / (id + ".png")), conv, ignore);
        return s;
    };
    return Dataset(name, std::move(catalog), std::move(ids), std::move(splits), std::move(loader), root);
}

/// Writes `ds` in the directory layout read by open_dataset_dir.
inline void export_dataset(const Dataset& ds, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    fs::create_directories(root / "splits");
    nlohmann::json cj = catalog_to_json(ds.catalog());
    cj["name"] = ds.name();
    cj["mask_convention"] = "index";
    std::ofstream(root / "catalog.json") << cj.dump(2) << "\n";
    std::map<std::string, std::ofstream> split_out;
    for (const auto& id : ds.ids()) {
        const SegSample s = ds.load(id);
        io::write_image_png(root / "images" / (id + ".png"), s.image);
        io::write_mask_png(root / "masks" / (id + ".png"), s.mask);
        const std::string& split = ds.split_table().at(id);
        auto it = split_out.find(split);
        if (it == split_out.end()) it = split_out.emplace(split, std::ofstream(root / "splits" / (split + ".txt"))).first;
        it->second << id << "\n";
    }
}

// ---------------------------------------------------------------------------
// Splits

/// Seeded shuffle of `ids`; the first n - floor(n * (1 - train_fraction))
/// go to train, the rest to val.
inline std::map<std::string, std::string> fixed_split_table(const std::vector<std::string>& ids,
                                                            double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error("split: fraction must lie in (0, 1)");
    std::vector<std::string> order = ids;
    Rng rng(mix_seed(seed, 0x5311u));
    shuffle(rng, order);
    const std::size_t n_val =
        static_cast<std::size_t>(std::floor(static_cast<double>(ids.size()) * (1.0 - train_fraction)));
    const std::size_t n_train = ids.size() - n_val;
    std::map<std::string, std::string> table;
    for (std::size_t i = 0; i < order.size(); ++i)
        table[order[i]] = std::string(i < n_train ? kTrainSplit : kValSplit);
    return table;
}

struct SplitPair {
    Dataset train;
    Dataset val;
};

/// Deterministic disjoint split. Both halves carry the full split table in
/// their entries, and `apply_fixed_split` returns the undivided adapter.
inline SplitPair split_fixed(const Dataset& ds, double train_fraction, std::uint64_t seed) {
    const Dataset tagged = ds.with_splits(fixed_split_table(ds.ids(), train_fraction, seed));
    const auto tr = tagged.ids_in(kTrainSplit);
    const auto va = tagged.ids_in(kValSplit);
    return {tagged.subset({tr.begin(), tr.end()}, "/train"), tagged.subset({va.begin(), va.end()}, "/val")};
}

inline Dataset apply_fixed_split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
    return ds.with_splits(fixed_split_table(ds.ids(), train_fraction, seed));
}

// ---------------------------------------------------------------------------
// Resizing and augmentation

inline SegSample resize_to(const SegSample& s, int height, int width) {
    if (height < 1 || width < 1)
        throw ShapeError(fmt::format("resize_to: non-positive resolution {}x{}", height, width));
    return {s.image_id, resize_bilinear(s.image, height, width), resize_nearest(s.mask, height, width)};
}

enum class RandAugOp { AutoContrast, Equalize, Rotate, Color, Contrast, Brightness, Sharpness };

inline const std::vector<RandAugOp>& all_randaug_ops() {
    static const std::vector<RandAugOp> ops = {RandAugOp::AutoContrast, RandAugOp::Equalize, RandAugOp::Rotate,
                                               RandAugOp::Color,        RandAugOp::Contrast, RandAugOp::Brightness,
                                               RandAugOp::Sharpness};
    return ops;
}

inline std::string_view randaug_name(RandAugOp op) {
    switch (op) {
        case RandAugOp::AutoContrast: return "auto_contrast";
        case RandAugOp::Equalize: return "equalize";
        case RandAugOp::Rotate: return "rotate";
        case RandAugOp::Color: return "color";
        case RandAugOp::Contrast: return "contrast";
        case RandAugOp::Brightness: return "brightness";
        case RandAugOp::Sharpness: return "sharpness";
    }
    return "?";
}

inline RandAugOp parse_randaug(std::string_view s) {
    for (auto op : all_randaug_ops())
        if (randaug_name(op) == s) return op;
    throw Error(fmt::format("unknown RandAug op '{}'", s));
}

struct AugmentationConfig {
    double hflip_prob = 0.5;
    int scale_min = 400;  // shorter side, pixels
    int scale_max = 1600;
    int crop_height = 1024;
    int crop_width = 1024;
    std::vector<RandAugOp> randaug_ops = all_randaug_ops();
    int randaug_n = 2;
    int randaug_magnitude = 9;  // 0..10

    void validate() const {
        if (scale_min < 1 || scale_min > scale_max) throw Error("augment: invalid scale range");
        if (crop_height < 1 || crop_width < 1) throw Error("augment: crop size must be positive");
        if (hflip_prob < 0.0 || hflip_prob > 1.0) throw Error("augment: hflip_prob outside [0, 1]");
        if (randaug_n < 0 || randaug_magnitude < 0 || randaug_magnitude > 10) throw Error("augment: invalid RandAug");
    }
};

inline SegSample hflip(const SegSample& s) {
    SegSample out = s;
    const int w = s.image.width();
    for (int y = 0; y < s.image.height(); ++y)
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < s.image.channels(); ++c) out.image.at(y, x, c) = s.image.at(y, w - 1 - x, c);
            out.mask.at(y, x) = s.mask.at(y, w - 1 - x);
        }
    return out;
}

/// Dimensions after scaling the shorter side to `shorter`, aspect preserved.
inline std::pair<int, int> scaled_dims(int height, int width, int shorter) {
    const double f = static_cast<double>(shorter) / std::min(height, width);
    if (height <= width) return {shorter, std::max(1, static_cast<int>(std::lround(width * f)))};
    return {std::max(1, static_cast<int>(std::lround(height * f))), shorter};
}

/// Random crop where the source is larger, symmetric padding (ignore / 0)
/// where it is smaller. Independent per axis.
inline SegSample crop_or_pad(const SegSample& s, int ch, int cw, ClassId ignore_id, Rng& rng) {
    auto offset = [&rng](int src, int dst) {
        if (src > dst) return static_cast<int>(uniform_index(rng, static_cast<std::size_t>(src - dst + 1)));
        return -((dst - src) / 2);  // negative: padding before
    };
    const int oy = offset(s.image.height(), ch);
    const int ox = offset(s.image.width(), cw);
    SegSample out{s.image_id, Image(ch, cw, s.image.channels(), 0.0f), LabelMask(ch, cw, ignore_id)};
    for (int y = 0; y < ch; ++y) {
        const int sy = y + oy;
        if (sy < 0 || sy >= s.image.height()) continue;
        for (int x = 0; x < cw; ++x) {
            const int sx = x + ox;
            if (sx < 0 || sx >= s.image.width()) continue;
            for (int c = 0; c < s.image.channels(); ++c) out.image.at(y, x, c) = s.image.at(sy, sx, c);
            out.mask.at(y, x) = s.mask.at(sy, sx);
        }
    }
    return out;
}

namespace detail {

inline float luminance(const Image& img, int y, int x) {
    if (img.channels() < 3) return img.at(y, x, 0);
    return 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
}

inline void blend(Image& img, const Image& degenerate, double factor) {
    for (std::size_t i = 0; i < img.data().size(); ++i) {
        const double v = degenerate.data()[i] + factor * (img.data()[i] - degenerate.data()[i]);
        img.data()[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
}

inline void auto_contrast(Image& img) {
    for (int c = 0; c < img.channels(); ++c) {
        float lo = 1.0f, hi = 0.0f;
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) {
                lo = std::min(lo, img.at(y, x, c));
                hi = std::max(hi, img.at(y, x, c));
            }
        if (hi <= lo) continue;
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) img.at(y, x, c) = (img.at(y, x, c) - lo) / (hi - lo);
    }
}

inline void equalize(Image& img) {
    const std::size_t n = static_cast<std::size_t>(img.height()) * img.width();
    for (int c = 0; c < img.channels(); ++c) {
        std::array<std::size_t, 256> hist{};
        auto bin = [](float v) { return static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) ++hist[static_cast<std::size_t>(bin(img.at(y, x, c)))];
        std::array<float, 256> lut{};
        std::size_t cum = 0;
        for (int b = 0; b < 256; ++b) {
            cum += hist[static_cast<std::size_t>(b)];
            lut[static_cast<std::size_t>(b)] = static_cast<float>(cum) / static_cast<float>(n);
        }
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x)
                img.at(y, x, c) = lut[static_cast<std::size_t>(bin(img.at(y, x, c)))];
    }
}

// Rotation about the centre; image bilinear with zero fill, mask nearest
// with ignore fill.
inline void rotate(SegSample& s, double degrees, ClassId ignore_id) {
    const double th = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(th), sn = std::sin(th);
    const int h = s.image.height(), w = s.image.width(), ch = s.image.channels();
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    Image img(h, w, ch, 0.0f);
    LabelMask mask(h, w, ignore_id);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dy = y - cy, dx = x - cx;
            const double sy = cy + cs * dy - sn * dx;
            const double sx = cx + sn * dy + cs * dx;
            const int ny = static_cast<int>(std::lround(sy)), nx = static_cast<int>(std::lround(sx));
            if (ny >= 0 && ny < h && nx >= 0 && nx < w) mask.at(y, x) = s.mask.at(ny, nx);
            const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
            const double fy = sy - y0, fx = sx - x0;
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int j = 0; j < 2; ++j)
                    for (int i = 0; i < 2; ++i) {
                        const int yy = y0 + j, xx = x0 + i;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                        acc += (j ? fy : 1 - fy) * (i ? fx : 1 - fx) * s.image.at(yy, xx, c);
                    }
                img.at(y, x, c) = static_cast<float>(acc);
            }
        }
    s.image = std::move(img);
    s.mask = std::move(mask);
}

inline Image grayscale_like(const Image& img) {
    Image g(img.height(), img.width(), img.channels());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const float l = luminance(img, y, x);
            for (int c = 0; c < img.channels(); ++c) g.at(y, x, c) = l;
        }
    return g;
}

inline Image smoothed(const Image& img) {
    Image out = img;
    for (int y = 1; y + 1 < img.height(); ++y)
        for (int x = 1; x + 1 < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c) {
                double acc = 4.0 * img.at(y, x, c);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) acc += img.at(y + dy, x + dx, c);
                out.at(y, x, c) = static_cast<float>(acc / 13.0);
            }
    return out;
}

}  // namespace detail

/// Applies one RandAug op at `magnitude` (0..10). Only Rotate touches the
/// mask, and it resamples labels by nearest neighbour.
inline void apply_randaug(SegSample& s, RandAugOp op, int magnitude, ClassId ignore_id, Rng& rng) {
    const double level = magnitude / 10.0;
    const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
    const double factor = 1.0 + sign * 0.9 * level;
    switch (op) {
        case RandAugOp::AutoContrast: detail::auto_contrast(s.image); break;
        case RandAugOp::Equalize: detail::equalize(s.image); break;
        case RandAugOp::Rotate: detail::rotate(s, sign * 30.0 * level, ignore_id); break;
        case RandAugOp::Color: detail::blend(s.image, detail::grayscale_like(s.image), factor); break;
        case RandAugOp::Contrast: {
            double mean = 0.0;
            for (int y = 0; y < s.image.height(); ++y)
                for (int x = 0; x < s.image.width(); ++x) mean += detail::luminance(s.image, y, x);
            mean /= static_cast<double>(s.image.height()) * s.image.width();
            detail::blend(s.image, Image(s.image.height(), s.image.width(), s.image.channels(),
                                         static_cast<float>(mean)), factor);
            break;
        }
        case RandAugOp::Brightness:
            detail::blend(s.image, Image(s.image.height(), s.image.width(), s.image.channels(), 0.0f), factor);
            break;
        case RandAugOp::Sharpness: detail::blend(s.image, detail::smoothed(s.image), factor); break;
    }
}

/// flip -> rescale shorter side -> crop/pad -> RandAug.
inline SegSample augment(const SegSample& sample, const AugmentationConfig& cfg, ClassId ignore_id, Rng& rng) {
    cfg.validate();
    SegSample s = uniform01(rng) < cfg.hflip_prob ? hflip(sample) : sample;
    const int shorter = cfg.scale_min + static_cast<int>(uniform_index(
                                            rng, static_cast<std::size_t>(cfg.scale_max - cfg.scale_min + 1)));
    const auto [h, w] = scaled_dims(s.image.height(), s.image.width(), shorter);
    s = resize_to(s, h, w);
    s = crop_or_pad(s, cfg.crop_height, cfg.crop_width, ignore_id, rng);
    if (!cfg.randaug_ops.empty())
        for (int i = 0; i < cfg.randaug_n; ++i) {
            const RandAugOp op = cfg.randaug_ops[uniform_index(rng, cfg.randaug_ops.size())];
            apply_randaug(s, op, cfg.randaug_magnitude, ignore_id, rng);
        }
    return s;
}

/// Per-sample stream: pure in (global seed, epoch, image id).
inline Rng sample_rng(std::uint64_t seed, std::uint64_t epoch, std::string_view image_id) {
    return Rng(mix_seed(mix_seed(seed, epoch), hash_string(image_id)));
}

// ---------------------------------------------------------------------------
// Synthetic blobs

struct SyntheticBlobConfig {
    int n_classes = 3;
    int images = 40;
    int image_size = 64;
    int blobs_per_image = 3;
    bool color_correspondence = true;
    double noise = 0.02;
    std::uint64_t seed = 0;
    double train_fraction = 0.5;
    std::string name = "synthetic";

    void validate() const {
        if (n_classes < 2) throw Error("synthetic: n_classes must be >= 2");
        if (images < 1 || image_size < 4 || blobs_per_image < 1) throw Error("synthetic: invalid sizes");
        if (noise < 0.0) throw Error("synthetic: negative noise");
    }
};

/// Well-separated RGB palette; entry 0 is the background colour.
inline std::array<float, 3> synthetic_palette(int cls) {
    static const std::array<std::array<float, 3>, 10> base = {{{0.15f, 0.15f, 0.15f},
                                                               {0.90f, 0.20f, 0.20f},
                                                               {0.20f, 0.85f, 0.25f},
                                                               {0.20f, 0.30f, 0.95f},
                                                               {0.95f, 0.90f, 0.20f},
                                                               {0.85f, 0.25f, 0.90f},
                                                               {0.20f, 0.90f, 0.90f},
                                                               {0.95f, 0.60f, 0.15f},
                                                               {0.55f, 0.55f, 0.55f},
                                                               {0.95f, 0.95f, 0.95f}}};
    if (cls < static_cast<int>(base.size())) return base[static_cast<std::size_t>(cls)];
    // Beyond the palette: deterministic hash colours.
    const std::uint64_t h = splitmix64(static_cast<std::uint64_t>(cls));
    return {static_cast<float>((h & 0xFF) / 255.0), static_cast<float>(((h >> 8) & 0xFF) / 255.0),
            static_cast<float>(((h >> 16) & 0xFF) / 255.0)};
}

namespace detail {

inline SegSample render_blob_image(const SyntheticBlobConfig& cfg, int index) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(index) + 1));
    const int n = cfg.image_size;
    SegSample s{fmt::format("img_{:05d}", index), Image(n, n, 3), LabelMask(n, n, 0)};
    std::vector<std::array<float, 3>> colour_of(static_cast<std::size_t>(cfg.n_classes));
    for (int c = 0; c < cfg.n_classes; ++c) {
        colour_of[static_cast<std::size_t>(c)] =
            cfg.color_correspondence
                ? synthetic_palette(c)
                : std::array<float, 3>{static_cast<float>(uniform01(rng)), static_cast<float>(uniform01(rng)),
                                       static_cast<float>(uniform01(rng))};
    }
    for (int b = 0; b < cfg.blobs_per_image; ++b) {
        // Cycle through foreground classes from a random start so every
        // class appears regularly.
        const int cls = 1 + static_cast<int>((uniform_index(rng, static_cast<std::size_t>(cfg.n_classes - 1)) + b) %
                                             static_cast<std::size_t>(cfg.n_classes - 1));
        const double cy = uniform_real(rng, 0.15, 0.85) * n;
        const double cx = uniform_real(rng, 0.15, 0.85) * n;
        const double ry = uniform_real(rng, 0.12, 0.25) * n;
        const double rx = uniform_real(rng, 0.12, 0.25) * n;
        const double th = uniform_real(rng, 0.0, std::numbers::pi);
        const double cs = std::cos(th), sn = std::sin(th);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
                const double u = (cs * dx + sn * dy) / rx, v = (-sn * dx + cs * dy) / ry;
                if (u * u + v * v <= 1.0) s.mask.at(y, x) = cls;
            }
    }
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const auto& col = colour_of[static_cast<std::size_t>(s.mask.at(y, x))];
            for (int c = 0; c < 3; ++c) {
                const double v = col[static_cast<std::size_t>(c)] + cfg.noise * standard_normal(rng);
                s.image.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    return s;
}

}  // namespace detail

/// In-memory dataset of elliptical blobs on a background (class 0). With
/// colour correspondence every class has a fixed colour.
inline Dataset synth_blobs(const SyntheticBlobConfig& cfg) {
    cfg.validate();
    auto store = std::make_shared<std::map<std::string, SegSample>>();
    std::vector<std::string> ids;
    for (int i = 0; i < cfg.images; ++i) {
        SegSample s = detail::render_blob_image(cfg, i);
        ids.push_back(s.image_id);
        store->emplace(s.image_id, std::move(s));
    }
    auto splits = fixed_split_table(ids, cfg.train_fraction, cfg.seed);
    Dataset::Loader loader = [store](const std::string& id) { return store->at(id); };
    return Dataset(cfg.name, ClassCatalog::numbered(cfg.n_classes, true), std::move(ids), std::move(splits),
                   std::move(loader));
}

}  // namespace fss
