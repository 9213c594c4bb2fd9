#pragma once

// Core segmentation value types: class catalogs, label masks, images,
// samples and few-shot tasks.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "fss/common.hpp"

namespace fss {

using ClassId = std::int32_t;
inline constexpr ClassId kDefaultIgnoreId = 255;

struct ClassEntry {
    ClassId id = 0;
    std::string name;

    friend bool operator==(const ClassEntry&, const ClassEntry&) = default;
};

/// Ordered list of classes plus the ignore sentinel. When
/// `background_is_class` is set, class 0 is the background and is scored
/// like any other class.
class ClassCatalog {
public:
    ClassCatalog() = default;

    ClassCatalog(std::vector<ClassEntry> classes, ClassId ignore_id = kDefaultIgnoreId,
                 bool background_is_class = false)
        : classes_(std::move(classes)), ignore_id_(ignore_id), background_is_class_(background_is_class) {
        std::set<ClassId> seen;
        for (const auto& c : classes_) {
            if (c.id < 0) throw Error(fmt::format("catalog: negative class id {}", c.id));
            if (c.id == ignore_id_) throw Error(fmt::format("catalog: class id {} collides with ignore id", c.id));
            if (!seen.insert(c.id).second) throw Error(fmt::format("catalog: duplicate class id {}", c.id));
        }
        if (background_is_class_ && !seen.contains(0))
            throw Error("catalog: background_is_class requires class 0");
    }

    /// Classes named "class_0" .. "class_{n-1}".
    static ClassCatalog numbered(int n, bool background_is_class = false, ClassId ignore_id = kDefaultIgnoreId) {
        std::vector<ClassEntry> cls;
        for (int i = 0; i < n; ++i) cls.push_back({i, fmt::format("class_{}", i)});
        if (background_is_class && n > 0) cls[0].name = "background";
        return ClassCatalog(std::move(cls), ignore_id, background_is_class);
    }

    const std::vector<ClassEntry>& classes() const noexcept { return classes_; }
    ClassId ignore_id() const noexcept { return ignore_id_; }
    bool background_is_class() const noexcept { return background_is_class_; }
    std::size_t size() const noexcept { return classes_.size(); }

    bool contains(ClassId id) const noexcept {
        return std::any_of(classes_.begin(), classes_.end(), [id](const auto& c) { return c.id == id; });
    }

    /// Position of `id` in the catalog order.
    std::size_t index_of(ClassId id) const {
        for (std::size_t i = 0; i < classes_.size(); ++i)
            if (classes_[i].id == id) return i;
        throw Error(fmt::format("catalog: unknown class {}", id));
    }

    std::vector<ClassId> ids() const {
        std::vector<ClassId> out;
        out.reserve(classes_.size());
        for (const auto& c : classes_) out.push_back(c.id);
        return out;
    }

    /// Classes the task sampler must satisfy. Background participates only
    /// when it is declared a class; otherwise it lives in ignore_id and is
    /// not in the catalog at all.
    std::vector<ClassId> sampled_classes() const {
        auto out = ids();
        std::sort(out.begin(), out.end());
        return out;
    }

    /// Largest class id + 1; the width of dense per-id lookup tables.
    std::size_t id_span() const noexcept {
        ClassId m = -1;
        for (const auto& c : classes_) m = std::max(m, c.id);
        return static_cast<std::size_t>(m + 1);
    }

    friend bool operator==(const ClassCatalog&, const ClassCatalog&) = default;

private:
    std::vector<ClassEntry> classes_;
    ClassId ignore_id_ = kDefaultIgnoreId;
    bool background_is_class_ = false;
};

/// H x W grid of class indices, row-major.
class LabelMask {
public:
    LabelMask() = default;
    LabelMask(int height, int width, ClassId fill = 0)
        : height_(height), width_(width),
          data_(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0), fill) {
        if (height < 0 || width < 0) throw ShapeError("mask: negative dimensions");
    }
    LabelMask(int height, int width, std::vector<ClassId> data)
        : height_(height), width_(width), data_(std::move(data)) {
        if (height < 0 || width < 0 || data_.size() != static_cast<std::size_t>(height) * width)
            throw ShapeError(fmt::format("mask: {} values do not fill {}x{}", data_.size(), height, width));
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t area() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    ClassId at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    ClassId& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }

    const std::vector<ClassId>& data() const noexcept { return data_; }
    std::vector<ClassId>& data() noexcept { return data_; }

    friend bool operator==(const LabelMask&, const LabelMask&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<ClassId> data_;
};

/// H x W x C image, interleaved channels, values in [0, 1] unless an
/// encoder-specific normalization has been applied.
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels, float fill = 0.0f)
        : height_(height), width_(width), channels_(channels),
          data_(static_cast<std::size_t>(height) * width * channels, fill) {
        if (height < 0 || width < 0 || channels <= 0) throw ShapeError("image: invalid dimensions");
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }

    float at(int y, int x, int c) const {
        return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
    }
    float& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c]; }

    const std::vector<float>& data() const noexcept { return data_; }
    std::vector<float>& data() noexcept { return data_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<float> data_;
};

struct SegSample {
    std::string image_id;
    Image image;
    LabelMask mask;
};

struct FewShotTask {
    std::vector<SegSample> support;
    std::vector<SegSample> query;
    int k = 1;
    ClassCatalog catalog;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------

struct MaskViolation {
    int y = 0;
    int x = 0;
    ClassId value = 0;
    std::string message;
};

struct ValidationResult {
    std::vector<MaskViolation> violations;
    bool ok() const noexcept { return violations.empty(); }
    explicit operator bool() const noexcept { return ok(); }
};

/// Checks every mask value against the catalog. Reports at most
/// `max_reports` offending pixels (one per distinct value first).
inline ValidationResult validate_mask(const LabelMask& mask, const ClassCatalog& catalog,
                                      std::size_t max_reports = 16) {
    if (mask.height() < 1 || mask.width() < 1)
        throw ShapeError(fmt::format("mask: degenerate shape {}x{}", mask.height(), mask.width()));
    ValidationResult result;
    std::set<ClassId> reported;
    const std::set<ClassId> legal = [&] {
        auto ids = catalog.ids();
        std::set<ClassId> s(ids.begin(), ids.end());
        s.insert(catalog.ignore_id());
        return s;
    }();
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            const ClassId v = mask.at(y, x);
            if (legal.contains(v) || reported.contains(v)) continue;
            reported.insert(v);
            if (result.violations.size() < max_reports)
                result.violations.push_back({y, x, v, fmt::format("unknown class {} at ({}, {})", v, y, x)});
        }
    }
    return result;
}

/// Classes with at least `min_pixels` labeled pixels. Ignore pixels never
/// count.
inline std::set<ClassId> class_presence(const LabelMask& mask, int min_pixels = 1,
                                        ClassId ignore_id = kDefaultIgnoreId) {
    if (min_pixels < 1) throw Error("class_presence: min_pixels must be positive");
    std::map<ClassId, std::size_t> counts;
    for (ClassId v : mask.data())
        if (v != ignore_id) ++counts[v];
    std::set<ClassId> out;
    for (const auto& [id, n] : counts)
        if (n >= static_cast<std::size_t>(min_pixels)) out.insert(id);
    return out;
}

inline void validate_sample(const SegSample& s, const ClassCatalog& catalog) {
    if (s.image.height() != s.mask.height() || s.image.width() != s.mask.width())
        throw ShapeError(fmt::format("sample '{}': image {}x{} vs mask {}x{}", s.image_id, s.image.height(),
                                     s.image.width(), s.mask.height(), s.mask.width()));
    auto r = validate_mask(s.mask, catalog, 1);
    if (!r) throw Error(fmt::format("sample '{}': {}", s.image_id, r.violations.front().message));
}

}  // namespace fss
