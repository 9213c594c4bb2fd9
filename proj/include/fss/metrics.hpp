#pragma once

// Confusion-matrix evaluation, per-class IoU / mIoU, run aggregation and
// the per-image object-size analysis.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <fmt/format.h>

#include "fss/datamodel.hpp"

namespace fss {

/// Rows are ground truth, columns are predictions, both in catalog order.
class ConfusionMatrix {
public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(ClassCatalog catalog)
        : catalog_(std::move(catalog)), n_(catalog_.size()), counts_(n_ * n_, 0), lut_(catalog_.id_span(), -1) {
        for (std::size_t i = 0; i < n_; ++i) lut_[static_cast<std::size_t>(catalog_.classes()[i].id)] = static_cast<int>(i);
    }

    const ClassCatalog& catalog() const noexcept { return catalog_; }
    std::size_t num_classes() const noexcept { return n_; }

    std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * n_ + pred]; }
    std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts_[gt * n_ + pred]; }
    const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

    std::uint64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

    /// counts[gt, pred] += 1 for every pixel whose ground truth is not
    /// ignored. A prediction outside the catalog is an error.
    void update(const LabelMask& pred, const LabelMask& gt) {
        if (pred.height() != gt.height() || pred.width() != gt.width())
            throw ShapeError(fmt::format("confusion_update: prediction {}x{} vs ground truth {}x{}", pred.height(),
                                         pred.width(), gt.height(), gt.width()));
        const ClassId ignore = catalog_.ignore_id();
        const auto& p = pred.data();
        const auto& g = gt.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (g[i] == ignore) continue;
            ++counts_[static_cast<std::size_t>(row_of(g[i])) * n_ + static_cast<std::size_t>(row_of(p[i]))];
        }
    }

    std::uint64_t true_positives(std::size_t c) const { return at(c, c); }
    std::uint64_t false_positives(std::size_t c) const {
        std::uint64_t s = 0;
        for (std::size_t g = 0; g < n_; ++g)
            if (g != c) s += at(g, c);
        return s;
    }
    std::uint64_t false_negatives(std::size_t c) const {
        std::uint64_t s = 0;
        for (std::size_t p = 0; p < n_; ++p)
            if (p != c) s += at(c, p);
        return s;
    }

    friend bool operator==(const ConfusionMatrix& a, const ConfusionMatrix& b) {
        return a.catalog_ == b.catalog_ && a.counts_ == b.counts_;
    }

private:
    int row_of(ClassId id) const {
        const int r = (id >= 0 && static_cast<std::size_t>(id) < lut_.size()) ? lut_[static_cast<std::size_t>(id)] : -1;
        if (r < 0) throw Error(fmt::format("confusion_update: label {} not in catalog", id));
        return r;
    }

    ClassCatalog catalog_;
    std::size_t n_ = 0;
    std::vector<std::uint64_t> counts_;
    std::vector<int> lut_;
};

/// TP / (TP + FP + FN) for the class at catalog position `c`; nullopt when
/// the class never occurs in ground truth or prediction.
inline std::optional<double> iou_at(const ConfusionMatrix& cm, std::size_t c) {
    const std::uint64_t tp = cm.true_positives(c);
    const std::uint64_t denom = tp + cm.false_positives(c) + cm.false_negatives(c);
    if (denom == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(denom);
}

inline std::optional<double> iou(const ConfusionMatrix& cm, ClassId class_id) {
    return iou_at(cm, cm.catalog().index_of(class_id));
}

struct MiouResult {
    double miou = 0.0;
    std::vector<std::optional<double>> per_class;  // catalog order
    std::size_t n_used = 0;
    std::size_t n_excluded = 0;
};

/// Unweighted mean over classes with a defined IoU.
inline MiouResult miou_detail(const ConfusionMatrix& cm) {
    MiouResult r;
    double sum = 0.0;
    for (std::size_t c = 0; c < cm.num_classes(); ++c) {
        auto v = iou_at(cm, c);
        r.per_class.push_back(v);
        if (v) {
            sum += *v;
            ++r.n_used;
        } else {
            ++r.n_excluded;
        }
    }
    if (r.n_used == 0) throw Error("miou: no class has a defined IoU");
    r.miou = sum / static_cast<double>(r.n_used);
    return r;
}

inline double miou(const ConfusionMatrix& cm) { return miou_detail(cm).miou; }

inline ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b) {
    if (!(a.catalog() == b.catalog())) throw Error("merge: confusion matrices use different catalogs");
    ConfusionMatrix out = a;
    for (std::size_t g = 0; g < a.num_classes(); ++g)
        for (std::size_t p = 0; p < a.num_classes(); ++p) out.at(g, p) += b.at(g, p);
    return out;
}

// ---------------------------------------------------------------------------

struct RunSummary {
    std::vector<double> values;
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation (n - 1)
};

inline double mean_of(std::span<const double> v) {
    if (v.empty()) throw Error("mean of an empty list");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline RunSummary aggregate_runs(std::span<const double> values) {
    if (values.size() < 2)
        throw Error(fmt::format("aggregate_runs: standard deviation needs >= 2 values, got {}", values.size()));
    RunSummary s;
    s.values.assign(values.begin(), values.end());
    if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); })) {
        s.mean = values.front();
        return s;
    }
    s.mean = mean_of(values);
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return s;
}

// ---------------------------------------------------------------------------

struct ObjectSizePoint {
    std::string image_id;
    std::uint64_t area = 0;  // ground-truth pixels of the class
    double iou = 0.0;
};

/// One point per image: ground-truth area of `class_id` and the image-level
/// IoU of that class. Images where the class is neither present nor
/// predicted are skipped.
inline std::vector<ObjectSizePoint> object_size_report(std::span<const LabelMask> preds,
                                                       std::span<const LabelMask> gts, ClassId class_id,
                                                       ClassId ignore_id = kDefaultIgnoreId,
                                                       std::span<const std::string> ids = {}) {
    if (preds.size() != gts.size()) throw Error("object_size_report: prediction/ground-truth count mismatch");
    std::vector<ObjectSizePoint> out;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        const auto& p = preds[i].data();
        const auto& g = gts[i].data();
        if (p.size() != g.size()) throw ShapeError("object_size_report: shape mismatch");
        std::uint64_t tp = 0, fp = 0, fn = 0;
        for (std::size_t j = 0; j < g.size(); ++j) {
            if (g[j] == ignore_id) continue;
            const bool gt_c = g[j] == class_id, pr_c = p[j] == class_id;
            tp += gt_c && pr_c;
            fp += !gt_c && pr_c;
            fn += gt_c && !pr_c;
        }
        if (tp + fp + fn == 0) continue;
        out.push_back({i < ids.size() ? ids[i] : fmt::format("{}", i), tp + fn,
                       static_cast<double>(tp) / static_cast<double>(tp + fp + fn)});
    }
    return out;
}

}  // namespace fss
