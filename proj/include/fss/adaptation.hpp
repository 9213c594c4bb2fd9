#pragma once

// Segmentation heads and the parameter surgeries behind each adaptation
// method, with trainable-parameter accounting.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SVD>
#include <fmt/format.h>

#include "fss/encoders.hpp"
#include "fss/nn/layers.hpp"
#include "fss/nn/params.hpp"
#include "fss/resample.hpp"

namespace fss {

enum class Method { Linear, Multilayer, Svf, Lora, Bitfit, Finetune };

inline std::string_view method_name(Method m) {
    switch (m) {
        case Method::Linear: return "linear";
        case Method::Multilayer: return "multilayer";
        case Method::Svf: return "svf";
        case Method::Lora: return "lora";
        case Method::Bitfit: return "bitfit";
        case Method::Finetune: return "finetune";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    for (Method m : {Method::Linear, Method::Multilayer, Method::Svf, Method::Lora, Method::Bitfit, Method::Finetune})
        if (method_name(m) == s) return m;
    throw Error(fmt::format("unknown method '{}'", s));
}

inline const std::vector<Method>& all_methods() {
    static const std::vector<Method> v = {Method::Linear, Method::Multilayer, Method::Svf,
                                          Method::Lora,   Method::Bitfit,     Method::Finetune};
    return v;
}

/// Methods that run a second, encoder-touching stage.
inline bool has_stage2(Method m) { return m != Method::Linear && m != Method::Multilayer; }

// ---------------------------------------------------------------------------
// Heads: per-channel batch normalization followed by a 1x1 classifier.

/// Dense bilinear resize operator (out x in), half-pixel centres.
template <typename T>
Mat<T> bilinear_operator(int in, int out) {
    Mat<T> r = Mat<T>::Zero(out, in);
    const auto taps = linear_taps(in, out);
    for (int i = 0; i < out; ++i) {
        const auto& t = taps[static_cast<std::size_t>(i)];
        r(i, t.i0) += static_cast<T>(1.0 - t.w1);
        r(i, t.i1) += static_cast<T>(t.w1);
    }
    return r;
}

enum class NormMode { Train, Eval };

template <typename T>
class SegHead {
public:
    struct Options {
        T momentum = T(0.1);
        T eps = T(1e-5);
        /// Use running statistics during training when a batch holds this
        /// many images or fewer (0 disables the fallback).
        int running_stats_batch_limit = 1;
    };

    SegHead() = default;
    SegHead(int embed_dim, int n_taps, int n_classes, std::uint64_t seed, Options opts = {})
        : embed_dim_(embed_dim), n_taps_(n_taps), n_classes_(n_classes), opts_(opts) {
        if (embed_dim < 1 || n_taps < 1 || n_classes < 1) throw Error("head: invalid dimensions");
        const Eigen::Index c = in_channels();
        params_.add("head.norm.weight", 1, c, true, nn::groups::kHead).value.setOnes();
        params_.add("head.norm.bias", 1, c, true, nn::groups::kHead);
        auto& w = params_.add("head.classifier.weight", n_classes, c, true, nn::groups::kHead);
        Rng rng(mix_seed(seed, 0x4EADu));
        for (Eigen::Index i = 0; i < w.value.size(); ++i)
            w.value.data()[i] = static_cast<T>(0.01 * standard_normal(rng));
        params_.add("head.classifier.bias", 1, n_classes, true, nn::groups::kHead);
        running_mean_ = nn::RowVec<T>::Zero(c);
        running_var_ = nn::RowVec<T>::Ones(c);
    }

    int in_channels() const noexcept { return embed_dim_ * n_taps_; }
    int n_taps() const noexcept { return n_taps_; }
    int n_classes() const noexcept { return n_classes_; }
    ParamTable<T>& params() noexcept { return params_; }
    const ParamTable<T>& params() const noexcept { return params_; }
    const nn::RowVec<T>& running_mean() const noexcept { return running_mean_; }
    const nn::RowVec<T>& running_var() const noexcept { return running_var_; }
    Options& options() noexcept { return opts_; }

    void set_running_stats(nn::RowVec<T> mean, nn::RowVec<T> var) {
        if (mean.size() != in_channels() || var.size() != in_channels())
            throw ShapeError("head: running statistics have the wrong width");
        running_mean_ = std::move(mean);
        running_var_ = std::move(var);
    }

    struct Cache {
        std::vector<std::pair<int, int>> grids;        // per image
        std::vector<std::pair<int, int>> out_sizes;    // per image
        Mat<T> xhat, y;
        nn::RowVec<T> rstd;
        bool batch_stats = false;
    };

    /// Channel-concatenates each stack's taps (block order).
    Mat<T> concat_taps(const FeatureStack<T>& stack) const {
        if (static_cast<int>(stack.size()) != n_taps_)
            throw Error(fmt::format("head expects {} taps, got {}", n_taps_, stack.size()));
        const Eigen::Index rows = stack.front().data.rows();
        Mat<T> x(rows, in_channels());
        for (int t = 0; t < n_taps_; ++t) {
            const auto& f = stack[static_cast<std::size_t>(t)];
            if (f.data.rows() != rows || f.grid_h != stack.front().grid_h || f.grid_w != stack.front().grid_w)
                throw ShapeError("head: taps do not share a spatial grid");
            if (f.data.cols() != embed_dim_)
                throw ShapeError(fmt::format("head: expected {} channels per tap, got {}", embed_dim_, f.data.cols()));
            x.middleCols(static_cast<Eigen::Index>(t) * embed_dim_, embed_dim_) = f.data;
        }
        return x;
    }

    /// Normalized, classified features on the patch grid (P x K), one block
    /// of rows per image. Updates running statistics in Train mode.
    Mat<T> grid_logits(const Mat<T>& x, int batch_images, NormMode mode, Cache* cache) {
        if (x.cols() != in_channels())
            throw ShapeError(fmt::format("head: expected {} input channels, got {}", in_channels(), x.cols()));
        const bool batch_stats = mode == NormMode::Train && batch_images > opts_.running_stats_batch_limit;
        nn::RowVec<T> mean, var;
        if (batch_stats) {
            mean = x.colwise().mean();
            var = (x.rowwise() - mean).array().square().colwise().mean();
            const T n = static_cast<T>(x.rows());
            const T unbias = n > 1 ? n / (n - 1) : T(1);
            running_mean_ = (T(1) - opts_.momentum) * running_mean_ + opts_.momentum * mean;
            running_var_ = (T(1) - opts_.momentum) * running_var_ + opts_.momentum * (var * unbias);
        } else {
            mean = running_mean_;
            var = running_var_;
        }
        const nn::RowVec<T> rstd = (var.array() + opts_.eps).rsqrt();
        Mat<T> xhat = (x.rowwise() - mean).array().rowwise() * rstd.array();
        Mat<T> y = xhat.array().rowwise() * params_.value("head.norm.weight").row(0).array();
        y.rowwise() += params_.value("head.norm.bias").row(0);
        Mat<T> z = y * params_.value("head.classifier.weight").transpose();
        z.rowwise() += params_.value("head.classifier.bias").row(0);
        if (cache) {
            cache->xhat = std::move(xhat);
            cache->y = std::move(y);
            cache->rstd = rstd;
            cache->batch_stats = batch_stats;
        }
        return z;
    }

    /// Logits (H*W x K, raster order) for every image in the batch,
    /// bilinearly upsampled to `out_sizes`.
    std::vector<Mat<T>> forward(const std::vector<FeatureStack<T>>& batch,
                                const std::vector<std::pair<int, int>>& out_sizes, NormMode mode, Cache* cache) {
        if (batch.size() != out_sizes.size()) throw Error("head: batch / output size mismatch");
        Eigen::Index rows = 0;
        std::vector<Mat<T>> xs;
        for (const auto& s : batch) {
            xs.push_back(concat_taps(s));
            rows += xs.back().rows();
        }
        Mat<T> x(rows, in_channels());
        Eigen::Index r = 0;
        for (const auto& xi : xs) {
            x.middleRows(r, xi.rows()) = xi;
            r += xi.rows();
        }
        const Mat<T> z = grid_logits(x, static_cast<int>(batch.size()), mode, cache);
        std::vector<Mat<T>> out;
        r = 0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const int gh = batch[i].front().grid_h, gw = batch[i].front().grid_w;
            const auto n = static_cast<Eigen::Index>(gh) * gw;
            out.push_back(upsample(z.middleRows(r, n), gh, gw, out_sizes[i].first, out_sizes[i].second));
            if (cache) cache->grids.emplace_back(gh, gw);
            r += n;
        }
        if (cache) cache->out_sizes = out_sizes;
        return out;
    }

    /// Accumulates head gradients; returns dL/d(tap) per image and tap.
    std::vector<std::vector<Mat<T>>> backward(const Cache& c, const std::vector<Mat<T>>& dlogits) {
        Eigen::Index rows = c.xhat.rows();
        Mat<T> dz(rows, n_classes_);
        Eigen::Index r = 0;
        for (std::size_t i = 0; i < dlogits.size(); ++i) {
            const auto [gh, gw] = c.grids[i];
            const auto [oh, ow] = c.out_sizes[i];
            const auto n = static_cast<Eigen::Index>(gh) * gw;
            dz.middleRows(r, n) = upsample_backward(dlogits[i], gh, gw, oh, ow);
            r += n;
        }
        auto& w = params_.at("head.classifier.weight");
        auto& b = params_.at("head.classifier.bias");
        auto& gamma = params_.at("head.norm.weight");
        auto& beta = params_.at("head.norm.bias");
        if (w.trainable) w.grad.noalias() += dz.transpose() * c.y;
        if (b.trainable) b.grad.row(0) += dz.colwise().sum();
        const Mat<T> dy = dz * w.value;
        if (gamma.trainable) gamma.grad.row(0) += dy.cwiseProduct(c.xhat).colwise().sum();
        if (beta.trainable) beta.grad.row(0) += dy.colwise().sum();
        const Mat<T> dxhat = dy.array().rowwise() * gamma.value.row(0).array();
        Mat<T> dx;
        if (c.batch_stats) {
            const T n = static_cast<T>(rows);
            const nn::RowVec<T> s1 = dxhat.colwise().sum();
            const nn::RowVec<T> s2 = dxhat.cwiseProduct(c.xhat).colwise().sum();
            dx = (dxhat * n).rowwise() - s1;
            dx -= (c.xhat.array().rowwise() * s2.array()).matrix();
            dx = dx.array().rowwise() * (c.rstd.array() / n);
        } else {
            dx = dxhat.array().rowwise() * c.rstd.array();
        }
        std::vector<std::vector<Mat<T>>> out;
        r = 0;
        for (std::size_t i = 0; i < dlogits.size(); ++i) {
            const auto n = static_cast<Eigen::Index>(c.grids[i].first) * c.grids[i].second;
            std::vector<Mat<T>> taps;
            for (int t = 0; t < n_taps_; ++t)
                taps.push_back(dx.block(r, static_cast<Eigen::Index>(t) * embed_dim_, n, embed_dim_));
            out.push_back(std::move(taps));
            r += n;
        }
        return out;
    }

private:
    Mat<T> upsample(const Mat<T>& z, int gh, int gw, int oh, int ow) const {
        if (gh == oh && gw == ow) return z;
        const Mat<T> rh = bilinear_operator<T>(gh, oh);
        const Mat<T> rw = bilinear_operator<T>(gw, ow);
        Mat<T> out(static_cast<Eigen::Index>(oh) * ow, n_classes_);
        for (int k = 0; k < n_classes_; ++k) {
            const Mat<T> g = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                                        0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>(
                z.data() + k, gh, gw, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(gw * z.cols(), z.cols()));
            const Mat<T> up = rh * g * rw.transpose();
            out.col(k) = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(up.data(), up.size());
        }
        return out;
    }

    Mat<T> upsample_backward(const Mat<T>& dl, int gh, int gw, int oh, int ow) const {
        if (gh == oh && gw == ow) return dl;
        const Mat<T> rh = bilinear_operator<T>(gh, oh);
        const Mat<T> rw = bilinear_operator<T>(gw, ow);
        Mat<T> out(static_cast<Eigen::Index>(gh) * gw, n_classes_);
        for (int k = 0; k < n_classes_; ++k) {
            const Mat<T> d = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                                        0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>(
                dl.data() + k, oh, ow, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(ow * dl.cols(), dl.cols()));
            const Mat<T> g = rh.transpose() * d * rw;
            out.col(k) = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(g.data(), g.size());
        }
        return out;
    }

    int embed_dim_ = 0;
    int n_taps_ = 1;
    int n_classes_ = 0;
    Options opts_;
    ParamTable<T> params_;
    nn::RowVec<T> running_mean_;
    nn::RowVec<T> running_var_;
};

// ---------------------------------------------------------------------------
// SVF

template <typename T>
struct SVFDecomposition {
    Mat<T> u;   // m x r
    Mat<T> s;   // 1 x r, descending
    Mat<T> vt;  // r x n
};

/// Thin SVD, r = min(m, n). Convolution kernels must be reshaped to
/// (out, in * kh * kw) first.
template <typename T>
SVFDecomposition<T> svf_decompose(const Mat<T>& w) {
    if (w.size() == 0) throw ShapeError("svf_decompose: empty weight");
    if (!w.allFinite()) throw Error("svf_decompose: weight has non-finite entries");
    using Plain = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    Eigen::JacobiSVD<Plain> svd(Plain(w), Eigen::ComputeThinU | Eigen::ComputeThinV);
    SVFDecomposition<T> d;
    d.u = svd.matrixU();
    d.s = svd.singularValues().transpose();
    d.vt = svd.matrixV().transpose();
    return d;
}

template <typename T>
Mat<T> svf_reconstruct(const SVFDecomposition<T>& d) {
    return nn::svf_weight<T>(d.u, d.s, d.vt);
}

/// Reshapes an (out, in, kh, kw) kernel stored contiguously into the 2-D
/// (out, in * kh * kw) matrix SVF operates on.
template <typename T>
Mat<T> conv_weight_as_matrix(std::span<const T> kernel, Eigen::Index out, Eigen::Index in, Eigen::Index kh,
                             Eigen::Index kw) {
    if (static_cast<Eigen::Index>(kernel.size()) != out * in * kh * kw) throw ShapeError("conv kernel size mismatch");
    return Eigen::Map<const Mat<T>>(kernel.data(), out, in * kh * kw);
}

// ---------------------------------------------------------------------------
// Surgery on parameter tables

inline bool selector_matches(const std::string& layer, const std::vector<std::string>& targets) {
    for (const auto& t : targets) {
        if (t == "*") {
            if (layer.starts_with("blocks.")) return true;
            continue;
        }
        if (layer == t) return true;
        if (layer.size() > t.size() && layer.ends_with(t) && layer[layer.size() - t.size() - 1] == '.') return true;
    }
    return false;
}

inline std::vector<std::string> select_layers(const std::vector<std::string>& layers,
                                              const std::vector<std::string>& targets) {
    std::vector<std::string> out;
    for (const auto& l : layers)
        if (selector_matches(l, targets)) out.push_back(l);
    return out;
}

inline std::vector<std::string> default_svf_targets() {
    return {"attn.q", "attn.k", "attn.v", "attn.proj", "mlp.fc1", "mlp.fc2"};
}

struct LoraConfig {
    int rank = 4;
    double alpha = 4.0;
    std::vector<std::string> targets = {"attn.q", "attn.v"};
};

template <typename T>
void freeze_all(ParamTable<T>& t) {
    for (auto& [_, p] : t) {
        p.trainable = false;
        p.group = nn::groups::kBackbone;
    }
}

/// Replaces each target's weight by frozen U, Vt and trainable s.
template <typename T>
void svf_apply(ParamTable<T>& t, const std::vector<std::string>& layers) {
    if (layers.empty()) throw Error("svf: target selection is empty");
    freeze_all(t);
    for (const auto& l : layers) {
        if (nn::linear_form(t, l) != nn::LinearForm::Plain)
            throw Error(fmt::format("svf: layer '{}' already carries an adapter", l));
        const auto& w = t.at(l + ".weight");
        const Eigen::Index m = w.rows, n = w.cols, r = std::min(m, n);
        std::optional<SVFDecomposition<T>> d;
        if (w.allocated()) d = svf_decompose<T>(w.value);
        t.erase(l + ".weight");
        auto& u = t.add(l + ".svf_u", m, r, false, nn::groups::kSvfFactors);
        auto& s = t.add(l + ".svf_s", 1, r, true, nn::groups::kSvfSingularValues);
        auto& vt = t.add(l + ".svf_vt", r, n, false, nn::groups::kSvfFactors);
        if (d) {
            u.value = d->u;
            s.value = d->s;
            vt.value = d->vt;
        }
    }
}

/// Adds A (r x in, uniform +-1/sqrt(in)) and B (out x r, zeros) to each
/// target; everything else in the table is frozen.
template <typename T>
void lora_apply(ParamTable<T>& t, const std::vector<std::string>& layers, const LoraConfig& cfg,
                std::uint64_t seed) {
    if (layers.empty()) throw Error("lora: target selection is empty");
    if (cfg.rank < 1) throw Error("lora: rank must be >= 1");
    freeze_all(t);
    t.attributes().erase("lora.merged");
    Rng rng(mix_seed(seed, 0x10EAu));
    for (const auto& l : layers) {
        if (nn::linear_form(t, l) != nn::LinearForm::Plain)
            throw Error(fmt::format("lora: layer '{}' already carries an adapter", l));
        const auto& w = t.at(l + ".weight");
        const Eigen::Index m = w.rows, n = w.cols;
        auto& a = t.add(l + ".lora_A", cfg.rank, n, true, nn::groups::kLoraAdapters);
        t.add(l + ".lora_B", m, cfg.rank, true, nn::groups::kLoraAdapters);
        if (a.allocated()) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(n));
            for (Eigen::Index i = 0; i < a.value.size(); ++i)
                a.value.data()[i] = static_cast<T>(uniform_real(rng, -bound, bound));
        }
        t.attributes()[l + ".lora_scaling"] = cfg.alpha / cfg.rank;
    }
}

/// Folds W += (alpha / r) B A into every adapted layer and removes the
/// adapters.
template <typename T>
void lora_merge_table(ParamTable<T>& t) {
    if (t.attributes().contains("lora.merged")) throw Error("lora_merge: adapters are already merged");
    std::vector<std::string> prefixes;
    for (const auto& [name, _] : t)
        if (name.ends_with(".lora_A")) prefixes.push_back(name.substr(0, name.size() - 7));
    if (prefixes.empty()) throw Error("lora_merge: no adapters to merge");
    for (const auto& l : prefixes) {
        auto& w = t.at(l + ".weight");
        w.value = nn::effective_weight(t, l);
        t.erase(l + ".lora_A");
        t.erase(l + ".lora_B");
        t.attributes().erase(l + ".lora_scaling");
    }
    t.attributes()["lora.merged"] = 1.0;
}

template <typename T>
std::int64_t bitfit_apply(ParamTable<T>& t) {
    freeze_all(t);
    std::int64_t n = 0;
    for (auto& [name, p] : t)
        if (name.ends_with(".bias")) {
            p.trainable = true;
            p.group = nn::groups::kBiases;
            ++n;
        }
    if (n == 0) throw Error("bitfit: model has no bias vectors");
    return n;
}

template <typename T>
void finetune_apply(ParamTable<T>& t) {
    for (auto& [_, p] : t) {
        p.trainable = true;
        p.group = nn::groups::kBackbone;
    }
}

// ---------------------------------------------------------------------------
// Accounting

struct GroupCount {
    std::string name;
    std::int64_t count = 0;
    bool trainable = false;
};

struct TrainableReport {
    std::int64_t total = 0;
    std::int64_t trainable = 0;
    double fraction = 0.0;
    std::vector<GroupCount> groups;

    std::int64_t group_count(std::string_view name) const {
        for (const auto& g : groups)
            if (g.name == name) return g.count;
        return 0;
    }
};

/// Sums parameter counts per group across `tables`. A group must be
/// uniformly trainable or uniformly frozen.
template <typename T>
TrainableReport trainable_report(std::initializer_list<const ParamTable<T>*> tables) {
    std::map<std::string, GroupCount> g;
    TrainableReport r;
    for (const auto* t : tables) {
        for (const auto& [name, p] : *t) {
            auto [it, fresh] = g.try_emplace(p.group, GroupCount{p.group, 0, p.trainable});
            if (!fresh && it->second.trainable != p.trainable)
                throw Error(fmt::format("group '{}' mixes trainable and frozen parameters ('{}')", p.group, name));
            it->second.count += p.numel();
            r.total += p.numel();
            if (p.trainable) r.trainable += p.numel();
        }
    }
    for (auto& [_, v] : g) r.groups.push_back(v);
    r.fraction = r.total > 0 ? static_cast<double>(r.trainable) / static_cast<double>(r.total) : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Model = encoder + head

template <typename T>
struct SegModel {
    std::unique_ptr<FeatureExtractor<T>> encoder;
    SegHead<T> head;
    Resolution input;  // encoder input resolution

    SegModel() = default;
    SegModel(std::unique_ptr<FeatureExtractor<T>> enc, SegHead<T> h, Resolution in)
        : encoder(std::move(enc)), head(std::move(h)), input(in) {}
    SegModel(const SegModel& o) : encoder(o.encoder ? o.encoder->clone() : nullptr), head(o.head), input(o.input) {}
    SegModel& operator=(const SegModel& o) {
        if (this != &o) {
            encoder = o.encoder ? o.encoder->clone() : nullptr;
            head = o.head;
            input = o.input;
        }
        return *this;
    }
    SegModel(SegModel&&) noexcept = default;
    SegModel& operator=(SegModel&&) noexcept = default;

    int n_taps() const { return head.n_taps(); }

    TrainableReport report() const { return trainable_report<T>({&encoder->params(), &head.params()}); }
};

template <typename T>
TrainableReport trainable_fraction(const SegModel<T>& model) {
    return model.report();
}

struct MethodConfig {
    LoraConfig lora;
    std::vector<std::string> svf_targets = default_svf_targets();
    std::uint64_t seed = 0;
};

template <typename T>
TrainableReport svf_inject(SegModel<T>& model, const std::vector<std::string>& targets = default_svf_targets()) {
    auto& t = model.encoder->params();
    svf_apply(t, select_layers(model.encoder->linear_layers(), targets));
    return model.report();
}

template <typename T>
TrainableReport lora_inject(SegModel<T>& model, const LoraConfig& cfg = {}, std::uint64_t seed = 0) {
    lora_apply(model.encoder->params(), select_layers(model.encoder->linear_layers(), cfg.targets), cfg, seed);
    return model.report();
}

template <typename T>
void lora_merge(SegModel<T>& model) {
    lora_merge_table(model.encoder->params());
}

template <typename T>
TrainableReport bitfit_mark(SegModel<T>& model) {
    bitfit_apply(model.encoder->params());
    return model.report();
}

/// Applies the stage-2 surgery for `method`. Probing methods leave the
/// encoder frozen.
template <typename T>
TrainableReport apply_method(SegModel<T>& model, Method method, const MethodConfig& cfg) {
    auto& t = model.encoder->params();
    switch (method) {
        case Method::Linear:
        case Method::Multilayer: freeze_all(t); break;
        case Method::Svf: svf_apply(t, select_layers(model.encoder->linear_layers(), cfg.svf_targets)); break;
        case Method::Lora:
            lora_apply(t, select_layers(model.encoder->linear_layers(), cfg.lora.targets), cfg.lora, cfg.seed);
            break;
        case Method::Bitfit: bitfit_apply(t); break;
        case Method::Finetune: finetune_apply(t); break;
    }
    return model.report();
}

}  // namespace fss
