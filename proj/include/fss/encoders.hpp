#pragma once

// Feature extractors: the pluggable interface, multi-block taps,
// positional-embedding interpolation and the built-in tiny ViT.

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "fss/datamodel.hpp"
#include "fss/nn/layers.hpp"
#include "fss/nn/params.hpp"
#include "fss/resample.hpp"

namespace fss {

using nn::Mat;
using nn::ParamTable;

/// Gh*Gw x D patch features, rows in raster order.
template <typename T>
struct FeatureMap {
    int grid_h = 0;
    int grid_w = 0;
    Mat<T> data;
};

/// Outputs of consecutive blocks, shallowest first.
template <typename T>
using FeatureStack = std::vector<FeatureMap<T>>;

struct Resolution {
    int height = 0;
    int width = 0;
    friend bool operator==(const Resolution&, const Resolution&) = default;
};

// ---------------------------------------------------------------------------
// Positional embeddings

template <typename T>
struct PosEmbedGrid {
    int grid_h = 0;
    int grid_w = 0;
    Mat<T> data;                          // grid_h*grid_w x D
    std::optional<nn::RowVec<T>> class_token;  // passed through untouched
};

namespace detail {

// Per-output coefficients of the delta-form bicubic along one axis.
inline std::vector<std::vector<std::pair<int, double>>> cubic_coefficients(int in, int out) {
    std::vector<std::vector<std::pair<int, double>>> rows;
    for (const auto& tap : cubic_taps(in, out)) {
        std::vector<std::pair<int, double>> r;
        double others = 0.0;
        for (int j = 0; j < 4; ++j) {
            if (j == tap.anchor) continue;
            r.emplace_back(tap.idx[j], tap.w[j]);
            others += tap.w[j];
        }
        r.emplace_back(tap.idx[tap.anchor], 1.0 - others);
        rows.push_back(std::move(r));
    }
    return rows;
}

// Resamples axis 0 of a (rows x inner) block stack: src is [in][inner],
// dst is [out][inner]. Delta form keeps constant inputs exactly constant.
template <typename T>
void cubic_axis(const T* src, T* dst, int in, int out, Eigen::Index inner, Eigen::Index stride_in_outer,
                Eigen::Index stride_out_outer, Eigen::Index outer) {
    const auto taps = cubic_taps(in, out);
    for (Eigen::Index o = 0; o < outer; ++o)
        for (int i = 0; i < out; ++i) {
            const auto& tap = taps[static_cast<std::size_t>(i)];
            const T* anchor = src + o * stride_in_outer + static_cast<Eigen::Index>(tap.idx[tap.anchor]) * inner;
            T* d = dst + o * stride_out_outer + static_cast<Eigen::Index>(i) * inner;
            for (Eigen::Index c = 0; c < inner; ++c) {
                T acc = anchor[c];
                for (int j = 0; j < 4; ++j) {
                    if (j == tap.anchor) continue;
                    const T* s = src + o * stride_in_outer + static_cast<Eigen::Index>(tap.idx[j]) * inner;
                    acc += static_cast<T>(tap.w[j]) * (s[c] - anchor[c]);
                }
                d[c] = acc;
            }
        }
}

}  // namespace detail

/// Bicubic resize of the patch grid to new_h x new_w, channels independent.
template <typename T>
PosEmbedGrid<T> interpolate_pos_embed(const PosEmbedGrid<T>& grid, int new_h, int new_w) {
    if (new_h < 1 || new_w < 1) throw ShapeError("interpolate_pos_embed: target grid must be at least 1x1");
    if (grid.data.rows() != static_cast<Eigen::Index>(grid.grid_h) * grid.grid_w)
        throw ShapeError("interpolate_pos_embed: data does not match grid dims");
    const Eigen::Index d = grid.data.cols();
    PosEmbedGrid<T> out;
    out.grid_h = new_h;
    out.grid_w = new_w;
    out.class_token = grid.class_token;
    if (new_h == grid.grid_h && new_w == grid.grid_w) {
        out.data = grid.data;
        return out;
    }
    // Along H: treat each row of the grid (gw*d values) as one sample.
    Mat<T> tmp(static_cast<Eigen::Index>(new_h) * grid.grid_w, d);
    detail::cubic_axis<T>(grid.data.data(), tmp.data(), grid.grid_h, new_h, grid.grid_w * d, 0, 0, 1);
    // Along W: for each output row, samples of d values.
    out.data.resize(static_cast<Eigen::Index>(new_h) * new_w, d);
    detail::cubic_axis<T>(tmp.data(), out.data.data(), grid.grid_w, new_w, d, grid.grid_w * d, new_w * d, new_h);
    return out;
}

/// Adjoint of interpolate_pos_embed for a gradient on the resized grid.
template <typename T>
Mat<T> interpolate_pos_embed_backward(int old_h, int old_w, int new_h, int new_w, const Mat<T>& dout) {
    const Eigen::Index d = dout.cols();
    if (old_h == new_h && old_w == new_w) return dout;
    const auto ch = detail::cubic_coefficients(old_h, new_h);
    const auto cw = detail::cubic_coefficients(old_w, new_w);
    Mat<T> dtmp = Mat<T>::Zero(static_cast<Eigen::Index>(new_h) * old_w, d);
    for (int y = 0; y < new_h; ++y)
        for (int x = 0; x < new_w; ++x)
            for (const auto& [ix, w] : cw[static_cast<std::size_t>(x)])
                dtmp.row(static_cast<Eigen::Index>(y) * old_w + ix) +=
                    static_cast<T>(w) * dout.row(static_cast<Eigen::Index>(y) * new_w + x);
    Mat<T> dgrid = Mat<T>::Zero(static_cast<Eigen::Index>(old_h) * old_w, d);
    for (int y = 0; y < new_h; ++y)
        for (const auto& [iy, w] : ch[static_cast<std::size_t>(y)])
            for (int x = 0; x < old_w; ++x)
                dgrid.row(static_cast<Eigen::Index>(iy) * old_w + x) +=
                    static_cast<T>(w) * dtmp.row(static_cast<Eigen::Index>(y) * old_w + x);
    return dgrid;
}

// ---------------------------------------------------------------------------
// Extractor interface

/// Opaque per-image activations kept for the backward pass.
struct EncoderTrace {
    virtual ~EncoderTrace() = default;
};

template <typename T>
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;

    virtual std::string name() const = 0;
    virtual int patch_size() const = 0;
    virtual int embed_dim() const = 0;
    virtual int n_blocks() const = 0;
    virtual Resolution native_resolution() const = 0;

    virtual ParamTable<T>& params() = 0;
    virtual const ParamTable<T>& params() const = 0;

    /// Prefixes of every linear layer, in forward order.
    virtual std::vector<std::string> linear_layers() const = 0;

    /// Outputs of the last `n_taps` blocks. Fills `trace` when non-null.
    virtual FeatureStack<T> forward(const Image& image, int n_taps, std::unique_ptr<EncoderTrace>* trace) const = 0;

    /// Accumulates parameter gradients given dL/d(tap output) for each tap.
    virtual void backward(const EncoderTrace& trace, const std::vector<Mat<T>>& tap_grads) = 0;

    virtual std::unique_ptr<FeatureExtractor<T>> clone() const = 0;

    /// Final-block features on the patch grid.
    FeatureMap<T> extract(const Image& image) const { return forward(image, 1, nullptr).back(); }

    /// Blocks n_blocks - n_taps + 1 .. n_blocks.
    FeatureStack<T> extract_taps(const Image& image, int n_taps = 4) const { return forward(image, n_taps, nullptr); }

    bool any_trainable() const {
        for (const auto& [_, p] : params())
            if (p.trainable) return true;
        return false;
    }

protected:
    void check_input(const Image& image) const {
        const int p = patch_size();
        if (image.height() % p != 0 || image.width() % p != 0)
            throw ShapeError(fmt::format("{}: input {}x{} is not a multiple of the patch size {}", name(),
                                         image.height(), image.width(), p));
    }
};

// ---------------------------------------------------------------------------
// Tiny ViT

struct TinyEncoderConfig {
    int embed_dim = 32;
    int n_blocks = 2;
    int patch_size = 8;
    int n_heads = 4;
    int mlp_ratio = 4;
    int in_channels = 3;
    Resolution native_resolution{64, 64};
    std::uint64_t seed = 0;
};

/// Patch projection + learned positional grid + pre-norm transformer blocks
/// (multi-head self-attention, 2-layer GELU MLP).
template <typename T>
class TinyEncoder final : public FeatureExtractor<T> {
public:
    explicit TinyEncoder(const TinyEncoderConfig& cfg, bool allocate = true) : cfg_(cfg), params_(allocate) {
        if (cfg.embed_dim % cfg.n_heads != 0) throw Error("tiny encoder: embed_dim must be divisible by n_heads");
        if (cfg.native_resolution.height % cfg.patch_size != 0 || cfg.native_resolution.width % cfg.patch_size != 0)
            throw Error("tiny encoder: native resolution must be a multiple of the patch size");
        build();
    }

    const TinyEncoderConfig& config() const noexcept { return cfg_; }

    std::string name() const override { return "tiny_vit"; }
    int patch_size() const override { return cfg_.patch_size; }
    int embed_dim() const override { return cfg_.embed_dim; }
    int n_blocks() const override { return cfg_.n_blocks; }
    Resolution native_resolution() const override { return cfg_.native_resolution; }
    ParamTable<T>& params() override { return params_; }
    const ParamTable<T>& params() const override { return params_; }

    int native_grid_h() const { return cfg_.native_resolution.height / cfg_.patch_size; }
    int native_grid_w() const { return cfg_.native_resolution.width / cfg_.patch_size; }

    std::vector<std::string> linear_layers() const override {
        std::vector<std::string> out = {"patch_embed"};
        for (int b = 0; b < cfg_.n_blocks; ++b)
            for (const char* l : {"attn.q", "attn.k", "attn.v", "attn.proj", "mlp.fc1", "mlp.fc2"})
                out.push_back(fmt::format("blocks.{}.{}", b, l));
        return out;
    }

    PosEmbedGrid<T> pos_embed() const { return {native_grid_h(), native_grid_w(), params_.value("pos_embed"), {}}; }

    FeatureStack<T> forward(const Image& image, int n_taps, std::unique_ptr<EncoderTrace>* trace) const override {
        this->check_input(image);
        if (image.channels() != cfg_.in_channels)
            throw ShapeError(fmt::format("tiny encoder: expected {} channels, got {}", cfg_.in_channels,
                                         image.channels()));
        if (n_taps < 1 || n_taps > cfg_.n_blocks)
            throw Error(fmt::format("requested {} taps from a {}-block encoder", n_taps, cfg_.n_blocks));
        auto tr = std::make_unique<Trace>();
        tr->grid_h = image.height() / cfg_.patch_size;
        tr->grid_w = image.width() / cfg_.patch_size;
        tr->patches = patchify(image);

        Mat<T> x = nn::linear_forward(params_, "patch_embed", tr->patches);
        if (tr->grid_h == native_grid_h() && tr->grid_w == native_grid_w()) {
            x += params_.value("pos_embed");
        } else {
            x += interpolate_pos_embed(pos_embed(), tr->grid_h, tr->grid_w).data;
        }

        FeatureStack<T> taps;
        const bool keep = trace != nullptr;
        tr->blocks.resize(static_cast<std::size_t>(cfg_.n_blocks));
        for (int b = 0; b < cfg_.n_blocks; ++b) {
            auto& bt = tr->blocks[static_cast<std::size_t>(b)];
            const std::string pre = fmt::format("blocks.{}", b);
            const Mat<T> h1 = nn::layer_norm_forward(params_, pre + ".norm1", x, keep ? &bt.ln1 : nullptr);
            x += nn::attention_forward(params_, pre + ".attn", h1, cfg_.n_heads, keep ? &bt.attn : nullptr);
            Mat<T> h2 = nn::layer_norm_forward(params_, pre + ".norm2", x, keep ? &bt.ln2 : nullptr);
            Mat<T> f = nn::linear_forward(params_, pre + ".mlp.fc1", h2);
            Mat<T> g = nn::gelu(f);
            x += nn::linear_forward(params_, pre + ".mlp.fc2", g);
            if (keep) {
                bt.h2 = std::move(h2);
                bt.f = std::move(f);
                bt.g = std::move(g);
            }
            if (b >= cfg_.n_blocks - n_taps) taps.push_back({tr->grid_h, tr->grid_w, x});
        }
        tr->n_taps = n_taps;
        if (keep) *trace = std::move(tr);
        return taps;
    }

    void backward(const EncoderTrace& base, const std::vector<Mat<T>>& tap_grads) override {
        const auto& tr = dynamic_cast<const Trace&>(base);
        if (static_cast<int>(tap_grads.size()) != tr.n_taps) throw Error("tiny encoder: tap gradient count mismatch");
        const Eigen::Index n = static_cast<Eigen::Index>(tr.grid_h) * tr.grid_w;
        Mat<T> dx = Mat<T>::Zero(n, cfg_.embed_dim);
        for (int b = cfg_.n_blocks - 1; b >= 0; --b) {
            const int tap = b - (cfg_.n_blocks - tr.n_taps);
            if (tap >= 0) dx += tap_grads[static_cast<std::size_t>(tap)];
            const auto& bt = tr.blocks[static_cast<std::size_t>(b)];
            const std::string pre = fmt::format("blocks.{}", b);
            // x_out = x_mid + fc2(gelu(fc1(norm2(x_mid))))
            Mat<T> dg = nn::linear_backward(params_, pre + ".mlp.fc2", bt.g, dx);
            Mat<T> df = nn::gelu_backward(bt.f, dg);
            Mat<T> dh2 = nn::linear_backward(params_, pre + ".mlp.fc1", bt.h2, df);
            dx += nn::layer_norm_backward(params_, pre + ".norm2", bt.ln2, dh2);
            // x_mid = x_in + attn(norm1(x_in))
            Mat<T> dh1 = nn::attention_backward(params_, pre + ".attn", bt.attn, cfg_.n_heads, dx);
            dx += nn::layer_norm_backward(params_, pre + ".norm1", bt.ln1, dh1);
        }
        auto& pos = params_.at("pos_embed");
        if (pos.trainable)
            pos.grad += interpolate_pos_embed_backward<T>(native_grid_h(), native_grid_w(), tr.grid_h, tr.grid_w, dx);
        nn::linear_backward(params_, "patch_embed", tr.patches, dx, false);
    }

    std::unique_ptr<FeatureExtractor<T>> clone() const override { return std::make_unique<TinyEncoder<T>>(*this); }

private:
    struct BlockTrace {
        nn::LayerNormCache<T> ln1, ln2;
        nn::AttentionCache<T> attn;
        Mat<T> h2, f, g;
    };
    struct Trace final : EncoderTrace {
        int grid_h = 0, grid_w = 0, n_taps = 1;
        Mat<T> patches;
        std::vector<BlockTrace> blocks;
    };

    Mat<T> patchify(const Image& img) const {
        const int p = cfg_.patch_size, c = img.channels();
        const int gh = img.height() / p, gw = img.width() / p;
        Mat<T> out(static_cast<Eigen::Index>(gh) * gw, static_cast<Eigen::Index>(p) * p * c);
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx) {
                const Eigen::Index row = static_cast<Eigen::Index>(gy) * gw + gx;
                Eigen::Index col = 0;
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        for (int ch = 0; ch < c; ++ch) out(row, col++) = static_cast<T>(img.at(gy * p + py, gx * p + px, ch));
            }
        return out;
    }

    void build() {
        Rng rng(mix_seed(cfg_.seed, 0x7E4Cu));
        const Eigen::Index d = cfg_.embed_dim;
        const Eigen::Index hidden = d * cfg_.mlp_ratio;
        const Eigen::Index patch_in = static_cast<Eigen::Index>(cfg_.patch_size) * cfg_.patch_size * cfg_.in_channels;
        auto normal = [&](const std::string& name, Eigen::Index r, Eigen::Index c, double std) {
            auto& p = params_.add(name, r, c);
            if (p.allocated())
                for (Eigen::Index i = 0; i < p.value.size(); ++i)
                    p.value.data()[i] = static_cast<T>(std * standard_normal(rng));
        };
        auto constant = [&](const std::string& name, Eigen::Index c, double v) {
            auto& p = params_.add(name, 1, c);
            if (p.allocated()) p.value.setConstant(static_cast<T>(v));
        };
        auto linear = [&](const std::string& pre, Eigen::Index out, Eigen::Index in) {
            normal(pre + ".weight", out, in, 1.0 / std::sqrt(static_cast<double>(in)));
            constant(pre + ".bias", out, 0.0);
        };
        linear("patch_embed", d, patch_in);
        normal("pos_embed", static_cast<Eigen::Index>(native_grid_h()) * native_grid_w(), d, 0.02);
        for (int b = 0; b < cfg_.n_blocks; ++b) {
            const std::string pre = fmt::format("blocks.{}", b);
            constant(pre + ".norm1.weight", d, 1.0);
            constant(pre + ".norm1.bias", d, 0.0);
            for (const char* l : {".attn.q", ".attn.k", ".attn.v", ".attn.proj"}) linear(pre + l, d, d);
            constant(pre + ".norm2.weight", d, 1.0);
            constant(pre + ".norm2.bias", d, 0.0);
            linear(pre + ".mlp.fc1", hidden, d);
            linear(pre + ".mlp.fc2", d, hidden);
        }
    }

    TinyEncoderConfig cfg_;
    ParamTable<T> params_;
};

}  // namespace fss
