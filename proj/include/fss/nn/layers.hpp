#pragma once

// Forward/backward kernels for the encoder and heads. Activations are
// N x D row-major token matrices. Backward functions accumulate into the
// grads of trainable parameters only.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "fss/nn/params.hpp"

namespace fss::nn {

// ---------------------------------------------------------------------------
// Linear layers
//
// A linear layer `prefix` is stored in one of three forms:
//   plain  prefix.weight (out x in)
//   SVF    prefix.svf_u (out x r), prefix.svf_s (1 x r), prefix.svf_vt (r x in)
//   LoRA   prefix.weight + prefix.lora_A (r x in) + prefix.lora_B (out x r),
//          scaled by the attribute prefix.lora_scaling
// plus an optional prefix.bias (1 x out).

enum class LinearForm { Plain, Svf, Lora };

template <typename T>
LinearForm linear_form(const ParamTable<T>& t, const std::string& prefix) {
    if (t.contains(prefix + ".svf_s")) return LinearForm::Svf;
    if (t.contains(prefix + ".lora_A")) return LinearForm::Lora;
    if (t.contains(prefix + ".weight")) return LinearForm::Plain;
    throw Error(fmt::format("no linear layer '{}'", prefix));
}

template <typename T>
T lora_scaling(const ParamTable<T>& t, const std::string& prefix) {
    return static_cast<T>(t.attributes().at(prefix + ".lora_scaling"));
}

/// U diag(s) Vt.
template <typename T>
Mat<T> svf_weight(const Mat<T>& u, const Mat<T>& s, const Mat<T>& vt) {
    return u * s.row(0).asDiagonal() * vt;
}

/// The matrix the layer applies, with any adapter folded in.
template <typename T>
Mat<T> effective_weight(const ParamTable<T>& t, const std::string& prefix) {
    switch (linear_form(t, prefix)) {
        case LinearForm::Plain: return t.value(prefix + ".weight");
        case LinearForm::Svf:
            return svf_weight<T>(t.value(prefix + ".svf_u"), t.value(prefix + ".svf_s"), t.value(prefix + ".svf_vt"));
        case LinearForm::Lora:
            return t.value(prefix + ".weight") +
                   lora_scaling(t, prefix) * (t.value(prefix + ".lora_B") * t.value(prefix + ".lora_A"));
    }
    return {};
}

template <typename T>
Mat<T> linear_forward(const ParamTable<T>& t, const std::string& prefix, const Mat<T>& x) {
    Mat<T> y;
    switch (linear_form(t, prefix)) {
        case LinearForm::Plain: y.noalias() = x * t.value(prefix + ".weight").transpose(); break;
        case LinearForm::Svf: y.noalias() = x * effective_weight(t, prefix).transpose(); break;
        case LinearForm::Lora: {
            y.noalias() = x * t.value(prefix + ".weight").transpose();
            const Mat<T> xa = x * t.value(prefix + ".lora_A").transpose();
            y.noalias() += lora_scaling(t, prefix) * (xa * t.value(prefix + ".lora_B").transpose());
            break;
        }
    }
    if (t.contains(prefix + ".bias")) y.rowwise() += t.value(prefix + ".bias").row(0);
    return y;
}

/// Returns dL/dx (empty when `need_dx` is false).
template <typename T>
Mat<T> linear_backward(ParamTable<T>& t, const std::string& prefix, const Mat<T>& x, const Mat<T>& dy,
                       bool need_dx = true) {
    const std::string bias = prefix + ".bias";
    if (t.contains(bias)) {
        auto& b = t.at(bias);
        if (b.trainable) b.grad.row(0) += dy.colwise().sum();
    }
    Mat<T> dx;
    switch (linear_form(t, prefix)) {
        case LinearForm::Plain: {
            auto& w = t.at(prefix + ".weight");
            if (w.trainable) w.grad.noalias() += dy.transpose() * x;
            if (need_dx) dx.noalias() = dy * w.value;
            break;
        }
        case LinearForm::Svf: {
            const auto& u = t.at(prefix + ".svf_u");
            const auto& vt = t.at(prefix + ".svf_vt");
            auto& s = t.at(prefix + ".svf_s");
            if (u.trainable || vt.trainable) throw Error(fmt::format("'{}': SVF factors must stay frozen", prefix));
            if (s.trainable) {
                // d/ds_i = sum_n (dy U)_{n,i} (x Vt^T)_{n,i}
                const Mat<T> du = dy * u.value;
                const Mat<T> xv = x * vt.value.transpose();
                s.grad.row(0) += du.cwiseProduct(xv).colwise().sum();
            }
            if (need_dx) dx.noalias() = dy * svf_weight<T>(u.value, s.value, vt.value);
            break;
        }
        case LinearForm::Lora: {
            auto& w = t.at(prefix + ".weight");
            auto& a = t.at(prefix + ".lora_A");
            auto& b = t.at(prefix + ".lora_B");
            const T c = lora_scaling(t, prefix);
            const Mat<T> dyb = dy * b.value;  // N x r
            if (w.trainable) w.grad.noalias() += dy.transpose() * x;
            if (b.trainable) b.grad.noalias() += c * (dy.transpose() * (x * a.value.transpose()));
            if (a.trainable) a.grad.noalias() += c * (dyb.transpose() * x);
            if (need_dx) {
                dx.noalias() = dy * w.value;
                dx.noalias() += c * (dyb * a.value);
            }
            break;
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// LayerNorm over the last dimension.

template <typename T>
struct LayerNormCache {
    Mat<T> xhat;
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <typename T>
Mat<T> layer_norm_forward(const ParamTable<T>& t, const std::string& prefix, const Mat<T>& x,
                          LayerNormCache<T>* cache, T eps = T(1e-6)) {
    const auto n = x.rows();
    const auto d = x.cols();
    LayerNormCache<T> c;
    c.xhat.resize(n, d);
    c.rstd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const T mu = x.row(i).mean();
        const T var = (x.row(i).array() - mu).square().mean();
        c.rstd(i) = T(1) / std::sqrt(var + eps);
        c.xhat.row(i) = (x.row(i).array() - mu) * c.rstd(i);
    }
    Mat<T> y = c.xhat.array().rowwise() * t.value(prefix + ".weight").row(0).array();
    y.rowwise() += t.value(prefix + ".bias").row(0);
    if (cache) *cache = std::move(c);
    return y;
}

template <typename T>
Mat<T> layer_norm_backward(ParamTable<T>& t, const std::string& prefix, const LayerNormCache<T>& c,
                           const Mat<T>& dy) {
    auto& g = t.at(prefix + ".weight");
    auto& b = t.at(prefix + ".bias");
    if (g.trainable) g.grad.row(0) += dy.cwiseProduct(c.xhat).colwise().sum();
    if (b.trainable) b.grad.row(0) += dy.colwise().sum();
    const Mat<T> dxhat = dy.array().rowwise() * g.value.row(0).array();
    const T inv_d = T(1) / static_cast<T>(dy.cols());
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const T m1 = dxhat.row(i).sum() * inv_d;
        const T m2 = dxhat.row(i).dot(c.xhat.row(i)) * inv_d;
        dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// GELU (erf form).

template <typename T>
Mat<T> gelu(const Mat<T>& x) {
    return x.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::sqrt(T(2)))); });
}

template <typename T>
Mat<T> gelu_backward(const Mat<T>& x, const Mat<T>& dy) {
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    const Mat<T> dgelu = x.unaryExpr([inv_sqrt_2pi](T v) {
        return T(0.5) * (T(1) + std::erf(v / std::sqrt(T(2)))) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
    });
    return dy.cwiseProduct(dgelu);
}

// ---------------------------------------------------------------------------
// Multi-head self-attention with separate q/k/v projections.

template <typename T>
struct AttentionCache {
    Mat<T> x, q, k, v, o;
    std::vector<Mat<T>> probs;  // per head, N x N
};

template <typename T>
Mat<T> attention_forward(const ParamTable<T>& t, const std::string& prefix, const Mat<T>& x, int heads,
                         AttentionCache<T>* cache) {
    const auto n = x.rows();
    const auto d = x.cols();
    if (d % heads != 0) throw Error(fmt::format("attention: dim {} not divisible by {} heads", d, heads));
    const auto hd = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    Mat<T> q = linear_forward(t, prefix + ".q", x);
    Mat<T> k = linear_forward(t, prefix + ".k", x);
    Mat<T> v = linear_forward(t, prefix + ".v", x);
    Mat<T> o(n, d);
    std::vector<Mat<T>> probs;
    for (int h = 0; h < heads; ++h) {
        const auto cols = Eigen::seqN(h * hd, hd);
        Mat<T> s = scale * (q(Eigen::all, cols) * k(Eigen::all, cols).transpose());
        for (Eigen::Index i = 0; i < n; ++i) {
            const T mx = s.row(i).maxCoeff();
            s.row(i) = (s.row(i).array() - mx).exp();
            s.row(i) /= s.row(i).sum();
        }
        o(Eigen::all, cols) = s * v(Eigen::all, cols);
        if (cache) probs.push_back(std::move(s));
    }
    Mat<T> y = linear_forward(t, prefix + ".proj", o);
    if (cache) *cache = {x, std::move(q), std::move(k), std::move(v), std::move(o), std::move(probs)};
    return y;
}

template <typename T>
Mat<T> attention_backward(ParamTable<T>& t, const std::string& prefix, const AttentionCache<T>& c, int heads,
                          const Mat<T>& dy) {
    const auto d = c.x.cols();
    const auto hd = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    const Mat<T> d_o = linear_backward(t, prefix + ".proj", c.o, dy);
    Mat<T> dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
    for (int h = 0; h < heads; ++h) {
        const auto cols = Eigen::seqN(h * hd, hd);
        const Mat<T>& p = c.probs[static_cast<std::size_t>(h)];
        const Mat<T> doh = d_o(Eigen::all, cols);
        dv(Eigen::all, cols) = p.transpose() * doh;
        const Mat<T> dp = doh * c.v(Eigen::all, cols).transpose();
        Mat<T> ds = p.cwiseProduct(dp);
        const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = ds.rowwise().sum();
        ds -= p.cwiseProduct(rs.replicate(1, p.cols()));
        ds *= scale;
        dq(Eigen::all, cols) = ds * c.k(Eigen::all, cols);
        dk(Eigen::all, cols) = ds.transpose() * c.q(Eigen::all, cols);
    }
    Mat<T> dx = linear_backward(t, prefix + ".q", c.x, dq);
    dx += linear_backward(t, prefix + ".k", c.x, dk);
    dx += linear_backward(t, prefix + ".v", c.x, dv);
    return dx;
}

}  // namespace fss::nn
