#pragma once

// Named parameter tables with trainable flags and accounting groups.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "fss/common.hpp"

namespace fss::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Accounting groups. Every parameter belongs to exactly one.
namespace groups {
inline constexpr const char* kBackbone = "backbone";
inline constexpr const char* kHead = "head";
inline constexpr const char* kSvfFactors = "svf_factors";
inline constexpr const char* kSvfSingularValues = "svf_singular_values";
inline constexpr const char* kLoraAdapters = "lora_adapters";
inline constexpr const char* kBiases = "biases";
}  // namespace groups

template <typename T>
struct Param {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Mat<T> value;  // empty when the table is shape-only
    Mat<T> grad;
    bool trainable = false;
    std::string group = groups::kBackbone;

    std::int64_t numel() const noexcept { return static_cast<std::int64_t>(rows) * cols; }
    bool allocated() const noexcept { return value.size() == rows * cols && rows * cols > 0; }
};

/// Ordered (by name) map of parameters. Tables built with
/// `allocate = false` carry shapes only; they support surgery and
/// accounting but not forward passes.
template <typename T>
class ParamTable {
public:
    explicit ParamTable(bool allocate = true) : allocate_(allocate) {}

    bool allocates() const noexcept { return allocate_; }

    Param<T>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols, bool trainable = false,
                  std::string group = groups::kBackbone) {
        if (params_.contains(name)) throw Error(fmt::format("parameter '{}' already exists", name));
        Param<T> p;
        p.rows = rows;
        p.cols = cols;
        p.trainable = trainable;
        p.group = std::move(group);
        if (allocate_) {
            p.value = Mat<T>::Zero(rows, cols);
            p.grad = Mat<T>::Zero(rows, cols);
        }
        return params_.emplace(name, std::move(p)).first->second;
    }

    bool contains(const std::string& name) const { return params_.contains(name); }

    Param<T>& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw Error(fmt::format("unknown parameter '{}'", name));
        return it->second;
    }
    const Param<T>& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw Error(fmt::format("unknown parameter '{}'", name));
        return it->second;
    }

    const Mat<T>& value(const std::string& name) const { return at(name).value; }

    void erase(const std::string& name) {
        if (params_.erase(name) == 0) throw Error(fmt::format("unknown parameter '{}'", name));
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    std::size_t size() const noexcept { return params_.size(); }

    void zero_grad() {
        for (auto& [_, p] : params_)
            if (p.grad.size() > 0) p.grad.setZero();
    }

    void set_all_trainable(bool trainable) {
        for (auto& [_, p] : params_) p.trainable = trainable;
    }

    std::int64_t total_count() const {
        std::int64_t n = 0;
        for (const auto& [_, p] : params_) n += p.numel();
        return n;
    }

    std::int64_t trainable_count() const {
        std::int64_t n = 0;
        for (const auto& [_, p] : params_)
            if (p.trainable) n += p.numel();
        return n;
    }

    /// Free-form numeric attributes (adapter scalings, state flags).
    std::map<std::string, double>& attributes() noexcept { return attributes_; }
    const std::map<std::string, double>& attributes() const noexcept { return attributes_; }

    /// SHA-256 of one parameter's shape and bytes.
    std::string hash(const std::string& name) const {
        const auto& p = at(name);
        Sha256 h;
        h.update_pod(p.rows).update_pod(p.cols);
        h.update(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(T));
        return h.hex();
    }

    std::map<std::string, std::string> hashes() const {
        std::map<std::string, std::string> out;
        for (const auto& [name, _] : params_) out[name] = hash(name);
        return out;
    }

private:
    bool allocate_ = true;
    std::map<std::string, Param<T>> params_;
    std::map<std::string, double> attributes_;
};

}  // namespace fss::nn
