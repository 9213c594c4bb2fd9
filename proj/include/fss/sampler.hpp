#pragma once

// k-shot task construction: per-class presence lists and the restartable
// support-set draw.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fss/common.hpp"
#include "fss/datamodel.hpp"
#include "fss/datasets.hpp"

namespace fss {

/// For every sampled-over class, the training images that contain it.
struct PresenceIndex {
    std::map<ClassId, std::vector<std::string>> lists;
    std::string dataset_digest;
    int min_pixels = 1;
};

struct SamplerConfig {
    int k = 1;
    std::uint64_t seed = 0;
    std::vector<ClassId> class_order;  // empty: ascending class id
    int max_restarts = 1000;
};

/// Scans `ids` (default: the train split) and builds the presence lists.
inline PresenceIndex build_index(const Dataset& ds, int min_pixels = 1,
                                 std::optional<std::vector<std::string>> ids = std::nullopt) {
    if (min_pixels < 1) throw Error("build_index: min_pixels must be positive");
    const auto scan = ids ? *ids : ds.ids_in(kTrainSplit);
    PresenceIndex index;
    index.min_pixels = min_pixels;
    index.dataset_digest = ds.digest();
    for (ClassId c : ds.catalog().sampled_classes()) index.lists[c];
    for (const auto& id : scan) {
        const SegSample s = ds.load(id);
        for (ClassId c : class_presence(s.mask, min_pixels, ds.catalog().ignore_id())) {
            auto it = index.lists.find(c);
            if (it != index.lists.end()) it->second.push_back(id);
        }
    }
    for (auto& [c, list] : index.lists) {
        std::sort(list.begin(), list.end());
        if (list.empty())
            throw UnsatisfiableClass(c, fmt::format("class {} is unsatisfiable: no training image contains it", c));
    }
    return index;
}

inline std::vector<ClassId> resolve_class_order(const PresenceIndex& index, const SamplerConfig& cfg) {
    std::vector<ClassId> keys;
    for (const auto& [c, _] : index.lists) keys.push_back(c);
    if (cfg.class_order.empty()) return keys;
    auto sorted = cfg.class_order;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != keys) throw Error("sampler: class_order must be a permutation of the sampled-over classes");
    return cfg.class_order;
}

/// S := {}; for each class in order draw k images uniformly without
/// replacement from D_i \ S. If some D_i \ S has fewer than k images,
/// start over with fresh draws.
inline std::vector<std::string> sample_support(const PresenceIndex& index, const SamplerConfig& cfg) {
    if (cfg.k < 1) throw Error("sampler: k must be >= 1");
    if (cfg.max_restarts < 1) throw Error("sampler: max_restarts must be >= 1");
    const auto order = resolve_class_order(index, cfg);
    const auto k = static_cast<std::size_t>(cfg.k);
    for (ClassId c : order)
        if (index.lists.at(c).size() < k)
            throw InfeasibleTask(fmt::format("infeasible task: class {} has {} images, k = {}", c,
                                             index.lists.at(c).size(), cfg.k));

    Rng rng(cfg.seed);
    for (int attempt = 0; attempt <= cfg.max_restarts; ++attempt) {
        std::vector<std::string> support;
        std::set<std::string> taken;
        bool exhausted = false;
        for (ClassId c : order) {
            std::vector<std::string> remaining;
            for (const auto& id : index.lists.at(c))
                if (!taken.contains(id)) remaining.push_back(id);
            if (remaining.size() < k) {
                exhausted = true;
                break;
            }
            for (auto& id : draw_without_replacement(rng, std::move(remaining), k)) {
                taken.insert(id);
                support.push_back(std::move(id));
            }
        }
        if (!exhausted) return support;
    }
    throw InfeasibleTask(fmt::format("infeasible task: no support set found after {} restarts", cfg.max_restarts));
}

// ---------------------------------------------------------------------------
// Task manifests

struct TaskManifest {
    std::string dataset_name;
    std::string dataset_digest;
    std::uint64_t seed = 0;
    int k = 1;
    std::vector<ClassId> class_order;
    int min_pixels = 1;
    std::string prng{kPrngId};
    std::vector<std::string> support;
    std::string query_split{kValSplit};

    nlohmann::json to_json() const {
        return {{"dataset", dataset_name}, {"dataset_digest", dataset_digest}, {"seed", seed},
                {"k", k},                  {"class_order", class_order},       {"min_pixels", min_pixels},
                {"prng", prng},            {"support", support},               {"query_split", query_split}};
    }

    static TaskManifest from_json(const nlohmann::json& j) {
        TaskManifest m;
        m.dataset_name = j.value("dataset", std::string());
        m.dataset_digest = j.at("dataset_digest").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.k = j.at("k").get<int>();
        m.class_order = j.at("class_order").get<std::vector<ClassId>>();
        m.min_pixels = j.at("min_pixels").get<int>();
        m.prng = j.at("prng").get<std::string>();
        m.support = j.at("support").get<std::vector<std::string>>();
        m.query_split = j.at("query_split").get<std::string>();
        return m;
    }

    /// Canonical serialization (sorted keys, two-space indent).
    std::string dump() const { return to_json().dump(2) + "\n"; }
    std::string digest() const { return sha256_hex(dump()); }
};

struct TaskRequest {
    int k = 1;
    std::uint64_t seed = 0;
    int min_pixels = 1;
    std::vector<ClassId> class_order;
    int max_restarts = 1000;
    std::string query_split{kValSplit};
};

/// Samples against a prebuilt index (its min_pixels must match the request).
inline TaskManifest sample_manifest(const Dataset& ds, const PresenceIndex& index, const TaskRequest& req) {
    if (ds.ids_in(req.query_split).empty())
        throw Error(fmt::format("dataset '{}' has no '{}' split to query", ds.name(), req.query_split));
    if (index.min_pixels != req.min_pixels) throw Error("sample_manifest: index built with a different min_pixels");
    SamplerConfig cfg{req.k, req.seed, req.class_order, req.max_restarts};
    TaskManifest m;
    m.dataset_name = ds.name();
    m.dataset_digest = index.dataset_digest;
    m.seed = req.seed;
    m.k = req.k;
    m.class_order = resolve_class_order(index, cfg);
    m.min_pixels = req.min_pixels;
    m.support = sample_support(index, cfg);
    m.query_split = req.query_split;
    return m;
}

inline TaskManifest sample_manifest(const Dataset& ds, const TaskRequest& req) {
    return sample_manifest(ds, build_index(ds, req.min_pixels), req);
}

/// Materializes a manifest: support from the manifest ids, query = the full
/// designated split.
inline FewShotTask load_task(const Dataset& ds, const TaskManifest& m) {
    if (m.dataset_digest != ds.digest())
        throw Error(fmt::format("manifest digest {} does not match dataset '{}'", m.dataset_digest, ds.name()));
    const auto query_ids = ds.ids_in(m.query_split);
    const std::set<std::string> qset(query_ids.begin(), query_ids.end());
    FewShotTask task;
    task.k = m.k;
    task.seed = m.seed;
    task.catalog = ds.catalog();
    for (const auto& id : m.support) {
        if (qset.contains(id)) throw Error(fmt::format("support image '{}' is also in the query split", id));
        task.support.push_back(ds.load(id));
    }
    for (const auto& id : query_ids) task.query.push_back(ds.load(id));
    return task;
}

inline FewShotTask make_task(const Dataset& ds, const TaskRequest& req) {
    return load_task(ds, sample_manifest(ds, req));
}

}  // namespace fss
