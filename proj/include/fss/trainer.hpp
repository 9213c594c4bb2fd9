#pragma once

// Two-stage training: loss, schedule, optimizers, stage execution,
// evaluation and learning-rate grid search.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "fss/adaptation.hpp"
#include "fss/datasets.hpp"
#include "fss/metrics.hpp"

namespace fss {

// ---------------------------------------------------------------------------
// Schedule

inline double poly_lr(std::int64_t step, std::int64_t total_steps, double base_lr, double power = 0.9) {
    if (total_steps <= 0) throw Error("poly_lr: total_steps must be positive");
    if (step < 0 || step > total_steps)
        throw Error(fmt::format("poly_lr: step {} outside [0, {}]", step, total_steps));
    if (step == 0) return base_lr;
    return base_lr * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total_steps), power);
}

inline std::int64_t steps_per_epoch(std::size_t n_samples, int batch_size) {
    if (batch_size < 1) throw Error("batch size must be >= 1");
    if (n_samples == 0) throw InfeasibleTask("support set is empty");
    return static_cast<std::int64_t>((n_samples + static_cast<std::size_t>(batch_size) - 1) /
                                     static_cast<std::size_t>(batch_size));
}

// ---------------------------------------------------------------------------
// Loss

/// Maps class ids to head output channels (catalog order).
class ClassIndexer {
public:
    ClassIndexer() = default;
    explicit ClassIndexer(const ClassCatalog& c) : ignore_(c.ignore_id()), lut_(c.id_span(), -1) {
        for (std::size_t i = 0; i < c.size(); ++i) {
            lut_[static_cast<std::size_t>(c.classes()[i].id)] = static_cast<int>(i);
            ids_.push_back(c.classes()[i].id);
        }
    }
    /// -1 for ignored pixels.
    int channel(ClassId id) const {
        if (id == ignore_) return -1;
        const int r = (id >= 0 && static_cast<std::size_t>(id) < lut_.size()) ? lut_[static_cast<std::size_t>(id)] : -1;
        if (r < 0) throw Error(fmt::format("label {} not in catalog", id));
        return r;
    }
    ClassId id(int channel) const { return ids_[static_cast<std::size_t>(channel)]; }
    std::size_t size() const noexcept { return ids_.size(); }

private:
    ClassId ignore_ = kDefaultIgnoreId;
    std::vector<int> lut_;
    std::vector<ClassId> ids_;
};

struct LossSum {
    double sum = 0.0;
    std::int64_t count = 0;
};

/// Summed cross-entropy over non-ignore pixels. When `dlogits` is given it
/// receives d(sum)/d(logits).
template <typename T>
LossSum cross_entropy_sum(const Mat<T>& logits, const LabelMask& gt, const ClassIndexer& idx, Mat<T>* dlogits) {
    if (logits.rows() != static_cast<Eigen::Index>(gt.area()))
        throw ShapeError(fmt::format("seg_loss: {} logit rows vs {}x{} mask", logits.rows(), gt.height(), gt.width()));
    if (logits.cols() != static_cast<Eigen::Index>(idx.size()))
        throw ShapeError(fmt::format("seg_loss: {} logit channels vs {} classes", logits.cols(), idx.size()));
    LossSum out;
    if (dlogits) *dlogits = Mat<T>::Zero(logits.rows(), logits.cols());
    const auto& g = gt.data();
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int c = idx.channel(g[static_cast<std::size_t>(i)]);
        if (c < 0) continue;
        const T mx = logits.row(i).maxCoeff();
        const auto e = (logits.row(i).array() - mx).exp();
        const T z = e.sum();
        out.sum += static_cast<double>(std::log(z) + mx - logits(i, c));
        ++out.count;
        if (dlogits) {
            dlogits->row(i) = e / z;
            (*dlogits)(i, c) -= T(1);
        }
    }
    return out;
}

/// Pixel-wise cross-entropy averaged over non-ignore pixels.
template <typename T>
double seg_loss(const Mat<T>& logits, const LabelMask& gt, const ClassCatalog& catalog) {
    const LossSum s = cross_entropy_sum<T>(logits, gt, ClassIndexer(catalog), nullptr);
    if (s.count == 0) throw Error("seg_loss: every pixel is ignored");
    return s.sum / static_cast<double>(s.count);
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { AdamW, Sgd };

struct OptimizerSpec {
    OptimizerKind kind = OptimizerKind::AdamW;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double momentum = 0.9;  // SGD only

    static OptimizerSpec adamw() { return {}; }
    static OptimizerSpec sgd() { return {OptimizerKind::Sgd, 0.9, 0.999, 1e-8, 1e-4, 0.9}; }

    std::string name() const { return kind == OptimizerKind::AdamW ? "adamw" : "sgd"; }

    nlohmann::json to_json() const {
        return {{"name", name()},   {"beta1", beta1},         {"beta2", beta2},
                {"eps", eps},       {"weight_decay", weight_decay}, {"momentum", momentum}};
    }
    static OptimizerSpec from_json(const nlohmann::json& j) {
        OptimizerSpec o = j.value("name", std::string("adamw")) == "sgd" ? sgd() : adamw();
        const std::string n = j.value("name", std::string("adamw"));
        if (n != "adamw" && n != "sgd") throw Error(fmt::format("unknown optimizer '{}'", n));
        o.beta1 = j.value("beta1", o.beta1);
        o.beta2 = j.value("beta2", o.beta2);
        o.eps = j.value("eps", o.eps);
        o.weight_decay = j.value("weight_decay", o.weight_decay);
        o.momentum = j.value("momentum", o.momentum);
        return o;
    }
};

/// Steps every trainable parameter of the given tables; others are never
/// written.
template <typename T>
class Optimizer {
public:
    explicit Optimizer(OptimizerSpec spec) : spec_(spec) {}

    void step(std::initializer_list<ParamTable<T>*> tables, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
        for (auto* table : tables)
            for (auto& [name, p] : *table) {
                if (!p.trainable) continue;
                auto& st = state_[name];
                if (st.m.size() == 0) {
                    st.m = Mat<T>::Zero(p.rows, p.cols);
                    if (spec_.kind == OptimizerKind::AdamW) st.v = Mat<T>::Zero(p.rows, p.cols);
                }
                const T l = static_cast<T>(lr);
                if (spec_.kind == OptimizerKind::AdamW) {
                    const T b1 = static_cast<T>(spec_.beta1), b2 = static_cast<T>(spec_.beta2);
                    st.m = b1 * st.m + (T(1) - b1) * p.grad;
                    st.v = b2 * st.v + (T(1) - b2) * p.grad.cwiseAbs2();
                    p.value *= T(1) - l * static_cast<T>(spec_.weight_decay);
                    const Mat<T> mhat = st.m / static_cast<T>(bc1);
                    const auto denom = (st.v / static_cast<T>(bc2)).array().sqrt() + static_cast<T>(spec_.eps);
                    p.value.array() -= l * mhat.array() / denom;
                } else {
                    Mat<T> g = p.grad + static_cast<T>(spec_.weight_decay) * p.value;
                    st.m = static_cast<T>(spec_.momentum) * st.m + g;
                    p.value -= l * st.m;
                }
            }
    }

private:
    struct State {
        Mat<T> m, v;
    };
    OptimizerSpec spec_;
    std::int64_t t_ = 0;
    std::map<std::string, State> state_;
};

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
    double base_lr = 0.05;
    /// Stage-2 learning rate; base_lr when unset.
    std::optional<double> stage2_lr;
    double lr_power = 0.9;
    int epochs = 30;
    int batch_size_stage1 = 4;
    int batch_size_stage2 = 2;
    OptimizerSpec optimizer;
    std::uint64_t seed = 0;
    Method method = Method::Linear;
    /// No augmentation when unset.
    std::optional<AugmentationConfig> augmentation;
    /// Normalize with running statistics (frozen) throughout stage 2.
    bool freeze_norm_stats_stage2 = true;
    MethodConfig method_config;

    double lr_for_stage(int stage) const { return stage == 2 && stage2_lr ? *stage2_lr : base_lr; }

    void validate() const {
        if (!(base_lr > 0.0) || (stage2_lr && !(*stage2_lr > 0.0))) throw Error("train config: lr must be positive");
        if (epochs < 1) throw Error("train config: epochs must be >= 1");
        if (batch_size_stage1 < 1 || batch_size_stage2 < 1) throw Error("train config: batch sizes must be >= 1");
        if (lr_power < 0.0) throw Error("train config: lr_power must be non-negative");
        if (augmentation) augmentation->validate();
    }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"method", std::string(method_name(method))},
                            {"lr", base_lr},
                            {"lr_power", lr_power},
                            {"epochs", epochs},
                            {"batch_size_stage1", batch_size_stage1},
                            {"batch_size_stage2", batch_size_stage2},
                            {"optimizer", optimizer.to_json()},
                            {"seed", seed},
                            {"freeze_norm_stats_stage2", freeze_norm_stats_stage2},
                            {"lora", {{"rank", method_config.lora.rank},
                                      {"alpha", method_config.lora.alpha},
                                      {"targets", method_config.lora.targets}}},
                            {"svf_targets", method_config.svf_targets}};
        j["stage2_lr"] = stage2_lr ? nlohmann::json(*stage2_lr) : nlohmann::json(nullptr);
        if (augmentation) {
            const auto& a = *augmentation;
            std::vector<std::string> ops;
            for (auto op : a.randaug_ops) ops.emplace_back(randaug_name(op));
            j["augmentation"] = {{"hflip_prob", a.hflip_prob}, {"scale", {a.scale_min, a.scale_max}},
                                 {"crop", {a.crop_height, a.crop_width}}, {"randaug_ops", ops},
                                 {"randaug_n", a.randaug_n}, {"randaug_magnitude", a.randaug_magnitude}};
        } else {
            j["augmentation"] = nullptr;
        }
        return j;
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.method = parse_method(j.value("method", std::string("linear")));
        c.base_lr = j.value("lr", c.base_lr);
        if (j.contains("stage2_lr") && !j.at("stage2_lr").is_null()) c.stage2_lr = j.at("stage2_lr").get<double>();
        c.lr_power = j.value("lr_power", c.lr_power);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size_stage1 = j.value("batch_size_stage1", c.batch_size_stage1);
        c.batch_size_stage2 = j.value("batch_size_stage2", c.batch_size_stage2);
        if (j.contains("optimizer")) c.optimizer = OptimizerSpec::from_json(j.at("optimizer"));
        c.seed = j.value("seed", c.seed);
        c.freeze_norm_stats_stage2 = j.value("freeze_norm_stats_stage2", c.freeze_norm_stats_stage2);
        if (j.contains("lora")) {
            const auto& l = j.at("lora");
            c.method_config.lora.rank = l.value("rank", c.method_config.lora.rank);
            c.method_config.lora.alpha = l.value("alpha", static_cast<double>(c.method_config.lora.rank));
            c.method_config.lora.targets = l.value("targets", c.method_config.lora.targets);
        }
        c.method_config.svf_targets = j.value("svf_targets", c.method_config.svf_targets);
        if (j.contains("augmentation") && !j.at("augmentation").is_null()) {
            const auto& a = j.at("augmentation");
            AugmentationConfig ac;
            ac.hflip_prob = a.value("hflip_prob", ac.hflip_prob);
            if (a.contains("scale")) {
                ac.scale_min = a.at("scale").at(0).get<int>();
                ac.scale_max = a.at("scale").at(1).get<int>();
            }
            if (a.contains("crop")) {
                ac.crop_height = a.at("crop").at(0).get<int>();
                ac.crop_width = a.at("crop").at(1).get<int>();
            }
            if (a.contains("randaug_ops")) {
                ac.randaug_ops.clear();
                for (const auto& s : a.at("randaug_ops")) ac.randaug_ops.push_back(parse_randaug(s.get<std::string>()));
            }
            ac.randaug_n = a.value("randaug_n", ac.randaug_n);
            ac.randaug_magnitude = a.value("randaug_magnitude", ac.randaug_magnitude);
            c.augmentation = ac;
        }
        c.validate();
        return c;
    }
};

/// Default epochs per dataset family.
inline int preset_epochs(std::string_view family) {
    if (family == "cityscapes" || family == "ppd") return 200;
    if (family == "coco") return 100;
    if (family == "synthetic") return 30;
    throw Error(fmt::format("no epoch preset for '{}'", family));
}

/// Stage-1 learning rates of the linear method per dataset family.
inline double preset_linear_lr(std::string_view family) {
    if (family == "cityscapes") return 0.2;
    if (family == "coco") return 0.05;
    if (family == "ppd") return 0.001;
    throw Error(fmt::format("no learning-rate preset for '{}'", family));
}

inline const std::vector<double>& default_lr_grid() {
    static const std::vector<double> g = {1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
    return g;
}

// ---------------------------------------------------------------------------
// Model construction and inference

template <typename T>
int taps_for(Method m, const FeatureExtractor<T>& enc) {
    return m == Method::Multilayer ? std::min(4, enc.n_blocks()) : 1;
}

/// Encoder (frozen) + fresh head sized for `catalog`.
template <typename T>
SegModel<T> make_model(std::unique_ptr<FeatureExtractor<T>> encoder, Method method, const ClassCatalog& catalog,
                       std::uint64_t seed) {
    freeze_all(encoder->params());
    const int taps = taps_for(method, *encoder);
    const Resolution in = encoder->native_resolution();
    SegHead<T> head(encoder->embed_dim(), taps, static_cast<int>(catalog.size()), seed);
    return SegModel<T>(std::move(encoder), std::move(head), in);
}

/// Rounds each side down to a patch multiple (at least one patch) and
/// resizes when needed.
inline Image fit_to_patches(const Image& img, int patch) {
    const int h = std::max(patch, img.height() / patch * patch);
    const int w = std::max(patch, img.width() / patch * patch);
    if (h == img.height() && w == img.width()) return img;
    return resize_bilinear(img, h, w);
}

template <typename T>
std::vector<Mat<T>> model_logits(SegModel<T>& model, const std::vector<const SegSample*>& batch, NormMode mode,
                                 typename SegHead<T>::Cache* cache,
                                 std::vector<std::unique_ptr<EncoderTrace>>* traces) {
    std::vector<FeatureStack<T>> feats;
    std::vector<std::pair<int, int>> sizes;
    for (const auto* s : batch) {
        const Image in = fit_to_patches(s->image, model.encoder->patch_size());
        std::unique_ptr<EncoderTrace> tr;
        feats.push_back(model.encoder->forward(in, model.n_taps(), traces ? &tr : nullptr));
        if (traces) traces->push_back(std::move(tr));
        sizes.emplace_back(s->mask.height(), s->mask.width());
    }
    return model.head.forward(feats, sizes, mode, cache);
}

template <typename T>
LabelMask predict(SegModel<T>& model, const SegSample& s, const ClassIndexer& idx) {
    const auto logits = model_logits<T>(model, {&s}, NormMode::Eval, nullptr, nullptr);
    LabelMask out(s.mask.height(), s.mask.width(), 0);
    auto& d = out.data();
    for (Eigen::Index i = 0; i < logits[0].rows(); ++i) {
        Eigen::Index best = 0;
        logits[0].row(i).maxCoeff(&best);
        d[static_cast<std::size_t>(i)] = idx.id(static_cast<int>(best));
    }
    return out;
}

/// Mean cross-entropy over every non-ignore support pixel, eval-mode
/// normalization, no augmentation.
template <typename T>
double support_loss(SegModel<T>& model, const std::vector<SegSample>& support, const ClassCatalog& catalog) {
    const ClassIndexer idx(catalog);
    LossSum total;
    for (const auto& s : support) {
        const auto logits = model_logits<T>(model, {&s}, NormMode::Eval, nullptr, nullptr);
        const LossSum l = cross_entropy_sum<T>(logits[0], s.mask, idx, nullptr);
        total.sum += l.sum;
        total.count += l.count;
    }
    if (total.count == 0) throw Error("support_loss: every support pixel is ignored");
    return total.sum / static_cast<double>(total.count);
}

struct QueryEvaluation {
    ConfusionMatrix confusion;
    std::vector<LabelMask> predictions;  // empty unless requested
};

template <typename T>
QueryEvaluation evaluate_query(SegModel<T>& model, const FewShotTask& task, bool keep_predictions = false) {
    QueryEvaluation ev{ConfusionMatrix(task.catalog), {}};
    const ClassIndexer idx(task.catalog);
    for (const auto& q : task.query) {
        LabelMask p = predict(model, q, idx);
        ev.confusion.update(p, q.mask);
        if (keep_predictions) ev.predictions.push_back(std::move(p));
    }
    return ev;
}

// ---------------------------------------------------------------------------
// Stages

struct StageResult {
    int stage = 1;
    bool skipped = false;
    std::vector<double> loss_curve;  // per-epoch mean batch loss
    std::int64_t steps = 0;
    double initial_support_loss = std::numeric_limits<double>::quiet_NaN();
    double final_support_loss = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0.0;
    TrainableReport trainable;
};

namespace detail {

template <typename T>
void run_stage(SegModel<T>& model, const FewShotTask& task, const TrainConfig& cfg, int stage, StageResult& res) {
    const int bs = stage == 1 ? cfg.batch_size_stage1 : cfg.batch_size_stage2;
    const std::int64_t per_epoch = steps_per_epoch(task.support.size(), bs);
    const std::int64_t total = per_epoch * cfg.epochs;
    const double base = cfg.lr_for_stage(stage);
    const NormMode mode = (stage == 2 && cfg.freeze_norm_stats_stage2) ? NormMode::Eval : NormMode::Train;
    const ClassIndexer idx(task.catalog);
    const bool encoder_trainable = model.encoder->any_trainable();
    const std::uint64_t stage_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(stage));
    Optimizer<T> opt(cfg.optimizer);
    std::int64_t step = 0;
    std::vector<std::size_t> order(task.support.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng order_rng(mix_seed(stage_seed, 0xE90C0000u + static_cast<std::uint64_t>(epoch)));
        shuffle(order_rng, order);
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::int64_t b = 0; b < per_epoch; ++b, ++step) {
            const double lr = poly_lr(step, total, base, cfg.lr_power);
            std::vector<SegSample> views;
            for (std::size_t j = static_cast<std::size_t>(b) * bs;
                 j < std::min(order.size(), static_cast<std::size_t>(b + 1) * bs); ++j) {
                const SegSample& s = task.support[order[j]];
                if (cfg.augmentation) {
                    Rng rng = sample_rng(stage_seed, static_cast<std::uint64_t>(epoch), s.image_id);
                    views.push_back(augment(s, *cfg.augmentation, task.catalog.ignore_id(), rng));
                } else {
                    views.push_back(s);
                }
            }
            std::vector<const SegSample*> ptrs;
            for (const auto& v : views) ptrs.push_back(&v);
            model.encoder->params().zero_grad();
            model.head.params().zero_grad();
            typename SegHead<T>::Cache cache;
            std::vector<std::unique_ptr<EncoderTrace>> traces;
            const auto logits = model_logits<T>(model, ptrs, mode, &cache, encoder_trainable ? &traces : nullptr);
            LossSum ls;
            std::vector<Mat<T>> dl(logits.size());
            for (std::size_t i = 0; i < logits.size(); ++i) {
                const LossSum l = cross_entropy_sum<T>(logits[i], views[i].mask, idx, &dl[i]);
                ls.sum += l.sum;
                ls.count += l.count;
            }
            if (ls.count == 0) continue;  // fully ignored crop; the schedule still advances
            const T inv = T(1) / static_cast<T>(ls.count);
            for (auto& d : dl) d *= inv;
            const auto dtaps = model.head.backward(cache, dl);
            if (encoder_trainable)
                for (std::size_t i = 0; i < traces.size(); ++i) model.encoder->backward(*traces[i], dtaps[i]);
            opt.step({&model.encoder->params(), &model.head.params()}, lr);
            const double loss = ls.sum / static_cast<double>(ls.count);
            if (!std::isfinite(loss)) throw Error(fmt::format("stage {}: loss diverged at step {}", stage, step));
            epoch_loss += loss;
            ++batches;
        }
        res.loss_curve.push_back(batches > 0 ? epoch_loss / batches : std::numeric_limits<double>::quiet_NaN());
    }
    res.steps = total;
}

}  // namespace detail

/// Trains the head on frozen features.
template <typename T>
StageResult train_stage1(SegModel<T>& model, const FewShotTask& task, const TrainConfig& cfg) {
    cfg.validate();
    if (task.support.empty()) throw InfeasibleTask("train_stage1: support set is empty");
    if (model.encoder->any_trainable()) throw Error("train_stage1: encoder must be fully frozen");
    const auto t0 = std::chrono::steady_clock::now();
    StageResult res;
    res.stage = 1;
    res.trainable = model.report();
    res.initial_support_loss = support_loss(model, task.support, task.catalog);
    detail::run_stage(model, task, cfg, 1, res);
    res.final_support_loss = support_loss(model, task.support, task.catalog);
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

/// Applies the method's surgery, then trains its trainable set with the
/// head. Probing methods return a skipped result and leave the model as is.
template <typename T>
StageResult train_stage2(SegModel<T>& model, const FewShotTask& task, const TrainConfig& cfg) {
    cfg.validate();
    StageResult res;
    res.stage = 2;
    if (!has_stage2(cfg.method)) {
        res.skipped = true;
        res.trainable = model.report();
        return res;
    }
    if (task.support.empty()) throw InfeasibleTask("train_stage2: support set is empty");
    const auto t0 = std::chrono::steady_clock::now();
    MethodConfig mc = cfg.method_config;
    mc.seed = mix_seed(cfg.seed, 0x57A6E2u);
    res.trainable = apply_method(model, cfg.method, mc);
    res.initial_support_loss = support_loss(model, task.support, task.catalog);
    detail::run_stage(model, task, cfg, 2, res);
    res.final_support_loss = support_loss(model, task.support, task.catalog);
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridPoint {
    double lr = 0.0;
    std::vector<double> scores;       // successful seeds
    std::vector<std::string> errors;  // failed seeds
    std::optional<double> mean;
};

struct GridSearchResult {
    double best_lr = 0.0;
    std::vector<GridPoint> table;  // grid order
};

/// Scores every lr over `seeds`; the best mean wins, ties go to the larger
/// lr. Failed runs are recorded and excluded.
inline GridSearchResult grid_search_lr(const std::vector<double>& grid, const std::vector<std::uint64_t>& seeds,
                                       const std::function<double(double lr, std::uint64_t seed)>& score) {
    if (grid.empty()) throw Error("grid_search_lr: empty grid");
    if (seeds.empty()) throw Error("grid_search_lr: no seeds");
    GridSearchResult r;
    std::optional<std::size_t> best;
    for (double lr : grid) {
        GridPoint p{lr, {}, {}, std::nullopt};
        for (auto s : seeds) {
            try {
                const double v = score(lr, s);
                if (!std::isfinite(v)) throw Error("non-finite score");
                p.scores.push_back(v);
            } catch (const std::exception& e) {
                p.errors.push_back(fmt::format("seed {}: {}", s, e.what()));
            }
        }
        if (!p.scores.empty()) p.mean = mean_of(p.scores);
        r.table.push_back(std::move(p));
        const auto& cur = r.table.back();
        if (cur.mean) {
            if (!best) {
                best = r.table.size() - 1;
            } else {
                const auto& b = r.table[*best];
                if (*cur.mean > *b.mean || (*cur.mean == *b.mean && cur.lr > b.lr)) best = r.table.size() - 1;
            }
        }
    }
    if (!best) {
        std::string diag;
        for (const auto& p : r.table)
            for (const auto& e : p.errors) diag += fmt::format("\n  lr {:g}, {}", p.lr, e);
        throw Error("grid_search_lr: every run failed" + diag);
    }
    r.best_lr = r.table[*best].lr;
    return r;
}

}  // namespace fss
