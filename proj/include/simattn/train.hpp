#ifndef SIMATTN_TRAIN_HPP
#define SIMATTN_TRAIN_HPP

#include <functional>

#include "simattn/attention.hpp"
#include "simattn/data.hpp"
#include "simattn/eval.hpp"
#include "simattn/model.hpp"

namespace simattn {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
    Arch arch = Arch::triplet;
    double gamma = 0.2;
    MetricLossConfig metric;
    MaskConfig mask;
    bool detach_w = true;
    double lr = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 40;
    int batch = 16;
    std::uint64_t seed = 1;
    int val_per_class = 20;

    void validate() const {
        if (gamma < 0) throw std::invalid_argument("TrainConfig: gamma must be >= 0");
        if (lr <= 0) throw std::invalid_argument("TrainConfig: lr must be > 0");
        if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
        metric.validate();
        mask.validate();
    }
};

struct OptimizerState {
    std::map<std::string, std::vector<double>> m1, m2;
    long step = 0;
};

struct StepLosses {
    double loss_ml = 0.0;
    double loss_sm = 0.0;
};

namespace detail {

struct TupleLosses {
    Tensor l_ml;
    Tensor l_sm;  // undefined when mining does not apply (different-class pair)
};

// Full per-tuple pipeline: encode -> weights -> scores -> attention
// (create_graph) -> soft-mask -> re-encode with the same encoder -> mining.
inline TupleLosses tuple_losses(const Encoder& enc, const Dataset& ds, const Tuple& tup,
                                const TrainConfig& cfg, Arch arch, bool with_mining) {
    TupleLosses out;
    std::vector<Encoded> encs;
    std::vector<Tensor> fs;
    for (int idx : tup.indices) {
        encs.push_back(enc.encode(ds.samples[idx].image));
        fs.push_back(encs.back().f);
    }
    switch (arch) {
        case Arch::siamese:
            out.l_ml = contrastive_loss(fs[0], fs[1], tup.same_class,
                                        cfg.metric.contrastive_margin);
            break;
        case Arch::triplet:
            out.l_ml = triplet_loss(fs[0], fs[1], fs[2], cfg.metric.margin);
            break;
        case Arch::quadruplet:
            out.l_ml = quadruplet_loss(fs[0], fs[1], fs[2], fs[3], cfg.metric.margin,
                                       cfg.metric.margin2);
            break;
    }
    if (!with_mining) return out;
    // siamese mining applies to positive pairs only
    if (arch == Arch::siamese && !tup.same_class) return out;

    WeightKind kind = arch == Arch::siamese
                          ? (tup.same_class ? WeightKind::siamese_same : WeightKind::siamese_diff)
                          : (arch == Arch::triplet ? WeightKind::triplet : WeightKind::quadruplet);
    WeightVector wv = weights(kind, fs);
    Tensor w = cfg.detach_w ? wv.w.detach() : wv.w;
    std::vector<Tensor> scores = sample_scores(w, fs);
    // the score derivative treats w as a constant either way; detach_w only
    // decides whether the outer backward pushes gradients through w
    std::vector<Tensor> w_stop = cfg.detach_w ? std::vector<Tensor>{} : std::vector<Tensor>{w};
    std::vector<Tensor> masked_fs;
    for (size_t i = 0; i < fs.size(); ++i) {
        Tensor m = attention_map(scores[i], encs[i].a, true, w_stop);
        Tensor xh = soft_mask(ds.samples[tup.indices[i]].image, m, cfg.mask);
        masked_fs.push_back(enc.encode(xh).f);
    }
    out.l_sm = mining_loss(arch, masked_fs);
    return out;
}

inline void apply_update(Encoder& enc, const GradientMap& grads, const TrainConfig& cfg,
                         OptimizerState& opt) {
    if (cfg.optimizer == OptimizerKind::adam) opt.step += 1;
    for (auto& [name, p] : enc.parameters()) {
        Tensor g = grads.at_or_zero(p);
        auto& pd = p.mutable_data();
        const auto& gd = g.data();
        if (cfg.optimizer == OptimizerKind::sgd) {
            for (size_t i = 0; i < pd.size(); ++i) pd[i] -= cfg.lr * gd[i];
        } else {
            auto& m1 = opt.m1[name];
            auto& m2 = opt.m2[name];
            if (m1.empty()) m1.assign(pd.size(), 0.0);
            if (m2.empty()) m2.assign(pd.size(), 0.0);
            double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
            double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.step));
            double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.step));
            for (size_t i = 0; i < pd.size(); ++i) {
                m1[i] = b1 * m1[i] + (1.0 - b1) * gd[i];
                m2[i] = b2 * m2[i] + (1.0 - b2) * gd[i] * gd[i];
                pd[i] -= cfg.lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.adam_eps);
            }
        }
    }
}

}  // namespace detail

// One optimizer update on the combined objective over a tuple batch.
// Returns pre-update batch-mean losses.
inline StepLosses train_step(Encoder& enc, const Dataset& ds, const TupleBatch& batch,
                             const TrainConfig& cfg, OptimizerState& opt) {
    cfg.validate();
    if (batch.arch != cfg.arch) throw std::invalid_argument("train_step: batch/config arch mismatch");
    if (batch.tuples.empty()) throw std::invalid_argument("train_step: empty batch");

    bool with_mining = cfg.gamma > 0.0;
    Tensor ml_sum, sm_sum;
    int sm_count = 0;
    for (const auto& tup : batch.tuples) {
        auto losses = detail::tuple_losses(enc, ds, tup, cfg, cfg.arch, with_mining);
        ml_sum = ml_sum.defined() ? add(ml_sum, losses.l_ml) : losses.l_ml;
        if (losses.l_sm.defined()) {
            sm_sum = sm_sum.defined() ? add(sm_sum, losses.l_sm) : losses.l_sm;
            ++sm_count;
        }
    }
    Tensor l_ml = scale(ml_sum, 1.0 / static_cast<double>(batch.tuples.size()));
    StepLosses result;
    result.loss_ml = l_ml.item();
    Tensor total;
    if (sm_count > 0) {
        Tensor l_sm = scale(sm_sum, 1.0 / static_cast<double>(sm_count));
        result.loss_sm = l_sm.item();
        total = total_loss(l_ml, l_sm, cfg.gamma);
    } else {
        total = l_ml;
    }
    if (!std::isfinite(total.item()))
        throw std::runtime_error("train_step: non-finite loss, aborting");
    GradientMap grads = backward(total, false);
    detail::apply_update(enc, grads, cfg, opt);
    return result;
}

struct EpochRecord {
    int epoch = 0;
    double loss_ml = 0.0;
    double loss_sm = 0.0;
    double recall_at_1 = 0.0;
};

struct DataSplit {
    std::vector<int> train, val;
};

// class-stratified, seed-determined split; val takes val_per_class from each class
inline DataSplit split_dataset(const Dataset& ds, int val_per_class, std::uint64_t seed) {
    DataSplit split;
    std::vector<std::vector<int>> by_class(ds.spec.classes);
    for (int i = 0; i < static_cast<int>(ds.samples.size()); ++i)
        by_class[ds.samples[i].label - 1].push_back(i);
    Rng rng(seed ^ 0x51717ULL);
    for (auto& cls : by_class) {
        for (int i = static_cast<int>(cls.size()) - 1; i > 0; --i)
            std::swap(cls[i], cls[rng.uniform_int(i + 1)]);
        int nv = std::min(val_per_class, static_cast<int>(cls.size()) - 1);
        split.val.insert(split.val.end(), cls.begin(), cls.begin() + nv);
        split.train.insert(split.train.end(), cls.begin() + nv, cls.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    return split;
}

using EpochCallback = std::function<void(const EpochRecord&, const Encoder&)>;

// Deterministic training loop; per-epoch validation Recall@1 on the held-out split.
inline std::vector<EpochRecord> fit(Encoder& enc, const Dataset& ds, const TrainConfig& cfg,
                                    const EpochCallback& on_epoch = nullptr) {
    cfg.validate();
    DataSplit split = split_dataset(ds, cfg.val_per_class, cfg.seed);
    int steps = std::max(1, static_cast<int>(split.train.size()) / cfg.batch);
    OptimizerState opt;
    std::vector<EpochRecord> log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double ml = 0.0, sm = 0.0;
        for (int step = 0; step < steps; ++step) {
            std::uint64_t step_seed =
                cfg.seed * 1000003ULL + static_cast<std::uint64_t>(epoch) * 1009ULL +
                static_cast<std::uint64_t>(step) + 17ULL;
            TupleBatch batch = sample_tuples(ds, cfg.arch, cfg.batch, step_seed, split.train);
            StepLosses losses = train_step(enc, ds, batch, cfg, opt);
            ml += losses.loss_ml;
            sm += losses.loss_sm;
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.loss_ml = ml / steps;
        rec.loss_sm = sm / steps;
        EmbeddedSet val_emb = embed_subset(enc, ds, split.val);
        rec.recall_at_1 = recall_at_k(val_emb, 1);
        log.push_back(rec);
        if (on_epoch) on_epoch(rec, enc);
    }
    return log;
}

}  // namespace simattn

#endif  // SIMATTN_TRAIN_HPP
