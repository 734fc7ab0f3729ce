#ifndef SIMATTN_EVAL_HPP
#define SIMATTN_EVAL_HPP

#include <thread>

#include "simattn/attention.hpp"
#include "simattn/data.hpp"
#include "simattn/model.hpp"

namespace simattn {

// gallery embeddings plus labels; the retrieval index
struct EmbeddedSet {
    std::vector<std::vector<double>> embeddings;
    std::vector<int> labels;
};

// Embeds samples without touching the graph. Safe to parallelize: tensors
// without node references are immutable values.
inline EmbeddedSet embed_subset(const Encoder& enc, const Dataset& ds,
                                const std::vector<int>& subset, int threads = 0) {
    std::vector<int> idx = subset;
    if (idx.empty())
        for (int i = 0; i < static_cast<int>(ds.samples.size()); ++i) idx.push_back(i);
    EmbeddedSet out;
    out.embeddings.resize(idx.size());
    out.labels.resize(idx.size());
    if (threads <= 0) threads = 1;
    auto worker = [&](int t) {
        RecordingGuard guard(false);
        for (size_t i = t; i < idx.size(); i += threads) {
            out.embeddings[i] = enc.encode(ds.samples[idx[i]].image).f.data();
            out.labels[i] = ds.samples[idx[i]].label;
        }
    };
    if (threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
        for (auto& th : pool) th.join();
    }
    return out;
}

// Leave-one-out Recall@K over a single embedded set: fraction of queries
// whose K nearest gallery neighbors (euclidean, ties broken by gallery
// index) include at least one same-class item.
inline double recall_at_k(const EmbeddedSet& set, int K) {
    int n = static_cast<int>(set.embeddings.size());
    if (K < 1 || K > n - 1) throw std::invalid_argument("recall_at_k: invalid K");
    int hits = 0;
    for (int q = 0; q < n; ++q) {
        std::vector<std::pair<double, int>> dist;
        dist.reserve(n - 1);
        for (int g = 0; g < n; ++g) {
            if (g == q) continue;
            double d2 = 0.0;
            for (size_t t = 0; t < set.embeddings[q].size(); ++t) {
                double d = set.embeddings[q][t] - set.embeddings[g][t];
                d2 += d * d;
            }
            dist.push_back({d2, g});
        }
        std::partial_sort(dist.begin(), dist.begin() + K, dist.end());
        bool hit = false;
        for (int i = 0; i < K; ++i)
            if (set.labels[dist[i].second] == set.labels[q]) { hit = true; break; }
        if (hit) ++hits;
    }
    return static_cast<double>(hits) / n;
}

// Binarize values at their own quantile threshold; IoU against a binary mask.
// An all-zero map yields IoU 0 by definition.
inline double attention_iou(const std::vector<double>& m, const std::vector<std::uint8_t>& mask,
                            double quantile) {
    if (quantile <= 0.0 || quantile >= 1.0)
        throw std::invalid_argument("attention_iou: quantile must be in (0,1)");
    if (m.size() != mask.size()) throw std::invalid_argument("attention_iou: size mismatch");
    double mx = *std::max_element(m.begin(), m.end());
    if (mx <= 0.0) return 0.0;
    std::vector<double> sorted = m;
    std::sort(sorted.begin(), sorted.end());
    double thr = sorted[static_cast<size_t>(quantile * (sorted.size() - 1))];
    long inter = 0, uni = 0;
    for (size_t i = 0; i < m.size(); ++i) {
        bool pred = m[i] > thr;
        bool gt = mask[i] != 0;
        if (pred && gt) ++inter;
        if (pred || gt) ++uni;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct SegmentationResult {
    std::vector<std::uint8_t> mask;  // H x W
    double iou = 0.0;
    int class_id = 0;
};

// One-shot segmentation from attention: form the positive pair
// (test, support), take the test image's similarity attention, upsample and
// binarize at a quantile threshold.
inline SegmentationResult one_shot_segment(const Encoder& enc, const Sample& test,
                                           const Sample& support, double quantile) {
    Encoded et = enc.encode(test.image);
    Encoded es = enc.encode(support.image);
    WeightVector wv = weights(WeightKind::siamese_same, {et.f, es.f});
    Tensor w = wv.w.detach();
    std::vector<Tensor> scores = sample_scores(w, {et.f, es.f});
    Tensor m = attention_map(scores[0], et.a, false);
    int hh = test.image.shape()[1], ww = test.image.shape()[2];
    Tensor up = upsample_bilinear(m, hh, ww);

    SegmentationResult res;
    res.class_id = support.label;
    const auto& v = up.data();
    res.mask.assign(v.size(), 0);
    double mx = *std::max_element(v.begin(), v.end());
    if (mx > 0.0) {
        std::vector<double> sorted = v;
        std::sort(sorted.begin(), sorted.end());
        double thr = sorted[static_cast<size_t>(quantile * (sorted.size() - 1))];
        for (size_t i = 0; i < v.size(); ++i) res.mask[i] = v[i] > thr ? 1 : 0;
    }
    long inter = 0, uni = 0;
    for (size_t i = 0; i < v.size(); ++i) {
        bool pred = res.mask[i] != 0;
        bool gt = test.part_mask[i] != 0;
        if (pred && gt) ++inter;
        if (pred || gt) ++uni;
    }
    res.iou = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    return res;
}

}  // namespace simattn

#endif  // SIMATTN_EVAL_HPP
