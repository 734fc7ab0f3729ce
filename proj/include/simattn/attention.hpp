#ifndef SIMATTN_ATTENTION_HPP
#define SIMATTN_ATTENTION_HPP

#include "simattn/model.hpp"
#include "simattn/ops.hpp"

namespace simattn {

enum class Arch { siamese, triplet, quadruplet };

inline Arch arch_from_string(const std::string& s) {
    if (s == "siamese") return Arch::siamese;
    if (s == "triplet") return Arch::triplet;
    if (s == "quadruplet") return Arch::quadruplet;
    throw std::invalid_argument("unknown architecture: " + s);
}

inline const char* arch_name(Arch a) {
    switch (a) {
        case Arch::siamese: return "siamese";
        case Arch::triplet: return "triplet";
        default: return "quadruplet";
    }
}

inline int arch_arity(Arch a) {
    switch (a) {
        case Arch::siamese: return 2;
        case Arch::triplet: return 3;
        default: return 4;
    }
}

enum class WeightKind { siamese_same, siamese_diff, triplet, quadruplet };

struct WeightVector {
    Tensor w;
    std::vector<Tensor> parts;  // w^p/w^n (triplet) or w^1..w^3 (quadruplet)
};

// Per-dimension relevance combining closeness of the positive pair and
// separation of the negative pair(s).
inline WeightVector weights(WeightKind kind, const std::vector<Tensor>& fs) {
    auto check_arity = [&](size_t n) {
        if (fs.size() != n) throw std::invalid_argument("weights: arity mismatch");
    };
    WeightVector out;
    switch (kind) {
        case WeightKind::siamese_same:
            check_arity(2);
            out.w = one_minus(abs(sub(fs[0], fs[1])));
            break;
        case WeightKind::siamese_diff:
            check_arity(2);
            out.w = abs(sub(fs[0], fs[1]));
            break;
        case WeightKind::triplet: {
            check_arity(3);
            Tensor wp = one_minus(abs(sub(fs[0], fs[1])));
            Tensor wn = abs(sub(fs[0], fs[2]));
            out.parts = {wp, wn};
            out.w = mul(wp, wn);
            break;
        }
        case WeightKind::quadruplet: {
            check_arity(4);
            Tensor w1 = one_minus(abs(sub(fs[0], fs[1])));
            Tensor w2 = abs(sub(fs[0], fs[2]));
            Tensor w3 = abs(sub(fs[0], fs[3]));
            out.parts = {w1, w2, w3};
            out.w = mul(mul(w1, w2), w3);
            break;
        }
    }
    return out;
}

// s^i = w^T f^i for each tuple member
inline std::vector<Tensor> sample_scores(const Tensor& w, const std::vector<Tensor>& fs) {
    std::vector<Tensor> scores;
    scores.reserve(fs.size());
    for (const auto& f : fs) scores.push_back(dot(w, f));
    return scores;
}

// Attention from a similarity score: alpha_k = GAP(ds/dA_k),
// M = ReLU(sum_k alpha_k A_k). With create_graph the map stays
// differentiable w.r.t. everything upstream of s and A. Tensors in `stops`
// are treated as constants for the score derivative (their values still
// enter the created graph): passing the relevance weights here keeps the
// map's value independent of whether w carries gradients.
inline Tensor attention_map(const Tensor& s, const Tensor& a, bool create_graph,
                            const std::vector<Tensor>& stops = {}) {
    if (!s.has_node()) throw std::invalid_argument("attention_map: score not in graph");
    if (!a.has_node()) throw std::invalid_argument("attention_map: feature map not in graph");
    std::vector<Tensor> stop_at = stops;
    stop_at.push_back(a);
    GradientMap gm = backward(s, create_graph, stop_at);
    if (!gm.contains(a))
        throw std::invalid_argument("attention_map: score has no path to the feature map");
    Tensor ga = gm.at(a);
    RecordingGuard guard(create_graph || tape().recording);
    Tensor alpha = global_avg(ga);
    return relu(channel_weighted_sum(alpha, a));
}

struct MaskConfig {
    double alpha = 10.0;   // sigmoid slope
    double beta = 0.5;     // sigmoid threshold
    bool normalize = true; // divide M by its max before masking

    void validate() const {
        if (alpha <= 0) throw std::invalid_argument("mask: alpha must be positive");
    }
};

// x_hat = x (.) (1 - sigmoid(alpha (M_up - beta))), per channel
inline Tensor soft_mask(const Tensor& x, const Tensor& m, const MaskConfig& cfg) {
    cfg.validate();
    if (x.shape().size() != 3 || m.shape().size() != 2)
        throw std::invalid_argument("soft_mask: shape mismatch");
    Tensor mm = m;
    if (cfg.normalize) {
        Tensor mx = reduce_max(mm);
        if (mx.item() > 0.0) mm = smul(recip(mx), mm);
    }
    Tensor up = upsample_bilinear(mm, x.shape()[1], x.shape()[2]);
    Tensor keep = one_minus(sigmoid(scale(add_scalar(up, -cfg.beta), cfg.alpha)));
    return plane_mul(x, keep);
}

// Similarity-mining loss over re-encoded masked embeddings.
// triplet: | ||f*a-f*p|| - ||f*a-f*n|| |
// siamese (positive pairs): -||f*1-f*2||
// quadruplet: triplet form over (a,p,n1) + (a,p,n2)
inline Tensor mining_loss(Arch arch, const std::vector<Tensor>& fs) {
    if (static_cast<int>(fs.size()) != arch_arity(arch))
        throw std::invalid_argument("mining_loss: arity mismatch");
    switch (arch) {
        case Arch::siamese:
            return scale(l2_distance(fs[0], fs[1]), -1.0);
        case Arch::triplet:
            return abs(sub(l2_distance(fs[0], fs[1]), l2_distance(fs[0], fs[2])));
        default: {
            Tensor t1 = abs(sub(l2_distance(fs[0], fs[1]), l2_distance(fs[0], fs[2])));
            Tensor t2 = abs(sub(l2_distance(fs[0], fs[1]), l2_distance(fs[0], fs[3])));
            return add(t1, t2);
        }
    }
}

// L = L_ml + gamma L_sm
inline Tensor total_loss(const Tensor& l_ml, const Tensor& l_sm, double gamma) {
    if (gamma < 0) throw std::invalid_argument("total_loss: negative gamma");
    return add(l_ml, scale(l_sm, gamma));
}

}  // namespace simattn

#endif  // SIMATTN_ATTENTION_HPP
