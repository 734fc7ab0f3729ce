#ifndef SIMATTN_MODEL_HPP
#define SIMATTN_MODEL_HPP

#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "simattn/ops.hpp"
#include "simattn/rng.hpp"

namespace simattn {

enum class PoolKind { none, max2x2, avg2x2 };

struct ConvLayerSpec {
    int out_channels = 8;
    int kernel = 3;
    int stride = 1;
    int pad = 1;
    bool relu = true;
    PoolKind pool = PoolKind::max2x2;
};

struct EncoderConfig {
    int in_channels = 1;
    int height = 64;
    int width = 64;
    std::vector<ConvLayerSpec> layers;
    // which conv block's output (post activation/pool) is the feature map A
    int attention_layer = 2;
    int embedding_dim = 32;
    // bounds f to (0,1)^d so w = 1-|df| stays in [0,1]
    bool sigmoid_embedding = true;

    // 3 blocks, 8/16/32 channels, A after block 3 (8x8 on 64x64 inputs)
    static EncoderConfig desk_default() {
        EncoderConfig c;
        c.layers = {{8, 3, 1, 1, true, PoolKind::max2x2},
                    {16, 3, 1, 1, true, PoolKind::max2x2},
                    {32, 3, 1, 1, true, PoolKind::max2x2}};
        return c;
    }

    // tiny 2-block encoder for end-to-end gradient checks on 16x16 inputs
    static EncoderConfig tiny(int img = 16) {
        EncoderConfig c;
        c.height = c.width = img;
        c.layers = {{4, 3, 1, 1, true, PoolKind::max2x2},
                    {8, 3, 1, 1, true, PoolKind::max2x2}};
        c.attention_layer = 1;
        c.embedding_dim = 8;
        return c;
    }

    // spatial dims of layer `idx`'s output
    void layer_dims(int idx, int& ch, int& h, int& w) const {
        ch = in_channels;
        h = height;
        w = width;
        for (int i = 0; i <= idx; ++i) {
            const auto& l = layers[i];
            h = (h + 2 * l.pad - l.kernel) / l.stride + 1;
            w = (w + 2 * l.pad - l.kernel) / l.stride + 1;
            ch = l.out_channels;
            if (l.pool != PoolKind::none) {
                h /= 2;
                w /= 2;
            }
        }
    }
};

struct Encoded {
    Tensor f;  // [d]
    Tensor a;  // [c_a x m x n]
};

class Encoder {
public:
    Encoder() = default;

    Encoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        if (cfg_.attention_layer < 0 ||
            cfg_.attention_layer >= static_cast<int>(cfg_.layers.size()))
            throw std::invalid_argument("Encoder: attention_layer out of range");
        Rng rng(seed ^ 0x5eedULL);
        int ci = cfg_.in_channels;
        for (size_t i = 0; i < cfg_.layers.size(); ++i) {
            const auto& l = cfg_.layers[i];
            int fan_in = ci * l.kernel * l.kernel;
            double bound = std::sqrt(2.0 / fan_in);
            params_["conv" + std::to_string(i) + ".w"] =
                random_tensor(rng, {l.out_channels, ci, l.kernel, l.kernel}, bound);
            params_["conv" + std::to_string(i) + ".b"] =
                Tensor::zeros({l.out_channels}, true);
            ci = l.out_channels;
        }
        int ch, m, n;
        cfg_.layer_dims(static_cast<int>(cfg_.layers.size()) - 1, ch, m, n);
        double bound = std::sqrt(2.0 / ch);
        params_["embed.w"] = random_tensor(rng, {cfg_.embedding_dim, ch}, bound);
        params_["embed.b"] = Tensor::zeros({cfg_.embedding_dim}, true);
    }

    const EncoderConfig& config() const { return cfg_; }
    std::map<std::string, Tensor>& parameters() { return params_; }
    const std::map<std::string, Tensor>& parameters() const { return params_; }

    int parameter_count() const {
        int n = 0;
        for (const auto& [k, v] : params_) n += v.size();
        return n;
    }

    // Returns embedding f and the intermediate feature map A. Both live in
    // the active graph when recording is on.
    Encoded encode(const Tensor& x) const {
        if (x.shape() != Shape{cfg_.in_channels, cfg_.height, cfg_.width})
            throw std::invalid_argument("encode: input shape mismatch");
        Tensor h = x;
        Tensor a;
        for (size_t i = 0; i < cfg_.layers.size(); ++i) {
            const auto& l = cfg_.layers[i];
            h = conv2d(h, params_.at("conv" + std::to_string(i) + ".w"),
                       params_.at("conv" + std::to_string(i) + ".b"), l.stride, l.pad);
            if (l.relu) h = relu(h);
            if (l.pool == PoolKind::max2x2) h = maxpool2x2(h);
            else if (l.pool == PoolKind::avg2x2) h = avgpool2x2(h);
            if (static_cast<int>(i) == cfg_.attention_layer) a = h;
        }
        Tensor pooled = global_avg(h);
        Tensor f = add(matvec(params_.at("embed.w"), pooled), params_.at("embed.b"));
        if (cfg_.sigmoid_embedding) f = sigmoid(f);
        return {f, a};
    }

    // Checkpoint format: "SATTN1", then per parameter (name-sorted):
    // u32 name length, name bytes, u32 rank, u32 dims..., f64 LE values.
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
        out.write("SATTN1", 6);
        for (const auto& [name, t] : params_) {
            write_u32(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u32(out, static_cast<std::uint32_t>(t.shape().size()));
            for (int d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
            out.write(reinterpret_cast<const char*>(t.data().data()),
                      static_cast<std::streamsize>(t.size() * sizeof(double)));
        }
        if (!out) throw std::runtime_error("checkpoint write failed: " + path);
    }

    void load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
        char magic[6];
        in.read(magic, 6);
        if (!in || std::memcmp(magic, "SATTN1", 6) != 0)
            throw std::runtime_error("bad checkpoint magic: " + path);
        std::map<std::string, Tensor> loaded;
        while (true) {
            std::uint32_t name_len;
            if (!read_u32(in, name_len)) break;
            std::string name(name_len, '\0');
            in.read(name.data(), name_len);
            std::uint32_t rank;
            if (!read_u32(in, rank)) throw std::runtime_error("truncated checkpoint");
            Shape shape(rank);
            for (auto& d : shape) {
                std::uint32_t v;
                if (!read_u32(in, v)) throw std::runtime_error("truncated checkpoint");
                d = static_cast<int>(v);
            }
            std::vector<double> data(numel(shape));
            in.read(reinterpret_cast<char*>(data.data()),
                    static_cast<std::streamsize>(data.size() * sizeof(double)));
            if (!in) throw std::runtime_error("truncated checkpoint");
            loaded[name] = Tensor(shape, std::move(data), true);
        }
        params_ = std::move(loaded);
    }

private:
    static Tensor random_tensor(Rng& rng, Shape shape, double bound) {
        std::vector<double> data(numel(shape));
        for (auto& v : data) v = rng.uniform(-bound, bound);
        return Tensor(std::move(shape), std::move(data), true);
    }

    static void write_u32(std::ostream& out, std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
    static bool read_u32(std::istream& in, std::uint32_t& v) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (!in) return false;
        v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
            (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        return true;
    }

    EncoderConfig cfg_;
    std::map<std::string, Tensor> params_;
};

// ---------------------------------------------------------------------------
// baseline metric-learning losses
// ---------------------------------------------------------------------------

struct MetricLossConfig {
    double margin = 0.3;              // triplet / quadruplet first margin
    double margin2 = 0.15;            // quadruplet second margin
    double contrastive_margin = 1.0;

    void validate() const {
        if (margin < 0 || margin2 < 0 || contrastive_margin < 0)
            throw std::invalid_argument("metric loss: negative margin");
    }
};

inline Tensor triplet_loss(const Tensor& fa, const Tensor& fp, const Tensor& fn, double margin) {
    Tensor gap = sub(l2_distance(fa, fp), l2_distance(fa, fn));
    return relu(add_scalar(gap, margin));
}

inline Tensor contrastive_loss(const Tensor& f1, const Tensor& f2, bool same_class,
                               double margin) {
    Tensor d = l2_distance(f1, f2);
    if (same_class) return mul(d, d);
    Tensor hinge = relu(add_scalar(scale(d, -1.0), margin));
    return mul(hinge, hinge);
}

inline Tensor quadruplet_loss(const Tensor& fa, const Tensor& fp, const Tensor& fn1,
                              const Tensor& fn2, double margin, double margin2) {
    Tensor t1 = triplet_loss(fa, fp, fn1, margin);
    Tensor cross = relu(add_scalar(sub(l2_distance(fa, fp), l2_distance(fn1, fn2)), margin2));
    return add(t1, cross);
}

}  // namespace simattn

#endif  // SIMATTN_MODEL_HPP
