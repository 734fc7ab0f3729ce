#ifndef SIMATTN_DATA_HPP
#define SIMATTN_DATA_HPP

#include <array>
#include <cstring>
#include <fstream>

#include "simattn/attention.hpp"
#include "simattn/rng.hpp"
#include "simattn/tensor.hpp"

namespace simattn {

struct Sample {
    Tensor image;                   // [c x H x W], values in [0,1]
    int label = 0;                  // class id in {1..k}
    std::vector<std::uint8_t> part_mask;  // H*W, marks the discriminative glyph region
};

struct SyntheticSpec {
    int classes = 8;
    int image_size = 64;
    int channels = 1;
    int glyph_size = 12;
    int clutter_blobs = 6;
    int blob_size = 6;
    double noise_amplitude = 0.05;
    std::uint64_t seed = 1;

    void validate() const {
        if (classes < 2) throw std::invalid_argument("SyntheticSpec: need at least 2 classes");
        if (glyph_size > image_size)
            throw std::invalid_argument("SyntheticSpec: glyph larger than image");
        if (classes > 8)
            throw std::invalid_argument("SyntheticSpec: at most 8 distinct glyphs available");
    }
};

struct Dataset {
    SyntheticSpec spec;
    std::vector<Sample> samples;

    int per_class() const { return static_cast<int>(samples.size()) / spec.classes; }
};

namespace detail {

// 12x12 binary glyph for class id (0-based): cross, ring, L, T, diamond,
// bars, checker, dot-grid. Scaled by nearest neighbor for other sizes.
inline std::vector<std::uint8_t> glyph_pattern(int cls, int g) {
    std::vector<std::uint8_t> p(static_cast<size_t>(g) * g, 0);
    auto at = [&](int y, int x) -> std::uint8_t& { return p[y * g + x]; };
    int mid0 = g / 2 - 1, mid1 = g / 2;
    switch (cls % 8) {
        case 0:  // cross
            for (int i = 0; i < g; ++i) {
                at(mid0, i) = at(mid1, i) = 1;
                at(i, mid0) = at(i, mid1) = 1;
            }
            break;
        case 1:  // ring
            for (int i = 1; i < g - 1; ++i) {
                at(1, i) = at(g - 2, i) = 1;
                at(i, 1) = at(i, g - 2) = 1;
            }
            break;
        case 2:  // L
            for (int i = 0; i < g; ++i) {
                at(i, 1) = at(i, 2) = 1;
                at(g - 2, i) = at(g - 1, i) = 1;
            }
            break;
        case 3:  // T
            for (int i = 0; i < g; ++i) {
                at(0, i) = at(1, i) = 1;
                at(i, mid0) = at(i, mid1) = 1;
            }
            break;
        case 4:  // diamond
            for (int y = 0; y < g; ++y)
                for (int x = 0; x < g; ++x) {
                    int d = std::abs(y - mid0) + std::abs(x - mid0);
                    if (d == mid1 || d == mid1 - 1) at(y, x) = 1;
                }
            break;
        case 5:  // vertical bars
            for (int y = 0; y < g; ++y)
                for (int x = 0; x < g; x += 3) at(y, x) = 1;
            break;
        case 6:  // checker
            for (int y = 0; y < g; ++y)
                for (int x = 0; x < g; ++x)
                    if (((y / 2) + (x / 2)) % 2 == 0) at(y, x) = 1;
            break;
        default:  // dot grid
            for (int y = 1; y < g; y += 3)
                for (int x = 1; x < g; x += 3) {
                    at(y, x) = 1;
                    if (y + 1 < g) at(y + 1, x) = 1;
                    if (x + 1 < g) at(y, x + 1) = 1;
                }
            break;
    }
    return p;
}

}  // namespace detail

// Deterministic under spec.seed: clutter background + class glyph at a
// random position + uniform noise; part_mask marks the glyph bounding box.
inline Dataset generate(const SyntheticSpec& spec, int n_per_class) {
    spec.validate();
    if (n_per_class < 1) throw std::invalid_argument("generate: n_per_class must be >= 1");
    Dataset ds;
    ds.spec = spec;
    const int sz = spec.image_size, g = spec.glyph_size, c = spec.channels;
    Rng rng(spec.seed);
    for (int cls = 0; cls < spec.classes; ++cls) {
        auto glyph = detail::glyph_pattern(cls, g);
        for (int s = 0; s < n_per_class; ++s) {
            std::vector<double> img(static_cast<size_t>(c) * sz * sz, 0.0);
            // clutter: distractor blobs shared across classes
            for (int b = 0; b < spec.clutter_blobs; ++b) {
                int by = rng.uniform_int(sz - spec.blob_size + 1);
                int bx = rng.uniform_int(sz - spec.blob_size + 1);
                double intensity = rng.uniform(0.3, 0.8);
                for (int y = 0; y < spec.blob_size; ++y)
                    for (int x = 0; x < spec.blob_size; ++x)
                        if (rng.uniform() < 0.5)
                            for (int ch = 0; ch < c; ++ch)
                                img[(ch * sz + by + y) * sz + bx + x] = intensity;
            }
            // glyph at a uniform random valid position
            int gy = rng.uniform_int(sz - g + 1);
            int gx = rng.uniform_int(sz - g + 1);
            for (int y = 0; y < g; ++y)
                for (int x = 0; x < g; ++x)
                    if (glyph[y * g + x])
                        for (int ch = 0; ch < c; ++ch) img[(ch * sz + gy + y) * sz + gx + x] = 1.0;
            // noise, clamped to [0,1]
            if (spec.noise_amplitude > 0)
                for (auto& v : img) {
                    v += rng.uniform(0.0, spec.noise_amplitude);
                    v = std::min(1.0, std::max(0.0, v));
                }
            Sample sample;
            sample.image = Tensor({c, sz, sz}, std::move(img));
            sample.label = cls + 1;
            sample.part_mask.assign(static_cast<size_t>(sz) * sz, 0);
            for (int y = 0; y < g; ++y)
                for (int x = 0; x < g; ++x) sample.part_mask[(gy + y) * sz + gx + x] = 1;
            ds.samples.push_back(std::move(sample));
        }
    }
    return ds;
}

// One tuple of sample indices; for Siamese pairs, same_class records whether
// the pair shares a label.
struct Tuple {
    std::vector<int> indices;
    bool same_class = false;
};

struct TupleBatch {
    Arch arch = Arch::triplet;
    std::vector<Tuple> tuples;
};

// anchor/positive same class (distinct samples); negatives from other
// classes; for quadruplet n1 and n2 come from two distinct non-anchor classes
inline TupleBatch sample_tuples(const Dataset& ds, Arch arch, int batch, std::uint64_t rng_seed,
                                const std::vector<int>& subset = {}) {
    std::vector<std::vector<int>> by_class(ds.spec.classes);
    if (subset.empty()) {
        for (int i = 0; i < static_cast<int>(ds.samples.size()); ++i)
            by_class[ds.samples[i].label - 1].push_back(i);
    } else {
        for (int i : subset) by_class[ds.samples[i].label - 1].push_back(i);
    }
    std::vector<int> usable;
    for (int c = 0; c < ds.spec.classes; ++c)
        if (!by_class[c].empty()) usable.push_back(c);
    int min_classes = arch == Arch::quadruplet ? 3 : 2;
    if (static_cast<int>(usable.size()) < min_classes)
        throw std::invalid_argument("sample_tuples: not enough classes");
    for (int c : usable)
        if (by_class[c].size() < 2)
            throw std::invalid_argument("sample_tuples: every class needs >= 2 samples");

    Rng rng(rng_seed);
    auto pick = [&](int cls) { return by_class[cls][rng.uniform_int(by_class[cls].size())]; };
    auto other_class = [&](int avoid1, int avoid2 = -1) {
        int c;
        do {
            c = usable[rng.uniform_int(static_cast<int>(usable.size()))];
        } while (c == avoid1 || c == avoid2);
        return c;
    };

    TupleBatch out;
    out.arch = arch;
    for (int t = 0; t < batch; ++t) {
        int ca = usable[rng.uniform_int(static_cast<int>(usable.size()))];
        int a = pick(ca);
        Tuple tup;
        switch (arch) {
            case Arch::siamese: {
                // alternate same/different pairs so both cases appear
                bool same = (t % 2 == 0);
                tup.same_class = same;
                int b;
                if (same) {
                    do { b = pick(ca); } while (b == a);
                } else {
                    b = pick(other_class(ca));
                }
                tup.indices = {a, b};
                break;
            }
            case Arch::triplet: {
                int p;
                do { p = pick(ca); } while (p == a);
                tup.indices = {a, p, pick(other_class(ca))};
                tup.same_class = true;
                break;
            }
            case Arch::quadruplet: {
                int p;
                do { p = pick(ca); } while (p == a);
                int c1 = other_class(ca);
                int c2 = other_class(ca, c1);
                tup.indices = {a, p, pick(c1), pick(c2)};
                tup.same_class = true;
                break;
            }
        }
        out.tuples.push_back(std::move(tup));
    }
    return out;
}

// ---------------------------------------------------------------------------
// SDATA1 file format
// ---------------------------------------------------------------------------

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open dataset for writing: " + path);
    auto w32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    out.write("SDATA1", 6);
    w32(static_cast<std::uint32_t>(ds.spec.classes));
    w32(static_cast<std::uint32_t>(ds.samples.size()));
    w32(static_cast<std::uint32_t>(ds.spec.image_size));
    w32(static_cast<std::uint32_t>(ds.spec.image_size));
    w32(static_cast<std::uint32_t>(ds.spec.channels));
    for (const auto& s : ds.samples) {
        w32(static_cast<std::uint32_t>(s.label));
        out.write(reinterpret_cast<const char*>(s.image.data().data()),
                  static_cast<std::streamsize>(s.image.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(s.part_mask.data()),
                  static_cast<std::streamsize>(s.part_mask.size()));
    }
    if (!out) throw std::runtime_error("dataset write failed: " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    char magic[6];
    in.read(magic, 6);
    if (!in || std::memcmp(magic, "SDATA1", 6) != 0)
        throw std::runtime_error("bad dataset magic: " + path);
    auto r32 = [&]() {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (!in) throw std::runtime_error("truncated dataset: " + path);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    Dataset ds;
    ds.spec.classes = static_cast<int>(r32());
    int n = static_cast<int>(r32());
    int h = static_cast<int>(r32());
    int w = static_cast<int>(r32());
    int c = static_cast<int>(r32());
    ds.spec.image_size = h;
    ds.spec.channels = c;
    for (int i = 0; i < n; ++i) {
        Sample s;
        s.label = static_cast<int>(r32());
        std::vector<double> img(static_cast<size_t>(c) * h * w);
        in.read(reinterpret_cast<char*>(img.data()),
                static_cast<std::streamsize>(img.size() * sizeof(double)));
        s.image = Tensor({c, h, w}, std::move(img));
        s.part_mask.resize(static_cast<size_t>(h) * w);
        in.read(reinterpret_cast<char*>(s.part_mask.data()),
                static_cast<std::streamsize>(s.part_mask.size()));
        if (!in) throw std::runtime_error("truncated dataset: " + path);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace simattn

#endif  // SIMATTN_DATA_HPP
