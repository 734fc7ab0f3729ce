#ifndef SIMATTN_OPS_HPP
#define SIMATTN_OPS_HPP

#include "simattn/tensor.hpp"

namespace simattn {

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!same_shape(a.shape(), b.shape()))
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.size());
    for (int i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return make_op("add", a.shape(), std::move(out), {a, b},
                   [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (int i = 0; i < a.size(); ++i) out[i] = c * a[i];
    return make_op("scale", a.shape(), std::move(out), {a},
                   [c](const Tensor& g) { return std::vector<Tensor>{scale(g, c)}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    for (int i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return make_op("sub", a.shape(), std::move(out), {a, b},
                   [](const Tensor& g) { return std::vector<Tensor>{g, scale(g, -1.0)}; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.size());
    for (int i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return make_op("mul", a.shape(), std::move(out), {a, b}, [a, b](const Tensor& g) {
        return std::vector<Tensor>{mul(g, b), mul(g, a)};
    });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (int i = 0; i < a.size(); ++i) out[i] = a[i] + c;
    return make_op("add_scalar", a.shape(), std::move(out), {a},
                   [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

// abs'(0) := 0 by convention; the sign mask is a constant w.r.t. the graph.
inline Tensor abs(const Tensor& a) {
    std::vector<double> out(a.size()), sgn(a.size());
    for (int i = 0; i < a.size(); ++i) {
        out[i] = std::fabs(a[i]);
        sgn[i] = a[i] > 0 ? 1.0 : (a[i] < 0 ? -1.0 : 0.0);
    }
    Tensor mask(a.shape(), std::move(sgn));
    return make_op("abs", a.shape(), std::move(out), {a},
                   [mask](const Tensor& g) { return std::vector<Tensor>{mul(g, mask)}; });
}

// relu'(0) := 0 by convention.
inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size()), m(a.size());
    for (int i = 0; i < a.size(); ++i) {
        out[i] = a[i] > 0 ? a[i] : 0.0;
        m[i] = a[i] > 0 ? 1.0 : 0.0;
    }
    Tensor mask(a.shape(), std::move(m));
    return make_op("relu", a.shape(), std::move(out), {a},
                   [mask](const Tensor& g) { return std::vector<Tensor>{mul(g, mask)}; });
}

inline Tensor one_minus(const Tensor& a) {
    std::vector<double> out(a.size());
    for (int i = 0; i < a.size(); ++i) out[i] = 1.0 - a[i];
    return make_op("one_minus", a.shape(), std::move(out), {a},
                   [](const Tensor& g) { return std::vector<Tensor>{scale(g, -1.0)}; });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    for (int i = 0; i < a.size(); ++i) {
        double x = a[i];
        out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    // grad recomputes sigma(a) from the input; capturing the output would
    // create a node -> grad_fn -> node ownership cycle
    return make_op("sigmoid", a.shape(), std::move(out), {a}, [a](const Tensor& g) {
        Tensor y = sigmoid(a);
        return std::vector<Tensor>{mul(g, mul(y, one_minus(y)))};
    });
}

inline Tensor recip(const Tensor& a) {
    std::vector<double> out(a.size());
    for (int i = 0; i < a.size(); ++i) {
        if (a[i] == 0.0) throw std::runtime_error("recip: division by zero");
        out[i] = 1.0 / a[i];
    }
    return make_op("recip", a.shape(), std::move(out), {a}, [a](const Tensor& g) {
        Tensor y = recip(a);
        return std::vector<Tensor>{scale(mul(g, mul(y, y)), -1.0)};
    });
}

// y = sqrt(x + eps), elementwise
inline Tensor sqrt_eps(const Tensor& a, double eps) {
    std::vector<double> out(a.size());
    for (int i = 0; i < a.size(); ++i) out[i] = std::sqrt(a[i] + eps);
    return make_op("sqrt_eps", a.shape(), std::move(out), {a}, [a, eps](const Tensor& g) {
        return std::vector<Tensor>{scale(mul(g, recip(sqrt_eps(a, eps))), 0.5)};
    });
}

// ---------------------------------------------------------------------------
// reductions and broadcasts
// ---------------------------------------------------------------------------

inline Tensor smul(const Tensor& s, const Tensor& v);

inline Tensor sum_all(const Tensor& a) {
    double total = 0.0;
    for (int i = 0; i < a.size(); ++i) total += a[i];
    Shape shape = a.shape();
    return make_op("sum_all", {1}, {total}, {a}, [shape](const Tensor& g) {
        return std::vector<Tensor>{smul(g, Tensor::full(shape, 1.0))};
    });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 1 || b.shape().size() != 1)
        throw std::invalid_argument("dot: rank-1 tensors required");
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double total = 0.0;
    for (int i = 0; i < a.size(); ++i) total += a[i] * b[i];
    return make_op("dot", {1}, {total}, {a, b}, [a, b](const Tensor& g) {
        return std::vector<Tensor>{smul(g, b), smul(g, a)};
    });
}

// broadcast-multiply a scalar tensor over v
inline Tensor smul(const Tensor& s, const Tensor& v) {
    if (s.size() != 1) throw std::invalid_argument("smul: first argument must be scalar");
    double c = s[0];
    std::vector<double> out(v.size());
    for (int i = 0; i < v.size(); ++i) out[i] = c * v[i];
    return make_op("smul", v.shape(), std::move(out), {s, v}, [s, v](const Tensor& g) {
        return std::vector<Tensor>{sum_all(mul(g, v)), smul(s, g)};
    });
}

// max over all entries; ties route to the first index in row-major order
inline Tensor put_at(const Tensor& s, int index, Shape shape);

inline Tensor take_at(const Tensor& a, int index) {
    if (index < 0 || index >= a.size()) throw std::invalid_argument("take_at: index out of range");
    Shape shape = a.shape();
    return make_op("take_at", {1}, {a[index]}, {a}, [index, shape](const Tensor& g) {
        return std::vector<Tensor>{put_at(g, index, shape)};
    });
}

inline Tensor put_at(const Tensor& s, int index, Shape shape) {
    if (s.size() != 1) throw std::invalid_argument("put_at: scalar required");
    std::vector<double> out(numel(shape), 0.0);
    out[index] = s[0];
    return make_op("put_at", shape, std::move(out), {s}, [index](const Tensor& g) {
        return std::vector<Tensor>{take_at(g, index)};
    });
}

inline Tensor reduce_max(const Tensor& a) {
    int arg = 0;
    for (int i = 1; i < a.size(); ++i)
        if (a[i] > a[arg]) arg = i;
    return take_at(a, arg);
}

// ---------------------------------------------------------------------------
// matrix / vector
// ---------------------------------------------------------------------------

inline Tensor matvec_t(const Tensor& w, const Tensor& u);
inline Tensor outer(const Tensor& a, const Tensor& b);

// w: [r x c], v: [c] -> [r]
inline Tensor matvec(const Tensor& w, const Tensor& v) {
    if (w.shape().size() != 2 || v.shape().size() != 1 || w.shape()[1] != v.shape()[0])
        throw std::invalid_argument("matvec: shape mismatch");
    int r = w.shape()[0], c = w.shape()[1];
    std::vector<double> out(r, 0.0);
    for (int i = 0; i < r; ++i) {
        double acc = 0.0;
        for (int j = 0; j < c; ++j) acc += w[i * c + j] * v[j];
        out[i] = acc;
    }
    return make_op("matvec", {r}, std::move(out), {w, v}, [w, v](const Tensor& g) {
        return std::vector<Tensor>{outer(g, v), matvec_t(w, g)};
    });
}

// w: [r x c], u: [r] -> [c]  (w^T u)
inline Tensor matvec_t(const Tensor& w, const Tensor& u) {
    if (w.shape().size() != 2 || u.shape().size() != 1 || w.shape()[0] != u.shape()[0])
        throw std::invalid_argument("matvec_t: shape mismatch");
    int r = w.shape()[0], c = w.shape()[1];
    std::vector<double> out(c, 0.0);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[j] += w[i * c + j] * u[i];
    return make_op("matvec_t", {c}, std::move(out), {w, u}, [w, u](const Tensor& g) {
        return std::vector<Tensor>{outer(u, g), matvec(w, g)};
    });
}

// a: [r], b: [c] -> [r x c]
inline Tensor outer(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 1 || b.shape().size() != 1)
        throw std::invalid_argument("outer: rank-1 tensors required");
    int r = a.size(), c = b.size();
    std::vector<double> out(r * c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[i * c + j] = a[i] * b[j];
    return make_op("outer", {r, c}, std::move(out), {a, b}, [a, b](const Tensor& g) {
        return std::vector<Tensor>{matvec(g, b), matvec_t(g, a)};
    });
}

// ---------------------------------------------------------------------------
// convolution (cross-correlation) and its adjoints
// ---------------------------------------------------------------------------

inline Tensor conv2d_dx(const Tensor& gy, const Tensor& w, int stride, int pad, int in_h, int in_w);
inline Tensor conv2d_dw(const Tensor& x, const Tensor& gy, int stride, int pad, int k);
inline Tensor spatial_sum(const Tensor& a);
inline Tensor broadcast_spatial(const Tensor& v, int m, int n);

// x: [ci x h x w], w: [co x ci x k x k], b: [co] or undefined -> [co x h' x w']
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.shape().size() != 3 || w.shape().size() != 4)
        throw std::invalid_argument("conv2d: rank mismatch");
    int ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
    int co = w.shape()[0], k = w.shape()[2];
    if (w.shape()[1] != ci || w.shape()[3] != k)
        throw std::invalid_argument("conv2d: weight shape mismatch");
    if (k > h + 2 * pad || k > wd + 2 * pad)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (b.defined() && (b.shape().size() != 1 || b.shape()[0] != co))
        throw std::invalid_argument("conv2d: bias shape mismatch");
    int oh = (h + 2 * pad - k) / stride + 1;
    int ow = (wd + 2 * pad - k) / stride + 1;
    std::vector<double> out(static_cast<size_t>(co) * oh * ow, 0.0);
    const double* xd = x.data().data();
    const double* wt = w.data().data();
    // per-tap valid output ranges keep the inner loops branch-free
    auto lo = [&](int kk, int) { return std::max(0, (pad - kk + stride - 1) / stride); };
    auto hi = [&](int kk, int dim) {
        int num = (dim == 0 ? h : wd) - 1 + pad - kk;
        if (num < 0) return -1;  // empty range
        return std::min((dim == 0 ? oh : ow) - 1, num / stride);
    };
    for (int oc = 0; oc < co; ++oc) {
        if (b.defined()) {
            double bias = b[oc];
            std::fill(out.begin() + static_cast<size_t>(oc) * oh * ow,
                      out.begin() + static_cast<size_t>(oc + 1) * oh * ow, bias);
        }
        for (int ic = 0; ic < ci; ++ic) {
            const double* xp = xd + static_cast<size_t>(ic) * h * wd;
            const double* wp = wt + (static_cast<size_t>(oc) * ci + ic) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                int oy0 = lo(ky, 0), oy1 = hi(ky, 0);
                for (int kx = 0; kx < k; ++kx) {
                    int ox0 = lo(kx, 1), ox1 = hi(kx, 1);
                    double wv = wp[ky * k + kx];
                    if (wv == 0.0) continue;
                    for (int oy = oy0; oy <= oy1; ++oy) {
                        const double* __restrict__ xrow = xp + (oy * stride - pad + ky) * wd - pad + kx;
                        double* __restrict__ orow = out.data() + (static_cast<size_t>(oc) * oh + oy) * ow;
                        if (stride == 1) {
                            for (int ox = ox0; ox <= ox1; ++ox) orow[ox] += wv * xrow[ox];
                        } else {
                            for (int ox = ox0; ox <= ox1; ++ox)
                                orow[ox] += wv * xrow[ox * stride];
                        }
                    }
                }
            }
        }
    }
    std::vector<Tensor> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    bool has_bias = b.defined();
    return make_op("conv2d", {co, oh, ow}, std::move(out), std::move(inputs),
                   [x, w, stride, pad, h, wd, k, has_bias](const Tensor& g) {
                       std::vector<Tensor> grads{conv2d_dx(g, w, stride, pad, h, wd),
                                                 conv2d_dw(x, g, stride, pad, k)};
                       if (has_bias) grads.push_back(spatial_sum(g));
                       return grads;
                   });
}

// adjoint of conv2d w.r.t. its input: gy: [co x oh x ow] -> [ci x h x w]
inline Tensor conv2d_dx(const Tensor& gy, const Tensor& w, int stride, int pad, int in_h,
                        int in_w) {
    int co = gy.shape()[0], oh = gy.shape()[1], ow = gy.shape()[2];
    int ci = w.shape()[1], k = w.shape()[2];
    std::vector<double> out(static_cast<size_t>(ci) * in_h * in_w, 0.0);
    const double* gd = gy.data().data();
    const double* wd = w.data().data();
    auto lo = [&](int kk) { return std::max(0, (pad - kk + stride - 1) / stride); };
    auto hi = [&](int kk, int in_dim, int out_dim) {
        int num = in_dim - 1 + pad - kk;
        if (num < 0) return -1;
        return std::min(out_dim - 1, num / stride);
    };
    for (int oc = 0; oc < co; ++oc) {
        for (int ic = 0; ic < ci; ++ic) {
            double* xp = out.data() + static_cast<size_t>(ic) * in_h * in_w;
            const double* wp = wd + (static_cast<size_t>(oc) * ci + ic) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                int oy0 = lo(ky), oy1 = hi(ky, in_h, oh);
                for (int kx = 0; kx < k; ++kx) {
                    int ox0 = lo(kx), ox1 = hi(kx, in_w, ow);
                    double wv = wp[ky * k + kx];
                    if (wv == 0.0) continue;
                    for (int oy = oy0; oy <= oy1; ++oy) {
                        const double* __restrict__ grow = gd + (static_cast<size_t>(oc) * oh + oy) * ow;
                        double* __restrict__ xrow = xp + (oy * stride - pad + ky) * in_w - pad + kx;
                        if (stride == 1) {
                            for (int ox = ox0; ox <= ox1; ++ox) xrow[ox] += wv * grow[ox];
                        } else {
                            for (int ox = ox0; ox <= ox1; ++ox)
                                xrow[ox * stride] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    }
    return make_op("conv2d_dx", {ci, in_h, in_w}, std::move(out), {gy, w},
                   [gy, w, stride, pad, k](const Tensor& u) {
                       return std::vector<Tensor>{conv2d(u, w, Tensor(), stride, pad),
                                                  conv2d_dw(u, gy, stride, pad, k)};
                   });
}

// adjoint of conv2d w.r.t. its weights: -> [co x ci x k x k]
inline Tensor conv2d_dw(const Tensor& x, const Tensor& gy, int stride, int pad, int k) {
    int ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
    int co = gy.shape()[0], oh = gy.shape()[1], ow = gy.shape()[2];
    std::vector<double> out(static_cast<size_t>(co) * ci * k * k, 0.0);
    const double* xd = x.data().data();
    const double* gd = gy.data().data();
    auto lo = [&](int kk) { return std::max(0, (pad - kk + stride - 1) / stride); };
    auto hi = [&](int kk, int in_dim, int out_dim) {
        int num = in_dim - 1 + pad - kk;
        if (num < 0) return -1;
        return std::min(out_dim - 1, num / stride);
    };
    for (int oc = 0; oc < co; ++oc) {
        for (int ic = 0; ic < ci; ++ic) {
            const double* xp = xd + static_cast<size_t>(ic) * h * wd;
            double* wp = out.data() + (static_cast<size_t>(oc) * ci + ic) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                int oy0 = lo(ky), oy1 = hi(ky, h, oh);
                for (int kx = 0; kx < k; ++kx) {
                    int ox0 = lo(kx), ox1 = hi(kx, wd, ow);
                    double acc = 0.0;
                    for (int oy = oy0; oy <= oy1; ++oy) {
                        const double* __restrict__ grow = gd + (static_cast<size_t>(oc) * oh + oy) * ow;
                        const double* __restrict__ xrow = xp + (oy * stride - pad + ky) * wd - pad + kx;
                        if (stride == 1) {
                            for (int ox = ox0; ox <= ox1; ++ox) acc += grow[ox] * xrow[ox];
                        } else {
                            for (int ox = ox0; ox <= ox1; ++ox) acc += grow[ox] * xrow[ox * stride];
                        }
                    }
                    wp[ky * k + kx] += acc;
                }
            }
        }
    }
    int in_h = h, in_w = wd;
    return make_op("conv2d_dw", {co, ci, k, k}, std::move(out), {x, gy},
                   [x, gy, stride, pad, in_h, in_w](const Tensor& u) {
                       return std::vector<Tensor>{conv2d_dx(gy, u, stride, pad, in_h, in_w),
                                                  conv2d(x, u, Tensor(), stride, pad)};
                   });
}

// [c x m x n] -> [c], sum over each spatial plane
inline Tensor spatial_sum(const Tensor& a) {
    if (a.shape().size() != 3) throw std::invalid_argument("spatial_sum: rank-3 tensor required");
    int c = a.shape()[0], m = a.shape()[1], n = a.shape()[2];
    std::vector<double> out(c, 0.0);
    for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int i = 0; i < m * n; ++i) acc += a[ch * m * n + i];
        out[ch] = acc;
    }
    return make_op("spatial_sum", {c}, std::move(out), {a}, [m, n](const Tensor& g) {
        return std::vector<Tensor>{broadcast_spatial(g, m, n)};
    });
}

// [c] -> [c x m x n]
inline Tensor broadcast_spatial(const Tensor& v, int m, int n) {
    if (v.shape().size() != 1) throw std::invalid_argument("broadcast_spatial: rank-1 required");
    int c = v.size();
    std::vector<double> out(static_cast<size_t>(c) * m * n);
    for (int ch = 0; ch < c; ++ch)
        std::fill(out.begin() + static_cast<size_t>(ch) * m * n,
                  out.begin() + static_cast<size_t>(ch + 1) * m * n, v[ch]);
    return make_op("broadcast_spatial", {c, m, n}, std::move(out), {v}, [](const Tensor& g) {
        return std::vector<Tensor>{spatial_sum(g)};
    });
}

// per-channel spatial mean: [c x m x n] -> [c]
inline Tensor global_avg(const Tensor& a) {
    int m = a.shape()[1], n = a.shape()[2];
    return scale(spatial_sum(a), 1.0 / (m * n));
}

// ---------------------------------------------------------------------------
// 2x2 pooling
// ---------------------------------------------------------------------------

inline Tensor pool_gather(const Tensor& a, std::shared_ptr<std::vector<int>> idx, Shape out_shape);
inline Tensor pool_scatter(const Tensor& g, std::shared_ptr<std::vector<int>> idx, Shape in_shape);

// max over disjoint 2x2 windows; ties route to the first index row-major
inline Tensor maxpool2x2(const Tensor& a) {
    if (a.shape().size() != 3) throw std::invalid_argument("maxpool2x2: rank-3 tensor required");
    int c = a.shape()[0], m = a.shape()[1], n = a.shape()[2];
    if (m % 2 != 0 || n % 2 != 0)
        throw std::invalid_argument("maxpool2x2: odd spatial dimensions");
    int om = m / 2, on = n / 2;
    std::vector<double> out(static_cast<size_t>(c) * om * on);
    auto idx = std::make_shared<std::vector<int>>(out.size());
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < om; ++oy) {
            for (int ox = 0; ox < on; ++ox) {
                int best = -1;
                double bv = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        int fi = (ch * m + oy * 2 + dy) * n + ox * 2 + dx;
                        if (best < 0 || a[fi] > bv) { best = fi; bv = a[fi]; }
                    }
                int oi = (ch * om + oy) * on + ox;
                out[oi] = bv;
                (*idx)[oi] = best;
            }
        }
    }
    Shape in_shape = a.shape();
    return make_op("maxpool2x2", {c, om, on}, std::move(out), {a},
                   [idx, in_shape](const Tensor& g) {
                       return std::vector<Tensor>{pool_scatter(g, idx, in_shape)};
                   });
}

inline Tensor pool_scatter(const Tensor& g, std::shared_ptr<std::vector<int>> idx, Shape in_shape) {
    std::vector<double> out(numel(in_shape), 0.0);
    for (int i = 0; i < g.size(); ++i) out[(*idx)[i]] += g[i];
    Shape g_shape = g.shape();
    return make_op("pool_scatter", in_shape, std::move(out), {g},
                   [idx, g_shape](const Tensor& u) {
                       return std::vector<Tensor>{pool_gather(u, idx, g_shape)};
                   });
}

inline Tensor pool_gather(const Tensor& a, std::shared_ptr<std::vector<int>> idx, Shape out_shape) {
    std::vector<double> out(numel(out_shape));
    for (size_t i = 0; i < out.size(); ++i) out[i] = a[(*idx)[i]];
    Shape in_shape = a.shape();
    return make_op("pool_gather", out_shape, std::move(out), {a},
                   [idx, in_shape](const Tensor& u) {
                       return std::vector<Tensor>{pool_scatter(u, idx, in_shape)};
                   });
}

inline Tensor avg_unpool2x2(const Tensor& g, int m, int n);

inline Tensor avgpool2x2(const Tensor& a) {
    if (a.shape().size() != 3) throw std::invalid_argument("avgpool2x2: rank-3 tensor required");
    int c = a.shape()[0], m = a.shape()[1], n = a.shape()[2];
    if (m % 2 != 0 || n % 2 != 0)
        throw std::invalid_argument("avgpool2x2: odd spatial dimensions");
    int om = m / 2, on = n / 2;
    std::vector<double> out(static_cast<size_t>(c) * om * on);
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < om; ++oy)
            for (int ox = 0; ox < on; ++ox) {
                double acc = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        acc += a[(ch * m + oy * 2 + dy) * n + ox * 2 + dx];
                out[(ch * om + oy) * on + ox] = acc * 0.25;
            }
    return make_op("avgpool2x2", {c, om, on}, std::move(out), {a}, [m, n](const Tensor& g) {
        return std::vector<Tensor>{avg_unpool2x2(g, m, n)};
    });
}

inline Tensor avg_unpool2x2(const Tensor& g, int m, int n) {
    int c = g.shape()[0], om = g.shape()[1], on = g.shape()[2];
    std::vector<double> out(static_cast<size_t>(c) * m * n);
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < om; ++oy)
            for (int ox = 0; ox < on; ++ox) {
                double v = g[(ch * om + oy) * on + ox] * 0.25;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        out[(ch * m + oy * 2 + dy) * n + ox * 2 + dx] = v;
            }
    return make_op("avg_unpool2x2", {c, m, n}, std::move(out), {g}, [](const Tensor& u) {
        return std::vector<Tensor>{avgpool2x2(u)};
    });
}

// ---------------------------------------------------------------------------
// channel combine / plane ops (Eq.-1 style contractions)
// ---------------------------------------------------------------------------

inline Tensor plane_dot(const Tensor& a, const Tensor& p);
inline Tensor channel_broadcast_mul(const Tensor& alpha, const Tensor& p);

// sum_k alpha_k * A_k : alpha [c], A [c x m x n] -> [m x n]
inline Tensor channel_weighted_sum(const Tensor& alpha, const Tensor& a) {
    if (alpha.shape().size() != 1 || a.shape().size() != 3 || alpha.size() != a.shape()[0])
        throw std::invalid_argument("channel_weighted_sum: shape mismatch");
    int c = a.shape()[0], m = a.shape()[1], n = a.shape()[2];
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    for (int ch = 0; ch < c; ++ch) {
        double w = alpha[ch];
        for (int i = 0; i < m * n; ++i) out[i] += w * a[ch * m * n + i];
    }
    return make_op("channel_weighted_sum", {m, n}, std::move(out), {alpha, a},
                   [alpha, a](const Tensor& g) {
                       return std::vector<Tensor>{plane_dot(a, g), channel_broadcast_mul(alpha, g)};
                   });
}

// y_k = <A_k, P> : A [c x m x n], P [m x n] -> [c]
inline Tensor plane_dot(const Tensor& a, const Tensor& p) {
    int c = a.shape()[0], m = a.shape()[1], n = a.shape()[2];
    if (p.shape().size() != 2 || p.shape()[0] != m || p.shape()[1] != n)
        throw std::invalid_argument("plane_dot: shape mismatch");
    std::vector<double> out(c, 0.0);
    for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int i = 0; i < m * n; ++i) acc += a[ch * m * n + i] * p[i];
        out[ch] = acc;
    }
    return make_op("plane_dot", {c}, std::move(out), {a, p}, [a, p](const Tensor& u) {
        return std::vector<Tensor>{channel_broadcast_mul(u, p), channel_weighted_sum(u, a)};
    });
}

// B_k = alpha_k * P : alpha [c], P [m x n] -> [c x m x n]
inline Tensor channel_broadcast_mul(const Tensor& alpha, const Tensor& p) {
    int c = alpha.size(), m = p.shape()[0], n = p.shape()[1];
    std::vector<double> out(static_cast<size_t>(c) * m * n);
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < m * n; ++i) out[ch * m * n + i] = alpha[ch] * p[i];
    return make_op("channel_broadcast_mul", {c, m, n}, std::move(out), {alpha, p},
                   [alpha, p](const Tensor& u) {
                       return std::vector<Tensor>{plane_dot(u, p), channel_weighted_sum(alpha, u)};
                   });
}

inline Tensor channel_dotsum(const Tensor& x, const Tensor& u);

// B_k = x_k (.) P : x [c x H x W], P [H x W] -> [c x H x W]
inline Tensor plane_mul(const Tensor& x, const Tensor& p) {
    int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (p.shape().size() != 2 || p.shape()[0] != h || p.shape()[1] != w)
        throw std::invalid_argument("plane_mul: shape mismatch");
    std::vector<double> out(x.size());
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h * w; ++i) out[ch * h * w + i] = x[ch * h * w + i] * p[i];
    return make_op("plane_mul", x.shape(), std::move(out), {x, p}, [x, p](const Tensor& g) {
        return std::vector<Tensor>{plane_mul(g, p), channel_dotsum(x, g)};
    });
}

// y = sum_k x_k (.) U_k : both [c x H x W] -> [H x W]
inline Tensor channel_dotsum(const Tensor& x, const Tensor& u) {
    require_same_shape("channel_dotsum", x, u);
    int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    std::vector<double> out(static_cast<size_t>(h) * w, 0.0);
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h * w; ++i) out[i] += x[ch * h * w + i] * u[ch * h * w + i];
    return make_op("channel_dotsum", {h, w}, std::move(out), {x, u}, [x, u](const Tensor& g) {
        return std::vector<Tensor>{plane_mul(u, g), plane_mul(x, g)};
    });
}

// ---------------------------------------------------------------------------
// bilinear upsampling (corner-aligned) and its adjoint
// ---------------------------------------------------------------------------

struct BilinearTap {
    int i0, i1;
    double w0, w1;
};

inline std::vector<BilinearTap> bilinear_taps(int src, int dst) {
    std::vector<BilinearTap> taps(dst);
    for (int o = 0; o < dst; ++o) {
        double pos = dst > 1 ? static_cast<double>(o) * (src - 1) / (dst - 1) : 0.0;
        int i0 = static_cast<int>(pos);
        if (i0 >= src - 1) i0 = src - 1;
        int i1 = std::min(i0 + 1, src - 1);
        double f = pos - i0;
        taps[o] = {i0, i1, 1.0 - f, f};
    }
    return taps;
}

inline Tensor upsample_adj(const Tensor& g, int m, int n);

// P [m x n] -> [H x W]
inline Tensor upsample_bilinear(const Tensor& p, int out_h, int out_w) {
    if (p.shape().size() != 2) throw std::invalid_argument("upsample_bilinear: rank-2 required");
    int m = p.shape()[0], n = p.shape()[1];
    auto ty = bilinear_taps(m, out_h);
    auto tx = bilinear_taps(n, out_w);
    std::vector<double> out(static_cast<size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const auto& a = ty[y];
            const auto& b = tx[x];
            out[y * out_w + x] = a.w0 * (b.w0 * p[a.i0 * n + b.i0] + b.w1 * p[a.i0 * n + b.i1]) +
                                 a.w1 * (b.w0 * p[a.i1 * n + b.i0] + b.w1 * p[a.i1 * n + b.i1]);
        }
    return make_op("upsample_bilinear", {out_h, out_w}, std::move(out), {p},
                   [m, n](const Tensor& g) {
                       return std::vector<Tensor>{upsample_adj(g, m, n)};
                   });
}

inline Tensor upsample_adj(const Tensor& g, int m, int n) {
    int gh = g.shape()[0], gw = g.shape()[1];
    auto ty = bilinear_taps(m, gh);
    auto tx = bilinear_taps(n, gw);
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x) {
            const auto& a = ty[y];
            const auto& b = tx[x];
            double v = g[y * gw + x];
            out[a.i0 * n + b.i0] += a.w0 * b.w0 * v;
            out[a.i0 * n + b.i1] += a.w0 * b.w1 * v;
            out[a.i1 * n + b.i0] += a.w1 * b.w0 * v;
            out[a.i1 * n + b.i1] += a.w1 * b.w1 * v;
        }
    return make_op("upsample_adj", {m, n}, std::move(out), {g}, [gh, gw](const Tensor& u) {
        return std::vector<Tensor>{upsample_bilinear(u, gh, gw)};
    });
}

// ---------------------------------------------------------------------------
// composite helpers
// ---------------------------------------------------------------------------

// sqrt(sum (a-b)^2 + eps); eps keeps the gradient defined at a == b
inline Tensor l2_distance(const Tensor& a, const Tensor& b, double eps = 1e-12) {
    if (a.shape().size() != 1 || b.shape().size() != 1 || a.size() != b.size())
        throw std::invalid_argument("l2_distance: equal-length rank-1 tensors required");
    Tensor d = sub(a, b);
    return sqrt_eps(sum_all(mul(d, d)), eps);
}

}  // namespace simattn

#endif  // SIMATTN_OPS_HPP
