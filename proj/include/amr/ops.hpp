#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "amr/gemm.hpp"
#include "amr/graph.hpp"

namespace amr::tc {

// ---------- broadcast plumbing ----------

inline std::vector<long long> row_major_strides_ll(const Shape& s) {
    std::vector<long long> st(s.size());
    long long acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[static_cast<std::size_t>(i)] = acc;
        acc *= s[static_cast<std::size_t>(i)];
    }
    return st;
}

// Per-output-dimension flat strides into an input of shape `in`, right-aligned
// numpy style; 0 where the input broadcasts.
inline std::vector<long long> map_strides(const Shape& out, const Shape& in) {
    const std::size_t r = out.size();
    std::vector<long long> st(r, 0);
    Shape in_strides = row_major_strides(in);
    const std::size_t off = r - in.size();
    for (std::size_t d = 0; d < in.size(); ++d) {
        if (in[d] != 1 && in[d] != out[off + d])
            throw ShapeError("broadcast: dim mismatch " + shape_str(in) + " vs " + shape_str(out));
        st[off + d] = in[d] == 1 ? 0 : in_strides[d];
    }
    return st;
}

// Odometer walk over `out` in row-major order calling f(i_out, off_a, off_b).
template <class F>
inline void walk2(const Shape& out, const std::vector<long long>& sa,
                  const std::vector<long long>& sb, F&& f) {
    const std::size_t n = shape_numel(out);
    const int r = static_cast<int>(out.size());
    if (r == 0) {
        if (n) f(std::size_t{0}, 0LL, 0LL);
        return;
    }
    std::vector<int> c(static_cast<std::size_t>(r), 0);
    long long ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (int d = r - 1; d >= 0; --d) {
            ++c[static_cast<std::size_t>(d)];
            ia += sa[static_cast<std::size_t>(d)];
            ib += sb[static_cast<std::size_t>(d)];
            if (c[static_cast<std::size_t>(d)] < out[static_cast<std::size_t>(d)]) break;
            ia -= sa[static_cast<std::size_t>(d)] * out[static_cast<std::size_t>(d)];
            ib -= sb[static_cast<std::size_t>(d)] * out[static_cast<std::size_t>(d)];
            c[static_cast<std::size_t>(d)] = 0;
        }
    }
}

// Sum g down to `target` (inverse of broadcasting).
template <class T>
Array<T> reduce_to_shape(const Array<T>& g, const Shape& target) {
    if (g.shape == target) return g;
    Array<T> out(target);
    auto st = map_strides(g.shape, target);
    std::vector<long long> self = row_major_strides_ll(g.shape);
    walk2(g.shape, self, st, [&](std::size_t i, long long, long long t) {
        out[static_cast<std::size_t>(t)] += g[i];
    });
    return out;
}

// ---------- elementwise ----------

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
    const auto& av = g.val(a);
    const auto& bv = g.val(b);
    const bool ng = g.wants_grad(a) || g.wants_grad(b);
    if (av.same_shape(bv)) {
        Array<T> out(av.shape);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
        return g.record(std::move(out), ng, [a, b](Graph<T>& gg, const Array<T>& gout) {
            gg.add_grad(a, gout);
            gg.add_grad(b, gout);
        });
    }
    Shape os = broadcast_shape(av.shape, bv.shape, "add");
    Array<T> out(os);
    auto sa = map_strides(os, av.shape);
    auto sb = map_strides(os, bv.shape);
    walk2(os, sa, sb, [&](std::size_t i, long long ia, long long ib) {
        out[i] = av[static_cast<std::size_t>(ia)] + bv[static_cast<std::size_t>(ib)];
    });
    return g.record(std::move(out), ng, [a, b, os, sa, sb](Graph<T>& gg, const Array<T>& gout) {
        if (gg.wants_grad(a)) {
            Array<T>& ga = gg.grad_buf(a);
            walk2(os, sa, sb, [&](std::size_t i, long long ia, long long) {
                ga[static_cast<std::size_t>(ia)] += gout[i];
            });
        }
        if (gg.wants_grad(b)) {
            Array<T>& gb = gg.grad_buf(b);
            walk2(os, sa, sb, [&](std::size_t i, long long, long long ib) {
                gb[static_cast<std::size_t>(ib)] += gout[i];
            });
        }
    });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
    const auto& av = g.val(a);
    const auto& bv = g.val(b);
    const bool ng = g.wants_grad(a) || g.wants_grad(b);
    if (av.same_shape(bv)) {
        Array<T> out(av.shape);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
        return g.record(std::move(out), ng, [a, b](Graph<T>& gg, const Array<T>& gout) {
            const auto& av2 = gg.val(a);
            const auto& bv2 = gg.val(b);
            if (gg.wants_grad(a)) {
                Array<T>& ga = gg.grad_buf(a);
                for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * bv2[i];
            }
            if (gg.wants_grad(b)) {
                Array<T>& gb = gg.grad_buf(b);
                for (std::size_t i = 0; i < gout.size(); ++i) gb[i] += gout[i] * av2[i];
            }
        });
    }
    Shape os = broadcast_shape(av.shape, bv.shape, "mul");
    Array<T> out(os);
    auto sa = map_strides(os, av.shape);
    auto sb = map_strides(os, bv.shape);
    walk2(os, sa, sb, [&](std::size_t i, long long ia, long long ib) {
        out[i] = av[static_cast<std::size_t>(ia)] * bv[static_cast<std::size_t>(ib)];
    });
    return g.record(std::move(out), ng, [a, b, os, sa, sb](Graph<T>& gg, const Array<T>& gout) {
        const auto& av2 = gg.val(a);
        const auto& bv2 = gg.val(b);
        if (gg.wants_grad(a)) {
            Array<T>& ga = gg.grad_buf(a);
            walk2(os, sa, sb, [&](std::size_t i, long long ia, long long ib) {
                ga[static_cast<std::size_t>(ia)] += gout[i] * bv2[static_cast<std::size_t>(ib)];
            });
        }
        if (gg.wants_grad(b)) {
            Array<T>& gb = gg.grad_buf(b);
            walk2(os, sa, sb, [&](std::size_t i, long long ia, long long ib) {
                gb[static_cast<std::size_t>(ib)] += gout[i] * av2[static_cast<std::size_t>(ia)];
            });
        }
    });
}

// a*x + b, elementwise with scalar constants; covers negation and (1 - x)
template <class T>
Var scalar_affine(Graph<T>& g, Var x, double a, double b) {
    const auto& xv = g.val(x);
    Array<T> out(xv.shape);
    const T ta = static_cast<T>(a), tb = static_cast<T>(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta * xv[i] + tb;
    return g.record(std::move(out), g.wants_grad(x), [x, ta](Graph<T>& gg, const Array<T>& gout) {
        if (!gg.wants_grad(x)) return;
        Array<T>& gx = gg.grad_buf(x);
        for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += ta * gout[i];
    });
}

template <class T>
Var sub(Graph<T>& g, Var a, Var b) {
    return add(g, a, scalar_affine(g, b, -1.0, 0.0));
}

template <class T>
Var relu(Graph<T>& g, Var x) {
    const auto& xv = g.val(x);
    Array<T> out(xv.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
    return g.record(std::move(out), g.wants_grad(x), [x](Graph<T>& gg, const Array<T>& gout) {
        if (!gg.wants_grad(x)) return;
        const auto& xv2 = gg.val(x);
        Array<T>& gx = gg.grad_buf(x);
        for (std::size_t i = 0; i < gout.size(); ++i)
            if (xv2[i] > T(0)) gx[i] += gout[i];
    });
}

template <class T>
Var sigmoid(Graph<T>& g, Var x) {
    const auto& xv = g.val(x);
    Array<T> out(xv.shape);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = xv[i];
        out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                           : std::exp(v) / (T(1) + std::exp(v));
    }
    return g.record(std::move(out), g.wants_grad(x), [x](Graph<T>& gg, const Array<T>& gout) {
        if (!gg.wants_grad(x)) return;
        const auto& xv2 = gg.val(x);
        Array<T>& gx = gg.grad_buf(x);
        for (std::size_t i = 0; i < gout.size(); ++i) {
            const T v = xv2[i];
            const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                  : std::exp(v) / (T(1) + std::exp(v));
            gx[i] += gout[i] * s * (T(1) - s);
        }
    });
}

// ---------- shape ops ----------

template <class T>
Var reshape(Graph<T>& g, Var x, Shape ns) {
    const auto& xv = g.val(x);
    if (shape_numel(ns) != xv.size())
        throw ShapeError("reshape: cannot view " + shape_str(xv.shape) + " as " + shape_str(ns));
    Array<T> out;
    out.shape = std::move(ns);
    out.v = xv.v;
    return g.record(std::move(out), g.wants_grad(x), [x](Graph<T>& gg, const Array<T>& gout) {
        if (!gg.wants_grad(x)) return;
        Array<T>& gx = gg.grad_buf(x);
        for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i];
    });
}

template <class T>
Var permute(Graph<T>& g, Var x, const std::vector<int>& perm) {
    const auto& xv = g.val(x);
    const int r = xv.rank();
    if (static_cast<int>(perm.size()) != r)
        throw ShapeError("permute: axes list rank mismatch for " + shape_str(xv.shape));
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int p : perm) {
        if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)])
            throw ShapeError("permute: invalid axes for " + shape_str(xv.shape));
        seen[static_cast<std::size_t>(p)] = true;
    }
    Shape os(static_cast<std::size_t>(r));
    for (int d = 0; d < r; ++d) os[static_cast<std::size_t>(d)] = xv.shape[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
    auto xst = row_major_strides_ll(xv.shape);
    std::vector<long long> src(static_cast<std::size_t>(r));
    for (int d = 0; d < r; ++d) src[static_cast<std::size_t>(d)] = xst[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
    Array<T> out(os);
    auto self = row_major_strides_ll(os);
    walk2(os, self, src, [&](std::size_t i, long long, long long ix) {
        out[i] = xv[static_cast<std::size_t>(ix)];
    });
    return g.record(std::move(out), g.wants_grad(x),
                    [x, os, self, src](Graph<T>& gg, const Array<T>& gout) {
                        if (!gg.wants_grad(x)) return;
                        Array<T>& gx = gg.grad_buf(x);
                        walk2(os, self, src, [&](std::size_t i, long long, long long ix) {
                            gx[static_cast<std::size_t>(ix)] += gout[i];
                        });
                    });
}

template <class T>
Var concat(Graph<T>& g, const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw InvalidArgument("concat: empty input list");
    const auto& first = g.val(parts[0]);
    const int r = first.rank();
    if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range for " + shape_str(first.shape));
    Shape os = first.shape;
    bool ng = false;
    int total = 0;
    for (Var p : parts) {
        const auto& pv = g.val(p);
        if (pv.rank() != r) throw ShapeError("concat: rank mismatch " + shape_str(pv.shape));
        for (int d = 0; d < r; ++d)
            if (d != axis && pv.shape[static_cast<std::size_t>(d)] != os[static_cast<std::size_t>(d)])
                check_shape(false, "concat", os, pv.shape);
        total += pv.shape[static_cast<std::size_t>(axis)];
        ng = ng || g.wants_grad(p);
    }
    os[static_cast<std::size_t>(axis)] = total;
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(os[static_cast<std::size_t>(d)]);
    for (int d = axis + 1; d < r; ++d) inner *= static_cast<std::size_t>(os[static_cast<std::size_t>(d)]);
    Array<T> out(os);
    std::size_t off = 0;  // offset in axis units
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // (axis offset, axis len) per part
    for (Var p : parts) {
        const auto& pv = g.val(p);
        const auto len = static_cast<std::size_t>(pv.shape[static_cast<std::size_t>(axis)]);
        for (std::size_t o = 0; o < outer; ++o) {
            const T* src = pv.data() + o * len * inner;
            T* dst = out.data() + (o * static_cast<std::size_t>(total) + off) * inner;
            std::copy(src, src + len * inner, dst);
        }
        spans.emplace_back(off, len);
        off += len;
    }
    return g.record(std::move(out), ng,
                    [parts, spans, outer, inner, total](Graph<T>& gg, const Array<T>& gout) {
                        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                            if (!gg.wants_grad(parts[pi])) continue;
                            Array<T>& gp = gg.grad_buf(parts[pi]);
                            auto [o0, len] = spans[pi];
                            for (std::size_t o = 0; o < outer; ++o) {
                                const T* src =
                                    gout.data() + (o * static_cast<std::size_t>(total) + o0) * inner;
                                T* dst = gp.data() + o * len * inner;
                                for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                            }
                        }
                    });
}

template <class T>
Var slice(Graph<T>& g, Var x, int axis, int start, int len) {
    const auto& xv = g.val(x);
    const int r = xv.rank();
    if (axis < 0 || axis >= r) throw ShapeError("slice: axis out of range for " + shape_str(xv.shape));
    const int dim = xv.shape[static_cast<std::size_t>(axis)];
    if (start < 0 || len <= 0 || start + len > dim)
        throw ShapeError("slice: window [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") outside dim " + std::to_string(dim));
    Shape os = xv.shape;
    os[static_cast<std::size_t>(axis)] = len;
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(xv.shape[static_cast<std::size_t>(d)]);
    for (int d = axis + 1; d < r; ++d) inner *= static_cast<std::size_t>(xv.shape[static_cast<std::size_t>(d)]);
    Array<T> out(os);
    for (std::size_t o = 0; o < outer; ++o) {
        const T* src = xv.data() + (o * static_cast<std::size_t>(dim) + static_cast<std::size_t>(start)) * inner;
        std::copy(src, src + static_cast<std::size_t>(len) * inner,
                  out.data() + o * static_cast<std::size_t>(len) * inner);
    }
    return g.record(std::move(out), g.wants_grad(x),
                    [x, outer, inner, dim, start, len](Graph<T>& gg, const Array<T>& gout) {
                        if (!gg.wants_grad(x)) return;
                        Array<T>& gx = gg.grad_buf(x);
                        for (std::size_t o = 0; o < outer; ++o) {
                            const T* src = gout.data() + o * static_cast<std::size_t>(len) * inner;
                            T* dst = gx.data() +
                                     (o * static_cast<std::size_t>(dim) + static_cast<std::size_t>(start)) * inner;
                            for (std::size_t i = 0; i < static_cast<std::size_t>(len) * inner; ++i)
                                dst[i] += src[i];
                        }
                    });
}

template <class T>
Var broadcast_to(Graph<T>& g, Var x, Shape target) {
    const auto& xv = g.val(x);
    if (xv.shape == target) return x;
    auto sx = map_strides(target, xv.shape);
    auto self = row_major_strides_ll(target);
    Array<T> out(target);
    walk2(target, self, sx, [&](std::size_t i, long long, long long ix) {
        out[i] = xv[static_cast<std::size_t>(ix)];
    });
    return g.record(std::move(out), g.wants_grad(x),
                    [x, target, self, sx](Graph<T>& gg, const Array<T>& gout) {
                        if (!gg.wants_grad(x)) return;
                        Array<T>& gx = gg.grad_buf(x);
                        walk2(target, self, sx, [&](std::size_t i, long long, long long ix) {
                            gx[static_cast<std::size_t>(ix)] += gout[i];
                        });
                    });
}

// ---------- reductions & pooling ----------

template <class T>
Var sum_all(Graph<T>& g, Var x) {
    const auto& xv = g.val(x);
    T acc = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
    Array<T> out(Shape{1});
    out[0] = acc;
    return g.record(std::move(out), g.wants_grad(x), [x](Graph<T>& gg, const Array<T>& gout) {
        if (!gg.wants_grad(x)) return;
        Array<T>& gx = gg.grad_buf(x);
        const T s = gout[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s;
    });
}

template <class T>
Var mean_all(Graph<T>& g, Var x) {
    const double n = static_cast<double>(g.val(x).size());
    return scalar_affine(g, sum_all(g, x), 1.0 / n, 0.0);
}

enum class SpatialAxis { height, width };
enum class PoolMode { avg, max };

namespace detail {

// Interpret rank-3 (C,H,W) or rank-4 (N,C,H,W) as N,C,H,W.
inline void spatial_dims(const Shape& s, const char* op, int& n, int& c, int& h, int& w) {
    if (s.size() == 3) {
        n = 1;
        c = s[0];
        h = s[1];
        w = s[2];
    } else if (s.size() == 4) {
        n = s[0];
        c = s[1];
        h = s[2];
        w = s[3];
    } else {
        throw ShapeError(std::string(op) + ": expected 3-D or 4-D input, got " + shape_str(s));
    }
}

}  // namespace detail

// Pool along one spatial axis: width -> (...,H,1), height -> (...,1,W).
template <class T>
Var directional_pool(Graph<T>& g, Var x, SpatialAxis axis, PoolMode mode) {
    const auto& xv = g.val(x);
    int N, C, H, W;
    detail::spatial_dims(xv.shape, "directional_pool", N, C, H, W);
    Shape os = xv.shape;
    const bool over_w = axis == SpatialAxis::width;
    os[os.size() - (over_w ? 1 : 2)] = 1;
    Array<T> out(os);
    std::vector<int64_t> arg;  // flat input index per output element (max mode)
    if (mode == PoolMode::max) arg.resize(out.size());
    const std::size_t planes = static_cast<std::size_t>(N) * C;
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = xv.data() + p * static_cast<std::size_t>(H) * W;
        if (over_w) {
            T* dst = out.data() + p * static_cast<std::size_t>(H);
            for (int i = 0; i < H; ++i) {
                const T* row = src + static_cast<std::size_t>(i) * W;
                if (mode == PoolMode::avg) {
                    T acc = T(0);
                    for (int j = 0; j < W; ++j) acc += row[j];
                    dst[i] = acc / static_cast<T>(W);
                } else {
                    int best = 0;
                    for (int j = 1; j < W; ++j)
                        if (row[j] > row[best]) best = j;
                    dst[i] = row[best];
                    arg[p * static_cast<std::size_t>(H) + static_cast<std::size_t>(i)] =
                        static_cast<int64_t>(p * static_cast<std::size_t>(H) * W +
                                             static_cast<std::size_t>(i) * W + best);
                }
            }
        } else {
            T* dst = out.data() + p * static_cast<std::size_t>(W);
            for (int j = 0; j < W; ++j) {
                if (mode == PoolMode::avg) {
                    T acc = T(0);
                    for (int i = 0; i < H; ++i) acc += src[static_cast<std::size_t>(i) * W + j];
                    dst[j] = acc / static_cast<T>(H);
                } else {
                    int best = 0;
                    for (int i = 1; i < H; ++i)
                        if (src[static_cast<std::size_t>(i) * W + j] >
                            src[static_cast<std::size_t>(best) * W + j])
                            best = i;
                    dst[j] = src[static_cast<std::size_t>(best) * W + j];
                    arg[p * static_cast<std::size_t>(W) + static_cast<std::size_t>(j)] =
                        static_cast<int64_t>(p * static_cast<std::size_t>(H) * W +
                                             static_cast<std::size_t>(best) * W + j);
                }
            }
        }
    }
    if (mode == PoolMode::max) {
        return g.record(std::move(out), g.wants_grad(x),
                        [x, arg](Graph<T>& gg, const Array<T>& gout) {
                            if (!gg.wants_grad(x)) return;
                            Array<T>& gx = gg.grad_buf(x);
                            for (std::size_t i = 0; i < gout.size(); ++i)
                                gx[static_cast<std::size_t>(arg[i])] += gout[i];
                        });
    }
    return g.record(std::move(out), g.wants_grad(x),
                    [x, planes, H, W, over_w](Graph<T>& gg, const Array<T>& gout) {
                        if (!gg.wants_grad(x)) return;
                        Array<T>& gx = gg.grad_buf(x);
                        const T scale = T(1) / static_cast<T>(over_w ? W : H);
                        for (std::size_t p = 0; p < planes; ++p) {
                            T* dst = gx.data() + p * static_cast<std::size_t>(H) * W;
                            if (over_w) {
                                const T* src = gout.data() + p * static_cast<std::size_t>(H);
                                for (int i = 0; i < H; ++i) {
                                    const T v = src[i] * scale;
                                    for (int j = 0; j < W; ++j) dst[static_cast<std::size_t>(i) * W + j] += v;
                                }
                            } else {
                                const T* src = gout.data() + p * static_cast<std::size_t>(W);
                                for (int j = 0; j < W; ++j) {
                                    const T v = src[j] * scale;
                                    for (int i = 0; i < H; ++i) dst[static_cast<std::size_t>(i) * W + j] += v;
                                }
                            }
                        }
                    });
}

// Pool all spatial positions: (...,H,W) -> (...,1,1).
template <class T>
Var global_pool(Graph<T>& g, Var x, PoolMode mode) {
    const auto& xv = g.val(x);
    int N, C, H, W;
    detail::spatial_dims(xv.shape, "global_pool", N, C, H, W);
    Shape os = xv.shape;
    os[os.size() - 1] = 1;
    os[os.size() - 2] = 1;
    const std::size_t planes = static_cast<std::size_t>(N) * C;
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    Array<T> out(os);
    std::vector<int64_t> arg;
    if (mode == PoolMode::max) arg.resize(planes);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = xv.data() + p * hw;
        if (mode == PoolMode::avg) {
            T acc = T(0);
            for (std::size_t i = 0; i < hw; ++i) acc += src[i];
            out[p] = acc / static_cast<T>(hw);
        } else {
            std::size_t best = 0;
            for (std::size_t i = 1; i < hw; ++i)
                if (src[i] > src[best]) best = i;
            out[p] = src[best];
            arg[p] = static_cast<int64_t>(p * hw + best);
        }
    }
    if (mode == PoolMode::max) {
        return g.record(std::move(out), g.wants_grad(x),
                        [x, arg](Graph<T>& gg, const Array<T>& gout) {
                            if (!gg.wants_grad(x)) return;
                            Array<T>& gx = gg.grad_buf(x);
                            for (std::size_t p = 0; p < gout.size(); ++p)
                                gx[static_cast<std::size_t>(arg[p])] += gout[p];
                        });
    }
    return g.record(std::move(out), g.wants_grad(x),
                    [x, planes, hw](Graph<T>& gg, const Array<T>& gout) {
                        if (!gg.wants_grad(x)) return;
                        Array<T>& gx = gg.grad_buf(x);
                        for (std::size_t p = 0; p < planes; ++p) {
                            const T v = gout[p] / static_cast<T>(hw);
                            T* dst = gx.data() + p * hw;
                            for (std::size_t i = 0; i < hw; ++i) dst[i] += v;
                        }
                    });
}

// (N,T,D) -> (N,D) mean over time; also accepts (T,D) -> (D).
template <class T>
Var adaptive_avg_pool_seq(Graph<T>& g, Var x) {
    const auto& xv = g.val(x);
    int N, Tn, D;
    if (xv.rank() == 3) {
        N = xv.shape[0];
        Tn = xv.shape[1];
        D = xv.shape[2];
    } else if (xv.rank() == 2) {
        N = 1;
        Tn = xv.shape[0];
        D = xv.shape[1];
    } else {
        throw ShapeError("adaptive_avg_pool_seq: expected 2-D or 3-D input, got " +
                         shape_str(xv.shape));
    }
    Shape os = xv.rank() == 3 ? Shape{N, D} : Shape{D};
    Array<T> out(os);
    for (int n = 0; n < N; ++n)
        for (int d = 0; d < D; ++d) {
            T acc = T(0);
            for (int t = 0; t < Tn; ++t)
                acc += xv[static_cast<std::size_t>(n) * Tn * D + static_cast<std::size_t>(t) * D +
                         static_cast<std::size_t>(d)];
            out[static_cast<std::size_t>(n) * D + static_cast<std::size_t>(d)] =
                acc / static_cast<T>(Tn);
        }
    return g.record(std::move(out), g.wants_grad(x),
                    [x, N, Tn, D](Graph<T>& gg, const Array<T>& gout) {
                        if (!gg.wants_grad(x)) return;
                        Array<T>& gx = gg.grad_buf(x);
                        for (int n = 0; n < N; ++n)
                            for (int t = 0; t < Tn; ++t)
                                for (int d = 0; d < D; ++d)
                                    gx[static_cast<std::size_t>(n) * Tn * D +
                                       static_cast<std::size_t>(t) * D + static_cast<std::size_t>(d)] +=
                                        gout[static_cast<std::size_t>(n) * D +
                                             static_cast<std::size_t>(d)] /
                                        static_cast<T>(Tn);
                    });
}

// ---------- linear algebra ----------

template <class T>
Var matmul(Graph<T>& g, Var a, Var b) {
    const auto& av = g.val(a);
    const auto& bv = g.val(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
        check_shape(false, "matmul", av.shape, bv.shape);
    const int M = av.shape[0], K = av.shape[1], N = bv.shape[1];
    Array<T> out(Shape{M, N});
    gemm_nn(M, N, K, av.data(), bv.data(), out.data(), false);
    const bool ng = g.wants_grad(a) || g.wants_grad(b);
    return g.record(std::move(out), ng, [a, b, M, K, N](Graph<T>& gg, const Array<T>& gout) {
        const auto& av2 = gg.val(a);
        const auto& bv2 = gg.val(b);
        if (gg.wants_grad(a))
            gemm_nt(M, K, N, gout.data(), bv2.data(), gg.grad_buf(a).data(), true);
        if (gg.wants_grad(b))
            gemm_tn(K, N, M, av2.data(), gout.data(), gg.grad_buf(b).data(), true);
    });
}

// x (..., in) * W (in, out) + b (out). b may be an invalid Var for no bias.
template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
    const auto& xv = g.val(x);
    const auto& wv = g.val(w);
    if (xv.rank() < 1 || wv.rank() != 2 || xv.shape.back() != wv.shape[0])
        check_shape(false, "linear", xv.shape, wv.shape);
    const int in = wv.shape[0], out_dim = wv.shape[1];
    const int R = static_cast<int>(xv.size()) / in;
    Shape os = xv.shape;
    os.back() = out_dim;
    Array<T> out(os);
    gemm_nn(R, out_dim, in, xv.data(), wv.data(), out.data(), false);
    if (b.valid()) {
        const auto& bv = g.val(b);
        if (bv.rank() != 1 || bv.shape[0] != out_dim) check_shape(false, "linear bias", bv.shape, wv.shape);
        for (int r = 0; r < R; ++r) {
            T* row = out.data() + static_cast<std::size_t>(r) * out_dim;
            for (int o = 0; o < out_dim; ++o) row[o] += bv[static_cast<std::size_t>(o)];
        }
    }
    const bool ng = g.wants_grad(x) || g.wants_grad(w) || (b.valid() && g.wants_grad(b));
    return g.record(std::move(out), ng, [x, w, b, R, in, out_dim](Graph<T>& gg, const Array<T>& gout) {
        const auto& xv2 = gg.val(x);
        const auto& wv2 = gg.val(w);
        if (gg.wants_grad(x))
            gemm_nt(R, in, out_dim, gout.data(), wv2.data(), gg.grad_buf(x).data(), true);
        if (gg.wants_grad(w))
            gemm_tn(in, out_dim, R, xv2.data(), gout.data(), gg.grad_buf(w).data(), true);
        if (b.valid() && gg.wants_grad(b)) {
            Array<T>& gb = gg.grad_buf(b);
            for (int r = 0; r < R; ++r) {
                const T* row = gout.data() + static_cast<std::size_t>(r) * out_dim;
                for (int o = 0; o < out_dim; ++o) gb[static_cast<std::size_t>(o)] += row[o];
            }
        }
    });
}

// Batched matmul: a (B,M,K) x b (B,K,N), or b (B,N,K) when trans_b.
template <class T>
Var bmm(Graph<T>& g, Var a, Var b, bool trans_b = false) {
    const auto& av = g.val(a);
    const auto& bv = g.val(b);
    if (av.rank() != 3 || bv.rank() != 3 || av.shape[0] != bv.shape[0])
        check_shape(false, "bmm", av.shape, bv.shape);
    const int B = av.shape[0], M = av.shape[1], K = av.shape[2];
    const int bK = trans_b ? bv.shape[2] : bv.shape[1];
    const int N = trans_b ? bv.shape[1] : bv.shape[2];
    if (bK != K) check_shape(false, "bmm", av.shape, bv.shape);
    Array<T> out(Shape{B, M, N});
    const std::size_t sa = static_cast<std::size_t>(M) * K;
    const std::size_t sb = static_cast<std::size_t>(bv.shape[1]) * bv.shape[2];
    const std::size_t so = static_cast<std::size_t>(M) * N;
    for (int i = 0; i < B; ++i) {
        if (trans_b)
            gemm_nt(M, N, K, av.data() + i * sa, bv.data() + i * sb, out.data() + i * so, false);
        else
            gemm_nn(M, N, K, av.data() + i * sa, bv.data() + i * sb, out.data() + i * so, false);
    }
    const bool ng = g.wants_grad(a) || g.wants_grad(b);
    return g.record(std::move(out), ng,
                    [a, b, trans_b, B, M, K, N, sa, sb, so](Graph<T>& gg, const Array<T>& gout) {
                        const auto& av2 = gg.val(a);
                        const auto& bv2 = gg.val(b);
                        for (int i = 0; i < B; ++i) {
                            const T* go = gout.data() + i * so;
                            if (gg.wants_grad(a)) {
                                T* ga = gg.grad_buf(a).data() + i * sa;
                                if (trans_b)  // dA = dC * B, B stored (N,K)
                                    gemm_nn(M, K, N, go, bv2.data() + i * sb, ga, true);
                                else  // dA = dC * B^T
                                    gemm_nt(M, K, N, go, bv2.data() + i * sb, ga, true);
                            }
                            if (gg.wants_grad(b)) {
                                T* gb = gg.grad_buf(b).data() + i * sb;
                                if (trans_b)  // dB (N,K) = dC^T * A
                                    gemm_tn(N, K, M, go, av2.data() + i * sa, gb, true);
                                else  // dB (K,N) = A^T * dC
                                    gemm_tn(K, N, M, av2.data() + i * sa, go, gb, true);
                            }
                        }
                    });
}

// ---------- normalization & softmax ----------

template <class T>
Var softmax(Graph<T>& g, Var x, int axis) {
    const auto& xv = g.val(x);
    const int r = xv.rank();
    if (axis < 0 || axis >= r)
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(xv.shape));
    const int D = xv.shape[static_cast<std::size_t>(axis)];
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(xv.shape[static_cast<std::size_t>(d)]);
    for (int d = axis + 1; d < r; ++d) inner *= static_cast<std::size_t>(xv.shape[static_cast<std::size_t>(d)]);
    Array<T> out(xv.shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * static_cast<std::size_t>(D) * inner + in;
            T mx = xv[base];
            for (int d = 1; d < D; ++d)
                mx = std::max(mx, xv[base + static_cast<std::size_t>(d) * inner]);
            T sum = T(0);
            for (int d = 0; d < D; ++d) {
                const T e = std::exp(xv[base + static_cast<std::size_t>(d) * inner] - mx);
                out[base + static_cast<std::size_t>(d) * inner] = e;
                sum += e;
            }
            const T invs = T(1) / sum;
            for (int d = 0; d < D; ++d) out[base + static_cast<std::size_t>(d) * inner] *= invs;
        }
    if (!g.wants_grad(x)) return g.record(std::move(out), false, nullptr);
    Array<T> saved = out;  // softmax output reused by the adjoint
    return g.record(std::move(out), true,
                    [x, saved, outer, inner, D](Graph<T>& gg, const Array<T>& gout) {
                        Array<T>& gx = gg.grad_buf(x);
                        for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t in = 0; in < inner; ++in) {
                                const std::size_t base = o * static_cast<std::size_t>(D) * inner + in;
                                T dot = T(0);
                                for (int d = 0; d < D; ++d) {
                                    const std::size_t i = base + static_cast<std::size_t>(d) * inner;
                                    dot += gout[i] * saved[i];
                                }
                                for (int d = 0; d < D; ++d) {
                                    const std::size_t i = base + static_cast<std::size_t>(d) * inner;
                                    gx[i] += saved[i] * (gout[i] - dot);
                                }
                            }
                    });
}

// Layer norm over the last dimension.
template <class T>
Var layernorm(Graph<T>& g, Var x, Var gamma, Var beta, double eps = 1e-5) {
    const auto& xv = g.val(x);
    const auto& gv = g.val(gamma);
    const auto& bv = g.val(beta);
    const int D = xv.shape.back();
    if (gv.rank() != 1 || gv.shape[0] != D || bv.rank() != 1 || bv.shape[0] != D)
        check_shape(false, "layernorm", xv.shape, gv.shape);
    const std::size_t R = xv.size() / static_cast<std::size_t>(D);
    Array<T> out(xv.shape);
    std::vector<T> mu(R), invstd(R);
    for (std::size_t r = 0; r < R; ++r) {
        const T* row = xv.data() + r * static_cast<std::size_t>(D);
        T m = T(0);
        for (int d = 0; d < D; ++d) m += row[d];
        m /= static_cast<T>(D);
        T v = T(0);
        for (int d = 0; d < D; ++d) v += (row[d] - m) * (row[d] - m);
        v /= static_cast<T>(D);
        const T is = T(1) / std::sqrt(v + static_cast<T>(eps));
        mu[r] = m;
        invstd[r] = is;
        T* orow = out.data() + r * static_cast<std::size_t>(D);
        for (int d = 0; d < D; ++d)
            orow[d] = gv[static_cast<std::size_t>(d)] * (row[d] - m) * is + bv[static_cast<std::size_t>(d)];
    }
    const bool ng = g.wants_grad(x) || g.wants_grad(gamma) || g.wants_grad(beta);
    return g.record(
        std::move(out), ng,
        [x, gamma, beta, mu, invstd, R, D](Graph<T>& gg, const Array<T>& gout) {
            const auto& xv2 = gg.val(x);
            const auto& gv2 = gg.val(gamma);
            for (std::size_t r = 0; r < R; ++r) {
                const T* row = xv2.data() + r * static_cast<std::size_t>(D);
                const T* go = gout.data() + r * static_cast<std::size_t>(D);
                const T m = mu[r], is = invstd[r];
                if (gg.wants_grad(gamma)) {
                    Array<T>& gg_ = gg.grad_buf(gamma);
                    for (int d = 0; d < D; ++d)
                        gg_[static_cast<std::size_t>(d)] += go[d] * (row[d] - m) * is;
                }
                if (gg.wants_grad(beta)) {
                    Array<T>& gb = gg.grad_buf(beta);
                    for (int d = 0; d < D; ++d) gb[static_cast<std::size_t>(d)] += go[d];
                }
                if (gg.wants_grad(x)) {
                    Array<T>& gx = gg.grad_buf(x);
                    T mean_h = T(0), mean_hx = T(0);
                    for (int d = 0; d < D; ++d) {
                        const T h = go[d] * gv2[static_cast<std::size_t>(d)];
                        const T xh = (row[d] - m) * is;
                        mean_h += h;
                        mean_hx += h * xh;
                    }
                    mean_h /= static_cast<T>(D);
                    mean_hx /= static_cast<T>(D);
                    T* gxr = gx.data() + r * static_cast<std::size_t>(D);
                    for (int d = 0; d < D; ++d) {
                        const T h = go[d] * gv2[static_cast<std::size_t>(d)];
                        const T xh = (row[d] - m) * is;
                        gxr[d] += is * (h - mean_h - xh * mean_hx);
                    }
                }
            }
        });
}

// Mean cross-entropy over the batch from raw logits (N,K).
template <class T>
Var cross_entropy(Graph<T>& g, Var logits, const std::vector<int>& labels) {
    const auto& zv = g.val(logits);
    if (zv.rank() != 2) throw ShapeError("cross_entropy: logits must be 2-D, got " + shape_str(zv.shape));
    const int N = zv.shape[0], K = zv.shape[1];
    if (static_cast<int>(labels.size()) != N)
        throw InvalidArgument("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(N) + " rows");
    for (int lbl : labels)
        if (lbl < 0 || lbl >= K)
            throw InvalidArgument("cross_entropy: label " + std::to_string(lbl) +
                                  " outside [0," + std::to_string(K) + ")");
    T loss = T(0);
    for (int n = 0; n < N; ++n) {
        const T* row = zv.data() + static_cast<std::size_t>(n) * K;
        T mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T sum = T(0);
        for (int k = 0; k < K; ++k) sum += std::exp(row[k] - mx);
        loss += std::log(sum) + mx - row[labels[static_cast<std::size_t>(n)]];
    }
    loss /= static_cast<T>(N);
    Array<T> out(Shape{1});
    out[0] = loss;
    return g.record(std::move(out), g.wants_grad(logits),
                    [logits, labels, N, K](Graph<T>& gg, const Array<T>& gout) {
                        if (!gg.wants_grad(logits)) return;
                        const auto& zv2 = gg.val(logits);
                        Array<T>& gz = gg.grad_buf(logits);
                        const T scale = gout[0] / static_cast<T>(N);
                        for (int n = 0; n < N; ++n) {
                            const T* row = zv2.data() + static_cast<std::size_t>(n) * K;
                            T* grow = gz.data() + static_cast<std::size_t>(n) * K;
                            T mx = row[0];
                            for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
                            T sum = T(0);
                            for (int k = 0; k < K; ++k) sum += std::exp(row[k] - mx);
                            const T invs = T(1) / sum;
                            for (int k = 0; k < K; ++k) {
                                T p = std::exp(row[k] - mx) * invs;
                                if (k == labels[static_cast<std::size_t>(n)]) p -= T(1);
                                grow[k] += scale * p;
                            }
                        }
                    });
}

// ---------- convolution & batch norm ----------

namespace detail {

template <class T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* col) {
    // col is (C*k*k) x (Ho*Wo)
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* dst = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) *
                                   (static_cast<std::size_t>(Ho) * Wo);
                for (int ho = 0; ho < Ho; ++ho) {
                    const int iy = ho * stride + ky - pad;
                    if (iy < 0 || iy >= H) {
                        for (int wo = 0; wo < Wo; ++wo) dst[static_cast<std::size_t>(ho) * Wo + wo] = T(0);
                        continue;
                    }
                    const T* src = x + (static_cast<std::size_t>(c) * H + iy) * W;
                    for (int wo = 0; wo < Wo; ++wo) {
                        const int ix = wo * stride + kx - pad;
                        dst[static_cast<std::size_t>(ho) * Wo + wo] =
                            (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
}

template <class T>
void col2im_add(const T* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
                T* x) {
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const T* src = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) *
                                         (static_cast<std::size_t>(Ho) * Wo);
                for (int ho = 0; ho < Ho; ++ho) {
                    const int iy = ho * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = x + (static_cast<std::size_t>(c) * H + iy) * W;
                    for (int wo = 0; wo < Wo; ++wo) {
                        const int ix = wo * stride + kx - pad;
                        if (ix >= 0 && ix < W) dst[ix] += src[static_cast<std::size_t>(ho) * Wo + wo];
                    }
                }
            }
}

}  // namespace detail

// x (N,C,H,W), w (Co,C,k,k), optional b (Co); same padding, stride 1 or 2.
template <class T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, int stride = 1) {
    const auto& xv = g.val(x);
    const auto& wv = g.val(w);
    if (xv.rank() != 4 || wv.rank() != 4) check_shape(false, "conv2d", xv.shape, wv.shape);
    const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    const int Co = wv.shape[0], k = wv.shape[2];
    if (wv.shape[1] != C || wv.shape[3] != k) check_shape(false, "conv2d", xv.shape, wv.shape);
    if (k != 1 && k != 3) throw InvalidArgument("conv2d: kernel must be 1x1 or 3x3");
    if (stride != 1 && stride != 2) throw InvalidArgument("conv2d: stride must be 1 or 2");
    const int pad = k / 2;
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    const int CKK = C * k * k;
    const std::size_t ohw = static_cast<std::size_t>(Ho) * Wo;
    Array<T> out(Shape{N, Co, Ho, Wo});
    const bool plain = (k == 1 && stride == 1);
    std::vector<T> col;
    if (!plain) col.resize(static_cast<std::size_t>(CKK) * ohw);
    for (int n = 0; n < N; ++n) {
        const T* xn = xv.data() + static_cast<std::size_t>(n) * C * H * W;
        const T* src = xn;
        if (!plain) {
            detail::im2col(xn, C, H, W, k, stride, pad, Ho, Wo, col.data());
            src = col.data();
        }
        T* on = out.data() + static_cast<std::size_t>(n) * Co * ohw;
        gemm_nn(Co, static_cast<int>(ohw), CKK, wv.data(), src, on, false);
    }
    if (b.valid()) {
        const auto& bv = g.val(b);
        if (bv.rank() != 1 || bv.shape[0] != Co) check_shape(false, "conv2d bias", bv.shape, wv.shape);
        for (int n = 0; n < N; ++n)
            for (int co = 0; co < Co; ++co) {
                T* plane = out.data() + (static_cast<std::size_t>(n) * Co + co) * ohw;
                const T bias = bv[static_cast<std::size_t>(co)];
                for (std::size_t i = 0; i < ohw; ++i) plane[i] += bias;
            }
    }
    const bool ng = g.wants_grad(x) || g.wants_grad(w) || (b.valid() && g.wants_grad(b));
    return g.record(
        std::move(out), ng,
        [x, w, b, N, C, H, W, Co, k, stride, pad, Ho, Wo, CKK, ohw, plain](Graph<T>& gg,
                                                                           const Array<T>& gout) {
            const auto& xv2 = gg.val(x);
            const auto& wv2 = gg.val(w);
            std::vector<T> col, dcol;
            if (!plain) col.resize(static_cast<std::size_t>(CKK) * ohw);
            if (!plain && gg.wants_grad(x)) dcol.resize(static_cast<std::size_t>(CKK) * ohw);
            for (int n = 0; n < N; ++n) {
                const T* go = gout.data() + static_cast<std::size_t>(n) * Co * ohw;
                const T* xn = xv2.data() + static_cast<std::size_t>(n) * C * H * W;
                if (gg.wants_grad(w)) {
                    const T* src = xn;
                    if (!plain) {
                        detail::im2col(xn, C, H, W, k, stride, pad, Ho, Wo, col.data());
                        src = col.data();
                    }
                    gemm_nt(Co, CKK, static_cast<int>(ohw), go, src, gg.grad_buf(w).data(), true);
                }
                if (gg.wants_grad(x)) {
                    T* gx = gg.grad_buf(x).data() + static_cast<std::size_t>(n) * C * H * W;
                    if (plain) {
                        gemm_tn(CKK, static_cast<int>(ohw), Co, wv2.data(), go, gx, true);
                    } else {
                        gemm_tn(CKK, static_cast<int>(ohw), Co, wv2.data(), go, dcol.data(), false);
                        detail::col2im_add(dcol.data(), C, H, W, k, stride, pad, Ho, Wo, gx);
                    }
                }
            }
            if (b.valid() && gg.wants_grad(b)) {
                Array<T>& gb = gg.grad_buf(b);
                for (int n = 0; n < N; ++n)
                    for (int co = 0; co < Co; ++co) {
                        const T* plane = gout.data() + (static_cast<std::size_t>(n) * Co + co) * ohw;
                        T acc = T(0);
                        for (std::size_t i = 0; i < ohw; ++i) acc += plane[i];
                        gb[static_cast<std::size_t>(co)] += acc;
                    }
            }
        });
}

// Batch norm over (N,H,W) per channel. Running stats live outside the graph
// and are updated (training mode) at forward time.
template <class T>
Var batchnorm2d(Graph<T>& g, Var x, Var gamma, Var beta, Array<T>* running_mean,
                Array<T>* running_var, bool training, double momentum = 0.1, double eps = 1e-5) {
    const auto& xv = g.val(x);
    if (xv.rank() != 4) throw ShapeError("batchnorm2d: expected 4-D input, got " + shape_str(xv.shape));
    const int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    const auto& gv = g.val(gamma);
    const auto& bv = g.val(beta);
    if (gv.rank() != 1 || gv.shape[0] != C || bv.rank() != 1 || bv.shape[0] != C)
        check_shape(false, "batchnorm2d", xv.shape, gv.shape);
    if (!running_mean || !running_var ||
        running_mean->size() != static_cast<std::size_t>(C) ||
        running_var->size() != static_cast<std::size_t>(C))
        throw InvalidArgument("batchnorm2d: running stats missing or sized wrong");
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    const std::size_t m = static_cast<std::size_t>(N) * hw;  // samples per channel

    std::vector<T> mu(static_cast<std::size_t>(C)), invstd(static_cast<std::size_t>(C));
    if (training) {
        for (int c = 0; c < C; ++c) {
            T s = T(0);
            for (int n = 0; n < N; ++n) {
                const T* plane = xv.data() + (static_cast<std::size_t>(n) * C + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) s += plane[i];
            }
            const T mean = s / static_cast<T>(m);
            T v = T(0);
            for (int n = 0; n < N; ++n) {
                const T* plane = xv.data() + (static_cast<std::size_t>(n) * C + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) v += (plane[i] - mean) * (plane[i] - mean);
            }
            const T var = v / static_cast<T>(m);
            mu[static_cast<std::size_t>(c)] = mean;
            invstd[static_cast<std::size_t>(c)] = T(1) / std::sqrt(var + static_cast<T>(eps));
            const T mom = static_cast<T>(momentum);
            (*running_mean)[static_cast<std::size_t>(c)] =
                (T(1) - mom) * (*running_mean)[static_cast<std::size_t>(c)] + mom * mean;
            const T var_unbiased = m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
            (*running_var)[static_cast<std::size_t>(c)] =
                (T(1) - mom) * (*running_var)[static_cast<std::size_t>(c)] + mom * var_unbiased;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mu[static_cast<std::size_t>(c)] = (*running_mean)[static_cast<std::size_t>(c)];
            invstd[static_cast<std::size_t>(c)] =
                T(1) / std::sqrt((*running_var)[static_cast<std::size_t>(c)] + static_cast<T>(eps));
        }
    }

    Array<T> out(xv.shape);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = xv.data() + (static_cast<std::size_t>(n) * C + c) * hw;
            T* dst = out.data() + (static_cast<std::size_t>(n) * C + c) * hw;
            const T me = mu[static_cast<std::size_t>(c)], is = invstd[static_cast<std::size_t>(c)];
            const T ga = gv[static_cast<std::size_t>(c)], be = bv[static_cast<std::size_t>(c)];
            for (std::size_t i = 0; i < hw; ++i) dst[i] = ga * (src[i] - me) * is + be;
        }

    const bool ng = g.wants_grad(x) || g.wants_grad(gamma) || g.wants_grad(beta);
    return g.record(
        std::move(out), ng,
        [x, gamma, beta, mu, invstd, N, C, hw, m, training](Graph<T>& gg, const Array<T>& gout) {
            const auto& xv2 = gg.val(x);
            const auto& gv2 = gg.val(gamma);
            for (int c = 0; c < C; ++c) {
                const T me = mu[static_cast<std::size_t>(c)], is = invstd[static_cast<std::size_t>(c)];
                T s1 = T(0), s2 = T(0);
                for (int n = 0; n < N; ++n) {
                    const T* go = gout.data() + (static_cast<std::size_t>(n) * C + c) * hw;
                    const T* src = xv2.data() + (static_cast<std::size_t>(n) * C + c) * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        s1 += go[i];
                        s2 += go[i] * (src[i] - me) * is;
                    }
                }
                if (gg.wants_grad(beta)) gg.grad_buf(beta)[static_cast<std::size_t>(c)] += s1;
                if (gg.wants_grad(gamma)) gg.grad_buf(gamma)[static_cast<std::size_t>(c)] += s2;
                if (gg.wants_grad(x)) {
                    Array<T>& gx = gg.grad_buf(x);
                    const T ga = gv2[static_cast<std::size_t>(c)];
                    if (training) {
                        const T k1 = s1 / static_cast<T>(m), k2 = s2 / static_cast<T>(m);
                        for (int n = 0; n < N; ++n) {
                            const T* go = gout.data() + (static_cast<std::size_t>(n) * C + c) * hw;
                            const T* src = xv2.data() + (static_cast<std::size_t>(n) * C + c) * hw;
                            T* gxp = gx.data() + (static_cast<std::size_t>(n) * C + c) * hw;
                            for (std::size_t i = 0; i < hw; ++i) {
                                const T xh = (src[i] - me) * is;
                                gxp[i] += ga * is * (go[i] - k1 - xh * k2);
                            }
                        }
                    } else {
                        for (int n = 0; n < N; ++n) {
                            const T* go = gout.data() + (static_cast<std::size_t>(n) * C + c) * hw;
                            T* gxp = gx.data() + (static_cast<std::size_t>(n) * C + c) * hw;
                            for (std::size_t i = 0; i < hw; ++i) gxp[i] += ga * is * go[i];
                        }
                    }
                }
            }
        });
}

}  // namespace amr::tc
