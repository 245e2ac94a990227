#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "amr/ops.hpp"
#include "amr/rng.hpp"

namespace amr::nn {

using tc::Graph;
using tc::PoolMode;
using tc::SpatialAxis;
using tc::Var;

template <class T>
struct Parameter {
    Array<T> value;
    Array<T> grad;
    bool decay = true;  // weight decay applies

    Parameter() = default;
    explicit Parameter(Shape s, bool dec = true) : value(std::move(s)), grad(value.shape), decay(dec) {}

    void zero_grad() { grad.fill(T(0)); }
    std::size_t size() const { return value.size(); }
};

// Put a parameter on the tape; its gradient accumulates into p.grad.
template <class T>
Var use(Graph<T>& g, Parameter<T>& p) {
    return g.leaf_with_sink(p.value, [&p](const Array<T>& gr) {
        for (std::size_t i = 0; i < gr.size(); ++i) p.grad[i] += gr[i];
    });
}

// Named views over a model's parameters and persistent buffers (BN stats).
template <class T>
struct ParamSet {
    std::vector<std::pair<std::string, Parameter<T>*>> params;
    std::vector<std::pair<std::string, Array<T>*>> buffers;

    void add(std::string name, Parameter<T>& p) { params.emplace_back(std::move(name), &p); }
    void buf(std::string name, Array<T>& b) { buffers.emplace_back(std::move(name), &b); }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [name, p] : params) n += p->size();
        return n;
    }
};

enum class Init { he_normal, xavier_uniform };

template <class T>
void init_weight(Array<T>& w, Init kind, int fan_in, int fan_out, Rng& rng) {
    if (kind == Init::he_normal) {
        w.fill_normal(rng, T(0), static_cast<T>(std::sqrt(2.0 / fan_in)));
    } else {
        const T a = static_cast<T>(std::sqrt(6.0 / (fan_in + fan_out)));
        w.fill_uniform(rng, -a, a);
    }
}

// ---------- layers ----------

template <class T>
struct Linear {
    Parameter<T> w;  // (in, out)
    Parameter<T> b;
    bool has_bias = true;
    Init init_kind = Init::he_normal;

    Linear() = default;
    Linear(int in, int out, Init k = Init::he_normal, bool bias = true)
        : w(Shape{in, out}), b(bias ? Shape{out} : Shape{0}, false), has_bias(bias), init_kind(k) {}

    void init(Rng& rng) {
        init_weight(w.value, init_kind, w.value.shape[0], w.value.shape[1], rng);
        if (has_bias) b.value.fill(T(0));
    }
    Var forward(Graph<T>& g, Var x) {
        return tc::linear(g, x, use(g, w), has_bias ? use(g, b) : Var{});
    }
    void collect(const std::string& p, ParamSet<T>& s) {
        s.add(p + ".w", w);
        if (has_bias) s.add(p + ".b", b);
    }
};

template <class T>
struct Conv2d {
    Parameter<T> w;  // (co, ci, k, k)
    Parameter<T> b;
    bool has_bias = true;
    int stride = 1;
    Init init_kind = Init::he_normal;

    Conv2d() = default;
    Conv2d(int ci, int co, int k, int s = 1, bool bias = true, Init ik = Init::he_normal)
        : w(Shape{co, ci, k, k}), b(bias ? Shape{co} : Shape{0}, false), has_bias(bias), stride(s),
          init_kind(ik) {}

    void init(Rng& rng) {
        const int k = w.value.shape[2];
        init_weight(w.value, init_kind, w.value.shape[1] * k * k, w.value.shape[0] * k * k, rng);
        if (has_bias) b.value.fill(T(0));
    }
    Var forward(Graph<T>& g, Var x) {
        return tc::conv2d(g, x, use(g, w), has_bias ? use(g, b) : Var{}, stride);
    }
    void collect(const std::string& p, ParamSet<T>& s) {
        s.add(p + ".w", w);
        if (has_bias) s.add(p + ".b", b);
    }
};

template <class T>
struct BatchNorm2d {
    Parameter<T> gamma, beta;
    Array<T> running_mean, running_var;
    double momentum = 0.1, eps = 1e-5;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int c)
        : gamma(Shape{c}, false), beta(Shape{c}, false), running_mean(Shape{c}), running_var(Shape{c}) {}

    void init(Rng&) {
        gamma.value.fill(T(1));
        beta.value.fill(T(0));
        running_mean.fill(T(0));
        running_var.fill(T(1));
    }
    Var forward(Graph<T>& g, Var x, bool training) {
        return tc::batchnorm2d(g, x, use(g, gamma), use(g, beta), &running_mean, &running_var,
                               training, momentum, eps);
    }
    void collect(const std::string& p, ParamSet<T>& s) {
        s.add(p + ".g", gamma);
        s.add(p + ".b", beta);
        s.buf(p + ".rm", running_mean);
        s.buf(p + ".rv", running_var);
    }
};

template <class T>
struct LayerNorm {
    Parameter<T> gamma, beta;

    LayerNorm() = default;
    explicit LayerNorm(int d) : gamma(Shape{d}, false), beta(Shape{d}, false) {}

    void init(Rng&) {
        gamma.value.fill(T(1));
        beta.value.fill(T(0));
    }
    Var forward(Graph<T>& g, Var x) { return tc::layernorm(g, x, use(g, gamma), use(g, beta)); }
    void collect(const std::string& p, ParamSet<T>& s) {
        s.add(p + ".g", gamma);
        s.add(p + ".b", beta);
    }
};

// conv3x3-BN-ReLU-conv3x3-BN with identity or 1x1-projection skip, ReLU after add.
template <class T>
struct ResidualBlock {
    Conv2d<T> conv1, conv2;
    BatchNorm2d<T> bn1, bn2;
    bool has_proj = false;
    Conv2d<T> proj;
    BatchNorm2d<T> bnp;

    ResidualBlock() = default;
    ResidualBlock(int ci, int co, int stride)
        : conv1(ci, co, 3, stride, false), conv2(co, co, 3, 1, false), bn1(co), bn2(co),
          has_proj(stride != 1 || ci != co) {
        if (has_proj) {
            proj = Conv2d<T>(ci, co, 1, stride, false);
            bnp = BatchNorm2d<T>(co);
        }
    }

    void init(Rng& rng) {
        conv1.init(rng);
        bn1.init(rng);
        conv2.init(rng);
        bn2.init(rng);
        if (has_proj) {
            proj.init(rng);
            bnp.init(rng);
        }
    }
    Var forward(Graph<T>& g, Var x, bool training) {
        Var h = tc::relu(g, bn1.forward(g, conv1.forward(g, x), training));
        h = bn2.forward(g, conv2.forward(g, h), training);
        Var skip = has_proj ? bnp.forward(g, proj.forward(g, x), training) : x;
        return tc::relu(g, tc::add(g, h, skip));
    }
    void collect(const std::string& p, ParamSet<T>& s) {
        conv1.collect(p + ".conv1", s);
        bn1.collect(p + ".bn1", s);
        conv2.collect(p + ".conv2", s);
        bn2.collect(p + ".bn2", s);
        if (has_proj) {
            proj.collect(p + ".proj", s);
            bnp.collect(p + ".bnp", s);
        }
    }
};

// 1x1 adapter then residual stages; each stage opens with a stride-2 block,
// so spatial resolution shrinks by 2^n_stages.
template <class T>
struct BranchCnn {
    Conv2d<T> adapter;
    std::vector<ResidualBlock<T>> blocks;
    std::vector<int> stage_of;  // stage index per block (for naming)
    std::vector<int> block_of;

    BranchCnn() = default;
    BranchCnn(const std::vector<int>& channels, int blocks_per_stage)
        : adapter(1, channels.at(0), 1, 1, true) {
        int in = channels.at(0);
        for (std::size_t st = 0; st < channels.size(); ++st)
            for (int b = 0; b < blocks_per_stage; ++b) {
                blocks.emplace_back(in, channels[st], b == 0 ? 2 : 1);
                stage_of.push_back(static_cast<int>(st));
                block_of.push_back(b);
                in = channels[st];
            }
    }

    void init(Rng& rng) {
        adapter.init(rng);
        for (auto& b : blocks) b.init(rng);
    }
    Var forward(Graph<T>& g, Var x, bool training) {
        Var h = adapter.forward(g, x);
        for (auto& b : blocks) h = b.forward(g, h, training);
        return h;
    }
    void collect(const std::string& p, ParamSet<T>& s) {
        adapter.collect(p + ".adapter", s);
        for (std::size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(p + ".s" + std::to_string(stage_of[i]) + ".b" +
                                  std::to_string(block_of[i]),
                              s);
    }
};

// z = sigmoid(w)*x + (1-sigmoid(w))*y; disabled -> parameter-free midpoint.
template <class T>
struct FusionGate {
    bool enabled = true;
    Parameter<T> w;

    FusionGate() = default;
    explicit FusionGate(bool on) : enabled(on) {
        if (enabled) w = Parameter<T>(Shape{1}, false);
    }

    void init(Rng&) {
        if (enabled) w.value.fill(T(0));
    }
    Var forward(Graph<T>& g, Var x, Var y) {
        if (!g.val(x).same_shape(g.val(y)))
            check_shape(false, "fusion_gate", g.val(x).shape, g.val(y).shape);
        if (!enabled) return tc::scalar_affine(g, tc::add(g, x, y), 0.5, 0.0);
        Var alpha = tc::sigmoid(g, use(g, w));
        Var one_minus = tc::scalar_affine(g, alpha, -1.0, 1.0);
        return tc::add(g, tc::mul(g, alpha, x), tc::mul(g, one_minus, y));
    }
    void collect(const std::string& p, ParamSet<T>& s) {
        if (enabled) s.add(p + ".w", w);
    }
};

// Wavelet band lengths for 2x128 frames after two symmetric-mode db4 levels.
inline constexpr int kBandA2 = 37, kBandD2 = 37, kBandD1 = 67;
inline constexpr int kWaveletDim = 2 * (kBandA2 + kBandD2 + kBandD1);  // 282

// Fixed gain on both cA2 bands; learnable sigmoid attenuation on cD2/cD1,
// one scalar per (band, channel): theta = [cD2_I, cD1_I, cD2_Q, cD1_Q].
template <class T>
struct WaveFilter {
    bool enabled = true;
    double g_low = 1.5;
    Parameter<T> theta;

    WaveFilter() = default;
    WaveFilter(bool on, double gl) : enabled(on), g_low(gl) {
        if (enabled) theta = Parameter<T>(Shape{4}, false);
    }

    void init(Rng&) {
        if (enabled) theta.value.fill(T(0));
    }
    Var forward(Graph<T>& g, Var v) {
        const auto& vv = g.val(v);
        if (vv.shape.back() != kWaveletDim)
            throw ShapeError("wave_filter: expected feature dim " + std::to_string(kWaveletDim) +
                             ", got " + shape_str(vv.shape));
        if (!enabled) return v;
        const int ax = vv.rank() - 1;
        Var th = use(g, theta);
        auto gain = [&](int idx) { return tc::sigmoid(g, tc::slice(g, th, 0, idx, 1)); };
        int o = 0;
        std::vector<Var> parts;
        for (int ch = 0; ch < 2; ++ch) {
            parts.push_back(tc::scalar_affine(g, tc::slice(g, v, ax, o, kBandA2), g_low, 0.0));
            o += kBandA2;
            parts.push_back(tc::mul(g, tc::slice(g, v, ax, o, kBandD2), gain(ch * 2)));
            o += kBandD2;
            parts.push_back(tc::mul(g, tc::slice(g, v, ax, o, kBandD1), gain(ch * 2 + 1)));
            o += kBandD1;
        }
        return tc::concat(g, parts, ax);
    }
    void collect(const std::string& p, ParamSet<T>& s) {
        if (enabled) s.add(p + ".theta", theta);
    }
};

// Pre-norm-free transformer encoder layer: MHA + residual + LN, FFN + residual + LN.
template <class T>
struct EncoderLayer {
    int d_model = 0, n_heads = 0;
    Linear<T> q, k, v, o, ffn1, ffn2;
    LayerNorm<T> ln1, ln2;

    EncoderLayer() = default;
    EncoderLayer(int d, int heads, int ffn)
        : d_model(d), n_heads(heads), q(d, d, Init::xavier_uniform), k(d, d, Init::xavier_uniform),
          v(d, d, Init::xavier_uniform), o(d, d, Init::xavier_uniform),
          ffn1(d, ffn, Init::he_normal), ffn2(ffn, d, Init::xavier_uniform), ln1(d), ln2(d) {}

    void init(Rng& rng) {
        q.init(rng);
        k.init(rng);
        v.init(rng);
        o.init(rng);
        ln1.init(rng);
        ffn1.init(rng);
        ffn2.init(rng);
        ln2.init(rng);
    }

    // x: (N, T, d_model); attn_out (optional) receives the (N*heads, T, T) weights.
    Var forward(Graph<T>& g, Var x, Var* attn_out = nullptr) {
        const Shape xs = g.shape(x);
        const int N = xs[0], Tn = xs[1];
        const int dk = d_model / n_heads;
        auto heads = [&](Var t) {
            t = tc::reshape(g, t, Shape{N, Tn, n_heads, dk});
            t = tc::permute(g, t, {0, 2, 1, 3});
            return tc::reshape(g, t, Shape{N * n_heads, Tn, dk});
        };
        Var qh = heads(q.forward(g, x));
        Var kh = heads(k.forward(g, x));
        Var vh = heads(v.forward(g, x));
        Var scores = tc::scalar_affine(g, tc::bmm(g, qh, kh, true), 1.0 / std::sqrt(double(dk)), 0.0);
        Var attn = tc::softmax(g, scores, 2);
        if (attn_out) *attn_out = attn;
        Var ctx = tc::bmm(g, attn, vh);  // (N*h, T, dk)
        ctx = tc::reshape(g, ctx, Shape{N, n_heads, Tn, dk});
        ctx = tc::permute(g, ctx, {0, 2, 1, 3});
        ctx = tc::reshape(g, ctx, Shape{N, Tn, d_model});
        Var h = ln1.forward(g, tc::add(g, x, o.forward(g, ctx)));
        Var f = ffn2.forward(g, tc::relu(g, ffn1.forward(g, h)));
        return ln2.forward(g, tc::add(g, h, f));
    }
    void collect(const std::string& p, ParamSet<T>& s) {
        q.collect(p + ".q", s);
        k.collect(p + ".k", s);
        v.collect(p + ".v", s);
        o.collect(p + ".o", s);
        ln1.collect(p + ".ln1", s);
        ffn1.collect(p + ".ffn1", s);
        ffn2.collect(p + ".ffn2", s);
        ln2.collect(p + ".ln2", s);
    }
};

// WaveFilter -> linear embed to (seq_len, d_model) -> +learned positions ->
// encoder stack -> mean over time.
template <class T>
struct FreqFormer {
    int seq_len = 0, d_model = 0;
    WaveFilter<T> filter;
    Linear<T> embed;
    Parameter<T> pos;
    std::vector<EncoderLayer<T>> layers;

    FreqFormer() = default;
    FreqFormer(int T_, int d, int heads, int n_layers, int ffn, bool wf_on, double g_low)
        : seq_len(T_), d_model(d), filter(wf_on, g_low),
          embed(kWaveletDim, T_ * d, Init::xavier_uniform), pos(Shape{T_, d}, false) {
        for (int i = 0; i < n_layers; ++i) layers.emplace_back(d, heads, ffn);
    }

    void init(Rng& rng) {
        filter.init(rng);
        embed.init(rng);
        pos.value.fill_normal(rng, T(0), T(0.02));
        for (auto& l : layers) l.init(rng);
    }
    // wav: (N, 282) -> (N, d_model)
    Var forward(Graph<T>& g, Var wav) {
        const int N = g.shape(wav)[0];
        Var x = embed.forward(g, filter.forward(g, wav));
        x = tc::reshape(g, x, Shape{N, seq_len, d_model});
        x = tc::add(g, x, use(g, pos));  // pos (T,d) broadcasts over batch
        for (auto& l : layers) x = l.forward(g, x);
        return tc::adaptive_avg_pool_seq(g, x);
    }
    void collect(const std::string& p, ParamSet<T>& s) {
        filter.collect(p + ".filter", s);
        embed.collect(p + ".embed", s);
        s.add(p + ".pos", pos);
        for (std::size_t i = 0; i < layers.size(); ++i)
            layers[i].collect(p + ".l" + std::to_string(i), s);
    }
};

// Normalized [-1,1] coordinate grid: channel 0 varies over rows, 1 over columns.
template <class T>
Array<T> position_grid(int h, int w) {
    Array<T> grid(Shape{1, 2, h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const T ri = h > 1 ? static_cast<T>(-1.0 + 2.0 * i / (h - 1)) : T(0);
            const T cj = w > 1 ? static_cast<T>(-1.0 + 2.0 * j / (w - 1)) : T(0);
            grid[static_cast<std::size_t>(i) * w + j] = ri;
            grid[static_cast<std::size_t>(h) * w + static_cast<std::size_t>(i) * w + j] = cj;
        }
    return grid;
}

// f(x) = x + ReLU(BN(Conv1x1(position grid))); disabled -> identity.
template <class T>
struct Paff {
    bool enabled = true;
    Conv2d<T> conv;
    BatchNorm2d<T> bn;

    Paff() = default;
    Paff(bool on, int c) : enabled(on) {
        if (enabled) {
            conv = Conv2d<T>(2, c, 1, 1, false, Init::he_normal);
            bn = BatchNorm2d<T>(c);
        }
    }

    void init(Rng& rng) {
        if (!enabled) return;
        conv.init(rng);
        bn.init(rng);
    }
    Var forward(Graph<T>& g, Var x, bool training) {
        if (!enabled) return x;
        const Shape xs = g.shape(x);
        const int N = xs[0], H = xs[2], W = xs[3];
        Var grid = g.leaf(position_grid<T>(H, W));
        grid = tc::broadcast_to(g, grid, Shape{N, 2, H, W});
        Var p = tc::relu(g, bn.forward(g, conv.forward(g, grid), training));
        return tc::add(g, x, p);
    }
    void collect(const std::string& p, ParamSet<T>& s) {
        if (!enabled) return;
        conv.collect(p + ".conv", s);
        bn.collect(p + ".bn", s);
    }
};

template <class T>
struct AttnMaps {
    Var s_h, s_w, s_c;
};

// One coordinate-attention branch (avg or max directional pooling) plus
// channel attention; three-conv reading: shared down-conv, two up-convs.
template <class T>
struct CoordAttention {
    PoolMode mode = PoolMode::avg;
    bool channel_avg = true;  // pool mode for the channel weights
    Conv2d<T> down;
    BatchNorm2d<T> bn;
    Conv2d<T> conv_h, conv_w, conv_c;

    CoordAttention() = default;
    CoordAttention(int c, int dr, PoolMode m, bool ch_avg) : mode(m), channel_avg(ch_avg) {
        const int mid = std::max(8, c / dr);
        down = Conv2d<T>(c, mid, 1, 1, false, Init::he_normal);
        bn = BatchNorm2d<T>(mid);
        conv_h = Conv2d<T>(mid, c, 1, 1, true, Init::xavier_uniform);
        conv_w = Conv2d<T>(mid, c, 1, 1, true, Init::xavier_uniform);
        conv_c = Conv2d<T>(c, c, 1, 1, true, Init::xavier_uniform);
    }

    void init(Rng& rng) {
        down.init(rng);
        bn.init(rng);
        conv_h.init(rng);
        conv_w.init(rng);
        conv_c.init(rng);
    }
    AttnMaps<T> forward(Graph<T>& g, Var f, bool training) {
        const Shape fs = g.shape(f);
        const int H = fs[2], W = fs[3];
        Var ph = tc::directional_pool(g, f, SpatialAxis::width, mode);   // (N,C,H,1)
        Var pw = tc::directional_pool(g, f, SpatialAxis::height, mode);  // (N,C,1,W)
        pw = tc::permute(g, pw, {0, 1, 3, 2});                           // (N,C,W,1)
        Var cat = tc::concat(g, {ph, pw}, 2);                            // (N,C,H+W,1)
        Var mid = tc::relu(g, bn.forward(g, down.forward(g, cat), training));
        Var hpart = tc::slice(g, mid, 2, 0, H);
        Var wpart = tc::slice(g, mid, 2, H, W);
        AttnMaps<T> out;
        out.s_h = tc::sigmoid(g, conv_h.forward(g, hpart));  // (N,C,H,1)
        out.s_w = tc::sigmoid(g, tc::permute(g, conv_w.forward(g, wpart), {0, 1, 3, 2}));
        Var pooled = tc::global_pool(g, f, channel_avg ? PoolMode::avg : PoolMode::max);
        out.s_c = tc::sigmoid(g, conv_c.forward(g, pooled));  // (N,C,1,1)
        return out;
    }
    void collect(const std::string& p, ParamSet<T>& s) {
        down.collect(p + ".down", s);
        bn.collect(p + ".bn", s);
        conv_h.collect(p + ".h", s);
        conv_w.collect(p + ".wd", s);
        conv_c.collect(p + ".ch", s);
    }
};

// Temporal projection + spatial broadcast, channel concat, 1x1 mix, PAFF,
// dual coordinate-attention branches, channel concat, 1x1 restore.
template <class T>
struct Scape {
    int c = 0;  // fused channel count (= image branch output channels)
    Linear<T> tproj;
    Conv2d<T> mix;
    Paff<T> paff;
    CoordAttention<T> att_avg, att_max;
    Conv2d<T> restore;

    Scape() = default;
    Scape(int c_img, int d_model, int dr, bool paff_on, bool max_branch_channel_avg)
        : c(c_img), tproj(d_model, c_img, Init::xavier_uniform),
          mix(2 * c_img, c_img, 1, 1, true, Init::xavier_uniform), paff(paff_on, c_img),
          att_avg(c_img, dr, PoolMode::avg, true),
          att_max(c_img, dr, PoolMode::max, max_branch_channel_avg),
          restore(2 * c_img, c_img, 1, 1, true, Init::xavier_uniform) {}

    void init(Rng& rng) {
        tproj.init(rng);
        mix.init(rng);
        paff.init(rng);
        att_avg.init(rng);
        att_max.init(rng);
        restore.init(rng);
    }
    Var forward(Graph<T>& g, Var img, Var tmp, bool training) {
        const Shape is = g.shape(img);
        const int N = is[0], H = is[2], W = is[3];
        Var t = tproj.forward(g, tmp);  // (N, c)
        t = tc::reshape(g, t, Shape{N, c, 1, 1});
        t = tc::broadcast_to(g, t, Shape{N, c, H, W});
        Var f = mix.forward(g, tc::concat(g, {img, t}, 1));
        f = paff.forward(g, f, training);
        AttnMaps<T> a = att_avg.forward(g, f, training);
        AttnMaps<T> m = att_max.forward(g, f, training);
        Var ym = tc::mul(g, tc::mul(g, tc::mul(g, f, m.s_h), m.s_w), m.s_c);
        Var ya = tc::mul(g, tc::mul(g, tc::mul(g, f, a.s_h), a.s_w), a.s_c);
        return restore.forward(g, tc::concat(g, {ym, ya}, 1));
    }
    void collect(const std::string& p, ParamSet<T>& s) {
        tproj.collect(p + ".tproj", s);
        mix.collect(p + ".mix", s);
        paff.collect(p + ".paff", s);
        att_avg.collect(p + ".avg", s);
        att_max.collect(p + ".max", s);
        restore.collect(p + ".restore", s);
    }
};

}  // namespace amr::nn
