#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "amr/gradcheck.hpp"
#include "amr/mcanet.hpp"
#include "doctest.h"

using namespace amr;
using nn::Var;
using Graphd = nn::Graph<double>;

namespace {

Array<double> rand_array(Shape s, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Array<double> a(std::move(s));
    Rng rng(seed);
    a.fill_uniform(rng, lo, hi);
    return a;
}

double max_abs(const Array<double>& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i]));
    return m;
}

double max_diff(const Array<double>& a, const Array<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

McanetConfig tiny_config() {
    McanetConfig c;
    c.n_classes = 5;
    c.image_res = 16;
    c.d_model = 8;
    c.seq_len = 4;
    c.n_heads = 2;
    c.n_encoder_layers = 1;
    c.ffn_dim = 16;
    c.cnn_channels = {8, 16};
    c.cnn_blocks_per_stage = 1;
    c.reduction_ratio = 4;
    return c;
}

std::set<std::string> param_names(nn::ParamSet<double>& s) {
    std::set<std::string> out;
    for (auto& [name, p] : s.params) out.insert(name);
    return out;
}

}  // namespace

TEST_CASE("config validates defaults and rejects bad fields") {
    McanetConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.n_stages() == 3);
    CHECK(c.feat_res() == 8);
    CHECK(c.feat_channels() == 64);

    auto bad = c;
    bad.n_classes = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.cnn_channels.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.image_res = 60;  // not divisible by 2^3
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.d_model = 62;  // not divisible by n_heads
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.g_low = 0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config json round-trips every field") {
    McanetConfig c = tiny_config();
    c.enable_paff = false;
    c.max_branch_channel_avg = false;
    c.g_low = 2.25;
    McanetConfig back = McanetConfig::from_json(c.to_json());
    CHECK(back.n_classes == c.n_classes);
    CHECK(back.image_res == c.image_res);
    CHECK(back.d_model == c.d_model);
    CHECK(back.seq_len == c.seq_len);
    CHECK(back.n_heads == c.n_heads);
    CHECK(back.n_encoder_layers == c.n_encoder_layers);
    CHECK(back.ffn_dim == c.ffn_dim);
    CHECK(back.cnn_channels == c.cnn_channels);
    CHECK(back.cnn_blocks_per_stage == c.cnn_blocks_per_stage);
    CHECK(back.reduction_ratio == c.reduction_ratio);
    CHECK(back.g_low == c.g_low);
    CHECK(back.enable_paff == c.enable_paff);
    CHECK(back.enable_wavefilter == c.enable_wavefilter);
    CHECK(back.enable_fusion_gate == c.enable_fusion_gate);
    CHECK(back.max_branch_channel_avg == c.max_branch_channel_avg);

    CHECK_THROWS_AS(McanetConfig::from_json("{"), ConfigError);
    CHECK_THROWS_AS(McanetConfig::from_json(R"({"n_classes":"four"})"), ConfigError);
    CHECK_THROWS_AS(McanetConfig::from_json(R"({"image_res":20})"), ConfigError);
}

TEST_CASE("fresh branch maps zero rasters to zero features") {
    nn::BranchCnn<double> branch({8, 16}, 1);
    Rng rng(7);
    branch.init(rng);
    Graphd g;
    Var x = g.leaf(Array<double>(Shape{2, 1, 16, 16}));  // zeros
    Var y = branch.forward(g, x, false);
    CHECK(g.shape(y) == Shape{2, 16, 4, 4});
    CHECK(max_abs(g.val(y)) == 0.0);
}

TEST_CASE("residual block with a silenced second conv is a relu passthrough") {
    nn::ResidualBlock<double> rb(4, 4, 1);
    Rng rng(8);
    rb.init(rng);
    rb.conv2.w.value.fill(0.0);
    Graphd g;
    Array<double> x = rand_array({2, 4, 6, 6}, 9);
    Var out = rb.forward(g, g.leaf(x), false);
    const auto& ov = g.val(out);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(ov[i] == std::max(0.0, x[i]));
}

TEST_CASE("default branch reduces 64x64 rasters to (N,64,8,8)") {
    McanetConfig c;  // defaults
    nn::BranchCnn<double> branch(c.cnn_channels, c.cnn_blocks_per_stage);
    Rng rng(10);
    branch.init(rng);
    Graphd g;
    Var y = branch.forward(g, g.leaf(rand_array({1, 1, 64, 64}, 11)), false);
    CHECK(g.shape(y) == Shape{1, 64, 8, 8});
}

TEST_CASE("fusion gate: convex mix, midpoint at w=0, analytic dz/dw") {
    Array<double> xa = rand_array({3, 4}, 20), ya = rand_array({3, 4}, 21);

    nn::FusionGate<double> gate(true);
    Rng rng(22);
    gate.init(rng);
    {
        Graphd g;
        Var z = gate.forward(g, g.leaf(xa), g.leaf(ya));
        const auto& zv = g.val(z);
        for (std::size_t i = 0; i < xa.size(); ++i) {
            CHECK(zv[i] == doctest::Approx(0.5 * xa[i] + 0.5 * ya[i]).epsilon(1e-15));
            CHECK(zv[i] >= std::min(xa[i], ya[i]) - 1e-15);
            CHECK(zv[i] <= std::max(xa[i], ya[i]) + 1e-15);
        }
    }
    {
        // identical inputs pass through (up to one rounding of ax + (1-a)x)
        gate.w.value[0] = 0.73;
        Graphd g;
        Var z = gate.forward(g, g.leaf(xa), g.leaf(xa));
        CHECK(max_diff(g.val(z), xa) < 1e-15);
    }
    for (double w : {20.0, -20.0}) {
        gate.w.value[0] = w;
        Graphd g;
        Var z = gate.forward(g, g.leaf(xa), g.leaf(ya));
        const Array<double>& pick = w > 0 ? xa : ya;
        CHECK(max_diff(g.val(z), pick) < 1e-7);
    }
    {
        // d/dw [s*x + (1-s)*y] = s(1-s) * sum(x - y) for a summed loss
        gate.w.value[0] = 0.3;
        gate.w.zero_grad();
        Graphd g;
        Var z = gate.forward(g, g.leaf(xa), g.leaf(ya));
        g.backward(tc::sum_all(g, z));
        const double s = 1.0 / (1.0 + std::exp(-0.3));
        double want = 0.0;
        for (std::size_t i = 0; i < xa.size(); ++i) want += s * (1.0 - s) * (xa[i] - ya[i]);
        CHECK(gate.w.grad[0] == doctest::Approx(want).epsilon(1e-10));
    }
    {
        nn::FusionGate<double> off(false);
        nn::ParamSet<double> s;
        off.collect("dual.gate", s);
        CHECK(s.count() == 0);
        Graphd g;
        Var z = off.forward(g, g.leaf(xa), g.leaf(ya));
        for (std::size_t i = 0; i < xa.size(); ++i)
            CHECK(g.val(z)[i] == doctest::Approx(0.5 * (xa[i] + ya[i])).epsilon(1e-15));
        Graphd g2;
        CHECK_THROWS_AS(off.forward(g2, g2.leaf(xa), g2.leaf(rand_array({4, 3}, 23))), ShapeError);
    }
}

TEST_CASE("wave filter applies the fixed low gain and sigmoid detail gains") {
    Array<double> v = rand_array({2, nn::kWaveletDim}, 30);
    nn::WaveFilter<double> wf(true, 1.5);
    Rng rng(31);
    wf.init(rng);  // theta = 0 -> every detail gain is exactly 0.5

    Graphd g;
    Var y = wf.forward(g, g.leaf(v));
    const auto& yv = g.val(y);
    const int offs[6] = {0, 37, 74, 141, 178, 215};
    const int lens[6] = {37, 37, 67, 37, 37, 67};
    const bool low[6] = {true, false, false, true, false, false};
    for (int n = 0; n < 2; ++n)
        for (int b = 0; b < 6; ++b)
            for (int i = 0; i < lens[b]; ++i) {
                const std::size_t at = static_cast<std::size_t>(n) * nn::kWaveletDim +
                                       static_cast<std::size_t>(offs[b] + i);
                CHECK(yv[at] == (low[b] ? 1.5 * v[at] : 0.5 * v[at]));
            }

    wf.theta.value.fill(20.0);  // saturated gains: details pass through
    Graphd g2;
    const auto& y2 = g2.val(wf.forward(g2, g2.leaf(v)));
    for (int n = 0; n < 2; ++n)
        for (int b = 0; b < 6; ++b)
            for (int i = 0; i < lens[b]; ++i) {
                const std::size_t at = static_cast<std::size_t>(n) * nn::kWaveletDim +
                                       static_cast<std::size_t>(offs[b] + i);
                if (low[b])
                    CHECK(y2[at] == 1.5 * v[at]);
                else
                    CHECK(std::abs(y2[at] - v[at]) < 1e-8);
            }

    nn::WaveFilter<double> off(false, 1.5);
    Graphd g3;
    Var vin = g3.leaf(v);
    CHECK(max_diff(g3.val(off.forward(g3, vin)), v) == 0.0);

    Graphd g4;
    CHECK_THROWS_AS(wf.forward(g4, g4.leaf(rand_array({2, 283}, 32))), ShapeError);
}

TEST_CASE("attention weights are row-stochastic; equal tokens attend uniformly") {
    nn::EncoderLayer<double> el(8, 2, 16);
    Rng rng(40);
    el.init(rng);
    Graphd g;
    Var attn;
    el.forward(g, g.leaf(rand_array({2, 5, 8}, 41)), &attn);
    const auto& av = g.val(attn);
    REQUIRE(g.shape(attn) == Shape{4, 5, 5});
    for (int r = 0; r < 4 * 5; ++r) {
        double s = 0.0;
        for (int c = 0; c < 5; ++c) s += av[static_cast<std::size_t>(r) * 5 + c];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }

    // every token identical -> uniform rows
    Array<double> same(Shape{2, 5, 8});
    Array<double> row = rand_array({8}, 42);
    for (int n = 0; n < 2; ++n)
        for (int t = 0; t < 5; ++t)
            for (int d = 0; d < 8; ++d)
                same[static_cast<std::size_t>((n * 5 + t) * 8 + d)] = row[static_cast<std::size_t>(d)];
    Graphd g2;
    Var attn2;
    el.forward(g2, g2.leaf(same), &attn2);
    const auto& a2 = g2.val(attn2);
    for (std::size_t i = 0; i < a2.size(); ++i) CHECK(std::abs(a2[i] - 0.2) < 1e-12);
}

TEST_CASE("single-head encoder layer matches a from-scratch loop oracle") {
    const int N = 2, T = 3, D = 8, F = 12;
    nn::EncoderLayer<double> el(D, 1, F);
    Rng rng(50);
    el.init(rng);
    // randomize the pieces that init leaves at fixed values
    el.q.b.value.fill_uniform(rng, -0.3, 0.3);
    el.k.b.value.fill_uniform(rng, -0.3, 0.3);
    el.v.b.value.fill_uniform(rng, -0.3, 0.3);
    el.o.b.value.fill_uniform(rng, -0.3, 0.3);
    el.ln1.gamma.value.fill_uniform(rng, 0.8, 1.2);
    el.ln1.beta.value.fill_uniform(rng, -0.1, 0.1);
    el.ln2.gamma.value.fill_uniform(rng, 0.8, 1.2);
    el.ln2.beta.value.fill_uniform(rng, -0.1, 0.1);

    Array<double> x = rand_array({N, T, D}, 51);
    Graphd g;
    Var out = el.forward(g, g.leaf(x));
    const auto& ov = g.val(out);

    auto lin = [&](const Array<double>& in, const nn::Linear<double>& l, int dout) {
        std::vector<double> r(static_cast<std::size_t>(N) * T * dout);
        for (int n = 0; n < N; ++n)
            for (int t = 0; t < T; ++t)
                for (int j = 0; j < dout; ++j) {
                    double acc = l.b.value[static_cast<std::size_t>(j)];
                    for (int i = 0; i < D; ++i)
                        acc += in[static_cast<std::size_t>((n * T + t) * D + i)] *
                               l.w.value[static_cast<std::size_t>(i * dout + j)];
                    r[static_cast<std::size_t>((n * T + t) * dout + j)] = acc;
                }
        return r;
    };
    auto ln = [&](std::vector<double>& v, const nn::LayerNorm<double>& l) {
        for (int r = 0; r < N * T; ++r) {
            double m = 0.0;
            for (int d = 0; d < D; ++d) m += v[static_cast<std::size_t>(r * D + d)];
            m /= D;
            double var = 0.0;
            for (int d = 0; d < D; ++d) {
                const double c = v[static_cast<std::size_t>(r * D + d)] - m;
                var += c * c;
            }
            var /= D;
            const double is = 1.0 / std::sqrt(var + 1e-5);
            for (int d = 0; d < D; ++d)
                v[static_cast<std::size_t>(r * D + d)] =
                    l.gamma.value[static_cast<std::size_t>(d)] *
                        (v[static_cast<std::size_t>(r * D + d)] - m) * is +
                    l.beta.value[static_cast<std::size_t>(d)];
        }
    };

    auto Q = lin(x, el.q, D), K = lin(x, el.k, D), V = lin(x, el.v, D);
    std::vector<double> ctx(static_cast<std::size_t>(N) * T * D);
    for (int n = 0; n < N; ++n)
        for (int i = 0; i < T; ++i) {
            std::vector<double> sc(static_cast<std::size_t>(T));
            double mx = -1e300;
            for (int j = 0; j < T; ++j) {
                double dot = 0.0;
                for (int d = 0; d < D; ++d)
                    dot += Q[static_cast<std::size_t>((n * T + i) * D + d)] *
                           K[static_cast<std::size_t>((n * T + j) * D + d)];
                sc[static_cast<std::size_t>(j)] = dot / std::sqrt(double(D));
                mx = std::max(mx, sc[static_cast<std::size_t>(j)]);
            }
            double z = 0.0;
            for (double& s : sc) {
                s = std::exp(s - mx);
                z += s;
            }
            for (int j = 0; j < T; ++j)
                for (int d = 0; d < D; ++d)
                    ctx[static_cast<std::size_t>((n * T + i) * D + d)] +=
                        sc[static_cast<std::size_t>(j)] / z *
                        V[static_cast<std::size_t>((n * T + j) * D + d)];
        }
    Array<double> ctxa = Array<double>::from(Shape{N, T, D}, ctx);
    auto oproj = lin(ctxa, el.o, D);
    std::vector<double> h(static_cast<std::size_t>(N) * T * D);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = x[i] + oproj[i];
    ln(h, el.ln1);

    // ffn: relu(h W1 + b1) W2 + b2
    std::vector<double> f(static_cast<std::size_t>(N) * T * D);
    for (int r = 0; r < N * T; ++r)
        for (int j = 0; j < D; ++j) {
            double acc = el.ffn2.b.value[static_cast<std::size_t>(j)];
            for (int m = 0; m < F; ++m) {
                double a = el.ffn1.b.value[static_cast<std::size_t>(m)];
                for (int i = 0; i < D; ++i)
                    a += h[static_cast<std::size_t>(r * D + i)] *
                         el.ffn1.w.value[static_cast<std::size_t>(i * F + m)];
                acc += std::max(0.0, a) * el.ffn2.w.value[static_cast<std::size_t>(m * D + j)];
            }
            f[static_cast<std::size_t>(r * D + j)] = acc;
        }
    for (std::size_t i = 0; i < f.size(); ++i) f[i] += h[i];
    ln(f, el.ln2);

    for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(ov[i] - f[i]) < 1e-10);
}

TEST_CASE("position grid spans [-1,1] per axis and zeroes degenerate axes") {
    auto g22 = nn::position_grid<double>(2, 2);
    CHECK(g22.shape == Shape{1, 2, 2, 2});
    // channel 0: rows; channel 1: columns
    CHECK(g22[0] == -1.0);
    CHECK(g22[1] == -1.0);
    CHECK(g22[2] == 1.0);
    CHECK(g22[3] == 1.0);
    CHECK(g22[4] == -1.0);
    CHECK(g22[5] == 1.0);
    CHECK(g22[6] == -1.0);
    CHECK(g22[7] == 1.0);

    auto g33 = nn::position_grid<double>(3, 3);
    CHECK(g33[static_cast<std::size_t>(4)] == 0.0);   // center row coord
    CHECK(g33[static_cast<std::size_t>(13)] == 0.0);  // center col coord
    CHECK(g33[0] == -1.0);
    CHECK(g33[8] == 1.0);

    auto g14 = nn::position_grid<double>(1, 4);
    for (int j = 0; j < 4; ++j) CHECK(g14[static_cast<std::size_t>(j)] == 0.0);  // H == 1
    CHECK(g14[4] == -1.0);
    CHECK(g14[7] == 1.0);
}

TEST_CASE("paff with a silenced conv is exactly the identity") {
    nn::Paff<double> pf(true, 6);
    Rng rng(60);
    pf.init(rng);
    pf.conv.w.value.fill(0.0);
    Array<double> x = rand_array({2, 6, 4, 4}, 61);
    Graphd g;
    Var y = pf.forward(g, g.leaf(x), false);
    CHECK(max_diff(g.val(y), x) == 0.0);

    nn::Paff<double> off(false, 6);
    Graphd g2;
    Var xin = g2.leaf(x);
    CHECK(max_diff(g2.val(off.forward(g2, xin, false)), x) == 0.0);
    nn::ParamSet<double> s;
    off.collect("p", s);
    CHECK(s.count() == 0);
}

TEST_CASE("coordinate attention bottleneck width follows max(8, C/Dr)") {
    struct Case {
        int c, dr, want;
    } cases[] = {{256, 32, 8}, {64, 32, 8}, {512, 16, 32}};
    for (auto [c, dr, want] : cases) {
        nn::CoordAttention<double> ca(c, dr, nn::PoolMode::avg, true);
        CHECK(ca.down.w.value.shape[0] == want);
        CHECK(ca.down.w.value.shape[1] == c);
    }
}

namespace {

// plain-loop mirror of Scape::forward (paff disabled, BN in eval mode)
struct ScapeOracle {
    std::vector<double> f, out;
};

ScapeOracle scape_oracle(nn::Scape<double>& sc, const Array<double>& img,
                         const Array<double>& tmp) {
    const int N = img.shape[0], C = img.shape[1], H = img.shape[2], W = img.shape[3];
    const int dm = tmp.shape[1];
    const int mid = sc.att_avg.down.w.value.shape[0];
    auto idx = [&](int n, int c, int h, int w) {
        return static_cast<std::size_t>(((n * C + c) * H + h) * W + w);
    };

    // tproj + broadcast + concat + 1x1 mix
    std::vector<double> t(static_cast<std::size_t>(N) * C);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double acc = sc.tproj.b.value[static_cast<std::size_t>(c)];
            for (int d = 0; d < dm; ++d)
                acc += tmp[static_cast<std::size_t>(n * dm + d)] *
                       sc.tproj.w.value[static_cast<std::size_t>(d * C + c)];
            t[static_cast<std::size_t>(n * C + c)] = acc;
        }
    std::vector<double> f(static_cast<std::size_t>(N) * C * H * W);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    double acc = sc.mix.b.value[static_cast<std::size_t>(c)];
                    for (int ci = 0; ci < 2 * C; ++ci) {
                        const double in = ci < C ? img[idx(n, ci, h, w)]
                                                 : t[static_cast<std::size_t>(n * C + (ci - C))];
                        acc += sc.mix.w.value[static_cast<std::size_t>(c * 2 * C + ci)] * in;
                    }
                    f[idx(n, c, h, w)] = acc;
                }

    auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    auto branch = [&](nn::CoordAttention<double>& ca, std::vector<double>& sh,
                      std::vector<double>& sw, std::vector<double>& sch) {
        const bool mx = ca.mode == nn::PoolMode::max;
        std::vector<double> cat(static_cast<std::size_t>(N) * C * (H + W));
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                for (int h = 0; h < H; ++h) {
                    double acc = mx ? -1e300 : 0.0;
                    for (int w = 0; w < W; ++w)
                        acc = mx ? std::max(acc, f[idx(n, c, h, w)]) : acc + f[idx(n, c, h, w)];
                    cat[static_cast<std::size_t>((n * C + c) * (H + W) + h)] = mx ? acc : acc / W;
                }
                for (int w = 0; w < W; ++w) {
                    double acc = mx ? -1e300 : 0.0;
                    for (int h = 0; h < H; ++h)
                        acc = mx ? std::max(acc, f[idx(n, c, h, w)]) : acc + f[idx(n, c, h, w)];
                    cat[static_cast<std::size_t>((n * C + c) * (H + W) + H + w)] = mx ? acc : acc / H;
                }
            }
        std::vector<double> midv(static_cast<std::size_t>(N) * mid * (H + W));
        for (int n = 0; n < N; ++n)
            for (int m = 0; m < mid; ++m)
                for (int i = 0; i < H + W; ++i) {
                    double acc = 0.0;
                    for (int c = 0; c < C; ++c)
                        acc += ca.down.w.value[static_cast<std::size_t>(m * C + c)] *
                               cat[static_cast<std::size_t>((n * C + c) * (H + W) + i)];
                    const double gm = ca.bn.gamma.value[static_cast<std::size_t>(m)];
                    const double bt = ca.bn.beta.value[static_cast<std::size_t>(m)];
                    const double rm = ca.bn.running_mean[static_cast<std::size_t>(m)];
                    const double rv = ca.bn.running_var[static_cast<std::size_t>(m)];
                    acc = gm * (acc - rm) / std::sqrt(rv + 1e-5) + bt;
                    midv[static_cast<std::size_t>((n * mid + m) * (H + W) + i)] = std::max(0.0, acc);
                }
        sh.assign(static_cast<std::size_t>(N) * C * H, 0.0);
        sw.assign(static_cast<std::size_t>(N) * C * W, 0.0);
        sch.assign(static_cast<std::size_t>(N) * C, 0.0);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                for (int h = 0; h < H; ++h) {
                    double acc = ca.conv_h.b.value[static_cast<std::size_t>(c)];
                    for (int m = 0; m < mid; ++m)
                        acc += ca.conv_h.w.value[static_cast<std::size_t>(c * mid + m)] *
                               midv[static_cast<std::size_t>((n * mid + m) * (H + W) + h)];
                    sh[static_cast<std::size_t>((n * C + c) * H + h)] = sigmoid(acc);
                }
                for (int w = 0; w < W; ++w) {
                    double acc = ca.conv_w.b.value[static_cast<std::size_t>(c)];
                    for (int m = 0; m < mid; ++m)
                        acc += ca.conv_w.w.value[static_cast<std::size_t>(c * mid + m)] *
                               midv[static_cast<std::size_t>((n * mid + m) * (H + W) + H + w)];
                    sw[static_cast<std::size_t>((n * C + c) * W + w)] = sigmoid(acc);
                }
                double pool = ca.channel_avg ? 0.0 : -1e300;
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        pool = ca.channel_avg ? pool + f[idx(n, c, h, w)]
                                              : std::max(pool, f[idx(n, c, h, w)]);
                if (ca.channel_avg) pool /= H * W;
                cat[static_cast<std::size_t>(n * C + c)] = pool;  // reuse head of cat as scratch
            }
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                double acc = ca.conv_c.b.value[static_cast<std::size_t>(c)];
                for (int c2 = 0; c2 < C; ++c2)
                    acc += ca.conv_c.w.value[static_cast<std::size_t>(c * C + c2)] *
                           cat[static_cast<std::size_t>(n * C + c2)];
                sch[static_cast<std::size_t>(n * C + c)] = sigmoid(acc);
            }
    };

    std::vector<double> ash, asw, asc, msh, msw, msc;
    branch(sc.att_avg, ash, asw, asc);
    branch(sc.att_max, msh, msw, msc);

    std::vector<double> out(static_cast<std::size_t>(N) * C * H * W);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    double acc = sc.restore.b.value[static_cast<std::size_t>(c)];
                    for (int ci = 0; ci < 2 * C; ++ci) {
                        const int cc = ci < C ? ci : ci - C;
                        const bool is_max = ci < C;  // restore reads (ym, ya)
                        const double y =
                            f[idx(n, cc, h, w)] *
                            (is_max ? msh[static_cast<std::size_t>((n * C + cc) * H + h)] *
                                          msw[static_cast<std::size_t>((n * C + cc) * W + w)] *
                                          msc[static_cast<std::size_t>(n * C + cc)]
                                    : ash[static_cast<std::size_t>((n * C + cc) * H + h)] *
                                          asw[static_cast<std::size_t>((n * C + cc) * W + w)] *
                                          asc[static_cast<std::size_t>(n * C + cc)]);
                        acc += sc.restore.w.value[static_cast<std::size_t>(c * 2 * C + ci)] * y;
                    }
                    out[idx(n, c, h, w)] = acc;
                }
    ScapeOracle o;
    o.f = std::move(f);
    o.out = std::move(out);
    return o;
}

}  // namespace

TEST_CASE("scape forward matches a triple-loop oracle") {
    const int N = 2, C = 5, H = 2, W = 3, dm = 3;
    nn::Scape<double> sc(C, dm, 4, false, false);  // paff off, max branch pools channels by max
    Rng rng(70);
    sc.init(rng);
    // shake the BN affine/stats so the oracle must honor them
    for (auto* ca : {&sc.att_avg, &sc.att_max}) {
        ca->bn.gamma.value.fill_uniform(rng, 0.8, 1.2);
        ca->bn.beta.value.fill_uniform(rng, -0.2, 0.2);
        ca->bn.running_mean.fill_uniform(rng, -0.2, 0.2);
        ca->bn.running_var.fill_uniform(rng, 0.7, 1.3);
        ca->conv_h.b.value.fill_uniform(rng, -0.3, 0.3);
        ca->conv_w.b.value.fill_uniform(rng, -0.3, 0.3);
        ca->conv_c.b.value.fill_uniform(rng, -0.3, 0.3);
    }
    Array<double> img = rand_array({N, C, H, W}, 71);
    Array<double> tmp = rand_array({N, dm}, 72);
    ScapeOracle want = scape_oracle(sc, img, tmp);

    Graphd g;
    Var out = sc.forward(g, g.leaf(img), g.leaf(tmp), false);
    const auto& ov = g.val(out);
    REQUIRE(ov.size() == want.out.size());
    for (std::size_t i = 0; i < ov.size(); ++i) CHECK(std::abs(ov[i] - want.out[i]) < 1e-12);
}

TEST_CASE("saturated attention maps reduce both scape branches to the fused features") {
    const int N = 2, C = 6, H = 3, W = 3, dm = 4;
    nn::Scape<double> sc(C, dm, 4, false, true);
    Rng rng(80);
    sc.init(rng);
    for (auto* ca : {&sc.att_avg, &sc.att_max}) {
        ca->conv_h.w.value.fill(0.0);
        ca->conv_w.w.value.fill(0.0);
        ca->conv_c.w.value.fill(0.0);
        ca->conv_h.b.value.fill(20.0);
        ca->conv_w.b.value.fill(20.0);
        ca->conv_c.b.value.fill(20.0);
    }
    Array<double> img = rand_array({N, C, H, W}, 81, -0.5, 0.5);
    Array<double> tmp = rand_array({N, dm}, 82, -0.5, 0.5);

    // rebuild f and the gated halves from the scape's own sublayers
    Graphd g;
    Var imgv = g.leaf(img), tmpv = g.leaf(tmp);
    Var t = sc.tproj.forward(g, tmpv);
    t = tc::reshape(g, t, Shape{N, C, 1, 1});
    t = tc::broadcast_to(g, t, Shape{N, C, H, W});
    Var f = sc.mix.forward(g, tc::concat(g, {imgv, t}, 1));
    auto am = sc.att_max.forward(g, f, false);
    auto aa = sc.att_avg.forward(g, f, false);
    for (Var s : {am.s_h, am.s_w, am.s_c, aa.s_h, aa.s_w, aa.s_c}) {
        const auto& sv = g.val(s);
        for (std::size_t i = 0; i < sv.size(); ++i) CHECK(std::abs(sv[i] - 1.0) < 1e-8);
    }
    Var ym = tc::mul(g, tc::mul(g, tc::mul(g, f, am.s_h), am.s_w), am.s_c);
    Var ya = tc::mul(g, tc::mul(g, tc::mul(g, f, aa.s_h), aa.s_w), aa.s_c);
    const auto& fv = g.val(f);
    for (Var y : {ym, ya}) {
        const auto& yv = g.val(y);
        for (std::size_t i = 0; i < yv.size(); ++i)
            CHECK(std::abs(yv[i] - fv[i]) <= 1e-8 * std::max(1.0, std::abs(fv[i])));
    }
    // and the real forward agrees with restore(concat(ym, ya)) bit for bit
    Var manual = sc.restore.forward(g, tc::concat(g, {ym, ya}, 1));
    Graphd g2;
    Var full = sc.forward(g2, g2.leaf(img), g2.leaf(tmp), false);
    CHECK(max_diff(g.val(manual), g2.val(full)) == 0.0);
}

TEST_CASE("ablation flags carve out exactly the advertised parameters") {
    McanetConfig base = tiny_config();
    McanetModel<double> full(base);
    auto cfg_ng = base;
    cfg_ng.enable_fusion_gate = false;
    auto cfg_nw = base;
    cfg_nw.enable_wavefilter = false;
    auto cfg_np = base;
    cfg_np.enable_paff = false;
    McanetModel<double> no_gate(cfg_ng), no_wf(cfg_nw), no_paff(cfg_np);

    const std::size_t n_full = full.param_count();
    CHECK(no_gate.param_count() == n_full - 1);
    CHECK(no_wf.param_count() == n_full - 4);
    const std::size_t cf = static_cast<std::size_t>(base.feat_channels());
    CHECK(no_paff.param_count() == n_full - 4 * cf);
    CHECK(n_full > no_gate.param_count());
    CHECK(no_gate.param_count() > no_wf.param_count());
    CHECK(no_wf.param_count() > no_paff.param_count());

    auto s_full = full.collect();
    auto s_ng = no_gate.collect();
    auto names_full = param_names(s_full);
    auto names_ng = param_names(s_ng);
    std::set<std::string> diff;
    std::set_difference(names_full.begin(), names_full.end(), names_ng.begin(), names_ng.end(),
                        std::inserter(diff, diff.begin()));
    CHECK(diff == std::set<std::string>{"dual.gate.w"});
    CHECK(names_full.count("freq.filter.theta") == 1);
    CHECK(names_full.count("scape.paff.conv.w") == 1);
}

TEST_CASE("default model parameter count is frozen") {
    McanetModel<float> m((McanetConfig()));
    CHECK(m.param_count() == 594608);
}

TEST_CASE("eval-mode forward is deterministic and batch-order equivariant") {
    McanetConfig c = tiny_config();
    McanetModel<double> m(c);
    m.init(123);
    const int R = c.image_res;
    Array<double> cons = rand_array({2, 1, R, R}, 90, 0.0, 1.0);
    Array<double> eye = rand_array({2, 1, R, R}, 91, 0.0, 1.0);
    Array<double> wav = rand_array({2, nn::kWaveletDim}, 92);

    auto run = [&](const Array<double>& cb, const Array<double>& eb, const Array<double>& wb) {
        Graphd g;
        auto out = m.forward(g, g.leaf(cb), g.leaf(eb), g.leaf(wb), false);
        return std::make_pair(g.val(out.logits), g.val(out.embedding));
    };
    auto [l1, e1] = run(cons, eye, wav);
    auto [l2, e2] = run(cons, eye, wav);
    CHECK(l1.shape == Shape{2, c.n_classes});
    CHECK(e1.shape == Shape{2, c.feat_channels()});
    CHECK(max_diff(l1, l2) == 0.0);

    // swap the two samples: rows must swap bit for bit
    auto swap_rows = [](const Array<double>& a) {
        Array<double> b(a.shape);
        const std::size_t row = a.size() / 2;
        std::copy(a.data() + row, a.data() + 2 * row, b.data());
        std::copy(a.data(), a.data() + row, b.data() + row);
        return b;
    };
    auto [ls, es] = run(swap_rows(cons), swap_rows(eye), swap_rows(wav));
    const std::size_t k = static_cast<std::size_t>(c.n_classes);
    for (std::size_t j = 0; j < k; ++j) {
        CHECK(ls[j] == l1[k + j]);
        CHECK(ls[k + j] == l1[j]);
    }
}

TEST_CASE("forward rejects malformed inputs with stage-tagged errors") {
    McanetConfig c = tiny_config();
    McanetModel<double> m(c);
    m.init(5);
    const int R = c.image_res;
    Graphd g;
    Var cons = g.leaf(rand_array({2, 1, R, R}, 95));
    Var eye_bad = g.leaf(rand_array({2, 1, R / 2, R / 2}, 96));
    Var wav = g.leaf(rand_array({2, nn::kWaveletDim}, 97));
    try {
        m.forward(g, cons, eye_bad, wav, false);
        FAIL("expected a shape error");
    } catch (const Error& e) {
        CHECK(e.code == "shape-error");
        CHECK(std::string(e.what()).rfind("dual_encoder: expected two (N,1,16,16) rasters", 0) == 0);
    }

    Graphd g2;
    Var cons2 = g2.leaf(rand_array({2, 1, R, R}, 95));
    Var eye2 = g2.leaf(rand_array({2, 1, R, R}, 96));
    Var wav_bad = g2.leaf(rand_array({2, 100}, 97));
    try {
        m.forward(g2, cons2, eye2, wav_bad, false);
        FAIL("expected a shape error");
    } catch (const Error& e) {
        CHECK(e.code == "shape-error");
        CHECK(std::string(e.what()).rfind("freqformer: wave_filter:", 0) == 0);
    }
}

TEST_CASE("fusion gate gradcheck scope passes") {
    for (const auto& r : run_gradchecks("fusion-gate")) {
        INFO(r.name);
        CHECK(r.pass);
        CHECK(r.max_rel_err < r.tolerance);
    }
}
