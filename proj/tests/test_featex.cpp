#include <cmath>
#include <cstdio>
#include <set>

#include "amr/featex.hpp"
#include "doctest.h"

using namespace amr;
using namespace amr::feat;

namespace {

std::vector<double> random_signal(std::size_t n, uint64_t seed) {
    std::vector<double> x(n);
    Rng rng(seed);
    for (auto& v : x) v = rng.normal();
    return x;
}

double energy(const std::vector<double>& x) {
    double e = 0.0;
    for (double v : x) e += v * v;
    return e;
}

sig::IqFrame random_frame(std::size_t n, uint64_t seed) {
    sig::IqFrame f;
    f.i_samples = random_signal(n, seed);
    f.q_samples = random_signal(n, seed ^ 0xABCDEF);
    return f;
}

int bin_of(double x, double a, int res) {
    double u = (x + a) / (2.0 * a) * res;
    auto b = static_cast<long>(std::floor(u));
    return static_cast<int>(std::clamp(b, 0L, static_cast<long>(res) - 1));
}

}  // namespace

TEST_CASE("db4 filter sanity") {
    const auto& h = db4_lowpass();
    const auto& g = db4_highpass();
    double sh = 0.0, eh = 0.0, sg = 0.0;
    for (int i = 0; i < 8; ++i) {
        sh += h[static_cast<std::size_t>(i)];
        eh += h[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(i)];
        sg += g[static_cast<std::size_t>(i)];
        CHECK(g[static_cast<std::size_t>(i)] ==
              ((i & 1) ? -1.0 : 1.0) * h[static_cast<std::size_t>(7 - i)]);
    }
    CHECK(std::abs(sh - std::sqrt(2.0)) < 1e-12);
    CHECK(std::abs(eh - 1.0) < 1e-12);
    CHECK(std::abs(sg) < 1e-12);
}

TEST_CASE("two-level symmetric lengths follow floor((n+7)/2)") {
    auto w = dwt_db4_two_level(random_signal(128, 1), Padding::symmetric);
    CHECK(w.detail1.size() == 67);
    CHECK(w.detail2.size() == 37);
    CHECK(w.approx2.size() == 37);
    auto one = dwt_db4(random_signal(67, 2), Padding::symmetric);
    CHECK(one.approx.size() == 37);
    CHECK_THROWS_AS(dwt_db4_two_level(random_signal(7, 3), Padding::symmetric), InvalidArgument);
}

TEST_CASE("zero signal decomposes to zero") {
    auto w = dwt_db4_two_level(std::vector<double>(128, 0.0), Padding::symmetric);
    for (double v : w.approx2) CHECK(v == 0.0);
    for (double v : w.detail2) CHECK(v == 0.0);
    for (double v : w.detail1) CHECK(v == 0.0);
}

TEST_CASE("dwt is linear in both padding modes") {
    auto x = random_signal(128, 11), y = random_signal(128, 12);
    const double a = 1.7, b = -0.6;
    std::vector<double> mix(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + b * y[i];
    for (auto mode : {Padding::symmetric, Padding::periodic}) {
        auto wx = dwt_db4_two_level(x, mode);
        auto wy = dwt_db4_two_level(y, mode);
        auto wm = dwt_db4_two_level(mix, mode);
        for (std::size_t i = 0; i < wm.detail1.size(); ++i)
            CHECK(wm.detail1[i] == doctest::Approx(a * wx.detail1[i] + b * wy.detail1[i]).epsilon(1e-9));
        for (std::size_t i = 0; i < wm.approx2.size(); ++i)
            CHECK(wm.approx2[i] == doctest::Approx(a * wx.approx2[i] + b * wy.approx2[i]).epsilon(1e-9));
    }
}

TEST_CASE("periodic mode preserves energy") {
    auto x = random_signal(128, 21);
    auto w = dwt_db4_two_level(x, Padding::periodic);
    CHECK(w.detail1.size() == 64);
    CHECK(w.detail2.size() == 32);
    CHECK(w.approx2.size() == 32);
    const double total = energy(w.approx2) + energy(w.detail2) + energy(w.detail1);
    CHECK(std::abs(total - energy(x)) < 1e-9);
}

TEST_CASE("unit impulse lands on decimated high-pass taps") {
    std::vector<double> x(128, 0.0);
    x[64] = 1.0;
    auto w = dwt_db4(x, Padding::symmetric);
    const auto& g = db4_highpass();
    // y[i] = sum_j g[j] x[2i+1+j-7]: impulse at 64 hits (i,j) = (32,6)..(35,0)
    for (std::size_t i = 0; i < w.detail.size(); ++i) {
        double want = 0.0;
        if (i == 32) want = g[6];
        if (i == 33) want = g[4];
        if (i == 34) want = g[2];
        if (i == 35) want = g[0];
        CHECK(w.detail[i] == doctest::Approx(want).epsilon(1e-15));
    }
}

TEST_CASE("wavelet vector is 282-dim with the declared band table") {
    sig::IqFrame f = random_frame(128, 31);
    WaveletVector v = pack_wavelet_features(f);
    CHECK(v.values.size() == 282);
    const int offs[6] = {0, 37, 74, 141, 178, 215};
    const int lens[6] = {37, 37, 67, 37, 37, 67};
    for (int b = 0; b < 6; ++b) {
        CHECK(v.bands[static_cast<std::size_t>(b)].offset == offs[b]);
        CHECK(v.bands[static_cast<std::size_t>(b)].length == lens[b]);
    }
    CHECK(std::string(v.bands[0].name) == "cA2_I");
    CHECK(std::string(v.bands[5].name) == "cD1_Q");
}

TEST_CASE("quadrature-silent frame zeroes the Q half of the vector") {
    sig::IqFrame f = random_frame(128, 41);
    f.q_samples.assign(128, 0.0);
    WaveletVector v = pack_wavelet_features(f);
    for (std::size_t i = 141; i < 282; ++i) CHECK(v.values[i] == 0.0);
    double ihalf = 0.0;
    for (std::size_t i = 0; i < 141; ++i) ihalf += std::abs(v.values[i]);
    CHECK(ihalf > 0.0);
}

TEST_CASE("eye trajectory law over the full L,k grid") {
    for (int k : {2, 4, 8, 16})
        for (int L = 16; L <= 256; ++L) {
            auto samples = random_signal(static_cast<std::size_t>(L), 1000 + L);
            if (L < 2 * k) {
                CHECK_THROWS_AS(extract_eye_trajectories(samples, k), InvalidArgument);
                continue;
            }
            auto tr = extract_eye_trajectories(samples, k);
            REQUIRE(static_cast<int>(tr.size()) == L / k - 1);
            for (std::size_t b = 0; b < tr.size(); ++b) {
                REQUIRE(tr[b].size() == static_cast<std::size_t>(2 * k));
                for (int j = 0; j < 2 * k; ++j)
                    CHECK(tr[b][static_cast<std::size_t>(j)] ==
                          samples[b * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)]);
            }
        }
}

TEST_CASE("eye boundary cases") {
    auto s16 = random_signal(16, 5);
    auto tr = extract_eye_trajectories(s16, 8);
    REQUIRE(tr.size() == 1);
    CHECK(tr[0] == s16);

    auto s129 = random_signal(129, 6);
    auto tr2 = extract_eye_trajectories(s129, 8);
    CHECK(tr2.size() == 15);  // floor semantics: sample 128 unused
    CHECK(tr2.back().back() == s129[127]);
}

TEST_CASE("constellation raster conserves mass for 1000 random frames") {
    for (uint64_t i = 0; i < 1000; ++i) {
        sig::IqFrame f = random_frame(128, 5000 + i);
        auto img = rasterize_constellation(f, 32, default_axis_range(f), false);
        CHECK(img.total_mass == 128);
        CHECK(img.pixel_sum() == 128.0);
    }
}

TEST_CASE("all samples at the origin occupy one center bin") {
    sig::IqFrame f;
    f.i_samples.assign(100, 0.0);
    f.q_samples.assign(100, 0.0);
    auto img = rasterize_constellation(f, 32, 1.0, false);
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c)
            CHECK(img.at(r, c) == ((r == 16 && c == 16) ? 100.0f : 0.0f));
}

TEST_CASE("noiseless bpsk occupies two I-axis bins symmetric about center") {
    std::vector<int> bits;
    for (int i = 0; i < 32; ++i) bits.push_back(i % 2);
    sig::IqFrame f = sig::modulate_symbols(sig::Mod::BPSK, bits, 1, sig::Pulse::none);
    auto img = rasterize_constellation(f, 32, 2.0, false);
    std::set<std::pair<int, int>> occupied;
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c)
            if (img.at(r, c) > 0.0f) occupied.insert({r, c});
    CHECK(occupied == std::set<std::pair<int, int>>{{16, 8}, {16, 24}});
    CHECK(8 + 24 == 32);  // columns mirror about the center
}

TEST_CASE("noiseless qam16 at symbol instants forms a 4x4 bin grid") {
    std::vector<int> syms(16);
    for (int i = 0; i < 16; ++i) syms[static_cast<std::size_t>(i)] = i;
    sig::IqFrame f = sig::modulate_symbols(sig::Mod::QAM16, syms, 1, sig::Pulse::none);
    const int res = 64;
    const double a = 1.2;
    auto img = rasterize_constellation(f, res, a, false);

    std::set<int> want_axis;
    const double s = 1.0 / std::sqrt(10.0);
    for (double lvl : {-3.0, -1.0, 1.0, 3.0}) want_axis.insert(bin_of(lvl * s, a, res));
    REQUIRE(want_axis.size() == 4);
    std::set<std::pair<int, int>> occupied, want;
    for (int r : want_axis)
        for (int c : want_axis) want.insert({r, c});
    for (int r = 0; r < res; ++r)
        for (int c = 0; c < res; ++c)
            if (img.at(r, c) > 0.0f) occupied.insert({r, c});
    CHECK(occupied == want);
}

TEST_CASE("flat zero trajectory draws one center row") {
    const int res = 17;
    std::vector<std::vector<double>> tr{std::vector<double>(16, 0.0)};
    auto img = rasterize_eye(tr, res, 1.0, false);
    CHECK(img.n_trajectories == 1);
    CHECK(img.k == 8);
    double mass = 0.0;
    for (int r = 0; r < res; ++r)
        for (int c = 0; c < res; ++c) {
            if (r != 8) CHECK(img.at(r, c) == 0.0f);
            mass += img.at(r, c);
        }
    CHECK(mass == static_cast<double>(res));  // a continuous line across all columns

    auto img2 = rasterize_eye({tr[0], tr[0]}, res, 1.0, false);
    for (int r = 0; r < res; ++r)
        for (int c = 0; c < res; ++c) CHECK(img2.at(r, c) == 2.0f * img.at(r, c));
}

TEST_CASE("noiseless bpsk eye: symbol-center column stays near the rails") {
    const int k = 8, res = 33;
    std::vector<int> bits = {0, 1, 0, 0, 1, 1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0};
    sig::IqFrame f = sig::modulate_symbols(sig::Mod::BPSK, bits, k, sig::Pulse::rrc);
    auto tr = extract_eye_trajectories(f, k);
    double amax = 0.0;
    for (double v : f.i_samples) amax = std::max(amax, std::abs(v));
    auto img = rasterize_eye(tr, res, amax, false);

    // rows reachable at the center column come from samples k-1..k+1 of each window
    double rail = 1e300;
    for (std::size_t b = 0; b < tr.size(); ++b)
        for (int j = k - 1; j <= k + 1; ++j)
            rail = std::min(rail, std::abs(tr[b][static_cast<std::size_t>(j)]));
    const int col = static_cast<int>(std::lround(8.0 * (res - 1) / 15.0));
    const double row_step = 2.0 * amax / (res - 1);
    bool top = false, bottom = false;
    for (int r = 0; r < res; ++r) {
        if (img.at(r, col) == 0.0f) continue;
        const double y = -amax + r * row_step;
        CHECK(std::abs(y) >= rail - row_step);
        top = top || y > 0.0;
        bottom = bottom || y < 0.0;
    }
    CHECK(top);
    CHECK(bottom);
    CHECK(rail > 0.4 * amax);  // root-raised-cosine alone leaves some ISI at the instants
}

TEST_CASE("featset file round-trips bit-exactly") {
    sig::RawDataset raw;
    raw.frame_length = 64;
    raw.samples_per_symbol = 8;
    for (int i = 0; i < 6; ++i) {
        sig::IqFrame f = sig::modulate(static_cast<sig::Mod>(i % 3), 8, 8, 400 + i);
        f.frame_id = static_cast<uint64_t>(i);
        f.snr_db = 2.0 * i - 4.0;
        raw.frames.push_back(std::move(f));
    }
    FeatSet fs = featurize(raw, 16, 8);
    CHECK(fs.size() == 6);
    CHECK(fs.res == 16);
    auto probe = dwt_db4_two_level(std::vector<double>(64, 0.0), Padding::symmetric);
    const auto per_channel = probe.approx2.size() + probe.detail2.size() + probe.detail1.size();
    CHECK(per_channel == 77);  // 64 -> 35 at level one, 35 -> 21 at level two
    CHECK(fs.wavelet_dim == static_cast<int>(2 * per_channel));
    write_featset("feat_test_rt.amrf", fs);
    FeatSet back = read_featset("feat_test_rt.amrf");
    CHECK(back.res == fs.res);
    CHECK(back.eye_k == fs.eye_k);
    CHECK(back.wavelet_dim == fs.wavelet_dim);
    CHECK(back.labels == fs.labels);
    CHECK(back.snr_db == fs.snr_db);
    CHECK(back.cons == fs.cons);
    CHECK(back.eye == fs.eye);
    CHECK(back.wav == fs.wav);
    std::remove("feat_test_rt.amrf");
}

TEST_CASE("featurize rejects too-small rasters") {
    sig::RawDataset raw;
    raw.frame_length = 32;
    raw.samples_per_symbol = 4;
    sig::IqFrame f = sig::modulate(sig::Mod::BPSK, 8, 4, 1);
    raw.frames.push_back(f);
    CHECK_THROWS_AS(featurize(raw, 4, 4), InvalidArgument);
}
