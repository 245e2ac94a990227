#include "amr/featex.hpp"

#include <cmath>

namespace amr::feat {

const std::array<double, 8>& db4_lowpass() {
    static const std::array<double, 8> h = {
        0.23037781330885523,  0.71484657055254153,  0.63088076792959036,
        -0.02798376941698385, -0.18703481171888114, 0.030841381835986965,
        0.032883011666982945, -0.010597401784997278,
    };
    return h;
}

const std::array<double, 8>& db4_highpass() {
    static const std::array<double, 8> g = [] {
        const auto& h = db4_lowpass();
        std::array<double, 8> g_{};
        for (int n = 0; n < 8; ++n) g_[n] = ((n & 1) ? -1.0 : 1.0) * h[7 - n];
        return g_;
    }();
    return g;
}

namespace {

// half-sample symmetric reflection of t into [0, n)
std::size_t reflect(long t, long n) {
    while (t < 0 || t >= n) {
        if (t < 0) t = -t - 1;
        if (t >= n) t = 2 * n - 1 - t;
    }
    return static_cast<std::size_t>(t);
}

}  // namespace

DwtPair dwt_db4(const std::vector<double>& x, Padding mode) {
    if (x.size() < 2) throw InvalidArgument("dwt input must have at least 2 samples");
    const auto& h = db4_lowpass();
    const auto& g = db4_highpass();

    std::vector<double> buf;
    const std::vector<double>* src = &x;
    if (mode == Padding::periodic && x.size() % 2 != 0) {
        buf = x;
        buf.push_back(x.back());  // periodization needs an even length
        src = &buf;
    }
    const long n = static_cast<long>(src->size());
    const std::size_t out_len = (mode == Padding::symmetric)
                                    ? static_cast<std::size_t>((n + 7) / 2)
                                    : static_cast<std::size_t>(n / 2);
    DwtPair out;
    out.approx.resize(out_len);
    out.detail.resize(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        double a = 0.0, d = 0.0;
        for (int j = 0; j < 8; ++j) {
            long t = 2 * static_cast<long>(i) + 1 + j - 7;
            std::size_t idx = (mode == Padding::symmetric)
                                  ? reflect(t, n)
                                  : static_cast<std::size_t>(((t % n) + n) % n);
            double v = (*src)[idx];
            a += h[j] * v;
            d += g[j] * v;
        }
        out.approx[i] = a;
        out.detail[i] = d;
    }
    return out;
}

Dwt2Level dwt_db4_two_level(const std::vector<double>& x, Padding mode) {
    if (x.size() < 8) throw InvalidArgument("two-level dwt needs at least 8 samples");
    DwtPair l1 = dwt_db4(x, mode);
    DwtPair l2 = dwt_db4(l1.approx, mode);
    Dwt2Level out;
    out.approx2 = std::move(l2.approx);
    out.detail2 = std::move(l2.detail);
    out.detail1 = std::move(l1.detail);
    return out;
}

WaveletVector pack_wavelet_features(const sig::IqFrame& frame) {
    Dwt2Level wi = dwt_db4_two_level(frame.i_samples, Padding::symmetric);
    Dwt2Level wq = dwt_db4_two_level(frame.q_samples, Padding::symmetric);
    WaveletVector v;
    auto append = [&v](const char* name, const std::vector<double>& band, int slot) {
        v.bands[slot] = {name, static_cast<int>(v.values.size()), static_cast<int>(band.size())};
        v.values.insert(v.values.end(), band.begin(), band.end());
    };
    append("cA2_I", wi.approx2, 0);
    append("cD2_I", wi.detail2, 1);
    append("cD1_I", wi.detail1, 2);
    append("cA2_Q", wq.approx2, 3);
    append("cD2_Q", wq.detail2, 4);
    append("cD1_Q", wq.detail1, 5);
    return v;
}

double ConstellationImage::pixel_sum() const {
    double acc = 0.0;
    for (float v : pixels) acc += v;
    return acc;
}

double default_axis_range(const sig::IqFrame& frame) {
    double a = 3.5 * std::sqrt(frame.mean_power());
    return a > 0.0 ? a : 1.0;
}

namespace {

int clip_bin(double x, double lo, double hi, int res) {
    // [lo, hi) split into res equal bins; outside values land on the edge bins
    double u = (x - lo) / (hi - lo) * res;
    auto b = static_cast<long>(std::floor(u));
    if (b < 0) b = 0;
    if (b >= res) b = res - 1;
    return static_cast<int>(b);
}

void normalize_max(std::vector<float>& px) {
    float mx = 0.0f;
    for (float v : px) mx = std::max(mx, v);
    if (mx > 0.0f)
        for (float& v : px) v /= mx;
}

}  // namespace

ConstellationImage rasterize_constellation(const sig::IqFrame& frame, int res, double axis_range,
                                           bool normalize) {
    if (res < 8) throw InvalidArgument("raster resolution must be >= 8");
    if (axis_range <= 0.0) throw InvalidArgument("axis_range must be positive");
    if (frame.length() == 0) throw InvalidArgument("cannot rasterize an empty frame");
    ConstellationImage img;
    img.res = res;
    img.axis_range = axis_range;
    img.pixels.assign(static_cast<std::size_t>(res) * res, 0.0f);
    for (std::size_t n = 0; n < frame.length(); ++n) {
        int c = clip_bin(frame.i_samples[n], -axis_range, axis_range, res);
        int r = clip_bin(frame.q_samples[n], -axis_range, axis_range, res);
        img.at(r, c) += 1.0f;
    }
    img.total_mass = frame.length();
    if (normalize) {
        normalize_max(img.pixels);
        img.normalized = true;
    }
    return img;
}

std::vector<std::vector<double>> extract_eye_trajectories(const std::vector<double>& samples,
                                                          int k) {
    if (k < 1) throw InvalidArgument("symbol period must be >= 1");
    const auto L = static_cast<long>(samples.size());
    if (L < 2 * k)
        throw InvalidArgument("frame too short for an eye window: length " + std::to_string(L) +
                              ", need " + std::to_string(2 * k));
    const long count = L / k - 1;
    std::vector<std::vector<double>> out(static_cast<std::size_t>(count));
    for (long b = 0; b < count; ++b) {
        out[static_cast<std::size_t>(b)].assign(samples.begin() + b * k,
                                                samples.begin() + b * k + 2 * k);
    }
    return out;
}

std::vector<std::vector<double>> extract_eye_trajectories(const sig::IqFrame& frame, int k,
                                                          bool include_q) {
    auto out = extract_eye_trajectories(frame.i_samples, k);
    if (include_q) {
        auto q = extract_eye_trajectories(frame.q_samples, k);
        out.insert(out.end(), std::make_move_iterator(q.begin()), std::make_move_iterator(q.end()));
    }
    return out;
}

EyeImage rasterize_eye(const std::vector<std::vector<double>>& trajectories, int res,
                       double amp_range, bool normalize) {
    if (res < 2) throw InvalidArgument("raster resolution must be >= 2");
    if (trajectories.empty()) throw InvalidArgument("no trajectories to rasterize");
    if (amp_range <= 0.0) throw InvalidArgument("amp_range must be positive");
    const auto w = static_cast<int>(trajectories.front().size());
    if (w < 2) throw InvalidArgument("trajectories need at least 2 samples");
    for (const auto& t : trajectories)
        if (static_cast<int>(t.size()) != w)
            throw InvalidArgument("trajectories must share one length");

    EyeImage img;
    img.res = res;
    img.k = w / 2;
    img.n_trajectories = static_cast<int>(trajectories.size());
    img.amp_range = amp_range;
    img.pixels.assign(static_cast<std::size_t>(res) * res, 0.0f);

    auto row_of = [&](double y) {
        double u = (y + amp_range) / (2.0 * amp_range) * (res - 1);
        auto r = std::lround(u);
        if (r < 0) r = 0;
        if (r >= res) r = res - 1;
        return static_cast<int>(r);
    };
    auto col_of = [&](int i) {
        return static_cast<int>(std::lround(static_cast<double>(i) * (res - 1) / (w - 1)));
    };

    for (const auto& traj : trajectories) {
        int pr = row_of(traj[0]);
        int pc = col_of(0);
        img.at(pr, pc) += 1.0f;
        for (int i = 1; i < w; ++i) {
            int r = row_of(traj[static_cast<std::size_t>(i)]);
            int c = col_of(i);
            // bresenham segment, skipping the shared start pixel
            int dr = std::abs(r - pr), dc = std::abs(c - pc);
            int sr = pr < r ? 1 : -1, sc = pc < c ? 1 : -1;
            int err = dc - dr;
            int cr = pr, cc = pc;
            while (cr != r || cc != c) {
                int e2 = 2 * err;
                if (e2 > -dr) {
                    err -= dr;
                    cc += sc;
                }
                if (e2 < dc) {
                    err += dc;
                    cr += sr;
                }
                img.at(cr, cc) += 1.0f;
            }
            pr = r;
            pc = c;
        }
    }
    if (normalize) {
        normalize_max(img.pixels);
        img.normalized = true;
    }
    return img;
}

}  // namespace amr::feat
