#include "amr/sigsynth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace amr::sig {

namespace {

constexpr double kPi = 3.14159265358979323846;

unsigned gray(unsigned i) { return i ^ (i >> 1); }

// Per-axis amplitude levels in Gray order of the 2-bit label: 00,01,11,10.
constexpr double kLevels4[4] = {-3.0, -1.0, 1.0, 3.0};
constexpr double kLevels8[8] = {-7.0, -5.0, -3.0, -1.0, 1.0, 3.0, 5.0, 7.0};

}  // namespace

const char* mod_name(Mod m) {
    switch (m) {
        case Mod::BPSK: return "bpsk";
        case Mod::QPSK: return "qpsk";
        case Mod::PSK8: return "8psk";
        case Mod::PAM4: return "pam4";
        case Mod::QAM16: return "qam16";
        case Mod::QAM64: return "qam64";
        case Mod::GFSK: return "gfsk";
        case Mod::CPFSK: return "cpfsk";
        case Mod::AM_DSB: return "am-dsb";
        case Mod::AM_SSB: return "am-ssb";
        case Mod::WBFM: return "wbfm";
    }
    throw UnsupportedScheme("unknown modulation enum value " +
                            std::to_string(static_cast<int>(m)));
}

Mod mod_from_name(const std::string& name) {
    static const std::pair<const char*, Mod> table[] = {
        {"bpsk", Mod::BPSK},   {"qpsk", Mod::QPSK},   {"8psk", Mod::PSK8},
        {"pam4", Mod::PAM4},   {"qam16", Mod::QAM16}, {"qam64", Mod::QAM64},
        {"gfsk", Mod::GFSK},   {"cpfsk", Mod::CPFSK}, {"am-dsb", Mod::AM_DSB},
        {"am-ssb", Mod::AM_SSB}, {"wbfm", Mod::WBFM},
    };
    std::string lower;
    for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    for (auto& [n, m] : table)
        if (lower == n) return m;
    throw UnsupportedScheme("unknown modulation scheme '" + name + "'");
}

bool is_linear_digital(Mod m) {
    switch (m) {
        case Mod::BPSK:
        case Mod::QPSK:
        case Mod::PSK8:
        case Mod::PAM4:
        case Mod::QAM16:
        case Mod::QAM64: return true;
        default: return false;
    }
}

double IqFrame::mean_power() const {
    double acc = 0.0;
    for (std::size_t n = 0; n < i_samples.size(); ++n)
        acc += i_samples[n] * i_samples[n] + q_samples[n] * q_samples[n];
    return i_samples.empty() ? 0.0 : acc / static_cast<double>(i_samples.size());
}

void ChannelConfig::validate() const {
    if (snr_db < -20.0 || snr_db > 18.0)
        throw InvalidArgument("snr_db must lie in [-20, 18], got " + std::to_string(snr_db));
    if (cfo_max_hz < 0.0) throw InvalidArgument("cfo_max_hz must be >= 0");
    if (sro_std_hz < 0.0) throw InvalidArgument("sro_std_hz must be >= 0");
    if (sro_max_hz < sro_std_hz)
        throw InvalidArgument("sro_max_hz must be >= sro_std_hz");
    if (fading == Fading::rician && rician_k < 0.0)
        throw InvalidArgument("rician_k must be >= 0");
}

void DatasetManifest::validate() const {
    if (schemes.empty()) throw InvalidArgument("manifest needs at least one scheme");
    for (std::size_t a = 0; a < schemes.size(); ++a)
        for (std::size_t b = a + 1; b < schemes.size(); ++b)
            if (schemes[a] == schemes[b])
                throw InvalidArgument(std::string("duplicate scheme ") + mod_name(schemes[a]));
    if (snr_grid_db.empty()) throw InvalidArgument("manifest needs a non-empty snr grid");
    for (std::size_t i = 1; i < snr_grid_db.size(); ++i)
        if (snr_grid_db[i] <= snr_grid_db[i - 1])
            throw InvalidArgument("snr grid must be strictly increasing");
    if (frames_per_cell <= 0) throw InvalidArgument("frames_per_cell must be positive");
    if (frame_length <= 0 || samples_per_symbol <= 0)
        throw InvalidArgument("frame_length and samples_per_symbol must be positive");
    if (frame_length % samples_per_symbol != 0)
        throw InvalidArgument("frame_length must be a multiple of samples_per_symbol");
    if (frame_length < 2 * samples_per_symbol)
        throw InvalidArgument("frame_length must cover at least two symbols");
    ChannelConfig probe;
    probe.snr_db = snr_grid_db.front();
    probe.cfo_max_hz = cfo_max_hz;
    probe.sro_std_hz = sro_std_hz;
    probe.sro_max_hz = sro_max_hz;
    probe.fading = fading;
    probe.rician_k = rician_k;
    probe.validate();
    probe.snr_db = snr_grid_db.back();
    probe.validate();
}

std::vector<std::pair<std::complex<double>, unsigned>> constellation_points(Mod m) {
    std::vector<std::pair<std::complex<double>, unsigned>> pts;
    switch (m) {
        case Mod::BPSK:
            pts = {{{1.0, 0.0}, 0u}, {{-1.0, 0.0}, 1u}};
            break;
        case Mod::QPSK:
            // quadrant index q walks the circle; bits are Gray-coded q
            for (unsigned q = 0; q < 4; ++q) {
                double ang = (2.0 * q + 1.0) * kPi / 4.0;
                pts.push_back({{std::cos(ang), std::sin(ang)}, gray(q)});
            }
            break;
        case Mod::PSK8:
            for (unsigned i = 0; i < 8; ++i) {
                double ang = 2.0 * kPi * i / 8.0;
                pts.push_back({{std::cos(ang), std::sin(ang)}, gray(i)});
            }
            break;
        case Mod::PAM4: {
            const double s = 1.0 / std::sqrt(5.0);
            for (unsigned i = 0; i < 4; ++i) pts.push_back({{kLevels4[i] * s, 0.0}, gray(i)});
            break;
        }
        case Mod::QAM16: {
            const double s = 1.0 / std::sqrt(10.0);
            for (unsigned gi = 0; gi < 4; ++gi)
                for (unsigned gq = 0; gq < 4; ++gq)
                    pts.push_back({{kLevels4[gi] * s, kLevels4[gq] * s}, (gray(gi) << 2) | gray(gq)});
            break;
        }
        case Mod::QAM64: {
            const double s = 1.0 / std::sqrt(42.0);
            for (unsigned gi = 0; gi < 8; ++gi)
                for (unsigned gq = 0; gq < 8; ++gq)
                    pts.push_back({{kLevels8[gi] * s, kLevels8[gq] * s}, (gray(gi) << 3) | gray(gq)});
            break;
        }
        default:
            throw UnsupportedScheme(std::string(mod_name(m)) + " has no linear constellation");
    }
    return pts;
}

std::vector<double> rrc_taps(int k, double rolloff, int span_symbols) {
    if (k < 1) throw InvalidArgument("samples_per_symbol must be >= 1");
    if (rolloff <= 0.0 || rolloff >= 1.0) throw InvalidArgument("rolloff must lie in (0, 1)");
    const int half = span_symbols * k;
    std::vector<double> h(2 * half + 1);
    const double b = rolloff;
    for (int n = -half; n <= half; ++n) {
        double t = static_cast<double>(n) / k;  // in symbol periods
        double v;
        if (n == 0) {
            v = 1.0 - b + 4.0 * b / kPi;
        } else if (std::abs(std::abs(4.0 * b * t) - 1.0) < 1e-12) {
            v = (b / std::sqrt(2.0)) *
                ((1.0 + 2.0 / kPi) * std::sin(kPi / (4.0 * b)) +
                 (1.0 - 2.0 / kPi) * std::cos(kPi / (4.0 * b)));
        } else {
            double num = std::sin(kPi * t * (1.0 - b)) + 4.0 * b * t * std::cos(kPi * t * (1.0 + b));
            double den = kPi * t * (1.0 - (4.0 * b * t) * (4.0 * b * t));
            v = num / den;
        }
        h[static_cast<std::size_t>(n + half)] = v;
    }
    double e = 0.0;
    for (double v : h) e += v * v;
    double inv = 1.0 / std::sqrt(e);
    for (double& v : h) v *= inv;
    return h;
}

namespace {

void normalize_unit_power(IqFrame& f) {
    double p = f.mean_power();
    if (p <= 0.0) throw InvalidArgument("cannot normalize an all-zero frame");
    double inv = 1.0 / std::sqrt(p);
    for (auto& v : f.i_samples) v *= inv;
    for (auto& v : f.q_samples) v *= inv;
}

IqFrame shape_linear(Mod scheme, const std::vector<int>& symbols, int k, Pulse pulse) {
    auto pts = constellation_points(scheme);
    const int m = static_cast<int>(pts.size());
    std::vector<std::complex<double>> sym(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (symbols[i] < 0 || symbols[i] >= m)
            throw InvalidArgument("symbol index " + std::to_string(symbols[i]) +
                                  " out of range for " + mod_name(scheme));
        sym[i] = pts[static_cast<std::size_t>(symbols[i])].first;
    }
    const std::size_t n = symbols.size() * static_cast<std::size_t>(k);
    IqFrame f;
    f.i_samples.assign(n, 0.0);
    f.q_samples.assign(n, 0.0);
    f.samples_per_symbol = k;
    f.mod_label = scheme;
    if (pulse == Pulse::none) {
        // sample-and-hold; with k == 1 this is the bare symbol sequence
        for (std::size_t i = 0; i < symbols.size(); ++i)
            for (int j = 0; j < k; ++j) {
                f.i_samples[i * k + j] = sym[i].real();
                f.q_samples[i * k + j] = sym[i].imag();
            }
    } else {
        auto h = rrc_taps(k);
        const int half = (static_cast<int>(h.size()) - 1) / 2;
        for (std::size_t out = 0; out < n; ++out) {
            double re = 0.0, im = 0.0;
            // contributing symbols: |out - s*k| <= half
            int lo = (static_cast<int>(out) - half + k - 1) / k;
            if (lo < 0) lo = 0;
            int hi = (static_cast<int>(out) + half) / k;
            if (hi >= static_cast<int>(symbols.size())) hi = static_cast<int>(symbols.size()) - 1;
            for (int s = lo; s <= hi; ++s) {
                int tap = static_cast<int>(out) - s * k + half;
                re += sym[static_cast<std::size_t>(s)].real() * h[static_cast<std::size_t>(tap)];
                im += sym[static_cast<std::size_t>(s)].imag() * h[static_cast<std::size_t>(tap)];
            }
            f.i_samples[out] = re;
            f.q_samples[out] = im;
        }
    }
    normalize_unit_power(f);
    return f;
}

std::vector<double> gaussian_taps(int k, double bt) {
    // 3 dB bandwidth bt (symbol-normalized), span +-2 symbols, unit DC gain
    const double c = std::sqrt(2.0 * kPi / std::log(2.0)) * bt;
    const int half = 2 * k;
    std::vector<double> h(2 * half + 1);
    double sum = 0.0;
    for (int n = -half; n <= half; ++n) {
        double t = static_cast<double>(n) / k;
        double v = c * std::exp(-2.0 * kPi * kPi * bt * bt * t * t / std::log(2.0));
        h[static_cast<std::size_t>(n + half)] = v;
        sum += v;
    }
    for (double& v : h) v /= sum;
    return h;
}

IqFrame shape_fsk(Mod scheme, const std::vector<int>& bits, int k) {
    const double mod_index = 0.5;
    const std::size_t n = bits.size() * static_cast<std::size_t>(k);
    std::vector<double> nrz(n);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != 0 && bits[i] != 1)
            throw InvalidArgument("fsk symbol stream must be binary");
        double a = bits[i] ? 1.0 : -1.0;
        for (int j = 0; j < k; ++j) nrz[i * k + j] = a;
    }
    std::vector<double> freq;
    if (scheme == Mod::GFSK) {
        auto g = gaussian_taps(k, 0.35);
        const int half = (static_cast<int>(g.size()) - 1) / 2;
        freq.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int j = -half; j <= half; ++j) {
                long idx = static_cast<long>(i) + j;
                if (idx < 0) idx = 0;
                if (idx >= static_cast<long>(n)) idx = static_cast<long>(n) - 1;
                acc += nrz[static_cast<std::size_t>(idx)] * g[static_cast<std::size_t>(j + half)];
            }
            freq[i] = acc;
        }
    } else {
        freq = nrz;
    }
    IqFrame f;
    f.i_samples.resize(n);
    f.q_samples.resize(n);
    f.samples_per_symbol = k;
    f.mod_label = scheme;
    double phase = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        phase += kPi * mod_index * freq[i] / k;
        f.i_samples[i] = std::cos(phase);
        f.q_samples[i] = std::sin(phase);
    }
    normalize_unit_power(f);
    return f;
}

std::vector<double> lowpass_message(std::size_t n, Rng& rng) {
    // one-pole smoothed gaussian noise, unit rms
    std::vector<double> m(n);
    const double alpha = 0.95;
    double state = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        state = alpha * state + (1.0 - alpha) * rng.normal();
        m[i] = state;
    }
    double p = 0.0;
    for (double v : m) p += v * v;
    p /= static_cast<double>(n);
    if (p <= 0.0) p = 1.0;
    double inv = 1.0 / std::sqrt(p);
    for (double& v : m) v *= inv;
    return m;
}

std::vector<double> hilbert_fir(const std::vector<double>& x) {
    // odd-length windowed hilbert transformer
    const int half = 31;
    std::vector<double> h(2 * half + 1, 0.0);
    for (int n = -half; n <= half; ++n) {
        if (n % 2 == 0) continue;
        double w = 0.54 + 0.46 * std::cos(kPi * n / half);  // hamming
        h[static_cast<std::size_t>(n + half)] = 2.0 / (kPi * n) * w;
    }
    std::vector<double> y(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        double acc = 0.0;
        for (int j = -half; j <= half; ++j) {
            long idx = static_cast<long>(i) - j;
            if (idx < 0 || idx >= static_cast<long>(x.size())) continue;
            acc += h[static_cast<std::size_t>(j + half)] * x[static_cast<std::size_t>(idx)];
        }
        y[i] = acc;
    }
    return y;
}

IqFrame make_analog(Mod scheme, std::size_t n, int k, Rng& rng) {
    auto msg = lowpass_message(n, rng);
    IqFrame f;
    f.i_samples.resize(n);
    f.q_samples.resize(n);
    f.samples_per_symbol = k;
    f.mod_label = scheme;
    switch (scheme) {
        case Mod::AM_DSB:
            for (std::size_t i = 0; i < n; ++i) {
                f.i_samples[i] = 1.0 + 0.5 * msg[i];
                f.q_samples[i] = 0.0;
            }
            break;
        case Mod::AM_SSB: {
            auto hm = hilbert_fir(msg);
            for (std::size_t i = 0; i < n; ++i) {
                f.i_samples[i] = msg[i];
                f.q_samples[i] = hm[i];
            }
            break;
        }
        case Mod::WBFM: {
            double phase = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                phase += 2.0 * kPi * 0.1 * msg[i];
                f.i_samples[i] = std::cos(phase);
                f.q_samples[i] = std::sin(phase);
            }
            break;
        }
        default: throw UnsupportedScheme("not an analog scheme");
    }
    normalize_unit_power(f);
    return f;
}

}  // namespace

IqFrame modulate_symbols(Mod scheme, const std::vector<int>& symbols, int k, Pulse pulse) {
    if (symbols.size() < 2) throw InvalidArgument("need at least two symbols per frame");
    if (k < 1) throw InvalidArgument("samples_per_symbol must be >= 1");
    if (is_linear_digital(scheme)) return shape_linear(scheme, symbols, k, pulse);
    if (scheme == Mod::GFSK || scheme == Mod::CPFSK) return shape_fsk(scheme, symbols, k);
    throw UnsupportedScheme(std::string(mod_name(scheme)) +
                            " does not take an explicit symbol stream");
}

IqFrame modulate(Mod scheme, int n_symbols, int k, uint64_t seed) {
    if (n_symbols < 2) throw InvalidArgument("need at least two symbols per frame");
    if (k < 1) throw InvalidArgument("samples_per_symbol must be >= 1");
    Rng rng(seed);
    if (is_linear_digital(scheme)) {
        int m = static_cast<int>(constellation_points(scheme).size());
        std::vector<int> syms(static_cast<std::size_t>(n_symbols));
        for (auto& s : syms) s = static_cast<int>(rng.below(static_cast<uint64_t>(m)));
        return shape_linear(scheme, syms, k, Pulse::rrc);
    }
    if (scheme == Mod::GFSK || scheme == Mod::CPFSK) {
        std::vector<int> bits(static_cast<std::size_t>(n_symbols));
        for (auto& b : bits) b = static_cast<int>(rng.below(2));
        return shape_fsk(scheme, bits, k);
    }
    return make_analog(scheme, static_cast<std::size_t>(n_symbols) * k, k, rng);
}

IqFrame apply_channel(const IqFrame& frame, const ChannelConfig& cfg,
                      ChannelRealization* realization) {
    cfg.validate();
    if (frame.length() == 0) throw InvalidArgument("cannot impair an empty frame");
    Rng rng(cfg.rng_seed);
    const std::size_t n = frame.length();
    IqFrame out = frame;
    out.snr_db = cfg.snr_db;
    ChannelRealization real;

    // flat fading
    if (cfg.fading == Fading::rayleigh) {
        real.fade = {rng.normal() / std::sqrt(2.0), rng.normal() / std::sqrt(2.0)};
    } else if (cfg.fading == Fading::rician) {
        double kf = cfg.rician_k;
        double los = std::sqrt(kf / (kf + 1.0));
        double nlos = std::sqrt(1.0 / (kf + 1.0));
        double theta = rng.uniform(0.0, 2.0 * kPi);
        real.fade = std::complex<double>(los * std::cos(theta), los * std::sin(theta)) +
                    nlos * std::complex<double>(rng.normal() / std::sqrt(2.0),
                                                rng.normal() / std::sqrt(2.0));
    }
    if (cfg.fading != Fading::none) {
        for (std::size_t i = 0; i < n; ++i) {
            std::complex<double> v(out.i_samples[i], out.q_samples[i]);
            v *= real.fade;
            out.i_samples[i] = v.real();
            out.q_samples[i] = v.imag();
        }
    }

    // carrier frequency offset
    real.cfo_hz = rng.uniform(-cfg.cfo_max_hz, cfg.cfo_max_hz);
    if (real.cfo_hz != 0.0) {
        double w = 2.0 * kPi * real.cfo_hz / frame.sample_rate;
        for (std::size_t i = 0; i < n; ++i) {
            double c = std::cos(w * static_cast<double>(i));
            double s = std::sin(w * static_cast<double>(i));
            double re = out.i_samples[i] * c - out.q_samples[i] * s;
            double im = out.i_samples[i] * s + out.q_samples[i] * c;
            out.i_samples[i] = re;
            out.q_samples[i] = im;
        }
    }

    // sample rate offset: resample at ratio (fs + delta) / fs
    double delta = 0.0;
    if (cfg.sro_std_hz > 0.0) {
        do {
            delta = rng.normal(0.0, cfg.sro_std_hz);
        } while (std::abs(delta) > cfg.sro_max_hz);
    }
    real.sro_ratio = (frame.sample_rate + delta) / frame.sample_rate;
    if (delta != 0.0) {
        std::vector<double> ri(n), rq(n);
        for (std::size_t i = 0; i < n; ++i) {
            double t = static_cast<double>(i) * real.sro_ratio;
            if (t < 0.0) t = 0.0;
            if (t > static_cast<double>(n - 1)) t = static_cast<double>(n - 1);
            auto lo = static_cast<std::size_t>(t);
            std::size_t hi = std::min(lo + 1, n - 1);
            double frac = t - static_cast<double>(lo);
            ri[i] = out.i_samples[lo] * (1.0 - frac) + out.i_samples[hi] * frac;
            rq[i] = out.q_samples[lo] * (1.0 - frac) + out.q_samples[hi] * frac;
        }
        out.i_samples = std::move(ri);
        out.q_samples = std::move(rq);
    }

    // awgn sized against the empirical (post-impairment) signal power
    real.signal_power = out.mean_power();
    real.noise_variance = real.signal_power / std::pow(10.0, cfg.snr_db / 10.0);
    double sigma = std::sqrt(real.noise_variance / 2.0);
    real.noise_i.resize(n);
    real.noise_q.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        real.noise_i[i] = rng.normal(0.0, sigma);
        real.noise_q[i] = rng.normal(0.0, sigma);
        out.i_samples[i] += real.noise_i[i];
        out.q_samples[i] += real.noise_q[i];
    }

    if (realization) *realization = std::move(real);
    return out;
}

}  // namespace amr::sig
