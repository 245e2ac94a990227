#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "amr/common.hpp"
#include "amr/rng.hpp"

namespace amr::sig {

enum class Mod : uint16_t {
    BPSK = 0,
    QPSK = 1,
    PSK8 = 2,
    PAM4 = 3,
    QAM16 = 4,
    QAM64 = 5,
    GFSK = 6,
    CPFSK = 7,
    AM_DSB = 8,
    AM_SSB = 9,
    WBFM = 10,
};

const char* mod_name(Mod m);
Mod mod_from_name(const std::string& name);  // throws UnsupportedScheme
bool is_linear_digital(Mod m);

// One labeled complex baseband frame.
struct IqFrame {
    std::vector<double> i_samples;
    std::vector<double> q_samples;
    double sample_rate = 200e3;
    int samples_per_symbol = 8;
    Mod mod_label = Mod::BPSK;
    double snr_db = 0.0;
    uint64_t frame_id = 0;

    std::size_t length() const { return i_samples.size(); }
    double mean_power() const;
};

enum class Fading { none, rayleigh, rician };

struct ChannelConfig {
    double snr_db = 0.0;
    double cfo_max_hz = 500.0;
    double sro_std_hz = 0.01;
    double sro_max_hz = 50.0;
    Fading fading = Fading::none;
    double rician_k = 4.0;
    uint64_t rng_seed = 0;

    void validate() const;
};

struct DatasetManifest {
    std::vector<Mod> schemes;
    std::vector<double> snr_grid_db;
    int frames_per_cell = 0;
    int frame_length = 128;
    int samples_per_symbol = 8;
    uint64_t seed = 0;
    int format_version = 1;
    // channel impairments applied to every frame
    double sample_rate_hz = 200e3;
    double cfo_max_hz = 500.0;
    double sro_std_hz = 0.01;
    double sro_max_hz = 50.0;
    Fading fading = Fading::none;
    double rician_k = 4.0;

    void validate() const;
    uint64_t total_frames() const {
        return static_cast<uint64_t>(schemes.size()) * snr_grid_db.size() * frames_per_cell;
    }

    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
    static DatasetManifest load(const std::string& path);
    void save(const std::string& path) const;
};

enum class Pulse { rrc, none };

// Gray-coded constellation of a linear scheme: (point, bit pattern) pairs.
std::vector<std::pair<std::complex<double>, unsigned>> constellation_points(Mod m);

// Root-raised-cosine taps, unit energy, span symbols each side of center.
std::vector<double> rrc_taps(int k, double rolloff = 0.35, int span_symbols = 6);

// Map an explicit symbol-index stream; used by modulate() and by tests that
// need shaping disabled.
IqFrame modulate_symbols(Mod scheme, const std::vector<int>& symbols, int k, Pulse pulse);

IqFrame modulate(Mod scheme, int n_symbols, int k, uint64_t seed);

// Everything apply_channel drew, for SNR-calibration oracles.
struct ChannelRealization {
    std::vector<double> noise_i, noise_q;
    double cfo_hz = 0.0;
    double sro_ratio = 1.0;
    std::complex<double> fade{1.0, 0.0};
    double signal_power = 0.0;
    double noise_variance = 0.0;
};

IqFrame apply_channel(const IqFrame& frame, const ChannelConfig& cfg,
                      ChannelRealization* realization = nullptr);

struct SynthStats {
    uint64_t frames = 0;
    uint64_t bytes = 0;
};

// Writes the dataset file plus a JSON manifest sidecar (<out_path>.manifest.json).
SynthStats synth_dataset(const DatasetManifest& manifest, const std::string& out_path);

// Raw dataset file IO ("AMRD" format).
struct RawDataset {
    uint32_t format_version = 1;
    uint32_t frame_length = 0;
    uint32_t samples_per_symbol = 0;
    std::vector<IqFrame> frames;
};

void write_dataset(const std::string& path, const RawDataset& ds);
RawDataset read_dataset(const std::string& path);

}  // namespace amr::sig
