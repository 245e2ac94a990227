#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "amr/common.hpp"
#include "amr/sigsynth.hpp"

namespace amr::feat {

// --- discrete wavelet transform (Daubechies-4, 8 taps) ---

enum class Padding { symmetric, periodic };

// analysis filters; scaling taps sum to sqrt(2) and have unit energy
const std::array<double, 8>& db4_lowpass();
const std::array<double, 8>& db4_highpass();

struct DwtPair {
    std::vector<double> approx;
    std::vector<double> detail;
};

// single level; symmetric padding yields floor((n+7)/2) coefficients per band,
// periodic padding (periodized, n even) yields n/2 and preserves energy exactly
DwtPair dwt_db4(const std::vector<double>& x, Padding mode);

struct Dwt2Level {
    std::vector<double> approx2;   // cA2
    std::vector<double> detail2;   // cD2
    std::vector<double> detail1;   // cD1
};

Dwt2Level dwt_db4_two_level(const std::vector<double>& x, Padding mode);

// --- wavelet feature vector ---

struct WaveletBand {
    const char* name;
    int offset;
    int length;
};

struct WaveletVector {
    std::vector<double> values;           // [cA2_I, cD2_I, cD1_I, cA2_Q, cD2_Q, cD1_Q]
    std::array<WaveletBand, 6> bands{};
};

// symmetric padding; frame length 128 gives the canonical 282-dim layout
// (37 + 37 + 67 per channel), other lengths scale by the same floor laws
WaveletVector pack_wavelet_features(const sig::IqFrame& frame);

// --- constellation raster ---

struct ConstellationImage {
    int res = 0;
    double axis_range = 0.0;
    uint64_t total_mass = 0;  // count of binned samples
    bool normalized = false;
    std::vector<float> pixels;  // res x res, row r = Q bin, col c = I bin

    float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * res + c]; }
    float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * res + c]; }
    double pixel_sum() const;
};

// default symmetric axis bound: 3.5 * rms amplitude of the frame
double default_axis_range(const sig::IqFrame& frame);

// bins every sample into [-A, A]^2; out-of-range samples clip onto the
// boundary bins, so the accumulated mass always equals the frame length
ConstellationImage rasterize_constellation(const sig::IqFrame& frame, int res, double axis_range,
                                           bool normalize = true);

// --- eye diagram ---

struct EyeImage {
    int res = 0;
    int k = 0;  // samples per symbol of the source trajectories
    int n_trajectories = 0;
    double amp_range = 0.0;
    bool normalized = false;
    std::vector<float> pixels;  // res x res

    float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * res + c]; }
    float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * res + c]; }
};

// overlapping two-symbol windows, hop one symbol: floor(L/k) - 1 trajectories
// of 2k samples each
std::vector<std::vector<double>> extract_eye_trajectories(const std::vector<double>& samples,
                                                          int k);

// I channel by default; include_q appends the Q-channel trajectories
std::vector<std::vector<double>> extract_eye_trajectories(const sig::IqFrame& frame, int k,
                                                          bool include_q = false);

EyeImage rasterize_eye(const std::vector<std::vector<double>>& trajectories, int res,
                       double amp_range, bool normalize = true);

// --- featurized dataset ("AMRF" format) ---

struct FeatSet {
    uint32_t format_version = 1;
    int res = 0;
    int eye_k = 0;
    int wavelet_dim = 0;
    std::vector<uint16_t> labels;
    std::vector<float> snr_db;
    std::vector<float> cons;  // n * res * res
    std::vector<float> eye;   // n * res * res
    std::vector<float> wav;   // n * wavelet_dim

    std::size_t size() const { return labels.size(); }
    std::size_t image_numel() const { return static_cast<std::size_t>(res) * res; }
};

void write_featset(const std::string& path, const FeatSet& fs);
FeatSet read_featset(const std::string& path);

FeatSet featurize(const sig::RawDataset& raw, int res, int eye_k);

}  // namespace amr::feat
