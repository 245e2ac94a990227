#include <cstring>
#include <fstream>

#include "amr/featex.hpp"

namespace amr::feat {

namespace {

constexpr char kMagic[4] = {'A', 'M', 'R', 'F'};

template <class T>
void put(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("truncated feature file " + path);
    return v;
}

void read_block(std::istream& is, float* dst, std::size_t n, const std::string& path) {
    is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n * sizeof(float)));
    if (!is) throw IoError("truncated feature file " + path);
}

}  // namespace

void write_featset(const std::string& path, const FeatSet& fs) {
    const std::size_t n = fs.size();
    const std::size_t img = fs.image_numel();
    if (fs.snr_db.size() != n || fs.cons.size() != n * img || fs.eye.size() != n * img ||
        fs.wav.size() != n * static_cast<std::size_t>(fs.wavelet_dim))
        throw InvalidArgument("feature set arrays disagree on sample count");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    put<uint32_t>(os, fs.format_version);
    put<uint64_t>(os, n);
    put<uint32_t>(os, static_cast<uint32_t>(fs.res));
    put<uint32_t>(os, static_cast<uint32_t>(fs.eye_k));
    put<uint32_t>(os, static_cast<uint32_t>(fs.wavelet_dim));
    for (std::size_t i = 0; i < n; ++i) {
        put<uint16_t>(os, fs.labels[i]);
        put<float>(os, fs.snr_db[i]);
        os.write(reinterpret_cast<const char*>(fs.cons.data() + i * img),
                 static_cast<std::streamsize>(img * sizeof(float)));
        os.write(reinterpret_cast<const char*>(fs.eye.data() + i * img),
                 static_cast<std::streamsize>(img * sizeof(float)));
        os.write(reinterpret_cast<const char*>(fs.wav.data() + i * fs.wavelet_dim),
                 static_cast<std::streamsize>(fs.wavelet_dim * sizeof(float)));
    }
    if (!os) throw IoError("write failed on " + path);
}

FeatSet read_featset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open feature file " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("bad magic in " + path + " (not a feature file)");
    FeatSet fs;
    fs.format_version = get<uint32_t>(is, path);
    if (fs.format_version != 1)
        throw IoError("unsupported feature file version " + std::to_string(fs.format_version) +
                      " in " + path);
    auto n = get<uint64_t>(is, path);
    fs.res = static_cast<int>(get<uint32_t>(is, path));
    fs.eye_k = static_cast<int>(get<uint32_t>(is, path));
    fs.wavelet_dim = static_cast<int>(get<uint32_t>(is, path));
    if (fs.res <= 0 || fs.wavelet_dim <= 0) throw IoError("bad header in " + path);
    const std::size_t img = fs.image_numel();
    fs.labels.resize(n);
    fs.snr_db.resize(n);
    fs.cons.resize(n * img);
    fs.eye.resize(n * img);
    fs.wav.resize(n * static_cast<std::size_t>(fs.wavelet_dim));
    for (std::size_t i = 0; i < n; ++i) {
        fs.labels[i] = get<uint16_t>(is, path);
        fs.snr_db[i] = get<float>(is, path);
        read_block(is, fs.cons.data() + i * img, img, path);
        read_block(is, fs.eye.data() + i * img, img, path);
        read_block(is, fs.wav.data() + i * fs.wavelet_dim,
                   static_cast<std::size_t>(fs.wavelet_dim), path);
    }
    return fs;
}

FeatSet featurize(const sig::RawDataset& raw, int res, int eye_k) {
    if (res < 8) throw InvalidArgument("raster resolution must be >= 8");
    if (eye_k < 1) throw InvalidArgument("eye symbol period must be >= 1");
    if (raw.frames.empty()) throw InvalidArgument("raw dataset holds no frames");

    FeatSet fs;
    fs.res = res;
    fs.eye_k = eye_k;
    {
        WaveletVector probe = pack_wavelet_features(raw.frames.front());
        fs.wavelet_dim = static_cast<int>(probe.values.size());
    }
    const std::size_t n = raw.frames.size();
    const std::size_t img = fs.image_numel();
    fs.labels.resize(n);
    fs.snr_db.resize(n);
    fs.cons.resize(n * img);
    fs.eye.resize(n * img);
    fs.wav.resize(n * static_cast<std::size_t>(fs.wavelet_dim));

    parallel_for(n, [&](std::size_t i) {
        const sig::IqFrame& f = raw.frames[i];
        fs.labels[i] = static_cast<uint16_t>(f.mod_label);
        fs.snr_db[i] = static_cast<float>(f.snr_db);
        double a = default_axis_range(f);
        ConstellationImage ci = rasterize_constellation(f, res, a, true);
        std::copy(ci.pixels.begin(), ci.pixels.end(), fs.cons.begin() + i * img);
        auto traj = extract_eye_trajectories(f, eye_k);
        EyeImage ei = rasterize_eye(traj, res, a, true);
        std::copy(ei.pixels.begin(), ei.pixels.end(), fs.eye.begin() + i * img);
        WaveletVector wv = pack_wavelet_features(f);
        if (static_cast<int>(wv.values.size()) != fs.wavelet_dim)
            throw ShapeError("inconsistent wavelet vector length across frames");
        for (int j = 0; j < fs.wavelet_dim; ++j)
            fs.wav[i * fs.wavelet_dim + j] = static_cast<float>(wv.values[static_cast<std::size_t>(j)]);
    });
    return fs;
}

}  // namespace amr::feat
