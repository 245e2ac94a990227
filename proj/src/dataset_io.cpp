#include <cstring>
#include <fstream>

#include "amr/sigsynth.hpp"
#include "json.hpp"

namespace amr::sig {

namespace {

constexpr char kMagic[4] = {'A', 'M', 'R', 'D'};

template <class T>
void put(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("truncated dataset file " + path);
    return v;
}

const char* fading_name(Fading f) {
    switch (f) {
        case Fading::none: return "none";
        case Fading::rayleigh: return "rayleigh";
        case Fading::rician: return "rician";
    }
    return "none";
}

Fading fading_from_name(const std::string& s) {
    if (s == "none") return Fading::none;
    if (s == "rayleigh") return Fading::rayleigh;
    if (s == "rician") return Fading::rician;
    throw ConfigError("unknown fading mode '" + s + "'");
}

}  // namespace

std::string DatasetManifest::to_json() const {
    nlohmann::json j;
    j["format_version"] = format_version;
    j["schemes"] = nlohmann::json::array();
    for (Mod m : schemes) j["schemes"].push_back(mod_name(m));
    j["snr_grid_db"] = snr_grid_db;
    j["frames_per_cell"] = frames_per_cell;
    j["frame_length"] = frame_length;
    j["samples_per_symbol"] = samples_per_symbol;
    j["seed"] = seed;
    j["sample_rate_hz"] = sample_rate_hz;
    j["cfo_max_hz"] = cfo_max_hz;
    j["sro_std_hz"] = sro_std_hz;
    j["sro_max_hz"] = sro_max_hz;
    j["fading"] = fading_name(fading);
    j["rician_k"] = rician_k;
    return j.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("manifest is not valid json: ") + e.what());
    }
    DatasetManifest m;
    try {
        for (const auto& s : j.at("schemes")) m.schemes.push_back(mod_from_name(s.get<std::string>()));
        m.snr_grid_db = j.at("snr_grid_db").get<std::vector<double>>();
        m.frames_per_cell = j.at("frames_per_cell").get<int>();
        m.frame_length = j.at("frame_length").get<int>();
        m.samples_per_symbol = j.at("samples_per_symbol").get<int>();
        m.seed = j.at("seed").get<uint64_t>();
        if (j.contains("format_version")) m.format_version = j["format_version"].get<int>();
        if (j.contains("sample_rate_hz")) m.sample_rate_hz = j["sample_rate_hz"].get<double>();
        if (j.contains("cfo_max_hz")) m.cfo_max_hz = j["cfo_max_hz"].get<double>();
        if (j.contains("sro_std_hz")) m.sro_std_hz = j["sro_std_hz"].get<double>();
        if (j.contains("sro_max_hz")) m.sro_max_hz = j["sro_max_hz"].get<double>();
        if (j.contains("fading")) m.fading = fading_from_name(j["fading"].get<std::string>());
        if (j.contains("rician_k")) m.rician_k = j["rician_k"].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("manifest missing or mistyped field: ") + e.what());
    }
    m.validate();
    return m;
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_json(text);
}

void DatasetManifest::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write manifest " + path);
    os << to_json() << "\n";
}

void write_dataset(const std::string& path, const RawDataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kMagic, 4);
    put<uint32_t>(os, ds.format_version);
    put<uint64_t>(os, ds.frames.size());
    put<uint32_t>(os, ds.frame_length);
    put<uint32_t>(os, ds.samples_per_symbol);
    for (const auto& f : ds.frames) {
        if (f.length() != ds.frame_length)
            throw InvalidArgument("frame " + std::to_string(f.frame_id) +
                                  " length does not match dataset header");
        put<uint64_t>(os, f.frame_id);
        put<uint16_t>(os, static_cast<uint16_t>(f.mod_label));
        put<float>(os, static_cast<float>(f.snr_db));
        for (double v : f.i_samples) put<float>(os, static_cast<float>(v));
        for (double v : f.q_samples) put<float>(os, static_cast<float>(v));
    }
    if (!os) throw IoError("write failed on " + path);
}

RawDataset read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open dataset " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("bad magic in " + path + " (not a raw frame dataset)");
    RawDataset ds;
    ds.format_version = get<uint32_t>(is, path);
    if (ds.format_version != 1)
        throw IoError("unsupported dataset format version " +
                      std::to_string(ds.format_version) + " in " + path);
    auto count = get<uint64_t>(is, path);
    ds.frame_length = get<uint32_t>(is, path);
    ds.samples_per_symbol = get<uint32_t>(is, path);
    if (ds.frame_length == 0) throw IoError("zero frame length in " + path);
    ds.frames.resize(count);
    std::vector<float> buf(ds.frame_length);
    for (auto& f : ds.frames) {
        f.frame_id = get<uint64_t>(is, path);
        f.mod_label = static_cast<Mod>(get<uint16_t>(is, path));
        f.snr_db = get<float>(is, path);
        f.samples_per_symbol = static_cast<int>(ds.samples_per_symbol);
        f.i_samples.resize(ds.frame_length);
        f.q_samples.resize(ds.frame_length);
        is.read(reinterpret_cast<char*>(buf.data()), ds.frame_length * sizeof(float));
        if (!is) throw IoError("truncated dataset file " + path);
        for (uint32_t i = 0; i < ds.frame_length; ++i) f.i_samples[i] = buf[i];
        is.read(reinterpret_cast<char*>(buf.data()), ds.frame_length * sizeof(float));
        if (!is) throw IoError("truncated dataset file " + path);
        for (uint32_t i = 0; i < ds.frame_length; ++i) f.q_samples[i] = buf[i];
    }
    return ds;
}

SynthStats synth_dataset(const DatasetManifest& manifest, const std::string& out_path) {
    manifest.validate();
    std::ofstream os(out_path, std::ios::binary);
    if (!os) throw IoError("cannot open " + out_path + " for writing");
    os.write(kMagic, 4);
    put<uint32_t>(os, static_cast<uint32_t>(manifest.format_version));
    put<uint64_t>(os, manifest.total_frames());
    put<uint32_t>(os, static_cast<uint32_t>(manifest.frame_length));
    put<uint32_t>(os, static_cast<uint32_t>(manifest.samples_per_symbol));

    const int n_symbols = manifest.frame_length / manifest.samples_per_symbol;
    uint64_t frame_id = 0;
    for (Mod scheme : manifest.schemes) {
        for (double snr : manifest.snr_grid_db) {
            for (int rep = 0; rep < manifest.frames_per_cell; ++rep) {
                uint64_t sym_seed = mix64(manifest.seed ^ (frame_id * 2 + 1));
                uint64_t chan_seed = mix64(manifest.seed ^ (frame_id * 2 + 2));
                IqFrame clean = modulate(scheme, n_symbols, manifest.samples_per_symbol, sym_seed);
                clean.sample_rate = manifest.sample_rate_hz;
                ChannelConfig cc;
                cc.snr_db = snr;
                cc.cfo_max_hz = manifest.cfo_max_hz;
                cc.sro_std_hz = manifest.sro_std_hz;
                cc.sro_max_hz = manifest.sro_max_hz;
                cc.fading = manifest.fading;
                cc.rician_k = manifest.rician_k;
                cc.rng_seed = chan_seed;
                IqFrame impaired = apply_channel(clean, cc);
                put<uint64_t>(os, frame_id);
                put<uint16_t>(os, static_cast<uint16_t>(scheme));
                put<float>(os, static_cast<float>(snr));
                for (double v : impaired.i_samples) put<float>(os, static_cast<float>(v));
                for (double v : impaired.q_samples) put<float>(os, static_cast<float>(v));
                ++frame_id;
            }
        }
    }
    if (!os) throw IoError("write failed on " + out_path);
    os.close();
    manifest.save(out_path + ".manifest.json");

    SynthStats st;
    st.frames = frame_id;
    st.bytes = 24 + st.frames * (8 + 2 + 4 + 8ull * manifest.frame_length);
    return st;
}

}  // namespace amr::sig
