#include "amr/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace amr {

namespace {

constexpr char kMagic[4] = {'A', 'M', 'R', 'W'};

template <class T>
void put(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is, const char* what) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError(std::string("checkpoint: truncated reading ") + what);
    return v;
}

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open for write: " + path);
    os.write(kMagic, 4);
    put<uint32_t>(os, static_cast<uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xFFFF) throw IoError("checkpoint: name too long: " + e.name);
        put<uint16_t>(os, static_cast<uint16_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        if (e.data.rank() > 0xFF) throw IoError("checkpoint: rank too large for '" + e.name + "'");
        put<uint8_t>(os, static_cast<uint8_t>(e.data.rank()));
        for (int d : e.data.shape) put<uint32_t>(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(e.data.data()),
                 static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    const auto count = get<uint32_t>(is, "count");
    std::vector<CheckpointEntry> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const auto nlen = get<uint16_t>(is, "name length");
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        if (!is) throw IoError("checkpoint: truncated reading name");
        const auto rank = get<uint8_t>(is, "rank");
        Shape s(rank);
        for (int d = 0; d < rank; ++d) s[static_cast<std::size_t>(d)] = static_cast<int>(get<uint32_t>(is, "dim"));
        Array<float> data(s);
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(float)));
        if (!is) throw IoError("checkpoint: truncated reading values of '" + name + "'");
        out.push_back({std::move(name), std::move(data)});
    }
    return out;
}

}  // namespace amr
