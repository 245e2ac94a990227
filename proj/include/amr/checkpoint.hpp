#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "amr/nn.hpp"

namespace amr {

struct CheckpointEntry {
    std::string name;
    Array<float> data;
};

// "AMRW" container: count u32, then per entry name (u16 length + UTF-8),
// rank u8, dims u32 each, float32 values. Bit-exact round-trip.
void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

// Parameters first, then buffers, in collection order.
template <class T>
std::vector<CheckpointEntry> snapshot(const nn::ParamSet<T>& set) {
    std::vector<CheckpointEntry> out;
    out.reserve(set.params.size() + set.buffers.size());
    for (const auto& [name, p] : set.params)
        out.push_back({name, p->value.template cast<float>()});
    for (const auto& [name, b] : set.buffers) out.push_back({name, b->template cast<float>()});
    return out;
}

// Strict in both directions: every model tensor must be present, every entry consumed.
template <class T>
void restore(nn::ParamSet<T>& set, const std::vector<CheckpointEntry>& entries) {
    std::unordered_map<std::string, const CheckpointEntry*> index;
    for (const auto& e : entries) {
        if (!index.emplace(e.name, &e).second)
            throw IoError("checkpoint: duplicate entry '" + e.name + "'");
    }
    auto take = [&](const std::string& name, auto& arr) {
        auto it = index.find(name);
        if (it == index.end()) throw IoError("checkpoint: missing entry '" + name + "'");
        const Array<float>& src = it->second->data;
        if (src.shape != arr.shape)
            throw IoError("checkpoint: shape mismatch for '" + name + "': stored " +
                          shape_str(src.shape) + ", model " + shape_str(arr.shape));
        for (std::size_t i = 0; i < src.size(); ++i) arr[i] = static_cast<T>(src[i]);
        index.erase(it);
    };
    for (auto& [name, p] : set.params) take(name, p->value);
    for (auto& [name, b] : set.buffers) take(name, *b);
    if (!index.empty())
        throw IoError("checkpoint: unexpected entry '" + index.begin()->first + "'");
}

}  // namespace amr
