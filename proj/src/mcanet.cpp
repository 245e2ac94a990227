#include "amr/mcanet.hpp"

#include <fstream>

#include "json.hpp"

namespace amr {

using nlohmann::json;

void McanetConfig::validate() const {
    if (n_classes < 2) throw ConfigError("mcanet: n_classes must be >= 2");
    if (cnn_channels.empty()) throw ConfigError("mcanet: cnn_channels must be non-empty");
    for (int c : cnn_channels)
        if (c < 1) throw ConfigError("mcanet: cnn_channels entries must be positive");
    if (cnn_blocks_per_stage < 1) throw ConfigError("mcanet: cnn_blocks_per_stage must be >= 1");
    const int factor = 1 << n_stages();
    if (image_res < 8 || image_res % factor != 0)
        throw ConfigError("mcanet: image_res must be >= 8 and divisible by " +
                          std::to_string(factor));
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
        throw ConfigError("mcanet: d_model must be divisible by n_heads");
    if (seq_len < 1) throw ConfigError("mcanet: seq_len must be >= 1");
    if (n_encoder_layers < 1) throw ConfigError("mcanet: n_encoder_layers must be >= 1");
    if (ffn_dim < 1) throw ConfigError("mcanet: ffn_dim must be >= 1");
    if (reduction_ratio < 1) throw ConfigError("mcanet: reduction_ratio must be >= 1");
    if (g_low < 1.0) throw ConfigError("mcanet: g_low must be >= 1");
}

std::string McanetConfig::to_json() const {
    json j;
    j["n_classes"] = n_classes;
    j["image_res"] = image_res;
    j["d_model"] = d_model;
    j["seq_len"] = seq_len;
    j["n_heads"] = n_heads;
    j["n_encoder_layers"] = n_encoder_layers;
    j["ffn_dim"] = ffn_dim;
    j["cnn_channels"] = cnn_channels;
    j["cnn_blocks_per_stage"] = cnn_blocks_per_stage;
    j["reduction_ratio"] = reduction_ratio;
    j["g_low"] = g_low;
    j["enable_paff"] = enable_paff;
    j["enable_wavefilter"] = enable_wavefilter;
    j["enable_fusion_gate"] = enable_fusion_gate;
    j["max_branch_channel_avg"] = max_branch_channel_avg;
    return j.dump(2);
}

McanetConfig McanetConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("mcanet config: invalid JSON: ") + e.what());
    }
    McanetConfig c;
    try {
        if (j.contains("n_classes")) c.n_classes = j["n_classes"].get<int>();
        if (j.contains("image_res")) c.image_res = j["image_res"].get<int>();
        if (j.contains("d_model")) c.d_model = j["d_model"].get<int>();
        if (j.contains("seq_len")) c.seq_len = j["seq_len"].get<int>();
        if (j.contains("n_heads")) c.n_heads = j["n_heads"].get<int>();
        if (j.contains("n_encoder_layers")) c.n_encoder_layers = j["n_encoder_layers"].get<int>();
        if (j.contains("ffn_dim")) c.ffn_dim = j["ffn_dim"].get<int>();
        if (j.contains("cnn_channels")) c.cnn_channels = j["cnn_channels"].get<std::vector<int>>();
        if (j.contains("cnn_blocks_per_stage"))
            c.cnn_blocks_per_stage = j["cnn_blocks_per_stage"].get<int>();
        if (j.contains("reduction_ratio")) c.reduction_ratio = j["reduction_ratio"].get<int>();
        if (j.contains("g_low")) c.g_low = j["g_low"].get<double>();
        if (j.contains("enable_paff")) c.enable_paff = j["enable_paff"].get<bool>();
        if (j.contains("enable_wavefilter")) c.enable_wavefilter = j["enable_wavefilter"].get<bool>();
        if (j.contains("enable_fusion_gate"))
            c.enable_fusion_gate = j["enable_fusion_gate"].get<bool>();
        if (j.contains("max_branch_channel_avg"))
            c.max_branch_channel_avg = j["max_branch_channel_avg"].get<bool>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("mcanet config: bad field type: ") + e.what());
    }
    c.validate();
    return c;
}

void McanetConfig::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("mcanet config: cannot open for write: " + path);
    os << to_json() << "\n";
    if (!os) throw IoError("mcanet config: write failed: " + path);
}

McanetConfig McanetConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("mcanet config: cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_json(text);
}

}  // namespace amr
