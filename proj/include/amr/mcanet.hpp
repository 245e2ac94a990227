#pragma once

#include <string>
#include <vector>

#include "amr/nn.hpp"

namespace amr {

struct McanetConfig {
    int n_classes = 11;
    int image_res = 64;
    int d_model = 64;
    int seq_len = 8;
    int n_heads = 4;
    int n_encoder_layers = 2;
    int ffn_dim = 128;
    std::vector<int> cnn_channels = {16, 32, 64};
    int cnn_blocks_per_stage = 2;
    int reduction_ratio = 32;  // Dr
    double g_low = 1.5;
    bool enable_paff = true;
    bool enable_wavefilter = true;
    bool enable_fusion_gate = true;
    // Channel weights of the max branch use average pooling of the original
    // features by default; switchable to max pooling.
    bool max_branch_channel_avg = true;

    void validate() const;
    int n_stages() const { return static_cast<int>(cnn_channels.size()); }
    int feat_res() const { return image_res >> n_stages(); }
    int feat_channels() const { return cnn_channels.back(); }

    std::string to_json() const;
    static McanetConfig from_json(const std::string& text);
    void save(const std::string& path) const;
    static McanetConfig load(const std::string& path);
};

template <class T>
struct McanetModel {
    McanetConfig cfg;
    nn::BranchCnn<T> cons_branch, eye_branch;
    nn::FusionGate<T> gate;
    nn::FreqFormer<T> freq;
    nn::Scape<T> scape;
    nn::Linear<T> head;

    explicit McanetModel(McanetConfig c) : cfg(std::move(c)) {
        cfg.validate();
        cons_branch = nn::BranchCnn<T>(cfg.cnn_channels, cfg.cnn_blocks_per_stage);
        eye_branch = nn::BranchCnn<T>(cfg.cnn_channels, cfg.cnn_blocks_per_stage);
        gate = nn::FusionGate<T>(cfg.enable_fusion_gate);
        freq = nn::FreqFormer<T>(cfg.seq_len, cfg.d_model, cfg.n_heads, cfg.n_encoder_layers,
                                 cfg.ffn_dim, cfg.enable_wavefilter, cfg.g_low);
        scape = nn::Scape<T>(cfg.feat_channels(), cfg.d_model, cfg.reduction_ratio,
                             cfg.enable_paff, cfg.max_branch_channel_avg);
        head = nn::Linear<T>(cfg.feat_channels(), cfg.n_classes, nn::Init::xavier_uniform);
    }

    void init(uint64_t seed) {
        Rng rng(seed);
        cons_branch.init(rng);
        eye_branch.init(rng);
        gate.init(rng);
        freq.init(rng);
        scape.init(rng);
        head.init(rng);
    }

    nn::ParamSet<T> collect() {
        nn::ParamSet<T> s;
        cons_branch.collect("dual.cons", s);
        eye_branch.collect("dual.eye", s);
        gate.collect("dual.gate", s);
        freq.collect("freq", s);
        scape.collect("scape", s);
        head.collect("head", s);
        return s;
    }

    std::size_t param_count() { return collect().count(); }

    struct Output {
        nn::Var logits;
        nn::Var embedding;  // pre-classifier (N, C) vector
    };

    // cons, eye: (N,1,res,res); wav: (N,282)
    Output forward(nn::Graph<T>& g, nn::Var cons, nn::Var eye, nn::Var wav, bool training) {
        const Shape cs = g.shape(cons);  // by value: records below may reallocate node storage
        const Shape es = g.shape(eye);
        if (cs.size() != 4 || cs[1] != 1 || cs[2] != cfg.image_res || cs[3] != cfg.image_res ||
            cs != es)
            throw ShapeError("dual_encoder: expected two (N,1," + std::to_string(cfg.image_res) +
                             "," + std::to_string(cfg.image_res) + ") rasters, got " +
                             shape_str(cs) + " and " + shape_str(es));
        auto stage = [](const char* name, auto&& fn) {
            try {
                return fn();
            } catch (const Error& e) {
                throw Error(e.code, std::string(name) + ": " + e.what());
            }
        };
        nn::Var img = stage("dual_encoder", [&] {
            nn::Var a = cons_branch.forward(g, cons, training);
            nn::Var b = eye_branch.forward(g, eye, training);
            return gate.forward(g, a, b);
        });
        nn::Var tmp = stage("freqformer", [&] { return freq.forward(g, wav); });
        nn::Var y = stage("scape", [&] { return scape.forward(g, img, tmp, training); });
        return stage("head", [&] {
            nn::Var emb = tc::global_pool(g, y, nn::PoolMode::avg);
            emb = tc::reshape(g, emb, Shape{cs[0], cfg.feat_channels()});
            Output out;
            out.embedding = emb;
            out.logits = head.forward(g, emb);
            return out;
        });
    }
};

}  // namespace amr
