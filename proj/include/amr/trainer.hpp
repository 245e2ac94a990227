#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "amr/checkpoint.hpp"
#include "amr/featex.hpp"
#include "amr/mcanet.hpp"

namespace amr {

struct TrainConfig {
    double lr = 5e-5;
    double weight_decay = 0.01;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int batch_size = 64;
    int epochs = 30;
    int patience = 10;  // early stop on val loss
    uint64_t seed = 1;
    double split_train = 0.7, split_val = 0.2, split_test = 0.1;

    void validate() const;

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
    static TrainConfig load(const std::string& path);
    void save(const std::string& path) const;
};

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
    bool stratified = true;
    std::string warning;  // set when stratification fell back to a global shuffle
};

// Stratified by (label, snr) cell, largest-remainder allocation per cell,
// deterministic under seed. Cells smaller than 3 samples trigger a global
// shuffled split with a warning.
SplitIndices split_dataset(const std::vector<uint16_t>& labels, const std::vector<float>& snr_db,
                           const TrainConfig& cfg);

// Decoupled weight decay: w -= lr * (adam_step + wd * w); decay skipped for
// parameters flagged decay=false.
template <class T>
class AdamW {
  public:
    AdamW(std::vector<nn::Parameter<T>*> params, const TrainConfig& cfg)
        : params_(std::move(params)), lr_(cfg.lr), wd_(cfg.weight_decay), b1_(cfg.beta1),
          b2_(cfg.beta2), eps_(cfg.eps) {
        for (auto* p : params_) states_.push_back({Array<T>(p->value.shape), Array<T>(p->value.shape)});
    }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            nn::Parameter<T>& p = *params_[pi];
            Array<T>& m = states_[pi].m;
            Array<T>& v = states_[pi].v;
            const T wd = p.decay ? static_cast<T>(wd_) : T(0);
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const T g = p.grad[i];
                m[i] = static_cast<T>(b1_) * m[i] + static_cast<T>(1.0 - b1_) * g;
                v[i] = static_cast<T>(b2_) * v[i] + static_cast<T>(1.0 - b2_) * g * g;
                const T mhat = m[i] / static_cast<T>(bc1);
                const T vhat = v[i] / static_cast<T>(bc2);
                p.value[i] -= static_cast<T>(lr_) *
                              (mhat / (std::sqrt(vhat) + static_cast<T>(eps_)) + wd * p.value[i]);
            }
        }
    }

    uint64_t steps() const { return t_; }

  private:
    struct State {
        Array<T> m, v;
    };
    std::vector<nn::Parameter<T>*> params_;
    std::vector<State> states_;
    double lr_, wd_, b1_, b2_, eps_;
    uint64_t t_ = 0;
};

struct MetricsReport {
    std::map<float, double> per_snr_accuracy;
    double overall_accuracy = 0.0;
    double highest_accuracy = 0.0;  // max over the SNR grid
    std::vector<int> class_labels;  // original dataset label of each dense class index
    std::map<float, std::vector<std::vector<int>>> confusion;  // per snr: K x K counts
    std::vector<double> train_loss, val_loss;                  // per epoch
    int best_epoch = -1;                                       // epochs-to-best-val (0-based)
    double best_val_loss = 0.0;
    std::string split_warning;

    std::string to_json() const;
    void save_json(const std::string& path) const;
    void save_snr_csv(const std::string& path) const;
    // one confusion_<snr>.csv per SNR bucket inside dir
    void save_confusion_csvs(const std::string& dir) const;
};

struct TrainResult {
    MetricsReport report;
    std::vector<CheckpointEntry> best_checkpoint;
    int epochs_ran = 0;
};

// Initializes the model from cfg.seed, runs the epoch loop with seeded
// shuffles and per-epoch validation, restores the best-val checkpoint.
TrainResult train(McanetModel<float>& model, const feat::FeatSet& data,
                  const SplitIndices& split, const TrainConfig& cfg);

// Per-SNR accuracy and confusion on the given subset. Dataset labels are
// mapped to dense class indices by sorted order (the same mapping train
// uses); true/pred out-params carry the original label values.
MetricsReport evaluate(McanetModel<float>& model, const feat::FeatSet& data,
                       const std::vector<std::size_t>& indices, int batch_size = 64,
                       std::vector<float>* embeddings = nullptr,
                       std::vector<int>* true_labels = nullptr,
                       std::vector<int>* pred_labels = nullptr);

struct AblationRun {
    std::string variant;
    std::size_t param_count = 0;
    MetricsReport report;
    std::vector<CheckpointEntry> checkpoint;
};

// Trains full, w/o PAFF, w/o WaveFilter, w/o FusionGate under identical
// seeds and budgets.
std::vector<AblationRun> run_ablation(const McanetConfig& base, const feat::FeatSet& data,
                                      const TrainConfig& cfg);

}  // namespace amr
