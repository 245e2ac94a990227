#include "amr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace amr {

using nlohmann::json;

void TrainConfig::validate() const {
    if (lr <= 0) throw ConfigError("train: lr must be positive");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
        throw ConfigError("train: betas must lie in [0,1)");
    if (eps <= 0) throw ConfigError("train: eps must be positive");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (split_train <= 0 || split_val <= 0 || split_test <= 0)
        throw ConfigError("train: split ratios must be positive");
    if (std::abs(split_train + split_val + split_test - 1.0) > 1e-9)
        throw ConfigError("train: split ratios must sum to 1");
}

std::string TrainConfig::to_json() const {
    json j;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["eps"] = eps;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["patience"] = patience;
    j["seed"] = seed;
    j["split"] = {split_train, split_val, split_test};
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: invalid JSON: ") + e.what());
    }
    TrainConfig c;
    try {
        if (j.contains("lr")) c.lr = j["lr"].get<double>();
        if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
        if (j.contains("beta1")) c.beta1 = j["beta1"].get<double>();
        if (j.contains("beta2")) c.beta2 = j["beta2"].get<double>();
        if (j.contains("eps")) c.eps = j["eps"].get<double>();
        if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
        if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
        if (j.contains("patience")) c.patience = j["patience"].get<int>();
        if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
        if (j.contains("split")) {
            auto s = j["split"].get<std::vector<double>>();
            if (s.size() != 3) throw ConfigError("train config: split must have 3 entries");
            c.split_train = s[0];
            c.split_val = s[1];
            c.split_test = s[2];
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: bad field type: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("train config: cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_json(text);
}

void TrainConfig::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("train config: cannot open for write: " + path);
    os << to_json() << "\n";
    if (!os) throw IoError("train config: write failed: " + path);
}

// ---------- split ----------

namespace {

// Largest-remainder allocation of n into ratios; deterministic, sums to n.
std::array<std::size_t, 3> allocate(std::size_t n, const std::array<double, 3>& ratios) {
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double target = static_cast<double>(n) * ratios[static_cast<std::size_t>(i)];
        counts[static_cast<std::size_t>(i)] = static_cast<std::size_t>(std::floor(target));
        frac[static_cast<std::size_t>(i)] = target - std::floor(target);
        assigned += counts[static_cast<std::size_t>(i)];
    }
    while (assigned < n) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (frac[static_cast<std::size_t>(i)] > frac[static_cast<std::size_t>(best)]) best = i;
        ++counts[static_cast<std::size_t>(best)];
        frac[static_cast<std::size_t>(best)] = -1.0;
        ++assigned;
    }
    return counts;
}

template <class V>
void shuffle_indices(V& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

}  // namespace

SplitIndices split_dataset(const std::vector<uint16_t>& labels, const std::vector<float>& snr_db,
                           const TrainConfig& cfg) {
    cfg.validate();
    if (labels.size() != snr_db.size() || labels.empty())
        throw InvalidArgument("split: labels and snr arrays must be non-empty and equal-length");
    const std::array<double, 3> ratios{cfg.split_train, cfg.split_val, cfg.split_test};

    // cells keyed by (label, snr), in first-appearance order for determinism
    std::map<std::pair<uint16_t, float>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < labels.size(); ++i)
        cells[{labels[i], snr_db[i]}].push_back(i);

    SplitIndices out;
    bool too_small = false;
    for (const auto& [key, idx] : cells)
        if (idx.size() < 3) too_small = true;

    if (too_small) {
        out.stratified = false;
        out.warning = "stratification fallback: at least one (label, snr) cell has fewer than 3 "
                      "samples; using a global shuffled split";
        std::vector<std::size_t> all(labels.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        Rng rng = Rng::derive(cfg.seed, 0x517FA11Bull);
        shuffle_indices(all, rng);
        const auto counts = allocate(all.size(), ratios);
        out.train.assign(all.begin(), all.begin() + static_cast<long>(counts[0]));
        out.val.assign(all.begin() + static_cast<long>(counts[0]),
                       all.begin() + static_cast<long>(counts[0] + counts[1]));
        out.test.assign(all.begin() + static_cast<long>(counts[0] + counts[1]), all.end());
        return out;
    }

    uint64_t cell_id = 0;
    for (auto& [key, idx] : cells) {
        Rng rng = Rng::derive(cfg.seed, cell_id++);
        shuffle_indices(idx, rng);
        const auto counts = allocate(idx.size(), ratios);
        out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<long>(counts[0]));
        out.val.insert(out.val.end(), idx.begin() + static_cast<long>(counts[0]),
                       idx.begin() + static_cast<long>(counts[0] + counts[1]));
        out.test.insert(out.test.end(), idx.begin() + static_cast<long>(counts[0] + counts[1]),
                        idx.end());
    }
    return out;
}

// ---------- metrics ----------

std::string MetricsReport::to_json() const {
    json j;
    json snr = json::array();
    for (const auto& [s, a] : per_snr_accuracy) snr.push_back({{"snr_db", s}, {"accuracy", a}});
    j["per_snr_accuracy"] = snr;
    j["class_labels"] = class_labels;
    j["overall_accuracy"] = overall_accuracy;
    j["highest_accuracy"] = highest_accuracy;
    json conf = json::array();
    for (const auto& [s, m] : confusion) conf.push_back({{"snr_db", s}, {"matrix", m}});
    j["confusion"] = conf;
    j["train_loss"] = train_loss;
    j["val_loss"] = val_loss;
    j["best_epoch"] = best_epoch;
    j["best_val_loss"] = best_val_loss;
    if (!split_warning.empty()) j["split_warning"] = split_warning;
    return j.dump(2);
}

void MetricsReport::save_json(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("metrics: cannot open for write: " + path);
    os << to_json() << "\n";
    if (!os) throw IoError("metrics: write failed: " + path);
}

void MetricsReport::save_snr_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("metrics: cannot open for write: " + path);
    os << "snr_db,accuracy\n";
    for (const auto& [s, a] : per_snr_accuracy) os << s << "," << a << "\n";
    if (!os) throw IoError("metrics: write failed: " + path);
}

void MetricsReport::save_confusion_csvs(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& [s, m] : confusion) {
        std::ostringstream name;
        name << dir << "/confusion_" << s << "db.csv";
        std::ofstream os(name.str());
        if (!os) throw IoError("metrics: cannot open for write: " + name.str());
        for (const auto& row : m) {
            for (std::size_t k = 0; k < row.size(); ++k) os << (k ? "," : "") << row[k];
            os << "\n";
        }
        if (!os) throw IoError("metrics: write failed: " + name.str());
    }
}

// ---------- batched forward plumbing ----------

namespace {

struct Batch {
    Array<float> cons, eye, wav;
    std::vector<int> labels;
};

Batch gather(const feat::FeatSet& data, const std::vector<int>& lut,
             const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
    const int R = data.res;
    const std::size_t img = data.image_numel();
    const std::size_t D = static_cast<std::size_t>(data.wavelet_dim);
    const int B = static_cast<int>(end - begin);
    Batch b{Array<float>(Shape{B, 1, R, R}), Array<float>(Shape{B, 1, R, R}),
            Array<float>(Shape{B, static_cast<int>(D)}), {}};
    b.labels.reserve(static_cast<std::size_t>(B));
    for (std::size_t i = begin; i < end; ++i) {
        const std::size_t s = idx[i];
        const std::size_t row = i - begin;
        std::copy_n(data.cons.data() + s * img, img, b.cons.data() + row * img);
        std::copy_n(data.eye.data() + s * img, img, b.eye.data() + row * img);
        std::copy_n(data.wav.data() + s * D, D, b.wav.data() + row * D);
        b.labels.push_back(lut[data.labels[s]]);
    }
    return b;
}

// Mean loss over the subset without gradient bookkeeping.
double subset_loss(McanetModel<float>& model, const feat::FeatSet& data,
                   const std::vector<int>& lut, const std::vector<std::size_t>& idx,
                   int batch_size) {
    double total = 0.0;
    for (std::size_t at = 0; at < idx.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(idx.size(), at + static_cast<std::size_t>(batch_size));
        Batch b = gather(data, lut, idx, at, end);
        nn::Graph<float> g;
        auto out = model.forward(g, g.leaf(std::move(b.cons)), g.leaf(std::move(b.eye)),
                                 g.leaf(std::move(b.wav)), false);
        nn::Var loss = tc::cross_entropy(g, out.logits, b.labels);
        total += static_cast<double>(g.val(loss)[0]) * static_cast<double>(end - at);
    }
    return total / static_cast<double>(idx.size());
}

// Sorted distinct dataset labels define the dense class indexing shared by
// train and evaluate. Returns the distinct labels; fills lut[label] = index.
std::vector<uint16_t> label_classes(const feat::FeatSet& data, int n_classes, const char* who,
                                    std::vector<int>& lut) {
    std::vector<uint16_t> d(data.labels.begin(), data.labels.end());
    std::sort(d.begin(), d.end());
    d.erase(std::unique(d.begin(), d.end()), d.end());
    if (static_cast<int>(d.size()) != n_classes)
        throw ConfigError(std::string(who) + ": model has " + std::to_string(n_classes) +
                          " classes but the dataset carries " + std::to_string(d.size()) +
                          " distinct labels");
    lut.assign(static_cast<std::size_t>(d.back()) + 1, -1);
    for (std::size_t i = 0; i < d.size(); ++i) lut[d[i]] = static_cast<int>(i);
    return d;
}

void check_featset(const feat::FeatSet& data) {
    if (data.size() == 0) throw InvalidArgument("train: empty feature set");
    if (data.wavelet_dim != nn::kWaveletDim)
        throw ShapeError("train: feature set wavelet dim " + std::to_string(data.wavelet_dim) +
                         ", model expects " + std::to_string(nn::kWaveletDim));
}

}  // namespace

TrainResult train(McanetModel<float>& model, const feat::FeatSet& data, const SplitIndices& split,
                  const TrainConfig& cfg) {
    cfg.validate();
    check_featset(data);
    if (data.res != model.cfg.image_res)
        throw ShapeError("train: feature resolution " + std::to_string(data.res) +
                         " does not match model image_res " + std::to_string(model.cfg.image_res));
    if (split.train.empty() || split.val.empty())
        throw InvalidArgument("train: train and val splits must be non-empty");

    std::vector<int> lut;
    const std::vector<uint16_t> classes = label_classes(data, model.cfg.n_classes, "train", lut);
    model.init(cfg.seed);
    nn::ParamSet<float> ps = model.collect();
    std::vector<nn::Parameter<float>*> params;
    for (auto& [name, p] : ps.params) params.push_back(p);
    AdamW<float> opt(params, cfg);

    TrainResult res;
    res.report.split_warning = split.warning;
    res.report.class_labels.assign(classes.begin(), classes.end());
    std::vector<std::size_t> order = split.train;
    double best_val = std::numeric_limits<double>::infinity();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng::derive(cfg.seed, 0xE90C0000ull + static_cast<uint64_t>(epoch));
        shuffle_indices(order, shuffle_rng);

        double epoch_loss = 0.0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            Batch b = gather(data, lut, order, at, end);
            opt.zero_grad();
            nn::Graph<float> g;
            auto out = model.forward(g, g.leaf(std::move(b.cons)), g.leaf(std::move(b.eye)),
                                     g.leaf(std::move(b.wav)), true);
            nn::Var loss = tc::cross_entropy(g, out.logits, b.labels);
            const double lv = static_cast<double>(g.val(loss)[0]);
            if (!std::isfinite(lv))
                throw Error("divergence", "train: loss became non-finite at epoch " +
                                              std::to_string(epoch) + "; last finite epoch " +
                                              std::to_string(epoch - 1));
            g.backward(loss);
            opt.step();
            epoch_loss += lv * static_cast<double>(end - at);
        }
        res.report.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));

        const double vl = subset_loss(model, data, lut, split.val, cfg.batch_size);
        if (!std::isfinite(vl))
            throw Error("divergence", "train: validation loss became non-finite at epoch " +
                                          std::to_string(epoch) + "; last finite epoch " +
                                          std::to_string(epoch - 1));
        res.report.val_loss.push_back(vl);
        res.epochs_ran = epoch + 1;

        if (vl < best_val) {
            best_val = vl;
            res.report.best_epoch = epoch;
            res.report.best_val_loss = vl;
            res.best_checkpoint = snapshot(ps);
        }
        if (epoch - res.report.best_epoch >= cfg.patience) break;
    }

    restore(ps, res.best_checkpoint);
    return res;
}

MetricsReport evaluate(McanetModel<float>& model, const feat::FeatSet& data,
                       const std::vector<std::size_t>& indices, int batch_size,
                       std::vector<float>* embeddings, std::vector<int>* true_labels,
                       std::vector<int>* pred_labels) {
    check_featset(data);
    if (indices.empty()) throw InvalidArgument("evaluate: empty index list");
    const int K = model.cfg.n_classes;
    std::vector<int> lut;
    const std::vector<uint16_t> classes = label_classes(data, K, "evaluate", lut);
    MetricsReport rep;
    rep.class_labels.assign(classes.begin(), classes.end());
    std::map<float, std::pair<std::size_t, std::size_t>> per_snr;  // snr -> (correct, total)
    std::size_t correct = 0;

    if (embeddings) embeddings->clear();
    if (true_labels) true_labels->clear();
    if (pred_labels) pred_labels->clear();

    for (std::size_t at = 0; at < indices.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(indices.size(), at + static_cast<std::size_t>(batch_size));
        Batch b = gather(data, lut, indices, at, end);
        nn::Graph<float> g;
        auto out = model.forward(g, g.leaf(std::move(b.cons)), g.leaf(std::move(b.eye)),
                                 g.leaf(std::move(b.wav)), false);
        const Array<float>& logits = g.val(out.logits);
        const Array<float>& emb = g.val(out.embedding);
        for (std::size_t row = 0; row < end - at; ++row) {
            const float* lr = logits.data() + row * static_cast<std::size_t>(K);
            int pred = 0;
            for (int k = 1; k < K; ++k)
                if (lr[k] > lr[pred]) pred = k;
            const int truth = b.labels[row];
            const float snr = data.snr_db[indices[at + row]];
            auto& bucket = per_snr[snr];
            ++bucket.second;
            if (pred == truth) {
                ++bucket.first;
                ++correct;
            }
            auto& conf = rep.confusion[snr];
            if (conf.empty()) conf.assign(static_cast<std::size_t>(K), std::vector<int>(static_cast<std::size_t>(K), 0));
            ++conf[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
            if (embeddings) {
                const std::size_t width = static_cast<std::size_t>(emb.shape[1]);
                const float* er = emb.data() + row * width;
                embeddings->insert(embeddings->end(), er, er + width);
            }
            if (true_labels) true_labels->push_back(classes[static_cast<std::size_t>(truth)]);
            if (pred_labels) pred_labels->push_back(classes[static_cast<std::size_t>(pred)]);
        }
    }

    for (const auto& [snr, ct] : per_snr) {
        const double acc = static_cast<double>(ct.first) / static_cast<double>(ct.second);
        rep.per_snr_accuracy[snr] = acc;
        rep.highest_accuracy = std::max(rep.highest_accuracy, acc);
    }
    rep.overall_accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
    return rep;
}

std::vector<AblationRun> run_ablation(const McanetConfig& base, const feat::FeatSet& data,
                                      const TrainConfig& cfg) {
    struct Variant {
        const char* name;
        bool paff, wavefilter, gate;
    };
    const Variant variants[] = {
        {"full", true, true, true},
        {"no_paff", false, true, true},
        {"no_wavefilter", true, false, true},
        {"no_fusion_gate", true, true, false},
    };
    SplitIndices split = split_dataset(data.labels, data.snr_db, cfg);
    std::vector<AblationRun> runs;
    for (const auto& v : variants) {
        McanetConfig mc = base;
        mc.enable_paff = v.paff;
        mc.enable_wavefilter = v.wavefilter;
        mc.enable_fusion_gate = v.gate;
        McanetModel<float> model(mc);
        TrainResult tr = train(model, data, split, cfg);
        AblationRun run;
        run.variant = v.name;
        run.param_count = model.param_count();
        run.report = std::move(tr.report);
        MetricsReport test = evaluate(model, data, split.test, cfg.batch_size);
        run.report.per_snr_accuracy = test.per_snr_accuracy;
        run.report.overall_accuracy = test.overall_accuracy;
        run.report.highest_accuracy = test.highest_accuracy;
        run.report.confusion = test.confusion;
        run.checkpoint = std::move(tr.best_checkpoint);
        runs.push_back(std::move(run));
    }
    return runs;
}

}  // namespace amr
