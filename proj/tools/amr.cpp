// amr — command-line front end for the modulation-recognition pipeline:
// synth → featurize → train → eval → ablate, plus gradcheck.
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "amr/featex.hpp"
#include "amr/gradcheck.hpp"
#include "amr/mcanet.hpp"
#include "amr/sigsynth.hpp"
#include "amr/svg.hpp"
#include "amr/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
    json data;               // command-specific summary
    json outputs;            // artifact name -> path
    bool ok = true;          // false: ran to completion but a check failed
};

void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw amr::IoError(std::string(what) + " not found: " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw amr::IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw amr::IoError("cannot open for write: " + path);
    f << text;
    if (!f) throw amr::IoError("short write: " + path);
}

struct PipelineConfig {
    amr::McanetConfig model;
    amr::TrainConfig trainer;
};

// Config file: {"model": {...}, "trainer": {...}}, both sections optional.
PipelineConfig load_pipeline_config(const std::string& path) {
    PipelineConfig pc;
    if (path.empty()) return pc;
    require_file(path, "config");
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const std::exception& e) {
        throw amr::ConfigError("config parse failed (" + path + "): " + e.what());
    }
    if (!j.is_object()) throw amr::ConfigError("config root must be an object: " + path);
    for (auto& [k, v] : j.items()) {
        if (k == "model")
            pc.model = amr::McanetConfig::from_json(v.dump());
        else if (k == "trainer")
            pc.trainer = amr::TrainConfig::from_json(v.dump());
        else
            throw amr::ConfigError("unknown config key '" + k + "' (expected model/trainer)");
    }
    return pc;
}

void write_effective_config(const std::string& dir, const amr::McanetConfig& mc,
                            const amr::TrainConfig& tc) {
    json j;
    j["model"] = json::parse(mc.to_json());
    j["trainer"] = json::parse(tc.to_json());
    write_text(dir + "/config.json", j.dump(2) + "\n");
}

json report_summary(const amr::MetricsReport& rep) {
    json j;
    j["overall_accuracy"] = rep.overall_accuracy;
    j["highest_accuracy"] = rep.highest_accuracy;
    j["best_epoch"] = rep.best_epoch;
    json snr = json::object();
    for (auto& [k, v] : rep.per_snr_accuracy) {
        std::ostringstream key;
        key << k;
        snr[key.str()] = v;
    }
    j["per_snr_accuracy"] = snr;
    if (!rep.split_warning.empty()) j["split_warning"] = rep.split_warning;
    return j;
}

void print_report(const amr::MetricsReport& rep) {
    std::cout << std::fixed << std::setprecision(4);
    std::cout << "  snr_db  accuracy\n";
    for (auto& [snr, acc] : rep.per_snr_accuracy)
        std::cout << std::setw(8) << snr << "  " << acc << "\n";
    std::cout << "overall accuracy : " << rep.overall_accuracy << "\n";
    std::cout << "highest accuracy : " << rep.highest_accuracy << "\n";
    if (rep.best_epoch >= 0) std::cout << "best epoch       : " << rep.best_epoch << "\n";
    if (!rep.split_warning.empty()) std::cout << "warning          : " << rep.split_warning << "\n";
    std::cout.unsetf(std::ios::fixed);
}

void merge_test_metrics(amr::MetricsReport& rep, const amr::MetricsReport& test) {
    rep.per_snr_accuracy = test.per_snr_accuracy;
    rep.overall_accuracy = test.overall_accuracy;
    rep.highest_accuracy = test.highest_accuracy;
    rep.confusion = test.confusion;
}

void write_report_files(const amr::MetricsReport& rep, const std::string& dir, json& outputs) {
    rep.save_json(dir + "/metrics.json");
    rep.save_snr_csv(dir + "/accuracy_vs_snr.csv");
    rep.save_confusion_csvs(dir);
    outputs["metrics"] = dir + "/metrics.json";
    outputs["snr_csv"] = dir + "/accuracy_vs_snr.csv";
}

void write_snr_svg(const amr::MetricsReport& rep, const std::string& path,
                   const std::string& label) {
    amr::svg::Series s;
    s.label = label;
    for (auto& [snr, acc] : rep.per_snr_accuracy) s.points.push_back({snr, 100.0 * acc});
    amr::svg::save_svg(path,
                       amr::svg::line_plot("accuracy vs SNR", "SNR (dB)", "accuracy (%)", {s}));
}

void write_embeddings_csv(const std::string& path, const std::vector<float>& emb,
                          const std::vector<int>& truth, const std::vector<int>& pred) {
    const std::size_t n = truth.size();
    const std::size_t d = n ? emb.size() / n : 0;
    std::ofstream f(path);
    if (!f) throw amr::IoError("cannot open for write: " + path);
    f << "label,pred";
    for (std::size_t j = 0; j < d; ++j) f << ",e" << j;
    f << "\n";
    for (std::size_t i = 0; i < n; ++i) {
        f << truth[i] << "," << pred[i];
        for (std::size_t j = 0; j < d; ++j) f << "," << emb[i * d + j];
        f << "\n";
    }
    if (!f) throw amr::IoError("short write: " + path);
}

const std::vector<std::size_t>& pick_split(const amr::SplitIndices& split, const std::string& name,
                                           std::vector<std::size_t>& all_storage, std::size_t n) {
    if (name == "train") return split.train;
    if (name == "val") return split.val;
    if (name == "test") return split.test;
    if (name == "all") {
        all_storage.resize(n);
        for (std::size_t i = 0; i < n; ++i) all_storage[i] = i;
        return all_storage;
    }
    throw amr::InvalidArgument("unknown split '" + name + "' (expected train|val|test|all)");
}

// ---- subcommands ----

struct SynthArgs {
    std::string manifest, out;
    uint64_t seed = 0;
    bool seed_set = false, confirm = false;
};

CmdResult cmd_synth(const SynthArgs& a, bool json_mode) {
    require_file(a.manifest, "manifest");
    amr::sig::DatasetManifest m = amr::sig::DatasetManifest::load(a.manifest);
    if (a.seed_set) m.seed = a.seed;
    m.validate();
    const uint64_t frames = m.total_frames();
    const uint64_t est_bytes =
        24 + frames * (14 + 8ull * static_cast<uint64_t>(m.frame_length));
    if (frames > 1'000'000 && !a.confirm) {
        std::ostringstream msg;
        msg << "manifest requests " << frames << " frames (~" << est_bytes / (1024 * 1024)
            << " MiB); rerun with --confirm to proceed";
        throw amr::Error("confirm-required", msg.str());
    }
    amr::sig::SynthStats st = amr::sig::synth_dataset(m, a.out);
    CmdResult r;
    r.data = {{"frames", st.frames}, {"bytes", st.bytes}, {"seed", m.seed}};
    r.outputs = {{"dataset", a.out}, {"manifest", a.out + ".manifest.json"}};
    if (!json_mode)
        std::cout << "wrote " << st.frames << " frames (" << st.bytes << " bytes) to " << a.out
                  << "\n";
    return r;
}

struct FeatArgs {
    std::string in, out;
    int res = 64, eye_k = 8;
};

CmdResult cmd_featurize(const FeatArgs& a, bool json_mode) {
    require_file(a.in, "input dataset");
    amr::sig::RawDataset raw = amr::sig::read_dataset(a.in);
    amr::feat::FeatSet fs = amr::feat::featurize(raw, a.res, a.eye_k);
    amr::feat::write_featset(a.out, fs);
    json cfg = {{"in", a.in}, {"res", a.res}, {"eye_k", a.eye_k}};
    write_text(a.out + ".config.json", cfg.dump(2) + "\n");
    CmdResult r;
    r.data = {{"samples", fs.size()}, {"res", fs.res}, {"wavelet_dim", fs.wavelet_dim}};
    r.outputs = {{"featset", a.out}, {"config", a.out + ".config.json"}};
    if (!json_mode)
        std::cout << "featurized " << fs.size() << " frames at " << a.res << "x" << a.res
                  << " into " << a.out << "\n";
    return r;
}

struct TrainArgs {
    std::string feat, config, out;
    uint64_t seed = 0;
    int epochs = 0, batch_size = 0;
    double lr = 0.0;
    bool seed_set = false, epochs_set = false, batch_set = false, lr_set = false;
};

void apply_overrides(amr::TrainConfig& tc, const TrainArgs& a) {
    if (a.seed_set) tc.seed = a.seed;
    if (a.epochs_set) tc.epochs = a.epochs;
    if (a.batch_set) tc.batch_size = a.batch_size;
    if (a.lr_set) tc.lr = a.lr;
}

CmdResult cmd_train(const TrainArgs& a, bool json_mode) {
    require_file(a.feat, "featset");
    PipelineConfig pc = load_pipeline_config(a.config);
    apply_overrides(pc.trainer, a);
    pc.model.validate();
    pc.trainer.validate();
    fs::create_directories(a.out);
    write_effective_config(a.out, pc.model, pc.trainer);

    amr::feat::FeatSet data = amr::feat::read_featset(a.feat);
    amr::SplitIndices split = amr::split_dataset(data.labels, data.snr_db, pc.trainer);
    amr::McanetModel<float> model(pc.model);
    amr::TrainResult res = amr::train(model, data, split, pc.trainer);
    amr::MetricsReport test = amr::evaluate(model, data, split.test, pc.trainer.batch_size);
    merge_test_metrics(res.report, test);

    amr::write_checkpoint(a.out + "/checkpoint.amrw", res.best_checkpoint);
    pc.model.save(a.out + "/model.json");
    CmdResult r;
    write_report_files(res.report, a.out, r.outputs);
    r.outputs["checkpoint"] = a.out + "/checkpoint.amrw";
    r.outputs["model_config"] = a.out + "/model.json";
    r.outputs["config"] = a.out + "/config.json";
    r.data = report_summary(res.report);
    r.data["epochs_ran"] = res.epochs_ran;
    r.data["param_count"] = model.param_count();
    if (!json_mode) {
        std::cout << "trained " << model.param_count() << " params for " << res.epochs_ran
                  << " epochs\n";
        print_report(res.report);
    }
    return r;
}

struct EvalArgs {
    std::string checkpoint, feat, model_config, config, out, split = "test";
    uint64_t seed = 0;
    int batch_size = 0;
    bool seed_set = false, batch_set = false;
};

CmdResult cmd_eval(const EvalArgs& a, bool json_mode) {
    require_file(a.checkpoint, "checkpoint");
    require_file(a.feat, "featset");
    std::string mc_path = a.model_config;
    if (mc_path.empty()) mc_path = (fs::path(a.checkpoint).parent_path() / "model.json").string();
    require_file(mc_path, "model config");

    PipelineConfig pc = load_pipeline_config(a.config);
    if (a.seed_set) pc.trainer.seed = a.seed;
    if (a.batch_set) pc.trainer.batch_size = a.batch_size;
    pc.trainer.validate();
    amr::McanetConfig mc = amr::McanetConfig::load(mc_path);

    amr::feat::FeatSet data = amr::feat::read_featset(a.feat);
    amr::McanetModel<float> model(mc);
    amr::nn::ParamSet<float> params = model.collect();
    amr::restore(params, amr::read_checkpoint(a.checkpoint));

    amr::SplitIndices split = amr::split_dataset(data.labels, data.snr_db, pc.trainer);
    std::vector<std::size_t> all_storage;
    const auto& idx = pick_split(split, a.split, all_storage, data.size());
    if (idx.empty()) throw amr::InvalidArgument("split '" + a.split + "' selected no samples");

    std::vector<float> emb;
    std::vector<int> truth, pred;
    amr::MetricsReport rep =
        amr::evaluate(model, data, idx, pc.trainer.batch_size, &emb, &truth, &pred);
    if (!split.warning.empty()) rep.split_warning = split.warning;

    fs::create_directories(a.out);
    CmdResult r;
    write_report_files(rep, a.out, r.outputs);
    write_snr_svg(rep, a.out + "/accuracy_vs_snr.svg", a.split);
    write_embeddings_csv(a.out + "/embeddings.csv", emb, truth, pred);
    json cfg = {{"checkpoint", a.checkpoint},
                {"feat", a.feat},
                {"model_config", mc_path},
                {"split", a.split},
                {"trainer", json::parse(pc.trainer.to_json())}};
    write_text(a.out + "/eval_config.json", cfg.dump(2) + "\n");
    r.outputs["plot"] = a.out + "/accuracy_vs_snr.svg";
    r.outputs["embeddings"] = a.out + "/embeddings.csv";
    r.outputs["config"] = a.out + "/eval_config.json";
    r.data = report_summary(rep);
    r.data["split"] = a.split;
    r.data["samples"] = idx.size();
    if (!json_mode) {
        std::cout << "evaluated " << idx.size() << " samples (" << a.split << " split)\n";
        print_report(rep);
    }
    return r;
}

CmdResult cmd_ablate(const TrainArgs& a, bool json_mode) {
    require_file(a.feat, "featset");
    PipelineConfig pc = load_pipeline_config(a.config);
    apply_overrides(pc.trainer, a);
    pc.model.validate();
    pc.trainer.validate();
    fs::create_directories(a.out);
    write_effective_config(a.out, pc.model, pc.trainer);

    amr::feat::FeatSet data = amr::feat::read_featset(a.feat);
    std::vector<amr::AblationRun> runs = amr::run_ablation(pc.model, data, pc.trainer);

    CmdResult r;
    json variants = json::array();
    for (const auto& run : runs) {
        const std::string dir = a.out + "/" + run.variant;
        fs::create_directories(dir);
        amr::write_checkpoint(dir + "/checkpoint.amrw", run.checkpoint);
        amr::McanetConfig mc = pc.model;
        mc.enable_paff = run.variant != "no_paff";
        mc.enable_wavefilter = run.variant != "no_wavefilter";
        mc.enable_fusion_gate = run.variant != "no_fusion_gate";
        mc.save(dir + "/model.json");
        run.report.save_json(dir + "/metrics.json");
        json v = report_summary(run.report);
        v["variant"] = run.variant;
        v["param_count"] = run.param_count;
        variants.push_back(v);
        r.outputs[run.variant] = dir;
    }
    write_text(a.out + "/ablation.json", json({{"variants", variants}}).dump(2) + "\n");
    r.outputs["summary"] = a.out + "/ablation.json";
    r.outputs["config"] = a.out + "/config.json";
    r.data["variants"] = variants;
    if (!json_mode) {
        std::cout << std::left << std::setw(16) << "variant" << std::right << std::setw(10)
                  << "params" << std::setw(10) << "overall" << std::setw(10) << "highest"
                  << std::setw(12) << "best_epoch" << "\n";
        for (const auto& run : runs)
            std::cout << std::left << std::setw(16) << run.variant << std::right << std::setw(10)
                      << run.param_count << std::setw(10) << std::fixed << std::setprecision(4)
                      << run.report.overall_accuracy << std::setw(10)
                      << run.report.highest_accuracy << std::setw(12)
                      << run.report.best_epoch << "\n";
        std::cout.unsetf(std::ios::fixed);
    }
    return r;
}

CmdResult cmd_gradcheck(const std::string& scope, bool json_mode) {
    std::vector<amr::GradCheckResult> results = amr::run_gradchecks(scope);
    int failed = 0;
    json checks = json::array();
    for (const auto& g : results) {
        if (!g.pass) ++failed;
        checks.push_back({{"name", g.name},
                          {"scope", g.scope},
                          {"max_rel_err", g.max_rel_err},
                          {"tolerance", g.tolerance},
                          {"seeds", g.seeds},
                          {"pass", g.pass}});
        if (!json_mode)
            std::cout << std::left << std::setw(22) << g.name << std::setw(12) << g.scope
                      << std::right << std::setw(13) << std::scientific << std::setprecision(3)
                      << g.max_rel_err << std::setw(10) << g.tolerance << std::defaultfloat
                      << "  " << (g.pass ? "ok" : "FAIL") << "\n";
    }
    if (!json_mode)
        std::cout << (failed ? "FAILED: " : "passed: ") << results.size() - failed << "/"
                  << results.size() << " checks within tolerance\n";
    CmdResult r;
    r.data = {{"scope", scope}, {"checks", checks}, {"failed", failed}};
    r.ok = failed == 0;
    return r;
}

int emit(const std::string& cmd, bool json_mode, const std::function<CmdResult()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    try {
        CmdResult res = body();
        if (json_mode) {
            json j = {{"ok", res.ok}, {"command", cmd}, {"elapsed_s", elapsed()}};
            if (!res.data.is_null()) j["data"] = res.data;
            if (!res.outputs.is_null() && !res.outputs.empty()) j["outputs"] = res.outputs;
            std::cout << j.dump(2) << "\n";
        }
        return res.ok ? 0 : 1;
    } catch (const amr::Error& e) {
        std::string path;
        const std::string msg = e.what();
        const auto colon = msg.rfind(": ");
        if (e.code == "io-error" && colon != std::string::npos) path = msg.substr(colon + 2);
        if (json_mode) {
            json err = {{"code", e.code}, {"message", msg}};
            if (!path.empty()) err["path"] = path;
            json j = {{"ok", false}, {"command", cmd}, {"elapsed_s", elapsed()}, {"error", err}};
            std::cout << j.dump(2) << "\n";
        } else {
            std::cerr << "error code=" << e.code << " message=\"" << msg << "\"";
            if (!path.empty()) std::cerr << " path=\"" << path << "\"";
            std::cerr << "\n";
        }
        return 1;
    } catch (const std::exception& e) {
        if (json_mode) {
            json j = {{"ok", false},
                      {"command", cmd},
                      {"elapsed_s", elapsed()},
                      {"error", {{"code", "internal-error"}, {"message", e.what()}}}};
            std::cout << j.dump(2) << "\n";
        } else {
            std::cerr << "error code=internal-error message=\"" << e.what() << "\"\n";
        }
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"amr — multimodal automatic modulation recognition pipeline"};
    app.require_subcommand(1);
    bool json_mode = false;
    app.add_flag("--json", json_mode, "machine-readable JSON summary on stdout");

    SynthArgs sa;
    CLI::App* synth = app.add_subcommand("synth", "generate a raw IQ frame dataset")->fallthrough();
    synth->add_option("--manifest", sa.manifest, "dataset manifest JSON")->required();
    synth->add_option("--out", sa.out, "output dataset path")->required();
    CLI::Option* synth_seed = synth->add_option("--seed", sa.seed, "override manifest seed");
    synth->add_flag("--confirm", sa.confirm, "allow manifests above 1e6 frames");

    FeatArgs fa;
    CLI::App* feat = app.add_subcommand("featurize", "raster + wavelet features from raw frames")->fallthrough();
    feat->add_option("--in", fa.in, "raw dataset path")->required();
    feat->add_option("--out", fa.out, "output featset path")->required();
    feat->add_option("--res", fa.res, "raster resolution")->check(CLI::PositiveNumber);
    feat->add_option("--eye-k", fa.eye_k, "samples per symbol for eye windows")
        ->check(CLI::PositiveNumber);

    TrainArgs ta;
    CLI::App* train = app.add_subcommand("train", "train the network on a featset")->fallthrough();
    train->add_option("--feat", ta.feat, "featset path")->required();
    train->add_option("--config", ta.config, "pipeline config JSON (model/trainer sections)");
    train->add_option("--out", ta.out, "output directory")->required();
    CLI::Option* train_seed = train->add_option("--seed", ta.seed, "training seed");
    CLI::Option* train_epochs = train->add_option("--epochs", ta.epochs, "epoch budget");
    CLI::Option* train_batch = train->add_option("--batch-size", ta.batch_size, "batch size");
    CLI::Option* train_lr = train->add_option("--lr", ta.lr, "learning rate");

    EvalArgs ea;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a featset split")->fallthrough();
    eval->add_option("--checkpoint", ea.checkpoint, "checkpoint path")->required();
    eval->add_option("--feat", ea.feat, "featset path")->required();
    eval->add_option("--model-config", ea.model_config,
                     "model config JSON (default: model.json beside the checkpoint)");
    eval->add_option("--config", ea.config, "pipeline config JSON for split parameters");
    eval->add_option("--out", ea.out, "output directory")->required();
    eval->add_option("--split", ea.split, "train|val|test|all (default test)");
    CLI::Option* eval_seed = eval->add_option("--seed", ea.seed, "split seed");
    CLI::Option* eval_batch = eval->add_option("--batch-size", ea.batch_size, "batch size");

    TrainArgs aa;
    CLI::App* ablate = app.add_subcommand("ablate", "train all ablation variants")->fallthrough();
    ablate->add_option("--feat", aa.feat, "featset path")->required();
    ablate->add_option("--config", aa.config, "pipeline config JSON (model/trainer sections)");
    ablate->add_option("--out", aa.out, "output directory")->required();
    CLI::Option* ablate_seed = ablate->add_option("--seed", aa.seed, "training seed");
    CLI::Option* ablate_epochs = ablate->add_option("--epochs", aa.epochs, "epoch budget");
    CLI::Option* ablate_batch = ablate->add_option("--batch-size", aa.batch_size, "batch size");
    CLI::Option* ablate_lr = ablate->add_option("--lr", aa.lr, "learning rate");

    std::string scope = "all";
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit")->fallthrough();
    gradcheck->add_option("scope", scope, "all|ops|fusion-gate|paff|scape|freqformer|model");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error code=usage message=\"" << e.what() << "\"\n";
        return 1;
    }

    if (synth->parsed()) {
        sa.seed_set = synth_seed->count() > 0;
        return emit("synth", json_mode, [&] { return cmd_synth(sa, json_mode); });
    }
    if (feat->parsed())
        return emit("featurize", json_mode, [&] { return cmd_featurize(fa, json_mode); });
    if (train->parsed()) {
        ta.seed_set = train_seed->count() > 0;
        ta.epochs_set = train_epochs->count() > 0;
        ta.batch_set = train_batch->count() > 0;
        ta.lr_set = train_lr->count() > 0;
        return emit("train", json_mode, [&] { return cmd_train(ta, json_mode); });
    }
    if (eval->parsed()) {
        ea.seed_set = eval_seed->count() > 0;
        ea.batch_set = eval_batch->count() > 0;
        return emit("eval", json_mode, [&] { return cmd_eval(ea, json_mode); });
    }
    if (ablate->parsed()) {
        aa.seed_set = ablate_seed->count() > 0;
        aa.epochs_set = ablate_epochs->count() > 0;
        aa.batch_set = ablate_batch->count() > 0;
        aa.lr_set = ablate_lr->count() > 0;
        return emit("ablate", json_mode, [&] { return cmd_ablate(aa, json_mode); });
    }
    return emit("gradcheck", json_mode, [&] { return cmd_gradcheck(scope, json_mode); });
}
