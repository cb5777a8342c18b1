// Command-line entry point: synth | preprocess | extract-features | train | spot | evaluate | serve

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "microspot/errors.hpp"
#include "microspot/parallel.hpp"
#include "microspot/pipeline.hpp"
#include "microspot/service.hpp"

namespace fs = std::filesystem;
using namespace microspot;

namespace {

struct GlobalFlags {
    std::optional<fs::path> config;
    std::optional<int> jobs;
    std::optional<std::uint64_t> seed;
};

struct ModuleFlags {
    std::optional<double> window_sec, overlap_sec;
    std::optional<double> flow_alpha, flow_tol, flow_sigma;
    std::optional<int> flow_iters;
    std::optional<int> epochs, batch;
    std::optional<double> lr;
    std::optional<std::string> class_weights;
    std::optional<double> threshold;
};

void add_window_flags(CLI::App* cmd, ModuleFlags& f) {
    cmd->add_option("--window-sec", f.window_sec, "Window length in seconds");
    cmd->add_option("--overlap-sec", f.overlap_sec, "Window overlap in seconds");
}

void add_flow_flags(CLI::App* cmd, ModuleFlags& f) {
    cmd->add_option("--flow-alpha", f.flow_alpha, "Horn-Schunck smoothness weight");
    cmd->add_option("--flow-iters", f.flow_iters, "Horn-Schunck iteration cap");
    cmd->add_option("--flow-tol", f.flow_tol, "Horn-Schunck convergence tolerance");
    cmd->add_option("--flow-sigma", f.flow_sigma, "Gaussian pre-smoothing sigma");
}

void add_train_flags(CLI::App* cmd, ModuleFlags& f) {
    cmd->add_option("--epochs", f.epochs, "Training epochs");
    cmd->add_option("--lr", f.lr, "Adam learning rate");
    cmd->add_option("--batch", f.batch, "Mini-batch size");
    cmd->add_option("--class-weights", f.class_weights, "none | inverse | w0,w1");
}

PipelineConfig resolve_config(const GlobalFlags& g, const ModuleFlags& f) {
    PipelineConfig c = g.config ? load_config(*g.config) : PipelineConfig{};
    if (g.seed) {
        c.seed = *g.seed;
        c.train.seed = *g.seed;
        c.synth.seed = *g.seed;
    }
    if (g.jobs) c.jobs = *g.jobs;
    if (f.window_sec) c.window.window_seconds = *f.window_sec;
    if (f.overlap_sec) c.window.overlap_seconds = *f.overlap_sec;
    if (f.flow_alpha) c.flow.alpha = *f.flow_alpha;
    if (f.flow_iters) c.flow.iterations = *f.flow_iters;
    if (f.flow_tol) c.flow.tolerance = *f.flow_tol;
    if (f.flow_sigma) c.flow.sigma = *f.flow_sigma;
    if (f.epochs) c.train.epochs = *f.epochs;
    if (f.batch) c.train.batch_size = *f.batch;
    if (f.lr) c.adam.learning_rate = *f.lr;
    if (f.class_weights) {
        const auto& w = *f.class_weights;
        c.train.class_weights.reset();
        c.train.inverse_frequency_weights = false;
        if (w == "inverse") {
            c.train.inverse_frequency_weights = true;
        } else if (w != "none") {
            const auto comma = w.find(',');
            if (comma == std::string::npos) throw CLI::ValidationError("--class-weights", "expected none, inverse or w0,w1");
            const auto parse = [](const std::string& text) {
                std::size_t used = 0;
                double v = 0.0;
                try {
                    v = std::stod(text, &used);
                } catch (const std::exception&) {
                    used = 0;
                }
                if (used == 0 || used != text.size())
                    throw CLI::ValidationError("--class-weights", "expected none, inverse or w0,w1");
                return v;
            };
            c.train.class_weights = ClassWeights{parse(w.substr(0, comma)), parse(w.substr(comma + 1))};
        }
    }
    if (f.threshold) c.threshold = *f.threshold;
    c.synth.window_seconds = c.window.window_seconds;
    c.validate();
    return c;
}

EvalConfig eval_config(const PipelineConfig& c) {
    EvalConfig e;
    e.adam = c.adam;
    e.train = c.train;
    e.hidden = c.hidden;
    e.model_seed = c.seed;
    e.threshold = c.threshold;
    e.jobs = c.jobs;
    return e;
}

HttpService* g_server = nullptr;

extern "C" void on_signal(int) {
    if (g_server) g_server->stop();
}

std::vector<GroundTruthEntry> manifest_ground_truth(const fs::path& manifest) {
    return load_ground_truth(load_manifest(manifest).ground_truth_file);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write file: " + path.string());
    out << text;
}

int cmd_synth(const PipelineConfig& c, const fs::path& out) {
    const auto manifest = write_synthetic(out, c.synth);
    std::cerr << "synth: wrote " << manifest.videos.size() << " videos to " << out.string() << '\n';
    return 0;
}

int cmd_preprocess(const PipelineConfig& c, const fs::path& manifest_path, const fs::path& out) {
    const auto manifest = load_manifest(manifest_path);
    fs::create_directories(out);
    parallel_for(manifest.videos.size(), c.jobs, [&](std::size_t i) {
        const auto& v = manifest.videos[i];
        const auto seq = load_frames(v);
        const auto marks = load_landmarks(v.landmark_file, v.video_id);
        const auto windows = prepare_windows(seq, marks, c.window, c.roi);
        nlohmann::json doc = {{"video_id", v.video_id},
                              {"subject_id", v.subject_id},
                              {"fps", v.fps},
                              {"frame_count", seq.frame_count()},
                              {"windows", describe_windows(windows)}};
        write_text(out / (v.video_id + ".windows.json"), doc.dump(2) + "\n");
    });
    std::cerr << "preprocess: " << manifest.videos.size() << " videos\n";
    return 0;
}

int cmd_extract(const PipelineConfig& c, const fs::path& manifest_path, const fs::path& out) {
    const auto manifest = load_manifest(manifest_path);
    const auto videos = extract_manifest_features(manifest, c, out);
    std::size_t windows = 0;
    for (const auto& v : videos) windows += v.sequences.size();
    write_text(out / "config.json", to_json(c).dump(2) + "\n");
    std::cerr << "extract-features: " << videos.size() << " videos, " << windows << " windows\n";
    return 0;
}

int cmd_train(const PipelineConfig& c, const fs::path& features_dir, const fs::path& manifest_path,
              const fs::path& out) {
    const auto videos = load_feature_dir(features_dir);
    const auto gt = manifest_ground_truth(manifest_path);
    std::vector<const VideoFeatures*> refs;
    for (const auto& v : videos) refs.push_back(&v);
    const auto samples = training_samples(refs, gt);
    LstmModel model = LstmModel::initialize(static_cast<int>(videos.front().dims), c.hidden, c.seed);
    const auto result = train(model, samples, c.adam, c.train);
    nlohmann::json meta = to_json(c);
    meta["loss_history"] = result.loss_history;
    meta["class_weights"] = {result.class_weights[0], result.class_weights[1]};
    meta["train_windows"] = samples.size();
    save_checkpoint(out, model, meta);
    std::cerr << "train: " << samples.size() << " windows, final loss " << result.loss_history.back() << '\n';
    return 0;
}

int cmd_spot(const PipelineConfig& c, const fs::path& features_dir, const fs::path& model_path,
             const fs::path& out) {
    const auto videos = load_feature_dir(features_dir);
    const auto model = load_checkpoint(model_path);
    const auto rows = spot_videos(videos, model, c.threshold);
    write_detections(out, rows);
    std::size_t kept = 0;
    for (const auto& r : rows) kept += r.kept ? 1 : 0;
    std::cerr << "spot: " << rows.size() << " above threshold, " << kept << " kept\n";
    return 0;
}

int cmd_evaluate(const PipelineConfig& c, const fs::path& features_dir, const fs::path& manifest_path,
                 const fs::path& out) {
    const auto videos = load_feature_dir(features_dir);
    const auto gt = manifest_ground_truth(manifest_path);
    const auto report = run_loso_evaluation(videos, gt, eval_config(c));
    write_report(out, report);
    std::cerr << "evaluate: TP " << report.tp << " FP " << report.fp << " FN " << report.fn << " recall "
              << report.summary.recall << " precision " << report.summary.precision << " F1 " << report.summary.f1
              << " AUC " << report.roc_auc << '\n';
    return 0;
}

struct ServeFlags {
    fs::path manifest, features, detections;
    std::optional<fs::path> model;
    std::optional<int> port;
    std::optional<fs::path> data_dir;
    std::string host = "127.0.0.1";
};

int cmd_serve(PipelineConfig c, const ServeFlags& f) {
    if (const char* env = std::getenv("MICROSPOT_PORT"); env && !f.port) {
        try {
            c.port = std::stoi(env);
        } catch (const std::exception&) {
            throw ValidationError(std::string("MICROSPOT_PORT is not a number: ") + env);
        }
    }
    if (f.port) c.port = *f.port;
    fs::path data_dir = "microspot-data";
    if (const char* env = std::getenv("MICROSPOT_DATA_DIR")) data_dir = env;
    if (f.data_dir) data_dir = *f.data_dir;
    c.validate();

    ReviewStore store(load_service_inputs(f.manifest, f.features, f.detections, f.model), {data_dir, c});
    HttpService server(store);
    const int port = server.bind(f.host, c.port);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "serve: listening on http://" << f.host << ':' << port << " (state in " << data_dir.string()
              << ")" << std::endl;
    server.listen();
    g_server = nullptr;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Micro-movement spotting toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalFlags g;
    app.add_option("--config", g.config, "Pipeline config JSON")->check(CLI::ExistingFile);
    app.add_option("--jobs", g.jobs, "Maximum worker threads")->check(CLI::PositiveNumber);
    app.add_option("--seed", g.seed, "Seed for data generation, shuffling and initialization");

    ModuleFlags mf;
    fs::path out, manifest, features, model_path, detections;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--out", out, "Output directory")->required();
    add_window_flags(synth, mf);
    std::optional<int> n_subjects, n_videos, n_frames, n_moves;
    std::optional<double> amplitude, noise;
    synth->add_option("--subjects", n_subjects, "Number of subjects");
    synth->add_option("--videos", n_videos, "Number of videos");
    synth->add_option("--frames", n_frames, "Frames per video");
    synth->add_option("--movements", n_moves, "Planted movements per video");
    synth->add_option("--amplitude", amplitude, "Peak displacement in pixels");
    synth->add_option("--noise", noise, "Pixel noise standard deviation");

    auto* prep = app.add_subcommand("preprocess", "Write window, alignment and ROI descriptions");
    prep->add_option("--manifest", manifest, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
    prep->add_option("--out", out, "Output directory")->required();
    add_window_flags(prep, mf);

    auto* extract = app.add_subcommand("extract-features", "Compute HOOF sequences for every window");
    extract->add_option("--manifest", manifest, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
    extract->add_option("--out", out, "Feature cache directory")->required();
    add_window_flags(extract, mf);
    add_flow_flags(extract, mf);

    auto* train_cmd = app.add_subcommand("train", "Train a model on every cached video");
    train_cmd->add_option("--features", features, "Feature cache directory")->required();
    train_cmd->add_option("--manifest", manifest, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--out", out, "Checkpoint path")->required();
    add_train_flags(train_cmd, mf);

    auto* spot_cmd = app.add_subcommand("spot", "Score, threshold and suppress windows");
    spot_cmd->add_option("--features", features, "Feature cache directory")->required();
    spot_cmd->add_option("--model", model_path, "Checkpoint path")->required()->check(CLI::ExistingFile);
    spot_cmd->add_option("--out", out, "Detections CSV")->required();
    spot_cmd->add_option("--threshold", mf.threshold, "Confidence threshold");

    auto* eval_cmd = app.add_subcommand("evaluate", "Leave-one-subject-out evaluation");
    eval_cmd->add_option("--features", features, "Feature cache directory")->required();
    eval_cmd->add_option("--manifest", manifest, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", out, "Report directory")->required();
    eval_cmd->add_option("--threshold", mf.threshold, "Confidence threshold");
    add_train_flags(eval_cmd, mf);

    ServeFlags sf;
    auto* serve = app.add_subcommand("serve", "Run the review HTTP service");
    serve->add_option("--manifest", sf.manifest, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
    serve->add_option("--features", sf.features, "Feature cache directory")->required();
    serve->add_option("--detections", sf.detections, "Detections CSV")->required()->check(CLI::ExistingFile);
    serve->add_option("--model", sf.model, "Initial checkpoint")->check(CLI::ExistingFile);
    serve->add_option("--port", sf.port, "Port (env MICROSPOT_PORT)");
    serve->add_option("--data-dir", sf.data_dir, "State directory (env MICROSPOT_DATA_DIR)");
    serve->add_option("--host", sf.host, "Bind address");
    add_train_flags(serve, mf);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        PipelineConfig c = resolve_config(g, mf);
        if (synth->parsed()) {
            if (n_subjects) c.synth.n_subjects = *n_subjects;
            if (n_videos) c.synth.n_videos = *n_videos;
            if (n_frames) c.synth.frames_per_video = *n_frames;
            if (n_moves) c.synth.n_movements = *n_moves;
            if (amplitude) c.synth.amplitude = *amplitude;
            if (noise) c.synth.noise_std = *noise;
            return cmd_synth(c, out);
        }
        if (prep->parsed()) return cmd_preprocess(c, manifest, out);
        if (extract->parsed()) return cmd_extract(c, manifest, out);
        if (train_cmd->parsed()) return cmd_train(c, features, manifest, out);
        if (spot_cmd->parsed()) return cmd_spot(c, features, model_path, out);
        if (eval_cmd->parsed()) return cmd_evaluate(c, features, manifest, out);
        if (serve->parsed()) return cmd_serve(c, sf);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
