#include "microspot/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "microspot/binio.hpp"
#include "microspot/errors.hpp"
#include "microspot/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace microspot {

void PipelineConfig::validate() const {
    resolve_windows(window, 200.0);
    if (!(roi.brow_margin >= 0.0) || !(roi.mouth_box > 0.0)) throw ValidationError("config: invalid ROI params");
    flow.validate();
    hoof.validate();
    adam.validate();
    train.validate();
    if (hidden < 1) throw ValidationError("config: hidden size must be >= 1");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("config: threshold must lie in [0,1]");
    if (jobs < 1) throw ValidationError("config: jobs must be >= 1");
    if (port < 0 || port > 65535) throw ValidationError("config: port out of range");
    if (!(negative_feedback_weight >= 0.0)) throw ValidationError("config: feedback weight must be >= 0");
}

namespace {

template <typename T>
void read_into(const json& obj, const char* key, T& target) {
    if (obj.contains(key)) target = obj.at(key).get<T>();
}

} // namespace

PipelineConfig config_from_json(const json& doc) {
    PipelineConfig c;
    try {
        if (doc.contains("window")) {
            const auto& w = doc["window"];
            read_into(w, "window_seconds", c.window.window_seconds);
            read_into(w, "overlap_seconds", c.window.overlap_seconds);
        }
        if (doc.contains("roi")) {
            read_into(doc["roi"], "brow_margin", c.roi.brow_margin);
            read_into(doc["roi"], "mouth_box", c.roi.mouth_box);
        }
        if (doc.contains("flow")) {
            const auto& f = doc["flow"];
            read_into(f, "rate_seconds", c.flow.rate_seconds);
            read_into(f, "alpha", c.flow.alpha);
            read_into(f, "iterations", c.flow.iterations);
            read_into(f, "tolerance", c.flow.tolerance);
            read_into(f, "sigma", c.flow.sigma);
        }
        if (doc.contains("hoof")) {
            read_into(doc["hoof"], "bins", c.hoof.bins);
            read_into(doc["hoof"], "min_magnitude", c.hoof.min_magnitude);
        }
        if (doc.contains("network")) {
            const auto& n = doc["network"];
            read_into(n, "hidden", c.hidden);
            read_into(n, "learning_rate", c.adam.learning_rate);
            read_into(n, "decay", c.adam.decay);
            read_into(n, "beta1", c.adam.beta1);
            read_into(n, "beta2", c.adam.beta2);
            read_into(n, "epsilon", c.adam.epsilon);
            read_into(n, "epochs", c.train.epochs);
            read_into(n, "batch_size", c.train.batch_size);
            read_into(n, "inverse_frequency_weights", c.train.inverse_frequency_weights);
            if (n.contains("class_weights")) {
                const auto w = n["class_weights"].get<std::vector<double>>();
                if (w.size() != 2) throw ValidationError("config: class_weights needs 2 values");
                c.train.class_weights = ClassWeights{w[0], w[1]};
            }
        }
        if (doc.contains("eval")) read_into(doc["eval"], "threshold", c.threshold);
        if (doc.contains("service")) {
            read_into(doc["service"], "port", c.port);
            read_into(doc["service"], "negative_feedback_weight", c.negative_feedback_weight);
        }
        if (doc.contains("synth")) {
            const auto& s = doc["synth"];
            read_into(s, "n_subjects", c.synth.n_subjects);
            read_into(s, "n_videos", c.synth.n_videos);
            read_into(s, "frames_per_video", c.synth.frames_per_video);
            read_into(s, "fps", c.synth.fps);
            read_into(s, "width", c.synth.width);
            read_into(s, "height", c.synth.height);
            read_into(s, "n_movements", c.synth.n_movements);
            read_into(s, "amplitude", c.synth.amplitude);
            read_into(s, "duration_min", c.synth.duration_min);
            read_into(s, "duration_max", c.synth.duration_max);
            read_into(s, "noise_std", c.synth.noise_std);
        }
        read_into(doc, "seed", c.seed);
        read_into(doc, "jobs", c.jobs);
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    c.train.seed = c.seed;
    c.synth.seed = c.seed;
    c.synth.window_seconds = c.window.window_seconds;
    c.validate();
    return c;
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open config: " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError("config " + path.string() + ": " + e.what());
    }
    return config_from_json(doc);
}

json to_json(const PipelineConfig& c) {
    json doc;
    doc["window"] = {{"window_seconds", c.window.window_seconds}, {"overlap_seconds", c.window.overlap_seconds}};
    doc["roi"] = {{"brow_margin", c.roi.brow_margin}, {"mouth_box", c.roi.mouth_box}};
    doc["flow"] = {{"rate_seconds", c.flow.rate_seconds}, {"alpha", c.flow.alpha},
                   {"iterations", c.flow.iterations}, {"tolerance", c.flow.tolerance},
                   {"sigma", c.flow.sigma}};
    doc["hoof"] = {{"bins", c.hoof.bins}, {"min_magnitude", c.hoof.min_magnitude}};
    doc["network"] = {{"hidden", c.hidden}, {"learning_rate", c.adam.learning_rate},
                      {"decay", c.adam.decay}, {"beta1", c.adam.beta1},
                      {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon},
                      {"epochs", c.train.epochs}, {"batch_size", c.train.batch_size},
                      {"inverse_frequency_weights", c.train.inverse_frequency_weights}};
    if (c.train.class_weights) {
        doc["network"]["class_weights"] = {(*c.train.class_weights)[0], (*c.train.class_weights)[1]};
    }
    doc["eval"] = {{"threshold", c.threshold}};
    doc["service"] = {{"port", c.port}, {"negative_feedback_weight", c.negative_feedback_weight}};
    doc["synth"] = {{"n_subjects", c.synth.n_subjects}, {"n_videos", c.synth.n_videos},
                    {"frames_per_video", c.synth.frames_per_video}, {"fps", c.synth.fps},
                    {"width", c.synth.width}, {"height", c.synth.height},
                    {"n_movements", c.synth.n_movements}, {"amplitude", c.synth.amplitude},
                    {"duration_min", c.synth.duration_min}, {"duration_max", c.synth.duration_max},
                    {"noise_std", c.synth.noise_std}};
    doc["seed"] = c.seed;
    doc["jobs"] = c.jobs;
    return doc;
}

std::string format_number(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

std::uint64_t feature_params_hash(const PipelineConfig& c) {
    std::ostringstream key;
    key << "w=" << format_number(c.window.window_seconds) << ',' << format_number(c.window.overlap_seconds)
        << ";roi=" << format_number(c.roi.brow_margin) << ',' << format_number(c.roi.mouth_box)
        << ";flow=" << format_number(c.flow.rate_seconds) << ',' << format_number(c.flow.alpha) << ','
        << c.flow.iterations << ',' << format_number(c.flow.tolerance) << ',' << format_number(c.flow.sigma)
        << ";hoof=" << c.hoof.bins << ',' << format_number(c.hoof.min_magnitude);
    return binio::fnv1a(key.str());
}

namespace {

// Flow fields keyed by frame pair and alignment angle.
class FlowCache {
public:
    const FlowField& get(std::int64_t a, std::int64_t b, const AlignmentTransform& t,
                         const std::vector<Image>& aligned, std::int64_t offset, const FlowEstimator& estimator) {
        std::uint64_t angle_bits;
        std::memcpy(&angle_bits, &t.angle, sizeof angle_bits);
        Key key{a, b, angle_bits, t.center.x, t.center.y};
        auto it = cache_.find(key);
        if (it == cache_.end()) {
            it = cache_.emplace(key, estimator.estimate(aligned[static_cast<std::size_t>(a - offset)],
                                                        aligned[static_cast<std::size_t>(b - offset)]))
                     .first;
        }
        return it->second;
    }

    void evict_before(std::int64_t frame) {
        for (auto it = cache_.begin(); it != cache_.end();) {
            it = std::get<0>(it->first) < frame ? cache_.erase(it) : std::next(it);
        }
    }

private:
    using Key = std::tuple<std::int64_t, std::int64_t, std::uint64_t, double, double>;
    std::map<Key, FlowField> cache_;
};

} // namespace

VideoFeatures extract_video_features(const FrameSequence& sequence, const LandmarkSet& landmarks,
                                     const PipelineConfig& config) {
    sequence.validate();
    const auto prepared = prepare_windows(sequence, landmarks, config.window, config.roi);
    const HornSchunckFlow estimator(config.flow);

    VideoFeatures out;
    out.video_id = sequence.video_id;
    out.subject_id = sequence.subject_id;
    out.fps = sequence.fps;
    out.frame_count = sequence.frame_count();
    out.geometry = resolve_windows(config.window, sequence.fps);
    out.rate = config.flow.rate_frames(sequence.fps);
    out.timesteps = timesteps_for(out.geometry.length, out.rate);
    out.dims = kRoiCount * config.hoof.bins;
    out.params_hash = feature_params_hash(config);

    FlowCache cache;
    for (const auto& p : prepared) {
        cache.evict_before(p.window.start);
        const std::span<const Image> raw(sequence.frames.data() + p.window.start,
                                         static_cast<std::size_t>(p.window.end - p.window.start));
        // Only the frames that take part in a flow pair are aligned.
        const auto pairs = flow_pairs_for_window(p.window, out.rate);
        std::vector<Image> aligned(raw.size());
        for (const auto& [a, b] : pairs) {
            for (auto f : {a, b}) {
                auto& slot = aligned[static_cast<std::size_t>(f - p.window.start)];
                if (slot.pixels.empty()) slot = apply_alignment(raw[static_cast<std::size_t>(f - p.window.start)], p.transform);
            }
        }
        HoofSequence seq;
        seq.window = p.window;
        seq.timesteps = static_cast<std::int64_t>(pairs.size());
        seq.dims = out.dims;
        for (const auto& [a, b] : pairs) {
            const auto& flow = cache.get(a, b, p.transform, aligned, p.window.start, estimator);
            const auto row = timestep_features(flow, p.rois, config.hoof);
            seq.values.insert(seq.values.end(), row.begin(), row.end());
        }
        out.sequences.push_back(std::move(seq));
    }
    return out;
}

std::vector<VideoFeatures> extract_manifest_features(const DatasetManifest& manifest, const PipelineConfig& config,
                                                     const fs::path& out_dir) {
    fs::create_directories(out_dir);
    const auto ground_truth = load_ground_truth(manifest.ground_truth_file);
    std::vector<VideoFeatures> results(manifest.videos.size());
    std::vector<std::int64_t> frame_counts(manifest.videos.size());
    parallel_for(manifest.videos.size(), config.jobs, [&](std::size_t i) {
        const auto& video = manifest.videos[i];
        const auto landmarks = load_landmarks(video.landmark_file, video.video_id);
        const auto sequence = load_frames(video);
        frame_counts[i] = sequence.frame_count();
        results[i] = extract_video_features(sequence, landmarks, config);
        write_features(out_dir / (video.video_id + ".feat"), results[i]);
    });
    std::map<std::string, std::int64_t> counts;
    for (std::size_t i = 0; i < manifest.videos.size(); ++i) counts[manifest.videos[i].video_id] = frame_counts[i];
    validate_ground_truth(ground_truth, counts);
    return results;
}

std::vector<VideoFeatures> load_feature_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw LoadError("feature directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".feat") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw LoadError("no .feat files in " + dir.string());
    std::vector<VideoFeatures> out;
    for (const auto& f : files) out.push_back(read_features(f));
    for (const auto& v : out) {
        if (v.params_hash != out.front().params_hash || v.dims != out.front().dims ||
            v.timesteps != out.front().timesteps) {
            throw ConsistencyError("feature caches in " + dir.string() + " were built with different parameters");
        }
    }
    return out;
}

json describe_windows(const std::vector<PreparedWindow>& windows) {
    json list = json::array();
    for (const auto& p : windows) {
        json rois = json::array();
        for (const auto& region : p.rois.regions) {
            json boxes = json::array();
            for (const auto& b : region.boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
            rois.push_back(boxes);
        }
        list.push_back({{"index", p.window.index},
                        {"start", p.window.start},
                        {"end", p.window.end},
                        {"angle", p.transform.angle},
                        {"center", {p.transform.center.x, p.transform.center.y}},
                        {"rois", rois}});
    }
    return list;
}

void write_detections(const fs::path& path, const std::vector<DetectionRow>& rows) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write file: " + path.string());
    out << "video,start,end,confidence,kept\n";
    for (const auto& r : rows) {
        out << r.detection.window.video_id << ',' << r.detection.window.start << ',' << r.detection.window.end << ','
            << format_number(r.detection.confidence) << ',' << (r.kept ? 1 : 0) << '\n';
    }
}

std::vector<DetectionRow> read_detections(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open detections: " + path.string());
    std::vector<DetectionRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line_no == 1) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 5) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 5 columns");
        DetectionRow r;
        try {
            r.detection.window.video_id = f[0];
            r.detection.window.start = std::stoll(f[1]);
            r.detection.window.end = std::stoll(f[2]);
            r.detection.confidence = std::stod(f[3]);
            r.kept = f[4] == "1";
        } catch (const std::exception&) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<DetectionRow> spot_videos(const std::vector<VideoFeatures>& videos, const LstmModel& model,
                                      double threshold) {
    std::vector<DetectionRow> rows;
    for (const auto& video : videos) {
        const auto detections = spot(video, model, threshold);
        const auto kept = nms(detections);
        for (const auto& d : detections) {
            const bool is_kept = std::any_of(kept.begin(), kept.end(),
                                             [&](const Detection& k) { return k.window.start == d.window.start; });
            rows.push_back({d, is_kept});
        }
    }
    return rows;
}

} // namespace microspot
