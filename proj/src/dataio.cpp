#include "microspot/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "microspot/errors.hpp"
#include "microspot/imageio.hpp"
#include "microspot/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace microspot {

// ---------------------------------------------------------------------------
// Domain types

void FrameSequence::validate() const {
    if (!(fps > 0.0) || !std::isfinite(fps)) {
        throw ValidationError("video " + video_id + ": fps must be positive");
    }
    if (frames.empty()) throw ValidationError("video " + video_id + ": no frames");
    for (const auto& frame : frames) {
        if (!frame.same_dims(frames.front())) {
            throw ValidationError("video " + video_id + ": frames differ in size");
        }
        for (float v : frame.pixels) {
            if (!(v >= 0.0f && v <= 1.0f)) {
                throw ValidationError("video " + video_id + ": intensity outside [0,1]");
            }
        }
    }
}

const Landmarks& LandmarkSet::for_frame(std::int64_t frame) const {
    if (is_static()) return frames.begin()->second;
    const auto it = frames.find(frame);
    if (it == frames.end()) {
        throw ValidationError("video " + video_id + ": no landmarks for frame " +
                              std::to_string(frame));
    }
    return it->second;
}

const ManifestVideo& DatasetManifest::video(const std::string& video_id) const {
    for (const auto& v : videos) {
        if (v.video_id == video_id) return v;
    }
    throw NotFoundError("unknown video: " + video_id);
}

void SyntheticSpec::validate() const {
    if (n_subjects < 1 || n_videos < 1 || frames_per_video < 1 || n_movements < 0 ||
        width < 16 || height < 16) {
        throw ValidationError("synthetic spec: counts must be positive");
    }
    if (!(fps > 0.0)) throw ValidationError("synthetic spec: fps must be positive");
    if (!(amplitude >= 0.0) || !(noise_std >= 0.0)) {
        throw ValidationError("synthetic spec: amplitude and noise must be nonnegative");
    }
    const auto window_len = static_cast<int>(std::lround(window_seconds * fps));
    if (duration_min < 1 || duration_max < duration_min || duration_max > window_len) {
        throw ValidationError("synthetic spec: movement duration range must lie within [1, " +
                              std::to_string(window_len) + "]");
    }
    if (region && (*region < 0 || *region > 2)) {
        throw ValidationError("synthetic spec: region index must be 0..2");
    }
}

// ---------------------------------------------------------------------------
// CSV helpers

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string current;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(current);
            current.clear();
        } else if (c != '\r') {
            current.push_back(c);
        }
    }
    fields.push_back(current);
    return fields;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

std::int64_t parse_int(const std::string& text, const std::string& where) {
    const auto t = trim(text);
    std::int64_t value = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc() || ptr != t.data() + t.size()) {
        throw FormatError(where + ": expected integer, got '" + text + "'");
    }
    return value;
}

double parse_double(const std::string& text, const std::string& where) {
    const auto t = trim(text);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc() || ptr != t.data() + t.size()) {
        throw FormatError(where + ": expected number, got '" + text + "'");
    }
    return value;
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open file: " + path.string());
    return in;
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write file: " + path.string());
    return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::string relative_to(const fs::path& base, const fs::path& p) {
    const auto rel = p.lexically_relative(base);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.generic_string();
}

bool is_image_file(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".pgm" || ext == ".ppm";
}

} // namespace

// ---------------------------------------------------------------------------
// Manifest

DatasetManifest load_manifest(const fs::path& path) {
    auto in = open_input(path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    const fs::path base = path.parent_path();
    DatasetManifest manifest;
    try {
        manifest.ground_truth_file = resolve(base, doc.at("ground_truth").get<std::string>());
        std::set<std::string> seen;
        for (const auto& v : doc.at("videos")) {
            ManifestVideo video;
            video.video_id = v.at("video_id").get<std::string>();
            video.subject_id = v.at("subject_id").get<std::string>();
            video.frame_dir = resolve(base, v.at("frames").get<std::string>());
            video.fps = v.at("fps").get<double>();
            video.landmark_file = resolve(base, v.at("landmarks").get<std::string>());
            if (!seen.insert(video.video_id).second) {
                throw ValidationError("manifest: duplicate video_id " + video.video_id);
            }
            if (!(video.fps > 0.0)) {
                throw ValidationError("manifest: video " + video.video_id + " has non-positive fps");
            }
            manifest.videos.push_back(std::move(video));
        }
    } catch (const json::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    return manifest;
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
    const fs::path base = path.parent_path();
    json doc;
    doc["ground_truth"] = relative_to(base, manifest.ground_truth_file);
    doc["videos"] = json::array();
    for (const auto& v : manifest.videos) {
        doc["videos"].push_back({{"video_id", v.video_id},
                                 {"subject_id", v.subject_id},
                                 {"frames", relative_to(base, v.frame_dir)},
                                 {"fps", v.fps},
                                 {"landmarks", relative_to(base, v.landmark_file)}});
    }
    auto out = open_output(path);
    out << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Loading

std::vector<fs::path> list_frame_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw LoadError("frame directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

FrameSequence load_frames(const ManifestVideo& video) {
    const auto files = list_frame_files(video.frame_dir);
    FrameSequence seq;
    seq.video_id = video.video_id;
    seq.subject_id = video.subject_id;
    seq.fps = video.fps;
    seq.frames.reserve(files.size());
    for (const auto& f : files) seq.frames.push_back(imageio::read_image(f));
    if (seq.frames.empty()) {
        throw LoadError("no frames in directory: " + video.frame_dir.string());
    }
    seq.validate();
    return seq;
}

LandmarkSet load_landmarks(const fs::path& path, const std::string& video_id) {
    if (!fs::exists(path)) throw LoadError("landmark file not found: " + path.string());
    auto in = open_input(path);
    LandmarkSet set;
    set.video_id = video_id;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_csv(line);
        if (line_no == 1 && trim(fields.front()) == "frame") continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (fields.size() != 1 + 2 * kLandmarkCount) {
            throw FormatError(where + ": expected 68 landmarks (" +
                              std::to_string(1 + 2 * kLandmarkCount) + " columns), got " +
                              std::to_string(fields.size()) + " columns");
        }
        const auto frame = parse_int(fields[0], where);
        Landmarks points{};
        for (int i = 0; i < kLandmarkCount; ++i) {
            points[i].x = parse_double(fields[1 + 2 * i], where);
            points[i].y = parse_double(fields[2 + 2 * i], where);
            if (!std::isfinite(points[i].x) || !std::isfinite(points[i].y)) {
                throw ValidationError(where + ": non-finite landmark coordinate");
            }
        }
        if (frame < 0 || !set.frames.emplace(frame, points).second) {
            throw FormatError(where + ": invalid or duplicate frame index");
        }
    }
    if (set.frames.empty()) throw FormatError(path.string() + ": no landmark rows");
    return set;
}

std::vector<GroundTruthEntry> load_ground_truth(const fs::path& path) {
    if (!fs::exists(path)) throw LoadError("ground-truth file not found: " + path.string());
    auto in = open_input(path);
    std::vector<GroundTruthEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split_csv(line);
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (line_no == 1) {
            if (fields.size() < 6 || trim(fields[0]) != "subject") {
                throw FormatError(where + ": expected header subject,video,onset,apex,offset,au");
            }
            continue;
        }
        if (fields.size() < 6) throw FormatError(where + ": expected 6 columns");
        GroundTruthEntry e;
        e.subject_id = trim(fields[0]);
        e.video_id = trim(fields[1]);
        e.onset = parse_int(fields[2], where);
        e.apex = parse_int(fields[3], where);
        e.offset = parse_int(fields[4], where);
        // AU codes are opaque and the last column, so stray commas are kept.
        std::string au = fields[5];
        for (std::size_t i = 6; i < fields.size(); ++i) au += "," + fields[i];
        e.au_codes = trim(au);
        if (e.onset < 1) throw ValidationError(where + ": onset must be >= 1");
        if (e.onset > e.offset) throw ValidationError(where + ": onset > offset");
        if (e.apex < e.onset || e.apex > e.offset) {
            throw ValidationError(where + ": apex outside [onset, offset]");
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

void validate_ground_truth(const std::vector<GroundTruthEntry>& entries,
                           const std::map<std::string, std::int64_t>& frame_counts) {
    for (const auto& e : entries) {
        const auto it = frame_counts.find(e.video_id);
        if (it == frame_counts.end()) {
            throw ConsistencyError("ground truth references unknown video " + e.video_id);
        }
        if (e.offset > it->second) {
            throw ValidationError("ground truth for " + e.video_id + ": offset " +
                                  std::to_string(e.offset) + " exceeds frame count " +
                                  std::to_string(it->second));
        }
    }
}

Dataset load_dataset(const DatasetManifest& manifest) {
    Dataset dataset;
    for (const auto& video : manifest.videos) {
        if (!fs::exists(video.landmark_file)) {
            throw LoadError("landmark file not found: " + video.landmark_file.string());
        }
    }
    dataset.ground_truth = load_ground_truth(manifest.ground_truth_file);
    std::map<std::string, std::int64_t> counts;
    for (const auto& video : manifest.videos) {
        auto seq = load_frames(video);
        auto marks = load_landmarks(video.landmark_file, video.video_id);
        for (const auto& [frame, _] : marks.frames) {
            if (frame >= seq.frame_count()) {
                throw ValidationError(video.landmark_file.string() + ": frame " +
                                      std::to_string(frame) + " beyond video length");
            }
        }
        counts[video.video_id] = seq.frame_count();
        dataset.sequences.push_back(std::move(seq));
        dataset.landmarks.push_back(std::move(marks));
    }
    validate_ground_truth(dataset.ground_truth, counts);
    return dataset;
}

// ---------------------------------------------------------------------------
// Writing

void write_landmarks(const fs::path& path, const LandmarkSet& landmarks) {
    auto out = open_output(path);
    out << "frame";
    for (int i = 0; i < kLandmarkCount; ++i) out << ",x" << i << ",y" << i;
    out << '\n';
    for (const auto& [frame, points] : landmarks.frames) {
        out << frame;
        for (const auto& p : points) out << ',' << format_double(p.x) << ',' << format_double(p.y);
        out << '\n';
    }
}

void write_ground_truth(const fs::path& path, const std::vector<GroundTruthEntry>& entries) {
    auto out = open_output(path);
    out << "subject,video,onset,apex,offset,au\n";
    for (const auto& e : entries) {
        out << e.subject_id << ',' << e.video_id << ',' << e.onset << ',' << e.apex << ','
            << e.offset << ',' << e.au_codes << '\n';
    }
}

void write_frames(const fs::path& dir, const FrameSequence& sequence) {
    fs::create_directories(dir);
    char name[32];
    for (std::size_t i = 0; i < sequence.frames.size(); ++i) {
        std::snprintf(name, sizeof(name), "%06zu.png", i);
        imageio::write_png16(dir / name, sequence.frames[i]);
    }
}

namespace {

ManifestVideo write_video(const fs::path& root, const FrameSequence& seq, const LandmarkSet& marks) {
    ManifestVideo v;
    v.video_id = seq.video_id;
    v.subject_id = seq.subject_id;
    v.fps = seq.fps;
    v.frame_dir = root / "frames" / seq.video_id;
    v.landmark_file = root / "landmarks" / (seq.video_id + ".csv");
    write_frames(v.frame_dir, seq);
    write_landmarks(v.landmark_file, marks);
    return v;
}

} // namespace

DatasetManifest write_dataset(const fs::path& root, const Dataset& dataset) {
    DatasetManifest manifest;
    manifest.ground_truth_file = root / "ground_truth.csv";
    for (std::size_t i = 0; i < dataset.sequences.size(); ++i) {
        manifest.videos.push_back(write_video(root, dataset.sequences[i], dataset.landmarks.at(i)));
    }
    write_ground_truth(manifest.ground_truth_file, dataset.ground_truth);
    save_manifest(root / "manifest.json", manifest);
    return manifest;
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double segment_distance(Point2 p, Point2 a, Point2 b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
    return std::sqrt(ex * ex + ey * ey);
}

double polyline_distance(Point2 p, const Landmarks& lm, int first, int last) {
    double best = 1e300;
    for (int i = first; i < last; ++i) best = std::min(best, segment_distance(p, lm[i], lm[i + 1]));
    return best;
}

struct Wave {
    double kx, ky, phase, amp;
};

// Static face image: shaded ellipse, dark brows/eyes/mouth, band-limited texture.
Image render_face(const SyntheticSpec& spec, const Landmarks& lm, std::uint64_t subject_seed) {
    Rng rng(subject_seed);
    std::vector<Wave> waves;
    const double scale = std::min(spec.width, spec.height) / 128.0;
    for (int k = 0; k < 16; ++k) {
        const double wavelength = rng.uniform(9.0, 28.0) * scale;
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double freq = 2.0 * std::numbers::pi / wavelength;
        waves.push_back({freq * std::cos(angle), freq * std::sin(angle),
                         rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.02, 0.05)});
    }
    const double cx = spec.width * 0.5, cy = spec.height * 0.56;
    const double rx = spec.width * 0.40, ry = spec.height * 0.47;
    const double iod = std::abs(lm[45].x - lm[36].x) * 0.6 + 1e-9;
    const double line_w = std::max(1.0, 2.0 * scale);

    Image img(spec.width, spec.height);
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            const Point2 p{static_cast<double>(x), static_cast<double>(y)};
            const double ex = (x - cx) / rx, ey = (y - cy) / ry;
            const double r = std::sqrt(ex * ex + ey * ey);
            const double inside = 1.0 / (1.0 + std::exp((r - 1.0) * 25.0));
            double v = 0.25 + 0.35 * inside;
            for (const auto& w : waves) v += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);

            auto stroke = [&](double d, double width, double depth) {
                v -= depth * std::exp(-d * d / (2.0 * width * width));
            };
            stroke(polyline_distance(p, lm, 17, 21), line_w, 0.22);
            stroke(polyline_distance(p, lm, 22, 26), line_w, 0.22);
            stroke(polyline_distance(p, lm, 48, 54), line_w * 0.8, 0.18);
            for (int eye = 0; eye < 2; ++eye) {
                const int b = 36 + 6 * eye;
                Point2 c{0, 0};
                for (int i = 0; i < 6; ++i) c = {c.x + lm[b + i].x / 6, c.y + lm[b + i].y / 6};
                const double dx = (x - c.x) / (0.22 * iod), dy = (y - c.y) / (0.09 * iod);
                stroke(std::sqrt(dx * dx + dy * dy), 0.7, 0.25);
            }
            for (int i = 31; i <= 35; i += 4) {
                const double dx = x - lm[i].x, dy = y - lm[i].y;
                stroke(std::sqrt(dx * dx + dy * dy), line_w, 0.12);
            }
            img.at(x, y) = static_cast<float>(v);
        }
    }
    return img;
}

float bilinear(const Image& img, double x, double y) {
    x = std::clamp(x, 0.0, img.width - 1.0);
    y = std::clamp(y, 0.0, img.height - 1.0);
    const int x0 = std::min(static_cast<int>(x), img.width - 2);
    const int y0 = std::min(static_cast<int>(y), img.height - 2);
    const double fx = x - x0, fy = y - y0;
    const double top = img.at(x0, y0) * (1 - fx) + img.at(x0 + 1, y0) * fx;
    const double bottom = img.at(x0, y0 + 1) * (1 - fx) + img.at(x0 + 1, y0 + 1) * fx;
    return static_cast<float>(top * (1 - fy) + bottom * fy);
}

struct PlantedMovement {
    int onset = 0;  // 0-based, inclusive
    int apex = 0;
    int offset = 0;  // 0-based, inclusive
    int region = 0;
    std::vector<Point2> centers;
    std::vector<Point2> directions;
    double amplitude = 0.0;
    double sigma = 1.0;

    double envelope(int t) const {
        if (t < onset || t > offset) return 0.0;
        if (t <= apex) {
            if (apex == onset) return 1.0;
            return 0.5 * (1.0 - std::cos(std::numbers::pi * (t - onset) / (apex - onset)));
        }
        return 0.5 * (1.0 + std::cos(std::numbers::pi * (t - apex) / (offset - apex)));
    }
};

const char* region_au(int region) { return region < 2 ? "AU1+AU2" : "AU12"; }

} // namespace

Landmarks synthetic_landmarks(int width, int height) {
    Landmarks lm{};
    const double sx = width / 128.0, sy = height / 128.0;
    auto set = [&](int i, double x, double y) { lm[i] = {x * sx, y * sy}; };
    // jaw
    for (int i = 0; i <= 16; ++i) {
        const double a = std::numbers::pi * (1.0 - i / 16.0);
        set(i, 64.0 + 46.0 * std::cos(a), 52.0 + 66.0 * std::sin(a));
    }
    // brows
    const double brow_y[5] = {40, 37, 36, 37, 40};
    for (int i = 0; i < 5; ++i) {
        set(17 + i, 30.0 + 6.0 * i, brow_y[i]);
        set(22 + i, 74.0 + 6.0 * i, brow_y[4 - i]);
    }
    // nose bridge and nostrils
    for (int i = 0; i < 4; ++i) set(27 + i, 64.0, 54.0 + 6.0 * i);
    for (int i = 0; i < 5; ++i) set(31 + i, 56.0 + 4.0 * i, 78.0 + (i == 2 ? 1.0 : 0.0));
    // eyes: hexagons around (44,52) and (84,52)
    const double hex_dx[6] = {-8, -4, 4, 8, 4, -4};
    const double hex_dy[6] = {0, -3, -3, 0, 3, 3};
    for (int i = 0; i < 6; ++i) {
        set(36 + i, 44.0 + hex_dx[i], 52.0 + hex_dy[i]);
        set(42 + i, 84.0 + hex_dx[i], 52.0 + hex_dy[i]);
    }
    // mouth outer 48..59, inner 60..67; corners 48 and 54
    for (int i = 0; i < 12; ++i) {
        const double a = std::numbers::pi * (1.0 - i / 6.0);
        set(48 + i, 64.0 + 18.0 * std::cos(a), 96.0 - 5.0 * std::sin(a));
    }
    for (int i = 0; i < 8; ++i) {
        const double a = std::numbers::pi * (1.0 - i / 4.0);
        set(60 + i, 64.0 + 12.0 * std::cos(a), 96.0 - 2.0 * std::sin(a));
    }
    return lm;
}

Dataset generate_synthetic_video(const SyntheticSpec& spec, int index) {
    spec.validate();
    if (index < 0 || index >= spec.n_videos) throw ValidationError("synthetic video index out of range");

    const int subject = index % spec.n_subjects;
    const Landmarks lm = synthetic_landmarks(spec.width, spec.height);
    const Image face = render_face(spec, lm, mix_seed(spec.seed, 1000 + static_cast<std::uint64_t>(subject)));
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(index)));

    char id[32];
    std::snprintf(id, sizeof(id), "v%03d", index);
    char sid[32];
    std::snprintf(sid, sizeof(sid), "s%02d", subject);

    const int window_len = static_cast<int>(std::lround(spec.window_seconds * spec.fps));
    Point2 left_eye{0, 0}, right_eye{0, 0};
    for (int i = 0; i < 6; ++i) {
        left_eye = {left_eye.x + lm[36 + i].x / 6, left_eye.y + lm[36 + i].y / 6};
        right_eye = {right_eye.x + lm[42 + i].x / 6, right_eye.y + lm[42 + i].y / 6};
    }
    const double bump_sigma = 0.2 * std::hypot(right_eye.x - left_eye.x, right_eye.y - left_eye.y);

    // Place movements: non-overlapping, separated by at least one window length.
    std::vector<PlantedMovement> moves;
    for (int m = 0; m < spec.n_movements; ++m) {
        bool placed = false;
        for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
            const int duration = static_cast<int>(rng.uniform_int(spec.duration_min, spec.duration_max));
            if (duration > spec.frames_per_video) break;
            const int onset = static_cast<int>(rng.uniform_int(0, spec.frames_per_video - duration));
            const int offset = onset + duration - 1;
            bool clear = true;
            for (const auto& other : moves) {
                if (onset <= other.offset + window_len && other.onset <= offset + window_len) {
                    clear = false;
                    break;
                }
            }
            if (!clear) continue;
            PlantedMovement pm;
            pm.onset = onset;
            pm.offset = offset;
            pm.apex = duration >= 3
                ? std::clamp(onset + static_cast<int>(std::lround(duration * rng.uniform(0.35, 0.65))),
                             onset + 1, offset - 1)
                : onset;
            pm.region = spec.region ? *spec.region : static_cast<int>(rng.uniform_int(0, 2));
            // Base directions (image coordinates, y down) before jitter.
            std::vector<double> base;
            if (pm.region < 2) {
                Point2 c{0, 0};
                const int first = pm.region == 0 ? 17 : 22;
                for (int i = first; i < first + 5; ++i) c = {c.x + lm[i].x / 5, c.y + lm[i].y / 5};
                pm.centers = {c};
                base = {-std::numbers::pi / 2};
            } else {
                // Both corners pull outward and up.
                pm.centers = {lm[48], lm[54]};
                base = {-3 * std::numbers::pi / 4, -std::numbers::pi / 4};
            }
            const double jitter = rng.uniform(-0.3, 0.3);
            for (std::size_t k = 0; k < base.size(); ++k) {
                // Mirror the jitter so the two mouth corners stay symmetric.
                double angle = base[k] + (k == 0 ? jitter : -jitter);
                if (spec.direction_radians) angle = *spec.direction_radians;
                pm.directions.push_back({std::cos(angle), std::sin(angle)});
            }
            pm.amplitude = spec.amplitude * rng.uniform(0.8, 1.2);
            pm.sigma = bump_sigma;
            moves.push_back(pm);
            placed = true;
        }
        if (!placed) {
            throw ValidationError("synthetic spec: cannot place " + std::to_string(spec.n_movements) +
                                  " separated movements in " + std::to_string(spec.frames_per_video) +
                                  " frames");
        }
    }
    std::sort(moves.begin(), moves.end(), [](const auto& a, const auto& b) { return a.onset < b.onset; });

    Dataset out;
    FrameSequence seq;
    seq.video_id = id;
    seq.subject_id = sid;
    seq.fps = spec.fps;
    seq.frames.reserve(static_cast<std::size_t>(spec.frames_per_video));
    for (int t = 0; t < spec.frames_per_video; ++t) {
        Image frame = face;
        // Summed displacement of all active bumps, then one resampling pass.
        std::vector<double> shift_x, shift_y;
        for (const auto& pm : moves) {
            const double env = pm.envelope(t) * pm.amplitude;
            if (env == 0.0) continue;
            if (shift_x.empty()) {
                shift_x.assign(face.pixels.size(), 0.0);
                shift_y.assign(face.pixels.size(), 0.0);
            }
            const int reach = static_cast<int>(std::ceil(pm.sigma * 4.0));
            for (std::size_t k = 0; k < pm.centers.size(); ++k) {
                const Point2 c = pm.centers[k];
                const Point2 d = pm.directions[k];
                const int x_lo = std::max(0, static_cast<int>(c.x) - reach);
                const int x_hi = std::min(spec.width - 1, static_cast<int>(c.x) + reach);
                const int y_lo = std::max(0, static_cast<int>(c.y) - reach);
                const int y_hi = std::min(spec.height - 1, static_cast<int>(c.y) + reach);
                for (int y = y_lo; y <= y_hi; ++y) {
                    for (int x = x_lo; x <= x_hi; ++x) {
                        const double dx = x - c.x, dy = y - c.y;
                        const double w = env * std::exp(-(dx * dx + dy * dy) / (2.0 * pm.sigma * pm.sigma));
                        const auto idx = static_cast<std::size_t>(y) * spec.width + x;
                        shift_x[idx] += w * d.x;
                        shift_y[idx] += w * d.y;
                    }
                }
            }
        }
        if (!shift_x.empty()) {
            for (int y = 0; y < spec.height; ++y) {
                for (int x = 0; x < spec.width; ++x) {
                    const auto idx = static_cast<std::size_t>(y) * spec.width + x;
                    // Content moves along the shift: sample the face upstream.
                    if (shift_x[idx] != 0.0 || shift_y[idx] != 0.0) {
                        frame.at(x, y) = bilinear(face, x - shift_x[idx], y - shift_y[idx]);
                    }
                }
            }
        }
        for (auto& v : frame.pixels) {
            const double noisy = spec.noise_std > 0 ? v + rng.normal(0.0, spec.noise_std) : v;
            v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
        }
        imageio::quantize16(frame);
        seq.frames.push_back(std::move(frame));
    }

    LandmarkSet marks;
    marks.video_id = id;
    marks.frames.emplace(0, lm);

    for (const auto& pm : moves) {
        GroundTruthEntry e;
        e.video_id = id;
        e.subject_id = sid;
        e.onset = pm.onset + 1;
        e.apex = pm.apex + 1;
        e.offset = pm.offset + 1;
        e.au_codes = region_au(pm.region);
        out.ground_truth.push_back(e);
    }
    out.sequences.push_back(std::move(seq));
    out.landmarks.push_back(std::move(marks));
    return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    Dataset all;
    for (int i = 0; i < spec.n_videos; ++i) {
        auto one = generate_synthetic_video(spec, i);
        all.sequences.push_back(std::move(one.sequences.front()));
        all.landmarks.push_back(std::move(one.landmarks.front()));
        all.ground_truth.insert(all.ground_truth.end(), one.ground_truth.begin(), one.ground_truth.end());
    }
    return all;
}

DatasetManifest write_synthetic(const fs::path& root, const SyntheticSpec& spec) {
    DatasetManifest manifest;
    manifest.ground_truth_file = root / "ground_truth.csv";
    std::vector<GroundTruthEntry> gt;
    for (int i = 0; i < spec.n_videos; ++i) {
        auto one = generate_synthetic_video(spec, i);
        manifest.videos.push_back(write_video(root, one.sequences.front(), one.landmarks.front()));
        gt.insert(gt.end(), one.ground_truth.begin(), one.ground_truth.end());
    }
    write_ground_truth(manifest.ground_truth_file, gt);
    save_manifest(root / "manifest.json", manifest);
    return manifest;
}

} // namespace microspot
