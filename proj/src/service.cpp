#include "microspot/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>

#include <httplib.h>

#include "microspot/errors.hpp"
#include "microspot/evaluation.hpp"
#include "microspot/imageio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace microspot {

std::string to_string(ProposalStatus status) {
    switch (status) {
        case ProposalStatus::pending: return "pending";
        case ProposalStatus::accepted: return "accepted";
        case ProposalStatus::rejected: return "rejected";
    }
    return "pending";
}

ProposalStatus parse_status(const std::string& text) {
    if (text == "pending") return ProposalStatus::pending;
    if (text == "accepted") return ProposalStatus::accepted;
    if (text == "rejected") return ProposalStatus::rejected;
    throw ValidationError("unknown status '" + text + "'");
}

std::string proposal_id(const std::string& video_id, std::int64_t start) {
    return video_id + ":" + std::to_string(start);
}

json to_json(const Proposal& p) {
    return {{"id", p.id},       {"video_id", p.video_id},     {"start", p.start},
            {"end", p.end},     {"confidence", p.confidence}, {"status", to_string(p.status)}};
}

json to_json(const FeedbackRecord& r) {
    return {{"proposal_id", r.proposal_id},
            {"decision", r.decision},
            {"timestamp", r.timestamp},
            {"annotator", r.annotator}};
}

namespace {

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto secs = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

// Appends one line and returns only once it is on disk.
void durable_append(const fs::path& path, const std::string& line) {
    const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) throw LoadError("cannot open " + path.string() + ": " + std::strerror(errno));
    std::size_t written = 0;
    while (written < line.size()) {
        const auto n = ::write(fd, line.data() + written, line.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            const std::string msg = std::strerror(errno);
            ::close(fd);
            throw LoadError("write failed on " + path.string() + ": " + msg);
        }
        written += static_cast<std::size_t>(n);
    }
    if (::fsync(fd) != 0) {
        const std::string msg = std::strerror(errno);
        ::close(fd);
        throw LoadError("fsync failed on " + path.string() + ": " + msg);
    }
    ::close(fd);
}

// Write-to-temp then rename, so readers never see a half-written pointer.
void atomic_write(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw LoadError("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw LoadError("write failed on " + tmp.string());
    }
    const int fd = ::open(tmp.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd >= 0) {
        ::fsync(fd);
        ::close(fd);
    }
    fs::rename(tmp, path);
}

fs::path version_file(int version) {
    char name[32];
    std::snprintf(name, sizeof name, "v%04d.msck", version);
    return name;
}

} // namespace

ReviewStore::ReviewStore(ServiceInputs inputs, ServiceOptions options)
    : inputs_(std::move(inputs)), options_(std::move(options)) {
    options_.config.validate();
    fs::create_directories(models_dir());
    for (const auto& v : inputs_.manifest.videos) frame_files_[v.video_id] = list_frame_files(v.frame_dir);
    for (const auto& row : inputs_.detections) {
        if (!row.kept) continue;
        const auto& w = row.detection.window;
        if (!frame_files_.count(w.video_id)) {
            throw ConsistencyError("detection refers to unknown video '" + w.video_id + "'");
        }
        Proposal p;
        p.id = proposal_id(w.video_id, w.start);
        p.video_id = w.video_id;
        p.start = w.start;
        p.end = w.end;
        p.confidence = row.detection.confidence;
        if (!proposals_.emplace(p.id, p).second) throw ConsistencyError("duplicate proposal " + p.id);
    }
    replay_log();

    model_ = inputs_.initial_model;
    const fs::path active = models_dir() / "active.json";
    if (fs::exists(active)) {
        std::ifstream in(active);
        json doc;
        try {
            in >> doc;
            version_ = doc.at("version").get<int>();
        } catch (const json::exception& e) {
            throw FormatError("corrupt model pointer " + active.string() + ": " + e.what());
        }
        model_ = load_checkpoint(models_dir() / version_file(version_));
        model_meta_ = doc;
    }
}

fs::path ReviewStore::feedback_log_path() const { return options_.state_dir / "feedback.jsonl"; }
fs::path ReviewStore::models_dir() const { return options_.state_dir / "models"; }

void ReviewStore::apply(const FeedbackRecord& r) {
    auto it = proposals_.find(r.proposal_id);
    if (it == proposals_.end()) throw NotFoundError("unknown proposal '" + r.proposal_id + "'");
    if (it->second.status != ProposalStatus::pending) {
        throw ConflictError("proposal '" + r.proposal_id + "' already " + to_string(it->second.status));
    }
    it->second.status = r.decision == "accept" ? ProposalStatus::accepted : ProposalStatus::rejected;
    records_.push_back(r);
}

void ReviewStore::replay_log() {
    const auto path = feedback_log_path();
    if (!fs::exists(path)) return;
    std::ifstream in(path, std::ios::binary);
    const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < content.size()) {
        const auto nl = content.find('\n', pos);
        ++line_no;
        if (nl == std::string::npos) {
            // A torn final write was never acknowledged; drop it.
            std::cerr << "warning: ignoring incomplete last line of " << path.string() << '\n';
            break;
        }
        const std::string line = content.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        FeedbackRecord r;
        try {
            const auto doc = json::parse(line);
            r.proposal_id = doc.at("proposal_id").get<std::string>();
            r.decision = doc.at("decision").get<std::string>();
            r.timestamp = doc.value("timestamp", "");
            r.annotator = doc.value("annotator", "");
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (r.decision != "accept" && r.decision != "reject") {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad decision '" + r.decision + "'");
        }
        try {
            apply(r);
        } catch (const Error& e) {
            throw ConsistencyError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

json ReviewStore::list_videos() const {
    std::shared_lock lock(state_mutex_);
    json list = json::array();
    for (const auto& v : inputs_.manifest.videos) {
        std::int64_t pending = 0, total = 0;
        for (const auto& [id, p] : proposals_) {
            if (p.video_id != v.video_id) continue;
            ++total;
            if (p.status == ProposalStatus::pending) ++pending;
        }
        list.push_back({{"video_id", v.video_id},
                        {"subject_id", v.subject_id},
                        {"fps", v.fps},
                        {"frame_count", static_cast<std::int64_t>(frame_files_.at(v.video_id).size())},
                        {"proposals", total},
                        {"pending", pending}});
    }
    return list;
}

std::vector<Proposal> ReviewStore::list_proposals(const std::string& video_id,
                                                  std::optional<ProposalStatus> status) const {
    std::shared_lock lock(state_mutex_);
    if (!frame_files_.count(video_id)) throw NotFoundError("unknown video '" + video_id + "'");
    std::vector<Proposal> out;
    for (const auto& [id, p] : proposals_) {
        if (p.video_id == video_id && (!status || p.status == *status)) out.push_back(p);
    }
    std::sort(out.begin(), out.end(), [](const Proposal& a, const Proposal& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.start < b.start;
    });
    return out;
}

Proposal ReviewStore::proposal(const std::string& id) const {
    std::shared_lock lock(state_mutex_);
    auto it = proposals_.find(id);
    if (it == proposals_.end()) throw NotFoundError("unknown proposal '" + id + "'");
    return it->second;
}

std::vector<std::uint8_t> ReviewStore::frame_png(const std::string& video_id, std::int64_t index) const {
    auto it = frame_files_.find(video_id);
    if (it == frame_files_.end()) throw NotFoundError("unknown video '" + video_id + "'");
    if (index < 0 || index >= static_cast<std::int64_t>(it->second.size())) {
        throw NotFoundError("frame " + std::to_string(index) + " out of range for '" + video_id + "'");
    }
    return imageio::encode_png16(imageio::read_image(it->second[static_cast<std::size_t>(index)]));
}

FeedbackRecord ReviewStore::decide(const std::string& id, const std::string& decision, const std::string& annotator) {
    if (decision != "accept" && decision != "reject") {
        throw ValidationError("decision must be 'accept' or 'reject'");
    }
    std::unique_lock lock(state_mutex_);
    auto it = proposals_.find(id);
    if (it == proposals_.end()) throw NotFoundError("unknown proposal '" + id + "'");
    if (it->second.status != ProposalStatus::pending) {
        throw ConflictError("proposal '" + id + "' already " + to_string(it->second.status));
    }
    FeedbackRecord r{id, decision, utc_timestamp(), annotator};
    durable_append(feedback_log_path(), to_json(r).dump() + "\n");
    apply(r);
    return r;
}

std::vector<FeedbackRecord> ReviewStore::feedback() const {
    std::shared_lock lock(state_mutex_);
    return records_;
}

RetrainResult ReviewStore::retrain() {
    std::lock_guard serial(retrain_mutex_);
    std::vector<FeedbackRecord> records;
    int next_version = 0;
    {
        std::shared_lock lock(state_mutex_);
        records = records_;
        next_version = version_ + 1;
    }
    if (records.empty()) throw PreconditionError("retrain needs at least one feedback record");
    if (inputs_.features.empty()) throw PreconditionError("retrain needs cached features");

    std::vector<const VideoFeatures*> videos;
    for (const auto& v : inputs_.features) videos.push_back(&v);
    auto samples = training_samples(videos, inputs_.ground_truth);

    std::map<std::string, std::size_t> index;
    std::size_t k = 0;
    for (const auto* v : videos) {
        for (const auto& s : v->sequences) index[proposal_id(v->video_id, s.window.start)] = k++;
    }
    for (const auto& r : records) {
        auto it = index.find(r.proposal_id);
        if (it == index.end()) throw ConsistencyError("no cached features for proposal '" + r.proposal_id + "'");
        auto& sample = samples[it->second];
        if (r.decision == "accept") {
            sample.label = 1;
            sample.weight = 1.0;
        } else {
            sample.label = 0;
            sample.weight = options_.config.negative_feedback_weight;
        }
    }

    const auto& cfg = options_.config;
    LstmModel model = LstmModel::initialize(static_cast<int>(inputs_.features.front().dims), cfg.hidden, cfg.seed);
    TrainConfig train_cfg = cfg.train;
    train_cfg.seed = cfg.seed;
    const auto trained = train(model, samples, cfg.adam, train_cfg);
    if (!model.all_finite()) throw Error("retrain produced non-finite parameters; previous model kept");

    // Never overwrite an existing version file.
    while (fs::exists(models_dir() / version_file(next_version))) ++next_version;
    const fs::path checkpoint = models_dir() / version_file(next_version);
    json meta = {{"version", next_version},
                 {"feedback_records", records.size()},
                 {"samples", samples.size()},
                 {"seed", cfg.seed},
                 {"epochs", train_cfg.epochs},
                 {"final_loss", trained.loss_history.back()}};
    save_checkpoint(checkpoint, model, meta);

    json pointer = meta;
    pointer["checkpoint"] = checkpoint.filename().string();
    {
        std::unique_lock lock(state_mutex_);
        atomic_write(models_dir() / "active.json", pointer.dump(2) + "\n");
        model_ = model;
        version_ = next_version;
        model_meta_ = pointer;
    }

    RetrainResult result;
    result.version = next_version;
    result.checkpoint = checkpoint;
    result.loss_history = trained.loss_history;
    result.samples = static_cast<std::int64_t>(samples.size());
    result.feedback_records = static_cast<std::int64_t>(records.size());
    return result;
}

json ReviewStore::model_info() const {
    std::shared_lock lock(state_mutex_);
    json info = model_meta_;
    info["version"] = version_;
    info["loaded"] = model_.has_value();
    if (model_) {
        info["input_dim"] = model_->input_dim;
        info["hidden"] = model_->hidden;
        info["parameters"] = model_->parameter_count();
    }
    info["feedback_records"] = records_.size();
    return info;
}

int ReviewStore::active_version() const {
    std::shared_lock lock(state_mutex_);
    return version_;
}

std::optional<LstmModel> ReviewStore::active_model() const {
    std::shared_lock lock(state_mutex_);
    return model_;
}

// ---------------------------------------------------------------------------
// HTTP

struct HttpService::Impl {
    ReviewStore& store;
    httplib::Server server;

    explicit Impl(ReviewStore& s) : store(s) {}
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
    try {
        fn();
    } catch (const NotFoundError& e) {
        send_json(res, 404, {{"error", e.what()}});
    } catch (const ConflictError& e) {
        send_json(res, 409, {{"error", e.what()}});
    } catch (const PreconditionError& e) {
        send_json(res, 412, {{"error", e.what()}});
    } catch (const ValidationError& e) {
        send_json(res, 400, {{"error", e.what()}});
    } catch (const json::exception& e) {
        send_json(res, 400, {{"error", std::string("bad request body: ") + e.what()}});
    } catch (const std::exception& e) {
        send_json(res, 500, {{"error", e.what()}});
    }
}

} // namespace

HttpService::HttpService(ReviewStore& store) : impl_(std::make_unique<Impl>(store)) {
    auto& svr = impl_->server;
    auto& st = impl_->store;

    svr.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    svr.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });

    svr.Get("/api/videos", [&st](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, st.list_videos()); });
    });

    svr.Get(R"(/api/videos/([^/]+)/proposals)", [&st](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::optional<ProposalStatus> status;
            if (req.has_param("status") && !req.get_param_value("status").empty()) {
                status = parse_status(req.get_param_value("status"));
            }
            json list = json::array();
            for (const auto& p : st.list_proposals(req.matches[1], status)) list.push_back(to_json(p));
            send_json(res, 200, list);
        });
    });

    svr.Get(R"(/api/videos/([^/]+)/frames/(-?\d+))", [&st](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto bytes = st.frame_png(req.matches[1], std::stoll(req.matches[2]));
            res.status = 200;
            res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
        });
    });

    svr.Post(R"(/api/proposals/([^/]+)/decision)", [&st](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = json::parse(req.body);
            if (!body.is_object() || !body.contains("decision")) {
                throw ValidationError("body must be {\"decision\": \"accept|reject\", \"annotator\": \"...\"}");
            }
            const auto record = st.decide(req.matches[1], body.at("decision").get<std::string>(),
                                          body.value("annotator", std::string()));
            json out = to_json(record);
            out["proposal"] = to_json(st.proposal(record.proposal_id));
            send_json(res, 200, out);
        });
    });

    svr.Post("/api/retrain", [&st](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] {
            const auto r = st.retrain();
            send_json(res, 200,
                      {{"version", r.version},
                       {"checkpoint", r.checkpoint.filename().string()},
                       {"samples", r.samples},
                       {"feedback_records", r.feedback_records},
                       {"initial_loss", r.loss_history.front()},
                       {"final_loss", r.loss_history.back()},
                       {"loss_history", r.loss_history}});
        });
    });

    svr.Get("/api/model", [&st](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, st.model_info()); });
    });
}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw LoadError("cannot bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port)) throw LoadError("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void HttpService::listen() { impl_->server.listen_after_bind(); }

void HttpService::stop() {
    if (impl_) impl_->server.stop();
}

ServiceInputs load_service_inputs(const fs::path& manifest_path, const fs::path& features_dir,
                                  const fs::path& detections_csv, const std::optional<fs::path>& model_checkpoint) {
    ServiceInputs in;
    in.manifest = load_manifest(manifest_path);
    in.features = load_feature_dir(features_dir);
    in.ground_truth = load_ground_truth(in.manifest.ground_truth_file);
    in.detections = read_detections(detections_csv);
    if (model_checkpoint) in.initial_model = load_checkpoint(*model_checkpoint);
    return in;
}

} // namespace microspot
