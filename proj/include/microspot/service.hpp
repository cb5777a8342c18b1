#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "microspot/dataio.hpp"
#include "microspot/features.hpp"
#include "microspot/network.hpp"
#include "microspot/pipeline.hpp"

namespace microspot {

enum class ProposalStatus { pending, accepted, rejected };

std::string to_string(ProposalStatus status);
/// Accepts "pending", "accepted", "rejected".
ProposalStatus parse_status(const std::string& text);

struct Proposal {
    std::string id;  // "<video_id>:<start>"
    std::string video_id;
    std::int64_t start = 0;
    std::int64_t end = 0;
    double confidence = 0.0;
    ProposalStatus status = ProposalStatus::pending;
};

std::string proposal_id(const std::string& video_id, std::int64_t start);

struct FeedbackRecord {
    std::string proposal_id;
    std::string decision;  // "accept" | "reject"
    std::string timestamp;
    std::string annotator;
};

nlohmann::json to_json(const Proposal& proposal);
nlohmann::json to_json(const FeedbackRecord& record);

struct ServiceOptions {
    std::filesystem::path state_dir;  // feedback.jsonl and models/ live here
    PipelineConfig config;
};

/// Everything the service reads: dataset metadata, cached features, original
/// labels and the spotting output to review.
struct ServiceInputs {
    DatasetManifest manifest;
    std::vector<VideoFeatures> features;
    std::vector<GroundTruthEntry> ground_truth;
    std::vector<DetectionRow> detections;  // rows with kept == true become proposals
    std::optional<LstmModel> initial_model;
};

struct RetrainResult {
    int version = 0;
    std::filesystem::path checkpoint;
    std::vector<double> loss_history;
    std::int64_t samples = 0;
    std::int64_t feedback_records = 0;
};

/// Proposal store with a durable append-only feedback log and versioned models.
/// Reads may run concurrently; decisions and model installs are serialized.
class ReviewStore {
public:
    /// Replays `<state_dir>/feedback.jsonl` and loads the active model version, if any.
    ReviewStore(ServiceInputs inputs, ServiceOptions options);

    nlohmann::json list_videos() const;
    /// Confidence-descending, ties by start. Throws NotFoundError for an unknown video.
    std::vector<Proposal> list_proposals(const std::string& video_id,
                                         std::optional<ProposalStatus> status = std::nullopt) const;
    Proposal proposal(const std::string& id) const;

    /// Lossless 16-bit PNG of one frame. Throws NotFoundError when out of range.
    std::vector<std::uint8_t> frame_png(const std::string& video_id, std::int64_t index) const;

    /// Appends and fsyncs the record before updating state.
    /// NotFoundError for unknown ids, ConflictError when already decided,
    /// ValidationError for a decision other than accept/reject.
    FeedbackRecord decide(const std::string& id, const std::string& decision, const std::string& annotator);

    std::vector<FeedbackRecord> feedback() const;

    /// Trains a fresh model on original labels overridden by feedback and
    /// installs it as a new immutable version. PreconditionError without feedback.
    RetrainResult retrain();

    nlohmann::json model_info() const;
    int active_version() const;
    std::optional<LstmModel> active_model() const;

    std::filesystem::path feedback_log_path() const;
    std::filesystem::path models_dir() const;

private:
    void replay_log();
    void apply(const FeedbackRecord& record);

    ServiceInputs inputs_;
    ServiceOptions options_;
    std::map<std::string, std::vector<std::filesystem::path>> frame_files_;
    std::map<std::string, Proposal> proposals_;
    std::vector<FeedbackRecord> records_;
    std::optional<LstmModel> model_;
    int version_ = 0;
    nlohmann::json model_meta_ = nlohmann::json::object();

    mutable std::shared_mutex state_mutex_;
    std::mutex retrain_mutex_;
};

/// HTTP/JSON front end over a ReviewStore.
class HttpService {
public:
    explicit HttpService(ReviewStore& store);
    ~HttpService();
    HttpService(const HttpService&) = delete;
    HttpService& operator=(const HttpService&) = delete;

    /// Binds to `port` (0 picks a free one) and returns the bound port.
    int bind(const std::string& host, int port);
    /// Blocks until stop() is called.
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Builds store inputs from the usual on-disk artifacts.
ServiceInputs load_service_inputs(const std::filesystem::path& manifest, const std::filesystem::path& features_dir,
                                  const std::filesystem::path& detections_csv,
                                  const std::optional<std::filesystem::path>& model_checkpoint);

} // namespace microspot
