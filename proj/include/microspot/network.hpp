#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "microspot/features.hpp"

namespace microspot {

inline constexpr int kClassCount = 2;
inline constexpr int kDefaultHidden = 12;

/// One LSTM layer. Gate blocks along the 4H axis are ordered (i, f, g, o).
struct LstmLayer {
    Eigen::MatrixXd input_kernel;      // input_dim x 4H
    Eigen::MatrixXd recurrent_kernel;  // H x 4H
    Eigen::MatrixXd bias;              // 1 x 4H
};

/// Two stacked LSTM layers plus a dense softmax head over the last hidden state.
/// Gradients use the same type.
struct LstmModel {
    int input_dim = 0;
    int hidden = 0;
    LstmLayer layer1;
    LstmLayer layer2;
    Eigen::MatrixXd dense;       // H x 2
    Eigen::MatrixXd dense_bias;  // 1 x 2
    // Bumped whenever parameters change; forward caches record it.
    std::uint64_t revision = 0;

    static LstmModel zeros(int input_dim, int hidden);
    /// Glorot-uniform input and dense kernels, orthogonal recurrent kernels,
    /// zero biases except forget-gate bias 1.
    static LstmModel initialize(int input_dim, int hidden, std::uint64_t seed);

    std::array<Eigen::MatrixXd*, 8> tensors();
    std::array<const Eigen::MatrixXd*, 8> tensors() const;
    std::size_t parameter_count() const;
    bool all_finite() const;
    void set_zero();
};

using Sequence = Eigen::MatrixXd;  // timesteps x input_dim

struct LayerStep {
    Eigen::RowVectorXd x, h_prev, c_prev, i, f, g, o, c, tanh_c, h;
};

struct ForwardCache {
    const LstmModel* model = nullptr;
    std::uint64_t revision = 0;
    std::vector<LayerStep> layer1;
    std::vector<LayerStep> layer2;
    Eigen::RowVector2d logits;
    Eigen::RowVector2d probabilities;
};

struct ForwardResult {
    Eigen::RowVector2d probabilities;
    ForwardCache cache;
};

ForwardResult forward(const LstmModel& model, const Sequence& sequence);

using ClassWeights = std::array<double, kClassCount>;

/// Weighted cross-entropy -w_y * log(p_y), p clamped to [1e-12, 1].
double loss(const Eigen::RowVector2d& probabilities, int label, const ClassWeights& weights = {1.0, 1.0});

/// Backprop through time for the loss of one sample.
LstmModel backward(const LstmModel& model, const ForwardCache& cache, int label,
                   const ClassWeights& weights = {1.0, 1.0});

/// Positive-class probability.
double predict(const LstmModel& model, const Sequence& sequence);

struct AdamConfig {
    double learning_rate = 1e-3;
    double decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

class AdamOptimizer {
public:
    AdamOptimizer(const LstmModel& like, AdamConfig config);
    void step(LstmModel& model, const LstmModel& gradients);
    std::int64_t iterations() const { return iterations_; }

private:
    AdamConfig config_;
    LstmModel m_;
    LstmModel v_;
    std::int64_t iterations_ = 0;
};

struct TrainConfig {
    int epochs = 50;
    int batch_size = 32;
    std::uint64_t seed = 1;
    std::optional<ClassWeights> class_weights;
    bool inverse_frequency_weights = false;

    void validate() const;
};

struct LabeledSample {
    Sequence sequence;
    int label = 0;
    double weight = 1.0;  // per-sample multiplier on top of class weights
};

struct TrainResult {
    std::vector<double> loss_history;  // mean sample loss per epoch
    ClassWeights class_weights{1.0, 1.0};
};

TrainResult train(LstmModel& model, const std::vector<LabeledSample>& dataset, const AdamConfig& adam,
                  const TrainConfig& config);

Sequence to_sequence(const HoofSequence& features);

/// Checkpoint: "MSCK", u32 version, u32 input_dim, u32 hidden, u32 layers (2),
/// u32 classes (2), 4 bytes gate order "ifgo", then 8 tensors
/// (layer1 W/U/b, layer2 W/U/b, dense W/b), each u32 rows, u32 cols and
/// row-major f64 values, all little-endian. `<path>.json` holds the metadata.
void save_checkpoint(const std::filesystem::path& path, const LstmModel& model,
                     const nlohmann::json& metadata = nlohmann::json::object());
LstmModel load_checkpoint(const std::filesystem::path& path);

} // namespace microspot
