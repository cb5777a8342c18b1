#include "microspot/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "microspot/binio.hpp"
#include "microspot/errors.hpp"
#include "microspot/rng.hpp"

namespace microspot {

namespace {

LstmLayer zero_layer(int input_dim, int hidden) {
    return {Eigen::MatrixXd::Zero(input_dim, 4 * hidden), Eigen::MatrixXd::Zero(hidden, 4 * hidden),
            Eigen::MatrixXd::Zero(1, 4 * hidden)};
}

Eigen::MatrixXd glorot_uniform(int rows, int cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-limit, limit);
    }
    return m;
}

// rows x cols with orthonormal rows (rows <= cols) or columns.
Eigen::MatrixXd orthogonal(int rows, int cols, Rng& rng) {
    const int big = std::max(rows, cols), small = std::min(rows, cols);
    Eigen::MatrixXd a(big, small);
    for (int r = 0; r < big; ++r) {
        for (int c = 0; c < small; ++c) a(r, c) = rng.normal();
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
    const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(small, small);
    for (int c = 0; c < small; ++c) {
        if (r(c, c) < 0) q.col(c) *= -1.0;
    }
    return rows < cols ? Eigen::MatrixXd(q.transpose()) : q;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::RowVector2d softmax(const Eigen::RowVector2d& logits) {
    const double top = logits.maxCoeff();
    Eigen::RowVector2d e = (logits.array() - top).exp();
    return e / e.sum();
}

void run_layer(const LstmLayer& layer, int hidden, const std::vector<Eigen::RowVectorXd>& inputs,
               std::vector<LayerStep>& steps) {
    Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(hidden);
    Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(hidden);
    steps.clear();
    steps.reserve(inputs.size());
    for (const auto& x : inputs) {
        LayerStep s;
        s.x = x;
        s.h_prev = h;
        s.c_prev = c;
        const Eigen::RowVectorXd z = x * layer.input_kernel + h * layer.recurrent_kernel + layer.bias;
        s.i = z.segment(0, hidden).unaryExpr(&sigmoid);
        s.f = z.segment(hidden, hidden).unaryExpr(&sigmoid);
        s.g = z.segment(2 * hidden, hidden).array().tanh();
        s.o = z.segment(3 * hidden, hidden).unaryExpr(&sigmoid);
        s.c = s.f.cwiseProduct(c) + s.i.cwiseProduct(s.g);
        s.tanh_c = s.c.array().tanh();
        s.h = s.o.cwiseProduct(s.tanh_c);
        h = s.h;
        c = s.c;
        steps.push_back(std::move(s));
    }
}

// Accumulates parameter gradients for one layer; returns d(loss)/d(input) per step.
std::vector<Eigen::RowVectorXd> backprop_layer(const LstmLayer& layer, int hidden,
                                               const std::vector<LayerStep>& steps,
                                               const std::vector<Eigen::RowVectorXd>& dh_above,
                                               LstmLayer& grad) {
    const auto n = steps.size();
    std::vector<Eigen::RowVectorXd> dx(n);
    Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(hidden);
    Eigen::RowVectorXd dc_next = Eigen::RowVectorXd::Zero(hidden);
    Eigen::RowVectorXd dz(4 * hidden);
    for (std::size_t k = n; k-- > 0;) {
        const auto& s = steps[k];
        const Eigen::RowVectorXd dh = dh_above[k] + dh_next;
        const Eigen::RowVectorXd d_o = dh.cwiseProduct(s.tanh_c);
        const Eigen::RowVectorXd dc =
            dh.cwiseProduct(s.o).cwiseProduct((1.0 - s.tanh_c.array().square()).matrix()) + dc_next;
        const Eigen::RowVectorXd di = dc.cwiseProduct(s.g);
        const Eigen::RowVectorXd dg = dc.cwiseProduct(s.i);
        const Eigen::RowVectorXd df = dc.cwiseProduct(s.c_prev);
        dc_next = dc.cwiseProduct(s.f);

        dz.segment(0, hidden) = di.array() * s.i.array() * (1.0 - s.i.array());
        dz.segment(hidden, hidden) = df.array() * s.f.array() * (1.0 - s.f.array());
        dz.segment(2 * hidden, hidden) = dg.array() * (1.0 - s.g.array().square());
        dz.segment(3 * hidden, hidden) = d_o.array() * s.o.array() * (1.0 - s.o.array());

        grad.input_kernel.noalias() += s.x.transpose() * dz;
        grad.recurrent_kernel.noalias() += s.h_prev.transpose() * dz;
        grad.bias += dz;
        dx[k] = dz * layer.input_kernel.transpose();
        dh_next = dz * layer.recurrent_kernel.transpose();
    }
    return dx;
}

} // namespace

// ---------------------------------------------------------------------------
// Model

LstmModel LstmModel::zeros(int input_dim, int hidden) {
    if (input_dim < 1 || hidden < 1) throw ValidationError("model dimensions must be positive");
    LstmModel m;
    m.input_dim = input_dim;
    m.hidden = hidden;
    m.layer1 = zero_layer(input_dim, hidden);
    m.layer2 = zero_layer(hidden, hidden);
    m.dense = Eigen::MatrixXd::Zero(hidden, kClassCount);
    m.dense_bias = Eigen::MatrixXd::Zero(1, kClassCount);
    return m;
}

LstmModel LstmModel::initialize(int input_dim, int hidden, std::uint64_t seed) {
    LstmModel m = zeros(input_dim, hidden);
    Rng rng(seed);
    for (LstmLayer* layer : {&m.layer1, &m.layer2}) {
        layer->input_kernel = glorot_uniform(static_cast<int>(layer->input_kernel.rows()), 4 * hidden, rng);
        layer->recurrent_kernel = orthogonal(hidden, 4 * hidden, rng);
        layer->bias.setZero();
        layer->bias.block(0, hidden, 1, hidden).setOnes();
    }
    m.dense = glorot_uniform(hidden, kClassCount, rng);
    return m;
}

std::array<Eigen::MatrixXd*, 8> LstmModel::tensors() {
    return {&layer1.input_kernel, &layer1.recurrent_kernel, &layer1.bias,
            &layer2.input_kernel, &layer2.recurrent_kernel, &layer2.bias,
            &dense, &dense_bias};
}

std::array<const Eigen::MatrixXd*, 8> LstmModel::tensors() const {
    return {&layer1.input_kernel, &layer1.recurrent_kernel, &layer1.bias,
            &layer2.input_kernel, &layer2.recurrent_kernel, &layer2.bias,
            &dense, &dense_bias};
}

std::size_t LstmModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : tensors()) n += static_cast<std::size_t>(t->size());
    return n;
}

bool LstmModel::all_finite() const {
    for (const auto* t : tensors()) {
        if (!t->allFinite()) return false;
    }
    return true;
}

void LstmModel::set_zero() {
    for (auto* t : tensors()) t->setZero();
    ++revision;
}

// ---------------------------------------------------------------------------
// Forward / loss / backward

ForwardResult forward(const LstmModel& model, const Sequence& sequence) {
    if (sequence.cols() != model.input_dim) {
        throw ValidationError("sequence has " + std::to_string(sequence.cols()) + " features, model expects " +
                              std::to_string(model.input_dim));
    }
    if (sequence.rows() < 1) throw ValidationError("sequence has no timesteps");
    ForwardResult result;
    auto& cache = result.cache;
    cache.model = &model;
    cache.revision = model.revision;

    std::vector<Eigen::RowVectorXd> inputs;
    inputs.reserve(static_cast<std::size_t>(sequence.rows()));
    for (Eigen::Index t = 0; t < sequence.rows(); ++t) inputs.emplace_back(sequence.row(t));
    run_layer(model.layer1, model.hidden, inputs, cache.layer1);

    for (std::size_t t = 0; t < inputs.size(); ++t) inputs[t] = cache.layer1[t].h;
    run_layer(model.layer2, model.hidden, inputs, cache.layer2);

    cache.logits = cache.layer2.back().h * model.dense + model.dense_bias;
    cache.probabilities = softmax(cache.logits);
    result.probabilities = cache.probabilities;
    return result;
}

double loss(const Eigen::RowVector2d& probabilities, int label, const ClassWeights& weights) {
    if (label < 0 || label >= kClassCount) throw ValidationError("label must be 0 or 1");
    const double p = std::clamp(probabilities(label), 1e-12, 1.0);
    const double value = -weights[static_cast<std::size_t>(label)] * std::log(p);
    return value == 0.0 ? 0.0 : value;  // normalize -0
}

LstmModel backward(const LstmModel& model, const ForwardCache& cache, int label, const ClassWeights& weights) {
    if (cache.model != &model || cache.revision != model.revision) {
        throw ContractViolation("backward: forward cache does not belong to the current model parameters");
    }
    if (label < 0 || label >= kClassCount) throw ValidationError("label must be 0 or 1");
    LstmModel grad = LstmModel::zeros(model.input_dim, model.hidden);
    const double w = weights[static_cast<std::size_t>(label)];

    Eigen::RowVector2d dlogits = cache.probabilities;
    dlogits(label) -= 1.0;
    dlogits *= w;

    const auto& last = cache.layer2.back().h;
    grad.dense = last.transpose() * dlogits;
    grad.dense_bias = dlogits;

    const auto steps = cache.layer2.size();
    std::vector<Eigen::RowVectorXd> dh2(steps, Eigen::RowVectorXd::Zero(model.hidden));
    dh2.back() = dlogits * model.dense.transpose();
    const auto dh1 = backprop_layer(model.layer2, model.hidden, cache.layer2, dh2, grad.layer2);
    backprop_layer(model.layer1, model.hidden, cache.layer1, dh1, grad.layer1);
    return grad;
}

double predict(const LstmModel& model, const Sequence& sequence) {
    return forward(model, sequence).probabilities(1);
}

// ---------------------------------------------------------------------------
// Adam

void AdamConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw ValidationError("adam: learning rate must be >= 0");
    if (!(decay >= 0.0)) throw ValidationError("adam: decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw ValidationError("adam: betas must lie in [0,1)");
    }
    if (!(epsilon > 0.0)) throw ValidationError("adam: epsilon must be positive");
}

AdamOptimizer::AdamOptimizer(const LstmModel& like, AdamConfig config)
    : config_(config), m_(LstmModel::zeros(like.input_dim, like.hidden)),
      v_(LstmModel::zeros(like.input_dim, like.hidden)) {
    config_.validate();
}

void AdamOptimizer::step(LstmModel& model, const LstmModel& gradients) {
    const double lr = config_.learning_rate / (1.0 + config_.decay * static_cast<double>(iterations_));
    ++iterations_;
    const double t = static_cast<double>(iterations_);
    const double lr_t = lr * std::sqrt(1.0 - std::pow(config_.beta2, t)) / (1.0 - std::pow(config_.beta1, t));
    auto params = model.tensors();
    const auto grads = gradients.tensors();
    auto ms = m_.tensors();
    auto vs = v_.tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& m = *ms[k];
        auto& v = *vs[k];
        const auto& g = *grads[k];
        m = config_.beta1 * m + (1.0 - config_.beta1) * g;
        v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
        params[k]->array() -= lr_t * m.array() / (v.array().sqrt() + config_.epsilon);
    }
    ++model.revision;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
    if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("train: batch size must be >= 1");
}

TrainResult train(LstmModel& model, const std::vector<LabeledSample>& dataset, const AdamConfig& adam,
                  const TrainConfig& config) {
    config.validate();
    if (dataset.empty()) throw ValidationError("train: empty dataset");
    std::array<std::size_t, kClassCount> counts{0, 0};
    for (const auto& s : dataset) {
        if (s.label < 0 || s.label >= kClassCount) throw ValidationError("train: label must be 0 or 1");
        ++counts[static_cast<std::size_t>(s.label)];
    }
    if (counts[0] == 0 || counts[1] == 0) {
        std::cerr << "warning: training set contains a single class\n";
    }

    TrainResult result;
    if (config.class_weights) {
        result.class_weights = *config.class_weights;
    } else if (config.inverse_frequency_weights && counts[0] > 0 && counts[1] > 0) {
        const double n = static_cast<double>(dataset.size());
        for (std::size_t c = 0; c < kClassCount; ++c) {
            result.class_weights[c] = n / (kClassCount * static_cast<double>(counts[c]));
        }
    }

    AdamOptimizer optimizer(model, adam);
    Rng rng(config.seed);
    std::vector<std::size_t> order(dataset.size());
    std::vector<double> sample_loss(dataset.size(), 0.0);
    LstmModel batch_grad = LstmModel::zeros(model.input_dim, model.hidden);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
            batch_grad.set_zero();
            for (std::size_t k = begin; k < end; ++k) {
                const auto& sample = dataset[order[k]];
                ClassWeights w = result.class_weights;
                for (double& x : w) x *= sample.weight;
                const auto fwd = forward(model, sample.sequence);
                sample_loss[order[k]] = loss(fwd.probabilities, sample.label, w);
                const auto g = backward(model, fwd.cache, sample.label, w);
                auto dst = batch_grad.tensors();
                const auto src = g.tensors();
                for (std::size_t t = 0; t < dst.size(); ++t) *dst[t] += *src[t];
            }
            const double scale = 1.0 / static_cast<double>(end - begin);
            for (auto* t : batch_grad.tensors()) *t *= scale;
            optimizer.step(model, batch_grad);
        }
        // Summed in sample order so the history does not depend on the shuffle.
        double total = 0.0;
        for (double l : sample_loss) total += l;
        result.loss_history.push_back(total / static_cast<double>(dataset.size()));
    }
    return result;
}

Sequence to_sequence(const HoofSequence& features) {
    Sequence s(features.timesteps, features.dims);
    for (std::int64_t t = 0; t < features.timesteps; ++t) {
        for (std::int64_t d = 0; d < features.dims; ++d) s(t, d) = features.at(t, d);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const LstmModel& model, const nlohmann::json& metadata) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw LoadError("cannot write file: " + path.string());
        binio::put_magic(out, "MSCK");
        binio::put<std::uint32_t>(out, 1);
        binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.input_dim));
        binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.hidden));
        binio::put<std::uint32_t>(out, 2);
        binio::put<std::uint32_t>(out, kClassCount);
        out.write("ifgo", 4);
        for (const auto* t : model.tensors()) {
            binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(t->rows()));
            binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(t->cols()));
            for (Eigen::Index r = 0; r < t->rows(); ++r) {
                for (Eigen::Index c = 0; c < t->cols(); ++c) binio::put<double>(out, (*t)(r, c));
            }
        }
        if (!out) throw LoadError("write failed: " + path.string());
    }
    nlohmann::json sidecar = metadata;
    sidecar["format_version"] = 1;
    sidecar["input_dim"] = model.input_dim;
    sidecar["hidden"] = model.hidden;
    sidecar["layers"] = 2;
    sidecar["gate_order"] = "ifgo";
    std::ofstream meta(path.string() + ".json");
    if (!meta) throw LoadError("cannot write file: " + path.string() + ".json");
    meta << sidecar.dump(2) << '\n';
}

LstmModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint: " + path.string());
    binio::expect_magic(in, "MSCK", path.string());
    if (binio::get<std::uint32_t>(in) != 1) throw FormatError(path.string() + ": unsupported checkpoint version");
    const auto input_dim = static_cast<int>(binio::get<std::uint32_t>(in));
    const auto hidden = static_cast<int>(binio::get<std::uint32_t>(in));
    const auto layers = binio::get<std::uint32_t>(in);
    const auto classes = binio::get<std::uint32_t>(in);
    char gates[4];
    if (!in.read(gates, 4) || std::string(gates, 4) != "ifgo" || layers != 2 || classes != kClassCount) {
        throw FormatError(path.string() + ": unsupported checkpoint layout");
    }
    if (input_dim < 1 || hidden < 1 || input_dim > 65536 || hidden > 65536) {
        throw FormatError(path.string() + ": implausible model dimensions");
    }
    LstmModel model = LstmModel::zeros(input_dim, hidden);
    for (auto* t : model.tensors()) {
        const auto rows = binio::get<std::uint32_t>(in);
        const auto cols = binio::get<std::uint32_t>(in);
        if (rows != t->rows() || cols != t->cols()) throw FormatError(path.string() + ": tensor shape mismatch");
        for (Eigen::Index r = 0; r < t->rows(); ++r) {
            for (Eigen::Index c = 0; c < t->cols(); ++c) (*t)(r, c) = binio::get<double>(in);
        }
    }
    if (!model.all_finite()) throw FormatError(path.string() + ": non-finite parameters");
    return model;
}

} // namespace microspot
