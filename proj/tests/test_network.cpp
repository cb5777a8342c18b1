#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "microspot/errors.hpp"
#include "microspot/network.hpp"
#include "test_util.hpp"

using namespace microspot;

namespace {

Sequence random_sequence(int t, int d, unsigned seed, double scale = 1.0) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> dist(-scale, scale);
    Sequence s(t, d);
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j) s(i, j) = dist(gen);
    return s;
}

LstmModel random_model(int d, int h, unsigned seed, double scale = 0.5) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> dist(-scale, scale);
    auto m = LstmModel::zeros(d, h);
    for (auto* t : m.tensors())
        for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] = dist(gen);
    return m;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain-loop LSTM forward, written against the documented gate layout only.
std::array<double, 2> reference_forward(const LstmModel& m, const Sequence& seq) {
    const int H = m.hidden;
    auto run_layer = [&](const LstmLayer& L, const std::vector<std::vector<double>>& xs) {
        std::vector<double> h(H, 0.0), c(H, 0.0);
        std::vector<std::vector<double>> out;
        for (const auto& x : xs) {
            std::vector<double> z(4 * H);
            for (int k = 0; k < 4 * H; ++k) {
                double s = L.bias(0, k);
                for (std::size_t j = 0; j < x.size(); ++j) s += x[j] * L.input_kernel(static_cast<Eigen::Index>(j), k);
                for (int j = 0; j < H; ++j) s += h[j] * L.recurrent_kernel(j, k);
                z[k] = s;
            }
            for (int j = 0; j < H; ++j) {
                const double i = sigmoid(z[j]), f = sigmoid(z[H + j]), g = std::tanh(z[2 * H + j]),
                             o = sigmoid(z[3 * H + j]);
                c[j] = f * c[j] + i * g;
                h[j] = o * std::tanh(c[j]);
            }
            out.push_back(h);
        }
        return out;
    };
    std::vector<std::vector<double>> xs;
    for (Eigen::Index t = 0; t < seq.rows(); ++t) {
        std::vector<double> row(static_cast<std::size_t>(seq.cols()));
        for (Eigen::Index j = 0; j < seq.cols(); ++j) row[static_cast<std::size_t>(j)] = seq(t, j);
        xs.push_back(row);
    }
    const auto h2 = run_layer(m.layer2, run_layer(m.layer1, xs)).back();
    std::array<double, 2> logit{};
    for (int k = 0; k < 2; ++k) {
        logit[k] = m.dense_bias(0, k);
        for (int j = 0; j < H; ++j) logit[k] += h2[j] * m.dense(j, k);
    }
    const double mx = std::max(logit[0], logit[1]);
    const double e0 = std::exp(logit[0] - mx), e1 = std::exp(logit[1] - mx);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

std::vector<LabeledSample> gaussian_clusters(int per_class, int t, int d, unsigned seed) {
    std::mt19937 gen(seed);
    std::normal_distribution<double> noise(0.0, 0.3);
    std::vector<LabeledSample> out;
    for (int k = 0; k < 2 * per_class; ++k) {
        LabeledSample s;
        s.label = k % 2;
        s.sequence = Sequence(t, d);
        const double mean = s.label == 1 ? 0.5 : -0.5;
        for (int i = 0; i < t; ++i)
            for (int j = 0; j < d; ++j) s.sequence(i, j) = mean + noise(gen);
        out.push_back(std::move(s));
    }
    return out;
}

double accuracy(const LstmModel& m, const std::vector<LabeledSample>& data) {
    int ok = 0;
    for (const auto& s : data) ok += (predict(m, s.sequence) > 0.5) == (s.label == 1);
    return static_cast<double>(ok) / static_cast<double>(data.size());
}

} // namespace

TEST(LstmForward, ZeroModelGivesHalf) {
    const auto m = LstmModel::zeros(24, 12);
    const auto r = forward(m, random_sequence(25, 24, 1));
    EXPECT_DOUBLE_EQ(r.probabilities(0), 0.5);
    EXPECT_DOUBLE_EQ(r.probabilities(1), 0.5);
    EXPECT_DOUBLE_EQ(predict(m, random_sequence(25, 24, 2)), 0.5);
}

TEST(LstmForward, ZeroInputZeroBiasGivesHalf) {
    auto m = LstmModel::initialize(24, 12, 3);
    m.layer1.bias.setZero();
    m.layer2.bias.setZero();
    m.dense_bias.setZero();
    const auto r = forward(m, Sequence::Zero(25, 24));
    EXPECT_DOUBLE_EQ(r.probabilities(0), 0.5);
    EXPECT_DOUBLE_EQ(r.probabilities(1), 0.5);
}

TEST(LstmForward, MatchesReferenceImplementation) {
    for (unsigned seed = 1; seed <= 5; ++seed) {
        const auto m = random_model(6, 4, seed, 0.8);
        const auto seq = random_sequence(7, 6, seed + 100);
        const auto got = forward(m, seq).probabilities;
        const auto want = reference_forward(m, seq);
        EXPECT_NEAR(got(0), want[0], 1e-12);
        EXPECT_NEAR(got(1), want[1], 1e-12);
    }
}

TEST(LstmForward, ProbabilitiesSumToOneAndHiddenBounded) {
    const auto m = LstmModel::initialize(24, 12, 9);
    for (unsigned seed = 1; seed <= 10; ++seed) {
        const auto r = forward(m, random_sequence(25, 24, seed, 3.0));
        EXPECT_NEAR(r.probabilities.sum(), 1.0, 1e-9);
        EXPECT_GT(r.probabilities(0), 0.0);
        EXPECT_LT(r.probabilities(0), 1.0);
        for (const auto* steps : {&r.cache.layer1, &r.cache.layer2})
            for (const auto& s : *steps) EXPECT_LE(s.h.cwiseAbs().maxCoeff(), 1.0);
        EXPECT_NEAR(predict(m, random_sequence(25, 24, seed, 3.0)) + r.probabilities(0), 1.0, 1e-9);
    }
}

TEST(LstmForward, DeterministicBitIdentical) {
    const auto a = LstmModel::initialize(24, 12, 42);
    const auto b = LstmModel::initialize(24, 12, 42);
    const auto seq = random_sequence(25, 24, 5);
    const auto pa = forward(a, seq).probabilities;
    const auto pb = forward(b, seq).probabilities;
    EXPECT_EQ(pa(0), pb(0));
    EXPECT_EQ(pa(1), pb(1));
}

TEST(LstmForward, DimensionMismatch) {
    const auto m = LstmModel::zeros(24, 12);
    EXPECT_THROW(forward(m, Sequence::Zero(25, 23)), ValidationError);
    EXPECT_THROW(predict(m, Sequence::Zero(25, 25)), ValidationError);
}

TEST(LstmInit, ShapesAndForgetBias) {
    const auto m = LstmModel::initialize(24, 12, 1);
    EXPECT_EQ(m.layer1.input_kernel.rows(), 24);
    EXPECT_EQ(m.layer1.input_kernel.cols(), 48);
    EXPECT_EQ(m.layer2.input_kernel.rows(), 12);
    EXPECT_EQ(m.layer1.recurrent_kernel.rows(), 12);
    EXPECT_EQ(m.dense.rows(), 12);
    EXPECT_EQ(m.dense.cols(), 2);
    for (int k = 0; k < 48; ++k) EXPECT_EQ(m.layer1.bias(0, k), (k >= 12 && k < 24) ? 1.0 : 0.0);
    // Orthogonal recurrent kernel: rows are orthonormal.
    const Eigen::MatrixXd u = m.layer2.recurrent_kernel;
    EXPECT_LT(((u * u.transpose()) - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff(), 1e-9);
    const double limit = std::sqrt(6.0 / (24 + 48));
    EXPECT_LE(m.layer1.input_kernel.cwiseAbs().maxCoeff(), limit);
    EXPECT_TRUE(m.all_finite());
    EXPECT_EQ(m.parameter_count(), 24u * 48 + 12 * 48 + 48 + 12u * 48 + 12 * 48 + 48 + 24 + 2);
}

TEST(Loss, Examples) {
    EXPECT_NEAR(loss({0.5, 0.5}, 1), 0.693147, 1e-6);
    EXPECT_DOUBLE_EQ(loss({0.0, 1.0}, 1), 0.0);
    EXPECT_NEAR(loss({0.9, 0.1}, 1, {1.0, 2.0}), 4.60517, 1e-5);
    EXPECT_NEAR(loss({1.0, 0.0}, 1), -std::log(1e-12), 1e-9);
}

TEST(Loss, InvalidLabel) {
    EXPECT_THROW(loss({0.5, 0.5}, 2), ValidationError);
    EXPECT_THROW(loss({0.5, 0.5}, -1), ValidationError);
}

TEST(Backward, MatchesCentralFiniteDifferences) {
    const int d = 4, h = 3, t = 5;
    for (unsigned seed = 1; seed <= 3; ++seed) {
        const auto seq = random_sequence(t, d, seed + 10);
        for (int label : {0, 1}) {
            auto m = random_model(d, h, seed, 0.7);
            const ClassWeights w{1.3, 0.8};
            const auto fwd = forward(m, seq);
            const auto grad = backward(m, fwd.cache, label, w);
            const auto gts = grad.tensors();
            auto ps = m.tensors();
            const double eps = 1e-5;
            // Gradients below ~1e-6 are compared on absolute error (< 1e-11), which is
            // what central differences at h = 1e-5 can resolve.
            double worst = 0;
            for (std::size_t k = 0; k < ps.size(); ++k) {
                for (Eigen::Index i = 0; i < ps[k]->size(); ++i) {
                    double& p = ps[k]->data()[i];
                    const double orig = p;
                    p = orig + eps;
                    const double lp = loss(forward(m, seq).probabilities, label, w);
                    p = orig - eps;
                    const double lm = loss(forward(m, seq).probabilities, label, w);
                    p = orig;
                    const double numeric = (lp - lm) / (2 * eps);
                    const double analytic = gts[k]->data()[i];
                    const double rel = std::abs(numeric - analytic) / std::max(1e-6, std::abs(numeric) + std::abs(analytic));
                    worst = std::max(worst, rel);
                }
            }
            EXPECT_LT(worst, 1e-5) << "seed " << seed << " label " << label;
        }
    }
}

TEST(Backward, ZeroWeightGivesZeroGradient) {
    const auto m = random_model(4, 3, 2);
    const auto fwd = forward(m, random_sequence(5, 4, 3));
    const auto g = backward(m, fwd.cache, 1, {1.0, 0.0});
    for (const auto* t : g.tensors()) EXPECT_EQ(t->cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, LinearInSampleWeightAndDuplicates) {
    const auto m = random_model(4, 3, 5);
    const auto fwd = forward(m, random_sequence(6, 4, 6));
    const auto one = backward(m, fwd.cache, 0);
    const auto two = backward(m, fwd.cache, 0, {2.0, 2.0});
    const auto again = backward(m, fwd.cache, 0);
    const auto a = one.tensors(), b = two.tensors(), c = again.tensors();
    for (std::size_t k = 0; k < a.size(); ++k) {
        const Eigen::MatrixXd dup = *a[k] + *c[k];
        EXPECT_LT((dup - *b[k]).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((dup - 2.0 * *a[k]).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(Backward, StaleCacheIsContractViolation) {
    auto m = LstmModel::initialize(4, 3, 1);
    const auto fwd = forward(m, random_sequence(5, 4, 1));
    AdamOptimizer opt(m, {});
    opt.step(m, backward(m, fwd.cache, 1));
    EXPECT_THROW(backward(m, fwd.cache, 1), ContractViolation);
    const auto other = LstmModel::initialize(4, 3, 1);
    EXPECT_THROW(backward(other, forward(m, random_sequence(5, 4, 1)).cache, 1), ContractViolation);
}

TEST(Adam, FirstStepMatchesClosedForm) {
    auto m = LstmModel::zeros(2, 1);
    auto g = LstmModel::zeros(2, 1);
    g.dense(0, 0) = 0.3;
    g.dense(0, 1) = -2.0;
    AdamConfig cfg;
    AdamOptimizer opt(m, cfg);
    opt.step(m, g);
    // m1 = (1-b1) g, v1 = (1-b2) g^2, lr_t = lr sqrt(1-b2)/(1-b1)
    for (int k = 0; k < 2; ++k) {
        const double gk = g.dense(0, k);
        const double expect = -cfg.learning_rate * std::sqrt(1 - cfg.beta2) * gk /
                              (std::sqrt(1 - cfg.beta2) * std::abs(gk) + cfg.epsilon);
        EXPECT_NEAR(m.dense(0, k), expect, 1e-15);
    }
    EXPECT_EQ(m.layer1.input_kernel.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(opt.iterations(), 1);
}

TEST(Adam, DecayShrinksLaterSteps) {
    AdamConfig cfg;
    cfg.decay = 1.0;
    cfg.beta1 = 0.0;
    cfg.beta2 = 0.0;
    auto m = LstmModel::zeros(1, 1);
    auto g = LstmModel::zeros(1, 1);
    g.dense_bias(0, 0) = 1.0;
    AdamOptimizer opt(m, cfg);
    opt.step(m, g);
    const double first = -m.dense_bias(0, 0);
    opt.step(m, g);
    const double second = -m.dense_bias(0, 0) - first;
    EXPECT_NEAR(second / first, 0.5, 1e-6);
}

TEST(Adam, RejectsBadConfig) {
    AdamConfig cfg;
    cfg.beta1 = 1.0;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg = {};
    cfg.epsilon = 0;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg = {};
    cfg.learning_rate = -1;
    EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Train, SeparableClustersReachHighAccuracy) {
    const auto train_set = gaussian_clusters(64, 10, 6, 1);
    const auto held_out = gaussian_clusters(50, 10, 6, 2);
    auto m = LstmModel::initialize(6, 12, 1);
    TrainConfig tc;
    const auto r = train(m, train_set, AdamConfig{}, tc);
    ASSERT_EQ(r.loss_history.size(), 50u);
    for (double l : r.loss_history) EXPECT_TRUE(std::isfinite(l));
    EXPECT_LT(r.loss_history.back(), r.loss_history.front());
    EXPECT_GE(accuracy(m, train_set), 0.95);
    EXPECT_GE(accuracy(m, held_out), 0.90);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
    const auto data = gaussian_clusters(8, 5, 3, 3);
    auto m = LstmModel::initialize(3, 4, 2);
    const auto before = m;
    AdamConfig adam;
    adam.learning_rate = 0;
    TrainConfig tc;
    tc.epochs = 3;
    const auto r = train(m, data, adam, tc);
    const auto a = before.tensors();
    const auto b = m.tensors();
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(*a[k], *b[k]);
    EXPECT_EQ(r.loss_history[0], r.loss_history[1]);
    EXPECT_EQ(r.loss_history[1], r.loss_history[2]);
}

TEST(Train, SameSeedSameHistory) {
    const auto data = gaussian_clusters(20, 5, 3, 4);
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 7;
    auto a = LstmModel::initialize(3, 4, 9);
    auto b = LstmModel::initialize(3, 4, 9);
    const auto ra = train(a, data, {}, tc);
    const auto rb = train(b, data, {}, tc);
    EXPECT_EQ(ra.loss_history, rb.loss_history);
    EXPECT_EQ(a.dense, b.dense);
    tc.seed = 2;
    auto c = LstmModel::initialize(3, 4, 9);
    const auto rc = train(c, data, {}, tc);
    EXPECT_NE(ra.loss_history, rc.loss_history);
}

TEST(Train, InverseFrequencyWeights) {
    auto data = gaussian_clusters(10, 3, 2, 5);
    data.push_back(data[0]);  // 11 negatives, 10 positives
    data.push_back(data[2]);
    TrainConfig tc;
    tc.epochs = 1;
    tc.inverse_frequency_weights = true;
    auto m = LstmModel::initialize(2, 3, 1);
    const auto r = train(m, data, {}, tc);
    EXPECT_NEAR(r.class_weights[0], 22.0 / (2 * 12), 1e-12);
    EXPECT_NEAR(r.class_weights[1], 22.0 / (2 * 10), 1e-12);
    tc.class_weights = ClassWeights{0.25, 4.0};
    const auto r2 = train(m, data, {}, tc);
    EXPECT_EQ(r2.class_weights[0], 0.25);
    EXPECT_EQ(r2.class_weights[1], 4.0);
}

TEST(Train, SingleClassStillTrains) {
    auto data = gaussian_clusters(5, 3, 2, 6);
    for (auto& s : data) s.label = 0;
    TrainConfig tc;
    tc.epochs = 2;
    auto m = LstmModel::initialize(2, 3, 1);
    EXPECT_NO_THROW(train(m, data, {}, tc));
}

TEST(Train, RejectsBadInputs) {
    auto m = LstmModel::initialize(2, 3, 1);
    EXPECT_THROW(train(m, {}, {}, {}), ValidationError);
    TrainConfig tc;
    tc.epochs = 0;
    EXPECT_THROW(train(m, gaussian_clusters(2, 2, 2, 1), {}, tc), ValidationError);
    auto data = gaussian_clusters(2, 2, 2, 1);
    data[0].label = 3;
    EXPECT_THROW(train(m, data, {}, {}), ValidationError);
}

TEST(ToSequence, CopiesRowMajorValues) {
    HoofSequence h;
    h.timesteps = 2;
    h.dims = 3;
    h.values = {1, 2, 3, 4, 5, 6};
    const auto s = to_sequence(h);
    EXPECT_EQ(s.rows(), 2);
    EXPECT_EQ(s(1, 0), 4.0);
    EXPECT_EQ(s(0, 2), 3.0);
}

TEST(Checkpoint, RoundTripExact) {
    testutil::TempDir dir;
    const auto m = LstmModel::initialize(24, 12, 77);
    save_checkpoint(dir / "m.msck", m, {{"epochs", 50}});
    const auto back = load_checkpoint(dir / "m.msck");
    EXPECT_EQ(back.input_dim, 24);
    EXPECT_EQ(back.hidden, 12);
    const auto a = m.tensors(), b = back.tensors();
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(*a[k], *b[k]);
    const auto bytes = testutil::read_file(dir / "m.msck");
    EXPECT_EQ(bytes.substr(0, 4), "MSCK");
    EXPECT_NE(bytes.find("ifgo"), std::string::npos);
    EXPECT_EQ(bytes.size(), 4u + 4 * 5 + 4 + 8 * 8 + m.parameter_count() * 8);
    const auto meta = nlohmann::json::parse(testutil::read_file(dir / "m.msck.json"));
    EXPECT_EQ(meta["epochs"], 50);
    save_checkpoint(dir / "n.msck", back);
    EXPECT_EQ(testutil::read_file(dir / "n.msck"), bytes);
}

TEST(Checkpoint, ErrorCases) {
    testutil::TempDir dir;
    EXPECT_THROW(load_checkpoint(dir / "nope.msck"), LoadError);
    testutil::write_file(dir / "bad.msck", "NOPE....");
    EXPECT_THROW(load_checkpoint(dir / "bad.msck"), FormatError);
    save_checkpoint(dir / "m.msck", LstmModel::initialize(3, 2, 1));
    const auto bytes = testutil::read_file(dir / "m.msck");
    testutil::write_file(dir / "t.msck", bytes.substr(0, bytes.size() - 8));
    EXPECT_THROW(load_checkpoint(dir / "t.msck"), FormatError);
}
