#include "microspot/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "microspot/errors.hpp"
#include "microspot/parallel.hpp"

namespace microspot {

std::vector<LosoFold> loso_folds(const std::vector<VideoRef>& videos) {
    std::map<std::string, std::vector<std::string>> by_subject;
    for (const auto& v : videos) by_subject[v.subject_id].push_back(v.video_id);
    if (by_subject.size() < 2) {
        throw ValidationError("leave-one-subject-out needs at least 2 subjects, found " +
                              std::to_string(by_subject.size()));
    }
    std::vector<LosoFold> folds;
    for (const auto& [subject, tests] : by_subject) {
        LosoFold fold;
        fold.held_out_subject = subject;
        fold.test_videos = tests;
        for (const auto& v : videos) {
            if (v.subject_id != subject) fold.train_videos.push_back(v.video_id);
        }
        folds.push_back(std::move(fold));
    }
    return folds;
}

MatchResult match_detections(const std::vector<Detection>& kept, const std::vector<GroundTruthEntry>& ground_truth) {
    for (std::size_t i = 0; i < kept.size(); ++i) {
        for (std::size_t j = i + 1; j < kept.size(); ++j) {
            if (kept[i].window.video_id == kept[j].window.video_id &&
                kept[i].window.interval().intersects(kept[j].window.interval())) {
                throw ContractViolation("match_detections: input detections overlap; apply nms first");
            }
        }
    }
    std::vector<std::size_t> order(kept.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (kept[a].confidence != kept[b].confidence) return kept[a].confidence > kept[b].confidence;
        return kept[a].window.start < kept[b].window.start;
    });

    MatchResult result;
    std::vector<bool> used(ground_truth.size(), false);
    for (std::size_t d : order) {
        const auto& det = kept[d];
        std::optional<std::size_t> best;
        double best_ratio = 0.0;
        for (std::size_t g = 0; g < ground_truth.size(); ++g) {
            if (used[g] || ground_truth[g].video_id != det.window.video_id) continue;
            const double ratio = overlap_ratio(det.window.interval(), ground_truth[g].interval());
            if (ratio >= kCoverageThreshold && ratio > best_ratio) {
                best = g;
                best_ratio = ratio;
            }
        }
        if (best) {
            used[*best] = true;
            ++result.tp;
            result.matches.emplace_back(d, *best);
        } else {
            ++result.fp;
        }
    }
    result.fn = static_cast<std::int64_t>(ground_truth.size()) - result.tp;
    return result;
}

Metrics metrics(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    Metrics m;
    if (tp + fn > 0) {
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    } else {
        m.recall_degenerate = true;
    }
    if (tp + fp > 0) {
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    } else {
        m.precision_degenerate = true;
    }
    if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) throw ValidationError("roc: scores and labels differ in length");
    const auto positives = std::count(labels.begin(), labels.end(), true);
    const auto negatives = static_cast<std::int64_t>(labels.size()) - positives;
    if (positives == 0 || negatives == 0) throw ValidationError("roc: both classes must be present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<RocPoint> curve;
    curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::int64_t tp = 0, fp = 0;
    for (std::size_t k = 0; k < order.size();) {
        const double threshold = scores[order[k]];
        while (k < order.size() && scores[order[k]] == threshold) {
            (labels[order[k]] ? tp : fp) += 1;
            ++k;
        }
        curve.push_back({threshold, static_cast<double>(fp) / static_cast<double>(negatives),
                         static_cast<double>(tp) / static_cast<double>(positives)});
    }
    return curve;
}

double auc(const std::vector<RocPoint>& curve) {
    double area = 0.0;
    for (std::size_t k = 1; k < curve.size(); ++k) {
        area += (curve[k].fpr - curve[k - 1].fpr) * (curve[k].tpr + curve[k - 1].tpr) / 2.0;
    }
    return area;
}

std::vector<LabeledSample> training_samples(const std::vector<const VideoFeatures*>& videos,
                                            const std::vector<GroundTruthEntry>& ground_truth) {
    std::vector<LabeledSample> samples;
    for (const auto* video : videos) {
        std::vector<WindowInterval> windows;
        for (const auto& s : video->sequences) windows.push_back(s.window);
        const auto labeled = label_windows(windows, ground_truth);
        for (std::size_t k = 0; k < labeled.size(); ++k) {
            samples.push_back({to_sequence(video->sequences[k]), labeled[k].label ? 1 : 0, 1.0});
        }
    }
    return samples;
}

namespace {

struct FoldOutcome {
    FoldReport report;
    std::vector<PooledWindow> windows;
    std::vector<Detection> kept;
};

FoldOutcome run_fold(const LosoFold& fold, const std::vector<VideoFeatures>& videos,
                     const std::vector<GroundTruthEntry>& ground_truth, const EvalConfig& config) {
    std::map<std::string, const VideoFeatures*> by_id;
    for (const auto& v : videos) by_id[v.video_id] = &v;

    FoldOutcome out;
    out.report.fold = fold;
    std::vector<const VideoFeatures*> train_videos;
    std::set<std::string> train_subjects;
    for (const auto& id : fold.train_videos) {
        train_videos.push_back(by_id.at(id));
        train_subjects.insert(by_id.at(id)->subject_id);
    }
    out.report.train_subjects.assign(train_subjects.begin(), train_subjects.end());

    const auto samples = training_samples(train_videos, ground_truth);
    out.report.train_windows = static_cast<std::int64_t>(samples.size());
    const std::int64_t dims = videos.front().dims;
    LstmModel model = LstmModel::initialize(static_cast<int>(dims), config.hidden, config.model_seed);
    const auto trained = train(model, samples, config.adam, config.train);
    out.report.final_loss = trained.loss_history.back();

    for (const auto& id : fold.test_videos) {
        const auto& video = *by_id.at(id);
        std::vector<GroundTruthEntry> video_gt;
        for (const auto& g : ground_truth) {
            if (g.video_id == id) video_gt.push_back(g);
        }
        const auto scored = score_windows(video, model);
        std::vector<WindowInterval> windows;
        for (const auto& d : scored) windows.push_back(d.window);
        const auto labeled = label_windows(windows, video_gt);
        for (std::size_t k = 0; k < scored.size(); ++k) {
            out.windows.push_back({id, scored[k].window.start, scored[k].window.end, scored[k].confidence,
                                   labeled[k].label});
        }
        const auto kept = nms(threshold_detections(scored, config.threshold));
        const auto match = match_detections(kept, video_gt);
        out.report.tp += match.tp;
        out.report.fp += match.fp;
        out.report.fn += match.fn;
        out.report.ground_truth += static_cast<std::int64_t>(video_gt.size());
        out.report.test_windows += static_cast<std::int64_t>(scored.size());
        out.kept.insert(out.kept.end(), kept.begin(), kept.end());
    }
    return out;
}

} // namespace

EvalReport run_loso_evaluation(const std::vector<VideoFeatures>& videos,
                               const std::vector<GroundTruthEntry>& ground_truth, const EvalConfig& config) {
    if (videos.empty()) throw ValidationError("evaluation: no videos");
    std::vector<VideoRef> refs;
    for (const auto& v : videos) refs.push_back({v.video_id, v.subject_id});
    const auto folds = loso_folds(refs);

    std::vector<FoldOutcome> outcomes(folds.size());
    parallel_for(folds.size(), config.jobs,
                 [&](std::size_t i) { outcomes[i] = run_fold(folds[i], videos, ground_truth, config); });

    EvalReport report;
    report.threshold = config.threshold;
    std::vector<double> scores;
    std::vector<bool> labels;
    for (auto& o : outcomes) {
        report.tp += o.report.tp;
        report.fp += o.report.fp;
        report.fn += o.report.fn;
        for (const auto& w : o.windows) {
            scores.push_back(w.confidence);
            labels.push_back(w.label);
        }
        report.windows.insert(report.windows.end(), o.windows.begin(), o.windows.end());
        report.kept_detections.insert(report.kept_detections.end(), o.kept.begin(), o.kept.end());
        report.folds.push_back(std::move(o.report));
    }
    report.summary = metrics(report.tp, report.fp, report.fn);
    const bool both = std::find(labels.begin(), labels.end(), true) != labels.end() &&
                      std::find(labels.begin(), labels.end(), false) != labels.end();
    if (both) {
        report.roc = roc_curve(scores, labels);
        report.roc_auc = auc(report.roc);
    }
    return report;
}

nlohmann::json to_json(const EvalReport& report) {
    using nlohmann::json;
    json doc;
    doc["tp"] = report.tp;
    doc["fp"] = report.fp;
    doc["fn"] = report.fn;
    doc["recall"] = report.summary.recall;
    doc["precision"] = report.summary.precision;
    doc["f1"] = report.summary.f1;
    doc["recall_degenerate"] = report.summary.recall_degenerate;
    doc["precision_degenerate"] = report.summary.precision_degenerate;
    doc["threshold"] = report.threshold;
    doc["roc_auc"] = report.roc_auc;
    doc["folds"] = json::array();
    for (const auto& f : report.folds) {
        doc["folds"].push_back({{"held_out_subject", f.fold.held_out_subject},
                                {"train_videos", f.fold.train_videos},
                                {"test_videos", f.fold.test_videos},
                                {"train_subjects", f.train_subjects},
                                {"train_windows", f.train_windows},
                                {"test_windows", f.test_windows},
                                {"ground_truth", f.ground_truth},
                                {"tp", f.tp},
                                {"fp", f.fp},
                                {"fn", f.fn},
                                {"final_loss", f.final_loss}});
    }
    doc["detections"] = json::array();
    for (const auto& d : report.kept_detections) {
        doc["detections"].push_back({{"video", d.window.video_id},
                                     {"start", d.window.start},
                                     {"end", d.window.end},
                                     {"confidence", d.confidence}});
    }
    return doc;
}

void write_report(const std::filesystem::path& dir, const EvalReport& report) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "report.json");
        if (!out) throw LoadError("cannot write file: " + (dir / "report.json").string());
        out << to_json(report).dump(2) << '\n';
    }
    {
        std::ofstream out(dir / "metrics.csv");
        out.precision(17);
        out << "tp,fp,fn,recall,precision,f1,roc_auc\n";
        out << report.tp << ',' << report.fp << ',' << report.fn << ',' << report.summary.recall << ','
            << report.summary.precision << ',' << report.summary.f1 << ',' << report.roc_auc << '\n';
    }
    {
        std::ofstream out(dir / "roc.csv");
        out.precision(17);
        out << "threshold,fpr,tpr\n";
        for (const auto& p : report.roc) out << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
    }
}

} // namespace microspot
