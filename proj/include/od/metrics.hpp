#pragma once

// Evaluation: argmax accuracy with a full confusion matrix, the three-way
// condition comparison (anchor only / anchor + vanilla auxiliary / anchor +
// distilled) with a per-epoch cost report, and the pattern probe that trains
// a fresh classifier on pooled distillation snapshots.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "od/data.hpp"
#include "od/distill.hpp"
#include "od/errors.hpp"
#include "od/model.hpp"
#include "od/rng.hpp"
#include "od/selection.hpp" // format_distance for record fields
#include "od/tensor.hpp"

namespace od {

// ---------------------------------------------------------------------------
// Point evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
    double accuracy = 0.0;
    std::vector<double> per_class;               // diagonal / row sum; 0 for absent classes
    std::vector<std::vector<int64_t>> confusion; // [true][predicted]
    int64_t count = 0;
    double seconds = 0.0;

    int64_t row_sum(int k) const {
        int64_t s = 0;
        for (int64_t v : confusion[size_t(k)]) s += v;
        return s;
    }
    int64_t trace() const {
        int64_t s = 0;
        for (size_t k = 0; k < confusion.size(); ++k) s += confusion[k][k];
        return s;
    }
};

// Ties in the argmax resolve to the lowest class index.
template <class S>
int argmax_row(const TensorT<S>& t, int64_t row) {
    const int64_t m = t.cols();
    int best = 0;
    for (int64_t j = 1; j < m; ++j)
        if (t.at2(row, j) > t.at2(row, best)) best = int(j);
    return best;
}

template <class S>
std::vector<int> predict_labels(const ModelParamsT<S>& params, const LabeledDataset& data) {
    const size_t chunk = 256;
    std::vector<int> out;
    out.reserve(data.size());
    for (size_t start = 0; start < data.size(); start += chunk) {
        const size_t b = std::min(chunk, data.size() - start);
        std::vector<size_t> idx(b);
        for (size_t i = 0; i < b; ++i) idx[i] = start + i;
        TensorT<S> conf = class_confidence(params, stack_batch<S>(data.images, idx));
        for (size_t i = 0; i < b; ++i) out.push_back(argmax_row(conf, int64_t(i)));
    }
    return out;
}

template <class S>
EvalReport evaluate(const ModelParamsT<S>& params, const LabeledDataset& data) {
    validate_dataset(data);
    if (data.m != params.arch.num_classes)
        throw Error("evaluate: dataset has " + std::to_string(data.m) +
                    " classes, model expects " + std::to_string(params.arch.num_classes));
    const auto t0 = std::chrono::steady_clock::now();
    const int m = data.m;
    EvalReport report;
    report.confusion.assign(size_t(m), std::vector<int64_t>(size_t(m), 0));
    report.count = int64_t(data.size());

    std::vector<int> pred = predict_labels(params, data);
    for (size_t i = 0; i < data.size(); ++i)
        report.confusion[size_t(data.labels[i])][size_t(pred[i])]++;

    report.accuracy = double(report.trace()) / double(report.count);
    report.per_class.assign(size_t(m), 0.0);
    for (int k = 0; k < m; ++k) {
        int64_t row = report.row_sum(k);
        if (row > 0) report.per_class[size_t(k)] = double(report.confusion[size_t(k)][size_t(k)]) / double(row);
    }
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    report.seconds = dt.count();
    return report;
}

// ---------------------------------------------------------------------------
// Structured report records
// ---------------------------------------------------------------------------

struct ReportRecord {
    std::string condition;
    uint64_t seed = 0;
    int epoch = 0;
    std::string split;
    double accuracy = 0.0;
    double seconds = 0.0;
};

inline std::string format_record(const ReportRecord& r) {
    std::ostringstream os;
    os << "condition=" << r.condition << " seed=" << r.seed << " epoch=" << r.epoch
       << " split=" << r.split << " accuracy=" << format_distance(r.accuracy)
       << " seconds=" << format_distance(r.seconds);
    return os.str();
}

// ---------------------------------------------------------------------------
// Condition comparison with cost report
// ---------------------------------------------------------------------------

inline LabeledDataset union_datasets(const LabeledDataset& a, const LabeledDataset& b) {
    if (b.size() == 0) {
        LabeledDataset u = a;
        return u;
    }
    if (a.m != b.m)
        throw Error("union: class counts differ (" + std::to_string(a.m) + " vs " +
                    std::to_string(b.m) + ")");
    if (uniform_image_shape(a.images) != uniform_image_shape(b.images))
        throw ShapeError("union: image shapes differ");
    LabeledDataset u = a;
    u.images.insert(u.images.end(), b.images.begin(), b.images.end());
    u.labels.insert(u.labels.end(), b.labels.begin(), b.labels.end());
    u.name = a.name + "+" + b.name;
    return u;
}

struct ConditionResult {
    std::string condition;
    int64_t train_size = 0;
    std::vector<double> accuracies; // one per seed
    double mean_accuracy = 0.0;
    double sd_accuracy = 0.0;
    double mean_seconds_per_epoch = 0.0;
    double median_seconds_per_epoch = 0.0;
};

struct CostReport {
    // median seconds per epoch pooled over seeds, plus training-set sizes
    double baseline_spe = 0.0, vas_spe = 0.0, das_spe = 0.0;
    int64_t baseline_size = 0, vas_size = 0, das_size = 0;
};

struct CompareResult {
    std::vector<ConditionResult> conditions; // baseline, vas, das in that order
    CostReport cost;
    std::vector<ReportRecord> records; // one per condition x seed, final-epoch accuracy
};

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw Error("median of empty sample");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(var / double(v.size() - 1)) : 0.0;
}

// Trains under three conditions — anchor only ("baseline"), anchor plus the
// vanilla auxiliary set ("vas"), anchor plus the distilled set ("das") — one
// fresh model per seed, and evaluates each on the test set. Timings pool all
// epoch durations of a condition across seeds; the median damps warm-up
// jitter (the first epoch compiles the step graphs). The das condition is
// timed immediately after the baseline: both are near-anchor-sized, and
// running the much larger vas between them would leave the allocator in a
// different state for das than the baseline saw, skewing the cost ratio.
// Reported order stays baseline, vas, das regardless.
inline CompareResult compare_conditions(const LabeledDataset& anchor, const LabeledDataset& test,
                                        const LabeledDataset& vas, const LabeledDataset& das,
                                        const Architecture& arch, const TrainConfig& cfg,
                                        const std::vector<uint64_t>& seeds) {
    if (seeds.size() < 3) throw ConfigError("compare: need at least 3 seeds");
    arch.validate();
    struct Cond {
        const char* name;
        LabeledDataset data;
    };
    std::vector<Cond> conds;
    conds.push_back({"baseline", anchor});
    conds.push_back({"das", union_datasets(anchor, das)});
    conds.push_back({"vas", union_datasets(anchor, vas)});

    std::map<std::string, ConditionResult> measured;
    std::map<std::string, std::vector<ReportRecord>> measured_records;
    for (const Cond& c : conds) {
        ConditionResult cr;
        cr.condition = c.name;
        cr.train_size = int64_t(c.data.size());
        std::vector<double> all_epoch_seconds;
        for (uint64_t seed : seeds) {
            ModelParamsT<float> params =
                init_params(arch, derive_seed(seed, "final-init"));
            TrainConfig tc = cfg;
            tc.seed = seed;
            std::vector<double> epoch_seconds;
            train_classifier(params, c.data, tc, &epoch_seconds);
            all_epoch_seconds.insert(all_epoch_seconds.end(), epoch_seconds.begin(),
                                     epoch_seconds.end());
            EvalReport er = evaluate(params, test);
            cr.accuracies.push_back(er.accuracy);
            ReportRecord rec;
            rec.condition = c.name;
            rec.seed = seed;
            rec.epoch = cfg.epochs;
            rec.split = "test";
            rec.accuracy = er.accuracy;
            rec.seconds = median_of(epoch_seconds);
            measured_records[c.name].push_back(rec);
        }
        mean_sd(cr.accuracies, cr.mean_accuracy, cr.sd_accuracy);
        double sum = 0.0;
        for (double s : all_epoch_seconds) sum += s;
        cr.mean_seconds_per_epoch = sum / double(all_epoch_seconds.size());
        cr.median_seconds_per_epoch = median_of(all_epoch_seconds);
        measured[c.name] = std::move(cr);
    }

    CompareResult result;
    for (const char* name : {"baseline", "vas", "das"}) {
        result.conditions.push_back(std::move(measured[name]));
        for (ReportRecord& rec : measured_records[name]) result.records.push_back(std::move(rec));
    }
    result.cost.baseline_spe = result.conditions[0].median_seconds_per_epoch;
    result.cost.vas_spe = result.conditions[1].median_seconds_per_epoch;
    result.cost.das_spe = result.conditions[2].median_seconds_per_epoch;
    result.cost.baseline_size = result.conditions[0].train_size;
    result.cost.vas_size = result.conditions[1].train_size;
    result.cost.das_size = result.conditions[2].train_size;
    return result;
}

// ---------------------------------------------------------------------------
// Pattern probe
// ---------------------------------------------------------------------------

struct ProbeResult {
    std::vector<double> curve; // per-epoch test accuracy
    double final_accuracy = 0.0;
    int64_t train_size = 0;
    int64_t test_size = 0;
    std::vector<ReportRecord> records; // one per epoch, test split
};

// Pools every snapshot's images under the snapshot labels, splits 5:1, and
// trains a fresh probe classifier, recording test accuracy after each epoch.
// Six snapshots of an m-class run give 6m images and an (5m, m) split.
inline ProbeResult pattern_probe(const std::vector<DistilledSet>& snapshots,
                                 const Architecture& probe_arch, const TrainConfig& cfg) {
    if (snapshots.size() < 6)
        throw Error("probe: need at least 6 snapshots, got " + std::to_string(snapshots.size()));
    probe_arch.validate();
    const std::vector<int>& labels = snapshots[0].labels;
    const Shape shape = uniform_image_shape(snapshots[0].images);
    for (const DistilledSet& s : snapshots) {
        if (s.labels != labels) throw Error("probe: snapshots disagree on labels");
        if (uniform_image_shape(s.images) != shape)
            throw ShapeError("probe: snapshots disagree on image shape");
    }

    LabeledDataset pool;
    pool.m = probe_arch.num_classes;
    pool.name = "snapshots";
    for (int k = 0; k < pool.m; ++k) pool.class_names.push_back("class" + std::to_string(k));
    for (const DistilledSet& s : snapshots) {
        pool.images.insert(pool.images.end(), s.images.begin(), s.images.end());
        for (int y : s.labels) {
            if (y < 0 || y >= pool.m)
                throw Error("probe: snapshot label " + std::to_string(y) +
                            " outside probe classes [0, " + std::to_string(pool.m) + ")");
            pool.labels.push_back(y);
        }
    }
    for (int k = 0; k < pool.m; ++k) {
        if (std::count(pool.labels.begin(), pool.labels.end(), k) == 0) throw EmptyClassError(k);
    }

    auto [train_set, test_set] = split(pool, SplitRatio{5, 1}, derive_seed(cfg.seed, "probe-split"));
    if (int64_t(test_set.size()) < int64_t(pool.m))
        throw Error("probe: test split has " + std::to_string(test_set.size()) +
                    " images, fewer than " + std::to_string(pool.m) + " classes");

    ProbeResult result;
    result.train_size = int64_t(train_set.size());
    result.test_size = int64_t(test_set.size());

    ModelParamsT<float> params = init_params(probe_arch, derive_seed(cfg.seed, "probe-init"));
    std::vector<double> epoch_seconds;
    train_classifier<float>(params, train_set, cfg, &epoch_seconds,
                            [&](int epoch, const ModelParamsT<float>& p) {
                                EvalReport er = evaluate(p, test_set);
                                result.curve.push_back(er.accuracy);
                                ReportRecord rec;
                                rec.condition = "probe";
                                rec.seed = cfg.seed;
                                rec.epoch = epoch;
                                rec.split = "test";
                                rec.accuracy = er.accuracy;
                                rec.seconds = epoch_seconds[size_t(epoch)];
                                result.records.push_back(rec);
                            });
    result.final_accuracy = result.curve.empty() ? 0.0 : result.curve.back();
    return result;
}

} // namespace od
