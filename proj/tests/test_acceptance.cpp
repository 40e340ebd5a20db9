// Shipping gate: one test per release criterion, in order. Every test prints a
// single "[CRITERION n] PASS/FAIL - ..." line with the measured quantities so
// the run log doubles as the acceptance report. Tolerances, budgets, and seeds
// are pinned here and nowhere else; loosening them is a release decision, not
// a test edit.
//
// Oracle discipline: criteria 1-4 verify library gradients and selection
// against independent re-implementations written in this file (central finite
// differences, a scalar brute-force distance scan, a two-pass mean).
// Criteria 5-8 are end-to-end efficacy runs with fixed data generators and
// seeds. Criterion 9 drives the installed command-line binary and its verify
// subcommand against a full pipeline workspace.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "od/pipeline.hpp"

namespace fs = std::filesystem;
using namespace od;

namespace {

class Stopwatch {
  public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

  private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

void report(int criterion, bool ok, const std::string& detail) {
    std::printf("[CRITERION %d] %s - %s\n", criterion, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

LabeledDataset make_blobs(int m, int per_class, int side, double noise, uint64_t seed) {
    SyntheticSpec spec;
    spec.kind = GeneratorKind::GaussianBlobs;
    spec.m = m;
    spec.per_class = per_class;
    spec.height = side;
    spec.width = side;
    spec.base_noise = noise;
    spec.seed = seed;
    return make_synthetic(spec).anchor;
}

SyntheticResult make_shifted(int m, int pool_per_class, int side, double noise, double brightness,
                             uint64_t seed) {
    SyntheticSpec spec;
    spec.kind = GeneratorKind::ShiftedDomain;
    spec.m = m;
    spec.per_class = 1;
    spec.pool_per_class = pool_per_class;
    spec.height = side;
    spec.width = side;
    spec.base_noise = noise;
    spec.brightness = brightness;
    spec.seed = seed;
    return make_synthetic(spec);
}

// Pool draw re-labeled by the generator's ground truth: the cross-domain test
// bench for the final-learner comparisons.
LabeledDataset make_shifted_test(int m, int per_class, int side, double noise, double brightness,
                                 uint64_t seed) {
    SyntheticResult res = make_shifted(m, per_class, side, noise, brightness, seed);
    LabeledDataset test;
    test.m = m;
    test.name = "shifted-test";
    for (int k = 0; k < m; ++k) test.class_names.push_back("class" + std::to_string(k));
    test.images = res.pool.images;
    test.labels = res.pool_true_labels;
    return test;
}

} // namespace

// ---------------------------------------------------------------------------
// Criterion 1 - training-loss gradients vs central finite differences.
// 200 random (model, batch) pairs, all arithmetic in 64-bit; every parameter
// gradient of the mean cross-entropy must agree with the finite-difference
// estimate to a max relative error below 1e-4, inside one minute.
// ---------------------------------------------------------------------------

namespace {

// Central differences are only a valid derivative estimate when no relu
// pre-activation sits inside the +-eps probe window (a straddled kink turns
// the two-sided difference into garbage without any gradient being wrong).
// This guard recomputes the dense chain in plain code from forward values
// alone — it never looks at gradient agreement, so it cannot mask a real
// autodiff defect; it only rejects ill-posed probe instances.
bool relu_margins_clear(const Architecture& arch, const ModelParamsT<double>& params,
                        const Tensor64& bx, double margin) {
    const int64_t batch = bx.shape[0];
    std::vector<double> h(bx.data);
    int64_t in = arch.input_dim();
    const size_t relu_layers = params.layers.size() / 2 - 1; // classifier has no relu
    for (size_t l = 0; l < relu_layers; ++l) {
        const Tensor64& w = params.layers[2 * l];      // {in, out}
        const Tensor64& b = params.layers[2 * l + 1];  // {out}
        const int64_t out = w.shape[1];
        std::vector<double> next(size_t(batch * out), 0.0);
        for (int64_t r = 0; r < batch; ++r)
            for (int64_t j = 0; j < out; ++j) {
                double z = b.data[size_t(j)];
                for (int64_t k = 0; k < in; ++k)
                    z += h[size_t(r * in + k)] * w.data[size_t(k * out + j)];
                if (std::abs(z) < margin) return false;
                next[size_t(r * out + j)] = std::max(z, 0.0);
            }
        h = std::move(next);
        in = out;
    }
    return true;
}

} // namespace

TEST(Criterion1, TrainingGradientsMatchFiniteDifferences) {
    Stopwatch watch;
    const int cases = 200;
    const double eps = 1e-6;
    double worst = 0.0;
    int skipped = 0;

    for (int i = 0, attempt = 0; i < cases; ++attempt) {
        Rng rig(derive_seed(1001, "c1-case", uint64_t(attempt)));
        Architecture arch;
        arch.height = 2 + int(rig.uniform_index(2));
        arch.width = 2 + int(rig.uniform_index(2));
        arch.channels = 1;
        if (rig.uniform_index(2) == 1)
            arch.hidden_widths = {2 + int(rig.uniform_index(3))};
        arch.num_classes = 2 + int(rig.uniform_index(2));
        arch.feature_dim = arch.num_classes + int(rig.uniform_index(3));
        const int64_t batch = 1 + int64_t(rig.uniform_index(6));

        ModelParamsT<double> params =
            init_params_t<double>(arch, derive_seed(1002, "c1-params", uint64_t(attempt)));
        Tensor64 bx({batch, arch.height, arch.width, arch.channels});
        for (double& v : bx.data) v = rig.uniform();
        Tensor64 by({batch});
        for (double& v : by.data) v = double(rig.uniform_index(uint64_t(arch.num_classes)));

        if (!relu_margins_clear(arch, params, bx, 64.0 * eps)) {
            ++skipped;
            ASSERT_LT(skipped, 100) << "relu-margin guard rejected an implausible share of cases";
            continue;
        }
        ++i;

        detail::CompiledStep<double> step(arch, batch);
        ad::Bindings64 bindings;
        for (size_t l = 0; l < params.layers.size(); ++l)
            bindings.bind(step.fwd.params[l], params.layers[l]);
        bindings.bind(step.fwd.input, bx).bind(step.labels, by);
        step.ev->run(bindings);

        for (size_t l = 0; l < params.layers.size(); ++l) {
            Tensor64 engine = step.ev->value(step.grads[l]);
            auto loss_at = [&](const Tensor64& p) {
                ad::Bindings64 b;
                for (size_t q = 0; q < params.layers.size(); ++q)
                    b.bind(step.fwd.params[q], q == l ? p : params.layers[q]);
                b.bind(step.fwd.input, bx).bind(step.labels, by);
                return ad::eval(step.g, step.loss, b).scalar();
            };
            Tensor64 fd = ad::finite_diff(loss_at, params.layers[l], eps);
            worst = std::max(worst, ad::max_rel_err(engine, fd));
        }
    }

    const double elapsed = watch.seconds();
    const bool ok = worst < 1e-4 && elapsed < 60.0;
    report(1, ok, fmt("%d random model/batch gradient checks (%d kink-straddling probes re-drawn), max rel err %.3g (limit 1e-4), %.1f s (limit 60 s)",
                      cases, skipped, worst, elapsed));
    EXPECT_LT(worst, 1e-4);
    EXPECT_LT(elapsed, 60.0);
}

// ---------------------------------------------------------------------------
// Criterion 2 - meta-gradients of the one-step objective vs finite
// differences. A 2-4-2 learner (two input pixels, four feature units, two
// classes), three distilled points, 20 seeds; both the distilled-image
// gradient and the step-size gradient must agree below 1e-4, inside a minute.
// ---------------------------------------------------------------------------

TEST(Criterion2, MetaGradientsMatchFiniteDifferences) {
    Stopwatch watch;
    Architecture arch;
    arch.height = 1;
    arch.width = 2;
    arch.channels = 1;
    arch.hidden_widths = {};
    arch.feature_dim = 4;
    arch.num_classes = 2;

    const int seeds = 20;
    double worst_x = 0.0, worst_eta = 0.0;
    for (int s = 0; s < seeds; ++s) {
        Rng rg(derive_seed(2001, "c2-case", uint64_t(s)));

        DistilledSet set;
        set.labels = {0, 1, 0};
        for (int i = 0; i < 3; ++i) {
            Tensor img({1, 2, 1});
            for (float& v : img.data) v = float(rg.uniform(-1.0, 1.0));
            set.images.push_back(img);
        }
        set.log_eta = std::log(rg.uniform(0.02, 0.4));

        std::vector<ModelParamsT<double>> theta0;
        for (int j = 0; j < 3; ++j)
            theta0.push_back(
                init_params_t<double>(arch, derive_seed(2002, "c2-draw", uint64_t(s * 8 + j))));

        LabeledDataset batch;
        batch.m = 2;
        batch.name = "meta-batch";
        batch.class_names = {"a", "b"};
        const int B = 4 + int(rg.uniform_index(4));
        for (int i = 0; i < B; ++i) {
            Tensor img({1, 2, 1});
            for (float& v : img.data) v = float(rg.uniform());
            batch.images.push_back(img);
            batch.labels.push_back(int(rg.uniform_index(2)));
        }

        MetaGradientCheck check = meta_gradient_check(set, theta0, batch, 1e-5);
        worst_x = std::max(worst_x, check.err_x);
        worst_eta = std::max(worst_eta, check.err_eta);
    }

    const double elapsed = watch.seconds();
    const bool ok = worst_x < 1e-4 && worst_eta < 1e-4 && elapsed < 60.0;
    report(2, ok, fmt("2-4-2 learner, 3 distilled points, %d seeds: image grad err %.3g, step-size grad err %.3g (limit 1e-4), %.1f s (limit 60 s)",
                      seeds, worst_x, worst_eta, elapsed));
    EXPECT_LT(worst_x, 1e-4);
    EXPECT_LT(worst_eta, 1e-4);
    EXPECT_LT(elapsed, 60.0);
}

// ---------------------------------------------------------------------------
// Criterion 3 - pseudo-label assignment vs a brute-force scan, plus margin
// monotonicity. 50 random pools (up to 500 samples, up to 5 classes), deltas
// {0, 0.02, 0.1}: decisions, labels, and distances must match a scalar
// re-implementation exactly, and raising delta must only shrink the admitted
// set. One minute budget.
// ---------------------------------------------------------------------------

namespace {

// Independent scalar admission: embeds the whole pool in one batch (feature
// rows are batch-independent), then scores each row with its own cosine code
// and the margin rule. Same arithmetic order as the shipped scan, so agreement
// is expected bit-for-bit.
struct OracleAdmission {
    bool admitted = false;
    int label = -1;
    double distance = 0.0;
};

std::vector<OracleAdmission> oracle_scan(const ModelParams& params,
                                         const std::vector<Tensor>& pool_images,
                                         const CentroidSet& centers, double delta) {
    std::vector<size_t> idx(pool_images.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Tensor feats = forward_features(params, stack_batch<float>(pool_images, idx));
    const int64_t d = feats.cols();
    const int m = int(centers.centers.rows());

    std::vector<OracleAdmission> out;
    for (int64_t i = 0; i < feats.rows(); ++i) {
        const float* row = feats.data.data() + i * d;
        bool zero = true;
        for (int64_t j = 0; j < d; ++j)
            if (row[j] != 0.0f) zero = false;
        if (zero) {
            out.push_back({});
            continue;
        }
        std::vector<double> dists(size_t(m), 0.0);
        for (int k = 0; k < m; ++k) {
            const float* c = centers.centers.data.data() + int64_t(k) * d;
            double dot = 0, na = 0, nb = 0;
            for (int64_t j = 0; j < d; ++j) {
                dot += double(row[j]) * double(c[j]);
                na += double(row[j]) * double(row[j]);
                nb += double(c[j]) * double(c[j]);
            }
            double cosv = dot / (std::sqrt(na) * std::sqrt(nb));
            dists[size_t(k)] = 1.0 - std::clamp(cosv, -1.0, 1.0);
        }
        size_t best = 0;
        for (size_t k = 1; k < dists.size(); ++k)
            if (dists[k] < dists[best]) best = k;
        double second = std::numeric_limits<double>::infinity();
        for (size_t k = 0; k < dists.size(); ++k)
            if (k != best && dists[k] < second) second = dists[k];
        OracleAdmission a;
        a.label = int(best);
        a.distance = dists[best];
        a.admitted = (second - dists[best] >= delta) && (second > dists[best]);
        out.push_back(a);
    }
    return out;
}

} // namespace

TEST(Criterion3, SelectionMatchesBruteForceScanAndIsMonotoneInDelta) {
    Stopwatch watch;
    const double deltas[] = {0.0, 0.02, 0.1};
    const int pools = 50;
    int64_t compared = 0;

    int degenerate = 0;
    for (int p = 0, attempt = 0; p < pools; ++attempt) {
        Rng rg(derive_seed(3001, "c3-pool", uint64_t(attempt)));
        const int m = 2 + int(rg.uniform_index(4));
        Architecture arch;
        arch.height = 2 + int(rg.uniform_index(2));
        arch.width = 2 + int(rg.uniform_index(2));
        arch.channels = 1;
        if (rg.uniform_index(2) == 1) arch.hidden_widths = {3};
        arch.num_classes = m;
        arch.feature_dim = m + int(rg.uniform_index(4));
        ModelParams params = init_params(arch, derive_seed(3002, "c3-params", uint64_t(attempt)));

        const int anchor_n = m * (2 + int(rg.uniform_index(3)));
        std::vector<Tensor> anchor_images;
        std::vector<int> anchor_labels;
        for (int i = 0; i < anchor_n; ++i) {
            Tensor img({arch.height, arch.width, 1});
            for (float& v : img.data) v = float(rg.uniform());
            anchor_images.push_back(img);
            anchor_labels.push_back(i % m);
        }
        std::vector<size_t> aidx(anchor_images.size());
        for (size_t i = 0; i < aidx.size(); ++i) aidx[i] = i;
        Tensor anchor_feats = forward_features(params, stack_batch<float>(anchor_images, aidx));
        CentroidSet centers =
            compute_centroids(anchor_feats, std::span<const int>(anchor_labels), m);

        // A centroid with no direction (every feature unit dead for a class)
        // is the library's declared degeneracy, not a scan instance; re-draw.
        bool zero_centroid = false;
        for (int k = 0; k < m && !zero_centroid; ++k) {
            bool all_zero = true;
            for (int64_t j = 0; j < centers.centers.cols(); ++j)
                if (centers.centers.at2(k, j) != 0.0f) all_zero = false;
            zero_centroid = all_zero;
        }
        if (zero_centroid) {
            ++degenerate;
            ASSERT_LT(degenerate, 100) << "implausible share of degenerate centroid draws";
            continue;
        }
        ++p;

        UnlabeledPool pool;
        const size_t n = 50 + rg.uniform_index(451);
        for (size_t i = 0; i < n; ++i) {
            Tensor img({arch.height, arch.width, 1});
            for (float& v : img.data) v = float(rg.uniform());
            pool.images.push_back(img);
            pool.source_ids.push_back(int64_t(i));
        }

        std::vector<std::set<int64_t>> admitted_by_delta;
        for (double delta : deltas) {
            SelectionConfig sc;
            sc.delta = delta;
            AuxiliaryDataset aux = assign_pseudo_labels(pool, params, centers, sc);
            std::vector<OracleAdmission> want = oracle_scan(params, pool.images, centers, delta);

            std::set<int64_t> admitted;
            size_t pos = 0;
            for (size_t i = 0; i < n; ++i) {
                if (!want[i].admitted) continue;
                ASSERT_LT(pos, aux.size()) << "pool " << p << " delta " << delta
                                           << ": scan admits fewer samples than the oracle";
                ASSERT_EQ(aux.source_ids[pos], int64_t(i))
                    << "pool " << p << " delta " << delta << ": admitted-id mismatch";
                ASSERT_EQ(aux.pseudo_labels[pos], want[i].label)
                    << "pool " << p << " delta " << delta << " sample " << i;
                ASSERT_EQ(aux.distances[pos], want[i].distance)
                    << "pool " << p << " delta " << delta << " sample " << i;
                admitted.insert(int64_t(i));
                ++pos;
                ++compared;
            }
            ASSERT_EQ(pos, aux.size())
                << "pool " << p << " delta " << delta << ": scan admits extra samples";
            admitted_by_delta.push_back(std::move(admitted));
        }

        for (size_t d = 1; d < admitted_by_delta.size(); ++d)
            for (int64_t id : admitted_by_delta[d])
                ASSERT_TRUE(admitted_by_delta[d - 1].count(id))
                    << "pool " << p << ": delta " << deltas[d]
                    << " admitted a sample that delta " << deltas[d - 1] << " rejected";
    }

    const double elapsed = watch.seconds();
    const bool ok = elapsed < 60.0;
    report(3, ok, fmt("%d random pools x 3 deltas: decisions, labels, and distances identical to the brute-force scan (%lld admissions, %d degenerate draws re-drawn), admission monotone in delta, %.1f s (limit 60 s)",
                      pools, (long long)compared, degenerate, elapsed));
    EXPECT_LT(elapsed, 60.0);
}

// ---------------------------------------------------------------------------
// Criterion 4 - centroids vs a two-pass mean. 100 random instances in 64-bit;
// the shipped single-pass accumulation must equal a count-then-sum oracle
// bit-for-bit (both add in sample-index order).
// ---------------------------------------------------------------------------

TEST(Criterion4, CentroidsMatchTwoPassMeanBitExactly) {
    Stopwatch watch;
    const int instances = 100;
    int64_t cells = 0;

    for (int t = 0; t < instances; ++t) {
        Rng rg(derive_seed(4001, "c4-case", uint64_t(t)));
        const int m = 1 + int(rg.uniform_index(6));
        const int64_t n = int64_t(m) + int64_t(rg.uniform_index(395));
        const int64_t d = 1 + int64_t(rg.uniform_index(32));

        Tensor64 features({n, d});
        for (double& v : features.data) v = rg.normal();
        std::vector<int> labels(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i)
            labels[size_t(i)] = i < m ? int(i) : int(rg.uniform_index(uint64_t(m)));

        CentroidSetT<double> got =
            compute_centroids<double>(features, std::span<const int>(labels), m);

        for (int k = 0; k < m; ++k) {
            int64_t count = 0;
            for (int64_t i = 0; i < n; ++i)
                if (labels[size_t(i)] == k) ++count;
            ASSERT_EQ(got.counts[size_t(k)], count) << "instance " << t << " class " << k;
            for (int64_t j = 0; j < d; ++j) {
                double sum = 0.0;
                for (int64_t i = 0; i < n; ++i)
                    if (labels[size_t(i)] == k) sum += features.at2(i, j);
                const double want = sum / double(count);
                ASSERT_EQ(got.centers.at2(k, j), want)
                    << "instance " << t << " class " << k << " component " << j;
                ++cells;
            }
        }
    }

    const double elapsed = watch.seconds();
    report(4, true, fmt("%d random instances: single-pass centroids equal the two-pass mean oracle bit-for-bit (%lld components), %.2f s",
                        instances, (long long)cells, elapsed));
}

// ---------------------------------------------------------------------------
// Criterion 5 - distillation efficacy. Three-class 8x8 blobs, 600 train / 300
// test; distill one image per class (T=2000, J=4, learned step size); across
// 20 fresh initializations the one-step learner from the distilled set must
// average at least 0.80 test accuracy and beat a paired control that swaps in
// one random real training image per class. Ten minute budget.
// ---------------------------------------------------------------------------

TEST(Criterion5, OneStepDistilledSetBeatsRealImageControl) {
    Stopwatch watch;
    LabeledDataset train = make_blobs(3, 200, 8, 0.3, 501);
    LabeledDataset test = make_blobs(3, 100, 8, 0.3, 502);
    ASSERT_EQ(train.size(), 600u);
    ASSERT_EQ(test.size(), 300u);

    Architecture arch;
    arch.height = 8;
    arch.width = 8;
    arch.channels = 1;
    arch.hidden_widths = {};
    arch.feature_dim = 32;
    arch.num_classes = 3;

    AuxiliaryDataset aux;
    aux.m = 3;
    aux.images = train.images;
    aux.pseudo_labels = train.labels;
    aux.distances.assign(train.size(), 0.0);
    for (size_t i = 0; i < train.size(); ++i) aux.source_ids.push_back(int64_t(i));

    DistillConfig dc;
    dc.n = 3;
    dc.eta0 = 0.05;
    dc.alpha = 0.1;
    dc.batch = 32;
    dc.iters = 2000;
    dc.weight_draws = 4;
    dc.seed = 7001;
    DistillResult res = distill(aux, arch, dc);
    ASSERT_EQ(res.set.size(), 3u);

    Rng pick(424242);
    const int inits = 20;
    double mean_distilled = 0.0, mean_real = 0.0;
    for (int i = 0; i < inits; ++i) {
        ModelParams theta0 = init_params(arch, derive_seed(9000, "c5-init", uint64_t(i)));
        mean_distilled += evaluate(inner_step(theta0, res.set), test).accuracy;

        DistilledSet control = res.set;
        for (int k = 0; k < 3; ++k) {
            for (;;) {
                size_t j = size_t(pick.uniform_index(train.size()));
                if (train.labels[j] == k) {
                    control.images[size_t(k)] = train.images[j];
                    break;
                }
            }
        }
        mean_real += evaluate(inner_step(theta0, control), test).accuracy;
    }
    mean_distilled /= inits;
    mean_real /= inits;

    const double elapsed = watch.seconds();
    const bool ok = mean_distilled >= 0.80 && mean_distilled > mean_real && elapsed < 600.0;
    report(5, ok, fmt("one-step over %d fresh inits: distilled %.4f (floor 0.80) vs real-image control %.4f, learned step size %.3f, %.1f s (limit 600 s)",
                      inits, mean_distilled, mean_real, res.set.eta(), elapsed));
    EXPECT_GE(mean_distilled, 0.80);
    EXPECT_GT(mean_distilled, mean_real);
    EXPECT_LT(elapsed, 600.0);
}

// ---------------------------------------------------------------------------
// Criterion 6 - full-pipeline gains under domain shift. A 150-sample anchor
// (ten classes, 16x16 blobs) plus a 3000-sample brightness-shifted pool;
// pseudo-label with margin 0.02, distill one image per class, then train
// final learners under five shared seeds. Both the distilled set and the
// vanilla auxiliary set must beat the anchor-only baseline on the
// shifted-domain test by more than one pooled standard deviation. Twenty
// minute budget.
// ---------------------------------------------------------------------------

TEST(Criterion6, DistilledAndVanillaAuxiliarySetsBeatBaselineUnderShift) {
    Stopwatch watch;
    const int m = 10, side = 16;
    const double noise = 0.7, brightness = 0.1;

    LabeledDataset anchor = make_blobs(m, 15, side, noise, 602);
    UnlabeledPool pool = make_shifted(m, 300, side, noise, brightness, 601).pool;
    LabeledDataset test = make_shifted_test(m, 200, side, noise, brightness, 603);
    ASSERT_EQ(anchor.size(), 150u);
    ASSERT_EQ(pool.size(), 3000u);

    Architecture arch;
    arch.height = side;
    arch.width = side;
    arch.channels = 1;
    arch.hidden_widths = {};
    arch.feature_dim = 32;
    arch.num_classes = m;

    TrainConfig tc;
    tc.learning_rate = 0.05;
    tc.epochs = 30;
    tc.batch_size = 16;
    tc.flip_prob = 0.0;

    ModelParams primitive = init_params(arch, derive_seed(11, "train-init"));
    TrainConfig ptc = tc;
    ptc.seed = derive_seed(11, "train");
    train_classifier(primitive, anchor, ptc);

    Tensor anchor_feats = pipe::embed_images(primitive, anchor.images);
    CentroidSet centers =
        compute_centroids(anchor_feats, std::span<const int>(anchor.labels), m);
    SelectionConfig sc;
    sc.delta = 0.02;
    AuxiliaryDataset aux = assign_pseudo_labels(pool, primitive, centers, sc);

    DistillConfig dc;
    dc.n = m;
    dc.eta0 = 0.3;
    dc.alpha = 0.2;
    dc.batch = 64;
    dc.iters = 2000;
    dc.weight_draws = 8;
    dc.seed = 7007;
    DistillResult res = distill(aux, arch, dc);

    LabeledDataset vas = aux_to_dataset(aux);
    LabeledDataset das = distilled_to_dataset(res.set, m);
    std::vector<uint64_t> seeds;
    for (int i = 0; i < 5; ++i) seeds.push_back(derive_seed(11, "compare", uint64_t(i)));
    CompareResult cr = compare_conditions(anchor, test, vas, das, arch, tc, seeds);

    const ConditionResult& base = cr.conditions[0];
    const ConditionResult& vas_r = cr.conditions[1];
    const ConditionResult& das_r = cr.conditions[2];
    auto pooled_sd = [&](const ConditionResult& c) {
        return std::sqrt(0.5 * (base.sd_accuracy * base.sd_accuracy +
                                c.sd_accuracy * c.sd_accuracy));
    };
    const double vas_margin = vas_r.mean_accuracy - base.mean_accuracy;
    const double das_margin = das_r.mean_accuracy - base.mean_accuracy;
    const double vas_bar = pooled_sd(vas_r);
    const double das_bar = pooled_sd(das_r);

    const double elapsed = watch.seconds();
    const bool ok = vas_margin > vas_bar && das_margin > das_bar && elapsed < 1200.0;
    report(6, ok, fmt("5-seed shifted-domain comparison (baseline %.4f): vanilla margin %.4f > pooled sd %.4f; distilled margin %.4f > pooled sd %.4f; %ld admitted; %.0f s (limit 1200 s)",
                      base.mean_accuracy, vas_margin, vas_bar, das_margin, das_bar,
                      long(aux.size()), elapsed));
    EXPECT_GT(vas_margin, vas_bar);
    EXPECT_GT(das_margin, das_bar);
    EXPECT_LT(elapsed, 1200.0);
}

// ---------------------------------------------------------------------------
// Criterion 7 - near-zero added cost. With a vanilla auxiliary set at least
// ten times the anchor and a distilled set of exactly one image per class,
// median seconds per epoch must stay within 1.1x the anchor-only baseline for
// the distilled condition and reach at least 5x for the vanilla condition.
// Sized so an epoch is tens of milliseconds and the medians are stable. Ten
// minute budget.
// ---------------------------------------------------------------------------

TEST(Criterion7, DistilledTrainingCostsNearBaselineVanillaCostsMultiples) {
    Stopwatch watch;
    const int m = 3, side = 32;
    const double noise = 0.3, brightness = 0.05;

    LabeledDataset anchor = make_blobs(m, 100, side, noise, 602);
    UnlabeledPool pool = make_shifted(m, 1000, side, noise, brightness, 601).pool;
    LabeledDataset test = make_shifted_test(m, 50, side, noise, brightness, 603);

    Architecture arch;
    arch.height = side;
    arch.width = side;
    arch.channels = 1;
    arch.hidden_widths = {128};
    arch.feature_dim = 32;
    arch.num_classes = m;

    TrainConfig tc;
    tc.learning_rate = 0.05;
    tc.epochs = 40;
    tc.batch_size = 32;
    tc.flip_prob = 0.0;

    ModelParams primitive = init_params(arch, derive_seed(11, "train-init"));
    TrainConfig ptc = tc;
    ptc.seed = derive_seed(11, "train");
    train_classifier(primitive, anchor, ptc);

    Tensor anchor_feats = pipe::embed_images(primitive, anchor.images);
    CentroidSet centers =
        compute_centroids(anchor_feats, std::span<const int>(anchor.labels), m);
    SelectionConfig sc;
    sc.delta = 0.0;
    AuxiliaryDataset aux = assign_pseudo_labels(pool, primitive, centers, sc);
    ASSERT_GE(aux.size(), 10 * anchor.size()) << "vanilla auxiliary set must be >= 10x anchor";

    DistillConfig dc;
    dc.n = m;
    dc.eta0 = 0.05;
    dc.alpha = 0.1;
    dc.batch = 32;
    dc.iters = 50;
    dc.weight_draws = 4;
    dc.seed = 7007;
    DistillResult res = distill(aux, arch, dc);
    ASSERT_EQ(res.set.size(), size_t(m)) << "distilled set must be exactly one image per class";

    LabeledDataset vas = aux_to_dataset(aux);
    LabeledDataset das = distilled_to_dataset(res.set, m);
    std::vector<uint64_t> seeds;
    for (int i = 0; i < 5; ++i) seeds.push_back(derive_seed(11, "compare", uint64_t(i)));
    CompareResult cr = compare_conditions(anchor, test, vas, das, arch, tc, seeds);

    const double das_ratio = cr.cost.das_spe / cr.cost.baseline_spe;
    const double vas_ratio = cr.cost.vas_spe / cr.cost.baseline_spe;

    const double elapsed = watch.seconds();
    const bool ok = das_ratio <= 1.1 && vas_ratio >= 5.0 && elapsed < 600.0;
    report(7, ok, fmt("median s/epoch baseline %.4f: distilled ratio %.3f (ceiling 1.1), vanilla ratio %.2f (floor 5.0), sizes %ld/%ld/%ld, %.0f s (limit 600 s)",
                      cr.cost.baseline_spe, das_ratio, vas_ratio, long(cr.cost.baseline_size),
                      long(cr.cost.vas_size), long(cr.cost.das_size), elapsed));
    EXPECT_LE(das_ratio, 1.1);
    EXPECT_GE(vas_ratio, 5.0);
    EXPECT_LT(elapsed, 600.0);
}

// ---------------------------------------------------------------------------
// Criterion 8 - distilled snapshots carry class patterns. Six snapshots of a
// seven-class distillation give 42 images; a stratified 5:1 split (35 train,
// 7 held out, one per class) and a tiny probe classifier must reach at least
// 6/7 held-out accuracy within 25 epochs.
// ---------------------------------------------------------------------------

TEST(Criterion8, DistilledSnapshotsAreClassifiableByClass) {
    Stopwatch watch;
    const int m = 7;
    LabeledDataset anchor = make_blobs(m, 30, 8, 0.06, 801);
    UnlabeledPool pool = make_shifted(m, 100, 8, 0.06, 0.08, 802).pool;

    Architecture arch;
    arch.height = 8;
    arch.width = 8;
    arch.channels = 1;
    arch.hidden_widths = {16};
    arch.feature_dim = 16;
    arch.num_classes = m;

    TrainConfig tc;
    tc.learning_rate = 0.05;
    tc.epochs = 10;
    tc.batch_size = 32;
    ModelParams primitive = init_params(arch, derive_seed(12, "train-init"));
    TrainConfig ptc = tc;
    ptc.seed = derive_seed(12, "train");
    train_classifier(primitive, anchor, ptc);

    Tensor anchor_feats = pipe::embed_images(primitive, anchor.images);
    CentroidSet centers =
        compute_centroids(anchor_feats, std::span<const int>(anchor.labels), m);
    SelectionConfig sc;
    sc.delta = 0.0;
    AuxiliaryDataset aux = assign_pseudo_labels(pool, primitive, centers, sc);

    DistillConfig dc;
    dc.n = m;
    dc.eta0 = 0.05;
    dc.alpha = 0.5;
    dc.batch = 32;
    dc.iters = 600;
    dc.weight_draws = 4;
    dc.seed = 7008;
    dc.snapshot_every = 100;
    DistillResult res = distill(aux, arch, dc);
    ASSERT_EQ(res.snapshots.size(), 6u);

    TrainConfig probe_tc;
    probe_tc.learning_rate = 0.1;
    probe_tc.epochs = 25;
    probe_tc.batch_size = 8;
    probe_tc.flip_prob = 0.0;
    probe_tc.seed = derive_seed(12, "probe");
    ProbeResult probe = pattern_probe(res.snapshots, arch, probe_tc);
    ASSERT_EQ(probe.train_size, 35);
    ASSERT_EQ(probe.test_size, 7);

    double best = 0.0;
    int best_epoch = -1;
    for (size_t e = 0; e < probe.curve.size(); ++e)
        if (probe.curve[e] > best) {
            best = probe.curve[e];
            best_epoch = int(e) + 1;
        }

    const double floor = 6.0 / 7.0 - 1e-12;
    const double elapsed = watch.seconds();
    const bool ok = best >= floor;
    report(8, ok, fmt("probe on 6 snapshots x %d classes (35/7 split): best held-out accuracy %.4f (floor 6/7 = %.4f) at epoch %d of 25, %.1f s",
                      m, best, 6.0 / 7.0, best_epoch, elapsed));
    EXPECT_GE(best, floor);
}

// ---------------------------------------------------------------------------
// Criterion 9 - determinism end to end. Run the command-line driver through
// every stage of a pipeline workspace, then let its verify subcommand replay
// each stage and byte-compare the artifacts. Verify exiting zero is the
// check; any drift in any stage fails it.
// ---------------------------------------------------------------------------

namespace {

int run_command(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    return -1;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    ASSERT_TRUE(out.good()) << "failed writing " << path;
}

} // namespace

TEST(Criterion9, CommandLinePipelineReplaysByteIdentically) {
    Stopwatch watch;
    const fs::path dir =
        fs::temp_directory_path() / ("od-accept-" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const std::string log = (dir / "run.log").string();

    write_text(dir / "anchor.spec", "kind = gaussian-blobs\nm = 3\nper_class = 8\n"
                                    "size = 8\nbase_noise = 0.04\nseed = 7\n");
    write_text(dir / "test.spec", "kind = gaussian-blobs\nm = 3\nper_class = 6\n"
                                  "size = 8\nbase_noise = 0.04\nseed = 8\n");
    write_text(dir / "pool.spec", "kind = shifted-domain\nm = 3\nper_class = 1\n"
                                  "pool_per_class = 20\nsize = 8\nbase_noise = 0.04\n"
                                  "brightness = 0.08\nseed = 9\n");

    std::ostringstream ini;
    ini << "seed = 21\ncompare_seeds = 3\n\n"
        << "[arch]\nkind = mlp\nheight = 8\nwidth = 8\nchannels = 1\nhidden =\n"
        << "feature_dim = 12\nclasses = 3\n\n"
        << "[train]\nlr = 0.05\nepochs = 3\nbatch = 8\n\n"
        << "[select]\ndelta = 0\n\n"
        << "[distill]\nn = 3\neta0 = 0.05\nalpha = 0.5\nbatch = 8\niters = 12\n"
        << "draws = 2\nsnapshot_every = 2\n\n"
        << "[paths]\n"
        << "anchor = " << (dir / "anchor.spec").string() << "\n"
        << "pool = " << (dir / "pool.spec").string() << "\n"
        << "test = " << (dir / "test.spec").string() << "\n"
        << "checkpoint = " << (dir / "primitive.ckpt").string() << "\n"
        << "final_checkpoint = " << (dir / "final.ckpt").string() << "\n"
        << "manifest = " << (dir / "manifest.txt").string() << "\n"
        << "distilled = " << (dir / "distilled.odds").string() << "\n"
        << "snapshot_prefix = " << (dir / "snap-").string() << "\n"
        << "report = " << (dir / "report.log").string() << "\n"
        << "primitive_trace = " << (dir / "primitive-trace.txt").string() << "\n"
        << "final_trace = " << (dir / "final-trace.txt").string() << "\n"
        << "distill_trace = " << (dir / "distill-trace.txt").string() << "\n"
        << "plot = " << (dir / "probe-plot.txt").string() << "\n";
    write_text(dir / "run.ini", ini.str());

    const std::string base = std::string(OD_BINARY) + " -c " + (dir / "run.ini").string() + " ";
    const char* stages[] = {"train-primitive", "select",  "distill", "train-final --das",
                            "eval",            "compare", "probe"};
    bool ok = true;
    std::string failed_stage;
    for (const char* stage : stages) {
        const int rc = run_command(base + stage + " >> " + log + " 2>&1");
        if (rc != 0) {
            ok = false;
            failed_stage = fmt("%s exited %d", stage, rc);
            break;
        }
    }

    int verify_rc = -1;
    if (ok) {
        verify_rc = run_command(base + "verify >> " + log + " 2>&1");
        if (verify_rc != 0) {
            ok = false;
            failed_stage = fmt("verify exited %d", verify_rc);
        }
    }

    std::string log_tail;
    if (!ok && fs::exists(log)) {
        std::ifstream in(log);
        std::string line;
        while (std::getline(in, line)) log_tail += "  " + line + "\n";
    }
    fs::remove_all(dir);

    const double elapsed = watch.seconds();
    report(9, ok, ok ? fmt("7 pipeline stages + verify replayed byte-identically through the command-line driver, %.1f s",
                           elapsed)
                     : fmt("pipeline determinism check failed: %s", failed_stage.c_str()));
    EXPECT_TRUE(ok) << failed_stage << "\n" << log_tail;
}
