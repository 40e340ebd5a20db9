#pragma once

// Pseudo-labeling by feature centroids: per-class centroid of anchor features,
// cosine distance of every pool sample to each centroid, and margin-delta
// admission. Smaller distance means closer; a sample is admitted only when its
// best class beats every other class by at least delta.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "od/data.hpp"
#include "od/errors.hpp"
#include "od/model.hpp"
#include "od/tensor.hpp"

namespace od {

template <class S>
struct CentroidSetT {
    TensorT<S> centers; // {m, D}, row k = mean feature of anchor class k
    std::vector<int64_t> counts;
};

using CentroidSet = CentroidSetT<float>;

// Row k = arithmetic mean of feature rows with label k. Accumulation runs in
// 64-bit in sample-index order, one division at the end, so the 64-bit result
// is bit-identical to a straightforward two-pass sum/divide.
template <class S>
CentroidSetT<S> compute_centroids(const TensorT<S>& features, std::span<const int> labels, int m) {
    if (features.rank() != 2)
        throw ShapeError("compute_centroids: features must be {N, D}, got " +
                         shape_str(features.shape));
    if (size_t(features.rows()) != labels.size())
        throw ShapeError("compute_centroids: " + std::to_string(features.rows()) +
                         " feature rows vs " + std::to_string(labels.size()) + " labels");
    if (m < 1) throw Error("compute_centroids: class count must be >= 1");
    const int64_t d = features.cols();
    std::vector<double> sums(size_t(m) * size_t(d), 0.0);
    std::vector<int64_t> counts(size_t(m), 0);
    for (size_t i = 0; i < labels.size(); ++i) {
        int y = labels[i];
        if (y < 0 || y >= m)
            throw Error("compute_centroids: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(m) + ")");
        counts[size_t(y)]++;
        for (int64_t j = 0; j < d; ++j)
            sums[size_t(y) * size_t(d) + size_t(j)] += double(features.at2(int64_t(i), j));
    }
    for (int k = 0; k < m; ++k)
        if (counts[size_t(k)] == 0) throw EmptyClassError(k);
    CentroidSetT<S> out;
    out.centers = TensorT<S>({int64_t(m), d});
    out.counts = std::move(counts);
    for (int k = 0; k < m; ++k)
        for (int64_t j = 0; j < d; ++j)
            out.centers.at2(k, j) =
                S(sums[size_t(k) * size_t(d) + size_t(j)] / double(out.counts[size_t(k)]));
    return out;
}

// d(a, b) = 1 - cos(a, b), in [0, 2]; arithmetic runs in 64-bit.
template <class S>
double cosine_distance(std::span<const S> a, std::span<const S> b) {
    if (a.size() != b.size())
        throw ShapeError("cosine_distance: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + " components");
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * double(b[i]);
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    if (na == 0.0 || nb == 0.0) throw ZeroVectorError("cosine_distance argument has zero norm");
    double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return 1.0 - std::clamp(c, -1.0, 1.0);
}

struct SelectionConfig {
    double delta = 0.05;
    int per_class_cap = 0; // 0 = no cap

    void validate() const {
        if (delta < 0) throw ConfigError("selection: delta must be >= 0");
        if (per_class_cap < 0) throw ConfigError("selection: per_class_cap must be >= 0");
    }
};

struct Admission {
    bool admitted = false;
    int label = -1;
    double distance = 0.0;
};

// Margin rule on one sample's per-class distances: admitted iff the unique
// minimum beats every other class by at least delta. Exact ties at the
// minimum are rejected even at delta = 0.
inline Admission admit_from_distances(std::span<const double> dists, double delta) {
    if (dists.size() < 2) throw Error("admission needs >= 2 classes");
    size_t best = 0;
    for (size_t k = 1; k < dists.size(); ++k)
        if (dists[k] < dists[best]) best = k;
    double second = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < dists.size(); ++k)
        if (k != best && dists[k] < second) second = dists[k];
    Admission a;
    a.label = int(best);
    a.distance = dists[best];
    a.admitted = (second - dists[best] >= delta) && (second > dists[best]);
    return a;
}

// Scores every feature row against the centroid rows.
template <class S>
std::vector<Admission> score_features(const TensorT<S>& features, const CentroidSetT<S>& centers,
                                      double delta) {
    if (features.cols() != centers.centers.cols())
        throw ShapeError("selection: feature dim " + std::to_string(features.cols()) +
                         " vs centroid dim " + std::to_string(centers.centers.cols()));
    const int m = int(centers.centers.rows());
    std::vector<Admission> out;
    out.reserve(size_t(features.rows()));
    std::vector<double> dists(size_t(m), 0.0);
    for (int64_t i = 0; i < features.rows(); ++i) {
        std::span<const S> row(features.data.data() + i * features.cols(),
                               size_t(features.cols()));
        bool zero_row = true;
        for (S v : row)
            if (v != S(0)) zero_row = false;
        if (zero_row) {
            // a zero feature vector has no direction; never admitted
            out.push_back({});
            continue;
        }
        for (int k = 0; k < m; ++k) {
            std::span<const S> c(centers.centers.data.data() + int64_t(k) * centers.centers.cols(),
                                 size_t(centers.centers.cols()));
            dists[size_t(k)] = cosine_distance(row, c);
        }
        out.push_back(admit_from_distances(dists, delta));
    }
    return out;
}

struct AuxiliaryDataset {
    std::vector<Tensor> images;
    std::vector<int> pseudo_labels;
    std::vector<double> distances; // to the assigned centroid
    std::vector<int64_t> source_ids;
    int m = 0;

    size_t size() const { return images.size(); }
};

// Embeds the pool with the primitive learner, scores against the centroids,
// and assembles the admitted samples in source-id order. A per-class cap
// keeps the cap smallest distances of each class.
template <class S>
AuxiliaryDataset assign_pseudo_labels(const UnlabeledPool& pool, const ModelParamsT<S>& params,
                                      const CentroidSetT<S>& centers, const SelectionConfig& cfg) {
    cfg.validate();
    if (pool.images.empty()) throw Error("selection: empty pool");
    uniform_image_shape(pool.images);

    const size_t n = pool.images.size();
    const size_t chunk = 256;
    std::vector<Admission> admissions;
    admissions.reserve(n);
    for (size_t start = 0; start < n; start += chunk) {
        size_t b = std::min(chunk, n - start);
        std::vector<size_t> idx(b);
        for (size_t i = 0; i < b; ++i) idx[i] = start + i;
        TensorT<S> feats = forward_features(params, stack_batch<S>(pool.images, idx));
        auto scored = score_features(feats, centers, cfg.delta);
        admissions.insert(admissions.end(), scored.begin(), scored.end());
    }

    std::vector<char> keep(n, 0);
    for (size_t i = 0; i < n; ++i) keep[i] = admissions[i].admitted;
    if (cfg.per_class_cap > 0) {
        const int m = int(centers.centers.rows());
        for (int k = 0; k < m; ++k) {
            std::vector<size_t> members;
            for (size_t i = 0; i < n; ++i)
                if (keep[i] && admissions[i].label == k) members.push_back(i);
            if (members.size() <= size_t(cfg.per_class_cap)) continue;
            std::stable_sort(members.begin(), members.end(), [&](size_t a, size_t b) {
                return admissions[a].distance < admissions[b].distance;
            });
            for (size_t j = size_t(cfg.per_class_cap); j < members.size(); ++j)
                keep[members[j]] = 0;
        }
    }

    AuxiliaryDataset aux;
    aux.m = int(centers.centers.rows());
    for (size_t i = 0; i < n; ++i) {
        if (!keep[i]) continue;
        aux.images.push_back(pool.images[i]);
        aux.pseudo_labels.push_back(admissions[i].label);
        aux.distances.push_back(admissions[i].distance);
        aux.source_ids.push_back(pool.source_ids[i]);
    }
    return aux;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct SelectionReport {
    std::vector<int64_t> counts;                    // per class
    std::vector<double> min_d, median_d, max_d;     // per class; 0 when count = 0
    std::vector<std::vector<int64_t>> ids_by_class; // ascending distance, most confident first
};

inline SelectionReport selection_report(const AuxiliaryDataset& aux) {
    if (aux.size() == 0) throw Error("selection_report: empty auxiliary dataset");
    SelectionReport rep;
    rep.counts.assign(size_t(aux.m), 0);
    rep.min_d.assign(size_t(aux.m), 0.0);
    rep.median_d.assign(size_t(aux.m), 0.0);
    rep.max_d.assign(size_t(aux.m), 0.0);
    rep.ids_by_class.resize(size_t(aux.m));
    for (int k = 0; k < aux.m; ++k) {
        std::vector<size_t> members;
        for (size_t i = 0; i < aux.size(); ++i)
            if (aux.pseudo_labels[i] == k) members.push_back(i);
        rep.counts[size_t(k)] = int64_t(members.size());
        if (members.empty()) continue;
        std::stable_sort(members.begin(), members.end(),
                         [&](size_t a, size_t b) { return aux.distances[a] < aux.distances[b]; });
        for (size_t i : members) rep.ids_by_class[size_t(k)].push_back(aux.source_ids[i]);
        rep.min_d[size_t(k)] = aux.distances[members.front()];
        rep.max_d[size_t(k)] = aux.distances[members.back()];
        size_t c = members.size();
        rep.median_d[size_t(k)] =
            c % 2 == 1 ? aux.distances[members[c / 2]]
                       : 0.5 * (aux.distances[members[c / 2 - 1]] + aux.distances[members[c / 2]]);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Manifest persistence (text; one record per line)
// ---------------------------------------------------------------------------

inline std::string format_distance(double d) {
    std::ostringstream ss;
    ss << std::setprecision(9) << d;
    return ss.str();
}

inline void save_manifest(const std::string& path, const AuxiliaryDataset& aux,
                          uint64_t config_hash) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot open for writing: " + path);
    os << "# config_hash " << std::hex << std::setw(16) << std::setfill('0') << config_hash
       << std::dec << "\n";
    for (size_t i = 0; i < aux.size(); ++i)
        os << aux.source_ids[i] << " " << aux.pseudo_labels[i] << " "
           << format_distance(aux.distances[i]) << "\n";
    if (!os) throw Error("write failed: " + path);
}

struct LoadedManifest {
    std::vector<int64_t> source_ids;
    std::vector<int> labels;
    std::vector<double> distances;
    uint64_t config_hash = 0;
};

inline LoadedManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open for reading: " + path);
    LoadedManifest out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ss(line);
            std::string hash_word, key;
            ss >> hash_word >> key;
            if (key == "config_hash") {
                std::string hex;
                ss >> hex;
                out.config_hash = std::stoull(hex, nullptr, 16);
            }
            continue;
        }
        std::istringstream ss(line);
        int64_t sid;
        int label;
        double dist;
        if (!(ss >> sid >> label >> dist))
            throw CorruptHeaderError("manifest line " + std::to_string(lineno) +
                                     ": expected 'source_id label distance'");
        std::string rest;
        if (ss >> rest)
            throw CorruptHeaderError("manifest line " + std::to_string(lineno) +
                                     ": trailing fields");
        out.source_ids.push_back(sid);
        out.labels.push_back(label);
        out.distances.push_back(dist);
    }
    return out;
}

// Materializes the admitted images by looking source ids up in the pool.
inline AuxiliaryDataset manifest_to_aux(const LoadedManifest& manifest, const UnlabeledPool& pool,
                                        int m) {
    AuxiliaryDataset aux;
    aux.m = m;
    std::vector<int64_t> where(pool.source_ids.size(), -1);
    // pool source ids are positions after a load, but stay general
    std::unordered_map<int64_t, size_t> lookup;
    for (size_t i = 0; i < pool.source_ids.size(); ++i) lookup[pool.source_ids[i]] = i;
    for (size_t i = 0; i < manifest.source_ids.size(); ++i) {
        auto it = lookup.find(manifest.source_ids[i]);
        if (it == lookup.end())
            throw HeaderMismatchError("manifest references source id " +
                                      std::to_string(manifest.source_ids[i]) +
                                      " not present in the pool");
        if (manifest.labels[i] < 0 || manifest.labels[i] >= m)
            throw HeaderMismatchError("manifest pseudo-label " +
                                      std::to_string(manifest.labels[i]) + " outside [0, " +
                                      std::to_string(m) + ")");
        aux.images.push_back(pool.images[it->second]);
        aux.pseudo_labels.push_back(manifest.labels[i]);
        aux.distances.push_back(manifest.distances[i]);
        aux.source_ids.push_back(manifest.source_ids[i]);
    }
    return aux;
}

} // namespace od
