#pragma once

// Dataset types, the repo-native ODIM binary image format, synthetic dataset
// generators for desk-scale experiments, and seeded train/test splits.
//
// Pixels live on the 1/255 grid in [0, 1]: generators quantize at draw time
// and the loader maps stored bytes back with byte/255, so save -> load is
// bit-exact for every dataset the pipeline touches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "od/errors.hpp"
#include "od/io.hpp"
#include "od/rng.hpp"
#include "od/tensor.hpp"

namespace od {

struct LabeledDataset {
    std::vector<Tensor> images; // each {H, W, C}
    std::vector<int> labels;    // in [0, m)
    int m = 0;
    std::string name;
    std::vector<std::string> class_names;

    size_t size() const { return images.size(); }
};

struct UnlabeledPool {
    std::vector<Tensor> images; // each {H, W, C}
    std::vector<int64_t> source_ids;

    size_t size() const { return images.size(); }
};

inline Shape uniform_image_shape(const std::vector<Tensor>& images) {
    if (images.empty()) throw Error("dataset has no images");
    const Shape& s = images.front().shape;
    for (const auto& img : images)
        if (img.shape != s)
            throw ShapeError("non-uniform image shapes: " + shape_str(img.shape) + " vs " +
                             shape_str(s));
    return s;
}

inline void validate_dataset(const LabeledDataset& ds) {
    if (ds.images.size() != ds.labels.size())
        throw Error("dataset invariant: " + std::to_string(ds.images.size()) + " images vs " +
                    std::to_string(ds.labels.size()) + " labels");
    if (ds.m < 1) throw Error("dataset invariant: class count must be >= 1");
    for (int y : ds.labels)
        if (y < 0 || y >= ds.m)
            throw Error("dataset invariant: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(ds.m) + ")");
    uniform_image_shape(ds.images);
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

enum class GeneratorKind { GaussianBlobs, BarsAndStripes, ShiftedDomain };

inline const char* generator_kind_name(GeneratorKind k) {
    switch (k) {
        case GeneratorKind::GaussianBlobs: return "gaussian-blobs";
        case GeneratorKind::BarsAndStripes: return "bars-and-stripes";
        case GeneratorKind::ShiftedDomain: return "shifted-domain";
    }
    return "?";
}

inline GeneratorKind parse_generator_kind(const std::string& s) {
    if (s == "gaussian-blobs") return GeneratorKind::GaussianBlobs;
    if (s == "bars-and-stripes") return GeneratorKind::BarsAndStripes;
    if (s == "shifted-domain") return GeneratorKind::ShiftedDomain;
    throw ConfigError("unknown generator kind: " + s);
}

struct SyntheticSpec {
    GeneratorKind kind = GeneratorKind::GaussianBlobs;
    int m = 3;
    int per_class = 100;    // labeled draws per class
    int pool_per_class = 0; // unlabeled pool draws per class (shifted-domain only)
    int height = 16;
    int width = 16;
    int channels = 1;
    double base_noise = 0.06; // intrinsic pixel noise applied to every draw
    double brightness = 0.0;  // domain shift: additive offset on pool draws
    double noise = 0.0;       // domain shift: extra pixel noise on pool draws
    double rotation = 0.0;    // domain shift: max |angle| in degrees on pool draws
    uint64_t seed = 1;
};

struct SyntheticResult {
    LabeledDataset anchor;
    UnlabeledPool pool;                 // populated only for shifted-domain specs
    std::vector<int> pool_true_labels;  // generator-side ground truth, analysis only
};

namespace detail {

inline float quantize_pixel(double v) {
    double c = std::clamp(v, 0.0, 1.0);
    return float(std::lround(c * 255.0)) / 255.0f;
}

// Per-class blob layout: unit bumps whose centers sit on a circle around the
// image center, one angular position per class.
inline void blob_pattern(const SyntheticSpec& spec, int k, Rng& rng, std::vector<double>& px) {
    const int H = spec.height, W = spec.width, C = spec.channels;
    const double mind = double(std::min(H, W));
    const double radius = 0.30 * mind;
    const double sigma = 0.15 * mind;
    const double angle = 2.0 * std::numbers::pi * k / std::max(1, spec.m);
    const double jitter = 0.06 * mind;
    const double cx = 0.5 * (W - 1) + radius * std::cos(angle) + jitter * rng.normal();
    const double cy = 0.5 * (H - 1) + radius * std::sin(angle) + jitter * rng.normal();
    px.assign(size_t(H) * W * C, 0.0);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
            double v = std::exp(-d2 / (2.0 * sigma * sigma));
            for (int ch = 0; ch < C; ++ch) px[(size_t(r) * W + c) * C + ch] = v;
        }
}

// Per-class stripe layout: orientation alternates with class parity, band
// period grows every two classes; each draw gets a random integer phase.
inline void bars_pattern(const SyntheticSpec& spec, int k, Rng& rng, std::vector<double>& px) {
    const int H = spec.height, W = spec.width, C = spec.channels;
    const bool horizontal = (k % 2) == 0;
    const int period = 2 + k / 2;
    const int phase = int(rng.uniform_index(uint64_t(2 * period)));
    px.assign(size_t(H) * W * C, 0.0);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            int idx = horizontal ? r : c;
            double v = (((idx + phase) / period) % 2 == 0) ? 0.85 : 0.15;
            for (int ch = 0; ch < C; ++ch) px[(size_t(r) * W + c) * C + ch] = v;
        }
}

inline void clean_pattern(const SyntheticSpec& spec, int k, Rng& rng, std::vector<double>& px) {
    // shifted-domain draws share the blob layout; the shift transform is what
    // moves the pool away from the anchor statistics
    if (spec.kind == GeneratorKind::BarsAndStripes)
        bars_pattern(spec, k, rng, px);
    else
        blob_pattern(spec, k, rng, px);
}

// Nearest-neighbor rotation about the image center, zero fill outside.
inline void rotate_pattern(std::vector<double>& px, int H, int W, int C, double degrees) {
    if (degrees == 0.0) return;
    const double th = degrees * std::numbers::pi / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const double cy = 0.5 * (H - 1), cx = 0.5 * (W - 1);
    std::vector<double> out(px.size(), 0.0);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double sy = cy + ct * (r - cy) - st * (c - cx);
            double sx = cx + st * (r - cy) + ct * (c - cx);
            int ir = int(std::lround(sy)), ic = int(std::lround(sx));
            if (ir < 0 || ir >= H || ic < 0 || ic >= W) continue;
            for (int ch = 0; ch < C; ++ch)
                out[(size_t(r) * W + c) * C + ch] = px[(size_t(ir) * W + ic) * C + ch];
        }
    px = std::move(out);
}

inline Tensor finalize_draw(const SyntheticSpec& spec, std::vector<double>& px, Rng& rng,
                            bool shifted) {
    if (shifted) rotate_pattern(px, spec.height, spec.width, spec.channels,
                                spec.rotation == 0.0 ? 0.0
                                                     : rng.uniform(-spec.rotation, spec.rotation));
    Tensor img({spec.height, spec.width, spec.channels});
    for (size_t i = 0; i < px.size(); ++i) {
        double v = px[i] + spec.base_noise * rng.normal();
        if (shifted) v += spec.brightness + spec.noise * rng.normal();
        img.data[i] = quantize_pixel(v);
    }
    return img;
}

} // namespace detail

inline SyntheticResult make_synthetic(const SyntheticSpec& spec) {
    if (spec.m < 1 || spec.per_class < 1 || spec.height < 1 || spec.width < 1 ||
        spec.channels < 1)
        throw ConfigError("synthetic spec: m, per_class, and image dimensions must be positive");
    SyntheticResult out;
    out.anchor.m = spec.m;
    out.anchor.name = generator_kind_name(spec.kind);
    for (int k = 0; k < spec.m; ++k) out.anchor.class_names.push_back("class" + std::to_string(k));

    Rng anchor_rng(derive_seed(spec.seed, "synthetic-anchor"));
    std::vector<double> px;
    for (int k = 0; k < spec.m; ++k)
        for (int i = 0; i < spec.per_class; ++i) {
            detail::clean_pattern(spec, k, anchor_rng, px);
            out.anchor.images.push_back(detail::finalize_draw(spec, px, anchor_rng, false));
            out.anchor.labels.push_back(k);
        }

    if (spec.kind == GeneratorKind::ShiftedDomain && spec.pool_per_class > 0) {
        Rng pool_rng(derive_seed(spec.seed, "synthetic-pool"));
        int64_t next_id = 0;
        for (int k = 0; k < spec.m; ++k)
            for (int i = 0; i < spec.pool_per_class; ++i) {
                detail::clean_pattern(spec, k, pool_rng, px);
                out.pool.images.push_back(detail::finalize_draw(spec, px, pool_rng, true));
                out.pool.source_ids.push_back(next_id++);
                out.pool_true_labels.push_back(k);
            }
    }
    validate_dataset(out.anchor);
    return out;
}

// Flat key=value text form of SyntheticSpec; '#' starts a comment. Anywhere a
// dataset path is accepted, a spec file works too and the dataset is generated
// on the fly (deterministic per seed).
inline SyntheticSpec parse_synthetic_spec(const std::string& text) {
    SyntheticSpec spec;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("synthetic spec line " + std::to_string(lineno) +
                              ": expected key=value");
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t");
            auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("synthetic spec line " + std::to_string(lineno) +
                              ": empty key or value");
        auto as_int = [&](const std::string& v) {
            try {
                size_t pos = 0;
                long long r = std::stoll(v, &pos);
                if (pos != v.size()) throw std::invalid_argument(v);
                return r;
            } catch (const std::exception&) {
                throw ConfigError("synthetic spec: bad integer for " + key + ": " + v);
            }
        };
        auto as_double = [&](const std::string& v) {
            try {
                size_t pos = 0;
                double r = std::stod(v, &pos);
                if (pos != v.size()) throw std::invalid_argument(v);
                return r;
            } catch (const std::exception&) {
                throw ConfigError("synthetic spec: bad number for " + key + ": " + v);
            }
        };
        if (key == "kind") spec.kind = parse_generator_kind(value);
        else if (key == "m") spec.m = int(as_int(value));
        else if (key == "per_class") spec.per_class = int(as_int(value));
        else if (key == "pool_per_class") spec.pool_per_class = int(as_int(value));
        else if (key == "height") spec.height = int(as_int(value));
        else if (key == "width") spec.width = int(as_int(value));
        else if (key == "size") spec.height = spec.width = int(as_int(value));
        else if (key == "channels") spec.channels = int(as_int(value));
        else if (key == "base_noise") spec.base_noise = as_double(value);
        else if (key == "brightness") spec.brightness = as_double(value);
        else if (key == "noise") spec.noise = as_double(value);
        else if (key == "rotation") spec.rotation = as_double(value);
        else if (key == "seed") spec.seed = uint64_t(as_int(value));
        else throw ConfigError("synthetic spec: unknown key: " + key);
    }
    return spec;
}

// ---------------------------------------------------------------------------
// ODIM persistence
// ---------------------------------------------------------------------------

inline constexpr uint16_t kDatasetFormatVersion = 1;
inline constexpr const char* kDatasetMagic = "ODIM";

namespace detail {

inline void write_images(std::ostream& os, const std::vector<Tensor>& images) {
    for (const auto& img : images)
        for (float v : img.data) {
            double c = std::clamp(double(v), 0.0, 1.0);
            io::write_u8(os, uint8_t(std::lround(c * 255.0)));
        }
}

struct OdimHeader {
    bool labeled = false;
    int m = 0;
    uint32_t n = 0;
    int h = 0, w = 0, c = 0;
};

inline OdimHeader read_odim_header(std::istream& is) {
    io::expect_magic(is, kDatasetMagic, "dataset");
    uint16_t ver = io::read_u16(is);
    if (ver != kDatasetFormatVersion)
        throw CorruptHeaderError("dataset: unsupported version " + std::to_string(ver));
    uint16_t flags = io::read_u16(is);
    OdimHeader h;
    h.labeled = (flags & 1u) != 0;
    h.m = io::read_u16(is);
    h.n = io::read_u32(is);
    h.h = io::read_u16(is);
    h.w = io::read_u16(is);
    h.c = io::read_u8(is);
    if (h.h < 1 || h.w < 1 || h.c < 1)
        throw CorruptHeaderError("dataset: degenerate image dimensions");
    if (h.labeled && h.m < 1)
        throw CorruptHeaderError("dataset: labeled file with class count 0");
    return h;
}

inline std::vector<Tensor> read_images(std::istream& is, const OdimHeader& h) {
    std::vector<Tensor> images;
    images.reserve(h.n);
    const int64_t per = int64_t(h.h) * h.w * h.c;
    for (uint32_t i = 0; i < h.n; ++i) {
        Tensor img({h.h, h.w, h.c});
        for (int64_t p = 0; p < per; ++p) img.data[size_t(p)] = io::read_u8(is) / 255.0f;
        images.push_back(std::move(img));
    }
    return images;
}

} // namespace detail

inline void save_dataset(const std::string& path, const LabeledDataset& ds) {
    validate_dataset(ds);
    Shape shape = uniform_image_shape(ds.images);
    if (shape.size() != 3) throw ShapeError("dataset images must be rank-3 {H, W, C}");
    auto os = io::open_out(path);
    io::write_magic(os, kDatasetMagic);
    io::write_u16(os, kDatasetFormatVersion);
    io::write_u16(os, 1); // flags: labeled
    io::write_u16(os, uint16_t(ds.m));
    io::write_u32(os, uint32_t(ds.images.size()));
    io::write_u16(os, uint16_t(shape[0]));
    io::write_u16(os, uint16_t(shape[1]));
    io::write_u8(os, uint8_t(shape[2]));
    detail::write_images(os, ds.images);
    for (int y : ds.labels) io::write_u16(os, uint16_t(y));
    if (!os) throw Error("write failed: " + path);
}

inline void save_pool(const std::string& path, const UnlabeledPool& pool) {
    Shape shape = uniform_image_shape(pool.images);
    if (shape.size() != 3) throw ShapeError("pool images must be rank-3 {H, W, C}");
    auto os = io::open_out(path);
    io::write_magic(os, kDatasetMagic);
    io::write_u16(os, kDatasetFormatVersion);
    io::write_u16(os, 0); // flags: unlabeled
    io::write_u16(os, 0);
    io::write_u32(os, uint32_t(pool.images.size()));
    io::write_u16(os, uint16_t(shape[0]));
    io::write_u16(os, uint16_t(shape[1]));
    io::write_u8(os, uint8_t(shape[2]));
    detail::write_images(os, pool.images);
    if (!os) throw Error("write failed: " + path);
}

using AnyDataset = std::variant<LabeledDataset, UnlabeledPool>;

inline AnyDataset load_odim(const std::string& path) {
    auto is = io::open_in(path);
    auto h = detail::read_odim_header(is);
    auto images = detail::read_images(is, h);
    if (h.labeled) {
        LabeledDataset ds;
        ds.images = std::move(images);
        ds.m = h.m;
        for (uint32_t i = 0; i < h.n; ++i) {
            uint16_t y = io::read_u16(is);
            if (y >= uint16_t(h.m))
                throw HeaderMismatchError("dataset: label " + std::to_string(y) +
                                          " >= declared class count " + std::to_string(h.m));
            ds.labels.push_back(int(y));
        }
        io::expect_eof(is, "dataset");
        ds.name = path;
        for (int k = 0; k < ds.m; ++k) ds.class_names.push_back("class" + std::to_string(k));
        return ds;
    }
    io::expect_eof(is, "dataset");
    UnlabeledPool pool;
    pool.images = std::move(images);
    for (uint32_t i = 0; i < h.n; ++i) pool.source_ids.push_back(int64_t(i));
    return pool;
}

inline bool is_odim_file(const std::string& path) {
    auto is = io::open_in(path);
    char buf[4] = {};
    is.read(buf, 4);
    return is.gcount() == 4 && std::char_traits<char>::compare(buf, kDatasetMagic, 4) == 0;
}

inline std::string read_text_file(const std::string& path) {
    auto is = io::open_in(path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Dataset paths accept either an ODIM binary or a synthetic-spec text file.
inline AnyDataset load_dataset(const std::string& path) {
    if (is_odim_file(path)) return load_odim(path);
    SyntheticSpec spec = parse_synthetic_spec(read_text_file(path));
    return make_synthetic(spec).anchor;
}

inline LabeledDataset load_labeled(const std::string& path) {
    if (is_odim_file(path)) {
        AnyDataset any = load_odim(path);
        if (auto* ds = std::get_if<LabeledDataset>(&any)) return std::move(*ds);
        throw Error("expected a labeled dataset, found an unlabeled pool: " + path);
    }
    SyntheticSpec spec = parse_synthetic_spec(read_text_file(path));
    return make_synthetic(spec).anchor;
}

inline UnlabeledPool load_pool(const std::string& path) {
    if (is_odim_file(path)) {
        AnyDataset any = load_odim(path);
        if (auto* pool = std::get_if<UnlabeledPool>(&any)) return std::move(*pool);
        throw Error("expected an unlabeled pool, found a labeled dataset: " + path);
    }
    SyntheticSpec spec = parse_synthetic_spec(read_text_file(path));
    SyntheticResult res = make_synthetic(spec);
    if (res.pool.images.empty())
        throw ConfigError("spec file defines no pool (needs kind=shifted-domain and "
                          "pool_per_class > 0): " + path);
    return std::move(res.pool);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitRatio {
    int train = 5;
    int test = 1;
};

inline SplitRatio parse_ratio(const std::string& s) {
    auto colon = s.find(':');
    if (colon == std::string::npos) throw ConfigError("ratio must look like 5:1, got: " + s);
    try {
        SplitRatio r;
        r.train = std::stoi(s.substr(0, colon));
        r.test = std::stoi(s.substr(colon + 1));
        return r;
    } catch (const std::exception&) {
        throw ConfigError("ratio must look like 5:1, got: " + s);
    }
}

// Seeded, disjoint, exhaustive split; stratified by class whenever every class
// has at least (train+test) members, otherwise a single global shuffle.
inline std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, SplitRatio ratio,
                                                       uint64_t seed) {
    validate_dataset(ds);
    if (ratio.train < 0 || ratio.test < 0 || ratio.train + ratio.test < 1)
        throw ConfigError("invalid split ratio " + std::to_string(ratio.train) + ":" +
                          std::to_string(ratio.test));
    const int parts = ratio.train + ratio.test;

    std::vector<std::vector<size_t>> by_class(size_t(ds.m));
    for (size_t i = 0; i < ds.labels.size(); ++i) by_class[size_t(ds.labels[i])].push_back(i);
    bool stratified = true;
    for (const auto& members : by_class)
        if (members.size() < size_t(parts)) stratified = false;

    std::vector<size_t> train_idx, test_idx;
    auto cut = [&](std::vector<size_t>& members, uint64_t stream) {
        Rng rng(stream);
        rng.shuffle(members);
        size_t n_test = size_t(std::llround(double(members.size()) * ratio.test / parts));
        size_t n_train = members.size() - n_test;
        train_idx.insert(train_idx.end(), members.begin(), members.begin() + ptrdiff_t(n_train));
        test_idx.insert(test_idx.end(), members.begin() + ptrdiff_t(n_train), members.end());
    };
    if (stratified) {
        for (int k = 0; k < ds.m; ++k) cut(by_class[size_t(k)], derive_seed(seed, "split", uint64_t(k)));
    } else {
        std::vector<size_t> all(ds.size());
        for (size_t i = 0; i < all.size(); ++i) all[i] = i;
        cut(all, derive_seed(seed, "split-all"));
    }

    auto take = [&](const std::vector<size_t>& idx, const std::string& suffix) {
        LabeledDataset out;
        out.m = ds.m;
        out.name = ds.name + suffix;
        out.class_names = ds.class_names;
        for (size_t i : idx) {
            out.images.push_back(ds.images[i]);
            out.labels.push_back(ds.labels[i]);
        }
        return out;
    };
    return {take(train_idx, "/train"), take(test_idx, "/test")};
}

} // namespace od
