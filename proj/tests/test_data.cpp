#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "od/data.hpp"

using namespace od;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "od-data-tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

SyntheticSpec blob_spec(int m, int per_class, int size, uint64_t seed) {
    SyntheticSpec s;
    s.kind = GeneratorKind::GaussianBlobs;
    s.m = m;
    s.per_class = per_class;
    s.height = s.width = size;
    s.seed = seed;
    return s;
}

} // namespace

TEST(Odim, RoundTripBitExact) {
    auto ds = make_synthetic(blob_spec(3, 10, 8, 7)).anchor;
    auto path = temp_path("roundtrip.odim");
    save_dataset(path.string(), ds);
    LabeledDataset back = load_labeled(path.string());
    ASSERT_EQ(back.size(), ds.size());
    EXPECT_EQ(back.m, ds.m);
    EXPECT_EQ(back.labels, ds.labels);
    for (size_t i = 0; i < ds.size(); ++i) {
        ASSERT_EQ(back.images[i].shape, ds.images[i].shape);
        for (size_t p = 0; p < ds.images[i].data.size(); ++p)
            ASSERT_EQ(back.images[i].data[p], ds.images[i].data[p])
                << "image " << i << " pixel " << p;
    }
}

TEST(Odim, PoolRoundTripBitExact) {
    SyntheticSpec s = blob_spec(3, 5, 8, 9);
    s.kind = GeneratorKind::ShiftedDomain;
    s.pool_per_class = 6;
    s.brightness = 0.1;
    s.rotation = 15;
    auto res = make_synthetic(s);
    ASSERT_EQ(res.pool.size(), 18u);
    auto path = temp_path("pool.odim");
    save_pool(path.string(), res.pool);
    UnlabeledPool back = load_pool(path.string());
    ASSERT_EQ(back.size(), res.pool.size());
    EXPECT_EQ(back.source_ids, res.pool.source_ids);
    for (size_t i = 0; i < back.size(); ++i)
        ASSERT_EQ(back.images[i].data, res.pool.images[i].data);
}

TEST(Odim, TruncatedFileRejected) {
    auto ds = make_synthetic(blob_spec(2, 4, 8, 3)).anchor;
    auto path = temp_path("trunc.odim");
    save_dataset(path.string(), ds);
    auto bytes = read_text_file(path.string());
    auto cut = temp_path("trunc-cut.odim");
    std::ofstream os(cut, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), std::streamsize(bytes.size() / 2));
    os.close();
    EXPECT_THROW(load_labeled(cut.string()), TruncatedPayloadError);
}

TEST(Odim, CorruptMagicRejected) {
    auto path = temp_path("badmagic.odim");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "XXXXsome bytes that are definitely not a dataset";
    os.close();
    // not ODIM -> parsed as a synthetic spec text file, which this is not
    EXPECT_THROW(load_labeled(path.string()), ConfigError);
    // a real ODIM header with a bad version is a corrupt header
    auto path2 = temp_path("badver.odim");
    std::ofstream os2(path2, std::ios::binary | std::ios::trunc);
    os2 << "ODIM";
    io::write_u16(os2, 999);
    os2.close();
    EXPECT_THROW(load_labeled(path2.string()), CorruptHeaderError);
}

TEST(Odim, LabelBeyondDeclaredClassCountRejected) {
    auto ds = make_synthetic(blob_spec(3, 2, 8, 3)).anchor;
    auto path = temp_path("badlabel.odim");
    save_dataset(path.string(), ds);
    // patch the first stored label (last N*2 bytes are labels) to 7 >= m=3
    auto bytes = read_text_file(path.string());
    size_t label_off = bytes.size() - ds.size() * 2;
    bytes[label_off] = 7;
    bytes[label_off + 1] = 0;
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), std::streamsize(bytes.size()));
    os.close();
    EXPECT_THROW(load_labeled(path.string()), HeaderMismatchError);
}

TEST(Odim, PixelsInUnitIntervalAfterLoad) {
    SyntheticSpec s = blob_spec(3, 10, 8, 21);
    s.kind = GeneratorKind::ShiftedDomain;
    s.pool_per_class = 10;
    s.brightness = 0.4; // would push raw values past 1 without clamping
    auto res = make_synthetic(s);
    auto path = temp_path("range.odim");
    save_pool(path.string(), res.pool);
    UnlabeledPool back = load_pool(path.string());
    for (const auto& img : back.images)
        for (float v : img.data) {
            ASSERT_GE(v, 0.0f);
            ASSERT_LE(v, 1.0f);
        }
}

TEST(Synthetic, DeterministicPerSeed) {
    SyntheticSpec s = blob_spec(4, 12, 10, 77);
    s.kind = GeneratorKind::ShiftedDomain;
    s.pool_per_class = 5;
    s.rotation = 10;
    auto a = make_synthetic(s), b = make_synthetic(s);
    ASSERT_EQ(a.anchor.size(), b.anchor.size());
    for (size_t i = 0; i < a.anchor.size(); ++i)
        ASSERT_EQ(a.anchor.images[i].data, b.anchor.images[i].data);
    for (size_t i = 0; i < a.pool.size(); ++i)
        ASSERT_EQ(a.pool.images[i].data, b.pool.images[i].data);
    s.seed = 78;
    auto c = make_synthetic(s);
    EXPECT_NE(a.anchor.images[0].data, c.anchor.images[0].data);
}

TEST(Synthetic, ZeroShiftPoolMatchesAnchorDistribution) {
    SyntheticSpec s = blob_spec(3, 80, 8, 5);
    s.kind = GeneratorKind::ShiftedDomain;
    s.pool_per_class = 80;
    s.brightness = 0;
    s.noise = 0;
    s.rotation = 0;
    auto res = make_synthetic(s);
    auto stats = [](const std::vector<Tensor>& images) {
        std::vector<double> means;
        for (const auto& img : images) {
            double sum = 0;
            for (float v : img.data) sum += v;
            means.push_back(sum / double(img.data.size()));
        }
        double mu = 0;
        for (double v : means) mu += v;
        mu /= double(means.size());
        double var = 0;
        for (double v : means) var += (v - mu) * (v - mu);
        var /= double(means.size() - 1);
        return std::pair{mu, var};
    };
    auto [mu_a, var_a] = stats(res.anchor.images);
    auto [mu_p, var_p] = stats(res.pool.images);
    double sigma = std::sqrt(var_a / double(res.anchor.size()) + var_p / double(res.pool.size()));
    EXPECT_LE(std::abs(mu_a - mu_p), 3.0 * sigma)
        << "anchor mean " << mu_a << " pool mean " << mu_p;
}

TEST(Synthetic, NonzeroShiftMovesPoolStatistics) {
    SyntheticSpec s = blob_spec(3, 60, 8, 5);
    s.kind = GeneratorKind::ShiftedDomain;
    s.pool_per_class = 60;
    s.brightness = 0.15;
    auto res = make_synthetic(s);
    double mu_a = 0, mu_p = 0;
    for (const auto& img : res.anchor.images)
        for (float v : img.data) mu_a += v;
    for (const auto& img : res.pool.images)
        for (float v : img.data) mu_p += v;
    mu_a /= double(res.anchor.size() * res.anchor.images[0].data.size());
    mu_p /= double(res.pool.size() * res.pool.images[0].data.size());
    EXPECT_GT(mu_p - mu_a, 0.05);
}

// learnability oracle: nearest centroid in raw pixel space
TEST(Synthetic, BlobsLearnableByNearestCentroid) {
    auto ds = make_synthetic(blob_spec(3, 200, 8, 11)).anchor;
    auto [train, test] = split(ds, {5, 1}, 123);
    const size_t dim = train.images[0].data.size();
    std::vector<std::vector<double>> centroid(3, std::vector<double>(dim, 0.0));
    std::vector<int> count(3, 0);
    for (size_t i = 0; i < train.size(); ++i) {
        for (size_t p = 0; p < dim; ++p) centroid[size_t(train.labels[i])][p] += train.images[i].data[p];
        count[size_t(train.labels[i])]++;
    }
    for (int k = 0; k < 3; ++k)
        for (size_t p = 0; p < dim; ++p) centroid[size_t(k)][p] /= double(count[size_t(k)]);
    int hits = 0;
    for (size_t i = 0; i < test.size(); ++i) {
        int best = -1;
        double best_d = 1e300;
        for (int k = 0; k < 3; ++k) {
            double d = 0;
            for (size_t p = 0; p < dim; ++p) {
                double diff = test.images[i].data[p] - centroid[size_t(k)][p];
                d += diff * diff;
            }
            if (d < best_d) { best_d = d; best = k; }
        }
        hits += (best == test.labels[i]);
    }
    double acc = double(hits) / double(test.size());
    EXPECT_GE(acc, 0.9) << "nearest-centroid accuracy " << acc;
}

TEST(Synthetic, BarsAndStripesClassesDiffer) {
    SyntheticSpec s = blob_spec(4, 6, 8, 2);
    s.kind = GeneratorKind::BarsAndStripes;
    auto ds = make_synthetic(s).anchor;
    ASSERT_EQ(ds.size(), 24u);
    EXPECT_EQ(ds.name, "bars-and-stripes");
    // horizontal (class 0) rows are near-constant; vertical (class 1) are not
    const auto& h = ds.images[0];
    double row_var = 0;
    for (int r = 0; r < 8; ++r) {
        double mu = 0;
        for (int c = 0; c < 8; ++c) mu += h.at2(r, c);
        mu /= 8;
        for (int c = 0; c < 8; ++c) row_var += (h.at2(r, c) - mu) * (h.at2(r, c) - mu);
    }
    EXPECT_LT(std::sqrt(row_var / 64.0), 0.2);
}

TEST(SpecFile, ParseAndGenerate) {
    auto path = temp_path("anchor.spec");
    std::ofstream os(path, std::ios::trunc);
    os << "# desk-scale anchor\n"
       << "kind = gaussian-blobs\n"
       << "m = 3\n"
       << "per_class = 5\n"
       << "size = 8\n"
       << "seed = 42\n";
    os.close();
    LabeledDataset ds = load_labeled(path.string());
    EXPECT_EQ(ds.m, 3);
    EXPECT_EQ(ds.size(), 15u);
    EXPECT_EQ(ds.images[0].shape, (Shape{8, 8, 1}));
}

TEST(SpecFile, UnknownKeyRejected) {
    EXPECT_THROW(parse_synthetic_spec("kind = gaussian-blobs\nwat = 4\n"), ConfigError);
    EXPECT_THROW(parse_synthetic_spec("m: 3\n"), ConfigError);
    EXPECT_THROW(parse_synthetic_spec("m = three\n"), ConfigError);
}

TEST(SpecFile, PoolRequiresShiftedDomain) {
    auto path = temp_path("nopool.spec");
    std::ofstream os(path, std::ios::trunc);
    os << "kind = gaussian-blobs\nm = 2\nper_class = 3\nsize = 8\n";
    os.close();
    EXPECT_THROW(load_pool(path.string()), ConfigError);
}

TEST(Split, FortyTwoAtFiveToOne) {
    SyntheticSpec s = blob_spec(7, 6, 8, 4);
    auto ds = make_synthetic(s).anchor;
    ASSERT_EQ(ds.size(), 42u);
    auto [train, test] = split(ds, {5, 1}, 9);
    EXPECT_EQ(train.size(), 35u);
    EXPECT_EQ(test.size(), 7u);
    // stratified: exactly one held-out sample per class
    std::vector<int> per_class(7, 0);
    for (int y : test.labels) per_class[size_t(y)]++;
    for (int k = 0; k < 7; ++k) EXPECT_EQ(per_class[size_t(k)], 1) << "class " << k;
}

TEST(Split, AllTrainAtOneToZero) {
    auto ds = make_synthetic(blob_spec(3, 4, 8, 4)).anchor;
    auto [train, test] = split(ds, {1, 0}, 5);
    EXPECT_EQ(train.size(), 12u);
    EXPECT_EQ(test.size(), 0u);
}

TEST(Split, DisjointExhaustiveAndSeedStable) {
    auto ds = make_synthetic(blob_spec(3, 17, 8, 6)).anchor;
    auto [train, test] = split(ds, {5, 1}, 31);
    EXPECT_EQ(train.size() + test.size(), ds.size());
    // multiset equality via sorted flattened images + labels
    auto key = [](const Tensor& img, int label) {
        std::string k = std::to_string(label) + "|";
        for (float v : img.data) k += std::to_string(v) + ",";
        return k;
    };
    std::multiset<std::string> orig, parts;
    for (size_t i = 0; i < ds.size(); ++i) orig.insert(key(ds.images[i], ds.labels[i]));
    for (size_t i = 0; i < train.size(); ++i) parts.insert(key(train.images[i], train.labels[i]));
    for (size_t i = 0; i < test.size(); ++i) parts.insert(key(test.images[i], test.labels[i]));
    EXPECT_EQ(orig, parts);

    auto [train2, test2] = split(ds, {5, 1}, 31);
    EXPECT_EQ(train.labels, train2.labels);
    for (size_t i = 0; i < train.size(); ++i)
        ASSERT_EQ(train.images[i].data, train2.images[i].data);
    auto [train3, test3] = split(ds, {5, 1}, 32);
    bool same = train3.labels == train.labels;
    if (same)
        for (size_t i = 0; i < train.size() && same; ++i)
            same = train3.images[i].data == train.images[i].data;
    EXPECT_FALSE(same) << "different split seed produced the identical split";
}

TEST(Split, RatioValidation) {
    auto ds = make_synthetic(blob_spec(2, 3, 8, 1)).anchor;
    EXPECT_THROW(split(ds, {0, 0}, 1), ConfigError);
    EXPECT_THROW(split(ds, {-1, 2}, 1), ConfigError);
    EXPECT_EQ(parse_ratio("5:1").train, 5);
    EXPECT_EQ(parse_ratio("5:1").test, 1);
    EXPECT_THROW(parse_ratio("51"), ConfigError);
}
