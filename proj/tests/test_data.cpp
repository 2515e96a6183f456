#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "cofinal/data.hpp"
#include "cofinal/errors.hpp"
#include "cofinal/grading.hpp"
#include "cofinal/metrics.hpp"

using namespace cofinal;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

bool datasets_equal(const FeatureDataset& a, const FeatureDataset& b) {
    if (a.dim != b.dim || a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a.samples[i];
        const auto& y = b.samples[i];
        if (x.clips != y.clips || x.dim != y.dim || x.score != y.score ||
            x.features != y.features) {
            return false;
        }
    }
    return true;
}

std::vector<unsigned char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

// Ridge least squares from mean-pooled clip features (plus bias) to the
// scores; the independent learnability oracle for the synthetic generator.
std::vector<double> linear_probe_predictions(const FeatureDataset& ds) {
    const std::size_t n = ds.size(), d = ds.dim + 1;
    std::vector<std::vector<double>> x(n, std::vector<double>(d, 1.0));
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = ds.samples[i];
        for (std::size_t c = 0; c < s.clips; ++c)
            for (std::size_t k = 0; k < s.dim; ++k)
                x[i][k] += static_cast<double>(s.features[c * s.dim + k]) /
                           static_cast<double>(s.clips);
        y[i] = s.score;
    }
    // normal equations with a small ridge, solved by Gauss elimination
    std::vector<std::vector<double>> a(d, std::vector<double>(d + 1, 0.0));
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += x[i][r] * x[i][c];
            a[r][c] = acc + (r == c ? 1e-8 : 0.0);
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += x[i][r] * y[i];
        a[r][d] = acc;
    }
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        std::swap(a[col], a[pivot]);
        for (std::size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c <= d; ++c) a[r][c] -= f * a[col][c];
        }
    }
    std::vector<double> pred(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) pred[i] += x[i][k] * a[k][d] / a[k][k];
    return pred;
}

}  // namespace

TEST_CASE("feature files round trip bit-for-bit") {
    RngStream rng(1);
    for (int rep = 0; rep < 12; ++rep) {
        FeatureDataset ds;
        ds.dim = 1 + rng.next_below(128);
        const std::size_t n = 1 + rng.next_below(64);
        for (std::size_t i = 0; i < n; ++i) {
            ClipFeatureSet s;
            s.dim = ds.dim;
            s.clips = 1 + rng.next_below(6);
            s.features.resize(s.clips * s.dim);
            for (auto& f : s.features) f = static_cast<float>(rng.next_normal());
            s.score = 100.0 * rng.next_double();
            ds.samples.push_back(std::move(s));
        }
        const std::string path = temp_path("cofinal_roundtrip.cofi");
        write_features(path, ds);
        CHECK(datasets_equal(ds, read_features(path)));
        std::remove(path.c_str());
    }
}

TEST_CASE("fixed and variable clip counts both serialize") {
    FeatureDataset fixed;
    fixed.dim = 3;
    for (int i = 0; i < 4; ++i) {
        ClipFeatureSet s{2, 3, {1, 2, 3, 4, 5, 6}, 1.0 * i};
        fixed.samples.push_back(s);
    }
    const std::string path = temp_path("cofinal_fixed.cofi");
    write_features(path, fixed);
    CHECK(datasets_equal(fixed, read_features(path)));

    FeatureDataset variable = fixed;
    variable.samples[2].clips = 4;
    variable.samples[2].features = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    write_features(path, variable);
    CHECK(datasets_equal(variable, read_features(path)));
    std::remove(path.c_str());
}

TEST_CASE("malformed feature files are rejected with context") {
    FeatureDataset ds;
    ds.dim = 2;
    ds.samples.push_back(ClipFeatureSet{1, 2, {1.0f, 2.0f}, 5.0});
    ds.samples.push_back(ClipFeatureSet{1, 2, {3.0f, 4.0f}, 7.0});
    const std::string path = temp_path("cofinal_malformed.cofi");
    write_features(path, ds);
    auto bytes = slurp(path);

    auto corrupted = bytes;
    corrupted[0] = 'X';
    spit(path, corrupted);
    CHECK_THROWS_WITH_AS(read_features(path),
                         doctest::Contains("bad magic"), FormatError);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 9);
    spit(path, truncated);
    try {
        read_features(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
        CHECK(std::string(e.what()).find("bytes") != std::string::npos);
    }

    auto flipped = bytes;
    flipped[bytes.size() - 10] ^= 0x40;  // corrupt a score, keep the length
    spit(path, flipped);
    CHECK_THROWS_WITH_AS(read_features(path),
                         doctest::Contains("CRC"), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("synthetic generation is deterministic per seed") {
    SynthConfig cfg;
    cfg.samples = 24;
    cfg.clips = 3;
    cfg.dim = 8;
    cfg.seed = 9;
    const FeatureDataset a = synth_generate(cfg);
    const FeatureDataset b = synth_generate(cfg);
    CHECK(datasets_equal(a, b));
    cfg.seed = 10;
    CHECK_FALSE(datasets_equal(a, synth_generate(cfg)));
}

TEST_CASE("noise-free samples in the same cell share a feature matrix") {
    SynthConfig cfg;
    cfg.samples = 120;
    cfg.clips = 2;
    cfg.dim = 6;
    cfg.grades = 3;
    cfg.sub_grades = 3;
    cfg.noise_sigma = 0.0;
    cfg.seed = 4;
    const FeatureDataset ds = synth_generate(cfg);
    const GradingScheme scheme =
        GradingScheme::uniform(cfg.score_range, cfg.grades, cfg.sub_grades);
    bool found_pair = false;
    for (std::size_t i = 0; i < ds.size() && !found_pair; ++i) {
        for (std::size_t j = i + 1; j < ds.size(); ++j) {
            const GradePair a = decompose(ds.samples[i].score, scheme);
            const GradePair b = decompose(ds.samples[j].score, scheme);
            if (a.grade == b.grade && a.sub_grade == b.sub_grade) {
                CHECK(ds.samples[i].features == ds.samples[j].features);
                found_pair = true;
                break;
            }
        }
    }
    CHECK(found_pair);
}

TEST_CASE("a linear probe recovers the planted quality") {
    SynthConfig cfg;
    cfg.samples = 200;
    cfg.clips = 8;
    cfg.dim = 32;
    cfg.noise_sigma = 0.1;
    cfg.seed = 0;
    const FeatureDataset ds = synth_generate(cfg);
    std::vector<double> truth;
    for (const auto& s : ds.samples) truth.push_back(s.score);
    CHECK(srcc(linear_probe_predictions(ds), truth) > 0.95);
}

TEST_CASE("every planted grade appears for N >= 50 G") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SynthConfig cfg;
        cfg.samples = 200;
        cfg.clips = 1;
        cfg.dim = 4;
        cfg.grades = 4;
        cfg.sub_grades = 5;
        cfg.seed = seed;
        const FeatureDataset ds = synth_generate(cfg);
        const GradingScheme scheme =
            GradingScheme::uniform(cfg.score_range, cfg.grades, cfg.sub_grades);
        std::set<std::size_t> grades;
        for (const auto& s : ds.samples) grades.insert(decompose(s.score, scheme).grade);
        CHECK(grades.size() == cfg.grades);
    }
}

TEST_CASE("clip sampling windows are contiguous and honest") {
    ClipFeatureSet sample;
    sample.clips = 10;
    sample.dim = 2;
    sample.score = 3.0;
    for (int i = 0; i < 20; ++i) sample.features.push_back(static_cast<float>(i));

    RngStream rng(6);
    const ClipFeatureSet eval = sample_clips(sample, 4, false, rng);
    CHECK(eval.features == sample.features);

    const ClipFeatureSet whole = sample_clips(sample, 10, true, rng);
    CHECK(whole.features == sample.features);
    const ClipFeatureSet more = sample_clips(sample, 16, true, rng);
    CHECK(more.features == sample.features);

    for (int rep = 0; rep < 50; ++rep) {
        const ClipFeatureSet window = sample_clips(sample, 4, true, rng);
        CHECK(window.clips == 4);
        const float first = window.features[0];
        const std::size_t start = static_cast<std::size_t>(first) / 2;
        CHECK(start + 4 <= sample.clips);
        for (std::size_t i = 0; i < window.features.size(); ++i)
            CHECK(window.features[i] == sample.features[start * 2 + i]);
    }
}
