#include "cofinal/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cofinal/errors.hpp"
#include "cofinal/grading.hpp"

namespace cofinal {

double FeatureDataset::max_score() const {
    double mx = 0.0;
    for (const auto& s : samples) mx = std::max(mx, s.score);
    return mx;
}

FeatureDataset synth_generate(const SynthConfig& cfg) {
    if (cfg.samples == 0 || cfg.clips == 0 || cfg.dim == 0) {
        throw ConfigError("synth_generate: samples, clips and dim must be positive");
    }
    if (cfg.noise_sigma < 0.0) {
        throw ConfigError("synth_generate: noise_sigma must be >= 0");
    }
    const GradingScheme scheme =
        GradingScheme::uniform(cfg.score_range, cfg.grades, cfg.sub_grades);

    RngStream rng(cfg.seed);

    // Structure drawn once: per-grade mean vectors, a unit sub-grade
    // direction, and per-clip phase vectors.
    std::vector<std::vector<double>> grade_mean(cfg.grades,
                                                std::vector<double>(cfg.dim));
    for (auto& mean : grade_mean)
        for (double& x : mean) x = rng.next_normal();

    std::vector<double> direction(cfg.dim);
    double norm_sq = 0.0;
    for (double& x : direction) {
        x = rng.next_normal();
        norm_sq += x * x;
    }
    for (double& x : direction) x /= std::sqrt(norm_sq);

    std::vector<std::vector<double>> phase(cfg.clips, std::vector<double>(cfg.dim));
    for (auto& p : phase)
        for (double& x : p) x = 0.5 * rng.next_normal();

    FeatureDataset ds;
    ds.dim = cfg.dim;
    ds.samples.reserve(cfg.samples);
    const double sub_gain = 2.0;
    for (std::size_t i = 0; i < cfg.samples; ++i) {
        const double quality = rng.next_double() * cfg.score_range;
        const GradePair planted = decompose(quality, scheme);
        const double sub_scale =
            sub_gain *
            (static_cast<double>(planted.sub_grade) -
             0.5 * static_cast<double>(cfg.sub_grades - 1)) /
            static_cast<double>(cfg.sub_grades);

        ClipFeatureSet sample;
        sample.clips = cfg.clips;
        sample.dim = cfg.dim;
        sample.score = quality;
        sample.features.resize(cfg.clips * cfg.dim);
        for (std::size_t c = 0; c < cfg.clips; ++c) {
            for (std::size_t d = 0; d < cfg.dim; ++d) {
                double v = grade_mean[planted.grade][d] + sub_scale * direction[d] +
                           phase[c][d];
                if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * rng.next_normal();
                sample.features[c * cfg.dim + d] = static_cast<float>(v);
            }
        }
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

std::pair<FeatureDataset, FeatureDataset> split_dataset(const FeatureDataset& ds,
                                                        std::size_t head) {
    if (head > ds.size()) {
        throw ConfigError("split_dataset: split point exceeds dataset size");
    }
    FeatureDataset a, b;
    a.dim = b.dim = ds.dim;
    a.samples.assign(ds.samples.begin(), ds.samples.begin() + head);
    b.samples.assign(ds.samples.begin() + head, ds.samples.end());
    return {std::move(a), std::move(b)};
}

ClipFeatureSet sample_clips(const ClipFeatureSet& sample, std::size_t train_clips,
                            bool training, RngStream& rng) {
    if (train_clips == 0) throw ConfigError("sample_clips: train_clips must be >= 1");
    if (!training || sample.clips <= train_clips) return sample;
    const std::size_t start = rng.next_below(sample.clips - train_clips + 1);
    ClipFeatureSet out;
    out.clips = train_clips;
    out.dim = sample.dim;
    out.score = sample.score;
    out.features.assign(sample.features.begin() + start * sample.dim,
                        sample.features.begin() + (start + train_clips) * sample.dim);
    return out;
}

// ---- binary format ----

namespace {

constexpr char kMagic[4] = {'C', 'O', 'F', 'I'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
    buf.push_back(static_cast<unsigned char>(v));
    buf.push_back(static_cast<unsigned char>(v >> 8));
    buf.push_back(static_cast<unsigned char>(v >> 16));
    buf.push_back(static_cast<unsigned char>(v >> 24));
}

void put_f32(std::vector<unsigned char>& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

void put_f64(std::vector<unsigned char>& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u32(buf, static_cast<std::uint32_t>(bits));
    put_u32(buf, static_cast<std::uint32_t>(bits >> 32));
}

class Reader {
public:
    Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

    std::size_t offset() const { return at_; }
    std::size_t remaining() const { return size_ - at_; }

    void need(std::size_t n, const char* what) const {
        if (at_ + n > size_) {
            throw FormatError(std::string("feature file truncated at byte ") +
                              std::to_string(at_) + ": " + what + " needs " +
                              std::to_string(n) + " bytes, " +
                              std::to_string(size_ - at_) + " available");
        }
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = static_cast<std::uint32_t>(data_[at_]) |
                          static_cast<std::uint32_t>(data_[at_ + 1]) << 8 |
                          static_cast<std::uint32_t>(data_[at_ + 2]) << 16 |
                          static_cast<std::uint32_t>(data_[at_ + 3]) << 24;
        at_ += 4;
        return v;
    }

    float f32(const char* what) {
        const std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    double f64(const char* what) {
        const std::uint64_t lo = u32(what);
        const std::uint64_t hi = u32(what);
        const std::uint64_t bits = lo | (hi << 32);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

private:
    const unsigned char* data_;
    std::size_t size_;
    std::size_t at_ = 0;
};

std::uint32_t crc_of(const unsigned char* data, std::size_t size) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(size)));
}

}  // namespace

void write_features(const std::string& path, const FeatureDataset& ds) {
    bool fixed = true;
    const std::size_t first_clips = ds.samples.empty() ? 0 : ds.samples[0].clips;
    for (const auto& s : ds.samples) {
        if (s.dim != ds.dim) {
            throw FormatError("write_features: sample dim disagrees with dataset dim");
        }
        if (s.clips != first_clips) fixed = false;
    }

    std::vector<unsigned char> buf;
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<std::uint32_t>(ds.size()));
    put_u32(buf, fixed ? static_cast<std::uint32_t>(first_clips) : 0u);
    put_u32(buf, static_cast<std::uint32_t>(ds.dim));
    if (!fixed) {
        for (const auto& s : ds.samples)
            put_u32(buf, static_cast<std::uint32_t>(s.clips));
    }
    for (const auto& s : ds.samples)
        for (float v : s.features) put_f32(buf, v);
    for (const auto& s : ds.samples) put_f64(buf, s.score);
    put_u32(buf, crc_of(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("write_features: cannot open '" + path + "'");
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw FormatError("write_features: write failed for '" + path + "'");
}

FeatureDataset read_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("read_features: cannot open '" + path + "'");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

    Reader r(buf.data(), buf.size());
    r.need(4, "magic");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw FormatError("read_features: bad magic at byte 0");
    }
    Reader body(buf.data() + 4, buf.size() - 4);
    const std::uint32_t version = body.u32("version");
    if (version != kVersion) {
        throw FormatError("read_features: unsupported version " +
                          std::to_string(version) + " at byte 4 (expected " +
                          std::to_string(kVersion) + ")");
    }
    const std::uint32_t n = body.u32("sample count");
    const std::uint32_t fixed_clips = body.u32("clip count");
    const std::uint32_t dim = body.u32("feature dim");

    std::vector<std::uint32_t> clips(n, fixed_clips);
    if (fixed_clips == 0) {
        for (std::uint32_t i = 0; i < n; ++i) clips[i] = body.u32("per-sample clip count");
    }

    FeatureDataset ds;
    ds.dim = dim;
    ds.samples.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        auto& s = ds.samples[i];
        s.clips = clips[i];
        s.dim = dim;
        s.features.resize(static_cast<std::size_t>(clips[i]) * dim);
        for (auto& v : s.features) v = body.f32("feature block");
    }
    for (std::uint32_t i = 0; i < n; ++i) ds.samples[i].score = body.f64("score block");

    const std::size_t payload_end = 4 + body.offset();
    Reader tail(buf.data() + payload_end, buf.size() - payload_end);
    const std::uint32_t stored_crc = tail.u32("crc");
    if (tail.remaining() != 0) {
        throw FormatError("read_features: " + std::to_string(tail.remaining()) +
                          " trailing bytes after byte " +
                          std::to_string(payload_end + 4));
    }
    const std::uint32_t actual_crc = crc_of(buf.data(), payload_end);
    if (stored_crc != actual_crc) {
        throw FormatError("read_features: CRC mismatch at byte " +
                          std::to_string(payload_end));
    }
    return ds;
}

}  // namespace cofinal
