#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cofinal/rng.hpp"

namespace cofinal {

// One sample: a C x D matrix of backbone clip features (row per clip) and
// its scalar ground-truth score.  Features are stored as float32, matching
// the on-disk format exactly so round trips are bit-identical.
struct ClipFeatureSet {
    std::size_t clips = 0;
    std::size_t dim = 0;
    std::vector<float> features;  // row-major clips x dim
    double score = 0.0;
};

struct FeatureDataset {
    std::vector<ClipFeatureSet> samples;
    std::size_t dim = 0;

    std::size_t size() const { return samples.size(); }
    double max_score() const;
};

struct SynthConfig {
    std::size_t samples = 250;
    std::size_t clips = 8;
    std::size_t dim = 32;
    std::size_t grades = 7;
    std::size_t sub_grades = 10;
    double noise_sigma = 0.1;
    double score_range = 100.0;
    std::uint64_t seed = 0;
};

// Plants a recoverable quality structure: per-grade mean vectors and a
// sub-grade-scaled direction, plus per-clip phase vectors and Gaussian
// noise.  The label is the latent quality drawn uniformly from
// [0, score_range).  Deterministic per seed.
FeatureDataset synth_generate(const SynthConfig& cfg);

// First `head` samples and the remainder, preserving order.
std::pair<FeatureDataset, FeatureDataset> split_dataset(const FeatureDataset& ds,
                                                        std::size_t head);

// Training: a contiguous window of `train_clips` clips starting at a random
// offset (all clips if the sample is no longer than the window).
// Evaluation: the sample unchanged.
ClipFeatureSet sample_clips(const ClipFeatureSet& sample, std::size_t train_clips,
                            bool training, RngStream& rng);

// Binary feature file: magic "COFI", u32 version=1, u32 N, u32 C (0 for
// variable clip counts, then N u32 counts), u32 D, N*C*D float32 features,
// N float64 scores, CRC32 of all preceding bytes.  Little-endian throughout.
void write_features(const std::string& path, const FeatureDataset& ds);
FeatureDataset read_features(const std::string& path);

}  // namespace cofinal
