#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "cofinal/config.hpp"
#include "cofinal/data.hpp"
#include "cofinal/model.hpp"

namespace cofinal {

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_s = 0.0;
    double loss_c = 0.0;
    double loss_f = 0.0;
    double loss_r = 0.0;
    double train_srcc = 0.0;
    double test_srcc = 0.0;
    double grade_acc = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> records;

    // header: epoch,lr,loss_total,loss_s,loss_c,loss_f,loss_r,
    //         train_srcc,test_srcc,grade_acc
    std::string to_csv() const;
};

// Everything needed to continue training bit-for-bit: config, parameter and
// velocity buffers in declared order, completed-epoch count, and the RNG
// state of the training stream.
struct Checkpoint {
    std::uint32_t version = 1;
    RunConfig config;
    std::size_t epoch = 0;
    std::uint64_t rng_state = 0;
    double observed_max = 1.0;  // score normalization captured at train start
    std::vector<std::string> param_names;
    std::vector<std::vector<double>> param_values;
    std::vector<std::vector<double>> velocities;
};

struct TrainResult {
    Checkpoint checkpoint;
    TrainHistory history;
};

struct EvalResult {
    double srcc = 0.0;
    double grade_accuracy = 0.0;
    std::vector<double> predictions;  // normalized scale, dataset order
};

inline constexpr std::size_t kRunToEnd = std::numeric_limits<std::size_t>::max();

// Deterministic training: a single seeded stream drives initialization,
// shuffling, clip sampling and dropout, so (seed, config, data) fully
// determine every logged number.  `stop_after` bounds the number of
// completed epochs without altering the cosine schedule.
TrainResult train(const RunConfig& cfg, const FeatureDataset& train_set,
                  const FeatureDataset& test_set, std::size_t stop_after = kRunToEnd);

// Continue a run from a checkpoint; produces exactly the records the
// uninterrupted run would have produced for the remaining epochs.
TrainResult resume(const Checkpoint& ckpt, const FeatureDataset& train_set,
                   const FeatureDataset& test_set, std::size_t stop_after = kRunToEnd);

// Rebuild the model (ETF included) from a checkpoint.
Model model_from_checkpoint(const Checkpoint& ckpt);

// Deterministic full-clip evaluation without dropout.
EvalResult evaluate(const Model& model, const GradingScheme& scheme,
                    const FeatureDataset& ds, const ScoreNormalizer& norm);
EvalResult evaluate(const Checkpoint& ckpt, const FeatureDataset& ds);

// Checkpoint file: magic "COFK", u32 version, u32 JSON header length, UTF-8
// JSON metadata, raw little-endian float64 parameter and velocity blobs in
// declared order, CRC32 trailer.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cofinal
