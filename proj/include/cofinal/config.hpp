#pragma once

#include <cstdint>
#include <string>

#include "cofinal/data.hpp"
#include "cofinal/grading.hpp"
#include "cofinal/losses.hpp"
#include "cofinal/model.hpp"

namespace cofinal {

enum class FineTargetMode { GroundTruth, Predicted };

struct OptimConfig {
    double lr_max = 0.01;
    double lr_min = 0.0001;
    double momentum = 0.9;
    double weight_decay = 0.01;
    std::size_t batch_size = 32;
    std::size_t epochs = 200;

    void validate() const;
};

struct DataConfig {
    std::string train_path;
    std::string test_path;
    bool normalize = true;
};

// Everything one training run depends on.  Grade counts live in `grading`;
// the model's grades/sub_grades are always derived from it.
struct RunConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    GradingScheme grading = GradingScheme::uniform(1.0, 7, 10);
    LossWeights loss;
    FineTargetMode fine_targets = FineTargetMode::GroundTruth;
    OptimConfig optim;
    DataConfig data;
    SynthConfig synth;

    // Model config with grades/sub_grades filled from the grading scheme.
    ModelConfig effective_model() const;
    void validate() const;
};

// JSON document with schema version 1, the exact layout written by
// default_config_json().  Unknown keys are rejected.
std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& text);

// Apply a `path.to.key=value` override; the value is parsed against the
// existing entry's type.  Unknown paths are rejected.
std::string apply_override(const std::string& json_text, const std::string& assignment);

std::string default_config_json();

}  // namespace cofinal
