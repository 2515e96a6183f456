#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cofinal/etf.hpp"
#include "cofinal/grading.hpp"
#include "cofinal/rng.hpp"
#include "cofinal/tensor.hpp"

namespace cofinal {

enum class Activation { Relu, Sigmoid, LeakyRelu, ReluShifted };

Activation activation_from_string(const std::string& name);
std::string activation_to_string(Activation a);

// Apply the configured head activation: relu, sigmoid, leaky relu (0.01
// slope) or relu shifted by 0.5.
Tensor apply_activation(const Tensor& x, Activation mode);

// Per-vector affine min-max map onto a fixed target range.
// mode 0 -> [0, mode0_upper], mode 1 -> [-1, 1], mode 2 -> [0, 1].
// A constant vector maps to the range midpoint.
Tensor align_features(const Tensor& v, int mode, double mode0_upper);

struct ModelConfig {
    std::size_t input_dim = 1024;     // clip feature dimension fed by the backbone
    std::size_t procedure_dim = 512;  // temporal-fusion embedding width
    std::size_t scoring_dim = 256;    // grade-parsing / scoring embedding width
    std::size_t procedures = 5;       // temporal phases the clips are fused into
    std::size_t grades = 7;           // coarse classes (learned prototypes)
    std::size_t sub_grades = 10;      // fine classes (fixed ETF prototypes)
    std::size_t train_clips = 68;     // contiguous clip window sampled in training
    double dropout_p = 0.3;
    int align_mode = 1;
    Activation activation = Activation::LeakyRelu;

    void validate() const;
};

// One learnable y = xW + b block.
struct AffineWeights {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]
};

struct TfmWeights {
    AffineWeights key;    // input_dim -> procedure_dim
    AffineWeights query;  // input_dim -> procedures * procedure_dim
    AffineWeights value;  // input_dim -> procedure_dim
};

struct GpmWeights {
    AffineWeights query;  // procedure_dim -> scoring_dim, applied to prototypes
    AffineWeights key;    // procedure_dim -> scoring_dim
    AffineWeights value;  // procedure_dim -> scoring_dim
};

struct HeadWeights {
    AffineWeights hidden;  // grades * scoring_dim -> scoring_dim
    AffineWeights out;     // scoring_dim -> grades
};

struct GpmOutput {
    Tensor coarse;  // H_C [G x scoring_dim]
    Tensor fine;    // H_F [G x scoring_dim]
    Tensor mask;    // M   [G], sums to 1
};

struct FgsOutput {
    Tensor similarities;  // [G'], <normalized pooled feature, e_j>
    Tensor pooled;        // h_F [scoring_dim], pre-normalization
    bool degenerate = false;  // ||h_F|| < 1e-12; similarities are all zero
};

struct PredictionBundle {
    Tensor coarse_logits;      // [G]
    Tensor coarse_probs;       // [G]
    Tensor fine_similarities;  // [G']
    Tensor pooled_fine;        // h_F [scoring_dim]
    Tensor expected_grade;     // scalar, sum_g g * coarse_probs[g]
    Tensor expected_sub_grade; // scalar, sum_j j * softmax(similarities)[j]
    Tensor score;              // scalar, expected_grade*S_C + expected_sub_grade*S_F
    std::size_t hard_grade = 0;      // argmax (lowest index on ties)
    std::size_t hard_sub_grade = 0;
    bool degenerate_fine = false;
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// The coarse-to-fine scoring head: temporal fusion of clip features into
// procedure representations, grade parsing against learned prototypes, an
// MLP coarse classifier, and fine-grained scoring against a fixed simplex
// ETF.  All weights are 64-bit; forward passes build a fresh autodiff tape.
class Model {
public:
    // Draws the ETF rotation and all parameter initializations from `rng`
    // in a fixed documented order, so a seed fully determines the model.
    Model(ModelConfig cfg, RngStream& rng);

    const ModelConfig& config() const { return cfg_; }
    const EtfMatrix& etf() const { return etf_; }
    Tensor& prototypes() { return prototypes_; }
    const Tensor& prototypes() const { return prototypes_; }
    TfmWeights& tfm() { return tfm_; }
    GpmWeights& gpm() { return gpm_; }
    HeadWeights& head() { return head_; }

    // Learnable parameters in declared (checkpoint) order; excludes the ETF.
    std::vector<NamedParam> params();

    // clips [C x input_dim] -> procedure features [P x procedure_dim].
    Tensor tfm_forward(const Tensor& clips, bool training, RngStream& rng) const;

    // procedure features -> (H_C, H_F, M).
    GpmOutput gpm_forward(const Tensor& enhanced) const;

    // H_C -> coarse logits [G].
    Tensor coarse_head_forward(const Tensor& coarse, bool training,
                               RngStream& rng) const;

    // H_F rows -> pooled fine feature and ETF similarities.  Rows are
    // range-aligned (align_mode) before pooling.
    FgsOutput fgs_forward(const Tensor& fine) const;

    PredictionBundle forward(const Tensor& clips, const GradingScheme& scheme,
                             bool training, RngStream& rng) const;

private:
    ModelConfig cfg_;
    EtfMatrix etf_;
    Tensor etf_const_;   // [G' x scoring_dim], detached constant copy
    Tensor prototypes_;  // [G x procedure_dim], learnable
    TfmWeights tfm_;
    GpmWeights gpm_;
    HeadWeights head_;
};

// Pooled fine feature and the fixed frame: similarities and degenerate-case
// handling shared by the model forward and the fine loss.
FgsOutput fgs_from_pooled(const Tensor& pooled, const Tensor& etf_const);

// Convert a sample's float clip matrix into a detached input tensor.
Tensor clips_to_tensor(const std::vector<float>& features, std::size_t clips,
                       std::size_t dim);

}  // namespace cofinal
