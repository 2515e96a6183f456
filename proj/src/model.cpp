#include "cofinal/model.hpp"

#include <cmath>

#include "cofinal/errors.hpp"

namespace cofinal {

Activation activation_from_string(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "leaky_relu") return Activation::LeakyRelu;
    if (name == "relu_shifted") return Activation::ReluShifted;
    throw ConfigError("unknown activation '" + name + "'");
}

std::string activation_to_string(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::LeakyRelu: return "leaky_relu";
        case Activation::ReluShifted: return "relu_shifted";
    }
    throw ConfigError("invalid activation enum");
}

Tensor apply_activation(const Tensor& x, Activation mode) {
    switch (mode) {
        case Activation::Relu: return relu(x);
        case Activation::Sigmoid: return sigmoid(x);
        case Activation::LeakyRelu: return leaky_relu(x, 0.01);
        case Activation::ReluShifted: return shifted_relu(x, 0.5);
    }
    throw ConfigError("invalid activation enum");
}

Tensor align_features(const Tensor& v, int mode, double mode0_upper) {
    if (mode < 0 || mode > 2) {
        throw ConfigError("align_features: mode must be 0, 1 or 2");
    }
    double lo = 0.0, hi = 1.0;
    if (mode == 0) hi = mode0_upper;
    if (mode == 1) lo = -1.0;

    const Tensor mn = reduce_min(v);
    const Tensor mx = reduce_max(v);
    const double span = mx.item() - mn.item();
    if (span < 1e-12) {
        return Tensor::full(v.shape(), 0.5 * (lo + hi));
    }
    const Tensor inv_span = pow_const(sub(mx, mn), -1.0);
    const Tensor unit = mul_scalar_tensor(sub_scalar_tensor(v, mn), inv_span);
    return add_const(scale(unit, hi - lo), lo);
}

void ModelConfig::validate() const {
    if (input_dim < 1 || procedure_dim < 1 || scoring_dim < 1 || procedures < 1 ||
        train_clips < 1) {
        throw ConfigError("ModelConfig: all dimensions must be >= 1");
    }
    if (grades < 2 || sub_grades < 2) {
        throw ConfigError("ModelConfig: need grades >= 2 and sub_grades >= 2");
    }
    if (scoring_dim < sub_grades) {
        throw ConfigError("ModelConfig: scoring_dim must be >= sub_grades for the ETF");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
        throw ConfigError("ModelConfig: dropout_p must lie in [0, 1)");
    }
    if (align_mode < 0 || align_mode > 2) {
        throw ConfigError("ModelConfig: align_mode must be 0, 1 or 2");
    }
}

namespace {

// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] for weights and biases.
AffineWeights init_affine(std::size_t in, std::size_t out, RngStream& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(in * out), b(out);
    for (double& x : w) x = (2.0 * rng.next_double() - 1.0) * bound;
    for (double& x : b) x = (2.0 * rng.next_double() - 1.0) * bound;
    return AffineWeights{Tensor::from_values({in, out}, std::move(w), true),
                         Tensor::from_values({out}, std::move(b), true)};
}

Tensor expected_index(const Tensor& probs) {
    const std::size_t n = probs.size();
    std::vector<double> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<double>(i);
    return sum(mul(probs, Tensor::from_values({n}, std::move(idx))));
}

std::size_t argmax_lowest(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace

Model::Model(ModelConfig cfg, RngStream& rng) : cfg_(cfg) {
    cfg_.validate();

    // Fixed construction order: ETF rotation first, then parameters in
    // checkpoint order.
    RngStream etf_rng = rng.split();
    etf_ = build_etf(cfg_.scoring_dim, cfg_.sub_grades, etf_rng);
    etf_const_ = Tensor::from_values({cfg_.sub_grades, cfg_.scoring_dim}, etf_.rows);

    tfm_.key = init_affine(cfg_.input_dim, cfg_.procedure_dim, rng);
    tfm_.query = init_affine(cfg_.input_dim, cfg_.procedures * cfg_.procedure_dim, rng);
    tfm_.value = init_affine(cfg_.input_dim, cfg_.procedure_dim, rng);

    // Grade prototypes: standard normal scaled by 0.02.
    std::vector<double> proto(cfg_.grades * cfg_.procedure_dim);
    for (double& x : proto) x = 0.02 * rng.next_normal();
    prototypes_ = Tensor::from_values({cfg_.grades, cfg_.procedure_dim},
                                      std::move(proto), true);

    gpm_.query = init_affine(cfg_.procedure_dim, cfg_.scoring_dim, rng);
    gpm_.key = init_affine(cfg_.procedure_dim, cfg_.scoring_dim, rng);
    gpm_.value = init_affine(cfg_.procedure_dim, cfg_.scoring_dim, rng);

    head_.hidden = init_affine(cfg_.grades * cfg_.scoring_dim, cfg_.scoring_dim, rng);
    head_.out = init_affine(cfg_.scoring_dim, cfg_.grades, rng);
}

std::vector<NamedParam> Model::params() {
    return {
        {"tfm.key.weight", tfm_.key.weight},     {"tfm.key.bias", tfm_.key.bias},
        {"tfm.query.weight", tfm_.query.weight}, {"tfm.query.bias", tfm_.query.bias},
        {"tfm.value.weight", tfm_.value.weight}, {"tfm.value.bias", tfm_.value.bias},
        {"prototypes", prototypes_},
        {"gpm.query.weight", gpm_.query.weight}, {"gpm.query.bias", gpm_.query.bias},
        {"gpm.key.weight", gpm_.key.weight},     {"gpm.key.bias", gpm_.key.bias},
        {"gpm.value.weight", gpm_.value.weight}, {"gpm.value.bias", gpm_.value.bias},
        {"head.hidden.weight", head_.hidden.weight},
        {"head.hidden.bias", head_.hidden.bias},
        {"head.out.weight", head_.out.weight},   {"head.out.bias", head_.out.bias},
    };
}

Tensor Model::tfm_forward(const Tensor& clips, bool training, RngStream& rng) const {
    if (clips.rank() != 2 || clips.shape()[1] != cfg_.input_dim) {
        throw DimensionError("tfm_forward: clip matrix must be [C x input_dim]");
    }
    if (clips.shape()[0] == 0) {
        throw DimensionError("tfm_forward: empty clip set");
    }
    const Tensor keys = affine_map(clips, tfm_.key.weight, tfm_.key.bias);
    const Tensor values = affine_map(clips, tfm_.value.weight, tfm_.value.bias);
    // Per-clip bundle of P query vectors, averaged over clips.
    const Tensor queries_flat = affine_map(clips, tfm_.query.weight, tfm_.query.bias);
    const Tensor pooled_query =
        reshape(avg_pool(queries_flat, 0), {cfg_.procedures, cfg_.procedure_dim});
    const Tensor fused = scaled_dot_attention(pooled_query, keys, values);
    return dropout(fused, cfg_.dropout_p, rng, training);
}

GpmOutput Model::gpm_forward(const Tensor& enhanced) const {
    if (enhanced.rank() != 2 || enhanced.shape()[1] != cfg_.procedure_dim) {
        throw DimensionError("gpm_forward: expected [P x procedure_dim] input");
    }
    const Tensor query = affine_map(prototypes_, gpm_.query.weight, gpm_.query.bias);
    const Tensor keys = affine_map(enhanced, gpm_.key.weight, gpm_.key.bias);
    const Tensor values = affine_map(enhanced, gpm_.value.weight, gpm_.value.bias);

    GpmOutput out;
    out.coarse = scaled_dot_attention(query, keys, values);
    out.mask = softmax(avg_pool(out.coarse, 1), 0);
    // The printed formula subtracts the raw prototypes, whose width differs
    // from the coarse responses; the query embedding is the prototypes
    // carried into that space, so the residual is taken against it.
    out.fine = scale_rows(sub(out.coarse, query), out.mask);
    return out;
}

Tensor Model::coarse_head_forward(const Tensor& coarse, bool training,
                                  RngStream& rng) const {
    const Tensor flat = reshape(coarse, {1, cfg_.grades * cfg_.scoring_dim});
    Tensor hidden = affine_map(flat, head_.hidden.weight, head_.hidden.bias);
    hidden = apply_activation(hidden, cfg_.activation);
    hidden = dropout(hidden, cfg_.dropout_p, rng, training);
    const Tensor logits = affine_map(hidden, head_.out.weight, head_.out.bias);
    return reshape(logits, {cfg_.grades});
}

FgsOutput fgs_from_pooled(const Tensor& pooled, const Tensor& etf_const) {
    FgsOutput out;
    out.pooled = pooled;
    const Tensor norm_sq = sum(square(pooled));
    if (std::sqrt(norm_sq.item()) < 1e-12) {
        out.degenerate = true;
        out.similarities = Tensor::zeros({etf_const.shape()[0]});
        return out;
    }
    const Tensor unit = mul_scalar_tensor(pooled, pow_const(norm_sq, -0.5));
    out.similarities = reshape(
        matmul(etf_const, reshape(unit, {unit.size(), 1})), {etf_const.shape()[0]});
    return out;
}

FgsOutput Model::fgs_forward(const Tensor& fine) const {
    if (fine.rank() != 2 || fine.shape()[1] != cfg_.scoring_dim) {
        throw ConfigError("fgs_forward: expected [G x scoring_dim] input matching the ETF");
    }
    const std::size_t rows = fine.shape()[0];
    Tensor acc;
    for (std::size_t r = 0; r < rows; ++r) {
        std::vector<std::size_t> idx(cfg_.scoring_dim);
        for (std::size_t c = 0; c < cfg_.scoring_dim; ++c) idx[c] = r * cfg_.scoring_dim + c;
        const Tensor aligned = align_features(gather(fine, idx), cfg_.align_mode,
                                              static_cast<double>(cfg_.input_dim));
        acc = r == 0 ? aligned : add(acc, aligned);
    }
    const Tensor pooled = scale(acc, 1.0 / static_cast<double>(rows));
    return fgs_from_pooled(pooled, etf_const_);
}

PredictionBundle Model::forward(const Tensor& clips, const GradingScheme& scheme,
                                bool training, RngStream& rng) const {
    if (scheme.grades != cfg_.grades || scheme.sub_grades != cfg_.sub_grades) {
        throw ConfigError("model forward: grading scheme does not match model grades");
    }
    const Tensor enhanced = tfm_forward(clips, training, rng);
    const GpmOutput gpm = gpm_forward(enhanced);

    PredictionBundle out;
    out.coarse_logits = coarse_head_forward(gpm.coarse, training, rng);
    out.coarse_probs = softmax(out.coarse_logits, 0);
    out.hard_grade = argmax_lowest(out.coarse_logits.values());

    const FgsOutput fgs = fgs_forward(gpm.fine);
    out.fine_similarities = fgs.similarities;
    out.pooled_fine = fgs.pooled;
    out.degenerate_fine = fgs.degenerate;
    out.hard_sub_grade = argmax_lowest(fgs.similarities.values());

    out.expected_grade = expected_index(out.coarse_probs);
    out.expected_sub_grade = expected_index(softmax(out.fine_similarities, 0));
    out.score = add(scale(out.expected_grade, scheme.grade_span),
                    scale(out.expected_sub_grade, scheme.sub_span));
    return out;
}

Tensor clips_to_tensor(const std::vector<float>& features, std::size_t clips,
                       std::size_t dim) {
    if (features.size() != clips * dim) {
        throw DimensionError("clips_to_tensor: buffer does not match C x D");
    }
    std::vector<double> v(features.begin(), features.end());
    return Tensor::from_values({clips, dim}, std::move(v));
}

}  // namespace cofinal
