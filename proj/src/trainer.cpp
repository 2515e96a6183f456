#include "cofinal/trainer.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cofinal/errors.hpp"
#include "cofinal/losses.hpp"
#include "cofinal/metrics.hpp"

namespace cofinal {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct TrainState {
    RunConfig cfg;
    Model model;
    std::vector<NamedParam> params;
    std::vector<std::vector<double>> velocities;
    RngStream rng;
    ScoreNormalizer norm;
    std::size_t epochs_done = 0;
};

TrainState fresh_state(const RunConfig& cfg, const FeatureDataset& train_set) {
    cfg.validate();
    RngStream rng(cfg.seed);
    Model model(cfg.effective_model(), rng);
    TrainState st{cfg, std::move(model), {}, {}, rng, {}, 0};
    st.params = st.model.params();
    st.velocities.resize(st.params.size());
    for (std::size_t i = 0; i < st.params.size(); ++i) {
        st.velocities[i].assign(st.params[i].tensor.size(), 0.0);
    }
    const double observed =
        cfg.data.normalize ? train_set.max_score() : cfg.grading.range;
    st.norm = make_normalizer(observed, cfg.grading.range);
    return st;
}

void check_dataset(const RunConfig& cfg, const FeatureDataset& ds, const char* name) {
    if (ds.size() < 2) {
        throw ConfigError(std::string("train: ") + name +
                          " split needs at least 2 samples");
    }
    if (ds.dim != cfg.model.input_dim) {
        throw ConfigError(std::string("train: ") + name + " feature dim " +
                          std::to_string(ds.dim) + " does not match model input_dim " +
                          std::to_string(cfg.model.input_dim));
    }
}

EvalResult evaluate_impl(const Model& model, const GradingScheme& scheme,
                         const FeatureDataset& ds, const ScoreNormalizer& norm) {
    if (ds.size() < 2) throw MetricError("evaluate: need at least 2 samples");
    NoGradGuard guard;
    RngStream unused(0);  // evaluation consumes no randomness

    EvalResult out;
    out.predictions.reserve(ds.size());
    std::vector<double> truths;
    truths.reserve(ds.size());
    std::size_t grade_hits = 0;
    for (const auto& sample : ds.samples) {
        const Tensor clips = clips_to_tensor(sample.features, sample.clips, sample.dim);
        const PredictionBundle bundle = model.forward(clips, scheme, false, unused);
        const double truth = norm.forward(sample.score);
        out.predictions.push_back(bundle.score.item());
        truths.push_back(truth);
        if (bundle.hard_grade == decompose(truth, scheme).grade) ++grade_hits;
    }
    out.srcc = srcc(out.predictions, truths);
    out.grade_accuracy = static_cast<double>(grade_hits) / static_cast<double>(ds.size());
    return out;
}

EpochRecord run_epoch(TrainState& st, const FeatureDataset& train_set,
                      const FeatureDataset& test_set) {
    const RunConfig& cfg = st.cfg;
    const GradingScheme& scheme = cfg.grading;
    const std::size_t epoch = st.epochs_done;
    const double lr = cosine_lr(epoch, cfg.optim.epochs, cfg.optim.lr_max,
                                cfg.optim.lr_min);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    // Fisher-Yates driven by the training stream.
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = st.rng.next_below(i);
        std::swap(order[i - 1], order[j]);
    }

    double sum_s = 0.0, sum_c = 0.0, sum_f = 0.0, sum_r = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += cfg.optim.batch_size, ++batch_index) {
        const std::size_t end = std::min(begin + cfg.optim.batch_size, order.size());
        const std::size_t n = end - begin;

        try {
            std::vector<Tensor> scores, logits, pooled;
            std::vector<double> truth;
            std::vector<std::size_t> grade_labels, fine_targets;
            scores.reserve(n);
            logits.reserve(n);
            pooled.reserve(n);
            for (std::size_t t = begin; t < end; ++t) {
                const ClipFeatureSet& sample = train_set.samples[order[t]];
                const ClipFeatureSet window =
                    sample_clips(sample, cfg.model.train_clips, true, st.rng);
                const Tensor clips =
                    clips_to_tensor(window.features, window.clips, window.dim);
                const PredictionBundle bundle =
                    st.model.forward(clips, scheme, true, st.rng);
                const double s = st.norm.forward(sample.score);
                const GradePair gp = decompose(s, scheme);
                scores.push_back(bundle.score);
                logits.push_back(bundle.coarse_logits);
                pooled.push_back(bundle.pooled_fine);
                truth.push_back(s);
                grade_labels.push_back(gp.grade);
                fine_targets.push_back(cfg.fine_targets == FineTargetMode::GroundTruth
                                           ? gp.sub_grade
                                           : bundle.hard_sub_grade);
            }

            const Tensor loss_s = score_loss(scores, truth);
            const Tensor loss_c = coarse_loss(logits, grade_labels);
            const Tensor loss_f = fine_loss(pooled, fine_targets, st.model.etf());
            const Tensor loss_r = graph_reg_loss(st.model.prototypes());
            const Tensor total = total_loss(loss_s, loss_c, loss_f, loss_r, cfg.loss);

            for (auto& p : st.params) p.tensor.zero_grad();
            total.backward();
            for (std::size_t i = 0; i < st.params.size(); ++i) {
                sgd_momentum_step(st.params[i].tensor, st.params[i].tensor.node()->grad,
                                  st.velocities[i], lr, cfg.optim.momentum,
                                  cfg.optim.weight_decay);
            }

            const double w = static_cast<double>(n);
            sum_s += loss_s.item() * w;
            sum_c += loss_c.item() * w;
            sum_f += loss_f.item() * w;
            sum_r += loss_r.item() * w;
        } catch (const NumericError& e) {
            throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batch_index) + ": " + e.what());
        }
    }

    const double inv_n = 1.0 / static_cast<double>(train_set.size());
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss_s = sum_s * inv_n;
    rec.loss_c = sum_c * inv_n;
    rec.loss_f = sum_f * inv_n;
    rec.loss_r = sum_r * inv_n;
    rec.loss_total = rec.loss_s + cfg.loss.lambda_coarse * rec.loss_c +
                     cfg.loss.lambda_fine * rec.loss_f +
                     cfg.loss.lambda_reg * rec.loss_r;

    const EvalResult on_train = evaluate_impl(st.model, scheme, train_set, st.norm);
    const EvalResult on_test = evaluate_impl(st.model, scheme, test_set, st.norm);
    rec.train_srcc = on_train.srcc;
    rec.test_srcc = on_test.srcc;
    rec.grade_acc = on_test.grade_accuracy;

    st.epochs_done = epoch + 1;
    return rec;
}

Checkpoint snapshot(const TrainState& st) {
    Checkpoint ckpt;
    ckpt.config = st.cfg;
    ckpt.epoch = st.epochs_done;
    ckpt.rng_state = st.rng.state();
    ckpt.observed_max = st.norm.observed_max;
    for (const auto& p : st.params) {
        ckpt.param_names.push_back(p.name);
        ckpt.param_values.push_back(p.tensor.values());
    }
    ckpt.velocities = st.velocities;
    return ckpt;
}

TrainResult run_until(TrainState& st, const FeatureDataset& train_set,
                      const FeatureDataset& test_set, std::size_t stop_after) {
    const std::size_t stop = std::min(stop_after, st.cfg.optim.epochs);
    TrainResult result;
    while (st.epochs_done < stop) {
        result.history.records.push_back(run_epoch(st, train_set, test_set));
    }
    result.checkpoint = snapshot(st);
    return result;
}

}  // namespace

std::string TrainHistory::to_csv() const {
    std::ostringstream os;
    os << "epoch,lr,loss_total,loss_s,loss_c,loss_f,loss_r,train_srcc,test_srcc,"
          "grade_acc\n";
    for (const auto& r : records) {
        os << r.epoch << ',' << fmt_double(r.lr) << ',' << fmt_double(r.loss_total)
           << ',' << fmt_double(r.loss_s) << ',' << fmt_double(r.loss_c) << ','
           << fmt_double(r.loss_f) << ',' << fmt_double(r.loss_r) << ','
           << fmt_double(r.train_srcc) << ',' << fmt_double(r.test_srcc) << ','
           << fmt_double(r.grade_acc) << '\n';
    }
    return os.str();
}

TrainResult train(const RunConfig& cfg, const FeatureDataset& train_set,
                  const FeatureDataset& test_set, std::size_t stop_after) {
    check_dataset(cfg, train_set, "train");
    check_dataset(cfg, test_set, "test");
    TrainState st = fresh_state(cfg, train_set);
    return run_until(st, train_set, test_set, stop_after);
}

TrainResult resume(const Checkpoint& ckpt, const FeatureDataset& train_set,
                   const FeatureDataset& test_set, std::size_t stop_after) {
    check_dataset(ckpt.config, train_set, "train");
    check_dataset(ckpt.config, test_set, "test");
    TrainState st = fresh_state(ckpt.config, train_set);
    if (ckpt.param_values.size() != st.params.size() ||
        ckpt.velocities.size() != st.params.size()) {
        throw FormatError("resume: checkpoint parameter count does not match model");
    }
    for (std::size_t i = 0; i < st.params.size(); ++i) {
        if (ckpt.param_names[i] != st.params[i].name ||
            ckpt.param_values[i].size() != st.params[i].tensor.size()) {
            throw FormatError("resume: checkpoint parameter '" + ckpt.param_names[i] +
                              "' does not match model layout");
        }
        st.params[i].tensor.values_mut() = ckpt.param_values[i];
        st.velocities[i] = ckpt.velocities[i];
    }
    st.rng.set_state(ckpt.rng_state);
    st.norm = make_normalizer(ckpt.observed_max, ckpt.config.grading.range);
    st.epochs_done = ckpt.epoch;
    return run_until(st, train_set, test_set, stop_after);
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    RngStream rng(ckpt.config.seed);
    Model model(ckpt.config.effective_model(), rng);
    auto params = model.params();
    if (ckpt.param_values.size() != params.size()) {
        throw FormatError("checkpoint parameter count does not match model");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (ckpt.param_names[i] != params[i].name ||
            ckpt.param_values[i].size() != params[i].tensor.size()) {
            throw FormatError("checkpoint parameter '" + ckpt.param_names[i] +
                              "' does not match model layout");
        }
        params[i].tensor.values_mut() = ckpt.param_values[i];
    }
    return model;
}

EvalResult evaluate(const Model& model, const GradingScheme& scheme,
                    const FeatureDataset& ds, const ScoreNormalizer& norm) {
    return evaluate_impl(model, scheme, ds, norm);
}

EvalResult evaluate(const Checkpoint& ckpt, const FeatureDataset& ds) {
    const Model model = model_from_checkpoint(ckpt);
    const ScoreNormalizer norm =
        make_normalizer(ckpt.observed_max, ckpt.config.grading.range);
    return evaluate_impl(model, ckpt.config.grading, ds, norm);
}

// ---- checkpoint file ----

namespace {

constexpr char kCkptMagic[4] = {'C', 'O', 'F', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
    buf.push_back(static_cast<unsigned char>(v));
    buf.push_back(static_cast<unsigned char>(v >> 8));
    buf.push_back(static_cast<unsigned char>(v >> 16));
    buf.push_back(static_cast<unsigned char>(v >> 24));
}

void put_f64(std::vector<unsigned char>& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i)
        buf.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 |
           static_cast<std::uint32_t>(p[3]) << 24;
}

double read_f64(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json meta;
    meta["config"] = json::parse(config_to_json(ckpt.config));
    meta["epoch"] = ckpt.epoch;
    meta["rng_state"] = ckpt.rng_state;
    meta["observed_max"] = ckpt.observed_max;
    json params = json::array();
    for (std::size_t i = 0; i < ckpt.param_names.size(); ++i) {
        params.push_back({{"name", ckpt.param_names[i]},
                          {"size", ckpt.param_values[i].size()}});
    }
    meta["params"] = params;
    const std::string header = meta.dump();

    std::vector<unsigned char> buf;
    buf.insert(buf.end(), kCkptMagic, kCkptMagic + 4);
    put_u32(buf, kCkptVersion);
    put_u32(buf, static_cast<std::uint32_t>(header.size()));
    buf.insert(buf.end(), header.begin(), header.end());
    for (const auto& values : ckpt.param_values)
        for (double v : values) put_f64(buf, v);
    for (const auto& values : ckpt.velocities)
        for (double v : values) put_f64(buf, v);
    put_u32(buf, static_cast<std::uint32_t>(::crc32(
                     0L, reinterpret_cast<const Bytef*>(buf.data()),
                     static_cast<uInt>(buf.size()))));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("save_checkpoint: cannot open '" + path + "'");
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw FormatError("save_checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("load_checkpoint: cannot open '" + path + "'");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 16) throw FormatError("load_checkpoint: file too short");
    if (std::memcmp(buf.data(), kCkptMagic, 4) != 0) {
        throw FormatError("load_checkpoint: bad magic at byte 0");
    }
    const std::uint32_t version = read_u32(buf.data() + 4);
    if (version != kCkptVersion) {
        throw FormatError("load_checkpoint: incompatible version " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kCkptVersion));
    }
    const std::uint32_t header_len = read_u32(buf.data() + 8);
    if (12 + static_cast<std::size_t>(header_len) + 4 > buf.size()) {
        throw FormatError("load_checkpoint: truncated JSON header");
    }

    const std::uint32_t stored_crc = read_u32(buf.data() + buf.size() - 4);
    const std::uint32_t actual_crc = static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(buf.data()),
                static_cast<uInt>(buf.size() - 4)));
    if (stored_crc != actual_crc) {
        throw FormatError("load_checkpoint: CRC failure, file is corrupted");
    }

    json meta;
    try {
        meta = json::parse(std::string(buf.begin() + 12, buf.begin() + 12 + header_len));
    } catch (const json::exception& e) {
        throw FormatError(std::string("load_checkpoint: bad JSON header: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.config = config_from_json(meta.at("config").dump());
        ckpt.epoch = meta.at("epoch").get<std::size_t>();
        ckpt.rng_state = meta.at("rng_state").get<std::uint64_t>();
        ckpt.observed_max = meta.at("observed_max").get<double>();
        std::size_t total = 0;
        for (const auto& p : meta.at("params")) {
            ckpt.param_names.push_back(p.at("name").get<std::string>());
            ckpt.param_values.emplace_back(p.at("size").get<std::size_t>());
            total += ckpt.param_values.back().size();
        }
        const std::size_t expected_bytes = 12 + header_len + 2 * total * 8 + 4;
        if (buf.size() != expected_bytes) {
            throw FormatError("load_checkpoint: payload is " +
                              std::to_string(buf.size()) + " bytes, expected " +
                              std::to_string(expected_bytes));
        }
        const unsigned char* at = buf.data() + 12 + header_len;
        for (auto& values : ckpt.param_values)
            for (double& v : values) {
                v = read_f64(at);
                at += 8;
            }
        ckpt.velocities.resize(ckpt.param_values.size());
        for (std::size_t i = 0; i < ckpt.velocities.size(); ++i) {
            ckpt.velocities[i].resize(ckpt.param_values[i].size());
            for (double& v : ckpt.velocities[i]) {
                v = read_f64(at);
                at += 8;
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("load_checkpoint: bad metadata: ") + e.what());
    }
    return ckpt;
}

}  // namespace cofinal
