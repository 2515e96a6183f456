#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "cofinal/errors.hpp"
#include "cofinal/trainer.hpp"

using namespace cofinal;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<unsigned char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.seed = 0;
    cfg.model.input_dim = 8;
    cfg.model.procedure_dim = 4;
    cfg.model.scoring_dim = 4;
    cfg.model.procedures = 2;
    cfg.model.train_clips = 2;
    cfg.model.dropout_p = 0.1;
    cfg.grading = GradingScheme::uniform(1.0, 3, 4);
    cfg.optim.batch_size = 8;
    cfg.optim.epochs = 6;
    cfg.synth.samples = 24;
    cfg.synth.clips = 3;
    cfg.synth.dim = 8;
    cfg.synth.grades = 3;
    cfg.synth.sub_grades = 4;
    cfg.synth.noise_sigma = 0.05;
    cfg.synth.seed = 11;
    return cfg;
}

std::pair<FeatureDataset, FeatureDataset> tiny_data(const RunConfig& cfg) {
    const FeatureDataset all = synth_generate(cfg.synth);
    return split_dataset(all, 16);
}

}  // namespace

TEST_CASE("two seed-0 runs produce identical histories") {
    const RunConfig cfg = tiny_config();
    const auto [train_set, test_set] = tiny_data(cfg);
    const TrainResult a = train(cfg, train_set, test_set);
    const TrainResult b = train(cfg, train_set, test_set);
    CHECK(a.history.to_csv() == b.history.to_csv());
    CHECK(a.checkpoint.rng_state == b.checkpoint.rng_state);
    CHECK(a.checkpoint.param_values == b.checkpoint.param_values);
}

TEST_CASE("logged totals decompose into weighted parts") {
    RunConfig cfg = tiny_config();
    cfg.loss.lambda_coarse = 0.5;
    cfg.loss.lambda_fine = 2.0;
    const auto [train_set, test_set] = tiny_data(cfg);
    const TrainResult r = train(cfg, train_set, test_set);
    CHECK(r.history.records.size() == cfg.optim.epochs);
    for (const auto& rec : r.history.records) {
        const double recomposed = rec.loss_s + cfg.loss.lambda_coarse * rec.loss_c +
                                  cfg.loss.lambda_fine * rec.loss_f +
                                  cfg.loss.lambda_reg * rec.loss_r;
        CHECK(std::abs(rec.loss_total - recomposed) < 1e-12);
        CHECK(rec.lr ==
              cosine_lr(rec.epoch, cfg.optim.epochs, cfg.optim.lr_max, cfg.optim.lr_min));
        CHECK(std::isfinite(rec.train_srcc));
        CHECK(std::isfinite(rec.test_srcc));
    }
}

TEST_CASE("prototypes keep training without the graph regularizer") {
    RunConfig cfg = tiny_config();
    cfg.loss.lambda_reg = 0.0;
    const auto [train_set, test_set] = tiny_data(cfg);
    const TrainResult r = train(cfg, train_set, test_set);

    RngStream rng(cfg.seed);
    Model fresh(cfg.effective_model(), rng);
    const auto initial = fresh.prototypes().values();
    bool moved = false;
    for (std::size_t i = 0; i < r.checkpoint.param_values.size(); ++i) {
        if (r.checkpoint.param_names[i] == "prototypes") {
            moved = r.checkpoint.param_values[i] != initial;
        }
    }
    CHECK(moved);
}

TEST_CASE("zero gradients with zero weight decay leave parameters fixed") {
    Tensor p = Tensor::from_values({3}, {1.0, -2.0, 0.5}, true);
    std::vector<double> v(3, 0.0);
    sgd_momentum_step(p, {0.0, 0.0, 0.0}, v, 0.5, 0.9, 0.0);
    CHECK(p.values() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("checkpoints round trip byte-identically") {
    const RunConfig cfg = tiny_config();
    const auto [train_set, test_set] = tiny_data(cfg);
    const TrainResult r = train(cfg, train_set, test_set);

    const std::string p1 = temp_path("cofinal_ck1.cofk");
    const std::string p2 = temp_path("cofinal_ck2.cofk");
    save_checkpoint(p1, r.checkpoint);
    const Checkpoint loaded = load_checkpoint(p1);
    save_checkpoint(p2, loaded);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(loaded.epoch == r.checkpoint.epoch);
    CHECK(loaded.rng_state == r.checkpoint.rng_state);
    CHECK(loaded.param_values == r.checkpoint.param_values);
    CHECK(loaded.velocities == r.checkpoint.velocities);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("resuming mid-run matches the uninterrupted run bit-for-bit") {
    const RunConfig cfg = tiny_config();
    const auto [train_set, test_set] = tiny_data(cfg);

    const TrainResult full = train(cfg, train_set, test_set);
    const TrainResult head = train(cfg, train_set, test_set, 3);
    CHECK(head.checkpoint.epoch == 3);

    const std::string path = temp_path("cofinal_resume.cofk");
    save_checkpoint(path, head.checkpoint);
    const TrainResult tail = resume(load_checkpoint(path), train_set, test_set);
    std::remove(path.c_str());

    CHECK(head.history.records.size() + tail.history.records.size() ==
          full.history.records.size());
    TrainHistory glued;
    glued.records = head.history.records;
    glued.records.insert(glued.records.end(), tail.history.records.begin(),
                         tail.history.records.end());
    CHECK(glued.to_csv() == full.history.to_csv());
    CHECK(tail.checkpoint.param_values == full.checkpoint.param_values);
    CHECK(tail.checkpoint.velocities == full.checkpoint.velocities);
    CHECK(tail.checkpoint.rng_state == full.checkpoint.rng_state);
}

TEST_CASE("corrupted or foreign checkpoint files are rejected") {
    const RunConfig cfg = tiny_config();
    const auto [train_set, test_set] = tiny_data(cfg);
    const TrainResult r = train(cfg, train_set, test_set, 1);
    const std::string path = temp_path("cofinal_ckcorrupt.cofk");
    save_checkpoint(path, r.checkpoint);
    auto bytes = slurp(path);

    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x01;
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(flipped.data()),
                  static_cast<std::streamsize>(flipped.size()));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("CRC"), FormatError);

    auto version_bumped = bytes;
    version_bumped[4] = 9;
    // keep the CRC honest so the version check itself fires
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(version_bumped.data()),
                  static_cast<std::streamsize>(version_bumped.size()));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"),
                         FormatError);
    std::remove(path.c_str());
}

TEST_CASE("evaluate on a checkpoint reproduces the final history row") {
    const RunConfig cfg = tiny_config();
    const auto [train_set, test_set] = tiny_data(cfg);
    const TrainResult r = train(cfg, train_set, test_set);
    const EpochRecord& last = r.history.records.back();

    const EvalResult on_test = evaluate(r.checkpoint, test_set);
    CHECK(on_test.srcc == last.test_srcc);
    CHECK(on_test.grade_accuracy == last.grade_acc);

    const EvalResult on_train = evaluate(r.checkpoint, train_set);
    CHECK(on_train.srcc == last.train_srcc);
}

TEST_CASE("evaluation is invariant to dataset order") {
    const RunConfig cfg = tiny_config();
    const auto [train_set, test_set] = tiny_data(cfg);
    const TrainResult r = train(cfg, train_set, test_set, 2);

    FeatureDataset reversed = test_set;
    std::reverse(reversed.samples.begin(), reversed.samples.end());
    CHECK(evaluate(r.checkpoint, reversed).srcc ==
          doctest::Approx(evaluate(r.checkpoint, test_set).srcc).epsilon(1e-12));
}

TEST_CASE("a tiny run memorizes its training split") {
    RunConfig cfg = tiny_config();
    cfg.model.dropout_p = 0.0;
    cfg.model.scoring_dim = 16;
    // a fine sub-grade raster keeps the 8 training scores in distinct cells,
    // and noise keeps their features distinguishable, so a perfect ordering
    // is actually reachable
    cfg.grading = GradingScheme::uniform(1.0, 3, 10);
    cfg.optim.epochs = 500;
    cfg.optim.batch_size = 8;
    cfg.synth.samples = 10;
    cfg.synth.noise_sigma = 0.05;
    cfg.synth.seed = 12;
    const FeatureDataset all = synth_generate(cfg.synth);
    const auto [train_set, test_set] = split_dataset(all, 8);
    const TrainResult r = train(cfg, train_set, test_set);
    CHECK(r.history.records.back().train_srcc == doctest::Approx(1.0));
}

TEST_CASE("exploding losses abort with batch context") {
    RunConfig cfg = tiny_config();
    cfg.optim.lr_max = 1e200;
    cfg.optim.lr_min = 1e199;
    const auto [train_set, test_set] = tiny_data(cfg);
    try {
        train(cfg, train_set, test_set);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_CASE("dimension mismatches are caught before training") {
    RunConfig cfg = tiny_config();
    const auto [train_set, test_set] = tiny_data(cfg);
    cfg.model.input_dim = 12;
    CHECK_THROWS_AS(train(cfg, train_set, test_set), ConfigError);
}
