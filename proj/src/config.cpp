#include "cofinal/config.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "cofinal/errors.hpp"

namespace cofinal {

using nlohmann::json;

void OptimConfig::validate() const {
    if (!(lr_max > 0.0) || !(lr_min >= 0.0) || lr_min > lr_max) {
        throw ConfigError("OptimConfig: need 0 <= lr_min <= lr_max, lr_max > 0");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("OptimConfig: momentum must lie in [0, 1)");
    }
    if (weight_decay < 0.0) throw ConfigError("OptimConfig: weight_decay must be >= 0");
    if (batch_size == 0) throw ConfigError("OptimConfig: batch_size must be >= 1");
    if (epochs == 0) throw ConfigError("OptimConfig: epochs must be >= 1");
}

ModelConfig RunConfig::effective_model() const {
    ModelConfig m = model;
    m.grades = grading.grades;
    m.sub_grades = grading.sub_grades;
    return m;
}

void RunConfig::validate() const {
    effective_model().validate();
    loss.validate();
    optim.validate();
}

namespace {

json grading_to_json(const GradingScheme& g) {
    return json{{"range", g.range},
                {"grades", g.grades},
                {"sub_grades", g.sub_grades}};
}

json config_to_json_doc(const RunConfig& cfg) {
    json j;
    j["version"] = 1;
    j["seed"] = cfg.seed;
    j["model"] = {
        {"input_dim", cfg.model.input_dim},
        {"procedure_dim", cfg.model.procedure_dim},
        {"scoring_dim", cfg.model.scoring_dim},
        {"procedures", cfg.model.procedures},
        {"train_clips", cfg.model.train_clips},
        {"dropout", cfg.model.dropout_p},
        {"align_mode", cfg.model.align_mode},
        {"activation", activation_to_string(cfg.model.activation)},
    };
    j["grading"] = grading_to_json(cfg.grading);
    j["loss"] = {
        {"lambda_coarse", cfg.loss.lambda_coarse},
        {"lambda_fine", cfg.loss.lambda_fine},
        {"lambda_reg", cfg.loss.lambda_reg},
        {"fine_targets",
         cfg.fine_targets == FineTargetMode::GroundTruth ? "ground_truth" : "predicted"},
    };
    j["optim"] = {
        {"lr_max", cfg.optim.lr_max},       {"lr_min", cfg.optim.lr_min},
        {"momentum", cfg.optim.momentum},   {"weight_decay", cfg.optim.weight_decay},
        {"batch_size", cfg.optim.batch_size}, {"epochs", cfg.optim.epochs},
    };
    j["data"] = {
        {"train", cfg.data.train_path},
        {"test", cfg.data.test_path},
        {"normalize", cfg.data.normalize},
    };
    j["synth"] = {
        {"samples", cfg.synth.samples},       {"clips", cfg.synth.clips},
        {"dim", cfg.synth.dim},               {"grades", cfg.synth.grades},
        {"sub_grades", cfg.synth.sub_grades}, {"noise_sigma", cfg.synth.noise_sigma},
        {"score_range", cfg.synth.score_range},
    };
    return j;
}

// Recursively verify `doc` introduces no keys absent from `schema`.
void reject_unknown_keys(const json& doc, const json& schema, const std::string& at) {
    if (!doc.is_object()) return;
    for (const auto& [key, value] : doc.items()) {
        const std::string here = at.empty() ? key : at + "." + key;
        if (!schema.contains(key)) {
            throw ConfigError("config: unknown key '" + here + "'");
        }
        reject_unknown_keys(value, schema.at(key), here);
    }
}

template <typename T>
T fetch(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for '" + key + "': " + e.what());
    }
}

}  // namespace

std::string config_to_json(const RunConfig& cfg) {
    return config_to_json_doc(cfg).dump(2) + "\n";
}

RunConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: JSON parse failure: ") + e.what());
    }
    const json schema = config_to_json_doc(RunConfig{});
    reject_unknown_keys(j, schema, "");

    const int version = fetch<int>(j, "version", 1);
    if (version != 1) {
        throw ConfigError("config: unsupported schema version " + std::to_string(version));
    }

    RunConfig cfg;
    cfg.seed = fetch<std::uint64_t>(j, "seed", cfg.seed);
    if (j.contains("model")) {
        const json& m = j.at("model");
        cfg.model.input_dim = fetch<std::size_t>(m, "input_dim", cfg.model.input_dim);
        cfg.model.procedure_dim =
            fetch<std::size_t>(m, "procedure_dim", cfg.model.procedure_dim);
        cfg.model.scoring_dim = fetch<std::size_t>(m, "scoring_dim", cfg.model.scoring_dim);
        cfg.model.procedures = fetch<std::size_t>(m, "procedures", cfg.model.procedures);
        cfg.model.train_clips = fetch<std::size_t>(m, "train_clips", cfg.model.train_clips);
        cfg.model.dropout_p = fetch<double>(m, "dropout", cfg.model.dropout_p);
        cfg.model.align_mode = fetch<int>(m, "align_mode", cfg.model.align_mode);
        cfg.model.activation = activation_from_string(
            fetch<std::string>(m, "activation", activation_to_string(cfg.model.activation)));
    }
    if (j.contains("grading")) {
        const json& g = j.at("grading");
        cfg.grading = GradingScheme::uniform(
            fetch<double>(g, "range", cfg.grading.range),
            fetch<std::size_t>(g, "grades", cfg.grading.grades),
            fetch<std::size_t>(g, "sub_grades", cfg.grading.sub_grades));
    }
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        cfg.loss.lambda_coarse = fetch<double>(l, "lambda_coarse", cfg.loss.lambda_coarse);
        cfg.loss.lambda_fine = fetch<double>(l, "lambda_fine", cfg.loss.lambda_fine);
        cfg.loss.lambda_reg = fetch<double>(l, "lambda_reg", cfg.loss.lambda_reg);
        const std::string mode = fetch<std::string>(l, "fine_targets", "ground_truth");
        if (mode == "ground_truth") {
            cfg.fine_targets = FineTargetMode::GroundTruth;
        } else if (mode == "predicted") {
            cfg.fine_targets = FineTargetMode::Predicted;
        } else {
            throw ConfigError("config: fine_targets must be 'ground_truth' or 'predicted'");
        }
    }
    if (j.contains("optim")) {
        const json& o = j.at("optim");
        cfg.optim.lr_max = fetch<double>(o, "lr_max", cfg.optim.lr_max);
        cfg.optim.lr_min = fetch<double>(o, "lr_min", cfg.optim.lr_min);
        cfg.optim.momentum = fetch<double>(o, "momentum", cfg.optim.momentum);
        cfg.optim.weight_decay = fetch<double>(o, "weight_decay", cfg.optim.weight_decay);
        cfg.optim.batch_size = fetch<std::size_t>(o, "batch_size", cfg.optim.batch_size);
        cfg.optim.epochs = fetch<std::size_t>(o, "epochs", cfg.optim.epochs);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        cfg.data.train_path = fetch<std::string>(d, "train", cfg.data.train_path);
        cfg.data.test_path = fetch<std::string>(d, "test", cfg.data.test_path);
        cfg.data.normalize = fetch<bool>(d, "normalize", cfg.data.normalize);
    }
    if (j.contains("synth")) {
        const json& s = j.at("synth");
        cfg.synth.samples = fetch<std::size_t>(s, "samples", cfg.synth.samples);
        cfg.synth.clips = fetch<std::size_t>(s, "clips", cfg.synth.clips);
        cfg.synth.dim = fetch<std::size_t>(s, "dim", cfg.synth.dim);
        cfg.synth.grades = fetch<std::size_t>(s, "grades", cfg.synth.grades);
        cfg.synth.sub_grades = fetch<std::size_t>(s, "sub_grades", cfg.synth.sub_grades);
        cfg.synth.noise_sigma = fetch<double>(s, "noise_sigma", cfg.synth.noise_sigma);
        cfg.synth.score_range = fetch<double>(s, "score_range", cfg.synth.score_range);
    }
    cfg.synth.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

std::string apply_override(const std::string& json_text, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);

    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: JSON parse failure: ") + e.what());
    }

    // Walk to the addressed entry.
    std::vector<std::string> keys;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        keys.push_back(path.substr(start, dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    json* at = &j;
    const json schema = config_to_json_doc(RunConfig{});
    const json* schema_at = &schema;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (!schema_at->is_object() || !schema_at->contains(keys[i])) {
            throw ConfigError("override: unknown key '" + path + "'");
        }
        schema_at = &schema_at->at(keys[i]);
        if (i + 1 < keys.size()) {
            at = &(*at)[keys[i]];
        } else {
            at = &(*at)[keys.back()];
        }
    }

    // Type-check the value against the schema entry.
    try {
        if (schema_at->is_number_float()) {
            *at = std::stod(value);
        } else if (schema_at->is_number_integer() || schema_at->is_number_unsigned()) {
            *at = std::stoull(value);
        } else if (schema_at->is_boolean()) {
            if (value == "true") {
                *at = true;
            } else if (value == "false") {
                *at = false;
            } else {
                throw ConfigError("override: '" + path + "' expects true/false");
            }
        } else if (schema_at->is_string()) {
            *at = value;
        } else {
            throw ConfigError("override: '" + path + "' is not a scalar setting");
        }
    } catch (const std::invalid_argument&) {
        throw ConfigError("override: cannot parse '" + value + "' for '" + path + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError("override: value '" + value + "' out of range for '" + path + "'");
    }
    return j.dump(2) + "\n";
}

std::string default_config_json() { return config_to_json(RunConfig{}); }

}  // namespace cofinal
