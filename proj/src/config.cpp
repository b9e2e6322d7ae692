#include "adagan/config.hpp"

#include <fstream>
#include <set>

#include "adagan/errors.hpp"

namespace adagan {

namespace {

using nlohmann::json;

void require_known_keys(const json& j, const std::set<std::string>& known,
                        const std::string& prefix) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) {
            throw ConfigError("unknown config key '" + prefix + it.key() + "'");
        }
    }
}

const json* find(const json& j, const char* key) {
    auto it = j.find(key);
    return it == j.end() || it->is_null() ? nullptr : &*it;
}

std::string want_string(const json& j, const char* key, const std::string& prefix) {
    const json* v = find(j, key);
    if (!v) throw ConfigError("config field '" + prefix + key + "' is required");
    if (!v->is_string()) throw ConfigError("config field '" + prefix + key + "' must be a string");
    return v->get<std::string>();
}

std::string opt_string(const json& j, const char* key, const std::string& fallback,
                       const std::string& prefix) {
    const json* v = find(j, key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError("config field '" + prefix + key + "' must be a string");
    return v->get<std::string>();
}

int64_t opt_int(const json& j, const char* key, int64_t fallback, int64_t lo, int64_t hi,
                const std::string& prefix) {
    const json* v = find(j, key);
    if (!v) return fallback;
    if (!v->is_number_integer()) {
        throw ConfigError("config field '" + prefix + key + "' must be an integer");
    }
    const int64_t value = v->get<int64_t>();
    if (value < lo || value > hi) {
        throw ConfigError("config field '" + prefix + key + "' must be in [" + std::to_string(lo) +
                          ", " + std::to_string(hi) + "], got " + std::to_string(value));
    }
    return value;
}

double opt_real(const json& j, const char* key, double fallback, double lo, double hi,
                bool lo_open, const std::string& prefix) {
    const json* v = find(j, key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError("config field '" + prefix + key + "' must be a number");
    const double value = v->get<double>();
    const bool below = lo_open ? value <= lo : value < lo;
    if (below || value > hi || (lo_open && value >= hi)) {
        throw ConfigError("config field '" + prefix + key + "' must be in " +
                          (lo_open ? "(" : "[") + std::to_string(lo) + ", " + std::to_string(hi) +
                          (lo_open ? ")" : "]") + ", got " + std::to_string(value));
    }
    return value;
}

DatasetConfig parse_dataset(const json& j) {
    if (!j.is_object()) throw ConfigError("config field 'dataset' must be an object");
    DatasetConfig d;
    const std::string kind = want_string(j, "kind", "dataset.");
    if (kind == "idx") {
        d.kind = DatasetKind::idx;
        require_known_keys(j,
                           {"kind", "train_images", "train_labels", "test_images", "test_labels",
                            "limit_train", "limit_test"},
                           "dataset.");
        d.train_images = want_string(j, "train_images", "dataset.");
        d.train_labels = want_string(j, "train_labels", "dataset.");
        d.test_images = opt_string(j, "test_images", "", "dataset.");
        d.test_labels = opt_string(j, "test_labels", "", "dataset.");
        if (d.test_images.empty() != d.test_labels.empty()) {
            throw ConfigError(
                "config fields 'dataset.test_images' and 'dataset.test_labels' must be given "
                "together");
        }
        d.limit_train = static_cast<int>(opt_int(j, "limit_train", 0, 0, 1 << 30, "dataset."));
        d.limit_test = static_cast<int>(opt_int(j, "limit_test", 0, 0, 1 << 30, "dataset."));
    } else if (kind == "directory") {
        d.kind = DatasetKind::directory;
        require_known_keys(j, {"kind", "root"}, "dataset.");
        d.root = want_string(j, "root", "dataset.");
    } else if (kind == "synth") {
        d.kind = DatasetKind::synth;
        require_known_keys(j, {"kind", "classes", "per_class", "complexity"}, "dataset.");
        d.classes = static_cast<int>(opt_int(j, "classes", 10, 2, 1000, "dataset."));
        d.per_class = static_cast<int>(opt_int(j, "per_class", 200, 1, 1 << 20, "dataset."));
        d.complexity = static_cast<int>(opt_int(j, "complexity", 1, 1, 64, "dataset."));
    } else {
        throw ConfigError("config field 'dataset.kind' must be idx, directory, or synth, got '" +
                          kind + "'");
    }
    return d;
}

}  // namespace

NoiseOrder parse_noise_order(const std::string& name) {
    if (name == "perturb_then_gate") return NoiseOrder::perturb_then_gate;
    if (name == "gate_then_perturb") return NoiseOrder::gate_then_perturb;
    if (name == "perturb_merged") return NoiseOrder::perturb_merged;
    throw ConfigError(
        "unknown noise_order '" + name +
        "'; expected perturb_then_gate, gate_then_perturb, or perturb_merged");
}

std::string noise_order_name(NoiseOrder order) {
    switch (order) {
        case NoiseOrder::perturb_then_gate: return "perturb_then_gate";
        case NoiseOrder::gate_then_perturb: return "gate_then_perturb";
        default: return "perturb_merged";
    }
}

ExperimentConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be an object");
    require_known_keys(j,
                       {"dataset", "split", "candidates", "candidate_epochs", "gan", "perturb",
                        "threshold", "noise_order", "augment", "external_epochs", "batch_size",
                        "seed", "output_dir"},
                       "");

    ExperimentConfig c;
    const json* dataset = find(j, "dataset");
    if (!dataset) throw ConfigError("config field 'dataset' is required");
    c.dataset = parse_dataset(*dataset);

    if (const json* split = find(j, "split")) {
        if (!split->is_object()) throw ConfigError("config field 'split' must be an object");
        require_known_keys(*split, {"test_fraction", "seed"}, "split.");
        c.test_fraction = opt_real(*split, "test_fraction", 0.2, 0.0, 1.0, true, "split.");
        if (const json* s = find(*split, "seed")) {
            if (!s->is_number_integer()) {
                throw ConfigError("config field 'split.seed' must be an integer");
            }
            c.split_seed = s->get<uint64_t>();
            c.split_seed_set = true;
        }
    }

    if (const json* cands = find(j, "candidates")) {
        if (!cands->is_array() || cands->empty()) {
            throw ConfigError("config field 'candidates' must be a nonempty array of preset names");
        }
        c.candidates.clear();
        for (const auto& name : *cands) {
            if (!name.is_string()) {
                throw ConfigError("config field 'candidates' must contain strings");
            }
            c.candidates.push_back(name.get<std::string>());
        }
    }
    c.candidate_epochs =
        static_cast<int>(opt_int(j, "candidate_epochs", 10, 0, 100000, ""));

    if (const json* gan = find(j, "gan")) {
        if (!gan->is_object()) throw ConfigError("config field 'gan' must be an object");
        require_known_keys(*gan, {"epochs", "latent_dim", "generator_loss"}, "gan.");
        c.gan_epochs = static_cast<int>(opt_int(*gan, "epochs", 300, 0, 100000, "gan."));
        c.latent_dim = static_cast<int>(opt_int(*gan, "latent_dim", 64, 1, 4096, "gan."));
        const std::string mode = opt_string(*gan, "generator_loss", "non_saturating", "gan.");
        if (mode == "non_saturating") {
            c.generator_loss = GenLossMode::non_saturating;
        } else if (mode == "paper_exact") {
            c.generator_loss = GenLossMode::paper_exact;
        } else {
            throw ConfigError(
                "config field 'gan.generator_loss' must be non_saturating or paper_exact, got '" +
                mode + "'");
        }
    }

    if (const json* pert = find(j, "perturb")) {
        if (!pert->is_object()) throw ConfigError("config field 'perturb' must be an object");
        require_known_keys(*pert, {"mode", "epsilon"}, "perturb.");
        const std::string mode = opt_string(*pert, "mode", "fgsm", "perturb.");
        c.perturb.mode = parse_perturb_mode(mode);
        c.perturb.epsilon = opt_real(*pert, "epsilon", 0.05, 0.0, 0.5, false, "perturb.");
    }

    c.threshold = opt_real(j, "threshold", 0.8, 0.0, 1.0, true, "");
    c.noise_order = parse_noise_order(opt_string(j, "noise_order", "perturb_then_gate", ""));

    if (const json* aug = find(j, "augment")) {
        if (!aug->is_object()) throw ConfigError("config field 'augment' must be an object");
        require_known_keys(*aug, {"per_class", "max_attempts_factor"}, "augment.");
        c.augment_per_class = static_cast<int>(opt_int(*aug, "per_class", -1, 0, 1 << 20, "augment."));
        c.max_attempts_factor =
            static_cast<int>(opt_int(*aug, "max_attempts_factor", 20, 1, 100000, "augment."));
    }

    c.external_epochs = static_cast<int>(opt_int(j, "external_epochs", 10, 0, 100000, ""));
    c.batch_size = static_cast<int>(opt_int(j, "batch_size", 32, 1, 65536, ""));
    if (const json* s = find(j, "seed")) {
        if (!s->is_number_integer()) throw ConfigError("config field 'seed' must be an integer");
        c.seed = s->get<uint64_t>();
    }
    c.output_dir = opt_string(j, "output_dir", "out", "");
    if (c.output_dir.empty()) throw ConfigError("config field 'output_dir' must not be empty");

    if (!c.split_seed_set) c.split_seed = c.seed;
    return c;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config is not valid JSON: " + path + ": " + e.what());
    }
    return config_from_json(j);
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
    json dataset;
    switch (c.dataset.kind) {
        case DatasetKind::idx:
            dataset["kind"] = "idx";
            dataset["train_images"] = c.dataset.train_images;
            dataset["train_labels"] = c.dataset.train_labels;
            if (!c.dataset.test_images.empty()) {
                dataset["test_images"] = c.dataset.test_images;
                dataset["test_labels"] = c.dataset.test_labels;
            }
            dataset["limit_train"] = c.dataset.limit_train;
            dataset["limit_test"] = c.dataset.limit_test;
            break;
        case DatasetKind::directory:
            dataset["kind"] = "directory";
            dataset["root"] = c.dataset.root;
            break;
        case DatasetKind::synth:
            dataset["kind"] = "synth";
            dataset["classes"] = c.dataset.classes;
            dataset["per_class"] = c.dataset.per_class;
            dataset["complexity"] = c.dataset.complexity;
            break;
    }

    json j;
    j["dataset"] = dataset;
    j["split"] = {{"test_fraction", c.test_fraction}, {"seed", c.split_seed}};
    j["candidates"] = c.candidates;
    j["candidate_epochs"] = c.candidate_epochs;
    j["gan"] = {{"epochs", c.gan_epochs},
                {"latent_dim", c.latent_dim},
                {"generator_loss", c.generator_loss == GenLossMode::non_saturating
                                       ? "non_saturating"
                                       : "paper_exact"}};
    j["perturb"] = {{"mode", perturb_mode_name(c.perturb.mode)}, {"epsilon", c.perturb.epsilon}};
    j["threshold"] = c.threshold;
    j["noise_order"] = noise_order_name(c.noise_order);
    j["augment"] = {{"per_class", c.augment_per_class < 0 ? json(nullptr) : json(c.augment_per_class)},
                    {"max_attempts_factor", c.max_attempts_factor}};
    j["external_epochs"] = c.external_epochs;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    return j;
}

}  // namespace adagan
