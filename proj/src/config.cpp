#include "npssl/config.hpp"

#include <fstream>

#include "npssl/rng.hpp"

namespace npssl::io {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const char* scope,
                    std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* k : allowed)
            if (key == k) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError(std::string("config: unknown key '") + scope + key + "'");
    }
}

template <typename T>
void get_to(const json& obj, const char* scope, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        obj.at(key).get_to(out);
    } catch (const json::exception&) {
        throw ConfigError(std::string("config: bad value type for '") + scope + key + "'");
    }
}

}  // namespace

RunConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: root must be a JSON object");
    reject_unknown(j, "", {"dataset", "train", "out_dir"});
    RunConfig cfg;

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        if (!d.is_object()) throw ConfigError("config: 'dataset' must be an object");
        reject_unknown(d, "dataset.",
                       {"kind", "n", "noise", "classes", "spread", "labels_per_class",
                        "test_fraction", "seed"});
        get_to(d, "dataset.", "kind", cfg.dataset.kind);
        get_to(d, "dataset.", "n", cfg.dataset.n);
        get_to(d, "dataset.", "noise", cfg.dataset.noise);
        get_to(d, "dataset.", "classes", cfg.dataset.classes);
        get_to(d, "dataset.", "spread", cfg.dataset.spread);
        get_to(d, "dataset.", "labels_per_class", cfg.dataset.labels_per_class);
        get_to(d, "dataset.", "test_fraction", cfg.dataset.test_fraction);
        get_to(d, "dataset.", "seed", cfg.dataset.seed);
        if (cfg.dataset.kind != "two_moons" && cfg.dataset.kind != "gaussian_blobs")
            throw ConfigError("config: dataset.kind must be 'two_moons' or 'gaussian_blobs'");
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        if (!t.is_object()) throw ConfigError("config: 'train' must be an object");
        reject_unknown(t, "train.",
                       {"tau_c", "tau_u", "lambda_u", "beta", "t_samples", "batch_size",
                        "mu_ratio", "lr0", "weight_decay", "momentum", "ema_momentum",
                        "grad_clip", "t_max", "seed", "uncertainty", "feat_dim",
                        "latent_dim", "hidden_dim", "bank_capacity", "log_interval",
                        "weak_sigma", "strong_sigma", "strong_dropout"});
        auto& tc = cfg.train;
        get_to(t, "train.", "tau_c", tc.tau_c);
        get_to(t, "train.", "tau_u", tc.tau_u);
        get_to(t, "train.", "lambda_u", tc.lambda_u);
        get_to(t, "train.", "beta", tc.beta);
        get_to(t, "train.", "t_samples", tc.t_samples);
        get_to(t, "train.", "batch_size", tc.batch_size);
        get_to(t, "train.", "mu_ratio", tc.mu_ratio);
        get_to(t, "train.", "lr0", tc.lr0);
        get_to(t, "train.", "weight_decay", tc.weight_decay);
        get_to(t, "train.", "momentum", tc.momentum);
        get_to(t, "train.", "ema_momentum", tc.ema_momentum);
        get_to(t, "train.", "grad_clip", tc.grad_clip);
        get_to(t, "train.", "t_max", tc.t_max);
        get_to(t, "train.", "seed", tc.seed);
        get_to(t, "train.", "feat_dim", tc.feat_dim);
        get_to(t, "train.", "latent_dim", tc.latent_dim);
        get_to(t, "train.", "hidden_dim", tc.hidden_dim);
        get_to(t, "train.", "bank_capacity", tc.bank_capacity);
        get_to(t, "train.", "log_interval", tc.log_interval);
        get_to(t, "train.", "weak_sigma", tc.augment.weak_sigma);
        get_to(t, "train.", "strong_sigma", tc.augment.strong_sigma);
        get_to(t, "train.", "strong_dropout", tc.augment.strong_dropout);
        if (t.contains("uncertainty")) {
            std::string kind;
            get_to(t, "train.", "uncertainty", kind);
            if (kind == "entropy")
                tc.uncertainty = np::UncertaintyKind::Entropy;
            else if (kind == "variance")
                tc.uncertainty = np::UncertaintyKind::Variance;
            else
                throw ConfigError("config: train.uncertainty must be 'entropy' or 'variance'");
        }
    }

    get_to(j, "", "out_dir", cfg.out_dir);

    cfg.train.validate();
    if (cfg.dataset.n < 2 * cfg.dataset.classes)
        throw ConfigError("config: dataset.n too small for the class count");
    if (!(cfg.dataset.test_fraction >= 0.0 && cfg.dataset.test_fraction < 1.0))
        throw ConfigError("config: dataset.test_fraction must lie in [0, 1)");
    return cfg;
}

json config_to_json(const RunConfig& cfg) {
    json d = {
        {"kind", cfg.dataset.kind},
        {"n", cfg.dataset.n},
        {"noise", cfg.dataset.noise},
        {"classes", cfg.dataset.classes},
        {"spread", cfg.dataset.spread},
        {"labels_per_class", cfg.dataset.labels_per_class},
        {"test_fraction", cfg.dataset.test_fraction},
        {"seed", cfg.dataset.seed},
    };
    const auto& t = cfg.train;
    json tr = {
        {"tau_c", t.tau_c},
        {"tau_u", t.tau_u},
        {"lambda_u", t.lambda_u},
        {"beta", t.beta},
        {"t_samples", t.t_samples},
        {"batch_size", t.batch_size},
        {"mu_ratio", t.mu_ratio},
        {"lr0", t.lr0},
        {"weight_decay", t.weight_decay},
        {"momentum", t.momentum},
        {"ema_momentum", t.ema_momentum},
        {"grad_clip", t.grad_clip},
        {"t_max", t.t_max},
        {"seed", t.seed},
        {"uncertainty",
         t.uncertainty == np::UncertaintyKind::Entropy ? "entropy" : "variance"},
        {"feat_dim", t.feat_dim},
        {"latent_dim", t.latent_dim},
        {"hidden_dim", t.hidden_dim},
        {"bank_capacity", t.bank_capacity},
        {"log_interval", t.log_interval},
        {"weak_sigma", t.augment.weak_sigma},
        {"strong_sigma", t.augment.strong_sigma},
        {"strong_dropout", t.augment.strong_dropout},
    };
    return json{{"dataset", d}, {"train", tr}, {"out_dir", cfg.out_dir}};
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open " + path);
    json j;
    try {
        is >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    return config_from_json(j);
}

void apply_override(json& j, const std::string& key_eq_value) {
    const auto eq = key_eq_value.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("config: override must look like key=value, got '" + key_eq_value + "'");
    const std::string path = key_eq_value.substr(0, eq);
    const std::string raw = key_eq_value.substr(eq + 1);

    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;  // bare strings like two_moons
    }

    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string part = path.substr(start, dot - start);
        if (part.empty()) throw ConfigError("config: bad override key '" + path + "'");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

data::Dataset build_dataset(const DatasetConfig& cfg) {
    data::Dataset ds;
    if (cfg.kind == "two_moons")
        ds = data::two_moons(cfg.n, cfg.noise, cfg.seed);
    else
        ds = data::gaussian_blobs(cfg.n, cfg.classes, cfg.spread, cfg.seed);
    return data::split(std::move(ds), cfg.labels_per_class, cfg.test_fraction,
                       splitmix64(cfg.seed ^ 0xD5));
}

}  // namespace npssl::io
