#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "tempo/harness.hpp"

namespace tempo {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    return s;
}

bool parse_bool(const std::string& key, const std::string& value) {
    const std::string v = lower(value);
    if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
    if (v == "off" || v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected on/off, got '" + value + "'");
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + value + "'");
    }
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + value + "'");
    }
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_double(key, item));
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    for (double v : parse_double_list(key, value)) out.push_back(int(v));
    return out;
}

}  // namespace

void apply_config_entry(ExperimentConfig& cfg, const std::string& raw_key,
                        const std::string& raw_value) {
    const std::string key = lower(trim(raw_key));
    const std::string value = trim(raw_value);

    if (key == "run_id") {
        cfg.run_id = value;
    } else if (key == "dataset") {
        const std::string v = lower(value);
        if (v == "synthetic") cfg.source = DatasetSource::Synthetic;
        else if (v == "cifar10") cfg.source = DatasetSource::Cifar10;
        else if (v == "cifar100") cfg.source = DatasetSource::Cifar100;
        else throw ConfigError("dataset: expected synthetic|cifar10|cifar100, got '" + value + "'");
    } else if (key == "data_path") {
        cfg.data_path = value;
    } else if (key == "max_records") {
        cfg.max_records = int(parse_int(key, value));
    } else if (key == "synthetic_classes") {
        cfg.synthetic_classes = int(parse_int(key, value));
    } else if (key == "synthetic_dims") {
        cfg.synthetic_dims = int(parse_int(key, value));
    } else if (key == "synthetic_size") {
        cfg.synthetic_size = int(parse_int(key, value));
    } else if (key == "normalize_mean") {
        cfg.normalize_mean = parse_double_list(key, value);
    } else if (key == "normalize_std") {
        cfg.normalize_std = parse_double_list(key, value);
    } else if (key == "model") {
        const std::string v = lower(value);
        if (v == "mlp") cfg.model = ModelKind::TinyMlp;
        else if (v == "cnn") cfg.model = ModelKind::TinyCnn;
        else throw ConfigError("model: expected mlp|cnn, got '" + value + "'");
    } else if (key == "mlp_hidden") {
        cfg.mlp_hidden = parse_int_list(key, value);
    } else if (key == "cnn_channels") {
        cfg.cnn_channels = parse_int_list(key, value);
    } else if (key == "epochs") {
        cfg.epochs = int(parse_int(key, value));
    } else if (key == "batch_size") {
        cfg.batch_size = int(parse_int(key, value));
    } else if (key == "seed") {
        cfg.seed = std::uint64_t(parse_int(key, value));
    } else if (key == "val_fraction") {
        cfg.val_fraction = parse_double(key, value);
    } else if (key == "optimizer") {
        const std::string v = lower(value);
        if (v == "sgd") cfg.optimizer.kind = OptimizerKind::Sgd;
        else if (v == "adam") cfg.optimizer.kind = OptimizerKind::Adam;
        else if (v == "adamw") cfg.optimizer.kind = OptimizerKind::AdamW;
        else throw ConfigError("optimizer: expected sgd|adam|adamw, got '" + value + "'");
    } else if (key == "learning_rate") {
        cfg.optimizer.learning_rate = parse_double(key, value);
    } else if (key == "weight_decay") {
        cfg.optimizer.weight_decay = parse_double(key, value);
    } else if (key == "clip_norm") {
        if (lower(value) == "none") cfg.optimizer.clip_norm.reset();
        else cfg.optimizer.clip_norm = parse_double(key, value);
    } else if (key == "beta1") {
        cfg.optimizer.beta1 = parse_double(key, value);
    } else if (key == "beta2") {
        cfg.optimizer.beta2 = parse_double(key, value);
    } else if (key == "eps_adam") {
        cfg.optimizer.eps_adam = parse_double(key, value);
    } else if (key == "ga_steps") {
        cfg.ga_steps = int(parse_int(key, value));
    } else if (key == "amp") {
        cfg.amp_enabled = parse_bool(key, value);
    } else if (key == "amp_base_scale") {
        cfg.scaler.base_scale = parse_double(key, value);
        cfg.scaler.scale = cfg.scaler.base_scale;
    } else if (key == "amp_beta") {
        cfg.scaler.beta = parse_double(key, value);
    } else if (key == "amp_growth_interval") {
        cfg.scaler.growth_interval = int(parse_int(key, value));
    } else if (key == "amp_min_scale") {
        cfg.scaler.min_scale = parse_double(key, value);
    } else if (key == "amp_max_scale") {
        cfg.scaler.max_scale = parse_double(key, value);
    } else if (key == "amp_ratio_formula") {
        cfg.scaler.use_ratio_formula = parse_bool(key, value);
    } else if (key == "prefetch") {
        cfg.prefetch_enabled = parse_bool(key, value);
    } else if (key == "k_buffers") {
        cfg.k_buffers = int(parse_int(key, value));
    } else if (key == "transfer_latency_s") {
        cfg.transfer.fixed_latency = parse_double(key, value);
    } else if (key == "transfer_pageable_s_per_byte") {
        cfg.transfer.per_byte_pageable = parse_double(key, value);
    } else if (key == "transfer_pinned_s_per_byte") {
        cfg.transfer.per_byte_pinned = parse_double(key, value);
    } else if (key == "pin_default") {
        cfg.pin_default = parse_bool(key, value);
    } else if (key == "pin_policy") {
        cfg.pin_policy_enabled = parse_bool(key, value);
    } else if (key == "pin_alpha") {
        cfg.pin_params.alpha = parse_double_list(key, value);
    } else if (key == "pin_beta") {
        cfg.pin_params.beta = parse_double(key, value);
    } else if (key == "pin_gamma") {
        cfg.pin_params.gamma = parse_double(key, value);
    } else if (key == "pin_delta") {
        cfg.pin_params.delta = parse_double(key, value);
    } else if (key == "pin_rho") {
        cfg.pin_params.rho = parse_double(key, value);
    } else if (key == "pin_eta") {
        cfg.pin_params.eta = parse_double(key, value);
    } else if (key == "pin_xi") {
        cfg.pin_params.xi = parse_double(key, value);
    } else if (key == "pin_window") {
        cfg.pin_params.window = int(parse_int(key, value));
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        }
        try {
            apply_config_entry(cfg, line.substr(0, eq), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str(), path);
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (epochs < 1) fail("epochs must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (ga_steps < 1) fail("ga_steps must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) fail("val_fraction must be in (0, 1)");
    if (k_buffers < 1) fail("k_buffers must be >= 1");
    if (source == DatasetSource::Synthetic) {
        if (synthetic_classes < 2) fail("synthetic_classes must be >= 2");
        if (synthetic_dims < 1) fail("synthetic_dims must be >= 1");
        if (synthetic_size < batch_size) fail("synthetic_size must be >= batch_size");
    } else if (data_path.empty()) {
        fail("data_path is required for CIFAR datasets");
    }
    if (normalize_mean.size() != normalize_std.size())
        fail("normalize_mean and normalize_std must have the same length");
    if (model == ModelKind::TinyMlp && mlp_hidden.empty())
        fail("mlp_hidden must name at least one layer width");
    if (model == ModelKind::TinyCnn && cnn_channels.empty())
        fail("cnn_channels must name at least one channel count");
    try {
        optimizer.validate();
        transfer.validate();
        if (scaler.min_scale > scaler.max_scale)
            throw ContractViolation("amp_min_scale must be <= amp_max_scale");
        if (scaler.base_scale <= 0.0 || scaler.scale <= 0.0)
            throw ContractViolation("loss scale must be positive");
    } catch (const ContractViolation& e) {
        fail(e.what());
    }
}

}  // namespace tempo
