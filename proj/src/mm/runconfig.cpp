#include "mm/runconfig.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mm/error.hpp"
#include "mm/patches.hpp"

namespace mm {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(trim(item));
    }
    return out;
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument(v);
        }
        return r;
    } catch (const std::exception&) {
        fail(ErrCode::config, "config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument(v);
        }
        return r;
    } catch (const std::exception&) {
        fail(ErrCode::config, "config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const std::uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument(v);
        }
        return r;
    } catch (const std::exception&) {
        fail(ErrCode::config, "config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    fail(ErrCode::config, "config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<double> parse_doubles(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& item : split_commas(v)) {
        out.push_back(parse_double(key, item));
    }
    return out;
}

std::vector<int> parse_ints(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const auto& item : split_commas(v)) {
        out.push_back(parse_int(key, item));
    }
    return out;
}

} // namespace

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "variant") {
        variant_from_name(value); // validates
        cfg.variant = value;
    } else if (key == "patch") {
        cfg.patch = parse_int(key, value);
    } else if (key == "bands") {
        cfg.bands = parse_int(key, value);
    } else if (key == "dim") {
        cfg.dim = parse_int(key, value);
    } else if (key == "heads") {
        cfg.heads = parse_int(key, value);
    } else if (key == "kernel") {
        cfg.kernel = parse_int(key, value);
    } else if (key == "ssm_dim") {
        cfg.ssm_dim = parse_int(key, value);
    } else if (key == "lambda") {
        cfg.lambda = parse_double(key, value);
    } else if (key == "epochs") {
        cfg.epochs = parse_int(key, value);
    } else if (key == "batch") {
        cfg.batch = parse_int(key, value);
    } else if (key == "lr") {
        cfg.lr = parse_double(key, value);
    } else if (key == "shuffle") {
        cfg.shuffle = parse_bool(key, value);
    } else if (key == "ratios") {
        cfg.ratios = parse_doubles(key, value);
    } else if (key == "seed") {
        cfg.seed = parse_u64(key, value);
    } else if (key == "precision") {
        if (value != "f32" && value != "f64") {
            fail(ErrCode::config, "config: precision must be f32 or f64, got '" + value + "'");
        }
        cfg.precision = value;
    } else if (key == "threads") {
        cfg.threads = parse_int(key, value);
    } else if (key == "mode") {
        if (value != "per_pixel" && value != "tile") {
            fail(ErrCode::config, "config: mode must be per_pixel or tile, got '" + value + "'");
        }
        cfg.mode = value;
    } else if (key == "data") {
        cfg.data = value;
    } else if (key == "out") {
        cfg.out = value;
    } else if (key == "checkpoint") {
        cfg.checkpoint = value;
    } else if (key == "split") {
        if (value != "train" && value != "val" && value != "test") {
            fail(ErrCode::config, "config: split must be train, val or test, got '" + value + "'");
        }
        cfg.split = value;
    } else if (key == "h") {
        cfg.height = parse_int(key, value);
    } else if (key == "w") {
        cfg.width = parse_int(key, value);
    } else if (key == "c") {
        cfg.channels = parse_int(key, value);
    } else if (key == "classes") {
        cfg.classes = parse_int(key, value);
    } else if (key == "noise") {
        cfg.noise = parse_double(key, value);
    } else if (key == "sweep_variants") {
        cfg.sweep_variants = split_commas(value);
        for (const auto& v : cfg.sweep_variants) {
            variant_from_name(v);
        }
    } else if (key == "sweep_train_ratios") {
        cfg.sweep_train_ratios = parse_doubles(key, value);
    } else if (key == "sweep_patches") {
        cfg.sweep_patches = parse_ints(key, value);
    } else if (key == "sweep_heads") {
        cfg.sweep_heads = parse_ints(key, value);
    } else if (key == "sweep_kernels") {
        cfg.sweep_kernels = parse_ints(key, value);
    } else {
        fail(ErrCode::config, "config: unknown key '" + key + "'");
    }
}

void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        fail(ErrCode::io, "config: cannot open " + path);
    }
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrCode::config,
                 path + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        }
        set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void validate_common(const RunConfig& cfg) {
    if (cfg.patch < 2) {
        fail(ErrCode::config, "config: patch must be >= 2");
    }
    if (cfg.bands < 0) {
        fail(ErrCode::config, "config: bands must be >= 0 (0 keeps all)");
    }
    if (cfg.dim < 1 || cfg.heads < 1 || cfg.dim % cfg.heads != 0) {
        fail(ErrCode::config, "config: dim must be positive and divisible by heads");
    }
    if (cfg.kernel < 1 || cfg.kernel % 2 == 0) {
        fail(ErrCode::config, "config: kernel must be odd and positive");
    }
    if (cfg.ssm_dim < 0) {
        fail(ErrCode::config, "config: ssm_dim must be >= 0 (0 uses dim)");
    }
    if (cfg.lambda < 0) {
        fail(ErrCode::config, "config: lambda must be nonnegative");
    }
    if (cfg.epochs < 1 || cfg.batch < 1 || !(cfg.lr > 0)) {
        fail(ErrCode::config, "config: epochs and batch must be >= 1 and lr positive");
    }
    if (cfg.ratios.size() != 3) {
        fail(ErrCode::config, "config: ratios expects three comma-separated fractions");
    }
    SplitSpec spec{cfg.ratios[0], cfg.ratios[1], cfg.ratios[2], cfg.seed};
    spec.validate();
    if (cfg.threads < 1) {
        fail(ErrCode::config, "config: threads must be >= 1");
    }
}

ModelConfig to_model_config(const RunConfig& cfg, std::size_t classes, std::size_t bands_actual) {
    ModelConfig m;
    m.variant = variant_from_name(cfg.variant);
    m.patch = std::size_t(cfg.patch);
    m.bands = bands_actual;
    m.dim = std::size_t(cfg.dim);
    m.heads = std::size_t(cfg.heads);
    m.kernel = std::size_t(cfg.kernel);
    m.ssm_dim = std::size_t(cfg.ssm_dim);
    m.classes = classes;
    m.lambda = cfg.lambda;
    m.seed = cfg.seed;
    m.validate();
    return m;
}

nlohmann::json run_context_json(const RunConfig& cfg, const ModelConfig& model) {
    nlohmann::json j;
    j["variant"] = variant_name(model.variant);
    j["patch"] = model.patch;
    j["bands"] = model.bands;
    j["dim"] = model.dim;
    j["heads"] = model.heads;
    j["kernel"] = model.kernel;
    j["ssm_dim"] = model.state_dim();
    j["classes"] = model.classes;
    j["lambda"] = model.lambda;
    j["epochs"] = cfg.epochs;
    j["batch"] = cfg.batch;
    j["lr"] = cfg.lr;
    j["shuffle"] = cfg.shuffle;
    j["ratios"] = cfg.ratios;
    j["seed"] = cfg.seed;
    j["precision"] = cfg.precision;
    j["mode"] = cfg.mode;
    return j;
}

RunConfig run_context_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    try {
        cfg.variant = j.at("variant").get<std::string>();
        cfg.patch = j.at("patch").get<int>();
        cfg.bands = j.at("bands").get<int>();
        cfg.dim = j.at("dim").get<int>();
        cfg.heads = j.at("heads").get<int>();
        cfg.kernel = j.at("kernel").get<int>();
        cfg.ssm_dim = j.at("ssm_dim").get<int>();
        cfg.classes = j.at("classes").get<int>();
        cfg.lambda = j.at("lambda").get<double>();
        cfg.epochs = j.at("epochs").get<int>();
        cfg.batch = j.at("batch").get<int>();
        cfg.lr = j.at("lr").get<double>();
        cfg.shuffle = j.at("shuffle").get<bool>();
        cfg.ratios = j.at("ratios").get<std::vector<double>>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.precision = j.at("precision").get<std::string>();
        cfg.mode = j.at("mode").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrCode::format, std::string("checkpoint: malformed config: ") + e.what());
    }
    return cfg;
}

SplitSpec split_spec(const RunConfig& cfg) {
    return SplitSpec{cfg.ratios[0], cfg.ratios[1], cfg.ratios[2], cfg.seed};
}

PatchMode patch_mode(const RunConfig& cfg) {
    return cfg.mode == "tile" ? PatchMode::tile : PatchMode::per_pixel;
}

} // namespace mm
