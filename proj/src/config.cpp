#include "dronetune/config.hpp"

#include <fstream>
#include <sstream>

#include "dronetune/errors.hpp"

namespace dronetune {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

const std::map<std::string, std::string>& RunConfig::default_table() {
    static const std::map<std::string, std::string> table = {
        {"augment.k", "3"},
        {"augment.lambda_max", "0.9"},
        {"augment.lambda_min", "0.3"},
        {"augment.stretch_max", "1.25"},
        {"augment.stretch_min", "0.8"},
        {"cnn.dropout", "0.5"},
        {"cnn.hidden_fc", "128"},
        {"cnn.pool", "max"},
        {"data.manifest", ""},
        {"features.cache_dir", ""},
        {"features.f_max", "8000"},
        {"features.f_min", "0"},
        {"features.hop", "512"},
        {"features.log_offset", "1e-06"},
        {"features.n_fft", "1024"},
        {"features.n_mels", "64"},
        {"features.sample_rate", "16000"},
        {"ia3.scale_query", "false"},
        {"kfold.k", "5"},
        {"model.family", "cnn"},
        {"model.input_frames", "157"},
        {"model.n_classes", "31"},
        {"oft.blocks", "4"},
        {"optim.beta1", "0.9"},
        {"optim.beta2", "0.999"},
        {"optim.eps", "1e-08"},
        {"optim.kind", "auto"},
        {"optim.lr", "0.001"},
        {"optim.weight_decay", "auto"},
        {"run.dir", ""},
        {"run.parallel_folds", "1"},
        {"sched.factor", "0.1"},
        {"sched.min_lr", "1e-06"},
        {"sched.patience", "3"},
        {"sched.threshold", "0.0001"},
        {"seed", "42"},
        {"strategy", "full"},
        {"synth.am_depth_max", "0.6"},
        {"synth.am_depth_min", "0.2"},
        {"synth.am_max_hz", "30"},
        {"synth.am_min_hz", "8"},
        {"synth.clips_per_class", "80"},
        {"synth.duration_s", "2"},
        {"synth.f0_base", "110"},
        {"synth.f0_step", "45"},
        {"synth.harmonics", "6"},
        {"synth.n_classes", "8"},
        {"synth.out_dir", ""},
        {"synth.sample_rate", "16000"},
        {"synth.snr_max_db", "20"},
        {"synth.snr_min_db", "5"},
        {"train.accumulation_steps", "2"},
        {"train.batch_size", "8"},
        {"train.early_stop_patience", "10"},
        {"train.max_epochs", "50"},
        {"transformer.depth", "4"},
        {"transformer.embed_dim", "64"},
        {"transformer.heads", "4"},
        {"transformer.mlp_ratio", "4"},
        {"transformer.patch", "16"},
    };
    return table;
}

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.kv_ = default_table();
    return c;
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ": line " + std::to_string(line_no) +
                              ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        try {
            set(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(path.string() + ": line " + std::to_string(line_no) + ": " +
                              e.what());
        }
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!default_table().count(key)) throw ConfigError("unknown config key: '" + key + "'");
    kv_[key] = value;
}

void RunConfig::set_kv(const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw ConfigError("--set expects key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("unknown config key: '" + key + "'");
    return it->second;
}

long RunConfig::get_int(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t pos = 0;
        long out = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::string RunConfig::echo() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
    return os.str();
}

} // namespace dronetune
