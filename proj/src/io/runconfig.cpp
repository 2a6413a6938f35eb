#include "io/runconfig.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "core/rng.hpp"

namespace avdit {

const std::vector<std::pair<std::string, std::string>>& RunConfig::schema() {
    static const std::vector<std::pair<std::string, std::string>> kSchema = {
        {"model.dim", "64"},
        {"model.heads", "4"},
        {"model.depth", "4"},
        {"model.patch", "2"},
        {"model.frames", "4"},
        {"model.video_h", "8"},
        {"model.video_w", "8"},
        {"model.video_c", "4"},
        {"model.audio_t", "8"},
        {"model.audio_f", "4"},
        {"model.audio_c", "4"},
        {"model.temporal_ratio", "8"},
        {"model.audio_ratio", "2"},
        {"model.fusion_ratio", "2"},
        {"model.variance", "fixed"},
        {"model.fusion", "self"},
        {"model.backbone", "seeded"},
        {"model.pretrain_steps", "3000"},
        {"model.pretrain_batch", "64"},
        {"schedule.steps", "1000"},
        {"schedule.beta_start", "0.0001"},
        {"schedule.beta_end", "0.02"},
        {"data.factor_dim", "8"},
        {"data.sigma_video", "0.3"},
        {"data.sigma_audio", "0.3"},
        {"data.video_factor_var", "0.6"},
        {"data.video_trajectory_var", "0.3"},
        {"data.audio_factor_var", "0.91"},
        {"train.steps", "5000"},
        {"train.batch", "16"},
        {"train.lr", "0.0005"},
        {"train.adam_beta1", "0.9"},
        {"train.adam_beta2", "0.999"},
        {"train.adam_eps", "1e-8"},
        {"train.weight_decay", "0"},
        {"train.eval_every", "1000"},
        {"train.eval_batch", "256"},
        {"train.eval_timesteps", "100,500,900"},
        {"train.checkpoint_every", "0"},
        {"ablation.no_temporal", "false"},
        {"ablation.no_audio_ffn_adapter", "false"},
        {"ablation.no_audio_lora", "false"},
        {"ablation.no_fusion", "false"},
        {"ablation.no_fusion_lora", "false"},
        {"sample.steps", "250"},
        {"sample.chunk", "256"},
        {"seed.master", "42"},
        {"seed.init", "0"},
        {"seed.data", "0"},
        {"seed.noise", "0"},
        {"seed.timestep", "0"},
        {"seed.eval", "0"},
        {"seed.sample", "0"},
        {"seed.pretrain", "0"},
    };
    return kSchema;
}

RunConfig::RunConfig() {
    for (const auto& [k, v] : schema()) values_[k] = v;
}

bool RunConfig::has_key(const std::string& key) const { return values_.count(key) > 0; }

void RunConfig::set(const std::string& key, const std::string& value) {
    check_config(has_key(key), "unknown config key '" + key + "'");
    values_[key] = value;
}

static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

RunConfig RunConfig::parse_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::map<std::string, int> seen;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        check_config(eq != std::string::npos,
                     origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        check_config(!key.empty(), origin + ":" + std::to_string(lineno) + ": empty key");
        check_config(cfg.has_key(key), origin + ":" + std::to_string(lineno) +
                                           ": unknown config key '" + key + "'");
        check_config(!seen.count(key), origin + ":" + std::to_string(lineno) +
                                           ": duplicate key '" + key + "' (first at line " +
                                           std::to_string(seen[key]) + ")");
        seen[key] = lineno;
        cfg.values_[key] = value;
    }
    return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str(), path);
}

const std::string& RunConfig::get_string(const std::string& key) const {
    auto it = values_.find(key);
    check_config(it != values_.end(), "unknown config key '" + key + "'");
    return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
    const std::string& v = get_string(key);
    char* end = nullptr;
    long long r = std::strtoll(v.c_str(), &end, 10);
    check_config(end && *end == '\0' && !v.empty(), "config key '" + key + "': '" + v +
                                                        "' is not an integer");
    return r;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& v = get_string(key);
    char* end = nullptr;
    double r = std::strtod(v.c_str(), &end);
    check_config(end && *end == '\0' && !v.empty(), "config key '" + key + "': '" + v +
                                                        "' is not a number");
    return r;
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get_string(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

uint64_t RunConfig::get_u64(const std::string& key) const {
    const std::string& v = get_string(key);
    char* end = nullptr;
    unsigned long long r = std::strtoull(v.c_str(), &end, 10);
    check_config(end && *end == '\0' && !v.empty(), "config key '" + key + "': '" + v +
                                                        "' is not an unsigned integer");
    return r;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
    const std::string& v = get_string(key);
    std::vector<int> out;
    std::istringstream in(v);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        char* end = nullptr;
        long r = std::strtol(tok.c_str(), &end, 10);
        check_config(end && *end == '\0', "config key '" + key + "': bad list element '" + tok + "'");
        out.push_back(static_cast<int>(r));
    }
    check_config(!out.empty(), "config key '" + key + "': empty list");
    return out;
}

std::string RunConfig::serialize() const {
    std::ostringstream os;
    for (const auto& [k, _] : schema()) os << k << " = " << values_.at(k) << "\n";
    return os.str();
}

uint64_t RunConfig::seed(const std::string& stream) const {
    uint64_t explicit_seed = get_u64("seed." + stream);
    if (explicit_seed != 0) return explicit_seed;
    return derive_seed(get_u64("seed.master"), stream);
}

}  // namespace avdit
