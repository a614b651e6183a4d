#include "snag/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace snag {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

const std::unordered_set<std::string>& key_registry() {
    static const std::unordered_set<std::string> keys(
        known_config_keys().begin(), known_config_keys().end());
    return keys;
}

}  // namespace

const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys = {
        "ablate.seeds",
        "data.d_a",
        "data.d_r",
        "data.dir",
        "data.swap_bow",
        "ea.batch_size",
        "ea.d",
        "ea.detach_confidence",
        "ea.epochs",
        "ea.eval_every",
        "ea.gat_heads",
        "ea.gat_layers",
        "ea.iterative",
        "ea.lr",
        "ea.normalize",
        "ea.patience",
        "ea.probe_every",
        "ea.promote_after",
        "ea.tau",
        "ea.valid_frac",
        "ea.warmup_frac",
        "ea.weight_decay",
        "eval.checkpoint",
        "eval.filtered",
        "eval.full_pool",
        "eval.split",
        "fusion.ffn_dim",
        "fusion.heads",
        "fusion.variant",
        "gmnm.dropout_inverted",
        "gmnm.dropout_p",
        "gmnm.epsilon",
        "gmnm.modalities",
        "gmnm.mode",
        "gmnm.rho",
        "kgc.batch_size",
        "kgc.d",
        "kgc.detach_adversarial",
        "kgc.epochs",
        "kgc.eval_every",
        "kgc.l2_score",
        "kgc.lr",
        "kgc.margin",
        "kgc.mean_fused",
        "kgc.negatives",
        "kgc.tau",
        "run.seed",
        "synth.attr_keys",
        "synth.attrs_per_entity",
        "synth.clusters",
        "synth.d_s",
        "synth.d_v",
        "synth.entities",
        "synth.jitter",
        "synth.r_img",
        "synth.r_sa",
        "synth.relations",
        "synth.test_frac",
        "synth.valid_frac",
    };
    return keys;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
}

Config Config::parse_string(const std::string& text,
                            const std::string& origin) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(origin + ":" +
                                        std::to_string(line_no) +
                                        ": expected `section.key = value`");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!key_registry().count(key))
            throw std::invalid_argument(origin + ":" +
                                        std::to_string(line_no) +
                                        ": unknown config key: " + key);
        cfg.values_[key] = value;
    }
    return cfg;
}

bool Config::has(const std::string& key) const {
    return values_.count(key) != 0;
}

void Config::set(const std::string& key, const std::string& value) {
    if (!key_registry().count(key))
        throw std::invalid_argument("unknown config key: " + key);
    values_[key] = value;
}

std::string Config::get_string(const std::string& key,
                               const std::string& def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
}

std::string Config::require_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
        throw std::invalid_argument("missing config key: " + key);
    return it->second;
}

int64_t Config::get_int(const std::string& key, int64_t def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
        size_t used = 0;
        int64_t v = std::stoll(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key +
                                    " is not an integer: `" + it->second +
                                    "`");
    }
}

Scalar Config::get_scalar(const std::string& key, Scalar def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
        size_t used = 0;
        Scalar v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key +
                                    " is not a number: `" + it->second + "`");
    }
}

bool Config::get_bool(const std::string& key, bool def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw std::invalid_argument("config key " + key +
                                " wants true or false, got `" + it->second +
                                "`");
}

std::vector<Modality> Config::get_modalities(
    const std::string& key, std::vector<Modality> def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    std::vector<Modality> out;
    std::string item;
    std::istringstream in(it->second);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.size() != 1)
            throw std::invalid_argument("config key " + key +
                                        " wants single-letter modality tags, "
                                        "got `" +
                                        item + "`");
        out.push_back(modality_from_tag(item[0]));
    }
    if (out.empty())
        throw std::invalid_argument("config key " + key +
                                    " lists no modalities");
    return out;
}

std::string Config::echo() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    }
    return out;
}

uint64_t resolve_seed(const Config& cfg) {
    if (const char* env = std::getenv("SNAG_SEED")) {
        try {
            size_t used = 0;
            uint64_t v = std::stoull(env, &used);
            if (used != std::string(env).size())
                throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw std::invalid_argument(
                std::string("SNAG_SEED is not an integer: `") + env + "`");
        }
    }
    return static_cast<uint64_t>(cfg.get_int("run.seed", 42));
}

}  // namespace snag
