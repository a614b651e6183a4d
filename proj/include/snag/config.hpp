#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "snag/graphdata.hpp"
#include "snag/tensor.hpp"

namespace snag {

inline constexpr const char* kVersion = "snag 0.1.0";

// Line-oriented `section.key = value` settings. Every key is checked against
// the known-key registry at parse time so typos fail loudly before any
// compute. Lists are comma-separated. `#` starts a comment.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text,
                               const std::string& origin = "<string>");

    bool has(const std::string& key) const;
    // set() validates the key against the registry too.
    void set(const std::string& key, const std::string& value);

    std::string get_string(const std::string& key,
                           const std::string& def) const;
    std::string require_string(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t def) const;
    Scalar get_scalar(const std::string& key, Scalar def) const;
    bool get_bool(const std::string& key, bool def) const;
    std::vector<Modality> get_modalities(const std::string& key,
                                         std::vector<Modality> def) const;

    const std::map<std::string, std::string>& values() const {
        return values_;
    }
    // Canonical serialization: sorted `key = value` lines. Parsing the echo
    // reproduces the config exactly.
    std::string echo() const;

private:
    std::map<std::string, std::string> values_;
};

// Sorted list of every key the binary understands.
const std::vector<std::string>& known_config_keys();

// run.seed unless the SNAG_SEED environment variable overrides it.
uint64_t resolve_seed(const Config& cfg);

}  // namespace snag
