#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace avdit {

// Flat `key = value` run configuration. Keys are fixed by a schema; unknown
// keys are rejected at parse time with their line number. Values keep their
// original text form; typed access parses on demand.
class RunConfig {
public:
    RunConfig();  // all defaults

    static RunConfig parse_file(const std::string& path);
    static RunConfig parse_text(const std::string& text, const std::string& origin = "<string>");

    bool has_key(const std::string& key) const;
    void set(const std::string& key, const std::string& value);

    const std::string& get_string(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;

    // Resolved text in schema order; parse(serialize()) is a fixed point.
    std::string serialize() const;

    // Purpose seeds: explicit value if nonzero, otherwise derived from
    // seed.master and the stream name.
    uint64_t seed(const std::string& stream) const;

    static const std::vector<std::pair<std::string, std::string>>& schema();

private:
    std::map<std::string, std::string> values_;
};

}  // namespace avdit
