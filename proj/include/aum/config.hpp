#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace aum {

// Flat key=value run configuration. Unknown keys are hard errors so a typo
// cannot silently fall back to a default hyperparameter.
class KeyValueConfig {
public:
    static KeyValueConfig parse_file(const std::string& path);
    static KeyValueConfig parse_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string get_string(const std::string& key, const std::string& def) const;
    std::string require_string(const std::string& key) const;
    long get_int(const std::string& key, long def) const;
    double get_double(const std::string& key, double def) const;
    bool get_bool(const std::string& key, bool def) const;

    // Rejects any key not in the allowed set.
    void validate_keys(const std::set<std::string>& allowed) const;

    const std::string& text() const { return text_; }
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    std::string text_;
};

std::uint64_t fnv1a_hash(const std::string& s);

}  // namespace aum
