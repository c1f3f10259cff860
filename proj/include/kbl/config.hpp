#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace kbl {

// Flat `key = value` configuration with `#` comments.  Unknown keys are kept
// verbatim so downstream modules can define their own namespaces.
class Config {
public:
    Config() = default;
    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    bool has(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& def) const;
    double get_double(const std::string& key, double def) const;
    int get_int(const std::string& key, int def) const;
    bool get_bool(const std::string& key, bool def) const;

    void set(const std::string& key, const std::string& value);

    // Content hash over the keys starting with any of the given prefixes,
    // in sorted key order.  Keys operator caches.
    std::uint64_t subset_hash(const std::vector<std::string>& prefixes) const;

    const std::map<std::string, std::string>& items() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace kbl
