#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace xbe {

// Flat key=value run configuration. Files hold one `key=value` per line,
// '#' comments. Values stay strings until a typed getter parses them, so
// error messages can name the offending key.
class KvConfig {
public:
    static KvConfig load(const std::string& path);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_str(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

    // throws if a key is present that the command does not declare
    void require_known(const std::set<std::string>& allowed) const;

    // sorted key=value dump; the manifest format
    void save(const std::string& path) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

}  // namespace xbe
