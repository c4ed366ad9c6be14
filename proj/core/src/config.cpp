#include "xbe/config.hpp"

#include <fstream>
#include <stdexcept>

namespace xbe {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("xbe::config: " + msg); }

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail("cannot open config file " + path);
    KvConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            fail(path + ":" + std::to_string(line_no) + ": expected key=value");
        cfg.entries_[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return cfg;
}

void KvConfig::set(const std::string& key, const std::string& value) { entries_[key] = value; }

bool KvConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

int KvConfig::get_int(const std::string& key, int fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        std::size_t used = 0;
        const int v = std::stoi(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        fail("key " + key + " must be an integer, got '" + it->second + "'");
    }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        fail("key " + key + " must be a number, got '" + it->second + "'");
    }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    fail("key " + key + " must be true/false, got '" + it->second + "'");
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        std::size_t used = 0;
        const std::uint64_t v = std::stoull(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        fail("key " + key + " must be an unsigned integer, got '" + it->second + "'");
    }
}

void KvConfig::require_known(const std::set<std::string>& allowed) const {
    for (const auto& [key, value] : entries_)
        if (!allowed.count(key)) fail("unknown configuration key '" + key + "'");
}

void KvConfig::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) fail("cannot open " + path + " for writing");
    for (const auto& [key, value] : entries_) os << key << '=' << value << '\n';
    if (!os) fail("write failed for " + path);
}

}  // namespace xbe
