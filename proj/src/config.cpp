#include "sosuq/config.hpp"

#include <fstream>
#include <sstream>

#include "sosuq/errors.hpp"

namespace sosuq {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

Config Config::parse_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        cfg.entries_[key] = value;
    }
    return cfg;
}

Config Config::parse_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path.string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_string(text);
}

std::string Config::get_string(const std::string& key, const std::string& def) const {
    auto it = entries_.find(key);
    const std::string v = it == entries_.end() ? def : it->second;
    read_.insert(key);
    resolved_[key] = v;
    return v;
}

double Config::get_double(const std::string& key, double def) const {
    auto it = entries_.find(key);
    read_.insert(key);
    if (it == entries_.end()) {
        std::ostringstream os;
        os.precision(17);
        os << def;
        resolved_[key] = os.str();
        return def;
    }
    try {
        size_t used = 0;
        double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        resolved_[key] = it->second;
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not a number: " + it->second);
    }
}

int Config::get_int(const std::string& key, int def) const {
    const std::int64_t v = get_int64(key, def);
    if (v < INT32_MIN || v > INT32_MAX) throw ConfigError("config key '" + key + "': out of int range");
    return static_cast<int>(v);
}

std::int64_t Config::get_int64(const std::string& key, std::int64_t def) const {
    auto it = entries_.find(key);
    read_.insert(key);
    if (it == entries_.end()) {
        resolved_[key] = std::to_string(def);
        return def;
    }
    try {
        size_t used = 0;
        std::int64_t v = std::stoll(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        resolved_[key] = it->second;
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not an integer: " + it->second);
    }
}

bool Config::get_bool(const std::string& key, bool def) const {
    auto it = entries_.find(key);
    read_.insert(key);
    if (it == entries_.end()) {
        resolved_[key] = def ? "true" : "false";
        return def;
    }
    const std::string& v = it->second;
    resolved_[key] = v;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': not a boolean: " + v);
}

std::set<std::string> Config::unread_keys() const {
    std::set<std::string> out;
    for (const auto& [k, v] : entries_)
        if (read_.count(k) == 0) out.insert(k);
    return out;
}

void Config::require_all_read() const {
    const auto unread = unread_keys();
    if (unread.empty()) return;
    std::string msg = "unknown config keys:";
    for (const auto& k : unread) msg += " " + k;
    throw ConfigError(msg);
}

std::string Config::resolved_text() const {
    std::string out;
    for (const auto& [k, v] : resolved_) out += k + " = " + v + "\n";
    return out;
}

std::uint64_t Config::resolved_hash() const {
    const std::string t = resolved_text();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : t) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace sosuq
