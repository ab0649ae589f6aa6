#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

namespace sosuq {

// Plain-text run configuration: one `key = value` pair per line, `#`
// comments, dotted lower-case keys with units spelled out in the name
// (e.g. select.ring_width_mm). Reads are tracked so a command can reject
// misspelled keys, and every key read with its default is recorded so the
// fully resolved configuration can be echoed next to the outputs.
class Config {
public:
    Config() = default;

    static Config parse_string(const std::string& text);
    static Config parse_file(const std::filesystem::path& path);

    bool has(const std::string& key) const { return entries_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { entries_[key] = value; }

    std::string get_string(const std::string& key, const std::string& def) const;
    double get_double(const std::string& key, double def) const;
    int get_int(const std::string& key, int def) const;
    std::int64_t get_int64(const std::string& key, std::int64_t def) const;
    bool get_bool(const std::string& key, bool def) const;

    /// Keys present in the file but never read by the command.
    std::set<std::string> unread_keys() const;
    /// Throws ConfigError naming unread keys, if any.
    void require_all_read() const;

    /// Every key the command looked at, with the value actually used.
    /// Serializing this is the provenance echo written next to outputs.
    std::string resolved_text() const;
    std::uint64_t resolved_hash() const;

private:
    std::map<std::string, std::string> entries_;
    mutable std::map<std::string, std::string> resolved_;
    mutable std::set<std::string> read_;
};

} // namespace sosuq
