#pragma once

#include <map>
#include <string>
#include <vector>

namespace afn {

// Flat `key = value` config with [section] headers. Keys are reported as
// "section.key" (or bare "key" before any header). '#' starts a comment,
// whitespace around keys and values is trimmed. No nesting, no quoting.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text);

    bool has(const std::string& key) const;
    std::string get(const std::string& key) const;
    std::string get(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    // comma-separated integers
    std::vector<int> get_int_list(const std::string& key,
                                  const std::vector<int>& fallback) const;

    const std::map<std::string, std::string>& entries() const { return map_; }
    void set(const std::string& key, const std::string& value);

private:
    std::map<std::string, std::string> map_;
};

} // namespace afn
