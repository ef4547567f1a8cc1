#include "afn/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace afn {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

Config Config::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str());
}

Config Config::parse_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto h = line.find('#');
        if (h != std::string::npos)
            line = line.substr(0, h);
        line = trim(line);
        if (line.empty())
            continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": empty key");
        cfg.set(section.empty() ? key : section + "." + key, value);
    }
    return cfg;
}

bool Config::has(const std::string& key) const { return map_.count(key) > 0; }

std::string Config::get(const std::string& key) const {
    auto it = map_.find(key);
    if (it == map_.end())
        throw std::runtime_error("missing config key: " + key);
    return it->second;
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
    auto it = map_.find(key);
    return it == map_.end() ? fallback : it->second;
}

long Config::get_int(const std::string& key, long fallback) const {
    auto it = map_.find(key);
    return it == map_.end() ? fallback : std::stol(it->second);
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = map_.find(key);
    return it == map_.end() ? fallback : std::stod(it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = map_.find(key);
    if (it == map_.end())
        return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "on")
        return true;
    if (it->second == "false" || it->second == "0" || it->second == "off")
        return false;
    throw std::runtime_error("config key " + key + ": expected boolean, got '" +
                             it->second + "'");
}

std::vector<int> Config::get_int_list(const std::string& key,
                                      const std::vector<int>& fallback) const {
    auto it = map_.find(key);
    if (it == map_.end())
        return fallback;
    std::vector<int> out;
    std::istringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ','))
        out.push_back(std::stoi(trim(tok)));
    return out;
}

void Config::set(const std::string& key, const std::string& value) {
    map_[key] = value;
}

} // namespace afn
