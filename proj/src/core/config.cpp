#include "core/config.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string raw;
    size_t lineno = 0;
    Section* current = nullptr;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                fail("config line " + std::to_string(lineno) + ": unterminated section");
            }
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (name.empty()) {
                fail("config line " + std::to_string(lineno) + ": empty section name");
            }
            cfg.sections_.push_back({name, {}});
            current = &cfg.sections_.back();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail("config line " + std::to_string(lineno) + ": expected key = value");
        }
        if (!current) {
            fail("config line " + std::to_string(lineno) + ": key outside any section");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            fail("config line " + std::to_string(lineno) + ": empty key");
        }
        for (const auto& [k, v] : current->entries) {
            if (k == key) {
                fail("config line " + std::to_string(lineno) + ": duplicate key '" +
                     key + "' in [" + current->name + "]");
            }
        }
        current->entries.emplace_back(key, value);
    }
    return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

bool ConfigFile::has_section(const std::string& name) const {
    return section(name) != nullptr;
}

const ConfigFile::Section* ConfigFile::section(const std::string& name) const {
    for (const auto& s : sections_) {
        if (s.name == name) return &s;
    }
    return nullptr;
}

std::optional<std::string> ConfigFile::get(const std::string& section_name,
                                           const std::string& key) const {
    const Section* s = section(section_name);
    if (!s) return std::nullopt;
    for (const auto& [k, v] : s->entries) {
        if (k == key) return v;
    }
    return std::nullopt;
}

std::string ConfigFile::get_or(const std::string& section_name, const std::string& key,
                               const std::string& fallback) const {
    auto v = get(section_name, key);
    return v ? *v : fallback;
}

std::string ConfigFile::require(const std::string& section_name,
                                const std::string& key) const {
    auto v = get(section_name, key);
    if (!v) fail("config is missing [" + section_name + "] " + key);
    return *v;
}

std::vector<std::string> ConfigFile::get_list(const std::string& section_name,
                                              const std::string& key) const {
    std::vector<std::string> out;
    auto v = get(section_name, key);
    if (!v) return out;
    std::string cur;
    for (char ch : *v + ",") {
        if (ch == ',') {
            const std::string item = trim(cur);
            if (!item.empty()) out.push_back(item);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    return out;
}

double to_double(const std::string& s, const std::string& what) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) fail("");
        return v;
    } catch (...) {
        fail("expected a number for " + what + ", got '" + s + "'");
    }
}

long long to_int(const std::string& s, const std::string& what) {
    try {
        size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) fail("");
        return v;
    } catch (...) {
        fail("expected an integer for " + what + ", got '" + s + "'");
    }
}

uint64_t to_u64(const std::string& s, const std::string& what) {
    try {
        size_t pos = 0;
        const unsigned long long v = std::stoull(s, &pos);
        if (pos != s.size()) fail("");
        return v;
    } catch (...) {
        fail("expected an unsigned integer for " + what + ", got '" + s + "'");
    }
}

}  // namespace tab
