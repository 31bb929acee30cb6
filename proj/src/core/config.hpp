#pragma once

#include <optional>
#include <string>
#include <vector>

namespace tab {

// Line-based config: `[section]` headers, `key = value` pairs, `#` comments,
// comma-separated lists. Section and key order is preserved so candidate
// enumeration (and its tie-breaking) follows the file.
class ConfigFile {
public:
    struct Section {
        std::string name;
        std::vector<std::pair<std::string, std::string>> entries;
    };

    static ConfigFile parse(const std::string& text);
    static ConfigFile parse_file(const std::string& path);

    bool has_section(const std::string& name) const;
    const Section* section(const std::string& name) const;

    std::optional<std::string> get(const std::string& section_name,
                                   const std::string& key) const;
    std::string get_or(const std::string& section_name, const std::string& key,
                       const std::string& fallback) const;
    std::string require(const std::string& section_name, const std::string& key) const;

    // Comma-splits the value; empty when the key is absent.
    std::vector<std::string> get_list(const std::string& section_name,
                                      const std::string& key) const;

    const std::vector<Section>& sections() const { return sections_; }

private:
    std::vector<Section> sections_;
};

double to_double(const std::string& s, const std::string& what);
long long to_int(const std::string& s, const std::string& what);
uint64_t to_u64(const std::string& s, const std::string& what);

}  // namespace tab
