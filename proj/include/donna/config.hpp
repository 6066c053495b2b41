// config.hpp: INI-style configuration files.
//
//   # comment
//   [section]
//   key = value
//
// Section order and key order are preserved so files hash canonically.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "donna/common.hpp"

namespace donna {

class ConfigFile {
 public:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };

  static ConfigFile parse_text(const std::string& text,
                               const std::string& origin = "<string>") {
    ConfigFile cfg;
    cfg.sections_.push_back({"", {}});
    std::size_t cur = 0;
    int lineno = 0;
    for (const std::string& raw : split(text, '\n')) {
      ++lineno;
      std::string line = raw;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        check(line.back() == ']', origin + ":" + std::to_string(lineno) +
                                      ": unterminated section header");
        std::string name = trim(line.substr(1, line.size() - 2));
        check(!name.empty(), origin + ":" + std::to_string(lineno) +
                                 ": empty section name");
        cfg.sections_.push_back({name, {}});
        cur = cfg.sections_.size() - 1;
        continue;
      }
      const std::size_t eq = line.find('=');
      check(eq != std::string::npos, origin + ":" + std::to_string(lineno) +
                                         ": expected 'key = value', got '" +
                                         line + "'");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      check(!key.empty(), origin + ":" + std::to_string(lineno) +
                              ": empty key");
      cfg.sections_[cur].entries.emplace_back(key, value);
    }
    return cfg;
  }

  static ConfigFile parse_file(const std::string& path) {
    return parse_text(read_file(path), path);
  }

  bool has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
  }

  std::string get(const std::string& section, const std::string& key) const {
    const std::string* v = find(section, key);
    check(v != nullptr,
          "config: missing key '" + key + "' in section [" + section + "]");
    return *v;
  }

  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& def) const {
    const std::string* v = find(section, key);
    return v ? *v : def;
  }

  long long get_int(const std::string& section, const std::string& key) const {
    return parse_int(get(section, key), section, key);
  }

  long long get_int_or(const std::string& section, const std::string& key,
                       long long def) const {
    const std::string* v = find(section, key);
    return v ? parse_int(*v, section, key) : def;
  }

  double get_double(const std::string& section, const std::string& key) const {
    return parse_double(get(section, key), section, key);
  }

  double get_double_or(const std::string& section, const std::string& key,
                       double def) const {
    const std::string* v = find(section, key);
    return v ? parse_double(*v, section, key) : def;
  }

  // whitespace-separated value list
  std::vector<std::string> get_list(const std::string& section,
                                    const std::string& key) const {
    std::vector<std::string> out;
    for (const std::string& tok : split(get(section, key), ' ')) {
      const std::string t = trim(tok);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

  std::vector<std::string> get_list_or(const std::string& section,
                                       const std::string& key) const {
    if (!has(section, key)) return {};
    return get_list(section, key);
  }

  bool has_section(const std::string& name) const {
    for (const auto& s : sections_) {
      if (s.name == name && !(s.name.empty() && s.entries.empty())) return true;
    }
    return false;
  }

  const Section* section(const std::string& name) const {
    for (const auto& s : sections_) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  std::vector<const Section*> sections_with_prefix(
      const std::string& prefix) const {
    std::vector<const Section*> out;
    for (const auto& s : sections_) {
      if (s.name.rfind(prefix, 0) == 0) out.push_back(&s);
    }
    return out;
  }

  // normalized text for content hashing
  std::string canonical() const {
    std::string out;
    for (const auto& s : sections_) {
      if (s.name.empty() && s.entries.empty()) continue;
      if (!s.name.empty()) out += "[" + s.name + "]\n";
      for (const auto& [k, v] : s.entries) out += k + " = " + v + "\n";
    }
    return out;
  }

 private:
  const std::string* find(const std::string& section,
                          const std::string& key) const {
    const std::string* hit = nullptr;
    for (const auto& s : sections_) {
      if (s.name != section) continue;
      for (const auto& [k, v] : s.entries) {
        if (k == key) hit = &v;  // last occurrence wins
      }
    }
    return hit;
  }

  static long long parse_int(const std::string& v, const std::string& section,
                             const std::string& key) {
    try {
      std::size_t pos = 0;
      long long r = std::stoll(v, &pos);
      check(pos == v.size(), "trailing characters");
      return r;
    } catch (const std::exception&) {
      fail("config: [" + section + "] " + key + " = '" + v +
           "' is not an integer");
    }
  }

  static double parse_double(const std::string& v, const std::string& section,
                             const std::string& key) {
    try {
      std::size_t pos = 0;
      double r = std::stod(v, &pos);
      check(pos == v.size(), "trailing characters");
      return r;
    } catch (const std::exception&) {
      fail("config: [" + section + "] " + key + " = '" + v +
           "' is not a number");
    }
  }

  std::vector<Section> sections_;
};

}  // namespace donna
