#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "longtail/common.hpp"

namespace longtail {

// Flat key=value configuration. '#' starts a comment; keys may use dots.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file: " + path);
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw Error("config line " + std::to_string(lineno) + " is not key=value: " + line);
      }
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : parse_double(it->second, "config key " + key);
  }

  long long get_int(const std::string& key, long long dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : parse_int(it->second, "config key " + key);
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw Error("config key " + key + " must be true/false");
  }

  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    std::vector<double> out;
    for (const auto& tok : split_on(it->second, ',')) {
      out.push_back(parse_double(trim(tok), "config key " + key));
    }
    return out;
  }

  std::vector<long long> get_int_list(const std::string& key,
                                      const std::vector<long long>& dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    std::vector<long long> out;
    for (const auto& tok : split_on(it->second, ',')) {
      out.push_back(parse_int(trim(tok), "config key " + key));
    }
    return out;
  }

  // Rejects keys outside the documented set; typos fail loudly.
  void require_known(const std::set<std::string>& known) const {
    for (const auto& key : order_) {
      if (!known.count(key)) throw Error("unknown config key: " + key);
    }
  }

  const std::vector<std::string>& keys() const { return order_; }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace longtail
