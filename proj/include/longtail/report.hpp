#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "longtail/common.hpp"
#include "longtail/config.hpp"

namespace longtail {

// Ordered key=value document. Keys are dotted paths; output is byte-stable
// for identical inputs (no timestamps, no addresses).
class Report {
 public:
  void add(const std::string& key, const std::string& value) {
    entries_.emplace_back(key, value);
  }
  void add(const std::string& key, const char* value) { add(key, std::string(value)); }
  void add(const std::string& key, double value) { add(key, format_metric(value)); }
  void add(const std::string& key, long long value) { add(key, std::to_string(value)); }
  void add(const std::string& key, int value) { add(key, std::to_string(value)); }
  void add(const std::string& key, std::size_t value) { add(key, std::to_string(value)); }
  void add(const std::string& key, bool value) { add(key, std::string(value ? "true" : "false")); }

  void add_config_snapshot(const Config& cfg, const std::string& prefix = "config.") {
    for (const auto& key : cfg.keys()) {
      add(prefix + key, cfg.values().at(key));
    }
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
      out += k;
      out += " = ";
      out += v;
      out += "\n";
    }
    return out;
  }

  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write report: " + path);
    out << to_text();
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Flat CSV table, one per sweep.
struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write csv: " + path);
    out << join(header) << "\n";
    for (const auto& row : rows) out << join(row) << "\n";
  }

  // cells holding the delimiter (level lists like "1,4,8") get standard quoting
  static std::string quote(const std::string& cell) {
    if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
      if (c == '"') out += '"';
      out += c;
    }
    out += '"';
    return out;
  }

  static std::string join(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ",";
      out += quote(cells[i]);
    }
    return out;
  }
};

}  // namespace longtail
