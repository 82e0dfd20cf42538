#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mgf/errors.hpp"

namespace mgf {

// Shortest decimal that round-trips a double exactly: 17 significant digits.
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& contents) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << contents;
  if (!out) throw Error("write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Minimal CSV builder; fields are joined with commas, rows with '\n'.
class CsvBuilder {
 public:
  explicit CsvBuilder(std::vector<std::string> header) {
    append_row(header);
  }

  void append_row(const std::vector<std::string>& fields) {
    for (size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ += ',';
      out_ += fields[i];
    }
    out_ += '\n';
  }

  const std::string& str() const { return out_; }

  void save(const std::filesystem::path& path) const {
    write_text_file(path, out_);
  }

 private:
  std::string out_;
};

}  // namespace mgf
