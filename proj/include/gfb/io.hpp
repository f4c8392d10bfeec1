#pragma once

// CSV tables, raw signal files with JSON sidecars, and number formatting.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfb/grid.hpp"

namespace gfb::io {

/// Shortest decimal text that parses back to the same binary32 value.
inline std::string format_float(float v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::string format_double(double v) {
  std::array<char, 40> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw FormatError("csv: missing column '" + name + "'");
  }
};

/// Streams rows to a file; fields never contain commas or quotes.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header, bool append = false)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw Error("cannot open csv for writing: " + path);
    if (!append || out_.tellp() == 0) write_row(header);
  }

  void write_row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
    if (!out_) throw Error("csv write failed");
  }

 private:
  std::ofstream out_;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Parses a header plus at least one data row; errors carry 1-based line numbers.
inline CsvTable parse_csv(const std::string& text, const std::string& origin = "csv") {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw FormatError(origin + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(t.header.size()) + " fields, found " +
                        std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw FormatError(origin + ":1: missing header row");
  if (t.rows.empty()) {
    throw FormatError(origin + ":" + std::to_string(line_no + 1) + ": no data rows");
  }
  return t;
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline CsvTable read_csv(const std::string& path) { return parse_csv(read_text(path), path); }

/// Numeric field with a line-numbered error (row index is 0-based data row).
inline double csv_number(const CsvTable& t, std::size_t row, std::size_t col,
                         const std::string& origin = "csv") {
  const std::string& s = t.rows.at(row).at(col);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw FormatError(origin + ":" + std::to_string(row + 2) + ": column '" + t.header[col] +
                      "' is not a number: '" + s + "'");
  }
  return v;
}

/// Writes points as CSV with columns x0..x{N-1}.
inline void write_points_csv(const std::string& path, const Grid<float>& pts,
                             const std::string& prefix = "x") {
  std::vector<std::string> header;
  for (std::size_t j = 0; j < pts.cols(); ++j) header.push_back(prefix + std::to_string(j));
  CsvWriter w(path, header);
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    std::vector<std::string> row;
    for (float v : pts.row(i)) row.push_back(format_float(v));
    w.write_row(row);
  }
}

inline Grid<float> read_points_csv(const std::string& path) {
  const auto t = read_csv(path);
  Grid<float> g(t.rows.size(), t.header.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t j = 0; j < t.header.size(); ++j) {
      g(i, j) = static_cast<float>(csv_number(t, i, j, path));
    }
  }
  return g;
}

/// Raw little-endian binary32 samples, row after row, plus "<path>.json":
///   {"fs": <Hz>, "length": <samples per signal>, "count": <signals>,
///    "condition_names": [...], "conditions": [[...], ...]}
struct SignalFile {
  Grid<float> signals;
  double fs = 16000.0;
  std::vector<std::string> condition_names;
  Grid<float> conditions;  // count x K
};

inline void write_signal_file(const std::string& path, const SignalFile& sf) {
  std::string bytes;
  bytes.reserve(sf.signals.size() * 4);
  for (float v : sf.signals.flat()) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((u >> (8 * i)) & 0xFFu));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open signal file for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  nlohmann::json side;
  side["fs"] = sf.fs;
  side["length"] = sf.signals.cols();
  side["count"] = sf.signals.rows();
  side["condition_names"] = sf.condition_names;
  nlohmann::json conds = nlohmann::json::array();
  for (std::size_t i = 0; i < sf.conditions.rows(); ++i) {
    conds.push_back(std::vector<float>(sf.conditions.row(i).begin(), sf.conditions.row(i).end()));
  }
  side["conditions"] = conds;
  std::ofstream s(path + ".json", std::ios::trunc);
  if (!s) throw Error("cannot open sidecar for writing: " + path + ".json");
  s << side.dump(2) << '\n';
}

inline SignalFile read_signal_file(const std::string& path) {
  const std::string bytes = read_text(path);
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_text(path + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("signal sidecar " + path + ".json: " + e.what());
  }
  SignalFile sf;
  sf.fs = side.value("fs", 16000.0);
  const std::size_t length = side.at("length").get<std::size_t>();
  const std::size_t count = side.value("count", length ? bytes.size() / 4 / length : 0);
  if (length == 0 || bytes.size() != 4 * length * count) {
    throw FormatError("signal file " + path + ": size does not match sidecar length/count");
  }
  sf.signals = Grid<float>(count, length);
  for (std::size_t i = 0; i < count * length; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) {
      u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    }
    sf.signals.flat()[i] = std::bit_cast<float>(u);
  }
  sf.condition_names = side.value("condition_names", std::vector<std::string>{});
  const auto conds = side.value("conditions", std::vector<std::vector<float>>{});
  sf.conditions = Grid<float>(conds.size(), sf.condition_names.size());
  for (std::size_t i = 0; i < conds.size(); ++i) {
    if (conds[i].size() != sf.condition_names.size()) {
      throw FormatError("signal sidecar " + path + ".json: condition row " + std::to_string(i) +
                        " has wrong length");
    }
    std::copy(conds[i].begin(), conds[i].end(), sf.conditions.row(i).begin());
  }
  return sf;
}

}  // namespace gfb::io
