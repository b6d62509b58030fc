#include "ldalign/csv.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ldalign/errors.hpp"

namespace ldalign {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string join(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].find_first_of(",\n") != std::string::npos) {
      throw ConfigError("csv cell contains a separator: " + cells[i]);
    }
    if (i) out.push_back(',');
    out += cells[i];
  }
  return out;
}

}  // namespace

void append_csv(const std::string& path, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  if (!fresh) {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    if (split_line(first) != header) throw IoError("csv header mismatch in " + path);
  }
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write csv: " + path);
  if (fresh) out << join(header) << '\n';
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw ConfigError("csv row width mismatch for " + path);
    out << join(r) << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open csv: " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) return t;
  t.header = split_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size()) throw ParseError("csv row width mismatch", lineno);
    t.rows.push_back(std::move(cells));
  }
  return t;
}

std::string format_real(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

}  // namespace ldalign
