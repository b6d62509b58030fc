#pragma once

#include <string>
#include <vector>

namespace ldalign {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Appends rows to `path`, writing the header first when the file is new or
// empty. An existing header must match exactly.
void append_csv(const std::string& path, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows);

CsvTable read_csv(const std::string& path);

// Shortest decimal text that parses back to the same double.
std::string format_real(double value);

}  // namespace ldalign
