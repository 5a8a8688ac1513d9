#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ddro {

// Shortest decimal string that round-trips the double exactly.
std::string fmt_double(double v);

// Fixed-decimal formatting, used by the LP text dump.
std::string fmt_fixed(double v, int decimals);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Minimal CSV support: comma separated, no quoting (our fields are plain
// numbers and identifiers), first row is the header.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

std::vector<std::string> split_csv_line(const std::string& line);

// FNV-1a, used to derive named RNG substreams.
std::uint64_t fnv1a64(const std::string& s);

}  // namespace ddro
