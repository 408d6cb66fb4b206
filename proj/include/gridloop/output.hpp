// Reproducible exports: locale-independent CSV tables, run manifests and
// content hashes.
#pragma once

#include <map>
#include <string>
#include <vector>

namespace gridloop {

inline constexpr const char* kToolVersion = "1.0.0";

// Fixed scientific notation with 9 significant digits and '.' as separator.
std::string format_number(double v);

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  void add_row(std::vector<double> row);  // throws InputError on width mismatch
};

// First line "# run <hash>", then the header and one numeric row per line.
std::string to_csv(const CsvTable& t, const std::string& run_hash);
// Skips '#' comment lines; throws InputError on malformed input.
CsvTable parse_csv(const std::string& text);

// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string content_hash(const std::string& bytes);

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> inputs;     // role -> content hash
  std::map<std::string, std::string> overrides;  // flag -> value as given
  std::string version = kToolVersion;
  std::string timestamp;  // UTC, informational only

  // Hash over everything except the timestamp, so identical reruns agree.
  std::string hash() const;
  std::string to_json() const;
};

std::string utc_timestamp();

// Writes bytes to path, creating parent directories; throws InputError on failure.
void write_text_file(const std::string& path, const std::string& bytes);

}  // namespace gridloop
