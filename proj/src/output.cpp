#include "gridloop/output.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gridloop/errors.hpp"
#include "json.hpp"

namespace gridloop {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0.0 ? "inf" : "-inf";
  if (v == 0.0) v = 0.0;  // drop the sign of negative zero
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific, 8);
  return std::string(buf, r.ptr);
}

void CsvTable::add_row(std::vector<double> row) {
  if (row.size() != columns.size()) throw InputError("CSV row width does not match the header");
  rows.push_back(std::move(row));
}

std::string to_csv(const CsvTable& t, const std::string& run_hash) {
  std::string out = "# run " + run_hash + "\n";
  for (std::size_t c = 0; c < t.columns.size(); ++c) out += (c ? "," : "") + t.columns[c];
  out += "\n";
  for (const auto& row : t.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ",";
      out += format_number(row[c]);
    }
    out += "\n";
  }
  return out;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (header) {
      t.columns = cells;
      header = false;
      continue;
    }
    if (cells.size() != t.columns.size())
      throw InputError("CSV line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(t.columns.size()));
    std::vector<double> row;
    for (const std::string& c : cells) {
      double v = 0.0;
      if (c == "nan") {
        v = std::nan("");
      } else if (c == "inf" || c == "-inf") {
        v = c[0] == '-' ? -INFINITY : INFINITY;
      } else {
        const auto r = std::from_chars(c.data(), c.data() + c.size(), v);
        if (r.ec != std::errc() || r.ptr != c.data() + c.size())
          throw InputError("CSV line " + std::to_string(lineno) + ": '" + c + "' is not a number");
      }
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  if (header) throw InputError("CSV has no header line");
  return t;
}

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunManifest::hash() const {
  nlohmann::json j;
  j["command"] = command;
  j["inputs"] = inputs;
  j["overrides"] = overrides;
  j["version"] = version;
  return content_hash(j.dump());
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["hash"] = hash();
  j["command"] = command;
  j["inputs"] = inputs;
  j["overrides"] = overrides;
  j["version"] = version;
  j["timestamp"] = timestamp;
  return j.dump(2) + "\n";
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text_file(const std::string& path, const std::string& bytes) {
  const std::filesystem::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
  if (ec) throw InputError("cannot create directory '" + p.parent_path().string() + "': " + ec.message());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write file '" + path + "'");
  out << bytes;
  if (!out) throw InputError("write to '" + path + "' failed");
}

}  // namespace gridloop
