#include "tailchain/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tailchain/errors.hpp"

namespace tailchain {

std::string format_double(double x) {
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) return buf;
  }
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::ostringstream out;
  out << in.rdbuf();
  if (in.bad()) throw IoError("read failed on " + path);
  return out.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out.flush()) throw IoError("write failed on " + path);
}

namespace {

void to_little_endian(double* values, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    (void)values;
    (void)count;
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      auto bytes = std::bit_cast<std::array<unsigned char, 8>>(values[i]);
      std::reverse(bytes.begin(), bytes.end());
      values[i] = std::bit_cast<double>(bytes);
    }
  }
}

}  // namespace

void write_matrix_le(const std::string& path, std::span<const double> data, long rows, int cols) {
  if (rows < 0 || cols < 1 || data.size() != static_cast<std::size_t>(rows) * cols)
    throw DimensionMismatch("matrix shape does not match the data size");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  } else {
    Vec copy(data.begin(), data.end());
    to_little_endian(copy.data(), copy.size());
    out.write(reinterpret_cast<const char*>(copy.data()),
              static_cast<std::streamsize>(copy.size() * sizeof(double)));
  }
  if (!out.flush()) throw IoError("write failed on " + path);
}

Vec read_matrix_le(const std::string& path, long rows, int cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  Vec data(static_cast<std::size_t>(rows) * cols);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double)))
    throw IoError(path + " is shorter than the sidecar says");
  to_little_endian(data.data(), data.size());
  return data;
}

std::string sidecar_path(const std::string& matrix_path) { return matrix_path + ".json"; }

void write_sidecar(const std::string& path, const Sidecar& s) {
  nlohmann::json j;
  j["d"] = s.d;
  j["n"] = s.n;
  j["seed"] = s.seed;
  j["model"] = s.model;
  write_text_file(path, j.dump(2) + "\n");
}

Sidecar read_sidecar(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
    Sidecar s;
    s.d = j.at("d").get<int>();
    s.n = j.at("n").get<long>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.model = j.at("model").get<std::string>();
    if (s.d < 1 || s.n < 0) throw IoError(path + " has a nonsensical shape");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("sidecar " + path + " is invalid: " + e.what());
  }
}

void write_windows_csv(const std::string& path, const std::vector<ExtremeWindow>& windows) {
  if (windows.empty()) throw NoExceedances("no windows to write");
  const int s = windows.front().s;
  const int t = windows.front().t;
  const int d = windows.front().d;
  std::string out = "y";
  for (int j = -s; j <= t; ++j)
    for (int c = 0; c < d; ++c) out += ",m" + std::to_string(j) + "_" + std::to_string(c);
  out += "\n";
  for (const ExtremeWindow& w : windows) {
    out += format_double(w.y);
    for (double v : w.normalized) out += "," + format_double(v);
    out += "\n";
  }
  write_text_file(path, out);
}

void write_family_csv(const std::string& path, const std::vector<GapEstimate>& family) {
  std::string out = "i,estimate,ci\n";
  for (std::size_t i = 0; i < family.size(); ++i) {
    out += std::to_string(i) + "," + format_double(family[i].estimate) + "," +
           format_double(family[i].ci_halfwidth) + "\n";
  }
  write_text_file(path, out);
}

void write_rows_csv(const std::string& path, std::span<const double> rows, std::size_t n,
                    int width, const std::vector<std::string>& header) {
  if (rows.size() != n * static_cast<std::size_t>(width))
    throw DimensionMismatch("row data does not match the declared shape");
  std::string out;
  if (!header.empty()) {
    if (static_cast<int>(header.size()) != width)
      throw DimensionMismatch("header width does not match the row width");
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c) out += ",";
      out += header[c];
    }
    out += "\n";
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (int c = 0; c < width; ++c) {
      if (c) out += ",";
      out += format_double(rows[r * width + c]);
    }
    out += "\n";
  }
  write_text_file(path, out);
}

CsvMatrix read_csv_matrix(const std::string& path) {
  const std::string text = read_text_file(path);
  CsvMatrix m;
  std::istringstream lines(text);
  std::string line;
  bool first = true;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    bool numeric = true;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      const std::string cell = line.substr(pos, comma - pos);
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || (end && *end != '\0')) {
        numeric = false;
        break;
      }
      row.push_back(v);
      pos = comma + 1;
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;  // header line
      }
      throw IoError(path + " has a non-numeric row past the header");
    }
    first = false;
    if (m.cols == 0) m.cols = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != m.cols)
      throw IoError(path + " has rows of differing widths");
    m.data.insert(m.data.end(), row.begin(), row.end());
    ++m.rows;
  }
  if (m.rows == 0) throw IoError(path + " contains no data rows");
  return m;
}

}  // namespace tailchain
