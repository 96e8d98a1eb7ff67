#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tailchain/kernels.hpp"
#include "tailchain/markov.hpp"
#include "tailchain/vecmath.hpp"

namespace tailchain {

// Shortest text form of a double that parses back to the same bits.
std::string format_double(double x);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// Row-major float64 matrix, little-endian on disk regardless of host order.
void write_matrix_le(const std::string& path, std::span<const double> data, long rows, int cols);
Vec read_matrix_le(const std::string& path, long rows, int cols);

// JSON sidecar describing a trajectory file: {"d", "n", "seed", "model"}.
struct Sidecar {
  int d = 0;
  long n = 0;
  std::uint64_t seed = 0;
  std::string model;
};

// The sidecar of "traj.bin" lives at "traj.bin.json".
std::string sidecar_path(const std::string& matrix_path);
void write_sidecar(const std::string& path, const Sidecar& s);
Sidecar read_sidecar(const std::string& path);

// CSV with one window per row: y, then the (s+t+1)*d normalized values with
// columns named m{j}_{c} for time offset j and coordinate c.
void write_windows_csv(const std::string& path, const std::vector<ExtremeWindow>& windows);

// CSV of the weighted-expectation family: columns i, estimate, ci.
void write_family_csv(const std::string& path, const std::vector<GapEstimate>& family);

// CSV of flat rows (shared width), with an optional header line.
void write_rows_csv(const std::string& path, std::span<const double> rows, std::size_t n,
                    int width, const std::vector<std::string>& header);

// Numeric CSV reader: skips one leading non-numeric header line if present;
// all rows must share one width. Returns row-major data.
struct CsvMatrix {
  std::size_t rows = 0;
  int cols = 0;
  Vec data;
};

CsvMatrix read_csv_matrix(const std::string& path);

}  // namespace tailchain
