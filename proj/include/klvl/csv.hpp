#ifndef KLVL_CSV_HPP
#define KLVL_CSV_HPP

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "optimizers.hpp"

namespace klvl {

// Shortest round-trip decimal representation; NaN renders as an empty
// field so unsampled values appear as blanks.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_number(long long v) { return std::to_string(v); }

class csv_writer {
 public:
  explicit csv_writer(std::vector<std::string> header)
      : columns_(std::move(header)) {
    for (std::size_t i = 0; i < columns_.size(); ++i) {
      if (i) body_ += ',';
      body_ += columns_[i];
    }
    body_ += '\n';
  }

  void add_row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_.size())
      throw invalid_input("csv_writer: cell count does not match header");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) body_ += ',';
      body_ += cells[i];
    }
    body_ += '\n';
  }

  const std::string& body() const { return body_; }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("csv_writer: cannot open " + path);
    out << body_;
  }

 private:
  std::vector<std::string> columns_;
  std::string body_;
};

// Per-iteration trajectory CSV: t, train_loss, test_loss, x_norm,
// var_u_1..K, var_v_1..K. Unsampled entries are blank.
inline csv_writer run_record_csv(const run_record& record, int levels) {
  std::vector<std::string> header = {"t", "train_loss", "test_loss", "x_norm"};
  for (int i = 1; i <= levels; ++i) header.push_back("var_u_" + std::to_string(i));
  for (int i = 1; i <= levels; ++i) header.push_back("var_v_" + std::to_string(i));
  csv_writer w(std::move(header));
  auto emit = [&](const run_row& row) {
    std::vector<std::string> cells;
    cells.push_back(format_number(row.t));
    cells.push_back(format_number(row.train_loss));
    cells.push_back(format_number(row.test_loss));
    cells.push_back(format_number(row.x_norm));
    for (int i = 0; i < levels; ++i)
      cells.push_back(i < static_cast<int>(row.var_u.size())
                          ? format_number(row.var_u[static_cast<std::size_t>(i)])
                          : "");
    for (int i = 0; i < levels; ++i)
      cells.push_back(i < static_cast<int>(row.var_v.size())
                          ? format_number(row.var_v[static_cast<std::size_t>(i)])
                          : "");
    w.add_row(cells);
  };
  emit(record.initial);
  for (const run_row& row : record.rows) emit(row);
  return w;
}

}  // namespace klvl

#endif  // KLVL_CSV_HPP
