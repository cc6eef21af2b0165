#ifndef S3_IO_HPP
#define S3_IO_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "s3/error.hpp"
#include "s3/measures.hpp"

namespace s3 {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line);
}

inline double parse_real(std::string_view tok, const std::string& source, std::size_t line) {
  double v = 0.0;
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (tok.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw IoError(where(source, line) + ": expected a number, got '" + std::string(tok) + "'");
  }
  return v;
}

inline std::size_t parse_count(std::string_view tok, const std::string& source, std::size_t line) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw IoError(where(source, line) + ": expected a positive integer, got '" +
                  std::string(tok) + "'");
  }
  return v;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace detail

/// Point file: header `x,y` or `x,y,w`, one atom per line, blank lines ignored.
inline PointMeasure parse_points(std::istream& in, const std::string& source = "<stream>") {
  std::string raw;
  std::size_t line_no = 0;
  bool weighted = false;
  bool have_header = false;
  std::vector<Point2> pts;
  std::vector<double> w;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = detail::trim(raw);
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line = detail::trim(line.substr(3));
    if (line.empty()) continue;
    const auto fields = detail::split_commas(line);
    if (!have_header) {
      if (fields.size() == 2 && fields[0] == "x" && fields[1] == "y") {
        weighted = false;
      } else if (fields.size() == 3 && fields[0] == "x" && fields[1] == "y" && fields[2] == "w") {
        weighted = true;
      } else {
        throw IoError(detail::where(source, line_no) + ": expected header 'x,y' or 'x,y,w'");
      }
      have_header = true;
      continue;
    }
    const std::size_t want = weighted ? 3 : 2;
    if (fields.size() != want) {
      throw IoError(detail::where(source, line_no) + ": expected " + std::to_string(want) +
                    " fields, got " + std::to_string(fields.size()));
    }
    pts.push_back({detail::parse_real(fields[0], source, line_no),
                   detail::parse_real(fields[1], source, line_no)});
    const double wt = weighted ? detail::parse_real(fields[2], source, line_no) : 1.0;
    if (wt < 0.0) throw IoError(detail::where(source, line_no) + ": negative weight");
    w.push_back(wt);
  }
  if (!have_header) throw IoError(source + ": missing header 'x,y' or 'x,y,w'");
  return PointMeasure(std::move(pts), std::move(w));
}

inline PointMeasure read_points(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return parse_points(in, path.string());
}

/// Grid file: `rows,cols,cell_size`, then row-major values. Line breaks
/// between values are free-form.
inline GridMeasure parse_grid(std::istream& in, const std::string& source = "<stream>") {
  std::string raw;
  std::size_t line_no = 0;
  bool have_header = false;
  std::size_t rows = 0, cols = 0;
  double cell = 0.0;
  std::vector<double> values;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = detail::trim(raw);
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line = detail::trim(line.substr(3));
    if (line.empty()) continue;
    const auto fields = detail::split_commas(line);
    if (!have_header) {
      if (fields.size() != 3) {
        throw IoError(detail::where(source, line_no) + ": expected header 'rows,cols,cell_size'");
      }
      rows = detail::parse_count(fields[0], source, line_no);
      cols = detail::parse_count(fields[1], source, line_no);
      cell = detail::parse_real(fields[2], source, line_no);
      if (rows == 0 || cols == 0 || !(cell > 0.0)) {
        throw IoError(detail::where(source, line_no) + ": grid dimensions must be positive");
      }
      values.reserve(rows * cols);
      have_header = true;
      continue;
    }
    for (auto tok : fields) {
      const double v = detail::parse_real(tok, source, line_no);
      if (v < 0.0) throw IoError(detail::where(source, line_no) + ": negative grid value");
      values.push_back(v);
    }
  }
  if (!have_header) throw IoError(source + ": missing header 'rows,cols,cell_size'");
  if (values.size() != rows * cols) {
    throw IoError(source + ": expected " + std::to_string(rows * cols) + " values, got " +
                  std::to_string(values.size()));
  }
  return GridMeasure(rows, cols, cell, std::move(values));
}

inline GridMeasure read_grid(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return parse_grid(in, path.string());
}

// max_digits10 so a write/read round trip is bit-exact.
inline void write_grid(std::ostream& os, const GridMeasure& g) {
  os << std::setprecision(17);
  os << g.rows() << ',' << g.cols() << ',' << g.cell_size() << '\n';
  for (std::size_t i = 0; i < g.rows(); ++i) {
    for (std::size_t j = 0; j < g.cols(); ++j) os << (j ? "," : "") << g.at(i, j);
    os << '\n';
  }
}

inline void write_points(std::ostream& os, const PointMeasure& p) {
  const auto w = p.weights();
  const bool unit = std::all_of(w.begin(), w.end(), [](double v) { return v == 1.0; });
  os << std::setprecision(17) << (unit ? "x,y\n" : "x,y,w\n");
  for (std::size_t k = 0; k < p.size(); ++k) {
    os << p.points()[k].x << ',' << p.points()[k].y;
    if (!unit) os << ',' << w[k];
    os << '\n';
  }
}

/// Plain PGM (P2). Values are scaled so the maximum maps to 255.
inline void write_pgm(std::ostream& os, const GridMeasure& g) {
  double top = 0.0;
  for (double v : g.values()) top = std::max(top, v);
  os << "P2\n" << g.cols() << ' ' << g.rows() << "\n255\n";
  for (std::size_t i = 0; i < g.rows(); ++i) {
    for (std::size_t j = 0; j < g.cols(); ++j) {
      const long px = top > 0.0 ? std::lround(g.at(i, j) / top * 255.0) : 0L;
      os << (j ? " " : "") << px;
    }
    os << '\n';
  }
}

/// Writes through a sibling temp file and renames it into place, so readers
/// never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::function<void(std::ostream&)>& body) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    body(out);
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot write " + path.string());
  }
}

}  // namespace s3

#endif  // S3_IO_HPP
