#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace vplane {

// Thrown when a text input (lines file, annotation file, config) is malformed.
// The message carries the offending file and line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, long line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what) {}
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Pixel coordinates, origin top-left, +x right, +y down.
struct Point2D {
  double x = 0.0;
  double y = 0.0;

  bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

inline double squared_distance(const Point2D& a, const Point2D& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

inline double distance(const Point2D& a, const Point2D& b) {
  return std::sqrt(squared_distance(a, b));
}

struct ImageDims {
  int width = 0;
  int height = 0;

  bool valid() const { return width >= 2 && height >= 2; }
  long long cell_count() const {
    return static_cast<long long>(width) * static_cast<long long>(height);
  }
  double diagonal() const {
    return std::sqrt(static_cast<double>(width) * width +
                     static_cast<double>(height) * height);
  }
  bool operator==(const ImageDims& o) const {
    return width == o.width && height == o.height;
  }
  bool operator!=(const ImageDims& o) const { return !(*this == o); }
};

inline void require_valid(const ImageDims& d, const char* who) {
  if (!d.valid()) {
    throw std::invalid_argument(std::string(who) + ": image dims must be at least 2x2, got " +
                                std::to_string(d.width) + "x" + std::to_string(d.height));
  }
}

// All-or-nothing file write: the content lands under a temporary name and is
// renamed into place, so readers never observe a partial file.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("atomic_write: cannot open " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("atomic_write: short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("atomic_write: rename to " + path.string() + " failed: " + ec.message());
}

}  // namespace vplane
