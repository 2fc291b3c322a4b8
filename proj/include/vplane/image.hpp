#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vplane/common.hpp"

namespace vplane {

// Interleaved 8-bit RGB image, row-major.
struct ImageU8 {
  ImageDims dims;
  std::vector<std::uint8_t> data;  // height * width * 3

  ImageU8() = default;
  explicit ImageU8(ImageDims d)
      : dims(d), data(static_cast<std::size_t>(d.cell_count()) * 3, 0) {}

  std::uint8_t at(int row, int col, int ch) const {
    return data[(static_cast<std::size_t>(row) * dims.width + col) * 3 + ch];
  }
  std::uint8_t& at(int row, int col, int ch) {
    return data[(static_cast<std::size_t>(row) * dims.width + col) * 3 + ch];
  }
};

inline std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
}

// Binary PPM (P6), maxval 255. Plain, universally readable, and byte-stable.
inline std::string ppm_bytes(const ImageU8& img) {
  std::string out = "P6\n" + std::to_string(img.dims.width) + " " +
                    std::to_string(img.dims.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.data.data()), img.data.size());
  return out;
}

inline void write_ppm(const std::filesystem::path& path, const ImageU8& img) {
  atomic_write(path, ppm_bytes(img));
}

inline ImageU8 read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_ppm: cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw ParseError(path.string(), 1, "not a P6 PPM (got '" + magic + "')");
  auto next_int = [&](const char* what) {
    // Skip whitespace and '#' comment lines between header fields.
    for (int ch = in.peek(); ch != EOF; ch = in.peek()) {
      if (ch == '#') {
        std::string comment;
        std::getline(in, comment);
      } else if (std::isspace(ch)) {
        in.get();
      } else {
        break;
      }
    }
    long v = -1;
    in >> v;
    if (!in || v < 0) throw ParseError(path.string(), 1, std::string("bad PPM ") + what);
    return v;
  };
  const long w = next_int("width"), h = next_int("height"), maxval = next_int("maxval");
  if (maxval != 255) throw ParseError(path.string(), 1, "unsupported PPM maxval");
  in.get();  // single whitespace after maxval
  ImageU8 img(ImageDims{static_cast<int>(w), static_cast<int>(h)});
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.data.size())) {
    throw IoError("read_ppm: truncated pixel data in " + path.string());
  }
  return img;
}

namespace detail {

// Bilinear fetch with half-pixel centers; reads outside the canvas clamp to
// the border for resizing and return the fill value for rotation.
inline double sample_bilinear_clamped(const ImageU8& img, double x, double y, int ch) {
  const int w = img.dims.width, h = img.dims.height;
  const double cx = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const double cy = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(cx), y0 = static_cast<int>(cy);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = cx - x0, fy = cy - y0;
  return (1 - fy) * ((1 - fx) * img.at(y0, x0, ch) + fx * img.at(y0, x1, ch)) +
         fy * ((1 - fx) * img.at(y1, x0, ch) + fx * img.at(y1, x1, ch));
}

inline double sample_bilinear_zerofill(const ImageU8& img, double x, double y, int ch) {
  const int w = img.dims.width, h = img.dims.height;
  if (x < -1.0 || y < -1.0 || x > w || y > h) return 0.0;
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto px = [&](int yy, int xx) -> double {
    if (xx < 0 || yy < 0 || xx >= w || yy >= h) return 0.0;
    return img.at(yy, xx, ch);
  };
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
         fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

}  // namespace detail

inline ImageU8 resize_bilinear(const ImageU8& src, ImageDims target) {
  require_valid(target, "resize_bilinear");
  if (src.dims == target) return src;
  ImageU8 dst(target);
  const double sx = static_cast<double>(src.dims.width) / target.width;
  const double sy = static_cast<double>(src.dims.height) / target.height;
  for (int r = 0; r < target.height; ++r) {
    const double y = (r + 0.5) * sy - 0.5;
    for (int c = 0; c < target.width; ++c) {
      const double x = (c + 0.5) * sx - 0.5;
      for (int ch = 0; ch < 3; ++ch) {
        dst.at(r, c, ch) = clamp_u8(detail::sample_bilinear_clamped(src, x, y, ch));
      }
    }
  }
  return dst;
}

// Rotate about the image center, bilinear, zero fill outside the source.
inline ImageU8 rotate_bilinear(const ImageU8& src, double angle_deg) {
  if (angle_deg == 0.0) return src;
  ImageU8 dst(src.dims);
  const double rad = angle_deg * std::acos(-1.0) / 180.0;
  const double ca = std::cos(rad), sa = std::sin(rad);
  const double cx = (src.dims.width - 1) / 2.0, cy = (src.dims.height - 1) / 2.0;
  for (int r = 0; r < src.dims.height; ++r) {
    for (int c = 0; c < src.dims.width; ++c) {
      // Inverse map: destination pixel pulled from the source.
      const double dx = c - cx, dy = r - cy;
      const double sx = ca * dx + sa * dy + cx;
      const double sy = -sa * dx + ca * dy + cy;
      for (int ch = 0; ch < 3; ++ch) {
        dst.at(r, c, ch) = clamp_u8(detail::sample_bilinear_zerofill(src, sx, sy, ch));
      }
    }
  }
  return dst;
}

// Forward map used for annotations; matches rotate_bilinear's inverse map.
inline Point2D rotate_point(const Point2D& p, ImageDims dims, double angle_deg) {
  if (angle_deg == 0.0) return p;
  const double rad = angle_deg * std::acos(-1.0) / 180.0;
  const double ca = std::cos(rad), sa = std::sin(rad);
  const double cx = (dims.width - 1) / 2.0, cy = (dims.height - 1) / 2.0;
  const double dx = p.x - cx, dy = p.y - cy;
  return Point2D{ca * dx - sa * dy + cx, sa * dx + ca * dy + cy};
}

}  // namespace vplane
