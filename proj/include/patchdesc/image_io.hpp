#pragma once

// Minimal 8-bit grayscale image codecs: BMP (8-bit palettized or 24/32-bit,
// uncompressed) and binary PGM (P5). Colour input is reduced to luma.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "patchdesc/binary_io.hpp"
#include "patchdesc/error.hpp"

namespace patchdesc {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, top row first

  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

namespace detail {

inline std::uint32_t le32(const std::vector<std::uint8_t>& b, std::size_t off) {
  if (off + 4 > b.size()) throw FormatError("bmp: truncated header");
  return b[off] | (b[off + 1] << 8) | (b[off + 2] << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}
inline std::uint16_t le16(const std::vector<std::uint8_t>& b, std::size_t off) {
  if (off + 2 > b.size()) throw FormatError("bmp: truncated header");
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}
inline std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return static_cast<std::uint8_t>(std::lround(0.299 * r + 0.587 * g + 0.114 * b));
}

}  // namespace detail

inline GrayImage decode_bmp(const std::vector<std::uint8_t>& b) {
  if (b.size() < 54 || b[0] != 'B' || b[1] != 'M') throw FormatError("bmp: bad signature");
  const std::uint32_t data_off = detail::le32(b, 10);
  const std::uint32_t dib = detail::le32(b, 14);
  if (dib < 40) throw FormatError("bmp: unsupported header size");
  const auto w = static_cast<std::int32_t>(detail::le32(b, 18));
  const auto h = static_cast<std::int32_t>(detail::le32(b, 22));
  const std::uint16_t bpp = detail::le16(b, 28);
  const std::uint32_t compression = detail::le32(b, 30);
  if (compression != 0) throw FormatError("bmp: compressed bitmaps are not supported");
  if (w <= 0 || h == 0) throw FormatError("bmp: bad dimensions");
  if (bpp != 8 && bpp != 24 && bpp != 32) throw FormatError("bmp: unsupported bit depth " + std::to_string(bpp));
  GrayImage img;
  img.width = static_cast<std::size_t>(w);
  img.height = static_cast<std::size_t>(std::abs(h));
  const bool bottom_up = h > 0;
  std::vector<std::uint8_t> palette(256);
  if (bpp == 8) {
    std::uint32_t colors = detail::le32(b, 46);
    if (colors == 0) colors = 256;
    const std::size_t pal_off = 14 + dib;
    if (colors > 256 || pal_off + 4 * colors > b.size()) throw FormatError("bmp: bad palette");
    for (std::uint32_t i = 0; i < colors; ++i)
      palette[i] = detail::luma(b[pal_off + 4 * i + 2], b[pal_off + 4 * i + 1], b[pal_off + 4 * i]);
  }
  const std::size_t stride = ((img.width * bpp / 8) + 3) & ~std::size_t{3};
  if (data_off + stride * img.height > b.size()) throw FormatError("bmp: truncated pixel data");
  img.pixels.resize(img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    const std::size_t src_row = bottom_up ? img.height - 1 - y : y;
    const std::uint8_t* row = b.data() + data_off + src_row * stride;
    for (std::size_t x = 0; x < img.width; ++x) {
      std::uint8_t v;
      if (bpp == 8) {
        v = palette[row[x]];
      } else {
        const std::uint8_t* px = row + x * (bpp / 8);
        v = detail::luma(px[2], px[1], px[0]);
      }
      img.pixels[y * img.width + x] = v;
    }
  }
  return img;
}

// 8-bit palettized, bottom-up, identity grayscale palette.
inline std::vector<std::uint8_t> encode_bmp(const GrayImage& img) {
  const std::size_t stride = (img.width + 3) & ~std::size_t{3};
  const std::uint32_t data_off = 14 + 40 + 1024;
  ByteWriter w;
  w.raw("BM");
  w.u32(static_cast<std::uint32_t>(data_off + stride * img.height));
  w.u32(0);
  w.u32(data_off);
  w.u32(40);
  w.u32(static_cast<std::uint32_t>(img.width));
  w.u32(static_cast<std::uint32_t>(img.height));
  w.u8(1);
  w.u8(0);
  w.u8(8);
  w.u8(0);
  w.u32(0);
  w.u32(static_cast<std::uint32_t>(stride * img.height));
  w.u32(2835);
  w.u32(2835);
  w.u32(256);
  w.u32(0);
  for (std::uint32_t i = 0; i < 256; ++i) w.u32(i | (i << 8) | (i << 16));
  std::vector<std::uint8_t> row(stride, 0);
  for (std::size_t y = img.height; y-- > 0;) {
    std::copy_n(img.pixels.data() + y * img.width, img.width, row.begin());
    w.bytes(row);
  }
  return w.take();
}

inline GrayImage decode_pgm(const std::vector<std::uint8_t>& b) {
  std::size_t pos = 0;
  auto token = [&]() {
    std::string t;
    while (pos < b.size()) {
      const char c = static_cast<char>(b[pos]);
      if (c == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        ++pos;
      } else {
        t.push_back(c);
        ++pos;
      }
    }
    return t;
  };
  if (token() != "P5") throw FormatError("pgm: only binary P5 images are supported");
  GrayImage img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw FormatError("pgm: only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw FormatError("pgm: malformed header");
  }
  ++pos;  // single whitespace after maxval
  if (pos + img.width * img.height > b.size()) throw FormatError("pgm: truncated pixel data");
  img.pixels.assign(b.begin() + static_cast<std::ptrdiff_t>(pos),
                    b.begin() + static_cast<std::ptrdiff_t>(pos + img.width * img.height));
  return img;
}

inline std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  std::ostringstream hdr;
  hdr << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  ByteWriter w;
  w.raw(hdr.str());
  w.bytes(img.pixels);
  return w.take();
}

inline GrayImage read_image(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  const auto ext = std::filesystem::path(path).extension().string();
  try {
    if (ext == ".bmp" || ext == ".BMP") return decode_bmp(bytes);
    if (ext == ".pgm" || ext == ".PGM") return decode_pgm(bytes);
  } catch (const FormatError& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
  throw FormatError("'" + path + "': unsupported image type (expected .bmp or .pgm)");
}

inline void write_image(const std::string& path, const GrayImage& img) {
  const auto ext = std::filesystem::path(path).extension().string();
  write_file_bytes(path, ext == ".pgm" ? encode_pgm(img) : encode_bmp(img));
}

}  // namespace patchdesc
