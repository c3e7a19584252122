// proxima is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include "proxima/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace proxima {

void write_pfm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "PF\n" << img.width << " " << img.height << "\n-1.0\n";
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x) {
      const Vec3& c = img.at(x, y);
      float rgb[3] = {static_cast<float>(c.x), static_cast<float>(c.y), static_cast<float>(c.z)};
      out.write(reinterpret_cast<const char*>(rgb), sizeof(rgb));
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Image read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  if (magic != "PF" || w <= 0 || h <= 0) throw std::runtime_error("not a color PFM: " + path);
  if (scale >= 0.0) throw std::runtime_error("big-endian PFM unsupported: " + path);
  in.get();  // single whitespace after the header
  Image img(w, h);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      float rgb[3];
      in.read(reinterpret_cast<char*>(rgb), sizeof(rgb));
      img.at(x, y) = Vec3(rgb[0], rgb[1], rgb[2]);
    }
  }
  if (!in) throw std::runtime_error("truncated PFM: " + path);
  return img;
}

namespace {

void put_u32(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>(v >> 24));
  s.push_back(static_cast<char>(v >> 16));
  s.push_back(static_cast<char>(v >> 8));
  s.push_back(static_cast<char>(v));
}

void put_chunk(std::string& s, const char* tag, const std::string& data) {
  put_u32(s, static_cast<uint32_t>(data.size()));
  std::string body = std::string(tag) + data;
  s += body;
  put_u32(s, static_cast<uint32_t>(
                 crc32(0, reinterpret_cast<const Bytef*>(body.data()), body.size())));
}

uint8_t to_srgb8(double v) {
  double g = std::pow(std::max(0.0, std::min(1.0, v)), 1.0 / 2.2);
  return static_cast<uint8_t>(std::lround(g * 255.0));
}

}  // namespace

void write_png(const Image& img, const std::string& path) {
  std::string raw;
  raw.reserve(static_cast<size_t>(img.height) * (1 + 3 * img.width));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back('\0');  // filter: none
    for (int x = 0; x < img.width; ++x) {
      const Vec3& c = img.at(x, y);
      raw.push_back(static_cast<char>(to_srgb8(c.x)));
      raw.push_back(static_cast<char>(to_srgb8(c.y)));
      raw.push_back(static_cast<char>(to_srgb8(c.z)));
    }
  }
  uLongf zlen = compressBound(raw.size());
  std::string z(zlen, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &zlen,
                reinterpret_cast<const Bytef*>(raw.data()), raw.size(), 6) != Z_OK)
    throw std::runtime_error("png deflate failed");
  z.resize(zlen);

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, static_cast<uint32_t>(img.width));
  put_u32(ihdr, static_cast<uint32_t>(img.height));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit RGB
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", z);
  put_chunk(png, "IEND", "");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(png.data(), static_cast<std::streamsize>(png.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace proxima
