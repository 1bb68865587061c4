#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gsde/error.hpp"
#include "gsde/tensor.hpp"

namespace gsde {

// 8-bit quantization of a [0, 1] value.
inline std::uint8_t quantize_unit(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Writes channel 0 of `img` (values in [0, 1]) as binary P5.
template <typename S>
void write_pgm(const std::string& path, const Tensor<S>& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write image '" + path + "'");
  os << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<std::uint8_t> bytes(img.plane());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize_unit(static_cast<double>(img[i]));
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os.flush()) throw IoError("failed writing image '" + path + "'");
}

// Reads an 8-bit P5 image into a 1-channel tensor with values in [0, 1].
inline Tensor<float> read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  auto token = [&]() {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  };
  if (token() != "P5") throw IoError("'" + path + "' is not a binary PGM (P5)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw IoError("'" + path + "' has a malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("'" + path + "': only 8-bit PGM images are supported");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw IoError("'" + path + "' is truncated");
  Tensor<float> img(1, h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

}  // namespace gsde
