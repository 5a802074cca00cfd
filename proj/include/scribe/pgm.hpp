#pragma once

#include <fstream>
#include <string>

#include "scribe/tensor.hpp"

namespace scribe {

/// Binary PGM (P5), maxval 255. Tensor values in [0,1], ink = 1.
inline void write_pgm(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(2) != 1)
    throw ShapeError("write_pgm: expected {H,W,1} image, got " + shape_str(image.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  const Index H = image.dim(0), W = image.dim(1);
  out << "P5\n" << W << " " << H << "\n255\n";
  std::string buf(static_cast<size_t>(H * W), '\0');
  for (Index i = 0; i < H * W; ++i) {
    float v = image(i) * 255.0f + 0.5f;
    buf[static_cast<size_t>(i)] = static_cast<char>(static_cast<unsigned char>(
        v <= 0.0f ? 0 : (v >= 255.0f ? 255 : static_cast<int>(v))));
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("failed writing '" + path + "'");
}

inline Tensor<float> read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  auto next_token = [&]() -> std::string {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {  // comment to end of line
        while ((c = in.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    return tok;
  };
  if (next_token() != "P5") throw DataError("'" + path + "' is not a binary PGM (P5)");
  const long W = std::stol(next_token());
  const long H = std::stol(next_token());
  const long maxval = std::stol(next_token());
  if (W <= 0 || H <= 0 || maxval <= 0 || maxval > 255)
    throw DataError("'" + path + "' has unsupported PGM header");
  // header ends with exactly one whitespace byte, already consumed by the tokenizer
  std::string buf(static_cast<size_t>(W * H), '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(W * H))
    throw DataError("'" + path + "' is truncated");
  Tensor<float> img({H, W, 1});
  for (Index i = 0; i < H * W; ++i)
    img(i) = static_cast<float>(static_cast<unsigned char>(buf[static_cast<size_t>(i)])) /
             static_cast<float>(maxval);
  return img;
}

}  // namespace scribe
