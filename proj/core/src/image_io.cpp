// SPDX-License-Identifier: Apache-2.0
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include <png.h>

#include "pmae/error.hpp"
#include "pmae/imaging.hpp"

namespace pmae {
namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RawImage decode_png(const std::string& bytes, const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  RawImage out(image.width, image.height, color ? 3 : 1);
  png_color background{0, 0, 0};
  if (!png_image_finish_read(&image, &background, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return out;
}

class PnmParser {
 public:
  explicit PnmParser(const std::string& bytes) : s_(bytes) {}

  std::size_t number() {
    skip_space();
    if (pos_ >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_]))) throw IoError("malformed PNM header");
    std::size_t v = 0;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(s_[pos_++] - '0');
      if (v > (1u << 24)) throw IoError("PNM header value too large");
    }
    return v;
  }

  std::size_t data_start() {
    if (pos_ >= s_.size() || !std::isspace(static_cast<unsigned char>(s_[pos_]))) throw IoError("malformed PNM header");
    return pos_ + 1;
  }

 private:
  void skip_space() {
    while (pos_ < s_.size()) {
      if (s_[pos_] == '#') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& s_;
  std::size_t pos_ = 2;
};

RawImage decode_pnm(const std::string& bytes, const std::filesystem::path& path) {
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  PnmParser parser(bytes);
  const auto w = parser.number();
  const auto h = parser.number();
  const auto maxval = parser.number();
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw IoError("unsupported PNM header in " + path.string());
  const auto start = parser.data_start();
  RawImage out(w, h, channels);
  if (bytes.size() < start + out.pixels.size()) throw IoError("truncated PNM " + path.string());
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const auto v = static_cast<unsigned char>(bytes[start + i]);
    out.pixels[i] = maxval == 255 ? v : static_cast<std::uint8_t>((v * 255u + maxval / 2) / maxval);
  }
  return out;
}

}  // namespace

RawImage read_image(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0) {
    return decode_png(bytes, path);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) return decode_pnm(bytes, path);
  throw IoError("unsupported image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const RawImage& img) {
  img.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

void write_pnm(const std::filesystem::path& path, const RawImage& img) {
  img.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

}  // namespace pmae
