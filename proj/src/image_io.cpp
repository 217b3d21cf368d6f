#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "difsel/error.hpp"
#include "difsel/image.hpp"

namespace difsel {

namespace {

struct Raw8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;
};

Raw8 read_png(const std::filesystem::path& path, bool force_gray) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + image.message);
  }
  const bool gray = force_gray || (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Raw8 raw{static_cast<int>(image.width), static_cast<int>(image.height), gray ? 1 : 3, {}};
  raw.bytes.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raw.bytes.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return raw;
}

void skip_pnm_space(std::istream& in) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

Raw8 read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw DataError(path.string() + ": only binary P5/P6 Netpbm is supported");
  Raw8 raw;
  int maxval = 0;
  skip_pnm_space(in);
  in >> raw.width;
  skip_pnm_space(in);
  in >> raw.height;
  skip_pnm_space(in);
  in >> maxval;
  in.get();
  if (!in || raw.width <= 0 || raw.height <= 0 || maxval != 255) throw DataError(path.string() + ": bad Netpbm header");
  raw.channels = magic == "P6" ? 3 : 1;
  raw.bytes.resize(static_cast<std::size_t>(raw.width) * raw.height * raw.channels);
  in.read(reinterpret_cast<char*>(raw.bytes.data()), static_cast<std::streamsize>(raw.bytes.size()));
  if (!in) throw DataError(path.string() + ": truncated pixel data");
  return raw;
}

Raw8 read_raw(const std::filesystem::path& path, bool gray) {
  if (!std::filesystem::exists(path)) throw NotFoundError("no such image: " + path.string());
  const auto ext = path.extension().string();
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return read_pnm(path);
  return read_png(path, gray);
}

void write_raw_png(const std::filesystem::path& path, int width, int height, int channels,
                   const std::vector<std::uint8_t>& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : (channels == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB);
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw Error("cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const auto raw = read_raw(path, false);
  Image img(raw.width, raw.height, raw.channels);
  std::transform(raw.bytes.begin(), raw.bytes.end(), img.pixels.begin(),
                 [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels < 1 || image.channels > 4 || image.channels == 2) throw ShapeError("PNG needs 1, 3 or 4 channels");
  std::vector<std::uint8_t> bytes(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), bytes.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  write_raw_png(path, image.width, image.height, image.channels, bytes);
}

LabelMap read_label_map(const std::filesystem::path& path) {
  const auto raw = read_raw(path, true);
  if (raw.channels != 1) throw DataError(path.string() + ": label maps must be single-channel");
  LabelMap labels(raw.width, raw.height);
  std::copy(raw.bytes.begin(), raw.bytes.end(), labels.labels.begin());
  return labels;
}

void write_label_png(const std::filesystem::path& path, const LabelMap& labels) {
  std::vector<std::uint8_t> bytes(labels.labels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const int v = labels.labels[i];
    if (v < 0 || v > 255) throw DataError("label value out of 8-bit range");
    bytes[i] = static_cast<std::uint8_t>(v);
  }
  write_raw_png(path, labels.width, labels.height, 1, bytes);
}

}  // namespace difsel
