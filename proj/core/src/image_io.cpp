#include "ponp/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <png.h>

#include "ponp/errors.hpp"

namespace ponp {

namespace {

unsigned char to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

void write_png(const std::string& path, int width, int height, int channels,
               std::span<const float> pixels) {
  if (static_cast<size_t>(width) * height * channels != pixels.size()) {
    throw ConfigError("write_png: pixel buffer size mismatch for " + path);
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;

  std::vector<unsigned char> buf(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) buf[i] = to_byte(pixels[i]);

  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw ConfigError("write_png: failed to write " + path + ": " +
                      image.message);
  }
}

}  // namespace

ImageData read_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw ConfigError("read_png: cannot open " + path + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    throw ConfigError("read_png: failed to read " + path + ": " + image.message);
  }
  ImageData out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.channels = 3;
  out.pixels.resize(buf.size());
  for (size_t i = 0; i < buf.size(); ++i) out.pixels[i] = buf[i] / 255.0f;
  return out;
}

void write_png_rgb(const std::string& path, int width, int height,
                   std::span<const float> rgb) {
  write_png(path, width, height, 3, rgb);
}

void write_png_gray(const std::string& path, int width, int height,
                    std::span<const float> gray) {
  write_png(path, width, height, 1, gray);
}

ImageData bilinear_resize(const ImageData& src, int out_width, int out_height) {
  ImageData out;
  out.width = out_width;
  out.height = out_height;
  out.channels = src.channels;
  out.pixels.resize(static_cast<size_t>(out_width) * out_height * src.channels);
  const float sx = static_cast<float>(src.width) / out_width;
  const float sy = static_cast<float>(src.height) / out_height;
  for (int r = 0; r < out_height; ++r) {
    const float fy = (r + 0.5f) * sy - 0.5f;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const float wy = std::clamp(fy - y0, 0.0f, 1.0f);
    for (int c = 0; c < out_width; ++c) {
      const float fx = (c + 0.5f) * sx - 0.5f;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const float wx = std::clamp(fx - x0, 0.0f, 1.0f);
      for (int ch = 0; ch < src.channels; ++ch) {
        auto at = [&](int y, int x) {
          return src.pixels[(static_cast<size_t>(y) * src.width + x) * src.channels + ch];
        };
        const float top = at(y0, x0) * (1.0f - wx) + at(y0, x1) * wx;
        const float bot = at(y1, x0) * (1.0f - wx) + at(y1, x1) * wx;
        out.pixels[(static_cast<size_t>(r) * out_width + c) * src.channels + ch] =
            top * (1.0f - wy) + bot * wy;
      }
    }
  }
  return out;
}

}  // namespace ponp
