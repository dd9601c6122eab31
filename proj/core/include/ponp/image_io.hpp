#pragma once

#include <span>
#include <string>
#include <vector>

namespace ponp {

/// Row-major interleaved pixels in [0,1].
struct ImageData {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> pixels;
};

ImageData read_png(const std::string& path);
void write_png_rgb(const std::string& path, int width, int height,
                   std::span<const float> rgb);
void write_png_gray(const std::string& path, int width, int height,
                    std::span<const float> gray);

ImageData bilinear_resize(const ImageData& src, int out_width, int out_height);

}  // namespace ponp
