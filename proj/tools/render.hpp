#pragma once

// Dependency-free artifact writers: SVG line charts and binary PPM images.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cdflow::cli {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct ChartOptions {
  std::string title;
  std::string x_label, y_label;
  bool log_x = false, log_y = false;
  int width = 720, height = 440;
};

// One <polyline> per series; axes, ticks and legend use other elements.
std::string line_chart_svg(const std::vector<Series>& series, const ChartOptions& options);

// Interleaved 8-bit RGB, row-major from the top-left pixel.
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(3 * w * h, 0) {}
  void set(std::size_t x, std::size_t y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  void set_gray(std::size_t x, std::size_t y, std::uint8_t v) { set(x, y, v, v, v); }
};

void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

}  // namespace cdflow::cli
