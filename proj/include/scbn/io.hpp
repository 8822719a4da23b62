#pragma once

#include "scbn/geodata.hpp"

#include <array>
#include <string>

namespace scbn {

// GRD raster container: 16-byte magic+version header, u32 width/height/
// channels, f32 nodata, length-prefixed UTF-8 channel names, then
// little-endian f32 planes.
void save_grd(const RasterStack& stack, const std::string& path);
RasterStack load_grd(const std::string& path);

// Plain CSV grid (rows of comma-separated floats) as a single-channel raster.
RasterStack load_csv_grid(const std::string& path, const std::string& name,
                          float nodata = -9999.f);

// Samples CSV with header x,y,code.
SampleTable load_samples_csv(const std::string& path);
void save_samples_csv(const SampleTable& samples, const std::string& path);

// 8-bit PNG writers (zlib-backed).
void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<std::array<std::uint8_t, 3>>& pixels);
void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& pixels);

// Fixed categorical palette used for argmax renderings.
std::array<std::uint8_t, 3> class_color(int cls);

}  // namespace scbn
