#include "scbn/io.hpp"

#include <zlib.h>

#include <fstream>

namespace scbn {

namespace {

void be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

void png_chunk(std::ofstream& f, const char type[4], const std::vector<std::uint8_t>& data) {
    std::vector<std::uint8_t> buf;
    be32(buf, std::uint32_t(data.size()));
    buf.insert(buf.end(), type, type + 4);
    buf.insert(buf.end(), data.begin(), data.end());
    const std::uint32_t crc =
        std::uint32_t(crc32(0, buf.data() + 4, uInt(buf.size() - 4)));
    be32(buf, crc);
    f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

void write_png(const std::string& path, int width, int height, int channels,
               const std::uint8_t* pixels) {
    // filter byte 0 per scanline, then zlib deflate
    std::vector<std::uint8_t> raw;
    raw.reserve(std::size_t(height) * (std::size_t(width) * channels + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), pixels + std::size_t(y) * width * channels,
                   pixels + std::size_t(y + 1) * width * channels);
    }
    uLongf zlen = compressBound(uLong(raw.size()));
    std::vector<std::uint8_t> z(zlen);
    require(compress2(z.data(), &zlen, raw.data(), uLong(raw.size()), 6) == Z_OK,
            "png: deflate failed");
    z.resize(zlen);

    std::ofstream f(path, std::ios::binary);
    require(bool(f), "cannot open PNG for writing: " + path);
    const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    f.write(reinterpret_cast<const char*>(sig), 8);
    std::vector<std::uint8_t> ihdr;
    be32(ihdr, std::uint32_t(width));
    be32(ihdr, std::uint32_t(height));
    ihdr.push_back(8);                              // bit depth
    ihdr.push_back(channels == 3 ? 2 : 0);          // color type: RGB or gray
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    png_chunk(f, "IHDR", ihdr);
    png_chunk(f, "IDAT", z);
    png_chunk(f, "IEND", {});
    require(bool(f), "PNG write failed: " + path);
}

}  // namespace

void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<std::array<std::uint8_t, 3>>& pixels) {
    require(std::int64_t(pixels.size()) == std::int64_t(width) * height,
            "write_png_rgb: pixel count mismatch");
    write_png(path, width, height, 3, pixels.front().data());
}

void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& pixels) {
    require(std::int64_t(pixels.size()) == std::int64_t(width) * height,
            "write_png_gray: pixel count mismatch");
    write_png(path, width, height, 1, pixels.data());
}

std::array<std::uint8_t, 3> class_color(int cls) {
    static const std::array<std::uint8_t, 3> palette[] = {
        {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
        {245, 130, 48}, {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
        {210, 245, 60}, {250, 190, 212}, {0, 128, 128},  {220, 190, 255},
        {170, 110, 40}, {255, 250, 200}, {128, 0, 0},    {170, 255, 195},
        {128, 128, 0},  {255, 215, 180}, {0, 0, 128},    {128, 128, 128},
    };
    return palette[cls % 20];
}

}  // namespace scbn
