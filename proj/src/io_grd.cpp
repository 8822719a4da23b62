#include "scbn/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace scbn {

namespace {

constexpr char kGrdMagic[12] = {'S', 'C', 'B', 'N', 'G', 'R', 'D', '\0', '\0', '\0', '\0', '\0'};
constexpr std::uint32_t kGrdVersion = 1;

template <class T>
void write_pod(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace

void save_grd(const RasterStack& stack, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(bool(f), "cannot open raster for writing: " + path);
    f.write(kGrdMagic, 12);
    write_pod(f, kGrdVersion);
    write_pod(f, std::uint32_t(stack.width));
    write_pod(f, std::uint32_t(stack.height));
    write_pod(f, std::uint32_t(stack.channels));
    write_pod(f, stack.nodata);
    write_pod(f, stack.pixel_size_m);
    for (int c = 0; c < stack.channels; ++c) {
        const std::string& name = c < int(stack.names.size()) ? stack.names[c] : "";
        write_pod(f, std::uint32_t(name.size()));
        f.write(name.data(), std::streamsize(name.size()));
    }
    f.write(reinterpret_cast<const char*>(stack.data.data.data()),
            std::streamsize(stack.data.size() * sizeof(float)));
    require(bool(f), "raster write failed: " + path);
}

RasterStack load_grd(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(bool(f), "cannot open raster: " + path);
    char magic[12];
    f.read(magic, 12);
    require(f && std::memcmp(magic, kGrdMagic, 12) == 0, "bad raster magic in " + path);
    const auto version = read_pod<std::uint32_t>(f);
    require(version == kGrdVersion, "unsupported raster version in " + path);
    RasterStack s;
    s.width = int(read_pod<std::uint32_t>(f));
    s.height = int(read_pod<std::uint32_t>(f));
    s.channels = int(read_pod<std::uint32_t>(f));
    s.nodata = read_pod<float>(f);
    s.pixel_size_m = read_pod<float>(f);
    for (int c = 0; c < s.channels; ++c) {
        const auto len = read_pod<std::uint32_t>(f);
        std::string name(len, '\0');
        f.read(name.data(), std::streamsize(len));
        s.names.push_back(name);
    }
    s.data = Tensor<float>(Shape{1, s.channels, s.height, s.width});
    f.read(reinterpret_cast<char*>(s.data.data.data()),
           std::streamsize(s.data.size() * sizeof(float)));
    require(bool(f), "truncated raster: " + path);
    return s;
}

RasterStack load_csv_grid(const std::string& path, const std::string& name, float nodata) {
    std::ifstream f(path);
    require(bool(f), "cannot open CSV grid: " + path);
    std::vector<std::vector<float>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<float> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stof(cell));
        if (!rows.empty())
            require(row.size() == rows.front().size(), "ragged CSV grid: " + path);
        rows.push_back(std::move(row));
    }
    require(!rows.empty(), "empty CSV grid: " + path);
    RasterStack s;
    s.height = int(rows.size());
    s.width = int(rows.front().size());
    s.channels = 1;
    s.names = {name};
    s.nodata = nodata;
    s.data = Tensor<float>(Shape{1, 1, s.height, s.width});
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) s.at(0, y, x) = rows[y][x];
    return s;
}

SampleTable load_samples_csv(const std::string& path) {
    std::ifstream f(path);
    require(bool(f), "cannot open samples CSV: " + path);
    std::string line;
    require(bool(std::getline(f, line)), "empty samples CSV: " + path);
    require(line == "x,y,code" || line == "x,y,code\r",
            "samples CSV must start with header x,y,code");
    SampleTable t;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::stringstream ss(line);
        std::string xs, ys, code;
        require(bool(std::getline(ss, xs, ',')) && bool(std::getline(ss, ys, ',')) &&
                    bool(std::getline(ss, code)),
                "malformed samples CSV row: " + line);
        t.rows.push_back({std::stoi(xs), std::stoi(ys), code});
    }
    return t;
}

void save_samples_csv(const SampleTable& samples, const std::string& path) {
    std::ofstream f(path);
    require(bool(f), "cannot open samples CSV for writing: " + path);
    f << "x,y,code\n";
    for (const auto& r : samples.rows) f << r.x << "," << r.y << "," << r.code << "\n";
}

}  // namespace scbn
