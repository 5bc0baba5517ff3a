#include "invbench/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

namespace invbench {

Image::Image(int w, int h, Vector d) : width(w), height(h), data(std::move(d)) {
    require(w >= 0 && h >= 0, "Image: negative dimension");
    require(data.size() == Eigen::Index(w) * h, "Image: data length must equal width*height");
}

Sinogram::Sinogram(int angles, int detectors, Vector d)
    : n_angles(angles), n_detectors(detectors), data(std::move(d)) {
    require(data.size() == Eigen::Index(angles) * detectors,
            "Sinogram: data length must equal n_angles*n_detectors");
}

namespace io {

namespace {

std::vector<std::vector<double>> read_csv_numbers(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    for (const auto& r : rows)
        if (r.size() != rows.front().size()) throw std::runtime_error(path + ": ragged CSV grid");
    return rows;
}

std::string format_grid(const Vector& data, int rows, int cols) {
    std::string out;
    char buf[32];
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", data[Eigen::Index(r) * cols + c]);
            if (c) out += ',';
            out += buf;
        }
        out += '\n';
    }
    return out;
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << contents;
        out.flush();
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw std::runtime_error("cannot rename " + tmp + " -> " + path + ": " + ec.message());
    }
}

void write_pgm16(const Image& img, const std::string& path) {
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n65535\n";
    out.reserve(out.size() + 2 * std::size_t(img.size()));
    for (Eigen::Index i = 0; i < img.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 1.0);
        const auto q = static_cast<unsigned>(std::lround(v * 65535.0));
        out += static_cast<char>((q >> 8) & 0xff);
        out += static_cast<char>(q & 0xff);
    }
    write_file_atomic(path, out);
}

Image read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    auto next_token = [&in]() {
        std::string tok;
        char c;
        while (in.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!tok.empty()) break;
                continue;
            }
            tok += c;
        }
        return tok;
    };
    if (next_token() != "P5") throw std::runtime_error(path + ": not a binary PGM");
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw std::runtime_error(path + ": bad PGM header");
    Image img(w, h);
    const bool wide = maxval > 255;
    for (Eigen::Index i = 0; i < img.size(); ++i) {
        unsigned v = 0;
        if (wide) {
            unsigned char b[2];
            in.read(reinterpret_cast<char*>(b), 2);
            v = (unsigned(b[0]) << 8) | b[1];
        } else {
            unsigned char b;
            in.read(reinterpret_cast<char*>(&b), 1);
            v = b;
        }
        if (!in) throw std::runtime_error(path + ": truncated PGM");
        img.data[i] = double(v) / maxval;
    }
    return img;
}

void write_grid_csv(const Vector& data, int rows, int cols, const std::string& path) {
    write_file_atomic(path, format_grid(data, rows, cols));
}

void write_image_csv(const Image& img, const std::string& path) {
    write_grid_csv(img.data, img.height, img.width, path);
}

Image read_image_csv(const std::string& path) {
    const auto rows = read_csv_numbers(path);
    if (rows.empty()) throw std::runtime_error(path + ": empty grid");
    Image img(int(rows.front().size()), int(rows.size()));
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) img(r, c) = rows[r][c];
    return img;
}

void write_sinogram_csv(const Sinogram& s, const std::string& path) {
    write_grid_csv(s.data, s.n_angles, s.n_detectors, path);
}

Sinogram read_sinogram_csv(const std::string& path) {
    const auto rows = read_csv_numbers(path);
    if (rows.empty()) throw std::runtime_error(path + ": empty grid");
    Sinogram s(int(rows.size()), int(rows.front().size()));
    for (int a = 0; a < s.n_angles; ++a)
        for (int d = 0; d < s.n_detectors; ++d) s.data[Eigen::Index(a) * s.n_detectors + d] = rows[a][d];
    return s;
}

}  // namespace io
}  // namespace invbench
