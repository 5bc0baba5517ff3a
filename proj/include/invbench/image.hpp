#pragma once

#include <string>

#include "invbench/common.hpp"

namespace invbench {

// Row-major 2-D grid of reals. Nominal range [0,1] for images.
struct Image {
    int width = 0;
    int height = 0;
    Vector data;

    Image() = default;
    Image(int w, int h) : width(w), height(h), data(Vector::Zero(Eigen::Index(w) * h)) {}
    Image(int w, int h, Vector d);

    double& operator()(int row, int col) { return data[Eigen::Index(row) * width + col]; }
    double operator()(int row, int col) const { return data[Eigen::Index(row) * width + col]; }

    Eigen::Index size() const { return data.size(); }
};

// Angle-major measurement grid: row i holds the projection at angle i.
struct Sinogram {
    int n_angles = 0;
    int n_detectors = 0;
    Vector data;

    Sinogram() = default;
    Sinogram(int angles, int detectors)
        : n_angles(angles), n_detectors(detectors),
          data(Vector::Zero(Eigen::Index(angles) * detectors)) {}
    Sinogram(int angles, int detectors, Vector d);

    double operator()(int angle, int det) const { return data[Eigen::Index(angle) * n_detectors + det]; }
};

namespace io {

// 16-bit binary PGM (P5, maxval 65535). Values are clipped to [0,1] on write.
void write_pgm16(const Image& img, const std::string& path);
Image read_pgm(const std::string& path);

// One image row per CSV line.
void write_grid_csv(const Vector& data, int rows, int cols, const std::string& path);
void write_image_csv(const Image& img, const std::string& path);
Image read_image_csv(const std::string& path);

void write_sinogram_csv(const Sinogram& s, const std::string& path);
Sinogram read_sinogram_csv(const std::string& path);

// Write to `path + ".tmp"`, then rename over `path`.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace io
}  // namespace invbench
