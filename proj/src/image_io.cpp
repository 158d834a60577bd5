// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#include "echosynth/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "echosynth/errors.hpp"

namespace echosynth {

namespace {

void write_p5(const std::filesystem::path& path, const Eigen::MatrixXi& values, int maxval) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write image " + path.string());
    out << "P5\n" << values.cols() << " " << values.rows() << "\n" << maxval << "\n";
    if (maxval < 256) {
        for (Eigen::Index y = 0; y < values.rows(); ++y) {
            for (Eigen::Index x = 0; x < values.cols(); ++x) {
                const unsigned char b = static_cast<unsigned char>(values(y, x));
                out.write(reinterpret_cast<const char*>(&b), 1);
            }
        }
    } else {
        for (Eigen::Index y = 0; y < values.rows(); ++y) {
            for (Eigen::Index x = 0; x < values.cols(); ++x) {
                const int v = values(y, x);
                const unsigned char hi = static_cast<unsigned char>(v >> 8);
                const unsigned char lo = static_cast<unsigned char>(v & 0xff);
                out.write(reinterpret_cast<const char*>(&hi), 1);
                out.write(reinterpret_cast<const char*>(&lo), 1);
            }
        }
    }
}

int next_header_int(std::istream& in, const std::filesystem::path& path) {
    // Skips whitespace and '#' comment lines.
    while (true) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v = 0;
    if (!(in >> v)) throw IntegrityError("malformed PGM header in " + path.string());
    return v;
}

Eigen::MatrixXi read_p5(const std::filesystem::path& path, int& maxval) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IntegrityError("cannot read image " + path.string());
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (magic[0] != 'P' || magic[1] != '5') {
        throw IntegrityError("not a binary PGM: " + path.string());
    }
    const int w = next_header_int(in, path);
    const int h = next_header_int(in, path);
    maxval = next_header_int(in, path);
    in.get();  // single whitespace after maxval
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
        throw IntegrityError("bad PGM dimensions in " + path.string());
    }
    Eigen::MatrixXi values(h, w);
    const int bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * bytes);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!in) throw IntegrityError("truncated PGM data in " + path.string());
        for (int x = 0; x < w; ++x) {
            values(y, x) = bytes == 1 ? row[static_cast<std::size_t>(x)]
                                      : (row[static_cast<std::size_t>(2 * x)] << 8) |
                                            row[static_cast<std::size_t>(2 * x + 1)];
        }
    }
    return values;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Tensor& image, int bit_depth) {
    if (image.channels() != 1) throw ShapeError("write_pgm expects a single-channel image");
    if (bit_depth != 8 && bit_depth != 16) throw ParameterError("bit_depth must be 8 or 16");
    const int maxval = bit_depth == 8 ? 255 : 65535;
    Eigen::MatrixXi values(image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const double v = std::clamp(static_cast<double>(image.at(0, y, x)), 0.0, 1.0);
            values(y, x) = static_cast<int>(std::lround(v * maxval));
        }
    }
    write_p5(path, values, maxval);
}

Tensor read_pgm(const std::filesystem::path& path, int* bit_depth) {
    int maxval = 0;
    const auto values = read_p5(path, maxval);
    if (bit_depth != nullptr) *bit_depth = maxval < 256 ? 8 : 16;
    Tensor img = Tensor::spatial(1, static_cast<int>(values.rows()),
                                 static_cast<int>(values.cols()));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            img.at(0, y, x) = static_cast<float>(values(y, x)) / static_cast<float>(maxval);
        }
    }
    return img;
}

void write_mask_pgm(const std::filesystem::path& path, const Mask& mask) {
    const int mx = mask.maxCoeff();
    write_p5(path, mask, std::max(mx, 3) < 256 ? 255 : 65535);
}

Mask read_mask_pgm(const std::filesystem::path& path) {
    int maxval = 0;
    return read_p5(path, maxval);
}

Tensor resample_image(const Tensor& image, int out_h, int out_w) {
    if (image.height == out_h && image.width == out_w) return image;
    Tensor out = Tensor::spatial(image.channels(), out_h, out_w);
    const double ry = static_cast<double>(image.height) / out_h;
    const double rx = static_cast<double>(image.width) / out_w;
    for (int c = 0; c < image.channels(); ++c) {
        for (int y = 0; y < out_h; ++y) {
            const double y0 = y * ry, y1 = (y + 1) * ry;
            for (int x = 0; x < out_w; ++x) {
                const double x0 = x * rx, x1 = (x + 1) * rx;
                double acc = 0.0, area = 0.0;
                for (int sy = static_cast<int>(y0); sy < static_cast<int>(std::ceil(y1)); ++sy) {
                    const double wy = std::min<double>(sy + 1, y1) - std::max<double>(sy, y0);
                    for (int sx = static_cast<int>(x0); sx < static_cast<int>(std::ceil(x1));
                         ++sx) {
                        const double wx = std::min<double>(sx + 1, x1) - std::max<double>(sx, x0);
                        acc += wy * wx * image.at(c, std::min(sy, image.height - 1),
                                                  std::min(sx, image.width - 1));
                        area += wy * wx;
                    }
                }
                out.at(c, y, x) = static_cast<float>(acc / area);
            }
        }
    }
    return out;
}

Mask resample_mask(const Mask& mask, int out_h, int out_w) {
    if (mask.rows() == out_h && mask.cols() == out_w) return mask;
    Mask out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min<int>(static_cast<int>(mask.rows()) - 1,
                                     static_cast<int>((y + 0.5) * mask.rows() / out_h));
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min<int>(static_cast<int>(mask.cols()) - 1,
                                         static_cast<int>((x + 0.5) * mask.cols() / out_w));
            out(y, x) = mask(sy, sx);
        }
    }
    return out;
}

}  // namespace echosynth
