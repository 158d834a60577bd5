// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#include "echosynth/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "echosynth/errors.hpp"
#include "echosynth/image_io.hpp"

namespace echosynth {

void render_line_plot(const std::vector<PlotSeries>& series,
                      const std::filesystem::path& out_pgm) {
    const int w = 480, h = 320, margin = 24;
    Eigen::MatrixXi canvas = Eigen::MatrixXi::Constant(h, w, 255);

    double lo = 1e300, hi = -1e300;
    std::size_t longest = 0;
    for (const auto& s : series) {
        longest = std::max(longest, s.values.size());
        for (double v : s.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (longest < 2) {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;

    // Axes.
    for (int x = margin; x < w - margin; ++x) canvas(h - margin, x) = 0;
    for (int y = margin; y < h - margin; ++y) canvas(y, margin) = 0;

    const int grays[] = {0, 70, 130, 180, 100, 40};
    std::ofstream legend(out_pgm.string() + ".legend.txt");
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const int gray = grays[si % 6];
        legend << gray << "\t" << s.label << "\n";
        if (s.values.size() < 2) continue;
        auto to_xy = [&](std::size_t i) {
            const double fx = static_cast<double>(i) / (longest - 1);
            const double fy = (s.values[i] - lo) / (hi - lo);
            const int x = margin + static_cast<int>(fx * (w - 2 * margin - 1));
            const int y = h - margin - 1 - static_cast<int>(fy * (h - 2 * margin - 1));
            return std::pair<int, int>(x, y);
        };
        for (std::size_t i = 1; i < s.values.size(); ++i) {
            auto [x0, y0] = to_xy(i - 1);
            auto [x1, y1] = to_xy(i);
            const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
            for (int t = 0; t <= steps; ++t) {
                const int x = x0 + (x1 - x0) * t / steps;
                const int y = y0 + (y1 - y0) * t / steps;
                if (y >= 0 && y < h && x >= 0 && x < w) canvas(y, x) = gray;
            }
        }
    }
    write_mask_pgm(out_pgm, canvas);
}

}  // namespace echosynth
