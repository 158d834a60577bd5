// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace echosynth {

struct PlotSeries {
    std::string label;
    std::vector<double> values;
};

// Renders polyline series into a grayscale PGM; series legend (label to gray
// level) goes to "<out>.legend.txt".
void render_line_plot(const std::vector<PlotSeries>& series,
                      const std::filesystem::path& out_pgm);

}  // namespace echosynth
