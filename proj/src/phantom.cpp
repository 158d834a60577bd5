// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#include "echosynth/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "echosynth/hashing.hpp"
#include "echosynth/image_io.hpp"
#include "echosynth/rng.hpp"

namespace echosynth {

namespace {

struct Ellipse {
    double cy, cx, ry, rx;

    bool contains(double y, double x) const {
        const double dy = (y - cy) / ry;
        const double dx = (x - cx) / rx;
        return dy * dy + dx * dx <= 1.0;
    }
};

}  // namespace

std::string phantom_patient_id(int index) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "patient%04d", index);
    return buf;
}

PhantomSample make_phantom(const std::string& patient_id, View view, Phase phase,
                           int resolution) {
    const int n = resolution;
    Rng rng(fnv1a64(patient_id + "|" + to_string(view) + "|" + to_string(phase)));

    // Per-patient anatomy jitter.
    const double jx = (rng.uniform() - 0.5) * 0.06 * n;
    const double jy = (rng.uniform() - 0.5) * 0.05 * n;
    const double scale = 0.9 + rng.uniform() * 0.2;
    const double gain = 0.85 + rng.uniform() * 0.3;
    const bool systole = phase == Phase::es;

    const double lv_shrink = systole ? 0.72 : 1.0;
    Ellipse endo{0.40 * n + jy, 0.50 * n + jx, 0.205 * n * scale * lv_shrink,
                 0.135 * n * scale * (systole ? 0.88 : 1.0)};
    Ellipse epi{endo.cy + 0.01 * n, endo.cx, endo.ry * 1.45 + 0.02 * n, endo.rx * 1.55 + 0.02 * n};
    Ellipse la{0.72 * n + jy * 0.5, 0.52 * n + jx, 0.105 * n * scale * (systole ? 1.15 : 1.0),
               0.115 * n * scale};
    // Right-side chambers only appear (in the image) for the 4CH view.
    Ellipse rv{0.42 * n + jy, 0.24 * n + jx * 0.5, 0.17 * n * scale * lv_shrink,
               0.10 * n * scale};
    Ellipse ra{0.70 * n + jy * 0.5, 0.26 * n + jx * 0.5, 0.095 * n * scale, 0.085 * n * scale};

    const double apex_y = 0.02 * n;
    const double apex_x = 0.5 * n;
    const double half_angle = 0.62;   // radians
    const double sector_radius = 0.93 * n;

    PhantomSample out;
    out.image = Tensor::spatial(1, n, n);
    out.label_map = Mask::Zero(n, n);

    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const double fy = y + 0.5, fx = x + 0.5;
            const double dy = fy - apex_y, dx = fx - apex_x;
            const double r = std::sqrt(dy * dy + dx * dx);
            const double ang = std::atan2(dx, dy);
            const bool in_sector = r < sector_radius && std::abs(ang) < half_angle && dy > 0;

            double v = 0.06;
            if (in_sector) {
                v = 0.38 * gain * (1.0 - 0.25 * r / sector_radius);
                if (epi.contains(fy, fx)) v = 0.58 * gain;
                if (endo.contains(fy, fx)) v = 0.14;
                if (la.contains(fy, fx)) v = 0.16;
                if (view == View::four_chamber) {
                    if (rv.contains(fy, fx)) v = 0.17;
                    if (ra.contains(fy, fx)) v = 0.18;
                }
            }
            // Multiplicative speckle, quantized to the 8-bit grid like
            // recorded data.
            v *= 0.75 + 0.5 * rng.uniform();
            v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
            out.image.at(0, y, x) = static_cast<float>(v);

            int cls = 0;
            if (endo.contains(fy, fx)) {
                cls = 1;
            } else if (epi.contains(fy, fx)) {
                cls = 2;
            } else if (la.contains(fy, fx)) {
                cls = 3;
            }
            out.label_map(y, x) = cls;
        }
    }
    return out;
}

void write_phantom_tree(const std::filesystem::path& root, int patient_count, int resolution) {
    std::filesystem::create_directories(root);
    for (int i = 1; i <= patient_count; ++i) {
        const auto pid = phantom_patient_id(i);
        const auto dir = root / pid;
        std::filesystem::create_directories(dir);
        for (const auto vp : all_view_phases()) {
            const auto sample = make_phantom(pid, vp.view, vp.phase, resolution);
            const auto stem = pid + "_" + to_string(vp.view) + "_" + to_string(vp.phase);
            write_pgm(dir / (stem + ".pgm"), sample.image, 8);
            write_mask_pgm(dir / (stem + "_gt.pgm"), sample.label_map);
        }
    }
}

}  // namespace echosynth
