// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural echo-like phantom images with matching semantic masks, for
// fixtures and demos. Deterministic per (patient, view, phase).

#pragma once

#include <filesystem>
#include <string>

#include "echosynth/prompts.hpp"
#include "echosynth/tensor.hpp"

namespace echosynth {

struct PhantomSample {
    Tensor image;     // 1 channel, [0,1]
    Mask label_map;   // 0 background, 1 LV-endo, 2 LV-epi, 3 LA
};

PhantomSample make_phantom(const std::string& patient_id, View view, Phase phase, int resolution);

// Writes a CAMUS-style per-patient tree:
//   root/patient0001/patient0001_2CH_ED.pgm (+ _gt.pgm), 4 pairs per patient.
void write_phantom_tree(const std::filesystem::path& root, int patient_count, int resolution);

std::string phantom_patient_id(int index);

}  // namespace echosynth
