// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// CAMUS-style ingestion, the patient split, manifest serialization with
// content hashing, and real/synthetic training mixes.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "echosynth/prompts.hpp"
#include "echosynth/tensor.hpp"

namespace echosynth {

enum class Provenance { real, synthetic };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct PatientRecord {
    std::string patient_id;
    View view = View::two_chamber;
    Phase phase = Phase::ed;
    Tensor image;                       // grayscale, [0,1]
    Mask label_map;                     // classes 0..3; may be empty
    bool has_label = false;
    Provenance provenance = Provenance::real;
    std::optional<Prompt> source_prompt;
};

struct RecordDescriptor {
    std::string patient_id;
    View view = View::two_chamber;
    Phase phase = Phase::ed;
    Provenance provenance = Provenance::real;
    std::string image_path;             // relative to the manifest directory
    std::string label_path;             // empty when the record has no label
    std::uint64_t image_hash = 0;
    std::uint64_t label_hash = 0;
    int bit_depth = 8;
    std::optional<Prompt> prompt;

    bool operator==(const RecordDescriptor&) const = default;
};

struct ManifestHeader {
    std::string dataset_name = "dataset";
    int resolution = 0;                 // native resolution of the stored files
    std::vector<std::string> class_table = {"background", "lv-endo", "lv-epi", "la"};
    std::uint64_t seed = 0;

    bool operator==(const ManifestHeader&) const = default;
};

struct DatasetManifest {
    ManifestHeader header;
    std::vector<RecordDescriptor> records;
    std::filesystem::path base_dir;     // directory record paths resolve against

    // Combined hash over the header and every record (including the per-file
    // content hashes), independent of base_dir.
    std::uint64_t content_hash() const;

    bool operator==(const DatasetManifest& o) const {
        return header == o.header && records == o.records;
    }
};

struct SplitSpec {
    int validation_patient_count = 50;
};

struct IngestGap {
    std::string patient_id;
    std::string view;
    std::string phase;
    std::string reason;
};

struct IngestResult {
    std::vector<PatientRecord> records;
    std::vector<RecordDescriptor> descriptors;   // parallel to records
    std::vector<IngestGap> gaps;
    std::vector<std::string> warnings;
    std::filesystem::path root;
};

// Walks a per-patient tree (4 image/label pairs each); record-level problems
// become gaps, not errors. Images are normalized to [0,1] and label classes
// remapped to the canonical 0..3 scheme.
IngestResult ingest(const std::filesystem::path& root);

DatasetManifest manifest_from_ingest(const IngestResult& in, ManifestHeader header);

// First `validation_patient_count` patient ids in ascending order go to
// validation, the rest to train. Throws SplitError when there are not enough
// patients to form both sides.
std::pair<DatasetManifest, DatasetManifest> split_patients(const DatasetManifest& m,
                                                           const SplitSpec& spec);

// real + first floor(percent/100 * |real|) of a seeded shuffle of synth.
DatasetManifest mix_real_synthetic(const DatasetManifest& real, const DatasetManifest& synth,
                                   int percent, std::uint64_t seed);

// Writes images (+ labels + prompts) and a manifest.json into out_dir.
DatasetManifest write_synthetic(const std::vector<PatientRecord>& records,
                                const std::filesystem::path& out_dir,
                                ManifestHeader header = {});

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

// Reads and, when verify is set, re-hashes every referenced file.
DatasetManifest read_manifest(const std::filesystem::path& path, bool verify = true);

// Loads one record; target_resolution 0 keeps the native size.
PatientRecord load_record(const DatasetManifest& m, const RecordDescriptor& desc,
                          int target_resolution = 0);

// Asserts label integrity over the whole manifest: mask values in 0..3 and
// mask/image shapes agree.
void validate_manifest_labels(const DatasetManifest& m);

}  // namespace echosynth
