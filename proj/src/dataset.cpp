// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#include "echosynth/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "echosynth/errors.hpp"
#include "echosynth/hashing.hpp"
#include "echosynth/image_io.hpp"
#include "echosynth/rng.hpp"

namespace echosynth {

std::string to_string(Provenance p) { return p == Provenance::real ? "real" : "synthetic"; }

Provenance provenance_from_string(const std::string& s) {
    if (s == "real") return Provenance::real;
    if (s == "synthetic") return Provenance::synthetic;
    throw ConfigError("unknown provenance '" + s + "'");
}

namespace {

// Canonical ids: 0 background, 1 LV-endo, 2 LV-epi, 3 LA. Accepts the raw
// 0..3 encoding or the scaled 8-bit {0,85,170,255} one.
void remap_classes(Mask& mask, const std::string& where) {
    std::set<int> values;
    for (Eigen::Index y = 0; y < mask.rows(); ++y) {
        for (Eigen::Index x = 0; x < mask.cols(); ++x) {
            values.insert(mask(y, x));
        }
    }
    const std::set<int> canonical = {0, 1, 2, 3};
    bool all_canonical = true;
    bool all_scaled = true;
    for (int v : values) {
        if (!canonical.contains(v)) all_canonical = false;
        if (v != 0 && v != 85 && v != 170 && v != 255) all_scaled = false;
    }
    if (all_canonical) return;
    if (all_scaled) {
        for (Eigen::Index y = 0; y < mask.rows(); ++y) {
            for (Eigen::Index x = 0; x < mask.cols(); ++x) {
                mask(y, x) /= 85;
            }
        }
        return;
    }
    throw IntegrityError("label map " + where + " uses an unknown class encoding");
}

nlohmann::json prompt_json(const Prompt& p) {
    return {{"text", p.text},
            {"style", to_string(p.style)},
            {"view", to_string(p.view_phase.view)},
            {"phase", to_string(p.view_phase.phase)}};
}

Prompt prompt_from_json(const nlohmann::json& j) {
    Prompt p;
    p.text = j.at("text").get<std::string>();
    p.style = prompt_style_from_string(j.at("style").get<std::string>());
    p.view_phase.view = view_from_string(j.at("view").get<std::string>());
    p.view_phase.phase = phase_from_string(j.at("phase").get<std::string>());
    return p;
}

std::uint64_t descriptor_hash(const RecordDescriptor& d, std::uint64_t h) {
    std::ostringstream os;
    os << d.patient_id << "|" << to_string(d.view) << "|" << to_string(d.phase) << "|"
       << to_string(d.provenance) << "|" << d.image_path << "|" << hash_hex(d.image_hash) << "|"
       << d.label_path << "|" << hash_hex(d.label_hash) << "|" << d.bit_depth;
    if (d.prompt) os << "|" << d.prompt->text << "|" << to_string(d.prompt->style);
    return fnv1a64(os.str(), h);
}

}  // namespace

std::uint64_t DatasetManifest::content_hash() const {
    std::ostringstream os;
    os << header.dataset_name << "|" << header.resolution << "|" << header.seed;
    for (const auto& c : header.class_table) os << "|" << c;
    std::uint64_t h = fnv1a64(os.str());
    for (const auto& d : records) h = descriptor_hash(d, h);
    return h;
}

IngestResult ingest(const std::filesystem::path& root) {
    IngestResult out;
    out.root = root;
    if (!std::filesystem::exists(root)) {
        throw ConfigError("dataset root does not exist: " + root.string());
    }
    std::vector<std::string> patients;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        if (entry.is_directory()) patients.push_back(entry.path().filename().string());
    }
    std::sort(patients.begin(), patients.end());
    if (patients.empty()) {
        out.warnings.push_back("no patient directories under " + root.string());
        return out;
    }
    for (const auto& pid : patients) {
        for (const auto vp : all_view_phases()) {
            const auto stem = pid + "_" + to_string(vp.view) + "_" + to_string(vp.phase);
            const auto img_path = root / pid / (stem + ".pgm");
            const auto gt_path = root / pid / (stem + "_gt.pgm");
            if (!std::filesystem::exists(img_path)) {
                out.gaps.push_back({pid, to_string(vp.view), to_string(vp.phase),
                                    "missing image file"});
                continue;
            }
            if (!std::filesystem::exists(gt_path)) {
                out.gaps.push_back({pid, to_string(vp.view), to_string(vp.phase),
                                    "missing label file"});
                continue;
            }
            try {
                PatientRecord rec;
                rec.patient_id = pid;
                rec.view = vp.view;
                rec.phase = vp.phase;
                rec.provenance = Provenance::real;
                int depth = 8;
                rec.image = read_pgm(img_path, &depth);
                rec.label_map = read_mask_pgm(gt_path);
                remap_classes(rec.label_map, gt_path.string());
                if (rec.label_map.rows() != rec.image.height ||
                    rec.label_map.cols() != rec.image.width) {
                    throw ShapeError("mask shape differs from image shape");
                }
                rec.has_label = true;

                RecordDescriptor d;
                d.patient_id = pid;
                d.view = vp.view;
                d.phase = vp.phase;
                d.provenance = Provenance::real;
                d.image_path = pid + "/" + stem + ".pgm";
                d.label_path = pid + "/" + stem + "_gt.pgm";
                d.image_hash = file_hash(img_path);
                d.label_hash = file_hash(gt_path);
                d.bit_depth = depth;
                out.records.push_back(std::move(rec));
                out.descriptors.push_back(std::move(d));
            } catch (const std::exception& e) {
                out.gaps.push_back({pid, to_string(vp.view), to_string(vp.phase), e.what()});
            }
        }
    }
    return out;
}

DatasetManifest manifest_from_ingest(const IngestResult& in, ManifestHeader header) {
    DatasetManifest m;
    if (header.resolution == 0 && !in.records.empty()) {
        header.resolution = in.records.front().image.height;
    }
    m.header = std::move(header);
    m.records = in.descriptors;
    m.base_dir = in.root;
    return m;
}

std::pair<DatasetManifest, DatasetManifest> split_patients(const DatasetManifest& m,
                                                           const SplitSpec& spec) {
    std::set<std::string> ids;
    for (const auto& d : m.records) ids.insert(d.patient_id);
    if (static_cast<int>(ids.size()) < spec.validation_patient_count + 1) {
        throw SplitError("need more than " + std::to_string(spec.validation_patient_count) +
                         " patients, got " + std::to_string(ids.size()));
    }
    std::set<std::string> val_ids;
    int taken = 0;
    for (const auto& id : ids) {
        if (taken++ >= spec.validation_patient_count) break;
        val_ids.insert(id);
    }
    DatasetManifest train = m, val = m;
    train.records.clear();
    val.records.clear();
    train.header.dataset_name = m.header.dataset_name + "/train";
    val.header.dataset_name = m.header.dataset_name + "/validation";
    for (const auto& d : m.records) {
        (val_ids.contains(d.patient_id) ? val : train).records.push_back(d);
    }
    return {train, val};
}

DatasetManifest mix_real_synthetic(const DatasetManifest& real, const DatasetManifest& synth,
                                   int percent, std::uint64_t seed) {
    if (percent < 0) throw ParameterError("mix percent must be non-negative");
    const std::size_t want =
        static_cast<std::size_t>(percent) * real.records.size() / 100;
    if (want > synth.records.size()) {
        throw MixError("mix requires " + std::to_string(want) + " synthetic records, only " +
                       std::to_string(synth.records.size()) + " available");
    }
    DatasetManifest out = real;
    out.header.dataset_name = real.header.dataset_name + "+" + std::to_string(percent) + "%";
    out.header.seed = seed;
    if (want == 0) return out;
    if (!real.base_dir.empty() && !synth.base_dir.empty() && real.base_dir != synth.base_dir) {
        // Mixed manifests keep absolute paths so records stay resolvable.
        out.base_dir.clear();
        for (auto& d : out.records) {
            d.image_path = (real.base_dir / d.image_path).string();
            if (!d.label_path.empty()) d.label_path = (real.base_dir / d.label_path).string();
        }
    }
    std::vector<std::size_t> order(synth.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(
                                    static_cast<std::int64_t>(i)))]);
    }
    for (std::size_t i = 0; i < want; ++i) {
        RecordDescriptor d = synth.records[order[i]];
        if (out.base_dir.empty() && !synth.base_dir.empty()) {
            d.image_path = (synth.base_dir / d.image_path).string();
            if (!d.label_path.empty()) d.label_path = (synth.base_dir / d.label_path).string();
        }
        out.records.push_back(std::move(d));
    }
    return out;
}

DatasetManifest write_synthetic(const std::vector<PatientRecord>& records,
                                const std::filesystem::path& out_dir, ManifestHeader header) {
    std::filesystem::create_directories(out_dir);
    DatasetManifest m;
    if (header.resolution == 0 && !records.empty()) {
        header.resolution = records.front().image.height;
    }
    m.header = std::move(header);
    m.base_dir = out_dir;
    int idx = 0;
    for (const auto& rec : records) {
        const auto stem = rec.patient_id + "_" + to_string(rec.view) + "_" + to_string(rec.phase) +
                          "_" + std::to_string(idx++);
        RecordDescriptor d;
        d.patient_id = rec.patient_id;
        d.view = rec.view;
        d.phase = rec.phase;
        d.provenance = rec.provenance;
        d.bit_depth = 16;
        d.image_path = stem + ".pgm";
        write_pgm(out_dir / d.image_path, rec.image, 16);
        d.image_hash = file_hash(out_dir / d.image_path);
        if (rec.has_label) {
            d.label_path = stem + "_gt.pgm";
            write_mask_pgm(out_dir / d.label_path, rec.label_map);
            d.label_hash = file_hash(out_dir / d.label_path);
        }
        d.prompt = rec.source_prompt;
        m.records.push_back(std::move(d));
    }
    write_manifest(out_dir / "manifest.json", m);
    return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m_in) {
    // Record paths resolve against the manifest's own directory, so writing
    // elsewhere rewrites them relative to the destination.
    DatasetManifest m = m_in;
    const auto dest_dir = std::filesystem::absolute(path).parent_path();
    if (!m.base_dir.empty() && std::filesystem::absolute(m.base_dir) != dest_dir) {
        const auto src = std::filesystem::absolute(m.base_dir);
        for (auto& d : m.records) {
            const auto rewrite = [&](std::string& p) {
                if (p.empty() || std::filesystem::path(p).is_absolute()) return;
                p = std::filesystem::proximate(src / p, dest_dir).string();
            };
            rewrite(d.image_path);
            rewrite(d.label_path);
        }
    }
    nlohmann::json j;
    j["header"] = {{"dataset_name", m.header.dataset_name},
                   {"resolution", m.header.resolution},
                   {"class_table", m.header.class_table},
                   {"seed", m.header.seed}};
    j["records"] = nlohmann::json::array();
    for (const auto& d : m.records) {
        nlohmann::json r = {{"patient_id", d.patient_id},
                            {"view", to_string(d.view)},
                            {"phase", to_string(d.phase)},
                            {"provenance", to_string(d.provenance)},
                            {"image", d.image_path},
                            {"image_hash", hash_hex(d.image_hash)},
                            {"bit_depth", d.bit_depth}};
        if (!d.label_path.empty()) {
            r["label"] = d.label_path;
            r["label_hash"] = hash_hex(d.label_hash);
        }
        if (d.prompt) r["prompt"] = prompt_json(*d.prompt);
        j["records"].push_back(std::move(r));
    }
    j["content_hash"] = hash_hex(m.content_hash());
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest " + path.string());
    out << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& path, bool verify) {
    std::ifstream in(path);
    if (!in) throw IntegrityError("cannot read manifest " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, true, true);
    DatasetManifest m;
    m.base_dir = path.parent_path();
    m.header.dataset_name = j.at("header").at("dataset_name").get<std::string>();
    m.header.resolution = j.at("header").at("resolution").get<int>();
    m.header.class_table = j.at("header").at("class_table").get<std::vector<std::string>>();
    m.header.seed = j.at("header").at("seed").get<std::uint64_t>();
    for (const auto& r : j.at("records")) {
        RecordDescriptor d;
        d.patient_id = r.at("patient_id").get<std::string>();
        d.view = view_from_string(r.at("view").get<std::string>());
        d.phase = phase_from_string(r.at("phase").get<std::string>());
        d.provenance = provenance_from_string(r.at("provenance").get<std::string>());
        d.image_path = r.at("image").get<std::string>();
        d.image_hash = hash_from_hex(r.at("image_hash").get<std::string>());
        d.bit_depth = r.at("bit_depth").get<int>();
        if (r.contains("label")) {
            d.label_path = r.at("label").get<std::string>();
            d.label_hash = hash_from_hex(r.at("label_hash").get<std::string>());
        }
        if (r.contains("prompt")) d.prompt = prompt_from_json(r.at("prompt"));
        m.records.push_back(std::move(d));
    }
    const auto recorded = j.at("content_hash").get<std::string>();
    if (recorded != hash_hex(m.content_hash())) {
        throw IntegrityError("manifest content hash mismatch in " + path.string());
    }
    if (verify) {
        for (const auto& d : m.records) {
            const auto img = m.base_dir / d.image_path;
            if (file_hash(img) != d.image_hash) {
                throw IntegrityError("file content does not match manifest hash: " + img.string());
            }
            if (!d.label_path.empty()) {
                const auto lbl = m.base_dir / d.label_path;
                if (file_hash(lbl) != d.label_hash) {
                    throw IntegrityError("file content does not match manifest hash: " +
                                         lbl.string());
                }
            }
        }
    }
    return m;
}

PatientRecord load_record(const DatasetManifest& m, const RecordDescriptor& desc,
                          int target_resolution) {
    PatientRecord rec;
    rec.patient_id = desc.patient_id;
    rec.view = desc.view;
    rec.phase = desc.phase;
    rec.provenance = desc.provenance;
    rec.source_prompt = desc.prompt;
    const auto img_path = m.base_dir / desc.image_path;
    rec.image = read_pgm(img_path);
    if (!desc.label_path.empty()) {
        rec.label_map = read_mask_pgm(m.base_dir / desc.label_path);
        remap_classes(rec.label_map, (m.base_dir / desc.label_path).string());
        rec.has_label = true;
        if (rec.label_map.rows() != rec.image.height || rec.label_map.cols() != rec.image.width) {
            throw ShapeError("mask shape differs from image shape for " + desc.image_path);
        }
    }
    if (target_resolution > 0 && target_resolution != rec.image.height) {
        rec.image = resample_image(rec.image, target_resolution, target_resolution);
        if (rec.has_label) {
            rec.label_map = resample_mask(rec.label_map, target_resolution, target_resolution);
        }
    }
    return rec;
}

void validate_manifest_labels(const DatasetManifest& m) {
    for (const auto& d : m.records) {
        if (d.label_path.empty()) continue;
        const auto rec = load_record(m, d);
        if (rec.label_map.minCoeff() < 0 || rec.label_map.maxCoeff() > 3) {
            throw IntegrityError("label map out of range for " + d.image_path);
        }
        if (rec.label_map.rows() != rec.image.height || rec.label_map.cols() != rec.image.width) {
            throw ShapeError("mask/image shape mismatch for " + d.image_path);
        }
    }
}

}  // namespace echosynth
