#pragma once

#include <string>
#include <vector>

#include "m4/model.hpp"

namespace m4 {

enum class DatasetKind { Path3Alignment, Path2Lm, Path1Caption };

const char* dataset_kind_name(DatasetKind k);
DatasetKind dataset_kind_from_name(const std::string& s);

struct SyntheticSample {
    Payload payload;
    std::size_t label = 0;  // Path-3 class index
    std::string text;       // Path-2 sequence / Path-1 caption
};

// Deterministic toy data. Path-3 samples are class prototypes plus noise, so
// the alignment task is separable; Path-2 sequences follow a seeded key/value
// grammar; Path-1 pairs class payloads with short captions.
struct SyntheticDataset {
    DatasetKind kind = DatasetKind::Path3Alignment;
    std::uint64_t seed = 0;
    std::size_t size = 0;
    double zipf_exponent = 0.0;  // 0 = balanced classes; >0 skews the label prior
    Modality payload_modality = Modality::Imu;
    std::vector<std::string> labels;  // Path-3 / Path-1 class names
    std::vector<SyntheticSample> train;
    std::vector<SyntheticSample> eval;

    static SyntheticDataset generate(DatasetKind kind, std::uint64_t seed, std::size_t size,
                                     Modality payload_modality = Modality::Imu,
                                     double zipf_exponent = 0.0);

    std::string manifest_json() const;  // (kind, seed, size) manifest
    static SyntheticDataset from_manifest_json(const std::string& text);
};

}  // namespace m4
