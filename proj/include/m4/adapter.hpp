#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "m4/matrix.hpp"

namespace m4 {

enum class PeftTechnique : std::uint8_t { LoRA = 0, Prefix = 1, Prompt = 2, BitFit = 3 };
enum class TargetRole : std::uint8_t { Query = 0, Value = 1 };

const char* technique_name(PeftTechnique t);
PeftTechnique technique_from_name(const std::string& s);
const char* target_role_name(TargetRole r);

struct TargetRef {
    std::string component;
    TargetRole role = TargetRole::Query;
    bool operator<(const TargetRef& o) const {
        return component != o.component ? component < o.component : role < o.role;
    }
};

struct PeftConfig {
    PeftTechnique technique = PeftTechnique::LoRA;
    std::size_t rank = 4;
    double alpha = 4.0;  // effective update is scaled by alpha/rank
    std::vector<TargetRef> targets;
};

// One low-rank pair per (component, role, layer). Entries for the same
// (component, role) are stored in layer order. Payloads are f32 so the
// on-disk format round-trips bit-exactly.
struct AdapterTarget {
    std::uint8_t component_code = 0;
    TargetRole role = TargetRole::Query;
    std::uint32_t d_in = 0;
    std::uint32_t d_out = 0;
    std::vector<float> a;  // rank x d_in, row-major
    std::vector<float> b;  // d_out x rank, row-major

    Matrix a_matrix(std::size_t rank) const;
    Matrix b_matrix(std::size_t rank) const;
};

std::uint8_t component_code(const std::string& name);
const char* component_from_code(std::uint8_t code);

struct AdapterPack {
    std::string task_id;
    PeftConfig config;
    std::vector<AdapterTarget> targets;
    std::vector<float> projection_delta;  // flat block: W (d*d) then bias (d); may be empty

    double scaling() const { return config.alpha / static_cast<double>(config.rank); }
    std::uint64_t trainable_params() const;  // closed form over targets + projection block
    std::uint64_t payload_bytes() const;     // serialized size

    std::vector<std::uint8_t> serialize() const;
    static AdapterPack deserialize(const std::uint8_t* data, std::size_t len);
    void save(const std::string& path) const;
    static AdapterPack load(const std::string& path);

    bool equals(const AdapterPack& o) const;
};

// Per-component transformer geometry used to size adapters.
struct ComponentDims {
    std::size_t layers = 0;
    std::size_t d_model = 0;
};

struct ModelDims {
    std::map<std::string, ComponentDims> components;
    std::size_t projection_delta_floats = 0;  // dim*dim + dim when a projection head is tunable

    static ModelDims desk();
    static ModelDims paper();  // Table-1-scale transformer geometry
};

// A ~ seeded uniform [-0.01, 0.01], B = 0, so a fresh adapter is an exact
// no-op at inference. LoRA only; other techniques are accounting-only.
AdapterPack create_adapter(const std::string& task_id, const PeftConfig& config, const ModelDims& dims,
                           std::uint64_t seed);

// Trainable parameter accounting for all four techniques.
std::uint64_t peft_param_count(const PeftConfig& config, const ModelDims& dims);

// Which parameter groups a path may train. The projection head is always
// trainable; paths 1 and 2 train backbone PEFT, path 3 trains encoder PEFT.
struct TunableMask {
    bool backbone_peft = false;
    bool encoder_peft = false;
    bool projection = true;
};

TunableMask tunable_mask(int path);

}  // namespace m4
