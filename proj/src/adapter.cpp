#include "m4/adapter.hpp"

#include <algorithm>
#include <cstring>

namespace m4 {

namespace {

constexpr char kMagic[4] = {'M', '4', 'A', 'D'};
constexpr std::uint16_t kVersion = 1;

const char* kComponentNames[] = {"IMG_enc", "TXT_enc", "AUD-B_enc", "AUD-I_enc", "IMU_enc",
                                 "Backbone", "TTS_dec", "IMG_dec",   "GEN_dec",  "Projection"};

}  // namespace

const char* technique_name(PeftTechnique t) {
    switch (t) {
        case PeftTechnique::LoRA: return "LoRA";
        case PeftTechnique::Prefix: return "Prefix";
        case PeftTechnique::Prompt: return "Prompt";
        case PeftTechnique::BitFit: return "BitFit";
    }
    return "?";
}

PeftTechnique technique_from_name(const std::string& s) {
    if (s == "LoRA") return PeftTechnique::LoRA;
    if (s == "Prefix") return PeftTechnique::Prefix;
    if (s == "Prompt") return PeftTechnique::Prompt;
    if (s == "BitFit") return PeftTechnique::BitFit;
    fail(errc::parse, "unknown PEFT technique: " + s);
}

const char* target_role_name(TargetRole r) { return r == TargetRole::Query ? "query" : "value"; }

std::uint8_t component_code(const std::string& name) {
    for (std::uint8_t i = 0; i < 10; ++i)
        if (name == kComponentNames[i]) return i;
    fail(errc::not_found, "unknown component: " + name);
}

const char* component_from_code(std::uint8_t code) {
    if (code >= 10) fail(errc::parse, "component code out of range");
    return kComponentNames[code];
}

Matrix AdapterTarget::a_matrix(std::size_t rank) const {
    if (a.size() != rank * d_in) fail(errc::dimension_mismatch, "adapter A payload size mismatch");
    Matrix m(rank, d_in);
    for (std::size_t i = 0; i < a.size(); ++i) m.data[i] = a[i];
    return m;
}

Matrix AdapterTarget::b_matrix(std::size_t rank) const {
    if (b.size() != d_out * rank) fail(errc::dimension_mismatch, "adapter B payload size mismatch");
    Matrix m(d_out, rank);
    for (std::size_t i = 0; i < b.size(); ++i) m.data[i] = b[i];
    return m;
}

std::uint64_t AdapterPack::trainable_params() const {
    std::uint64_t count = 0;
    for (const auto& t : targets) count += std::uint64_t(config.rank) * (t.d_in + t.d_out);
    return count + projection_delta.size();
}

std::uint64_t AdapterPack::payload_bytes() const { return serialize().size(); }

std::vector<std::uint8_t> AdapterPack::serialize() const {
    byte_writer w;
    w.bytes(kMagic, 4);
    w.u16(kVersion);
    if (task_id.size() > 0xffff) fail(errc::invalid_argument, "task id too long");
    w.u16(static_cast<std::uint16_t>(task_id.size()));
    w.bytes(task_id.data(), task_id.size());
    w.u8(static_cast<std::uint8_t>(config.technique));
    w.u16(static_cast<std::uint16_t>(config.rank));
    w.f32(static_cast<float>(config.alpha));
    if (targets.size() > 0xffff) fail(errc::invalid_argument, "too many adapter targets");
    w.u16(static_cast<std::uint16_t>(targets.size()));
    for (const auto& t : targets) {
        w.u8(t.component_code);
        w.u8(static_cast<std::uint8_t>(t.role));
        w.u32(t.d_in);
        w.u32(t.d_out);
        if (t.a.size() != config.rank * t.d_in || t.b.size() != std::size_t(t.d_out) * config.rank)
            fail(errc::dimension_mismatch, "adapter target payload does not match rank/dims");
        w.bytes(t.a.data(), t.a.size() * sizeof(float));
        w.bytes(t.b.data(), t.b.size() * sizeof(float));
    }
    w.bytes(projection_delta.data(), projection_delta.size() * sizeof(float));
    const std::uint32_t crc = crc32(w.data().data(), w.data().size());
    byte_writer out;
    out.bytes(w.data().data(), w.data().size());
    out.u32(crc);
    return out.data();
}

AdapterPack AdapterPack::deserialize(const std::uint8_t* data, std::size_t len) {
    if (len < 4 + 2 + 2 + 1 + 2 + 4 + 2 + 4) fail(errc::parse, "adapter pack: truncated");
    if (std::memcmp(data, kMagic, 4) != 0) fail(errc::parse, "adapter pack: bad magic");
    const std::size_t body_len = len - 4;
    std::uint32_t stored_crc = 0;
    std::memcpy(&stored_crc, data + body_len, 4);
    if (crc32(data, body_len) != stored_crc) fail(errc::parse, "adapter pack: checksum failure");

    byte_reader r(data, body_len);
    char magic[4];
    r.bytes(magic, 4);
    const std::uint16_t version = r.u16();
    if (version != kVersion) fail(errc::parse, "adapter pack: unsupported version");
    AdapterPack p;
    const std::uint16_t id_len = r.u16();
    p.task_id.resize(id_len);
    r.bytes(p.task_id.data(), id_len);
    const std::uint8_t tech = r.u8();
    if (tech > 3) fail(errc::parse, "adapter pack: unknown technique code");
    p.config.technique = static_cast<PeftTechnique>(tech);
    p.config.rank = r.u16();
    if (p.config.rank == 0) fail(errc::parse, "adapter pack: zero rank");
    p.config.alpha = r.f32();
    const std::uint16_t n_targets = r.u16();
    for (std::uint16_t i = 0; i < n_targets; ++i) {
        AdapterTarget t;
        t.component_code = r.u8();
        component_from_code(t.component_code);  // validates
        const std::uint8_t role = r.u8();
        if (role > 1) fail(errc::parse, "adapter pack: unknown target role");
        t.role = static_cast<TargetRole>(role);
        t.d_in = r.u32();
        t.d_out = r.u32();
        if (t.d_in > (1u << 22) || t.d_out > (1u << 22) || p.config.rank > 4096)
            fail(errc::parse, "adapter pack: implausible target dimensions");
        t.a.resize(std::size_t(p.config.rank) * t.d_in);
        t.b.resize(std::size_t(t.d_out) * p.config.rank);
        r.bytes(t.a.data(), t.a.size() * sizeof(float));
        r.bytes(t.b.data(), t.b.size() * sizeof(float));
        if (std::find_if(p.config.targets.begin(), p.config.targets.end(), [&](const TargetRef& ref) {
                return ref.component == component_from_code(t.component_code) && ref.role == t.role;
            }) == p.config.targets.end()) {
            p.config.targets.push_back(TargetRef{component_from_code(t.component_code), t.role});
        }
        p.targets.push_back(std::move(t));
    }
    // everything up to the checksum is the projection head block
    if (r.remaining() % sizeof(float) != 0) fail(errc::parse, "adapter pack: odd projection block length");
    p.projection_delta.resize(r.remaining() / sizeof(float));
    r.bytes(p.projection_delta.data(), r.remaining());
    return p;
}

void AdapterPack::save(const std::string& path) const {
    const auto bytes = serialize();
    write_file_atomic(path, std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

AdapterPack AdapterPack::load(const std::string& path) {
    const std::string blob = read_file(path);
    return deserialize(reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size());
}

bool AdapterPack::equals(const AdapterPack& o) const {
    if (task_id != o.task_id || config.technique != o.config.technique || config.rank != o.config.rank ||
        static_cast<float>(config.alpha) != static_cast<float>(o.config.alpha) ||
        targets.size() != o.targets.size() || projection_delta != o.projection_delta)
        return false;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto& x = targets[i];
        const auto& y = o.targets[i];
        if (x.component_code != y.component_code || x.role != y.role || x.d_in != y.d_in ||
            x.d_out != y.d_out || x.a != y.a || x.b != y.b)
            return false;
    }
    return true;
}

ModelDims ModelDims::desk() {
    ModelDims d;
    d.components = {
        {"IMG_enc", {2, 64}},  {"TXT_enc", {2, 64}},  {"AUD-B_enc", {2, 64}}, {"AUD-I_enc", {2, 64}},
        {"IMU_enc", {2, 64}},  {"Backbone", {4, 64}},
    };
    d.projection_delta_floats = 64 * 64 + 64;
    return d;
}

ModelDims ModelDims::paper() {
    ModelDims d;
    d.components = {
        {"IMG_enc", {32, 1280}}, {"TXT_enc", {12, 1024}}, {"AUD-B_enc", {12, 768}},
        {"AUD-I_enc", {4, 384}}, {"IMU_enc", {6, 512}},   {"Backbone", {32, 4096}},
    };
    d.projection_delta_floats = 0;
    return d;
}

AdapterPack create_adapter(const std::string& task_id, const PeftConfig& config, const ModelDims& dims,
                           std::uint64_t seed) {
    if (config.targets.empty()) fail(errc::invalid_argument, "create_adapter: no target modules");
    if (config.technique != PeftTechnique::LoRA)
        fail(errc::unsupported, "create_adapter: only LoRA adapters are instantiated; use peft_param_count "
                                "for other techniques");
    if (config.rank < 1) fail(errc::invalid_argument, "create_adapter: rank must be >= 1");

    AdapterPack p;
    p.task_id = task_id;
    p.config = config;
    std::sort(p.config.targets.begin(), p.config.targets.end());
    p.config.targets.erase(std::unique(p.config.targets.begin(), p.config.targets.end(),
                                       [](const TargetRef& a, const TargetRef& b) {
                                           return a.component == b.component && a.role == b.role;
                                       }),
                           p.config.targets.end());

    rng gen = rng(seed).fork("adapter:" + task_id);
    for (const auto& ref : p.config.targets) {
        auto it = dims.components.find(ref.component);
        if (it == dims.components.end()) fail(errc::not_found, "create_adapter: unknown target " + ref.component);
        const auto& cd = it->second;
        if (config.rank >= cd.d_model)
            fail(errc::invalid_argument, "create_adapter: rank must be < min(d_in, d_out)");
        for (std::size_t layer = 0; layer < cd.layers; ++layer) {
            AdapterTarget t;
            t.component_code = component_code(ref.component);
            t.role = ref.role;
            t.d_in = static_cast<std::uint32_t>(cd.d_model);
            t.d_out = static_cast<std::uint32_t>(cd.d_model);
            t.a.resize(config.rank * cd.d_model);
            for (auto& v : t.a) v = static_cast<float>(gen.uniform(-0.01, 0.01));
            t.b.assign(std::size_t(cd.d_model) * config.rank, 0.0f);  // zero init: fresh pack is a no-op
            p.targets.push_back(std::move(t));
        }
    }
    p.projection_delta.assign(dims.projection_delta_floats, 0.0f);
    return p;
}

std::uint64_t peft_param_count(const PeftConfig& config, const ModelDims& dims) {
    std::uint64_t count = 0;
    std::vector<std::string> comps;
    for (const auto& ref : config.targets)
        if (std::find(comps.begin(), comps.end(), ref.component) == comps.end())
            comps.push_back(ref.component);
    switch (config.technique) {
        case PeftTechnique::LoRA: {
            for (const auto& ref : config.targets) {
                auto it = dims.components.find(ref.component);
                if (it == dims.components.end()) fail(errc::not_found, "unknown target " + ref.component);
                count += std::uint64_t(config.rank) * it->second.layers * (2 * it->second.d_model);
            }
            break;
        }
        case PeftTechnique::Prefix: {
            for (const auto& c : comps) {
                const auto& cd = dims.components.at(c);
                count += std::uint64_t(config.rank) * cd.layers * 2 * cd.d_model;  // per-layer k/v prefixes
            }
            break;
        }
        case PeftTechnique::Prompt: {
            const auto& cd = dims.components.at(comps.front());
            count = std::uint64_t(config.rank) * cd.d_model;  // soft prompt at the input only
            break;
        }
        case PeftTechnique::BitFit: {
            for (const auto& c : comps) {
                const auto& cd = dims.components.at(c);
                count += std::uint64_t(cd.layers) * 2 * cd.d_model;  // bias vectors, rank-free
            }
            break;
        }
    }
    return count + dims.projection_delta_floats;
}

TunableMask tunable_mask(int path) {
    TunableMask m;
    m.projection = true;
    switch (path) {
        case 1:
        case 2:
            m.backbone_peft = true;
            m.encoder_peft = false;
            break;
        case 3:
            m.backbone_peft = false;
            m.encoder_peft = true;
            break;
        case 4:
            m.backbone_peft = false;
            m.encoder_peft = false;
            break;
        default:
            fail(errc::invalid_argument, "tunable_mask: path out of range");
    }
    return m;
}

}  // namespace m4
