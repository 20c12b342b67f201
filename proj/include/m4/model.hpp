#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "m4/adapter.hpp"
#include "m4/blocks.hpp"
#include "m4/quant.hpp"
#include "m4/registry.hpp"
#include "m4/trace.hpp"

namespace m4 {

// One sub-model of the N-1-M stack. Paper-profile entries carry the
// published parameter/GFLOPs table; desk entries carry the executable
// toy geometry's real counts.
struct ComponentSpec {
    std::string name;
    std::string role;  // embedding | backbone | generator | projection
    std::string architecture;
    double params = 0.0;
    NumericFormat format = NumericFormat::FP32;
    double gflops = 0.0;
};

// The published sub-model table plus the always-present projection layer.
std::vector<ComponentSpec> paper_component_table();
std::vector<ComponentSpec> load_component_table(const std::string& json_path);

enum class Profile { Desk, Paper };

// Desk geometry: small enough that a forward pass is instant and tests are
// seconds-scale, wide enough to exercise every path.
struct DeskConfig {
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t ffn = 256;
    std::size_t encoder_layers = 2;
    std::size_t backbone_layers = 4;
    std::size_t vocab = 260;  // 256 bytes + PAD/BOS/EOS/SEP
    std::size_t max_seq = 128;
    std::size_t image_side = 16;  // 3x16x16 payload, 4x4 patches -> 16 tokens of 48
    std::size_t patch = 4;
    std::size_t audio_frame = 16;
    std::size_t imu_channels = 6;
};

constexpr std::uint32_t kPad = 256, kBos = 257, kEos = 258, kSep = 259;

struct EncoderWeights {
    TransformerBlockSpec spec;
    Matrix input_proj;   // feature_dim x dim (empty for text)
    Matrix token_table;  // vocab x dim (text only)
    Matrix positional;   // max_seq x dim
    std::vector<BlockWeights> blocks;
};

struct BackboneWeights {
    TransformerBlockSpec spec;
    Matrix token_table;
    Matrix positional;
    std::vector<BlockWeights> blocks;
    std::vector<double> final_gain, final_bias;
};

struct ProjectionWeights {
    Matrix w;  // dim x dim
    std::vector<double> bias;
};

struct GeneratorWeights {
    Matrix gen_head;          // dim x vocab (GEN_dec)
    Matrix img_head;          // dim x 768 (IMG_dec)
    Matrix img_input;         // 48 x dim (IMG_dec direct image input, Path-4)
};

struct Payload {
    Modality modality = Modality::Text;
    std::string text;   // text payloads
    Matrix values;      // image: 16x48 patches; audio: 1xN; imu: Tx6
};

Payload text_payload(const std::string& text);
Payload image_payload(const std::vector<double>& chw);  // 3*16*16 values in [0,1]
Payload audio_payload(const std::vector<double>& samples, bool intent);
Payload imu_payload(const Matrix& window);  // T x 6

struct TaskOutput {
    OutputKind kind = OutputKind::Text;
    std::string text;                      // generated text or chosen label
    std::size_t label_index = SIZE_MAX;    // Path-3 classification result
    std::vector<double> scores;            // Path-3 per-label cosine similarity
    std::vector<double> waveform;          // TTS output
    std::vector<double> image;             // 3*16*16 generated image
};

struct ExecOptions {
    std::vector<std::string> labels;            // Path-3 candidates
    std::map<std::string, std::string> slots;   // prompt slot values
    std::size_t max_tokens = 16;
};

struct ActivationCost {
    double params = 0.0;
    double gflops = 0.0;
};

class FoundationModel {
public:
    static FoundationModel build(Profile profile, std::uint64_t seed);

    Profile profile() const { return profile_; }
    std::uint64_t seed() const { return seed_; }
    const DeskConfig& desk_config() const { return cfg_; }
    const std::vector<ComponentSpec>& specs() const { return specs_; }
    const ComponentSpec& spec(const std::string& name) const;
    double total_params() const;

    // ---- adapters ------------------------------------------------------
    void attach(const AdapterPack& pack);        // errc::duplicate / dimension_mismatch
    void detach(const std::string& task_id);     // errc::not_found
    bool has_adapter(const std::string& task_id) const;
    const AdapterPack& adapter(const std::string& task_id) const;
    std::vector<std::string> attached_tasks() const;

    // ---- execution (desk profile only) ----------------------------------
    // Embeds one payload and maps it through the shared projection layer.
    Matrix encode(const Payload& payload, const std::string& task_id, OpTrace* trace) const;
    TaskOutput execute(const TaskSpec& task, const std::vector<Payload>& inputs, const ExecOptions& opts,
                       OpTrace* trace) const;

    // ---- accounting ------------------------------------------------------
    ActivationCost activation_cost(const RoutePlan& plan) const;  // paper profile sums
    std::string weight_hash() const;          // SHA-256 over all base weights
    std::uint64_t desk_weight_bytes() const;

    // Round-trips a component's weight matrices through a storage format.
    void quantize_component(const std::string& name, NumericFormat format);

    // ---- trainer access --------------------------------------------------
    bool executable() const { return profile_ == Profile::Desk; }
    EncoderWeights& encoder_weights(Modality m);
    const EncoderWeights& encoder_weights(Modality m) const;
    BackboneWeights& backbone_weights();
    const BackboneWeights& backbone_weights() const;
    ProjectionWeights& projection_weights();
    const ProjectionWeights& projection_weights() const;
    GeneratorWeights& generator_weights();
    const GeneratorWeights& generator_weights() const;

    // Input embedding with positions added, before any transformer block.
    Matrix embed_payload(const Payload& payload) const;
    // Raw embedding (encoder output before the projection layer).
    Matrix encode_raw(const Payload& payload, const AdapterPack* pack, OpTrace* trace) const;
    Matrix apply_projection(const Matrix& x, const AdapterPack* pack, OpTrace* trace) const;
    // Runs the backbone decoder stack over already-embedded rows (adds
    // positions internally) and returns the final hidden states.
    Matrix backbone_forward(const Matrix& embedded, const AdapterPack* pack, OpTrace* trace) const;
    Matrix gen_logits(const Matrix& hidden, OpTrace* trace) const;
    Matrix backbone_embed_tokens(const std::vector<std::uint32_t>& ids, OpTrace* trace) const;

    static std::vector<std::uint32_t> tokenize_bytes(const std::string& text);

private:
    void require_desk() const;
    Matrix embed_payload_traced(const Payload& payload, OpTrace* trace) const;
    const EncoderWeights& encoder_for(Modality m) const;
    std::vector<float> collect_base_weights() const;

    Profile profile_ = Profile::Desk;
    std::uint64_t seed_ = 0;
    DeskConfig cfg_;
    std::vector<ComponentSpec> specs_;

    std::map<Modality, EncoderWeights> encoders_;
    BackboneWeights backbone_;
    ProjectionWeights projection_;
    GeneratorWeights generators_;

    struct CompiledLora;
    struct AttachedAdapter;
    std::map<std::string, std::shared_ptr<AttachedAdapter>> adapters_;

    const AttachedAdapter* attached(const std::string& task_id) const;
    BlockAdapters block_adapters(const AttachedAdapter* ad, const std::string& component,
                                 std::size_t layer) const;
};

}  // namespace m4
