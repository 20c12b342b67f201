#include "m4/model.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

namespace m4 {

using nlohmann::json;

std::vector<ComponentSpec> paper_component_table() {
    // Published sub-model table. The two "<0.01B" generator rows are pinned
    // at the 0.01B cap; the projection layer is not listed in the table and
    // carries the desk head's own size so byte totals stay honest.
    return {
        {"IMG_enc", "embedding", "Encoder-only", 632800000.0, NumericFormat::FP16, 167.5963},
        {"TXT_enc", "embedding", "Encoder-only", 354000000.0, NumericFormat::FP16, 23.4189},
        {"AUD-B_enc", "embedding", "Encoder-only", 86200000.0, NumericFormat::FP16, 61.4679},
        {"AUD-I_enc", "embedding", "Encoder-Decoder", 37000000.0, NumericFormat::FP16, 26.0},
        {"IMU_enc", "embedding", "Encoder-only", 19600000.0, NumericFormat::FP16, 5.1417},
        {"Backbone", "backbone", "Decoder-only", 6280000000.0, NumericFormat::INT8, 312.0},
        {"TTS_dec", "generator", "Encoder-Decoder", 10000000.0, NumericFormat::FP32, 8.58},
        {"IMG_dec", "generator", "Encoder-Decoder", 1066300000.0, NumericFormat::FP16, 267.0},
        {"GEN_dec", "generator", "MLP", 10000000.0, NumericFormat::FP16, 125.0},
        {"Projection", "projection", "Linear", 4160.0, NumericFormat::FP32, 0.0},
    };
}

std::vector<ComponentSpec> load_component_table(const std::string& json_path) {
    json doc;
    try {
        doc = json::parse(read_file(json_path));
    } catch (const error&) {
        throw;
    } catch (const std::exception& e) {
        fail(errc::parse, std::string("component table: ") + e.what());
    }
    if (!doc.is_array()) fail(errc::parse, "component table: expected an array");
    std::vector<ComponentSpec> out;
    for (const auto& row : doc) {
        ComponentSpec s;
        s.name = row.at("name").get<std::string>();
        s.role = row.at("role").get<std::string>();
        s.architecture = row.value("architecture", "");
        s.params = row.at("params").get<double>();
        s.format = format_from_name(row.at("format").get<std::string>());
        s.gflops = row.at("gflops").get<double>();
        if (s.params <= 0) fail(errc::parse, "component table: params must be positive for " + s.name);
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

const std::vector<std::pair<Modality, const char*>>& encoder_names() {
    static const std::vector<std::pair<Modality, const char*>> v = {
        {Modality::Image, "IMG_enc"},        {Modality::Text, "TXT_enc"},
        {Modality::AudioBackground, "AUD-B_enc"}, {Modality::AudioIntent, "AUD-I_enc"},
        {Modality::Imu, "IMU_enc"},
    };
    return v;
}

std::size_t matrix_params(const Matrix& m) { return m.size(); }

std::size_t block_params(const BlockWeights& b) {
    return b.wq.size() + b.wk.size() + b.wv.size() + b.wo.size() + b.w1.size() + b.w2.size() +
           b.ln1_gain.size() + b.ln1_bias.size() + b.ln2_gain.size() + b.ln2_bias.size();
}

}  // namespace

// ---------------------------------------------------------------- payloads

Payload text_payload(const std::string& text) {
    Payload p;
    p.modality = Modality::Text;
    p.text = text;
    return p;
}

Payload image_payload(const std::vector<double>& chw) {
    const DeskConfig cfg;
    const std::size_t side = cfg.image_side, patch = cfg.patch;
    if (chw.size() != 3 * side * side) fail(errc::invalid_argument, "image payload must be 3x16x16");
    const std::size_t grid = side / patch;
    Payload p;
    p.modality = Modality::Image;
    p.values = Matrix(grid * grid, 3 * patch * patch);
    for (std::size_t py = 0; py < grid; ++py) {
        for (std::size_t px = 0; px < grid; ++px) {
            const std::size_t row = py * grid + px;
            std::size_t f = 0;
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t dy = 0; dy < patch; ++dy)
                    for (std::size_t dx = 0; dx < patch; ++dx)
                        p.values.at(row, f++) = chw[c * side * side + (py * patch + dy) * side + px * patch + dx];
        }
    }
    return p;
}

Payload audio_payload(const std::vector<double>& samples, bool intent) {
    const DeskConfig cfg;
    if (samples.empty() || samples.size() % cfg.audio_frame != 0 ||
        samples.size() / cfg.audio_frame > cfg.max_seq)
        fail(errc::invalid_argument, "audio payload must be a nonempty multiple of the frame size");
    Payload p;
    p.modality = intent ? Modality::AudioIntent : Modality::AudioBackground;
    p.values = Matrix(1, samples.size());
    p.values.data = samples;
    return p;
}

Payload imu_payload(const Matrix& window) {
    const DeskConfig cfg;
    if (window.cols != cfg.imu_channels || window.rows == 0 || window.rows > cfg.max_seq)
        fail(errc::invalid_argument, "imu payload must be Tx6 with 1 <= T <= max_seq");
    Payload p;
    p.modality = Modality::Imu;
    p.values = window;
    return p;
}

// ---------------------------------------------------------------- adapters

struct LoraMats {
    Matrix a, b;
};

struct FoundationModel::AttachedAdapter {
    AdapterPack pack;
    double scaling = 1.0;
    // component -> per layer [query, value] pairs
    std::map<std::string, std::vector<std::array<std::optional<LoraMats>, 2>>> per_component;
    std::optional<ProjectionWeights> proj_delta;
};

void FoundationModel::attach(const AdapterPack& pack) {
    require_desk();
    if (adapters_.count(pack.task_id)) fail(errc::duplicate, "adapter already attached for " + pack.task_id);

    auto ad = std::make_shared<AttachedAdapter>();
    ad->pack = pack;
    ad->scaling = pack.scaling();
    std::map<std::pair<std::string, int>, std::size_t> layer_cursor;
    for (const auto& t : pack.targets) {
        const std::string comp = component_from_code(t.component_code);
        const bool is_encoder = std::any_of(encoder_names().begin(), encoder_names().end(),
                                            [&](const auto& e) { return comp == e.second; });
        if (!is_encoder && comp != "Backbone")
            fail(errc::dimension_mismatch, "adapter targets unsupported component " + comp);
        const std::size_t layers = comp == "Backbone" ? cfg_.backbone_layers : cfg_.encoder_layers;
        if (t.d_in != cfg_.dim || t.d_out != cfg_.dim)
            fail(errc::dimension_mismatch, "adapter dims do not match the model");
        auto& slots = ad->per_component[comp];
        if (slots.size() < layers) slots.resize(layers);
        auto& cursor = layer_cursor[{comp, static_cast<int>(t.role)}];
        if (cursor >= layers) fail(errc::dimension_mismatch, "adapter has more target entries than layers");
        LoraMats mats{t.a_matrix(pack.config.rank), t.b_matrix(pack.config.rank)};
        slots[cursor][static_cast<int>(t.role)] = std::move(mats);
        ++cursor;
    }
    for (const auto& [key, cursor] : layer_cursor) {
        const std::size_t layers = key.first == "Backbone" ? cfg_.backbone_layers : cfg_.encoder_layers;
        if (cursor != layers)
            fail(errc::dimension_mismatch, "adapter covers " + std::to_string(cursor) + " of " +
                                               std::to_string(layers) + " layers of " + key.first);
    }
    if (!pack.projection_delta.empty()) {
        const std::size_t expect = cfg_.dim * cfg_.dim + cfg_.dim;
        if (pack.projection_delta.size() != expect)
            fail(errc::dimension_mismatch, "projection delta block size mismatch");
        ProjectionWeights d;
        d.w = Matrix(cfg_.dim, cfg_.dim);
        for (std::size_t i = 0; i < cfg_.dim * cfg_.dim; ++i) d.w.data[i] = pack.projection_delta[i];
        d.bias.resize(cfg_.dim);
        for (std::size_t i = 0; i < cfg_.dim; ++i) d.bias[i] = pack.projection_delta[cfg_.dim * cfg_.dim + i];
        ad->proj_delta = std::move(d);
    }
    adapters_[pack.task_id] = std::move(ad);
}

void FoundationModel::detach(const std::string& task_id) {
    if (adapters_.erase(task_id) == 0) fail(errc::not_found, "no adapter attached for " + task_id);
}

bool FoundationModel::has_adapter(const std::string& task_id) const { return adapters_.count(task_id) != 0; }

const AdapterPack& FoundationModel::adapter(const std::string& task_id) const {
    auto it = adapters_.find(task_id);
    if (it == adapters_.end()) fail(errc::not_found, "no adapter attached for " + task_id);
    return it->second->pack;
}

std::vector<std::string> FoundationModel::attached_tasks() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : adapters_) out.push_back(id);
    return out;
}

const FoundationModel::AttachedAdapter* FoundationModel::attached(const std::string& task_id) const {
    auto it = adapters_.find(task_id);
    return it == adapters_.end() ? nullptr : it->second.get();
}

BlockAdapters FoundationModel::block_adapters(const AttachedAdapter* ad, const std::string& component,
                                              std::size_t layer) const {
    BlockAdapters out;
    if (!ad) return out;
    auto it = ad->per_component.find(component);
    if (it == ad->per_component.end() || layer >= it->second.size()) return out;
    const auto& slot = it->second[layer];
    if (slot[0]) out.query = LoraPatch{&slot[0]->a, &slot[0]->b, ad->scaling};
    if (slot[1]) out.value = LoraPatch{&slot[1]->a, &slot[1]->b, ad->scaling};
    return out;
}

// ---------------------------------------------------------------- build

FoundationModel FoundationModel::build(Profile profile, std::uint64_t seed) {
    FoundationModel m;
    m.profile_ = profile;
    m.seed_ = seed;
    m.specs_ = paper_component_table();
    if (profile == Profile::Paper) return m;

    const DeskConfig& cfg = m.cfg_;
    rng root(seed);
    const TransformerBlockSpec enc_spec{cfg.dim, cfg.heads, cfg.ffn, BlockKind::Encoder};
    const TransformerBlockSpec dec_spec{cfg.dim, cfg.heads, cfg.ffn, BlockKind::Decoder};
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg.dim));

    for (const auto& [modality, name] : encoder_names()) {
        rng gen = root.fork(name);
        EncoderWeights e;
        e.spec = enc_spec;
        std::size_t feat = 0;
        switch (modality) {
            case Modality::Text: feat = 0; break;
            case Modality::Image: feat = 3 * cfg.patch * cfg.patch; break;
            case Modality::AudioBackground:
            case Modality::AudioIntent: feat = cfg.audio_frame; break;
            case Modality::Imu: feat = cfg.imu_channels; break;
        }
        if (feat > 0) {
            const double fs = 1.0 / std::sqrt(static_cast<double>(feat));
            e.input_proj = Matrix::random_uniform(feat, cfg.dim, gen, -fs, fs);
        } else {
            e.token_table = Matrix::random_uniform(cfg.vocab, cfg.dim, gen, -0.5, 0.5);
        }
        e.positional = Matrix::random_uniform(cfg.max_seq, cfg.dim, gen, -0.25, 0.25);
        for (std::size_t i = 0; i < cfg.encoder_layers; ++i) e.blocks.push_back(BlockWeights::random(enc_spec, gen));
        m.encoders_[modality] = std::move(e);
    }
    {
        rng gen = root.fork("Backbone");
        m.backbone_.spec = dec_spec;
        m.backbone_.token_table = Matrix::random_uniform(cfg.vocab, cfg.dim, gen, -0.5, 0.5);
        m.backbone_.positional = Matrix::random_uniform(cfg.max_seq, cfg.dim, gen, -0.25, 0.25);
        for (std::size_t i = 0; i < cfg.backbone_layers; ++i)
            m.backbone_.blocks.push_back(BlockWeights::random(dec_spec, gen));
        m.backbone_.final_gain.assign(cfg.dim, 1.0);
        m.backbone_.final_bias.assign(cfg.dim, 0.0);
    }
    {
        rng gen = root.fork("Projection");
        m.projection_.w = Matrix::identity(cfg.dim);
        for (auto& v : m.projection_.w.data) v += gen.uniform(-0.05, 0.05);
        m.projection_.bias.resize(cfg.dim);
        for (auto& v : m.projection_.bias) v = gen.uniform(-0.01, 0.01);
    }
    {
        rng gen = root.fork("Generators");
        m.generators_.gen_head = Matrix::random_uniform(cfg.dim, cfg.vocab, gen, -s, s);
        m.generators_.img_head = Matrix::random_uniform(cfg.dim, 3 * cfg.image_side * cfg.image_side, gen, -s, s);
        m.generators_.img_input =
            Matrix::random_uniform(3 * cfg.patch * cfg.patch, cfg.dim, gen, -1.0 / std::sqrt(48.0), 1.0 / std::sqrt(48.0));
    }
    return m;
}

void FoundationModel::require_desk() const {
    if (profile_ != Profile::Desk) fail(errc::unsupported, "operation requires the executable desk profile");
}

const ComponentSpec& FoundationModel::spec(const std::string& name) const {
    for (const auto& s : specs_)
        if (s.name == name) return s;
    fail(errc::not_found, "unknown component: " + name);
}

double FoundationModel::total_params() const {
    double sum = 0.0;
    for (const auto& s : specs_) sum += s.params;
    return sum;
}

const EncoderWeights& FoundationModel::encoder_for(Modality m) const {
    auto it = encoders_.find(m);
    if (it == encoders_.end()) fail(errc::not_found, "no encoder for modality");
    return it->second;
}

EncoderWeights& FoundationModel::encoder_weights(Modality m) {
    require_desk();
    return const_cast<EncoderWeights&>(encoder_for(m));
}
const EncoderWeights& FoundationModel::encoder_weights(Modality m) const {
    return encoder_for(m);
}
BackboneWeights& FoundationModel::backbone_weights() {
    require_desk();
    return backbone_;
}
const BackboneWeights& FoundationModel::backbone_weights() const { return backbone_; }
ProjectionWeights& FoundationModel::projection_weights() {
    require_desk();
    return projection_;
}
const ProjectionWeights& FoundationModel::projection_weights() const { return projection_; }
GeneratorWeights& FoundationModel::generator_weights() {
    require_desk();
    return generators_;
}
const GeneratorWeights& FoundationModel::generator_weights() const { return generators_; }

std::vector<std::uint32_t> FoundationModel::tokenize_bytes(const std::string& text) {
    std::vector<std::uint32_t> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(c);
    return ids;
}

// ---------------------------------------------------------------- forward

namespace {

Matrix slice_rows_view(const Matrix& m, std::size_t count) {
    Matrix out(count, m.cols);
    std::copy(m.data.begin(), m.data.begin() + static_cast<std::ptrdiff_t>(count * m.cols), out.data.begin());
    return out;
}

}  // namespace

Matrix FoundationModel::embed_payload(const Payload& payload) const {
    return embed_payload_traced(payload, nullptr);
}

Matrix FoundationModel::embed_payload_traced(const Payload& payload, OpTrace* trace) const {
    require_desk();
    const EncoderWeights& enc = encoder_for(payload.modality);
    Matrix x;
    if (payload.modality == Modality::Text) {
        if (payload.text.empty()) fail(errc::invalid_argument, "text payload is empty");
        if (payload.text.size() > cfg_.max_seq) fail(errc::invalid_argument, "text payload exceeds max sequence");
        x = embedding_lookup(enc.token_table, tokenize_bytes(payload.text), trace);
    } else if (payload.modality == Modality::AudioBackground || payload.modality == Modality::AudioIntent) {
        if (payload.values.rows != 1 || payload.values.cols == 0 ||
            payload.values.cols % cfg_.audio_frame != 0)
            fail(errc::invalid_argument, "audio payload shape mismatch");
        const std::size_t frames = payload.values.cols / cfg_.audio_frame;
        if (frames > cfg_.max_seq) fail(errc::invalid_argument, "audio payload exceeds max sequence");
        Matrix framed(frames, cfg_.audio_frame);
        framed.data = payload.values.data;
        x = matmul(framed, enc.input_proj, trace);
    } else {
        if (payload.values.cols != enc.input_proj.rows)
            fail(errc::invalid_argument, "payload shape mismatch for modality");
        if (payload.values.rows == 0 || payload.values.rows > cfg_.max_seq)
            fail(errc::invalid_argument, "payload token count out of range");
        Matrix features = payload.values;
        if (payload.modality == Modality::Image) {
            // pixels arrive in [0,1]; the encoder normalizes them to [-1,1]
            for (auto& v : features.data) v = 2.0 * v - 1.0;
        }
        x = matmul(features, enc.input_proj, trace);
    }
    return add(x, slice_rows_view(enc.positional, x.rows), trace);
}

Matrix FoundationModel::encode_raw(const Payload& payload, const AdapterPack* pack, OpTrace* trace) const {
    require_desk();
    const AttachedAdapter* ad = pack ? attached(pack->task_id) : nullptr;
    const std::string comp = encoder_component_name(payload.modality);
    const EncoderWeights& enc = encoder_for(payload.modality);
    ComponentScope scope(trace, comp);
    Matrix x = embed_payload_traced(payload, trace);
    for (std::size_t i = 0; i < enc.blocks.size(); ++i) {
        const BlockAdapters ba = block_adapters(ad, comp, i);
        x = block_forward(enc.spec, enc.blocks[i], x, &ba, trace);
    }
    return x;
}

Matrix FoundationModel::apply_projection(const Matrix& x, const AdapterPack* pack, OpTrace* trace) const {
    require_desk();
    const AttachedAdapter* ad = pack ? attached(pack->task_id) : nullptr;
    ComponentScope scope(trace, "Projection");
    Matrix y = matmul(x, projection_.w, trace);
    Matrix bias(1, cfg_.dim);
    for (std::size_t i = 0; i < cfg_.dim; ++i) bias.at(0, i) = projection_.bias[i];
    if (ad && ad->proj_delta) {
        y = add(y, matmul(x, ad->proj_delta->w, trace), trace);
        for (std::size_t i = 0; i < cfg_.dim; ++i) bias.at(0, i) += ad->proj_delta->bias[i];
    }
    return add_rowvec(y, bias, trace);
}

Matrix FoundationModel::encode(const Payload& payload, const std::string& task_id, OpTrace* trace) const {
    const AdapterPack* pack = has_adapter(task_id) ? &adapter(task_id) : nullptr;
    return apply_projection(encode_raw(payload, pack, trace), pack, trace);
}

Matrix FoundationModel::backbone_embed_tokens(const std::vector<std::uint32_t>& ids, OpTrace* trace) const {
    require_desk();
    ComponentScope scope(trace, "Backbone");
    return embedding_lookup(backbone_.token_table, ids, trace);
}

Matrix FoundationModel::backbone_forward(const Matrix& embedded, const AdapterPack* pack, OpTrace* trace) const {
    require_desk();
    if (embedded.rows > cfg_.max_seq) fail(errc::invalid_argument, "sequence exceeds max length");
    const AttachedAdapter* ad = pack ? attached(pack->task_id) : nullptr;
    ComponentScope scope(trace, "Backbone");
    Matrix x = add(embedded, slice_rows_view(backbone_.positional, embedded.rows), trace);
    for (std::size_t i = 0; i < backbone_.blocks.size(); ++i) {
        const BlockAdapters ba = block_adapters(ad, "Backbone", i);
        x = block_forward(backbone_.spec, backbone_.blocks[i], x, &ba, trace);
    }
    return layer_norm(x, backbone_.final_gain, backbone_.final_bias, trace);
}

Matrix FoundationModel::gen_logits(const Matrix& hidden, OpTrace* trace) const {
    require_desk();
    ComponentScope scope(trace, "GEN_dec");
    return matmul(hidden, generators_.gen_head, trace);
}

// ---------------------------------------------------------------- execute

namespace {

std::string detokenize(const std::vector<std::uint32_t>& ids) {
    std::string out;
    for (auto id : ids) {
        if (id < 256) out.push_back(static_cast<char>(id));
    }
    return out;
}

}  // namespace

TaskOutput FoundationModel::execute(const TaskSpec& task, const std::vector<Payload>& inputs,
                                    const ExecOptions& opts, OpTrace* trace) const {
    require_desk();
    {
        const auto violations = validate_task(task);
        if (!violations.empty()) fail(errc::invalid_argument, "invalid task " + task.id + ": " + violations.front());
    }
    const RoutePlan plan = route(task);
    const AdapterPack* pack = has_adapter(task.id) ? &adapter(task.id) : nullptr;

    // fill prompt slots: explicit values win, otherwise text payloads are
    // consumed in order
    std::map<std::string, std::string> slots = opts.slots;
    std::vector<bool> consumed(inputs.size(), false);
    for (const auto& name : task.prompt.slot_names()) {
        if (slots.count(name)) continue;
        if (task.path == 3) continue;  // the label slot is filled per candidate
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            if (!consumed[i] && inputs[i].modality == Modality::Text) {
                slots[name] = inputs[i].text;
                consumed[i] = true;
                break;
            }
        }
    }

    TaskOutput out;
    switch (task.path) {
        case 2: {
            if (inputs.empty() || inputs[0].modality != Modality::Text)
                fail(errc::invalid_argument, "Path-2 takes raw text input");
            const std::string prompt = task.prompt.render(slots);
            std::vector<std::uint32_t> ids;
            ids.push_back(kBos);
            for (auto t : tokenize_bytes(prompt)) ids.push_back(t);
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                if (inputs[i].modality == Modality::Text && !consumed[i]) {
                    ids.push_back(kSep);
                    for (auto t : tokenize_bytes(inputs[i].text)) ids.push_back(t);
                }
            }
            if (ids.size() >= cfg_.max_seq) fail(errc::invalid_argument, "prompt too long for max sequence");
            Matrix prefix = backbone_embed_tokens(ids, trace);
            out.kind = task.output;
            std::vector<std::uint32_t> generated;
            for (std::size_t step = 0; step < opts.max_tokens && prefix.rows < cfg_.max_seq; ++step) {
                const Matrix hidden = backbone_forward(prefix, pack, trace);
                const Matrix logits = gen_logits(hidden, trace);
                std::size_t next;
                {
                    ComponentScope scope(trace, "GEN_dec");
                    next = argmax_row(logits, logits.rows - 1, trace);
                }
                if (next == kEos) break;
                generated.push_back(static_cast<std::uint32_t>(next));
                prefix = concat_rows(prefix, backbone_embed_tokens({static_cast<std::uint32_t>(next)}, nullptr),
                                     nullptr);
            }
            out.text = detokenize(generated);
            break;
        }
        case 1: {
            if (inputs.empty()) fail(errc::invalid_argument, "Path-1 needs at least one payload");
            std::vector<std::uint32_t> bos{kBos};
            Matrix prefix = backbone_embed_tokens(bos, trace);
            if (task.prompt.target == PromptTarget::TextEmbedding) {
                const std::string prompt = task.prompt.render(slots);
                const Matrix emb = apply_projection(encode_raw(text_payload(prompt), pack, trace), pack, trace);
                prefix = concat_rows(prefix, emb, nullptr);
            } else {
                const std::string prompt = task.prompt.render(slots);
                std::vector<std::uint32_t> ids = tokenize_bytes(prompt);
                prefix = concat_rows(prefix, backbone_embed_tokens(ids, trace), nullptr);
            }
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                if (consumed[i]) continue;
                const Matrix emb = apply_projection(encode_raw(inputs[i], pack, trace), pack, trace);
                prefix = concat_rows(prefix, emb, nullptr);
            }
            if (prefix.rows >= cfg_.max_seq) fail(errc::invalid_argument, "prefix too long for max sequence");

            if (plan.generator == "GEN_dec") {
                out.kind = task.output;
                std::vector<std::uint32_t> generated;
                for (std::size_t step = 0; step < opts.max_tokens && prefix.rows < cfg_.max_seq; ++step) {
                    const Matrix hidden = backbone_forward(prefix, pack, trace);
                    const Matrix logits = gen_logits(hidden, trace);
                    std::size_t next;
                    {
                        ComponentScope scope(trace, "GEN_dec");
                        next = argmax_row(logits, logits.rows - 1, trace);
                    }
                    if (next == kEos) break;
                    generated.push_back(static_cast<std::uint32_t>(next));
                    prefix = concat_rows(prefix, backbone_embed_tokens({static_cast<std::uint32_t>(next)}, nullptr),
                                         nullptr);
                }
                out.text = detokenize(generated);
            } else if (plan.generator == "IMG_dec") {
                const Matrix hidden = backbone_forward(prefix, pack, trace);
                Matrix state(1, cfg_.dim);
                for (std::size_t c = 0; c < cfg_.dim; ++c) state.at(0, c) = hidden.at(hidden.rows - 1, c);
                ComponentScope scope(trace, "IMG_dec");
                Matrix img = matmul(state, generators_.img_head, trace);
                out.kind = OutputKind::Image;
                out.image.resize(img.cols);
                for (std::size_t c = 0; c < img.cols; ++c) out.image[c] = std::tanh(img.at(0, c));
                if (trace) trace->record(OpKind::Tanh, img.cols, 1, img.cols);
            } else {
                fail(errc::unsupported, "Path-1 with generator " + plan.generator + " is not implemented");
            }
            break;
        }
        case 3: {
            if (inputs.empty()) fail(errc::invalid_argument, "Path-3 needs a payload");
            if (opts.labels.empty()) fail(errc::invalid_argument, "Path-3 needs candidate labels");
            // label prompts must differ per candidate; templates carry one slot
            const auto slot_names = task.prompt.slot_names();
            std::string label_slot;
            for (const auto& n : slot_names)
                if (!slots.count(n)) label_slot = n;
            if (label_slot.empty() && !slot_names.empty()) label_slot = slot_names.front();

            const Matrix payload_emb =
                apply_projection(encode_raw(inputs[0], pack, trace), pack, trace);
            Matrix pooled = mean_pool_rows(payload_emb, trace);
            pooled = l2_normalize_rows(pooled, trace);

            Matrix label_mat(opts.labels.size(), cfg_.dim);
            for (std::size_t i = 0; i < opts.labels.size(); ++i) {
                auto s = slots;
                if (!label_slot.empty()) s[label_slot] = opts.labels[i];
                const std::string prompt = task.prompt.render(s);
                const Matrix emb = apply_projection(encode_raw(text_payload(prompt), pack, trace), pack, trace);
                const Matrix p = mean_pool_rows(emb, trace);
                for (std::size_t c = 0; c < cfg_.dim; ++c) label_mat.at(i, c) = p.at(0, c);
            }
            label_mat = l2_normalize_rows(label_mat, trace);
            const Matrix sims = matmul_nt(pooled, label_mat, trace);
            const std::size_t best = argmax_row(sims, 0, trace);
            out.kind = OutputKind::Label;
            out.label_index = best;
            out.text = opts.labels[best];
            out.scores.assign(sims.data.begin(), sims.data.end());
            break;
        }
        case 4: {
            if (plan.generator == "TTS_dec") {
                if (inputs.empty() || inputs[0].modality != Modality::Text)
                    fail(errc::invalid_argument, "text-to-speech takes text input");
                ComponentScope scope(trace, "TTS_dec");
                const auto ids = tokenize_bytes(inputs[0].text);
                constexpr std::size_t kChunk = 64;
                out.kind = OutputKind::Speech;
                out.waveform.reserve(ids.size() * kChunk);
                for (auto id : ids) {
                    const double freq = static_cast<double>(id % 16 + 1);
                    for (std::size_t k = 0; k < kChunk; ++k)
                        out.waveform.push_back(0.5 * std::sin(2.0 * M_PI * freq * k / kChunk));
                }
                if (trace) {
                    trace->record(OpKind::Sin, out.waveform.size(), ids.size(), kChunk);
                    trace->record(OpKind::Mul, out.waveform.size(), ids.size(), kChunk);
                }
            } else if (plan.generator == "IMG_dec") {
                if (inputs.empty() || inputs[0].modality != Modality::Image)
                    fail(errc::invalid_argument, "image generator takes an image payload");
                ComponentScope scope(trace, "IMG_dec");
                const Matrix pooled = mean_pool_rows(inputs[0].values, trace);
                const Matrix state = matmul(pooled, generators_.img_input, trace);
                const Matrix img = matmul(state, generators_.img_head, trace);
                out.kind = OutputKind::Image;
                out.image.resize(img.cols);
                for (std::size_t c = 0; c < img.cols; ++c) out.image[c] = std::tanh(img.at(0, c));
                if (trace) trace->record(OpKind::Tanh, img.cols, 1, img.cols);
            } else {
                fail(errc::not_found, "Path-4 generator missing: " + plan.generator);
            }
            break;
        }
        default:
            fail(errc::invalid_argument, "unknown path");
    }
    return out;
}

// ---------------------------------------------------------------- accounting

ActivationCost FoundationModel::activation_cost(const RoutePlan& plan) const {
    if (profile_ != Profile::Paper)
        fail(errc::unsupported, "activation_cost uses the paper profile");
    ActivationCost c;
    for (const auto& name : plan.activated) {
        const auto& s = spec(name);
        c.params += s.params;
        c.gflops += s.gflops;
    }
    return c;
}

namespace {

void hash_matrix(sha256& h, const Matrix& m) {
    h.update(m.data.data(), m.data.size() * sizeof(double));
}

void hash_vec(sha256& h, const std::vector<double>& v) { h.update(v.data(), v.size() * sizeof(double)); }

void hash_block(sha256& h, const BlockWeights& b) {
    hash_matrix(h, b.wq);
    hash_matrix(h, b.wk);
    hash_matrix(h, b.wv);
    hash_matrix(h, b.wo);
    hash_matrix(h, b.w1);
    hash_matrix(h, b.w2);
    hash_vec(h, b.ln1_gain);
    hash_vec(h, b.ln1_bias);
    hash_vec(h, b.ln2_gain);
    hash_vec(h, b.ln2_bias);
}

}  // namespace

std::string FoundationModel::weight_hash() const {
    require_desk();
    sha256 h;
    for (const auto& [modality, name] : encoder_names()) {
        const auto& e = encoders_.at(modality);
        hash_matrix(h, e.input_proj);
        hash_matrix(h, e.token_table);
        hash_matrix(h, e.positional);
        for (const auto& b : e.blocks) hash_block(h, b);
    }
    hash_matrix(h, backbone_.token_table);
    hash_matrix(h, backbone_.positional);
    for (const auto& b : backbone_.blocks) hash_block(h, b);
    hash_vec(h, backbone_.final_gain);
    hash_vec(h, backbone_.final_bias);
    hash_matrix(h, projection_.w);
    hash_vec(h, projection_.bias);
    hash_matrix(h, generators_.gen_head);
    hash_matrix(h, generators_.img_head);
    hash_matrix(h, generators_.img_input);
    return h.finish_hex();
}

std::uint64_t FoundationModel::desk_weight_bytes() const {
    require_desk();
    std::uint64_t count = 0;
    for (const auto& [modality, e] : encoders_) {
        count += matrix_params(e.input_proj) + matrix_params(e.token_table) + matrix_params(e.positional);
        for (const auto& b : e.blocks) count += block_params(b);
    }
    count += matrix_params(backbone_.token_table) + matrix_params(backbone_.positional);
    for (const auto& b : backbone_.blocks) count += block_params(b);
    count += backbone_.final_gain.size() + backbone_.final_bias.size();
    count += matrix_params(projection_.w) + projection_.bias.size();
    count += matrix_params(generators_.gen_head) + matrix_params(generators_.img_head) +
             matrix_params(generators_.img_input);
    return count * sizeof(double);
}

void FoundationModel::quantize_component(const std::string& name, NumericFormat format) {
    require_desk();
    auto roundtrip = [&](Matrix& m) {
        if (m.empty()) return;
        m = dequantize(quantize(m, format));
    };
    bool found = false;
    for (const auto& [modality, ename] : encoder_names()) {
        if (name != ename) continue;
        auto& e = encoders_.at(modality);
        roundtrip(e.input_proj);
        roundtrip(e.token_table);
        roundtrip(e.positional);
        for (auto& b : e.blocks) {
            roundtrip(b.wq);
            roundtrip(b.wk);
            roundtrip(b.wv);
            roundtrip(b.wo);
            roundtrip(b.w1);
            roundtrip(b.w2);
        }
        found = true;
    }
    if (name == "Backbone") {
        roundtrip(backbone_.token_table);
        roundtrip(backbone_.positional);
        for (auto& b : backbone_.blocks) {
            roundtrip(b.wq);
            roundtrip(b.wk);
            roundtrip(b.wv);
            roundtrip(b.wo);
            roundtrip(b.w1);
            roundtrip(b.w2);
        }
        found = true;
    }
    if (name == "Projection") {
        roundtrip(projection_.w);
        found = true;
    }
    if (name == "GEN_dec") {
        roundtrip(generators_.gen_head);
        found = true;
    }
    if (name == "IMG_dec") {
        roundtrip(generators_.img_head);
        roundtrip(generators_.img_input);
        found = true;
    }
    if (name == "TTS_dec") found = true;  // deterministic stub carries no weights
    if (!found) fail(errc::not_found, "unknown component: " + name);
}

}  // namespace m4
