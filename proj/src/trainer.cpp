#include "m4/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "m4/autograd.hpp"
#include "m4/metrics.hpp"

namespace m4 {

namespace {

using ad::Graph;

struct LoraParam {
    std::string component;
    TargetRole role = TargetRole::Query;
    std::size_t layer = 0;
    Matrix a, b;
    bool trainable = false;
};

struct TrainState {
    std::vector<LoraParam> loras;
    bool has_proj = false;
    bool proj_trainable = false;
    Matrix proj_w;  // delta on the projection weight
    Matrix proj_b;  // 1 x dim delta on the projection bias
    double scaling = 1.0;
};

TrainState state_from_pack(const AdapterPack& pack, const TaskSpec& task, const DeskConfig& cfg) {
    TrainState st;
    st.scaling = pack.scaling();
    const TunableMask mask = tunable_mask(task.path);
    std::map<std::pair<std::string, int>, std::size_t> cursor;
    for (const auto& t : pack.targets) {
        LoraParam p;
        p.component = component_from_code(t.component_code);
        p.role = t.role;
        p.layer = cursor[{p.component, static_cast<int>(t.role)}]++;
        p.a = t.a_matrix(pack.config.rank);
        p.b = t.b_matrix(pack.config.rank);
        p.trainable = p.component == "Backbone" ? mask.backbone_peft : mask.encoder_peft;
        st.loras.push_back(std::move(p));
    }
    if (!pack.projection_delta.empty()) {
        if (pack.projection_delta.size() != cfg.dim * cfg.dim + cfg.dim)
            fail(errc::dimension_mismatch, "projection delta block does not match the desk head");
        st.has_proj = true;
        st.proj_trainable = mask.projection;
        st.proj_w = Matrix(cfg.dim, cfg.dim);
        for (std::size_t i = 0; i < cfg.dim * cfg.dim; ++i) st.proj_w.data[i] = pack.projection_delta[i];
        st.proj_b = Matrix(1, cfg.dim);
        for (std::size_t i = 0; i < cfg.dim; ++i) st.proj_b.data[i] = pack.projection_delta[cfg.dim * cfg.dim + i];
    }
    return st;
}

void state_to_pack(const TrainState& st, AdapterPack& pack) {
    std::size_t idx = 0;
    for (auto& t : pack.targets) {
        const auto& p = st.loras[idx++];
        for (std::size_t i = 0; i < t.a.size(); ++i) t.a[i] = static_cast<float>(p.a.data[i]);
        for (std::size_t i = 0; i < t.b.size(); ++i) t.b[i] = static_cast<float>(p.b.data[i]);
    }
    if (st.has_proj) {
        const std::size_t dim = st.proj_b.cols;
        for (std::size_t i = 0; i < dim * dim; ++i) pack.projection_delta[i] = static_cast<float>(st.proj_w.data[i]);
        for (std::size_t i = 0; i < dim; ++i)
            pack.projection_delta[dim * dim + i] = static_cast<float>(st.proj_b.data[i]);
    }
}

std::string frozen_hash(const FoundationModel& model, const TrainState& st) {
    sha256 h;
    const std::string base = model.weight_hash();
    h.update(base.data(), base.size());
    for (const auto& p : st.loras) {
        if (p.trainable) continue;
        h.update(p.a.data.data(), p.a.data.size() * sizeof(double));
        h.update(p.b.data.data(), p.b.data.size() * sizeof(double));
    }
    if (st.has_proj && !st.proj_trainable) {
        h.update(st.proj_w.data.data(), st.proj_w.data.size() * sizeof(double));
        h.update(st.proj_b.data.data(), st.proj_b.data.size() * sizeof(double));
    }
    return h.finish_hex();
}

// one step's worth of tape plumbing over a shared state
struct TapeContext {
    Graph g;
    std::vector<std::pair<Graph::Id, Matrix*>> bindings;  // trainable leaves
    std::map<std::tuple<std::string, int, std::size_t>, ad::TapeLora> lora_ids;
    Graph::Id proj_w = 0, proj_b = 0;
    bool has_proj = false;

    explicit TapeContext(TrainState& st) {
        for (auto& p : st.loras) {
            ad::TapeLora tl;
            tl.present = true;
            if (p.trainable) {
                tl.a = g.param(p.a);
                tl.b = g.param(p.b);
                bindings.push_back({tl.a, &p.a});
                bindings.push_back({tl.b, &p.b});
            } else {
                tl.a = g.input(p.a);
                tl.b = g.input(p.b);
            }
            lora_ids[{p.component, static_cast<int>(p.role), p.layer}] = tl;
        }
        if (st.has_proj) {
            has_proj = true;
            if (st.proj_trainable) {
                proj_w = g.param(st.proj_w);
                proj_b = g.param(st.proj_b);
                bindings.push_back({proj_w, &st.proj_w});
                bindings.push_back({proj_b, &st.proj_b});
            } else {
                proj_w = g.input(st.proj_w);
                proj_b = g.input(st.proj_b);
            }
        }
    }

    ad::TapeLora lora(const std::string& comp, TargetRole role, std::size_t layer) const {
        auto it = lora_ids.find({comp, static_cast<int>(role), layer});
        return it == lora_ids.end() ? ad::TapeLora{} : it->second;
    }

    bool component_has_lora(const std::string& comp) const {
        for (const auto& [key, _] : lora_ids)
            if (std::get<0>(key) == comp) return true;
        return false;
    }

    void sgd_update(double lr) {
        for (auto& [id, dst] : bindings) {
            const Matrix& grad = g.grad(id);
            for (std::size_t i = 0; i < dst->data.size(); ++i) dst->data[i] -= lr * grad.data[i];
        }
    }
};

Graph::Id tape_encoder(TapeContext& tc, const FoundationModel& model, const TrainState& st,
                       const Payload& payload) {
    const std::string comp = encoder_component_name(payload.modality);
    const EncoderWeights& enc = model.encoder_weights(payload.modality);
    Graph::Id x = tc.g.input(model.embed_payload(payload));
    for (std::size_t i = 0; i < enc.blocks.size(); ++i) {
        ad::TapeBlock blk;
        blk.w = &enc.blocks[i];
        blk.lora_q = tc.lora(comp, TargetRole::Query, i);
        blk.lora_v = tc.lora(comp, TargetRole::Value, i);
        blk.lora_scaling = st.scaling;
        x = ad::tape_block_forward(tc.g, enc.spec, blk, x);
    }
    return x;
}

Graph::Id tape_backbone(TapeContext& tc, const FoundationModel& model, const TrainState& st, Graph::Id rows) {
    const BackboneWeights& bb = model.backbone_weights();
    const std::size_t n = tc.g.value(rows).rows;
    Matrix pos(n, bb.positional.cols);
    std::copy(bb.positional.data.begin(), bb.positional.data.begin() + static_cast<std::ptrdiff_t>(n * pos.cols),
              pos.data.begin());
    Graph::Id x = tc.g.add(rows, tc.g.input(pos));
    for (std::size_t i = 0; i < bb.blocks.size(); ++i) {
        ad::TapeBlock blk;
        blk.w = &bb.blocks[i];
        blk.lora_q = tc.lora("Backbone", TargetRole::Query, i);
        blk.lora_v = tc.lora("Backbone", TargetRole::Value, i);
        blk.lora_scaling = st.scaling;
        x = ad::tape_block_forward(tc.g, bb.spec, blk, x);
    }
    return tc.g.layer_norm(x, bb.final_gain, bb.final_bias);
}

Graph::Id tape_projection(TapeContext& tc, const FoundationModel& model, Graph::Id x) {
    const ProjectionWeights& pr = model.projection_weights();
    Graph::Id y = tc.g.matmul(x, tc.g.input(pr.w));
    Matrix bias(1, pr.w.cols);
    for (std::size_t i = 0; i < pr.bias.size(); ++i) bias.at(0, i) = pr.bias[i];
    Graph::Id brow = tc.g.input(bias);
    if (tc.has_proj) {
        y = tc.g.add(y, tc.g.matmul(x, tc.proj_w));
        brow = tc.g.add(brow, tc.proj_b);
    }
    return tc.g.add_rowvec(y, brow);
}

double batch_accuracy(const Matrix& logits, const std::vector<std::uint32_t>& targets) {
    std::size_t hit = 0, valid = 0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        if (targets[r] == Graph::kIgnore) continue;
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols; ++c)
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        hit += best == targets[r];
        ++valid;
    }
    return valid == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(valid);
}

// cached per-fine-tune constants
struct StepInputs {
    // Path-3: pooled prompt encoder outputs (pre-projection)
    Matrix prompt_pooled;
    std::vector<std::string> prompts;
    // Path-2/1 per-sample token ids
    std::vector<std::vector<std::uint32_t>> token_ids;
};

std::vector<std::uint32_t> lm_tokens(const std::string& text) {
    std::vector<std::uint32_t> ids{kBos};
    for (auto t : FoundationModel::tokenize_bytes(text)) ids.push_back(t);
    return ids;
}

struct StepResult {
    double loss = 0.0;
    double metric = 0.0;
};

StepResult run_step(TapeContext& tc, const FoundationModel& model, TrainState& st, const TaskSpec& task,
                    const SyntheticDataset& data, const StepInputs& inputs,
                    const std::vector<std::size_t>& batch, const TrainConfig& cfg, bool do_backward) {
    StepResult res;
    const auto& samples = data.train;

    switch (task.path) {
        case 3: {
            std::vector<Graph::Id> pooled;
            std::vector<std::uint32_t> labels;
            for (auto idx : batch) {
                const auto& s = samples[idx];
                pooled.push_back(tc.g.mean_pool_rows(tape_encoder(tc, model, st, s.payload)));
                labels.push_back(static_cast<std::uint32_t>(s.label));
            }
            Graph::Id p = tape_projection(tc, model, tc.g.concat_rows(pooled));
            Graph::Id q;
            if (tc.component_has_lora("TXT_enc")) {
                std::vector<Graph::Id> qp;
                for (const auto& prompt : inputs.prompts)
                    qp.push_back(tc.g.mean_pool_rows(tape_encoder(tc, model, st, text_payload(prompt))));
                q = tape_projection(tc, model, tc.g.concat_rows(qp));
            } else {
                q = tape_projection(tc, model, tc.g.input(inputs.prompt_pooled));
            }
            Graph::Id logits =
                tc.g.scale(tc.g.matmul_nt(tc.g.l2_normalize_rows(p), tc.g.l2_normalize_rows(q)), 1.0 / cfg.tau);
            Graph::Id loss = tc.g.cross_entropy(logits, labels);
            res.loss = tc.g.scalar(loss);
            res.metric = batch_accuracy(tc.g.value(logits), labels);
            if (do_backward) tc.g.backward(loss);
            break;
        }
        case 2: {
            Graph::Id total = 0;
            double acc = 0.0;
            bool first = true;
            for (auto idx : batch) {
                const auto& ids = inputs.token_ids[idx];
                Matrix emb = embedding_lookup(model.backbone_weights().token_table, ids, nullptr);
                Graph::Id h = tape_backbone(tc, model, st, tc.g.input(emb));
                Graph::Id logits = tc.g.matmul(h, tc.g.input(model.generator_weights().gen_head));
                std::vector<std::uint32_t> targets(ids.begin() + 1, ids.end());
                targets.push_back(kEos);
                Graph::Id loss = tc.g.cross_entropy(logits, targets);
                acc += batch_accuracy(tc.g.value(logits), targets);
                total = first ? loss : tc.g.add(total, loss);
                first = false;
            }
            Graph::Id loss = tc.g.scale(total, 1.0 / static_cast<double>(batch.size()));
            res.loss = tc.g.scalar(loss);
            res.metric = acc / static_cast<double>(batch.size());
            if (do_backward) tc.g.backward(loss);
            break;
        }
        case 1: {
            Graph::Id total = 0;
            double acc = 0.0;
            bool first = true;
            // training feeds the raw instruction template; slot values are an
            // inference-time concern
            const Matrix prompt_raw = model.encode_raw(text_payload(task.prompt.text), nullptr, nullptr);
            for (auto idx : batch) {
                const auto& s = samples[idx];
                const Matrix bos = embedding_lookup(model.backbone_weights().token_table, {kBos}, nullptr);
                Graph::Id prompt_emb = tape_projection(tc, model, tc.g.input(prompt_raw));
                Graph::Id payload_emb;
                if (tc.component_has_lora(encoder_component_name(s.payload.modality))) {
                    payload_emb = tape_projection(tc, model, tape_encoder(tc, model, st, s.payload));
                } else {
                    payload_emb = tape_projection(
                        tc, model, tc.g.input(model.encode_raw(s.payload, nullptr, nullptr)));
                }
                const auto caption = FoundationModel::tokenize_bytes(s.text);
                Matrix cap_emb = embedding_lookup(model.backbone_weights().token_table, caption, nullptr);
                Graph::Id rows = tc.g.concat_rows(
                    {tc.g.input(bos), prompt_emb, payload_emb, tc.g.input(cap_emb)});
                Graph::Id h = tape_backbone(tc, model, st, rows);
                Graph::Id logits = tc.g.matmul(h, tc.g.input(model.generator_weights().gen_head));
                const std::size_t prefix = 1 + prompt_raw.rows + tc.g.value(payload_emb).rows;
                std::vector<std::uint32_t> targets(tc.g.value(logits).rows, Graph::kIgnore);
                for (std::size_t j = 0; j < caption.size(); ++j) targets[prefix - 1 + j] = caption[j];
                targets[prefix - 1 + caption.size()] = kEos;
                Graph::Id loss = tc.g.cross_entropy(logits, targets);
                acc += batch_accuracy(tc.g.value(logits), targets);
                total = first ? loss : tc.g.add(total, loss);
                first = false;
            }
            Graph::Id loss = tc.g.scale(total, 1.0 / static_cast<double>(batch.size()));
            res.loss = tc.g.scalar(loss);
            res.metric = acc / static_cast<double>(batch.size());
            if (do_backward) tc.g.backward(loss);
            break;
        }
        default:
            fail(errc::invalid_argument, "training is defined for paths 1-3");
    }
    return res;
}

StepInputs prepare_inputs(const FoundationModel& model, const TaskSpec& task, const SyntheticDataset& data) {
    StepInputs in;
    if (task.path == 3) {
        const auto slot_names = task.prompt.slot_names();
        const std::string slot = slot_names.empty() ? "" : slot_names.front();
        Matrix pooled(data.labels.size(), model.desk_config().dim);
        for (std::size_t i = 0; i < data.labels.size(); ++i) {
            std::map<std::string, std::string> slots;
            if (!slot.empty()) slots[slot] = data.labels[i];
            const std::string prompt = task.prompt.render(slots);
            in.prompts.push_back(prompt);
            const Matrix raw = model.encode_raw(text_payload(prompt), nullptr, nullptr);
            const Matrix p = mean_pool_rows(raw, nullptr);
            for (std::size_t c = 0; c < p.cols; ++c) pooled.at(i, c) = p.at(0, c);
        }
        in.prompt_pooled = std::move(pooled);
    } else {
        in.token_ids.reserve(data.train.size());
        for (const auto& s : data.train) in.token_ids.push_back(lm_tokens(s.text));
    }
    return in;
}

void check_compatibility(const TaskSpec& task, const SyntheticDataset& data) {
    const bool ok = (task.path == 3 && data.kind == DatasetKind::Path3Alignment) ||
                    (task.path == 2 && data.kind == DatasetKind::Path2Lm) ||
                    (task.path == 1 && data.kind == DatasetKind::Path1Caption);
    if (!ok)
        fail(errc::invalid_argument, std::string("dataset kind ") + dataset_kind_name(data.kind) +
                                         " is incompatible with path " + std::to_string(task.path));
    if (task.path == 3 && !data.labels.empty() && task.prompt.slot_names().empty() && data.labels.size() > 1)
        fail(errc::invalid_argument, "Path-3 task template cannot distinguish labels");
}

void validate_config(const TrainConfig& cfg) {
    if (cfg.batch == 0) fail(errc::invalid_argument, "batch size must be positive");
    if (cfg.tau <= 0.0) fail(errc::invalid_argument, "temperature must be positive");
    if (cfg.loss != "auto" && cfg.loss != "cross-entropy" && cfg.loss != "InfoNCE")
        fail(errc::invalid_argument, "unknown loss: " + cfg.loss);
}

}  // namespace

PeftConfig default_peft_for(const TaskSpec& task, std::size_t rank) {
    PeftConfig c;
    c.technique = PeftTechnique::LoRA;
    c.rank = rank;
    c.alpha = static_cast<double>(rank);
    const std::string comp =
        task.path == 3 ? encoder_component_name(task.inputs.front()) : std::string("Backbone");
    c.targets = {{comp, TargetRole::Query}, {comp, TargetRole::Value}};
    return c;
}

TrainResult fine_tune_subset(const FoundationModel& model, const TaskSpec& task,
                             const SyntheticDataset& data, const PeftConfig& peft, const TrainConfig& cfg,
                             const std::vector<std::size_t>& train_indices) {
    if (!model.executable()) fail(errc::unsupported, "fine_tune needs the desk profile");
    check_compatibility(task, data);
    validate_config(cfg);
    if (train_indices.empty()) fail(errc::invalid_argument, "empty training subset");
    for (auto i : train_indices)
        if (i >= data.train.size()) fail(errc::invalid_argument, "train index out of range");

    TrainResult result;
    result.pack = create_adapter(task.id, peft, ModelDims::desk(), cfg.seed);
    TrainState st = state_from_pack(result.pack, task, model.desk_config());
    result.frozen_hash_before = frozen_hash(model, st);

    const StepInputs inputs = prepare_inputs(model, task, data);
    rng batch_gen = rng(cfg.seed).fork("batches:" + task.id);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<std::size_t> batch;
        for (std::size_t i = 0; i < cfg.batch; ++i)
            batch.push_back(train_indices[batch_gen.below(train_indices.size())]);
        TapeContext tc(st);
        const StepResult r = run_step(tc, model, st, task, data, inputs, batch, cfg, true);
        tc.sgd_update(cfg.lr);
        result.log.push_back({step, r.loss, r.metric});
    }

    result.frozen_hash_after = frozen_hash(model, st);
    if (result.frozen_hash_after != result.frozen_hash_before)
        fail(errc::internal, "frozen parameters were mutated during fine_tune");
    state_to_pack(st, result.pack);
    return result;
}

TrainResult fine_tune(const FoundationModel& model, const TaskSpec& task, const SyntheticDataset& data,
                      const PeftConfig& peft, const TrainConfig& cfg) {
    std::vector<std::size_t> all(data.train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return fine_tune_subset(model, task, data, peft, cfg, all);
}

namespace {

std::string generate_lm(const FoundationModel& model, const TaskSpec& task, const std::string& input,
                        std::size_t max_tokens) {
    ExecOptions opts;
    opts.max_tokens = max_tokens;
    // fill every template slot explicitly so the payload rides after the
    // separator rather than being consumed by slot auto-fill
    for (const auto& name : task.prompt.slot_names()) opts.slots[name] = input;
    const auto out = model.execute(task, {text_payload(input)}, opts, nullptr);
    return out.text;
}

}  // namespace

double evaluate(const FoundationModel& model, const TaskSpec& task, const SyntheticDataset& data,
                const AdapterPack* pack) {
    if (!model.executable()) fail(errc::unsupported, "evaluate needs the desk profile");
    check_compatibility(task, data);
    if (data.eval.empty()) fail(errc::invalid_argument, "empty eval split");

    FoundationModel snapshot = model;  // evaluation never mutates the caller's model
    if (pack) {
        if (snapshot.has_adapter(pack->task_id)) snapshot.detach(pack->task_id);
        snapshot.attach(*pack);
    }

    std::vector<std::string> predictions, references;
    if (task.path == 3) {
        ExecOptions opts;
        opts.labels = data.labels;
        for (const auto& s : data.eval) {
            const auto out = snapshot.execute(task, {s.payload}, opts, nullptr);
            predictions.push_back(out.text);
            references.push_back(data.labels[s.label]);
        }
    } else if (task.path == 2) {
        for (const auto& s : data.eval) {
            const auto eq = s.text.find('=');
            const std::string input = eq == std::string::npos ? s.text : s.text.substr(0, eq + 1);
            const std::string expect = eq == std::string::npos ? "" : s.text.substr(eq + 1);
            predictions.push_back(generate_lm(snapshot, task, input, expect.size() + 2));
            references.push_back(expect);
        }
    } else if (task.path == 1) {
        ExecOptions opts;
        for (const auto& s : data.eval) {
            opts.max_tokens = s.text.size() + 2;
            const auto out = snapshot.execute(task, {s.payload}, opts, nullptr);
            predictions.push_back(out.text);
            references.push_back(s.text);
        }
    } else {
        fail(errc::unsupported, "evaluation is defined for paths 1-3");
    }

    const std::string& metric = task.metric;
    if (metric == "accuracy" || metric == "recall" || metric == "rank")
        return accuracy(predictions, references);
    if (metric == "F1") {
        std::vector<int> p, r;
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            p.push_back(predictions[i] == references[i] ? 1 : 0);
            r.push_back(1);
        }
        return f1_binary(p, r);
    }
    if (metric == "BLEU" || metric == "ROUGE1") return bleu4(predictions, references);
    if (metric == "WER") return word_error_rate(predictions, references);
    fail(errc::unsupported, "metric not implemented at desk scale: " + metric);
}

double eval_loss(const FoundationModel& model, const TaskSpec& task, const SyntheticDataset& data,
                 const AdapterPack* pack, const TrainConfig& cfg) {
    if (!model.executable()) fail(errc::unsupported, "eval_loss needs the desk profile");
    check_compatibility(task, data);
    if (data.eval.empty()) fail(errc::invalid_argument, "empty eval split");

    AdapterPack fresh = pack ? *pack : create_adapter(task.id, default_peft_for(task, 1), ModelDims::desk(), 0);
    TrainState st = state_from_pack(fresh, task, model.desk_config());

    SyntheticDataset view = data;  // evaluate losses over the eval split
    view.train = data.eval;
    const StepInputs inputs = prepare_inputs(model, task, view);
    double total = 0.0;
    std::size_t batches = 0;
    const std::size_t chunk = task.path == 3 ? view.train.size() : 8;
    for (std::size_t start = 0; start < view.train.size(); start += chunk) {
        std::vector<std::size_t> batch;
        for (std::size_t i = start; i < std::min(view.train.size(), start + chunk); ++i) batch.push_back(i);
        TapeContext tc(st);
        total += run_step(tc, model, st, task, view, inputs, batch, cfg, false).loss;
        ++batches;
    }
    return total / static_cast<double>(batches);
}

std::vector<double> few_shot_curve(const FoundationModel& model, const TaskSpec& task,
                                   const SyntheticDataset& data, const std::vector<double>& fractions,
                                   const PeftConfig& peft, const TrainConfig& cfg, std::size_t repeats) {
    if (fractions.empty()) fail(errc::invalid_argument, "no fractions given");
    const std::size_t n_train = data.train.size();
    const std::size_t classes = data.labels.empty() ? 1 : data.labels.size();
    std::vector<std::size_t> counts;
    for (double f : fractions) {
        if (f <= 0.0 || f > 1.0) fail(errc::invalid_argument, "fractions must lie in (0, 1]");
        const auto n = static_cast<std::size_t>(std::llround(f * static_cast<double>(n_train)));
        if (n < classes)
            fail(errc::invalid_argument, "fraction yields fewer than one sample per class");
        counts.push_back(n);
    }

    std::vector<double> means(fractions.size(), 0.0);
    for (std::size_t rep = 0; rep < repeats; ++rep) {
        TrainConfig run_cfg = cfg;
        run_cfg.seed = cfg.seed + rep;
        std::vector<std::size_t> perm(n_train);
        for (std::size_t i = 0; i < n_train; ++i) perm[i] = i;
        rng shuffle_gen = rng(run_cfg.seed).fork("fewshot");
        for (std::size_t i = n_train; i > 1; --i)
            std::swap(perm[i - 1], perm[shuffle_gen.below(i)]);
        for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
            std::vector<std::size_t> subset(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(counts[fi]));
            std::sort(subset.begin(), subset.end());  // nested and order-stable: fraction 1 is the full set
            const auto result = fine_tune_subset(model, task, data, peft, run_cfg, subset);
            means[fi] += evaluate(model, task, data, &result.pack);
        }
    }
    for (auto& m : means) m /= static_cast<double>(repeats);
    return means;
}

std::string training_log_csv(const std::vector<TrainLogEntry>& log) {
    std::ostringstream out;
    out << "step,loss,metric\n";
    out << std::setprecision(12);
    for (const auto& e : log) out << e.step << "," << e.loss << "," << e.metric << "\n";
    return out.str();
}

GradCheckResult gradient_check(const FoundationModel& model, const TaskSpec& task,
                               const SyntheticDataset& data, const PeftConfig& peft,
                               const TrainConfig& cfg, std::size_t points, double eps) {
    if (!model.executable()) fail(errc::unsupported, "gradient_check needs the desk profile");
    check_compatibility(task, data);

    AdapterPack pack = create_adapter(task.id, peft, ModelDims::desk(), cfg.seed);
    TrainState st = state_from_pack(pack, task, model.desk_config());
    // move parameters off their zero init so every gradient path is live
    rng noise = rng(cfg.seed).fork("gradcheck");
    for (auto& p : st.loras) {
        for (auto& v : p.a.data) v = noise.uniform(-0.1, 0.1);
        for (auto& v : p.b.data) v = noise.uniform(-0.1, 0.1);
    }
    if (st.has_proj) {
        for (auto& v : st.proj_w.data) v = noise.uniform(-0.1, 0.1);
        for (auto& v : st.proj_b.data) v = noise.uniform(-0.1, 0.1);
    }

    std::vector<std::size_t> batch;
    for (std::size_t i = 0; i < std::min<std::size_t>(cfg.batch, data.train.size()); ++i) batch.push_back(i);
    const StepInputs inputs = prepare_inputs(model, task, data);

    const auto loss_at = [&]() {
        TapeContext tc(st);
        return run_step(tc, model, st, task, data, inputs, batch, cfg, false).loss;
    };

    // analytic gradients once
    TapeContext tc(st);
    run_step(tc, model, st, task, data, inputs, batch, cfg, true);

    struct Probe {
        Matrix* tensor;
        const Matrix* grad;
    };
    std::vector<Probe> probes;
    if (st.has_proj && st.proj_trainable) probes.push_back({&st.proj_w, &tc.g.grad(tc.proj_w)});
    for (std::size_t i = 0; i < st.loras.size(); ++i) {
        if (!st.loras[i].trainable) continue;
        probes.push_back({&st.loras[i].a, nullptr});
        probes.push_back({&st.loras[i].b, nullptr});
        break;  // one LoRA pair
    }
    // map lora probes to their tape gradients
    std::size_t binding_idx = 0;
    for (auto& probe : probes) {
        if (probe.grad) continue;
        for (const auto& [id, dst] : tc.bindings) {
            if (dst == probe.tensor) probe.grad = &tc.g.grad(id);
        }
        (void)binding_idx;
    }

    GradCheckResult out;
    rng pick = rng(cfg.seed).fork("gradcheck-points");
    for (std::size_t p = 0; p < points; ++p) {
        Probe& probe = probes[p % probes.size()];
        if (!probe.grad) continue;
        const std::size_t i = pick.below(probe.tensor->data.size());
        const double theta = probe.tensor->data[i];
        const double h = eps * std::max(1.0, std::fabs(theta));
        probe.tensor->data[i] = theta + h;
        const double lp = loss_at();
        probe.tensor->data[i] = theta - h;
        const double lm = loss_at();
        probe.tensor->data[i] = theta;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = probe.grad->data[i];
        const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
        out.max_rel_error = std::max(out.max_rel_error, std::fabs(fd - an) / denom);
        ++out.points;
    }
    return out;
}

}  // namespace m4
