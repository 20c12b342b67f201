#include "m4/m4.h"

#include <cstdlib>
#include <cstring>
#include <json.hpp>

#include "m4/cost.hpp"
#include "m4/model.hpp"
#include "m4/service.hpp"
#include "m4/trainer.hpp"

using nlohmann::json;

struct m4_model {
    m4::FoundationModel impl;
};
struct m4_registry {
    m4::TaskRegistry impl;
};
struct m4_pack {
    m4::AdapterPack impl;
};
struct m4_service {
    std::unique_ptr<m4::FirmwareService> impl;
};

namespace {

thread_local std::string g_last_error;

int status_of(m4::errc code) {
    switch (code) {
        case m4::errc::ok: return M4_OK;
        case m4::errc::invalid_argument: return M4_E_INVALID;
        case m4::errc::io: return M4_E_IO;
        case m4::errc::parse: return M4_E_PARSE;
        case m4::errc::not_found: return M4_E_NOT_FOUND;
        case m4::errc::duplicate: return M4_E_DUPLICATE;
        case m4::errc::dimension_mismatch: return M4_E_DIMENSION;
        case m4::errc::budget_exhausted: return M4_E_BUDGET;
        case m4::errc::unsupported: return M4_E_UNSUPPORTED;
        case m4::errc::internal: return M4_E_INTERNAL;
    }
    return M4_E_INTERNAL;
}

template <typename F>
int guard(F&& f) {
    try {
        f();
        g_last_error.clear();
        return M4_OK;
    } catch (const m4::error& e) {
        g_last_error = e.what();
        return status_of(e.code);
    } catch (const json::exception& e) {
        g_last_error = e.what();
        return M4_E_PARSE;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return M4_E_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    std::memcpy(out, s.data(), s.size() + 1);
    return out;
}

void require(bool ok, const char* what) {
    if (!ok) m4::fail(m4::errc::invalid_argument, what);
}

json parse_options(const char* options_json) {
    require(options_json != nullptr, "options JSON is null");
    return json::parse(options_json);
}

m4::Profile profile_from(const char* name) {
    require(name != nullptr, "profile is null");
    const std::string s = name;
    if (s == "desk") return m4::Profile::Desk;
    if (s == "paper") return m4::Profile::Paper;
    m4::fail(m4::errc::invalid_argument, "profile must be 'desk' or 'paper'");
}

m4::PeftConfig peft_from_json(const json& j) {
    m4::PeftConfig c;
    c.technique = m4::technique_from_name(j.value("technique", std::string("LoRA")));
    c.rank = j.value("rank", std::size_t(4));
    c.alpha = j.value("alpha", static_cast<double>(c.rank));
    if (j.contains("targets")) {
        for (const auto& t : j.at("targets")) {
            const std::string role = t.at("role").get<std::string>();
            if (role != "query" && role != "value")
                m4::fail(m4::errc::parse, "target role must be 'query' or 'value'");
            c.targets.push_back({t.at("component").get<std::string>(),
                                 role == "query" ? m4::TargetRole::Query : m4::TargetRole::Value});
        }
    }
    return c;
}

m4::SyntheticDataset dataset_from_json(const json& j) {
    return m4::SyntheticDataset::generate(
        m4::dataset_kind_from_name(j.at("kind").get<std::string>()), j.value("seed", std::uint64_t(0)),
        j.at("size").get<std::size_t>(), m4::modality_from_name(j.value("modality", std::string("imu"))),
        j.value("zipf", 0.0));
}

m4::PeftConfig peft_for_task(const json& opts, const m4::TaskSpec& task) {
    if (!opts.contains("peft")) return m4::default_peft_for(task, 4);
    m4::PeftConfig given = peft_from_json(opts.at("peft"));
    if (!given.targets.empty()) return given;
    // rank/alpha overrides with the per-path default targets
    m4::PeftConfig def = m4::default_peft_for(task, given.rank);
    def.alpha = given.alpha;
    def.technique = given.technique;
    return def;
}

m4::TrainConfig train_config_from_json(const json& j) {
    m4::TrainConfig cfg;
    cfg.steps = j.value("steps", cfg.steps);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.tau = j.value("tau", cfg.tau);
    cfg.loss = j.value("loss", cfg.loss);
    return cfg;
}

json task_to_json(const m4::TaskSpec& t) {
    json j;
    j["id"] = t.id;
    j["category"] = m4::category_name(t.category);
    j["task"] = t.task;
    j["dataset"] = t.dataset;
    std::string input;
    for (std::size_t i = 0; i < t.inputs.size(); ++i) {
        if (i) input += "+";
        input += m4::modality_name(t.inputs[i]);
    }
    j["input"] = input;
    j["output"] = m4::output_kind_name(t.output);
    j["path"] = t.path;
    j["prompt"] = {{"target", t.prompt.target == m4::PromptTarget::TextEmbedding ? "text-embedding" : "backbone"},
                   {"template", t.prompt.text}};
    j["metric"] = t.metric;
    j["baseline"] = t.baseline;
    j["result"] = t.result;
    j["result_raw"] = t.result_raw;
    j["from_orin"] = t.from_orin;
    return j;
}

m4::Payload payload_from_json(const json& in) {
    return m4::payload_from_wire(in.at("modality").get<std::string>(),
                                 m4::base64_decode(in.at("data").get<std::string>()));
}

}  // namespace

extern "C" {

const char* m4_version(void) { return "m4 0.1.0"; }

const char* m4_errstr(int code) {
    switch (code) {
        case M4_OK: return "ok";
        case M4_E_INVALID: return "invalid argument";
        case M4_E_IO: return "io error";
        case M4_E_PARSE: return "parse error";
        case M4_E_NOT_FOUND: return "not found";
        case M4_E_DUPLICATE: return "duplicate";
        case M4_E_DIMENSION: return "dimension mismatch";
        case M4_E_BUDGET: return "budget exhausted";
        case M4_E_UNSUPPORTED: return "unsupported";
        case M4_E_INTERNAL: return "internal error";
    }
    return "unknown status";
}

const char* m4_last_error(void) { return g_last_error.c_str(); }

void m4_string_free(char* s) { std::free(s); }

int m4_model_build(const char* profile, uint64_t seed, m4_model** out) {
    return guard([&] {
        require(out != nullptr, "output handle is null");
        *out = new m4_model{m4::FoundationModel::build(profile_from(profile), seed)};
    });
}

void m4_model_free(m4_model* model) { delete model; }

int m4_model_weight_hash(const m4_model* model, char* hash_hex) {
    return guard([&] {
        require(model != nullptr && hash_hex != nullptr, "null argument");
        const std::string h = model->impl.weight_hash();
        std::memcpy(hash_hex, h.c_str(), h.size() + 1);
    });
}

int m4_model_component_table(const m4_model* model, char** json_out) {
    return guard([&] {
        require(model != nullptr && json_out != nullptr, "null argument");
        json rows = json::array();
        for (const auto& s : model->impl.specs()) {
            rows.push_back({{"name", s.name},
                            {"role", s.role},
                            {"architecture", s.architecture},
                            {"params", s.params},
                            {"format", m4::format_name(s.format)},
                            {"gflops", s.gflops}});
        }
        *json_out = dup_string(rows.dump(1));
    });
}

int m4_model_quantize(m4_model* model, const char* component, const char* format) {
    return guard([&] {
        require(model != nullptr && component != nullptr && format != nullptr, "null argument");
        const auto fmt = m4::format_from_name(format);
        const std::string comp = component;
        if (comp == "all") {
            for (const char* c : {"IMG_enc", "TXT_enc", "AUD-B_enc", "AUD-I_enc", "IMU_enc", "Backbone",
                                  "Projection", "GEN_dec", "IMG_dec"})
                model->impl.quantize_component(c, fmt);
        } else {
            model->impl.quantize_component(comp, fmt);
        }
    });
}

int m4_registry_open(const char* path, m4_registry** out) {
    return guard([&] {
        require(path != nullptr && out != nullptr, "null argument");
        *out = new m4_registry{m4::TaskRegistry::from_file(path)};
    });
}

void m4_registry_free(m4_registry* reg) { delete reg; }

int m4_registry_size(const m4_registry* reg, size_t* out) {
    return guard([&] {
        require(reg != nullptr && out != nullptr, "null argument");
        *out = reg->impl.size();
    });
}

int m4_registry_task_json(const m4_registry* reg, const char* task_id, char** json_out) {
    return guard([&] {
        require(reg != nullptr && task_id != nullptr && json_out != nullptr, "null argument");
        *json_out = dup_string(task_to_json(reg->impl.at(task_id)).dump(1));
    });
}

int m4_registry_summary(const m4_registry* reg, char** json_out) {
    return guard([&] {
        require(reg != nullptr && json_out != nullptr, "null argument");
        json j;
        j["tasks"] = reg->impl.size();
        json counts;
        for (const auto& [cat, n] : reg->impl.category_counts()) counts[m4::category_name(cat)] = n;
        j["categories"] = counts;
        json paths;
        json violations = json::array();
        std::map<int, std::size_t> per_path;
        for (const auto& t : reg->impl.tasks()) {
            ++per_path[t.path];
            for (const auto& v : m4::validate_task(t)) violations.push_back({{"task", t.id}, {"rule", v}});
        }
        for (const auto& [p, n] : per_path) paths["path-" + std::to_string(p)] = n;
        j["paths"] = paths;
        j["violations"] = violations;
        *json_out = dup_string(j.dump(1));
    });
}

int m4_route(const m4_registry* reg, const char* task_id, char** json_out) {
    return guard([&] {
        require(reg != nullptr && task_id != nullptr && json_out != nullptr, "null argument");
        const auto plan = m4::route(reg->impl.at(task_id));
        json j;
        j["path"] = plan.path;
        j["activated"] = plan.activated;
        j["generator"] = plan.generator;
        *json_out = dup_string(j.dump(1));
    });
}

int m4_render_prompt(const m4_registry* reg, const char* task_id, const char* slots_json, char** out) {
    return guard([&] {
        require(reg != nullptr && task_id != nullptr && out != nullptr, "null argument");
        std::map<std::string, std::string> slots;
        if (slots_json && *slots_json) {
            const json j = json::parse(slots_json);
            for (auto it = j.begin(); it != j.end(); ++it) slots[it.key()] = it.value().get<std::string>();
        }
        *out = dup_string(m4::render_prompt(reg->impl.at(task_id), slots));
    });
}

int m4_pack_create(const char* profile, const char* task_id, const char* config_json, uint64_t seed,
                   m4_pack** out) {
    return guard([&] {
        require(task_id != nullptr && out != nullptr, "null argument");
        const auto dims =
            profile_from(profile) == m4::Profile::Desk ? m4::ModelDims::desk() : m4::ModelDims::paper();
        const auto config = peft_from_json(parse_options(config_json));
        *out = new m4_pack{m4::create_adapter(task_id, config, dims, seed)};
    });
}

int m4_pack_load(const char* path, m4_pack** out) {
    return guard([&] {
        require(path != nullptr && out != nullptr, "null argument");
        *out = new m4_pack{m4::AdapterPack::load(path)};
    });
}

int m4_pack_save(const m4_pack* pack, const char* path) {
    return guard([&] {
        require(pack != nullptr && path != nullptr, "null argument");
        pack->impl.save(path);
    });
}

int m4_pack_info(const m4_pack* pack, char** json_out) {
    return guard([&] {
        require(pack != nullptr && json_out != nullptr, "null argument");
        const auto& p = pack->impl;
        json j;
        j["task"] = p.task_id;
        j["technique"] = m4::technique_name(p.config.technique);
        j["rank"] = p.config.rank;
        j["alpha"] = p.config.alpha;
        j["targets"] = p.targets.size();
        j["trainable_params"] = p.trainable_params();
        j["bytes"] = p.payload_bytes();
        *json_out = dup_string(j.dump(1));
    });
}

void m4_pack_free(m4_pack* pack) { delete pack; }

int m4_attach(m4_model* model, const m4_pack* pack) {
    return guard([&] {
        require(model != nullptr && pack != nullptr, "null argument");
        model->impl.attach(pack->impl);
    });
}

int m4_detach(m4_model* model, const char* task_id) {
    return guard([&] {
        require(model != nullptr && task_id != nullptr, "null argument");
        model->impl.detach(task_id);
    });
}

int m4_execute(const m4_model* model, const m4_registry* reg, const char* task_id,
               const char* request_json, char** response_json) {
    return guard([&] {
        require(model != nullptr && reg != nullptr && task_id != nullptr && response_json != nullptr,
                "null argument");
        const json req = parse_options(request_json);
        std::vector<m4::Payload> payloads;
        if (req.contains("input")) payloads.push_back(payload_from_json(req.at("input")));
        if (req.contains("inputs"))
            for (const auto& in : req.at("inputs")) payloads.push_back(payload_from_json(in));
        m4::ExecOptions opts;
        if (req.contains("labels"))
            for (const auto& l : req.at("labels")) opts.labels.push_back(l.get<std::string>());
        if (req.contains("slots"))
            for (auto it = req.at("slots").begin(); it != req.at("slots").end(); ++it)
                opts.slots[it.key()] = it.value().get<std::string>();
        opts.max_tokens = req.value("max_tokens", opts.max_tokens);

        const auto& task = reg->impl.at(task_id);
        m4::OpTrace trace;
        const auto out = model->impl.execute(task, payloads, opts, &trace);
        const auto plan = m4::route(task);
        const auto summary = trace.summary();

        json j;
        j["task"] = task.id;
        j["kind"] = m4::output_kind_name(out.kind);
        if (out.kind == m4::OutputKind::Label) {
            j["label"] = out.text;
            j["label_index"] = out.label_index;
            j["scores"] = out.scores;
        } else if (out.kind == m4::OutputKind::Text) {
            j["text"] = out.text;
            j["text_b64"] = m4::base64_encode(out.text.data(), out.text.size());  // exact bytes
        } else if (out.kind == m4::OutputKind::Speech) {
            j["samples"] = out.waveform.size();
            j["data"] = m4::base64_encode(out.waveform.data(), out.waveform.size() * sizeof(double));
        } else {
            j["pixels"] = out.image.size();
            j["data"] = m4::base64_encode(out.image.data(), out.image.size() * sizeof(double));
        }
        json trace_j;
        trace_j["flops"] = summary.total_flops;
        std::vector<std::string> kinds;
        for (auto k : summary.kinds) kinds.push_back(m4::op_kind_name(k));
        trace_j["op_kinds"] = kinds;
        const auto comp_set = trace.components();
        trace_j["components"] = std::vector<std::string>(comp_set.begin(), comp_set.end());
        j["trace"] = trace_j;
        const auto paper = m4::FoundationModel::build(m4::Profile::Paper, 0);
        const auto cost = paper.activation_cost(plan);
        j["cost"] = {{"path", plan.path},
                     {"params_activated", cost.params},
                     {"gflops_activated", cost.gflops}};
        // generated byte strings may not be UTF-8; keep the JSON valid
        *response_json = dup_string(j.dump(1, ' ', false, json::error_handler_t::replace));
    });
}

int m4_train(const m4_model* model, const m4_registry* reg, const char* options_json, m4_pack** out_pack,
             char** log_csv) {
    return guard([&] {
        require(model != nullptr && reg != nullptr && out_pack != nullptr, "null argument");
        const json opts = parse_options(options_json);
        const auto& task = reg->impl.at(opts.at("task").get<std::string>());
        const auto data = dataset_from_json(opts.at("dataset"));
        const auto cfg = train_config_from_json(opts.value("config", json::object()));
        const auto peft = peft_for_task(opts, task);
        auto result = m4::fine_tune(model->impl, task, data, peft, cfg);
        if (log_csv) *log_csv = dup_string(m4::training_log_csv(result.log));
        *out_pack = new m4_pack{std::move(result.pack)};
    });
}

int m4_evaluate(const m4_model* model, const m4_registry* reg, const m4_pack* pack,
                const char* options_json, char** report_json) {
    return guard([&] {
        require(model != nullptr && reg != nullptr && report_json != nullptr, "null argument");
        const json opts = parse_options(options_json);
        const auto& task = reg->impl.at(opts.at("task").get<std::string>());
        const auto data = dataset_from_json(opts.at("dataset"));
        const double value = m4::evaluate(model->impl, task, data, pack ? &pack->impl : nullptr);
        json j;
        j["task"] = task.id;
        j["metric"] = task.metric;
        j["value"] = value;
        j["eval_samples"] = data.eval.size();
        if (opts.value("with_loss", false)) {
            const auto cfg = train_config_from_json(opts.value("config", json::object()));
            j["eval_loss"] = m4::eval_loss(model->impl, task, data, pack ? &pack->impl : nullptr, cfg);
        }
        *report_json = dup_string(j.dump(1));
    });
}

int m4_few_shot(const m4_model* model, const m4_registry* reg, const char* options_json,
                char** report_json) {
    return guard([&] {
        require(model != nullptr && reg != nullptr && report_json != nullptr, "null argument");
        const json opts = parse_options(options_json);
        const auto& task = reg->impl.at(opts.at("task").get<std::string>());
        const auto data = dataset_from_json(opts.at("dataset"));
        const auto cfg = train_config_from_json(opts.value("config", json::object()));
        const auto peft = peft_for_task(opts, task);
        const auto fractions = opts.at("fractions").get<std::vector<double>>();
        const auto repeats = opts.value("repeats", std::size_t(5));
        const auto means = m4::few_shot_curve(model->impl, task, data, fractions, peft, cfg, repeats);
        json j;
        j["task"] = task.id;
        j["fractions"] = fractions;
        j["means"] = means;
        j["repeats"] = repeats;
        *report_json = dup_string(j.dump(1));
    });
}

namespace {

std::vector<m4::ComponentSpec> components_from_options(const json& opts) {
    if (opts.contains("components")) return m4::load_component_table(opts.at("components").get<std::string>());
    return m4::paper_component_table();
}

std::optional<m4::NumericFormat> backbone_format_from(const json& opts) {
    const std::string fmt = opts.value("format", std::string("table"));
    if (fmt == "table") return std::nullopt;
    return m4::format_from_name(fmt);
}

}  // namespace

int m4_cost_storage_curve(const char* options_json, char** csv_out) {
    return guard([&] {
        require(csv_out != nullptr, "null argument");
        const json opts = parse_options(options_json);
        const auto calibration = m4::load_ts_calibration(opts.at("calibration").get<std::string>());
        const auto curve = m4::storage_curve(components_from_options(opts), calibration,
                                             opts.value("tasks", calibration.size()),
                                             backbone_format_from(opts),
                                             opts.value("quantize_generators", false));
        *csv_out = dup_string(m4::storage_curve_csv(curve));
    });
}

int m4_cost_memory(const char* options_json, char** report_json) {
    return guard([&] {
        require(report_json != nullptr, "null argument");
        const json opts = parse_options(options_json);
        const auto calibration = m4::load_ts_calibration(opts.at("calibration").get<std::string>());
        const auto r = m4::memory_footprint(
            components_from_options(opts), calibration, opts.value("tasks", calibration.size()),
            opts.at("budget").get<std::uint64_t>(), backbone_format_from(opts),
            opts.value("quantize_generators", false), opts.value("buffer_fraction", 0.02));
        json j;
        j["fm_component_bytes"] = r.fm_component_bytes;
        j["fm_adapter_bytes"] = r.fm_adapter_bytes;
        j["fm_weight_bytes"] = r.fm_weight_bytes;
        j["fm_peak_bytes"] = r.fm_peak_bytes;
        j["fm_resident_adapters"] = r.fm_resident_adapters;
        j["ts_resident_models"] = r.ts_resident_models;
        j["ts_resident_bytes"] = r.ts_resident_bytes;
        j["adapter_increment"] = r.adapter_increment;
        *report_json = dup_string(j.dump(1));
    });
}

int m4_whatif(const char* options_json, char** csv_out) {
    return guard([&] {
        require(csv_out != nullptr, "null argument");
        const json opts = parse_options(options_json);
        const auto rows = m4::load_whatif_table(opts.at("table").get<std::string>());
        *csv_out = dup_string(m4::whatif_csv(rows, opts.value("speedup", 20.0)));
    });
}

int m4_census(const char* options_json, char** report_json) {
    return guard([&] {
        require(report_json != nullptr, "null argument");
        const json opts = parse_options(options_json);
        const auto taxonomy = m4::OperatorTaxonomy::from_file(opts.at("taxonomy").get<std::string>());
        const auto profiles = m4::load_profiles(opts.at("profiles").get<std::string>(), taxonomy);
        const auto& profile = m4::find_profile(profiles, opts.at("profile").get<std::string>());
        const auto inventories =
            m4::load_inventories(opts.at("inventories").get<std::string>(), taxonomy);
        const auto result = m4::census(inventories, profile, taxonomy);
        json j;
        j["profile"] = profile.name;
        j["inventories"] = inventories.size();
        j["distinct"] = result.distinct;
        j["supported"] = result.supported;
        j["coverage"] = result.coverage;
        if (opts.value("prefix_counts", false)) j["prefix_union_counts"] = m4::prefix_union_counts(inventories);
        *report_json = dup_string(j.dump(1));
    });
}

int m4_lora_count(const char* options_json, char** report_json) {
    return guard([&] {
        require(report_json != nullptr, "null argument");
        const json opts = parse_options(options_json);
        const auto dims = profile_from(opts.value("profile", std::string("paper")).c_str()) == m4::Profile::Desk
                              ? m4::ModelDims::desk()
                              : m4::ModelDims::paper();
        const auto config = peft_from_json(opts);
        const auto count = m4::peft_param_count(config, dims);
        json j;
        j["technique"] = m4::technique_name(config.technique);
        j["rank"] = config.rank;
        j["trainable_params"] = count;
        j["ratio_vs_backbone"] = static_cast<double>(count) / 6.28e9;
        *report_json = dup_string(j.dump(1));
    });
}

int m4_service_start(const m4_model* model, const m4_registry* reg, const char* socket_path,
                     uint64_t budget_bytes, m4_service** out) {
    return guard([&] {
        require(model != nullptr && reg != nullptr && out != nullptr, "null argument");
        m4::ServiceConfig cfg;
        if (socket_path && *socket_path) cfg.socket_path = socket_path;
        cfg.budget_bytes = m4::budget_from_env(budget_bytes ? budget_bytes : cfg.budget_bytes);
        auto svc = std::make_unique<m4::FirmwareService>(model->impl, reg->impl, cfg);
        svc->start();
        *out = new m4_service{std::move(svc)};
    });
}

int m4_service_request(m4_service* svc, const char* line, char** response_json) {
    return guard([&] {
        require(svc != nullptr && line != nullptr && response_json != nullptr, "null argument");
        *response_json = dup_string(svc->impl->handle_line(line));
    });
}

int m4_service_status(m4_service* svc, char** json_out) {
    return guard([&] {
        require(svc != nullptr && json_out != nullptr, "null argument");
        const auto s = svc->impl->status();
        json j;
        j["registered_tasks"] = s.registered_tasks;
        j["resident_tasks"] = s.resident_tasks;
        j["model_bytes"] = s.model_bytes;
        j["adapter_bytes"] = s.adapter_bytes;
        j["bytes_used"] = s.bytes_used;
        j["budget_bytes"] = s.budget_bytes;
        j["invocations"] = s.counters.invocations;
        j["cold_starts"] = s.counters.cold_starts;
        j["rejections"] = s.counters.rejections;
        j["model_hash"] = s.model_hash;
        *json_out = dup_string(j.dump(1));
    });
}

int m4_service_stop(m4_service* svc) {
    return guard([&] {
        require(svc != nullptr, "null argument");
        svc->impl->stop();
    });
}

void m4_service_free(m4_service* svc) { delete svc; }

}  // extern "C"
