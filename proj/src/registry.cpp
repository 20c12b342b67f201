#include "m4/registry.hpp"

#include <algorithm>
#include <json.hpp>

namespace m4 {

using nlohmann::json;

const char* category_name(Category c) {
    switch (c) {
        case Category::NLP: return "NLP";
        case Category::CV: return "CV";
        case Category::Audio: return "Audio";
        case Category::Sensing: return "Sensing";
        case Category::Multimodal: return "Multimodal";
    }
    return "?";
}

Category category_from_name(const std::string& s) {
    if (s == "NLP") return Category::NLP;
    if (s == "CV") return Category::CV;
    if (s == "Audio") return Category::Audio;
    if (s == "Sensing") return Category::Sensing;
    if (s == "Multimodal") return Category::Multimodal;
    fail(errc::parse, "unknown category: " + s);
}

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::Text: return "text";
        case Modality::Image: return "image";
        case Modality::AudioBackground: return "audio_background";
        case Modality::AudioIntent: return "audio_intent";
        case Modality::Imu: return "imu";
    }
    return "?";
}

Modality modality_from_name(const std::string& s) {
    if (s == "text") return Modality::Text;
    if (s == "image") return Modality::Image;
    if (s == "audio_background") return Modality::AudioBackground;
    if (s == "audio_intent") return Modality::AudioIntent;
    if (s == "imu") return Modality::Imu;
    fail(errc::parse, "unknown modality: " + s);
}

const char* output_kind_name(OutputKind k) {
    switch (k) {
        case OutputKind::Text: return "text";
        case OutputKind::Label: return "label";
        case OutputKind::Image: return "image";
        case OutputKind::Speech: return "speech";
    }
    return "?";
}

OutputKind output_kind_from_name(const std::string& s) {
    if (s == "text") return OutputKind::Text;
    if (s == "label") return OutputKind::Label;
    if (s == "image") return OutputKind::Image;
    if (s == "speech") return OutputKind::Speech;
    fail(errc::parse, "unknown output kind: " + s);
}

const std::vector<std::string> kMetricNames = {
    "accuracy", "F1",  "BLEU", "ROUGE1", "WER",  "recall", "mAP",  "mIoU",
    "SSIM",     "MAE", "MSE",  "MCD",    "FID",  "AP",     "rank", "CLIP-score"};

bool metric_known(const std::string& name) {
    return std::find(kMetricNames.begin(), kMetricNames.end(), name) != kMetricNames.end();
}

std::vector<std::string> PromptTemplate::slot_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '[') continue;
        const auto end = text.find(']', i);
        if (end == std::string::npos) fail(errc::parse, "unterminated slot in prompt template");
        names.push_back(text.substr(i + 1, end - i - 1));
        i = end;
    }
    return names;
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& slots) const {
    const auto names = slot_names();
    for (const auto& [k, v] : slots) {
        if (std::find(names.begin(), names.end(), k) == names.end())
            fail(errc::invalid_argument, "unknown prompt slot: " + k);
    }
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '[') {
            out.push_back(text[i]);
            continue;
        }
        const auto end = text.find(']', i);
        const std::string name = text.substr(i + 1, end - i - 1);
        auto it = slots.find(name);
        if (it == slots.end()) fail(errc::invalid_argument, "missing prompt slot: " + name);
        out += it->second;
        i = end;
    }
    return out;
}

namespace {

void check_fields(const json& obj, const std::vector<std::string>& allowed, const std::string& ctx) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            fail(errc::parse, ctx + ": unknown field '" + it.key() + "'");
    }
    for (const auto& k : allowed) {
        if (!obj.contains(k)) fail(errc::parse, ctx + ": missing field '" + k + "'");
    }
}

TaskSpec parse_task(const json& j) {
    if (!j.is_object()) fail(errc::parse, "task entry is not an object");
    const std::string ctx = j.value("id", std::string("<task>"));
    check_fields(j,
                 {"id", "category", "task", "dataset", "input", "output", "path", "prompt", "metric",
                  "baseline", "result", "result_raw", "from_orin"},
                 ctx);
    TaskSpec t;
    t.id = j.at("id").get<std::string>();
    t.category = category_from_name(j.at("category").get<std::string>());
    t.task = j.at("task").get<std::string>();
    t.dataset = j.at("dataset").get<std::string>();
    // '+'-separated modalities for multimodal inputs
    const std::string input = j.at("input").get<std::string>();
    std::size_t start = 0;
    while (start <= input.size()) {
        const auto plus = input.find('+', start);
        const std::string part = input.substr(start, plus == std::string::npos ? plus : plus - start);
        t.inputs.push_back(modality_from_name(part));
        if (plus == std::string::npos) break;
        start = plus + 1;
    }
    if (t.inputs.empty()) fail(errc::parse, ctx + ": empty input modality");
    t.output = output_kind_from_name(j.at("output").get<std::string>());
    t.path = j.at("path").get<int>();
    if (t.path < 1 || t.path > 4) fail(errc::parse, ctx + ": path out of range");
    const json& p = j.at("prompt");
    check_fields(p, {"target", "template"}, ctx + ".prompt");
    const std::string target = p.at("target").get<std::string>();
    if (target == "text-embedding")
        t.prompt.target = PromptTarget::TextEmbedding;
    else if (target == "backbone")
        t.prompt.target = PromptTarget::Backbone;
    else
        fail(errc::parse, ctx + ": unknown prompt target " + target);
    t.prompt.text = p.at("template").get<std::string>();
    t.prompt.slot_names();  // validates bracket syntax
    t.metric = j.at("metric").get<std::string>();
    if (!metric_known(t.metric)) fail(errc::parse, ctx + ": unknown metric " + t.metric);
    t.baseline = j.at("baseline").get<std::string>();
    t.result = j.at("result").get<double>();
    t.result_raw = j.at("result_raw").get<std::string>();
    t.from_orin = j.at("from_orin").get<bool>();
    return t;
}

}  // namespace

TaskRegistry TaskRegistry::from_file(const std::string& path) { return from_json_text(read_file(path)); }

TaskRegistry TaskRegistry::from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const std::exception& e) {
        fail(errc::parse, std::string("registry: invalid JSON: ") + e.what());
    }
    if (!doc.is_array()) fail(errc::parse, "registry: top level must be an array");
    TaskRegistry reg;
    for (const auto& entry : doc) {
        TaskSpec t = parse_task(entry);
        if (reg.index_.count(t.id)) fail(errc::duplicate, "registry: duplicate task id " + t.id);
        reg.index_[t.id] = reg.tasks_.size();
        reg.tasks_.push_back(std::move(t));
    }
    return reg;
}

const TaskSpec& TaskRegistry::at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) fail(errc::not_found, "unknown task id: " + id);
    return tasks_[it->second];
}

bool TaskRegistry::has(const std::string& id) const { return index_.count(id) != 0; }

std::map<Category, std::size_t> TaskRegistry::category_counts() const {
    std::map<Category, std::size_t> counts;
    for (const auto& t : tasks_) ++counts[t.category];
    return counts;
}

const char* encoder_component_name(Modality m) {
    switch (m) {
        case Modality::Text: return "TXT_enc";
        case Modality::Image: return "IMG_enc";
        case Modality::AudioBackground: return "AUD-B_enc";
        case Modality::AudioIntent: return "AUD-I_enc";
        case Modality::Imu: return "IMU_enc";
    }
    return "?";
}

namespace {

const char* encoder_for(Modality m) { return encoder_component_name(m); }

std::string generator_for(OutputKind k) {
    switch (k) {
        case OutputKind::Text:
        case OutputKind::Label: return "GEN_dec";
        case OutputKind::Image: return "IMG_dec";
        case OutputKind::Speech: return "TTS_dec";
    }
    return "GEN_dec";
}

void push_unique(std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
}

}  // namespace

RoutePlan route(const TaskSpec& task) {
    RoutePlan plan;
    plan.path = task.path;
    switch (task.path) {
        case 1: {
            for (auto m : task.inputs) push_unique(plan.activated, encoder_for(m));
            if (task.prompt.target == PromptTarget::TextEmbedding) push_unique(plan.activated, "TXT_enc");
            push_unique(plan.activated, "Projection");
            push_unique(plan.activated, "Backbone");
            plan.generator = generator_for(task.output);
            push_unique(plan.activated, plan.generator);
            break;
        }
        case 2: {
            plan.generator = generator_for(task.output);
            plan.activated = {"Backbone", plan.generator};
            break;
        }
        case 3: {
            for (auto m : task.inputs) push_unique(plan.activated, encoder_for(m));
            push_unique(plan.activated, "TXT_enc");  // label prompts are embedded
            push_unique(plan.activated, "Projection");
            break;
        }
        case 4: {
            plan.generator = generator_for(task.output);
            plan.activated = {plan.generator};
            break;
        }
        default:
            fail(errc::invalid_argument, "route: path out of range");
    }
    return plan;
}

std::vector<std::string> validate_task(const TaskSpec& task) {
    std::vector<std::string> violations;
    if (task.path == 2) {
        const bool all_text =
            std::all_of(task.inputs.begin(), task.inputs.end(), [](Modality m) { return m == Modality::Text; });
        if (!all_text) violations.push_back("Path-2 activates only the backbone and generator");
    }
    if (task.path == 3 && task.output != OutputKind::Label)
        violations.push_back("Path-3 classifies by embedding alignment and must output a label");
    if (task.path == 4) {
        if (task.output != OutputKind::Speech && task.output != OutputKind::Image)
            violations.push_back("Path-4 activates only a single generator");
    }
    return violations;
}

std::string render_prompt(const TaskSpec& task, const std::map<std::string, std::string>& slots) {
    return task.prompt.render(slots);
}

}  // namespace m4
