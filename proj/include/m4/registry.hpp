#pragma once

#include <map>
#include <string>
#include <vector>

#include "m4/util.hpp"

namespace m4 {

enum class Category { NLP, CV, Audio, Sensing, Multimodal };
enum class Modality { Text, Image, AudioBackground, AudioIntent, Imu };
enum class OutputKind { Text, Label, Image, Speech };
enum class PromptTarget { TextEmbedding, Backbone };

const char* category_name(Category c);
Category category_from_name(const std::string& s);
const char* modality_name(Modality m);
Modality modality_from_name(const std::string& s);
const char* output_kind_name(OutputKind k);
OutputKind output_kind_from_name(const std::string& s);
const char* encoder_component_name(Modality m);

// Closed metric set; unknown metric names are a parse error.
extern const std::vector<std::string> kMetricNames;
bool metric_known(const std::string& name);

struct PromptTemplate {
    PromptTarget target = PromptTarget::TextEmbedding;
    std::string text;  // slots appear as [name]

    std::vector<std::string> slot_names() const;
    // fills every slot; missing or unknown slot values are errors
    std::string render(const std::map<std::string, std::string>& slots) const;
};

struct TaskSpec {
    std::string id;
    Category category = Category::NLP;
    std::string task;
    std::string dataset;
    std::vector<Modality> inputs;  // multimodal tasks list several
    OutputKind output = OutputKind::Text;
    int path = 1;
    PromptTemplate prompt;
    std::string metric;
    std::string baseline;
    double result = 0.0;
    std::string result_raw;  // verbatim report column, keeps the provenance '*'
    bool from_orin = false;
};

struct RoutePlan {
    int path = 1;
    std::vector<std::string> activated;  // component names, stable order
    std::string generator;               // empty for Path-3
};

class TaskRegistry {
public:
    static TaskRegistry from_file(const std::string& path);
    static TaskRegistry from_json_text(const std::string& text);

    std::size_t size() const { return tasks_.size(); }
    const std::vector<TaskSpec>& tasks() const { return tasks_; }
    const TaskSpec& at(const std::string& id) const;
    bool has(const std::string& id) const;
    std::map<Category, std::size_t> category_counts() const;

private:
    std::vector<TaskSpec> tasks_;
    std::map<std::string, std::size_t> index_;
};

// Pure path/activation routing; honours the path declared in the registry.
RoutePlan route(const TaskSpec& task);

// Returns the list of violated path/modality rules; empty means valid.
std::vector<std::string> validate_task(const TaskSpec& task);

std::string render_prompt(const TaskSpec& task, const std::map<std::string, std::string>& slots);

}  // namespace m4
