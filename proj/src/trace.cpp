#include "m4/trace.hpp"

#include <sstream>
#include <unordered_map>

namespace m4 {

namespace {

const std::unordered_map<std::string, OpKind>& name_table() {
    static const std::unordered_map<std::string, OpKind> table = {
        {"MatMul", OpKind::MatMul},       {"Add", OpKind::Add},
        {"Mul", OpKind::Mul},             {"Softmax", OpKind::Softmax},
        {"LayerNorm", OpKind::LayerNorm}, {"GELU", OpKind::GELU},
        {"Embedding", OpKind::Embedding}, {"Transpose", OpKind::Transpose},
        {"Concat", OpKind::Concat},       {"Slice", OpKind::Slice},
        {"ArgMax", OpKind::ArgMax},       {"ReduceMean", OpKind::ReduceMean},
        {"Sin", OpKind::Sin},             {"Tanh", OpKind::Tanh},
        {"Conv2D", OpKind::Conv2D},       {"MaxPool", OpKind::MaxPool},
        {"LSTMCell", OpKind::LSTMCell},
    };
    return table;
}

}  // namespace

const char* op_kind_name(OpKind k) {
    switch (k) {
        case OpKind::MatMul: return "MatMul";
        case OpKind::Add: return "Add";
        case OpKind::Mul: return "Mul";
        case OpKind::Softmax: return "Softmax";
        case OpKind::LayerNorm: return "LayerNorm";
        case OpKind::GELU: return "GELU";
        case OpKind::Embedding: return "Embedding";
        case OpKind::Transpose: return "Transpose";
        case OpKind::Concat: return "Concat";
        case OpKind::Slice: return "Slice";
        case OpKind::ArgMax: return "ArgMax";
        case OpKind::ReduceMean: return "ReduceMean";
        case OpKind::Sin: return "Sin";
        case OpKind::Tanh: return "Tanh";
        case OpKind::Conv2D: return "Conv2D";
        case OpKind::MaxPool: return "MaxPool";
        case OpKind::LSTMCell: return "LSTMCell";
    }
    return "?";
}

OpKind op_kind_from_name(const std::string& name) {
    const auto& table = name_table();
    auto it = table.find(name);
    if (it == table.end()) fail(errc::parse, "unknown operator kind: " + name);
    return it->second;
}

void OpTrace::record(OpKind kind, std::uint64_t flops, std::size_t out_rows, std::size_t out_cols) {
    entries_.push_back(TraceEntry{component_, kind, flops, out_rows, out_cols});
}

void OpTrace::append(const OpTrace& other) {
    entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
}

TraceSummary OpTrace::summary() const {
    TraceSummary s;
    for (const auto& e : entries_) {
        s.total_flops += e.flops;
        s.kinds.insert(e.kind);
    }
    return s;
}

std::set<std::string> OpTrace::components() const {
    std::set<std::string> out;
    for (const auto& e : entries_)
        if (!e.component.empty()) out.insert(e.component);
    return out;
}

std::set<std::string> OpTrace::op_names() const {
    std::set<std::string> out;
    for (const auto& e : entries_) out.insert(op_kind_name(e.kind));
    return out;
}

void OpTrace::clear() {
    entries_.clear();
    component_.clear();
}

OperatorTaxonomy OperatorTaxonomy::from_file(const std::string& path) {
    return from_text(read_file(path));
}

OperatorTaxonomy OperatorTaxonomy::from_text(const std::string& text) {
    OperatorTaxonomy t;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        // trim
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        t.names_.insert(line.substr(b, e - b + 1));
    }
    if (t.names_.empty()) fail(errc::parse, "operator taxonomy is empty");
    return t;
}

void OperatorTaxonomy::validate(const std::vector<std::string>& names, const std::string& context) const {
    for (const auto& n : names) {
        if (!contains(n)) fail(errc::parse, context + ": operator not in taxonomy: " + n);
    }
}

}  // namespace m4
