#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "m4/util.hpp"

namespace m4 {

// Primitive operator kinds the desk engine can emit. The full operator
// universe (for census fixtures) lives in the taxonomy data file; every
// name here must appear there as well.
enum class OpKind {
    MatMul,
    Add,
    Mul,
    Softmax,
    LayerNorm,
    GELU,
    Embedding,
    Transpose,
    Concat,
    Slice,
    ArgMax,
    ReduceMean,
    Sin,
    Tanh,
    Conv2D,
    MaxPool,
    LSTMCell,
};

const char* op_kind_name(OpKind k);
OpKind op_kind_from_name(const std::string& name);  // errc::parse on unknown names

struct TraceEntry {
    std::string component;  // which sub-model emitted the op ("" when untagged)
    OpKind kind;
    std::uint64_t flops;
    std::size_t out_rows;
    std::size_t out_cols;
};

struct TraceSummary {
    std::uint64_t total_flops = 0;
    std::set<OpKind> kinds;
};

// Per-inference operator log. One trace belongs to exactly one inference
// context; nothing here is thread-safe by design.
class OpTrace {
public:
    void record(OpKind kind, std::uint64_t flops, std::size_t out_rows, std::size_t out_cols);
    void append(const OpTrace& other);

    void set_component(std::string name) { component_ = std::move(name); }
    const std::string& component() const { return component_; }

    const std::vector<TraceEntry>& entries() const { return entries_; }
    TraceSummary summary() const;
    std::set<std::string> components() const;
    std::set<std::string> op_names() const;
    void clear();

private:
    std::vector<TraceEntry> entries_;
    std::string component_;
};

// RAII scope that tags trace entries with the emitting component.
class ComponentScope {
public:
    ComponentScope(OpTrace* trace, const std::string& name) : trace_(trace) {
        if (trace_) {
            prev_ = trace_->component();
            trace_->set_component(name);
        }
    }
    ~ComponentScope() {
        if (trace_) trace_->set_component(prev_);
    }
    ComponentScope(const ComponentScope&) = delete;
    ComponentScope& operator=(const ComponentScope&) = delete;

private:
    OpTrace* trace_;
    std::string prev_;
};

// Closed operator name universe, loaded from a UTF-8 text file with one
// operator per line and '#' comments. Census inputs are validated against it.
class OperatorTaxonomy {
public:
    static OperatorTaxonomy from_file(const std::string& path);
    static OperatorTaxonomy from_text(const std::string& text);

    bool contains(const std::string& name) const { return names_.count(name) != 0; }
    std::size_t size() const { return names_.size(); }
    const std::set<std::string>& names() const { return names_; }
    // errc::parse when any name is unknown
    void validate(const std::vector<std::string>& names, const std::string& context) const;

private:
    std::set<std::string> names_;
};

}  // namespace m4
