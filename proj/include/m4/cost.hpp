#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "m4/model.hpp"
#include "m4/quant.hpp"
#include "m4/trace.hpp"

namespace m4 {

// Operator support and CPU-relative performance of one processor.
struct ProcessorProfile {
    std::string name;
    std::set<std::string> supported;
    double speedup = 1.0;       // latency divides by this
    double energy_ratio = 1.0;  // energy divides by this
};

std::vector<ProcessorProfile> load_profiles(const std::string& path, const OperatorTaxonomy& taxonomy);
const ProcessorProfile& find_profile(const std::vector<ProcessorProfile>& profiles, const std::string& name);

// Per-task calibration: baseline model sizes and adapter sizes. The shipped
// fixture is calibrated data, not a measurement.
struct TsModelCost {
    std::string task;
    std::string model;
    int priority = 1;
    std::uint64_t storage_bytes = 0;
    std::uint64_t peak_memory_bytes = 0;
    std::uint64_t adapter_bytes = 0;
};

std::vector<TsModelCost> load_ts_calibration(const std::string& path);

struct CostReport {
    double storage_bytes = 0.0;
    double peak_memory_bytes = 0.0;
    double latency_s = 0.0;
    double energy_j = 0.0;
};

// params x bytes-per-param (FP32 4, FP16 2, INT8 1, INT4 0.5 rounded up).
std::uint64_t bytes_of(const ComponentSpec& spec, std::optional<NumericFormat> format_override = {});

// Foundation bytes with an optional backbone quantization target; generators
// follow the target only when quantize_generators is set. The projection row
// is included (it is negligible by construction).
std::uint64_t fm_component_bytes(const std::vector<ComponentSpec>& components,
                                 std::optional<NumericFormat> backbone_format, bool quantize_generators);

struct StorageCurvePoint {
    std::size_t n = 0;
    std::uint64_t ts_bytes = 0;
    std::uint64_t fm_bytes = 0;
};

std::vector<StorageCurvePoint> storage_curve(const std::vector<ComponentSpec>& components,
                                             const std::vector<TsModelCost>& calibration, std::size_t max_n,
                                             std::optional<NumericFormat> backbone_format,
                                             bool quantize_generators);
std::string storage_curve_csv(const std::vector<StorageCurvePoint>& curve);
// first n with TS(n) > FM(n), plus the number of sign changes along the curve
struct Crossover {
    std::optional<std::size_t> first;
    std::size_t sign_changes = 0;
};
Crossover storage_crossover(const std::vector<StorageCurvePoint>& curve);

struct MemoryReport {
    std::uint64_t fm_component_bytes = 0;
    std::uint64_t fm_adapter_bytes = 0;   // resident adapters
    std::uint64_t fm_weight_bytes = 0;    // components + resident adapters
    std::uint64_t fm_peak_bytes = 0;      // weights + activation buffer
    std::size_t fm_resident_adapters = 0;
    std::size_t ts_resident_models = 0;
    std::uint64_t ts_resident_bytes = 0;  // greedy fit under the same budget
    double adapter_increment = 0.0;       // resident adapter bytes / component bytes
};

// Greedy residency fit: descending priority, then ascending size, ties by
// task id; never exceeds the budget. The FM side hosts the shared components
// unconditionally (errc::budget_exhausted when even those do not fit).
MemoryReport memory_footprint(const std::vector<ComponentSpec>& components,
                              const std::vector<TsModelCost>& calibration, std::size_t n_tasks,
                              std::uint64_t budget_bytes, std::optional<NumericFormat> backbone_format,
                              bool quantize_generators, double activation_buffer_fraction = 0.02);

// ---- what-if projection -------------------------------------------------

struct WhatIfRow {
    std::string task;
    std::string stage;
    int path = 0;
    double cpu_latency_s = 0.0;
    std::optional<double> speedup;  // per-row override of the profile speedup
};

std::vector<WhatIfRow> load_whatif_table(const std::string& path);

// latency' = latency / speedup, energy' = energy / energy ratio; exact.
std::pair<double, double> whatif_project(double latency_s, double energy_j, const ProcessorProfile& profile);
std::string whatif_csv(const std::vector<WhatIfRow>& rows, double default_speedup);

// ---- operator census ------------------------------------------------------

struct OperatorInventory {
    std::string name;  // task or model id
    std::vector<std::string> ops;
};

std::vector<OperatorInventory> load_inventories(const std::string& path, const OperatorTaxonomy& taxonomy);

struct CensusResult {
    std::size_t distinct = 0;
    std::size_t supported = 0;
    double coverage = 0.0;
};

CensusResult census(const std::vector<OperatorInventory>& inventories, const ProcessorProfile& profile,
                    const OperatorTaxonomy& taxonomy);
// distinct-count of the union over the first n inventories, for n = 1..N
std::vector<std::size_t> prefix_union_counts(const std::vector<OperatorInventory>& inventories);

// ---- slowdown summary ------------------------------------------------------

struct SlowdownSummary {
    double mean_ratio = 0.0;       // arithmetic mean of per-task fm/ts
    double geomean_ratio = 0.0;
};

SlowdownSummary slowdown_summary(const std::vector<double>& fm_costs, const std::vector<double>& ts_costs);

}  // namespace m4
