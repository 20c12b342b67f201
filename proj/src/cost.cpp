#include "m4/cost.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <sstream>

namespace m4 {

using nlohmann::json;

namespace {

json parse_json(const std::string& path, const char* what) {
    try {
        return json::parse(read_file(path));
    } catch (const error&) {
        throw;
    } catch (const std::exception& e) {
        fail(errc::parse, std::string(what) + ": " + e.what());
    }
}

}  // namespace

std::vector<ProcessorProfile> load_profiles(const std::string& path, const OperatorTaxonomy& taxonomy) {
    const json doc = parse_json(path, "processor profiles");
    if (!doc.is_array()) fail(errc::parse, "processor profiles: expected an array");
    std::vector<ProcessorProfile> out;
    for (const auto& row : doc) {
        ProcessorProfile p;
        p.name = row.at("name").get<std::string>();
        for (const auto& op : row.at("supported")) {
            const std::string name = op.get<std::string>();
            if (!taxonomy.contains(name))
                fail(errc::parse, "profile " + p.name + ": operator not in taxonomy: " + name);
            p.supported.insert(name);
        }
        p.speedup = row.at("speedup").get<double>();
        p.energy_ratio = row.at("energy_ratio").get<double>();
        if (p.speedup <= 0.0 || p.energy_ratio <= 0.0)
            fail(errc::parse, "profile " + p.name + ": ratios must be positive");
        out.push_back(std::move(p));
    }
    return out;
}

const ProcessorProfile& find_profile(const std::vector<ProcessorProfile>& profiles, const std::string& name) {
    for (const auto& p : profiles)
        if (p.name == name) return p;
    fail(errc::not_found, "unknown processor profile: " + name);
}

std::vector<TsModelCost> load_ts_calibration(const std::string& path) {
    const json doc = parse_json(path, "TS calibration");
    if (!doc.is_array()) fail(errc::parse, "TS calibration: expected an array");
    std::vector<TsModelCost> out;
    for (const auto& row : doc) {
        TsModelCost c;
        c.task = row.at("task").get<std::string>();
        c.model = row.at("model").get<std::string>();
        c.priority = row.value("priority", 1);
        c.storage_bytes = row.at("storage_bytes").get<std::uint64_t>();
        c.peak_memory_bytes = row.at("peak_memory_bytes").get<std::uint64_t>();
        c.adapter_bytes = row.at("adapter_bytes").get<std::uint64_t>();
        if (c.storage_bytes == 0 || c.peak_memory_bytes == 0 || c.adapter_bytes == 0)
            fail(errc::parse, "TS calibration: sizes must be positive for " + c.task);
        out.push_back(std::move(c));
    }
    return out;
}

std::uint64_t bytes_of(const ComponentSpec& spec, std::optional<NumericFormat> format_override) {
    const NumericFormat f = format_override.value_or(spec.format);
    const auto params = static_cast<std::uint64_t>(spec.params);
    switch (f) {
        case NumericFormat::FP32: return params * 4;
        case NumericFormat::FP16: return params * 2;
        case NumericFormat::INT8: return params;
        case NumericFormat::INT4: return (params + 1) / 2;  // packed, rounded up
    }
    return params * 4;
}

std::uint64_t fm_component_bytes(const std::vector<ComponentSpec>& components,
                                 std::optional<NumericFormat> backbone_format, bool quantize_generators) {
    std::uint64_t total = 0;
    for (const auto& c : components) {
        std::optional<NumericFormat> fmt;
        if (backbone_format) {
            if (c.role == "backbone") fmt = backbone_format;
            if (quantize_generators && c.role == "generator") fmt = backbone_format;
        }
        total += bytes_of(c, fmt);
    }
    return total;
}

std::vector<StorageCurvePoint> storage_curve(const std::vector<ComponentSpec>& components,
                                             const std::vector<TsModelCost>& calibration, std::size_t max_n,
                                             std::optional<NumericFormat> backbone_format,
                                             bool quantize_generators) {
    if (calibration.empty()) fail(errc::invalid_argument, "storage_curve: missing calibration");
    if (max_n == 0 || max_n > calibration.size())
        fail(errc::invalid_argument, "storage_curve: task count out of range");
    const std::uint64_t fm_base = fm_component_bytes(components, backbone_format, quantize_generators);
    std::vector<StorageCurvePoint> out;
    std::uint64_t ts = 0, adapters = 0;
    for (std::size_t i = 0; i < max_n; ++i) {
        ts += calibration[i].storage_bytes;
        adapters += calibration[i].adapter_bytes;
        out.push_back({i + 1, ts, fm_base + adapters});
    }
    return out;
}

std::string storage_curve_csv(const std::vector<StorageCurvePoint>& curve) {
    std::ostringstream out;
    out << "n,ts_bytes,fm_bytes\n";
    for (const auto& p : curve) out << p.n << "," << p.ts_bytes << "," << p.fm_bytes << "\n";
    return out.str();
}

Crossover storage_crossover(const std::vector<StorageCurvePoint>& curve) {
    Crossover c;
    bool above = false;
    for (const auto& p : curve) {
        const bool now = p.ts_bytes > p.fm_bytes;
        if (now != above) {
            ++c.sign_changes;
            if (now && !c.first) c.first = p.n;
        }
        above = now;
    }
    return c;
}

namespace {

// descending priority, then ascending size, ties by task id
std::vector<std::size_t> greedy_order(const std::vector<TsModelCost>& entries,
                                      const std::vector<std::uint64_t>& sizes) {
    std::vector<std::size_t> order(entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (entries[a].priority != entries[b].priority) return entries[a].priority > entries[b].priority;
        if (sizes[a] != sizes[b]) return sizes[a] < sizes[b];
        return entries[a].task < entries[b].task;
    });
    return order;
}

}  // namespace

MemoryReport memory_footprint(const std::vector<ComponentSpec>& components,
                              const std::vector<TsModelCost>& calibration, std::size_t n_tasks,
                              std::uint64_t budget_bytes, std::optional<NumericFormat> backbone_format,
                              bool quantize_generators, double activation_buffer_fraction) {
    if (budget_bytes == 0) fail(errc::invalid_argument, "memory_footprint: budget must be positive");
    if (n_tasks == 0 || n_tasks > calibration.size())
        fail(errc::invalid_argument, "memory_footprint: task count out of range");
    const std::vector<TsModelCost> active(calibration.begin(),
                                          calibration.begin() + static_cast<std::ptrdiff_t>(n_tasks));

    MemoryReport r;
    r.fm_component_bytes = fm_component_bytes(components, backbone_format, quantize_generators);
    if (r.fm_component_bytes > budget_bytes)
        fail(errc::budget_exhausted, "foundation model does not fit the memory budget");

    // adapters join by the same greedy rule until the budget is filled
    std::vector<std::uint64_t> adapter_sizes;
    for (const auto& t : active) adapter_sizes.push_back(t.adapter_bytes);
    std::uint64_t used = r.fm_component_bytes;
    for (std::size_t idx : greedy_order(active, adapter_sizes)) {
        if (used + adapter_sizes[idx] > budget_bytes) continue;
        used += adapter_sizes[idx];
        r.fm_adapter_bytes += adapter_sizes[idx];
        ++r.fm_resident_adapters;
    }
    r.fm_weight_bytes = r.fm_component_bytes + r.fm_adapter_bytes;
    r.fm_peak_bytes =
        r.fm_weight_bytes + static_cast<std::uint64_t>(activation_buffer_fraction *
                                                       static_cast<double>(r.fm_weight_bytes));
    r.adapter_increment =
        static_cast<double>(r.fm_adapter_bytes) / static_cast<double>(r.fm_component_bytes);

    std::vector<std::uint64_t> model_sizes;
    for (const auto& t : active) model_sizes.push_back(t.peak_memory_bytes);
    std::uint64_t ts_used = 0;
    for (std::size_t idx : greedy_order(active, model_sizes)) {
        if (ts_used + model_sizes[idx] > budget_bytes) continue;
        ts_used += model_sizes[idx];
        ++r.ts_resident_models;
    }
    r.ts_resident_bytes = ts_used;
    return r;
}

std::vector<WhatIfRow> load_whatif_table(const std::string& path) {
    const json doc = parse_json(path, "what-if table");
    if (!doc.is_array()) fail(errc::parse, "what-if table: expected an array");
    std::vector<WhatIfRow> out;
    for (const auto& row : doc) {
        WhatIfRow r;
        r.task = row.at("task").get<std::string>();
        r.stage = row.at("stage").get<std::string>();
        r.path = row.at("path").get<int>();
        r.cpu_latency_s = row.at("cpu_latency_s").get<double>();
        if (row.contains("speedup")) r.speedup = row.at("speedup").get<double>();
        if (r.cpu_latency_s < 0.0) fail(errc::parse, "what-if table: negative latency");
        out.push_back(std::move(r));
    }
    return out;
}

std::pair<double, double> whatif_project(double latency_s, double energy_j, const ProcessorProfile& profile) {
    if (profile.speedup <= 0.0 || profile.energy_ratio <= 0.0)
        fail(errc::invalid_argument, "whatif_project: ratios must be positive");
    return {latency_s / profile.speedup, energy_j / profile.energy_ratio};
}

std::string whatif_csv(const std::vector<WhatIfRow>& rows, double default_speedup) {
    std::ostringstream out;
    out << "task,stage,path,cpu_latency_s,speedup,npu_latency_s\n";
    out << std::setprecision(12);
    for (const auto& r : rows) {
        const double speedup = r.speedup.value_or(default_speedup);
        out << r.task << "," << r.stage << "," << r.path << "," << r.cpu_latency_s << "," << speedup << ","
            << r.cpu_latency_s / speedup << "\n";
    }
    return out.str();
}

std::vector<OperatorInventory> load_inventories(const std::string& path, const OperatorTaxonomy& taxonomy) {
    const json doc = parse_json(path, "operator inventory");
    std::vector<OperatorInventory> out;
    const auto parse_one = [&](const json& row) {
        OperatorInventory inv;
        inv.name = row.contains("task") ? row.at("task").get<std::string>()
                                        : row.value("model", std::string("inventory"));
        for (const auto& op : row.at("ops")) inv.ops.push_back(op.get<std::string>());
        taxonomy.validate(inv.ops, inv.name);
        out.push_back(std::move(inv));
    };
    if (doc.is_array()) {
        for (const auto& row : doc) parse_one(row);
    } else {
        parse_one(doc);
    }
    return out;
}

CensusResult census(const std::vector<OperatorInventory>& inventories, const ProcessorProfile& profile,
                    const OperatorTaxonomy& taxonomy) {
    std::set<std::string> all;
    for (const auto& inv : inventories) {
        taxonomy.validate(inv.ops, inv.name);
        all.insert(inv.ops.begin(), inv.ops.end());
    }
    CensusResult r;
    r.distinct = all.size();
    for (const auto& op : all) r.supported += profile.supported.count(op);
    r.coverage = r.distinct == 0 ? 0.0 : static_cast<double>(r.supported) / static_cast<double>(r.distinct);
    return r;
}

std::vector<std::size_t> prefix_union_counts(const std::vector<OperatorInventory>& inventories) {
    std::vector<std::size_t> out;
    std::set<std::string> seen;
    for (const auto& inv : inventories) {
        seen.insert(inv.ops.begin(), inv.ops.end());
        out.push_back(seen.size());
    }
    return out;
}

SlowdownSummary slowdown_summary(const std::vector<double>& fm_costs, const std::vector<double>& ts_costs) {
    if (fm_costs.size() != ts_costs.size() || fm_costs.empty())
        fail(errc::invalid_argument, "slowdown_summary: length mismatch or empty");
    SlowdownSummary s;
    double log_sum = 0.0;
    for (std::size_t i = 0; i < fm_costs.size(); ++i) {
        if (ts_costs[i] <= 0.0) fail(errc::invalid_argument, "slowdown_summary: non-positive baseline cost");
        const double ratio = fm_costs[i] / ts_costs[i];
        s.mean_ratio += ratio;
        log_sum += std::log(ratio);
    }
    s.mean_ratio /= static_cast<double>(fm_costs.size());
    s.geomean_ratio = std::exp(log_sum / static_cast<double>(fm_costs.size()));
    return s;
}

}  // namespace m4
