#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include "m4/cost.hpp"

using namespace m4;

namespace {
const OperatorTaxonomy& taxonomy() {
    static const auto t = OperatorTaxonomy::from_file(M4_FIXTURE_DIR "/operators.txt");
    return t;
}
const std::vector<ProcessorProfile>& profiles() {
    static const auto p = load_profiles(M4_FIXTURE_DIR "/profiles.json", taxonomy());
    return p;
}
const std::vector<TsModelCost>& calibration() {
    static const auto c = load_ts_calibration(M4_FIXTURE_DIR "/ts_models.json");
    return c;
}
}  // namespace

TEST_CASE("bytes_of: published backbone sizes") {
    ComponentSpec backbone{"Backbone", "backbone", "", 6.28e9, NumericFormat::INT8, 312.0};
    CHECK(bytes_of(backbone) == 6280000000ull);
    CHECK(bytes_of(backbone, NumericFormat::INT4) == 3140000000ull);
    CHECK(bytes_of(backbone, NumericFormat::FP16) == 12560000000ull);
    ComponentSpec stub{"stub", "generator", "", 0.0, NumericFormat::FP32, 0.0};
    CHECK(bytes_of(stub) == 0);
    ComponentSpec odd{"odd", "generator", "", 7.0, NumericFormat::INT4, 0.0};
    CHECK(bytes_of(odd) == 4);  // rounded up
}

TEST_CASE("storage curve: TS(50) lands on 15.2 GB exactly, ratio within the banded window") {
    const auto curve = storage_curve(paper_component_table(), calibration(), 50, NumericFormat::INT4, true);
    REQUIRE(curve.size() == 50);
    CHECK(curve.back().ts_bytes == 15200000000ull);
    const double ratio =
        static_cast<double>(curve.back().ts_bytes) / static_cast<double>(curve.back().fm_bytes);
    CHECK(ratio >= 2.0);
    CHECK(ratio <= 3.0);
    CHECK(ratio == doctest::Approx(2.5).epsilon(0.25));
}

TEST_CASE("storage curve: slopes are exactly the per-task sizes, crossover unique in [10, 30]") {
    const auto curve = storage_curve(paper_component_table(), calibration(), 50, NumericFormat::INT4, true);
    for (std::size_t i = 1; i < curve.size(); ++i) {
        CHECK(curve[i].ts_bytes - curve[i - 1].ts_bytes == calibration()[i].storage_bytes);
        CHECK(curve[i].fm_bytes - curve[i - 1].fm_bytes == calibration()[i].adapter_bytes);
    }
    const auto cross = storage_crossover(curve);
    REQUIRE(cross.first.has_value());
    CHECK(cross.sign_changes == 1);
    CHECK(*cross.first >= 10);
    CHECK(*cross.first <= 30);
    // both curves monotone
    for (std::size_t i = 1; i < curve.size(); ++i) {
        CHECK(curve[i].ts_bytes > curve[i - 1].ts_bytes);
        CHECK(curve[i].fm_bytes > curve[i - 1].fm_bytes);
    }
}

TEST_CASE("storage curve errors") {
    CHECK_THROWS_AS(storage_curve(paper_component_table(), {}, 10, NumericFormat::INT4, true), error);
    CHECK_THROWS_AS(storage_curve(paper_component_table(), calibration(), 51, NumericFormat::INT4, true),
                    error);
}

TEST_CASE("memory footprint: INT4 weights near 7.5 GB, 50/50 adapters vs 20/50 TS models at 12 GB") {
    const auto r = memory_footprint(paper_component_table(), calibration(), 50, 12000000000ull,
                                    NumericFormat::INT4, false);
    CHECK(r.fm_component_bytes == 7591816640ull);
    CHECK(r.fm_resident_adapters == 50);
    CHECK(r.fm_adapter_bytes == 200000000ull);
    CHECK(r.fm_weight_bytes == 7791816640ull);
    CHECK(std::abs(static_cast<double>(r.fm_weight_bytes) - 7.5e9) / 7.5e9 < 0.05);
    CHECK(r.adapter_increment * 100.0 == doctest::Approx(2.7).epsilon(0.5 / 2.7));
    CHECK(r.ts_resident_models == 20);
    CHECK(r.ts_resident_bytes <= 12000000000ull);
    CHECK(r.fm_peak_bytes >= r.fm_weight_bytes);
}

TEST_CASE("memory footprint: single task TS peak, cannot-host error") {
    const auto r = memory_footprint(paper_component_table(), calibration(), 1, 20000000000ull,
                                    NumericFormat::INT4, false);
    CHECK(r.ts_resident_models == 1);
    CHECK(r.ts_resident_bytes == calibration()[0].peak_memory_bytes);
    // FP16 backbone does not fit a 12 GB device
    CHECK_THROWS_AS(
        memory_footprint(paper_component_table(), calibration(), 50, 12000000000ull, NumericFormat::FP16, false),
        error);
}

TEST_CASE("greedy fit never exceeds the budget and is deterministic") {
    for (std::uint64_t budget : {6200000000ull, 8000000000ull, 9000000000ull, 16000000000ull}) {
        const auto a = memory_footprint(paper_component_table(), calibration(), 50, budget,
                                        NumericFormat::INT4, true);
        const auto b = memory_footprint(paper_component_table(), calibration(), 50, budget,
                                        NumericFormat::INT4, true);
        CHECK(a.ts_resident_bytes <= budget);
        CHECK(a.fm_weight_bytes <= budget);
        CHECK(a.ts_resident_models == b.ts_resident_models);
        CHECK(a.fm_resident_adapters == b.fm_resident_adapters);
    }
}

TEST_CASE("what-if projection: published NPU latency rows within 5%") {
    const auto rows = load_whatif_table(M4_FIXTURE_DIR "/table5.json");
    REQUIRE(rows.size() == 7);
    const std::vector<double> expected = {0.11, 0.014, 0.32, 0.012, 0.32, 0.013, 0.041};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double speedup = rows[i].speedup.value_or(20.0);
        CHECK(speedup >= 19.1);
        CHECK(speedup <= 20.0);
        const double npu = rows[i].cpu_latency_s / speedup;
        CHECK(std::abs(npu - expected[i]) / expected[i] <= 0.05);
    }
    // spot values straight from the published table
    CHECK(rows[0].cpu_latency_s == 2.10);
    CHECK(rows[2].cpu_latency_s == 6.34);
    CHECK(rows[6].cpu_latency_s == 0.82);
}

TEST_CASE("what-if projection: identity profile and linearity") {
    ProcessorProfile identity{"cpu", {}, 1.0, 1.0};
    const auto [lat, en] = whatif_project(1.7, 2.9, identity);
    CHECK(lat == 1.7);
    CHECK(en == 2.9);
    const ProcessorProfile npu{"npu", {}, 19.1, 5.78};
    rng gen(2);
    for (int i = 0; i < 50; ++i) {
        const double l = gen.uniform(0.01, 10.0), e = gen.uniform(0.01, 10.0), k = gen.uniform(0.1, 9.0);
        const auto [l1, e1] = whatif_project(l, e, npu);
        const auto [lk, ek] = whatif_project(k * l, k * e, npu);
        CHECK(lk == doctest::Approx(k * l1).epsilon(1e-12));
        CHECK(ek == doctest::Approx(k * e1).epsilon(1e-12));
    }
}

TEST_CASE("census: published coverage fixtures reproduce exactly") {
    const auto& npu = find_profile(profiles(), "pixel7_edgetpu_2023");
    const auto zoo = load_inventories(M4_FIXTURE_DIR "/ts_zoo.json", taxonomy());
    REQUIRE(zoo.size() == 50);
    const auto ts = census(zoo, npu, taxonomy());
    CHECK(ts.distinct == 156);
    CHECK(ts.supported == 51);
    CHECK(ts.coverage == doctest::Approx(0.3269).epsilon(1e-3));

    const auto m4_inv = load_inventories(M4_FIXTURE_DIR "/m4_ops.json", taxonomy());
    const auto m4c = census(m4_inv, npu, taxonomy());
    CHECK(m4c.distinct == 39);
    CHECK(m4c.supported == 25);
    CHECK(m4c.coverage == doctest::Approx(0.641).epsilon(1e-3));
}

TEST_CASE("census: union idempotence and strictly increasing TS zoo") {
    const auto zoo = load_inventories(M4_FIXTURE_DIR "/ts_zoo.json", taxonomy());
    const auto& npu = find_profile(profiles(), "pixel7_edgetpu_2023");
    auto doubled = zoo;
    doubled.insert(doubled.end(), zoo.begin(), zoo.end());
    CHECK(census(doubled, npu, taxonomy()).distinct == census(zoo, npu, taxonomy()).distinct);

    const auto counts = prefix_union_counts(zoo);
    REQUIRE(counts.size() == 50);
    for (std::size_t i = 1; i < counts.size(); ++i) CHECK(counts[i] > counts[i - 1]);
    CHECK(counts.back() == 156);
}

TEST_CASE("census: unknown operator names are rejected") {
    const auto& npu = find_profile(profiles(), "pixel7_edgetpu_2023");
    std::vector<OperatorInventory> bad = {{"x", {"MatMul", "FluxCapacitor"}}};
    CHECK_THROWS_AS(census(bad, npu, taxonomy()), error);
}

TEST_CASE("slowdown summary reproduces the platform fixture means") {
    using nlohmann::json;
    const auto doc = json::parse(read_file(M4_FIXTURE_DIR "/orin_costs.json"));
    std::vector<double> ts_lat, ts_en, i8_lat, i8_en, i4_lat, i4_en;
    for (const auto& row : doc.at("tasks")) {
        ts_lat.push_back(row.at("ts_latency_s").get<double>());
        ts_en.push_back(row.at("ts_energy_j").get<double>());
        i8_lat.push_back(row.at("fm_int8_latency_s").get<double>());
        i8_en.push_back(row.at("fm_int8_energy_j").get<double>());
        i4_lat.push_back(row.at("fm_int4_latency_s").get<double>());
        i4_en.push_back(row.at("fm_int4_energy_j").get<double>());
    }
    CHECK(slowdown_summary(i8_lat, ts_lat).mean_ratio == doctest::Approx(12.0).epsilon(1e-9));
    CHECK(slowdown_summary(i8_en, ts_en).mean_ratio == doctest::Approx(19.0).epsilon(1e-9));
    CHECK(slowdown_summary(i4_lat, ts_lat).mean_ratio == doctest::Approx(8.0).epsilon(1e-9));
    CHECK(slowdown_summary(i4_en, ts_en).mean_ratio == doctest::Approx(12.0).epsilon(1e-9));

    const auto cpu = json::parse(read_file(M4_FIXTURE_DIR "/cpu_costs.json"));
    std::vector<double> c_ts_lat, c_ts_en, c_fm_lat, c_fm_en;
    for (const auto& row : cpu.at("tasks")) {
        c_ts_lat.push_back(row.at("ts_latency_s").get<double>());
        c_ts_en.push_back(row.at("ts_energy_j").get<double>());
        c_fm_lat.push_back(row.at("fm_cpu_latency_s").get<double>());
        c_fm_en.push_back(row.at("fm_cpu_energy_j").get<double>());
    }
    CHECK(slowdown_summary(c_fm_lat, c_ts_lat).mean_ratio == doctest::Approx(13.0).epsilon(1e-9));
    CHECK(slowdown_summary(c_fm_en, c_ts_en).mean_ratio == doctest::Approx(11.0).epsilon(1e-9));

    CHECK(slowdown_summary({1.0, 2.0}, {1.0, 2.0}).mean_ratio == 1.0);
    CHECK(slowdown_summary({1.0, 2.0}, {1.0, 2.0}).geomean_ratio == doctest::Approx(1.0));
    CHECK_THROWS_AS(slowdown_summary({1.0}, {1.0, 2.0}), error);
}

TEST_CASE("trace-derived census agrees with the trace summary") {
    const auto model = FoundationModel::build(Profile::Desk, 7);
    const auto reg = TaskRegistry::from_file(M4_FIXTURE_DIR "/tasks.json");
    OpTrace trace;
    ExecOptions opts;
    opts.max_tokens = 2;
    rng gen(5);
    std::vector<double> chw(3 * 16 * 16);
    for (auto& v : chw) v = gen.uniform(0.0, 1.0);
    model.execute(reg.at("T44"), {image_payload(chw)}, opts, &trace);

    std::vector<OperatorInventory> inventory(1);
    inventory[0].name = "desk-forward";
    for (const auto& name : trace.op_names()) inventory[0].ops.push_back(name);
    const auto& cpu = find_profile(profiles(), "pixel7_cpu");
    const auto result = census(inventory, cpu, taxonomy());
    CHECK(result.distinct == trace.summary().kinds.size());
    CHECK(result.supported == result.distinct);  // the CPU profile supports the full taxonomy
}

TEST_CASE("FM footprint is independent of task count beyond the adapter term") {
    for (std::size_t n : {10, 30, 50}) {
        const auto r = memory_footprint(paper_component_table(), calibration(), n, 16000000000ull,
                                        NumericFormat::INT4, false);
        CHECK(r.fm_component_bytes == 7591816640ull);
        CHECK(r.fm_weight_bytes - r.fm_adapter_bytes == r.fm_component_bytes);
        CHECK(r.fm_resident_adapters == n);  // everything fits at 16 GB
    }
}

TEST_CASE("profile loading validates against the taxonomy") {
    CHECK_THROWS_AS(find_profile(profiles(), "quantum"), error);
    const auto& cpu = find_profile(profiles(), "pixel7_cpu");
    CHECK(cpu.speedup == 1.0);
    const auto& npu22 = find_profile(profiles(), "pixel7_edgetpu_2022");
    CHECK(npu22.supported.size() == 33);
    const auto& npu23 = find_profile(profiles(), "pixel7_edgetpu_2023");
    CHECK(npu23.supported.size() == 63);
    CHECK(npu23.speedup == 20.0);
}
