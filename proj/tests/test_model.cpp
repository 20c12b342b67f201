#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "m4/model.hpp"

using namespace m4;

namespace {

const char* kTasks = M4_FIXTURE_DIR "/tasks.json";

const TaskRegistry& registry() {
    static const TaskRegistry reg = TaskRegistry::from_file(kTasks);
    return reg;
}

Payload demo_image(std::uint64_t seed) {
    rng gen(seed);
    std::vector<double> chw(3 * 16 * 16);
    for (auto& v : chw) v = gen.uniform(0.0, 1.0);
    return image_payload(chw);
}

Payload demo_imu(std::uint64_t seed) {
    rng gen(seed);
    Matrix w(8, 6);
    for (auto& v : w.data) v = gen.uniform(-1.0, 1.0);
    return imu_payload(w);
}

PeftConfig desk_config(const std::string& component, std::size_t rank) {
    PeftConfig c;
    c.rank = rank;
    c.alpha = static_cast<double>(rank);
    c.targets = {{component, TargetRole::Query}, {component, TargetRole::Value}};
    return c;
}

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("paper profile totals follow the published sub-model table") {
    const auto m = FoundationModel::build(Profile::Paper, 123);
    CHECK(m.total_params() == 8495904160.0);
    CHECK(m.spec("Backbone").params == 6.28e9);
    CHECK(m.spec("Backbone").format == NumericFormat::INT8);
    CHECK(m.spec("TTS_dec").params <= 0.01e9);
    CHECK(m.spec("GEN_dec").params <= 0.01e9);
    // backbone dominates the byte share at the stated storage formats
    double backbone_bytes = 0, total_bytes = 0;
    for (const auto& s : m.specs()) {
        const double b = s.params * bytes_per_param(s.format);
        total_bytes += b;
        if (s.name == "Backbone") backbone_bytes = b;
    }
    CHECK(backbone_bytes / total_bytes > 0.5);
}

TEST_CASE("paper component fixture mirrors the built-in table") {
    const auto fixture = load_component_table(M4_FIXTURE_DIR "/components.json");
    const auto table = paper_component_table();
    REQUIRE(fixture.size() == table.size() - 1);  // the projection row is model-internal
    for (const auto& f : fixture) {
        const auto it = std::find_if(table.begin(), table.end(),
                                     [&](const ComponentSpec& s) { return s.name == f.name; });
        REQUIRE(it != table.end());
        CHECK(f.params == it->params);
        CHECK(f.format == it->format);
        CHECK(f.gflops == it->gflops);
        CHECK(f.role == it->role);
    }
}

TEST_CASE("desk build is deterministic under the seed") {
    const auto a = FoundationModel::build(Profile::Desk, 7);
    const auto b = FoundationModel::build(Profile::Desk, 7);
    const auto c = FoundationModel::build(Profile::Desk, 8);
    CHECK(a.weight_hash() == b.weight_hash());
    CHECK(a.weight_hash() != c.weight_hash());
}

TEST_CASE("encode: text gives one token per byte at model width") {
    const auto m = FoundationModel::build(Profile::Desk, 7);
    const auto e = m.encode(text_payload("abc"), "", nullptr);
    CHECK(e.rows == 3);
    CHECK(e.cols == 64);
}

TEST_CASE("encode: deterministic per payload, shape-checked") {
    const auto m = FoundationModel::build(Profile::Desk, 7);
    const auto img = demo_image(1);
    CHECK(max_abs_diff(m.encode(img, "", nullptr), m.encode(img, "", nullptr)) == 0.0);
    Matrix bad(3, 5);
    Payload p;
    p.modality = Modality::Imu;
    p.values = bad;
    CHECK_THROWS_AS(m.encode(p, "", nullptr), error);
    CHECK_THROWS_AS(audio_payload(std::vector<double>(17, 0.0), true), error);
}

TEST_CASE("Path-3 image classification: argmax over label prompts, backbone never in trace") {
    const auto m = FoundationModel::build(Profile::Desk, 7);
    const auto& task = registry().at("T23");
    ExecOptions opts;
    opts.labels = {"car", "cat", "dog"};
    OpTrace trace;
    const auto out = m.execute(task, {demo_image(3)}, opts, &trace);
    CHECK(out.kind == OutputKind::Label);
    CHECK(out.label_index < 3);
    CHECK(out.text == opts.labels[out.label_index]);
    CHECK(out.scores.size() == 3);
    const auto comps = trace.components();
    CHECK(comps.count("Backbone") == 0);
    CHECK(comps == as_set(route(task).activated));
}

TEST_CASE("Path-3 output is independent of backbone weights") {
    auto a = FoundationModel::build(Profile::Desk, 7);
    auto b = FoundationModel::build(Profile::Desk, 7);
    b.quantize_component("Backbone", NumericFormat::INT4);  // scrambles backbone weights
    const auto& task = registry().at("T38");
    ExecOptions opts;
    opts.labels = {"walking", "sitting", "standing"};
    const auto pa = demo_imu(5);
    const auto oa = a.execute(task, {pa}, opts, nullptr);
    const auto ob = b.execute(task, {pa}, opts, nullptr);
    CHECK(oa.label_index == ob.label_index);
    CHECK(oa.scores == ob.scores);
}

TEST_CASE("Path-2: no encoders in trace, activation cost is the published 437 GFLOPs") {
    const auto m = FoundationModel::build(Profile::Desk, 7);
    const auto& task = registry().at("T4");
    ExecOptions opts;
    opts.slots = {{"src", "en"}, {"tgt", "de"}};
    opts.max_tokens = 4;
    OpTrace trace;
    const auto out = m.execute(task, {text_payload("hello world")}, opts, &trace);
    (void)out;
    const auto comps = trace.components();
    CHECK(comps == std::set<std::string>{"Backbone", "GEN_dec"});

    const auto paper = FoundationModel::build(Profile::Paper, 0);
    const auto cost = paper.activation_cost(route(task));
    CHECK(cost.gflops == 312.0 + 125.0);
    CHECK(cost.gflops == 437.0);
}

TEST_CASE("Path-4 text-to-speech: only TTS_dec in trace") {
    const auto m = FoundationModel::build(Profile::Desk, 7);
    const auto& task = registry().at("T41");
    OpTrace trace;
    const auto out = m.execute(task, {text_payload("hi")}, {}, &trace);
    CHECK(out.kind == OutputKind::Speech);
    CHECK(out.waveform.size() == 2 * 64);
    CHECK(trace.components() == std::set<std::string>{"TTS_dec"});
}

TEST_CASE("Path-4 super-resolution stub emits a deterministic image") {
    const auto m = FoundationModel::build(Profile::Desk, 7);
    const auto& task = registry().at("T17");
    OpTrace trace;
    const auto out = m.execute(task, {demo_image(11)}, {}, &trace);
    CHECK(out.kind == OutputKind::Image);
    CHECK(out.image.size() == 3 * 16 * 16);
    CHECK(trace.components() == std::set<std::string>{"IMG_dec"});
    const auto again = m.execute(task, {demo_image(11)}, {}, nullptr);
    CHECK(out.image == again.image);
}

TEST_CASE("Path-1 captioning: full stack in trace, trace matches the route plan") {
    const auto m = FoundationModel::build(Profile::Desk, 7);
    const auto& task = registry().at("T44");
    ExecOptions opts;
    opts.max_tokens = 3;
    OpTrace trace;
    const auto out = m.execute(task, {demo_image(9)}, opts, &trace);
    CHECK(out.kind == OutputKind::Text);
    CHECK(trace.components() == as_set(route(task).activated));
    CHECK(trace.components().count("Backbone") == 1);
    CHECK(trace.components().count("IMG_enc") == 1);
}

TEST_CASE("activation cost: published per-path sums") {
    const auto paper = FoundationModel::build(Profile::Paper, 0);
    const auto p3 = paper.activation_cost(route(registry().at("T23")));
    CHECK(p3.gflops == doctest::Approx(191.0152).epsilon(1e-12));
    CHECK(p3.gflops == 167.5963 + 23.4189);
    const auto p4 = paper.activation_cost(route(registry().at("T41")));
    CHECK(p4.gflops == 8.58);
    // partial-activation monotonicity for a fixed generator
    const auto p1 = paper.activation_cost(route(registry().at("T44")));
    const auto p2 = paper.activation_cost(route(registry().at("T4")));
    RoutePlan gen_only;
    gen_only.path = 4;
    gen_only.activated = {"GEN_dec"};
    const auto p4g = paper.activation_cost(gen_only);
    CHECK(p1.gflops >= p2.gflops);
    CHECK(p2.gflops >= p4g.gflops);
    CHECK(p1.params >= p2.params);
}

TEST_CASE("zero-init adapter attach is transparent; detach restores bit-exact behavior") {
    auto m = FoundationModel::build(Profile::Desk, 7);
    const auto& task = registry().at("T38");
    ExecOptions opts;
    opts.labels = {"walking", "sitting", "standing", "running"};
    const auto payload = demo_imu(21);
    const auto before = m.execute(task, {payload}, opts, nullptr);

    auto pack = create_adapter(task.id, desk_config("IMU_enc", 4), ModelDims::desk(), 99);
    m.attach(pack);
    const auto with_pack = m.execute(task, {payload}, opts, nullptr);
    CHECK(with_pack.label_index == before.label_index);
    for (std::size_t i = 0; i < before.scores.size(); ++i)
        CHECK(std::abs(with_pack.scores[i] - before.scores[i]) <= 1e-12);

    m.detach(task.id);
    const auto after = m.execute(task, {payload}, opts, nullptr);
    CHECK(after.scores == before.scores);
    CHECK(after.label_index == before.label_index);
}

TEST_CASE("adapter isolation: task A ignores task B's pack") {
    auto m = FoundationModel::build(Profile::Desk, 7);
    const auto& har = registry().at("T38");
    const auto& img = registry().at("T23");
    ExecOptions ho;
    ho.labels = {"walking", "sitting"};
    ExecOptions io;
    io.labels = {"car", "dog"};
    const auto imu = demo_imu(2);
    const auto pic = demo_image(2);

    auto pack_a = create_adapter(har.id, desk_config("IMU_enc", 2), ModelDims::desk(), 5);
    m.attach(pack_a);
    const auto base_a = m.execute(har, {imu}, ho, nullptr);

    // task B arrives with an aggressively non-zero pack
    auto pack_b = create_adapter(img.id, desk_config("IMG_enc", 2), ModelDims::desk(), 6);
    rng gen(8);
    for (auto& t : pack_b.targets)
        for (auto& v : t.b) v = static_cast<float>(gen.uniform(-2.0, 2.0));
    for (auto& v : pack_b.projection_delta) v = static_cast<float>(gen.uniform(-2.0, 2.0));
    m.attach(pack_b);

    const auto still_a = m.execute(har, {imu}, ho, nullptr);
    CHECK(still_a.scores == base_a.scores);
    const auto out_b1 = m.execute(img, {pic}, io, nullptr);
    m.detach(img.id);
    for (auto& t : pack_b.targets)
        for (auto& v : t.b) v = -v;
    m.attach(pack_b);
    const auto a_after_mutation = m.execute(har, {imu}, ho, nullptr);
    CHECK(a_after_mutation.scores == base_a.scores);
    const auto out_b2 = m.execute(img, {pic}, io, nullptr);
    CHECK(out_b1.scores != out_b2.scores);  // B's own behaviour did change
}

TEST_CASE("attach rejects duplicates and dimension mismatches") {
    auto m = FoundationModel::build(Profile::Desk, 7);
    auto pack = create_adapter("T38", desk_config("IMU_enc", 2), ModelDims::desk(), 5);
    m.attach(pack);
    CHECK_THROWS_AS(m.attach(pack), error);

    auto paper_pack = create_adapter("T5", desk_config("Backbone", 4), ModelDims::paper(), 5);
    CHECK_THROWS_WITH_AS(m.attach(paper_pack), doctest::Contains("dims"), error);

    auto broken = create_adapter("T39", desk_config("Backbone", 2), ModelDims::desk(), 5);
    broken.targets.pop_back();  // now covers fewer layers than the model has
    CHECK_THROWS_AS(m.attach(broken), error);

    CHECK_THROWS_AS(m.detach("nope"), error);
}

TEST_CASE("execute rejects path/modality mismatches") {
    const auto m = FoundationModel::build(Profile::Desk, 7);
    const auto& mt = registry().at("T4");
    CHECK_THROWS_AS(m.execute(mt, {demo_image(1)}, {}, nullptr), error);
    const auto& har = registry().at("T38");
    CHECK_THROWS_AS(m.execute(har, {demo_imu(1)}, {}, nullptr), error);  // no labels
    const auto paper = FoundationModel::build(Profile::Paper, 0);
    CHECK_THROWS_AS(paper.execute(mt, {text_payload("x")}, {}, nullptr), error);
}

TEST_CASE("full toy forward: trace kind census agrees with summary") {
    const auto m = FoundationModel::build(Profile::Desk, 7);
    OpTrace trace;
    ExecOptions opts;
    opts.max_tokens = 2;
    m.execute(registry().at("T44"), {demo_image(4)}, opts, &trace);
    const auto summary = trace.summary();
    CHECK(summary.kinds.size() == trace.op_names().size());
    CHECK(summary.total_flops > 0);
}
