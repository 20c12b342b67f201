// m4 command line: builds, training, serving, benchmarks and cost analytics
// on top of the C API in m4/m4.h.

#include <CLI11.hpp>
#include <csignal>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "m4/m4.h"

using nlohmann::json;

namespace {

struct CliError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check(int status, const char* what) {
    if (status != M4_OK) {
        throw CliError(std::string(what) + ": " + m4_errstr(status) + ": " + m4_last_error());
    }
}

std::string take_string(char* s) {
    std::string out = s ? s : "";
    m4_string_free(s);
    return out;
}

void write_atomic(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CliError("cannot open " + tmp);
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw CliError("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CliError("rename failed for " + path);
}

void emit(const std::string& out_path, const std::string& contents) {
    if (out_path.empty()) {
        std::cout << contents;
        if (!contents.empty() && contents.back() != '\n') std::cout << "\n";
    } else {
        write_atomic(out_path, contents);
    }
}

// little deterministic generator for bench payloads
struct MiniRng {
    std::uint64_t state;
    explicit MiniRng(std::uint64_t seed) : state(seed ^ 0x9e3779b97f4a7c15ull) {}
    std::uint64_t next() {
        state += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * (static_cast<double>(next() >> 11) * 0x1.0p-53);
    }
};

std::string b64(const std::vector<std::uint8_t>& bytes) {
    static const char* alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        std::uint32_t v = std::uint32_t(bytes[i]) << 16;
        if (i + 1 < bytes.size()) v |= std::uint32_t(bytes[i + 1]) << 8;
        if (i + 2 < bytes.size()) v |= bytes[i + 2];
        out.push_back(alphabet[(v >> 18) & 63]);
        out.push_back(alphabet[(v >> 12) & 63]);
        out.push_back(i + 1 < bytes.size() ? alphabet[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < bytes.size() ? alphabet[v & 63] : '=');
    }
    return out;
}

std::vector<std::uint8_t> f32_bytes(const std::vector<float>& values) {
    std::vector<std::uint8_t> out(values.size() * 4);
    std::memcpy(out.data(), values.data(), out.size());
    return out;
}

json bench_payload(const std::string& modality, MiniRng& rng) {
    json p;
    if (modality == "text") {
        const std::string text = "the quick brown fox";
        p["modality"] = "text";
        p["data"] = b64(std::vector<std::uint8_t>(text.begin(), text.end()));
        return p;
    }
    std::vector<float> values;
    if (modality == "image") {
        for (int i = 0; i < 3 * 16 * 16; ++i) values.push_back(static_cast<float>(rng.uniform(0, 1)));
    } else if (modality == "imu") {
        for (int i = 0; i < 8 * 6; ++i) values.push_back(static_cast<float>(rng.uniform(-1, 1)));
    } else {  // audio
        for (int i = 0; i < 128; ++i) values.push_back(static_cast<float>(rng.uniform(-1, 1)));
    }
    p["modality"] = modality;
    p["data"] = b64(f32_bytes(values));
    return p;
}

std::uint64_t budget_env_or(std::uint64_t fallback) {
    const char* env = std::getenv("M4_BUDGET_BYTES");
    if (!env || !*env) return fallback;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    return (end != env && *end == '\0' && v > 0) ? v : fallback;
}

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

json peft_json(std::size_t rank, double alpha, const std::vector<std::string>& targets) {
    json j;
    j["technique"] = "LoRA";
    j["rank"] = rank;
    j["alpha"] = alpha;
    json t = json::array();
    for (const auto& spec : targets) {
        const auto colon = spec.find(':');
        if (colon == std::string::npos) throw CliError("target must be component:role, got " + spec);
        t.push_back({{"component", spec.substr(0, colon)}, {"role", spec.substr(colon + 1)}});
    }
    if (!t.empty()) j["targets"] = t;
    return j;
}

struct ModelHandle {
    m4_model* ptr = nullptr;
    ~ModelHandle() { m4_model_free(ptr); }
};
struct RegistryHandle {
    m4_registry* ptr = nullptr;
    ~RegistryHandle() { m4_registry_free(ptr); }
};
struct PackHandle {
    m4_pack* ptr = nullptr;
    ~PackHandle() { m4_pack_free(ptr); }
};

volatile std::sig_atomic_t g_interrupted = 0;
void on_signal(int) { g_interrupted = 1; }

int run(int argc, char** argv) {
    CLI::App app{"m4: a multi-path N-1-M foundation-model runtime with adapter packs"};
    app.require_subcommand(1);
    app.fallthrough(false);

    // ---- registry ------------------------------------------------------
    auto* registry_cmd = app.add_subcommand("registry", "inspect and validate the task registry");
    std::string reg_file, reg_task, reg_out;
    registry_cmd->add_option("--file", reg_file, "registry JSON file")->required();
    registry_cmd->add_option("--task", reg_task, "print one task instead of the summary");
    registry_cmd->add_option("--out", reg_out, "write the report here (default: stdout)");

    // ---- bench ----------------------------------------------------------
    auto* bench_cmd = app.add_subcommand("bench", "run every routable task once on the desk profile");
    std::string bench_registry, bench_out, bench_tasks;
    std::uint64_t bench_seed = 7;
    std::size_t bench_tokens = 4;
    bench_cmd->add_option("--registry", bench_registry, "registry JSON file")->required();
    bench_cmd->add_option("--seed", bench_seed, "model and payload seed");
    bench_cmd->add_option("--tasks", bench_tasks, "comma-separated task ids (default: all)");
    bench_cmd->add_option("--max-tokens", bench_tokens, "generation budget per task");
    bench_cmd->add_option("--out", bench_out, "write the JSON report here");

    // ---- train -----------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "fine-tune an adapter pack on a synthetic dataset");
    std::string tr_registry, tr_task, tr_kind = "path3-alignment", tr_modality = "imu";
    std::string tr_out, tr_log, tr_targets;
    std::uint64_t tr_seed = 0, tr_dseed = 1;
    std::size_t tr_size = 300, tr_steps = 200, tr_batch = 8, tr_rank = 4;
    double tr_lr = 0.1, tr_alpha = -1.0, tr_zipf = 0.0, tr_tau = 0.07;
    train_cmd->add_option("--registry", tr_registry)->required();
    train_cmd->add_option("--task", tr_task, "task id from the registry")->required();
    train_cmd->add_option("--dataset-kind", tr_kind, "path3-alignment | path2-lm | path1-caption");
    train_cmd->add_option("--dataset-seed", tr_dseed);
    train_cmd->add_option("--dataset-size", tr_size);
    train_cmd->add_option("--modality", tr_modality, "payload modality for synthetic data");
    train_cmd->add_option("--zipf", tr_zipf, "class skew exponent (0 = balanced)");
    train_cmd->add_option("--steps", tr_steps);
    train_cmd->add_option("--batch", tr_batch);
    train_cmd->add_option("--lr", tr_lr);
    train_cmd->add_option("--tau", tr_tau, "InfoNCE temperature");
    train_cmd->add_option("--seed", tr_seed, "weight/optimizer seed");
    train_cmd->add_option("--rank", tr_rank, "LoRA rank");
    train_cmd->add_option("--alpha", tr_alpha, "LoRA alpha (default: rank)");
    train_cmd->add_option("--targets", tr_targets, "component:role list (default: per-path)");
    train_cmd->add_option("--out", tr_out, "adapter pack output path")->required();
    train_cmd->add_option("--log", tr_log, "training log CSV path");

    // ---- eval -------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "score a pack on a synthetic eval split");
    std::string ev_registry, ev_task, ev_pack, ev_kind = "path3-alignment", ev_modality = "imu", ev_out;
    std::string ev_fractions;
    std::uint64_t ev_seed = 0, ev_dseed = 1;
    std::size_t ev_size = 300, ev_steps = 200, ev_batch = 8, ev_rank = 4, ev_repeats = 5;
    double ev_lr = 0.1, ev_zipf = 0.0;
    bool ev_loss = false;
    eval_cmd->add_option("--registry", ev_registry)->required();
    eval_cmd->add_option("--task", ev_task)->required();
    eval_cmd->add_option("--pack", ev_pack, "adapter pack file (omit for zero-shot)");
    eval_cmd->add_option("--dataset-kind", ev_kind);
    eval_cmd->add_option("--dataset-seed", ev_dseed);
    eval_cmd->add_option("--dataset-size", ev_size);
    eval_cmd->add_option("--modality", ev_modality);
    eval_cmd->add_option("--zipf", ev_zipf);
    eval_cmd->add_flag("--with-loss", ev_loss, "also report the eval loss");
    eval_cmd->add_option("--few-shot-fractions", ev_fractions,
                         "run a few-shot curve over these sample fractions instead");
    eval_cmd->add_option("--repeats", ev_repeats, "seeded repetitions for the few-shot curve");
    eval_cmd->add_option("--steps", ev_steps, "few-shot fine-tune steps");
    eval_cmd->add_option("--batch", ev_batch);
    eval_cmd->add_option("--lr", ev_lr);
    eval_cmd->add_option("--rank", ev_rank);
    eval_cmd->add_option("--seed", ev_seed);
    eval_cmd->add_option("--out", ev_out, "report path (default: stdout)");

    // ---- serve -------------------------------------------------------------
    auto* serve_cmd = app.add_subcommand("serve", "expose the model as a local socket service");
    std::string sv_registry, sv_socket = "/tmp/m4.sock";
    std::uint64_t sv_seed = 7, sv_budget = 0;
    serve_cmd->add_option("--registry", sv_registry)->required();
    serve_cmd->add_option("--socket", sv_socket, "unix socket path");
    serve_cmd->add_option("--budget", sv_budget, "memory budget in bytes (M4_BUDGET_BYTES overrides)");
    serve_cmd->add_option("--seed", sv_seed, "desk model seed");

    // ---- cost-storage ---------------------------------------------------------
    auto* storage_cmd = app.add_subcommand("cost-storage", "storage scalability curve");
    std::string st_calibration, st_components, st_format = "table", st_out, st_plot;
    std::size_t st_tasks = 50;
    bool st_qgen = false;
    storage_cmd->add_option("--calibration", st_calibration, "per-task TS calibration JSON")->required();
    storage_cmd->add_option("--components", st_components, "component table JSON (default: built-in)");
    storage_cmd->add_option("--tasks", st_tasks);
    storage_cmd->add_option("--format", st_format, "backbone storage format: table|fp16|int8|int4");
    storage_cmd->add_flag("--quantize-generators", st_qgen, "quantize generators at --format too");
    storage_cmd->add_option("--out", st_out, "CSV output path");
    storage_cmd->add_option("--plot", st_plot, "also emit a gnuplot script here");

    // ---- cost-memory -----------------------------------------------------------
    auto* memory_cmd = app.add_subcommand("cost-memory", "peak-memory footprint and residency");
    std::string me_calibration, me_components, me_format = "int4", me_out;
    std::size_t me_tasks = 50;
    std::uint64_t me_budget = 12000000000ull;
    double me_buffer = 0.02;
    bool me_qgen = false;
    memory_cmd->add_option("--calibration", me_calibration)->required();
    memory_cmd->add_option("--components", me_components);
    memory_cmd->add_option("--tasks", me_tasks);
    memory_cmd->add_option("--budget", me_budget, "device budget in bytes (M4_BUDGET_BYTES overrides)");
    memory_cmd->add_option("--format", me_format);
    memory_cmd->add_flag("--quantize-generators", me_qgen);
    memory_cmd->add_option("--buffer-fraction", me_buffer, "activation buffer fraction");
    memory_cmd->add_option("--out", me_out);

    // ---- whatif ------------------------------------------------------------------
    auto* whatif_cmd = app.add_subcommand("whatif", "project CPU cost onto an accelerator profile");
    std::string wi_table, wi_out;
    double wi_speedup = 20.0;
    whatif_cmd->add_option("--table", wi_table, "measured-latency table JSON")->required();
    whatif_cmd->add_option("--speedup", wi_speedup, "default speedup for rows without an override");
    whatif_cmd->add_option("--out", wi_out);

    // ---- census --------------------------------------------------------------------
    auto* census_cmd = app.add_subcommand("census", "operator census against a processor profile");
    std::string ce_taxonomy, ce_inventories, ce_profiles, ce_profile, ce_out;
    bool ce_prefix = false;
    census_cmd->add_option("--taxonomy", ce_taxonomy)->required();
    census_cmd->add_option("--inventories", ce_inventories)->required();
    census_cmd->add_option("--profiles", ce_profiles)->required();
    census_cmd->add_option("--profile", ce_profile)->required();
    census_cmd->add_flag("--prefix-counts", ce_prefix, "include prefix union counts");
    census_cmd->add_option("--out", ce_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << "\n";
        return 2;
    }

    if (registry_cmd->parsed()) {
        RegistryHandle reg;
        check(m4_registry_open(reg_file.c_str(), &reg.ptr), "registry open");
        char* out = nullptr;
        if (!reg_task.empty())
            check(m4_registry_task_json(reg.ptr, reg_task.c_str(), &out), "task lookup");
        else
            check(m4_registry_summary(reg.ptr, &out), "registry summary");
        emit(reg_out, take_string(out) + "\n");
        return 0;
    }

    if (bench_cmd->parsed()) {
        ModelHandle model;
        RegistryHandle reg;
        check(m4_model_build("desk", bench_seed, &model.ptr), "model build");
        check(m4_registry_open(bench_registry.c_str(), &reg.ptr), "registry open");

        std::vector<std::string> ids = split_csv(bench_tasks);
        if (ids.empty()) {
            size_t n = 0;
            check(m4_registry_size(reg.ptr, &n), "registry size");
            for (size_t i = 1; i <= n; ++i) ids.push_back("T" + std::to_string(i));
        }
        json rows = json::array();
        for (const auto& id : ids) {
            char* task_raw = nullptr;
            check(m4_registry_task_json(reg.ptr, id.c_str(), &task_raw), "task lookup");
            const json task = json::parse(take_string(task_raw));
            MiniRng rng(bench_seed ^ std::hash<std::string>{}(id));

            json req;
            req["max_tokens"] = bench_tokens;
            json inputs = json::array();
            {
                std::stringstream ss(task.at("input").get<std::string>());
                std::string modality;
                while (std::getline(ss, modality, '+')) inputs.push_back(bench_payload(modality, rng));
            }
            req["inputs"] = inputs;
            const int path = task.at("path").get<int>();
            if (path == 3) req["labels"] = {"alpha", "beta", "gamma", "delta"};
            // fill the template's own slots (the label slot is handled per
            // candidate on path 3)
            json slots = json::object();
            const std::string tmpl = task.at("prompt").at("template").get<std::string>();
            for (std::size_t i = 0; i < tmpl.size(); ++i) {
                if (tmpl[i] != '[') continue;
                const auto end = tmpl.find(']', i);
                if (end == std::string::npos) break;
                if (path != 3) slots[tmpl.substr(i + 1, end - i - 1)] = "en";
                i = end;
            }
            req["slots"] = slots;

            json row;
            row["task"] = id;
            row["name"] = task.at("task");
            row["path"] = task.at("path");
            char* resp_raw = nullptr;
            const int status = m4_execute(model.ptr, reg.ptr, id.c_str(), req.dump().c_str(), &resp_raw);
            if (status == M4_OK) {
                const json resp = json::parse(take_string(resp_raw));
                row["ok"] = true;
                row["kind"] = resp.at("kind");
                row["gflops_activated"] = resp.at("cost").at("gflops_activated");
                row["params_activated"] = resp.at("cost").at("params_activated");
                row["desk_flops"] = resp.at("trace").at("flops");
                row["op_kinds"] = resp.at("trace").at("op_kinds").size();
                row["activated"] = resp.at("trace").at("components");
            } else {
                row["ok"] = false;
                row["error"] = m4_last_error();
            }
            rows.push_back(std::move(row));
        }
        json report;
        report["seed"] = bench_seed;
        report["tasks"] = rows;
        emit(bench_out, report.dump(1) + "\n");
        return 0;
    }

    if (train_cmd->parsed()) {
        ModelHandle model;
        RegistryHandle reg;
        check(m4_model_build("desk", 7, &model.ptr), "model build");
        check(m4_registry_open(tr_registry.c_str(), &reg.ptr), "registry open");
        json opts;
        opts["task"] = tr_task;
        opts["dataset"] = {{"kind", tr_kind},     {"seed", tr_dseed}, {"size", tr_size},
                           {"modality", tr_modality}, {"zipf", tr_zipf}};
        opts["config"] = {{"steps", tr_steps}, {"batch", tr_batch}, {"lr", tr_lr},
                          {"seed", tr_seed},   {"tau", tr_tau}};
        if (!tr_targets.empty())
            opts["peft"] = peft_json(tr_rank, tr_alpha < 0 ? double(tr_rank) : tr_alpha, split_csv(tr_targets));
        else if (tr_rank != 4)
            opts["peft"] = peft_json(tr_rank, tr_alpha < 0 ? double(tr_rank) : tr_alpha, {});
        PackHandle pack;
        char* log_raw = nullptr;
        check(m4_train(model.ptr, reg.ptr, opts.dump().c_str(), &pack.ptr, &log_raw), "train");
        const std::string log = take_string(log_raw);
        check(m4_pack_save(pack.ptr, tr_out.c_str()), "pack save");
        if (!tr_log.empty()) write_atomic(tr_log, log);
        char* info_raw = nullptr;
        check(m4_pack_info(pack.ptr, &info_raw), "pack info");
        std::cout << take_string(info_raw) << "\n";
        return 0;
    }

    if (eval_cmd->parsed()) {
        ModelHandle model;
        RegistryHandle reg;
        check(m4_model_build("desk", 7, &model.ptr), "model build");
        check(m4_registry_open(ev_registry.c_str(), &reg.ptr), "registry open");
        json opts;
        opts["task"] = ev_task;
        opts["dataset"] = {{"kind", ev_kind},     {"seed", ev_dseed}, {"size", ev_size},
                           {"modality", ev_modality}, {"zipf", ev_zipf}};
        char* out = nullptr;
        if (!ev_fractions.empty()) {
            json fractions = json::array();
            for (const auto& f : split_csv(ev_fractions)) fractions.push_back(std::stod(f));
            opts["fractions"] = fractions;
            opts["repeats"] = ev_repeats;
            opts["config"] = {{"steps", ev_steps}, {"batch", ev_batch}, {"lr", ev_lr}, {"seed", ev_seed}};
            check(m4_few_shot(model.ptr, reg.ptr, opts.dump().c_str(), &out), "few-shot");
        } else {
            PackHandle pack;
            if (!ev_pack.empty()) check(m4_pack_load(ev_pack.c_str(), &pack.ptr), "pack load");
            opts["with_loss"] = ev_loss;
            check(m4_evaluate(model.ptr, reg.ptr, pack.ptr, opts.dump().c_str(), &out), "evaluate");
        }
        emit(ev_out, take_string(out) + "\n");
        return 0;
    }

    if (serve_cmd->parsed()) {
        ModelHandle model;
        RegistryHandle reg;
        check(m4_model_build("desk", sv_seed, &model.ptr), "model build");
        check(m4_registry_open(sv_registry.c_str(), &reg.ptr), "registry open");
        m4_service* svc = nullptr;
        check(m4_service_start(model.ptr, reg.ptr, sv_socket.c_str(), sv_budget, &svc), "service start");
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::cerr << "serving on " << sv_socket << " (SIGINT stops)\n";
        while (!g_interrupted) {
            struct timespec ts = {0, 200 * 1000 * 1000};
            nanosleep(&ts, nullptr);
        }
        m4_service_stop(svc);
        char* status_raw = nullptr;
        if (m4_service_status(svc, &status_raw) == M4_OK) std::cerr << take_string(status_raw) << "\n";
        m4_service_free(svc);
        return 0;
    }

    if (storage_cmd->parsed()) {
        json opts;
        opts["calibration"] = st_calibration;
        if (!st_components.empty()) opts["components"] = st_components;
        opts["tasks"] = st_tasks;
        opts["format"] = st_format;
        opts["quantize_generators"] = st_qgen;
        char* out = nullptr;
        check(m4_cost_storage_curve(opts.dump().c_str(), &out), "cost-storage");
        const std::string csv = take_string(out);
        emit(st_out, csv);
        if (!st_plot.empty()) {
            if (st_out.empty()) throw CliError("--plot needs --out so the script can reference the CSV");
            std::ostringstream gp;
            gp << "set datafile separator ','\n"
               << "set key top left\n"
               << "set xlabel 'tasks'\n"
               << "set ylabel 'bytes'\n"
               << "plot '" << st_out << "' using 1:2 with lines title 'TS models', \\\n"
               << "     '" << st_out << "' using 1:3 with lines title 'FM + adapters'\n";
            write_atomic(st_plot, gp.str());
        }
        return 0;
    }

    if (memory_cmd->parsed()) {
        json opts;
        opts["calibration"] = me_calibration;
        if (!me_components.empty()) opts["components"] = me_components;
        opts["tasks"] = me_tasks;
        opts["budget"] = budget_env_or(me_budget);
        opts["format"] = me_format;
        opts["quantize_generators"] = me_qgen;
        opts["buffer_fraction"] = me_buffer;
        char* out = nullptr;
        check(m4_cost_memory(opts.dump().c_str(), &out), "cost-memory");
        emit(me_out, take_string(out) + "\n");
        return 0;
    }

    if (whatif_cmd->parsed()) {
        json opts;
        opts["table"] = wi_table;
        opts["speedup"] = wi_speedup;
        char* out = nullptr;
        check(m4_whatif(opts.dump().c_str(), &out), "whatif");
        emit(wi_out, take_string(out));
        return 0;
    }

    if (census_cmd->parsed()) {
        json opts;
        opts["taxonomy"] = ce_taxonomy;
        opts["inventories"] = ce_inventories;
        opts["profiles"] = ce_profiles;
        opts["profile"] = ce_profile;
        opts["prefix_counts"] = ce_prefix;
        char* out = nullptr;
        check(m4_census(opts.dump().c_str(), &out), "census");
        emit(ce_out, take_string(out) + "\n");
        return 0;
    }

    std::cerr << app.help();
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: m4 <verb> [flags]; see --help\n";
        return 2;
    }
    try {
        return run(argc, argv);
    } catch (const CliError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
