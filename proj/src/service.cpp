#include "m4/service.hpp"

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cstdlib>
#include <cstring>
#include <json.hpp>

namespace m4 {

using nlohmann::json;

std::uint64_t budget_from_env(std::uint64_t fallback) {
    const char* env = std::getenv("M4_BUDGET_BYTES");
    if (!env || !*env) return fallback;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0' || v == 0) return fallback;
    return v;
}

Payload payload_from_wire(const std::string& modality, const std::vector<std::uint8_t>& bytes) {
    const Modality m = modality_from_name(modality);
    if (m == Modality::Text) return text_payload(std::string(bytes.begin(), bytes.end()));
    if (bytes.size() % 4 != 0) fail(errc::parse, "payload bytes must be little-endian f32");
    std::vector<double> values(bytes.size() / 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t u = 0;
        std::memcpy(&u, bytes.data() + 4 * i, 4);
        float f = 0;
        std::memcpy(&f, &u, 4);
        values[i] = static_cast<double>(f);
    }
    switch (m) {
        case Modality::Image: return image_payload(values);
        case Modality::AudioBackground: return audio_payload(values, false);
        case Modality::AudioIntent: return audio_payload(values, true);
        case Modality::Imu: {
            if (values.size() % 6 != 0) fail(errc::parse, "imu payload must be T x 6");
            Matrix w(values.size() / 6, 6);
            w.data = values;
            return imu_payload(w);
        }
        default: break;
    }
    fail(errc::parse, "unsupported wire modality");
}

std::vector<std::uint8_t> payload_to_wire(const Payload& payload) {
    if (payload.modality == Modality::Text)
        return std::vector<std::uint8_t>(payload.text.begin(), payload.text.end());
    std::vector<std::uint8_t> out(payload.values.data.size() * 4);
    for (std::size_t i = 0; i < payload.values.data.size(); ++i) {
        const float f = static_cast<float>(payload.values.data[i]);
        std::memcpy(out.data() + 4 * i, &f, 4);
    }
    return out;
}

// FIFO ticket over the inference mutex: strict arrival order.
class FirmwareService::Ticket {
public:
    explicit Ticket(FirmwareService& s) : s_(s) {
        std::unique_lock<std::mutex> lock(s_.infer_mu_);
        ticket_ = s_.next_ticket_++;
        s_.infer_cv_.wait(lock, [&] { return s_.serving_ticket_ == ticket_; });
    }
    ~Ticket() {
        {
            std::lock_guard<std::mutex> lock(s_.infer_mu_);
            ++s_.serving_ticket_;
        }
        s_.infer_cv_.notify_all();
    }

private:
    FirmwareService& s_;
    std::uint64_t ticket_ = 0;
};

FirmwareService::FirmwareService(FoundationModel model, TaskRegistry registry, ServiceConfig config)
    : config_(std::move(config)),
      model_(std::move(model)),
      registry_(std::move(registry)),
      paper_(FoundationModel::build(Profile::Paper, 0)) {
    if (!model_.executable()) fail(errc::invalid_argument, "the service needs the executable desk profile");
    model_bytes_ = model_.desk_weight_bytes();
    if (model_bytes_ > config_.budget_bytes)
        fail(errc::budget_exhausted, "model does not fit the service budget");
}

FirmwareService::~FirmwareService() { stop(); }

namespace {

std::string error_response(const std::string& id, errc code, const std::string& message) {
    json j;
    j["id"] = id;
    j["ok"] = false;
    j["error"] = message;
    switch (code) {
        case errc::duplicate: j["code"] = "duplicate"; break;
        case errc::not_found: j["code"] = "not_found"; break;
        case errc::parse: j["code"] = "parse"; break;
        case errc::budget_exhausted: j["code"] = "budget"; break;
        case errc::dimension_mismatch: j["code"] = "dimension"; break;
        case errc::invalid_argument: j["code"] = "invalid"; break;
        default: j["code"] = "internal"; break;
    }
    return j.dump();
}

}  // namespace

bool FirmwareService::make_resident_locked(const std::string& task_id) {
    // caller holds the inference ticket; mu_ taken here for map state
    std::lock_guard<std::mutex> lock(mu_);
    auto& entry = tasks_.at(task_id);
    if (entry.resident) return true;
    if (model_bytes_ + entry.bytes > config_.budget_bytes) return false;
    // LRU eviction of other packs until this one fits
    while (model_bytes_ + resident_bytes_ + entry.bytes > config_.budget_bytes) {
        std::string victim;
        std::uint64_t oldest = ~0ull;
        for (const auto& [tid, e] : tasks_) {
            if (!e.resident || tid == task_id) continue;
            if (e.last_used < oldest) {
                oldest = e.last_used;
                victim = tid;
            }
        }
        if (victim.empty()) return false;
        model_.detach(victim);
        tasks_.at(victim).resident = false;
        resident_bytes_ -= tasks_.at(victim).bytes;
    }
    model_.attach(entry.pack);
    entry.resident = true;
    resident_bytes_ += entry.bytes;
    return true;
}

std::string FirmwareService::handle_register(const std::string& id, const std::string& task_id,
                                             const std::vector<std::uint8_t>& pack_bytes) {
    AdapterPack pack = AdapterPack::deserialize(pack_bytes.data(), pack_bytes.size());
    if (pack.task_id != task_id) fail(errc::invalid_argument, "pack task id does not match the request");
    if (!registry_.has(task_id)) fail(errc::not_found, "task is not in the registry: " + task_id);
    {
        std::lock_guard<std::mutex> lock(mu_);
        if (tasks_.count(task_id)) fail(errc::duplicate, "task already registered: " + task_id);
    }

    Ticket ticket(*this);  // attach mutates the model: serialize with inference
    {
        std::lock_guard<std::mutex> lock(mu_);
        if (tasks_.count(task_id)) fail(errc::duplicate, "task already registered: " + task_id);
        TaskEntry entry;
        entry.bytes = pack.payload_bytes();
        entry.pack = std::move(pack);
        entry.last_used = ++tick_;
        tasks_[task_id] = std::move(entry);
    }
    const bool resident = make_resident_locked(task_id);
    json j;
    j["id"] = id;
    j["ok"] = true;
    j["task"] = task_id;
    j["resident"] = resident;
    return j.dump();
}

std::string FirmwareService::handle_invoke(const std::string& id, const std::string& task_id,
                                           const Payload& payload, const std::vector<Payload>& extra,
                                           const ExecOptions& opts) {
    {
        std::lock_guard<std::mutex> lock(mu_);
        if (!tasks_.count(task_id)) fail(errc::not_found, "unknown task: " + task_id);
    }
    const TaskSpec& task = registry_.at(task_id);

    Ticket ticket(*this);
    bool cold = false;
    {
        std::lock_guard<std::mutex> lock(mu_);
        cold = !tasks_.at(task_id).resident;
    }
    if (cold) {
        if (!make_resident_locked(task_id))
            fail(errc::budget_exhausted, "adapter cannot be made resident within the budget");
        std::lock_guard<std::mutex> lock(mu_);
        ++counters_.cold_starts;
    }
    {
        std::lock_guard<std::mutex> lock(mu_);
        tasks_.at(task_id).last_used = ++tick_;
    }

    std::vector<Payload> inputs{payload};
    inputs.insert(inputs.end(), extra.begin(), extra.end());
    OpTrace trace;
    const TaskOutput out = model_.execute(task, inputs, opts, &trace);
    {
        std::lock_guard<std::mutex> lock(mu_);
        ++counters_.invocations;
    }

    const RoutePlan plan = route(task);
    const ActivationCost cost = paper_.activation_cost(plan);
    const TraceSummary summary = trace.summary();

    json j;
    j["id"] = id;
    j["ok"] = true;
    j["task"] = task_id;
    j["cold_start"] = cold;
    json out_j;
    out_j["kind"] = output_kind_name(out.kind);
    if (out.kind == OutputKind::Label) {
        out_j["label"] = out.text;
        out_j["label_index"] = out.label_index;
        out_j["scores"] = out.scores;
    } else if (out.kind == OutputKind::Text) {
        out_j["text"] = out.text;
        out_j["text_b64"] = base64_encode(out.text.data(), out.text.size());
    } else if (out.kind == OutputKind::Speech) {
        out_j["samples"] = out.waveform.size();
        out_j["data"] = base64_encode(out.waveform.data(), out.waveform.size() * sizeof(double));
    } else {
        out_j["pixels"] = out.image.size();
        out_j["data"] = base64_encode(out.image.data(), out.image.size() * sizeof(double));
    }
    j["output"] = std::move(out_j);
    json cost_j;
    cost_j["path"] = plan.path;
    cost_j["activated"] = plan.activated;
    cost_j["params_activated"] = cost.params;
    cost_j["gflops_activated"] = cost.gflops;
    cost_j["desk_flops"] = summary.total_flops;
    cost_j["desk_op_kinds"] = summary.kinds.size();
    j["cost"] = std::move(cost_j);
    // generated byte strings may not be valid UTF-8
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::string FirmwareService::handle_list(const std::string& id) const {
    json tasks = json::array();
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [tid, entry] : tasks_) {
        json t;
        t["task"] = tid;
        t["resident"] = entry.resident;
        t["bytes"] = entry.bytes;
        tasks.push_back(std::move(t));
    }
    json j;
    j["id"] = id;
    j["ok"] = true;
    j["tasks"] = std::move(tasks);
    return j.dump();
}

std::string FirmwareService::handle_evict(const std::string& id, const std::string& task_id) {
    Ticket ticket(*this);
    std::lock_guard<std::mutex> lock(mu_);
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) fail(errc::not_found, "unknown task: " + task_id);
    if (it->second.resident) {
        model_.detach(task_id);
        it->second.resident = false;
        resident_bytes_ -= it->second.bytes;
    }
    json j;
    j["id"] = id;
    j["ok"] = true;
    j["task"] = task_id;
    j["resident"] = false;
    return j.dump();
}

ServiceStatus FirmwareService::status() const {
    ServiceStatus s;
    {
        std::lock_guard<std::mutex> lock(mu_);
        s.registered_tasks = tasks_.size();
        for (const auto& [tid, entry] : tasks_) s.resident_tasks += entry.resident ? 1 : 0;
        s.adapter_bytes = resident_bytes_;
        s.counters = counters_;
    }
    s.model_bytes = model_bytes_;
    s.bytes_used = s.model_bytes + s.adapter_bytes;
    s.budget_bytes = config_.budget_bytes;
    // live hash: base weights are immutable by contract, prove it on demand
    s.model_hash = model_.weight_hash();
    return s;
}

std::string FirmwareService::handle_line(const std::string& line) {
    std::string id = "";
    try {
        json req;
        try {
            req = json::parse(line);
        } catch (const std::exception& e) {
            fail(errc::parse, std::string("malformed frame: ") + e.what());
        }
        id = req.value("id", std::string(""));
        const std::string kind = req.value("kind", std::string(""));
        if (kind == "register") {
            const std::string task = req.at("task").get<std::string>();
            const auto pack_bytes = base64_decode(req.at("pack").get<std::string>());
            return handle_register(id, task, pack_bytes);
        }
        if (kind == "invoke") {
            const std::string task = req.at("task").get<std::string>();
            std::vector<Payload> payloads;
            const auto parse_payload = [](const json& in) {
                return payload_from_wire(in.at("modality").get<std::string>(),
                                         base64_decode(in.at("data").get<std::string>()));
            };
            if (req.contains("inputs")) {
                for (const auto& in : req.at("inputs")) payloads.push_back(parse_payload(in));
            }
            if (req.contains("input")) payloads.insert(payloads.begin(), parse_payload(req.at("input")));
            if (payloads.empty()) fail(errc::invalid_argument, "invoke needs an input payload");
            ExecOptions opts;
            if (req.contains("options")) {
                const json& o = req.at("options");
                if (o.contains("labels"))
                    for (const auto& l : o.at("labels")) opts.labels.push_back(l.get<std::string>());
                if (o.contains("slots"))
                    for (auto it = o.at("slots").begin(); it != o.at("slots").end(); ++it)
                        opts.slots[it.key()] = it.value().get<std::string>();
                opts.max_tokens = o.value("max_tokens", opts.max_tokens);
            }
            std::vector<Payload> extra(payloads.begin() + 1, payloads.end());
            return handle_invoke(id, task, payloads.front(), extra, opts);
        }
        if (kind == "list") return handle_list(id);
        if (kind == "status") {
            const ServiceStatus s = status();
            json j;
            j["id"] = id;
            j["ok"] = true;
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
            return j.dump();
        }
        if (kind == "evict") return handle_evict(id, req.at("task").get<std::string>());
        fail(errc::invalid_argument, "unknown request kind: " + kind);
    } catch (const error& e) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            ++counters_.rejections;
        }
        return error_response(id, e.code, e.what());
    } catch (const std::exception& e) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            ++counters_.rejections;
        }
        return error_response(id, errc::internal, e.what());
    }
}

void FirmwareService::serve_connection(int fd) {
    std::string buffer;
    char chunk[4096];
    while (running_.load()) {
        const ssize_t n = ::read(fd, chunk, sizeof(chunk));
        if (n <= 0) break;
        buffer.append(chunk, static_cast<std::size_t>(n));
        std::size_t pos;
        while ((pos = buffer.find('\n')) != std::string::npos) {
            const std::string line = buffer.substr(0, pos);
            buffer.erase(0, pos + 1);
            if (line.empty()) continue;
            const std::string response = handle_line(line) + "\n";
            std::size_t off = 0;
            while (off < response.size()) {
                const ssize_t w = ::write(fd, response.data() + off, response.size() - off);
                if (w <= 0) return;
                off += static_cast<std::size_t>(w);
            }
        }
    }
}

void FirmwareService::start() {
    if (running_.exchange(true)) return;
    ::unlink(config_.socket_path.c_str());
    listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (listen_fd_ < 0) fail(errc::io, "socket() failed");
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (config_.socket_path.size() >= sizeof(addr.sun_path)) fail(errc::invalid_argument, "socket path too long");
    std::strncpy(addr.sun_path, config_.socket_path.c_str(), sizeof(addr.sun_path) - 1);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        running_ = false;
        fail(errc::io, "bind() failed for " + config_.socket_path);
    }
    if (::listen(listen_fd_, 64) != 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        running_ = false;
        fail(errc::io, "listen() failed");
    }
    accept_thread_ = std::thread([this] {
        while (running_.load()) {
            const int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) {
                if (!running_.load()) break;
                continue;
            }
            std::lock_guard<std::mutex> lock(conn_mu_);
            conn_fds_.push_back(fd);
            conn_threads_.emplace_back([this, fd] {
                serve_connection(fd);
                ::close(fd);
            });
        }
    });
}

void FirmwareService::stop() {
    if (!running_.exchange(false)) return;
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    {
        std::lock_guard<std::mutex> lock(conn_mu_);
        for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : conn_threads_) {
        if (t.joinable()) t.join();
    }
    {
        std::lock_guard<std::mutex> lock(conn_mu_);
        conn_threads_.clear();
        conn_fds_.clear();
    }
    ::unlink(config_.socket_path.c_str());
}

}  // namespace m4
