#pragma once

#include <atomic>
#include <condition_variable>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "m4/model.hpp"
#include "m4/registry.hpp"

namespace m4 {

struct ServiceConfig {
    std::string socket_path = "/tmp/m4.sock";
    std::uint64_t budget_bytes = 256ull << 20;
};

// M4_BUDGET_BYTES overrides the configured budget when set.
std::uint64_t budget_from_env(std::uint64_t fallback);

struct ServiceCounters {
    std::uint64_t invocations = 0;
    std::uint64_t cold_starts = 0;
    std::uint64_t rejections = 0;
};

struct ServiceStatus {
    std::size_t registered_tasks = 0;
    std::size_t resident_tasks = 0;
    std::uint64_t model_bytes = 0;
    std::uint64_t adapter_bytes = 0;  // resident packs
    std::uint64_t bytes_used = 0;     // model + resident packs
    std::uint64_t budget_bytes = 0;
    ServiceCounters counters;
    std::string model_hash;  // live SHA-256 of the base weights
};

// Wire payload codecs: text is raw UTF-8, everything else little-endian f32
// (image 3*16*16, audio N samples, imu T x 6 row-major).
Payload payload_from_wire(const std::string& modality, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> payload_to_wire(const Payload& payload);

// The foundation model exposed as a local service: newline-delimited JSON
// frames over a unix stream socket, one in-flight request per connection.
// Inference is serialized through a FIFO ticket queue; adapter residency is
// budget-bound with LRU eviction; base weights are never modified.
class FirmwareService {
public:
    FirmwareService(FoundationModel model, TaskRegistry registry, ServiceConfig config);
    ~FirmwareService();

    FirmwareService(const FirmwareService&) = delete;
    FirmwareService& operator=(const FirmwareService&) = delete;

    void start();  // binds the socket and begins accepting connections
    void stop();

    // The protocol entry point; also usable in-process without a socket.
    std::string handle_line(const std::string& line);

    ServiceStatus status() const;
    const std::string& socket_path() const { return config_.socket_path; }

private:
    struct TaskEntry {
        AdapterPack pack;
        std::uint64_t bytes = 0;
        bool resident = false;
        std::uint64_t last_used = 0;
    };

    std::string handle_register(const std::string& id, const std::string& task_id,
                                const std::vector<std::uint8_t>& pack_bytes);
    std::string handle_invoke(const std::string& id, const std::string& task_id, const Payload& payload,
                              const std::vector<Payload>& extra, const ExecOptions& opts);
    std::string handle_list(const std::string& id) const;
    std::string handle_evict(const std::string& id, const std::string& task_id);

    // requires the inference ticket; evicts LRU packs until `needed` fits
    bool make_resident_locked(const std::string& task_id);

    class Ticket;
    void serve_connection(int fd);

    ServiceConfig config_;
    FoundationModel model_;
    TaskRegistry registry_;
    FoundationModel paper_;  // activation-cost accounting
    std::uint64_t model_bytes_ = 0;

    mutable std::mutex mu_;  // tasks_, counters
    std::map<std::string, TaskEntry> tasks_;
    ServiceCounters counters_;
    std::uint64_t resident_bytes_ = 0;
    std::uint64_t tick_ = 0;

    // FIFO inference queue; also guards model_.attach/detach
    std::mutex infer_mu_;
    std::condition_variable infer_cv_;
    std::uint64_t next_ticket_ = 0;
    std::uint64_t serving_ticket_ = 0;

    std::atomic<bool> running_{false};
    int listen_fd_ = -1;
    std::thread accept_thread_;
    std::mutex conn_mu_;
    std::vector<std::thread> conn_threads_;
    std::vector<int> conn_fds_;
};

}  // namespace m4
