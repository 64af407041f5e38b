#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>

#include "rapid/engine.hpp"

namespace rapid {

// Loopback deployment of a NodeRuntime on real sockets. Gossip, probes and
// consensus travel as UDP datagrams; the join handshake travels over
// short-lived TCP streams. Both carry one 4-byte-length-prefixed canonical
// message per datagram/stream. The node binds UDP and TCP listeners on the
// same 127.0.0.1 port, which doubles as its protocol Endpoint.
struct ServiceOptions {
    EngineOptions engine;
    int tick_ms = 20;  // wall-clock milliseconds per protocol tick
};

class NodeService {
public:
    // founding-member form: starts inside `initial`
    NodeService(Member self, const Configuration& initial, ServiceOptions opts,
                uint64_t rng_seed);
    // joiner form: performs the join handshake against `seed`
    NodeService(Member self, Endpoint seed, ProtocolParams params, ServiceOptions opts,
                uint64_t rng_seed);
    ~NodeService();

    NodeService(const NodeService&) = delete;
    NodeService& operator=(const NodeService&) = delete;

    void start();  // binds sockets and launches the tick thread
    // Stops ticking and closes sockets without announcing departure — from the
    // cluster's perspective this is a crash.
    void stop();
    // Announces departure to the observers, drains for `drain_ms`, then stops.
    void leave(int drain_ms = 400);

    // Blocks until the node holds a configuration containing itself.
    bool wait_for_join(int timeout_ms);
    // Blocks until the node's view reaches exactly `size` members.
    bool wait_for_size(size_t size, int timeout_ms);

    // Callback runs on the service thread; keep it brief.
    void on_view_change(std::function<void(const ViewChangeEvent&)> cb);

    const Member& self() const { return self_; }
    bool running() const { return running_.load(); }
    size_t cluster_size() const;
    bool has_config() const;
    bool departed() const;
    Configuration config() const;  // snapshot copy; throws if none installed
    Tick now() const { return now_.load(); }

private:
    void run_loop();
    void pump_sockets(std::vector<std::shared_ptr<const Message>>& inbox);
    void dispatch(std::vector<Outbound> outs);

    Member self_;
    ServiceOptions opts_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::unique_ptr<NodeRuntime> rt_;  // guarded by mu_
    std::function<void(const ViewChangeEvent&)> extra_cb_;
    std::thread thread_;
    std::atomic<bool> running_{false};
    std::atomic<bool> stop_requested_{false};
    std::atomic<bool> leave_requested_{false};
    std::atomic<Tick> now_{0};
    int udp_fd_ = -1;
    int tcp_fd_ = -1;
};

// True when the message kind belongs to the TCP join handshake.
bool is_join_traffic(const MessageBody& body);

}  // namespace rapid
