#include "rapid/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

#include "rapid/messages.hpp"

namespace rapid {

namespace {

sockaddr_in addr_of(const Endpoint& ep) {
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_port = htons(ep.port);
    if (inet_pton(AF_INET, ep.host.c_str(), &a.sin_addr) != 1)
        throw ProtocolError("transport requires an IPv4 literal host, got " + ep.host);
    return a;
}

void set_nonblocking(int fd) {
    int flags = fcntl(fd, F_GETFL, 0);
    if (flags < 0 || fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0)
        throw ProtocolError("fcntl(O_NONBLOCK) failed");
}

int bind_udp(const Endpoint& ep) {
    int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd < 0) throw ProtocolError("socket(UDP) failed");
    sockaddr_in a = addr_of(ep);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) != 0) {
        ::close(fd);
        throw ProtocolError("bind(UDP " + ep.str() + ") failed: " + std::strerror(errno));
    }
    set_nonblocking(fd);
    return fd;
}

int bind_tcp(const Endpoint& ep) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ProtocolError("socket(TCP) failed");
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in a = addr_of(ep);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) != 0 || ::listen(fd, 64) != 0) {
        ::close(fd);
        throw ProtocolError("bind(TCP " + ep.str() + ") failed: " + std::strerror(errno));
    }
    set_nonblocking(fd);
    return fd;
}

void set_io_timeout(int fd, int ms) {
    timeval tv{};
    tv.tv_sec = ms / 1000;
    tv.tv_usec = (ms % 1000) * 1000;
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

bool write_all(int fd, const std::string& bytes) {
    size_t off = 0;
    while (off < bytes.size()) {
        ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
        if (n <= 0) return false;
        off += static_cast<size_t>(n);
    }
    return true;
}

// Reads one length-prefixed frame from a connected stream socket.
std::optional<Json> read_frame(int fd) {
    std::string buf;
    size_t offset = 0;
    char chunk[4096];
    for (;;) {
        if (auto j = unframe(buf, offset)) return j;
        ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
        if (n <= 0) return std::nullopt;  // EOF or timeout before a full frame
        buf.append(chunk, static_cast<size_t>(n));
    }
}

// One-shot stream delivery: connect, write a single frame, close.
bool send_tcp(const Endpoint& dst, const std::string& frame_bytes) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return false;
    set_io_timeout(fd, 500);
    sockaddr_in a = addr_of(dst);
    bool ok = ::connect(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) == 0 &&
              write_all(fd, frame_bytes);
    ::close(fd);
    return ok;
}

}  // namespace

bool is_join_traffic(const MessageBody& body) {
    return std::holds_alternative<JoinReqMsg>(body) ||
           std::holds_alternative<JoinRespMsg>(body) ||
           std::holds_alternative<JoinPhase2Msg>(body);
}

NodeService::NodeService(Member self, const Configuration& initial, ServiceOptions opts,
                         uint64_t rng_seed)
    : self_(std::move(self)), opts_(std::move(opts)) {
    rt_ = std::make_unique<NodeRuntime>(self_, initial, opts_.engine, rng_seed);
}

NodeService::NodeService(Member self, Endpoint seed, ProtocolParams params, ServiceOptions opts,
                         uint64_t rng_seed)
    : self_(std::move(self)), opts_(std::move(opts)) {
    rt_ = std::make_unique<NodeRuntime>(self_, std::move(seed), params, opts_.engine, rng_seed);
}

NodeService::~NodeService() { stop(); }

void NodeService::start() {
    if (running_.exchange(true)) return;
    stop_requested_ = false;
    udp_fd_ = bind_udp(self_.endpoint);
    try {
        tcp_fd_ = bind_tcp(self_.endpoint);
    } catch (...) {
        ::close(udp_fd_);
        udp_fd_ = -1;
        running_ = false;
        throw;
    }
    thread_ = std::thread([this] { run_loop(); });
}

void NodeService::stop() {
    if (!running_.load() && !thread_.joinable()) return;
    stop_requested_ = true;
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
    if (udp_fd_ >= 0) ::close(udp_fd_);
    if (tcp_fd_ >= 0) ::close(tcp_fd_);
    udp_fd_ = -1;
    tcp_fd_ = -1;
    running_ = false;
}

void NodeService::leave(int drain_ms) {
    {
        std::lock_guard<std::mutex> lk(mu_);
        leave_requested_ = true;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(drain_ms));
    stop();
}

void NodeService::on_view_change(std::function<void(const ViewChangeEvent&)> cb) {
    std::lock_guard<std::mutex> lk(mu_);
    extra_cb_ = std::move(cb);
    rt_->on_view_change([this](const ViewChangeEvent& ev) {
        if (extra_cb_) extra_cb_(ev);  // mu_ already held by the tick loop
        cv_.notify_all();
    });
}

size_t NodeService::cluster_size() const {
    std::lock_guard<std::mutex> lk(mu_);
    return rt_->cluster_size();
}

bool NodeService::has_config() const {
    std::lock_guard<std::mutex> lk(mu_);
    return rt_->has_config() && rt_->is_member();
}

bool NodeService::departed() const {
    std::lock_guard<std::mutex> lk(mu_);
    return rt_->departed();
}

Configuration NodeService::config() const {
    std::lock_guard<std::mutex> lk(mu_);
    if (!rt_->has_config()) throw ProtocolError("no configuration installed yet");
    return *rt_->config();
}

bool NodeService::wait_for_join(int timeout_ms) {
    std::unique_lock<std::mutex> lk(mu_);
    return cv_.wait_for(lk, std::chrono::milliseconds(timeout_ms),
                        [&] { return rt_->has_config() && rt_->is_member(); });
}

bool NodeService::wait_for_size(size_t size, int timeout_ms) {
    std::unique_lock<std::mutex> lk(mu_);
    return cv_.wait_for(lk, std::chrono::milliseconds(timeout_ms), [&] {
        return rt_->has_config() && rt_->cluster_size() == size;
    });
}

void NodeService::pump_sockets(std::vector<std::shared_ptr<const Message>>& inbox) {
    char buf[65536];
    for (;;) {
        ssize_t n = ::recvfrom(udp_fd_, buf, sizeof buf, 0, nullptr, nullptr);
        if (n <= 0) break;
        try {
            std::string bytes(buf, static_cast<size_t>(n));
            size_t offset = 0;
            if (auto j = unframe(bytes, offset))
                inbox.push_back(std::make_shared<Message>(j->get<Message>()));
        } catch (const std::exception&) {
            // malformed datagram: drop
        }
    }
    for (;;) {
        int conn = ::accept(tcp_fd_, nullptr, nullptr);
        if (conn < 0) break;
        set_io_timeout(conn, 500);
        try {
            if (auto j = read_frame(conn))
                inbox.push_back(std::make_shared<Message>(j->get<Message>()));
        } catch (const std::exception&) {
            // malformed stream: drop
        }
        ::close(conn);
    }
}

void NodeService::dispatch(std::vector<Outbound> outs) {
    for (const Outbound& out : outs) {
        std::string bytes = frame(Json(*out.msg));
        if (is_join_traffic(out.msg->body)) {
            send_tcp(out.dst, bytes);
        } else {
            sockaddr_in a = addr_of(out.dst);
            ::sendto(udp_fd_, bytes.data(), bytes.size(), 0, reinterpret_cast<sockaddr*>(&a),
                     sizeof a);
        }
    }
}

void NodeService::run_loop() {
    using clock = std::chrono::steady_clock;
    auto next = clock::now();
    std::vector<std::shared_ptr<const Message>> inbox;
    while (!stop_requested_.load()) {
        next += std::chrono::milliseconds(opts_.tick_ms);
        inbox.clear();
        pump_sockets(inbox);
        std::vector<Outbound> outs;
        {
            std::lock_guard<std::mutex> lk(mu_);
            if (leave_requested_.exchange(false)) rt_->leave();
            Tick t = now_.fetch_add(1);
            outs = rt_->step(t, inbox);
        }
        cv_.notify_all();
        dispatch(std::move(outs));
        std::this_thread::sleep_until(next);
    }
}

}  // namespace rapid
