#include "knnmerge/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>

namespace knnmerge {

// ---------------------------------------------------------------------------
// In-process hub

class QueueTransport : public Transport {
public:
    QueueTransport(QueueHub& hub, std::uint32_t node) : hub_(hub), node_(node) {}

    void send(std::uint32_t to, const Frame& f) override {
        auto& box = hub_.box(node_, to);
        {
            std::lock_guard<std::mutex> lk(box.mu);
            box.frames.push_back(encode_frame(f));
        }
        box.cv.notify_all();
    }

    Frame recv(std::uint32_t from) override {
        auto& box = hub_.box(from, node_);
        std::vector<std::uint8_t> bytes;
        {
            std::unique_lock<std::mutex> lk(box.mu);
            box.cv.wait(lk, [&] { return !box.frames.empty(); });
            bytes = std::move(box.frames.front());
            box.frames.pop_front();
        }
        Frame f = decode_frame(bytes);
        if (f.sender != from) {
            throw ProtocolError("frame sender " + std::to_string(f.sender) +
                                " does not match mailbox " + std::to_string(from));
        }
        return f;
    }

private:
    QueueHub& hub_;
    std::uint32_t node_;
};

QueueHub::QueueHub(std::uint32_t m) : m_(m), boxes_(static_cast<std::size_t>(m) * m) {}

std::unique_ptr<Transport> QueueHub::endpoint(std::uint32_t node) {
    if (node >= m_) throw std::invalid_argument("QueueHub: node id out of range");
    return std::make_unique<QueueTransport>(*this, node);
}

// ---------------------------------------------------------------------------
// TCP mesh

namespace {

void send_all(int fd, const void* data, std::size_t len, const std::string& what) {
    const char* p = static_cast<const char*>(data);
    while (len > 0) {
        const ssize_t n = ::send(fd, p, len, MSG_NOSIGNAL);
        if (n <= 0) throw TransportError("send failed: " + what);
        p += n;
        len -= static_cast<std::size_t>(n);
    }
}

void recv_all(int fd, void* data, std::size_t len, const std::string& what) {
    char* p = static_cast<char*>(data);
    while (len > 0) {
        const ssize_t n = ::recv(fd, p, len, 0);
        if (n == 0) throw TransportError("peer closed connection: " + what);
        if (n < 0) throw TransportError("recv failed (timeout?): " + what);
        p += n;
        len -= static_cast<std::size_t>(n);
    }
}

int connect_to(const TcpPeer& peer, int attempts) {
    for (int a = 0; a < attempts; ++a) {
        addrinfo hints{};
        hints.ai_family = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        const std::string port = std::to_string(peer.port);
        if (getaddrinfo(peer.host.c_str(), port.c_str(), &hints, &res) != 0 || !res) {
            throw TransportError("cannot resolve " + peer.host);
        }
        const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
        if (fd < 0) {
            freeaddrinfo(res);
            throw TransportError("cannot create socket");
        }
        const int rc = ::connect(fd, res->ai_addr, res->ai_addrlen);
        freeaddrinfo(res);
        if (rc == 0) return fd;
        ::close(fd);
        // peer may not be listening yet
        std::this_thread::sleep_for(std::chrono::milliseconds(100 * (a + 1)));
    }
    throw TransportError("cannot connect to " + peer.host + ":" + std::to_string(peer.port));
}

}  // namespace

struct TcpTransport::Conn {
    int fd = -1;
    std::uint32_t peer = 0;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::vector<std::uint8_t>> outbox;
    bool closing = false;
    std::thread writer;
    std::mutex recv_mu;
};

void TcpTransport::writer_loop(Conn& c) {
    for (;;) {
        std::vector<std::uint8_t> bytes;
        {
            std::unique_lock<std::mutex> lk(c.mu);
            c.cv.wait(lk, [&] { return c.closing || !c.outbox.empty(); });
            if (c.outbox.empty()) return;
            bytes = std::move(c.outbox.front());
            c.outbox.pop_front();
        }
        send_all(c.fd, bytes.data(), bytes.size(),
                 "frame to node " + std::to_string(c.peer));
    }
}

TcpTransport::TcpTransport(std::uint32_t node, const std::vector<TcpPeer>& peers,
                           int timeout_seconds)
    : node_(node), timeout_seconds_(timeout_seconds) {
    const auto m = static_cast<std::uint32_t>(peers.size());
    if (node >= m) throw std::invalid_argument("TcpTransport: node id out of range");
    conns_.resize(m);

    int listen_fd = -1;
    const std::uint32_t expected_accepts = node_;  // lower-numbered peers dial in
    if (expected_accepts > 0) {
        listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd < 0) throw TransportError("cannot create listen socket");
        const int one = 1;
        setsockopt(listen_fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_ANY);
        addr.sin_port = htons(peers[node_].port);
        if (::bind(listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
            ::close(listen_fd);
            throw TransportError("cannot bind port " + std::to_string(peers[node_].port));
        }
        if (::listen(listen_fd, static_cast<int>(m)) != 0) {
            ::close(listen_fd);
            throw TransportError("cannot listen on port " + std::to_string(peers[node_].port));
        }
    }

    try {
        // dial every higher-numbered peer; it identifies us by a 4-byte hello
        for (std::uint32_t peer = node_ + 1; peer < m; ++peer) {
            const int fd = connect_to(peers[peer], 50);
            std::uint32_t hello = node_;
            send_all(fd, &hello, sizeof hello, "hello to node " + std::to_string(peer));
            auto conn = std::make_unique<Conn>();
            conn->fd = fd;
            conn->peer = peer;
            conns_[peer] = std::move(conn);
        }
        for (std::uint32_t a = 0; a < expected_accepts; ++a) {
            const int fd = ::accept(listen_fd, nullptr, nullptr);
            if (fd < 0) throw TransportError("accept failed");
            std::uint32_t hello = 0;
            recv_all(fd, &hello, sizeof hello, "hello");
            if (hello >= m || conns_[hello] != nullptr) {
                ::close(fd);
                throw TransportError("unexpected hello from node " + std::to_string(hello));
            }
            auto conn = std::make_unique<Conn>();
            conn->fd = fd;
            conn->peer = hello;
            conns_[hello] = std::move(conn);
        }
    } catch (...) {
        if (listen_fd >= 0) ::close(listen_fd);
        for (auto& c : conns_) {
            if (c && c->fd >= 0) ::close(c->fd);
        }
        throw;
    }
    if (listen_fd >= 0) ::close(listen_fd);

    for (auto& c : conns_) {
        if (!c) continue;
        timeval tv{};
        tv.tv_sec = timeout_seconds_;
        setsockopt(c->fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
        c->writer = std::thread([this, conn = c.get()] { writer_loop(*conn); });
    }
}

TcpTransport::~TcpTransport() {
    for (auto& c : conns_) {
        if (!c) continue;
        {
            std::lock_guard<std::mutex> lk(c->mu);
            c->closing = true;
        }
        c->cv.notify_all();
        if (c->writer.joinable()) c->writer.join();
        if (c->fd >= 0) ::close(c->fd);
    }
}

void TcpTransport::send(std::uint32_t to, const Frame& f) {
    if (to >= conns_.size() || !conns_[to]) {
        throw TransportError("send to unknown node " + std::to_string(to));
    }
    auto& c = *conns_[to];
    {
        std::lock_guard<std::mutex> lk(c.mu);
        c.outbox.push_back(encode_frame(f));
    }
    c.cv.notify_all();
}

Frame TcpTransport::recv(std::uint32_t from) {
    if (from >= conns_.size() || !conns_[from]) {
        throw TransportError("recv from unknown node " + std::to_string(from));
    }
    auto& c = *conns_[from];
    std::lock_guard<std::mutex> lk(c.recv_mu);
    std::uint8_t header[kFrameHeaderSize];
    recv_all(c.fd, header, sizeof header, "frame header from node " + std::to_string(from));
    std::uint64_t payload_len = 0;
    Frame f = decode_frame_header({header, sizeof header}, &payload_len);
    f.payload.resize(payload_len);
    if (payload_len > 0) {
        recv_all(c.fd, f.payload.data(), payload_len,
                 "frame payload (" + std::string(msg_type_name(f.type)) + ", round " +
                     std::to_string(f.round) + ") from node " + std::to_string(from));
    }
    if (f.sender != from) {
        throw ProtocolError("frame sender " + std::to_string(f.sender) +
                            " does not match connection to node " + std::to_string(from));
    }
    return f;
}

}  // namespace knnmerge
