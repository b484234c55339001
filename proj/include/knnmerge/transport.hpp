#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "knnmerge/frame.hpp"

namespace knnmerge {

/// Per-node endpoint. send() may buffer; recv() blocks until a frame from
/// the named peer arrives and validates its sender id.
class Transport {
public:
    virtual ~Transport() = default;
    virtual void send(std::uint32_t to, const Frame& f) = 0;
    virtual Frame recv(std::uint32_t from) = 0;
};

/// In-process hub: one bounded-free queue per (src, dst) pair, carrying the
/// exact encoded Frame bytes so both transports exercise the same format.
class QueueHub {
public:
    explicit QueueHub(std::uint32_t m);

    std::uint32_t size() const { return m_; }
    std::unique_ptr<Transport> endpoint(std::uint32_t node);

private:
    friend class QueueTransport;

    struct Mailbox {
        std::mutex mu;
        std::condition_variable cv;
        std::deque<std::vector<std::uint8_t>> frames;
    };

    Mailbox& box(std::uint32_t src, std::uint32_t dst) { return boxes_[src * m_ + dst]; }

    std::uint32_t m_;
    std::vector<Mailbox> boxes_;
};

struct TcpPeer {
    std::string host;
    std::uint16_t port = 0;
};

/// Full-mesh TCP endpoint: listens on its own port, connects to every
/// higher-numbered peer and accepts the rest. Sends run on a writer thread
/// per peer so round-level sends never block on slow receivers.
class TcpTransport : public Transport {
public:
    /// peers[i] names node i; peers[node].port is the local listen port.
    TcpTransport(std::uint32_t node, const std::vector<TcpPeer>& peers,
                 int timeout_seconds = 300);
    ~TcpTransport() override;

    void send(std::uint32_t to, const Frame& f) override;
    Frame recv(std::uint32_t from) override;

private:
    struct Conn;
    void writer_loop(Conn& c);

    std::uint32_t node_;
    int timeout_seconds_;
    std::vector<std::unique_ptr<Conn>> conns_;  // indexed by peer id; self is null
};

}  // namespace knnmerge
