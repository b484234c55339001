#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <thread>

#include "knnmerge/frame.hpp"
#include "knnmerge/transport.hpp"

using namespace knnmerge;

TEST_SUITE("frame codec") {
    TEST_CASE("done frame with empty payload round-trips") {
        Frame f;
        f.type = MsgType::Done;
        f.sender = 3;
        f.round = 0;
        const auto bytes = encode_frame(f);
        CHECK(bytes.size() == kFrameHeaderSize);
        const Frame back = decode_frame(bytes);
        CHECK(back == f);
    }

    TEST_CASE("large payload round-trips bit-exactly") {
        std::mt19937_64 rng(1);
        Frame f;
        f.type = MsgType::SampleGraph;
        f.sender = 7;
        f.round = 2;
        f.payload.resize(10 * 1024 * 1024);
        for (auto& b : f.payload) b = static_cast<std::uint8_t>(rng());
        const auto bytes = encode_frame(f);
        const Frame back = decode_frame(bytes);
        CHECK(back == f);
        CHECK(encode_frame(back) == bytes);
    }

    TEST_CASE("corrupt frames are rejected whole") {
        Frame f;
        f.type = MsgType::ResultGraph;
        f.sender = 1;
        f.round = 4;
        f.payload = {1, 2, 3, 4, 5};
        auto bytes = encode_frame(f);

        SUBCASE("truncated payload") {
            bytes.resize(bytes.size() - 2);
            CHECK_THROWS_AS(decode_frame(bytes), ProtocolError);
        }
        SUBCASE("bad magic") {
            bytes[0] = 'x';
            CHECK_THROWS_AS(decode_frame(bytes), ProtocolError);
        }
        SUBCASE("unknown version") {
            bytes[4] = 42;
            CHECK_THROWS_AS(decode_frame(bytes), ProtocolError);
        }
        SUBCASE("unknown message type") {
            bytes[8] = 9;
            CHECK_THROWS_AS(decode_frame(bytes), ProtocolError);
        }
        SUBCASE("trailing bytes") {
            bytes.push_back(0);
            CHECK_THROWS_AS(decode_frame(bytes), ProtocolError);
        }
    }
}

TEST_SUITE("transports") {
    TEST_CASE("queue hub delivers frames in order and checks senders") {
        QueueHub hub(3);
        auto t0 = hub.endpoint(0);
        auto t1 = hub.endpoint(1);

        Frame a{1, MsgType::SampleGraph, 0, 1, {9, 9}};
        Frame b{1, MsgType::ResultGraph, 0, 1, {8}};
        t0->send(1, a);
        t0->send(1, b);
        CHECK(t1->recv(0) == a);
        CHECK(t1->recv(0) == b);
    }

    TEST_CASE("tcp mesh carries the identical frames") {
        const std::vector<TcpPeer> peers = {{"127.0.0.1", 29877}, {"127.0.0.1", 29878}};
        Frame f{1, MsgType::SampleGraph, 0, 1, {}};
        f.payload.resize(300000);
        std::mt19937_64 rng(2);
        for (auto& byte : f.payload) byte = static_cast<std::uint8_t>(rng());

        Frame received;
        std::exception_ptr err;
        std::thread server([&] {
            try {
                TcpTransport t1(1, peers, 30);
                received = t1.recv(0);
                Frame done{1, MsgType::Done, 1, 0, {}};
                t1.send(0, done);
            } catch (...) {
                err = std::current_exception();
            }
        });
        {
            TcpTransport t0(0, peers, 30);
            t0.send(1, f);
            const Frame done = t0.recv(1);
            CHECK(done.type == MsgType::Done);
        }
        server.join();
        if (err) std::rethrow_exception(err);
        CHECK(received == f);

        // both transports move the exact same encoding
        QueueHub hub(2);
        auto q0 = hub.endpoint(0);
        auto q1 = hub.endpoint(1);
        q0->send(1, f);
        const Frame via_queue = q1->recv(0);
        CHECK(encode_frame(via_queue) == encode_frame(received));
    }
}
