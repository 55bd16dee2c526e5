#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "orca/daemon/service.hpp"

namespace orca::daemon {

struct ServerConfig {
    std::string bind_address = "127.0.0.1";
    std::uint16_t tcp_port = 8472;  // 0 picks a free port
    std::uint16_t ws_port = 8473;
    std::string console_dir;        // served at /console on the WebSocket port
    std::size_t max_queued_events = 64;
    std::size_t max_line_bytes = 1 << 20;
};

// Newline-delimited JSON over TCP plus the same messages over WebSocket.
// Both transports share one Service; each connection processes its requests
// in order on its own worker thread.
class Server {
public:
    Server(Service& service, ServerConfig cfg);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    // Binds both ports. Throws Error("bind_failed") or, with an empty token on
    // a non-loopback address, Error("insecure_bind").
    void start();
    // Closes listeners and connections and waits for in-flight requests.
    void stop();

    std::uint16_t tcp_port() const;
    std::uint16_t ws_port() const;

    struct Impl;  // opaque, defined in server.cpp

private:
    std::unique_ptr<Impl> impl_;
};

}  // namespace orca::daemon
