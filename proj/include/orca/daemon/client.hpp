#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include "orca/daemon/protocol.hpp"

namespace orca::daemon {

// Blocking line-protocol client. Messages other than the awaited response
// (telemetry, progress) are handed to the event callback.
class Client {
public:
    using EventHandler = std::function<void(const ServerMessage&)>;

    Client(const std::string& host, std::uint16_t port);
    ~Client();
    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    void on_event(EventHandler h) { on_event_ = std::move(h); }

    // Assigns the next request id, sends and waits for the matching response.
    Response call(CommandBody body);
    void send_raw(const std::string& line);
    // Next message of any kind; throws Error("timeout") when none arrives.
    ServerMessage read_message(std::chrono::milliseconds timeout = std::chrono::seconds(30));
    std::string read_line(std::chrono::milliseconds timeout = std::chrono::seconds(30));

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    EventHandler on_event_;
    std::uint64_t next_id_ = 1;
};

}  // namespace orca::daemon
