#include "orca/daemon/client.hpp"

#include <boost/asio.hpp>

namespace orca::daemon {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;

struct Client::Impl {
    asio::io_context io;
    tcp::socket sock{io};
    asio::streambuf buf;
};

Client::Client(const std::string& host, std::uint16_t port) : impl_(std::make_unique<Impl>()) {
    boost::system::error_code ec;
    tcp::resolver resolver(impl_->io);
    auto endpoints = resolver.resolve(host, std::to_string(port), ec);
    if (!ec) asio::connect(impl_->sock, endpoints, ec);
    if (ec) throw Error("connect_failed", "cannot connect to " + host + ":" + std::to_string(port) + ": " + ec.message());
}

Client::~Client() {
    boost::system::error_code ec;
    impl_->sock.close(ec);
}

void Client::send_raw(const std::string& line) {
    boost::system::error_code ec;
    asio::write(impl_->sock, asio::buffer(line + "\n"), ec);
    if (ec) throw Error("io_error", "send failed: " + ec.message());
}

std::string Client::read_line(std::chrono::milliseconds timeout) {
    boost::system::error_code result = asio::error::would_block;
    std::size_t n = 0;
    asio::async_read_until(impl_->sock, impl_->buf, '\n', [&](boost::system::error_code ec, std::size_t len) {
        result = ec;
        n = len;
    });
    impl_->io.restart();
    impl_->io.run_for(timeout);
    if (result == asio::error::would_block) {
        impl_->sock.cancel();
        impl_->io.restart();
        impl_->io.run();
        throw Error("timeout", "no message from the daemon");
    }
    if (result) throw Error("io_error", "read failed: " + result.message());
    std::string line(asio::buffers_begin(impl_->buf.data()),
                     asio::buffers_begin(impl_->buf.data()) + static_cast<long>(n));
    impl_->buf.consume(n);
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
    return line;
}

ServerMessage Client::read_message(std::chrono::milliseconds timeout) {
    return parse_server_message(read_line(timeout));
}

Response Client::call(CommandBody body) {
    const std::uint64_t id = next_id_++;
    send_raw(encode(Command{id, std::move(body)}));
    while (true) {
        auto msg = read_message(std::chrono::minutes(30));
        if (auto* r = std::get_if<Response>(&msg); r && r->id == id) return *r;
        if (on_event_) on_event_(msg);
    }
}

}  // namespace orca::daemon
