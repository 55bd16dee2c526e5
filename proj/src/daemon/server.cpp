#include "orca/daemon/server.hpp"

#include <condition_variable>
#include <deque>
#include <fstream>
#include <optional>
#include <sstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace orca::daemon {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

class Connection;

}  // namespace

struct Server::Impl {
    Service& svc;
    ServerConfig cfg;
    asio::io_context io{1};
    std::optional<asio::executor_work_guard<asio::io_context::executor_type>> work;
    tcp::acceptor tcp_acceptor{io};
    tcp::acceptor ws_acceptor{io};
    std::thread io_thread;

    std::mutex conns_mu;
    std::vector<std::weak_ptr<Connection>> conns;

    std::mutex workers_mu;
    std::condition_variable workers_cv;
    int workers = 0;

    std::atomic<bool> started{false};
    std::atomic<bool> stopping{false};

    Impl(Service& s, ServerConfig c) : svc(s), cfg(std::move(c)) {}

    void accept_tcp();
    void accept_ws();
    void track(const std::shared_ptr<Connection>& c);
};

namespace {

// Transport-independent part of a client connection: an ordered outbox
// drained on the socket's strand and a worker thread that handles requests
// one at a time.
class Connection : public std::enable_shared_from_this<Connection> {
public:
    Connection(Server::Impl& srv, asio::any_io_executor ex) : srv_(srv), ex_(std::move(ex)) {}
    virtual ~Connection() = default;

    void deliver(std::string text, bool droppable) {
        asio::post(ex_, [self = shared_from_this(), text = std::move(text), droppable]() mutable {
            self->enqueue(std::move(text), droppable);
        });
    }

    void close() {
        asio::post(ex_, [self = shared_from_this()] { self->close_transport(); });
    }

protected:
    using SendDone = std::function<void(beast::error_code)>;
    virtual void async_send(const std::string& text, SendDone done) = 0;
    virtual void close_transport() = 0;

    void begin(bool loopback) {
        std::weak_ptr<Connection> weak = shared_from_this();
        session_ = srv_.svc.open_session(
            [weak](std::string line, bool droppable) {
                if (auto c = weak.lock()) c->deliver(std::move(line), droppable);
            },
            loopback);
        {
            std::lock_guard lock(srv_.workers_mu);
            ++srv_.workers;
        }
        std::thread([self = shared_from_this()] { self->work(); }).detach();
    }

    void on_message(std::string text) {
        {
            std::lock_guard lock(mu_);
            if (stopping_) return;
            requests_.push_back(std::move(text));
        }
        cv_.notify_one();
    }

    // Transport ended: no more requests are accepted.
    void finish() {
        closed_ = true;
        {
            std::lock_guard lock(mu_);
            stopping_ = true;
        }
        cv_.notify_one();
    }

    Server::Impl& srv_;
    asio::any_io_executor ex_;

private:
    struct Out {
        std::string text;
        bool droppable;
    };

    void enqueue(std::string text, bool droppable) {
        if (closed_) return;
        if (droppable && events_ >= srv_.cfg.max_queued_events) return;
        if (droppable) ++events_;
        out_.push_back({std::move(text), droppable});
        if (!writing_) write_next();
    }

    void write_next() {
        writing_ = true;
        async_send(out_.front().text, [self = shared_from_this()](beast::error_code ec) {
            if (self->out_.front().droppable) --self->events_;
            self->out_.pop_front();
            if (ec) {
                self->writing_ = false;
                self->out_.clear();
                self->events_ = 0;
                self->close_transport();
                return;
            }
            if (self->out_.empty()) {
                self->writing_ = false;
            } else {
                self->write_next();
            }
        });
    }

    void work() {
        while (true) {
            std::string line;
            {
                std::unique_lock lock(mu_);
                cv_.wait(lock, [this] { return stopping_ || !requests_.empty(); });
                if (requests_.empty()) break;
                line = std::move(requests_.front());
                requests_.pop_front();
            }
            deliver(srv_.svc.handle_line(*session_, line), false);
        }
        srv_.svc.close_session(session_);
        {
            std::lock_guard lock(srv_.workers_mu);
            --srv_.workers;
        }
        srv_.workers_cv.notify_all();
    }

    std::shared_ptr<Session> session_;
    // Strand-only state.
    std::deque<Out> out_;
    std::size_t events_ = 0;
    bool writing_ = false;
    bool closed_ = false;
    // Worker state.
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::string> requests_;
    bool stopping_ = false;
};

bool is_loopback(const tcp::socket& s) {
    beast::error_code ec;
    const auto ep = s.remote_endpoint(ec);
    return !ec && ep.address().is_loopback();
}

class TcpConnection final : public Connection {
public:
    TcpConnection(Server::Impl& srv, tcp::socket sock)
        : Connection(srv, sock.get_executor()), sock_(std::move(sock)), buf_(srv.cfg.max_line_bytes) {}

    void start() {
        begin(is_loopback(sock_));
        read_next();
    }

private:
    void read_next() {
        asio::async_read_until(sock_, buf_, '\n',
                               [self = std::static_pointer_cast<TcpConnection>(shared_from_this())](
                                   beast::error_code ec, std::size_t n) { self->on_read(ec, n); });
    }

    void on_read(beast::error_code ec, std::size_t n) {
        if (ec) {
            finish();
            close_transport();
            return;
        }
        std::string line(asio::buffers_begin(buf_.data()), asio::buffers_begin(buf_.data()) + static_cast<long>(n));
        buf_.consume(n);
        while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
        if (line.find_first_not_of(" \t") != std::string::npos) on_message(std::move(line));
        read_next();
    }

    void async_send(const std::string& text, SendDone done) override {
        std::array<asio::const_buffer, 2> bufs{asio::buffer(text), asio::buffer("\n", 1)};
        asio::async_write(sock_, bufs, [done = std::move(done)](beast::error_code ec, std::size_t) { done(ec); });
    }

    void close_transport() override {
        finish();
        beast::error_code ec;
        sock_.shutdown(tcp::socket::shutdown_both, ec);
        sock_.close(ec);
    }

    tcp::socket sock_;
    asio::streambuf buf_;
};

std::string mime_type(const std::string& path) {
    auto ends = [&](const char* ext) {
        const std::string e(ext);
        return path.size() >= e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0;
    };
    if (ends(".html")) return "text/html; charset=utf-8";
    if (ends(".js") || ends(".mjs")) return "application/javascript";
    if (ends(".css")) return "text/css";
    if (ends(".json") || ends(".map")) return "application/json";
    if (ends(".svg")) return "image/svg+xml";
    if (ends(".png")) return "image/png";
    if (ends(".ico")) return "image/x-icon";
    return "application/octet-stream";
}

class WsConnection final : public Connection {
public:
    WsConnection(Server::Impl& srv, tcp::socket sock)
        : Connection(srv, sock.get_executor()), loopback_(is_loopback(sock)), stream_(std::move(sock)) {}

    void start() {
        parser_.emplace();
        parser_->body_limit(64 * 1024);
        http::async_read(stream_, buf_, *parser_,
                         [self = me()](beast::error_code ec, std::size_t) { self->on_http(ec); });
    }

private:
    std::shared_ptr<WsConnection> me() { return std::static_pointer_cast<WsConnection>(shared_from_this()); }

    void on_http(beast::error_code ec) {
        if (ec) {
            close_transport();
            return;
        }
        req_ = parser_->release();
        if (websocket::is_upgrade(req_)) {
            ws_.emplace(std::move(stream_));
            ws_->set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
            ws_->read_message_max(srv_.cfg.max_line_bytes);
            ws_->async_accept(req_, [self = me()](beast::error_code e) { self->on_accept(e); });
            return;
        }
        serve_http();
    }

    void on_accept(beast::error_code ec) {
        if (ec) {
            close_transport();
            return;
        }
        ws_->text(true);
        begin(loopback_);
        read_ws();
    }

    void read_ws() {
        ws_->async_read(buf_, [self = me()](beast::error_code ec, std::size_t) {
            if (ec) {
                self->finish();
                self->close_transport();
                return;
            }
            std::string text = beast::buffers_to_string(self->buf_.data());
            self->buf_.consume(self->buf_.size());
            std::istringstream lines(text);
            std::string line;
            while (std::getline(lines, line)) {
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (line.find_first_not_of(" \t") != std::string::npos) self->on_message(line);
            }
            self->read_ws();
        });
    }

    void async_send(const std::string& text, SendDone done) override {
        if (!ws_) {
            done(asio::error::not_connected);
            return;
        }
        ws_->async_write(asio::buffer(text), [done = std::move(done)](beast::error_code ec, std::size_t) { done(ec); });
    }

    void close_transport() override {
        finish();
        beast::error_code ec;
        if (ws_) {
            beast::get_lowest_layer(*ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
            beast::get_lowest_layer(*ws_).socket().close(ec);
        } else {
            stream_.socket().shutdown(tcp::socket::shutdown_both, ec);
            stream_.socket().close(ec);
        }
    }

    void serve_http() {
        auto res = std::make_shared<http::response<http::string_body>>();
        res->version(req_.version());
        res->keep_alive(false);
        res->set(http::field::server, kServerVersion);
        auto fail = [&](http::status st, const std::string& body) {
            res->result(st);
            res->set(http::field::content_type, "text/plain");
            res->body() = body;
        };

        std::string target(req_.target());
        if (auto q = target.find('?'); q != std::string::npos) target.resize(q);
        if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
            fail(http::status::method_not_allowed, "method not allowed\n");
        } else if (target == "/console") {
            res->result(http::status::moved_permanently);
            res->set(http::field::location, "/console/");
        } else if (target.rfind("/console/", 0) != 0) {
            fail(http::status::not_found, "not found\n");
        } else if (srv_.cfg.console_dir.empty()) {
            fail(http::status::not_found, "console assets are not installed\n");
        } else {
            std::string rel = target.substr(std::string("/console/").size());
            if (rel.empty() || rel.back() == '/') rel += "index.html";
            if (rel.find("..") != std::string::npos || rel.find('\\') != std::string::npos || rel[0] == '/') {
                fail(http::status::forbidden, "forbidden\n");
            } else {
                const std::string path = srv_.cfg.console_dir + "/" + rel;
                std::ifstream in(path, std::ios::binary);
                if (!in) {
                    fail(http::status::not_found, "not found\n");
                } else {
                    std::ostringstream body;
                    body << in.rdbuf();
                    res->result(http::status::ok);
                    res->set(http::field::content_type, mime_type(path));
                    res->body() = body.str();
                    if (req_.method() == http::verb::head) res->body().clear();
                }
            }
        }
        res->prepare_payload();
        http::async_write(stream_, *res, [self = me(), res](beast::error_code, std::size_t) {
            self->close_transport();
        });
    }

    bool loopback_;
    beast::tcp_stream stream_;
    beast::flat_buffer buf_;
    std::optional<http::request_parser<http::string_body>> parser_;
    http::request<http::string_body> req_;
    std::optional<websocket::stream<beast::tcp_stream>> ws_;
};

void listen(tcp::acceptor& acc, const asio::ip::address& addr, std::uint16_t port) {
    beast::error_code ec;
    const tcp::endpoint ep(addr, port);
    acc.open(ep.protocol(), ec);
    if (!ec) acc.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) acc.bind(ep, ec);
    if (!ec) acc.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) {
        throw Error("bind_failed", "cannot listen on " + addr.to_string() + ":" + std::to_string(port) + ": " +
                                       ec.message());
    }
}

}  // namespace

void Server::Impl::track(const std::shared_ptr<Connection>& c) {
    std::lock_guard lock(conns_mu);
    std::erase_if(conns, [](const std::weak_ptr<Connection>& w) { return w.expired(); });
    conns.push_back(c);
}

void Server::Impl::accept_tcp() {
    tcp_acceptor.async_accept(asio::make_strand(io), [this](beast::error_code ec, tcp::socket sock) {
        if (ec || stopping) return;
        auto c = std::make_shared<TcpConnection>(*this, std::move(sock));
        track(c);
        c->start();
        accept_tcp();
    });
}

void Server::Impl::accept_ws() {
    ws_acceptor.async_accept(asio::make_strand(io), [this](beast::error_code ec, tcp::socket sock) {
        if (ec || stopping) return;
        auto c = std::make_shared<WsConnection>(*this, std::move(sock));
        track(c);
        c->start();
        accept_ws();
    });
}

Server::Server(Service& service, ServerConfig cfg) : impl_(std::make_unique<Impl>(service, std::move(cfg))) {}

Server::~Server() { stop(); }

void Server::start() {
    if (impl_->started.exchange(true)) return;
    beast::error_code ec;
    const auto addr = asio::ip::make_address(impl_->cfg.bind_address, ec);
    if (ec) throw Error("bind_failed", "invalid bind address '" + impl_->cfg.bind_address + "'");
    if (!impl_->svc.requires_auth() && !addr.is_loopback()) {
        throw Error("insecure_bind", "an empty ORCA_TOKEN is only allowed on a loopback address");
    }
    listen(impl_->tcp_acceptor, addr, impl_->cfg.tcp_port);
    listen(impl_->ws_acceptor, addr, impl_->cfg.ws_port);
    impl_->work.emplace(impl_->io.get_executor());
    impl_->accept_tcp();
    impl_->accept_ws();
    impl_->io_thread = std::thread([this] { impl_->io.run(); });
}

void Server::stop() {
    if (!impl_ || !impl_->started || impl_->stopping.exchange(true)) return;
    asio::post(impl_->io, [this] {
        beast::error_code ec;
        impl_->tcp_acceptor.close(ec);
        impl_->ws_acceptor.close(ec);
    });
    {
        std::lock_guard lock(impl_->conns_mu);
        for (auto& w : impl_->conns) {
            if (auto c = w.lock()) c->close();
        }
    }
    {
        std::unique_lock lock(impl_->workers_mu);
        impl_->workers_cv.wait(lock, [this] { return impl_->workers == 0; });
    }
    impl_->work.reset();
    impl_->io.stop();
    if (impl_->io_thread.joinable()) impl_->io_thread.join();
}

std::uint16_t Server::tcp_port() const { return impl_->tcp_acceptor.local_endpoint().port(); }
std::uint16_t Server::ws_port() const { return impl_->ws_acceptor.local_endpoint().port(); }

}  // namespace orca::daemon
