#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "doctest.h"
#include "orca/daemon/client.hpp"
#include "orca/daemon/server.hpp"
#include "orca/daemon/service.hpp"
#include "orca/sim_backend.hpp"

using namespace orca;
using namespace orca::daemon;
namespace asio = boost::asio;
namespace beast = boost::beast;

namespace {

const HandModel& model() { return default_hand_model(); }

struct Daemon {
    bus::SimBackend sim;
    Service service;
    Server server;

    explicit Daemon(ServiceConfig cfg = {}, ServerConfig scfg = {})
        : sim(model(), bus::default_sim_params(model()), 7),
          service(model(), sim, std::move(cfg)),
          server(service, with_ephemeral(std::move(scfg))) {
        server.start();
        service.start();
    }
    ~Daemon() {
        server.stop();
        service.stop();
    }
    std::unique_ptr<Client> client() { return std::make_unique<Client>("127.0.0.1", server.tcp_port()); }

    static ServerConfig with_ephemeral(ServerConfig s) {
        s.tcp_port = 0;
        s.ws_port = 0;
        return s;
    }
};

std::string http_get(std::uint16_t port, const std::string& target, int* status) {
    asio::io_context io;
    asio::ip::tcp::socket sock(io);
    sock.connect({asio::ip::make_address("127.0.0.1"), port});
    beast::http::request<beast::http::empty_body> req{beast::http::verb::get, target, 11};
    req.set(beast::http::field::host, "localhost");
    beast::http::write(sock, req);
    beast::flat_buffer buf;
    beast::http::response<beast::http::string_body> res;
    beast::http::read(sock, buf, res);
    *status = res.result_int();
    return res.body();
}

}  // namespace

TEST_CASE("ping, model and uncalibrated rejection") {
    Daemon d;
    auto c = d.client();
    auto r = c->call(PingCmd{});
    REQUIRE(r.ok);
    CHECK(r.result->at("pong") == true);
    CHECK(r.result->at("version") == kServerVersion);

    r = c->call(GetModelCmd{});
    REQUIRE(r.ok);
    CHECK(load_hand_config(r.result->dump()) == model());

    r = c->call(SetTargetsCmd{model().neutral_pose()});
    CHECK(!r.ok);
    CHECK(r.error->code == "uncalibrated");
    r = c->call(RunTrajectoryCmd{control::sine_preset(model(), "index_mcp", 10, 0.5, 1)});
    CHECK(r.error->code == "uncalibrated");

    auto snap = d.service.snapshot();
    CHECK(!snap.calibrated);
    for (const auto& [_, j] : snap.joints) CHECK(!j.estimated_deg);
}

TEST_CASE("calibrate then jog and run trajectories") {
    Daemon d;
    auto c = d.client();
    int progress_done = 0;
    std::vector<TrajectoryDone> dones;
    auto note = [&](const ServerMessage& m) {
        if (auto* p = std::get_if<CalibrationProgress>(&m); p && p->status == "done") ++progress_done;
        if (auto* t = std::get_if<TrajectoryDone>(&m)) dones.push_back(*t);
    };
    c->on_event(note);
    // Events may arrive while a call is waiting for its response.
    auto wait_done = [&] {
        while (dones.empty()) note(c->read_message(std::chrono::seconds(10)));
        auto t = dones.front();
        dones.erase(dones.begin());
        return t;
    };
    auto r = c->call(CalibrateCmd{});
    REQUIRE(r.ok);
    CHECK(progress_done == 17);
    const auto& joints = r.result->at("joints");
    CHECK(joints.size() == 17);
    for (const auto& [name, j] : joints.items()) {
        const double truth = d.sim.params().joints.at(name).true_ratio;
        CHECK(std::abs(j.at("ratio").get<double>() - truth) / std::abs(truth) <= 0.02);
    }

    r = c->call(SetTargetsCmd{model().mid_pose()});
    REQUIRE(r.ok);
    CHECK(r.result->at("mode") == "jog");
    CHECK(d.service.mode() == Mode::jog);
    r = c->call(JogCmd{"index_mcp", 30.0});
    CHECK(r.ok);
    JointVector partial{{"index_mcp", 1.0}};
    CHECK(c->call(SetTargetsCmd{partial}).error->code == "incomplete_command");

    r = c->call(RunTrajectoryCmd{control::sine_preset(model(), "index_pip", 10.0, 1.0, 0.5)});
    REQUIRE(r.ok);
    CHECK(r.result->at("samples") == 50);
    CHECK(d.service.mode() == Mode::trajectory);
    CHECK(c->call(JogCmd{"index_mcp", 0.0}).error->code == "busy");
    auto done = wait_done();
    CHECK(done.samples == 50);
    CHECK(!done.stopped);

    // A long trajectory can be stopped.
    REQUIRE(c->call(RunTrajectoryCmd{control::sine_preset(model(), "index_pip", 10.0, 0.5, 60.0)}).ok);
    r = c->call(StopCmd{});
    CHECK(r.ok);
    CHECK(wait_done().stopped);
    CHECK(d.service.mode() == Mode::idle);

    r = c->call(TensionCheckCmd{"index_mcp"});
    REQUIRE(r.ok);
    CHECK(r.result->at("slack_rad").get<double>() == doctest::Approx(0.02).epsilon(0.25));
}

TEST_CASE("exclusive activities reject conflicting commands") {
    Daemon d;
    auto a = d.client();
    auto b = d.client();
    REQUIRE(a->call(CalibrateCmd{}).ok);

    RunBenchCmd bench;
    bench.kind = "reliability";
    bench.cycles = 600;
    a->send_raw(encode(Command{100, bench}));
    // Wait until the bench owns the hand.
    for (int i = 0; i < 2000 && d.service.mode() != Mode::bench; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    REQUIRE(d.service.mode() == Mode::bench);
    auto r = b->call(CalibrateCmd{});
    CHECK(!r.ok);
    CHECK(r.error->code == "busy");
    CHECK(b->call(SetTargetsCmd{model().neutral_pose()}).error->code == "busy");
    CHECK(b->call(StopCmd{}).error->code == "busy");
    CHECK(b->call(PingCmd{}).ok);

    auto m = a->read_message(std::chrono::seconds(120));
    auto* resp = std::get_if<Response>(&m);
    REQUIRE(resp);
    CHECK(resp->id == 100);
    REQUIRE(resp->ok);
    CHECK(resp->result->at("rows") == 600 * 17);
    CHECK(resp->result->at("max_current_ma").get<double>() <= 600.0);
}

TEST_CASE("one response per request, in order, and bad requests") {
    Daemon d;
    auto c = d.client();
    for (std::uint64_t id = 1001; id <= 1050; ++id) c->send_raw(encode(Command{id, PingCmd{}}));
    for (std::uint64_t id = 1001; id <= 1050; ++id) {
        auto m = c->read_message();
        REQUIRE(std::holds_alternative<Response>(m));
        CHECK(std::get<Response>(m).id == id);
    }
    c->send_raw(encode(Command{1007, PingCmd{}}));
    auto dup = std::get<Response>(c->read_message());
    CHECK(dup.error->code == "duplicate_id");
    c->send_raw(R"({"id":900,"type":"jog","payload":{"joint":"index_mcp"}})");
    auto bad = std::get<Response>(c->read_message());
    CHECK(bad.id == 900);
    CHECK(bad.error->code == "schema_error");
    c->send_raw(R"({"id":901,"type":"warp","payload":{}})");
    CHECK(std::get<Response>(c->read_message()).error->code == "unknown_type");
    c->send_raw("not json");
    CHECK(std::get<Response>(c->read_message()).error->code == "parse_error");
    CHECK(c->call(SubscribeCmd{5000.0}).error->code == "invalid_rate");
}

TEST_CASE("two subscribers at 20 Hz") {
    Daemon d;
    auto a = d.client();
    auto b = d.client();
    std::atomic<int> na{0}, nb{0};
    REQUIRE(a->call(SubscribeCmd{20.0}).ok);
    REQUIRE(b->call(SubscribeCmd{20.0}).ok);
    const double window = 3.0;
    auto count = [&](Client& c, std::atomic<int>& n) {
        const auto t0 = std::chrono::steady_clock::now();
        double last_ts = -1.0;
        while (std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < window) {
            auto m = c.read_message(std::chrono::seconds(2));
            if (auto* f = std::get_if<TelemetryFrame>(&m)) {
                CHECK(f->timestamp > last_ts);
                last_ts = f->timestamp;
                CHECK(f->joints.size() == 17);
                CHECK(f->motors.size() == 17);
                ++n;
            }
        }
    };
    std::thread ta(count, std::ref(*a), std::ref(na));
    std::thread tb(count, std::ref(*b), std::ref(nb));
    ta.join();
    tb.join();
    CHECK(na / window == doctest::Approx(20.0).epsilon(0.1));
    CHECK(nb / window == doctest::Approx(20.0).epsilon(0.1));
}

TEST_CASE("tactile faults show up in telemetry") {
    Daemon d;
    auto c = d.client();
    auto r = c->call(SetFaultCmd{"", Finger::index, "healthy", 0.2});
    REQUIRE(r.ok);
    auto f = d.service.snapshot();
    CHECK(f.tactile.at(Finger::index).touch);
    CHECK(!f.tactile.at(Finger::middle).touch);
    REQUIRE(c->call(SetFaultCmd{"", Finger::index, "open_circuit", 0.2}).ok);
    CHECK(!d.service.snapshot().tactile.at(Finger::index).touch);
    REQUIRE(c->call(SetFaultCmd{"", Finger::index, "degraded", 0.2}).ok);
    CHECK(!d.service.snapshot().tactile.at(Finger::index).touch);
    REQUIRE(c->call(SetFaultCmd{"", Finger::index, "degraded", 0.3}).ok);
    CHECK(d.service.snapshot().tactile.at(Finger::index).touch);
    CHECK(c->call(SetFaultCmd{"", Finger::index, "melted", std::nullopt}).error->code == "invalid_fault");

    REQUIRE(c->call(SetFaultCmd{"ring_pip", std::nullopt, "tendon_disconnected", std::nullopt}).ok);
    r = c->call(CalibrateCmd{});
    CHECK(!r.ok);
    CHECK(r.error->message.find("ring_pip") != std::string::npos);
    CHECK(!d.service.controller().calibrated());
}

TEST_CASE("token authentication") {
    ServiceConfig cfg;
    cfg.token = "s3cret";
    Daemon d(cfg);
    auto c = d.client();
    CHECK(c->call(PingCmd{}).error->code == "unauthorized");
    CHECK(c->call(AuthCmd{"wrong"}).error->code == "unauthorized");
    CHECK(c->call(AuthCmd{"s3cret"}).ok);
    CHECK(c->call(PingCmd{}).ok);
}

TEST_CASE("refuses an open bind without a token") {
    bus::SimBackend sim(model(), bus::default_sim_params(model()));
    Service svc(model(), sim);
    ServerConfig s;
    s.bind_address = "0.0.0.0";
    s.tcp_port = 0;
    s.ws_port = 0;
    Server server(svc, s);
    try {
        server.start();
        FAIL("insecure bind accepted");
    } catch (const Error& e) {
        CHECK(e.code() == "insecure_bind");
    }
}

TEST_CASE("websocket transport and console assets") {
    const auto dir = std::filesystem::temp_directory_path() / "orca_console_test";
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "index.html") << "<html>console</html>";
    ServerConfig s;
    s.console_dir = dir.string();
    Daemon d({}, s);

    asio::io_context io;
    asio::ip::tcp::socket sock(io);
    sock.connect({asio::ip::make_address("127.0.0.1"), d.server.ws_port()});
    beast::websocket::stream<asio::ip::tcp::socket> ws(std::move(sock));
    ws.handshake("localhost", "/");
    ws.write(asio::buffer(encode(Command{1, PingCmd{}})));
    beast::flat_buffer buf;
    ws.read(buf);
    auto m = parse_server_message(beast::buffers_to_string(buf.data()));
    REQUIRE(std::holds_alternative<Response>(m));
    CHECK(std::get<Response>(m).ok);
    CHECK(std::get<Response>(m).result->at("pong") == true);
    ws.close(beast::websocket::close_code::normal);

    int status = 0;
    CHECK(http_get(d.server.ws_port(), "/console/index.html", &status) == "<html>console</html>");
    CHECK(status == 200);
    CHECK(http_get(d.server.ws_port(), "/console/", &status) == "<html>console</html>");
    http_get(d.server.ws_port(), "/console/missing.js", &status);
    CHECK(status == 404);
    http_get(d.server.ws_port(), "/console/../../etc/passwd", &status);
    CHECK(status != 200);
    std::filesystem::remove_all(dir);
}

TEST_CASE("no client command sequence writes outside ROM-mapped bounds") {
    bus::SimBackend sim(model(), bus::default_sim_params(model()), 3);
    Service svc(model(), sim);
    struct Write {
        std::string joint;
        double deg, rad;
    };
    std::mutex mu;
    std::vector<Write> writes;
    svc.controller().set_write_observer([&](int, const std::string& j, double deg, double rad) {
        std::lock_guard lock(mu);
        writes.push_back({j, deg, rad});
    });
    ServerConfig scfg;
    scfg.tcp_port = scfg.ws_port = 0;
    Server server(svc, scfg);
    server.start();
    svc.start();
    {
        Client c("127.0.0.1", server.tcp_port());
        REQUIRE(c.call(CalibrateCmd{}).ok);
        std::mt19937_64 rng(1);
        std::uniform_real_distribution<double> wild(-1000.0, 1000.0);
        for (int k = 0; k < 100; ++k) {
            JointVector q;
            for (const auto& j : model().joints) q[j.name] = wild(rng);
            c.call(SetTargetsCmd{q});
            c.call(JogCmd{model().joints[rng() % 17].name, wild(rng)});
            std::this_thread::sleep_for(std::chrono::milliseconds(3));
        }
    }
    server.stop();
    svc.stop();
    const auto prof = svc.controller().profile();
    REQUIRE(prof);
    CHECK(writes.size() > 17);
    int violations = 0;
    for (const auto& w : writes) {
        const auto& spec = model().joint(w.joint);
        const auto& c = prof->joints.at(w.joint);
        if (w.deg < spec.rom_min_deg || w.deg > spec.rom_max_deg) ++violations;
        if (w.rad < std::min(c.m_min, c.m_max) - 1e-9 || w.rad > std::max(c.m_min, c.m_max) + 1e-9) ++violations;
    }
    CHECK(violations == 0);
}
