#include "doctest.h"
#include "generators.hpp"
#include "orca/daemon/protocol.hpp"

using namespace orca;
using namespace orca::daemon;

namespace {
std::string code_of(std::string_view line) {
    try {
        parse_command(line);
    } catch (const ProtocolError& e) {
        return e.code();
    }
    return "ok";
}
}  // namespace

TEST_CASE("request shape") {
    const auto j = to_json(Command{7, JogCmd{"index_mcp", 12.5}});
    CHECK(j == json::parse(R"({"id":7,"type":"jog","payload":{"joint":"index_mcp","deg":12.5}})"));
    CHECK(parse_command(R"({"id":3,"type":"ping","payload":{}})") == Command{3, PingCmd{}});
    CHECK(parse_command(R"({"id":3,"type":"ping"})") == Command{3, PingCmd{}});
    const auto sub = parse_command(R"({"id":1,"type":"subscribe","payload":{"rate_hz":20}})");
    CHECK(std::get<SubscribeCmd>(sub.body).rate_hz == 20.0);
}

TEST_CASE("response and telemetry shapes") {
    const auto ok = json::parse(encode(ServerMessage{Response::success(4, {{"pong", true}})}));
    CHECK(ok == json::parse(R"({"id":4,"ok":true,"result":{"pong":true}})"));
    const auto bad = json::parse(encode(ServerMessage{Response::failure(5, "busy", "calibration running")}));
    CHECK(bad == json::parse(R"({"id":5,"ok":false,"error":{"code":"busy","message":"calibration running"}})"));

    TelemetryFrame f;
    f.joints["index_mcp"] = {10.0, std::nullopt};
    const auto t = json::parse(encode(ServerMessage{f}));
    CHECK(t.at("type") == "telemetry");
    CHECK(t.at("frame").at("mode") == "idle");
    CHECK(!t.at("frame").at("joints").at("index_mcp").contains("estimated_deg"));
}

TEST_CASE("malformed requests") {
    CHECK(code_of("{") == "parse_error");
    CHECK(code_of("[1,2]") == "schema_error");
    CHECK(code_of(R"({"id":1,"type":"dance","payload":{}})") == "unknown_type");
    CHECK(code_of(R"({"type":"ping","payload":{}})") == "schema_error");
    CHECK(code_of(R"({"id":-1,"type":"ping","payload":{}})") == "schema_error");
    CHECK(code_of(R"({"id":1,"type":"jog","payload":{"joint":"a"}})") == "schema_error");
    CHECK(code_of(R"({"id":1,"type":"jog","payload":{"joint":"a","deg":"ten"}})") == "schema_error");
    CHECK(code_of(R"({"id":1,"type":"jog","payload":{"joint":"a","deg":1,"extra":0}})") == "schema_error");
    CHECK(code_of(R"({"id":1,"type":"set_fault","payload":{"fault":"jammed"}})") == "schema_error");
    CHECK(code_of(R"({"id":1,"type":"set_fault","payload":{"fault":"x","joint":"a","finger":"index"}})") == "schema_error");
    CHECK(salvage_id(R"({"id":42,"type":"jog","payload":{}})") == 42);
    CHECK(salvage_id("garbage") == 0);
}

TEST_CASE("encodings are single lines") {
    gen::Gen g(1);
    for (int k = 0; k < 500; ++k) {
        CHECK(encode(g.command()).find('\n') == std::string::npos);
        CHECK(encode(g.server_message()).find('\n') == std::string::npos);
    }
}

TEST_CASE("property: every message type survives encode then parse") {
    gen::Gen g(2);
    for (int k = 0; k < 2000; ++k) {
        const auto c = g.command();
        const auto back = parse_command(encode(c));
        CHECK(back == c);
        const auto m = g.server_message();
        CHECK(parse_server_message(encode(m)) == m);
    }
    for (int k = 0; k < 200; ++k) {
        const auto s = g.trajectory();
        CHECK(trajectory_from_json(to_json(s)) == s);
    }
}

TEST_CASE("mode names") {
    for (Mode m : {Mode::idle, Mode::jog, Mode::trajectory, Mode::calibrating, Mode::bench})
        CHECK(parse_mode(to_string(m)) == m);
    CHECK(!parse_mode("dancing"));
}
