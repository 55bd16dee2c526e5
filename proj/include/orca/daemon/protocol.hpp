#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include <nlohmann/json.hpp>

#include "orca/control.hpp"
#include "orca/errors.hpp"
#include "orca/types.hpp"

namespace orca::daemon {

using nlohmann::json;

inline constexpr int kProtocolVersion = 1;
inline constexpr const char* kServerVersion = "orca-daemon 0.1.0";

class ProtocolError : public Error {
public:
    using Error::Error;
};

// Requests: {"id":u64,"type":"...","payload":{...}}

struct AuthCmd {
    std::string token;
    bool operator==(const AuthCmd&) const = default;
};
struct PingCmd {
    bool operator==(const PingCmd&) const = default;
};
struct GetModelCmd {
    bool operator==(const GetModelCmd&) const = default;
};
struct SetTargetsCmd {
    JointVector joints;
    bool operator==(const SetTargetsCmd&) const = default;
};
struct JogCmd {
    std::string joint;
    double deg = 0.0;
    bool operator==(const JogCmd&) const = default;
};
struct CalibrateCmd {
    bool operator==(const CalibrateCmd&) const = default;
};
struct RunTrajectoryCmd {
    control::TrajectorySpec spec;
    bool operator==(const RunTrajectoryCmd&) const = default;
};
struct RunBenchCmd {
    std::string kind = "sine";  // sine | reliability
    std::string joint = "index_mcp";
    double amplitude_deg = 40.0;
    double frequency_hz = 0.2;
    double duration_s = 30.0;
    int cycles = 10;
    bool auto_calibrate = false;
    std::string csv_path;  // written by the daemon when non-empty
    bool operator==(const RunBenchCmd&) const = default;
};
struct SubscribeCmd {
    double rate_hz = 20.0;  // 0 unsubscribes
    bool operator==(const SubscribeCmd&) const = default;
};
struct TensionCheckCmd {
    std::string joint;
    bool operator==(const TensionCheckCmd&) const = default;
};
// Either a joint drive fault or a tactile channel fault with an applied force.
struct SetFaultCmd {
    std::string joint;
    std::optional<Finger> finger;
    std::string fault;
    std::optional<double> force_n;
    bool operator==(const SetFaultCmd&) const = default;
};
struct StopCmd {
    bool operator==(const StopCmd&) const = default;
};

using CommandBody = std::variant<AuthCmd, PingCmd, GetModelCmd, SetTargetsCmd, JogCmd, CalibrateCmd,
                                 RunTrajectoryCmd, RunBenchCmd, SubscribeCmd, TensionCheckCmd, SetFaultCmd,
                                 StopCmd>;

struct Command {
    std::uint64_t id = 0;
    CommandBody body;
    bool operator==(const Command&) const = default;
};

std::string_view type_name(const CommandBody& body);

// Responses: {"id":u64,"ok":bool,"error":{"code","message"}?,"result":{...}?}
struct ErrorInfo {
    std::string code;
    std::string message;
    bool operator==(const ErrorInfo&) const = default;
};

struct Response {
    std::uint64_t id = 0;
    bool ok = true;
    std::optional<ErrorInfo> error;
    std::optional<json> result;
    bool operator==(const Response&) const = default;

    static Response success(std::uint64_t id, json result = json::object());
    static Response failure(std::uint64_t id, std::string code, std::string message);
};

// Telemetry: {"type":"telemetry","frame":{...}}
enum class Mode { idle, jog, trajectory, calibrating, bench };
std::string_view to_string(Mode m);
std::optional<Mode> parse_mode(std::string_view s);

struct JointTelemetry {
    double target_deg = 0.0;
    std::optional<double> estimated_deg;  // absent while uncalibrated
    bool operator==(const JointTelemetry&) const = default;
};
struct MotorTelemetry {
    double position_rad = 0.0;
    double current_ma = 0.0;
    double temperature_c = 0.0;
    bool operator==(const MotorTelemetry&) const = default;
};
struct TactileTelemetry {
    double voltage_v = 0.0;
    bool touch = false;
    bool operator==(const TactileTelemetry&) const = default;
};
struct TelemetryFrame {
    std::uint64_t seq = 0;
    double timestamp = 0.0;  // s since service start, monotone
    double backend_time = 0.0;
    std::map<std::string, JointTelemetry> joints;
    std::map<int, MotorTelemetry> motors;
    std::map<Finger, TactileTelemetry> tactile;
    bool calibrated = false;
    Mode mode = Mode::idle;
    bool operator==(const TelemetryFrame&) const = default;
};

// {"type":"calibration_progress","joint":..,"status":..,"ratio":..?}
struct CalibrationProgress {
    std::string joint;
    std::string status;  // pending | sweeping | done | failed
    std::optional<double> ratio;
    bool operator==(const CalibrationProgress&) const = default;
};
// {"type":"trajectory_done","samples":n,"stopped":bool}
struct TrajectoryDone {
    std::uint64_t samples = 0;
    bool stopped = false;
    bool operator==(const TrajectoryDone&) const = default;
};

using ServerMessage = std::variant<Response, TelemetryFrame, CalibrationProgress, TrajectoryDone>;

json to_json(const control::TrajectorySpec& spec);
control::TrajectorySpec trajectory_from_json(const json& j);

json to_json(const Command& cmd);
json to_json(const Response& r);
json to_json(const TelemetryFrame& f);  // the frame object itself
json to_json(const CalibrationProgress& p);
json to_json(const TrajectoryDone& d);
json to_json(const ServerMessage& m);

// Throw ProtocolError: "parse_error", "schema_error" or "unknown_type".
Command parse_command(const json& j);
Command parse_command(std::string_view line);
inline Command parse_command(const std::string& line) { return parse_command(std::string_view(line)); }
inline Command parse_command(const char* line) { return parse_command(std::string_view(line)); }
Response parse_response(const json& j);
TelemetryFrame parse_telemetry_frame(const json& frame);
ServerMessage parse_server_message(std::string_view line);

// Single-line encodings (no embedded newline) for the TCP transport.
std::string encode(const Command& cmd);
std::string encode(const ServerMessage& msg);

// Best-effort request id of a malformed request (0 when absent).
std::uint64_t salvage_id(std::string_view line);

}  // namespace orca::daemon
