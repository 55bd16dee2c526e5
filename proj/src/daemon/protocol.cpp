#include "orca/daemon/protocol.hpp"

#include <charconv>
#include <initializer_list>

namespace orca::daemon {

namespace {

[[noreturn]] void schema(const std::string& where, const std::string& what) {
    throw ProtocolError("schema_error", where + ": " + what);
}

const json& object_at(const json& j, const std::string& where) {
    if (!j.is_object()) schema(where, "expected an object");
    return j;
}

void only_keys(const json& obj, std::initializer_list<std::string_view> keys, const std::string& where) {
    for (const auto& [k, _] : obj.items()) {
        bool known = false;
        for (auto allowed : keys) known = known || k == allowed;
        if (!known) schema(where, "unexpected field '" + k + "'");
    }
}

const json* field(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

const json& required(const json& obj, const char* key, const std::string& where) {
    const json* v = field(obj, key);
    if (!v) schema(where, std::string("missing field '") + key + "'");
    return *v;
}

double number(const json& v, const std::string& where) {
    if (!v.is_number()) schema(where, "expected a number");
    return v.get<double>();
}

double number(const json& obj, const char* key, const std::string& where) {
    return number(required(obj, key, where), where + "." + key);
}

double number_or(const json& obj, const char* key, double dflt, const std::string& where) {
    const json* v = field(obj, key);
    return v ? number(*v, where + "." + key) : dflt;
}

std::string string(const json& obj, const char* key, const std::string& where) {
    const json& v = required(obj, key, where);
    if (!v.is_string()) schema(where + "." + key, "expected a string");
    return v.get<std::string>();
}

std::string string_or(const json& obj, const char* key, const std::string& dflt, const std::string& where) {
    return field(obj, key) ? string(obj, key, where) : dflt;
}

bool boolean(const json& obj, const char* key, const std::string& where) {
    const json& v = required(obj, key, where);
    if (!v.is_boolean()) schema(where + "." + key, "expected a boolean");
    return v.get<bool>();
}

bool boolean_or(const json& obj, const char* key, bool dflt, const std::string& where) {
    return field(obj, key) ? boolean(obj, key, where) : dflt;
}

std::uint64_t unsigned_int(const json& v, const std::string& where) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        schema(where, "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

int integer_or(const json& obj, const char* key, int dflt, const std::string& where) {
    const json* v = field(obj, key);
    if (!v) return dflt;
    if (!v->is_number_integer()) schema(where + "." + key, "expected an integer");
    return v->get<int>();
}

json joints_json(const JointVector& q) {
    json j = json::object();
    for (const auto& [k, v] : q) j[k] = v;
    return j;
}

JointVector joints_from(const json& j, const std::string& where) {
    object_at(j, where);
    JointVector q;
    for (const auto& [k, v] : j.items()) q[k] = number(v, where + "." + k);
    return q;
}

Finger finger_from(const std::string& s, const std::string& where) {
    auto f = parse_finger(s);
    if (!f) schema(where, "unknown finger '" + s + "'");
    return *f;
}

std::string_view kTypeNames[] = {"auth",        "ping",       "get_model", "set_targets",   "jog",
                                 "calibrate",   "run_trajectory", "run_bench", "subscribe", "tension_check",
                                 "set_fault",   "stop"};

template <std::size_t I = 0>
CommandBody body_for_index(std::size_t idx) {
    if constexpr (I < std::variant_size_v<CommandBody>) {
        if (idx == I) return CommandBody(std::in_place_index<I>);
        return body_for_index<I + 1>(idx);
    } else {
        throw ProtocolError("unknown_type", "bad command index");
    }
}

struct PayloadWriter {
    json operator()(const AuthCmd& c) const { return {{"token", c.token}}; }
    json operator()(const PingCmd&) const { return json::object(); }
    json operator()(const GetModelCmd&) const { return json::object(); }
    json operator()(const SetTargetsCmd& c) const { return {{"joints", joints_json(c.joints)}}; }
    json operator()(const JogCmd& c) const { return {{"joint", c.joint}, {"deg", c.deg}}; }
    json operator()(const CalibrateCmd&) const { return json::object(); }
    json operator()(const RunTrajectoryCmd& c) const { return {{"trajectory", to_json(c.spec)}}; }
    json operator()(const RunBenchCmd& c) const {
        return {{"kind", c.kind},
                {"joint", c.joint},
                {"amplitude_deg", c.amplitude_deg},
                {"frequency_hz", c.frequency_hz},
                {"duration_s", c.duration_s},
                {"cycles", c.cycles},
                {"auto_calibrate", c.auto_calibrate},
                {"csv_path", c.csv_path}};
    }
    json operator()(const SubscribeCmd& c) const { return {{"rate_hz", c.rate_hz}}; }
    json operator()(const TensionCheckCmd& c) const { return {{"joint", c.joint}}; }
    json operator()(const SetFaultCmd& c) const {
        json j = {{"fault", c.fault}};
        if (!c.joint.empty()) j["joint"] = c.joint;
        if (c.finger) j["finger"] = std::string(to_string(*c.finger));
        if (c.force_n) j["force_n"] = *c.force_n;
        return j;
    }
    json operator()(const StopCmd&) const { return json::object(); }
};

struct PayloadReader {
    const json& p;
    std::string where;

    void operator()(AuthCmd& c) const {
        only_keys(p, {"token"}, where);
        c.token = string(p, "token", where);
    }
    void operator()(PingCmd&) const { only_keys(p, {}, where); }
    void operator()(GetModelCmd&) const { only_keys(p, {}, where); }
    void operator()(SetTargetsCmd& c) const {
        only_keys(p, {"joints"}, where);
        c.joints = joints_from(required(p, "joints", where), where + ".joints");
    }
    void operator()(JogCmd& c) const {
        only_keys(p, {"joint", "deg"}, where);
        c.joint = string(p, "joint", where);
        c.deg = number(p, "deg", where);
    }
    void operator()(CalibrateCmd&) const { only_keys(p, {}, where); }
    void operator()(RunTrajectoryCmd& c) const {
        only_keys(p, {"trajectory"}, where);
        c.spec = trajectory_from_json(required(p, "trajectory", where));
    }
    void operator()(RunBenchCmd& c) const {
        only_keys(p, {"kind", "joint", "amplitude_deg", "frequency_hz", "duration_s", "cycles", "auto_calibrate",
                      "csv_path"},
                  where);
        c.kind = string(p, "kind", where);
        if (c.kind != "sine" && c.kind != "reliability") schema(where + ".kind", "expected sine or reliability");
        c.joint = string_or(p, "joint", c.joint, where);
        c.amplitude_deg = number_or(p, "amplitude_deg", c.amplitude_deg, where);
        c.frequency_hz = number_or(p, "frequency_hz", c.frequency_hz, where);
        c.duration_s = number_or(p, "duration_s", c.duration_s, where);
        c.cycles = integer_or(p, "cycles", c.cycles, where);
        c.auto_calibrate = boolean_or(p, "auto_calibrate", c.auto_calibrate, where);
        c.csv_path = string_or(p, "csv_path", c.csv_path, where);
    }
    void operator()(SubscribeCmd& c) const {
        only_keys(p, {"rate_hz"}, where);
        c.rate_hz = number(p, "rate_hz", where);
    }
    void operator()(TensionCheckCmd& c) const {
        only_keys(p, {"joint"}, where);
        c.joint = string(p, "joint", where);
    }
    void operator()(SetFaultCmd& c) const {
        only_keys(p, {"joint", "finger", "fault", "force_n"}, where);
        c.fault = string(p, "fault", where);
        c.joint = string_or(p, "joint", "", where);
        if (field(p, "finger")) c.finger = finger_from(string(p, "finger", where), where + ".finger");
        if (field(p, "force_n")) c.force_n = number(p, "force_n", where);
        if (c.joint.empty() == !c.finger.has_value()) schema(where, "name exactly one of 'joint' or 'finger'");
    }
    void operator()(StopCmd&) const { only_keys(p, {}, where); }
};

}  // namespace

std::string_view type_name(const CommandBody& body) { return kTypeNames[body.index()]; }

Response Response::success(std::uint64_t id, json result) { return {id, true, std::nullopt, std::move(result)}; }

Response Response::failure(std::uint64_t id, std::string code, std::string message) {
    return {id, false, ErrorInfo{std::move(code), std::move(message)}, std::nullopt};
}

std::string_view to_string(Mode m) {
    switch (m) {
        case Mode::idle: return "idle";
        case Mode::jog: return "jog";
        case Mode::trajectory: return "trajectory";
        case Mode::calibrating: return "calibrating";
        case Mode::bench: return "bench";
    }
    return "?";
}

std::optional<Mode> parse_mode(std::string_view s) {
    for (Mode m : {Mode::idle, Mode::jog, Mode::trajectory, Mode::calibrating, Mode::bench}) {
        if (to_string(m) == s) return m;
    }
    return std::nullopt;
}

json to_json(const control::TrajectorySpec& s) {
    return {
        {"kind", std::string(control::to_string(s.kind))},
        {"duration_s", s.duration_s},
        {"base_pose", joints_json(s.base_pose)},
        {"sine",
         {{"joint", s.sine.joint},
          {"amplitude_deg", s.sine.amplitude_deg},
          {"frequency_hz", s.sine.frequency_hz},
          {"offset_deg", s.sine.offset_deg}}},
        {"grasp",
         {{"grasp_pose", joints_json(s.grasp.grasp_pose)},
          {"open_pose", joints_json(s.grasp.open_pose)},
          {"finger_period_s", s.grasp.finger_period_s},
          {"wrist_target_deg", s.grasp.wrist_target_deg},
          {"wrist_period_s", s.grasp.wrist_period_s},
          {"wrist_joint", s.grasp.wrist_joint}}},
        {"jog", {{"joint", s.jog.joint}, {"target_deg", s.jog.target_deg}}},
    };
}

control::TrajectorySpec trajectory_from_json(const json& j) {
    const std::string w = "trajectory";
    object_at(j, w);
    only_keys(j, {"kind", "duration_s", "base_pose", "sine", "grasp", "jog"}, w);
    control::TrajectorySpec s;
    const auto kind = control::parse_trajectory_kind(string(j, "kind", w));
    if (!kind) schema(w + ".kind", "unknown trajectory kind");
    s.kind = *kind;
    s.duration_s = number(j, "duration_s", w);
    if (const json* b = field(j, "base_pose")) s.base_pose = joints_from(*b, w + ".base_pose");
    if (const json* v = field(j, "sine")) {
        const std::string ws = w + ".sine";
        object_at(*v, ws);
        only_keys(*v, {"joint", "amplitude_deg", "frequency_hz", "offset_deg"}, ws);
        s.sine.joint = string_or(*v, "joint", "", ws);
        s.sine.amplitude_deg = number_or(*v, "amplitude_deg", 0.0, ws);
        s.sine.frequency_hz = number_or(*v, "frequency_hz", 0.0, ws);
        s.sine.offset_deg = number_or(*v, "offset_deg", 0.0, ws);
    }
    if (const json* v = field(j, "grasp")) {
        const std::string wg = w + ".grasp";
        object_at(*v, wg);
        only_keys(*v, {"grasp_pose", "open_pose", "finger_period_s", "wrist_target_deg", "wrist_period_s",
                       "wrist_joint"},
                  wg);
        auto& g = s.grasp;
        if (const json* p = field(*v, "grasp_pose")) g.grasp_pose = joints_from(*p, wg + ".grasp_pose");
        if (const json* p = field(*v, "open_pose")) g.open_pose = joints_from(*p, wg + ".open_pose");
        g.finger_period_s = number_or(*v, "finger_period_s", g.finger_period_s, wg);
        g.wrist_target_deg = number_or(*v, "wrist_target_deg", g.wrist_target_deg, wg);
        g.wrist_period_s = number_or(*v, "wrist_period_s", g.wrist_period_s, wg);
        g.wrist_joint = string_or(*v, "wrist_joint", g.wrist_joint, wg);
    }
    if (const json* v = field(j, "jog")) {
        const std::string wj = w + ".jog";
        object_at(*v, wj);
        only_keys(*v, {"joint", "target_deg"}, wj);
        s.jog.joint = string_or(*v, "joint", "", wj);
        s.jog.target_deg = number_or(*v, "target_deg", 0.0, wj);
    }
    return s;
}

json to_json(const Command& cmd) {
    return {{"id", cmd.id}, {"type", std::string(type_name(cmd.body))}, {"payload", std::visit(PayloadWriter{}, cmd.body)}};
}

Command parse_command(const json& j) {
    try {
        object_at(j, "$");
        only_keys(j, {"id", "type", "payload"}, "$");
        Command c;
        c.id = unsigned_int(required(j, "id", "$"), "$.id");
        const std::string type = string(j, "type", "$");
        std::size_t idx = std::size(kTypeNames);
        for (std::size_t i = 0; i < std::size(kTypeNames); ++i) {
            if (kTypeNames[i] == type) idx = i;
        }
        if (idx == std::size(kTypeNames)) throw ProtocolError("unknown_type", "unknown command type '" + type + "'");
        c.body = body_for_index(idx);
        static const json kEmpty = json::object();
        const json* p = field(j, "payload");
        if (p) object_at(*p, "$.payload");
        std::visit(PayloadReader{p ? *p : kEmpty, "$.payload"}, c.body);
        return c;
    } catch (const json::exception& e) {
        throw ProtocolError("schema_error", e.what());
    }
}

Command parse_command(std::string_view line) {
    json j;
    try {
        j = json::parse(line.begin(), line.end());
    } catch (const json::parse_error& e) {
        throw ProtocolError("parse_error", e.what());
    }
    return parse_command(j);
}

json to_json(const Response& r) {
    json j = {{"id", r.id}, {"ok", r.ok}};
    if (r.error) j["error"] = {{"code", r.error->code}, {"message", r.error->message}};
    if (r.result) j["result"] = *r.result;
    return j;
}

Response parse_response(const json& j) {
    try {
        object_at(j, "$");
        only_keys(j, {"id", "ok", "error", "result"}, "$");
        Response r;
        r.id = unsigned_int(required(j, "id", "$"), "$.id");
        r.ok = boolean(j, "ok", "$");
        if (const json* e = field(j, "error")) {
            object_at(*e, "$.error");
            r.error = ErrorInfo{string(*e, "code", "$.error"), string(*e, "message", "$.error")};
        }
        if (const json* res = field(j, "result")) r.result = *res;
        if (r.ok == r.error.has_value()) schema("$", "error must be present exactly when ok is false");
        return r;
    } catch (const json::exception& e) {
        throw ProtocolError("schema_error", e.what());
    }
}

json to_json(const TelemetryFrame& f) {
    json joints = json::object();
    for (const auto& [name, jt] : f.joints) {
        json e = {{"target_deg", jt.target_deg}};
        if (jt.estimated_deg) e["estimated_deg"] = *jt.estimated_deg;
        joints[name] = e;
    }
    json motors = json::object();
    for (const auto& [id, m] : f.motors) {
        motors[std::to_string(id)] = {
            {"position_rad", m.position_rad}, {"current_ma", m.current_ma}, {"temperature_c", m.temperature_c}};
    }
    json tactile = json::object();
    for (const auto& [finger, t] : f.tactile) {
        tactile[std::string(to_string(finger))] = {{"voltage_v", t.voltage_v}, {"touch", t.touch}};
    }
    return {{"seq", f.seq},
            {"timestamp", f.timestamp},
            {"backend_time", f.backend_time},
            {"joints", joints},
            {"motors", motors},
            {"tactile", tactile},
            {"calibrated", f.calibrated},
            {"mode", std::string(to_string(f.mode))}};
}

TelemetryFrame parse_telemetry_frame(const json& j) {
    try {
        const std::string w = "frame";
        object_at(j, w);
        only_keys(j, {"seq", "timestamp", "backend_time", "joints", "motors", "tactile", "calibrated", "mode"}, w);
        TelemetryFrame f;
        f.seq = unsigned_int(required(j, "seq", w), w + ".seq");
        f.timestamp = number(j, "timestamp", w);
        f.backend_time = number(j, "backend_time", w);
        f.calibrated = boolean(j, "calibrated", w);
        const auto mode = parse_mode(string(j, "mode", w));
        if (!mode) schema(w + ".mode", "unknown mode");
        f.mode = *mode;
        for (const auto& [name, e] : object_at(required(j, "joints", w), w + ".joints").items()) {
            const std::string we = w + ".joints." + name;
            object_at(e, we);
            only_keys(e, {"target_deg", "estimated_deg"}, we);
            JointTelemetry jt;
            jt.target_deg = number(e, "target_deg", we);
            if (field(e, "estimated_deg")) jt.estimated_deg = number(e, "estimated_deg", we);
            f.joints[name] = jt;
        }
        for (const auto& [key, e] : object_at(required(j, "motors", w), w + ".motors").items()) {
            const std::string we = w + ".motors." + key;
            int id = 0;
            auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
            if (ec != std::errc() || ptr != key.data() + key.size()) schema(we, "motor key must be an integer");
            object_at(e, we);
            only_keys(e, {"position_rad", "current_ma", "temperature_c"}, we);
            f.motors[id] = {number(e, "position_rad", we), number(e, "current_ma", we), number(e, "temperature_c", we)};
        }
        for (const auto& [key, e] : object_at(required(j, "tactile", w), w + ".tactile").items()) {
            const std::string we = w + ".tactile." + key;
            object_at(e, we);
            only_keys(e, {"voltage_v", "touch"}, we);
            f.tactile[finger_from(key, we)] = {number(e, "voltage_v", we), boolean(e, "touch", we)};
        }
        return f;
    } catch (const json::exception& e) {
        throw ProtocolError("schema_error", e.what());
    }
}

json to_json(const CalibrationProgress& p) {
    json j = {{"type", "calibration_progress"}, {"joint", p.joint}, {"status", p.status}};
    if (p.ratio) j["ratio"] = *p.ratio;
    return j;
}

json to_json(const TrajectoryDone& d) {
    return {{"type", "trajectory_done"}, {"samples", d.samples}, {"stopped", d.stopped}};
}

json to_json(const ServerMessage& m) {
    return std::visit(
        [](const auto& v) -> json {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, TelemetryFrame>) {
                return {{"type", "telemetry"}, {"frame", to_json(v)}};
            } else {
                return to_json(v);
            }
        },
        m);
}

ServerMessage parse_server_message(std::string_view line) {
    json j;
    try {
        j = json::parse(line.begin(), line.end());
    } catch (const json::parse_error& e) {
        throw ProtocolError("parse_error", e.what());
    }
    try {
        object_at(j, "$");
        if (!field(j, "type")) return parse_response(j);
        const std::string type = string(j, "type", "$");
        if (type == "telemetry") {
            only_keys(j, {"type", "frame"}, "$");
            return parse_telemetry_frame(required(j, "frame", "$"));
        }
        if (type == "calibration_progress") {
            only_keys(j, {"type", "joint", "status", "ratio"}, "$");
            CalibrationProgress p{string(j, "joint", "$"), string(j, "status", "$"), std::nullopt};
            if (field(j, "ratio")) p.ratio = number(j, "ratio", "$");
            return p;
        }
        if (type == "trajectory_done") {
            only_keys(j, {"type", "samples", "stopped"}, "$");
            return TrajectoryDone{unsigned_int(required(j, "samples", "$"), "$.samples"), boolean(j, "stopped", "$")};
        }
        throw ProtocolError("unknown_type", "unknown message type '" + type + "'");
    } catch (const json::exception& e) {
        throw ProtocolError("schema_error", e.what());
    }
}

std::string encode(const Command& cmd) { return to_json(cmd).dump(); }
std::string encode(const ServerMessage& msg) { return to_json(msg).dump(); }

std::uint64_t salvage_id(std::string_view line) {
    try {
        const json j = json::parse(line.begin(), line.end());
        if (j.is_object() && j.contains("id") && j["id"].is_number_unsigned()) return j["id"].get<std::uint64_t>();
    } catch (const json::exception&) {
    }
    return 0;
}

}  // namespace orca::daemon
