#include "orca/calibration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <deque>

#include <nlohmann/json.hpp>

namespace orca::calib {

using nlohmann::json;

namespace {

constexpr double kTimeEps = 1e-9;

struct SweepResult {
    double position;
    double elapsed;
};

// Drives the goal at constant motor speed in `sign` direction until the
// stall detector fires on the trailing window.
SweepResult sweep_to_stall(const JointSpec& j, bus::MotorBackend& backend, const CalibrationConfig& cfg,
                           double sign, const char* side) {
    const double speed = cfg.sweep_speed_deg_s * std::abs(cfg.nominal_ratio_rad_per_deg);
    const double t0 = backend.now();
    double goal = backend.read_sample(j.motor_id).position;
    std::deque<bus::MotorSample> window;

    while (true) {
        goal += sign * speed * cfg.poll_period_s;
        backend.write_goal_position(j.motor_id, goal);
        backend.advance(cfg.poll_period_s);
        window.push_back(backend.read_sample(j.motor_id));

        while (window.size() > 2 && window.back().timestamp - window[1].timestamp >= cfg.stall.window - kTimeEps) {
            window.pop_front();
        }
        const double span = window.back().timestamp - window.front().timestamp;
        if (span >= cfg.stall.window - kTimeEps && detect_stall(std::vector(window.begin(), window.end()), cfg.stall)) {
            return {window.back().position, window.back().timestamp - t0};
        }
        if (backend.now() - t0 > cfg.stall.settle_timeout) {
            backend.write_goal_position(j.motor_id, backend.read_sample(j.motor_id).position);
            throw CalibrationError("stall_timeout", j.name,
                                   std::string("no stall detected toward the ") + side +
                                       " limit (tendon broken or disconnected?)");
        }
    }
}

void relax(const JointSpec& j, bus::MotorBackend& backend, double position, const CalibrationConfig& cfg) {
    backend.write_goal_position(j.motor_id, position);
    backend.advance(cfg.park_settle_s);
}

}  // namespace

bool CalibrationProfile::covers(const HandModel& model) const {
    return std::all_of(model.joints.begin(), model.joints.end(),
                       [&](const JointSpec& j) { return joints.count(j.name) == 1; });
}

const JointCalibration& CalibrationProfile::at(std::string_view joint) const {
    auto it = joints.find(std::string(joint));
    if (it == joints.end()) throw Error("uncalibrated", "joint '" + std::string(joint) + "' is not calibrated");
    return it->second;
}

std::string_view to_string(JointStatus s) {
    switch (s) {
        case JointStatus::pending: return "pending";
        case JointStatus::sweeping: return "sweeping";
        case JointStatus::done: return "done";
        case JointStatus::failed: return "failed";
    }
    return "?";
}

bool detect_stall(std::span<const bus::MotorSample> window, const StallDetectorConfig& cfg) {
    if (window.size() < 2 || window.back().timestamp - window.front().timestamp < cfg.window - kTimeEps) {
        throw Error("window_too_short", "stall window spans less than the configured " +
                                            std::to_string(cfg.window) + " s");
    }
    double lo = window.front().position;
    double hi = lo;
    for (const auto& s : window) {
        if (std::abs(s.current) < cfg.current_threshold_ma) return false;
        lo = std::min(lo, s.position);
        hi = std::max(hi, s.position);
    }
    return hi - lo < cfg.position_epsilon;
}

JointCalibration calibrate_joint(const HandModel& model, std::string_view joint, bus::MotorBackend& backend,
                                 const CalibrationConfig& cfg) {
    const JointSpec& j = model.joint(joint);
    if (!backend.has_motor(j.motor_id)) throw bus::UnknownMotorError(j.motor_id);

    const double hw_limit = backend.hardware_current_limit(j.motor_id);
    backend.set_current_limit(j.motor_id, std::min(cfg.sweep_current_limit_ma, hw_limit));

    JointCalibration cal;
    try {
        // Flexion first; the stop reached there is the rom_max side.
        const auto flex = sweep_to_stall(j, backend, cfg, +j.direction, "flexion");
        relax(j, backend, flex.position, cfg);
        const auto ext = sweep_to_stall(j, backend, cfg, -j.direction, "extension");
        relax(j, backend, ext.position, cfg);

        if (std::abs(flex.position - ext.position) < cfg.min_travel_rad) {
            throw CalibrationError("jammed", j.name, "stall detected immediately at start (jammed joint?)");
        }

        cal.joint = j.name;
        cal.m_max = flex.position;
        cal.m_min = ext.position;
        cal.rom_min_deg = j.rom_min_deg;
        cal.rom_max_deg = j.rom_max_deg;
        cal.ratio = (cal.m_max - cal.m_min) / (j.rom_max_deg - j.rom_min_deg);

        CalibrationProfile single;
        single.joints[j.name] = cal;
        relax(j, backend, joint_to_motor(single, j.name, j.rom_mid_deg()), cfg);
    } catch (...) {
        backend.set_current_limit(j.motor_id, hw_limit);
        throw;
    }
    backend.set_current_limit(j.motor_id, hw_limit);
    return cal;
}

std::vector<std::string> calibration_order(const HandModel& model) {
    std::vector<std::string> order;
    for (const auto& c : model.chains) {
        for (auto it = c.joint_order.rbegin(); it != c.joint_order.rend(); ++it) order.push_back(*it);
    }
    for (const auto& j : model.joints) {
        if (std::find(order.begin(), order.end(), j.name) == order.end()) order.push_back(j.name);
    }
    return order;
}

CalibrationProfile calibrate_all(const HandModel& model, bus::MotorBackend& backend,
                                 const CalibrationConfig& cfg, const ProgressCallback& progress) {
    auto lease = backend.arbiter().acquire_or_throw("calibration");

    CalibrationProfile profile;
    profile.hand_model_version = model.version;
    const auto order = calibration_order(model);
    if (progress) {
        for (const auto& name : order) progress(name, JointStatus::pending, nullptr);
    }
    for (const auto& name : order) {
        if (progress) progress(name, JointStatus::sweeping, nullptr);
        try {
            auto cal = calibrate_joint(model, name, backend, cfg);
            if (progress) progress(name, JointStatus::done, &cal);
            profile.joints[name] = std::move(cal);
        } catch (const CalibrationError&) {
            if (progress) progress(name, JointStatus::failed, nullptr);
            throw;
        } catch (const Error& e) {
            if (progress) progress(name, JointStatus::failed, nullptr);
            throw CalibrationError(e.code(), name, e.what());
        }
    }
    profile.calibrated_at = rfc3339_now();
    for (auto& [_, cal] : profile.joints) cal.calibrated_at = profile.calibrated_at;
    return profile;
}

double joint_to_motor(const CalibrationProfile& profile, std::string_view joint, double deg) {
    const auto& c = profile.at(joint);
    return c.m_min + c.ratio * (deg - c.rom_min_deg);
}

JointEstimate motor_to_joint(const CalibrationProfile& profile, std::string_view joint, double motor_rad) {
    const auto& c = profile.at(joint);
    const double deg = c.rom_min_deg + (motor_rad - c.m_min) / c.ratio;
    JointEstimate est;
    est.out_of_range = deg < c.rom_min_deg || deg > c.rom_max_deg;
    est.deg = std::clamp(deg, c.rom_min_deg, c.rom_max_deg);
    return est;
}

std::string save_profile(const CalibrationProfile& profile) {
    json doc;
    doc["format_version"] = profile.format_version;
    doc["hand_model_version"] = profile.hand_model_version;
    doc["calibrated_at"] = profile.calibrated_at;
    doc["joints"] = json::object();
    for (const auto& [name, c] : profile.joints) {
        doc["joints"][name] = {{"m_min", c.m_min}, {"m_max", c.m_max}, {"ratio", c.ratio}};
    }
    return doc.dump(2) + "\n";
}

CalibrationProfile load_profile(std::string_view text, const HandModel& model) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ConfigError(ConfigError::Kind::parse, std::string("calibration profile: ") + e.what());
    }
    auto require = [&](const json& obj, const char* key, const std::string& where) -> const json& {
        if (!obj.is_object() || !obj.contains(key)) {
            throw ConfigError(ConfigError::Kind::schema, where + ": missing '" + key + "'");
        }
        return obj[key];
    };
    auto number = [&](const json& obj, const char* key, const std::string& where) {
        const json& v = require(obj, key, where);
        if (!v.is_number()) throw ConfigError(ConfigError::Kind::schema, where + "." + key + ": expected a number");
        return v.get<double>();
    };

    CalibrationProfile p;
    const json& fv = require(doc, "format_version", "$");
    if (!fv.is_number_integer()) throw ConfigError(ConfigError::Kind::schema, "$.format_version: expected an integer");
    p.format_version = fv.get<int>();
    if (p.format_version != kProfileFormatVersion) {
        throw Error("unsupported_version",
                    "unsupported calibration format_version " + std::to_string(p.format_version));
    }
    p.hand_model_version = require(doc, "hand_model_version", "$").get<std::string>();
    if (p.hand_model_version != model.version) {
        throw Error("version_mismatch", "profile is for hand model '" + p.hand_model_version +
                                            "', loaded model is '" + model.version + "'");
    }
    p.calibrated_at = require(doc, "calibrated_at", "$").get<std::string>();
    const json& joints = require(doc, "joints", "$");
    if (!joints.is_object()) throw ConfigError(ConfigError::Kind::schema, "$.joints: expected an object");
    for (const auto& [name, entry] : joints.items()) {
        const auto& spec = model.joint(name);
        const std::string where = "$.joints." + name;
        JointCalibration c;
        c.joint = name;
        c.m_min = number(entry, "m_min", where);
        c.m_max = number(entry, "m_max", where);
        c.ratio = number(entry, "ratio", where);
        c.calibrated_at = p.calibrated_at;
        c.rom_min_deg = spec.rom_min_deg;
        c.rom_max_deg = spec.rom_max_deg;
        const double expected = (c.m_max - c.m_min) / (spec.rom_max_deg - spec.rom_min_deg);
        if (c.m_min == c.m_max || c.ratio == 0.0 ||
            std::abs(c.ratio - expected) > 1e-12 * std::max(1.0, std::abs(expected))) {
            throw ConfigError(ConfigError::Kind::invariant,
                              where + ": ratio does not match (m_max - m_min) / ROM");
        }
        p.joints[name] = c;
    }
    return p;
}

std::string rfc3339_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace orca::calib
