#include "orca/sim_backend.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "orca/errors.hpp"

namespace orca::bus {

using nlohmann::json;

namespace {

const char kDefaultSimConfig[] =
#include "default_sim_config.inc"
    ;

constexpr double kNs = 1e-9;

std::int64_t to_ns(double seconds) { return std::llround(seconds * 1e9); }

void apply_joint_fields(const json& j, SimJointParams& p, const std::string& where) {
    if (!j.is_object()) throw ConfigError(ConfigError::Kind::schema, where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        if (!value.is_number()) {
            throw ConfigError(ConfigError::Kind::schema, where + "." + key + ": expected a number");
        }
        const double v = value.get<double>();
        if (key == "true_ratio") p.true_ratio = v;
        else if (key == "slack_deadband") p.slack_deadband = v;
        else if (key == "drift_rate") p.drift_rate = v;
        else if (key == "lag_seconds") p.lag_seconds = v;
        else if (key == "time_constant") p.time_constant = v;
        else if (key == "current_limit_ma") p.current_limit_ma = v;
        else if (key == "stall_current_ma") p.stall_current_ma = v;
        else if (key == "measurement_noise_deg") p.measurement_noise_deg = v;
        else if (key == "motor_zero_rad") p.motor_zero_rad = v;
        else if (key == "initial_angle_deg") p.initial_angle_deg = v;
        else throw ConfigError(ConfigError::Kind::schema, where + ": unknown field '" + key + "'");
    }
}

}  // namespace

std::vector<std::string> validate(const SimParams& params) {
    std::vector<std::string> out;
    for (const auto& [name, p] : params.joints) {
        const std::string who = "sim joint '" + name + "': ";
        if (p.true_ratio == 0.0 || !std::isfinite(p.true_ratio)) out.push_back(who + "true_ratio must be nonzero");
        if (p.slack_deadband < 0.0) out.push_back(who + "slack_deadband must be >= 0");
        if (p.drift_rate < 0.0) out.push_back(who + "drift_rate must be >= 0");
        if (p.lag_seconds < 0.0 || p.lag_seconds >= 1.0) out.push_back(who + "lag_seconds must be in [0, 1)");
        if (p.time_constant < 0.0) out.push_back(who + "time_constant must be >= 0");
        if (p.current_limit_ma < 0.0) out.push_back(who + "current_limit_ma must be >= 0");
        if (p.stall_current_ma < 0.0) out.push_back(who + "stall_current_ma must be >= 0");
        if (p.measurement_noise_deg < 0.0) out.push_back(who + "measurement_noise_deg must be >= 0");
    }
    if (params.baseline_current_ma < 0.0) out.emplace_back("baseline_current_ma must be >= 0");
    if (params.current_gain_ma_per_rad < 0.0) out.emplace_back("current_gain_ma_per_rad must be >= 0");
    if (params.thermal_time_constant_s <= 0.0) out.emplace_back("thermal_time_constant_s must be > 0");
    if (!(params.step_seconds > 0.0)) out.emplace_back("step_seconds must be > 0");
    return out;
}

std::string_view default_sim_config_text() { return kDefaultSimConfig; }

SimParams load_sim_params(std::string_view text, const HandModel& model) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ConfigError(ConfigError::Kind::parse, std::string("sim params: ") + e.what());
    }
    SimParams params;
    SimJointParams defaults;
    if (doc.contains("defaults")) apply_joint_fields(doc["defaults"], defaults, "defaults");

    auto num = [&](const char* key, double& dst) {
        if (doc.contains(key)) dst = doc[key].get<double>();
    };
    num("baseline_current_ma", params.baseline_current_ma);
    num("current_gain_ma_per_rad", params.current_gain_ma_per_rad);
    num("ambient_c", params.ambient_c);
    num("thermal_gain_c_per_a2", params.thermal_gain_c_per_a2);
    num("thermal_time_constant_s", params.thermal_time_constant_s);
    num("step_seconds", params.step_seconds);
    double zero_step = 0.0;
    num("motor_zero_step_rad", zero_step);

    const json magnitudes = doc.value("ratio_magnitude_by_kind", json::object());
    const json overrides = doc.value("joints", json::object());
    for (const auto& [name, _] : overrides.items()) {
        if (!model.find_joint(name)) throw UnknownJointError(name);
    }

    for (const auto& j : model.joints) {
        SimJointParams p = defaults;
        const std::string kind(to_string(j.kind));
        const double magnitude = magnitudes.contains(kind) ? magnitudes[kind].get<double>() : 0.05;
        p.true_ratio = j.direction * magnitude;
        p.motor_zero_rad = zero_step * j.motor_id;
        if (overrides.contains(j.name)) apply_joint_fields(overrides[j.name], p, "joints." + j.name);
        params.joints[j.name] = p;
    }

    auto violations = validate(params);
    if (!violations.empty()) throw ConfigError(ConfigError::Kind::invariant, violations.front());
    return params;
}

SimParams default_sim_params(const HandModel& model) {
    return load_sim_params(default_sim_config_text(), model);
}

SimParams ideal_sim_params(const HandModel& model) {
    SimParams params = default_sim_params(model);
    for (auto& [_, p] : params.joints) {
        p.slack_deadband = 0.0;
        p.drift_rate = 0.0;
        p.lag_seconds = 0.0;
        p.time_constant = 0.0;
        p.measurement_noise_deg = 0.0;
    }
    return params;
}

std::string_view to_string(JointFault f) {
    switch (f) {
        case JointFault::healthy: return "healthy";
        case JointFault::tendon_disconnected: return "tendon_disconnected";
        case JointFault::jammed: return "jammed";
    }
    return "?";
}

std::optional<JointFault> parse_joint_fault(std::string_view s) {
    if (s == "healthy") return JointFault::healthy;
    if (s == "tendon_disconnected") return JointFault::tendon_disconnected;
    if (s == "jammed") return JointFault::jammed;
    return std::nullopt;
}

SimBackend::SimBackend(const HandModel& model, SimParams params, std::uint64_t seed)
    : params_(std::move(params)), step_ns_(to_ns(params_.step_seconds)), rng_(seed) {
    auto violations = validate(params_);
    if (!violations.empty()) throw ConfigError(ConfigError::Kind::invariant, violations.front());
    if (step_ns_ <= 0) throw ConfigError(ConfigError::Kind::invariant, "step_seconds below 1 ns");
    index_of_.fill(-1);

    for (const auto& j : model.joints) {
        auto it = params_.joints.find(j.name);
        if (it == params_.joints.end()) {
            throw ConfigError(ConfigError::Kind::schema, "sim params missing joint '" + j.name + "'");
        }
        if (j.motor_id < 0 || j.motor_id >= 256) {
            throw ConfigError(ConfigError::Kind::invariant, "motor id out of range for '" + j.name + "'");
        }
        const SimJointParams& p = it->second;
        Drive d{};
        d.joint = j.name;
        d.motor_id = j.motor_id;
        d.rom_min_deg = j.rom_min_deg;
        d.rom_max_deg = j.rom_max_deg;
        d.p = p;
        d.tendon_lo = std::min(p.true_ratio * j.rom_min_deg, p.true_ratio * j.rom_max_deg);
        d.tendon_hi = std::max(p.true_ratio * j.rom_min_deg, p.true_ratio * j.rom_max_deg);
        const double start = std::clamp(p.initial_angle_deg, j.rom_min_deg, j.rom_max_deg);
        d.tendon = p.true_ratio * start;
        d.position = p.motor_zero_rad + d.tendon;
        d.goal = d.active_goal = d.position;
        d.current = params_.baseline_current_ma;
        // Powered and idle: thermal equilibrium at the baseline current.
        d.temperature = params_.ambient_c + params_.thermal_gain_c_per_a2 * std::pow(params_.baseline_current_ma * 1e-3, 2);
        d.current_limit = p.current_limit_ma;
        index_of_[static_cast<std::size_t>(j.motor_id)] = static_cast<int>(drives_.size());
        drives_.push_back(std::move(d));
    }
}

SimBackend::Drive& SimBackend::drive(int motor_id) {
    if (motor_id < 0 || motor_id >= 256 || index_of_[static_cast<std::size_t>(motor_id)] < 0) {
        throw UnknownMotorError(motor_id);
    }
    return drives_[static_cast<std::size_t>(index_of_[static_cast<std::size_t>(motor_id)])];
}

const SimBackend::Drive& SimBackend::drive(int motor_id) const {
    return const_cast<SimBackend*>(this)->drive(motor_id);
}

const SimBackend::Drive& SimBackend::drive_by_name(std::string_view joint) const {
    for (const auto& d : drives_) {
        if (d.joint == joint) return d;
    }
    throw UnknownJointError(std::string(joint));
}

std::vector<int> SimBackend::motor_ids() const {
    std::lock_guard lock(mu_);
    std::vector<int> ids;
    for (const auto& d : drives_) ids.push_back(d.motor_id);
    return ids;
}

bool SimBackend::has_motor(int motor_id) const {
    std::lock_guard lock(mu_);
    return motor_id >= 0 && motor_id < 256 && index_of_[static_cast<std::size_t>(motor_id)] >= 0;
}

void SimBackend::write_goal_position(int motor_id, double position_rad) {
    std::lock_guard lock(mu_);
    Drive& d = drive(motor_id);
    if (!std::isfinite(position_rad)) throw BusError("invalid_goal", "goal position is not finite");
    d.goal = position_rad;
    const std::int64_t due = elapsed_ns_ + to_ns(d.p.lag_seconds);
    if (due <= elapsed_ns_) {
        d.pending.clear();
        d.active_goal = position_rad;
    } else {
        d.pending.emplace_back(due, position_rad);
    }
}

MotorSample SimBackend::read_sample(int motor_id) {
    std::lock_guard lock(mu_);
    const Drive& d = drive(motor_id);
    return {d.motor_id, elapsed_ns_ * kNs, d.position, d.current, d.temperature};
}

void SimBackend::set_current_limit(int motor_id, double milliamps) {
    std::lock_guard lock(mu_);
    Drive& d = drive(motor_id);
    max_requested_limit_ = std::max(max_requested_limit_, milliamps);
    if (!(milliamps > 0.0) || milliamps > d.p.current_limit_ma) {
        throw BusError("current_limit", "current limit " + std::to_string(milliamps) +
                                            " mA outside (0, " + std::to_string(d.p.current_limit_ma) + "]");
    }
    d.current_limit = milliamps;
}

double SimBackend::hardware_current_limit(int motor_id) const {
    std::lock_guard lock(mu_);
    return drive(motor_id).p.current_limit_ma;
}

double SimBackend::now() const {
    std::lock_guard lock(mu_);
    return elapsed_ns_ * kNs;
}

void SimBackend::advance(double seconds) {
    std::lock_guard lock(mu_);
    std::int64_t remaining = to_ns(seconds);
    while (remaining > 0) {
        const std::int64_t dt = std::min(step_ns_, remaining);
        step_locked(dt);
        remaining -= dt;
    }
}

std::optional<double> SimBackend::read_joint_angle_deg(int motor_id) {
    std::lock_guard lock(mu_);
    const Drive& d = drive(motor_id);
    const double truth = d.tendon / d.p.true_ratio;
    if (d.p.measurement_noise_deg <= 0.0) return truth;
    return truth + d.p.measurement_noise_deg * noise_(rng_);
}

SimState SimBackend::step(double dt) {
    if (!(dt > 0.0)) throw BusError("invalid_step", "sim step dt must be > 0");
    std::lock_guard lock(mu_);
    std::int64_t remaining = to_ns(dt);
    if (remaining <= 0) throw BusError("invalid_step", "sim step dt below 1 ns");
    while (remaining > 0) {
        const std::int64_t d = std::min(step_ns_, remaining);
        step_locked(d);
        remaining -= d;
    }
    return state_locked();
}

SimState SimBackend::state() const {
    std::lock_guard lock(mu_);
    return state_locked();
}

void SimBackend::set_fault(std::string_view joint, JointFault fault) {
    std::lock_guard lock(mu_);
    for (auto& d : drives_) {
        if (d.joint == joint) {
            d.fault = fault;
            return;
        }
    }
    throw UnknownJointError(std::string(joint));
}

double SimBackend::true_motor_position(std::string_view joint, double angle_deg) const {
    std::lock_guard lock(mu_);
    const Drive& d = drive_by_name(joint);
    return d.p.motor_zero_rad + d.drift + d.p.true_ratio * angle_deg;
}

double SimBackend::max_requested_current_limit() const {
    std::lock_guard lock(mu_);
    return max_requested_limit_;
}

// One integration step. Order: first-order response toward the active goal,
// hard-stop constraint on the shaft, backlash between shaft and tendon,
// current and thermal laws, drift, then release of delayed goals whose due
// time has been reached (they drive the next step).
void SimBackend::step_locked(std::int64_t dt_ns) {
    const double dt = dt_ns * kNs;
    const double thermal_alpha = 1.0 - std::exp(-dt / params_.thermal_time_constant_s);
    for (auto& d : drives_) {
        const double half_slack = 0.5 * d.p.slack_deadband;
        const double decay = d.p.time_constant > 0.0 ? std::exp(-dt / d.p.time_constant) : 0.0;
        double pos = d.active_goal + (d.position - d.active_goal) * decay;

        const double offset = d.p.motor_zero_rad + d.drift;
        switch (d.fault) {
            case JointFault::healthy:
                pos = std::clamp(pos, offset + d.tendon_lo - half_slack, offset + d.tendon_hi + half_slack);
                break;
            case JointFault::jammed: pos = d.position; break;
            case JointFault::tendon_disconnected: break;
        }
        d.position = pos;

        if (d.fault != JointFault::tendon_disconnected) {
            const double shaft = d.position - offset;
            d.tendon = std::clamp(d.tendon, shaft - half_slack, shaft + half_slack);
            d.tendon = std::clamp(d.tendon, d.tendon_lo, d.tendon_hi);
        }

        const double error = std::abs(d.active_goal - d.position);
        d.current = std::min({params_.baseline_current_ma + params_.current_gain_ma_per_rad * error,
                              d.p.stall_current_ma, d.current_limit});
        const double amps = d.current * 1e-3;
        const double target_c = params_.ambient_c + params_.thermal_gain_c_per_a2 * amps * amps;
        d.temperature += (target_c - d.temperature) * thermal_alpha;
        d.drift += d.p.drift_rate * dt / 3600.0;
    }
    elapsed_ns_ += dt_ns;
    for (auto& d : drives_) {
        while (!d.pending.empty() && d.pending.front().first <= elapsed_ns_) {
            d.active_goal = d.pending.front().second;
            d.pending.pop_front();
        }
    }
}

SimState SimBackend::state_locked() const {
    SimState s;
    s.elapsed_ns = elapsed_ns_;
    s.elapsed = elapsed_ns_ * kNs;
    s.joints.reserve(drives_.size());
    for (const auto& d : drives_) {
        SimJointState j;
        j.joint = d.joint;
        j.motor_id = d.motor_id;
        j.angle_deg = d.tendon / d.p.true_ratio;
        j.goal_rad = d.goal;
        j.active_goal_rad = d.active_goal;
        j.position_rad = d.position;
        j.tendon_rad = d.tendon;
        j.drift_rad = d.drift;
        j.current_ma = d.current;
        j.temperature_c = d.temperature;
        j.current_limit_ma = d.current_limit;
        j.pending = d.pending.size();
        j.fault = d.fault;
        s.joints.push_back(std::move(j));
    }
    return s;
}

SimState sim_step(MotorBackend& backend, double dt) {
    auto* sim = dynamic_cast<SimBackend*>(&backend);
    if (!sim) throw BusError("not_simulated", "sim_step called on a non-simulated backend");
    return sim->step(dt);
}

}  // namespace orca::bus
