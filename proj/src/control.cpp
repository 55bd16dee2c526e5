#include "orca/control.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace orca::control {

std::vector<std::string> validate(const ControllerConfig& cfg) {
    std::vector<std::string> out;
    if (!(cfg.loop_rate_hz > 0.0)) out.emplace_back("loop_rate_hz must be > 0");
    if (!(cfg.max_joint_speed_deg_s > 0.0)) out.emplace_back("max_joint_speed_deg_s must be > 0");
    return out;
}

Controller::Controller(const HandModel& model, bus::MotorBackend& backend, ControllerConfig cfg)
    : model_(model), backend_(backend), cfg_(cfg) {
    auto v = validate(cfg_);
    if (!v.empty()) throw Error("invalid_config", v.front());
    targets_ = commanded_ = model_.neutral_pose();
}

void Controller::install_profile(calib::CalibrationProfile profile) {
    if (!profile.covers(model_)) throw Error("incomplete_profile", "calibration profile does not cover every joint");
    if (profile.hand_model_version != model_.version) {
        throw Error("version_mismatch", "calibration profile is for another hand model version");
    }
    {
        std::lock_guard lock(mu_);
        profile_ = std::make_shared<const calib::CalibrationProfile>(std::move(profile));
    }
    resync();
}

std::shared_ptr<const calib::CalibrationProfile> Controller::profile() const {
    std::lock_guard lock(mu_);
    return profile_;
}

void Controller::check_writable() const {
    auto holder = backend_.arbiter().holder();
    if (holder && *holder != kLeaseOwner) throw BusBusyError(*holder);
}

void Controller::set_joint_targets(const JointVector& q) {
    JointVector clamped = clamp_to_rom(model_, q);
    if (!is_complete(model_, clamped)) {
        throw Error("incomplete_command", "joint command must name every joint exactly once");
    }
    if (!profile()) throw Error("uncalibrated", "no calibration profile installed");
    check_writable();
    std::lock_guard lock(mu_);
    targets_ = std::move(clamped);
}

void Controller::jog(const std::string& joint, double deg) {
    const auto& spec = model_.joint(joint);
    if (!profile()) throw Error("uncalibrated", "no calibration profile installed");
    check_writable();
    std::lock_guard lock(mu_);
    targets_[joint] = std::clamp(deg, spec.rom_min_deg, spec.rom_max_deg);
}

bool Controller::tick() {
    auto lease = backend_.arbiter().try_acquire(kLeaseOwner);
    if (!lease) return false;
    std::lock_guard lock(mu_);
    if (!profile_) return false;
    const double max_step = cfg_.max_joint_speed_deg_s / cfg_.loop_rate_hz;
    for (const auto& j : model_.joints) {
        double& c = commanded_[j.name];
        const double t = targets_.at(j.name);
        c += std::clamp(t - c, -max_step, max_step);
        c = std::clamp(c, j.rom_min_deg, j.rom_max_deg);
        const double m = calib::joint_to_motor(*profile_, j.name, c);
        backend_.write_goal_position(j.motor_id, m);
        if (observer_) observer_(j.motor_id, j.name, c, m);
    }
    return true;
}

JointVector Controller::estimated_pose() {
    auto prof = profile();
    if (!prof) throw Error("uncalibrated", "no calibration profile installed");
    JointVector q;
    for (const auto& j : model_.joints) {
        q[j.name] = calib::motor_to_joint(*prof, j.name, backend_.read_sample(j.motor_id).position).deg;
    }
    return q;
}

void Controller::resync() {
    auto q = estimated_pose();
    std::lock_guard lock(mu_);
    targets_ = q;
    commanded_ = q;
}

JointVector Controller::targets() const {
    std::lock_guard lock(mu_);
    return targets_;
}

JointVector Controller::commanded() const {
    std::lock_guard lock(mu_);
    return commanded_;
}

void Controller::set_write_observer(WriteObserver obs) {
    std::lock_guard lock(mu_);
    observer_ = std::move(obs);
}

std::string_view to_string(TrajectoryKind k) {
    switch (k) {
        case TrajectoryKind::sine: return "sine";
        case TrajectoryKind::grasp_cycle: return "grasp_cycle";
        case TrajectoryKind::hold: return "hold";
        case TrajectoryKind::jog: return "jog";
    }
    return "?";
}

std::optional<TrajectoryKind> parse_trajectory_kind(std::string_view s) {
    if (s == "sine") return TrajectoryKind::sine;
    if (s == "grasp_cycle") return TrajectoryKind::grasp_cycle;
    if (s == "hold") return TrajectoryKind::hold;
    if (s == "jog") return TrajectoryKind::jog;
    return std::nullopt;
}

namespace {

void check_in_rom(const HandModel& model, const std::string& joint, double deg, const char* what) {
    const auto& j = model.joint(joint);
    if (!std::isfinite(deg) || deg < j.rom_min_deg || deg > j.rom_max_deg) {
        throw Error("rom_exceeded", std::string(what) + ": " + joint + " = " + std::to_string(deg) +
                                        " deg outside [" + std::to_string(j.rom_min_deg) + ", " +
                                        std::to_string(j.rom_max_deg) + "]");
    }
}

void check_pose(const HandModel& model, const JointVector& q, const char* what) {
    for (const auto& [name, deg] : q) check_in_rom(model, name, deg, what);
}

JointVector overlay(JointVector base, const JointVector& top) {
    for (const auto& [k, v] : top) base[k] = v;
    return base;
}

}  // namespace

void validate_trajectory(const HandModel& model, const TrajectorySpec& spec) {
    if (!(spec.duration_s >= 0.0) || !std::isfinite(spec.duration_s)) {
        throw Error("invalid_trajectory", "duration_s must be >= 0");
    }
    check_pose(model, spec.base_pose, "base pose");
    switch (spec.kind) {
        case TrajectoryKind::sine: {
            const auto& s = spec.sine;
            if (!(s.amplitude_deg >= 0.0)) throw Error("invalid_trajectory", "sine amplitude must be >= 0");
            if (!(s.frequency_hz > 0.0)) throw Error("invalid_trajectory", "sine frequency must be > 0");
            check_in_rom(model, s.joint, s.offset_deg - s.amplitude_deg, "sine minimum");
            check_in_rom(model, s.joint, s.offset_deg + s.amplitude_deg, "sine maximum");
            break;
        }
        case TrajectoryKind::grasp_cycle: {
            const auto& g = spec.grasp;
            if (!(g.finger_period_s > 0.0) || !(g.wrist_period_s > 0.0)) {
                throw Error("invalid_trajectory", "grasp periods must be > 0");
            }
            check_pose(model, g.grasp_pose, "grasp pose");
            check_pose(model, g.open_pose, "open pose");
            if (!g.wrist_joint.empty()) {
                check_in_rom(model, g.wrist_joint, g.wrist_target_deg, "wrist target");
                check_in_rom(model, g.wrist_joint, -g.wrist_target_deg, "wrist target");
            }
            break;
        }
        case TrajectoryKind::jog: check_in_rom(model, spec.jog.joint, spec.jog.target_deg, "jog target"); break;
        case TrajectoryKind::hold: break;
    }
}

TrajectorySpec sine_preset(const HandModel& model, const std::string& joint, double amplitude_deg,
                           double frequency_hz, double duration_s, std::optional<double> offset_deg) {
    TrajectorySpec spec;
    spec.kind = TrajectoryKind::sine;
    spec.sine.joint = joint;
    spec.sine.amplitude_deg = amplitude_deg;
    spec.sine.frequency_hz = frequency_hz;
    spec.sine.offset_deg = offset_deg.value_or(model.joint(joint).rom_mid_deg());
    spec.duration_s = duration_s;
    validate_trajectory(model, spec);
    return spec;
}

TrajectorySpec reliability_preset(const HandModel& model, int cycles) {
    TrajectorySpec spec;
    spec.kind = TrajectoryKind::grasp_cycle;
    auto& g = spec.grasp;
    g.finger_period_s = 4.0;
    g.wrist_period_s = 4.0 * g.finger_period_s;
    g.wrist_target_deg = 40.0;
    g.wrist_joint = "";
    for (const auto& j : model.joints) {
        if (j.kind == JointKind::WRIST) {
            g.wrist_joint = j.name;
            continue;
        }
        g.open_pose[j.name] = std::clamp(0.0, j.rom_min_deg, j.rom_max_deg);
        g.grasp_pose[j.name] = j.axis == Axis::flexion ? 0.8 * j.rom_max_deg : 0.0;
    }
    spec.duration_s = std::max(0, cycles) * g.finger_period_s;
    validate_trajectory(model, spec);
    return spec;
}

TrajectoryStream::TrajectoryStream(const HandModel& model, TrajectorySpec spec, double loop_rate_hz)
    : spec_(std::move(spec)), rate_(loop_rate_hz) {
    if (!(rate_ > 0.0)) throw Error("invalid_trajectory", "loop rate must be > 0");
    validate_trajectory(model, spec_);
    base_ = overlay(model.neutral_pose(), spec_.base_pose);
    const double n = spec_.duration_s * rate_;
    count_ = static_cast<std::size_t>(std::ceil(n - 1e-9));
}

JointVector TrajectoryStream::pose_at(double t) const {
    JointVector q = base_;
    switch (spec_.kind) {
        case TrajectoryKind::sine: {
            const auto& s = spec_.sine;
            q[s.joint] = s.offset_deg + s.amplitude_deg * std::sin(2.0 * std::numbers::pi * s.frequency_hz * t);
            break;
        }
        case TrajectoryKind::grasp_cycle: {
            const auto& g = spec_.grasp;
            const double phase = std::fmod(t, g.finger_period_s);
            q = overlay(q, phase < 0.5 * g.finger_period_s ? g.grasp_pose : g.open_pose);
            if (!g.wrist_joint.empty()) {
                const auto half = static_cast<long long>(std::floor(t / g.wrist_period_s));
                q[g.wrist_joint] = (half % 2 == 0) ? g.wrist_target_deg : -g.wrist_target_deg;
            }
            break;
        }
        case TrajectoryKind::jog: q[spec_.jog.joint] = spec_.jog.target_deg; break;
        case TrajectoryKind::hold: break;
    }
    return q;
}

TrajectorySample TrajectoryStream::at(std::size_t k) const {
    const double t = static_cast<double>(k) / rate_;
    return {t, pose_at(t)};
}

void run_trajectory(Controller& controller, const TrajectorySpec& spec, const SampleObserver& on_sample) {
    TrajectoryStream stream(controller.model(), spec, controller.config().loop_rate_hz);
    const double period = 1.0 / stream.rate_hz();
    for (std::size_t k = 0; k < stream.size(); ++k) {
        const auto sample = stream.at(k);
        controller.set_joint_targets(sample.q);
        controller.tick();
        if (on_sample) on_sample(sample, controller);
        controller.backend().advance(period);
    }
}

namespace {

struct Reading {
    double mean;
    double stddev;
};

Reading read_joint(bus::MotorBackend& backend, int motor_id, int n) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto deg = backend.read_joint_angle_deg(motor_id);
        if (!deg) throw Error("unsupported", "backend has no joint-angle readback for the slack probe");
        v.push_back(*deg);
        backend.advance(0.001);
    }
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return {mean, n > 1 ? std::sqrt(var / (n - 1)) : 0.0};
}

}  // namespace

double estimate_slack(const std::string& joint, bus::MotorBackend& backend,
                      const calib::CalibrationProfile& profile, const HandModel& model,
                      const SlackProbeConfig& cfg) {
    const auto& spec = model.joint(joint);
    const auto& cal = profile.at(joint);
    auto lease = backend.arbiter().acquire_or_throw("tension_check");

    const double m0 = backend.read_sample(spec.motor_id).position;
    const double theta0 = calib::motor_to_joint(profile, joint, m0).deg;
    const double span_deg = (cfg.span_rad + cfg.max_reversal_rad) / std::abs(cal.ratio);
    if (theta0 - span_deg < spec.rom_min_deg || theta0 + span_deg > spec.rom_max_deg) {
        backend.write_goal_position(spec.motor_id, m0);
        throw Error("probe_out_of_rom", "slack probe around " + std::to_string(theta0) + " deg on '" + joint +
                                            "' would leave the ROM");
    }

    auto go = [&](double m) {
        backend.write_goal_position(spec.motor_id, m);
        backend.advance(cfg.settle_s);
    };

    try {
        const double start = m0 + cfg.span_rad;
        go(start);
        const Reading base = read_joint(backend, spec.motor_id, cfg.readings);
        const double thresh = 5.0 * base.stddev * std::sqrt(2.0 / cfg.readings) + 1e-6;

        std::vector<std::pair<double, double>> moving;  // (motor, joint) after motion started
        bool started = false;
        for (double m = start - cfg.step_rad; start - m <= cfg.max_reversal_rad; m -= cfg.step_rad) {
            go(m);
            const double deg = read_joint(backend, spec.motor_id, cfg.readings).mean;
            if (!started) {
                started = std::abs(deg - base.mean) > thresh;
                continue;  // the detection step may still straddle the break
            }
            moving.emplace_back(m, deg);
            if (static_cast<int>(moving.size()) >= cfg.fit_points) break;
        }
        go(m0);
        if (moving.size() < 2) throw Error("probe_failed", "joint did not follow the reversal probe");

        // Least-squares line deg = a + b * m through the moving phase,
        // intersected with the baseline reading.
        double sm = 0, sd = 0, smm = 0, smd = 0;
        for (auto [m, d] : moving) {
            sm += m;
            sd += d;
            smm += m * m;
            smd += m * d;
        }
        const double n = static_cast<double>(moving.size());
        const double b = (n * smd - sm * sd) / (n * smm - sm * sm);
        const double a = (sd - b * sm) / n;
        const double m_break = (base.mean - a) / b;
        return std::max(0.0, start - m_break);
    } catch (...) {
        backend.write_goal_position(spec.motor_id, m0);
        throw;
    }
}

}  // namespace orca::control
