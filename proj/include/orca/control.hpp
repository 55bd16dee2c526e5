#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "orca/calibration.hpp"
#include "orca/hand_model.hpp"
#include "orca/motor_bus.hpp"

namespace orca::control {

struct ControllerConfig {
    double loop_rate_hz = 100.0;
    double max_joint_speed_deg_s = 180.0;
    bool hold_on_idle = true;
};

std::vector<std::string> validate(const ControllerConfig& cfg);

// Joint-space position controller. Targets are clamped to ROM, approached at
// a bounded joint speed, mapped through the installed calibration and
// written to the bus once per tick. The most recent target wins.
class Controller {
public:
    static constexpr const char* kLeaseOwner = "controller";

    Controller(const HandModel& model, bus::MotorBackend& backend, ControllerConfig cfg = {});

    const HandModel& model() const { return model_; }
    const ControllerConfig& config() const { return cfg_; }
    bus::MotorBackend& backend() { return backend_; }

    // Atomically swaps the calibration in and re-bases the commanded pose on
    // the measured motor positions. Throws if the profile misses a joint.
    void install_profile(calib::CalibrationProfile profile);
    std::shared_ptr<const calib::CalibrationProfile> profile() const;
    bool calibrated() const { return profile() != nullptr; }

    // Throws: "uncalibrated", "incomplete_command", unknown joint, busy.
    void set_joint_targets(const JointVector& q);
    // Sets one joint, keeping the other targets.
    void jog(const std::string& joint, double deg);

    // One control period: rate-limit toward the targets and write goals.
    // Returns false (nothing written) when another owner holds the bus.
    bool tick();

    // Targets := commanded := pose estimated from motor readback.
    void resync();

    JointVector targets() const;
    JointVector commanded() const;
    // Joint angles from motor readback through the calibration.
    JointVector estimated_pose();

    // Fired for every goal written to the bus (motor id, joint, joint deg, motor rad).
    // Runs under the controller lock: it must not call back into the controller.
    using WriteObserver = std::function<void(int, const std::string&, double, double)>;
    void set_write_observer(WriteObserver obs);

private:
    void check_writable() const;

    const HandModel& model_;
    bus::MotorBackend& backend_;
    ControllerConfig cfg_;

    mutable std::mutex mu_;
    std::shared_ptr<const calib::CalibrationProfile> profile_;
    JointVector targets_;
    JointVector commanded_;
    WriteObserver observer_;
};

enum class TrajectoryKind { sine, grasp_cycle, hold, jog };
std::string_view to_string(TrajectoryKind k);
std::optional<TrajectoryKind> parse_trajectory_kind(std::string_view s);

struct SineParams {
    std::string joint;
    double amplitude_deg = 0.0;
    double frequency_hz = 0.0;
    double offset_deg = 0.0;

    bool operator==(const SineParams&) const = default;
};

struct GraspCycleParams {
    JointVector grasp_pose;
    JointVector open_pose;
    double finger_period_s = 4.0;
    double wrist_target_deg = 40.0;
    double wrist_period_s = 16.0;
    std::string wrist_joint = "wrist";

    bool operator==(const GraspCycleParams&) const = default;
};

struct JogParams {
    std::string joint;
    double target_deg = 0.0;

    bool operator==(const JogParams&) const = default;
};

struct TrajectorySpec {
    TrajectoryKind kind = TrajectoryKind::hold;
    SineParams sine;
    GraspCycleParams grasp;
    JogParams jog;
    JointVector base_pose;  // joints not driven by the pattern hold these values
    double duration_s = 0.0;

    bool operator==(const TrajectorySpec&) const = default;
};

// Throws Error("rom_exceeded") or Error("invalid_trajectory").
void validate_trajectory(const HandModel& model, const TrajectorySpec& spec);

// Sine on one joint around `offset` (default: ROM midpoint), others at the
// base pose.
TrajectorySpec sine_preset(const HandModel& model, const std::string& joint, double amplitude_deg,
                           double frequency_hz, double duration_s, std::optional<double> offset_deg = {});

// Grasp-and-release stand-in for the long-duration test: flexion joints at
// 80 % of flexion ROM, abduction at 0, open pose neutral; a full grasp cycle
// every 4 s and the wrist toggling between +-40 deg every 16 s.
TrajectorySpec reliability_preset(const HandModel& model, int cycles);

struct TrajectorySample {
    double t = 0.0;
    JointVector q;
};

// Deterministic command stream sampled at the loop rate; t_k = k / rate for
// every t_k < duration.
class TrajectoryStream {
public:
    TrajectoryStream(const HandModel& model, TrajectorySpec spec, double loop_rate_hz);

    std::size_t size() const { return count_; }
    double rate_hz() const { return rate_; }
    const TrajectorySpec& spec() const { return spec_; }
    TrajectorySample at(std::size_t k) const;
    JointVector pose_at(double t) const;

private:
    TrajectorySpec spec_;
    JointVector base_;
    double rate_;
    std::size_t count_;
};

// Streams `spec` through the controller, advancing the backend one loop
// period per sample. `on_sample` sees the sample after it was issued.
using SampleObserver = std::function<void(const TrajectorySample&, const Controller&)>;
void run_trajectory(Controller& controller, const TrajectorySpec& spec, const SampleObserver& on_sample = {});

struct SlackProbeConfig {
    double span_rad = 0.12;      // slack take-up travel before the reversal
    double step_rad = 0.002;
    double settle_s = 0.35;
    int readings = 40;           // readback samples averaged per step
    int fit_points = 15;
    double max_reversal_rad = 0.3;
};

// Reversal probe: takes up slack in one motor direction, then backs off in
// small steps and reports the motor travel before the joint readback starts
// to move. Restores the prior goal before returning (also on error).
double estimate_slack(const std::string& joint, bus::MotorBackend& backend,
                      const calib::CalibrationProfile& profile, const HandModel& model,
                      const SlackProbeConfig& cfg = {});

}  // namespace orca::control
