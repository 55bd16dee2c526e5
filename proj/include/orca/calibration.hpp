#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "orca/errors.hpp"
#include "orca/hand_model.hpp"
#include "orca/motor_bus.hpp"

namespace orca::calib {

inline constexpr int kProfileFormatVersion = 1;

// Linear motor <-> joint map for one joint. m_min is the motor position at
// the joint's rom_min stop and m_max the one at rom_max, so
// ratio = (m_max - m_min) / (rom_max - rom_min) carries the winding sign.
struct JointCalibration {
    std::string joint;
    double m_min = 0.0;
    double m_max = 0.0;
    double ratio = 0.0;  // rad / deg
    std::string calibrated_at;  // RFC 3339

    // Copied from the hand model; not persisted.
    double rom_min_deg = 0.0;
    double rom_max_deg = 0.0;

    bool operator==(const JointCalibration&) const = default;
};

struct CalibrationProfile {
    std::map<std::string, JointCalibration> joints;
    std::string hand_model_version;
    int format_version = kProfileFormatVersion;
    std::string calibrated_at;

    bool covers(const HandModel& model) const;
    const JointCalibration& at(std::string_view joint) const;  // throws code "uncalibrated"

    bool operator==(const CalibrationProfile&) const = default;
};

struct StallDetectorConfig {
    double current_threshold_ma = 350.0;
    double position_epsilon = 0.01;  // rad
    double window = 0.15;            // s
    double settle_timeout = 20.0;    // s, per sweep
};

struct CalibrationConfig {
    StallDetectorConfig stall;
    double sweep_speed_deg_s = 30.0;
    // Used only to turn the joint-space sweep speed into a motor speed
    // before the real ratio is known.
    double nominal_ratio_rad_per_deg = 0.05;
    double sweep_current_limit_ma = 600.0;
    double poll_period_s = 0.01;
    double min_travel_rad = 0.2;  // total travel below this means a jammed joint
    double park_settle_s = 0.6;
};

class CalibrationError : public Error {
public:
    CalibrationError(std::string code, std::string joint, const std::string& message)
        : Error(std::move(code), "joint '" + joint + "': " + message), joint_(std::move(joint)) {}
    const std::string& joint() const noexcept { return joint_; }

private:
    std::string joint_;
};

// True iff every sample carries |current| >= threshold and the position
// range over the window stays below position_epsilon. Throws when the
// window spans less than cfg.window seconds.
bool detect_stall(std::span<const bus::MotorSample> window, const StallDetectorConfig& cfg);

// Sweeps one joint into both hard stops and derives its linear map. The
// caller owns the bus lease. The joint is left parked at mid-ROM.
JointCalibration calibrate_joint(const HandModel& model, std::string_view joint,
                                 bus::MotorBackend& backend, const CalibrationConfig& cfg);

enum class JointStatus { pending, sweeping, done, failed };
std::string_view to_string(JointStatus s);

using ProgressCallback =
    std::function<void(const std::string& joint, JointStatus status, const JointCalibration* result)>;

// Distal to proximal within each chain, chains in model order, unchained
// joints (the wrist) last.
std::vector<std::string> calibration_order(const HandModel& model);

// Calibrates every joint under an exclusive bus lease. On any failure the
// error names the joint and no profile is returned.
CalibrationProfile calibrate_all(const HandModel& model, bus::MotorBackend& backend,
                                 const CalibrationConfig& cfg, const ProgressCallback& progress = {});

double joint_to_motor(const CalibrationProfile& profile, std::string_view joint, double deg);

struct JointEstimate {
    double deg = 0.0;
    bool out_of_range = false;
};

JointEstimate motor_to_joint(const CalibrationProfile& profile, std::string_view joint, double motor_rad);

std::string save_profile(const CalibrationProfile& profile);
// Validates the document against `model`: version, joint names and the
// ratio identity.
CalibrationProfile load_profile(std::string_view text, const HandModel& model);

std::string rfc3339_now();

}  // namespace orca::calib
