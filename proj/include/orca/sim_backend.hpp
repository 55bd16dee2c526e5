#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "orca/hand_model.hpp"
#include "orca/motor_bus.hpp"

namespace orca::bus {

// Ground-truth parameters of one simulated tendon drive.
struct SimJointParams {
    double true_ratio = 0.05;            // rad of motor per deg of joint, signed
    double slack_deadband = 0.02;        // rad of motor travel lost on reversal
    double drift_rate = 0.05;            // rad/h, slow offset of the motor zero
    double lag_seconds = 0.12;           // command-to-motion transport delay
    double time_constant = 0.03;         // s, first-order position response
    double current_limit_ma = 600.0;     // hardware current clamp
    double stall_current_ma = 600.0;     // current reached against a hard stop
    double measurement_noise_deg = 0.08; // std-dev of the joint-angle readback
    double motor_zero_rad = 0.0;         // motor position at 0 deg, centred slack
    double initial_angle_deg = 0.0;

    bool operator==(const SimJointParams&) const = default;
};

struct SimParams {
    std::map<std::string, SimJointParams> joints;
    double baseline_current_ma = 80.0;
    double current_gain_ma_per_rad = 1000.0;  // I = base + gain * |goal - pos|
    double ambient_c = 25.0;
    double thermal_gain_c_per_a2 = 80.0;      // steady rise = gain * I^2
    double thermal_time_constant_s = 120.0;
    double step_seconds = 0.001;

    bool operator==(const SimParams&) const = default;
};

// Returns violations, empty when every parameter is admissible.
std::vector<std::string> validate(const SimParams& params);

// Per-joint defaults for `model`: the ratio sign follows JointSpec::direction.
SimParams default_sim_params(const HandModel& model);

// Ideal drive: no slack, drift, lag or noise, near-instant response.
SimParams ideal_sim_params(const HandModel& model);

// Loads the shipped JSON parameter file: a `defaults` block, per-ratio
// magnitudes by joint kind and optional per-joint overrides.
SimParams load_sim_params(std::string_view text, const HandModel& model);
std::string_view default_sim_config_text();

enum class JointFault { healthy, tendon_disconnected, jammed };
std::string_view to_string(JointFault f);
std::optional<JointFault> parse_joint_fault(std::string_view s);

struct SimJointState {
    std::string joint;
    int motor_id = 0;
    double angle_deg = 0.0;        // ground truth
    double goal_rad = 0.0;         // latest written goal
    double active_goal_rad = 0.0;  // goal after the transport delay
    double position_rad = 0.0;
    double tendon_rad = 0.0;       // joint-side tendon position (backlash output)
    double drift_rad = 0.0;
    double current_ma = 0.0;
    double temperature_c = 0.0;
    double current_limit_ma = 0.0;
    std::size_t pending = 0;
    JointFault fault = JointFault::healthy;

    bool operator==(const SimJointState&) const = default;
};

struct SimState {
    double elapsed = 0.0;
    std::int64_t elapsed_ns = 0;
    std::vector<SimJointState> joints;

    bool operator==(const SimState&) const = default;
};

// Deterministic hardware-in-the-loop stand-in for the tendon-driven bus.
// All public calls are serialised by an internal mutex.
class SimBackend final : public MotorBackend {
public:
    SimBackend(const HandModel& model, SimParams params, std::uint64_t seed = 1);

    std::vector<int> motor_ids() const override;
    bool has_motor(int motor_id) const override;
    void write_goal_position(int motor_id, double position_rad) override;
    MotorSample read_sample(int motor_id) override;
    void set_current_limit(int motor_id, double milliamps) override;
    double hardware_current_limit(int motor_id) const override;
    double now() const override;
    void advance(double seconds) override;
    bool is_simulated() const override { return true; }
    std::optional<double> read_joint_angle_deg(int motor_id) override;

    SimState step(double dt);
    SimState state() const;
    const SimParams& params() const { return params_; }

    void set_fault(std::string_view joint, JointFault fault);

    // Motor position that puts the joint at `angle_deg` with the slack
    // centred, at the current drift. This is what an ideal calibration
    // would record at a hard stop.
    double true_motor_position(std::string_view joint, double angle_deg) const;

    // Largest current limit ever requested through set_current_limit.
    double max_requested_current_limit() const;

private:
    struct Drive {
        std::string joint;
        int motor_id;
        double rom_min_deg;
        double rom_max_deg;
        SimJointParams p;
        double tendon_lo;  // joint-side positions of the two hard stops
        double tendon_hi;
        double position;
        double tendon;
        double goal;
        double active_goal;
        double drift = 0.0;
        double current;
        double temperature;
        double current_limit;
        std::deque<std::pair<std::int64_t, double>> pending;  // (due_ns, goal)
        JointFault fault = JointFault::healthy;
    };

    Drive& drive(int motor_id);
    const Drive& drive(int motor_id) const;
    const Drive& drive_by_name(std::string_view joint) const;
    void step_locked(std::int64_t dt_ns);
    SimState state_locked() const;

    mutable std::mutex mu_;
    SimParams params_;
    std::vector<Drive> drives_;
    std::array<int, 256> index_of_{};
    std::int64_t elapsed_ns_ = 0;
    std::int64_t step_ns_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> noise_{0.0, 1.0};
    double max_requested_limit_ = 0.0;
};

// Advances a simulated backend by dt. Throws BusError when `backend` is not
// a simulator or dt <= 0.
SimState sim_step(MotorBackend& backend, double dt);

}  // namespace orca::bus
