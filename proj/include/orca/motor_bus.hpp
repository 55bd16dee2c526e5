#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "orca/errors.hpp"

namespace orca::bus {

struct MotorSample {
    int motor_id = 0;
    double timestamp = 0.0;     // s, monotonic
    double position = 0.0;      // rad, multi-turn shaft position
    double current = 0.0;       // mA
    double temperature = 0.0;   // degC

    bool operator==(const MotorSample&) const = default;
};

class UnknownMotorError : public BusError {
public:
    explicit UnknownMotorError(int id)
        : BusError("unknown_motor", "unknown motor id " + std::to_string(id)) {}
};

// Exclusive writer lease. Holders are identified by name so a rejected
// caller can report who owns the bus.
class BusArbiter {
public:
    class Lease {
    public:
        Lease(Lease&& other) noexcept : owner_(other.owner_) { other.owner_ = nullptr; }
        Lease& operator=(Lease&& other) noexcept;
        Lease(const Lease&) = delete;
        Lease& operator=(const Lease&) = delete;
        ~Lease() { release(); }

        void release();

    private:
        friend class BusArbiter;
        explicit Lease(BusArbiter* owner) : owner_(owner) {}
        BusArbiter* owner_;
    };

    std::optional<Lease> try_acquire(const std::string& who);
    Lease acquire_or_throw(const std::string& who);  // throws BusBusyError
    std::optional<std::string> holder() const;

private:
    mutable std::mutex mu_;
    std::optional<std::string> holder_;
};

// Uniform motor contract shared by the simulator and a future serial bus.
class MotorBackend {
public:
    virtual ~MotorBackend() = default;

    virtual std::vector<int> motor_ids() const = 0;
    virtual bool has_motor(int motor_id) const = 0;

    virtual void write_goal_position(int motor_id, double position_rad) = 0;
    virtual MotorSample read_sample(int motor_id) = 0;

    // Lowers (or restores) the current clamp. Requests above the hardware
    // clamp are rejected.
    virtual void set_current_limit(int motor_id, double milliamps) = 0;
    virtual double hardware_current_limit(int motor_id) const = 0;

    virtual double now() const = 0;
    // Lets `seconds` of backend time pass: the simulator steps, hardware sleeps.
    virtual void advance(double seconds) = 0;

    virtual bool is_simulated() const { return false; }

    // External joint-angle readback (camera / simulator ground truth), if
    // the backend has one.
    virtual std::optional<double> read_joint_angle_deg(int /*motor_id*/) { return std::nullopt; }

    BusArbiter& arbiter() { return arbiter_; }

private:
    BusArbiter arbiter_;
};

}  // namespace orca::bus
