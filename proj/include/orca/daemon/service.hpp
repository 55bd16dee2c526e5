#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "orca/calibration.hpp"
#include "orca/control.hpp"
#include "orca/daemon/protocol.hpp"
#include "orca/hand_model.hpp"
#include "orca/motor_bus.hpp"
#include "orca/tactile.hpp"

namespace orca::daemon {

struct ServiceConfig {
    control::ControllerConfig controller;
    calib::CalibrationConfig calibration;
    // When set, the realtime loop advances a simulated backend in wall time.
    bool step_backend = true;
    std::string token;  // empty: no authentication
    double max_subscribe_rate_hz = 200.0;
    double telemetry_poll_s = 0.002;
    tactile::FsrModel fsr;
    double degraded_trigger_n = 0.29;
};

// Per-connection state. `send` hands a line to the transport; droppable
// lines (telemetry) may be discarded when the client reads too slowly.
struct Session {
    std::function<void(std::string, bool droppable)> send;
    bool loopback = true;

    std::atomic<bool> authenticated{false};
    std::mutex mu;
    double rate_hz = 0.0;
    double next_due = 0.0;
    std::set<std::uint64_t> seen_ids;
};

class Service {
public:
    Service(const HandModel& model, bus::MotorBackend& backend, ServiceConfig cfg = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Starts the realtime control loop and the telemetry fan-out.
    void start();
    // Ends any trajectory, waits for the loops and parks the hand at the
    // neutral pose when calibrated. Idempotent.
    void stop();

    std::shared_ptr<Session> open_session(std::function<void(std::string, bool)> send, bool loopback);
    void close_session(const std::shared_ptr<Session>& s);

    // Parses one request line and returns the single response line.
    std::string handle_line(Session& s, std::string_view line);
    Response handle(Session& s, const Command& cmd);

    TelemetryFrame snapshot();
    Mode mode() const { return mode_.load(); }
    const HandModel& model() const { return model_; }
    control::Controller& controller() { return controller_; }
    const ServiceConfig& config() const { return cfg_; }
    bool requires_auth() const { return !cfg_.token.empty(); }

private:
    struct ActiveTrajectory {
        control::TrajectoryStream stream;
        std::size_t next = 0;
        std::weak_ptr<Session> owner;
    };
    class ExclusiveGuard;

    json do_set_targets(const SetTargetsCmd& c);
    json do_jog(const JogCmd& c);
    json do_calibrate(Session& s);
    json do_run_trajectory(Session& s, const RunTrajectoryCmd& c);
    json do_run_bench(const RunBenchCmd& c);
    json do_subscribe(Session& s, const SubscribeCmd& c);
    json do_tension_check(const TensionCheckCmd& c);
    json do_set_fault(const SetFaultCmd& c);
    json do_stop();

    void check_state_change() const;
    void rt_loop();
    void telemetry_loop();
    void finish_trajectory(bool stopped);
    double wall_now() const;
    std::shared_ptr<Session> find_session(const Session* s);

    const HandModel& model_;
    bus::MotorBackend& backend_;
    ServiceConfig cfg_;
    control::Controller controller_;

    std::atomic<Mode> mode_{Mode::idle};
    std::atomic<bool> exclusive_{false};
    std::atomic<bool> running_{false};
    std::atomic<bool> stopped_{false};
    std::mutex rt_mu_;  // held by the realtime loop for one period
    std::optional<ActiveTrajectory> traj_;
    std::thread rt_thread_;
    std::thread telemetry_thread_;
    std::mutex wake_mu_;
    std::condition_variable wake_;

    std::mutex sessions_mu_;
    std::vector<std::weak_ptr<Session>> sessions_;

    std::mutex tactile_mu_;
    std::map<Finger, double> contact_force_n_;
    std::map<Finger, tactile::ChannelFault> tactile_fault_;

    std::atomic<std::uint64_t> seq_{0};
    std::chrono::steady_clock::time_point t0_;
};

}  // namespace orca::daemon
