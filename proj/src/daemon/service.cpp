#include "orca/daemon/service.hpp"

#include <algorithm>
#include <cmath>

#include "orca/bench.hpp"
#include "orca/sim_backend.hpp"

namespace orca::daemon {

class Service::ExclusiveGuard {
public:
    ExclusiveGuard(Service& s, Mode m) : s_(s) {
        bool expected = false;
        if (!s.exclusive_.compare_exchange_strong(expected, true)) {
            throw Error("busy", std::string("an exclusive activity (") + std::string(to_string(s.mode_.load())) +
                                    ") is already running");
        }
        std::lock_guard lock(s.rt_mu_);
        if (s.traj_) {
            s.exclusive_ = false;
            throw Error("busy", "a trajectory is running; stop it first");
        }
        s.mode_ = m;
    }
    ~ExclusiveGuard() {
        s_.mode_ = Mode::idle;
        s_.exclusive_ = false;
    }
    ExclusiveGuard(const ExclusiveGuard&) = delete;
    ExclusiveGuard& operator=(const ExclusiveGuard&) = delete;

private:
    Service& s_;
};

Service::Service(const HandModel& model, bus::MotorBackend& backend, ServiceConfig cfg)
    : model_(model),
      backend_(backend),
      cfg_(std::move(cfg)),
      controller_(model_, backend_, cfg_.controller),
      t0_(std::chrono::steady_clock::now()) {}

Service::~Service() { stop(); }

void Service::start() {
    if (running_.exchange(true)) return;
    t0_ = std::chrono::steady_clock::now();
    rt_thread_ = std::thread([this] { rt_loop(); });
    telemetry_thread_ = std::thread([this] { telemetry_loop(); });
}

void Service::stop() {
    if (stopped_.exchange(true)) return;
    running_ = false;
    {
        std::lock_guard lock(wake_mu_);
    }
    wake_.notify_all();
    if (rt_thread_.joinable()) rt_thread_.join();
    if (telemetry_thread_.joinable()) telemetry_thread_.join();
    {
        std::lock_guard lock(rt_mu_);
        if (traj_) finish_trajectory(true);
    }
    if (exclusive_ || !controller_.calibrated()) return;
    try {
        const auto neutral = model_.neutral_pose();
        const auto from = controller_.commanded();
        double dist = 0.0;
        for (const auto& [k, v] : neutral) dist = std::max(dist, std::abs(v - from.at(k)));
        const double rate = cfg_.controller.loop_rate_hz;
        const auto ticks = static_cast<long>(std::ceil((dist / cfg_.controller.max_joint_speed_deg_s + 0.5) * rate));
        controller_.set_joint_targets(neutral);
        for (long i = 0; i < ticks; ++i) {
            controller_.tick();
            backend_.advance(1.0 / rate);
        }
        mode_ = Mode::idle;
    } catch (const Error&) {
        // Parking is best effort; the bus may already be gone.
    }
}

double Service::wall_now() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
}

std::shared_ptr<Session> Service::open_session(std::function<void(std::string, bool)> send, bool loopback) {
    auto s = std::make_shared<Session>();
    s->send = std::move(send);
    s->loopback = loopback;
    s->authenticated = !requires_auth();
    std::lock_guard lock(sessions_mu_);
    sessions_.push_back(s);
    return s;
}

void Service::close_session(const std::shared_ptr<Session>& s) {
    {
        std::lock_guard lock(s->mu);
        s->rate_hz = 0.0;
    }
    std::lock_guard lock(sessions_mu_);
    std::erase_if(sessions_, [&](const std::weak_ptr<Session>& w) {
        auto p = w.lock();
        return !p || p == s;
    });
}

std::shared_ptr<Session> Service::find_session(const Session* s) {
    std::lock_guard lock(sessions_mu_);
    for (const auto& w : sessions_) {
        auto p = w.lock();
        if (p.get() == s) return p;
    }
    return nullptr;
}

std::string Service::handle_line(Session& s, std::string_view line) {
    Response r;
    try {
        r = handle(s, parse_command(line));
    } catch (const ProtocolError& e) {
        r = Response::failure(salvage_id(line), e.code(), e.what());
    }
    return encode(ServerMessage{std::move(r)});
}

Response Service::handle(Session& s, const Command& cmd) {
    try {
        {
            std::lock_guard lock(s.mu);
            if (!s.seen_ids.insert(cmd.id).second) {
                return Response::failure(cmd.id, "duplicate_id",
                                         "request id " + std::to_string(cmd.id) + " was already used");
            }
        }
        if (const auto* a = std::get_if<AuthCmd>(&cmd.body)) {
            if (requires_auth() && a->token != cfg_.token) {
                return Response::failure(cmd.id, "unauthorized", "invalid token");
            }
            s.authenticated = true;
            return Response::success(cmd.id, {{"authenticated", true}});
        }
        if (!s.authenticated) return Response::failure(cmd.id, "unauthorized", "send an auth request first");

        json result = std::visit(
            [&](const auto& c) -> json {
                using T = std::decay_t<decltype(c)>;
                if constexpr (std::is_same_v<T, PingCmd>) {
                    return {{"pong", true}, {"version", kServerVersion}, {"protocol", kProtocolVersion}};
                } else if constexpr (std::is_same_v<T, GetModelCmd>) {
                    return json::parse(serialize_hand_config(model_));
                } else if constexpr (std::is_same_v<T, SetTargetsCmd>) {
                    return do_set_targets(c);
                } else if constexpr (std::is_same_v<T, JogCmd>) {
                    return do_jog(c);
                } else if constexpr (std::is_same_v<T, CalibrateCmd>) {
                    return do_calibrate(s);
                } else if constexpr (std::is_same_v<T, RunTrajectoryCmd>) {
                    return do_run_trajectory(s, c);
                } else if constexpr (std::is_same_v<T, RunBenchCmd>) {
                    return do_run_bench(c);
                } else if constexpr (std::is_same_v<T, SubscribeCmd>) {
                    return do_subscribe(s, c);
                } else if constexpr (std::is_same_v<T, TensionCheckCmd>) {
                    return do_tension_check(c);
                } else if constexpr (std::is_same_v<T, SetFaultCmd>) {
                    return do_set_fault(c);
                } else if constexpr (std::is_same_v<T, StopCmd>) {
                    return do_stop();
                } else {
                    return json::object();  // AuthCmd, handled above
                }
            },
            cmd.body);
        return Response::success(cmd.id, std::move(result));
    } catch (const Error& e) {
        return Response::failure(cmd.id, e.code(), e.what());
    } catch (const std::exception& e) {
        return Response::failure(cmd.id, "internal_error", e.what());
    }
}

void Service::check_state_change() const {
    if (exclusive_) {
        throw Error("busy", std::string("rejected while ") + std::string(to_string(mode_.load())) + " is running");
    }
    if (mode_ == Mode::trajectory) throw Error("busy", "rejected while a trajectory is running");
}

json Service::do_set_targets(const SetTargetsCmd& c) {
    check_state_change();
    controller_.set_joint_targets(c.joints);
    mode_ = Mode::jog;
    return {{"mode", "jog"}};
}

json Service::do_jog(const JogCmd& c) {
    check_state_change();
    controller_.jog(c.joint, c.deg);
    mode_ = Mode::jog;
    return {{"mode", "jog"}, {"joint", c.joint}};
}

json Service::do_calibrate(Session& s) {
    ExclusiveGuard guard(*this, Mode::calibrating);
    auto progress = [&](const std::string& joint, calib::JointStatus status, const calib::JointCalibration* cal) {
        CalibrationProgress p{joint, std::string(calib::to_string(status)), std::nullopt};
        if (cal) p.ratio = cal->ratio;
        if (s.send) s.send(encode(ServerMessage{p}), false);
    };
    calib::CalibrationProfile profile;
    try {
        profile = calib::calibrate_all(model_, backend_, cfg_.calibration, progress);
    } catch (const Error&) {
        if (controller_.calibrated()) controller_.resync();
        throw;
    }
    controller_.install_profile(profile);
    json joints = json::object();
    for (const auto& [name, c] : profile.joints) {
        joints[name] = {{"m_min", c.m_min}, {"m_max", c.m_max}, {"ratio", c.ratio}};
    }
    return {{"format_version", profile.format_version}, {"calibrated_at", profile.calibrated_at},
            {"hand_model_version", profile.hand_model_version}, {"joints", joints}};
}

json Service::do_run_trajectory(Session& s, const RunTrajectoryCmd& c) {
    check_state_change();
    if (!controller_.calibrated()) throw Error("uncalibrated", "no calibration profile installed");
    control::TrajectoryStream stream(model_, c.spec, cfg_.controller.loop_rate_hz);
    const std::size_t n = stream.size();
    std::lock_guard lock(rt_mu_);
    if (exclusive_ || traj_) throw Error("busy", "another activity started first");
    traj_.emplace(ActiveTrajectory{std::move(stream), 0, find_session(&s)});
    mode_ = Mode::trajectory;
    return {{"samples", n}, {"duration_s", c.spec.duration_s}, {"kind", std::string(control::to_string(c.spec.kind))}};
}

json Service::do_run_bench(const RunBenchCmd& c) {
    ExclusiveGuard guard(*this, Mode::bench);
    if (c.kind == "sine") {
        bench::SineBenchOptions o;
        o.joint = c.joint;
        o.amplitude_deg = c.amplitude_deg;
        o.frequency_hz = c.frequency_hz;
        o.duration_s = c.duration_s;
        o.auto_calibrate = c.auto_calibrate;
        o.calibration = cfg_.calibration;
        const auto r = bench::run_sine_benchmark(controller_, o);
        if (!c.csv_path.empty()) bench::export_csv(c.csv_path, std::vector{r.report});
        return {{"kind", "sine"},
                {"joint", r.report.joint},
                {"frequency_hz", r.report.frequency_hz},
                {"amplitude_deg", r.report.amplitude_deg},
                {"duration_s", r.report.duration_s},
                {"latency_s", r.report.latency_s},
                {"rmse_deg", r.report.rmse_deg},
                {"rmse_unaligned_deg", r.rmse_unaligned_deg},
                {"samples", r.report.samples},
                {"config", json::parse(r.config_snapshot)}};
    }
    bench::ReliabilityOptions o;
    o.cycles = c.cycles;
    o.auto_calibrate = c.auto_calibrate;
    o.calibration = cfg_.calibration;
    const auto r = bench::run_reliability(controller_, o);
    if (!c.csv_path.empty()) bench::export_csv(c.csv_path, r.log);
    if (!r.completed) {
        const int done = r.log.rows.empty() ? 0 : r.log.rows.back().cycle;
        throw Error(r.error_code, r.error_message + " (after " + std::to_string(done) + " complete cycles)");
    }
    json stability = json::array();
    for (const auto& s : bench::current_stability(r)) {
        stability.push_back({{"motor_id", s.motor_id},
                             {"cycles", s.cycles},
                             {"mean_ma", s.mean_ma},
                             {"relative_std", s.relative_std}});
    }
    double max_current = 0.0;
    for (const auto& row : r.log.rows) max_current = std::max(max_current, row.max_current_ma);
    return {{"kind", "reliability"},
            {"cycles", c.cycles},
            {"rows", r.log.rows.size()},
            {"max_current_ma", max_current},
            {"current_clamp_ma", r.current_clamp_ma},
            {"flagged_cycles", r.flagged_cycles},
            {"stability", stability}};
}

json Service::do_subscribe(Session& s, const SubscribeCmd& c) {
    if (!(c.rate_hz >= 0.0) || c.rate_hz > cfg_.max_subscribe_rate_hz) {
        throw Error("invalid_rate", "rate_hz must be within [0, " + std::to_string(cfg_.max_subscribe_rate_hz) + "]");
    }
    std::lock_guard lock(s.mu);
    s.rate_hz = c.rate_hz;
    s.next_due = wall_now();
    return {{"rate_hz", c.rate_hz}};
}

json Service::do_tension_check(const TensionCheckCmd& c) {
    model_.joint(c.joint);
    ExclusiveGuard guard(*this, Mode::bench);
    auto profile = controller_.profile();
    if (!profile) throw Error("uncalibrated", "no calibration profile installed");
    const double slack = control::estimate_slack(c.joint, backend_, *profile, model_);
    return {{"joint", c.joint}, {"slack_rad", slack}};
}

json Service::do_set_fault(const SetFaultCmd& c) {
    if (!c.joint.empty()) {
        auto* sim = dynamic_cast<bus::SimBackend*>(&backend_);
        if (!sim) throw Error("not_simulated", "faults can only be injected into the simulator");
        const auto f = bus::parse_joint_fault(c.fault);
        if (!f) throw Error("invalid_fault", "unknown joint fault '" + c.fault + "'");
        sim->set_fault(c.joint, *f);
        return {{"joint", c.joint}, {"fault", c.fault}};
    }
    const Finger finger = *c.finger;
    if (!model_.find_sensor(finger)) throw Error("unknown_sensor", "no tactile sensor on that finger");
    const auto kind = tactile::parse_fault_kind(c.fault);
    if (!kind) throw Error("invalid_fault", "unknown tactile fault '" + c.fault + "'");
    if (c.force_n && !(*c.force_n >= 0.0)) throw Error("invalid_fault", "force_n must be >= 0");
    std::lock_guard lock(tactile_mu_);
    switch (*kind) {
        case tactile::FaultKind::healthy: tactile_fault_[finger] = tactile::ChannelFault::healthy(); break;
        case tactile::FaultKind::degraded:
            tactile_fault_[finger] = tactile::ChannelFault::degraded(cfg_.degraded_trigger_n);
            break;
        case tactile::FaultKind::open_circuit: tactile_fault_[finger] = tactile::ChannelFault::open_circuit(); break;
    }
    if (c.force_n) contact_force_n_[finger] = *c.force_n;
    return {{"finger", std::string(to_string(finger))}, {"fault", c.fault}, {"force_n", contact_force_n_[finger]}};
}

json Service::do_stop() {
    if (exclusive_) throw Error("busy", "exclusive activities cannot be interrupted");
    std::lock_guard lock(rt_mu_);
    if (traj_) finish_trajectory(true);
    if (controller_.calibrated()) controller_.set_joint_targets(controller_.commanded());
    mode_ = Mode::idle;
    return {{"mode", "idle"}};
}

void Service::finish_trajectory(bool stopped) {
    if (!traj_) return;
    TrajectoryDone done{traj_->next, stopped};
    auto owner = traj_->owner.lock();
    traj_.reset();
    mode_ = Mode::idle;
    if (owner && owner->send) owner->send(encode(ServerMessage{done}), false);
}

void Service::rt_loop() {
    using clock = std::chrono::steady_clock;
    const double period = 1.0 / cfg_.controller.loop_rate_hz;
    const auto step = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(period));
    auto next = clock::now();
    while (running_) {
        {
            std::lock_guard lock(rt_mu_);
            if (!exclusive_) {
                if (traj_) {
                    if (traj_->next < traj_->stream.size()) {
                        try {
                            controller_.set_joint_targets(traj_->stream.at(traj_->next++).q);
                        } catch (const Error&) {
                            finish_trajectory(true);
                        }
                    } else {
                        finish_trajectory(false);
                    }
                }
                try {
                    controller_.tick();
                    if (cfg_.step_backend) backend_.advance(period);
                } catch (const Error&) {
                    // A failing bus write must not kill the loop; telemetry shows the state.
                }
            }
        }
        next += step;
        const auto now = clock::now();
        if (now > next + 10 * step) next = now;
        std::unique_lock lock(wake_mu_);
        wake_.wait_until(lock, next, [this] { return !running_; });
    }
}

TelemetryFrame Service::snapshot() {
    TelemetryFrame f;
    f.seq = ++seq_;
    f.timestamp = wall_now();
    f.backend_time = backend_.now();
    f.mode = mode_;
    const auto targets = controller_.targets();
    std::optional<JointVector> est;
    if (controller_.calibrated()) {
        f.calibrated = true;
        est = controller_.estimated_pose();
    }
    for (const auto& j : model_.joints) {
        JointTelemetry jt{targets.at(j.name), std::nullopt};
        if (est) jt.estimated_deg = est->at(j.name);
        f.joints[j.name] = jt;
        const auto s = backend_.read_sample(j.motor_id);
        f.motors[j.motor_id] = {s.position, s.current, s.temperature};
    }
    std::lock_guard lock(tactile_mu_);
    for (const auto& ch : model_.sensors) {
        auto fi = contact_force_n_.find(ch.finger);
        auto fa = tactile_fault_.find(ch.finger);
        const double v = tactile::divider_voltage(fi == contact_force_n_.end() ? 0.0 : fi->second, cfg_.fsr, ch,
                                                  fa == tactile_fault_.end() ? tactile::ChannelFault{} : fa->second);
        f.tactile[ch.finger] = {v, tactile::classify_touch(v, ch)};
    }
    return f;
}

void Service::telemetry_loop() {
    const auto poll = std::chrono::duration<double>(cfg_.telemetry_poll_s);
    while (running_) {
        const double now = wall_now();
        std::vector<std::shared_ptr<Session>> due;
        {
            std::lock_guard lock(sessions_mu_);
            std::erase_if(sessions_, [](const std::weak_ptr<Session>& w) { return w.expired(); });
            for (const auto& w : sessions_) {
                auto s = w.lock();
                if (!s) continue;
                std::lock_guard sl(s->mu);
                if (s->rate_hz <= 0.0 || now < s->next_due) continue;
                due.push_back(s);
                const double period = 1.0 / s->rate_hz;
                s->next_due += period;
                if (s->next_due < now) s->next_due = now + period;
            }
        }
        if (!due.empty()) {
            try {
                const std::string line = encode(ServerMessage{snapshot()});
                for (const auto& s : due) {
                    if (s->send) s->send(line, true);
                }
            } catch (const Error&) {
                // Skip this frame; the next poll retries.
            }
        }
        std::unique_lock lock(wake_mu_);
        wake_.wait_for(lock, poll, [this] { return !running_; });
    }
}

}  // namespace orca::daemon
