// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failures. `acceptance <n>` runs only criterion n.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include "../generators.hpp"
#include "../oracles.hpp"
#include "orca/bench.hpp"
#include "orca/calibration.hpp"
#include "orca/daemon/client.hpp"
#include "orca/daemon/server.hpp"
#include "orca/daemon/service.hpp"
#include "orca/retarget.hpp"
#include "orca/sim_backend.hpp"
#include "orca/tactile.hpp"
#include "orca/wire_frame.hpp"

using namespace orca;

namespace {

const HandModel& model() { return default_hand_model(); }

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::string detail;
    int checks = 0;
    std::string first_failure;

    void check(bool ok, const std::string& what) {
        ++checks;
        if (!ok && pass) first_failure = what;
        pass = pass && ok;
    }
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---- 1 ----

bus::SimParams random_params(std::mt19937_64& rng) {
    auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto p = bus::default_sim_params(model());
    for (const auto& j : model().joints) {
        auto& d = p.joints.at(j.name);
        // Spool variation about the per-kind ratio. Calibration reads the stall
        // positions s/2 past each stop, a ratio bias of s / (|ratio| * ROM).
        d.true_ratio *= u(0.7, 1.3);
        d.slack_deadband = u(0.005, 0.05);
        d.drift_rate = u(0.0, 0.1);
        d.lag_seconds = u(0.0, 0.2);
        d.time_constant = u(0.01, 0.06);
        d.stall_current_ma = u(450.0, 600.0);
        d.measurement_noise_deg = u(0.0, 0.2);
        d.motor_zero_rad = u(-3.0, 3.0);
        d.initial_angle_deg = u(j.rom_min_deg, j.rom_max_deg);
    }
    return p;
}

Outcome calibration_recovery() {
    Outcome o;
    std::mt19937_64 rng(2024);
    const auto t0 = Clock::now();
    double worst_ratio = 0.0, worst_limit = 0.0;  // limit error as a fraction of the slack
    for (int draw = 0; draw < 50; ++draw) {
        const auto params = random_params(rng);
        if (const auto v = bus::validate(params); !v.empty()) {
            o.check(false, "invalid draw: " + v.front());
            continue;
        }
        bus::SimBackend sim(model(), params, 100 + draw);
        // Ground truth at the moment each joint finishes, since zeros drift.
        std::map<std::string, std::pair<double, double>> truth;
        try {
            const auto prof = calib::calibrate_all(model(), sim, {},
                [&](const std::string& j, calib::JointStatus s, const calib::JointCalibration* r) {
                    if (s != calib::JointStatus::done || !r) return;
                    truth[j] = {sim.true_motor_position(j, r->rom_min_deg), sim.true_motor_position(j, r->rom_max_deg)};
                });
            o.check(prof.joints.size() == 17, "17 joints");
            for (const auto& [name, c] : prof.joints) {
                const auto& p = params.joints.at(name);
                const double rel = std::abs(c.ratio - p.true_ratio) / std::abs(p.true_ratio);
                worst_ratio = std::max(worst_ratio, rel);
                o.check(rel <= 0.02, fmt("draw %d %s ratio %.4f", draw, name.c_str(), rel));
                const auto [lo, hi] = truth.at(name);
                const double e = std::max(std::abs(c.m_min - lo), std::abs(c.m_max - hi));
                worst_limit = std::max(worst_limit, e / p.slack_deadband);
                o.check(e <= p.slack_deadband, fmt("draw %d %s limit err %.4f", draw, name.c_str(), e));
            }
        } catch (const Error& e) {
            o.check(false, fmt("draw %d threw %s", draw, e.code().c_str()));
        }
    }
    const double wall = since(t0);
    o.check(wall < 60.0, "wall time");
    o.detail = fmt("50 draws, worst ratio err %.2f%%, worst limit err %.2f slack, %.1f s", 100 * worst_ratio,
                   worst_limit, wall);
    return o;
}

// ---- 2 ----

Outcome linear_map() {
    Outcome o;
    std::mt19937_64 rng(77);
    auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    double worst_rt = 0.0, worst_end = 0.0;
    int cases = 0;
    while (cases < 10000) {
        calib::CalibrationProfile p;
        p.hand_model_version = model().version;
        for (const auto& j : model().joints) {
            calib::JointCalibration c;
            c.joint = j.name;
            c.rom_min_deg = j.rom_min_deg;
            c.rom_max_deg = j.rom_max_deg;
            c.m_min = u(-50.0, 50.0);
            c.ratio = std::copysign(u(0.005, 0.2), u(-1, 1));
            c.m_max = c.m_min + c.ratio * (j.rom_max_deg - j.rom_min_deg);
            p.joints[j.name] = c;
        }
        for (const auto& [name, c] : p.joints) {
            worst_end = std::max({worst_end, std::abs(calib::joint_to_motor(p, name, c.rom_min_deg) - c.m_min),
                                  std::abs(calib::joint_to_motor(p, name, c.rom_max_deg) - c.m_max)});
            const double th = u(c.rom_min_deg, c.rom_max_deg);
            worst_rt = std::max(worst_rt, std::abs(calib::motor_to_joint(p, name, calib::joint_to_motor(p, name, th)).deg - th));
            ++cases;
        }
    }
    o.check(worst_end <= 1e-12 * 100, "endpoints");
    o.check(worst_rt < 1e-9, "round trip");
    o.detail = fmt("%d cases, worst endpoint err %.2e rad, worst round trip %.2e deg", cases, worst_end, worst_rt);
    return o;
}

// ---- 3 ----

Outcome latency() {
    Outcome o;
    std::ostringstream d;
    for (double freq : {0.2, 0.5}) {
        bus::SimBackend sim(model(), bus::default_sim_params(model()), 11);
        control::Controller ctl(model(), sim);
        bench::SineBenchOptions opt;
        opt.frequency_hz = freq;
        opt.auto_calibrate = true;
        const auto r = bench::run_sine_benchmark(ctl, opt);
        const auto& p = sim.params().joints.at(opt.joint);
        const double expect = oracle::sine_latency(freq, opt.amplitude_deg, p.true_ratio, p.slack_deadband,
                                                   p.lag_seconds, p.time_constant, 1.0 / ctl.config().loop_rate_hz);
        o.check(r.report.latency_s < 0.2, "latency < 0.2 s");
        o.check(std::abs(r.report.latency_s - expect) <= 0.02, "oracle band");
        if (freq == 0.2) o.check(r.report.rmse_deg < 2.0, "rmse");
        d << fmt("%.1f Hz: %.4f s (oracle %.4f), rmse %.3f deg; ", freq, r.report.latency_s, expect, r.report.rmse_deg);
    }
    o.detail = d.str();
    return o;
}

// ---- 4 ----

Outcome reliability() {
    Outcome o;
    bus::SimBackend sim(model(), bus::default_sim_params(model()), 3);
    control::Controller ctl(model(), sim);
    bench::ReliabilityOptions opt;
    opt.cycles = 2250;
    opt.auto_calibrate = true;
    const auto t0 = Clock::now();
    const auto r = bench::run_reliability(ctl, opt);
    const double wall = since(t0);
    o.check(r.completed && r.error_code.empty(), "bus fault: " + r.error_code);
    o.check(r.log.rows.size() == 2250u * 17u, "row count");
    o.check(r.flagged_cycles.empty(), "flagged cycles");
    double peak = 0.0;
    for (const auto& row : r.log.rows) peak = std::max(peak, row.max_current_ma);
    o.check(peak <= 600.0, "current cap");
    double worst_rs = 0.0;
    for (const auto& s : bench::current_stability(r)) worst_rs = std::max(worst_rs, s.relative_std);
    o.check(worst_rs < 0.05, "relative std");
    o.check(wall < 300.0, "wall time");
    o.detail = fmt("%zu rows, peak %.1f mA, worst rel std %.2f%%, %.1f s", r.log.rows.size(), peak, 100 * worst_rs, wall);
    return o;
}

// ---- 5 ----

std::vector<double> grid(double lo, double hi, double step) {
    std::vector<double> v;
    for (int i = 0; lo + i * step <= hi + 1e-12; ++i) v.push_back(lo + i * step);
    return v;
}

Outcome tactile_threshold() {
    Outcome o;
    const tactile::TactileChannelSpec ch;
    const auto forces = grid(0.01, 0.5, 0.01);
    auto at_touches = [&](const tactile::SweepReport& r) {
        int n = 0;
        for (const auto& row : r.rows) n += std::abs(row.force_n - *r.absolute_threshold_n) < 1e-12 && row.touch;
        return n;
    };
    const auto def = tactile::absolute_threshold_sweep(forces, tactile::FsrModel{}, ch, {10, 0.0, 1});
    o.check(def.absolute_threshold_n && std::abs(*def.absolute_threshold_n - 0.05) < 1e-9, "default AT");
    const int def_hits = def.absolute_threshold_n ? at_touches(def) : 0;
    o.check(def_hits == 10, "10/10 cycles");

    tactile::FsrModel rated;
    rated.trigger_force_n = 0.29;
    const auto deg = tactile::absolute_threshold_sweep(forces, rated, ch, {10, 0.0, 1});
    o.check(deg.absolute_threshold_n && std::abs(*deg.absolute_threshold_n - 0.29) < 1e-9, "0.29 N variant");

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int mono_cases = 0;
    for (int k = 0; k < 2000; ++k) {
        tactile::FsrModel fsr;
        fsr.k_ohm_newton = 100.0 + u(rng) * 1e5;
        fsr.trigger_force_n = u(rng) * 0.5;
        tactile::TactileChannelSpec c;
        c.divider_resistor_ohm = 100.0 + u(rng) * 1e5;
        fsr.open_resistance_ohm = std::max(1e6, 1e3 * c.divider_resistor_ohm);
        double prev = -1.0;
        for (double f = 0.0; f < 3.0; f += 0.013) {
            const double v = tactile::divider_voltage(f, fsr, c);
            o.check(v >= prev, "divider monotone");
            prev = v;
            ++mono_cases;
        }
    }
    double prev_at = 1e9;
    for (double trig = 0.45; trig > 0.0; trig -= 0.03) {
        tactile::FsrModel f;
        f.trigger_force_n = trig;
        const auto r = tactile::absolute_threshold_sweep(forces, f, ch);
        o.check(r.absolute_threshold_n && *r.absolute_threshold_n <= prev_at, "AT monotone in trigger");
        if (r.absolute_threshold_n) prev_at = *r.absolute_threshold_n;
    }
    o.detail = fmt("AT %.2f N (%d/10), variant AT %.2f N, %d monotonicity samples",
                   def.absolute_threshold_n.value_or(-1.0), def_hits, deg.absolute_threshold_n.value_or(-1.0), mono_cases);
    return o;
}

// ---- 6 ----

Outcome retarget_round_trip() {
    Outcome o;
    std::mt19937_64 rng(99);
    retarget::RetargetConfig cfg;
    cfg.smoothness_lambda = 0.0;
    cfg.record_energy = true;
    int ok = 0, iterates = 0;
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        JointVector q;
        for (const auto& j : model().joints) q[j.name] = std::uniform_real_distribution<double>(j.rom_min_deg, j.rom_max_deg)(rng);
        const auto frame = retarget::synthesize_frame(model(), q, cfg.scale_beta, 0.0, true);
        JointVector start = model().mid_pose();
        start["wrist"] = q.at("wrist");
        retarget::SolveStats st;
        const auto r = retarget::solve_frame(model(), frame, start, cfg, &st);
        double err = 0.0;
        for (const auto& [n, v] : q) err = std::max(err, std::abs(r.at(n) - v));
        worst = std::max(worst, err);
        ok += err < 0.5;
        double prev = st.initial_energy;
        for (std::size_t i = 0; i < st.iterates.size(); ++i) {
            o.check(st.energies[i] <= prev, "descent");
            prev = st.energies[i];
            for (const auto& j : model().joints) {
                const double v = st.iterates[i].at(j.name);
                o.check(v >= j.rom_min_deg && v <= j.rom_max_deg, "feasibility");
            }
            ++iterates;
        }
    }
    o.check(ok >= 95, "round trips");
    o.detail = fmt("%d/100 within 0.5 deg, %d iterates checked", ok, iterates);
    return o;
}

// ---- 7 ----

Outcome protocol() {
    Outcome o;
    gen::Gen g(31);
    int msgs = 0;
    for (int k = 0; k < 10000; ++k) {
        const auto c = g.command();
        o.check(daemon::parse_command(daemon::encode(c)) == c, "command round trip");
        const auto m = g.server_message();
        o.check(daemon::parse_server_message(daemon::encode(m)) == m, "server message round trip");
        msgs += 2;
    }

    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::int32_t> ticks(std::numeric_limits<std::int32_t>::min(),
                                                      std::numeric_limits<std::int32_t>::max());
    std::uniform_int_distribution<int> ma(-32768, 32767), temp(0, 255), id(0, 253);
    int flips = 0;
    for (int k = 0; k < 10000; ++k) {
        bus::MotorSample s{id(rng), 0.0, bus::wire::ticks_to_radians(ticks(rng)), static_cast<double>(ma(rng)),
                           static_cast<double>(temp(rng))};
        auto bytes = bus::wire::encode_status(s);
        o.check(bus::wire::decode_status(bytes) == s, "status round trip");
        const auto goal = std::uniform_real_distribution<double>(-100.0, 100.0)(rng);
        const auto cmd = bus::wire::decode_command(bus::wire::encode_command(id(rng), goal));
        o.check(std::abs(cmd.goal_rad - goal) <= M_PI / bus::wire::kTicksPerRev, "goal round trip");
        // One flipped bit past the header must not decode.
        const std::size_t at = 2 + rng() % (bytes.size() - 2);
        bytes[at] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
        try {
            bus::wire::decode(bytes);
            o.check(false, "flipped frame decoded");
        } catch (const bus::wire::FrameError&) {
            ++flips;
        }
    }

    // Two subscribers at different rates, no console directory.
    bus::SimBackend sim(model(), bus::default_sim_params(model()), 7);
    daemon::Service svc(model(), sim);
    daemon::ServerConfig scfg;
    scfg.tcp_port = 0;
    scfg.ws_port = 0;
    daemon::Server server(svc, scfg);
    server.start();
    svc.start();
    const double window = 10.0;
    const double rates[2] = {20.0, 50.0};
    std::atomic<int> counts[2] = {0, 0};
    {
        daemon::Client a("127.0.0.1", server.tcp_port()), b("127.0.0.1", server.tcp_port());
        daemon::Client* cs[2] = {&a, &b};
        for (int i = 0; i < 2; ++i) o.check(cs[i]->call(daemon::SubscribeCmd{rates[i]}).ok, "subscribe");
        auto count = [&](int i) {
            const auto t0 = Clock::now();
            while (since(t0) < window) {
                if (std::holds_alternative<daemon::TelemetryFrame>(cs[i]->read_message(std::chrono::seconds(2)))) ++counts[i];
            }
        };
        std::thread ta(count, 0), tb(count, 1);
        ta.join();
        tb.join();
    }
    server.stop();
    svc.stop();
    double measured[2];
    for (int i = 0; i < 2; ++i) {
        measured[i] = counts[i] / window;
        o.check(std::abs(measured[i] - rates[i]) <= 0.1 * rates[i], "subscriber rate");
    }
    o.detail = fmt("%d messages, 10000 status frames, %d/10000 flips rejected, subscribers %.1f/%.0f and %.1f/%.0f Hz",
                   msgs, flips, measured[0], rates[0], measured[1], rates[1]);
    return o;
}

struct Criterion {
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const Criterion all[] = {
        {"calibration recovery", calibration_recovery},
        {"linear map exactness", linear_map},
        {"latency reproduction", latency},
        {"reliability run", reliability},
        {"tactile threshold", tactile_threshold},
        {"retargeting round trip", retarget_round_trip},
        {"protocol round trip and telemetry rate", protocol},
    };
    const int only = argc > 1 ? std::atoi(argv[1]) : 0;
    int failures = 0;
    for (int i = 0; i < static_cast<int>(std::size(all)); ++i) {
        if (only && only != i + 1) continue;
        Outcome o;
        try {
            o = all[i].run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.first_failure = std::string("exception: ") + e.what();
        }
        std::printf("%s %d %s: %s", o.pass ? "PASS" : "FAIL", i + 1, all[i].name, o.detail.c_str());
        if (!o.pass) std::printf(" [first failure: %s]", o.first_failure.c_str());
        std::printf("\n");
        std::fflush(stdout);
        failures += !o.pass;
    }
    return failures;
}
