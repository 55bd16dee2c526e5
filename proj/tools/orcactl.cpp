// orcactl: operator CLI for the ORCA hand stack.
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "orca/bench.hpp"
#include "orca/calibration.hpp"
#include "orca/control.hpp"
#include "orca/daemon/client.hpp"
#include "orca/daemon/server.hpp"
#include "orca/daemon/service.hpp"
#include "orca/hand_model.hpp"
#include "orca/retarget.hpp"
#include "orca/sim_backend.hpp"
#include "orca/tactile.hpp"

using namespace orca;

namespace {

std::string env_token() {
    const char* t = std::getenv("ORCA_TOKEN");
    return t ? t : "";
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io_error", "cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

HandModel load_model(const std::string& path) {
    return path.empty() ? default_hand_model() : load_hand_config_file(path);
}

bus::SimParams load_sim(const std::string& path, const HandModel& model) {
    return path.empty() ? bus::default_sim_params(model) : bus::load_sim_params(read_file(path), model);
}

std::ostream& open_out(const std::string& path, std::ofstream& file) {
    if (path.empty() || path == "-") return std::cout;
    file.open(path, std::ios::binary | std::ios::trunc);
    if (!file) throw Error("io_error", "cannot write '" + path + "'");
    return file;
}

// key=value tokens, as in `--sine joint=index_mcp amp=40 freq=0.5 dur=30`.
std::map<std::string, std::string> key_values(const std::vector<std::string>& items) {
    std::map<std::string, std::string> kv;
    for (const auto& it : items) {
        const auto eq = it.find('=');
        if (eq == std::string::npos) throw Error("invalid_argument", "expected key=value, got '" + it + "'");
        kv[it.substr(0, eq)] = it.substr(eq + 1);
    }
    return kv;
}

struct Remote {
    std::string host = "127.0.0.1";
    int port = 8472;
};

void add_remote(CLI::App* cmd, Remote& r) {
    cmd->add_option("--host", r.host, "daemon host");
    cmd->add_option("--port", r.port, "daemon TCP port");
}

std::unique_ptr<daemon::Client> connect(const Remote& r) {
    auto c = std::make_unique<daemon::Client>(r.host, static_cast<std::uint16_t>(r.port));
    const std::string token = env_token();
    if (!token.empty()) {
        auto resp = c->call(daemon::AuthCmd{token});
        if (!resp.ok) throw Error(resp.error->code, resp.error->message);
    }
    return c;
}

int print_response(const daemon::Response& r) {
    if (!r.ok) {
        std::cerr << "error [" << r.error->code << "]: " << r.error->message << "\n";
        return 1;
    }
    std::cout << (r.result ? r.result->dump(2) : "{}") << "\n";
    return 0;
}

std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop = true; }

void install_calibration(control::Controller& ctl, const HandModel& model, bus::SimBackend& sim,
                         const std::string& profile) {
    if (!profile.empty()) {
        ctl.install_profile(calib::load_profile(read_file(profile), model));
    } else {
        ctl.install_profile(calib::calibrate_all(model, sim, {}));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ORCA hand operator CLI"};
    app.require_subcommand(1);

    std::string config_path, sim_path, profile_path;
    std::uint64_t seed = 1;
    app.add_option("--config", config_path, "hand description JSON (default: built-in)");

    // serve
    auto* serve = app.add_subcommand("serve", "run the daemon");
    bool use_sim = false;
    daemon::ServerConfig scfg;
    int tcp_port = 8472, ws_port = 8473;
    serve->add_option("--config", config_path, "hand description JSON");
    serve->add_flag("--sim", use_sim, "drive the built-in simulator");
    serve->add_option("--sim-config", sim_path, "simulator parameter JSON");
    serve->add_option("--seed", seed, "simulator noise seed");
    serve->add_option("--bind", scfg.bind_address, "listen address");
    serve->add_option("--port", tcp_port, "TCP port (line-delimited JSON)");
    serve->add_option("--ws-port", ws_port, "WebSocket / console port");
    serve->add_option("--console-dir", scfg.console_dir, "static console assets served at /console");

    // jog
    auto* jog = app.add_subcommand("jog", "move one joint through the daemon");
    Remote remote;
    std::string jog_joint;
    double jog_deg = 0.0;
    jog->add_option("joint", jog_joint)->required();
    jog->add_option("deg", jog_deg)->required();
    add_remote(jog, remote);

    // run
    auto* run = app.add_subcommand("run", "stream a trajectory through the daemon");
    std::string preset;
    int cycles = 10;
    std::vector<std::string> sine_args;
    bool no_wait = false;
    run->add_option("--preset", preset, "named preset (reliability)");
    run->add_option("--cycles", cycles, "grasp cycles for the reliability preset");
    run->add_option("--sine", sine_args, "joint=<name> amp=<deg> freq=<hz> dur=<s> [offset=<deg>]")->expected(1, 5);
    run->add_flag("--no-wait", no_wait, "return after the daemon accepts the trajectory");
    add_remote(run, remote);

    // calibrate
    auto* calibrate = app.add_subcommand("calibrate", "auto-calibrate (simulator, or the daemon with --remote)");
    std::string out_path;
    bool use_remote = false;
    calibrate->add_option("--config", config_path, "hand description JSON");
    calibrate->add_option("--sim-config", sim_path, "simulator parameter JSON");
    calibrate->add_option("--seed", seed, "simulator noise seed");
    calibrate->add_option("--out", out_path, "profile JSON output (default stdout)");
    calibrate->add_flag("--remote", use_remote, "calibrate the hand owned by a running daemon");
    add_remote(calibrate, remote);

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "benchmarks against the simulator");
    bench_cmd->require_subcommand(1);
    auto* bench_sine = bench_cmd->add_subcommand("sine", "sine tracking accuracy and latency");
    bench::SineBenchOptions sine_opt;
    bench_sine->add_option("--joint", sine_opt.joint);
    bench_sine->add_option("--amp", sine_opt.amplitude_deg, "amplitude, deg");
    bench_sine->add_option("--freq", sine_opt.frequency_hz, "frequency, Hz");
    bench_sine->add_option("--dur", sine_opt.duration_s, "duration, s");
    auto* bench_rel = bench_cmd->add_subcommand("reliability", "grasp-cycle endurance run");
    bench_rel->add_option("--cycles", cycles, "grasp cycles");
    for (auto* b : {bench_sine, bench_rel}) {
        b->add_option("--config", config_path, "hand description JSON");
        b->add_option("--sim-config", sim_path, "simulator parameter JSON");
        b->add_option("--seed", seed, "simulator noise seed");
        b->add_option("--profile", profile_path, "calibration profile (default: auto-calibrate)");
        b->add_option("--out", out_path, "CSV output (default stdout)");
    }

    // retarget
    auto* retarget_cmd = app.add_subcommand("retarget", "glove trace to joint angles");
    std::string in_path;
    retarget::RetargetConfig rcfg;
    retarget_cmd->add_option("--in", in_path, "ndjson keypoint trace")->required();
    retarget_cmd->add_option("--out", out_path, "joints CSV (default stdout)");
    retarget_cmd->add_option("--beta", rcfg.scale_beta, "human to robot scale");
    retarget_cmd->add_option("--lambda", rcfg.smoothness_lambda, "smoothness weight");
    retarget_cmd->add_option("--iters", rcfg.max_iters, "max iterations per frame");
    retarget_cmd->add_option("--config", config_path, "hand description JSON");

    // synth-trace: FK-generated trace for trying the retargeter
    auto* synth = app.add_subcommand("synth-trace", "write a synthetic keypoint trace");
    int frames = 100;
    double rate = 30.0;
    bool with_keypoints = false;
    synth->add_option("--frames", frames);
    synth->add_option("--rate", rate, "frames per second");
    synth->add_option("--beta", rcfg.scale_beta, "human to robot scale");
    synth->add_flag("--keypoints", with_keypoints, "include intermediate joint keypoints");
    synth->add_option("--out", out_path, "ndjson output (default stdout)");
    synth->add_option("--config", config_path, "hand description JSON");

    // tactile
    auto* tactile_cmd = app.add_subcommand("tactile", "fingertip sensing");
    tactile_cmd->require_subcommand(1);
    auto* sweep = tactile_cmd->add_subcommand("sweep", "absolute threshold sweep");
    tactile::FsrModel fsr;
    tactile::SweepOptions sweep_opt;
    std::string finger_name = "index";
    double f_max = 1.0, f_step = 0.01;
    sweep->add_option("--trigger", fsr.trigger_force_n, "FSR trigger force, N");
    sweep->add_option("--cycles", sweep_opt.cycles);
    sweep->add_option("--noise", sweep_opt.voltage_noise_v, "voltage noise std-dev, V");
    sweep->add_option("--seed", sweep_opt.seed);
    sweep->add_option("--finger", finger_name);
    sweep->add_option("--max-force", f_max, "N");
    sweep->add_option("--step", f_step, "N");
    sweep->add_option("--out", out_path, "CSV output (default stdout)");
    sweep->add_option("--config", config_path, "hand description JSON");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*serve) {
            if (!use_sim) throw Error("unsupported", "only the simulator backend is available; pass --sim");
            const HandModel model = load_model(config_path);
            bus::SimBackend sim(model, load_sim(sim_path, model), seed);
            daemon::ServiceConfig cfg;
            cfg.token = env_token();
            daemon::Service service(model, sim, cfg);
            scfg.tcp_port = static_cast<std::uint16_t>(tcp_port);
            scfg.ws_port = static_cast<std::uint16_t>(ws_port);
            daemon::Server server(service, scfg);
            server.start();
            service.start();
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "orca daemon on " << scfg.bind_address << " tcp:" << server.tcp_port()
                      << " ws:" << server.ws_port() << (cfg.token.empty() ? " (no token)" : "") << "\n";
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            std::cerr << "shutting down\n";
            server.stop();
            service.stop();
            return 0;
        }
        if (*jog) {
            auto c = connect(remote);
            return print_response(c->call(daemon::JogCmd{jog_joint, jog_deg}));
        }
        if (*run) {
            const HandModel model = load_model(config_path);
            daemon::RunTrajectoryCmd cmd;
            if (preset == "reliability") {
                cmd.spec = control::reliability_preset(model, cycles);
            } else if (!sine_args.empty()) {
                auto kv = key_values(sine_args);
                if (!kv.count("joint")) throw Error("invalid_argument", "--sine needs joint=<name>");
                std::optional<double> offset;
                if (kv.count("offset")) offset = std::stod(kv["offset"]);
                cmd.spec = control::sine_preset(model, kv["joint"], std::stod(kv.count("amp") ? kv["amp"] : "20"),
                                                std::stod(kv.count("freq") ? kv["freq"] : "0.2"),
                                                std::stod(kv.count("dur") ? kv["dur"] : "10"), offset);
            } else {
                throw Error("invalid_argument", "give --preset reliability or --sine ...");
            }
            auto c = connect(remote);
            auto r = c->call(cmd);
            const int rc = print_response(r);
            if (rc != 0 || no_wait) return rc;
            while (true) {
                auto msg = c->read_message(std::chrono::hours(24));
                if (auto* d = std::get_if<daemon::TrajectoryDone>(&msg)) {
                    std::cout << "done: " << d->samples << " samples" << (d->stopped ? " (stopped)" : "") << "\n";
                    return d->stopped ? 1 : 0;
                }
            }
        }
        if (*calibrate) {
            std::string text;
            if (use_remote) {
                auto c = connect(remote);
                c->on_event([](const daemon::ServerMessage& m) {
                    if (auto* p = std::get_if<daemon::CalibrationProgress>(&m)) {
                        std::cerr << p->joint << ": " << p->status << "\n";
                    }
                });
                const auto r = c->call(daemon::CalibrateCmd{});
                if (!r.ok || out_path.empty()) return print_response(r);
                // The result has the profile layout; check it before writing.
                const auto prof = calib::load_profile(r.result->dump(), load_model(config_path));
                std::ofstream file;
                open_out(out_path, file) << calib::save_profile(prof);
                return 0;
            }
            const HandModel model = load_model(config_path);
            bus::SimBackend sim(model, load_sim(sim_path, model), seed);
            auto profile = calib::calibrate_all(model, sim, {}, [](const std::string& j, calib::JointStatus s,
                                                                   const calib::JointCalibration*) {
                if (s == calib::JointStatus::done || s == calib::JointStatus::failed) {
                    std::cerr << j << ": " << calib::to_string(s) << "\n";
                }
            });
            std::ofstream file;
            open_out(out_path, file) << calib::save_profile(profile);
            return 0;
        }
        if (*bench_cmd) {
            const HandModel model = load_model(config_path);
            bus::SimBackend sim(model, load_sim(sim_path, model), seed);
            control::Controller ctl(model, sim);
            install_calibration(ctl, model, sim, profile_path);
            std::ofstream file;
            if (*bench_sine) {
                auto r = bench::run_sine_benchmark(ctl, sine_opt);
                bench::write_report_csv(open_out(out_path, file), {r.report});
                std::cerr << "latency " << r.report.latency_s << " s, rmse " << r.report.rmse_deg
                          << " deg (unaligned " << r.rmse_unaligned_deg << ")\n";
                return 0;
            }
            std::ostream& out = open_out(out_path, file);
            bench::write_cycle_csv_header(out);
            bench::ReliabilityOptions ro;
            ro.cycles = cycles;
            ro.on_cycle = [&](std::span<const bench::CycleRow> rows) {
                bench::write_cycle_rows(out, rows);
                out.flush();
            };
            auto r = bench::run_reliability(ctl, ro);
            double worst = 0.0;
            for (const auto& s : bench::current_stability(r)) worst = std::max(worst, s.relative_std);
            std::cerr << r.log.rows.size() << " rows, " << r.flagged_cycles.size() << " flagged cycles, worst per-motor "
                      << "relative std " << worst << "\n";
            if (!r.completed) {
                std::cerr << "error [" << r.error_code << "]: " << r.error_message << "\n";
                return 1;
            }
            return 0;
        }
        if (*retarget_cmd) {
            const HandModel model = load_model(config_path);
            std::ifstream in(in_path);
            if (!in) throw Error("io_error", "cannot read '" + in_path + "'");
            const auto trace = retarget::read_trace(in);
            const auto out_frames = retarget::retarget_trace(model, trace, rcfg);
            std::ofstream file;
            retarget::write_joints_csv(open_out(out_path, file), model, out_frames);
            return 0;
        }
        if (*synth) {
            const HandModel model = load_model(config_path);
            std::vector<retarget::KeypointFrame> trace;
            for (int k = 0; k < frames; ++k) {
                const double t = k / rate;
                JointVector q = model.mid_pose();
                for (const auto& j : model.joints) {
                    q[j.name] = j.rom_mid_deg() + 0.3 * j.rom_span_deg() * std::sin(2.0 * M_PI * 0.25 * t);
                }
                trace.push_back(retarget::synthesize_frame(model, q, rcfg.scale_beta, t, with_keypoints));
            }
            std::ofstream file;
            retarget::write_trace(open_out(out_path, file), trace);
            return 0;
        }
        if (*sweep) {
            const HandModel model = load_model(config_path);
            const auto finger = parse_finger(finger_name);
            const tactile::TactileChannelSpec* ch = finger ? model.find_sensor(*finger) : nullptr;
            if (!ch) throw Error("unknown_sensor", "no tactile sensor on finger '" + finger_name + "'");
            std::vector<double> forces;
            const int steps = static_cast<int>(std::floor(f_max / f_step + 1e-9));
            for (int i = 0; i <= steps; ++i) forces.push_back(i * f_step);
            auto report = tactile::absolute_threshold_sweep(forces, fsr, *ch, sweep_opt);
            std::ofstream file;
            tactile::write_sweep_csv(open_out(out_path, file), report);
            if (report.absolute_threshold_n) {
                std::cerr << "absolute threshold " << *report.absolute_threshold_n << " N\n";
            } else {
                std::cerr << "no force registered in every cycle\n";
            }
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
