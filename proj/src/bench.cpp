#include "orca/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "orca/csv.hpp"
#include "orca/errors.hpp"

namespace orca::bench {

namespace {

constexpr const char* kReportHeader = "joint,frequency_hz,amplitude_deg,duration_s,latency_s,rmse_deg,samples";
constexpr const char* kCycleHeader = "cycle,timestamp_s,motor_id,max_current_ma,temperature_c";

// Pearson correlation of commanded[i] against measured[i + k].
double lag_correlation(std::span<const double> c, std::span<const double> m, long k) {
    const long n = static_cast<long>(c.size());
    const long i0 = std::max(0L, -k);
    const long i1 = std::min(n, n - k);
    const long cnt = i1 - i0;
    if (cnt < 2) return 0.0;
    double sc = 0, sm = 0;
    for (long i = i0; i < i1; ++i) {
        sc += c[i];
        sm += m[i + k];
    }
    const double mc = sc / cnt, mm = sm / cnt;
    double cov = 0, vc = 0, vm = 0;
    for (long i = i0; i < i1; ++i) {
        const double a = c[i] - mc, b = m[i + k] - mm;
        cov += a * b;
        vc += a * a;
        vm += b * b;
    }
    if (vc <= 0.0 || vm <= 0.0) return 0.0;
    return cov / std::sqrt(vc * vm);
}

double variance(std::span<const double> x) {
    double s = 0;
    for (double v : x) s += v;
    const double mean = s / static_cast<double>(x.size());
    double var = 0;
    for (double v : x) var += (v - mean) * (v - mean);
    return var / static_cast<double>(x.size());
}

void prepare(control::Controller& controller, bool auto_calibrate, const calib::CalibrationConfig& cfg) {
    if (auto_calibrate) {
        auto profile = calib::calibrate_all(controller.model(), controller.backend(), cfg);
        controller.install_profile(std::move(profile));
    } else if (!controller.calibrated()) {
        throw Error("uncalibrated", "benchmark needs a calibration profile (or auto-calibration)");
    }
}

// Drives the controller to `q` and holds it for `settle_s` beyond the time the
// rate limiter needs to get there.
void move_and_settle(control::Controller& controller, const JointVector& q, double settle_s) {
    const auto& cfg = controller.config();
    const auto from = controller.commanded();
    double dist = 0.0;
    for (const auto& [name, v] : q) dist = std::max(dist, std::abs(v - from.at(name)));
    const double period = 1.0 / cfg.loop_rate_hz;
    const auto ticks = static_cast<long>(std::ceil((dist / cfg.max_joint_speed_deg_s + settle_s) * cfg.loop_rate_hz));
    controller.set_joint_targets(q);
    for (long i = 0; i < ticks; ++i) {
        controller.tick();
        controller.backend().advance(period);
    }
}

}  // namespace

double estimate_latency(std::span<const double> commanded, std::span<const double> measured, double rate_hz,
                        double max_lag_s) {
    if (commanded.size() != measured.size()) {
        throw Error("length_mismatch", "commanded and measured signals differ in length");
    }
    if (!(rate_hz > 0.0) || !(max_lag_s >= 0.0)) throw Error("invalid_argument", "rate and max lag must be positive");
    const long n = static_cast<long>(commanded.size());
    if (n < 8) throw Error("signal_too_short", "need at least 8 samples");
    if (variance(commanded) <= 0.0 || variance(measured) <= 0.0) {
        throw Error("zero_variance", "signal has zero variance");
    }
    const long max_k = std::min(static_cast<long>(std::floor(max_lag_s * rate_hz + 1e-9)), n / 2 - 1);

    long best = 0;
    double best_r = lag_correlation(commanded, measured, 0);
    for (long d = 1; d <= max_k; ++d) {
        for (long k : {d, -d}) {
            const double r = lag_correlation(commanded, measured, k);
            if (r > best_r) {
                best_r = r;
                best = k;
            }
        }
    }
    double frac = 0.0;
    if (best_r < 1.0 - 1e-12 && std::abs(best) < max_k) {
        const double ym = lag_correlation(commanded, measured, best - 1);
        const double yp = lag_correlation(commanded, measured, best + 1);
        const double denom = ym - 2.0 * best_r + yp;
        if (denom < 0.0) frac = std::clamp(0.5 * (ym - yp) / denom, -0.5, 0.5);
    }
    return std::max(0.0, (static_cast<double>(best) + frac) / rate_hz);
}

double aligned_rmse(std::span<const double> commanded, std::span<const double> measured, double rate_hz,
                    double latency_s) {
    if (commanded.size() != measured.size()) {
        throw Error("length_mismatch", "commanded and measured signals differ in length");
    }
    const double shift = latency_s * rate_hz;
    const auto n = static_cast<long>(measured.size());
    double sum = 0.0;
    long cnt = 0;
    for (long i = 0; i < n; ++i) {
        const double j = static_cast<double>(i) + shift;
        if (j < 0.0 || j > static_cast<double>(n - 1)) continue;
        const auto j0 = static_cast<long>(std::floor(j));
        const long j1 = std::min(j0 + 1, n - 1);
        const double w = j - static_cast<double>(j0);
        const double m = (1.0 - w) * measured[j0] + w * measured[j1];
        const double e = commanded[i] - m;
        sum += e * e;
        ++cnt;
    }
    if (cnt == 0) throw Error("signal_too_short", "no overlap after alignment");
    return std::sqrt(sum / static_cast<double>(cnt));
}

SineBenchResult run_sine_benchmark(control::Controller& controller, const SineBenchOptions& opt) {
    const HandModel& model = controller.model();
    bus::MotorBackend& backend = controller.backend();
    const auto& joint = model.joint(opt.joint);
    if (!backend.read_joint_angle_deg(joint.motor_id)) {
        throw Error("no_ground_truth", "backend has no joint-angle readback");
    }
    const auto spec = control::sine_preset(model, opt.joint, opt.amplitude_deg, opt.frequency_hz, opt.duration_s,
                                           opt.offset_deg);
    prepare(controller, opt.auto_calibrate, opt.calibration);

    const double rate = controller.config().loop_rate_hz;
    control::TrajectoryStream stream(model, spec, rate);
    if (stream.size() < 2) throw Error("signal_too_short", "benchmark duration yields fewer than 2 samples");
    move_and_settle(controller, stream.at(0).q, opt.settle_s);

    SineBenchResult res;
    res.commanded_deg.reserve(stream.size());
    res.measured_deg.reserve(stream.size());
    control::run_trajectory(controller, spec, [&](const control::TrajectorySample& s, const control::Controller&) {
        res.commanded_deg.push_back(s.q.at(opt.joint));
        res.measured_deg.push_back(*backend.read_joint_angle_deg(joint.motor_id));
    });

    auto& r = res.report;
    r.joint = opt.joint;
    r.frequency_hz = opt.frequency_hz;
    r.amplitude_deg = opt.amplitude_deg;
    r.duration_s = opt.duration_s;
    r.samples = res.commanded_deg.size();
    r.latency_s = estimate_latency(res.commanded_deg, res.measured_deg, rate, opt.max_lag_s);
    r.rmse_deg = aligned_rmse(res.commanded_deg, res.measured_deg, rate, r.latency_s);
    res.rmse_unaligned_deg = aligned_rmse(res.commanded_deg, res.measured_deg, rate, 0.0);

    nlohmann::json snap = {
        {"joint", opt.joint},
        {"amplitude_deg", opt.amplitude_deg},
        {"frequency_hz", opt.frequency_hz},
        {"duration_s", opt.duration_s},
        {"offset_deg", spec.sine.offset_deg},
        {"settle_s", opt.settle_s},
        {"auto_calibrate", opt.auto_calibrate},
        {"loop_rate_hz", rate},
        {"max_joint_speed_deg_s", controller.config().max_joint_speed_deg_s},
        {"simulated", backend.is_simulated()},
    };
    res.config_snapshot = snap.dump();
    return res;
}

ReliabilityResult run_reliability(control::Controller& controller, const ReliabilityOptions& opt) {
    const HandModel& model = controller.model();
    bus::MotorBackend& backend = controller.backend();
    if (opt.cycles < 0) throw Error("invalid_argument", "cycle count must be >= 0");

    ReliabilityResult res;
    for (const auto& j : model.joints) {
        res.current_clamp_ma = std::max(res.current_clamp_ma, backend.hardware_current_limit(j.motor_id));
    }
    if (opt.cycles == 0) {
        res.completed = true;
        return res;
    }
    prepare(controller, opt.auto_calibrate, opt.calibration);

    const auto spec = control::reliability_preset(model, opt.cycles);
    const double rate = controller.config().loop_rate_hz;
    const double period = 1.0 / rate;
    control::TrajectoryStream stream(model, spec, rate);
    const auto per_cycle = static_cast<std::size_t>(std::llround(spec.grasp.finger_period_s * rate));

    std::vector<double> max_current(model.joints.size(), 0.0);
    std::vector<bool> moved(model.joints.size(), false);
    std::vector<CycleRow> rows;
    try {
        JointVector last = stream.at(0).q;
        move_and_settle(controller, last, opt.settle_s);
        for (std::size_t k = 0; k < stream.size(); ++k) {
            const auto sample = stream.at(k);
            for (std::size_t i = 0; i < model.joints.size(); ++i) {
                const auto& name = model.joints[i].name;
                if (sample.q.at(name) != last.at(name)) moved[i] = true;
            }
            last = sample.q;
            controller.set_joint_targets(sample.q);
            controller.tick();
            backend.advance(period);
            for (std::size_t i = 0; i < model.joints.size(); ++i) {
                const auto s = backend.read_sample(model.joints[i].motor_id);
                max_current[i] = std::max(max_current[i], std::abs(s.current));
            }

            if ((k + 1) % per_cycle != 0) continue;
            const int cycle = static_cast<int>((k + 1) / per_cycle);
            rows.clear();
            bool flagged = false;
            for (std::size_t i = 0; i < model.joints.size(); ++i) {
                const int id = model.joints[i].motor_id;
                const auto s = backend.read_sample(id);
                rows.push_back({cycle, s.timestamp, id, max_current[i], s.temperature});
                if (max_current[i] > backend.hardware_current_limit(id)) flagged = true;
                if (moved[i]) res.active[id].push_back(cycle);
                max_current[i] = 0.0;
                moved[i] = false;
            }
            if (flagged) res.flagged_cycles.push_back(cycle);
            res.log.rows.insert(res.log.rows.end(), rows.begin(), rows.end());
            if (opt.on_cycle) opt.on_cycle(rows);
        }
        res.completed = true;
    } catch (const Error& e) {
        res.error_code = e.code();
        res.error_message = e.what();
    }
    return res;
}

std::vector<MotorStability> current_stability(const ReliabilityResult& result) {
    std::map<int, std::map<int, double>> by_motor;  // motor -> cycle -> max current
    for (const auto& r : result.log.rows) by_motor[r.motor_id][r.cycle] = r.max_current_ma;

    std::vector<MotorStability> out;
    for (const auto& [id, cycles] : by_motor) {
        std::vector<double> v;
        auto act = result.active.find(id);
        if (act != result.active.end() && !act->second.empty()) {
            for (int c : act->second) {
                auto it = cycles.find(c);
                if (it != cycles.end()) v.push_back(it->second);
            }
        } else {
            for (const auto& [c, x] : cycles) v.push_back(x);
        }
        MotorStability s;
        s.motor_id = id;
        s.cycles = v.size();
        if (!v.empty()) {
            double sum = 0;
            for (double x : v) sum += x;
            s.mean_ma = sum / static_cast<double>(v.size());
            double var = 0;
            for (double x : v) var += (x - s.mean_ma) * (x - s.mean_ma);
            s.stddev_ma = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
            s.relative_std = s.mean_ma > 0.0 ? s.stddev_ma / s.mean_ma : 0.0;
        }
        out.push_back(s);
    }
    return out;
}

void write_report_csv(std::ostream& out, const std::vector<BenchReport>& reports) {
    out << kReportHeader << '\n';
    for (const auto& r : reports) {
        out << r.joint << ',' << csv::format_double(r.frequency_hz) << ',' << csv::format_double(r.amplitude_deg)
            << ',' << csv::format_double(r.duration_s) << ',' << csv::format_double(r.latency_s) << ','
            << csv::format_double(r.rmse_deg) << ',' << r.samples << '\n';
    }
}

std::vector<BenchReport> parse_report_csv(std::string_view text) {
    const auto ls = csv::lines(text);
    if (ls.empty() || ls[0] != kReportHeader) throw Error("bad_csv", "unexpected report CSV header");
    std::vector<BenchReport> out;
    for (std::size_t i = 1; i < ls.size(); ++i) {
        const auto f = csv::split(ls[i]);
        if (f.size() != 7) throw Error("bad_csv", "line " + std::to_string(i + 1) + ": expected 7 fields");
        BenchReport r;
        r.joint = std::string(f[0]);
        r.frequency_hz = csv::parse_double(f[1]);
        r.amplitude_deg = csv::parse_double(f[2]);
        r.duration_s = csv::parse_double(f[3]);
        r.latency_s = csv::parse_double(f[4]);
        r.rmse_deg = csv::parse_double(f[5]);
        r.samples = static_cast<std::size_t>(csv::parse_int(f[6]));
        out.push_back(std::move(r));
    }
    return out;
}

void write_cycle_csv_header(std::ostream& out) { out << kCycleHeader << '\n'; }

void write_cycle_rows(std::ostream& out, std::span<const CycleRow> rows) {
    for (const auto& r : rows) {
        out << r.cycle << ',' << csv::format_double(r.timestamp_s) << ',' << r.motor_id << ','
            << csv::format_double(r.max_current_ma) << ',' << csv::format_double(r.temperature_c) << '\n';
    }
}

void write_cycle_csv(std::ostream& out, const CycleLog& log) {
    write_cycle_csv_header(out);
    write_cycle_rows(out, log.rows);
}

CycleLog parse_cycle_csv(std::string_view text) {
    const auto ls = csv::lines(text);
    if (ls.empty() || ls[0] != kCycleHeader) throw Error("bad_csv", "unexpected cycle CSV header");
    CycleLog log;
    for (std::size_t i = 1; i < ls.size(); ++i) {
        const auto f = csv::split(ls[i]);
        if (f.size() != 5) throw Error("bad_csv", "line " + std::to_string(i + 1) + ": expected 5 fields");
        log.rows.push_back({static_cast<int>(csv::parse_int(f[0])), csv::parse_double(f[1]),
                            static_cast<int>(csv::parse_int(f[2])), csv::parse_double(f[3]),
                            csv::parse_double(f[4])});
    }
    return log;
}

namespace {

template <class Fn>
void write_atomically(const std::string& path, Fn&& fn) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("io_error", "cannot open '" + tmp + "' for writing");
        fn(out);
        out.flush();
        if (!out) throw Error("io_error", "write to '" + tmp + "' failed");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw Error("io_error", "cannot move '" + tmp + "' to '" + path + "'");
    }
}

}  // namespace

void export_csv(const std::string& path, const std::vector<BenchReport>& reports) {
    write_atomically(path, [&](std::ostream& out) { write_report_csv(out, reports); });
}

void export_csv(const std::string& path, const CycleLog& log) {
    write_atomically(path, [&](std::ostream& out) { write_cycle_csv(out, log); });
}

}  // namespace orca::bench
