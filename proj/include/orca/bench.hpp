#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orca/calibration.hpp"
#include "orca/control.hpp"

namespace orca::bench {

// Lag (s) of `measured` behind `commanded` that maximises the normalised
// cross-correlation over lags within +-max_lag_s, refined by a parabola
// through the integer peak and its neighbours. Negative lags clamp to 0.
// Throws Error("signal_too_short") or Error("zero_variance").
double estimate_latency(std::span<const double> commanded, std::span<const double> measured, double rate_hz,
                        double max_lag_s = 1.0);

// RMSE between commanded[i] and measured at i + latency * rate (linear
// interpolation), over the samples where both exist.
double aligned_rmse(std::span<const double> commanded, std::span<const double> measured, double rate_hz,
                    double latency_s);

struct BenchReport {
    std::string joint;
    double frequency_hz = 0.0;
    double amplitude_deg = 0.0;
    double duration_s = 0.0;
    double latency_s = 0.0;
    double rmse_deg = 0.0;  // after latency alignment
    std::size_t samples = 0;

    bool operator==(const BenchReport&) const = default;
};

struct SineBenchOptions {
    std::string joint = "index_mcp";
    double amplitude_deg = 40.0;
    double frequency_hz = 0.2;
    double duration_s = 30.0;
    std::optional<double> offset_deg;  // ROM midpoint when absent
    double settle_s = 2.0;             // hold at the start point before recording
    bool auto_calibrate = false;       // run calibrate_all before the test
    double max_lag_s = 1.0;
    calib::CalibrationConfig calibration;
};

struct SineBenchResult {
    BenchReport report;
    double rmse_unaligned_deg = 0.0;
    std::vector<double> commanded_deg;
    std::vector<double> measured_deg;
    std::string config_snapshot;  // JSON of the options and backend identity
};

// Streams the sine through `controller` and samples the simulator's joint
// readback once per loop period. Throws Error("uncalibrated") when no
// profile is installed and auto_calibrate is off, Error("no_ground_truth")
// on a backend without joint readback.
SineBenchResult run_sine_benchmark(control::Controller& controller, const SineBenchOptions& opt);

struct CycleRow {
    int cycle = 0;
    double timestamp_s = 0.0;
    int motor_id = 0;
    double max_current_ma = 0.0;
    double temperature_c = 0.0;

    bool operator==(const CycleRow&) const = default;
};

struct CycleLog {
    std::vector<CycleRow> rows;

    bool operator==(const CycleLog&) const = default;
};

struct ReliabilityOptions {
    int cycles = 10;
    bool auto_calibrate = false;
    double settle_s = 2.0;
    calib::CalibrationConfig calibration;
    // Called with the rows of each completed cycle, for incremental flushing.
    std::function<void(std::span<const CycleRow>)> on_cycle;
};

struct MotorStability {
    int motor_id = 0;
    std::size_t cycles = 0;  // cycles the statistic was taken over
    double mean_ma = 0.0;
    double stddev_ma = 0.0;
    double relative_std = 0.0;
};

struct ReliabilityResult {
    CycleLog log;
    double current_clamp_ma = 0.0;
    std::vector<int> flagged_cycles;           // any motor above its clamp
    std::map<int, std::vector<int>> active;    // motor -> cycles its command changed
    bool completed = false;
    std::string error_code;
    std::string error_message;
};

// Runs the grasp-cycle preset for `cycles` finger periods. Bus errors end
// the run; the log then holds every cycle completed before the fault.
ReliabilityResult run_reliability(control::Controller& controller, const ReliabilityOptions& opt);

// Per-motor dispersion of the per-cycle max current, over the cycles in
// which that motor's command moved (all cycles for motors never moved).
std::vector<MotorStability> current_stability(const ReliabilityResult& result);

void write_report_csv(std::ostream& out, const std::vector<BenchReport>& reports);
std::vector<BenchReport> parse_report_csv(std::string_view text);
void write_cycle_csv_header(std::ostream& out);
void write_cycle_rows(std::ostream& out, std::span<const CycleRow> rows);
void write_cycle_csv(std::ostream& out, const CycleLog& log);
CycleLog parse_cycle_csv(std::string_view text);

// Writes through a temporary file and renames; throws Error("io_error").
void export_csv(const std::string& path, const std::vector<BenchReport>& reports);
void export_csv(const std::string& path, const CycleLog& log);

}  // namespace orca::bench
