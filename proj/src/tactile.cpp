#include "orca/tactile.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "orca/csv.hpp"
#include "orca/errors.hpp"

namespace orca::tactile {

std::string_view to_string(FaultKind k) {
    switch (k) {
        case FaultKind::healthy: return "healthy";
        case FaultKind::degraded: return "degraded";
        case FaultKind::open_circuit: return "open_circuit";
    }
    return "?";
}

std::optional<FaultKind> parse_fault_kind(std::string_view s) {
    if (s == "healthy") return FaultKind::healthy;
    if (s == "degraded") return FaultKind::degraded;
    if (s == "open_circuit") return FaultKind::open_circuit;
    return std::nullopt;
}

std::vector<std::string> validate(const TactileChannelSpec& ch) {
    std::vector<std::string> out;
    if (!(ch.divider_resistor_ohm > 0.0)) out.emplace_back("divider_resistor_ohm must be > 0");
    if (!(ch.supply_v > 0.0)) out.emplace_back("supply_v must be > 0");
    if (!(ch.adc_ref_v > 0.0)) out.emplace_back("adc_ref_v must be > 0");
    if (ch.adc_bits < 1 || ch.adc_bits > 24) out.emplace_back("adc_bits must be in [1, 24]");
    if (!(ch.touch_threshold_v < ch.supply_v)) out.emplace_back("touch_threshold_v must be < supply_v");
    return out;
}

double fsr_resistance(double force_n, const FsrModel& fsr) {
    if (force_n < fsr.trigger_force_n || force_n <= 0.0) return fsr.open_resistance_ohm;
    // Capped at the open value so the law stays monotone for any trigger.
    return std::min(fsr.open_resistance_ohm, fsr.k_ohm_newton / force_n);
}

double divider_voltage(double force_n, const FsrModel& fsr, const TactileChannelSpec& ch) {
    const double r = fsr_resistance(force_n, fsr);
    return ch.supply_v * ch.divider_resistor_ohm / (r + ch.divider_resistor_ohm);
}

double divider_voltage(double force_n, const FsrModel& fsr, const TactileChannelSpec& ch,
                       const ChannelFault& fault) {
    switch (fault.kind) {
        case FaultKind::healthy: return divider_voltage(force_n, fsr, ch);
        case FaultKind::degraded: {
            FsrModel worn = fsr;
            worn.trigger_force_n = fault.degraded_at_n;
            return divider_voltage(force_n, worn, ch);
        }
        case FaultKind::open_circuit: return 0.0;
    }
    return 0.0;
}

std::uint32_t adc_read(double volts, const TactileChannelSpec& ch) {
    const double full_scale = std::ldexp(1.0, ch.adc_bits) - 1.0;
    const double v = std::clamp(volts, 0.0, ch.adc_ref_v);
    return static_cast<std::uint32_t>(std::floor(v * full_scale / ch.adc_ref_v));
}

bool classify_touch(double volts, const TactileChannelSpec& ch) { return volts > ch.touch_threshold_v; }

SweepReport absolute_threshold_sweep(const std::vector<double>& forces_n, const FsrModel& fsr,
                                     const TactileChannelSpec& ch, const SweepOptions& opts,
                                     const ChannelFault& fault) {
    if (forces_n.empty()) throw Error("invalid_argument", "force list is empty");
    if (!std::is_sorted(forces_n.begin(), forces_n.end())) {
        throw Error("invalid_argument", "force list must be ascending");
    }
    if (opts.cycles < 1) throw Error("invalid_argument", "cycles must be >= 1");

    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    SweepReport report;
    report.rows.reserve(forces_n.size() * static_cast<std::size_t>(opts.cycles));
    for (double f : forces_n) {
        bool all_touched = true;
        for (int c = 1; c <= opts.cycles; ++c) {
            SweepRow row;
            row.force_n = f;
            row.cycle = c;
            row.voltage_v = divider_voltage(f, fsr, ch, fault);
            if (opts.voltage_noise_v > 0.0) {
                row.voltage_v = std::max(0.0, row.voltage_v + opts.voltage_noise_v * noise(rng));
            }
            row.counts = adc_read(row.voltage_v, ch);
            row.touch = classify_touch(row.voltage_v, ch);
            all_touched = all_touched && row.touch;
            report.rows.push_back(row);
        }
        if (all_touched && !report.absolute_threshold_n) report.absolute_threshold_n = f;
    }
    return report;
}

void write_sweep_csv(std::ostream& out, const SweepReport& report) {
    out << "force_n,cycle,voltage_v,counts,touch\n";
    for (const auto& r : report.rows) {
        out << csv::format_double(r.force_n) << ',' << r.cycle << ',' << csv::format_double(r.voltage_v)
            << ',' << r.counts << ',' << (r.touch ? 1 : 0) << '\n';
    }
    out << "AT_n="
        << (report.absolute_threshold_n ? csv::format_double(*report.absolute_threshold_n) : "not_found")
        << '\n';
}

}  // namespace orca::tactile
