#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "orca/types.hpp"

namespace orca::tactile {

// One fingertip FSR read through a voltage divider. The FSR sits between the
// supply and the analog node; the fixed resistor goes from the node to ground.
struct TactileChannelSpec {
    Finger finger = Finger::index;
    double divider_resistor_ohm = 10'000.0;
    double supply_v = 5.0;
    int adc_bits = 10;
    double adc_ref_v = 5.0;
    double touch_threshold_v = 0.01;

    bool operator==(const TactileChannelSpec&) const = default;
};

// First-order FSR: open circuit below the trigger force, R = k / F above it.
struct FsrModel {
    double open_resistance_ohm = 10.0e6;
    double k_ohm_newton = 10'000.0;
    double trigger_force_n = 0.05;
};

enum class FaultKind { healthy, degraded, open_circuit };

struct ChannelFault {
    FaultKind kind = FaultKind::healthy;
    double degraded_at_n = 0.0;  // effective trigger force when degraded

    static ChannelFault healthy() { return {}; }
    static ChannelFault degraded(double at_n) { return {FaultKind::degraded, at_n}; }
    static ChannelFault open_circuit() { return {FaultKind::open_circuit, 0.0}; }
};

std::string_view to_string(FaultKind k);
std::optional<FaultKind> parse_fault_kind(std::string_view s);

// Returns the list of invariant violations for a channel; empty when valid.
std::vector<std::string> validate(const TactileChannelSpec& ch);

double fsr_resistance(double force_n, const FsrModel& fsr);

double divider_voltage(double force_n, const FsrModel& fsr, const TactileChannelSpec& ch);

// Same as divider_voltage, with a fault applied on top of the healthy model.
double divider_voltage(double force_n, const FsrModel& fsr, const TactileChannelSpec& ch,
                       const ChannelFault& fault);

std::uint32_t adc_read(double volts, const TactileChannelSpec& ch);

bool classify_touch(double volts, const TactileChannelSpec& ch);

struct SweepRow {
    double force_n = 0.0;
    int cycle = 0;
    double voltage_v = 0.0;
    std::uint32_t counts = 0;
    bool touch = false;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    std::optional<double> absolute_threshold_n;  // nullopt = not found
};

struct SweepOptions {
    int cycles = 10;
    double voltage_noise_v = 0.0;  // gaussian, per reading
    std::uint64_t seed = 1;
};

// Smallest force registered as touch in every cycle. Throws orca::Error
// for an empty or unsorted force list or cycles < 1.
SweepReport absolute_threshold_sweep(const std::vector<double>& forces_n, const FsrModel& fsr,
                                     const TactileChannelSpec& ch, const SweepOptions& opts = {},
                                     const ChannelFault& fault = {});

// CSV: force_n,cycle,voltage_v,counts,touch then a final `AT_n=<value>` row.
void write_sweep_csv(std::ostream& out, const SweepReport& report);

}  // namespace orca::tactile
