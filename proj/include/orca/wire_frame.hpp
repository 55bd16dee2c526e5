#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "orca/errors.hpp"
#include "orca/motor_bus.hpp"

// Dynamixel-like framing for the serial servo bus:
//
//   [0xFF 0xFF] [id] [len] [opcode] [payload: len-2 bytes, LE] [checksum]
//
// len counts opcode + payload + checksum. The checksum is the two's
// complement of the byte sum over id..payload, so the sum over id..checksum
// is 0 mod 256.
namespace orca::bus::wire {

inline constexpr std::uint8_t kHeader = 0xFF;
inline constexpr int kTicksPerRev = 4096;
inline constexpr std::size_t kMaxPayload = 253;

enum class Opcode : std::uint8_t { write_goal = 0x01, read_status = 0x02, ping = 0x03 };

struct Frame {
    std::uint8_t id = 0;
    std::uint8_t opcode = 0;
    std::vector<std::uint8_t> payload;

    bool operator==(const Frame&) const = default;
};

class FrameError : public BusError {
public:
    enum class Reason { bad_header, truncated, length_mismatch, bad_checksum, bad_payload, out_of_range };

    FrameError(Reason reason, const std::string& message);
    Reason reason() const noexcept { return reason_; }

private:
    Reason reason_;
};

std::uint8_t checksum(std::span<const std::uint8_t> id_to_payload);

std::vector<std::uint8_t> encode(const Frame& frame);
// Expects exactly one frame spanning the whole buffer.
Frame decode(std::span<const std::uint8_t> bytes);

std::int32_t radians_to_ticks(double radians);  // throws FrameError(out_of_range)
double ticks_to_radians(std::int32_t ticks);

struct GoalCommand {
    int motor_id = 0;
    double goal_rad = 0.0;

    bool operator==(const GoalCommand&) const = default;
};

std::vector<std::uint8_t> encode_command(int motor_id, double goal_rad);
GoalCommand decode_command(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_ping(int motor_id);

// Status reply: i32 ticks, i16 mA, u8 degC. The timestamp is not on the
// wire; decoded samples carry 0.
std::vector<std::uint8_t> encode_status(const MotorSample& sample);
MotorSample decode_status(std::span<const std::uint8_t> bytes);

}  // namespace orca::bus::wire
