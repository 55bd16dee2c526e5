#include "orca/wire_frame.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace orca::bus::wire {

namespace {

std::string reason_code(FrameError::Reason r) {
    switch (r) {
        case FrameError::Reason::bad_header: return "bad_header";
        case FrameError::Reason::truncated: return "truncated_frame";
        case FrameError::Reason::length_mismatch: return "length_mismatch";
        case FrameError::Reason::bad_checksum: return "bad_checksum";
        case FrameError::Reason::bad_payload: return "bad_payload";
        case FrameError::Reason::out_of_range: return "out_of_range";
    }
    return "frame_error";
}

void put_le(std::vector<std::uint8_t>& out, std::uint32_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_le(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
    std::uint32_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
    return v;
}

std::uint8_t motor_byte(int motor_id) {
    if (motor_id < 0 || motor_id > 0xFD) {
        throw FrameError(FrameError::Reason::out_of_range, "motor id " + std::to_string(motor_id) + " not addressable");
    }
    return static_cast<std::uint8_t>(motor_id);
}

Frame expect(std::span<const std::uint8_t> bytes, Opcode op, std::size_t payload_size) {
    Frame f = decode(bytes);
    if (f.opcode != static_cast<std::uint8_t>(op) || f.payload.size() != payload_size) {
        throw FrameError(FrameError::Reason::bad_payload, "unexpected opcode or payload size");
    }
    return f;
}

}  // namespace

FrameError::FrameError(Reason reason, const std::string& message)
    : BusError(reason_code(reason), message), reason_(reason) {}

std::uint8_t checksum(std::span<const std::uint8_t> id_to_payload) {
    unsigned sum = 0;
    for (auto b : id_to_payload) sum += b;
    return static_cast<std::uint8_t>(-sum);
}

std::vector<std::uint8_t> encode(const Frame& frame) {
    if (frame.payload.size() > kMaxPayload) {
        throw FrameError(FrameError::Reason::out_of_range, "payload too long");
    }
    if (frame.id == kHeader) {
        throw FrameError(FrameError::Reason::out_of_range, "id 0xFF is reserved");
    }
    std::vector<std::uint8_t> out;
    out.reserve(frame.payload.size() + 6);
    out.push_back(kHeader);
    out.push_back(kHeader);
    out.push_back(frame.id);
    out.push_back(static_cast<std::uint8_t>(frame.payload.size() + 2));
    out.push_back(frame.opcode);
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
    out.push_back(checksum(std::span(out).subspan(2)));
    return out;
}

Frame decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 6) throw FrameError(FrameError::Reason::truncated, "frame shorter than 6 bytes");
    if (bytes[0] != kHeader || bytes[1] != kHeader) {
        throw FrameError(FrameError::Reason::bad_header, "missing 0xFF 0xFF header");
    }
    const std::size_t len = bytes[3];
    if (len < 2) throw FrameError(FrameError::Reason::length_mismatch, "length field below 2");
    const std::size_t total = len + 4;
    if (bytes.size() < total) throw FrameError(FrameError::Reason::truncated, "frame truncated");
    if (bytes.size() > total) throw FrameError(FrameError::Reason::length_mismatch, "trailing bytes after frame");

    const auto body = bytes.subspan(2, total - 3);
    if (checksum(body) != bytes[total - 1]) {
        throw FrameError(FrameError::Reason::bad_checksum, "checksum mismatch");
    }
    Frame f;
    f.id = bytes[2];
    f.opcode = bytes[4];
    f.payload.assign(bytes.begin() + 5, bytes.begin() + static_cast<std::ptrdiff_t>(total - 1));
    return f;
}

std::int32_t radians_to_ticks(double radians) {
    const double ticks = std::round(radians * kTicksPerRev / (2.0 * std::numbers::pi));
    if (!std::isfinite(ticks) || ticks < std::numeric_limits<std::int32_t>::min() ||
        ticks > std::numeric_limits<std::int32_t>::max()) {
        throw FrameError(FrameError::Reason::out_of_range, "position not representable as i32 ticks");
    }
    return static_cast<std::int32_t>(ticks);
}

double ticks_to_radians(std::int32_t ticks) { return ticks * (2.0 * std::numbers::pi) / kTicksPerRev; }

std::vector<std::uint8_t> encode_command(int motor_id, double goal_rad) {
    Frame f;
    f.id = motor_byte(motor_id);
    f.opcode = static_cast<std::uint8_t>(Opcode::write_goal);
    put_le(f.payload, static_cast<std::uint32_t>(radians_to_ticks(goal_rad)), 4);
    return encode(f);
}

GoalCommand decode_command(std::span<const std::uint8_t> bytes) {
    Frame f = expect(bytes, Opcode::write_goal, 4);
    const auto ticks = static_cast<std::int32_t>(get_le(f.payload, 0, 4));
    return {f.id, ticks_to_radians(ticks)};
}

std::vector<std::uint8_t> encode_ping(int motor_id) {
    return encode({motor_byte(motor_id), static_cast<std::uint8_t>(Opcode::ping), {}});
}

std::vector<std::uint8_t> encode_status(const MotorSample& sample) {
    const double ma = std::round(sample.current);
    const double c = std::round(sample.temperature);
    if (!(ma >= std::numeric_limits<std::int16_t>::min() && ma <= std::numeric_limits<std::int16_t>::max())) {
        throw FrameError(FrameError::Reason::out_of_range, "current not representable as i16 mA");
    }
    if (!(c >= 0.0 && c <= 255.0)) {
        throw FrameError(FrameError::Reason::out_of_range, "temperature not representable as u8 degC");
    }
    Frame f;
    f.id = motor_byte(sample.motor_id);
    f.opcode = static_cast<std::uint8_t>(Opcode::read_status);
    put_le(f.payload, static_cast<std::uint32_t>(radians_to_ticks(sample.position)), 4);
    put_le(f.payload, static_cast<std::uint16_t>(static_cast<std::int16_t>(ma)), 2);
    f.payload.push_back(static_cast<std::uint8_t>(c));
    return encode(f);
}

MotorSample decode_status(std::span<const std::uint8_t> bytes) {
    Frame f = expect(bytes, Opcode::read_status, 7);
    MotorSample s;
    s.motor_id = f.id;
    s.position = ticks_to_radians(static_cast<std::int32_t>(get_le(f.payload, 0, 4)));
    s.current = static_cast<std::int16_t>(get_le(f.payload, 4, 2));
    s.temperature = f.payload[6];
    return s;
}

}  // namespace orca::bus::wire
