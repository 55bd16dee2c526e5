#include "orca/types.hpp"

#include <utility>

namespace orca {

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup(const std::pair<E, std::string_view> (&table)[N], std::string_view s) {
    for (const auto& [value, name] : table) {
        if (name == s) return value;
    }
    return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view name_of(const std::pair<E, std::string_view> (&table)[N], E e) {
    for (const auto& [value, name] : table) {
        if (value == e) return name;
    }
    return "?";
}

constexpr std::pair<Finger, std::string_view> kFingers[] = {
    {Finger::thumb, "thumb"}, {Finger::index, "index"}, {Finger::middle, "middle"},
    {Finger::ring, "ring"},   {Finger::pinky, "pinky"}, {Finger::wrist, "wrist"},
};

constexpr std::pair<JointKind, std::string_view> kKinds[] = {
    {JointKind::IP, "IP"},   {JointKind::PIP, "PIP"}, {JointKind::MCP, "MCP"},
    {JointKind::ABD, "ABD"}, {JointKind::CMC, "CMC"}, {JointKind::WRIST, "WRIST"},
};

constexpr std::pair<Transmission, std::string_view> kTransmissions[] = {
    {Transmission::tendon_pair, "tendon_pair"},
    {Transmission::belt, "belt"},
};

constexpr std::pair<Axis, std::string_view> kAxes[] = {
    {Axis::flexion, "flexion"},
    {Axis::abduction, "abduction"},
};

}  // namespace

std::string_view to_string(Finger f) { return name_of(kFingers, f); }
std::string_view to_string(JointKind k) { return name_of(kKinds, k); }
std::string_view to_string(Transmission t) { return name_of(kTransmissions, t); }
std::string_view to_string(Axis a) { return name_of(kAxes, a); }

std::optional<Finger> parse_finger(std::string_view s) { return lookup(kFingers, s); }
std::optional<JointKind> parse_joint_kind(std::string_view s) { return lookup(kKinds, s); }
std::optional<Transmission> parse_transmission(std::string_view s) { return lookup(kTransmissions, s); }
std::optional<Axis> parse_axis(std::string_view s) { return lookup(kAxes, s); }

}  // namespace orca
