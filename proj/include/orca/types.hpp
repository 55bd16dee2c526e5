#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace orca {

using Vec3 = Eigen::Vector3d;

// Joint name -> angle in degrees. Flexion and abduction are positive.
using JointVector = std::map<std::string, double>;

enum class Finger { thumb, index, middle, ring, pinky, wrist };
enum class JointKind { IP, PIP, MCP, ABD, CMC, WRIST };
enum class Transmission { tendon_pair, belt };
enum class Axis { flexion, abduction };

inline constexpr std::array<Finger, 5> kDigits = {Finger::thumb, Finger::index, Finger::middle,
                                                  Finger::ring, Finger::pinky};

std::string_view to_string(Finger f);
std::string_view to_string(JointKind k);
std::string_view to_string(Transmission t);
std::string_view to_string(Axis a);

std::optional<Finger> parse_finger(std::string_view s);
std::optional<JointKind> parse_joint_kind(std::string_view s);
std::optional<Transmission> parse_transmission(std::string_view s);
std::optional<Axis> parse_axis(std::string_view s);

}  // namespace orca
