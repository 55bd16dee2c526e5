#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "orca/tactile.hpp"
#include "orca/types.hpp"

namespace orca {

struct JointSpec {
    std::string name;
    Finger finger = Finger::index;
    JointKind kind = JointKind::MCP;
    double rom_min_deg = 0.0;
    double rom_max_deg = 0.0;
    int motor_id = 0;
    Transmission transmission = Transmission::tendon_pair;
    int direction = 1;  // spool winding sign: motor moves this way to flex
    Axis axis = Axis::flexion;
    std::string provenance;  // optional, free text

    double rom_mid_deg() const { return 0.5 * (rom_min_deg + rom_max_deg); }
    double rom_span_deg() const { return rom_max_deg - rom_min_deg; }

    bool operator==(const JointSpec&) const = default;
};

struct FingerChainSpec {
    Finger finger = Finger::index;
    Vec3 base_position_mm = Vec3::Zero();
    // Fixed-axis rotations about palm x, y, z, applied in that order.
    Vec3 base_orientation_deg = Vec3::Zero();
    std::vector<double> link_lengths_mm;  // one per joint, proximal -> distal
    std::vector<std::string> joint_order;
    std::string provenance;

    bool operator==(const FingerChainSpec&) const = default;
};

class HandModel {
public:
    std::string version;
    std::vector<JointSpec> joints;
    std::vector<FingerChainSpec> chains;
    std::vector<tactile::TactileChannelSpec> sensors;

    const JointSpec& joint(std::string_view name) const;  // throws UnknownJointError
    const JointSpec* find_joint(std::string_view name) const;
    const JointSpec* find_joint_by_motor(int motor_id) const;
    const FingerChainSpec* find_chain(Finger f) const;
    const tactile::TactileChannelSpec* find_sensor(Finger f) const;

    std::vector<std::string> joint_names() const;
    std::size_t dof() const { return joints.size(); }

    // Every joint at the midpoint of its ROM.
    JointVector mid_pose() const;
    // Every joint at 0 deg, clamped into its ROM.
    JointVector neutral_pose() const;

    bool operator==(const HandModel&) const = default;
};

// Parses the JSON hand description. Throws ConfigError carrying the kind
// (parse / schema / invariant); parse errors are annotated with line:column.
HandModel load_hand_config(std::string_view text);
HandModel load_hand_config_file(const std::string& path);
std::string serialize_hand_config(const HandModel& model);

// The shipped ORCA description (config/hand.orca.json, embedded at build).
std::string_view default_hand_config_text();
const HandModel& default_hand_model();

// Empty iff the model satisfies every structural invariant. Each entry names
// the offending joint, chain or sensor.
std::vector<std::string> validate(const HandModel& model);

// Throws UnknownJointError if q names a joint the model does not have.
JointVector clamp_to_rom(const HandModel& model, const JointVector& q);

// True when q has exactly one entry per model joint.
bool is_complete(const HandModel& model, const JointVector& q);

// Joint origins and fingertip of one chain in the palm frame: element k is
// the end of link k, so the last element is the fingertip. Throws if q lacks
// a chain joint.
std::vector<Vec3> chain_points(const HandModel& model, const FingerChainSpec& chain,
                               const JointVector& q);

std::map<Finger, Vec3> forward_kinematics(const HandModel& model, const JointVector& q);

}  // namespace orca
