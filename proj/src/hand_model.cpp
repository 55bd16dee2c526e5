#include "orca/hand_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "orca/errors.hpp"

namespace orca {

using nlohmann::json;

namespace {

constexpr double kDegToRad = M_PI / 180.0;

const char kDefaultConfig[] =
#include "default_hand_config.inc"
    ;

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
    throw ConfigError(ConfigError::Kind::schema, path + ": " + what);
}

// Field access with the JSON path carried along for error messages.
class Node {
public:
    Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

    const json& raw() const { return j_; }
    const std::string& path() const { return path_; }

    void expect_object(std::initializer_list<const char*> allowed) const {
        if (!j_.is_object()) schema_error(path_, "expected an object");
        for (const auto& [key, _] : j_.items()) {
            bool ok = std::any_of(allowed.begin(), allowed.end(),
                                  [&](const char* a) { return key == a; });
            if (!ok) schema_error(path_, "unknown field '" + key + "'");
        }
    }

    Node at(const char* key) const {
        auto it = j_.find(key);
        if (it == j_.end()) schema_error(path_, std::string("missing required field '") + key + "'");
        return Node(*it, path_ + "." + key);
    }

    bool has(const char* key) const { return j_.contains(key); }

    std::string str() const {
        if (!j_.is_string()) schema_error(path_, "expected a string");
        return j_.get<std::string>();
    }
    double num() const {
        if (!j_.is_number()) schema_error(path_, "expected a number");
        return j_.get<double>();
    }
    long long integer() const {
        if (!j_.is_number_integer()) schema_error(path_, "expected an integer");
        return j_.get<long long>();
    }
    std::vector<Node> array() const {
        if (!j_.is_array()) schema_error(path_, "expected an array");
        std::vector<Node> out;
        for (std::size_t i = 0; i < j_.size(); ++i) {
            out.emplace_back(j_[i], path_ + "[" + std::to_string(i) + "]");
        }
        return out;
    }
    Vec3 vec3() const {
        auto items = array();
        if (items.size() != 3) schema_error(path_, "expected 3 numbers");
        return {items[0].num(), items[1].num(), items[2].num()};
    }

    template <typename E>
    E enumeration(std::optional<E> (*parse)(std::string_view), const char* what) const {
        auto s = str();
        auto v = parse(s);
        if (!v) schema_error(path_, std::string("unknown ") + what + " '" + s + "'");
        return *v;
    }

private:
    const json& j_;
    std::string path_;
};

JointSpec parse_joint(const Node& n) {
    n.expect_object({"name", "finger", "kind", "rom_min_deg", "rom_max_deg", "motor_id",
                     "transmission", "direction", "axis", "provenance"});
    JointSpec j;
    j.name = n.at("name").str();
    j.finger = n.at("finger").enumeration(&parse_finger, "finger");
    j.kind = n.at("kind").enumeration(&parse_joint_kind, "joint kind");
    j.rom_min_deg = n.at("rom_min_deg").num();
    j.rom_max_deg = n.at("rom_max_deg").num();
    j.motor_id = static_cast<int>(n.at("motor_id").integer());
    j.transmission = n.at("transmission").enumeration(&parse_transmission, "transmission");
    j.direction = static_cast<int>(n.at("direction").integer());
    j.axis = n.at("axis").enumeration(&parse_axis, "axis");
    if (n.has("provenance")) j.provenance = n.at("provenance").str();
    return j;
}

FingerChainSpec parse_chain(const Node& n) {
    n.expect_object({"finger", "base_position_mm", "base_orientation_deg", "link_lengths_mm",
                     "joint_order", "provenance"});
    FingerChainSpec c;
    c.finger = n.at("finger").enumeration(&parse_finger, "finger");
    c.base_position_mm = n.at("base_position_mm").vec3();
    c.base_orientation_deg = n.at("base_orientation_deg").vec3();
    for (const auto& l : n.at("link_lengths_mm").array()) c.link_lengths_mm.push_back(l.num());
    for (const auto& name : n.at("joint_order").array()) c.joint_order.push_back(name.str());
    if (n.has("provenance")) c.provenance = n.at("provenance").str();
    return c;
}

tactile::TactileChannelSpec parse_sensor(const Node& n) {
    n.expect_object({"finger", "divider_resistor_ohm", "supply_v", "adc_bits", "adc_ref_v",
                     "touch_threshold_v"});
    tactile::TactileChannelSpec s;
    s.finger = n.at("finger").enumeration(&parse_finger, "finger");
    s.divider_resistor_ohm = n.at("divider_resistor_ohm").num();
    s.supply_v = n.at("supply_v").num();
    s.adc_bits = static_cast<int>(n.at("adc_bits").integer());
    s.adc_ref_v = n.at("adc_ref_v").num();
    s.touch_threshold_v = n.at("touch_threshold_v").num();
    return s;
}

std::string line_col(std::string_view text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return std::to_string(line) + ":" + std::to_string(col);
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Matrix3d base_rotation(const Vec3& deg) {
    using Eigen::AngleAxisd;
    return (AngleAxisd(deg.z() * kDegToRad, Vec3::UnitZ()) *
            AngleAxisd(deg.y() * kDegToRad, Vec3::UnitY()) *
            AngleAxisd(deg.x() * kDegToRad, Vec3::UnitX()))
        .toRotationMatrix();
}

}  // namespace

const JointSpec* HandModel::find_joint(std::string_view name) const {
    for (const auto& j : joints) {
        if (j.name == name) return &j;
    }
    return nullptr;
}

const JointSpec& HandModel::joint(std::string_view name) const {
    const auto* j = find_joint(name);
    if (!j) throw UnknownJointError(std::string(name));
    return *j;
}

const JointSpec* HandModel::find_joint_by_motor(int motor_id) const {
    for (const auto& j : joints) {
        if (j.motor_id == motor_id) return &j;
    }
    return nullptr;
}

const FingerChainSpec* HandModel::find_chain(Finger f) const {
    for (const auto& c : chains) {
        if (c.finger == f) return &c;
    }
    return nullptr;
}

const tactile::TactileChannelSpec* HandModel::find_sensor(Finger f) const {
    for (const auto& s : sensors) {
        if (s.finger == f) return &s;
    }
    return nullptr;
}

std::vector<std::string> HandModel::joint_names() const {
    std::vector<std::string> out;
    out.reserve(joints.size());
    for (const auto& j : joints) out.push_back(j.name);
    return out;
}

JointVector HandModel::mid_pose() const {
    JointVector q;
    for (const auto& j : joints) q[j.name] = j.rom_mid_deg();
    return q;
}

JointVector HandModel::neutral_pose() const {
    JointVector q;
    for (const auto& j : joints) q[j.name] = std::clamp(0.0, j.rom_min_deg, j.rom_max_deg);
    return q;
}

HandModel load_hand_config(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ConfigError(ConfigError::Kind::parse,
                          "parse error at " + line_col(text, e.byte) + ": " + e.what());
    }

    Node root(doc, "$");
    root.expect_object({"version", "joints", "chains", "sensors"});

    HandModel model;
    model.version = root.at("version").str();
    for (const auto& n : root.at("joints").array()) model.joints.push_back(parse_joint(n));
    for (const auto& n : root.at("chains").array()) model.chains.push_back(parse_chain(n));
    for (const auto& n : root.at("sensors").array()) model.sensors.push_back(parse_sensor(n));

    auto violations = validate(model);
    if (!violations.empty()) {
        std::string msg = "invalid hand model:";
        for (const auto& v : violations) msg += "\n  " + v;
        throw ConfigError(ConfigError::Kind::invariant, msg);
    }
    return model;
}

HandModel load_hand_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(ConfigError::Kind::parse, "cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return load_hand_config(ss.str());
}

std::string serialize_hand_config(const HandModel& model) {
    json doc;
    doc["version"] = model.version;
    doc["joints"] = json::array();
    for (const auto& j : model.joints) {
        json o = {{"name", j.name},
                  {"finger", to_string(j.finger)},
                  {"kind", to_string(j.kind)},
                  {"rom_min_deg", j.rom_min_deg},
                  {"rom_max_deg", j.rom_max_deg},
                  {"motor_id", j.motor_id},
                  {"transmission", to_string(j.transmission)},
                  {"direction", j.direction},
                  {"axis", to_string(j.axis)}};
        if (!j.provenance.empty()) o["provenance"] = j.provenance;
        doc["joints"].push_back(std::move(o));
    }
    doc["chains"] = json::array();
    for (const auto& c : model.chains) {
        json o = {{"finger", to_string(c.finger)},
                  {"base_position_mm", vec_json(c.base_position_mm)},
                  {"base_orientation_deg", vec_json(c.base_orientation_deg)},
                  {"link_lengths_mm", c.link_lengths_mm},
                  {"joint_order", c.joint_order}};
        if (!c.provenance.empty()) o["provenance"] = c.provenance;
        doc["chains"].push_back(std::move(o));
    }
    doc["sensors"] = json::array();
    for (const auto& s : model.sensors) {
        doc["sensors"].push_back({{"finger", to_string(s.finger)},
                                  {"divider_resistor_ohm", s.divider_resistor_ohm},
                                  {"supply_v", s.supply_v},
                                  {"adc_bits", s.adc_bits},
                                  {"adc_ref_v", s.adc_ref_v},
                                  {"touch_threshold_v", s.touch_threshold_v}});
    }
    return doc.dump(2) + "\n";
}

std::string_view default_hand_config_text() { return kDefaultConfig; }

const HandModel& default_hand_model() {
    static const HandModel model = load_hand_config(default_hand_config_text());
    return model;
}

std::vector<std::string> validate(const HandModel& model) {
    std::vector<std::string> out;
    std::set<std::string> names;
    std::map<int, std::string> motors;

    for (const auto& j : model.joints) {
        const std::string who = "joint '" + j.name + "'";
        if (j.name.empty()) out.push_back("joint with empty name");
        if (!names.insert(j.name).second) out.push_back(who + ": duplicate name");
        if (!(j.rom_min_deg < j.rom_max_deg)) out.push_back(who + ": rom_min_deg must be < rom_max_deg");
        if (j.direction != 1 && j.direction != -1) out.push_back(who + ": direction must be +1 or -1");
        if (j.motor_id < 0 || j.motor_id > 252) out.push_back(who + ": motor_id out of bus range");
        auto [it, fresh] = motors.emplace(j.motor_id, j.name);
        if (!fresh) {
            out.push_back(who + ": duplicate motor_id " + std::to_string(j.motor_id) + " (also '" +
                          it->second + "')");
        }
        const bool is_wrist = j.finger == Finger::wrist || j.kind == JointKind::WRIST;
        if (j.transmission == Transmission::belt && !is_wrist) {
            out.push_back(who + ": belt transmission is only allowed on the wrist");
        }
    }

    std::set<Finger> chain_fingers;
    std::set<std::string> chained;
    for (const auto& c : model.chains) {
        const std::string who = "chain '" + std::string(to_string(c.finger)) + "'";
        if (c.finger == Finger::wrist) out.push_back(who + ": the wrist carries no finger chain");
        if (!chain_fingers.insert(c.finger).second) out.push_back(who + ": duplicate chain");
        const std::size_t expected = c.finger == Finger::thumb ? 4 : 3;
        if (c.joint_order.size() != expected) {
            out.push_back(who + ": expected " + std::to_string(expected) + " joints, got " +
                          std::to_string(c.joint_order.size()));
        }
        for (double l : c.link_lengths_mm) {
            if (!(l > 0.0)) {
                out.push_back(who + ": link lengths must be > 0");
                break;
            }
        }
        std::size_t flexion_joints = 0;
        bool seen_flexion = false;
        for (const auto& name : c.joint_order) {
            const auto* j = model.find_joint(name);
            if (!j) {
                out.push_back(who + ": references unknown joint '" + name + "'");
                continue;
            }
            if (!chained.insert(name).second) {
                out.push_back(who + ": joint '" + name + "' already belongs to a chain");
            }
            if (j->finger != c.finger) {
                out.push_back(who + ": joint '" + name + "' belongs to another finger");
            }
            if (j->axis == Axis::flexion) {
                ++flexion_joints;
                seen_flexion = true;
            } else if (seen_flexion) {
                out.push_back(who + ": abduction joint '" + name + "' must precede flexion joints");
            }
        }
        if (c.link_lengths_mm.size() < flexion_joints) {
            out.push_back(who + ": needs one link per flexion joint");
        }
    }

    std::set<Finger> sensor_fingers;
    for (const auto& s : model.sensors) {
        const std::string who = "sensor '" + std::string(to_string(s.finger)) + "'";
        if (!sensor_fingers.insert(s.finger).second) out.push_back(who + ": duplicate sensor");
        for (const auto& v : tactile::validate(s)) out.push_back(who + ": " + v);
    }
    return out;
}

JointVector clamp_to_rom(const HandModel& model, const JointVector& q) {
    JointVector out;
    for (const auto& [name, deg] : q) {
        const auto& j = model.joint(name);
        out[name] = std::clamp(deg, j.rom_min_deg, j.rom_max_deg);
    }
    return out;
}

bool is_complete(const HandModel& model, const JointVector& q) {
    if (q.size() != model.joints.size()) return false;
    return std::all_of(model.joints.begin(), model.joints.end(),
                       [&](const JointSpec& j) { return q.count(j.name) == 1; });
}

// The chain starts at the base frame. Abduction joints rotate about the local
// palm normal (z) in place; each flexion joint rotates about the local lateral
// axis (x) and is followed by its link along the local finger axis (y). Links
// left over after the last joint are rigid distal segments.
std::vector<Vec3> chain_points(const HandModel& model, const FingerChainSpec& chain,
                               const JointVector& q) {
    Eigen::Matrix3d rot = base_rotation(chain.base_orientation_deg);
    Vec3 pos = chain.base_position_mm;
    std::vector<Vec3> points;
    points.reserve(chain.link_lengths_mm.size());

    std::size_t link = 0;
    for (const auto& name : chain.joint_order) {
        const auto& j = model.joint(name);
        auto it = q.find(name);
        if (it == q.end()) throw Error("incomplete_command", "joint vector is missing '" + name + "'");
        const double a = it->second * kDegToRad;
        const Vec3& axis = j.axis == Axis::flexion ? Vec3::UnitX() : Vec3::UnitZ();
        rot = rot * Eigen::AngleAxisd(a, axis).toRotationMatrix();
        if (j.axis == Axis::flexion && link < chain.link_lengths_mm.size()) {
            pos += rot.col(1) * chain.link_lengths_mm[link++];
            points.push_back(pos);
        }
    }
    for (; link < chain.link_lengths_mm.size(); ++link) {
        pos += rot.col(1) * chain.link_lengths_mm[link];
        points.push_back(pos);
    }
    if (points.empty()) points.push_back(pos);
    return points;
}

std::map<Finger, Vec3> forward_kinematics(const HandModel& model, const JointVector& q) {
    std::map<Finger, Vec3> tips;
    for (const auto& c : model.chains) tips[c.finger] = chain_points(model, c, q).back();
    return tips;
}

}  // namespace orca
