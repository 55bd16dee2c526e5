#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "orca/errors.hpp"
#include "orca/hand_model.hpp"

namespace orca::retarget {

struct WristPose {
    Vec3 position_mm = Vec3::Zero();
    Eigen::Vector4d orientation{1.0, 0.0, 0.0, 0.0};  // w, x, y, z

    bool operator==(const WristPose&) const = default;
};

// One glove sample, human scale, fingertips in the wrist frame.
struct KeypointFrame {
    double t = 0.0;
    WristPose wrist;
    std::map<Finger, Vec3> tips;
    // Optional joint keypoints per finger, proximal to distal, matching
    // chain_points() without its last element. Absent for plain glove data.
    std::map<Finger, std::vector<Vec3>> keypoints;

    bool operator==(const KeypointFrame&) const = default;
};

struct RetargetConfig {
    double scale_beta = 1.1;
    std::map<Finger, double> weights;  // missing fingers weigh 1
    double keypoint_weight = 1.0;      // applied only to frames carrying keypoints
    double smoothness_lambda = 1e-3;   // per deg^2
    int max_iters = 50;
    double step_size = 1.0;            // first trial step, in curvature-scaled units
    double convergence_tol_deg = 1e-3;
    double fd_step_deg = 0.05;
    bool record_energy = false;

    double weight(Finger f) const;
};

std::vector<std::string> validate(const RetargetConfig& cfg);
// Throws Error("invalid_frame") for missing fingertips, a non-unit
// quaternion or non-finite values.
void validate_frame(const KeypointFrame& frame);

// sum_i w_i |beta p_i - FK_i(q)|^2 (+ keypoint terms) + lambda |q - prev|^2,
// in mm^2, angles in degrees.
double energy(const HandModel& model, const JointVector& q, const KeypointFrame& frame, const JointVector& prev,
              const RetargetConfig& cfg);

struct SolveStats {
    int iterations = 0;
    bool converged = false;
    double initial_energy = 0.0;
    double final_energy = 0.0;
    std::vector<double> energies;  // after each iteration, when recorded
    std::vector<JointVector> iterates;
};

// Projected gradient descent from `prev` with box projection onto the ROM.
// The wrist joint is not optimised and keeps its `prev` value.
JointVector solve_frame(const HandModel& model, const KeypointFrame& frame, const JointVector& prev,
                        const RetargetConfig& cfg, SolveStats* stats = nullptr);

struct RetargetedFrame {
    double t = 0.0;
    WristPose wrist;
    JointVector q;

    bool operator==(const RetargetedFrame&) const = default;
};

// Warm-started fold of solve_frame; the first frame starts from `initial`
// (mid-ROM when absent).
std::vector<RetargetedFrame> retarget_trace(const HandModel& model, const std::vector<KeypointFrame>& frames,
                                            const RetargetConfig& cfg,
                                            std::optional<JointVector> initial = std::nullopt);

// The frame whose fingertips (and keypoints, when asked) are FK(q) / beta.
KeypointFrame synthesize_frame(const HandModel& model, const JointVector& q, double beta, double t = 0.0,
                               bool with_keypoints = false);

// Newline-delimited JSON, one frame per line:
// {"t":..,"wrist":{"p":[x,y,z],"q":[w,x,y,z]},"tips":{"thumb":[x,y,z],..},"keypoints":{..}?}
std::string frame_to_json(const KeypointFrame& frame);
KeypointFrame frame_from_json(std::string_view line);
std::vector<KeypointFrame> read_trace(std::istream& in);
void write_trace(std::ostream& out, const std::vector<KeypointFrame>& frames);

// t, wrist pose columns, then one column per model joint in model order.
void write_joints_csv(std::ostream& out, const HandModel& model, const std::vector<RetargetedFrame>& frames);

}  // namespace orca::retarget
