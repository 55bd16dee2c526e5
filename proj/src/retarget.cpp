#include "orca/retarget.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "orca/csv.hpp"
#include "orca/errors.hpp"

namespace orca::retarget {

using nlohmann::json;

double RetargetConfig::weight(Finger f) const {
    auto it = weights.find(f);
    return it == weights.end() ? 1.0 : it->second;
}

std::vector<std::string> validate(const RetargetConfig& cfg) {
    std::vector<std::string> out;
    if (!(cfg.scale_beta > 0.0)) out.emplace_back("scale_beta must be > 0");
    for (const auto& [f, w] : cfg.weights) {
        if (!(w >= 0.0)) out.push_back("weight for " + std::string(to_string(f)) + " must be >= 0");
    }
    if (!(cfg.keypoint_weight >= 0.0)) out.emplace_back("keypoint_weight must be >= 0");
    if (!(cfg.smoothness_lambda >= 0.0)) out.emplace_back("smoothness_lambda must be >= 0");
    if (cfg.max_iters < 1) out.emplace_back("max_iters must be >= 1");
    if (!(cfg.step_size > 0.0)) out.emplace_back("step_size must be > 0");
    if (!(cfg.convergence_tol_deg > 0.0)) out.emplace_back("convergence_tol_deg must be > 0");
    if (!(cfg.fd_step_deg > 0.0)) out.emplace_back("fd_step_deg must be > 0");
    return out;
}

void validate_frame(const KeypointFrame& frame) {
    if (!std::isfinite(frame.t)) throw Error("invalid_frame", "timestamp is not finite");
    for (Finger f : kDigits) {
        auto it = frame.tips.find(f);
        if (it == frame.tips.end()) {
            throw Error("invalid_frame", "missing fingertip '" + std::string(to_string(f)) + "'");
        }
        if (!it->second.allFinite()) throw Error("invalid_frame", "non-finite fingertip");
    }
    if (!frame.wrist.position_mm.allFinite() || !frame.wrist.orientation.allFinite()) {
        throw Error("invalid_frame", "non-finite wrist pose");
    }
    if (std::abs(frame.wrist.orientation.norm() - 1.0) > 1e-6) {
        throw Error("invalid_frame", "wrist quaternion is not unit-norm");
    }
    for (const auto& [f, pts] : frame.keypoints) {
        for (const auto& p : pts) {
            if (!p.allFinite()) throw Error("invalid_frame", "non-finite keypoint");
        }
    }
}

namespace {

void check_cfg(const RetargetConfig& cfg) {
    auto v = validate(cfg);
    if (!v.empty()) throw Error("invalid_config", v.front());
}

// Matching terms of one chain, without the smoothness term.
double chain_match(const HandModel& model, const FingerChainSpec& chain, const JointVector& q,
                   const KeypointFrame& frame, const RetargetConfig& cfg) {
    const auto pts = chain_points(model, chain, q);
    const double beta = cfg.scale_beta;
    double e = 0.0;
    auto tip = frame.tips.find(chain.finger);
    if (tip == frame.tips.end()) {
        throw Error("invalid_frame", "missing fingertip '" + std::string(to_string(chain.finger)) + "'");
    }
    e += cfg.weight(chain.finger) * (beta * tip->second - pts.back()).squaredNorm();
    auto kp = frame.keypoints.find(chain.finger);
    if (kp != frame.keypoints.end() && cfg.keypoint_weight > 0.0) {
        const std::size_t n = std::min(kp->second.size(), pts.size() - 1);
        for (std::size_t i = 0; i < n; ++i) {
            e += cfg.keypoint_weight * (beta * kp->second[i] - pts[i]).squaredNorm();
        }
    }
    return e;
}

double smooth_term(const std::vector<std::string>& names, const JointVector& q, const JointVector& prev,
                   double lambda) {
    double e = 0.0;
    for (const auto& n : names) {
        const double d = q.at(n) - prev.at(n);
        e += d * d;
    }
    return lambda * e;
}

struct Block {
    const FingerChainSpec* chain;
    std::vector<std::string> names;
    std::vector<double> lo, hi;
    double alpha;
    bool converged = false;
    std::vector<double> last_step, last_grad;
};

}  // namespace

double energy(const HandModel& model, const JointVector& q, const KeypointFrame& frame, const JointVector& prev,
              const RetargetConfig& cfg) {
    double e = 0.0;
    for (const auto& c : model.chains) e += chain_match(model, c, q, frame, cfg);
    for (const auto& j : model.joints) {
        auto a = q.find(j.name);
        auto b = prev.find(j.name);
        if (a == q.end() || b == prev.end()) {
            throw Error("incomplete_command", "joint vector lacks '" + j.name + "'");
        }
        const double d = a->second - b->second;
        e += cfg.smoothness_lambda * d * d;
    }
    return e;
}

JointVector solve_frame(const HandModel& model, const KeypointFrame& frame, const JointVector& prev,
                        const RetargetConfig& cfg, SolveStats* stats) {
    check_cfg(cfg);
    validate_frame(frame);
    if (!is_complete(model, prev)) throw Error("incomplete_command", "warm start must name every joint");

    JointVector q = clamp_to_rom(model, prev);
    const double e0 = energy(model, q, frame, prev, cfg);
    if (!std::isfinite(e0)) throw Error("non_finite_energy", "energy is not finite at the warm start");

    std::vector<Block> blocks;
    for (const auto& c : model.chains) {
        Block b{&c, c.joint_order, {}, {}, cfg.step_size, false, {}, {}};
        for (const auto& n : b.names) {
            const auto& js = model.joint(n);
            b.lo.push_back(js.rom_min_deg);
            b.hi.push_back(js.rom_max_deg);
        }
        blocks.push_back(std::move(b));
    }

    auto block_energy = [&](const Block& b, const JointVector& x) {
        return chain_match(model, *b.chain, x, frame, cfg) + smooth_term(b.names, x, prev, cfg.smoothness_lambda);
    };

    if (stats) {
        *stats = {};
        stats->initial_energy = e0;
    }
    const double h = cfg.fd_step_deg;
    int it = 0;
    bool all_converged = false;
    while (it < cfg.max_iters && !all_converged) {
        ++it;
        all_converged = true;
        for (auto& b : blocks) {
            if (b.converged) continue;
            const std::size_t n = b.names.size();
            const double eb = block_energy(b, q);

            // Central differences give the gradient and the diagonal
            // curvature; the step is scaled by the latter.
            std::vector<double> g(n), d(n);
            JointVector probe = q;
            double hmax = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double x = q.at(b.names[i]);
                probe[b.names[i]] = x + h;
                const double ep = block_energy(b, probe);
                probe[b.names[i]] = x - h;
                const double em = block_energy(b, probe);
                probe[b.names[i]] = x;
                g[i] = (ep - em) / (2.0 * h);
                d[i] = (ep - 2.0 * eb + em) / (h * h);
                hmax = std::max(hmax, d[i]);
            }
            const double floor = 1e-3 * hmax + 1e-12;
            std::vector<double> curv(n);
            for (std::size_t i = 0; i < n; ++i) {
                curv[i] = std::max(d[i], floor);
                d[i] = g[i] / curv[i];
            }

            // Barzilai-Borwein length in the curvature-scaled metric.
            double alpha = std::min(cfg.step_size, 2.0 * b.alpha);
            if (!b.last_step.empty()) {
                double sds = 0.0, sy = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    sds += b.last_step[i] * b.last_step[i] * curv[i];
                    sy += b.last_step[i] * (g[i] - b.last_grad[i]);
                }
                if (sy > 0.0) alpha = std::clamp(sds / sy, 1e-3, 20.0);
            }
            JointVector trial = q;
            bool accepted = false;
            for (int halvings = 0; halvings < 60; ++halvings) {
                for (std::size_t i = 0; i < n; ++i) {
                    trial[b.names[i]] = std::clamp(q.at(b.names[i]) - alpha * d[i], b.lo[i], b.hi[i]);
                }
                const double et = block_energy(b, trial);
                if (!std::isfinite(et)) throw Error("non_finite_energy", "energy is not finite during descent");
                if (et < eb) {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!accepted) {
                b.converged = true;
                continue;
            }
            b.alpha = alpha;

            double dmax = 0.0;
            b.last_step.assign(n, 0.0);
            b.last_grad = g;
            for (std::size_t i = 0; i < n; ++i) {
                b.last_step[i] = trial.at(b.names[i]) - q.at(b.names[i]);
                dmax = std::max(dmax, std::abs(trial.at(b.names[i]) - q.at(b.names[i])));
                q[b.names[i]] = trial.at(b.names[i]);
            }
            if (dmax < cfg.convergence_tol_deg) b.converged = true;
            if (!b.converged) all_converged = false;
        }
        if (stats && cfg.record_energy) {
            stats->energies.push_back(energy(model, q, frame, prev, cfg));
            stats->iterates.push_back(q);
        }
    }
    if (stats) {
        stats->iterations = it;
        stats->converged = all_converged;
        stats->final_energy = energy(model, q, frame, prev, cfg);
    }
    return q;
}

std::vector<RetargetedFrame> retarget_trace(const HandModel& model, const std::vector<KeypointFrame>& frames,
                                            const RetargetConfig& cfg, std::optional<JointVector> initial) {
    check_cfg(cfg);
    std::vector<RetargetedFrame> out;
    out.reserve(frames.size());
    JointVector prev = initial ? *initial : model.mid_pose();
    for (std::size_t k = 0; k < frames.size(); ++k) {
        if (k > 0 && frames[k].t < frames[k - 1].t) {
            throw Error("unordered_trace", "frame " + std::to_string(k) + ": timestamp goes backwards");
        }
        try {
            prev = solve_frame(model, frames[k], prev, cfg);
        } catch (const Error& e) {
            throw Error(e.code(), "frame " + std::to_string(k) + ": " + e.what());
        }
        out.push_back({frames[k].t, frames[k].wrist, prev});
    }
    return out;
}

KeypointFrame synthesize_frame(const HandModel& model, const JointVector& q, double beta, double t,
                               bool with_keypoints) {
    KeypointFrame f;
    f.t = t;
    for (const auto& c : model.chains) {
        auto pts = chain_points(model, c, q);
        f.tips[c.finger] = pts.back() / beta;
        if (with_keypoints) {
            auto& kp = f.keypoints[c.finger];
            for (std::size_t i = 0; i + 1 < pts.size(); ++i) kp.push_back(pts[i] / beta);
        }
    }
    return f;
}

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) throw Error("invalid_frame", where + ": expected [x,y,z]");
    Vec3 v;
    for (int i = 0; i < 3; ++i) {
        if (!j[i].is_number()) throw Error("invalid_frame", where + ": expected numbers");
        v[i] = j[i].get<double>();
    }
    return v;
}

Finger json_finger(const std::string& key) {
    auto f = parse_finger(key);
    if (!f || *f == Finger::wrist) throw Error("invalid_frame", "unknown finger '" + key + "'");
    return *f;
}

}  // namespace

std::string frame_to_json(const KeypointFrame& frame) {
    json j;
    j["t"] = frame.t;
    const auto& o = frame.wrist.orientation;
    j["wrist"] = {{"p", vec_json(frame.wrist.position_mm)}, {"q", json::array({o[0], o[1], o[2], o[3]})}};
    j["tips"] = json::object();
    for (const auto& [f, p] : frame.tips) j["tips"][std::string(to_string(f))] = vec_json(p);
    if (!frame.keypoints.empty()) {
        j["keypoints"] = json::object();
        for (const auto& [f, pts] : frame.keypoints) {
            json arr = json::array();
            for (const auto& p : pts) arr.push_back(vec_json(p));
            j["keypoints"][std::string(to_string(f))] = arr;
        }
    }
    return j.dump();
}

KeypointFrame frame_from_json(std::string_view line) {
    json j;
    try {
        j = json::parse(line.begin(), line.end());
    } catch (const json::parse_error& e) {
        throw Error("invalid_frame", e.what());
    }
    if (!j.is_object() || !j.contains("t") || !j["t"].is_number() || !j.contains("wrist") || !j.contains("tips")) {
        throw Error("invalid_frame", "frame needs t, wrist and tips");
    }
    KeypointFrame f;
    f.t = j["t"].get<double>();
    const json& w = j["wrist"];
    if (!w.is_object() || !w.contains("p") || !w.contains("q")) throw Error("invalid_frame", "wrist needs p and q");
    f.wrist.position_mm = json_vec(w["p"], "wrist.p");
    const json& q = w["q"];
    if (!q.is_array() || q.size() != 4) throw Error("invalid_frame", "wrist.q: expected [w,x,y,z]");
    for (int i = 0; i < 4; ++i) {
        if (!q[i].is_number()) throw Error("invalid_frame", "wrist.q: expected numbers");
        f.wrist.orientation[i] = q[i].get<double>();
    }
    if (!j["tips"].is_object()) throw Error("invalid_frame", "tips: expected an object");
    for (const auto& [key, v] : j["tips"].items()) f.tips[json_finger(key)] = json_vec(v, "tips." + key);
    if (j.contains("keypoints")) {
        if (!j["keypoints"].is_object()) throw Error("invalid_frame", "keypoints: expected an object");
        for (const auto& [key, arr] : j["keypoints"].items()) {
            if (!arr.is_array()) throw Error("invalid_frame", "keypoints." + key + ": expected an array");
            auto& pts = f.keypoints[json_finger(key)];
            for (const auto& p : arr) pts.push_back(json_vec(p, "keypoints." + key));
        }
    }
    validate_frame(f);
    return f;
}

std::vector<KeypointFrame> read_trace(std::istream& in) {
    std::vector<KeypointFrame> frames;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            frames.push_back(frame_from_json(line));
        } catch (const Error& e) {
            throw Error(e.code(), "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return frames;
}

void write_trace(std::ostream& out, const std::vector<KeypointFrame>& frames) {
    for (const auto& f : frames) out << frame_to_json(f) << '\n';
}

void write_joints_csv(std::ostream& out, const HandModel& model, const std::vector<RetargetedFrame>& frames) {
    out << "t,wrist_px,wrist_py,wrist_pz,wrist_qw,wrist_qx,wrist_qy,wrist_qz";
    for (const auto& j : model.joints) out << ',' << j.name;
    out << '\n';
    for (const auto& f : frames) {
        out << csv::format_double(f.t);
        for (int i = 0; i < 3; ++i) out << ',' << csv::format_double(f.wrist.position_mm[i]);
        for (int i = 0; i < 4; ++i) out << ',' << csv::format_double(f.wrist.orientation[i]);
        for (const auto& j : model.joints) out << ',' << csv::format_double(f.q.at(j.name));
        out << '\n';
    }
}

}  // namespace orca::retarget
