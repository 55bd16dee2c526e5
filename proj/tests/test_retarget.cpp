#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "orca/retarget.hpp"

using namespace orca;
using namespace orca::retarget;

namespace {

const HandModel& model() { return default_hand_model(); }

JointVector random_pose(std::mt19937_64& rng, double margin = 0.0) {
    JointVector q;
    for (const auto& j : model().joints) {
        q[j.name] = std::uniform_real_distribution<double>(j.rom_min_deg + margin, j.rom_max_deg - margin)(rng);
    }
    return q;
}

double inf_norm(const JointVector& a, const JointVector& b, bool skip_wrist = true) {
    double m = 0.0;
    for (const auto& [n, v] : a) {
        if (skip_wrist && n == "wrist") continue;
        m = std::max(m, std::abs(v - b.at(n)));
    }
    return m;
}

// Term-by-term energy, written without the library's energy().
double naive_energy(const JointVector& q, const KeypointFrame& f, const JointVector& prev, const RetargetConfig& cfg) {
    double e = 0.0;
    for (const auto& c : model().chains) {
        const auto pts = chain_points(model(), c, q);
        const Vec3 d = cfg.scale_beta * f.tips.at(c.finger) - pts.back();
        e += cfg.weight(c.finger) * (d.x() * d.x() + d.y() * d.y() + d.z() * d.z());
        auto kp = f.keypoints.find(c.finger);
        if (kp != f.keypoints.end()) {
            for (std::size_t i = 0; i < kp->second.size(); ++i) {
                const Vec3 k = cfg.scale_beta * kp->second[i] - pts[i];
                e += cfg.keypoint_weight * k.squaredNorm();
            }
        }
    }
    for (const auto& [n, v] : q) e += cfg.smoothness_lambda * (v - prev.at(n)) * (v - prev.at(n));
    return e;
}

}  // namespace

TEST_CASE("energy examples") {
    RetargetConfig cfg;
    const auto prev = model().mid_pose();
    const auto f = synthesize_frame(model(), prev, cfg.scale_beta);
    CHECK(energy(model(), prev, f, prev, cfg) == doctest::Approx(0.0).scale(1e-9));

    RetargetConfig flat = cfg;
    flat.smoothness_lambda = 0.0;
    flat.scale_beta = 1.0;
    auto g = synthesize_frame(model(), prev, 1.0);
    g.tips[Finger::ring].x() += 1.0;
    CHECK(energy(model(), prev, g, prev, flat) == doctest::Approx(1.0).epsilon(1e-9));

    std::mt19937_64 rng(1);
    for (int k = 0; k < 300; ++k) {
        RetargetConfig c;
        c.smoothness_lambda = std::uniform_real_distribution<double>(0.0, 0.1)(rng);
        c.weights[Finger::thumb] = 2.5;
        c.weights[Finger::pinky] = 0.0;
        const auto q = random_pose(rng);
        const auto p = random_pose(rng);
        const auto fr = synthesize_frame(model(), random_pose(rng), 1.3, 0.0, k % 2 == 0);
        const double a = energy(model(), q, fr, p, c);
        const double b = naive_energy(q, fr, p, c);
        CHECK(std::isfinite(a));
        CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)));
    }
}

TEST_CASE("frame validation") {
    auto f = synthesize_frame(model(), model().mid_pose(), 1.1);
    CHECK_NOTHROW(validate_frame(f));
    auto missing = f;
    missing.tips.erase(Finger::middle);
    CHECK_THROWS_AS(validate_frame(missing), Error);
    CHECK_THROWS(energy(model(), model().mid_pose(), missing, model().mid_pose(), RetargetConfig{}));
    auto quat = f;
    quat.wrist.orientation = Eigen::Vector4d(1, 1, 0, 0);
    CHECK_THROWS_AS(validate_frame(quat), Error);
    auto nan = f;
    nan.tips[Finger::index].y() = std::nan("");
    CHECK_THROWS_AS(validate_frame(nan), Error);

    auto huge = f;
    huge.tips[Finger::index] = Vec3(1e200, 0, 0);
    try {
        solve_frame(model(), huge, model().mid_pose(), RetargetConfig{});
        FAIL("expected non-finite energy");
    } catch (const Error& e) {
        CHECK(e.code() == "non_finite_energy");
    }
    RetargetConfig bad;
    bad.max_iters = 0;
    CHECK(!validate(bad).empty());
    bad = {};
    bad.convergence_tol_deg = 0.0;
    CHECK(!validate(bad).empty());
}

TEST_CASE("fixed point at zero energy") {
    std::mt19937_64 rng(2);
    RetargetConfig cfg;
    for (int k = 0; k < 20; ++k) {
        const auto q = random_pose(rng, 1.0);
        const auto f = synthesize_frame(model(), q, cfg.scale_beta);
        SolveStats st;
        const auto r = solve_frame(model(), f, q, cfg, &st);
        CHECK(inf_norm(r, q) < 1e-6);
        CHECK(st.final_energy <= st.initial_energy);
    }
}

TEST_CASE("round trip from mid-ROM, with descent and feasibility on every iterate") {
    std::mt19937_64 rng(3);
    RetargetConfig cfg;
    cfg.smoothness_lambda = 0.0;
    cfg.record_energy = true;
    int ok = 0;
    const int trials = 20;
    for (int k = 0; k < trials; ++k) {
        const auto q = random_pose(rng);
        const auto f = synthesize_frame(model(), q, cfg.scale_beta, 0.0, true);
        JointVector start = model().mid_pose();
        start["wrist"] = q.at("wrist");
        SolveStats st;
        const auto r = solve_frame(model(), f, start, cfg, &st);
        if (inf_norm(r, q) < 0.5) ++ok;
        double prev = st.initial_energy;
        REQUIRE(st.energies.size() == st.iterates.size());
        for (std::size_t i = 0; i < st.energies.size(); ++i) {
            CHECK(st.energies[i] <= prev);
            prev = st.energies[i];
            for (const auto& j : model().joints) {
                CHECK(st.iterates[i].at(j.name) >= j.rom_min_deg);
                CHECK(st.iterates[i].at(j.name) <= j.rom_max_deg);
            }
        }
        CHECK(st.iterations <= cfg.max_iters);
    }
    CHECK(ok >= trials - 1);
}

TEST_CASE("unreachable target ends on the ROM boundary") {
    RetargetConfig cfg;
    auto f = synthesize_frame(model(), model().mid_pose(), cfg.scale_beta);
    f.tips[Finger::index] = Vec3(10'000.0, 88.0, 0.0);
    const auto start = model().mid_pose();
    SolveStats st;
    const auto r = solve_frame(model(), f, start, cfg, &st);
    CHECK(st.final_energy < st.initial_energy);
    CHECK(energy(model(), r, f, start, cfg) < energy(model(), start, f, start, cfg));
    bool on_bound = false;
    for (const char* n : {"index_abd", "index_mcp", "index_pip"}) {
        const auto& j = model().joint(n);
        on_bound |= r.at(n) == j.rom_min_deg || r.at(n) == j.rom_max_deg;
    }
    CHECK(on_bound);
}

TEST_CASE("finite differences vs the analytic quadratic term") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    RetargetConfig cfg;
    cfg.smoothness_lambda = 0.37;
    for (Finger f : kDigits) cfg.weights[f] = 0.0;
    const double h = cfg.fd_step_deg;
    for (int k = 0; k < 100; ++k) {
        const auto q = random_pose(rng, 5.0);
        const auto prev = random_pose(rng, 5.0);
        const auto fr = synthesize_frame(model(), random_pose(rng), 1.1);
        JointVector d, qp = q, qm = q;
        double analytic = 0.0;
        for (const auto& [name, v] : q) {
            d[name] = n(rng);
            qp[name] += h * d[name];
            qm[name] -= h * d[name];
            analytic += 2.0 * cfg.smoothness_lambda * (v - prev.at(name)) * d[name];
        }
        const double fd = (energy(model(), qp, fr, prev, cfg) - energy(model(), qm, fr, prev, cfg)) / (2.0 * h);
        CHECK(std::abs(fd - analytic) <= 1e-3 * std::abs(analytic));
    }
}

TEST_CASE("small tip perturbations move interior optima a little") {
    std::mt19937_64 rng(5);
    RetargetConfig cfg;
    for (int k = 0; k < 10; ++k) {
        const auto q = random_pose(rng, 15.0);
        const auto f = synthesize_frame(model(), q, cfg.scale_beta, 0.0, true);
        auto g = f;
        g.tips[Finger::index].x() += 0.1;
        const auto a = solve_frame(model(), f, q, cfg);
        const auto b = solve_frame(model(), g, q, cfg);
        CHECK(inf_norm(a, b) < 0.5);
    }
}

TEST_CASE("trace retargeting") {
    RetargetConfig cfg;
    std::mt19937_64 rng(6);
    const auto q = random_pose(rng, 10.0);
    auto one = synthesize_frame(model(), q, cfg.scale_beta, 0.0, true);
    one.wrist.position_mm = Vec3(1, 2, 3);
    one.wrist.orientation = Eigen::Vector4d(0.5, 0.5, 0.5, 0.5);
    const auto single = retarget_trace(model(), {one}, cfg);
    REQUIRE(single.size() == 1);
    CHECK(single[0].q == solve_frame(model(), one, model().mid_pose(), cfg));
    CHECK(single[0].wrist == one.wrist);

    std::vector<KeypointFrame> constant;
    for (int k = 0; k < 6; ++k) {
        auto f = one;
        f.t = k * 0.1;
        constant.push_back(f);
    }
    const auto out = retarget_trace(model(), constant, cfg);
    CHECK(out.size() == constant.size());
    for (std::size_t k = 2; k < out.size(); ++k) CHECK(inf_norm(out[k].q, out[1].q) < 1e-2);

    // Sine-articulated trace.
    std::vector<KeypointFrame> sine;
    std::vector<JointVector> truth;
    for (int k = 0; k < 90; ++k) {
        const double t = k / 30.0;
        JointVector x;
        for (const auto& j : model().joints) x[j.name] = j.rom_mid_deg() + 0.3 * j.rom_span_deg() * std::sin(2 * M_PI * 0.3 * t);
        x["wrist"] = 0.0;
        truth.push_back(x);
        sine.push_back(synthesize_frame(model(), x, cfg.scale_beta, t, true));
    }
    JointVector init = truth[0];
    const auto tracked = retarget_trace(model(), sine, cfg, init);
    for (std::size_t k = 5; k < tracked.size(); ++k) CHECK(inf_norm(tracked[k].q, truth[k]) < 1.0);

    auto back = constant;
    back[3].t = -1.0;
    try {
        retarget_trace(model(), back, cfg);
        FAIL("unordered");
    } catch (const Error& e) {
        CHECK(e.code() == "unordered_trace");
    }
    auto broken = constant;
    broken[4].tips.erase(Finger::pinky);
    try {
        retarget_trace(model(), broken, cfg);
        FAIL("bad frame");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("frame 4") != std::string::npos);
    }
}

TEST_CASE("trace file codec") {
    std::mt19937_64 rng(7);
    std::vector<KeypointFrame> frames;
    for (int k = 0; k < 50; ++k) frames.push_back(synthesize_frame(model(), random_pose(rng), 1.1, k * 0.0333, k % 2));
    std::stringstream io;
    write_trace(io, frames);
    const auto back = read_trace(io);
    CHECK(back == frames);

    std::istringstream bad("{\"t\":0}\n");
    try {
        read_trace(bad);
        FAIL("bad line");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
    CHECK_THROWS(frame_from_json(R"({"t":0,"wrist":{"p":[0,0,0],"q":[1,0,0,0]},"tips":{"toe":[0,0,0]}})"));

    std::ostringstream csv;
    write_joints_csv(csv, model(), {{0.5, {}, model().mid_pose()}});
    const std::string s = csv.str();
    CHECK(s.rfind("t,wrist_px,wrist_py,wrist_pz,wrist_qw,wrist_qx,wrist_qy,wrist_qz,thumb_cmc,", 0) == 0);
    CHECK(s.find("\n0.5,0,0,0,1,0,0,0,-2.5,") != std::string::npos);
}
