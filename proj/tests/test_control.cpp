#include <cmath>
#include <random>

#include "doctest.h"
#include "orca/control.hpp"
#include "orca/sim_backend.hpp"

using namespace orca;
using namespace orca::control;

namespace {

const HandModel& model() { return default_hand_model(); }

bus::SimParams no_drift(double slack) {
    auto p = bus::default_sim_params(model());
    for (auto& [_, j] : p.joints) {
        j.drift_rate = 0.0;
        j.slack_deadband = slack;
    }
    return p;
}

// Profile taken straight from simulator truth, so tests do not depend on
// the calibration sweep.
calib::CalibrationProfile truth_profile(const bus::SimBackend& sim) {
    calib::CalibrationProfile p;
    p.hand_model_version = model().version;
    for (const auto& j : model().joints) {
        calib::JointCalibration c;
        c.joint = j.name;
        c.rom_min_deg = j.rom_min_deg;
        c.rom_max_deg = j.rom_max_deg;
        c.m_min = sim.true_motor_position(j.name, j.rom_min_deg);
        c.m_max = sim.true_motor_position(j.name, j.rom_max_deg);
        c.ratio = (c.m_max - c.m_min) / (j.rom_max_deg - j.rom_min_deg);
        p.joints[j.name] = c;
    }
    return p;
}

}  // namespace

TEST_CASE("config validation") {
    CHECK(validate(ControllerConfig{}).empty());
    CHECK(!validate(ControllerConfig{0.0, 180.0, true}).empty());
    CHECK(!validate(ControllerConfig{100.0, -1.0, true}).empty());
    bus::SimBackend sim(model(), bus::default_sim_params(model()));
    CHECK_THROWS(Controller(model(), sim, ControllerConfig{-5.0, 10.0, true}));
}

TEST_CASE("uncalibrated, incomplete and unknown commands are rejected") {
    bus::SimBackend sim(model(), no_drift(0.02));
    Controller ctl(model(), sim);
    try {
        ctl.set_joint_targets(model().neutral_pose());
        FAIL("uncalibrated");
    } catch (const Error& e) {
        CHECK(e.code() == "uncalibrated");
    }
    ctl.install_profile(truth_profile(sim));
    JointVector q = model().neutral_pose();
    q.erase("wrist");
    try {
        ctl.set_joint_targets(q);
        FAIL("incomplete");
    } catch (const Error& e) {
        CHECK(e.code() == "incomplete_command");
    }
    q = model().neutral_pose();
    q["index_dip"] = 0.0;
    CHECK_THROWS_AS(ctl.set_joint_targets(q), UnknownJointError);
    CHECK_THROWS_AS(ctl.jog("index_dip", 1.0), UnknownJointError);

    auto p = truth_profile(sim);
    p.joints.erase("wrist");
    CHECK_THROWS(ctl.install_profile(p));
}

TEST_CASE("bus leased by the calibrator") {
    bus::SimBackend sim(model(), no_drift(0.02));
    Controller ctl(model(), sim);
    ctl.install_profile(truth_profile(sim));
    auto lease = sim.arbiter().try_acquire("calibration");
    CHECK_THROWS_AS(ctl.set_joint_targets(model().neutral_pose()), BusBusyError);
    CHECK(!ctl.tick());
    lease.reset();
    CHECK(ctl.tick());
}

TEST_CASE("identity command keeps the hand still") {
    bus::SimBackend sim(model(), no_drift(0.0));
    Controller ctl(model(), sim);
    ctl.install_profile(truth_profile(sim));
    ctl.set_joint_targets(ctl.commanded());
    for (int k = 0; k < 100; ++k) {
        ctl.tick();
        sim.advance(0.01);
    }
    for (int id : sim.motor_ids()) CHECK(sim.read_sample(id).current == doctest::Approx(80.0).epsilon(1e-6));
}

TEST_CASE("rate limit arithmetic: 110 deg at 55 deg/s takes 2 s") {
    bus::SimBackend sim(model(), no_drift(0.0));
    Controller ctl(model(), sim, ControllerConfig{100.0, 55.0, true});
    ctl.install_profile(truth_profile(sim));
    ctl.jog("index_mcp", 0.0);
    for (int k = 0; k < 20; ++k) ctl.tick();
    ctl.jog("index_mcp", 110.0);
    int ticks = 0;
    double prev = ctl.commanded().at("index_mcp");
    while (ctl.commanded().at("index_mcp") < 110.0 - 1e-9 && ticks < 1000) {
        ctl.tick();
        const double now = ctl.commanded().at("index_mcp");
        CHECK(now - prev <= 0.55 + 1e-9);
        prev = now;
        ++ticks;
    }
    CHECK(ticks == 200);
}

TEST_CASE("latest target wins and goals stay ROM-mapped") {
    bus::SimBackend sim(model(), no_drift(0.02));
    Controller ctl(model(), sim);
    const auto prof = truth_profile(sim);
    ctl.install_profile(prof);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> wild(-500.0, 500.0);
    int writes = 0;
    JointVector last;
    ctl.set_write_observer([&](int id, const std::string& j, double deg, double rad) {
        const auto& spec = model().joint(j);
        CHECK(spec.motor_id == id);
        CHECK(deg >= spec.rom_min_deg);
        CHECK(deg <= spec.rom_max_deg);
        const auto& c = prof.joints.at(j);
        CHECK(rad >= std::min(c.m_min, c.m_max) - 1e-12);
        CHECK(rad <= std::max(c.m_min, c.m_max) + 1e-12);
        CHECK(std::abs(deg - last[j]) <= ctl.config().max_joint_speed_deg_s / ctl.config().loop_rate_hz + 1e-9);
        last[j] = deg;
        ++writes;
    });
    last = ctl.commanded();
    for (int k = 0; k < 300; ++k) {
        JointVector q;
        for (const auto& j : model().joints) q[j.name] = wild(rng);
        ctl.set_joint_targets(q);
        if (k % 3 == 0) ctl.jog("wrist", wild(rng));
        ctl.tick();
        sim.advance(0.01);
    }
    CHECK(writes == 300 * 17);
    ctl.set_joint_targets(model().mid_pose());
    ctl.set_joint_targets(model().neutral_pose());
    CHECK(ctl.targets() == model().neutral_pose());
}

TEST_CASE("trajectory presets") {
    const auto zero = sine_preset(model(), "index_mcp", 0.0, 0.5, 2.0, 10.0);
    TrajectoryStream zs(model(), zero, 100.0);
    for (std::size_t k = 0; k < zs.size(); ++k) CHECK(zs.at(k).q.at("index_mcp") == 10.0);

    const auto s = sine_preset(model(), "index_mcp", 40.0, 0.5, 10.0);
    TrajectoryStream st(model(), s, 100.0);
    CHECK(st.size() == 1000);
    double sum = 0.0;
    for (std::size_t k = 0; k < st.size(); ++k) {
        const auto smp = st.at(k);
        CHECK(smp.t == doctest::Approx(k / 100.0));
        const double expect = 45.0 + 40.0 * std::sin(2.0 * M_PI * 0.5 * smp.t);
        CHECK(smp.q.at("index_mcp") == doctest::Approx(expect).epsilon(1e-12));
        CHECK(smp.q.at("index_pip") == model().neutral_pose().at("index_pip"));
        sum += smp.q.at("index_mcp");
    }
    CHECK(std::abs(sum / st.size() - 45.0) < 1e-9);

    TrajectoryStream again(model(), s, 100.0);
    for (std::size_t k = 0; k < st.size(); k += 37) CHECK(again.at(k).q == st.at(k).q);

    CHECK_THROWS_AS(validate_trajectory(model(), sine_preset(model(), "index_mcp", 80.0, 0.2, 5.0)), Error);
    try {
        sine_preset(model(), "wrist", 70.0, 0.2, 5.0, 0.0);
        FAIL("rom");
    } catch (const Error& e) {
        CHECK(e.code() == "rom_exceeded");
    }
}

TEST_CASE("grasp preset alternates and toggles the wrist every fourth cycle") {
    const auto spec = reliability_preset(model(), 8);
    CHECK(spec.grasp.finger_period_s == 4.0);
    CHECK(spec.grasp.wrist_period_s == 4.0 * spec.grasp.finger_period_s);
    CHECK(spec.duration_s == doctest::Approx(32.0));
    CHECK(spec.grasp.grasp_pose.at("index_mcp") == doctest::Approx(0.8 * 110.0));
    CHECK(spec.grasp.grasp_pose.at("index_abd") == 0.0);
    CHECK(spec.grasp.open_pose.at("index_mcp") == 0.0);

    TrajectoryStream st(model(), spec, 100.0);
    CHECK(st.size() == 3200);
    int finger_edges = 0, wrist_edges = 0;
    auto prev = st.at(0).q;
    CHECK(std::abs(prev.at("wrist")) == doctest::Approx(40.0));
    for (std::size_t k = 1; k < st.size(); ++k) {
        auto q = st.at(k).q;
        if (q.at("index_mcp") != prev.at("index_mcp")) ++finger_edges;
        if (q.at("wrist") != prev.at("wrist")) ++wrist_edges;
        prev = q;
    }
    CHECK(finger_edges == 15);  // two edges per 4 s cycle, minus the first
    CHECK(wrist_edges == 1);
}

TEST_CASE("run_trajectory issues one sample per loop period") {
    bus::SimBackend sim(model(), no_drift(0.02));
    Controller ctl(model(), sim);
    ctl.install_profile(truth_profile(sim));
    const auto s = sine_preset(model(), "index_pip", 20.0, 0.5, 2.0);
    const double t0 = sim.now();
    std::size_t n = 0;
    run_trajectory(ctl, s, [&](const TrajectorySample& smp, const Controller& c) {
        CHECK(c.targets().at("index_pip") == smp.q.at("index_pip"));
        ++n;
    });
    CHECK(n == 200);
    CHECK(sim.now() - t0 == doctest::Approx(2.0));
}

TEST_CASE("slack probe") {
    for (double slack : {0.02, 0.0, 0.04}) {
        bus::SimBackend sim(model(), no_drift(slack), 3);
        const auto prof = truth_profile(sim);
        Controller ctl(model(), sim);
        ctl.install_profile(prof);
        ctl.set_joint_targets(model().mid_pose());
        for (int k = 0; k < 200; ++k) {
            ctl.tick();
            sim.advance(0.01);
        }
        const double goal = sim.state().joints[5].goal_rad;
        const double est = estimate_slack("index_mcp", sim, prof, model());
        CHECK(std::abs(est - slack) <= 0.005);
        CHECK(sim.state().joints[5].goal_rad == doctest::Approx(goal).epsilon(1e-12));
    }
}

TEST_CASE("slack probe at the ROM edge fails and restores") {
    bus::SimBackend sim(model(), no_drift(0.02));
    const auto prof = truth_profile(sim);
    Controller ctl(model(), sim);
    ctl.install_profile(prof);
    ctl.jog("index_mcp", 110.0);
    for (int k = 0; k < 300; ++k) {
        ctl.tick();
        sim.advance(0.01);
    }
    const double goal = sim.state().joints[5].goal_rad;
    try {
        estimate_slack("index_mcp", sim, prof, model());
        FAIL("probe should leave the ROM");
    } catch (const Error& e) {
        CHECK(e.code() == "probe_out_of_rom");
    }
    CHECK(sim.state().joints[5].goal_rad == doctest::Approx(goal).epsilon(1e-12));
    CHECK(!sim.arbiter().holder());
}

TEST_CASE("trajectory kind names") {
    for (auto k : {TrajectoryKind::sine, TrajectoryKind::grasp_cycle, TrajectoryKind::hold, TrajectoryKind::jog})
        CHECK(parse_trajectory_kind(to_string(k)) == k);
}
