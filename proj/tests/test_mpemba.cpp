#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "consistency.hpp"
#include "mpemba/config.hpp"

using namespace mpemba;
namespace fs = std::filesystem;

namespace {

DistanceTrajectory line(double d0, double slope, int n = 101, double step = 0.1)
{
    DistanceTrajectory t;
    for (int i = 0; i < n; ++i) {
        t.times.push_back(i * step);
        t.d.push_back(d0 + slope * i * step);
    }
    return t;
}

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("mpemba-test-" + std::to_string(::getpid())) / name;
    fs::create_directories(p.parent_path());
    return p;
}

RunSpec fig3b() { return preset("fig3b").runs.at(0); }

}  // namespace

TEST(DetectCrossing, IdenticalTrajectoriesNeverCross)
{
    const auto a = line(0.5, -0.01);
    const auto c = detect_crossing(a, a);
    EXPECT_FALSE(c.exists);
    EXPECT_EQ(c.farther, -1);
}

TEST(DetectCrossing, LinearCrossingIsExact)
{
    // 0.5 - 0.1 t and 0.3 - 0.02 t meet at t = 2.5.
    const auto a = line(0.5, -0.1), b = line(0.3, -0.02);
    const auto c = detect_crossing(a, b);
    ASSERT_TRUE(c.exists);
    EXPECT_NEAR(c.t_mp, 2.5, 1e-12);
    EXPECT_EQ(c.farther, 0);
    EXPECT_LE(a.times[c.lo], c.t_mp);
    EXPECT_GE(a.times[c.hi], c.t_mp);
    EXPECT_LT((a.d[c.lo] - b.d[c.lo]) * (a.d[c.hi] - b.d[c.hi]), 1e-30);
}

TEST(DetectCrossing, AntisymmetricInItsArguments)
{
    const auto a = line(0.5, -0.1), b = line(0.3, -0.02);
    const auto ab = detect_crossing(a, b), ba = detect_crossing(b, a);
    ASSERT_TRUE(ab.exists && ba.exists);
    EXPECT_DOUBLE_EQ(ab.t_mp, ba.t_mp);
    EXPECT_EQ(ab.farther, 0);
    EXPECT_EQ(ba.farther, 1);
}

TEST(DetectCrossing, StartupGuardSkipsToLaterCrossing)
{
    // f = a - b changes sign at t = 0.005 (inside the guard) and again at t = 3.
    DistanceTrajectory a, b;
    for (int i = 0; i <= 400; ++i) {
        const double t = 0.0025 * i * i / 40.0;
        a.times.push_back(t);
        b.times.push_back(t);
        a.d.push_back(0.4);
        b.d.push_back(0.4 + 1e-3 * (t - 0.005) * (3.0 - t));
    }
    const auto c = detect_crossing(a, b, 0.01);
    ASSERT_TRUE(c.exists);
    EXPECT_NEAR(c.t_mp, 3.0, 1e-3);
    const auto raw = detect_crossing(a, b, 0.0);
    ASSERT_TRUE(raw.exists);
    EXPECT_LT(raw.t_mp, 0.01);
}

TEST(DetectCrossing, GuardDropsCrossingInsideWindow)
{
    // Unique crossing at t = 0.001 lies inside the guard window.
    const auto c = detect_crossing(line(0.3, 0.0, 11, 0.1), line(0.3001, -0.1, 11, 0.1), 0.01);
    EXPECT_FALSE(c.exists);
    EXPECT_TRUE(detect_crossing(line(0.3, 0.0, 11, 0.1), line(0.3001, -0.1, 11, 0.1), 0.0).exists);
}

TEST(DetectCrossing, ResamplesMismatchedGrids)
{
    const auto a = line(0.5, -0.1, 101, 0.1), b = line(0.3, -0.02, 41, 0.25);
    const auto c = detect_crossing(a, b);
    ASSERT_TRUE(c.exists);
    EXPECT_NEAR(c.t_mp, 2.5, 1e-12);
}

TEST(Trajectory, ValidationRejectsBadData)
{
    auto t = line(0.5, -0.01, 5);
    EXPECT_NO_THROW(t.validate());
    t.times[2] = t.times[1];
    EXPECT_THROW(t.validate(), NumericalError);
    auto u = line(0.5, 2.0, 5);
    EXPECT_THROW(u.validate(), NumericalError);
    EXPECT_NO_THROW(u.validate(DistanceKind::trace));
    u.d.pop_back();
    EXPECT_THROW(u.validate(DistanceKind::trace), NumericalError);
}

TEST(Pairs, SingleTemperatureHasNoPairs)
{
    EXPECT_TRUE(all_pairs({line(0.5, -0.01)}, 0.01, 12.0).empty());
    const auto p = all_pairs({line(0.5, -0.1), line(0.3, -0.02), line(0.1, 0.0)}, 0.01, 5.0);
    ASSERT_EQ(p.size(), 3u);
    EXPECT_TRUE(p[0].crossing.exists && p[0].crossed_by_probe);
    EXPECT_TRUE(p[1].crossed_by_probe);
    EXPECT_FALSE(p[2].crossed_by_probe);
}

TEST(Overshoot, SignChangeOfEnergyOffset)
{
    const std::vector<double> t{0, 1, 2, 3};
    EXPECT_FALSE(overshoot_time(t, {1.0, 0.5, 0.2, 0.1}, 0.0));
    const auto o = overshoot_time(t, {1.0, 0.5, -0.5, -0.1}, 0.0);
    ASSERT_TRUE(o);
    EXPECT_NEAR(*o, 1.5, 1e-12);
}

TEST(Persistence, RoundTripIsLossless)
{
    RunRecord rec;
    rec.meta = {{"engine", "gge_flow"}, {"beta", 0.15}, {"epsilon", nullptr}};
    rec.columns = {"eps_t", "d_value", "energy_density"};
    rec.rows = {{0.0, 0.1 + 0.2, -1.0 / 3.0},
                {1e-300, 6.02214076e23, std::numbers::pi},
                {std::numeric_limits<double>::quiet_NaN(), -0.0, 5e-324}};
    const auto path = scratch("roundtrip.csv");
    persist_run(rec, path);
    const auto back = load_run(path);
    EXPECT_EQ(back.meta, rec.meta);
    EXPECT_EQ(back.columns, rec.columns);
    ASSERT_EQ(back.rows.size(), rec.rows.size());
    for (std::size_t i = 0; i < rec.rows.size(); ++i)
        for (std::size_t j = 0; j < rec.columns.size(); ++j) {
            const double a = rec.rows[i][j], b = back.rows[i][j];
            if (std::isnan(a)) EXPECT_TRUE(std::isnan(b));
            else EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0) << i << "," << j;
        }
    std::ifstream is(path);
    std::string first;
    std::getline(is, first);
    EXPECT_EQ(first, "# mpemba-lab v1");
}

TEST(Persistence, TrajectoryRecordRoundTrip)
{
    auto t = line(0.4, -0.01, 7);
    t.energy = {0, -0.1, -0.2, -0.25, -0.26, -0.27, -0.28};
    t.meta = {{"beta", 0.0}};
    const auto path = scratch("traj.csv");
    persist_run(to_record(t), path);
    const auto back = trajectory_from_record(load_run(path));
    EXPECT_EQ(back.times, t.times);
    EXPECT_EQ(back.d, t.d);
    EXPECT_EQ(back.energy, t.energy);
    EXPECT_EQ(back.meta, t.meta);
    RunRecord other;
    other.columns = {"beta", "d_initial"};
    EXPECT_THROW(trajectory_from_record(other), SchemaError);
}

TEST(Persistence, RejectsIncompatibleFiles)
{
    auto write = [](const std::string& name, const std::string& body) {
        const auto p = scratch(name);
        std::ofstream(p) << body;
        return p;
    };
    EXPECT_THROW(load_run(write("v2.csv", "# mpemba-lab v2\n# meta {}\neps_t,d_value\n0,1\n")), SchemaError);
    EXPECT_THROW(load_run(write("plain.csv", "eps_t,d_value\n0,1\n")), SchemaError);
    EXPECT_THROW(load_run(write("nometa.csv", "# mpemba-lab v1\neps_t,d_value\n0,1\n")), SchemaError);
    EXPECT_THROW(load_run(write("badmeta.csv", "# mpemba-lab v1\n# meta {oops\neps_t,d_value\n0,1\n")), SchemaError);
    EXPECT_THROW(load_run(write("badnum.csv", "# mpemba-lab v1\n# meta {}\neps_t,d_value\n0,1x\n")), SchemaError);
    EXPECT_THROW(load_run(write("width.csv", "# mpemba-lab v1\n# meta {}\neps_t,d_value\n0,1,2\n")), SchemaError);
    EXPECT_THROW(load_run(write("empty.csv", "")), SchemaError);
    RunRecord bad;
    bad.columns = {"a", "b"};
    bad.rows = {{1.0}};
    EXPECT_THROW(persist_run(bad, scratch("never.csv")), ValidationError);
}

TEST(Persistence, ConcurrentWritersDoNotInterleave)
{
    const int writers = 8, rounds = 20;
    std::vector<std::thread> pool;
    for (int w = 0; w < writers; ++w)
        pool.emplace_back([w] {
            for (int r = 0; r < rounds; ++r) {
                RunRecord rec;
                rec.meta = {{"writer", w}, {"round", r}};
                rec.columns = {"k", "w"};
                for (int k = 0; k < 500; ++k) rec.rows.push_back({double(k), double(w)});
                persist_run(rec, scratch("concurrent-" + std::to_string(w) + ".csv"));
                // Same path from one writer repeatedly; readers must always see a whole file.
                const auto back = load_run(scratch("concurrent-" + std::to_string(w) + ".csv"));
                ASSERT_EQ(back.rows.size(), 500u);
                for (const auto& row : back.rows) ASSERT_EQ(row[1], double(w));
            }
        });
    for (auto& t : pool) t.join();
    for (const auto& e : fs::directory_iterator(scratch("x").parent_path()))
        EXPECT_EQ(e.path().string().find(".tmp-"), std::string::npos) << e.path();
    for (int w = 0; w < writers; ++w) EXPECT_EQ(load_run(scratch("concurrent-" + std::to_string(w) + ".csv")).meta["round"], rounds - 1);
}

TEST(Experiments, IntegrablePairStartsOrderedCrossesAndOvershoots)
{
    const auto r = run_experiment(fig3b());
    const auto& c = r.summary["crossing"];
    EXPECT_TRUE(c["exists"].get<bool>());
    EXPECT_EQ(c["farther"].get<int>(), 0);  // beta = 0 starts farther
    EXPECT_GT(c["t_mp"].get<double>(), 0.01);
    const auto a = trajectory_from_record(r.files[0].second), b = trajectory_from_record(r.files[1].second);
    EXPECT_GT(a.d.front(), b.d.front());
    EXPECT_NEAR(a.energy.front(), 0.0, 1e-14);  // infinite temperature, traceless H
    EXPECT_TRUE(r.summary["trajectories"][1]["overshoot"].get<bool>());
    EXPECT_EQ(r.summary_line.rfind("crossing found", 0), 0u);
}

TEST(Experiments, DeterministicAcrossRunsAndJobCounts)
{
    const auto a = run_experiment(fig3b(), 1), b = run_experiment(fig3b(), 2);
    ASSERT_EQ(a.files.size(), b.files.size());
    for (std::size_t i = 0; i < a.files.size(); ++i) {
        EXPECT_EQ(a.files[i].first, b.files[i].first);
        EXPECT_EQ(a.files[i].second.rows, b.files[i].second.rows);
    }
    EXPECT_EQ(a.summary, b.summary);
}

TEST(Experiments, SubsystemScanAgreesWithPairCrossing)
{
    auto s = preset("fig3d").runs.at(0);
    s.numerics.t_end = 20.0;
    s.experiment.ells = {2, 6, 40};
    const auto scan = run_experiment(s);
    const auto pair = run_experiment(fig3b());
    const auto& rows = scan.summary["t_mp"];
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0]["ell"].get<int>(), 2);
    EXPECT_NEAR(rows[0]["t_mp"].get<double>(), pair.summary["crossing"]["t_mp"].get<double>(), 1e-12);
    for (const auto& row : rows) {
        ASSERT_TRUE(row["exists"].get<bool>()) << row.dump();
        EXPECT_GE(row["t_mp"].get<double>(), 0.05);
        EXPECT_LE(row["t_mp"].get<double>(), 50.0);
    }
}

TEST(Experiments, SubsystemScanStableUnderLongerChain)
{
    auto s = preset("fig3d").runs.at(0);
    s.numerics.t_end = 20.0;
    s.experiment.ells = {2, 4, 10};
    const auto a = run_experiment(s);
    s.model.L = 600;
    const auto b = run_experiment(s);
    for (std::size_t k = 0; k < 3; ++k) {
        const double ta = a.summary["t_mp"][k]["t_mp"].get<double>(), tb = b.summary["t_mp"][k]["t_mp"].get<double>();
        EXPECT_NEAR(tb, ta, 0.02 * ta) << "ell=" << s.experiment.ells[k];
    }
}

TEST(Experiments, CrossingIntervalDependsOnSubsystemSize)
{
    const auto bundle = preset("em2");
    ASSERT_EQ(bundle.runs.size(), 2u);
    std::vector<std::vector<bool>> crossed;
    for (const auto& s : bundle.runs) {
        const auto r = run_experiment(s);
        std::vector<bool> c;
        for (const auto& p : r.summary["pairs"]) c.push_back(p["crossed_by_probe"].get<bool>());
        crossed.push_back(c);
        EXPECT_EQ(r.files.front().first.rfind("trajectory_beta_", 0), 0u);
    }
    EXPECT_NE(crossed[0], crossed[1]);
}

TEST(Experiments, ExactEngineFromSteadyStateStaysPut)
{
    // GGE-limit dense engine: starting on the fixed point gives d ~ 0 throughout.
    auto s = preset("fig3c-desk").runs.at(0);
    s.model.L = 6;
    s.dissipator.gge_limit = true;
    s.dissipator.epsilon = 0.0;
    s.numerics.t_end = 3.0;
    const CMatrix h = dense_operator(s.model);
    const auto lind = Lindbladian::build(s.model, build_lindblad_hop(6, 1.0, Boundary::periodic));
    const double star = lagrange_fixed_point(GgeManifold(h, {h}, lind, 6), RVector::Zero(1))(0);
    ExactEngine eng(s);
    eng.prepare();
    const auto t = eng.trajectory(star, 0.0);
    for (double d : t.d) EXPECT_LT(d, 1e-8);
    for (double e : t.energy) EXPECT_NEAR(e, eng.steady_energy(star, 0.0), 1e-10);
    EXPECT_NEAR(eng.trajectory(0.0, 0.0).energy.front(), 0.0, 1e-14);
}

TEST(Experiments, ExactEngineConvergesTowardOccupationFlowAsRateShrinks)
{
    std::vector<double> dev;
    for (double eps : {0.5, 0.2, 0.05}) dev.push_back(consistency::compare_occupations(8, eps, 0.0, 2.0, 0.25).at(2.0));
    EXPECT_GT(dev[0], dev[1]);
    EXPECT_GT(dev[1], dev[2]);
}

TEST(Experiments, BetaTagsAreStable)
{
    EXPECT_EQ(beta_tag(0.15), "0.15");
    EXPECT_EQ(beta_tag(-0.1), "m0.1");
    EXPECT_EQ(beta_tag(0.1 + 0.2), "0.3");
}
