// Acceptance gates. One PASS/FAIL line per criterion; nonzero exit if any fails.
// Usage: acceptance [name...] runs only the named gates.

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "consistency.hpp"
#include "mpemba/config.hpp"
#include "oracles.hpp"
#include "sector_oracle.hpp"

using namespace mpemba;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

struct Gate {
    std::string name;
    double budget_s;  // wall-clock limit; 0 means none
    std::function<Outcome()> check;
};

std::string fmt(double x, int digits = 4)
{
    std::ostringstream s;
    s << std::setprecision(digits) << x;
    return s.str();
}

const RunConfig& only_run(const ConfigBundle& b, const std::string& name)
{
    for (const auto& r : b.runs)
        if (r.name == name) return r;
    throw std::logic_error("no run named " + name);
}

// fig3b is needed by two gates; compute it once.
const ExperimentResult& fig3b()
{
    static const ExperimentResult r = run_experiment(preset("fig3b").runs.front(), 1);
    return r;
}

double initial_distance(const ExperimentResult& r, std::size_t trajectory)
{
    const auto& rec = r.files.at(trajectory).second;
    if (rec.columns.at(1) != "d_value") throw std::logic_error("unexpected trajectory columns");
    return rec.rows.front().at(1);
}

Outcome gate_fig3b()
{
    const auto& r = fig3b();
    const auto& c = r.summary["crossing"];
    const bool crossed = c["exists"].get<bool>() && std::isfinite(c["t_mp"].get<double>());
    const double d0 = initial_distance(r, 0), d15 = initial_distance(r, 1);
    return {crossed && d0 > d15, "t_mp=" + (crossed ? fmt(c["t_mp"].get<double>()) : std::string("none")) + ", d(0): beta=0 " +
                                     fmt(d0) + " vs beta=0.15 " + fmt(d15)};
}

Outcome gate_fig3c()
{
    const auto r = run_experiment(preset("fig3c-desk").runs.front(), 1);
    int crossed = 0, pairs = 0;
    for (const auto& p : r.summary["pairs"]) {
        ++pairs;
        crossed += p["exists"].get<bool>();
    }
    return {pairs == 10 && crossed == 0, std::to_string(crossed) + " crossings in " + std::to_string(pairs) + " pairs up to eps*t=20"};
}

Outcome gate_consistency()
{
    const double horizon = 5.0, probe = 2.0;
    double worst = 0.0, weak = 0.0, strong = 0.0;
    for (double beta : {0.0, 0.15}) {
        const auto fine = consistency::compare_occupations(8, 0.02, beta, horizon, 0.05);
        const auto coarse = consistency::compare_occupations(8, 0.2, beta, probe, 0.05);
        worst = std::max(worst, fine.max_deviation());
        weak = std::max(weak, fine.at(probe));
        strong = std::max(strong, coarse.at(probe));
    }
    return {worst <= 0.05 && weak < strong, "max dev over eps*t in [0,5] at eps=0.02: " + fmt(worst) + "; at eps*t=2: eps=0.02 " +
                                                fmt(weak) + " vs eps=0.2 " + fmt(strong)};
}

Outcome gate_gaussian()
{
    std::mt19937 rng(2024);
    std::map<std::tuple<int, int, int>, sector_oracle::SectorOracle> cache;
    double err_tp = 0.0, err_pur = 0.0, err_d = 0.0;
    const int trials = 50;
    for (int k = 0; k < trials; ++k) {
        const int L = 6 + 2 * (k % 3);
        const Parity p = (k / 3) % 2 ? Parity::odd : Parity::even;
        const int ell = 1 + k % 4;
        const auto t = bogoliubov(0.75, 1.0, momentum_grid(L, p));
        const auto key = std::make_tuple(L, int(p), ell);
        auto it = cache.find(key);
        if (it == cache.end()) it = cache.emplace(key, sector_oracle::SectorOracle(L, p, 0, ell)).first;
        const RVector n1 = sector_oracle::symmetric_occupations(t.grid, rng), n2 = sector_oracle::symmetric_occupations(t.grid, rng);
        const auto g1 = correlation_matrix(OccupationState{n1}, t, ell), g2 = correlation_matrix(OccupationState{n2}, t, ell);
        const oracle::M r1 = it->second.rdm(n1), r2 = it->second.rdm(n2);
        err_tp = std::max(err_tp, std::abs(trace_product(g1, g2) - (r1 * r2).trace().real()));
        err_pur = std::max(err_pur, std::abs(purity(g1) - (r1 * r1).trace().real()));
        err_d = std::max(err_d, std::abs(normalized_frobenius_gaussian(g1, g2) - oracle::normalized_distance(r1, r2)));
    }
    const double worst = std::max({err_tp, err_pur, err_d});
    return {worst <= 1e-8, std::to_string(trials) + " random pairs, L in {6,8,10}, ell<=4; max error trace_product " + fmt(err_tp, 2) +
                               ", purity " + fmt(err_pur, 2) + ", distance " + fmt(err_d, 2)};
}

Outcome gate_em1()
{
    const auto bundle = preset("em1");
    bool ok = true;
    std::ostringstream detail;
    for (const auto& run : bundle.runs) {
        const auto r = run_experiment(run, 1);
        const auto& s = r.summary["slices"][0];
        const double z = s["beta_zero"].get<double>();
        const bool chaotic = run.model.h_x != 0.0;
        bool run_ok = s["has_zero"].get<bool>() || !chaotic;
        for (const char* k : {"argmin_trace", "argmin_frob", "argmin_norm"}) {
            const double gap = std::abs(s[k].get<double>() - z);
            run_ok = run_ok && (chaotic ? gap <= 0.01 + 1e-9 : gap > 0.02);
        }
        ok = ok && run_ok;
        detail << (detail.tellp() ? "; " : "") << run.name << " zero " << z << " minima " << s["argmin_trace"].get<double>() << "/"
               << s["argmin_frob"].get<double>() << "/" << s["argmin_norm"].get<double>();
    }
    return {ok, detail.str()};
}

Outcome gate_em2()
{
    const auto r = run_experiment(only_run(preset("em2"), "ell2"), 1);
    int inside = 0, crossed = 0;
    for (const auto& p : r.summary["pairs"]) {
        const auto b = p["betas"].get<std::vector<double>>();
        if (std::max(b[0], b[1]) > 0.15 + 1e-12 || std::min(b[0], b[1]) < -1e-12) continue;
        ++inside;
        crossed += p["crossed_by_probe"].get<bool>();
    }
    return {inside > 0 && crossed == inside,
            "ell=2: " + std::to_string(crossed) + " of " + std::to_string(inside) + " pairs in [0,0.15] reordered by eps*t=12"};
}

Outcome gate_overshoot()
{
    for (const auto& e : fig3b().summary["trajectories"])
        if (std::abs(e["beta"].get<double>() - 0.15) < 1e-12) {
            const bool ok = e["overshoot"].get<bool>() && std::isfinite(e["overshoot_time"].get<double>());
            return {ok, ok ? "beta=0.15 crosses e_inf at eps*t=" + fmt(e["overshoot_time"].get<double>()) : "no sign change"};
        }
    return {false, "no beta=0.15 trajectory"};
}

Outcome gate_invariants()
{
    std::mt19937 rng(7);
    std::vector<std::string> broken;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) broken.push_back(what);
    };

    // Density-matrix invariants along exact propagation, both schemes.
    for (auto method : {PropagationMethod::rk45, PropagationMethod::krylov}) {
        const int L = 4;
        const auto model = build_tfim(L, 0.75, 1.0, 0.3, Boundary::periodic);
        const auto lind = Lindbladian::build(model, build_lindblad_hop(L, 0.3, Boundary::periodic));
        PropagationControls pc;
        pc.method = method;
        pc.validate = false;
        const CMatrix rho0 = oracle::random_density(1 << L, rng);
        for (const auto& rho : propagate(rho0, lind, {0.5, 1.0, 2.0, 5.0}, pc)) {
            expect((rho - rho.adjoint()).cwiseAbs().maxCoeff() < 1e-10, "hermiticity");
            expect(std::abs(rho.trace() - 1.0) < 1e-10, "trace");
            Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (rho + rho.adjoint()), Eigen::EigenvaluesOnly);
            expect(es.eigenvalues().minCoeff() > -1e-8, "positivity");
        }
    }

    // Bogoliubov tables, kernels and occupation flow on random gapped couplings.
    std::uniform_real_distribution<double> coupling(0.2, 2.0), unit(0.02, 0.98);
    for (int trial = 0; trial < 10; ++trial) {
        const double J = coupling(rng);
        double hz = coupling(rng);
        if (std::abs(hz - J) < 0.05) hz += 0.1;
        for (auto p : {Parity::even, Parity::odd}) {
            const auto t = bogoliubov(J, hz, momentum_grid(12 + 2 * trial, p));
            for (int k = 0; k < t.size(); ++k)
                expect(std::abs(t.u(k) * t.u(k) + t.v(k) * t.v(k) - 1.0) < 1e-12, "u^2+v^2=1");
            const auto ker = scattering_kernels(t);
            expect(std::min({ker.f_s.minCoeff(), ker.f_c.minCoeff(), ker.f_a.minCoeff()}) >= -1e-12, "kernel nonnegativity");
            RVector n(t.size());
            for (int k = 0; k < t.size(); ++k) n(k) = unit(rng);
            const auto flow = evolve_occupations(OccupationState{n}, ker, 5.0);
            for (const auto& s : flow.states) expect(s.n.minCoeff() >= 0.0 && s.n.maxCoeff() <= 1.0, "occupations in [0,1]");
            RVector m(t.size());
            for (int k = 0; k < t.size(); ++k) m(k) = unit(rng);
            for (int ell : {1, 3, 8}) {
                const double d = normalized_frobenius_gaussian(correlation_matrix(OccupationState{n}, t, ell),
                                                               correlation_matrix(OccupationState{m}, t, ell));
                expect(d >= 0.0 && d <= 1.0, "Gaussian d_L in [0,1]");
            }
        }
    }
    for (int trial = 0; trial < 20; ++trial) {
        const CMatrix a = oracle::random_density(8, rng), b = oracle::random_density(8, rng);
        const double d = distance(a, b, DistanceKind::normalized);
        expect(d >= 0.0 && d <= 1.0, "dense d_L in [0,1]");
    }

    // Markov structure and slow-mode biorthogonality of projected dissipators.
    const std::vector<std::pair<SpinChainSpec, LindbladSpec>> chains{
        {build_tfim(8, 0.75, 1.0, 0.3, Boundary::open), build_lindblad_hop(8, 1.0, Boundary::open, SpinConvention::pauli)},
        {build_tfim(8, 0.75, 1.0, 0.0, Boundary::open), build_lindblad_hop(8, 1.0, Boundary::open, SpinConvention::pauli)},
        {build_staggered_xxz(8, 1.0, 1.6, 0.8, Boundary::periodic), build_lindblad_raise(8, 0.05, Boundary::periodic)}};
    for (const auto& [model, diss] : chains) {
        const auto pd = projected_dissipator(model, diss);
        try {
            pd.validate();
        } catch (const NumericalError& e) {
            expect(false, e.what());
        }
        expect(biorthogonality_error(slow_modes(pd, 4)) < 1e-8, "slow-mode biorthogonality");
    }

    std::sort(broken.begin(), broken.end());
    broken.erase(std::unique(broken.begin(), broken.end()), broken.end());
    std::string detail = "propagation, Bogoliubov, kernels, flow, distances, projected dissipators";
    if (!broken.empty()) {
        detail = "violated:";
        for (const auto& b : broken) detail += " " + b + ";";
    }
    return {broken.empty(), detail};
}

Outcome gate_em3()
{
    const auto r = run_experiment(preset("em3").runs.front(), 1);
    for (const auto& s : r.summary["slices"])
        if (s["mu"].get<double>() == 0.0) {
            if (!s["has_zero"].get<bool>()) return {false, "no sign change of the overlap at mu=0"};
            const double z = s["beta_zero_interp"].get<double>();
            return {z > 0.08 && z < 0.16, "mu=0 overlap zero at beta=" + fmt(z)};
        }
    return {false, "no mu=0 slice"};
}

}  // namespace

int main(int argc, char** argv)
{
    const std::vector<Gate> gates{
        {"fig3b-crossing", 300, gate_fig3b},
        {"fig3c-no-crossing", 600, gate_fig3c},
        {"engine-consistency", 600, gate_consistency},
        {"gaussian-vs-dense", 120, gate_gaussian},
        {"em1-spectral", 0, gate_em1},
        {"em2-interval", 0, gate_em2},
        {"overshoot", 0, gate_overshoot},
        {"invariants", 0, gate_invariants},
        {"em3-landscape", 0, gate_em3},
    };
    std::vector<std::string> only(argv + 1, argv + argc);
    int failed = 0;
    for (const auto& g : gates) {
        if (!only.empty() && std::find(only.begin(), only.end(), g.name) == only.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = g.check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (g.budget_s > 0 && secs > g.budget_s) {
            o.pass = false;
            o.detail += "; over the " + fmt(g.budget_s) + " s budget";
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << g.name << ": " << o.detail << " [" << std::fixed << std::setprecision(1) << secs
                  << " s]" << std::defaultfloat << std::endl;
    }
    return failed ? 1 : 0;
}
