#pragma once

// Experiment orchestration: distance trajectories from the free-fermion and
// dense engines, crossing detection, scans and CSV run records.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "json.hpp"

#include "exact.hpp"
#include "gaussian.hpp"
#include "spectral.hpp"

namespace mpemba {

using json = nlohmann::ordered_json;

enum class EngineKind { gge_flow, exact, spectral };
enum class ExperimentKind { trajectory, crossing, scan_T, scan_ell, landscape, observable };

inline std::string to_string(EngineKind e)
{
    switch (e) {
    case EngineKind::gge_flow: return "gge_flow";
    case EngineKind::exact: return "exact";
    default: return "spectral";
    }
}

inline std::string to_string(ExperimentKind e)
{
    switch (e) {
    case ExperimentKind::trajectory: return "trajectory";
    case ExperimentKind::crossing: return "crossing";
    case ExperimentKind::scan_T: return "scan_T";
    case ExperimentKind::scan_ell: return "scan_ell";
    case ExperimentKind::landscape: return "landscape";
    default: return "observable";
    }
}

struct DissipatorBlock {
    DissipatorKind kind = DissipatorKind::hop;
    double epsilon = 0.0;
    bool gge_limit = true;
    SpinConvention convention = SpinConvention::half;
};

struct EngineBlock {
    EngineKind kind = EngineKind::gge_flow;
    PropagationMethod method = PropagationMethod::krylov;
    int max_exact_sites = 10;
    int max_spectral_sites = 14;
};

struct ExperimentBlock {
    ExperimentKind kind = ExperimentKind::crossing;
    std::vector<double> betas;
    std::vector<double> mus{0.0};
    int ell = 2;
    std::vector<int> ells;
    DistanceKind distance = DistanceKind::normalized;
    double probe_time = 12.0;
    int slow_modes = 4;
};

struct NumericsBlock {
    double t_end = 20.0;
    double sample_step = 0.05;
    double rtol = 1e-8;
    double atol = 1e-10;
    double crossing_guard = 0.01;
    double steady_tol = 1e-10;
    double steady_horizon = 5000.0;
};

struct OutputBlock {
    std::string dir = "out";
};

struct RunSpec {
    std::string name = "run";
    SpinChainSpec model;
    DissipatorBlock dissipator;
    EngineBlock engine;
    ExperimentBlock experiment;
    NumericsBlock numerics;
    OutputBlock output;

    LindbladSpec lindblad() const
    {
        return build_lindblad(dissipator.kind, model.L, dissipator.epsilon, model.boundary, dissipator.convention);
    }

    // Engine and experiment compatibility, checked before any computation.
    void validate() const
    {
        model.validate();
        const auto& ex = experiment;
        const auto& nu = numerics;
        require(std::isfinite(dissipator.epsilon) && dissipator.epsilon >= 0.0, "must be a finite nonnegative rate",
                "dissipator.epsilon");
        require(ex.ell >= 1 && ex.ell <= model.L, "subsystem size must lie in [1, L]", "experiment.ell");
        require(nu.t_end > 0.0, "must be positive", "numerics.t_end");
        require(nu.sample_step > 0.0 && nu.sample_step <= nu.t_end, "must be positive and at most t_end", "numerics.sample_step");
        require(nu.rtol > 0.0 && nu.atol > 0.0, "tolerances must be positive", "numerics");
        require(nu.crossing_guard >= 0.0, "must be nonnegative", "numerics.crossing_guard");
        require(nu.steady_tol > 0.0 && nu.steady_horizon > 0.0, "must be positive", "numerics.steady_tol");
        require(ex.probe_time > 0.0, "must be positive", "experiment.probe_time");
        require(!ex.betas.empty(), "needs at least one inverse temperature", "experiment.betas");
        require(!ex.mus.empty(), "needs at least one chemical potential", "experiment.mus");
        for (double b : ex.betas) require(std::isfinite(b), "must be finite", "experiment.betas");
        for (double m : ex.mus) require(std::isfinite(m), "must be finite", "experiment.mus");
        if (model.family == Family::tfim)
            for (double m : ex.mus) require(m == 0.0, "TFIM has no conserved magnetization; mu must be 0", "experiment.mus");
        switch (ex.kind) {
        case ExperimentKind::crossing:
            require(ex.betas.size() == 2, "crossing compares exactly two inverse temperatures", "experiment.betas");
            break;
        case ExperimentKind::scan_ell:
            require(engine.kind == EngineKind::gge_flow, "scan_ell requires the gge_flow engine", "engine.kind");
            require(ex.betas.size() == 2, "scan_ell compares exactly two inverse temperatures", "experiment.betas");
            require(!ex.ells.empty(), "needs at least one subsystem size", "experiment.ells");
            for (int l : ex.ells) require(l >= 1 && l <= model.L, "subsystem size must lie in [1, L]", "experiment.ells");
            break;
        case ExperimentKind::landscape:
            require(engine.kind == EngineKind::spectral, "landscape requires the spectral engine", "engine.kind");
            require(ex.betas.size() >= 2, "landscape needs a beta grid", "experiment.betas");
            require(ex.slow_modes >= 1, "must be at least 1", "experiment.slow_modes");
            break;
        default: break;
        }
        if (ex.kind != ExperimentKind::landscape)
            require(ex.mus.size() == 1, "trajectory experiments take a single chemical potential", "experiment.mus");
        switch (engine.kind) {
        case EngineKind::gge_flow:
            require(model.integrable(), "gge_flow needs the integrable TFIM (h_x = 0)", "model");
            require(model.boundary == Boundary::periodic, "gge_flow needs PERIODIC boundaries", "model.boundary");
            require(dissipator.kind == DissipatorKind::hop && dissipator.convention == SpinConvention::half,
                    "the rate equation is derived for the hop dissipator with S = sigma/2 only", "dissipator.kind");
            require(ex.distance == DistanceKind::normalized, "Gaussian path provides the normalized distance only",
                    "experiment.distance");
            break;
        case EngineKind::exact:
            if (model.L > engine.max_exact_sites)
                throw BudgetError("exact engine at L=" + std::to_string(model.L) + " exceeds budget of " +
                                      std::to_string(engine.max_exact_sites) + " sites",
                                  "model.L");
            require(dissipator.gge_limit || dissipator.epsilon > 0.0, "finite-rate exact runs need epsilon > 0",
                    "dissipator.epsilon");
            require(ex.kind != ExperimentKind::landscape, "landscape requires the spectral engine", "experiment.kind");
            break;
        case EngineKind::spectral:
            if (model.L > engine.max_spectral_sites)
                throw BudgetError("spectral engine at L=" + std::to_string(model.L) + " exceeds budget of " +
                                      std::to_string(engine.max_spectral_sites) + " sites",
                                  "model.L");
            require(ex.kind == ExperimentKind::landscape, "spectral engine only runs landscape experiments", "experiment.kind");
            require(dissipator.epsilon > 0.0, "spectral analysis needs epsilon > 0", "dissipator.epsilon");
            break;
        }
    }
};

// ---------------------------------------------------------------------------
// Trajectories and crossings

struct DistanceTrajectory {
    std::vector<double> times;  // eps t
    std::vector<double> d;
    std::vector<double> energy;  // energy density <H>/L, empty if not computed
    json meta = json::object();

    void validate(DistanceKind kind = DistanceKind::normalized) const
    {
        if (times.size() != d.size()) throw NumericalError("trajectory columns differ in length");
        for (std::size_t i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1])) throw NumericalError("trajectory times not strictly increasing");
        if (kind == DistanceKind::normalized)
            for (double x : d)
                if (!(x >= 0.0 && x <= 1.0)) throw NumericalError("normalized distance outside [0, 1]");
    }
};

struct CrossingResult {
    bool exists = false;
    double t_mp = std::numeric_limits<double>::quiet_NaN();
    int lo = -1, hi = -1;   // bracketing sample indices
    double residual = 0.0;  // |d_a - d_b| at the nearer bracketing sample
    int farther = -1;       // 0: first trajectory starts farther, 1: second, -1: tie
};

inline double interpolate(const std::vector<double>& t, const std::vector<double>& y, double x)
{
    require(!t.empty() && t.size() == y.size(), "interpolation needs matching nonempty columns");
    if (x <= t.front()) return y.front();
    if (x >= t.back()) return y.back();
    const auto it = std::upper_bound(t.begin(), t.end(), x);
    const std::size_t i = static_cast<std::size_t>(it - t.begin());
    const double w = (x - t[i - 1]) / (t[i] - t[i - 1]);
    return (1.0 - w) * y[i - 1] + w * y[i];
}

inline CrossingResult detect_crossing(const DistanceTrajectory& a, const DistanceTrajectory& b, double guard = 0.01)
{
    require(!a.times.empty() && !b.times.empty(), "empty trajectory");
    std::vector<double> db = b.d;
    if (a.times != b.times) {
        db.resize(a.times.size());
        for (std::size_t i = 0; i < a.times.size(); ++i) db[i] = interpolate(b.times, b.d, a.times[i]);
    }
    CrossingResult r;
    std::vector<double> f(a.times.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = a.d[i] - db[i];
    r.farther = f[0] > 0.0 ? 0 : (f[0] < 0.0 ? 1 : -1);
    // Crossings interpolated to before the guard time are sampling artifacts.
    int last = -1;  // last sample with a definite sign
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (f[i] == 0.0) continue;
        if (last >= 0 && f[last] * f[i] < 0.0) {
            const double t0 = a.times[last], t1 = a.times[i];
            const double t = t0 - f[last] * (t1 - t0) / (f[i] - f[last]);
            if (t >= guard) {
                r.exists = true;
                r.lo = last;
                r.hi = static_cast<int>(i);
                r.t_mp = t;
                r.residual = std::min(std::abs(f[last]), std::abs(f[i]));
                return r;
            }
        }
        last = static_cast<int>(i);
    }
    return r;
}

// Simple work queue over [0, n); results are written by index so the
// aggregation order does not depend on scheduling.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn)
{
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min<int>(jobs, static_cast<int>(n)); ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Free-fermion engine: both parity sectors, observables averaged

class FermionEngine {
public:
    struct Run {
        double beta = 0.0;
        std::vector<double> times;
        std::array<std::vector<RVector>, 2> n;  // per sector, per sample
    };

    FermionEngine(const SpinChainSpec& model, const FlowControls& flow = {}, const SteadyControls& steady = {})
        : model_(model), flow_(flow)
    {
        require(model.integrable() && model.boundary == Boundary::periodic, "fermionic engine needs the periodic integrable TFIM",
                "model");
        for (int s = 0; s < 2; ++s) {
            tables_[s] = bogoliubov(model.J, model.h_z, momentum_grid(model.L, s == 0 ? Parity::even : Parity::odd));
            tables_[s].validate();
            kernels_[s] = scattering_kernels(tables_[s]);
            steady_[s] = steady_state(kernels_[s], thermal_occupations(0.0, tables_[s]), steady);
        }
    }

    Run evolve(double beta, double t_end) const
    {
        Run r;
        r.beta = beta;
        for (int s = 0; s < 2; ++s) {
            const auto traj = evolve_occupations(thermal_occupations(beta, tables_[s]), kernels_[s], t_end, flow_);
            r.times = traj.times;
            for (const auto& st : traj.states) r.n[s].push_back(st.n);
        }
        return r;
    }

    // Prepares correlation builders up to ell_max; call before sharing across threads.
    void prepare(int ell_max)
    {
        for (int s = 0; s < 2; ++s) {
            if (builders_[s] && builders_[s]->ell_max() >= ell_max) continue;
            builders_[s].emplace(tables_[s], ell_max);
            steady_gamma_[s].clear();
        }
        for (int ell = 1; ell <= ell_max; ++ell)
            for (int s = 0; s < 2; ++s) steady_gamma_[s].push_back(builders_[s]->build(steady_[s].n, ell));
    }

    std::array<std::vector<double>, 2> sector_distances(const Run& r, int ell) const
    {
        require(builders_[0] && ell <= builders_[0]->ell_max(), "engine not prepared for this subsystem size");
        std::array<std::vector<double>, 2> out;
        for (int s = 0; s < 2; ++s) {
            const auto& ginf = steady_gamma_[s][ell - 1];
            for (const auto& n : r.n[s])
                out[s].push_back(normalized_frobenius_gaussian(builders_[s]->build(n, ell), ginf));
        }
        return out;
    }

    std::vector<double> distances(const Run& r, int ell) const
    {
        const auto sec = sector_distances(r, ell);
        std::vector<double> out(sec[0].size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = parity_average(sec[0][i], sec[1][i]);
        return out;
    }

    std::vector<double> energy(const Run& r) const
    {
        std::vector<double> out(r.times.size());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = parity_average(energy_density(r.n[0][i], tables_[0]), energy_density(r.n[1][i], tables_[1]));
        return out;
    }

    double steady_energy() const
    {
        return parity_average(energy_density(steady_[0].n, tables_[0]), energy_density(steady_[1].n, tables_[1]));
    }

    const BogoliubovTable& table(Parity p) const { return tables_[p == Parity::even ? 0 : 1]; }
    const ScatteringKernels& kernels(Parity p) const { return kernels_[p == Parity::even ? 0 : 1]; }
    const OccupationState& steady(Parity p) const { return steady_[p == Parity::even ? 0 : 1]; }

private:
    SpinChainSpec model_;
    FlowControls flow_;
    std::array<BogoliubovTable, 2> tables_;
    std::array<ScatteringKernels, 2> kernels_;
    std::array<OccupationState, 2> steady_;
    std::array<std::optional<CorrelationBuilder>, 2> builders_;
    std::array<std::vector<CorrelationMatrix>, 2> steady_gamma_;
};

// ---------------------------------------------------------------------------
// Dense engine: finite-rate propagation or the GGE-limit Lagrange flow

class ExactEngine {
public:
    ExactEngine(const RunSpec& spec) : spec_(spec), budget_{spec.engine.max_exact_sites}
    {
        const int L = spec.model.L;
        h_ = dense_operator(spec.model, budget_);
        sz_ = total_sz_diagonal(L);
        lind_.emplace(Lindbladian::build(spec.model, spec.lindblad(), budget_));
        if (spec.dissipator.gge_limit) {
            std::vector<CMatrix> charges{h_};
            if (spec.model.family == Family::staggered_xxz) charges.push_back(CMatrix(sz_.cast<cplx>().asDiagonal()));
            manifold_.emplace(h_, charges, *lind_, L);
        }
    }

    bool gge_limit() const { return manifold_.has_value(); }

    RVector lambdas(double beta, double mu) const
    {
        RVector l(manifold_->size());
        l(0) = beta;
        if (l.size() > 1) l(1) = mu;
        return l;
    }

    CMatrix initial_state(double beta, double mu) const
    {
        CMatrix x = beta * h_;
        x.diagonal() += (mu * sz_).cast<cplx>();
        return detail::exp_state(x);
    }

    // Must run before trajectories are requested from several threads.
    void prepare()
    {
        const int L = spec_.model.L, ell = spec_.experiment.ell;
        if (gge_limit()) {
            if (!lambda_inf_) {
                RVector guess = RVector::Zero(manifold_->size());
                lambda_inf_ = lagrange_fixed_point(*manifold_, guess);
                manifold_->reduced_state(*lambda_inf_, centered_block(L, ell), ell);
            }
        } else if (!steady_) {
            steady_ = steady_states(*lind_, L);
        }
    }

    DistanceTrajectory trajectory(double beta, double mu) const
    {
        const int L = spec_.model.L, ell = spec_.experiment.ell, first = centered_block(L, ell);
        const auto kind = spec_.experiment.distance;
        const auto grid = detail::sample_grid(spec_.numerics.t_end, spec_.numerics.sample_step);
        DistanceTrajectory out;
        if (gge_limit()) {
            const CMatrix inf = manifold_->reduced_state(*lambda_inf_, first, ell);
            const auto flow = lagrange_flow(*manifold_, lambdas(beta, mu), spec_.numerics.t_end, spec_.numerics.sample_step);
            for (std::size_t i = 0; i < flow.times.size(); ++i) {
                out.times.push_back(flow.times[i]);
                out.d.push_back(distance(manifold_->reduced_state(flow.lambdas[i], first, ell), inf, kind));
                out.energy.push_back(manifold_->energy(flow.lambdas[i]) / L);
            }
        } else {
            const double eps = spec_.dissipator.epsilon;
            const CMatrix rho0 = initial_state(beta, mu);
            const CMatrix inf = partial_trace(steady_->for_initial(rho0), L, first, ell);
            std::vector<double> phys(grid.size());
            for (std::size_t i = 0; i < grid.size(); ++i) phys[i] = grid[i] / eps;
            PropagationControls pc;
            pc.method = spec_.engine.method;
            std::size_t i = 0;
            propagate(rho0, *lind_, phys, pc, [&](double, const CMatrix& rho) {
                out.times.push_back(grid[i++]);
                out.d.push_back(distance(partial_trace(rho, L, first, ell), inf, kind));
                out.energy.push_back((h_.cwiseProduct(rho.transpose())).sum().real() / L);
            });
        }
        return out;
    }

    double steady_energy(double beta, double mu) const
    {
        if (gge_limit()) return manifold_->energy(*lambda_inf_) / spec_.model.L;
        const CMatrix inf = steady_->for_initial(initial_state(beta, mu));
        return (h_.cwiseProduct(inf.transpose())).sum().real() / spec_.model.L;
    }

    const Lindbladian& lindbladian() const { return *lind_; }
    const std::optional<SteadyStates>& steady() const { return steady_; }

private:
    RunSpec spec_;
    DenseBudget budget_;
    CMatrix h_;
    RVector sz_;
    std::optional<Lindbladian> lind_;
    std::optional<GgeManifold> manifold_;
    std::optional<RVector> lambda_inf_;
    std::optional<SteadyStates> steady_;
};

// ---------------------------------------------------------------------------
// Run records: `# mpemba-lab v1`, `# meta {json}`, a column header, rows.

inline constexpr const char* kSchemaLine = "# mpemba-lab v1";

struct RunRecord {
    json meta = json::object();
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

inline std::string format_number(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline void write_atomically(const std::filesystem::path& path, const std::string& content)
{
    static std::atomic<unsigned long> counter{0};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot open " + tmp + " for writing");
        os << content;
        os.flush();
        if (!os) throw Error("write to " + tmp + " failed");
    }
    std::filesystem::rename(tmp, path);
}

inline void persist_run(const RunRecord& rec, const std::filesystem::path& path)
{
    for (const auto& r : rec.rows)
        if (r.size() != rec.columns.size()) throw ValidationError("row width does not match columns");
    std::string out = std::string(kSchemaLine) + "\n# meta " + rec.meta.dump() + "\n";
    for (std::size_t i = 0; i < rec.columns.size(); ++i) out += (i ? "," : "") + rec.columns[i];
    out += "\n";
    for (const auto& r : rec.rows) {
        for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + format_number(r[i]);
        out += "\n";
    }
    write_atomically(path, out);
}

inline RunRecord load_run(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw Error("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw SchemaError(path.string() + ": empty file");
    if (line != kSchemaLine) {
        if (line.rfind("# mpemba-lab v", 0) == 0) throw SchemaError(path.string() + ": unsupported schema '" + line.substr(2) + "'");
        throw SchemaError(path.string() + ": not an mpemba-lab record");
    }
    RunRecord rec;
    if (!std::getline(is, line) || line.rfind("# meta ", 0) != 0) throw SchemaError(path.string() + ": missing meta line");
    try {
        rec.meta = json::parse(line.substr(7));
    } catch (const json::exception& e) {
        throw SchemaError(path.string() + ": bad meta json: " + e.what());
    }
    if (!std::getline(is, line) || line.empty()) throw SchemaError(path.string() + ": missing column header");
    std::stringstream hs(line);
    for (std::string c; std::getline(hs, c, ',');) rec.columns.push_back(c);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ls(line);
        for (std::string c; std::getline(ls, c, ',');) {
            char* end = nullptr;
            const double v = std::strtod(c.c_str(), &end);
            if (end == c.c_str() || *end != '\0') throw SchemaError(path.string() + ": bad number '" + c + "'");
            row.push_back(v);
        }
        if (row.size() != rec.columns.size()) throw SchemaError(path.string() + ": row width mismatch");
        rec.rows.push_back(std::move(row));
    }
    return rec;
}

inline RunRecord to_record(const DistanceTrajectory& t)
{
    RunRecord rec;
    rec.meta = t.meta;
    rec.meta["table"] = "trajectory";
    rec.columns = {"eps_t", "d_value"};
    if (!t.energy.empty()) rec.columns.push_back("energy_density");
    for (std::size_t i = 0; i < t.times.size(); ++i) {
        std::vector<double> r{t.times[i], t.d[i]};
        if (!t.energy.empty()) r.push_back(t.energy[i]);
        rec.rows.push_back(std::move(r));
    }
    return rec;
}

inline DistanceTrajectory trajectory_from_record(const RunRecord& rec)
{
    if (rec.columns.size() < 2 || rec.columns[0] != "eps_t" || rec.columns[1] != "d_value")
        throw SchemaError("record is not a distance trajectory");
    DistanceTrajectory t;
    t.meta = rec.meta;
    t.meta.erase("table");
    const bool has_e = rec.columns.size() > 2 && rec.columns[2] == "energy_density";
    for (const auto& r : rec.rows) {
        t.times.push_back(r[0]);
        t.d.push_back(r[1]);
        if (has_e) t.energy.push_back(r[2]);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Experiments

inline json trajectory_meta(const RunSpec& s, double beta, double mu, int ell)
{
    json m;
    m["engine"] = to_string(s.engine.kind);
    m["model"] = to_string(s.model.family);
    m["L"] = s.model.L;
    m["boundary"] = to_string(s.model.boundary);
    m["dissipator"] = to_string(s.dissipator.kind);
    m["beta"] = beta;
    m["mu"] = mu;
    const bool limit = s.engine.kind == EngineKind::gge_flow || s.dissipator.gge_limit;
    m["gge_limit"] = limit;
    m["epsilon"] = limit ? json(nullptr) : json(s.dissipator.epsilon);
    m["ell"] = ell;
    m["distance"] = to_string(s.experiment.distance);
    return m;
}

struct ExperimentResult {
    std::vector<std::pair<std::string, RunRecord>> files;  // relative path -> record
    json summary = json::object();
    std::string summary_line;
};

inline std::string beta_tag(double beta)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", beta);
    std::string s = buf;
    std::replace(s.begin(), s.end(), '-', 'm');
    return s;
}

inline json crossing_json(const CrossingResult& c)
{
    json j;
    j["exists"] = c.exists;
    j["t_mp"] = c.exists ? json(c.t_mp) : json(nullptr);
    j["bracket"] = c.exists ? json::array({c.lo, c.hi}) : json(nullptr);
    j["residual"] = c.residual;
    j["farther"] = c.farther;
    return j;
}

// Computes one distance trajectory per inverse temperature with the configured engine.
inline std::vector<DistanceTrajectory> temperature_trajectories(const RunSpec& s, int jobs, std::vector<double>* e_inf = nullptr)
{
    const auto& ex = s.experiment;
    const double mu = ex.mus.front();
    std::vector<DistanceTrajectory> out(ex.betas.size());
    if (s.engine.kind == EngineKind::gge_flow) {
        FlowControls fc;
        fc.ode = {s.numerics.rtol, s.numerics.atol};
        fc.sample_step = s.numerics.sample_step;
        SteadyControls sc;
        sc.tol = s.numerics.steady_tol;
        sc.horizon = s.numerics.steady_horizon;
        FermionEngine eng(s.model, fc, sc);
        eng.prepare(ex.ell);
        parallel_for(ex.betas.size(), jobs, [&](std::size_t i) {
            const auto run = eng.evolve(ex.betas[i], s.numerics.t_end);
            auto& t = out[i];
            t.times = run.times;
            t.d = eng.distances(run, ex.ell);
            t.energy = eng.energy(run);
            t.meta = trajectory_meta(s, ex.betas[i], mu, ex.ell);
        });
        if (e_inf) e_inf->assign(ex.betas.size(), eng.steady_energy());
    } else {
        ExactEngine eng(s);
        eng.prepare();
        parallel_for(ex.betas.size(), jobs, [&](std::size_t i) {
            out[i] = eng.trajectory(ex.betas[i], mu);
            out[i].meta = trajectory_meta(s, ex.betas[i], mu, ex.ell);
            if (!eng.gge_limit()) out[i].meta["steady_state_method"] = eng.steady()->method;
        });
        if (e_inf) {
            e_inf->resize(ex.betas.size());
            for (std::size_t i = 0; i < ex.betas.size(); ++i) (*e_inf)[i] = eng.steady_energy(ex.betas[i], mu);
        }
    }
    for (const auto& t : out) t.validate(ex.distance);
    return out;
}

// Sign change of (value - steady value) after t = 0.
inline std::optional<double> overshoot_time(const std::vector<double>& t, const std::vector<double>& e, double e_inf)
{
    for (std::size_t i = 1; i < e.size(); ++i) {
        const double a = e[i - 1] - e_inf, b = e[i] - e_inf;
        if (a * b < 0.0) return t[i - 1] - a * (t[i] - t[i - 1]) / (b - a);
    }
    return std::nullopt;
}

struct PairCrossing {
    std::size_t i, j;
    CrossingResult crossing;
    bool crossed_by_probe;  // ordering at the probe time is reversed w.r.t. t = 0
};

inline std::vector<PairCrossing> all_pairs(const std::vector<DistanceTrajectory>& trajs, double guard, double probe_time)
{
    std::vector<PairCrossing> out;
    for (std::size_t i = 0; i < trajs.size(); ++i)
        for (std::size_t j = i + 1; j < trajs.size(); ++j) {
            const auto c = detect_crossing(trajs[i], trajs[j], guard);
            const double d0 = trajs[i].d.front() - trajs[j].d.front();
            const double dp = interpolate(trajs[i].times, trajs[i].d, probe_time) - interpolate(trajs[j].times, trajs[j].d, probe_time);
            out.push_back({i, j, c, d0 * dp < 0.0});
        }
    return out;
}

inline ExperimentResult run_trajectory_experiment(const RunSpec& s, int jobs)
{
    ExperimentResult r;
    const auto& ex = s.experiment;
    std::vector<double> e_inf;
    const auto trajs = temperature_trajectories(s, jobs, &e_inf);
    json per = json::array();
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        r.files.emplace_back("trajectory_beta_" + beta_tag(ex.betas[i]) + ".csv", to_record(trajs[i]));
        json e;
        e["beta"] = ex.betas[i];
        e["steady_energy_density"] = e_inf[i];
        const auto ov = overshoot_time(trajs[i].times, trajs[i].energy, e_inf[i]);
        e["overshoot"] = ov.has_value();
        e["overshoot_time"] = ov ? json(*ov) : json(nullptr);
        per.push_back(e);
    }
    r.summary["trajectories"] = per;

    std::ostringstream line;
    if (ex.kind == ExperimentKind::crossing) {
        const auto c = detect_crossing(trajs[0], trajs[1], s.numerics.crossing_guard);
        r.summary["crossing"] = crossing_json(c);
        r.summary["crossing"]["betas"] = ex.betas;
        if (c.exists)
            line << "crossing found: beta=" << ex.betas[0] << " vs beta=" << ex.betas[1] << " t_mp=" << format_number(c.t_mp)
                 << " (farther at t=0: beta=" << ex.betas[c.farther == 1 ? 1 : 0] << ")";
        else
            line << "no crossing: beta=" << ex.betas[0] << " vs beta=" << ex.betas[1];
    } else if (ex.kind == ExperimentKind::scan_T) {
        const auto pairs = all_pairs(trajs, s.numerics.crossing_guard, ex.probe_time);
        RunRecord em2;
        em2.meta = trajectory_meta(s, 0.0, ex.mus.front(), ex.ell);
        em2.meta.erase("beta");
        em2.meta["table"] = "em2";
        em2.meta["probe_time"] = ex.probe_time;
        em2.columns = {"beta", "d_initial", "d_probe"};
        for (std::size_t i = 0; i < trajs.size(); ++i)
            em2.rows.push_back({ex.betas[i], trajs[i].d.front(), interpolate(trajs[i].times, trajs[i].d, ex.probe_time)});
        r.files.emplace_back("em2_table.csv", em2);
        RunRecord cm;
        cm.meta = em2.meta;
        cm.meta["table"] = "crossings";
        cm.columns = {"beta_a", "beta_b", "exists", "t_mp", "farther", "crossed_by_probe"};
        json pj = json::array();
        int n_cross = 0, n_probe = 0;
        for (const auto& p : pairs) {
            cm.rows.push_back({ex.betas[p.i], ex.betas[p.j], double(p.crossing.exists),
                               p.crossing.exists ? p.crossing.t_mp : std::numeric_limits<double>::quiet_NaN(),
                               double(p.crossing.farther), double(p.crossed_by_probe)});
            json e = crossing_json(p.crossing);
            e["betas"] = {ex.betas[p.i], ex.betas[p.j]};
            e["crossed_by_probe"] = p.crossed_by_probe;
            pj.push_back(e);
            n_cross += p.crossing.exists;
            n_probe += p.crossed_by_probe;
        }
        r.files.emplace_back("crossing_matrix.csv", cm);
        r.summary["pairs"] = pj;
        r.summary["probe_time"] = ex.probe_time;
        if (n_cross == 0) line << "no crossing (" << pairs.size() << " pairs)";
        else line << "crossing found in " << n_cross << " of " << pairs.size() << " pairs; " << n_probe << " reordered by eps*t=" << ex.probe_time;
    } else {
        line << trajs.size() << " trajectories written";
        for (const auto& e : per)
            if (e["overshoot"].get<bool>())
                line << "; beta=" << e["beta"].get<double>() << " overshoots at eps*t=" << format_number(e["overshoot_time"].get<double>());
    }
    r.summary_line = line.str();
    return r;
}

inline ExperimentResult run_scan_ell(const RunSpec& s, int jobs)
{
    ExperimentResult r;
    const auto& ex = s.experiment;
    FlowControls fc;
    fc.ode = {s.numerics.rtol, s.numerics.atol};
    fc.sample_step = s.numerics.sample_step;
    SteadyControls sc;
    sc.tol = s.numerics.steady_tol;
    sc.horizon = s.numerics.steady_horizon;
    FermionEngine eng(s.model, fc, sc);
    eng.prepare(*std::max_element(ex.ells.begin(), ex.ells.end()));
    std::array<FermionEngine::Run, 2> runs;
    parallel_for(2, jobs, [&](std::size_t i) { runs[i] = eng.evolve(ex.betas[i], s.numerics.t_end); });
    std::vector<CrossingResult> res(ex.ells.size());
    parallel_for(ex.ells.size(), jobs, [&](std::size_t k) {
        DistanceTrajectory a, b;
        a.times = runs[0].times;
        b.times = runs[1].times;
        a.d = eng.distances(runs[0], ex.ells[k]);
        b.d = eng.distances(runs[1], ex.ells[k]);
        res[k] = detect_crossing(a, b, s.numerics.crossing_guard);
    });
    RunRecord tab;
    tab.meta = trajectory_meta(s, ex.betas[0], ex.mus.front(), 0);
    tab.meta.erase("ell");
    tab.meta.erase("beta");
    tab.meta["betas"] = ex.betas;
    tab.meta["table"] = "t_mp";
    tab.columns = {"ell", "exists", "t_mp"};
    json rows = json::array();
    int found = 0;
    for (std::size_t k = 0; k < ex.ells.size(); ++k) {
        tab.rows.push_back({double(ex.ells[k]), double(res[k].exists),
                            res[k].exists ? res[k].t_mp : std::numeric_limits<double>::quiet_NaN()});
        json e = crossing_json(res[k]);
        e["ell"] = ex.ells[k];
        rows.push_back(e);
        found += res[k].exists;
    }
    r.files.emplace_back("t_mp_vs_ell.csv", tab);
    r.summary["t_mp"] = rows;
    std::ostringstream line;
    line << "crossing found for " << found << " of " << ex.ells.size() << " subsystem sizes";
    r.summary_line = line.str();
    return r;
}

inline ExperimentResult run_landscape(const RunSpec& s)
{
    ExperimentResult r;
    const auto& ex = s.experiment;
    const auto pd = projected_dissipator(s.model, s.lindblad(), s.engine.max_spectral_sites);
    pd.validate();
    const auto modes = slow_modes(pd, ex.slow_modes);
    const auto table = landscape(pd, modes, ex.betas, ex.mus);
    RunRecord rec;
    rec.meta = trajectory_meta(s, 0.0, 0.0, 0);
    for (const char* k : {"beta", "mu", "ell", "distance", "gge_limit"}) rec.meta.erase(k);
    rec.meta["epsilon"] = s.dissipator.epsilon;
    rec.meta["convention"] = to_string(s.dissipator.convention);
    rec.meta["table"] = "landscape";
    rec.columns = {"beta", "mu", "overlap", "d_trace", "d_frob", "d_norm"};
    for (const auto& p : table) rec.rows.push_back({p.beta, p.mu, p.overlap, p.d_trace, p.d_frob, p.d_norm});
    r.files.emplace_back("landscape.csv", rec);
    json spec = json::array();
    for (const auto& m : modes.modes) spec.push_back({m.eigenvalue.real(), m.eigenvalue.imag()});
    r.summary["slow_eigenvalues"] = spec;
    r.summary["zero_modes"] = modes.zero_modes.size();
    r.summary["degenerate_slowest"] = modes.degenerate;
    r.summary["symmetry"] = pd.basis.sectors.kind;
    r.summary["biorthogonality_error"] = biorthogonality_error(modes);
    json slices = json::array();
    std::ostringstream line;
    for (double mu : ex.mus) {
        std::vector<LandscapePoint> slice;
        for (const auto& p : table)
            if (p.mu == mu) slice.push_back(p);
        const auto a = analyze_slice(slice);
        json j;
        j["mu"] = mu;
        j["has_zero"] = a.has_zero;
        j["beta_zero"] = a.beta_zero;
        j["beta_zero_interp"] = a.has_zero ? json(a.beta_zero_interp) : json(nullptr);
        j["argmin_trace"] = a.argmin_trace;
        j["argmin_frob"] = a.argmin_frob;
        j["argmin_norm"] = a.argmin_norm;
        slices.push_back(j);
        if (mu == 0.0 || ex.mus.size() == 1)
            line << "mu=" << mu << ": overlap zero at beta=" << a.beta_zero << (a.has_zero ? "" : " (no sign change)")
                 << ", distance minima at beta=" << a.argmin_trace << "/" << a.argmin_frob << "/" << a.argmin_norm;
    }
    r.summary["slices"] = slices;
    r.summary_line = line.str();
    return r;
}

inline ExperimentResult run_experiment(const RunSpec& s, int jobs = 1)
{
    s.validate();
    switch (s.experiment.kind) {
    case ExperimentKind::scan_ell: return run_scan_ell(s, jobs);
    case ExperimentKind::landscape: return run_landscape(s);
    default: return run_trajectory_experiment(s, jobs);
    }
}

}  // namespace mpemba
