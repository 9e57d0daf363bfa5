#pragma once

// Weak-dissipation flow of quasiparticle occupations under the hop dissipator,
// in rescaled time eps*t.

#include <cmath>
#include <limits>
#include <vector>

#include "freefermion.hpp"
#include "ode.hpp"

namespace mpemba {

struct OccupationState {
    RVector n;

    static OccupationState from_mu(const RVector& mu)
    {
        OccupationState s{RVector(mu.size())};
        for (Eigen::Index k = 0; k < mu.size(); ++k) {
            if (std::isinf(mu(k))) s.n(k) = mu(k) > 0 ? 0.0 : 1.0;
            else s.n(k) = 1.0 / (1.0 + std::exp(mu(k)));
        }
        return s;
    }

    RVector mu() const
    {
        RVector m(n.size());
        const double inf = std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < n.size(); ++k) {
            if (n(k) <= 0.0) m(k) = inf;
            else if (n(k) >= 1.0) m(k) = -inf;
            else m(k) = std::log((1.0 - n(k)) / n(k));
        }
        return m;
    }

    void validate(double tol = 0.0) const
    {
        for (Eigen::Index k = 0; k < n.size(); ++k)
            if (!(n(k) >= -tol && n(k) <= 1.0 + tol)) throw NumericalError("occupation outside [0, 1]");
    }
};

// Entry (q, q') of each matrix is f_{q,q'} over grid indices.
struct ScatteringKernels {
    RMatrix f_s, f_c, f_a;
    int size() const { return static_cast<int>(f_s.rows()); }
};

inline ScatteringKernels scattering_kernels(const BogoliubovTable& t)
{
    const int L = t.size();
    ScatteringKernels k{RMatrix(L, L), RMatrix(L, L), RMatrix(L, L)};
    const auto& q = t.grid.q;
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < L; ++j) {
            const double u = t.u(i), v = t.v(i), up = t.u(j), vp = t.v(j);
            const double ci = std::cos(q[i]), cj = std::cos(q[j]);
            const double cross = u * v * up * vp;
            k.f_s(i, j) = u * u * up * up * (1 + cj) + v * v * vp * vp * (1 + ci) -
                          cross * (1 + cj + ci + std::cos(q[i] + q[j]));
            k.f_c(i, j) = vp * vp * u * u * (1 + cj) + up * up * v * v * (1 + ci) -
                          cross * (1 + ci + cj + std::cos(q[i] - q[j]));
            k.f_a(i, j) = vp * vp * u * u * (1 + ci) + up * up * v * v * (1 + cj) -
                          cross * (1 + ci + cj + std::cos(q[i] - q[j]));
        }
    return k;
}

inline OccupationState thermal_occupations(double beta, const BogoliubovTable& t)
{
    require(std::isfinite(beta), "beta must be finite", "initial.beta");
    return OccupationState::from_mu(beta * t.energy);
}

inline RVector occupation_rhs(const RVector& n, const ScatteringKernels& k)
{
    require(n.size() == k.size(), "occupations and kernels live on different grids");
    const RVector h = RVector::Ones(n.size()) - n;
    const RVector gain = k.f_s * n, loss = k.f_s.transpose() * h, create = k.f_c * h, annihilate = k.f_a * n;
    return (2.0 / n.size()) * (h.cwiseProduct(gain + create) - n.cwiseProduct(loss + annihilate));
}

inline RVector occupation_rhs(const OccupationState& s, const ScatteringKernels& k) { return occupation_rhs(s.n, k); }

inline RMatrix occupation_jacobian(const RVector& n, const ScatteringKernels& k)
{
    const Eigen::Index L = n.size();
    const RVector h = RVector::Ones(L) - n;
    const RVector gain = k.f_s * n, loss = k.f_s.transpose() * h, create = k.f_c * h, annihilate = k.f_a * n;
    RMatrix jac = h.asDiagonal() * (k.f_s - k.f_c);
    jac += n.asDiagonal() * (k.f_s.transpose() - k.f_a);
    jac.diagonal() -= gain + loss + create + annihilate;
    return (2.0 / L) * jac;
}

struct FlowControls {
    ode::Controls ode{1e-8, 1e-10};
    double sample_step = 0.05;
    double clamp_tol = 1e-12;
};

struct FlowTrajectory {
    std::vector<double> times;
    std::vector<OccupationState> states;
};

// Thrown when integration fails; carries the last accepted state.
class FlowFailure : public NumericalError {
public:
    FlowFailure(const std::string& what, double t, OccupationState last)
        : NumericalError(what + " at eps*t=" + std::to_string(t)), time(t), last_state(std::move(last)) {}
    double time;
    OccupationState last_state;
};

namespace detail {

inline ode::DormandPrince<RVector>::Guard occupation_guard(double tol)
{
    return [tol](RVector& n) {
        auto out = ode::GuardResult::keep;
        for (Eigen::Index k = 0; k < n.size(); ++k) {
            if (n(k) < 0.0 || n(k) > 1.0) {
                if (n(k) < -tol || n(k) > 1.0 + tol || !std::isfinite(n(k))) return ode::GuardResult::reject;
                n(k) = std::clamp(n(k), 0.0, 1.0);
                out = ode::GuardResult::modified;
            }
        }
        return out;
    };
}

inline std::vector<double> sample_grid(double t_end, double step)
{
    require(t_end > 0.0, "t_end must be positive", "numerics.t_end");
    require(step > 0.0, "sample step must be positive", "numerics.sample_step");
    const long n = std::lround(std::ceil(t_end / step - 1e-9));
    std::vector<double> t(n + 1);
    for (long i = 0; i <= n; ++i) t[i] = std::min(i * step, t_end);
    return t;
}

}  // namespace detail

inline FlowTrajectory evolve_occupations(const OccupationState& s0, const ScatteringKernels& k, double t_end,
                                         const FlowControls& c = {})
{
    require(s0.n.size() == k.size(), "initial state and kernels live on different grids");
    s0.validate();
    FlowTrajectory traj;
    ode::DormandPrince<RVector> solver([&k](double, const RVector& n) { return occupation_rhs(n, k); }, 0.0, s0.n,
                                       c.ode, detail::occupation_guard(c.clamp_tol));
    for (double t : detail::sample_grid(t_end, c.sample_step)) {
        try {
            solver.advance_to(t);
        } catch (const NumericalError& e) {
            throw FlowFailure(e.what(), solver.t(), OccupationState{solver.y()});
        }
        traj.times.push_back(t);
        traj.states.push_back(OccupationState{solver.y()});
    }
    return traj;
}

struct SteadyControls {
    double horizon = 5000.0;
    double tol = 1e-10;
    // Integration stops once the residual stays below this; Newton takes over.
    double handoff = 1e-6;
    int consecutive = 10;
    bool refine = true;
    ode::Controls ode{1e-8, 1e-10};
};

inline OccupationState steady_state(const ScatteringKernels& k, const OccupationState& guess,
                                    const SteadyControls& c = {})
{
    require(guess.n.size() == k.size(), "guess and kernels live on different grids");
    int streak = 0;
    auto residual = [&k](const RVector& n) { return occupation_rhs(n, k).cwiseAbs().maxCoeff(); };
    RVector n = guess.n;
    const double handoff = c.refine ? std::max(c.handoff, c.tol) : c.tol;
    if (residual(n) >= c.tol) {
        ode::DormandPrince<RVector> solver([&k](double, const RVector& y) { return occupation_rhs(y, k); }, 0.0, n,
                                           c.ode, detail::occupation_guard(1e-12));
        const bool finished = solver.advance_to(c.horizon, [&](double, const RVector& y) {
            streak = residual(y) < handoff ? streak + 1 : 0;
            return streak >= c.consecutive;
        });
        n = solver.y();
        if (finished && streak < c.consecutive)
            throw FlowFailure("steady state not reached within the horizon", solver.t(), OccupationState{n});
    }
    if (c.refine) {
        // Damped Newton polish; only accepted when it lowers the residual.
        double r = residual(n);
        for (int it = 0; it < 20 && r > 1e-15; ++it) {
            RVector step = occupation_jacobian(n, k).partialPivLu().solve(-occupation_rhs(n, k));
            bool improved = false;
            for (double damp = 1.0; damp > 1e-3; damp *= 0.5) {
                RVector trial = n + damp * step;
                if (trial.minCoeff() < 0.0 || trial.maxCoeff() > 1.0) continue;
                const double rt = residual(trial);
                if (rt < r) {
                    n = trial;
                    r = rt;
                    improved = true;
                    break;
                }
            }
            if (!improved) break;
        }
    }
    OccupationState out{n};
    out.validate();
    if (residual(n) >= c.tol) throw NumericalError("steady-state residual above tolerance");
    return out;
}

}  // namespace mpemba
