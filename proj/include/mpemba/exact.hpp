#pragma once

// Dense small-chain ground truth for the Lindblad dynamics
//   d rho/dt = -i[H, rho] + eps sum_j (L_j rho L_j^dag - {L_j^dag L_j, rho}/2).

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "krylov.hpp"
#include "model.hpp"
#include "ode.hpp"

namespace mpemba {

using DensityMatrix = CMatrix;

struct DensityTolerances {
    double hermitian = 1e-10;
    double trace = 1e-10;
    double min_eigenvalue = -1e-8;
};

inline void validate_density(const CMatrix& rho, const DensityTolerances& tol = {}, bool check_positivity = true)
{
    if (rho.rows() != rho.cols()) throw NumericalError("density matrix is not square");
    const double herm = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
    if (herm > tol.hermitian) throw NumericalError("density matrix not Hermitian (deviation " + std::to_string(herm) + ")");
    const double tr = std::abs(rho.trace() - 1.0);
    if (tr > tol.trace) throw NumericalError("density matrix trace deviates from 1 by " + std::to_string(tr));
    if (check_positivity) {
        Eigen::SelfAdjointEigenSolver<CMatrix> es(rho, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        if (lo < tol.min_eigenvalue) throw NumericalError("density matrix has eigenvalue " + std::to_string(lo));
    }
}

inline double max_commutator(const CMatrix& a, const CMatrix& b) { return (a * b - b * a).cwiseAbs().maxCoeff(); }

struct GGEParams {
    std::vector<double> lambdas;
    std::vector<CMatrix> operators;

    void validate(double commute_tol = 1e-10) const
    {
        require(lambdas.size() == operators.size(), "one Lagrange multiplier per conserved operator");
        require(!operators.empty(), "GGE needs at least one operator");
        for (std::size_t i = 0; i < operators.size(); ++i)
            for (std::size_t j = i + 1; j < operators.size(); ++j) {
                const double scale = std::max(1.0, operators[i].cwiseAbs().maxCoeff() * operators[j].cwiseAbs().maxCoeff());
                if (max_commutator(operators[i], operators[j]) > commute_tol * scale)
                    throw ValidationError("GGE operators do not commute");
            }
    }
};

namespace detail {

// rho ∝ exp(-X) for Hermitian X, shifted so the largest weight is 1.
inline CMatrix exp_state(const CMatrix& x)
{
    Eigen::SelfAdjointEigenSolver<CMatrix> es(x);
    RVector w = (-(es.eigenvalues().array() - es.eigenvalues().minCoeff())).exp();
    w /= w.sum();
    return es.eigenvectors() * w.asDiagonal() * es.eigenvectors().adjoint();
}

}  // namespace detail

inline DensityMatrix gge_state(const GGEParams& p, double commute_tol = 1e-10)
{
    p.validate(commute_tol);
    CMatrix x = CMatrix::Zero(p.operators[0].rows(), p.operators[0].cols());
    for (std::size_t i = 0; i < p.operators.size(); ++i) {
        require(std::isfinite(p.lambdas[i]), "Lagrange multipliers must be finite");
        x += p.lambdas[i] * p.operators[i];
    }
    return detail::exp_state(0.5 * (x + x.adjoint()));
}

inline RMatrix susceptibility(const GGEParams& p)
{
    const CMatrix rho = gge_state(p);
    const std::size_t n = p.operators.size();
    RVector mean(n);
    for (std::size_t i = 0; i < n; ++i) mean(i) = (p.operators[i] * rho).trace().real();
    RMatrix chi(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double cij = 0.5 * ((p.operators[i] * p.operators[j] + p.operators[j] * p.operators[i]) * rho).trace().real();
            chi(i, j) = chi(j, i) = cij - mean(i) * mean(j);
        }
    Eigen::SelfAdjointEigenSolver<RMatrix> es(chi, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
        throw NumericalError("susceptibility matrix is singular");
    return chi;
}

class Lindbladian {
public:
    Lindbladian(SparseC h, std::vector<SparseC> jumps, double epsilon)
        : h_(std::move(h)), l_(std::move(jumps)), epsilon_(epsilon)
    {
        require(h_.rows() == h_.cols(), "Hamiltonian is not square");
        require(std::isfinite(epsilon_) && epsilon_ >= 0.0, "epsilon must be a finite nonnegative rate");
        k_ = SparseC(h_.rows(), h_.cols());
        for (const auto& l : l_) {
            require(l.rows() == h_.rows() && l.cols() == h_.cols(), "jump operator dimension mismatch");
            ld_.push_back(SparseC(l.adjoint()));
            k_ += ld_.back() * l;
        }
        k_.prune(cplx(0.0), 1e-15);
        heff_ = h_ - cplx(0.0, 0.5 * epsilon_) * k_;
    }

    static Lindbladian build(const SpinChainSpec& model, const LindbladSpec& diss, const DenseBudget& budget = {})
    {
        require(model.L == diss.L, "model and dissipator disagree on L");
        return Lindbladian(sparse_operator(mpemba::hamiltonian(model), budget), sparse_jump_operators(diss, budget), diss.epsilon);
    }

    // -i(Heff rho - rho Heff^dag) + eps sum L rho L^dag with Heff = H - i eps K/2.
    // Right products go through adjoints: sparse-times-dense is much faster.
    CMatrix apply(const CMatrix& rho) const
    {
        const cplx mi(0.0, -1.0);
        CMatrix rho_dag = rho.adjoint();
        CMatrix right = mi * (heff_ * rho_dag);
        if (epsilon_ != 0.0) {
            CMatrix lr_dag;
            for (const auto& l : l_) {
                lr_dag = (l * rho).adjoint();
                right.noalias() += epsilon_ * (l * lr_dag);
            }
        }
        CMatrix out = mi * (heff_ * rho);
        out += right.adjoint();
        return out;
    }

    CMatrix hamiltonian_part(const CMatrix& rho) const
    {
        const cplx mi(0.0, -1.0);
        return mi * (h_ * rho - rho * h_);
    }

    // Unit-rate dissipator.
    CMatrix dissipator(const CMatrix& rho) const
    {
        CMatrix out = -0.5 * (k_ * rho + rho * k_);
        for (std::size_t j = 0; j < l_.size(); ++j) {
            CMatrix t = l_[j] * rho;
            out += t * ld_[j];
        }
        return out;
    }

    // Heisenberg-picture unit-rate dissipator: sum_j L^dag X L - {K, X}/2.
    CMatrix dissipator_adjoint(const CMatrix& x) const
    {
        CMatrix out = -0.5 * (k_ * x + x * k_);
        for (std::size_t j = 0; j < l_.size(); ++j) {
            CMatrix t = ld_[j] * x;
            out += t * l_[j];
        }
        return out;
    }

    const SparseC& hamiltonian() const { return h_; }
    const std::vector<SparseC>& jumps() const { return l_; }
    const SparseC& decay() const { return k_; }
    double epsilon() const { return epsilon_; }
    Eigen::Index dim() const { return h_.rows(); }

private:
    SparseC h_;
    std::vector<SparseC> l_, ld_;
    SparseC heff_;
    SparseC k_;
    double epsilon_;
};

inline CMatrix liouvillian_apply(const CMatrix& h, const std::vector<CMatrix>& jumps, double epsilon, const CMatrix& rho)
{
    require(h.rows() == rho.rows() && h.cols() == rho.cols() && rho.rows() == rho.cols(), "dimension mismatch");
    const cplx mi(0.0, -1.0);
    CMatrix out = mi * (h * rho - rho * h);
    for (const auto& l : jumps) {
        require(l.rows() == rho.rows() && l.cols() == rho.cols(), "jump operator dimension mismatch");
        const CMatrix ll = l.adjoint() * l;
        out += epsilon * (l * rho * l.adjoint() - 0.5 * (ll * rho + rho * ll));
    }
    return out;
}

// Blocks of a diagonal symmetry operator (magnetization or fermion parity).
struct SymmetrySectors {
    std::string kind = "none";
    std::vector<std::vector<int>> blocks;
    std::vector<double> labels;

    RVector projector(std::size_t s, Eigen::Index dim) const
    {
        RVector p = RVector::Zero(dim);
        for (int i : blocks[s]) p(i) = 1.0;
        return p;
    }

    static SymmetrySectors trivial(Eigen::Index dim)
    {
        SymmetrySectors out;
        out.blocks.emplace_back(dim);
        for (Eigen::Index i = 0; i < dim; ++i) out.blocks[0][i] = static_cast<int>(i);
        out.labels.push_back(0.0);
        return out;
    }

    static SymmetrySectors from_diagonal(const std::string& kind, const RVector& q)
    {
        SymmetrySectors out;
        out.kind = kind;
        std::map<long, std::vector<int>> by;
        for (Eigen::Index i = 0; i < q.size(); ++i) by[std::lround(2.0 * q(i))].push_back(static_cast<int>(i));
        for (auto& [label, idx] : by) {
            out.labels.push_back(0.5 * label);
            out.blocks.push_back(std::move(idx));
        }
        return out;
    }
};

inline bool commutes_with_diagonal(const SparseC& a, const RVector& q, double tol = 1e-13)
{
    for (int k = 0; k < a.outerSize(); ++k)
        for (SparseC::InnerIterator it(a, k); it; ++it)
            if (std::abs(it.value()) > tol && q(it.row()) != q(it.col())) return false;
    return true;
}

// Finest of {total S^z, fermion parity} that commutes with every listed operator.
inline SymmetrySectors diagonal_symmetry(const std::vector<const SparseC*>& ops, int L)
{
    const RVector sz = total_sz_diagonal(L), par = parity_diagonal(L);
    auto all = [&](const RVector& q) {
        return std::all_of(ops.begin(), ops.end(), [&](const SparseC* a) { return commutes_with_diagonal(*a, q); });
    };
    if (all(sz)) return SymmetrySectors::from_diagonal("sz", sz);
    if (all(par)) return SymmetrySectors::from_diagonal("parity", par);
    return SymmetrySectors::trivial(sz.size());
}

inline SymmetrySectors strong_symmetry_sectors(const Lindbladian& lind, int L)
{
    std::vector<const SparseC*> ops{&lind.hamiltonian()};
    if (lind.epsilon() != 0.0)
        for (const auto& l : lind.jumps()) ops.push_back(&l);
    return diagonal_symmetry(ops, L);
}

struct SteadyStateControls {
    double residual_tol = 1e-9;
    krylov::GmresControls gmres{80, 20, 1e-13};
    double fallback_horizon = 5000.0;  // physical time
    double fallback_check = 5.0;
    krylov::ExpControls exp;
};

// One steady state per strong-symmetry sector. The steady state reached from
// rho0 is the mixture weighted by the sector populations of rho0.
struct SteadyStates {
    SymmetrySectors sectors;
    std::vector<CMatrix> per_sector;
    std::string method;
    double residual = 0.0;

    CMatrix for_initial(const CMatrix& rho0) const
    {
        CMatrix out = CMatrix::Zero(rho0.rows(), rho0.cols());
        for (std::size_t s = 0; s < per_sector.size(); ++s) {
            double w = 0.0;
            for (int i : sectors.blocks[s]) w += rho0(i, i).real();
            if (w != 0.0) out += w * per_sector[s];
        }
        return out;
    }
};

namespace detail {

// Secular approximation of the bordered generator in the energy eigenbasis:
// exact on populations, diagonal on coherences.
class SecularPreconditioner {
public:
    SecularPreconditioner(const Lindbladian& lind, const SymmetrySectors& sec)
    {
        const Eigen::Index d = lind.dim();
        const CMatrix h(lind.hamiltonian());
        v_ = CMatrix::Zero(d, d);
        RVector e(d);
        Eigen::Index col = 0;
        std::vector<int> sector_of(d);
        for (std::size_t s = 0; s < sec.blocks.size(); ++s) {
            const auto& idx = sec.blocks[s];
            const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
            CMatrix hb(n, n);
            for (Eigen::Index a = 0; a < n; ++a)
                for (Eigen::Index b = 0; b < n; ++b) hb(a, b) = h(idx[a], idx[b]);
            Eigen::SelfAdjointEigenSolver<CMatrix> es(hb);
            for (Eigen::Index k = 0; k < n; ++k) {
                for (Eigen::Index a = 0; a < n; ++a) v_(idx[a], col) = es.eigenvectors()(a, k);
                e(col) = es.eigenvalues()(k);
                sector_of[col] = static_cast<int>(s);
                ++col;
            }
        }
        const double eps = lind.epsilon();
        RMatrix rates = RMatrix::Zero(d, d);
        CMatrix diag_l = CMatrix::Zero(d, lind.jumps().size());
        for (std::size_t j = 0; j < lind.jumps().size(); ++j) {
            const CMatrix lt = v_.adjoint() * (lind.jumps()[j] * v_);
            rates += lt.cwiseAbs2();
            diag_l.col(j) = lt.diagonal();
        }
        const RVector kappa = rates.colwise().sum().transpose();
        RMatrix pop = eps * rates;
        pop.diagonal() -= eps * kappa;
        for (Eigen::Index n = 0; n < d; ++n)
            for (Eigen::Index m = 0; m < d; ++m)
                if (sector_of[m] == sector_of[n]) pop(m, n) += 1.0 / sec.blocks[sector_of[m]].size();
        pop_lu_ = Eigen::PartialPivLU<RMatrix>(pop);
        const CMatrix overlap = diag_l * diag_l.adjoint();
        denom_.resize(d, d);
        const cplx i(0.0, 1.0);
        for (Eigen::Index n = 0; n < d; ++n)
            for (Eigen::Index m = 0; m < d; ++m)
                denom_(m, n) = -i * (e(m) - e(n)) + eps * (overlap(m, n) - 0.5 * (kappa(m) + kappa(n)));
    }

    CMatrix operator()(const CMatrix& r) const
    {
        CMatrix y = v_.adjoint() * r * v_;
        const RVector pops = pop_lu_.solve(RVector(y.diagonal().real()));
        for (Eigen::Index n = 0; n < y.cols(); ++n)
            for (Eigen::Index m = 0; m < y.rows(); ++m) {
                if (m == n) y(m, n) = pops(m);
                else y(m, n) = std::abs(denom_(m, n)) > 1e-14 ? y(m, n) / denom_(m, n) : cplx(0.0);
            }
        return v_ * y * v_.adjoint();
    }

private:
    CMatrix v_;
    CMatrix denom_;
    Eigen::PartialPivLU<RMatrix> pop_lu_;
};

inline CMatrix hermitian_normalized(const CMatrix& x)
{
    CMatrix h = 0.5 * (x + x.adjoint());
    return h / h.trace().real();
}

}  // namespace detail

inline double steady_residual(const Lindbladian& lind, const CMatrix& rho) { return lind.apply(rho).cwiseAbs().maxCoeff(); }

inline SteadyStates steady_states(const Lindbladian& lind, int L, const SteadyStateControls& c = {})
{
    SteadyStates out;
    out.sectors = strong_symmetry_sectors(lind, L);
    const Eigen::Index d = lind.dim();
    std::vector<RVector> proj;
    for (std::size_t s = 0; s < out.sectors.blocks.size(); ++s) proj.push_back(out.sectors.projector(s, d));

    bool gmres_ok = lind.epsilon() > 0.0;
    if (gmres_ok) {
        const detail::SecularPreconditioner prec(lind, out.sectors);
        auto bordered = [&](const CMatrix& x) {
            CMatrix y = lind.apply(x);
            for (std::size_t s = 0; s < proj.size(); ++s) {
                const cplx tr = (proj[s].cast<cplx>().array() * x.diagonal().array()).sum();
                y.diagonal() += (tr / double(out.sectors.blocks[s].size())) * proj[s].cast<cplx>();
            }
            return y;
        };
        for (std::size_t s = 0; s < proj.size() && gmres_ok; ++s) {
            CMatrix b = CMatrix::Zero(d, d);
            b.diagonal() = proj[s].cast<cplx>() / double(out.sectors.blocks[s].size());
            auto res = krylov::gmres(bordered, [&](const CMatrix& r) { return prec(r); }, b, b, c.gmres);
            CMatrix rho = detail::hermitian_normalized(res.x);
            if (!res.converged || steady_residual(lind, rho) > c.residual_tol) gmres_ok = false;
            else out.per_sector.push_back(rho);
        }
        if (gmres_ok) out.method = "bordered-gmres";
    }
    if (!gmres_ok) {
        // Fallback: propagate each sector's maximally mixed state until stationary.
        out.per_sector.clear();
        krylov::ArnoldiExp prop([&lind](const CMatrix& x) { return lind.apply(x); }, c.exp);
        for (std::size_t s = 0; s < proj.size(); ++s) {
            CMatrix rho = CMatrix::Zero(d, d);
            rho.diagonal() = proj[s].cast<cplx>() / double(out.sectors.blocks[s].size());
            double t = 0.0;
            while (steady_residual(lind, rho) > c.residual_tol) {
                if (t >= c.fallback_horizon)
                    throw NumericalError("steady state not reached by propagation within t=" + std::to_string(c.fallback_horizon));
                prop.apply(rho, c.fallback_check);
                rho = detail::hermitian_normalized(rho);
                t += c.fallback_check;
            }
            out.per_sector.push_back(rho);
        }
        out.method = "krylov-propagation";
    }
    out.residual = 0.0;
    for (const auto& rho : out.per_sector) out.residual = std::max(out.residual, steady_residual(lind, rho));
    return out;
}

enum class PropagationMethod { rk45, krylov };

inline std::string to_string(PropagationMethod m) { return m == PropagationMethod::rk45 ? "rk45" : "krylov"; }

struct PropagationControls {
    PropagationMethod method = PropagationMethod::rk45;
    ode::Controls ode{1e-10, 1e-12};
    krylov::ExpControls krylov;
    bool validate = true;
    bool check_positivity = true;
    DensityTolerances tolerances;
};

using DensityObserver = std::function<void(double, const CMatrix&)>;

// Visits rho(t) at each requested physical time (nondecreasing, starting >= 0).
inline void propagate(const CMatrix& rho0, const Lindbladian& lind, const std::vector<double>& times,
                      const PropagationControls& c, const DensityObserver& observe)
{
    require(rho0.rows() == lind.dim() && rho0.cols() == lind.dim(), "initial state dimension mismatch");
    for (std::size_t i = 0; i < times.size(); ++i)
        require(times[i] >= 0.0 && (i == 0 || times[i] >= times[i - 1]), "sample times must be nondecreasing");
    auto check = [&](double t, const CMatrix& rho) {
        if (!c.validate) return;
        try {
            validate_density(rho, c.tolerances, c.check_positivity);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string("propagation invariant violated at t=") + std::to_string(t) + ": " + e.what());
        }
    };
    if (c.method == PropagationMethod::rk45) {
        ode::DormandPrince<CMatrix> solver([&lind](double, const CMatrix& x) { return lind.apply(x); }, 0.0, rho0, c.ode);
        for (double t : times) {
            solver.advance_to(t);
            check(t, solver.y());
            observe(t, solver.y());
        }
    } else {
        krylov::ArnoldiExp prop([&lind](const CMatrix& x) { return lind.apply(x); }, c.krylov);
        prop.sweep(rho0, times, [&](std::size_t i, const CMatrix& rho) {
            check(times[i], rho);
            observe(times[i], rho);
        });
    }
}

inline std::vector<CMatrix> propagate(const CMatrix& rho0, const Lindbladian& lind, const std::vector<double>& times,
                                      const PropagationControls& c = {})
{
    std::vector<CMatrix> out;
    propagate(rho0, lind, times, c, [&out](double, const CMatrix& r) { out.push_back(r); });
    return out;
}

inline int centered_block(int L, int ell) { return (L - ell) / 2; }

// Marginal on the contiguous sites [first, first + ell).
inline CMatrix partial_trace(const CMatrix& rho, int L, int first, int ell)
{
    require(ell >= 1 && first >= 0 && first + ell <= L, "subsystem block outside chain", "experiment.ell");
    require(rho.rows() == (Eigen::Index{1} << L), "state does not match chain length");
    const Eigen::Index left = Eigen::Index{1} << first, a = Eigen::Index{1} << ell,
                       right = Eigen::Index{1} << (L - first - ell);
    CMatrix out = CMatrix::Zero(a, a);
    for (Eigen::Index l = 0; l < left; ++l)
        for (Eigen::Index i = 0; i < a; ++i)
            for (Eigen::Index j = 0; j < a; ++j) {
                const Eigen::Index ri = (l * a + i) * right, cj = (l * a + j) * right;
                cplx acc = 0.0;
                for (Eigen::Index r = 0; r < right; ++r) acc += rho(ri + r, cj + r);
                out(i, j) += acc;
            }
    return out;
}

enum class DistanceKind { trace, frobenius, normalized };

inline std::string to_string(DistanceKind k)
{
    switch (k) {
    case DistanceKind::trace: return "trace";
    case DistanceKind::frobenius: return "frobenius";
    default: return "normalized";
    }
}

inline double hs_inner(const CMatrix& a, const CMatrix& b) { return krylov::dot(a, b).real(); }

inline double distance(const CMatrix& a, const CMatrix& b, DistanceKind kind)
{
    require(a.rows() == b.rows() && a.cols() == b.cols(), "distance between states of different size");
    const CMatrix diff = a - b;
    switch (kind) {
    case DistanceKind::trace: {
        Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (diff + diff.adjoint()), Eigen::EigenvaluesOnly);
        return es.eigenvalues().cwiseAbs().sum();
    }
    case DistanceKind::frobenius: return diff.norm();
    default: {
        const double den = hs_inner(a, a) + hs_inner(b, b);
        return std::min(1.0, std::sqrt(std::max(0.0, hs_inner(diff, diff)) / den));
    }
    }
}

// GGE manifold of a commuting charge set in their common eigenbasis. All
// traces reduce to sums over eigenstate weights.
class GgeManifold {
public:
    GgeManifold(const CMatrix& h, std::vector<CMatrix> charges, const Lindbladian& lind, int L,
                double commute_tol = 1e-10)
        : L_(L), charges_(std::move(charges))
    {
        require(!charges_.empty(), "GGE needs at least one charge");
        for (const auto& c : charges_) {
            const double scale = std::max(1.0, c.cwiseAbs().maxCoeff() * h.cwiseAbs().maxCoeff());
            if (max_commutator(h, c) > commute_tol * scale) throw ValidationError("charge does not commute with H");
        }
        GGEParams{std::vector<double>(charges_.size(), 0.0), charges_}.validate(commute_tol);
        // Generic weights split every degeneracy the charges can resolve.
        CMatrix mix = CMatrix::Zero(h.rows(), h.cols());
        for (std::size_t i = 0; i < charges_.size(); ++i) mix += (1.0 + 0.6180339887 * i + 0.1414213562 * i * i) * charges_[i];
        Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (mix + mix.adjoint()));
        v_ = es.eigenvectors();
        const Eigen::Index d = h.rows();
        values_.resize(d, charges_.size());
        drift_.resize(d, charges_.size());
        for (std::size_t i = 0; i < charges_.size(); ++i) {
            const CMatrix ct = v_.adjoint() * charges_[i] * v_;
            const double off = (ct - CMatrix(ct.diagonal().asDiagonal())).cwiseAbs().maxCoeff();
            if (off > 1e-8 * std::max(1.0, ct.cwiseAbs().maxCoeff()))
                throw ValidationError("charges do not share an eigenbasis");
            values_.col(i) = ct.diagonal().real();
            drift_.col(i) = (v_.adjoint() * lind.dissipator_adjoint(charges_[i]) * v_).diagonal().real();
        }
        energy_ = (v_.adjoint() * h * v_).diagonal().real();
    }

    std::size_t size() const { return charges_.size(); }

    RVector weights(const RVector& lambda) const
    {
        require(lambda.size() == static_cast<Eigen::Index>(size()), "wrong number of Lagrange multipliers");
        RVector x = values_ * lambda;
        RVector p = (-(x.array() - x.minCoeff())).exp();
        return p / p.sum();
    }

    CMatrix state(const RVector& lambda) const { return v_ * weights(lambda).asDiagonal() * v_.adjoint(); }
    RVector expectations(const RVector& lambda) const { return values_.transpose() * weights(lambda); }
    // Tr[C_i D rho_lambda] at unit rate.
    RVector drift(const RVector& lambda) const { return drift_.transpose() * weights(lambda); }
    double energy(const RVector& lambda) const { return energy_.dot(weights(lambda)); }

    RMatrix susceptibility(const RVector& lambda) const
    {
        const RVector p = weights(lambda);
        const RMatrix centred = values_.rowwise() - (values_.transpose() * p).transpose();
        RMatrix chi = centred.transpose() * p.asDiagonal() * centred;
        Eigen::SelfAdjointEigenSolver<RMatrix> es(chi, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
            throw NumericalError("susceptibility matrix is singular");
        return chi;
    }

    // d lambda / d(eps t) = -chi^{-1} Tr[C D rho_lambda].
    RVector velocity(const RVector& lambda) const { return -susceptibility(lambda).ldlt().solve(drift(lambda)); }

    // d drift / d lambda = -Cov(drift operator, charges).
    RMatrix drift_jacobian(const RVector& lambda) const
    {
        const RVector p = weights(lambda);
        const RMatrix cv = values_.rowwise() - (values_.transpose() * p).transpose();
        return -(drift_.transpose() * p.asDiagonal() * cv);
    }

    CMatrix reduced_state(const RVector& lambda, int first, int ell) const
    {
        const auto key = std::make_pair(first, ell);
        auto it = rdm_cache_.find(key);
        if (it == rdm_cache_.end()) {
            std::vector<CMatrix> parts;
            for (Eigen::Index s = 0; s < v_.cols(); ++s)
                parts.push_back(partial_trace(v_.col(s) * v_.col(s).adjoint(), L_, first, ell));
            it = rdm_cache_.emplace(key, std::move(parts)).first;
        }
        const RVector p = weights(lambda);
        CMatrix out = CMatrix::Zero(Eigen::Index{1} << ell, Eigen::Index{1} << ell);
        for (Eigen::Index s = 0; s < p.size(); ++s)
            if (p(s) > 0.0) out += p(s) * it->second[s];
        return out;
    }

    const CMatrix& eigenvectors() const { return v_; }
    int sites() const { return L_; }

private:
    int L_;
    std::vector<CMatrix> charges_;
    CMatrix v_;
    RMatrix values_, drift_;
    RVector energy_;
    mutable std::map<std::pair<int, int>, std::vector<CMatrix>> rdm_cache_;
};

struct LagrangeTrajectory {
    std::vector<double> times;  // eps t
    std::vector<RVector> lambdas;
};

inline LagrangeTrajectory lagrange_flow(const GgeManifold& m, const RVector& lambda0, double t_end, double sample_step,
                                        const ode::Controls& c = {1e-9, 1e-11})
{
    LagrangeTrajectory out;
    ode::DormandPrince<RVector> solver([&m](double, const RVector& l) { return m.velocity(l); }, 0.0, lambda0, c);
    std::vector<double> grid;
    const long n = std::lround(std::ceil(t_end / sample_step - 1e-9));
    for (long i = 0; i <= n; ++i) grid.push_back(std::min(i * sample_step, t_end));
    for (double t : grid) {
        try {
            solver.advance_to(t);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " (Lagrange flow stopped at eps*t=" + std::to_string(solver.t()) + ")");
        }
        out.times.push_back(t);
        out.lambdas.push_back(solver.y());
    }
    return out;
}

// Fixed point of the Lagrange flow: integrate, then Newton on the drift.
inline RVector lagrange_fixed_point(const GgeManifold& m, const RVector& guess, double tol = 1e-12)
{
    ode::DormandPrince<RVector> solver([&m](double, const RVector& l) { return m.velocity(l); }, 0.0, guess, {1e-9, 1e-11});
    RVector lam = guess;
    for (double t = 10.0; t <= 2000.0; t *= 2.0) {
        solver.advance_to(t);
        lam = solver.y();
        if (m.drift(lam).cwiseAbs().maxCoeff() < 1e-6) break;
    }
    for (int it = 0; it < 50 && m.drift(lam).cwiseAbs().maxCoeff() > tol; ++it)
        lam -= m.drift_jacobian(lam).partialPivLu().solve(m.drift(lam));
    if (!(m.drift(lam).cwiseAbs().maxCoeff() <= 1e-9)) throw NumericalError("Lagrange flow fixed point not found");
    return lam;
}

}  // namespace mpemba
