#pragma once

// Dissipator projected onto energy-eigenbasis-diagonal states: a classical
// Markov generator D_mn = eps sum_j |<m|L_j|n>|^2 - delta_mn eps sum_j <n|L_j^dag L_j|n>.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "exact.hpp"
#include "linalg.hpp"

namespace mpemba {

using SparseR = Eigen::SparseMatrix<double>;

namespace detail {

inline SparseR real_part_checked(const SparseC& a, const std::string& what)
{
    for (int k = 0; k < a.outerSize(); ++k)
        for (SparseC::InnerIterator it(a, k); it; ++it)
            if (std::abs(it.value().imag()) > 1e-14)
                throw ValidationError(what + " has complex entries; spectral analysis needs real operators");
    return a.real();
}

}  // namespace detail

// Energy eigenbasis built per block of the finest diagonal symmetry of H.
// Within a block, exact degeneracies keep whatever basis the eigensolver picks.
struct EnergyBasis {
    SymmetrySectors sectors;
    RVector energies;
    RMatrix vectors;              // column m is |m>; nonzero only on its sector's rows
    std::vector<int> sector_of;   // per eigenstate
    std::vector<std::vector<int>> columns;  // eigenstate indices per sector
    RVector magnetization;        // <m|S^z|m>
};

inline EnergyBasis energy_basis(const SparseR& h, int L)
{
    EnergyBasis b;
    const SparseC hc = h.cast<cplx>();
    b.sectors = diagonal_symmetry({&hc}, L);
    const Eigen::Index d = h.rows();
    b.energies.resize(d);
    b.vectors = RMatrix::Zero(d, d);
    b.sector_of.resize(d);
    const RMatrix hd(h);
    Eigen::Index col = 0;
    for (std::size_t s = 0; s < b.sectors.blocks.size(); ++s) {
        const auto& idx = b.sectors.blocks[s];
        const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
        RMatrix hb(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) hb(i, j) = hd(idx[i], idx[j]);
        auto es = linalg::eigh(hb);
        b.columns.emplace_back();
        for (Eigen::Index k = 0; k < n; ++k) {
            for (Eigen::Index i = 0; i < n; ++i) b.vectors(idx[i], col) = es.vectors(i, k);
            b.energies(col) = es.values(k);
            b.sector_of[col] = static_cast<int>(s);
            b.columns.back().push_back(static_cast<int>(col));
            ++col;
        }
    }
    const RVector sz = total_sz_diagonal(L);
    b.magnetization = (b.vectors.array().square().colwise() * sz.array()).colwise().sum().transpose();
    return b;
}

struct ProjectedDissipator {
    RMatrix D;
    EnergyBasis basis;
    double epsilon = 0.0;
    bool conserves_sz = false;  // [H, S^z] = 0, so mu-dependent GGEs are diagonal in the basis

    void validate(double colsum_tol = 1e-10, double offdiag_tol = 1e-12) const
    {
        const double scale = std::max(1.0, D.cwiseAbs().maxCoeff());
        if (D.colwise().sum().cwiseAbs().maxCoeff() > colsum_tol * scale) throw NumericalError("column sums of D do not vanish");
        for (Eigen::Index n = 0; n < D.cols(); ++n)
            for (Eigen::Index m = 0; m < D.rows(); ++m)
                if (m != n && D(m, n) < -offdiag_tol) throw NumericalError("negative off-diagonal rate in D");
    }
};

inline ProjectedDissipator projected_dissipator(const SparseC& h, const std::vector<SparseC>& jumps, double epsilon, int L,
                                                int max_sites = 14)
{
    if (L > max_sites)
        throw BudgetError("projected dissipator at L=" + std::to_string(L) + " exceeds budget of " + std::to_string(max_sites),
                          "model.L");
    require(epsilon >= 0.0, "epsilon must be nonnegative", "dissipator.epsilon");
    ProjectedDissipator p;
    p.epsilon = epsilon;
    const SparseR hr = detail::real_part_checked(h, "Hamiltonian");
    p.basis = energy_basis(hr, L);
    p.conserves_sz = p.basis.sectors.kind == "sz";
    const Eigen::Index d = h.rows();
    const auto& b = p.basis;
    RMatrix rates = RMatrix::Zero(d, d);
    for (const auto& lj : jumps) {
        const SparseR l = detail::real_part_checked(lj, "jump operator");
        const RMatrix t = l * b.vectors;  // L|n> in the computational basis
        for (std::size_t a = 0; a < b.sectors.blocks.size(); ++a) {
            const auto& rows = b.sectors.blocks[a];
            const auto& cols = b.columns[a];
            const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
            RMatrix va(n, n), ta(n, d);
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index k = 0; k < n; ++k) va(i, k) = b.vectors(rows[i], cols[k]);
                ta.row(i) = t.row(rows[i]);
            }
            if (ta.cwiseAbs().maxCoeff() == 0.0) continue;
            const RMatrix w = va.transpose() * ta;  // <m|L|n> for m in sector a
            for (Eigen::Index k = 0; k < n; ++k) rates.row(cols[k]) += w.row(k).array().square().matrix();
        }
    }
    rates *= epsilon;
    p.D = rates;
    p.D.diagonal() -= rates.colwise().sum().transpose();
    // Column sums are zero by construction; the diagonal of rates cancels itself.
    return p;
}

inline ProjectedDissipator projected_dissipator(const SpinChainSpec& model, const LindbladSpec& diss, int max_sites = 14)
{
    require(model.L == diss.L, "model and dissipator disagree on L");
    if (model.L > max_sites)
        throw BudgetError("projected dissipator at L=" + std::to_string(model.L) + " exceeds budget of " +
                          std::to_string(max_sites), "model.L");
    const DenseBudget budget{max_sites};
    return projected_dissipator(sparse_operator(hamiltonian(model), budget), sparse_jump_operators(diss, budget),
                                diss.epsilon, model.L, max_sites);
}

struct SlowModePair {
    cplx eigenvalue;
    CVector right, left;  // left^H right = 1; largest |right| entry real positive
};

struct SlowModes {
    std::vector<std::vector<int>> blocks;  // connected components of D
    std::vector<RVector> zero_modes;       // one stationary distribution per block, embedded
    std::vector<cplx> zero_eigenvalues;
    std::vector<SlowModePair> modes;       // sorted by decreasing real part
    bool degenerate = false;

    // Stationary distribution reached from populations p.
    RVector steady_for(const RVector& p) const
    {
        RVector out = RVector::Zero(p.size());
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            double w = 0.0;
            for (int i : blocks[b]) w += p(i);
            out += w * zero_modes[b];
        }
        return out;
    }
};

namespace detail {

inline std::vector<std::vector<int>> connected_blocks(const RMatrix& d, double tol = 1e-14)
{
    const Eigen::Index n = d.rows();
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i)
            if (i != j && std::abs(d(i, j)) > tol) parent[find(int(i))] = find(int(j));
    std::map<int, std::vector<int>> groups;
    for (Eigen::Index i = 0; i < n; ++i) groups[find(int(i))].push_back(int(i));
    std::vector<std::vector<int>> out;
    for (auto& [root, g] : groups) out.push_back(std::move(g));
    return out;
}

}  // namespace detail

inline SlowModes slow_modes(const ProjectedDissipator& p, int k)
{
    require(k >= 1, "need at least one slow mode");
    SlowModes out;
    out.blocks = detail::connected_blocks(p.D);
    const Eigen::Index d = p.D.rows();
    const double scale = std::max(1.0, p.D.cwiseAbs().maxCoeff());
    struct Candidate {
        cplx value;
        CVector right, left;
    };
    std::vector<Candidate> all;
    for (const auto& blk : out.blocks) {
        const Eigen::Index n = static_cast<Eigen::Index>(blk.size());
        RMatrix sub(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) sub(i, j) = p.D(blk[i], blk[j]);
        // Stationary vector: replace one balance equation by normalization.
        RMatrix a = sub;
        a.row(0).setOnes();
        RVector rhs = RVector::Zero(n);
        rhs(0) = 1.0;
        const RVector pi = a.partialPivLu().solve(rhs);
        RVector zero = RVector::Zero(d);
        for (Eigen::Index i = 0; i < n; ++i) zero(blk[i]) = pi(i);
        out.zero_modes.push_back(zero);
        if (n == 1) {
            out.zero_eigenvalues.push_back(sub(0, 0));
            continue;
        }
        const auto eg = linalg::eig(sub);
        Eigen::Index izero = 0;
        for (Eigen::Index i = 1; i < n; ++i)
            if (eg.values(i).real() > eg.values(izero).real()) izero = i;
        out.zero_eigenvalues.push_back(eg.values(izero));
        if (std::abs(eg.values(izero)) > 1e-10 * scale) throw NumericalError("block of D lacks a zero mode");
        std::vector<Eigen::Index> order;
        for (Eigen::Index i = 0; i < n; ++i)
            if (i != izero) order.push_back(i);
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index x, Eigen::Index y) { return eg.values(x).real() > eg.values(y).real(); });
        // The global top k is among each block's top k (plus one to detect degeneracy).
        if (order.size() > std::size_t(k) + 1) order.resize(k + 1);
        for (Eigen::Index i : order) {
            Candidate c{eg.values(i), CVector::Zero(d), CVector::Zero(d)};
            for (Eigen::Index r = 0; r < n; ++r) {
                c.right(blk[r]) = eg.right(r, i);
                c.left(blk[r]) = eg.left(r, i);
            }
            all.push_back(std::move(c));
        }
    }
    std::stable_sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) { return a.value.real() > b.value.real(); });
    const std::size_t keep = std::min<std::size_t>(k, all.size());
    for (std::size_t i = 0; i < keep; ++i) {
        SlowModePair m{all[i].value, all[i].right, all[i].left};
        Eigen::Index imax = 0;
        m.right.cwiseAbs().maxCoeff(&imax);
        const cplx phase = std::conj(m.right(imax)) / std::abs(m.right(imax));
        m.right *= phase;
        m.left *= phase;
        const cplx norm = m.left.dot(m.right);
        if (std::abs(norm) < 1e-300) throw NumericalError("left and right slow modes are orthogonal");
        m.left /= std::conj(norm);
        out.modes.push_back(std::move(m));
    }
    if (all.size() >= 2) {
        const cplx a = all[0].value, b = all[1].value;
        out.degenerate = std::abs(a - b) <= 1e-8 * std::max(std::abs(a), 1e-300);
    }
    return out;
}

// Largest |left_i^H right_j - delta_ij| over the retained pairs.
inline double biorthogonality_error(const SlowModes& s)
{
    double err = 0.0;
    for (std::size_t i = 0; i < s.modes.size(); ++i)
        for (std::size_t j = 0; j < s.modes.size(); ++j) {
            const cplx x = s.modes[i].left.dot(s.modes[j].right);
            err = std::max(err, std::abs(x - (i == j ? 1.0 : 0.0)));
        }
    return err;
}

inline double slow_overlap(const SlowModePair& m, const RVector& p)
{
    require(p.size() == m.right.size(), "population vector does not match D");
    return m.right.cwiseAbs().sum() * m.left.dot(p.cast<cplx>()).real();
}

// Populations of exp(-beta H - mu S^z)/Z in the energy basis.
inline RVector gge_populations(const ProjectedDissipator& p, double beta, double mu)
{
    if (mu != 0.0) require(p.conserves_sz, "chemical potential needs a magnetization-conserving Hamiltonian", "experiment.mus");
    RVector x = beta * p.basis.energies + mu * p.basis.magnetization;
    RVector w = (-(x.array() - x.minCoeff())).exp();
    return w / w.sum();
}

struct LandscapePoint {
    double beta, mu, overlap, d_trace, d_frob, d_norm;
};

inline std::vector<LandscapePoint> landscape(const ProjectedDissipator& p, const SlowModes& s,
                                             const std::vector<double>& betas, const std::vector<double>& mus)
{
    require(!s.modes.empty(), "landscape needs a slow mode");
    std::vector<LandscapePoint> out;
    for (double mu : mus)
        for (double beta : betas) {
            const RVector pop = gge_populations(p, beta, mu);
            const RVector inf = s.steady_for(pop);
            const RVector diff = pop - inf;
            const double dn = std::sqrt(diff.squaredNorm() / (pop.squaredNorm() + inf.squaredNorm()));
            out.push_back({beta, mu, slow_overlap(s.modes[0], pop), diff.cwiseAbs().sum(), diff.norm(), dn});
        }
    return out;
}

// Grid locations of the overlap zero and of the three distance minima along a beta slice.
struct SliceAnalysis {
    bool has_zero = false;
    double beta_zero = 0.0;         // grid point of smallest |overlap|
    double beta_zero_interp = 0.0;  // first sign change, linearly interpolated
    double argmin_trace = 0.0, argmin_frob = 0.0, argmin_norm = 0.0;
};

inline SliceAnalysis analyze_slice(const std::vector<LandscapePoint>& slice)
{
    require(slice.size() >= 2, "slice needs at least two points");
    SliceAnalysis a;
    std::size_t iz = 0, it = 0, iff = 0, in = 0;
    for (std::size_t i = 1; i < slice.size(); ++i) {
        if (std::abs(slice[i].overlap) < std::abs(slice[iz].overlap)) iz = i;
        if (slice[i].d_trace < slice[it].d_trace) it = i;
        if (slice[i].d_frob < slice[iff].d_frob) iff = i;
        if (slice[i].d_norm < slice[in].d_norm) in = i;
    }
    a.beta_zero = slice[iz].beta;
    a.argmin_trace = slice[it].beta;
    a.argmin_frob = slice[iff].beta;
    a.argmin_norm = slice[in].beta;
    for (std::size_t i = 1; i < slice.size(); ++i) {
        const double f0 = slice[i - 1].overlap, f1 = slice[i].overlap;
        if (f0 == 0.0 || f0 * f1 < 0.0) {
            a.has_zero = true;
            a.beta_zero_interp = f0 == 0.0 ? slice[i - 1].beta
                                           : slice[i - 1].beta - f0 * (slice[i].beta - slice[i - 1].beta) / (f1 - f0);
            break;
        }
    }
    return a;
}

}  // namespace mpemba
