#pragma once

// Bogoliubov quasiparticles of the integrable transverse-field Ising chain
// H = sum_j J sx_j sx_{j+1} + h_z sz_j with periodic boundaries.
//
// Jordan-Wigner: c_j = prod_{i<j}(-sz_i) s^-_j, n_j = (1+sz_j)/2. The even
// fermion-parity block lives on the antiperiodic grid (k+1/2), the odd block
// on the periodic grid k. Fourier modes are
//   c_q = e^{i pi/4} L^{-1/2} sum_j e^{-i q (j+1)} c_j,
// and quasiparticles d_q = u_q c_q + v_q c^dag_{-q}.

#include <cmath>
#include <numbers>
#include <vector>

#include "core.hpp"
#include "model.hpp"

namespace mpemba {

enum class Parity { even, odd };

inline std::string to_string(Parity p) { return p == Parity::even ? "even" : "odd"; }

struct MomentumGrid {
    int L = 0;
    Parity parity = Parity::even;
    std::vector<double> q;

    int size() const { return L; }
    // Index of the mode at -q (mod 2 pi).
    int partner(int k) const { return parity == Parity::even ? L - 1 - k : (L - k) % L; }
};

inline MomentumGrid momentum_grid(int L, Parity parity)
{
    require(L >= 2, "L must be at least 2", "model.L");
    MomentumGrid g{L, parity, std::vector<double>(L)};
    const double shift = parity == Parity::even ? 0.5 : 0.0;
    for (int k = 0; k < L; ++k) g.q[k] = 2.0 * std::numbers::pi * (k + shift) / L;
    return g;
}

struct BogoliubovTable {
    MomentumGrid grid;
    double J = 0.0, h_z = 0.0;
    RVector a, b, u, v, energy;

    int size() const { return grid.L; }

    void validate(double tol = 1e-12) const
    {
        for (int k = 0; k < size(); ++k) {
            if (std::abs(u(k) * u(k) + v(k) * v(k) - 1.0) > tol) throw NumericalError("u^2 + v^2 != 1");
            if (std::abs(energy(k) - std::hypot(a(k), b(k))) > tol * std::max(1.0, energy(k)))
                throw NumericalError("dispersion inconsistent with a, b");
            if (energy(k) < 0.0) throw NumericalError("negative mode energy");
        }
    }
};

inline BogoliubovTable bogoliubov(double J, double h_z, const MomentumGrid& grid, double gap_tol = 1e-10)
{
    const int L = grid.L;
    BogoliubovTable t{grid, J, h_z, RVector(L), RVector(L), RVector(L), RVector(L), RVector(L)};
    for (int k = 0; k < L; ++k) {
        const double q = grid.q[k];
        const double a = 2.0 * (J * std::cos(q) + h_z);
        const double b = -2.0 * J * std::sin(q);
        const double e2 = J * J + 2.0 * h_z * J * std::cos(q) + h_z * h_z;
        const double e = 2.0 * std::sqrt(std::max(e2, 0.0));
        if (e < gap_tol)
            throw GaplessModeError("gapless mode at q=" + std::to_string(q) + " (J=" + std::to_string(J) +
                                   ", h_z=" + std::to_string(h_z) + ")");
        // e + a without cancellation when a < 0.
        const double epa = a >= 0.0 ? e + a : b * b / (e - a);
        t.a(k) = a;
        t.b(k) = b;
        t.energy(k) = e;
        if (epa <= 0.0) {
            t.u(k) = 0.0;
            t.v(k) = 1.0;
        } else {
            t.u(k) = std::sqrt(epa / (2.0 * e));
            t.v(k) = b / std::sqrt(2.0 * e * epa);
        }
    }
    return t;
}

inline double energy_density(const RVector& n, const BogoliubovTable& table)
{
    require(n.size() == table.size(), "occupation vector does not match grid");
    return (table.energy.array() * (n.array() - 0.5)).sum() / table.size();
}

// Dense quasiparticle number operators n_q = d_q^dag d_q of one parity sector,
// acting on the full 2^L space. The sector's physical states are those with
// fermion parity matching the grid.
struct DenseQuasiparticles {
    BogoliubovTable table;
    std::vector<SparseC> occupation;
    RVector projector;  // diagonal of the parity projector onto the sector
};

inline SparseC jordan_wigner_annihilator(int L, int site)
{
    const std::size_t dim = std::size_t{1} << L;
    const int bit = L - 1 - site;
    std::vector<Eigen::Triplet<cplx>> trip;
    for (std::size_t s = 0; s < dim; ++s) {
        if (!((s >> bit) & 1)) continue;
        const int before = __builtin_popcountll(s >> (bit + 1));
        trip.emplace_back(static_cast<int>(s ^ (std::size_t{1} << bit)), static_cast<int>(s),
                          before % 2 ? -1.0 : 1.0);
    }
    SparseC c(dim, dim);
    c.setFromTriplets(trip.begin(), trip.end());
    return c;
}

inline DenseQuasiparticles dense_quasiparticles(const SpinChainSpec& spec, Parity parity,
                                                const DenseBudget& budget = {})
{
    require(spec.integrable() && spec.boundary == Boundary::periodic,
            "quasiparticles need the periodic integrable TFIM", "model");
    check_budget(spec.L, budget);
    const int L = spec.L;
    DenseQuasiparticles out{bogoliubov(spec.J, spec.h_z, momentum_grid(L, parity)), {}, {}};
    std::vector<SparseC> c;
    for (int j = 0; j < L; ++j) c.push_back(jordan_wigner_annihilator(L, j));
    const cplx pre = std::polar(1.0 / std::sqrt(double(L)), std::numbers::pi / 4);
    std::vector<SparseC> cq;
    for (int k = 0; k < L; ++k) {
        SparseC m(c[0].rows(), c[0].cols());
        for (int j = 0; j < L; ++j) m += (pre * std::polar(1.0, -out.table.grid.q[k] * (j + 1))) * c[j];
        cq.push_back(m);
    }
    for (int k = 0; k < L; ++k) {
        const int p = out.table.grid.partner(k);
        SparseC d = out.table.u(k) * cq[k] + out.table.v(k) * SparseC(cq[p].adjoint());
        SparseC n = SparseC(d.adjoint()) * d;
        n.prune(cplx(0.0), 1e-14);
        out.occupation.push_back(n);
    }
    RVector par = parity_diagonal(L);
    const double sign = parity == Parity::even ? 1.0 : -1.0;
    out.projector = (0.5 * (1.0 + sign * par.array())).matrix();
    return out;
}

}  // namespace mpemba
