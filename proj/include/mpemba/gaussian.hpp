#pragma once

// Majorana correlation matrices of translation-invariant fermionic Gaussian
// states and the distances built from them.
//
// Majoranas per site i: A_i = i(c_i - c_i^dag), B_i = c_i + c_i^dag, ordered
// (A_1, B_1, A_2, B_2, ...). Gamma_xy = <a_x a_y> - delta_xy is purely
// imaginary and antisymmetric, hence Hermitian with spectrum in [-1, 1].

#include <cmath>
#include <vector>

#include "gge_flow.hpp"

namespace mpemba {

struct CorrelationMatrix {
    int ell = 0;
    CMatrix gamma;

    void validate(double antisym_tol = 1e-10, double spectral_tol = 1e-9) const
    {
        if ((gamma + gamma.transpose()).cwiseAbs().maxCoeff() > antisym_tol)
            throw NumericalError("correlation matrix is not antisymmetric");
        Eigen::SelfAdjointEigenSolver<CMatrix> es(gamma, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().cwiseAbs().maxCoeff() > 1.0 + spectral_tol)
            throw NumericalError("correlation spectrum outside [-1, 1]");
    }
};

// Precomputes the Fourier weights once per table so that each correlation
// matrix is a couple of small matrix-vector products.
class CorrelationBuilder {
public:
    CorrelationBuilder(const BogoliubovTable& t, int ell_max) : L_(t.size()), ell_max_(ell_max)
    {
        require(ell_max >= 1 && ell_max <= L_, "subsystem size out of range", "experiment.ell");
        const int nm = 2 * ell_max - 1;
        up_.resize(nm, L_);
        lo_.resize(nm, L_);
        for (int mi = 0; mi < nm; ++mi) {
            const int m = mi - (ell_max - 1);
            for (int k = 0; k < L_; ++k) {
                const double q = t.grid.q[k];
                const double s = 2.0 * t.u(k) * t.v(k) * std::sin(q * m);
                const double c = (t.u(k) * t.u(k) - t.v(k) * t.v(k)) * std::cos(q * m);
                up_(mi, k) = (s + c) / L_;
                lo_(mi, k) = (s - c) / L_;
            }
        }
    }

    CorrelationMatrix build(const RVector& n, int ell) const
    {
        require(ell >= 1 && ell <= ell_max_, "subsystem size out of range", "experiment.ell");
        require(n.size() == L_, "occupations do not match grid");
        const RVector tanh_half = RVector::Ones(L_) - 2.0 * n;  // tanh(mu/2)
        const RVector up = up_ * tanh_half, lo = lo_ * tanh_half;
        CorrelationMatrix g{ell, CMatrix::Zero(2 * ell, 2 * ell)};
        const cplx i(0.0, 1.0);
        for (int r = 0; r < ell; ++r)
            for (int c = 0; c < ell; ++c) {
                const int mi = r - c + ell_max_ - 1;
                g.gamma(2 * r, 2 * c + 1) = i * up(mi);
                g.gamma(2 * r + 1, 2 * c) = i * lo(mi);
            }
        return g;
    }

    int ell_max() const { return ell_max_; }

private:
    int L_;
    int ell_max_;
    RMatrix up_, lo_;
};

inline CorrelationMatrix correlation_matrix(const OccupationState& s, const BogoliubovTable& t, int ell)
{
    return CorrelationBuilder(t, ell).build(s.n, ell);
}

// Tr[rho_A rho'_A] = sqrt|det((1 + G G')/2)| via pivoted LU in log space.
inline double trace_product(const CorrelationMatrix& a, const CorrelationMatrix& b)
{
    require(a.ell == b.ell && a.gamma.rows() == b.gamma.rows(), "correlation matrices of different size");
    const Eigen::Index n = a.gamma.rows();
    CMatrix m = 0.5 * (CMatrix::Identity(n, n) + a.gamma * b.gamma);
    Eigen::PartialPivLU<CMatrix> lu(m);
    const CMatrix& packed = lu.matrixLU();
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = std::abs(packed(i, i));
        if (d < 1e-14) return 0.0;
        log_det += std::log(d);
    }
    return std::exp(0.5 * log_det);
}

inline double purity(const CorrelationMatrix& g) { return trace_product(g, g); }

inline double normalized_frobenius_gaussian(const CorrelationMatrix& a, const CorrelationMatrix& b)
{
    const double pa = purity(a), pb = purity(b), x = trace_product(a, b);
    const double num = std::max(0.0, pa + pb - 2.0 * x);
    const double d = std::sqrt(num / (pa + pb));
    if (!(d <= 1.0 + 1e-12)) throw NumericalError("normalized distance above 1");
    return std::min(d, 1.0);
}

inline double parity_average(double even, double odd) { return 0.5 * (even + odd); }

}  // namespace mpemba
