#pragma once

// Thin LAPACKE wrappers for the two large eigenproblems (dense symmetric
// spectra and the nonsymmetric rate matrix). Everything else stays in Eigen.

#include <complex>
#include <vector>

#define lapack_complex_float std::complex<float>
#define lapack_complex_double std::complex<double>
#include <lapacke.h>

#include "core.hpp"

namespace mpemba::linalg {

struct SymmetricEigen {
    RVector values;   // ascending
    RMatrix vectors;  // columns
};

inline SymmetricEigen eigh(const RMatrix& a)
{
    const lapack_int n = static_cast<lapack_int>(a.rows());
    if (a.cols() != a.rows()) throw ValidationError("eigh needs a square matrix");
    SymmetricEigen out;
    out.vectors = a;
    out.values.resize(n);
    if (n == 0) return out;
    lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'U', n, out.vectors.data(), n,
                                     out.values.data());
    if (info != 0) throw NumericalError("dsyevd failed with info=" + std::to_string(info));
    return out;
}

struct GeneralEigen {
    CVector values;
    CMatrix right;  // columns, unit 2-norm
    CMatrix left;   // columns, left^H A = lambda left^H
};

inline GeneralEigen eig(const RMatrix& a)
{
    const lapack_int n = static_cast<lapack_int>(a.rows());
    if (a.cols() != a.rows()) throw ValidationError("eig needs a square matrix");
    RMatrix work = a;
    RVector wr(n), wi(n);
    RMatrix vl(n, n), vr(n, n);
    GeneralEigen out;
    out.values.resize(n);
    out.right.resize(n, n);
    out.left.resize(n, n);
    if (n == 0) return out;
    lapack_int info = LAPACKE_dgeev(LAPACK_COL_MAJOR, 'V', 'V', n, work.data(), n, wr.data(),
                                    wi.data(), vl.data(), n, vr.data(), n);
    if (info != 0) throw NumericalError("dgeev failed with info=" + std::to_string(info));
    // Conjugate pairs come packed as (re, im) column pairs.
    for (lapack_int j = 0; j < n; ++j) {
        out.values(j) = cplx(wr(j), wi(j));
        if (wi(j) == 0.0) {
            out.right.col(j) = vr.col(j).cast<cplx>();
            out.left.col(j) = vl.col(j).cast<cplx>();
        } else {
            out.values(j + 1) = cplx(wr(j + 1), wi(j + 1));
            for (lapack_int r = 0; r < n; ++r) {
                out.right(r, j) = cplx(vr(r, j), vr(r, j + 1));
                out.right(r, j + 1) = cplx(vr(r, j), -vr(r, j + 1));
                out.left(r, j) = cplx(vl(r, j), vl(r, j + 1));
                out.left(r, j + 1) = cplx(vl(r, j), -vl(r, j + 1));
            }
            ++j;
        }
    }
    return out;
}

}  // namespace mpemba::linalg
