#pragma once

// Matrix-free Krylov methods on dense matrix-shaped vectors: Arnoldi action of
// the exponential and right-preconditioned restarted GMRES.

#include <cmath>
#include <functional>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "core.hpp"

namespace mpemba::krylov {

using Vec = CMatrix;
using Op = std::function<Vec(const Vec&)>;

inline cplx dot(const Vec& a, const Vec& b)
{
    return Eigen::Map<const CVector>(a.data(), a.size()).dot(Eigen::Map<const CVector>(b.data(), b.size()));
}

inline double norm(const Vec& a) { return a.norm(); }

struct ExpControls {
    int dim = 30;
    double tol = 1e-13;  // per substep, relative to the vector norm
    long max_substeps = 1'000'000;
};

// Propagates w <- exp(t A) w, with adaptive substeps. tau carries the last
// accepted substep length between calls.
class ArnoldiExp {
public:
    ArnoldiExp(Op a, ExpControls c = {}) : a_(std::move(a)), c_(c) {}

    void apply(Vec& w, double t)
    {
        sweep(w, {t}, [&w](std::size_t, const Vec& x) { w = x; });
    }

    // Visits exp(t_i A) w for nondecreasing t_i >= 0. Samples inside one
    // substep reuse its Krylov basis.
    void sweep(const Vec& w0, const std::vector<double>& times, const std::function<void(std::size_t, const Vec&)>& visit)
    {
        Vec w = w0;
        double done = 0.0;
        long substeps = 0;
        std::size_t next_sample = 0;
        while (next_sample < times.size() && times[next_sample] <= done) visit(next_sample++, w);
        const double t = times.empty() ? 0.0 : times.back();
        while (next_sample < times.size()) {
            if (++substeps > c_.max_substeps) throw NumericalError("Krylov substep budget exhausted");
            const double beta = norm(w);
            if (beta == 0.0) {
                while (next_sample < times.size()) visit(next_sample++, w);
                return;
            }
            const int m = c_.dim;
            const Eigen::Index n = w.size();
            // Basis columns are contiguous so Gram-Schmidt runs as matrix-vector products.
            CMatrix v(n, m + 1);
            v.col(0) = Eigen::Map<const CVector>(w.data(), n) / beta;
            CMatrix h = CMatrix::Zero(m + 1, m);
            int mb = m;
            bool breakdown = false;
            Vec x(w.rows(), w.cols());
            for (int j = 0; j < m; ++j) {
                Eigen::Map<CVector>(x.data(), n) = v.col(j);
                Vec ax = a_(x);
                ++matvecs_;
                Eigen::Map<CVector> p(ax.data(), n);
                const double before = p.norm();
                CVector c = v.leftCols(j + 1).adjoint() * p;
                p.noalias() -= v.leftCols(j + 1) * c;
                if (p.norm() < 0.7 * before) {
                    const CVector c2 = v.leftCols(j + 1).adjoint() * p;
                    p.noalias() -= v.leftCols(j + 1) * c2;
                    c += c2;
                }
                h.col(j).head(j + 1) = c;
                const double hn = p.norm();
                h(j + 1, j) = hn;
                if (hn < 1e-14 * beta) {
                    mb = j + 1;
                    breakdown = true;
                    break;
                }
                v.col(j + 1) = p / hn;
            }
            double tau = std::min(tau_ > 0.0 ? tau_ : t - done, t - done);
            CMatrix small;  // generator whose exponential acts in the basis
            CMatrix f;
            for (int tries = 0;; ++tries) {
                if (tries > 60) throw NumericalError("Krylov step size underflow");
                if (breakdown) {
                    small = h.topLeftCorner(mb, mb);
                    f = (tau * small).exp();
                    break;
                }
                // Augmented matrix: the extra row yields the error estimate and a corrected update.
                small = CMatrix::Zero(m + 1, m + 1);
                small.topLeftCorner(m, m) = h.topLeftCorner(m, m);
                small(m, m - 1) = h(m, m - 1);
                f = (tau * small).exp();
                const double err = beta * std::abs(f(m, 0));
                if (err <= c_.tol * beta) {
                    tau_ = tau * std::min(2.0, 0.9 * std::pow(c_.tol * beta / std::max(err, 1e-300), 1.0 / m));
                    mb = m + 1;
                    break;
                }
                tau *= std::max(0.2, 0.9 * std::pow(c_.tol * beta / err, 1.0 / m));
            }
            auto combine = [&](const CMatrix& g) {
                Vec out(w.rows(), w.cols());
                Eigen::Map<CVector>(out.data(), n).noalias() = v.leftCols(mb) * (beta * g.col(0).head(mb));
                return out;
            };
            const double end = (t - done - tau) <= 1e-14 * std::max(1.0, t) ? t : done + tau;
            while (next_sample < times.size() && times[next_sample] < end) {
                visit(next_sample, combine(((times[next_sample] - done) * small).exp()));
                ++next_sample;
            }
            w = combine(f);
            done = end;
            while (next_sample < times.size() && times[next_sample] <= done) visit(next_sample++, w);
            if (breakdown) tau_ = std::max(tau_, tau);
        }
    }

    long matvecs() const { return matvecs_; }

private:
    Op a_;
    ExpControls c_;
    double tau_ = 0.0;
    long matvecs_ = 0;
};

struct GmresControls {
    int restart = 80;
    int max_restarts = 20;
    double tol = 1e-13;  // relative residual
};

struct GmresResult {
    Vec x;
    double relative_residual = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Solves A x = b with right preconditioning A M^{-1} u = b, x = M^{-1} u.
inline GmresResult gmres(const Op& a, const Op& precond, const Vec& b, Vec x0, const GmresControls& c = {})
{
    GmresResult out{std::move(x0)};
    const double bnorm = norm(b);
    if (bnorm == 0.0) {
        out.x.setZero();
        out.converged = true;
        return out;
    }
    const int m = c.restart;
    for (int cycle = 0; cycle < c.max_restarts; ++cycle) {
        Vec r = b - a(out.x);
        double beta = norm(r);
        out.relative_residual = beta / bnorm;
        if (out.relative_residual < c.tol) {
            out.converged = true;
            return out;
        }
        std::vector<Vec> v{r / beta}, z;
        CMatrix h = CMatrix::Zero(m + 1, m);
        CVector g = CVector::Zero(m + 1);
        g(0) = beta;
        std::vector<cplx> cs(m), sn(m);
        int k = 0;
        for (; k < m; ++k) {
            z.push_back(precond(v[k]));
            Vec w = a(z[k]);
            ++out.iterations;
            for (int i = 0; i <= k; ++i) {
                h(i, k) = dot(v[i], w);
                w -= h(i, k) * v[i];
            }
            h(k + 1, k) = norm(w);
            for (int i = 0; i < k; ++i) {
                const cplx t = std::conj(cs[i]) * h(i, k) + std::conj(sn[i]) * h(i + 1, k);
                h(i + 1, k) = -sn[i] * h(i, k) + cs[i] * h(i + 1, k);
                h(i, k) = t;
            }
            const double den = std::hypot(std::abs(h(k, k)), std::abs(h(k + 1, k)));
            cs[k] = den == 0.0 ? 1.0 : h(k, k) / den;
            sn[k] = den == 0.0 ? 0.0 : h(k + 1, k) / den;
            h(k, k) = den;
            h(k + 1, k) = 0.0;
            g(k + 1) = -sn[k] * g(k);
            g(k) = std::conj(cs[k]) * g(k);
            const double hn_sub = norm(w);
            out.relative_residual = std::abs(g(k + 1)) / bnorm;
            if (out.relative_residual < c.tol || hn_sub == 0.0) {
                ++k;
                break;
            }
            v.push_back(w / hn_sub);
        }
        CVector y = h.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
        for (int i = 0; i < k; ++i) out.x += y(i) * z[i];
    }
    const double final_res = norm(b - a(out.x)) / bnorm;
    out.relative_residual = final_res;
    out.converged = final_res < c.tol;
    return out;
}

}  // namespace mpemba::krylov
