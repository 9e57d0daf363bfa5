#pragma once

// Symbolic spin-chain Hamiltonians and jump operators (Pauli strings with
// coefficients) and their dense/sparse realization.
//
// Basis convention: site j is bit (L-1-j) of the basis index, so site 0 is
// the most significant factor of the Kronecker product. Bit value 1 is spin up
// (sigma^z = +1), which Jordan-Wigner maps to an occupied fermion.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"

namespace mpemba {

enum class Family { tfim, staggered_xxz };
enum class Boundary { periodic, open };
enum class DissipatorKind { hop, raise };

// hop uses S^z; half means S = sigma/2, pauli means S^z = sigma^z.
// S^+ = sigma^+ in both.
enum class SpinConvention { half, pauli };

inline std::string to_string(Family f) { return f == Family::tfim ? "TFIM" : "STAGGERED_XXZ"; }
inline std::string to_string(Boundary b) { return b == Boundary::periodic ? "PERIODIC" : "OPEN"; }
inline std::string to_string(DissipatorKind k) { return k == DissipatorKind::hop ? "hop" : "raise"; }
inline std::string to_string(SpinConvention c) { return c == SpinConvention::half ? "half" : "pauli"; }

struct DenseBudget {
    int max_sites = 16;
};

// One Pauli string: (site, 'X'|'Y'|'Z') factors on distinct sites, sorted by site.
struct PauliTerm {
    cplx coeff;
    std::vector<std::pair<int, char>> ops;
};

class PauliSum {
public:
    explicit PauliSum(int L = 0) : L_(L) {}

    static PauliSum identity(int L, cplx c = 1.0)
    {
        PauliSum s(L);
        s.terms_.push_back({c, {}});
        return s;
    }
    static PauliSum pauli(int L, int site, char p, cplx c = 1.0)
    {
        check_site(L, site);
        if (p != 'X' && p != 'Y' && p != 'Z') throw ValidationError(std::string("unknown Pauli '") + p + "'");
        PauliSum s(L);
        s.terms_.push_back({c, {{site, p}}});
        return s;
    }
    static PauliSum sigma_plus(int L, int site)
    {
        return pauli(L, site, 'X', 0.5) + pauli(L, site, 'Y', cplx(0.0, 0.5));
    }
    static PauliSum sigma_minus(int L, int site)
    {
        return pauli(L, site, 'X', 0.5) + pauli(L, site, 'Y', cplx(0.0, -0.5));
    }

    int sites() const { return L_; }
    const std::vector<PauliTerm>& terms() const { return terms_; }
    bool empty() const { return terms_.empty(); }

    // Sites touched by any term.
    std::vector<int> support() const
    {
        std::vector<int> s;
        for (const auto& t : terms_)
            for (const auto& [site, p] : t.ops) s.push_back(site);
        std::sort(s.begin(), s.end());
        s.erase(std::unique(s.begin(), s.end()), s.end());
        return s;
    }

    PauliSum& operator+=(const PauliSum& o)
    {
        match(o);
        terms_.insert(terms_.end(), o.terms_.begin(), o.terms_.end());
        simplify();
        return *this;
    }
    friend PauliSum operator+(PauliSum a, const PauliSum& b) { return a += b; }
    friend PauliSum operator-(PauliSum a, const PauliSum& b) { return a += (-1.0) * b; }
    friend PauliSum operator*(cplx c, PauliSum a)
    {
        for (auto& t : a.terms_) t.coeff *= c;
        a.simplify();
        return a;
    }
    friend PauliSum operator*(const PauliSum& a, const PauliSum& b)
    {
        a.match(b);
        PauliSum out(a.L_);
        for (const auto& x : a.terms_)
            for (const auto& y : b.terms_) out.terms_.push_back(multiply(x, y));
        out.simplify();
        return out;
    }

    PauliSum adjoint() const
    {
        PauliSum out = *this;
        for (auto& t : out.terms_) t.coeff = std::conj(t.coeff);
        return out;
    }

    // Acts on one basis state: a Pauli string maps |s> to phase * |s'>.
    static std::pair<std::size_t, cplx> apply(const PauliTerm& t, int L, std::size_t s)
    {
        cplx phase = t.coeff;
        for (const auto& [site, p] : t.ops) {
            const std::size_t mask = std::size_t{1} << (L - 1 - site);
            const bool up = (s & mask) != 0;
            switch (p) {
            case 'X': s ^= mask; break;
            case 'Y': phase *= up ? cplx(0, 1) : cplx(0, -1); s ^= mask; break;
            case 'Z': if (!up) phase = -phase; break;
            }
        }
        return {s, phase};
    }

private:
    static void check_site(int L, int site)
    {
        if (site < 0 || site >= L) throw ValidationError("site " + std::to_string(site) + " outside chain");
    }

    void match(const PauliSum& o) const
    {
        if (o.L_ != L_) throw ValidationError("Pauli sums on different chain lengths");
    }

    static std::pair<cplx, char> single(char a, char b)
    {
        if (a == b) return {1.0, 'I'};
        // XY = iZ, YZ = iX, ZX = iY and the reversed products carry -i.
        static const std::string cyc = "XYZ";
        const auto ia = cyc.find(a), ib = cyc.find(b);
        const char c = cyc[3 - ia - ib];
        return {(ib == (ia + 1) % 3) ? cplx(0, 1) : cplx(0, -1), c};
    }

    static PauliTerm multiply(const PauliTerm& x, const PauliTerm& y)
    {
        PauliTerm out{x.coeff * y.coeff, {}};
        std::size_t i = 0, j = 0;
        while (i < x.ops.size() || j < y.ops.size()) {
            if (j == y.ops.size() || (i < x.ops.size() && x.ops[i].first < y.ops[j].first)) {
                out.ops.push_back(x.ops[i++]);
            } else if (i == x.ops.size() || y.ops[j].first < x.ops[i].first) {
                out.ops.push_back(y.ops[j++]);
            } else {
                auto [c, p] = single(x.ops[i].second, y.ops[j].second);
                out.coeff *= c;
                if (p != 'I') out.ops.push_back({x.ops[i].first, p});
                ++i;
                ++j;
            }
        }
        return out;
    }

    void simplify()
    {
        std::map<std::vector<std::pair<int, char>>, cplx> merged;
        for (auto& t : terms_) {
            std::sort(t.ops.begin(), t.ops.end());
            merged[t.ops] += t.coeff;
        }
        terms_.clear();
        for (auto& [ops, c] : merged)
            if (std::abs(c) > 1e-15) terms_.push_back({c, ops});
    }

    int L_;
    std::vector<PauliTerm> terms_;
};

struct SpinChainSpec {
    Family family = Family::tfim;
    int L = 2;
    Boundary boundary = Boundary::open;
    // TFIM
    double J = 0.0, h_z = 0.0, h_x = 0.0;
    // staggered XXZ: Delta on bond (j, j+1) with j counted from 1
    double delta_even = 0.0, delta_odd = 0.0;

    int bonds() const { return boundary == Boundary::periodic ? L : L - 1; }
    bool integrable() const { return family == Family::tfim && h_x == 0.0; }

    void validate() const
    {
        require(L >= 2, "L must be at least 2", "model.L");
        for (double c : {J, h_z, h_x, delta_even, delta_odd}) require(std::isfinite(c), "couplings must be finite", "model.couplings");
        if (family == Family::staggered_xxz && boundary == Boundary::periodic)
            require(L % 2 == 0, "periodic staggered chain needs even L", "model.L");
    }
};

inline SpinChainSpec build_tfim(int L, double J, double h_z, double h_x, Boundary boundary)
{
    SpinChainSpec s;
    s.family = Family::tfim;
    s.L = L;
    s.J = J;
    s.h_z = h_z;
    s.h_x = h_x;
    s.boundary = boundary;
    s.validate();
    return s;
}

inline SpinChainSpec build_staggered_xxz(int L, double J, double delta_even, double delta_odd,
                                         Boundary boundary = Boundary::periodic)
{
    SpinChainSpec s;
    s.family = Family::staggered_xxz;
    s.L = L;
    s.J = J;
    s.delta_even = delta_even;
    s.delta_odd = delta_odd;
    s.boundary = boundary;
    s.validate();
    return s;
}

inline PauliSum hamiltonian(const SpinChainSpec& spec)
{
    spec.validate();
    const int L = spec.L;
    PauliSum h(L);
    for (int j = 0; j < spec.bonds(); ++j) {
        const int k = (j + 1) % L;
        if (spec.family == Family::tfim) {
            h += PauliSum::pauli(L, j, 'X', spec.J) * PauliSum::pauli(L, k, 'X');
        } else {
            const double delta = (j + 1) % 2 == 0 ? spec.delta_even : spec.delta_odd;
            h += PauliSum::pauli(L, j, 'X', -spec.J) * PauliSum::pauli(L, k, 'X');
            h += PauliSum::pauli(L, j, 'Y', -spec.J) * PauliSum::pauli(L, k, 'Y');
            h += PauliSum::pauli(L, j, 'Z', -delta) * PauliSum::pauli(L, k, 'Z');
        }
    }
    if (spec.family == Family::tfim)
        for (int j = 0; j < L; ++j)
            h += PauliSum::pauli(L, j, 'Z', spec.h_z) + PauliSum::pauli(L, j, 'X', spec.h_x);
    return h;
}

struct LindbladSpec {
    int L = 2;
    Boundary boundary = Boundary::open;
    DissipatorKind kind = DissipatorKind::hop;
    SpinConvention convention = SpinConvention::half;
    double epsilon = 0.0;
    std::vector<int> anchors;
    std::vector<PauliSum> local_ops;  // one per anchor, support within {j, j+1}

    void validate() const
    {
        require(std::isfinite(epsilon) && epsilon >= 0.0, "epsilon must be a finite nonnegative rate", "dissipator.epsilon");
        require(anchors.size() == local_ops.size(), "one operator per anchor");
        for (std::size_t i = 0; i < anchors.size(); ++i) {
            const int j = anchors[i];
            for (int s : local_ops[i].support())
                require(s == j || s == (j + 1) % L, "jump operator reaches beyond its two-site template");
        }
    }
};

namespace detail {

// Periodic chains wrap the last anchor; open chains drop it.
inline std::vector<int> anchor_sites(int L, Boundary b)
{
    std::vector<int> a(b == Boundary::periodic ? L : L - 1);
    for (std::size_t j = 0; j < a.size(); ++j) a[j] = static_cast<int>(j);
    return a;
}

}  // namespace detail

inline LindbladSpec build_lindblad_hop(int L, double epsilon, Boundary boundary,
                                       SpinConvention convention = SpinConvention::half)
{
    require(L >= 2, "L must be at least 2", "model.L");
    LindbladSpec s;
    s.L = L;
    s.boundary = boundary;
    s.kind = DissipatorKind::hop;
    s.convention = convention;
    s.epsilon = epsilon;
    s.anchors = detail::anchor_sites(L, boundary);
    const double sz = convention == SpinConvention::half ? 0.5 : 1.0;
    for (int j : s.anchors) {
        const int k = (j + 1) % L;
        s.local_ops.push_back(PauliSum::sigma_plus(L, j) * PauliSum::sigma_minus(L, k) +
                              PauliSum::pauli(L, j, 'Z', sz) + PauliSum::identity(L, 0.5));
    }
    s.validate();
    return s;
}

inline LindbladSpec build_lindblad_raise(int L, double epsilon, Boundary boundary)
{
    require(L >= 2, "L must be at least 2", "model.L");
    LindbladSpec s;
    s.L = L;
    s.boundary = boundary;
    s.kind = DissipatorKind::raise;
    s.epsilon = epsilon;
    s.anchors = detail::anchor_sites(L, boundary);
    for (int j : s.anchors) {
        const int k = (j + 1) % L;
        s.local_ops.push_back(0.5 * (PauliSum::sigma_plus(L, j) * (PauliSum::identity(L) - PauliSum::pauli(L, k, 'Z'))) +
                              PauliSum::pauli(L, j, 'X'));
    }
    s.validate();
    return s;
}

inline LindbladSpec build_lindblad(DissipatorKind kind, int L, double epsilon, Boundary boundary,
                                   SpinConvention convention = SpinConvention::half)
{
    return kind == DissipatorKind::hop ? build_lindblad_hop(L, epsilon, boundary, convention)
                                       : build_lindblad_raise(L, epsilon, boundary);
}

inline void check_budget(int L, const DenseBudget& budget)
{
    if (L > budget.max_sites)
        throw BudgetError("dense realization of L=" + std::to_string(L) + " exceeds budget of " +
                          std::to_string(budget.max_sites) + " sites", "model.L");
}

inline SparseC sparse_operator(const PauliSum& op, const DenseBudget& budget = {})
{
    const int L = op.sites();
    check_budget(L, budget);
    const std::size_t dim = std::size_t{1} << L;
    std::vector<Eigen::Triplet<cplx>> trip;
    trip.reserve(dim * op.terms().size());
    for (const auto& t : op.terms())
        for (std::size_t s = 0; s < dim; ++s) {
            auto [to, phase] = PauliSum::apply(t, L, s);
            trip.emplace_back(static_cast<int>(to), static_cast<int>(s), phase);
        }
    SparseC m(dim, dim);
    m.setFromTriplets(trip.begin(), trip.end());
    m.prune(cplx(0.0), 1e-15);
    return m;
}

inline CMatrix dense_operator(const PauliSum& op, const DenseBudget& budget = {})
{
    return CMatrix(sparse_operator(op, budget));
}

inline CMatrix dense_operator(const SpinChainSpec& spec, const DenseBudget& budget = {})
{
    CMatrix h = dense_operator(hamiltonian(spec), budget);
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
    if ((h - h.adjoint()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw NumericalError("Hamiltonian realization is not Hermitian");
    return h;
}

inline std::vector<SparseC> sparse_jump_operators(const LindbladSpec& spec, const DenseBudget& budget = {})
{
    std::vector<SparseC> out;
    for (const auto& op : spec.local_ops) out.push_back(sparse_operator(op, budget));
    return out;
}

// Diagonal operators in the computational basis.
inline RVector total_sz_diagonal(int L)
{
    const std::size_t dim = std::size_t{1} << L;
    RVector d(dim);
    for (std::size_t s = 0; s < dim; ++s) d(s) = 0.5 * (2.0 * __builtin_popcountll(s) - L);
    return d;
}

// (-1)^N with N the number of up spins (occupied fermions).
inline RVector parity_diagonal(int L)
{
    const std::size_t dim = std::size_t{1} << L;
    RVector d(dim);
    for (std::size_t s = 0; s < dim; ++s) d(s) = (__builtin_popcountll(s) % 2) ? -1.0 : 1.0;
    return d;
}

inline SparseC diagonal_operator(const RVector& d)
{
    SparseC m(d.size(), d.size());
    m.reserve(Eigen::VectorXi::Constant(d.size(), 1));
    for (Eigen::Index i = 0; i < d.size(); ++i) m.insert(i, i) = d(i);
    return m;
}

}  // namespace mpemba
