#pragma once

#include "c1mp/common.hpp"

#include <array>
#include <functional>
#include <vector>

namespace c1mp {

/// Values and derivatives (up to order 2) of the <= p+1 basis functions that
/// are nonzero at a point, together with the index of the first of them.
struct SpanEval {
    int first = 0;                        ///< index of first nonzero function
    int count = 0;                        ///< number of nonzero functions (<= p+1)
    std::array<double, 8> value{};        ///< N_j(x), j = first..first+count-1
    std::array<double, 8> d1{};           ///< N_j'(x)
    std::array<double, 8> d2{};           ///< N_j''(x)

    const std::array<double, 8>& deriv(int order) const {
        switch (order) {
        case 0: return value;
        case 1: return d1;
        default: return d2;
        }
    }
};

/// A univariate B-spline basis on [0,1] given by an explicit knot vector.
/// Evaluation uses the right-limit convention at internal breakpoints and the
/// left limit at x = 1.
class BsplineBasis {
public:
    BsplineBasis() = default;
    BsplineBasis(int degree, std::vector<double> knots);

    int degree() const { return degree_; }
    int size() const { return n_; }
    const std::vector<double>& knots() const { return knots_; }

    /// Number of (nonempty) elements and the e-th element interval.
    int num_elements() const { return static_cast<int>(breaks_.size()) - 1; }
    double break_at(int i) const { return breaks_[static_cast<size_t>(i)]; }
    std::pair<double, double> element(int e) const {
        return {breaks_[static_cast<size_t>(e)], breaks_[static_cast<size_t>(e) + 1]};
    }
    /// Element index containing x (right-limit convention, x=1 -> last element).
    int element_of(double x) const;

    /// First/last basis index nonzero on element e.
    int first_on_element(int e) const { return span_of_element_[static_cast<size_t>(e)] - degree_; }
    int last_on_element(int e) const { return span_of_element_[static_cast<size_t>(e)]; }

    /// Element range [first,last] of the support of function j.
    std::pair<int, int> support_elements(int j) const;

    /// Greville abscissa of function j.
    double greville(int j) const;

    SpanEval eval(double x, int max_deriv = 2) const;

    /// Value of a single basis function (convenience for oracles/tests).
    double value_of(int j, double x) const;

private:
    int find_span(double x) const;

    int degree_ = 0;
    int n_ = 0;
    std::vector<double> knots_;
    std::vector<double> breaks_;
    std::vector<int> span_of_element_;
};

/// Uniform open knot vector: (p+1) zeros, each internal
/// break j/(k+1) repeated (p-r) times, (p+1) ones.
std::vector<double> knot_vector(int p, int r, int k);

/// Families of endpoint-interpolating modified basis functions.
enum class ModifiedFamily {
    MP_r,    ///< 2 functions built on S_p^r
    MP_rp1,  ///< 3 functions built on S_p^{r+1}
    MPm1_r,  ///< 2 functions built on S_{p-1}^r
};

/// The univariate space S_p^r on [0,1] at one refinement level, together with
/// the subspaces S_p^{r+1} and S_{p-1}^r on the same breakpoints.
///
/// degree p >= 3, regularity 1 <= r <= p-2, and k internal breaks with
/// k >= max(0, ceil((5-p)/(p-r-1))).
class UnivariateSpace {
public:
    UnivariateSpace(int p, int r, int k);

    int p() const { return p_; }
    int r() const { return r_; }
    int k() const { return k_; }
    int n() const { return base_.size(); }
    int n0() const { return sub0_.size(); }
    int n1() const { return sub1_.size(); }

    /// The minimal admissible k for given (p, r).
    static int min_internal_breaks(int p, int r);

    const BsplineBasis& base() const { return base_; }   ///< S_p^r
    const BsplineBasis& sub0() const { return sub0_; }   ///< S_p^{r+1}
    const BsplineBasis& sub1() const { return sub1_; }   ///< S_{p-1}^r

    SpanEval eval_basis(double x, int max_deriv = 2) const;

    /// Values (and derivatives) of the modified basis functions of a family
    /// at x; result[i][j] = d^i M_j(x).
    std::vector<std::vector<double>> modified_basis(ModifiedFamily family, double x,
                                                    int max_deriv = 2) const;

    /// Dyadically refined space (k -> 2k+1).
    UnivariateSpace dyadic_refine() const;

private:
    int p_, r_, k_;
    BsplineBasis base_, sub0_, sub1_;
};

/// One row of a sparse refinement/conversion matrix: coefficients
/// cols[first + i] = coef[i].
struct SparseRow {
    int first = 0;
    std::vector<double> coef;
};

/// Coefficients of the coarse function j of `coarse` in the basis `fine`,
/// computed by repeated single-knot Boehm insertion. `fine` must refine
/// `coarse` (same degree, knots of `coarse` a subsequence of those of `fine`).
SparseRow boehm_refine_row(const BsplineBasis& coarse, const BsplineBasis& fine, int j);

/// Full dyadic refinement matrix for S_p^r: row j holds the coefficients of
/// the coarse N_j over the once-dyadically-refined basis.
std::vector<SparseRow> dyadic_refine_matrix(const UnivariateSpace& space);

/// Expands a spline f, known to lie in `target` and supported on the break
/// interval [lo, hi], into target-basis coefficients by local collocation.
/// `f` is evaluated pointwise.
SparseRow convert_to_basis(const BsplineBasis& target, double lo, double hi,
                           const std::function<double(double)>& f);

/// Gauss-Legendre rule with n points on [0,1].
struct QuadRule {
    std::vector<double> x;
    std::vector<double> w;
};
QuadRule gauss_rule(int n);

} // namespace c1mp
