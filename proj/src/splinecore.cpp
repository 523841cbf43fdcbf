#include "c1mp/splinecore.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace c1mp {

// ---------------------------------------------------------------- BsplineBasis

BsplineBasis::BsplineBasis(int degree, std::vector<double> knots)
    : degree_(degree), knots_(std::move(knots)) {
    C1MP_REQUIRE(degree_ >= 1, parameter_error, "degree must be positive");
    C1MP_REQUIRE(static_cast<int>(knots_.size()) >= 2 * (degree_ + 1), parameter_error,
                 "knot vector too short");
    n_ = static_cast<int>(knots_.size()) - degree_ - 1;
    for (size_t i = 0; i + 1 < knots_.size(); ++i)
        C1MP_REQUIRE(knots_[i] <= knots_[i + 1], parameter_error, "knots must be nondecreasing");

    breaks_.push_back(knots_.front());
    for (double t : knots_)
        if (t > breaks_.back()) breaks_.push_back(t);

    // Knot span index for each element.
    span_of_element_.resize(breaks_.size() - 1);
    size_t s = 0;
    for (size_t e = 0; e + 1 < breaks_.size(); ++e) {
        while (!(knots_[s] <= breaks_[e] && breaks_[e] < knots_[s + 1])) ++s;
        span_of_element_[e] = static_cast<int>(s);
    }
}

int BsplineBasis::element_of(double x) const {
    C1MP_REQUIRE(x >= breaks_.front() - 1e-14 && x <= breaks_.back() + 1e-14, error,
                 "point outside the domain of the knot vector: ", x);
    if (x >= breaks_.back()) return num_elements() - 1;
    auto it = std::upper_bound(breaks_.begin(), breaks_.end(), x);
    int e = static_cast<int>(it - breaks_.begin()) - 1;
    return std::max(0, std::min(e, num_elements() - 1));
}

int BsplineBasis::find_span(double x) const {
    return span_of_element_[static_cast<size_t>(element_of(x))];
}

std::pair<int, int> BsplineBasis::support_elements(int j) const {
    const double lo = knots_[static_cast<size_t>(j)];
    const double hi = knots_[static_cast<size_t>(j) + static_cast<size_t>(degree_) + 1];
    // breaks_ is sorted: locate the covered element range by binary search
    const auto b0 = std::lower_bound(breaks_.begin(), breaks_.end(), lo - 1e-15);
    const auto b1 = std::upper_bound(breaks_.begin(), breaks_.end(), hi + 1e-15);
    const int first = static_cast<int>(b0 - breaks_.begin());
    const int last = static_cast<int>(b1 - breaks_.begin()) - 2;
    return {first, std::max(first, last)};
}

double BsplineBasis::greville(int j) const {
    double s = 0;
    for (int i = 1; i <= degree_; ++i) s += knots_[static_cast<size_t>(j + i)];
    return s / degree_;
}

SpanEval BsplineBasis::eval(double x, int max_deriv) const {
    C1MP_REQUIRE(x >= knots_.front() - 1e-12 && x <= knots_.back() + 1e-12, error,
                 "evaluation point outside [0,1]: ", x);
    x = std::clamp(x, knots_.front(), knots_.back());
    const int p = degree_;
    const int s = find_span(x);

    // Piegl-Tiller A2.3, computing the nonzero functions and derivatives.
    double ndu[8][8];
    double left[8], right[8];
    ndu[0][0] = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = x - knots_[static_cast<size_t>(s + 1 - j)];
        right[j] = knots_[static_cast<size_t>(s + j)] - x;
        double saved = 0.0;
        for (int rr = 0; rr < j; ++rr) {
            ndu[j][rr] = right[rr + 1] + left[j - rr];
            const double temp = ndu[rr][j - 1] / ndu[j][rr];
            ndu[rr][j] = saved + right[rr + 1] * temp;
            saved = left[j - rr] * temp;
        }
        ndu[j][j] = saved;
    }

    SpanEval out;
    out.first = s - p;
    out.count = p + 1;
    for (int j = 0; j <= p; ++j) out.value[static_cast<size_t>(j)] = ndu[j][p];

    const int nd = std::min(max_deriv, 2);
    if (nd >= 1) {
        double a[2][8];
        for (int rr = 0; rr <= p; ++rr) {
            int s1 = 0, s2 = 1;
            a[0][0] = 1.0;
            double d1v = 0.0, d2v = 0.0;
            for (int kk = 1; kk <= nd; ++kk) {
                double d = 0.0;
                const int rk = rr - kk, pk = p - kk;
                if (rr >= kk) {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                    d = a[s2][0] * ndu[rk][pk];
                }
                const int j1 = rk >= -1 ? 1 : -rk;
                const int j2 = rr - 1 <= pk ? kk - 1 : p - rr;
                for (int j = j1; j <= j2; ++j) {
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
                    d += a[s2][j] * ndu[rk + j][pk];
                }
                if (rr <= pk) {
                    a[s2][kk] = -a[s1][kk - 1] / ndu[pk + 1][rr];
                    d += a[s2][kk] * ndu[rr][pk];
                }
                if (kk == 1) d1v = d;
                if (kk == 2) d2v = d;
                std::swap(s1, s2);
            }
            double fac = p;
            if (nd >= 1) out.d1[static_cast<size_t>(rr)] = d1v * fac;
            fac *= (p - 1);
            if (nd >= 2) out.d2[static_cast<size_t>(rr)] = d2v * fac;
        }
    }
    return out;
}

double BsplineBasis::value_of(int j, double x) const {
    const SpanEval ev = eval(x, 0);
    if (j < ev.first || j >= ev.first + ev.count) return 0.0;
    return ev.value[static_cast<size_t>(j - ev.first)];
}

// ---------------------------------------------------------------- knot vectors

std::vector<double> knot_vector(int p, int r, int k) {
    C1MP_REQUIRE(p >= 3, parameter_error, "degree must satisfy p >= 3, got ", p);
    C1MP_REQUIRE(r >= 1 && r <= p - 2, parameter_error, "regularity must satisfy 1 <= r <= p-2, got r=",
                 r, " for p=", p);
    C1MP_REQUIRE(k >= 0, parameter_error, "number of internal breaks must be >= 0");
    std::vector<double> knots;
    knots.reserve(static_cast<size_t>(2 * (p + 1) + k * (p - r)));
    for (int i = 0; i <= p; ++i) knots.push_back(0.0);
    for (int j = 1; j <= k; ++j)
        for (int m = 0; m < p - r; ++m) knots.push_back(static_cast<double>(j) / (k + 1));
    for (int i = 0; i <= p; ++i) knots.push_back(1.0);
    return knots;
}

int UnivariateSpace::min_internal_breaks(int p, int r) {
    if (p >= 5) return 0;
    const int num = 5 - p;
    const int den = p - r - 1;
    return (num + den - 1) / den; // ceil for positive operands
}

UnivariateSpace::UnivariateSpace(int p, int r, int k) : p_(p), r_(r), k_(k) {
    C1MP_REQUIRE(p >= 3, parameter_error, "degree must satisfy p >= 3, got ", p);
    C1MP_REQUIRE(r >= 1 && r <= p - 2, parameter_error, "regularity must satisfy 1 <= r <= p-2");
    C1MP_REQUIRE(k >= min_internal_breaks(p, r), parameter_error, "k=", k,
                 " below the minimal number of internal breaks ", min_internal_breaks(p, r),
                 " for (p,r)=(", p, ",", r, ")");
    // Open knots with the given break multiplicity; sub-spaces may exceed the
    // public (p, r) validation range, so the patterns are built inline.
    auto open_knots = [k](int deg, int mult) {
        std::vector<double> knots;
        for (int i = 0; i <= deg; ++i) knots.push_back(0.0);
        for (int j = 1; j <= k; ++j)
            for (int m = 0; m < mult; ++m) knots.push_back(static_cast<double>(j) / (k + 1));
        for (int i = 0; i <= deg; ++i) knots.push_back(1.0);
        return knots;
    };
    base_ = BsplineBasis(p, open_knots(p, p - r));
    sub0_ = BsplineBasis(p, open_knots(p, p - r - 1));
    sub1_ = BsplineBasis(p - 1, open_knots(p - 1, p - 1 - r));
}

SpanEval UnivariateSpace::eval_basis(double x, int max_deriv) const {
    return base_.eval(x, max_deriv);
}

std::vector<std::vector<double>> UnivariateSpace::modified_basis(ModifiedFamily family, double x,
                                                                 int max_deriv) const {
    const bool top_regularity = (r_ == p_ - 2);
    const double A1 = top_regularity ? 1.0 : 1.0;
    const double A2 = top_regularity ? 3.0 : 2.0;
    const double B = top_regularity ? 2.0 : 1.0;
    const double kp1 = k_ + 1;

    const int nfun = family == ModifiedFamily::MP_rp1 ? 3 : 2;
    std::vector<std::vector<double>> out(static_cast<size_t>(max_deriv) + 1,
                                         std::vector<double>(static_cast<size_t>(nfun), 0.0));

    const BsplineBasis& basis = family == ModifiedFamily::MP_r
                                    ? base_
                                    : (family == ModifiedFamily::MP_rp1 ? sub0_ : sub1_);
    const SpanEval ev = basis.eval(x, max_deriv);
    auto N = [&](int j, int der) -> double {
        if (j < ev.first || j >= ev.first + ev.count) return 0.0;
        return ev.deriv(der)[static_cast<size_t>(j - ev.first)];
    };

    for (int d = 0; d <= max_deriv; ++d) {
        switch (family) {
        case ModifiedFamily::MP_r:
            out[static_cast<size_t>(d)][0] = N(0, d) + N(1, d);
            out[static_cast<size_t>(d)][1] = N(1, d) / (p_ * kp1);
            break;
        case ModifiedFamily::MP_rp1:
            out[static_cast<size_t>(d)][0] = N(0, d) + N(1, d) + N(2, d);
            out[static_cast<size_t>(d)][1] = (A1 * N(1, d) + A2 * N(2, d)) / (p_ * kp1);
            out[static_cast<size_t>(d)][2] = B * N(2, d) / (p_ * (p_ - 1) * kp1 * kp1);
            break;
        case ModifiedFamily::MPm1_r:
            out[static_cast<size_t>(d)][0] = N(0, d) + N(1, d);
            out[static_cast<size_t>(d)][1] = N(1, d) / ((p_ - 1) * kp1);
            break;
        }
    }
    return out;
}

UnivariateSpace UnivariateSpace::dyadic_refine() const { return {p_, r_, 2 * k_ + 1}; }

// ---------------------------------------------------------------- Boehm insertion

namespace {

// Window of coefficients [off, off+size) over the current basis.
struct CoefWindow {
    long off = 0;
    std::vector<double> d;
};

void insert_knot(std::vector<double>& U, int p, double t, CoefWindow& w) {
    // span s: U[s] <= t < U[s+1]
    int s = static_cast<int>(std::upper_bound(U.begin(), U.end(), t) - U.begin()) - 1;
    const long lo = w.off;
    const long hi = w.off + static_cast<long>(w.d.size()) - 1;
    auto oldc = [&](long i) -> double {
        return (i < lo || i > hi) ? 0.0 : w.d[static_cast<size_t>(i - lo)];
    };
    std::vector<double> nd(w.d.size() + 2, 0.0);
    const long nlo = lo;
    for (long i = nlo; i <= hi + 1; ++i) {
        double v;
        if (i <= s - p)
            v = oldc(i);
        else if (i >= s + 1)
            v = oldc(i - 1);
        else {
            const double den = U[static_cast<size_t>(i + p)] - U[static_cast<size_t>(i)];
            const double a = den > 0 ? (t - U[static_cast<size_t>(i)]) / den : 0.0;
            v = a * oldc(i) + (1.0 - a) * oldc(i - 1);
        }
        nd[static_cast<size_t>(i - nlo)] = v;
    }
    U.insert(U.begin() + (s + 1), t);
    // trim exact zeros at both ends
    long b = 0, e = static_cast<long>(nd.size());
    while (b < e && nd[static_cast<size_t>(b)] == 0.0) ++b;
    while (e > b && nd[static_cast<size_t>(e - 1)] == 0.0) --e;
    w.off = nlo + b;
    w.d.assign(nd.begin() + b, nd.begin() + e);
    if (w.d.empty()) {
        w.off = nlo;
        w.d.assign(1, 0.0);
    }
}

} // namespace

SparseRow boehm_refine_row(const BsplineBasis& coarse, const BsplineBasis& fine, int j) {
    C1MP_REQUIRE(coarse.degree() == fine.degree(), structure_error,
                 "refinement requires equal degrees");
    const int p = coarse.degree();
    C1MP_REQUIRE(j >= 0 && j < coarse.size(), parameter_error, "row index out of range");

    std::vector<double> U = coarse.knots();
    CoefWindow w;
    w.off = j;
    w.d = {1.0};

    // Missing knots = multiset difference fine - coarse.
    const std::vector<double>& V = fine.knots();
    std::vector<double> missing;
    {
        size_t a = 0;
        for (double t : V) {
            if (a < U.size() && std::abs(U[a] - t) < 1e-14) {
                ++a;
            } else {
                missing.push_back(t);
            }
        }
        C1MP_REQUIRE(a == U.size(), structure_error,
                     "fine knot vector does not refine the coarse one");
    }
    for (double t : missing) insert_knot(U, p, t, w);

    C1MP_REQUIRE(U.size() == V.size(), structure_error, "knot refinement bookkeeping failed");
    SparseRow row;
    row.first = static_cast<int>(w.off);
    row.coef = std::move(w.d);
    return row;
}

std::vector<SparseRow> dyadic_refine_matrix(const UnivariateSpace& space) {
    const UnivariateSpace fine = space.dyadic_refine();
    std::vector<SparseRow> rows;
    rows.reserve(static_cast<size_t>(space.n()));
    for (int j = 0; j < space.n(); ++j)
        rows.push_back(boehm_refine_row(space.base(), fine.base(), j));
    return rows;
}

// ---------------------------------------------------------------- local conversion

SparseRow convert_to_basis(const BsplineBasis& target, double lo, double hi,
                           const std::function<double(double)>& f) {
    // Window of target functions whose support lies inside [lo, hi]; knots
    // are sorted, so the window is a contiguous index range found by search.
    const std::vector<double>& knots = target.knots();
    const int p = target.degree();
    const int jmin = static_cast<int>(std::lower_bound(knots.begin(), knots.end(), lo - 1e-13) -
                                      knots.begin());
    std::vector<int> window;
    for (int j = jmin; j < target.size(); ++j) {
        if (knots[static_cast<size_t>(j)] < lo - 1e-13) continue;
        if (knots[static_cast<size_t>(j + p + 1)] > hi + 1e-13) break;
        window.push_back(j);
    }
    C1MP_REQUIRE(!window.empty(), structure_error, "empty conversion window");

    const int m = static_cast<int>(window.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd b(m);
    for (int i = 0; i < m; ++i) {
        double t = target.greville(window[static_cast<size_t>(i)]);
        t = std::clamp(t, lo, hi);
        const SpanEval ev = target.eval(t, 0);
        for (int c = 0; c < m; ++c) {
            const int jj = window[static_cast<size_t>(c)];
            if (jj >= ev.first && jj < ev.first + ev.count)
                A(i, c) = ev.value[static_cast<size_t>(jj - ev.first)];
        }
        b(i) = f(t);
    }
    Eigen::VectorXd x = A.partialPivLu().solve(b);

    SparseRow row;
    row.first = window.front();
    row.coef.assign(x.data(), x.data() + m);
    // Trim numerically-zero tails so supports stay tight.
    while (!row.coef.empty() && std::abs(row.coef.back()) < 1e-14) row.coef.pop_back();
    size_t lead = 0;
    while (lead < row.coef.size() && std::abs(row.coef[lead]) < 1e-14) ++lead;
    if (lead > 0) {
        row.coef.erase(row.coef.begin(), row.coef.begin() + static_cast<long>(lead));
        row.first += static_cast<int>(lead);
    }
    return row;
}

// ---------------------------------------------------------------- quadrature

QuadRule gauss_rule(int n) {
    C1MP_REQUIRE(n >= 1 && n <= 64, parameter_error, "unsupported quadrature order");
    QuadRule rule;
    rule.x.resize(static_cast<size_t>(n));
    rule.w.resize(static_cast<size_t>(n));
    for (int i = 0; i < (n + 1) / 2; ++i) {
        // Newton on the Legendre polynomial P_n over [-1,1].
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            pp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / pp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        const double w = 2.0 / ((1.0 - x * x) * pp * pp);
        rule.x[static_cast<size_t>(i)] = 0.5 * (1.0 - x);
        rule.x[static_cast<size_t>(n - 1 - i)] = 0.5 * (1.0 + x);
        rule.w[static_cast<size_t>(i)] = 0.5 * w;
        rule.w[static_cast<size_t>(n - 1 - i)] = 0.5 * w;
    }
    return rule;
}

} // namespace c1mp
