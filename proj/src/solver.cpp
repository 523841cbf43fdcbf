#include "c1mp/solver.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SVD>

#include <chrono>
#include <cmath>

namespace c1mp {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// polar data -> cartesian derivatives up to order 2
struct PolarFun {
    double zp1; ///< exponent z+1
    std::function<double(double)> g, gp, gpp;

    double value(double theta, double rho) const { return std::pow(rho, zp1) * g(theta); }
    Vec2 grad(double theta, double rho) const {
        const double ur = zp1 * std::pow(rho, zp1 - 1) * g(theta);
        const double ut = std::pow(rho, zp1) * gp(theta);
        const double c = std::cos(theta), s = std::sin(theta);
        return {ur * c - ut * s / rho, ur * s + ut * c / rho};
    }
    std::array<double, 3> hess(double theta, double rho) const {
        const double urr = zp1 * (zp1 - 1) * std::pow(rho, zp1 - 2) * g(theta);
        const double urt = zp1 * std::pow(rho, zp1 - 1) * gp(theta);
        const double utt = std::pow(rho, zp1) * gpp(theta);
        const double ur = zp1 * std::pow(rho, zp1 - 1) * g(theta);
        const double ut = std::pow(rho, zp1) * gp(theta);
        const double c = std::cos(theta), s = std::sin(theta);
        const double hxx = urr * c * c - 2 * urt * s * c / rho + utt * s * s / (rho * rho) +
                           ur * s * s / rho + 2 * ut * s * c / (rho * rho);
        const double hyy = urr * s * s + 2 * urt * s * c / rho + utt * c * c / (rho * rho) +
                           ur * c * c / rho - 2 * ut * s * c / (rho * rho);
        const double hxy = urr * s * c + urt * (c * c - s * s) / rho - utt * s * c / (rho * rho) -
                           ur * s * c / rho + ut * (s * s - c * c) / (rho * rho);
        return {hxx, hxy, hyy};
    }
};

} // namespace

// ---------------------------------------------------------------- problems

ModelProblem poisson_vertex_singularity(const Vec2& p0) {
    ModelProblem mp;
    mp.kind = ProblemKind::Poisson;
    auto r2 = [p0](const Vec2& x) { return std::max((x - p0).squaredNorm(), 1e-300); };
    mp.exact.u = [r2](const Vec2& x) { return std::pow(r2(x), 2.0 / 3.0); };
    mp.exact.grad = [p0, r2](const Vec2& x) {
        return Vec2((4.0 / 3.0) * std::pow(r2(x), -1.0 / 3.0) * (x - p0));
    };
    mp.exact.hess = [p0, r2](const Vec2& x) {
        const double rr = r2(x);
        const Vec2 d = x - p0;
        const double a = (4.0 / 3.0) * std::pow(rr, -1.0 / 3.0);
        const double b = -(8.0 / 9.0) * std::pow(rr, -4.0 / 3.0);
        return std::array<double, 3>{a + b * d[0] * d[0], b * d[0] * d[1], a + b * d[1] * d[1]};
    };
    mp.exact.f = [r2](const Vec2& x) { return -(16.0 / 9.0) * std::pow(r2(x), -1.0 / 3.0); };
    return mp;
}

ModelProblem poisson_sine() {
    ModelProblem mp;
    mp.kind = ProblemKind::Poisson;
    const double pi = M_PI;
    mp.exact.u = [pi](const Vec2& x) { return std::sin(pi * x[0]) * std::sin(pi * x[1]); };
    mp.exact.grad = [pi](const Vec2& x) {
        return Vec2{pi * std::cos(pi * x[0]) * std::sin(pi * x[1]),
                    pi * std::sin(pi * x[0]) * std::cos(pi * x[1])};
    };
    mp.exact.hess = [pi](const Vec2& x) {
        const double u = std::sin(pi * x[0]) * std::sin(pi * x[1]);
        return std::array<double, 3>{-pi * pi * u,
                                     pi * pi * std::cos(pi * x[0]) * std::cos(pi * x[1]),
                                     -pi * pi * u};
    };
    mp.exact.f = [pi](const Vec2& x) {
        return 2 * pi * pi * std::sin(pi * x[0]) * std::sin(pi * x[1]);
    };
    return mp;
}

ModelProblem poisson_bilinear() {
    ModelProblem mp;
    mp.kind = ProblemKind::Poisson;
    mp.exact.u = [](const Vec2& x) { return 1 + 2 * x[0] - x[1] + 0.5 * x[0] * x[1]; };
    mp.exact.grad = [](const Vec2& x) { return Vec2{2 + 0.5 * x[1], -1 + 0.5 * x[0]}; };
    mp.exact.hess = [](const Vec2&) { return std::array<double, 3>{0, 0.5, 0}; };
    mp.exact.f = [](const Vec2&) { return 0.0; };
    return mp;
}

ModelProblem biharmonic_quadratic() {
    ModelProblem mp;
    mp.kind = ProblemKind::Biharmonic;
    mp.exact.u = [](const Vec2& x) {
        return x[0] * x[0] + 2 * x[0] * x[1] - 3 * x[1] * x[1] + x[0] - x[1] + 1;
    };
    mp.exact.grad = [](const Vec2& x) {
        return Vec2{2 * x[0] + 2 * x[1] + 1, 2 * x[0] - 6 * x[1] - 1};
    };
    mp.exact.hess = [](const Vec2&) { return std::array<double, 3>{2, 2, -6}; };
    mp.exact.f = [](const Vec2&) { return 0.0; };
    return mp;
}

ModelProblem poisson_line_singularity() {
    ModelProblem mp;
    mp.kind = ProblemKind::Poisson;
    auto parts = [](double s) {
        const double t = std::max(std::abs(s), 1e-300);
        const double E = std::exp(-t * t);
        const double g = std::pow(t, 7.0 / 3.0) * E;
        const double gp = E * ((7.0 / 3.0) * std::pow(t, 4.0 / 3.0) - 2 * std::pow(t, 10.0 / 3.0));
        const double gpp = E * ((28.0 / 9.0) * std::pow(t, 1.0 / 3.0) -
                                (34.0 / 3.0) * std::pow(t, 7.0 / 3.0) + 4 * std::pow(t, 13.0 / 3.0));
        return std::array<double, 3>{g, (s < 0 ? -1.0 : 1.0) * gp, gpp};
    };
    mp.exact.u = [parts](const Vec2& x) { return parts(x[1] - x[0])[0]; };
    mp.exact.grad = [parts](const Vec2& x) {
        const double gp = parts(x[1] - x[0])[1];
        return Vec2{-gp, gp};
    };
    mp.exact.hess = [parts](const Vec2& x) {
        const double gpp = parts(x[1] - x[0])[2];
        return std::array<double, 3>{gpp, -gpp, gpp};
    };
    mp.exact.f = [parts](const Vec2& x) { return -2.0 * parts(x[1] - x[0])[2]; };
    return mp;
}

ModelProblem biharmonic_lshape_corner() {
    ModelProblem mp;
    mp.kind = ProblemKind::Biharmonic;
    const double z = 0.544483736782464;
    const double om = 1.5 * M_PI;
    const double c1 = std::sin((z - 1) * om) / (z - 1) - std::sin((z + 1) * om) / (z - 1);
    const double c2 = std::cos((z - 1) * om) - std::cos((z + 1) * om);
    auto g = [=](double t) {
        return c1 * (std::cos((z - 1) * t) - std::cos((z + 1) * t)) -
               c2 * (std::sin((z - 1) * t) / (z - 1) - std::sin((z + 1) * t) / (z + 1));
    };
    auto gp = [=](double t) {
        return c1 * (-(z - 1) * std::sin((z - 1) * t) + (z + 1) * std::sin((z + 1) * t)) -
               c2 * (std::cos((z - 1) * t) - std::cos((z + 1) * t));
    };
    auto gpp = [=](double t) {
        return c1 * (-(z - 1) * (z - 1) * std::cos((z - 1) * t) +
                     (z + 1) * (z + 1) * std::cos((z + 1) * t)) -
               c2 * (-(z - 1) * std::sin((z - 1) * t) + (z + 1) * std::sin((z + 1) * t));
    };
    auto polar = [](const Vec2& x) {
        double th = std::atan2(x[1], x[0]);
        if (th < -1e-9) th += 2 * M_PI;
        return std::pair{std::max(x.norm(), 1e-300), th};
    };
    PolarFun pf{z + 1, g, gp, gpp};
    mp.exact.u = [=](const Vec2& x) {
        const auto [rho, th] = polar(x);
        return pf.value(th, rho);
    };
    mp.exact.grad = [=](const Vec2& x) {
        const auto [rho, th] = polar(x);
        return pf.grad(th, rho);
    };
    mp.exact.hess = [=](const Vec2& x) {
        const auto [rho, th] = polar(x);
        return pf.hess(th, rho);
    };
    mp.exact.f = [](const Vec2&) { return 0.0; };
    return mp;
}

// ---------------------------------------------------------------- tables

namespace {

CellBasisTable table_at_points(const HierarchicalSpace& space, int level, const CellId& cell,
                               const std::vector<Vec2>& pts, const std::vector<double>& w,
                               int max_deriv) {
    const C1Levels& levels = space.levels();
    CellBasisTable tab;
    tab.idx = space.acting_on(level, cell);
    tab.points = pts;
    tab.geom.reserve(pts.size());
    for (const Vec2& xi : pts) tab.geom.push_back(levels.geometry().eval_geometry(cell.patch, xi, 2));
    tab.weight.resize(pts.size());
    for (size_t q = 0; q < pts.size(); ++q)
        tab.weight[q] = w.empty() ? 0.0 : w[q] * std::abs(tab.geom[q].jac.determinant());

    tab.vals.assign(tab.idx.size(), std::vector<PhysicalDerivs>(pts.size()));
    for (size_t fi = 0; fi < tab.idx.size(); ++fi) {
        const int idx = tab.idx[fi];
        for (size_t q = 0; q < pts.size(); ++q) {
            const ParamDerivs pd = space.eval_param(idx, level, cell, pts[q], max_deriv);
            tab.vals[fi][q] = physical_derivs(pd.v, pd.d1, pd.d2, pd.d11, pd.d12, pd.d22,
                                              tab.geom[q], max_deriv);
        }
    }
    return tab;
}

} // namespace

CellBasisTable cell_basis_table(const HierarchicalSpace& space, int level, const CellId& cell,
                                int pts_per_dir, int max_deriv) {
    const BsplineBasis& base = space.levels().level(level).space().base();
    const int q = pts_per_dir > 0 ? pts_per_dir : space.levels().geometry().space0().p() + 2;
    const QuadRule rule = gauss_rule(q);
    const auto [a1, b1] = base.element(cell.e1);
    const auto [a2, b2] = base.element(cell.e2);
    std::vector<Vec2> pts;
    std::vector<double> w;
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) {
            pts.push_back({a1 + (b1 - a1) * rule.x[static_cast<size_t>(i)],
                           a2 + (b2 - a2) * rule.x[static_cast<size_t>(j)]});
            w.push_back(rule.w[static_cast<size_t>(i)] * rule.w[static_cast<size_t>(j)] *
                        (b1 - a1) * (b2 - a2));
        }
    return table_at_points(space, level, cell, pts, w, max_deriv);
}

double cell_diameter(const MultiPatchGeometry& geo, int level, const CellId& cell) {
    const int nel = (1 << level) * (geo.space0().k() + 1);
    const double a1 = static_cast<double>(cell.e1) / nel, b1 = (cell.e1 + 1.0) / nel;
    const double a2 = static_cast<double>(cell.e2) / nel, b2 = (cell.e2 + 1.0) / nel;
    std::array<Vec2, 4> c{geo.eval_geometry(cell.patch, {a1, a2}, 0).point,
                          geo.eval_geometry(cell.patch, {b1, a2}, 0).point,
                          geo.eval_geometry(cell.patch, {a1, b2}, 0).point,
                          geo.eval_geometry(cell.patch, {b1, b2}, 0).point};
    double d = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) d = std::max(d, (c[static_cast<size_t>(i)] - c[static_cast<size_t>(j)]).norm());
    return d;
}

// ---------------------------------------------------------------- poisson

namespace {

std::vector<int> boundary_sides(const MultiPatchGeometry& geo, int nel, const CellId& cell) {
    std::vector<int> out;
    for (int side = 0; side < 4; ++side) {
        const bool touches = (side == SIDE_XI1_LO && cell.e1 == 0) ||
                             (side == SIDE_XI1_HI && cell.e1 == nel - 1) ||
                             (side == SIDE_XI2_LO && cell.e2 == 0) ||
                             (side == SIDE_XI2_HI && cell.e2 == nel - 1);
        if (!touches) continue;
        if (geo.edge(geo.edge_at(cell.patch, side)).kind == EntityKind::Boundary) out.push_back(side);
    }
    return out;
}

// quadrature points along one side of a cell
void side_points(const BsplineBasis& base, const CellId& cell, int side, const QuadRule& rule,
                 std::vector<Vec2>& pts, std::vector<double>& tw, int& dir) {
    const auto [a1, b1] = base.element(cell.e1);
    const auto [a2, b2] = base.element(cell.e2);
    pts.clear();
    tw.clear();
    for (size_t i = 0; i < rule.x.size(); ++i) {
        const double t = rule.x[i];
        Vec2 xi;
        switch (side) {
        case SIDE_XI1_LO: xi = {a1, a2 + (b2 - a2) * t}; dir = 1; break;
        case SIDE_XI1_HI: xi = {b1, a2 + (b2 - a2) * t}; dir = 1; break;
        case SIDE_XI2_LO: xi = {a1 + (b1 - a1) * t, a2}; dir = 0; break;
        default: xi = {a1 + (b1 - a1) * t, b2}; dir = 0; break;
        }
        pts.push_back(xi);
        tw.push_back(rule.w[i] * (dir == 1 ? (b2 - a2) : (b1 - a1)));
    }
}

Vec2 outward_normal(const GeomEval& g, int side) {
    // gradient of the parametric coordinate that is constant on the side
    const Mat2 JinvT = g.jac.inverse().transpose();
    Vec2 n;
    switch (side) {
    case SIDE_XI1_LO: n = -JinvT.col(0); break;
    case SIDE_XI1_HI: n = JinvT.col(0); break;
    case SIDE_XI2_LO: n = -JinvT.col(1); break;
    default: n = JinvT.col(1); break;
    }
    return n.normalized();
}

} // namespace

DiscreteSystem assemble_poisson(const HierarchicalSpace& space, const ModelProblem& problem,
                                double gamma_scale) {
    C1MP_REQUIRE(problem.kind == ProblemKind::Poisson, parameter_error,
                 "assemble_poisson needs a Poisson problem");
    const double t0 = now_seconds();
    const MultiPatchGeometry& geo = space.levels().geometry();
    const int p = geo.space0().p();
    const double gamma = gamma_scale * (p + 1);
    const int n = space.ndof();

    std::vector<Eigen::Triplet<double>> trips;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    const QuadRule rule = gauss_rule(p + 2);

    for (const auto& [l, cell] : space.mesh().all_active()) {
        CellBasisTable tab = cell_basis_table(space, l, cell, p + 2, 1);
        const size_t nf = tab.idx.size();
        const size_t nq = tab.points.size();
        Eigen::MatrixXd Aloc = Eigen::MatrixXd::Zero(static_cast<long>(nf), static_cast<long>(nf));
        Eigen::VectorXd bloc = Eigen::VectorXd::Zero(static_cast<long>(nf));
        for (size_t q = 0; q < nq; ++q) {
            const double w = tab.weight[q];
            const double fval = problem.exact.f(tab.geom[q].point);
            for (size_t i = 0; i < nf; ++i) {
                bloc(static_cast<long>(i)) += w * fval * tab.vals[i][q].v;
                for (size_t j = i; j < nf; ++j)
                    Aloc(static_cast<long>(i), static_cast<long>(j)) +=
                        w * tab.vals[i][q].grad.dot(tab.vals[j][q].grad);
            }
        }

        // Nitsche terms on boundary sides
        const int nel = space.mesh().elements_1d(l);
        const auto bsides = boundary_sides(geo, nel, cell);
        if (!bsides.empty()) {
            const double h = cell_diameter(geo, l, cell);
            const BsplineBasis& base = space.levels().level(l).space().base();
            for (int side : bsides) {
                std::vector<Vec2> pts;
                std::vector<double> tw;
                int dir = 0;
                side_points(base, cell, side, rule, pts, tw, dir);
                CellBasisTable btab = table_at_points(space, l, cell, pts, {}, 1);
                for (size_t q = 0; q < pts.size(); ++q) {
                    const Vec2 nrm = outward_normal(btab.geom[q], side);
                    const double ds = tw[q] * btab.geom[q].jac.col(dir).norm();
                    const double g = problem.exact.u(btab.geom[q].point);
                    for (size_t i = 0; i < tab.idx.size(); ++i) {
                        const double vi = btab.vals[i][q].v;
                        const double dni = btab.vals[i][q].grad.dot(nrm);
                        rhs(tab.idx[i]) += ds * (-g * dni + gamma / h * g * vi);
                        for (size_t j = i; j < tab.idx.size(); ++j) {
                            const double vj = btab.vals[j][q].v;
                            const double dnj = btab.vals[j][q].grad.dot(nrm);
                            Aloc(static_cast<long>(i), static_cast<long>(j)) +=
                                ds * (-dni * vj - dnj * vi + gamma / h * vi * vj);
                        }
                    }
                }
            }
        }

        for (size_t i = 0; i < nf; ++i) {
            rhs(tab.idx[i]) += bloc(static_cast<long>(i));
            for (size_t j = i; j < nf; ++j) {
                trips.emplace_back(tab.idx[i], tab.idx[j], Aloc(static_cast<long>(i), static_cast<long>(j)));
                if (j != i)
                    trips.emplace_back(tab.idx[j], tab.idx[i], Aloc(static_cast<long>(i), static_cast<long>(j)));
            }
        }
    }

    DiscreteSystem sys;
    sys.matrix.resize(n, n);
    sys.matrix.setFromTriplets(trips.begin(), trips.end());
    sys.rhs = std::move(rhs);
    sys.assemble_seconds = now_seconds() - t0;
    return sys;
}

void solve_system(DiscreteSystem& sys) {
    const double t0 = now_seconds();
    const int n = static_cast<int>(sys.matrix.rows());
    if (sys.boundary_coupled.empty()) {
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(sys.matrix);
        C1MP_REQUIRE(ldlt.info() == Eigen::Success, structure_error,
                     "linear solve failed: singular system (basis dependence upstream?)");
        sys.solution = ldlt.solve(sys.rhs);
    } else {
        // interior solve with the boundary lift already stored in solution
        std::vector<int> interior;
        std::vector<char> coupled(static_cast<size_t>(n), 0);
        for (int i : sys.boundary_coupled) coupled[static_cast<size_t>(i)] = 1;
        std::vector<int> map(static_cast<size_t>(n), -1);
        for (int i = 0; i < n; ++i)
            if (!coupled[static_cast<size_t>(i)]) {
                map[static_cast<size_t>(i)] = static_cast<int>(interior.size());
                interior.push_back(i);
            }
        const Eigen::VectorXd full_rhs = sys.rhs - sys.matrix * sys.solution;
        std::vector<Eigen::Triplet<double>> trips;
        for (int k = 0; k < sys.matrix.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(sys.matrix, k); it; ++it) {
                const int i = static_cast<int>(it.row()), j = static_cast<int>(it.col());
                if (map[static_cast<size_t>(i)] >= 0 && map[static_cast<size_t>(j)] >= 0)
                    trips.emplace_back(map[static_cast<size_t>(i)], map[static_cast<size_t>(j)], it.value());
            }
        Eigen::SparseMatrix<double> A0(static_cast<int>(interior.size()),
                                       static_cast<int>(interior.size()));
        A0.setFromTriplets(trips.begin(), trips.end());
        Eigen::VectorXd b0(static_cast<long>(interior.size()));
        for (size_t i = 0; i < interior.size(); ++i) b0(static_cast<long>(i)) = full_rhs(interior[i]);
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A0);
        C1MP_REQUIRE(ldlt.info() == Eigen::Success, structure_error,
                     "interior solve failed: singular system (basis dependence upstream?)");
        const Eigen::VectorXd u0 = ldlt.solve(b0);
        for (size_t i = 0; i < interior.size(); ++i) sys.solution(interior[i]) += u0(static_cast<long>(i));
    }
    sys.solve_seconds = now_seconds() - t0;
}

// ---------------------------------------------------------------- biharmonic

DiscreteSystem assemble_biharmonic(const HierarchicalSpace& space, const ModelProblem& problem) {
    C1MP_REQUIRE(problem.kind == ProblemKind::Biharmonic, parameter_error,
                 "assemble_biharmonic needs a biharmonic problem");
    const double t0 = now_seconds();
    const MultiPatchGeometry& geo = space.levels().geometry();
    const int p = geo.space0().p();
    const int n = space.ndof();

    std::vector<Eigen::Triplet<double>> trips;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    const QuadRule rule = gauss_rule(p + 2);

    // detect boundary-coupled functions while assembling
    std::vector<char> coupled(static_cast<size_t>(n), 0);

    // boundary collocation rows for the lift
    std::vector<std::map<int, double>> bc_rows;
    std::vector<double> bc_vals;

    for (const auto& [l, cell] : space.mesh().all_active()) {
        CellBasisTable tab = cell_basis_table(space, l, cell, p + 2, 2);
        const size_t nf = tab.idx.size();
        for (size_t q = 0; q < tab.points.size(); ++q) {
            const double w = tab.weight[q];
            const double fval = problem.exact.f(tab.geom[q].point);
            for (size_t i = 0; i < nf; ++i) {
                rhs(tab.idx[i]) += w * fval * tab.vals[i][q].v;
                for (size_t j = i; j < nf; ++j) {
                    const double a = w * tab.vals[i][q].lap() * tab.vals[j][q].lap();
                    trips.emplace_back(tab.idx[i], tab.idx[j], a);
                    if (j != i) trips.emplace_back(tab.idx[j], tab.idx[i], a);
                }
            }
        }

        const int nel = space.mesh().elements_1d(l);
        const auto bsides = boundary_sides(geo, nel, cell);
        if (bsides.empty()) continue;
        const BsplineBasis& base = space.levels().level(l).space().base();
        for (int side : bsides) {
            std::vector<Vec2> pts;
            std::vector<double> tw;
            int dir = 0;
            side_points(base, cell, side, rule, pts, tw, dir);
            CellBasisTable btab = table_at_points(space, l, cell, pts, {}, 1);
            // mark coupled functions: nonzero value or normal derivative on the side
            for (size_t i = 0; i < btab.idx.size(); ++i) {
                double m = 0;
                for (size_t q = 0; q < pts.size(); ++q)
                    m = std::max({m, std::abs(btab.vals[i][q].v),
                                  std::abs(btab.vals[i][q].grad.dot(outward_normal(btab.geom[q], side)))});
                if (m > 1e-11) coupled[static_cast<size_t>(btab.idx[i])] = 1;
            }
            // collocation rows
            for (size_t q = 0; q < pts.size(); ++q) {
                const Vec2 nrm = outward_normal(btab.geom[q], side);
                std::map<int, double> row_v, row_d;
                for (size_t i = 0; i < btab.idx.size(); ++i) {
                    if (std::abs(btab.vals[i][q].v) > 1e-14) row_v[btab.idx[i]] = btab.vals[i][q].v;
                    const double dn = btab.vals[i][q].grad.dot(nrm);
                    if (std::abs(dn) > 1e-14) row_d[btab.idx[i]] = dn;
                }
                bc_rows.push_back(std::move(row_v));
                bc_vals.push_back(problem.exact.u(btab.geom[q].point));
                bc_rows.push_back(std::move(row_d));
                bc_vals.push_back(problem.exact.grad(btab.geom[q].point).dot(nrm));
            }
        }
    }

    DiscreteSystem sys;
    sys.matrix.resize(n, n);
    sys.matrix.setFromTriplets(trips.begin(), trips.end());
    sys.rhs = std::move(rhs);
    for (int i = 0; i < n; ++i)
        if (coupled[static_cast<size_t>(i)]) sys.boundary_coupled.push_back(i);

    // least-squares boundary lift over the coupled functions
    sys.solution = Eigen::VectorXd::Zero(n);
    if (!sys.boundary_coupled.empty()) {
        std::vector<int> map(static_cast<size_t>(n), -1);
        for (size_t i = 0; i < sys.boundary_coupled.size(); ++i)
            map[static_cast<size_t>(sys.boundary_coupled[i])] = static_cast<int>(i);
        Eigen::MatrixXd B = Eigen::MatrixXd::Zero(static_cast<long>(bc_rows.size()),
                                                  static_cast<long>(sys.boundary_coupled.size()));
        Eigen::VectorXd g(static_cast<long>(bc_rows.size()));
        for (size_t r = 0; r < bc_rows.size(); ++r) {
            g(static_cast<long>(r)) = bc_vals[r];
            for (const auto& [idx, v] : bc_rows[r])
                if (map[static_cast<size_t>(idx)] >= 0) B(static_cast<long>(r), map[static_cast<size_t>(idx)]) = v;
        }
        const Eigen::VectorXd ub =
            Eigen::BDCSVD<Eigen::MatrixXd>(B, Eigen::ComputeThinU | Eigen::ComputeThinV).solve(g);
        for (size_t i = 0; i < sys.boundary_coupled.size(); ++i)
            sys.solution(sys.boundary_coupled[i]) = ub(static_cast<long>(i));
    }
    sys.assemble_seconds = now_seconds() - t0;
    return sys;
}

// ---------------------------------------------------------------- estimators

EstimatorField residual_estimator(const HierarchicalSpace& space, const DiscreteSystem& sys,
                                  const ModelProblem& problem) {
    C1MP_REQUIRE(problem.kind == ProblemKind::Poisson, parameter_error,
                 "residual estimator applies to the Poisson problem");
    const MultiPatchGeometry& geo = space.levels().geometry();
    const int p = geo.space0().p();
    EstimatorField field;
    for (const auto& [l, cell] : space.mesh().all_active()) {
        CellBasisTable tab = cell_basis_table(space, l, cell, p + 2, 2);
        double acc = 0;
        for (size_t q = 0; q < tab.points.size(); ++q) {
            double lap = 0;
            for (size_t i = 0; i < tab.idx.size(); ++i)
                lap += sys.solution(tab.idx[i]) * tab.vals[i][q].lap();
            const double r = problem.exact.f(tab.geom[q].point) + lap;
            acc += tab.weight[q] * r * r;
        }
        const double h = cell_diameter(geo, l, cell);
        field.push_back({Element{l, cell}, std::sqrt(h * h * acc)});
    }
    return field;
}

EstimatorField bubble_estimator(const HierarchicalSpace& space, const DiscreteSystem& sys,
                                const ModelProblem& problem) {
    C1MP_REQUIRE(problem.kind == ProblemKind::Biharmonic, parameter_error,
                 "bubble estimator applies to the biharmonic problem");
    const MultiPatchGeometry& geo = space.levels().geometry();
    const int p = geo.space0().p();
    const int nb1 = p - 2; ///< univariate bubbles of degree p+1
    const QuadRule rule = gauss_rule(p + 3);

    // univariate bubbles b_i(t) = t^2 (1-t)^2 B_{p-3,i}(t) as exact monomials
    std::vector<std::vector<double>> bub_coef(static_cast<size_t>(nb1));
    {
        auto binom = [](int nn, int kk) {
            double r = 1;
            for (int a = 1; a <= kk; ++a) r = r * (nn - kk + a) / a;
            return r;
        };
        for (int i = 0; i < nb1; ++i) {
            // B_{p-3,i}(t) = C(p-3,i) t^i (1-t)^{p-3-i}
            std::vector<double> bern(static_cast<size_t>(p - 2), 0.0);
            const int m = p - 3 - i;
            for (int a = 0; a <= m; ++a)
                bern[static_cast<size_t>(i + a)] = binom(p - 3, i) * binom(m, a) * ((a % 2) ? -1.0 : 1.0);
            // multiply by t^2 - 2t^3 + t^4
            std::vector<double> c(static_cast<size_t>(p + 2), 0.0);
            for (size_t d = 0; d < bern.size(); ++d) {
                c[d + 2] += bern[d];
                c[d + 3] += -2 * bern[d];
                c[d + 4] += bern[d];
            }
            bub_coef[static_cast<size_t>(i)] = std::move(c);
        }
    }
    auto bubble1 = [&](int i, double t, int der) -> double {
        const auto& c = bub_coef[static_cast<size_t>(i)];
        double v = 0;
        for (int d = static_cast<int>(c.size()) - 1; d >= der; --d) {
            double fac = 1;
            for (int a = 0; a < der; ++a) fac *= (d - a);
            v = v * t + fac * c[static_cast<size_t>(d)];
        }
        return v;
    };

    EstimatorField field;
    for (const auto& [l, cell] : space.mesh().all_active()) {
        const BsplineBasis& base = space.levels().level(l).space().base();
        const auto [a1, b1] = base.element(cell.e1);
        const auto [a2, b2] = base.element(cell.e2);
        const double len1 = b1 - a1, len2 = b2 - a2;
        const int nb = nb1 * nb1;

        Eigen::MatrixXd B = Eigen::MatrixXd::Zero(nb, nb);
        Eigen::VectorXd r = Eigen::VectorXd::Zero(nb);
        CellBasisTable tab = cell_basis_table(space, l, cell, p + 3, 2);
        size_t q = 0;
        for (size_t qi = 0; qi < rule.x.size(); ++qi)
            for (size_t qj = 0; qj < rule.x.size(); ++qj, ++q) {
                const double t1 = rule.x[qi], t2 = rule.x[qj];
                const double w = tab.weight[q];
                // physical laplacians of the bubbles
                std::vector<double> blap(static_cast<size_t>(nb));
                std::vector<double> bval(static_cast<size_t>(nb));
                for (int i = 0; i < nb1; ++i)
                    for (int j = 0; j < nb1; ++j) {
                        const double v = bubble1(i, t1, 0) * bubble1(j, t2, 0);
                        const double d1 = bubble1(i, t1, 1) * bubble1(j, t2, 0) / len1;
                        const double d2 = bubble1(i, t1, 0) * bubble1(j, t2, 1) / len2;
                        const double d11 = bubble1(i, t1, 2) * bubble1(j, t2, 0) / (len1 * len1);
                        const double d12 = bubble1(i, t1, 1) * bubble1(j, t2, 1) / (len1 * len2);
                        const double d22 = bubble1(i, t1, 0) * bubble1(j, t2, 2) / (len2 * len2);
                        const PhysicalDerivs ph =
                            physical_derivs(v, d1, d2, d11, d12, d22, tab.geom[q], 2);
                        blap[static_cast<size_t>(i * nb1 + j)] = ph.lap();
                        bval[static_cast<size_t>(i * nb1 + j)] = ph.v;
                    }
                double ulap = 0;
                for (size_t i = 0; i < tab.idx.size(); ++i)
                    ulap += sys.solution(tab.idx[i]) * tab.vals[i][q].lap();
                const double fval = problem.exact.f(tab.geom[q].point);
                for (int i = 0; i < nb; ++i) {
                    r(i) += w * (fval * bval[static_cast<size_t>(i)] -
                                 ulap * blap[static_cast<size_t>(i)]);
                    for (int j = 0; j < nb; ++j)
                        B(i, j) += w * blap[static_cast<size_t>(i)] * blap[static_cast<size_t>(j)];
                }
            }
        const Eigen::VectorXd e = B.ldlt().solve(r);
        field.push_back({Element{l, cell}, std::sqrt(std::max(0.0, e.dot(r)))});
    }
    return field;
}

std::vector<Element> dorfler_mark(const EstimatorField& field, double theta) {
    std::vector<std::pair<double, Element>> sorted;
    double total = 0;
    for (const auto& [e, v] : field) {
        sorted.push_back({v * v, e});
        total += v * v;
    }
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<Element> out;
    double acc = 0;
    for (const auto& [v2, e] : sorted) {
        if (acc >= theta * theta * total - 1e-14 * total) break;
        out.push_back(e);
        acc += v2;
    }
    return out;
}

// ---------------------------------------------------------------- errors

ErrorNorms error_norms(const HierarchicalSpace& space, const Eigen::VectorXd& coefs,
                       const ExactSolution& exact) {
    const int p = space.levels().geometry().space0().p();
    ErrorNorms out;
    for (const auto& [l, cell] : space.mesh().all_active()) {
        CellBasisTable tab = cell_basis_table(space, l, cell, p + 2, 2);
        for (size_t q = 0; q < tab.points.size(); ++q) {
            PhysicalDerivs uh;
            for (size_t i = 0; i < tab.idx.size(); ++i) {
                const double c = coefs(tab.idx[i]);
                uh.v += c * tab.vals[i][q].v;
                uh.grad += c * tab.vals[i][q].grad;
                uh.hxx += c * tab.vals[i][q].hxx;
                uh.hxy += c * tab.vals[i][q].hxy;
                uh.hyy += c * tab.vals[i][q].hyy;
            }
            const Vec2 x = tab.geom[q].point;
            const double w = tab.weight[q];
            const double dv = uh.v - exact.u(x);
            const Vec2 dg = uh.grad - exact.grad(x);
            const auto hx = exact.hess(x);
            const double dxx = uh.hxx - hx[0], dxy = uh.hxy - hx[1], dyy = uh.hyy - hx[2];
            out.l2 += w * dv * dv;
            out.h1 += w * dg.squaredNorm();
            out.h2 += w * (dxx * dxx + 2 * dxy * dxy + dyy * dyy);
        }
    }
    out.l2 = std::sqrt(out.l2);
    out.h1 = std::sqrt(out.h1);
    out.h2 = std::sqrt(out.h2);
    return out;
}

PhysicalDerivs eval_solution(const HierarchicalSpace& space, const Eigen::VectorXd& coefs,
                             int level, const CellId& cell, const Vec2& xi, int max_deriv) {
    PhysicalDerivs out;
    for (int idx : space.acting_on(level, cell)) {
        const PhysicalDerivs ph = space.eval_phys(idx, level, cell, xi, max_deriv);
        const double c = coefs(idx);
        out.v += c * ph.v;
        out.grad += c * ph.grad;
        out.hxx += c * ph.hxx;
        out.hxy += c * ph.hxy;
        out.hyy += c * ph.hyy;
    }
    return out;
}

// ---------------------------------------------------------------- loop

AdaptiveRun adaptive_loop(const MultiPatchGeometry& geo, const ModelProblem& problem,
                          const AdaptiveConfig& cfg) {
    C1Levels levels(geo);
    HierarchicalMesh mesh(geo);
    AdaptiveRun run{.ledger = {}, .final_mesh = mesh, .final_solution = {}, .complexity = {}};
    run.complexity.initial_elements = mesh.num_active();

    for (int iter = 0;; ++iter) {
        const double t0 = now_seconds();
        HierarchicalSpace space(levels, mesh, cfg.mode);
        DiscreteSystem sys = problem.kind == ProblemKind::Poisson
                                 ? assemble_poisson(space, problem, cfg.gamma_scale)
                                 : assemble_biharmonic(space, problem);
        solve_system(sys);
        const EstimatorField field = problem.kind == ProblemKind::Poisson
                                         ? residual_estimator(space, sys, problem)
                                         : bubble_estimator(space, sys, problem);
        double total2 = 0;
        for (const auto& [e, v] : field) total2 += v * v;
        const ErrorNorms err = error_norms(space, sys.solution, problem.exact);

        LedgerRow row;
        row.iter = iter;
        row.ndof = space.ndof();
        row.levels = mesh.num_levels();
        row.error = problem.kind == ProblemKind::Poisson ? err.h1 : err.h2;
        row.estimator = std::sqrt(total2);
        row.seconds = now_seconds() - t0;
        run.ledger.push_back(row);
        run.final_solution = sys.solution;

        if (iter + 1 >= cfg.max_iters || mesh.num_levels() >= cfg.max_levels ||
            space.ndof() >= cfg.max_ndof)
            break;

        std::vector<Element> marked;
        if (cfg.uniform) {
            for (const auto& [l, c] : mesh.all_active()) marked.push_back({l, c});
        } else {
            marked = dorfler_mark(field, cfg.theta);
        }
        if (marked.empty()) break;
        const long before = mesh.num_active();
        refine(levels, mesh, marked, cfg.adm);
        run.complexity.record(static_cast<long>(marked.size()), mesh.num_active());
        C1MP_REQUIRE(mesh.num_active() != before || row.estimator == 0, structure_error,
                     "adaptive loop stalled: marking produced no refinement");
    }
    run.final_mesh = mesh;
    return run;
}

double loglog_slope(const std::vector<LedgerRow>& ledger, int last_n) {
    const int n = static_cast<int>(ledger.size());
    const int m = std::min(last_n, n);
    C1MP_REQUIRE(m >= 2, parameter_error, "slope needs at least two ledger rows");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = n - m; i < n; ++i) {
        const double x = std::log10(static_cast<double>(ledger[static_cast<size_t>(i)].ndof));
        const double y = std::log10(std::max(ledger[static_cast<size_t>(i)].error, 1e-300));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

} // namespace c1mp
