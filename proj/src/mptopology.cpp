#include "c1mp/mptopology.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace c1mp {

// ---------------------------------------------------------------- orientation

const std::array<OrientationCode, 8>& OrientationCode::all() {
    static const std::array<OrientationCode, 8> codes = {
        OrientationCode{false, false, false}, OrientationCode{false, true, false},
        OrientationCode{false, false, true},  OrientationCode{false, true, true},
        OrientationCode{true, false, false},  OrientationCode{true, true, false},
        OrientationCode{true, false, true},   OrientationCode{true, true, true}};
    return codes;
}

OrientationCode find_code(const std::vector<std::pair<Vec2, Vec2>>& samples) {
    for (const OrientationCode& c : OrientationCode::all()) {
        bool ok = true;
        for (const auto& [local, stored] : samples)
            if ((c.apply(local) - stored).norm() > 1e-9) {
                ok = false;
                break;
            }
        if (ok) return c;
    }
    throw topology_error("no orientation code matches the requested frame");
}

ControlNet reorient(const ControlNet& net, const OrientationCode& code) {
    const int n = net.n();
    ControlNet out;
    out.x.resize(n, n);
    out.y.resize(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const auto [a, b] = code.apply_index(i, j, n);
            out.x(i, j) = net.x(a, b);
            out.y(i, j) = net.y(a, b);
        }
    return out;
}

ControlNet bilinear_net(const UnivariateSpace& space, const Vec2& p00, const Vec2& p10,
                        const Vec2& p01, const Vec2& p11) {
    const int n = space.n();
    ControlNet net;
    net.x.resize(n, n);
    net.y.resize(n, n);
    for (int i = 0; i < n; ++i) {
        const double u = space.base().greville(i);
        for (int j = 0; j < n; ++j) {
            const double v = space.base().greville(j);
            const Vec2 p = (1 - u) * (1 - v) * p00 + u * (1 - v) * p10 + (1 - u) * v * p01 +
                           u * v * p11;
            net.x(i, j) = p[0];
            net.y(i, j) = p[1];
        }
    }
    return net;
}

GeomEval eval_net(const ControlNet& net, const BsplineBasis& basis, const Vec2& xi,
                  int max_deriv) {
    const SpanEval e1 = basis.eval(xi[0], max_deriv);
    const SpanEval e2 = basis.eval(xi[1], max_deriv);
    GeomEval g;
    Vec2 acc[3][3];
    for (auto& row : acc)
        for (auto& v : row) v.setZero();
    const int nd = std::min(max_deriv, 2);
    for (int a = 0; a < e1.count; ++a)
        for (int b = 0; b < e2.count; ++b) {
            const Vec2 p = net.point(e1.first + a, e2.first + b);
            for (int d1 = 0; d1 <= nd; ++d1)
                for (int d2 = 0; d2 + d1 <= nd; ++d2)
                    acc[d1][d2] += e1.deriv(d1)[static_cast<size_t>(a)] *
                                   e2.deriv(d2)[static_cast<size_t>(b)] * p;
        }
    g.point = acc[0][0];
    if (nd >= 1) {
        g.jac.col(0) = acc[1][0];
        g.jac.col(1) = acc[0][1];
    }
    if (nd >= 2) {
        g.d11 = acc[2][0];
        g.d12 = acc[1][1];
        g.d22 = acc[0][2];
    }
    return g;
}

// ---------------------------------------------------------------- side helpers

Vec2 corner_point(int corner) {
    switch (corner) {
    case 0: return {0, 0};
    case 1: return {1, 0};
    case 2: return {1, 1};
    default: return {0, 1};
    }
}

Vec2 side_point(int side, double t) {
    switch (side) {
    case SIDE_XI1_LO: return {0, t};
    case SIDE_XI1_HI: return {1, t};
    case SIDE_XI2_LO: return {t, 0};
    default: return {t, 1};
    }
}

std::array<int, 2> sides_at_corner(int corner) {
    switch (corner) {
    case 0: return {SIDE_XI1_LO, SIDE_XI2_LO};
    case 1: return {SIDE_XI1_HI, SIDE_XI2_LO};
    case 2: return {SIDE_XI1_HI, SIDE_XI2_HI};
    default: return {SIDE_XI1_LO, SIDE_XI2_HI};
    }
}

int corner_of_side_end(int side, int end) {
    switch (side) {
    case SIDE_XI1_LO: return end == 0 ? 0 : 3;
    case SIDE_XI1_HI: return end == 0 ? 1 : 2;
    case SIDE_XI2_LO: return end == 0 ? 0 : 1;
    default: return end == 0 ? 3 : 2;
    }
}

// ---------------------------------------------------------------- geometry

MultiPatchGeometry::MultiPatchGeometry(UnivariateSpace space0, std::vector<Patch> patches,
                                       std::vector<EdgeTopo> edges,
                                       std::vector<VertexTopo> vertices)
    : space0_(std::move(space0)), patches_(std::move(patches)), edges_(std::move(edges)),
      vertices_(std::move(vertices)) {
    for (size_t i = 0; i < edges_.size(); ++i) edges_[i].id = static_cast<int>(i);
    for (size_t i = 0; i < vertices_.size(); ++i) vertices_[i].id = static_cast<int>(i);
    validate_topology();
    build_frames();
    compute_gluing_all();
    build_vertex_frames();
}

GeomEval MultiPatchGeometry::eval_geometry(int patch, const Vec2& xi, int max_deriv) const {
    C1MP_REQUIRE(xi[0] >= -1e-12 && xi[0] <= 1 + 1e-12 && xi[1] >= -1e-12 && xi[1] <= 1 + 1e-12,
                 error, "parametric point outside the unit square");
    return eval_net(patches_[static_cast<size_t>(patch)].net, space0_.base(), xi, max_deriv);
}

void MultiPatchGeometry::validate_topology() {
    const int np = num_patches();
    C1MP_REQUIRE(np > 0, topology_error, "geometry needs at least one patch");
    const int n = space0_.n();
    for (const Patch& p : patches_)
        C1MP_REQUIRE(p.net.n() == n && p.net.y.rows() == n && p.net.x.cols() == n, topology_error,
                     "control net size does not match the spline space");

    side_edge_.assign(static_cast<size_t>(np), {-1, -1, -1, -1});
    for (const EdgeTopo& e : edges_) {
        C1MP_REQUIRE((e.kind == EntityKind::Inner && e.sides.size() == 2) ||
                         (e.kind == EntityKind::Boundary && e.sides.size() == 1),
                     topology_error, "edge ", e.id, " has inconsistent side count");
        for (const EdgeSideRef& s : e.sides) {
            C1MP_REQUIRE(s.patch >= 0 && s.patch < np && s.side >= 0 && s.side < 4,
                         topology_error, "edge ", e.id, " references an invalid side");
            int& slot = side_edge_[static_cast<size_t>(s.patch)][static_cast<size_t>(s.side)];
            C1MP_REQUIRE(slot == -1, topology_error, "patch side used by two edges");
            slot = e.id;
        }
    }
    for (int p = 0; p < np; ++p)
        for (int s = 0; s < 4; ++s)
            C1MP_REQUIRE(side_edge_[static_cast<size_t>(p)][static_cast<size_t>(s)] >= 0,
                         topology_error, "patch ", p, " side ", s, " not covered by any edge");

    corner_vertex_.assign(static_cast<size_t>(np), {-1, -1, -1, -1});
    for (const VertexTopo& v : vertices_) {
        C1MP_REQUIRE(!v.fan.empty(), topology_error, "vertex ", v.id, " has an empty fan");
        for (const auto& [p, c] : v.fan) {
            C1MP_REQUIRE(p >= 0 && p < np && c >= 0 && c < 4, topology_error,
                         "vertex ", v.id, " references an invalid corner");
            int& slot = corner_vertex_[static_cast<size_t>(p)][static_cast<size_t>(c)];
            C1MP_REQUIRE(slot == -1, topology_error, "patch corner used by two vertices");
            slot = v.id;
        }
    }
    for (int p = 0; p < np; ++p)
        for (int c = 0; c < 4; ++c)
            C1MP_REQUIRE(corner_vertex_[static_cast<size_t>(p)][static_cast<size_t>(c)] >= 0,
                         topology_error, "patch ", p, " corner ", c, " not assigned to a vertex");

    // Regularity: positive Jacobian determinant at Gauss points of every element.
    const QuadRule q = gauss_rule(space0_.p() + 2);
    const int nel = space0_.base().num_elements();
    for (int p = 0; p < np; ++p) {
        for (int e1 = 0; e1 < nel; ++e1)
            for (int e2 = 0; e2 < nel; ++e2) {
                const auto [a1, b1] = space0_.base().element(e1);
                const auto [a2, b2] = space0_.base().element(e2);
                for (double qx : q.x)
                    for (double qy : q.x) {
                        const Vec2 xi{a1 + (b1 - a1) * qx, a2 + (b2 - a2) * qy};
                        const GeomEval g = eval_geometry(p, xi, 1);
                        C1MP_REQUIRE(g.jac.determinant() > 1e-10, geometry_error,
                                     "patch ", p, " is not regular/positively oriented");
                    }
            }
    }
}

void MultiPatchGeometry::normalize_edges() {
    // Canonicalize side order and direction flags: the side-0 patch lies on
    // the right of the canonical edge direction, so both standard-form
    // reorientations are rotations (positive Jacobian).
    auto side_data = [&](const EdgeSideRef& s) {
        const Vec2 mid = side_point(s.side, 0.5);
        const GeomEval g = eval_net(patches_[static_cast<size_t>(s.patch)].net, space0_.base(), mid, 1);
        Vec2 tangent, inward;
        switch (s.side) {
        case SIDE_XI1_LO: tangent = g.jac.col(1); inward = g.jac.col(0); break;
        case SIDE_XI1_HI: tangent = g.jac.col(1); inward = -g.jac.col(0); break;
        case SIDE_XI2_LO: tangent = g.jac.col(0); inward = g.jac.col(1); break;
        default: tangent = g.jac.col(0); inward = -g.jac.col(1); break;
        }
        return std::pair{tangent, inward};
    };
    for (EdgeTopo& e : edges_) {
        const auto [ta, na] = side_data(e.sides[0]);
        const bool right_a = ta[0] * na[1] - ta[1] * na[0] < 0;
        if (e.kind == EntityKind::Boundary) {
            e.sides[0].reversed = !right_a;
            continue;
        }
        const auto [tb, nb] = side_data(e.sides[1]);
        const bool same_dir = ta.dot(tb) > 0;
        const bool right_b = same_dir ? (tb[0] * nb[1] - tb[1] * nb[0] < 0)
                                      : (tb[0] * nb[1] - tb[1] * nb[0] > 0);
        C1MP_REQUIRE(right_a != right_b, topology_error,
                     "edge ", e.id, ": both patches lie on the same side of the interface");
        const EdgeSideRef a = e.sides[0];
        const EdgeSideRef b = e.sides[1];
        if (right_a) {
            e.sides[0] = {a.patch, a.side, false};
            e.sides[1] = {b.patch, b.side, !same_dir};
        } else {
            e.sides[0] = {b.patch, b.side, !same_dir};
            e.sides[1] = {a.patch, a.side, false};
        }
    }
}

void MultiPatchGeometry::build_frames() {
    normalize_edges();
    frames_.resize(edges_.size());
    for (const EdgeTopo& e : edges_) {
        EdgeFrame f;
        // side 0: edge = {xi1 = 0}, traversed by xi2.
        {
            const EdgeSideRef& s = e.sides[0];
            auto tpar = [&](double xi) { return s.reversed ? 1.0 - xi : xi; };
            f.code0 = find_code({{Vec2{0, 0.3}, side_point(s.side, tpar(0.3))},
                                 {Vec2{0, 0.8}, side_point(s.side, tpar(0.8))}});
            f.net0 = reorient(patches_[static_cast<size_t>(s.patch)].net, f.code0);
        }
        if (e.kind == EntityKind::Inner) {
            const EdgeSideRef& s = e.sides[1];
            auto tpar = [&](double xi) { return s.reversed ? 1.0 - xi : xi; };
            f.code1 = find_code({{Vec2{0.3, 0}, side_point(s.side, tpar(0.3))},
                                 {Vec2{0.8, 0}, side_point(s.side, tpar(0.8))}});
            f.net1 = reorient(patches_[static_cast<size_t>(s.patch)].net, f.code1);

            // standard-form trace identity
            for (double xi : {0.0, 0.17, 0.33, 0.52, 0.71, 0.9, 1.0}) {
                const Vec2 pa = eval_net(f.net0, space0_.base(), {0, xi}, 0).point;
                const Vec2 pb = eval_net(f.net1, space0_.base(), {xi, 0}, 0).point;
                C1MP_REQUIRE((pa - pb).norm() < 1e-12 * (1 + pa.norm()), topology_error,
                             "edge ", e.id, " trace identity violated at xi=", xi);
            }
        }
        frames_[static_cast<size_t>(e.id)] = std::move(f);
    }
}

GluingData MultiPatchGeometry::compute_gluing(int edge, bool* feasible) const {
    const EdgeTopo& e = edges_[static_cast<size_t>(edge)];
    if (feasible) *feasible = true;
    GluingData g;
    if (e.kind == EntityKind::Boundary) return g; // alpha0 = 1, beta0 = 0

    const EdgeFrame& f = frames_[static_cast<size_t>(edge)];
    const BsplineBasis& basis = space0_.base();

    const int ns = 4 * (space0_.k() + 2) + 9;
    std::vector<double> xs(static_cast<size_t>(ns));
    for (int i = 0; i < ns; ++i) xs[static_cast<size_t>(i)] = (i + 0.5) / ns;

    // alpha pair: linear alpha0, alpha1 with alpha0*DB - alpha1*DA = 0.
    Eigen::MatrixXd C(ns, 4);
    for (int i = 0; i < ns; ++i) {
        const double xi = xs[static_cast<size_t>(i)];
        const GeomEval ga = eval_net(f.net0, basis, {0, xi}, 1);
        const GeomEval gb = eval_net(f.net1, basis, {xi, 0}, 1);
        const double da = ga.jac.determinant();
        const double db = gb.jac.determinant();
        C(i, 0) = db;
        C(i, 1) = db * xi;
        C(i, 2) = -da;
        C(i, 3) = -da * xi;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(C, Eigen::ComputeThinV);
    const double smax = svd.singularValues()(0);
    std::vector<int> null_cols;
    for (int i = 0; i < 4; ++i)
        if (svd.singularValues()(i) < 1e-10 * smax) null_cols.push_back(i);
    // For a non-AS-G1 net there is no exact nullspace; keep the best direction
    // so asg1_check can report the residual instead of failing outright.
    if (null_cols.empty()) null_cols.push_back(3);

    Eigen::MatrixXd V(4, static_cast<int>(null_cols.size()));
    for (size_t i = 0; i < null_cols.size(); ++i) V.col(static_cast<int>(i)) = svd.matrixV().col(null_cols[i]);

    Eigen::Matrix2d G;
    G << 1.0, 0.5, 0.5, 1.0 / 3.0;
    Eigen::Matrix4d M = Eigen::Matrix4d::Zero();
    M.block<2, 2>(0, 0) = G;
    M.block<2, 2>(2, 2) = G;
    Eigen::Vector4d target(1, 0, 1, 0);
    const Eigen::MatrixXd A = V.transpose() * M * V;
    const Eigen::VectorXd rhs = V.transpose() * M * target;
    const Eigen::VectorXd c = A.ldlt().solve(rhs);
    Eigen::Vector4d x = V * c;

    g.alpha0 = {x(0), x(1)};
    g.alpha1 = {x(2), x(3)};

    // positivity of alpha0*alpha1 on [0,1]; recorded, enforced on use
    auto prod = [&](double xi) { return g.alpha0(xi) * g.alpha1(xi); };
    double pmin = std::min(prod(0.0), prod(1.0));
    const double q2 = g.alpha0.a1 * g.alpha1.a1;
    if (std::abs(q2) > 1e-30) {
        const double xc = -(g.alpha0.a0 * g.alpha1.a1 + g.alpha1.a0 * g.alpha0.a1) / (2 * q2);
        if (xc > 0 && xc < 1) pmin = std::min(pmin, prod(xc));
    }
    if (feasible) *feasible = pmin > 0;
    if (pmin <= 0) return g; // betas are meaningless without valid alphas

    // beta from the G1 identity, fitted as a quadratic.
    Eigen::MatrixXd Vb(ns, 3);
    Eigen::VectorXd bb(ns);
    for (int i = 0; i < ns; ++i) {
        const double xi = xs[static_cast<size_t>(i)];
        const GeomEval ga = eval_net(f.net0, basis, {0, xi}, 1);
        const GeomEval gb = eval_net(f.net1, basis, {xi, 0}, 1);
        const Vec2 t = ga.jac.col(1);
        const Vec2 res = g.alpha0(xi) * gb.jac.col(1) + g.alpha1(xi) * ga.jac.col(0);
        Vb(i, 0) = 1;
        Vb(i, 1) = xi;
        Vb(i, 2) = xi * xi;
        bb(i) = -res.dot(t) / t.dot(t);
    }
    const Eigen::Vector3d bc = (Vb.transpose() * Vb).ldlt().solve(Vb.transpose() * bb);
    g.beta = {bc(0), bc(1), bc(2)};

    // split beta = alpha0*beta1 + alpha1*beta0 with minimal L2 norms
    Eigen::MatrixXd Cmat(3, 4);
    Cmat << g.alpha1.a0, 0, g.alpha0.a0, 0,
          g.alpha1.a1, g.alpha1.a0, g.alpha0.a1, g.alpha0.a0,
          0, g.alpha1.a1, 0, g.alpha0.a1;
    const Eigen::Vector3d bvec(g.beta.a0, g.beta.a1, g.beta.a2);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Cmat);
    Eigen::Vector4d xp = cod.solve(bvec);
    C1MP_REQUIRE((Cmat * xp - bvec).norm() < 1e-9 * (1 + bvec.norm()), geometry_error,
                 "edge ", edge, ": beta decomposition infeasible");
    // kernel of C
    Eigen::JacobiSVD<Eigen::MatrixXd> svdc(Cmat, Eigen::ComputeFullV);
    std::vector<int> ker;
    for (int i = 0; i < 4; ++i)
        if (i >= 3 || svdc.singularValues()(i) < 1e-12 * std::max(1.0, svdc.singularValues()(0)))
            ker.push_back(i);
    if (!ker.empty()) {
        Eigen::MatrixXd K(4, static_cast<int>(ker.size()));
        for (size_t i = 0; i < ker.size(); ++i) K.col(static_cast<int>(i)) = svdc.matrixV().col(ker[i]);
        const Eigen::MatrixXd KMK = K.transpose() * M * K;
        const Eigen::VectorXd z = -KMK.ldlt().solve(K.transpose() * M * xp);
        xp += K * z;
    }
    g.beta0 = {xp(0), xp(1)};
    g.beta1 = {xp(2), xp(3)};
    return g;
}

void MultiPatchGeometry::compute_gluing_all() {
    gluing_.resize(edges_.size());
    gluing_feasible_.assign(edges_.size(), true);
    for (const EdgeTopo& e : edges_) {
        bool ok = true;
        gluing_[static_cast<size_t>(e.id)] = compute_gluing(e.id, &ok);
        gluing_feasible_[static_cast<size_t>(e.id)] = ok;
    }
}

std::pair<Vec2, Vec2> MultiPatchGeometry::edge_vectors(int edge, double xi) const {
    const EdgeFrame& f = frames_[static_cast<size_t>(edge)];
    const GluingData& g = gluing(edge);
    const GeomEval ga = eval_net(f.net0, space0_.base(), {0, xi}, 1);
    const Vec2 t = ga.jac.col(1);
    const double a0 = g.alpha0(xi);
    C1MP_REQUIRE(std::abs(a0) > 1e-14, error, "alpha0 vanishes at xi=", xi);
    const Vec2 d = (ga.jac.col(0) + g.beta0(xi) * ga.jac.col(1)) / a0;
    return {t, d};
}

std::vector<AsG1EdgeReport> MultiPatchGeometry::asg1_check(double tol) const {
    std::vector<AsG1EdgeReport> out;
    for (const EdgeTopo& e : edges_) {
        if (e.kind != EntityKind::Inner) continue;
        const EdgeFrame& f = frames_[static_cast<size_t>(e.id)];
        const GluingData& g = gluing_[static_cast<size_t>(e.id)];
        AsG1EdgeReport rep;
        rep.edge = e.id;
        rep.min_alpha_product = 1e300;
        double scale = 0;
        for (int i = 0; i <= 50; ++i) {
            const double xi = i / 50.0;
            const GeomEval ga = eval_net(f.net0, space0_.base(), {0, xi}, 1);
            const GeomEval gb = eval_net(f.net1, space0_.base(), {xi, 0}, 1);
            const Vec2 res = g.alpha0(xi) * gb.jac.col(1) + g.alpha1(xi) * ga.jac.col(0) +
                             g.beta(xi) * ga.jac.col(1);
            rep.max_g1_residual = std::max(rep.max_g1_residual, res.norm());
            rep.max_trace_mismatch =
                std::max(rep.max_trace_mismatch, (ga.point - gb.point).norm());
            rep.min_alpha_product = std::min(rep.min_alpha_product, g.alpha0(xi) * g.alpha1(xi));
            scale = std::max(scale, ga.jac.norm());
        }
        rep.pass = rep.min_alpha_product > 0 && rep.max_g1_residual <= tol * std::max(1.0, scale);
        out.push_back(rep);
    }
    return out;
}

Vec2 MultiPatchGeometry::vertex_point(int v) const {
    const auto& [p, c] = vertices_[static_cast<size_t>(v)].fan.front();
    return eval_geometry(p, corner_point(c), 0).point;
}

void MultiPatchGeometry::build_vertex_frames() {
    vframes_.resize(vertices_.size());
    for (VertexTopo& v : vertices_) {
        const int nu = static_cast<int>(v.fan.size());
        VertexFrame frame;

        // Identify prec/next sides for each fan patch and kind of the vertex.
        std::vector<std::array<int, 2>> cs(static_cast<size_t>(nu)); // sides at corner
        for (int m = 0; m < nu; ++m)
            cs[static_cast<size_t>(m)] = sides_at_corner(v.fan[static_cast<size_t>(m)].second);

        for (int m = 0; m < nu; ++m)
            C1MP_REQUIRE(vertex_at(v.fan[static_cast<size_t>(m)].first,
                                   v.fan[static_cast<size_t>(m)].second) == v.id,
                         topology_error, "vertex ", v.id, ": fan corner belongs to another vertex");

        // Inner edges shared by two fan patches at this corner, excluding edges
        // already assigned to earlier slots.
        auto shared_edge = [&](int ma, int mb, const std::vector<int>& used) -> int {
            const int pa = v.fan[static_cast<size_t>(ma)].first;
            const int pb = v.fan[static_cast<size_t>(mb)].first;
            for (int s1 : cs[static_cast<size_t>(ma)])
                for (int s2 : cs[static_cast<size_t>(mb)]) {
                    const int e1 = edge_at(pa, s1);
                    if (e1 != edge_at(pb, s2)) continue;
                    if (edges_[static_cast<size_t>(e1)].kind != EntityKind::Inner) continue;
                    if (std::find(used.begin(), used.end(), e1) != used.end()) continue;
                    return e1;
                }
            return -1;
        };

        std::vector<int> inner_slots(static_cast<size_t>(nu), -1); // slot m: P_{m-1} to P_m
        std::vector<int> used;
        for (int m = 1; m < nu; ++m) {
            const int e = shared_edge(m - 1, m, used);
            C1MP_REQUIRE(e >= 0, topology_error, "vertex ", v.id,
                         ": consecutive fan patches share no inner edge");
            inner_slots[static_cast<size_t>(m)] = e;
            used.push_back(e);
        }
        const int wrap_edge = nu >= 3 ? shared_edge(nu - 1, 0, used) : -1;
        v.kind = wrap_edge >= 0 ? EntityKind::Inner : EntityKind::Boundary;

        std::vector<int> slot_edges;
        std::vector<int> prec_side(static_cast<size_t>(nu), -1), next_side(static_cast<size_t>(nu), -1);
        auto side_of = [&](int m, int e) {
            for (int s : cs[static_cast<size_t>(m)])
                if (edge_at(v.fan[static_cast<size_t>(m)].first, s) == e) return s;
            throw topology_error("vertex fan: edge not adjacent to the expected corner");
        };
        if (v.kind == EntityKind::Inner) {
            inner_slots[0] = wrap_edge;
            slot_edges = inner_slots;
            for (int m = 0; m < nu; ++m) {
                prec_side[static_cast<size_t>(m)] = side_of(m, slot_edges[static_cast<size_t>(m)]);
                next_side[static_cast<size_t>(m)] =
                    side_of(m, slot_edges[static_cast<size_t>((m + 1) % nu)]);
            }
        } else {
            if (nu == 1) {
                // lone patch at a corner: orient so the local Jacobian stays positive
                const auto& [pp, cc] = v.fan[0];
                for (int a = 0; a < 2; ++a) {
                    const int sp = cs[0][static_cast<size_t>(a)];
                    const int sn = cs[0][static_cast<size_t>(1 - a)];
                    const OrientationCode code = find_code(
                        {{Vec2{0, 0}, corner_point(cc)},
                         {Vec2{0.4, 0}, side_point(sp, corner_of_side_end(sp, 0) == cc ? 0.4 : 0.6)},
                         {Vec2{0, 0.4}, side_point(sn, corner_of_side_end(sn, 0) == cc ? 0.4 : 0.6)}});
                    const ControlNet loc = reorient(patches_[static_cast<size_t>(pp)].net, code);
                    if (eval_net(loc, space0_.base(), {0.01, 0.01}, 1).jac.determinant() > 0) {
                        prec_side[0] = sp;
                        next_side[0] = sn;
                        break;
                    }
                }
                C1MP_REQUIRE(prec_side[0] >= 0, topology_error, "vertex ", v.id,
                             ": no positively oriented local frame");
            } else {
                for (int m = 0; m < nu; ++m) {
                    if (m > 0) prec_side[static_cast<size_t>(m)] = side_of(m, inner_slots[static_cast<size_t>(m)]);
                    if (m + 1 < nu)
                        next_side[static_cast<size_t>(m)] = side_of(m, inner_slots[static_cast<size_t>(m) + 1]);
                }
                next_side[static_cast<size_t>(nu) - 1] =
                    cs[static_cast<size_t>(nu) - 1][0] == prec_side[static_cast<size_t>(nu) - 1]
                        ? cs[static_cast<size_t>(nu) - 1][1]
                        : cs[static_cast<size_t>(nu) - 1][0];
                prec_side[0] = cs[0][0] == next_side[0] ? cs[0][1] : cs[0][0];
            }
            slot_edges.assign(static_cast<size_t>(nu) + 1, -1);
            for (int m = 1; m < nu; ++m) slot_edges[static_cast<size_t>(m)] = inner_slots[static_cast<size_t>(m)];
            slot_edges[0] = edge_at(v.fan[0].first, prec_side[0]);
            slot_edges[static_cast<size_t>(nu)] =
                edge_at(v.fan[static_cast<size_t>(nu) - 1].first, next_side[static_cast<size_t>(nu) - 1]);
            C1MP_REQUIRE(edges_[static_cast<size_t>(slot_edges[0])].kind == EntityKind::Boundary &&
                             edges_[static_cast<size_t>(slot_edges[static_cast<size_t>(nu)])].kind ==
                                 EntityKind::Boundary,
                         topology_error, "vertex ", v.id, ": end slots must be boundary edges");
        }
        v.edge_ids = slot_edges;

        // Vertex-local orientation codes and nets.
        frame.patches.resize(static_cast<size_t>(nu));
        for (int m = 0; m < nu; ++m) {
            const auto& [pp, cc] = v.fan[static_cast<size_t>(m)];
            const int sp = prec_side[static_cast<size_t>(m)];
            const int sn = next_side[static_cast<size_t>(m)];
            const double tp = corner_of_side_end(sp, 0) == cc ? 0.4 : 0.6;
            const double tn = corner_of_side_end(sn, 0) == cc ? 0.4 : 0.6;
            OrientationCode code = find_code({{Vec2{0, 0}, corner_point(cc)},
                                              {Vec2{0.4, 0}, side_point(sp, tp)},
                                              {Vec2{0, 0.4}, side_point(sn, tn)}});
            auto& fp = frame.patches[static_cast<size_t>(m)];
            fp.patch = pp;
            fp.code = code;
            fp.net = reorient(patches_[static_cast<size_t>(pp)].net, code);
            const Mat2 J = eval_net(fp.net, space0_.base(), {0, 0}, 1).jac;
            frame.grad_norm_sum += std::max(std::abs(J(0, 0)) + std::abs(J(0, 1)),
                                            std::abs(J(1, 0)) + std::abs(J(1, 1)));
        }

        // Fan-edge data in the vertex-local frames.
        const int nslots = static_cast<int>(slot_edges.size());
        frame.edges.resize(static_cast<size_t>(nslots));
        v.edge_at_far_end.assign(static_cast<size_t>(nslots), false);
        for (int m = 0; m < nslots; ++m) {
            VertexFrame::FanEdge fe;
            fe.edge_id = slot_edges[static_cast<size_t>(m)];
            const EdgeTopo& e = edges_[static_cast<size_t>(fe.edge_id)];
            const EdgeSideRef& s0 = e.sides[0];
            // which canonical end carries this vertex
            const int c_at_0 = corner_of_side_end(s0.side, s0.reversed ? 1 : 0);
            const int c_at_1 = corner_of_side_end(s0.side, s0.reversed ? 0 : 1);
            bool far_end;
            if (vertex_at(s0.patch, c_at_0) == v.id)
                far_end = false;
            else if (vertex_at(s0.patch, c_at_1) == v.id)
                far_end = true;
            else
                throw topology_error("vertex fan references an edge that does not end at it");
            v.edge_at_far_end[static_cast<size_t>(m)] = far_end;
            if (!gluing_feasible_[static_cast<size_t>(fe.edge_id)]) {
                frame.edges[static_cast<size_t>(m)] = fe;
                continue; // not AS-G1: any use of this vertex will fail on gluing()
            }
            fe.glue = far_end ? gluing_[static_cast<size_t>(fe.edge_id)].flipped()
                              : gluing_[static_cast<size_t>(fe.edge_id)];

            const bool bnd = e.kind == EntityKind::Boundary;
            const int prev_patch = m - 1; // fan index of side-0 patch
            const int this_patch = m;     // fan index of side-1 patch
            fe.has_side0 = !bnd ? true : (m == nslots - 1);
            fe.has_side1 = !bnd ? true : (m == 0);

            if (!bnd) {
                // consistency of side roles with the fan ordering
                const int exp_side0 = frame.patches[static_cast<size_t>((prev_patch + nu) % nu)].patch;
                const int exp_side1 = frame.patches[static_cast<size_t>(this_patch % nu)].patch;
                const int can_side0 = e.sides[0].patch;
                const int can_side1 = e.sides[1].patch;
                const bool ok = far_end ? (can_side0 == exp_side1 && can_side1 == exp_side0)
                                        : (can_side0 == exp_side0 && can_side1 == exp_side1);
                C1MP_REQUIRE(ok, topology_error, "vertex ", v.id,
                             ": fan inconsistent with stored edge orientation on edge ", fe.edge_id);
            }

            // t and d at xi=0 in the vertex-local frame
            if (fe.has_side0) {
                const auto& net = frame.patches[static_cast<size_t>((prev_patch + nu) % nu)].net;
                const GeomEval g = eval_net(net, space0_.base(), {0, 0}, 2);
                const Vec2 t = g.jac.col(1);
                const Vec2 tp = g.d22;
                const double a0 = fe.glue.alpha0(0.0);
                const double a0p = fe.glue.alpha0.deriv();
                const Vec2 P = g.jac.col(0) + fe.glue.beta0(0.0) * t;
                const Vec2 Pp = g.d12 + fe.glue.beta0.deriv() * t + fe.glue.beta0(0.0) * tp;
                fe.t0 = t;
                fe.t0_d = tp;
                fe.d0 = P / a0;
                fe.d0_d = (Pp * a0 - P * a0p) / (a0 * a0);
            } else {
                const auto& net = frame.patches[static_cast<size_t>(this_patch)].net;
                const GeomEval g = eval_net(net, space0_.base(), {0, 0}, 2);
                const Vec2 t = g.jac.col(0);
                const Vec2 tp = g.d11;
                const double a1 = fe.glue.alpha1(0.0);
                const double a1p = fe.glue.alpha1.deriv();
                const Vec2 P = -(g.jac.col(1) + fe.glue.beta1(0.0) * t);
                const Vec2 Pp = -(g.d12 + fe.glue.beta1.deriv() * t + fe.glue.beta1(0.0) * tp);
                fe.t0 = t;
                fe.t0_d = tp;
                fe.d0 = P / a1;
                fe.d0_d = (Pp * a1 - P * a1p) / (a1 * a1);
            }
            frame.edges[static_cast<size_t>(m)] = fe;
        }
        vframes_[static_cast<size_t>(v.id)] = std::move(frame);
    }
}

Vec2 MultiPatchGeometry::param_of_point(int patch, const Vec2& x, Vec2 guess) const {
    Vec2 xi = guess;
    for (int it = 0; it < 60; ++it) {
        const GeomEval g = eval_geometry(patch, xi, 1);
        const Vec2 res = x - g.point;
        if (res.norm() < 1e-14 * (1 + x.norm())) break;
        Vec2 step = g.jac.partialPivLu().solve(res);
        xi += step;
        xi[0] = std::clamp(xi[0], 0.0, 1.0);
        xi[1] = std::clamp(xi[1], 0.0, 1.0);
    }
    return xi;
}

// ---------------------------------------------------------------- auto topology

MultiPatchGeometry build_multipatch(UnivariateSpace space0, std::vector<ControlNet> nets) {
    const int np = static_cast<int>(nets.size());
    const BsplineBasis& basis = space0.base();
    double scale = 1e-12;
    for (const ControlNet& n : nets)
        scale = std::max({scale, n.x.cwiseAbs().maxCoeff(), n.y.cwiseAbs().maxCoeff()});
    const double tol = 1e-9 * scale;

    auto side_samples = [&](int p, int s) {
        std::array<Vec2, 3> pts;
        int i = 0;
        for (double t : {0.25, 0.5, 0.75})
            pts[static_cast<size_t>(i++)] =
                eval_net(nets[static_cast<size_t>(p)], basis, side_point(s, t), 0).point;
        return pts;
    };

    // Match sides pairwise.
    std::vector<EdgeTopo> edges;
    std::vector<std::array<int, 4>> assigned(static_cast<size_t>(np), {-1, -1, -1, -1});
    for (int p = 0; p < np; ++p)
        for (int s = 0; s < 4; ++s) {
            if (assigned[static_cast<size_t>(p)][static_cast<size_t>(s)] >= 0) continue;
            const auto sa = side_samples(p, s);
            EdgeTopo e;
            e.sides.push_back({p, s, false});
            e.kind = EntityKind::Boundary;
            for (int q = 0; q < np && e.kind == EntityKind::Boundary; ++q)
                for (int s2 = 0; s2 < 4; ++s2) {
                    if (q == p && s2 == s) continue;
                    if (assigned[static_cast<size_t>(q)][static_cast<size_t>(s2)] >= 0) continue;
                    const auto sb = side_samples(q, s2);
                    const bool same = (sa[0] - sb[0]).norm() < tol && (sa[1] - sb[1]).norm() < tol &&
                                      (sa[2] - sb[2]).norm() < tol;
                    const bool rev = (sa[0] - sb[2]).norm() < tol && (sa[1] - sb[1]).norm() < tol &&
                                     (sa[2] - sb[0]).norm() < tol;
                    if (same || rev) {
                        e.kind = EntityKind::Inner;
                        e.sides.push_back({q, s2, rev});
                        assigned[static_cast<size_t>(q)][static_cast<size_t>(s2)] =
                            static_cast<int>(edges.size());
                        break;
                    }
                }
            assigned[static_cast<size_t>(p)][static_cast<size_t>(s)] = static_cast<int>(edges.size());
            edges.push_back(std::move(e));
        }

    // Cluster corners into vertices.
    struct Member {
        int patch, corner;
        int start_side, end_side; ///< inward directions: det[start, end] > 0
    };
    std::vector<Vec2> vpoints;
    std::vector<std::vector<Member>> members;
    for (int p = 0; p < np; ++p)
        for (int c = 0; c < 4; ++c) {
            const Vec2 x = eval_net(nets[static_cast<size_t>(p)], basis, corner_point(c), 0).point;
            int vid = -1;
            for (size_t i = 0; i < vpoints.size(); ++i)
                if ((vpoints[i] - x).norm() < tol) vid = static_cast<int>(i);
            if (vid < 0) {
                vid = static_cast<int>(vpoints.size());
                vpoints.push_back(x);
                members.emplace_back();
            }
            // inward side directions at the corner
            const auto ss = sides_at_corner(c);
            Vec2 dir[2];
            for (int a = 0; a < 2; ++a) {
                const int s = ss[static_cast<size_t>(a)];
                const int end = corner_of_side_end(s, 0) == c ? 0 : 1;
                const GeomEval g =
                    eval_net(nets[static_cast<size_t>(p)], basis, corner_point(c), 1);
                const Vec2 tan = (s == SIDE_XI1_LO || s == SIDE_XI1_HI) ? g.jac.col(1) : g.jac.col(0);
                dir[a] = (end == 0 ? 1.0 : -1.0) * tan;
            }
            Member m{p, c, ss[0], ss[1]};
            if (dir[0][0] * dir[1][1] - dir[0][1] * dir[1][0] < 0) std::swap(m.start_side, m.end_side);
            members[static_cast<size_t>(vid)].push_back(m);
        }

    // Order each fan counterclockwise using the combinatorial successor map.
    std::vector<VertexTopo> vertices;
    for (size_t vid = 0; vid < vpoints.size(); ++vid) {
        auto& mem = members[vid];
        const int nm = static_cast<int>(mem.size());
        auto edge_of = [&](const Member& m, int side) {
            return assigned[static_cast<size_t>(m.patch)][static_cast<size_t>(side)];
        };
        // successor of m: the member whose start side lies on m's end edge
        auto successor = [&](int i) -> int {
            const int e = edge_of(mem[static_cast<size_t>(i)], mem[static_cast<size_t>(i)].end_side);
            if (edges[static_cast<size_t>(e)].kind != EntityKind::Inner) return -1;
            for (int j = 0; j < nm; ++j)
                if (j != i && edge_of(mem[static_cast<size_t>(j)], mem[static_cast<size_t>(j)].start_side) == e)
                    return j;
            return -1;
        };
        int start = -1;
        for (int i = 0; i < nm && start < 0; ++i) {
            const int e = edge_of(mem[static_cast<size_t>(i)], mem[static_cast<size_t>(i)].start_side);
            if (edges[static_cast<size_t>(e)].kind == EntityKind::Boundary) start = i;
        }
        if (start < 0) start = 0; // inner vertex: any starting patch
        VertexTopo v;
        int cur = start;
        for (int step = 0; step < nm; ++step) {
            C1MP_REQUIRE(cur >= 0, topology_error, "vertex fan is not a simple chain");
            v.fan.emplace_back(mem[static_cast<size_t>(cur)].patch, mem[static_cast<size_t>(cur)].corner);
            cur = successor(cur);
        }
        vertices.push_back(std::move(v));
    }

    std::vector<Patch> patches;
    patches.reserve(nets.size());
    for (auto& n : nets) patches.push_back({std::move(n)});
    return {std::move(space0), std::move(patches), std::move(edges), std::move(vertices)};
}

PhysicalDerivs physical_derivs(double v, double g1, double g2, double g11, double g12, double g22,
                               const GeomEval& g, int max_deriv) {
    PhysicalDerivs out;
    out.v = v;
    if (max_deriv < 1) return out;
    const Mat2 Jinv = g.jac.inverse();
    const Vec2 grad_param(g1, g2);
    out.grad = Jinv.transpose() * grad_param;
    if (max_deriv < 2) return out;
    Mat2 Mh;
    Mh(0, 0) = g11 - out.grad[0] * g.d11[0] - out.grad[1] * g.d11[1];
    Mh(0, 1) = g12 - out.grad[0] * g.d12[0] - out.grad[1] * g.d12[1];
    Mh(1, 0) = Mh(0, 1);
    Mh(1, 1) = g22 - out.grad[0] * g.d22[0] - out.grad[1] * g.d22[1];
    const Mat2 H = Jinv.transpose() * Mh * Jinv;
    out.hxx = H(0, 0);
    out.hxy = 0.5 * (H(0, 1) + H(1, 0));
    out.hyy = H(1, 1);
    return out;
}

} // namespace c1mp
