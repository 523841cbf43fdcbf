#pragma once

#include "c1mp/common.hpp"
#include "c1mp/splinecore.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace c1mp {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Linear polynomial a0 + a1*x on [0,1].
struct Poly1 {
    double a0 = 0, a1 = 0;
    double operator()(double x) const { return a0 + a1 * x; }
    double deriv() const { return a1; }
    Poly1 flipped() const { return {a0 + a1, -a1}; } ///< p(1-x)
    Poly1 negated() const { return {-a0, -a1}; }
};

/// Quadratic polynomial a0 + a1*x + a2*x^2 on [0,1].
struct Poly2 {
    double a0 = 0, a1 = 0, a2 = 0;
    double operator()(double x) const { return a0 + (a1 + a2 * x) * x; }
    double deriv(double x) const { return a1 + 2 * a2 * x; }
};

/// Parametric symmetry of the unit square: maps local to stored coordinates.
/// stored = (swap ? (l2,l1) : (l1,l2)), then each axis optionally reversed.
struct OrientationCode {
    bool swap_axes = false;
    bool reverse_u = false;
    bool reverse_v = false;

    Vec2 apply(const Vec2& local) const {
        double u = swap_axes ? local[1] : local[0];
        double v = swap_axes ? local[0] : local[1];
        if (reverse_u) u = 1.0 - u;
        if (reverse_v) v = 1.0 - v;
        return {u, v};
    }
    /// Index-grid version of apply for an n x n coefficient grid.
    std::pair<int, int> apply_index(int i, int j, int n) const {
        int a = swap_axes ? j : i;
        int b = swap_axes ? i : j;
        if (reverse_u) a = n - 1 - a;
        if (reverse_v) b = n - 1 - b;
        return {a, b};
    }
    bool identity() const { return !swap_axes && !reverse_u && !reverse_v; }
    static const std::array<OrientationCode, 8>& all();
};

/// Tensor-product control net of a planar patch.
struct ControlNet {
    Eigen::MatrixXd x, y; ///< (i, j) multiplies N_i(xi1) N_j(xi2)

    int n() const { return static_cast<int>(x.rows()); }
    Vec2 point(int i, int j) const { return {x(i, j), y(i, j)}; }
};

/// Control net for the exact bilinear map with the given corners, on `space`.
ControlNet bilinear_net(const UnivariateSpace& space, const Vec2& p00, const Vec2& p10,
                        const Vec2& p01, const Vec2& p11);

/// Reorders a control net so that G(local) = F(code.apply(local)).
ControlNet reorient(const ControlNet& net, const OrientationCode& code);

struct Patch {
    ControlNet net;
};

/// Point, Jacobian and second derivatives of a geometry mapping.
struct GeomEval {
    Vec2 point{0, 0};
    Mat2 jac = Mat2::Zero();   ///< columns d1F, d2F
    Vec2 d11{0, 0}, d12{0, 0}, d22{0, 0};
};

GeomEval eval_net(const ControlNet& net, const BsplineBasis& basis, const Vec2& xi,
                  int max_deriv = 2);

/// Patch sides in stored coordinates.
enum Side : int { SIDE_XI1_LO = 0, SIDE_XI1_HI = 1, SIDE_XI2_LO = 2, SIDE_XI2_HI = 3 };
/// Patch corners: 0:(0,0) 1:(1,0) 2:(1,1) 3:(0,1).
Vec2 corner_point(int corner);
Vec2 side_point(int side, double t);
std::array<int, 2> sides_at_corner(int corner);
int corner_of_side_end(int side, int end);

struct EdgeSideRef {
    int patch = -1;
    int side = 0;
    bool reversed = false; ///< side parameter runs opposite to the edge parameter
};

enum class EntityKind { Inner, Boundary };

struct EdgeTopo {
    int id = -1;
    EntityKind kind = EntityKind::Boundary;
    std::vector<EdgeSideRef> sides; ///< 2 entries for inner, 1 for boundary
};

/// Gluing data of one edge in its canonical standard form.
struct GluingData {
    Poly1 alpha0{1, 0}, alpha1{1, 0};
    Poly1 beta0{0, 0}, beta1{0, 0};
    Poly2 beta{0, 0, 0}; ///< alpha0*beta1 + alpha1*beta0

    /// Data seen from the opposite end of the edge (sides swapped, parameter
    /// reversed, betas negated).
    GluingData flipped() const {
        GluingData g;
        g.alpha0 = alpha1.flipped();
        g.alpha1 = alpha0.flipped();
        g.beta0 = beta1.flipped().negated();
        g.beta1 = beta0.flipped().negated();
        g.beta = {-(beta.a0 + beta.a1 + beta.a2), beta.a1 + 2 * beta.a2, -beta.a2};
        return g;
    }
};

/// Canonical standard form of an edge: side-0 patch reoriented so the edge is
/// {xi1 = 0} traversed by xi2, side-1 patch so the edge is {xi2 = 0}.
struct EdgeFrame {
    OrientationCode code0, code1;
    ControlNet net0, net1; ///< net1 empty for boundary edges
};

struct VertexTopo {
    int id = -1;
    EntityKind kind = EntityKind::Boundary;
    std::vector<std::pair<int, int>> fan; ///< (patch, corner), counterclockwise
    std::vector<int> edge_ids;            ///< nu entries (inner) or nu+1 (boundary)
    std::vector<bool> edge_at_far_end;    ///< vertex at canonical xi=1 of that edge
};

/// Everything needed to build the six functions of one vertex: fan patches in
/// vertex-local orientation and fan-edge gluing data in the same frames.
struct VertexFrame {
    struct FanPatch {
        int patch = -1;
        OrientationCode code;
        ControlNet net;
    };
    struct FanEdge {
        int edge_id = -1;
        bool has_side0 = false, has_side1 = false;
        GluingData glue;        ///< in vertex-local orientation
        Vec2 t0, t0_d;          ///< t(0) and t'(0)
        Vec2 d0, d0_d;          ///< d(0) and d'(0)
    };
    std::vector<FanPatch> patches;
    std::vector<FanEdge> edges; ///< size nu (inner) or nu+1 (boundary)
    double grad_norm_sum = 0;   ///< sum over fan of ||grad F(0,0)||_inf
};

struct AsG1EdgeReport {
    int edge = -1;
    double min_alpha_product = 0; ///< min over [0,1] of alpha0*alpha1
    double max_g1_residual = 0;   ///< residual of the G1 identity
    double max_trace_mismatch = 0;
    bool pass = false;
};

class MultiPatchGeometry {
public:
    MultiPatchGeometry(UnivariateSpace space0, std::vector<Patch> patches,
                       std::vector<EdgeTopo> edges, std::vector<VertexTopo> vertices);

    const UnivariateSpace& space0() const { return space0_; }
    int num_patches() const { return static_cast<int>(patches_.size()); }
    int num_edges() const { return static_cast<int>(edges_.size()); }
    int num_vertices() const { return static_cast<int>(vertices_.size()); }
    const Patch& patch(int i) const { return patches_[static_cast<size_t>(i)]; }
    const EdgeTopo& edge(int i) const { return edges_[static_cast<size_t>(i)]; }
    const VertexTopo& vertex(int i) const { return vertices_[static_cast<size_t>(i)]; }

    GeomEval eval_geometry(int patch, const Vec2& xi, int max_deriv = 2) const;

    /// Gluing data of an edge; throws geometry_error if the edge admits no
    /// valid linear gluing (not AS-G1).
    const GluingData& gluing(int edge) const {
        C1MP_REQUIRE(gluing_feasible_[static_cast<size_t>(edge)], geometry_error,
                     "edge ", edge, ": no linear gluing with alpha0*alpha1 > 0 exists (not AS-G1)");
        return gluing_[static_cast<size_t>(edge)];
    }
    bool gluing_feasible(int edge) const { return gluing_feasible_[static_cast<size_t>(edge)]; }
    const EdgeFrame& edge_frame(int edge) const { return frames_[static_cast<size_t>(edge)]; }
    const VertexFrame& vertex_frame(int v) const { return vframes_[static_cast<size_t>(v)]; }

    /// Edge id attached to a patch side, and vertex id at a patch corner.
    int edge_at(int patch, int side) const { return side_edge_[static_cast<size_t>(patch)][static_cast<size_t>(side)]; }
    int vertex_at(int patch, int corner) const { return corner_vertex_[static_cast<size_t>(patch)][static_cast<size_t>(corner)]; }

    /// t and d vectors of an edge at parameter xi (canonical frame).
    std::pair<Vec2, Vec2> edge_vectors(int edge, double xi) const;

    std::vector<AsG1EdgeReport> asg1_check(double tol) const;

    /// Physical coordinates of the vertex.
    Vec2 vertex_point(int v) const;

    /// Inverts the geometry mapping of a patch by Newton iteration.
    Vec2 param_of_point(int patch, const Vec2& x, Vec2 guess) const;

private:
    void validate_topology();
    void normalize_edges();
    void build_frames();
    void compute_gluing_all();
    void build_vertex_frames();
    GluingData compute_gluing(int edge, bool* feasible = nullptr) const;

    UnivariateSpace space0_;
    std::vector<Patch> patches_;
    std::vector<EdgeTopo> edges_;
    std::vector<VertexTopo> vertices_;
    std::vector<GluingData> gluing_;
    std::vector<bool> gluing_feasible_;
    std::vector<EdgeFrame> frames_;
    std::vector<VertexFrame> vframes_;
    std::vector<std::array<int, 4>> side_edge_;
    std::vector<std::array<int, 4>> corner_vertex_;
};

/// Finds the orientation code mapping local to stored coordinates such that
/// the given sample pairs (local, stored) all match. Throws if none does.
OrientationCode find_code(const std::vector<std::pair<Vec2, Vec2>>& samples);

/// Derives the full edge/vertex topology of a conforming multi-patch
/// configuration from the control nets alone (matching sides by sampled
/// physical points, ordering vertex fans counterclockwise).
MultiPatchGeometry build_multipatch(UnivariateSpace space0, std::vector<ControlNet> nets);

/// Physical value/gradient/Hessian of a scalar with known parametric
/// derivatives on a patch with geometry data `g`.
struct PhysicalDerivs {
    double v = 0;
    Vec2 grad{0, 0};
    double hxx = 0, hxy = 0, hyy = 0;
    double lap() const { return hxx + hyy; }
};
PhysicalDerivs physical_derivs(double v, double g1, double g2, double g11, double g12, double g22,
                               const GeomEval& g, int max_deriv = 2);

} // namespace c1mp
