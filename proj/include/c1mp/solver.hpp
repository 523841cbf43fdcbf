#pragma once

#include "c1mp/adaptivity.hpp"

#include <Eigen/Sparse>

#include <functional>

namespace c1mp {

enum class ProblemKind { Poisson, Biharmonic };

/// Manufactured exact solution with the derivatives needed for data and
/// error norms.
struct ExactSolution {
    std::function<double(const Vec2&)> u;
    std::function<Vec2(const Vec2&)> grad;
    std::function<std::array<double, 3>(const Vec2&)> hess; ///< (hxx, hxy, hyy)
    std::function<double(const Vec2&)> f;                   ///< -lap u or biharm u
};

struct ModelProblem {
    ProblemKind kind = ProblemKind::Poisson;
    ExactSolution exact;
};

/// Built-in model problems.
ModelProblem poisson_vertex_singularity(const Vec2& p0);       ///< u = |x-p0|^(4/3)
ModelProblem poisson_sine();                                   ///< u = sin(pi x) sin(pi y)
ModelProblem poisson_bilinear();                               ///< u = 1 + 2x - y + x y / 2
ModelProblem biharmonic_quadratic();                           ///< u = x^2 + 2xy - 3y^2 + x - y + 1
ModelProblem biharmonic_lshape_corner();                       ///< L-shape corner singularity
ModelProblem poisson_line_singularity();                       ///< u = |y-x|^(7/3) e^(-(y-x)^2)

struct DiscreteSystem {
    Eigen::SparseMatrix<double> matrix;
    Eigen::VectorXd rhs;
    Eigen::VectorXd solution; ///< coefficients over the active basis
    std::vector<int> boundary_coupled; ///< biharmonic: lifted function indices
    double assemble_seconds = 0;
    double solve_seconds = 0;
};

/// Values of all acting basis functions at the quadrature points of one cell.
struct CellBasisTable {
    std::vector<int> idx;
    std::vector<Vec2> points;              ///< parametric points
    std::vector<GeomEval> geom;            ///< geometry data per point
    std::vector<double> weight;            ///< quadrature weight x |det J|
    std::vector<std::vector<PhysicalDerivs>> vals; ///< [function][point]
};

CellBasisTable cell_basis_table(const HierarchicalSpace& space, int level, const CellId& cell,
                                int pts_per_dir, int max_deriv);

/// Physical diameter of a cell (largest distance between mapped corners).
double cell_diameter(const MultiPatchGeometry& geo, int level, const CellId& cell);

DiscreteSystem assemble_poisson(const HierarchicalSpace& space, const ModelProblem& problem,
                                double gamma_scale = 10.0);
void solve_system(DiscreteSystem& sys);

DiscreteSystem assemble_biharmonic(const HierarchicalSpace& space, const ModelProblem& problem);

/// Per-element error indicators (squared values NOT taken: these are the
/// estimator values eps_Q >= 0).
using EstimatorField = std::vector<std::pair<Element, double>>;

EstimatorField residual_estimator(const HierarchicalSpace& space, const DiscreteSystem& sys,
                                  const ModelProblem& problem);
EstimatorField bubble_estimator(const HierarchicalSpace& space, const DiscreteSystem& sys,
                                const ModelProblem& problem);

/// Minimal set with sum of squared indicators >= theta^2 * total.
std::vector<Element> dorfler_mark(const EstimatorField& field, double theta);

struct ErrorNorms {
    double l2 = 0, h1 = 0, h2 = 0; ///< L2 norm and H1/H2 seminorms of u - u_h
};
ErrorNorms error_norms(const HierarchicalSpace& space, const Eigen::VectorXd& coefs,
                       const ExactSolution& exact);

/// Evaluate the discrete solution at a parametric point of an active cell.
PhysicalDerivs eval_solution(const HierarchicalSpace& space, const Eigen::VectorXd& coefs,
                             int level, const CellId& cell, const Vec2& xi, int max_deriv = 2);

struct AdaptiveConfig {
    BasisMode mode = BasisMode::Plain;
    AdmissibilityConfig adm{2, AdmissibilityConfig::Variant::H};
    double theta = 0.8;
    double gamma_scale = 10.0; ///< Nitsche penalty = gamma_scale * (p+1)
    int max_levels = 12;
    long max_ndof = 80000;
    int max_iters = 40;
    bool uniform = false;
};

struct LedgerRow {
    int iter = 0;
    long ndof = 0;
    int levels = 0;
    double error = 0;     ///< H1 seminorm (Poisson) or H2 seminorm (biharmonic)
    double estimator = 0; ///< global estimator value
    double seconds = 0;
};

struct AdaptiveRun {
    std::vector<LedgerRow> ledger;
    HierarchicalMesh final_mesh;
    Eigen::VectorXd final_solution;
    ComplexityLedger complexity;
};

AdaptiveRun adaptive_loop(const MultiPatchGeometry& geo, const ModelProblem& problem,
                          const AdaptiveConfig& cfg);

/// Least-squares slope of log10(err) vs log10(ndof) over the last n rows.
double loglog_slope(const std::vector<LedgerRow>& ledger, int last_n);

} // namespace c1mp
