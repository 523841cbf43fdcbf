#pragma once

#include "c1mp/hierarchy.hpp"
#include "c1mp/mptopology.hpp"
#include "c1mp/solver.hpp"

#include <string>
#include <vector>

namespace c1mp {

/// Names: "threepatch-ev3", "lshape-8p", "square-2p", "square-1p".
MultiPatchGeometry builtin_geometry(const std::string& name, int p, int r, int k);

bool is_builtin_geometry(const std::string& name);

/// Rotationally symmetric fan of nu rhombi around an interior vertex of
/// valence nu (nu >= 3). Used to exercise high-valence vertices.
MultiPatchGeometry make_fan_geometry(int nu, int p, int r, int k);

/// Serializes a geometry to the versioned structured-text format
/// (JSON-compatible; deterministic byte-for-byte output).
std::string write_geometry(const MultiPatchGeometry& g);

/// Parses the format produced by write_geometry.
MultiPatchGeometry read_geometry(const std::string& text);

MultiPatchGeometry load_geometry_file(const std::string& path);
void save_geometry_file(const MultiPatchGeometry& g, const std::string& path);

/// Mesh snapshot: versioned JSON with the active cells per level.
std::string write_mesh(const HierarchicalMesh& mesh);
HierarchicalMesh read_mesh(const MultiPatchGeometry& geo, const std::string& text);

/// Validated run configuration for the solve command.
struct RunConfig {
    std::string geometry = "threepatch-ev3"; ///< builtin name or file path
    std::string problem = "poisson";         ///< poisson | biharmonic
    std::string solution = "auto";           ///< auto|singular|sine|bilinear|quadratic|corner
    int p = 3;
    int r = -1; ///< default p-2
    int k = 3;
    std::string mode = "plain";   ///< plain | truncated
    std::string variant = "H";    ///< H | T
    int mu = 2;
    double theta = 0.8;
    int max_levels = 12;
    long max_ndof = 80000;
    int max_iters = 40;
    bool uniform = false;
    std::string csv_out, svg_mesh_out, svg_plot_out;

    void validate() const;
};

MultiPatchGeometry make_geometry(const RunConfig& cfg);
ModelProblem make_problem(const RunConfig& cfg, const MultiPatchGeometry& geo);

/// Ledger CSV: iter,ndof,levels,err_h1|err_h2,estimator,seconds.
std::string ledger_csv(const std::vector<LedgerRow>& rows, ProblemKind kind);
void save_text(const std::string& text, const std::string& path);

/// SVG of the hierarchical mesh with elements colored by level.
std::string svg_mesh(const MultiPatchGeometry& geo, const HierarchicalMesh& mesh);
/// Log-log convergence plot from (label, ndof, error) series.
struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};
std::string svg_loglog(const std::vector<PlotSeries>& series);

} // namespace c1mp
