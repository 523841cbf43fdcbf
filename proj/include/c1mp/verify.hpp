#pragma once

#include "c1mp/c1basis.hpp"

#include <span>

namespace c1mp {

/// Sampling/threshold policy for collocation-rank decisions.
struct RankProbe {
    int points_per_dir = 0;    ///< 0: use p+2 of the space under test
    double threshold = 1e-9;   ///< relative to the largest singular value
};

/// Numerical rank of a dense matrix (singular values above
/// threshold * sigma_max).
int numeric_rank(const Eigen::MatrixXd& A, double threshold = 1e-9);

/// Rows: sample points on the given elements; columns: function values.
Eigen::MatrixXd collocation_matrix(const C1LevelSpace& space, std::span<const FuncKey> funcs,
                                   std::span<const CellId> cells, int points_per_dir = 0);

/// Rank of the function set restricted to the given elements.
int collocation_rank(const C1LevelSpace& space, std::span<const FuncKey> funcs,
                     std::span<const CellId> cells, const RankProbe& probe = {});

struct SmoothnessReport {
    double max_value_jump = 0;
    double max_normal_deriv_jump = 0;
};

/// Cross-interface finite differences in physical space (step 1e-5): value
/// mismatch of the two parameterizations and jump of the one-sided normal
/// derivatives.
SmoothnessReport fd_smoothness(const C1LevelSpace& space, const FuncKey& fn, int edge,
                               int samples = 30, double step = 1e-5);

/// Element distance oracle: breadth-first search over the element adjacency
/// graph built from snapped physical corner points (independent of the
/// combinatorial topology tables).
class BfsDistanceOracle {
public:
    BfsDistanceOracle(const MultiPatchGeometry& geo, const UnivariateSpace& space0);

    DyadicRational dist(const CellId& a, int level_a, const CellId& b, int level_b) const;

private:
    struct LevelGraph {
        int nel = 0;
        std::unordered_map<CellId, std::vector<CellId>, CellIdHash> adj;
    };
    const LevelGraph& graph(int level) const;
    // BFS returning ring index of every target descendant cell; -1 if unreachable.
    int max_ring_to_block(int level, const CellId& from, int patch, int e1_lo, int e1_hi,
                          int e2_lo, int e2_hi) const;

    const MultiPatchGeometry* geo_;
    int k0_;
    mutable std::vector<std::unique_ptr<LevelGraph>> graphs_;
};

} // namespace c1mp
