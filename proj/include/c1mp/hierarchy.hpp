#pragma once

#include "c1mp/c1basis.hpp"

#include <unordered_set>

namespace c1mp {

using CellSet = std::unordered_set<CellId, CellIdHash>;

/// Dyadically refined hierarchical mesh over a multi-patch domain. Level-l
/// cells exist when their parent is refined; active cells are the leaves.
class HierarchicalMesh {
public:
    explicit HierarchicalMesh(const MultiPatchGeometry& geo);

    const MultiPatchGeometry& geometry() const { return *geo_; }

    /// Number of levels that carry cells (active anywhere).
    int num_levels() const { return static_cast<int>(active_.size()); }
    int elements_1d(int level) const { return (1 << level) * (k0_ + 1); }

    const CellSet& active(int level) const;
    const CellSet& refined(int level) const;

    bool is_active(int level, const CellId& c) const { return active(level).count(c) > 0; }
    bool is_refined(int level, const CellId& c) const { return refined(level).count(c) > 0; }
    /// Cell exists in the forest (lies inside Omega^level).
    bool exists(int level, const CellId& c) const;

    static CellId parent(const CellId& c) { return {c.patch, c.e1 / 2, c.e2 / 2}; }
    static std::array<CellId, 4> children(const CellId& c);
    CellId ancestor(int from_level, const CellId& c, int to_level) const;

    /// Replaces the given active cells by their four children each.
    void refine_cells(const std::vector<std::pair<int, CellId>>& cells);

    long num_active() const;
    /// All active elements ordered by (level, patch, e2, e1).
    std::vector<std::pair<int, CellId>> all_active() const;

private:
    const MultiPatchGeometry* geo_;
    int k0_;
    std::vector<CellSet> active_;
    std::vector<CellSet> refined_;
};

/// Cached two-level refinement masks: the expansion of each level-l basis
/// function in the basis of level l+1, computed by dyadic refinement of the
/// extraction followed by the analysis operator.
class TwoLevelMasks {
public:
    explicit TwoLevelMasks(const C1Levels& levels) : levels_(&levels) {}

    const std::vector<std::pair<FuncKey, double>>& mask(int level, const FuncKey& key) const;

private:
    const C1Levels* levels_;
    struct LevelCache {
        std::unordered_map<FuncKey, std::vector<std::pair<FuncKey, double>>, FuncKeyHash> masks;
        std::unordered_map<int, SparseRow> refine_rows;
    };
    const SparseRow& refine_row(int level, int j) const;
    mutable std::vector<LevelCache> cache_;
};

enum class BasisMode { Plain, Truncated };

struct ActiveFunction {
    int level = 0;
    FuncKey key;
};

/// Hierarchical (or truncated hierarchical) C1 spline space over a mesh.
class HierarchicalSpace {
public:
    HierarchicalSpace(const C1Levels& levels, const HierarchicalMesh& mesh, BasisMode mode);

    const C1Levels& levels() const { return *levels_; }
    const HierarchicalMesh& mesh() const { return *mesh_; }
    BasisMode mode() const { return mode_; }

    int ndof() const { return static_cast<int>(functions_.size()); }
    const std::vector<ActiveFunction>& functions() const { return functions_; }
    int index_of(int level, const FuncKey& key) const;

    /// Indices of basis functions acting on an active cell.
    std::vector<int> acting_on(int level, const CellId& cell) const;

    /// Local B-spline coefficient window of basis function idx on a cell of
    /// its mesh, expressed at the cell's level (windows are (p+1) x (p+1),
    /// offset at the first basis index nonzero on the cell). In truncated
    /// mode this applies the truncation chain.
    Eigen::MatrixXd local_window(int idx, int cell_level, const CellId& cell) const;

    /// Evaluate basis function idx at a parametric point of an active cell.
    ParamDerivs eval_param(int idx, int cell_level, const CellId& cell, const Vec2& xi,
                           int max_deriv = 2) const;
    PhysicalDerivs eval_phys(int idx, int cell_level, const CellId& cell, const Vec2& xi,
                             int max_deriv = 2) const;

    /// Evaluate basis function idx at a parametric point of a patch by
    /// locating the deepest active cell containing it.
    PhysicalDerivs eval_phys_point(int idx, int patch, const Vec2& xi, int max_deriv = 2) const;

    /// Deepest active cell containing a parametric point of a patch.
    std::pair<int, CellId> active_cell_at(int patch, const Vec2& xi) const;

    /// Truncation chain of an active function: for each level from its own to
    /// the deepest, the (restricted) expansion over that level's basis.
    const std::vector<std::vector<std::pair<FuncKey, double>>>& chain(int idx) const;

    const TwoLevelMasks& masks() const { return masks_; }

    /// Whether a basis function acts on a cell (coefficient-level check in
    /// truncated mode).
    bool acts_on(int idx, int cell_level, const CellId& cell) const;

    /// Property (P1): per level, the active level-l functions restricted to
    /// the active cells of that level have full collocation rank.
    bool check_P1(std::vector<int>* witness_levels = nullptr) const;

    /// Full column rank of the whole active basis over all active elements
    /// (Gram-based collocation check).
    bool check_global_rank() const;

    /// Vertex condition: every active vertex function has an active
    /// same-level element adjacent to its vertex. Returns violators.
    std::vector<ActiveFunction> audit_vertex_condition() const;

private:
    void select_active();
    void build_reverse_index() const;

    const C1Levels* levels_;
    const HierarchicalMesh* mesh_;
    BasisMode mode_;
    TwoLevelMasks masks_;
    std::vector<ActiveFunction> functions_;
    std::unordered_map<FuncKey, int, FuncKeyHash> index_by_key_[32];
    mutable std::vector<std::unordered_map<CellId, std::vector<int>, CellIdHash>> reverse_;
    mutable std::vector<std::unique_ptr<std::vector<std::vector<std::pair<FuncKey, double>>>>>
        chains_;
};

} // namespace c1mp
