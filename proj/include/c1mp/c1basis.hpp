#pragma once

#include "c1mp/mptopology.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <unordered_map>
#include <vector>

namespace c1mp {

/// One element of the tensor mesh of some level: patch id + cell coordinates.
struct CellId {
    int patch = 0;
    int e1 = 0, e2 = 0;

    bool operator==(const CellId&) const = default;
    bool operator<(const CellId& o) const {
        return std::tie(patch, e1, e2) < std::tie(o.patch, o.e1, o.e2);
    }
};

struct CellIdHash {
    size_t operator()(const CellId& c) const {
        return std::hash<long long>()((static_cast<long long>(c.patch) << 42) ^
                                      (static_cast<long long>(c.e1) << 21) ^ c.e2);
    }
};

/// Identifies one basis function of a single-level C1 space.
struct FuncKey {
    enum Kind : uint8_t { Interior = 0, Edge = 1, Vertex = 2 };
    Kind kind = Interior;
    int entity = 0; ///< patch, edge or vertex id
    int j1 = 0;     ///< interior: first index; edge: univariate index; vertex: j1
    int j2 = 0;     ///< interior: second index; edge: type (0 trace, 1 derivative); vertex: j2

    bool operator==(const FuncKey&) const = default;
    bool operator<(const FuncKey& o) const {
        return std::tie(kind, entity, j2, j1) < std::tie(o.kind, o.entity, o.j2, o.j1);
    }
};

struct FuncKeyHash {
    size_t operator()(const FuncKey& k) const {
        size_t h = (static_cast<size_t>(k.kind) << 60) ^ (static_cast<size_t>(k.entity) << 40) ^
                   (static_cast<size_t>(static_cast<uint32_t>(k.j1)) << 20) ^
                   static_cast<uint32_t>(k.j2);
        return std::hash<size_t>()(h);
    }
};

/// Dense coefficient block over the tensor B-splines of one patch,
/// covering indices [i0, i0+rows) x [j0, j0+cols).
struct PatchBlock {
    int patch = 0;
    int i0 = 0, j0 = 0;
    Eigen::MatrixXd c;
};

/// Extraction of a C1 function: B-spline coefficients on every patch where it
/// does not vanish.
struct Extraction {
    std::vector<PatchBlock> blocks;

    const PatchBlock* block_on(int patch) const {
        for (const auto& b : blocks)
            if (b.patch == patch) return &b;
        return nullptr;
    }
};

/// Values and parametric derivatives up to order 2 of a scalar function.
struct ParamDerivs {
    double v = 0, d1 = 0, d2 = 0, d11 = 0, d12 = 0, d22 = 0;
};

/// Sparse coefficient grids per patch, keyed by (i, j) B-spline index.
using CoefGrids = std::vector<std::map<std::pair<int, int>, double>>;

/// The C1 isogeometric space A on one dyadic refinement level.
class C1LevelSpace {
public:
    C1LevelSpace(const MultiPatchGeometry& geo, int level);

    const MultiPatchGeometry& geometry() const { return *geo_; }
    int level() const { return level_; }
    const UnivariateSpace& space() const { return space_; }
    int num_elements_1d() const { return space_.base().num_elements(); }

    int n() const { return space_.n(); }
    int n0() const { return space_.n0(); }
    int n1() const { return space_.n1(); }

    /// Interior index range I = [2, n-3].
    int interior_lo() const { return 2; }
    int interior_hi() const { return n() - 3; }
    /// Edge function counts: trace indices [3, n0-4], derivative [2, n1-3].
    int trace_lo() const { return 3; }
    int trace_hi() const { return n0() - 4; }
    int deriv_lo() const { return 2; }
    int deriv_hi() const { return n1() - 3; }
    int edge_function_count() const {
        return (trace_hi() - trace_lo() + 1) + (deriv_hi() - deriv_lo() + 1);
    }

    long dimension() const;

    /// Scaling factor sigma of a vertex at this level.
    double sigma(int vertex) const;

    /// Deterministic global ordering: interiors by patch then j, edge
    /// functions by edge then j, vertex functions by vertex then j.
    std::vector<FuncKey> all_functions() const;

    /// Superset of the functions whose support touches the cell (index
    /// arithmetic only; exact up to coefficients that vanish accidentally).
    void functions_on_cell(const CellId& cell, std::vector<FuncKey>& out) const;

    /// Extraction of a function (cached).
    const Extraction& extraction(const FuncKey& key) const;

    /// Cells of this level's mesh where the extraction is nonzero.
    const std::vector<CellId>& support_cells(const FuncKey& key) const;

    /// Value and parametric derivatives at a point of a patch.
    ParamDerivs eval_param(const FuncKey& key, int patch, const Vec2& xi, int max_deriv = 2) const;

    /// Value and physical derivatives.
    PhysicalDerivs eval_phys(const FuncKey& key, int patch, const Vec2& xi, int max_deriv = 2) const;

    /// Set of (patch, B-spline index) pairs with nonzero extraction.
    std::vector<std::tuple<int, int, int>> coeff_support(const FuncKey& key) const;

    /// Expands a member of the space, given by per-patch B-spline coefficient
    /// grids at this level, in the basis. Throws structure_error if the
    /// remainder exceeds tol (input not in the space).
    std::vector<std::pair<FuncKey, double>> analyze(CoefGrids grids, double tol = 1e-9) const;

    /// Helper for analyze/tests: evaluates a coefficient grid on one patch.
    ParamDerivs eval_grid(const std::map<std::pair<int, int>, double>& grid, int patch_unused,
                          const Vec2& xi, int max_deriv = 2) const;

private:
    struct VertexBasisData {
        std::array<Extraction, 6> fn;
    };

    const Extraction& edge_fn(int edge, int j1, int type) const;
    const VertexBasisData& vertex_basis(int v) const;
    Extraction build_edge_fn(int edge, int j1, int type) const;
    VertexBasisData build_vertex_basis(int v) const;

    SparseRow to_base(const BsplineBasis& src, int j, const Poly1* mult, bool derivative) const;

    const MultiPatchGeometry* geo_;
    int level_;
    UnivariateSpace space_;
    double pk1_; ///< p * (k+1) at this level

    mutable std::unordered_map<FuncKey, Extraction, FuncKeyHash> fn_cache_;
    mutable std::unordered_map<FuncKey, std::vector<CellId>, FuncKeyHash> supp_cache_;
    mutable std::unordered_map<int, VertexBasisData> vertex_cache_;
};

/// Lazily constructed per-level C1 spaces over one geometry.
class C1Levels {
public:
    explicit C1Levels(const MultiPatchGeometry& geo) : geo_(&geo) {}

    const C1LevelSpace& level(int l) const;
    const MultiPatchGeometry& geometry() const { return *geo_; }

private:
    const MultiPatchGeometry* geo_;
    mutable std::vector<std::unique_ptr<C1LevelSpace>> levels_;
};

/// Index ordering of J_chi: (0,0),(1,0),(2,0),(0,1),(1,1),(0,2).
std::array<std::pair<int, int>, 6> vertex_index_set();

} // namespace c1mp
