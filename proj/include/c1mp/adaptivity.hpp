#pragma once

#include "c1mp/hierarchy.hpp"

namespace c1mp {

/// One element of a level mesh.
struct Element {
    int level = 0;
    CellId cell;

    bool operator==(const Element&) const = default;
    bool operator<(const Element& o) const {
        return std::tie(level, cell.patch, cell.e2, cell.e1) <
               std::tie(o.level, o.cell.patch, o.cell.e2, o.cell.e1);
    }
};

struct AdmissibilityConfig {
    int mu = 2; ///< mu = 1 disables the admissibility closure
    enum class Variant { H, T } variant = Variant::H;
};

/// Combinatorial adjacency of the full tensor mesh of one level: cells whose
/// closures intersect, including across edges and vertex fans.
std::vector<CellId> level_neighbors(const MultiPatchGeometry& geo, int nel, const CellId& cell);

/// Distance between elements (exact dyadic rational): same-level distance by
/// ring index, different levels by the maximum over descendants of the
/// coarser element at the finer level.
DyadicRational element_distance(const MultiPatchGeometry& geo, int k0, const Element& a,
                                const Element& b);

/// Multi-level support extension of Q at level k <= level(Q), discretized as
/// level-k cells.
std::vector<CellId> support_extension(const C1Levels& levels, const HierarchicalMesh& mesh,
                                      const Element& q, int k);

/// H- or T-admissibility neighborhood of an active element.
std::vector<Element> neighborhood(const C1Levels& levels, const HierarchicalMesh& mesh,
                                  const Element& q, const AdmissibilityConfig& cfg);

/// Same-level active elements of Q's patch inside the supports of the vertex
/// functions at the given patch corner, excluding Q itself.
std::vector<Element> vertex_patch_neighborhood(const C1Levels& levels,
                                               const HierarchicalMesh& mesh, const Element& q);

/// One marking sweep: add the vertex-patch neighborhoods of all marked
/// vertex-adjacent elements.
std::vector<Element> mark_vertex_patch(const C1Levels& levels, const HierarchicalMesh& mesh,
                                       std::vector<Element> marked);

/// Refinement closure: closes the marked set under vertex-patch marking and
/// admissibility neighborhoods, then refines. Returns the number of elements
/// actually refined.
long refine(const C1Levels& levels, HierarchicalMesh& mesh, std::vector<Element> marked,
            const AdmissibilityConfig& cfg);

/// Maximum, over active elements, of the number of distinct levels whose
/// basis functions act there.
int admissibility_class(const HierarchicalSpace& space);

/// Cumulative refinement bookkeeping for the linear-complexity estimate.
struct ComplexityLedger {
    long initial_elements = 0;
    long marked_total = 0;
    std::vector<long> marked_per_step;
    std::vector<long> active_after_step;

    void record(long marked, long active_now) {
        marked_total += marked;
        marked_per_step.push_back(marked);
        active_after_step.push_back(active_now);
    }
    double ratio() const {
        if (marked_total == 0) return 0;
        return static_cast<double>(active_after_step.empty()
                                       ? 0
                                       : active_after_step.back() - initial_elements) /
               static_cast<double>(marked_total);
    }
};

} // namespace c1mp
