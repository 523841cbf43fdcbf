#include "c1mp/adaptivity.hpp"

#include <algorithm>
#include <deque>
#include <set>

namespace c1mp {

namespace {

// along-coordinate of a cell on a patch side, and its across-extremity test
int along_of(int side, const CellId& c) {
    return (side == SIDE_XI1_LO || side == SIDE_XI1_HI) ? c.e2 : c.e1;
}

bool touches_side(int side, const CellId& c, int nel) {
    switch (side) {
    case SIDE_XI1_LO: return c.e1 == 0;
    case SIDE_XI1_HI: return c.e1 == nel - 1;
    case SIDE_XI2_LO: return c.e2 == 0;
    default: return c.e2 == nel - 1;
    }
}

CellId cell_on_side(int side, int along, int nel) {
    switch (side) {
    case SIDE_XI1_LO: return {0, 0, along};
    case SIDE_XI1_HI: return {0, nel - 1, along};
    case SIDE_XI2_LO: return {0, along, 0};
    default: return {0, along, nel - 1};
    }
}

} // namespace

std::vector<CellId> level_neighbors(const MultiPatchGeometry& geo, int nel, const CellId& cell) {
    std::vector<CellId> out;
    // same-patch Chebyshev neighbors
    for (int d1 = -1; d1 <= 1; ++d1)
        for (int d2 = -1; d2 <= 1; ++d2) {
            if (d1 == 0 && d2 == 0) continue;
            const int e1 = cell.e1 + d1, e2 = cell.e2 + d2;
            if (e1 >= 0 && e1 < nel && e2 >= 0 && e2 < nel) out.push_back({cell.patch, e1, e2});
        }
    // across inner edges
    for (int side = 0; side < 4; ++side) {
        if (!touches_side(side, cell, nel)) continue;
        const int e = geo.edge_at(cell.patch, side);
        const EdgeTopo& et = geo.edge(e);
        if (et.kind != EntityKind::Inner) continue;
        // canonical along index of this cell
        int my_along = along_of(side, cell);
        bool my_rev = false;
        size_t my_side_idx = 0;
        for (size_t i = 0; i < et.sides.size(); ++i)
            if (et.sides[i].patch == cell.patch && et.sides[i].side == side) {
                my_rev = et.sides[i].reversed;
                my_side_idx = i;
            }
        const int canon = my_rev ? nel - 1 - my_along : my_along;
        const EdgeSideRef& other = et.sides[1 - my_side_idx];
        for (int d = -1; d <= 1; ++d) {
            const int oc = canon + d;
            if (oc < 0 || oc >= nel) continue;
            const int oa = other.reversed ? nel - 1 - oc : oc;
            CellId nb = cell_on_side(other.side, oa, nel);
            nb.patch = other.patch;
            out.push_back(nb);
        }
    }
    // across vertex fans
    for (int corner = 0; corner < 4; ++corner) {
        const Vec2 cp = corner_point(corner);
        const int ce1 = cp[0] < 0.5 ? 0 : nel - 1;
        const int ce2 = cp[1] < 0.5 ? 0 : nel - 1;
        if (cell.e1 != ce1 || cell.e2 != ce2) continue;
        const int v = geo.vertex_at(cell.patch, corner);
        for (const auto& fp : geo.vertex_frame(v).patches) {
            const auto [a, b] = fp.code.apply_index(0, 0, nel);
            const CellId nb{fp.patch, a, b};
            if (!(nb == cell)) out.push_back(nb);
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

namespace {

// BFS rings from `from`; returns the maximum ring index over the block of
// descendants of `target` (all at the same level grid of size nel).
int ring_to_block(const MultiPatchGeometry& geo, int nel, const CellId& from, int patch,
                  int e1_lo, int e1_hi, int e2_lo, int e2_hi) {
    auto in_block = [&](const CellId& c) {
        return c.patch == patch && c.e1 >= e1_lo && c.e1 <= e1_hi && c.e2 >= e2_lo && c.e2 <= e2_hi;
    };
    std::unordered_map<CellId, int, CellIdHash> ring;
    std::deque<CellId> queue;
    ring[from] = 0;
    queue.push_back(from);
    long remaining = static_cast<long>(e1_hi - e1_lo + 1) * (e2_hi - e2_lo + 1);
    if (in_block(from)) --remaining;
    int max_ring = 0;
    while (!queue.empty() && remaining > 0) {
        const CellId cur = queue.front();
        queue.pop_front();
        for (const CellId& nb : level_neighbors(geo, nel, cur)) {
            if (ring.count(nb)) continue;
            ring[nb] = ring[cur] + 1;
            if (in_block(nb)) {
                max_ring = std::max(max_ring, ring[nb]);
                --remaining;
            }
            queue.push_back(nb);
        }
    }
    C1MP_REQUIRE(remaining == 0, structure_error, "element_distance: disconnected mesh");
    return max_ring;
}

} // namespace

DyadicRational element_distance(const MultiPatchGeometry& geo, int k0, const Element& a,
                                const Element& b) {
    const Element* fine = &a;
    const Element* coarse = &b;
    if (a.level < b.level) std::swap(fine, coarse);
    const int lf = fine->level;
    const int nel = (1 << lf) * (k0 + 1);
    const int f = 1 << (lf - coarse->level);
    const int s = ring_to_block(geo, nel, fine->cell, coarse->cell.patch, coarse->cell.e1 * f,
                                coarse->cell.e1 * f + f - 1, coarse->cell.e2 * f,
                                coarse->cell.e2 * f + f - 1);
    return {s, lf};
}

std::vector<CellId> support_extension(const C1Levels& levels, const HierarchicalMesh& mesh,
                                      const Element& q, int k) {
    C1MP_REQUIRE(k >= 0 && k <= q.level, parameter_error,
                 "support extension level must not exceed the element level");
    const C1LevelSpace& space = levels.level(k);
    const CellId anc = mesh.ancestor(q.level, q.cell, k);
    std::vector<FuncKey> cands;
    space.functions_on_cell(anc, cands);
    std::set<CellId> cells;
    for (const FuncKey& f : cands) {
        const auto& sup = space.support_cells(f);
        if (std::find(sup.begin(), sup.end(), anc) == sup.end()) continue;
        cells.insert(sup.begin(), sup.end());
    }
    return {cells.begin(), cells.end()};
}

std::vector<Element> neighborhood(const C1Levels& levels, const HierarchicalMesh& mesh,
                                  const Element& q, const AdmissibilityConfig& cfg) {
    std::vector<Element> out;
    if (cfg.mu <= 1) return out;
    const int k = q.level - cfg.mu + 1;
    if (k < 0) return out;
    const int ext_level = cfg.variant == AdmissibilityConfig::Variant::T ? k + 1 : k;
    if (ext_level > q.level) return out; // extension level beyond the element level
    const std::vector<CellId> ext = support_extension(levels, mesh, q, ext_level);
    CellSet ext_set(ext.begin(), ext.end());
    std::set<CellId> result;
    if (ext_level == k) {
        for (const CellId& c : ext)
            if (mesh.is_active(k, c)) result.insert(c);
    } else {
        // T-variant: level-k active cells meeting the level-(k+1) region
        for (const CellId& c : ext) {
            const CellId up = HierarchicalMesh::parent(c);
            if (mesh.is_active(k, up)) result.insert(up);
        }
    }
    for (const CellId& c : result) out.push_back({k, c});
    return out;
}

std::vector<Element> vertex_patch_neighborhood(const C1Levels& levels,
                                               const HierarchicalMesh& mesh, const Element& q) {
    std::vector<Element> out;
    const MultiPatchGeometry& geo = levels.geometry();
    const int nel = mesh.elements_1d(q.level);
    const C1LevelSpace& space = levels.level(q.level);
    std::set<CellId> result;
    for (int corner = 0; corner < 4; ++corner) {
        const Vec2 cp = corner_point(corner);
        const int ce1 = cp[0] < 0.5 ? 0 : nel - 1;
        const int ce2 = cp[1] < 0.5 ? 0 : nel - 1;
        if (q.cell.e1 != ce1 || q.cell.e2 != ce2) continue;
        const int v = geo.vertex_at(q.cell.patch, corner);
        for (const auto& [j1, j2] : vertex_index_set()) {
            const FuncKey key{FuncKey::Vertex, v, j1, j2};
            for (const CellId& c : space.support_cells(key)) {
                if (c.patch != q.cell.patch || c == q.cell) continue;
                if (mesh.is_active(q.level, c)) result.insert(c);
            }
        }
    }
    for (const CellId& c : result) out.push_back({q.level, c});
    return out;
}

std::vector<Element> mark_vertex_patch(const C1Levels& levels, const HierarchicalMesh& mesh,
                                       std::vector<Element> marked) {
    std::set<Element> mset(marked.begin(), marked.end());
    for (const Element& q : marked)
        for (const Element& nb : vertex_patch_neighborhood(levels, mesh, q)) mset.insert(nb);
    return {mset.begin(), mset.end()};
}

long refine(const C1Levels& levels, HierarchicalMesh& mesh, std::vector<Element> marked,
            const AdmissibilityConfig& cfg) {
    C1MP_REQUIRE(levels.geometry().space0().k() >= 3, parameter_error,
                 "refinement requires at least 4x4 elements per patch on the coarsest mesh");
    std::set<Element> mset(marked.begin(), marked.end());
    for (const Element& q : mset)
        C1MP_REQUIRE(mesh.is_active(q.level, q.cell), structure_error,
                     "refine: marked element is not active");
    bool grew = true;
    while (grew) {
        grew = false;
        // vertex-patch marking sweep
        std::vector<Element> cur(mset.begin(), mset.end());
        for (const Element& q : cur)
            for (const Element& nb : vertex_patch_neighborhood(levels, mesh, q))
                grew |= mset.insert(nb).second;
        // admissibility neighborhoods
        cur.assign(mset.begin(), mset.end());
        for (const Element& q : cur)
            for (const Element& nb : neighborhood(levels, mesh, q, cfg))
                grew |= mset.insert(nb).second;
    }
    std::vector<std::pair<int, CellId>> to_refine;
    to_refine.reserve(mset.size());
    for (const Element& q : mset) to_refine.emplace_back(q.level, q.cell);
    mesh.refine_cells(to_refine);
    return static_cast<long>(to_refine.size());
}

int admissibility_class(const HierarchicalSpace& space) {
    int worst = 1;
    for (const auto& [l, cell] : space.mesh().all_active()) {
        std::set<int> levels_here;
        for (int idx : space.acting_on(l, cell))
            if (space.acts_on(idx, l, cell))
                levels_here.insert(space.functions()[static_cast<size_t>(idx)].level);
        worst = std::max(worst, static_cast<int>(levels_here.size()));
    }
    return worst;
}

} // namespace c1mp
