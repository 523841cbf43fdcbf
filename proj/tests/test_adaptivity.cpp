#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "c1mp/adaptivity.hpp"
#include "c1mp/cli_io.hpp"
#include "c1mp/verify.hpp"

#include <algorithm>
#include <random>
#include <set>

using namespace c1mp;

namespace {

Element random_element(const HierarchicalMesh& mesh, std::mt19937& rng) {
    const auto all = mesh.all_active();
    std::uniform_int_distribution<size_t> pick(0, all.size() - 1);
    const auto& [l, c] = all[pick(rng)];
    return {l, c};
}

} // namespace

TEST_CASE("element distance basics and BFS oracle agreement") {
    MultiPatchGeometry geo = builtin_geometry("square-2p", 3, 1, 3);
    C1Levels levels(geo);
    const int k0 = 3;

    const Element q{0, {0, 1, 1}};
    CHECK(element_distance(geo, k0, q, q).num == 0);
    CHECK(element_distance(geo, k0, q, {0, {0, 2, 1}}) == DyadicRational{1, 0});
    CHECK(element_distance(geo, k0, q, {0, {0, 2, 2}}) == DyadicRational{1, 0}); // diagonal
    // across the interface: patch 0 cell (0,1) touches patch 1
    const DyadicRational dcross = element_distance(geo, k0, {0, {0, 0, 1}}, {0, {1, 3, 0}});
    CHECK(dcross.num >= 1);

    // exhaustive agreement with the physical-corner BFS oracle on a 2-level mesh
    BfsDistanceOracle oracle(geo, geo.space0());
    std::vector<Element> elems;
    for (int p = 0; p < 2; ++p)
        for (int e1 = 0; e1 < 4; ++e1)
            for (int e2 = 0; e2 < 4; ++e2) {
                elems.push_back({0, {p, e1, e2}});
                elems.push_back({1, {p, 2 * e1, 2 * e2 + 1}});
            }
    for (const Element& a : elems)
        for (const Element& b : elems) {
            const DyadicRational d1 = element_distance(geo, k0, a, b);
            const DyadicRational d2 = oracle.dist(a.cell, a.level, b.cell, b.level);
            CHECK(d1 == d2);
        }
}

TEST_CASE("distance symmetry, triangle inequality and descendant bounds") {
    MultiPatchGeometry geo = builtin_geometry("threepatch-ev3", 3, 1, 3);
    C1Levels levels(geo);
    const int k0 = 3;
    std::mt19937 rng(77);
    std::uniform_int_distribution<int> lvl(0, 2);
    auto rand_elem = [&] {
        const int l = lvl(rng);
        const int nel = (1 << l) * (k0 + 1);
        std::uniform_int_distribution<int> c(0, nel - 1);
        std::uniform_int_distribution<int> pp(0, 2);
        return Element{l, {pp(rng), c(rng), c(rng)}};
    };
    for (int t = 0; t < 120; ++t) {
        const Element a = rand_elem(), b = rand_elem(), c = rand_elem();
        const auto dab = element_distance(geo, k0, a, b);
        const auto dba = element_distance(geo, k0, b, a);
        if (a.level == b.level) CHECK(dab == dba);
        const auto dac = element_distance(geo, k0, a, c);
        const auto dcb = element_distance(geo, k0, c, b);
        CHECK(dab <= dac + dcb);
        if (a.level == b.level) {
            CHECK((dab.num == 0) == (a == b));
        }
    }
    // descendant bounds: 2^-(l+k)(2^k(s-1)+1) <= dist(desc) <= 2^-(l+k)(2^k(s+1)-1)
    std::uniform_int_distribution<int> c0(0, 3), pp(0, 2), off(0, 1), kk(1, 2);
    for (int t = 0; t < 60; ++t) {
        const Element a{0, {pp(rng), c0(rng), c0(rng)}};
        const Element b{0, {pp(rng), c0(rng), c0(rng)}};
        const long s = element_distance(geo, k0, a, b).num;
        const int k = kk(rng);
        const int f = 1 << k;
        std::uniform_int_distribution<int> sub(0, f - 1);
        const Element ad{k, {a.cell.patch, a.cell.e1 * f + sub(rng), a.cell.e2 * f + sub(rng)}};
        const Element bd{k, {b.cell.patch, b.cell.e1 * f + sub(rng), b.cell.e2 * f + sub(rng)}};
        const long sd = element_distance(geo, k0, ad, bd).num;
        CHECK(sd >= f * (s - 1) + 1 - (s == 0 ? 1 : 0));
        CHECK(sd <= f * (s + 1) - 1);
    }
}

TEST_CASE("support extension matches brute force and the C_supp radius") {
    MultiPatchGeometry geo = builtin_geometry("threepatch-ev3", 3, 1, 5);
    C1Levels levels(geo);
    HierarchicalMesh mesh(geo);
    const C1LevelSpace& s0 = levels.level(0);
    const auto funcs = s0.all_functions();
    std::mt19937 rng(9);
    std::uniform_int_distribution<int> cc(0, 5), pp(0, 2);

    long long max_radius = 0;
    for (int t = 0; t < 10; ++t) {
        const Element q{0, {pp(rng), cc(rng), cc(rng)}};
        const auto ext = support_extension(levels, mesh, q, 0);
        // brute-force union over all functions whose support covers q
        std::set<CellId> brute;
        for (const FuncKey& f : funcs) {
            const auto& sup = s0.support_cells(f);
            if (std::find(sup.begin(), sup.end(), q.cell) == sup.end()) continue;
            brute.insert(sup.begin(), sup.end());
        }
        CHECK(std::set<CellId>(ext.begin(), ext.end()) == brute);
        for (const CellId& c : ext)
            max_radius = std::max(max_radius, element_distance(geo, 5, q, {0, c}).num);
    }
    // corner element picks up the full vertex support: radius = max(p, 5)
    const auto ext = support_extension(levels, mesh, {0, {0, 0, 0}}, 0);
    for (const CellId& c : ext)
        max_radius = std::max(max_radius, element_distance(geo, 5, {0, {0, 0, 0}}, {0, c}).num);
    CHECK(max_radius == 5);
}

TEST_CASE("admissibility neighborhoods: bounds and sentinels") {
    MultiPatchGeometry geo = builtin_geometry("threepatch-ev3", 3, 1, 3);
    C1Levels levels(geo);
    HierarchicalMesh mesh(geo);
    // deepen around the EV to get multi-level content
    refine(levels, mesh, {{0, {0, 0, 0}}}, {2, AdmissibilityConfig::Variant::H});
    refine(levels, mesh, {{1, {0, 0, 0}}}, {2, AdmissibilityConfig::Variant::H});

    // level underflow and the no-admissibility sentinel give empty sets
    CHECK(neighborhood(levels, mesh, {0, {0, 2, 2}}, {2, AdmissibilityConfig::Variant::H}).empty());
    CHECK(neighborhood(levels, mesh, {2, {0, 0, 0}}, {1, AdmissibilityConfig::Variant::H}).empty());

    const double csupp = 5;
    for (const auto variant :
         {AdmissibilityConfig::Variant::H, AdmissibilityConfig::Variant::T}) {
        for (const int mu : {2, 3}) {
            const double cn = variant == AdmissibilityConfig::Variant::H
                                  ? std::pow(2, mu - 1) * (csupp + 1) - 1
                                  : std::pow(2, mu - 2) * (csupp + 2) - 1;
            for (const auto& [l, c] : mesh.all_active()) {
                if (l - mu + 1 < 0) continue;
                for (const Element& nb :
                     neighborhood(levels, mesh, {l, c}, {mu, variant})) {
                    CHECK(nb.level == l - mu + 1);
                    const DyadicRational d = element_distance(geo, 3, {l, c}, nb);
                    CHECK(d.value() <= std::pow(2.0, -l) * cn + 1e-12);
                }
            }
        }
        // C_NT < C_NH
        CHECK(std::pow(2, 2 - 2) * (csupp + 2) - 1 < std::pow(2, 2 - 1) * (csupp + 1) - 1);
    }
}

TEST_CASE("vertex-patch neighborhood matches the five-element footprint") {
    MultiPatchGeometry geo = builtin_geometry("threepatch-ev3", 3, 1, 5);
    C1Levels levels(geo);
    HierarchicalMesh mesh(geo);

    // corner element at the EV on patch 0
    const Element q{0, {0, 0, 0}};
    const auto nb = vertex_patch_neighborhood(levels, mesh, q);
    CHECK(nb.size() == 4); // 5-element footprint minus Q
    for (const Element& e : nb) {
        CHECK(e.level == 0);
        CHECK(e.cell.patch == 0);
        CHECK(element_distance(geo, 5, q, e).num <= 2);
    }

    // non-vertex-adjacent element: empty
    CHECK(vertex_patch_neighborhood(levels, mesh, {0, {0, 2, 2}}).empty());

    // one marking sweep
    const auto marked = mark_vertex_patch(levels, mesh, {{0, {0, 2, 2}}});
    CHECK(marked.size() == 1);
    const auto marked2 = mark_vertex_patch(levels, mesh, {{0, {0, 0, 0}}});
    CHECK(marked2.size() == 5);
}

TEST_CASE("refine: trivial cases and rejection of too-coarse meshes") {
    MultiPatchGeometry geo = builtin_geometry("square-2p", 3, 1, 3);
    C1Levels levels(geo);
    HierarchicalMesh mesh(geo);
    const long n0 = mesh.num_active();
    CHECK(refine(levels, mesh, {}, {2, AdmissibilityConfig::Variant::H}) == 0);
    CHECK(mesh.num_active() == n0);

    MultiPatchGeometry coarse = builtin_geometry("square-2p", 3, 1, 2);
    C1Levels clevels(coarse);
    HierarchicalMesh cmesh(coarse);
    CHECK_THROWS_AS(refine(clevels, cmesh, {{0, {0, 0, 0}}}, {2, AdmissibilityConfig::Variant::H}),
                    parameter_error);
}

TEST_CASE("randomized refinement keeps admissibility, P1 and the vertex condition") {
    std::mt19937 rng(2024);
    for (const auto& [name, k0] : {std::pair{"threepatch-ev3", 3}, {"lshape-8p", 3}}) {
        MultiPatchGeometry geo = builtin_geometry(name, 3, 1, k0);
        C1Levels levels(geo);
        for (const auto variant :
             {AdmissibilityConfig::Variant::H, AdmissibilityConfig::Variant::T}) {
            for (const int mu : {2, 3}) {
                HierarchicalMesh mesh(geo);
                const AdmissibilityConfig cfg{mu, variant};
                for (int it = 0; it < 3; ++it) {
                    std::vector<Element> marked;
                    for (int m = 0; m < 3; ++m) marked.push_back(random_element(mesh, rng));
                    std::sort(marked.begin(), marked.end());
                    marked.erase(std::unique(marked.begin(), marked.end()), marked.end());
                    refine(levels, mesh, marked, cfg);
                }
                const BasisMode mode = variant == AdmissibilityConfig::Variant::T
                                           ? BasisMode::Truncated
                                           : BasisMode::Plain;
                HierarchicalSpace space(levels, mesh, mode);
                CHECK(space.check_P1());
                CHECK(space.audit_vertex_condition().empty());
                CHECK(admissibility_class(space) <= mu);
            }
        }
    }
}

TEST_CASE("no-admissibility mode still marks the vertex patch") {
    MultiPatchGeometry geo = builtin_geometry("lshape-8p", 3, 1, 3);
    C1Levels levels(geo);
    HierarchicalMesh mesh(geo);
    // mu = 1 disables the admissibility closure but keeps vertex-patch marking
    const long refined =
        refine(levels, mesh, {{0, {0, 0, 0}}}, {1, AdmissibilityConfig::Variant::H});
    CHECK(refined == 5); // corner cell plus the 4-cell vertex-patch footprint
    HierarchicalSpace space(levels, mesh, BasisMode::Plain);
    CHECK(space.audit_vertex_condition().empty());
    CHECK(space.check_P1());
}

TEST_CASE("refinement only replaces marked elements by their children") {
    MultiPatchGeometry geo = builtin_geometry("threepatch-ev3", 3, 1, 3);
    C1Levels levels(geo);
    HierarchicalMesh mesh(geo);
    refine(levels, mesh, {{0, {0, 0, 0}}}, {2, AdmissibilityConfig::Variant::H});
    const auto before = mesh.all_active();
    const std::set<std::pair<int, CellId>> before_set(before.begin(), before.end());
    const long refined = refine(levels, mesh, {{1, {0, 0, 0}}}, {2, AdmissibilityConfig::Variant::H});
    CHECK(mesh.num_active() == static_cast<long>(before.size()) + 3 * refined);
    // every formerly active element is still active or was replaced by its
    // four children
    for (const auto& [l, c] : before) {
        if (mesh.is_active(l, c)) continue;
        for (const CellId& ch : HierarchicalMesh::children(c)) CHECK(mesh.exists(l + 1, ch));
    }
    // no new elements appear besides children of refined ones
    for (const auto& [l, c] : mesh.all_active())
        if (!before_set.count({l, c}))
            CHECK(before_set.count({l - 1, HierarchicalMesh::parent(c)}));
}

TEST_CASE("admissibility class on simple configurations") {
    MultiPatchGeometry geo = builtin_geometry("square-2p", 3, 1, 3);
    C1Levels levels(geo);
    {
        HierarchicalMesh mesh(geo);
        HierarchicalSpace space(levels, mesh, BasisMode::Plain);
        CHECK(admissibility_class(space) == 1);
    }
    {
        // one isolated refined element, no closure
        HierarchicalMesh mesh(geo);
        mesh.refine_cells({{0, {0, 2, 2}}});
        HierarchicalSpace space(levels, mesh, BasisMode::Plain);
        CHECK(admissibility_class(space) == 2);
    }
}

TEST_CASE("complexity ledger on uniform and single-point refinement") {
    MultiPatchGeometry geo = builtin_geometry("square-2p", 3, 1, 3);
    C1Levels levels(geo);
    {
        // refine everything once: each element becomes 4, ratio = 3
        HierarchicalMesh mesh(geo);
        ComplexityLedger ledger;
        ledger.initial_elements = mesh.num_active();
        std::vector<Element> all;
        for (const auto& [l, c] : mesh.all_active()) all.push_back({l, c});
        refine(levels, mesh, all, {2, AdmissibilityConfig::Variant::H});
        ledger.record(static_cast<long>(all.size()), mesh.num_active());
        CHECK(ledger.ratio() == doctest::Approx(3.0));
    }
    {
        // repeatedly refine the element at a corner singularity: the ratio of
        // generated to marked elements stays bounded
        HierarchicalMesh mesh(geo);
        ComplexityLedger ledger;
        ledger.initial_elements = mesh.num_active();
        std::vector<double> ratios;
        for (int it = 0; it < 8; ++it) {
            const long marked =
                refine(levels, mesh, {{it, {0, 0, 0}}}, {2, AdmissibilityConfig::Variant::H});
            (void)marked;
            ledger.record(1, mesh.num_active());
            ratios.push_back(ledger.ratio());
        }
        // bounded, no monotone growth at the tail
        CHECK(ratios.back() < 200.0);
        CHECK(ratios.back() <= ratios[4] * 1.5 + 1.0);
    }
}

TEST_CASE("newly activated elements stay within the marking distance bound") {
    MultiPatchGeometry geo = builtin_geometry("threepatch-ev3", 3, 1, 3);
    C1Levels levels(geo);
    HierarchicalMesh mesh(geo);
    const AdmissibilityConfig cfg{2, AdmissibilityConfig::Variant::H};
    // build some depth first
    refine(levels, mesh, {{0, {0, 0, 0}}}, cfg);
    refine(levels, mesh, {{1, {0, 0, 0}}}, cfg);

    const double csupp = 5, cnchi = 2;
    const double cnh = std::pow(2, cfg.mu - 1) * (csupp + 1) - 1;
    const double cdist = (cnchi + cnh) / (1 - std::pow(2, 1 - cfg.mu));

    std::mt19937 rng(5);
    for (int t = 0; t < 5; ++t) {
        const Element q = random_element(mesh, rng);
        const auto before = mesh.all_active();
        std::set<std::pair<int, CellId>> before_set(before.begin(), before.end());
        refine(levels, mesh, {q}, cfg);
        for (const auto& [l, c] : mesh.all_active()) {
            if (before_set.count({l, c})) continue;
            const DyadicRational d = element_distance(geo, 3, {l, c}, q);
            CHECK(d.value() <= std::pow(2.0, -l + 1) * cdist + 1e-12);
        }
    }
}
