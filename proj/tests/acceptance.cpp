// Acceptance suite: runs the project's verification criteria end to end and
// prints one pass/fail line per criterion.

#include "c1mp/cli_io.hpp"
#include "c1mp/solver.hpp"
#include "c1mp/verify.hpp"

#include <chrono>
#include <cstring>
#include <iostream>
#include <random>
#include <set>

using namespace c1mp;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
    void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double fn_scale(const C1LevelSpace& s, const FuncKey& f) {
    double m = 0;
    for (const auto& b : s.extraction(f).blocks) m = std::max(m, b.c.cwiseAbs().maxCoeff());
    return std::max(m, 1e-10);
}

// ---------------------------------------------------------------- criterion 1

Outcome criterion1() {
    Outcome out;
    MultiPatchGeometry geo = builtin_geometry("threepatch-ev3", 3, 1, 5);
    C1LevelSpace space(geo, 0);
    const CellId Q{0, 0, 1}; // F^(0)((0,1/6) x (1/6,1/3))

    std::vector<FuncKey> live, vfns;
    for (const FuncKey& f : space.all_functions()) {
        const auto& sup = space.support_cells(f);
        if (std::find(sup.begin(), sup.end(), Q) == sup.end()) continue;
        live.push_back(f);
        if (f.kind == FuncKey::Vertex) vfns.push_back(f);
    }
    const std::vector<CellId> cells{Q};
    const int rank_all = collocation_rank(space, live, cells);
    const int rank_v = collocation_rank(space, vfns, cells);
    out.require(live.size() == 18, "expected 18 nonvanishing functions, got " +
                                       std::to_string(live.size()));
    out.require(rank_all <= 16, "rank " + std::to_string(rank_all) + " > 16");
    out.require(vfns.size() == 6 && rank_v < 6,
                "vertex rank " + std::to_string(rank_v) + " not < 6");
    out.note("18 functions, rank " + std::to_string(rank_all) + ", vertex rank " +
             std::to_string(rank_v));
    return out;
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion2() {
    Outcome out;
    std::set<size_t> valences;
    auto check_geo = [&](const MultiPatchGeometry& geo, const std::string& name, bool builtin) {
        C1LevelSpace s(geo, 0);
        if (builtin)
            out.require(static_cast<long>(s.all_functions().size()) == s.dimension(),
                        name + ": dimension formula mismatch");
        for (int v = 0; v < geo.num_vertices(); ++v) {
            valences.insert(geo.vertex(v).fan.size());
            int count = 0;
            for (const FuncKey& f : s.all_functions())
                if (f.kind == FuncKey::Vertex && f.entity == v) ++count;
            out.require(count == 6, name + ": vertex " + std::to_string(v) + " has " +
                                        std::to_string(count) + " functions");
        }
    };
    check_geo(builtin_geometry("square-1p", 3, 1, 3), "square-1p", true);
    check_geo(builtin_geometry("square-2p", 3, 1, 3), "square-2p", true);
    check_geo(builtin_geometry("threepatch-ev3", 3, 1, 5), "threepatch-ev3", true);
    check_geo(builtin_geometry("lshape-8p", 3, 1, 3), "lshape-8p", true);
    check_geo(make_fan_geometry(5, 3, 1, 3), "fan-5", false);
    check_geo(make_fan_geometry(6, 3, 1, 3), "fan-6", false);
    for (size_t nu = 1; nu <= 6; ++nu)
        out.require(valences.count(nu) == 1, "no vertex of valence " + std::to_string(nu));
    out.note("valences 1..6 covered, 6 functions each, dimension formula on 4 builtins");
    return out;
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion3() {
    Outcome out;
    double worst_v = 0, worst_fd = 0, worst_c2 = 0;
    for (const auto& [name, k] : {std::pair{"square-1p", 3},
                                  {"square-2p", 3},
                                  {"threepatch-ev3", 5},
                                  {"lshape-8p", 3}}) {
        MultiPatchGeometry geo = builtin_geometry(name, 3, 1, k);
        C1LevelSpace s(geo, 0);
        const auto funcs = s.all_functions();
        for (int e = 0; e < geo.num_edges(); ++e) {
            if (geo.edge(e).kind != EntityKind::Inner) continue;
            const int p0 = geo.edge(e).sides[0].patch;
            const int p1 = geo.edge(e).sides[1].patch;
            const EdgeFrame& fr = geo.edge_frame(e);
            for (const FuncKey& f : funcs) {
                const Extraction& ex = s.extraction(f);
                if (!ex.block_on(p0) && !ex.block_on(p1)) continue;
                const double sc = fn_scale(s, f);
                // value continuity from the two parameterizations
                for (int i = 0; i < 30; ++i) {
                    const double xi = (i + 0.5) / 30;
                    const double a = s.eval_param(f, p0, fr.code0.apply({0, xi}), 0).v;
                    const double b = s.eval_param(f, p1, fr.code1.apply({xi, 0}), 0).v;
                    worst_v = std::max(worst_v, std::abs(a - b) / sc);
                }
                // G1 derivative continuity by physical-space finite differences
                const SmoothnessReport rep = fd_smoothness(s, f, e, 10);
                worst_fd = std::max(worst_fd, rep.max_normal_deriv_jump / sc);
            }
        }
        // C2 interpolation at every vertex
        const auto jset = vertex_index_set();
        for (int v = 0; v < geo.num_vertices(); ++v) {
            const double sig = s.sigma(v);
            for (size_t jj = 0; jj < 6; ++jj) {
                const FuncKey f{FuncKey::Vertex, v, jset[jj].first, jset[jj].second};
                for (const auto& [pp, cc] : geo.vertex(v).fan) {
                    const PhysicalDerivs ph = s.eval_phys(f, pp, corner_point(cc), 2);
                    const std::array<double, 6> got{ph.v,       ph.grad[0], ph.hxx,
                                                    ph.grad[1], ph.hxy,     ph.hyy};
                    for (size_t zz = 0; zz < 6; ++zz) {
                        const double expect =
                            zz == jj ? std::pow(sig, jset[jj].first + jset[jj].second) : 0.0;
                        const double scz = std::pow(sig, jset[zz].first + jset[zz].second);
                        worst_c2 = std::max(worst_c2, std::abs(got[zz] - expect) / scz);
                    }
                }
            }
        }
    }
    out.require(worst_v < 1e-9, "value jump " + std::to_string(worst_v));
    out.require(worst_fd < 1e-6, "FD normal-derivative jump " + std::to_string(worst_fd));
    out.require(worst_c2 < 1e-6, "C2 residual " + std::to_string(worst_c2));
    char buf[128];
    std::snprintf(buf, sizeof buf, "value %.1e, G1 FD %.1e, C2 %.1e", worst_v, worst_fd, worst_c2);
    out.note(buf);
    return out;
}

// ---------------------------------------------------------------- criterion 4

Outcome criterion4() {
    Outcome out;
    std::mt19937 rng(42);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double worst_mask = 0, worst_trunc = 0;
    for (const auto& [name, k] : {std::pair{"square-1p", 3},
                                  {"square-2p", 3},
                                  {"threepatch-ev3", 5},
                                  {"lshape-8p", 3}}) {
        MultiPatchGeometry geo = builtin_geometry(name, 3, 1, k);
        C1Levels levels(geo);
        TwoLevelMasks masks(levels);
        for (int l = 0; l < 2; ++l) {
            const C1LevelSpace& coarse = levels.level(l);
            const C1LevelSpace& fine = levels.level(l + 1);
            for (const FuncKey& f : coarse.all_functions()) {
                const auto& m = masks.mask(l, f);
                const double sc = fn_scale(coarse, f);
                for (int t = 0; t < 4; ++t) {
                    const int patch =
                        std::uniform_int_distribution<int>(0, geo.num_patches() - 1)(rng);
                    const Vec2 xi{u01(rng), u01(rng)};
                    const double cv = coarse.eval_param(f, patch, xi, 0).v;
                    double fv = 0;
                    for (const auto& [mk, mv] : m) fv += mv * fine.eval_param(mk, patch, xi, 0).v;
                    worst_mask = std::max(worst_mask, std::abs(cv - fv) / sc);
                }
            }
        }

        // truncated child equals mother on the unrefined region
        HierarchicalMesh mesh(geo);
        C1Levels levels2(geo);
        refine(levels2, mesh, {{0, {0, 0, 0}}}, {2, AdmissibilityConfig::Variant::T});
        refine(levels2, mesh, {{1, {0, 0, 0}}}, {2, AdmissibilityConfig::Variant::T});
        HierarchicalSpace tsp(levels2, mesh, BasisMode::Truncated);
        for (int idx = 0; idx < tsp.ndof(); ++idx) {
            const auto& [l, key] = tsp.functions()[static_cast<size_t>(idx)];
            const double sc = fn_scale(levels2.level(l), key);
            int tested = 0;
            for (const CellId& c : levels2.level(l).support_cells(key)) {
                if (!mesh.is_active(l, c) || tested >= 2) continue;
                ++tested;
                const BsplineBasis& base = levels2.level(l).space().base();
                const auto [a1, b1] = base.element(c.e1);
                const auto [a2, b2] = base.element(c.e2);
                const Vec2 xi{a1 + (b1 - a1) * u01(rng), a2 + (b2 - a2) * u01(rng)};
                const double mother = levels2.level(l).eval_param(key, c.patch, xi, 0).v;
                const double child = tsp.eval_param(idx, l, c, xi, 0).v;
                worst_trunc = std::max(worst_trunc, std::abs(mother - child) / sc);
            }
        }
    }
    out.require(worst_mask < 1e-10, "mask identity residual " + std::to_string(worst_mask));
    out.require(worst_trunc < 1e-10, "truncation identity residual " + std::to_string(worst_trunc));
    char buf[96];
    std::snprintf(buf, sizeof buf, "mask %.1e, truncation %.1e", worst_mask, worst_trunc);
    out.note(buf);
    return out;
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion5() {
    Outcome out;
    std::mt19937 rng(7);
    long runs_total = 0;
    for (const auto& [name, k] : {std::pair{"square-1p", 3},
                                  {"square-2p", 3},
                                  {"threepatch-ev3", 3},
                                  {"lshape-8p", 3}}) {
        MultiPatchGeometry geo = builtin_geometry(name, 3, 1, k);
        C1Levels levels(geo);
        int runs = 0;
        for (const auto variant :
             {AdmissibilityConfig::Variant::H, AdmissibilityConfig::Variant::T}) {
            for (const int mu : {2, 3}) {
                for (int seq = 0; seq < 3; ++seq) {
                    HierarchicalMesh mesh(geo);
                    const AdmissibilityConfig cfg{mu, variant};
                    const int steps = seq == 0 ? 5 : 4;
                    for (int it = 0; it < steps; ++it) {
                        const auto all = mesh.all_active();
                        std::uniform_int_distribution<size_t> pick(0, all.size() - 1);
                        std::vector<Element> marked;
                        for (int m = 0; m < 2; ++m) {
                            const auto& [l, c] = all[pick(rng)];
                            marked.push_back({l, c});
                        }
                        std::sort(marked.begin(), marked.end());
                        marked.erase(std::unique(marked.begin(), marked.end()), marked.end());
                        refine(levels, mesh, marked, cfg);
                        ++runs;
                        ++runs_total;

                        const BasisMode mode = variant == AdmissibilityConfig::Variant::T
                                                   ? BasisMode::Truncated
                                                   : BasisMode::Plain;
                        HierarchicalSpace space(levels, mesh, mode);
                        std::vector<int> witness;
                        if (!space.check_P1(&witness))
                            out.require(false, std::string(name) + ": P1 violated");
                        if (!space.check_global_rank())
                            out.require(false, std::string(name) + ": global rank deficient");
                        const int cls = admissibility_class(space);
                        if (cls > mu)
                            out.require(false, std::string(name) + ": class " +
                                                   std::to_string(cls) + " > mu");
                        if (!space.audit_vertex_condition().empty())
                            out.require(false, std::string(name) + ": vertex condition violated");
                    }
                }
            }
        }
        out.require(runs >= 50, std::string(name) + ": only " + std::to_string(runs) + " runs");
    }
    out.note(std::to_string(runs_total) + " randomized marking runs audited");
    return out;
}

// ---------------------------------------------------------------- criterion 6

Outcome criterion6() {
    Outcome out;
    MultiPatchGeometry geo = builtin_geometry("threepatch-ev3", 3, 1, 3);
    const int k0 = 3;
    std::mt19937 rng(15);
    std::uniform_int_distribution<int> lvl(0, 2), pp(0, 2);
    auto rand_elem = [&] {
        const int l = lvl(rng);
        std::uniform_int_distribution<int> c(0, (1 << l) * (k0 + 1) - 1);
        return Element{l, {pp(rng), c(rng), c(rng)}};
    };
    long checked = 0;
    for (int t = 0; t < 400; ++t) {
        const Element a = rand_elem(), b = rand_elem(), c = rand_elem();
        const auto dab = element_distance(geo, k0, a, b);
        const auto dac = element_distance(geo, k0, a, c);
        const auto dcb = element_distance(geo, k0, c, b);
        if (!(dab <= dac + dcb)) out.require(false, "triangle inequality violated");
        checked += 3;
    }
    // descendant distance bounds and the equality witness
    std::uniform_int_distribution<int> c0(0, 3), kk(1, 2);
    for (int t = 0; t < 250; ++t) {
        const Element a{0, {pp(rng), c0(rng), c0(rng)}};
        const Element b{0, {pp(rng), c0(rng), c0(rng)}};
        const long s = element_distance(geo, k0, a, b).num;
        const int k = kk(rng);
        const int f = 1 << k;
        std::uniform_int_distribution<int> sub(0, f - 1);
        const Element ad{k, {a.cell.patch, a.cell.e1 * f + sub(rng), a.cell.e2 * f + sub(rng)}};
        const Element bd{k, {b.cell.patch, b.cell.e1 * f + sub(rng), b.cell.e2 * f + sub(rng)}};
        const long sd = element_distance(geo, k0, ad, bd).num;
        if (s > 0 && !(sd >= f * (s - 1) + 1 && sd <= f * (s + 1) - 1))
            out.require(false, "descendant bound violated");
        checked += 2;
    }
    // equality witness on a smaller sample: some same-level descendant of b
    // realizes dist(a, b)
    for (int t = 0; t < 30; ++t) {
        const Element a{0, {pp(rng), c0(rng), c0(rng)}};
        const Element b{0, {pp(rng), c0(rng), c0(rng)}};
        const int f = 2;
        const DyadicRational target = element_distance(geo, k0, a, b);
        std::uniform_int_distribution<int> sub(0, 1);
        const Element ad{1, {a.cell.patch, a.cell.e1 * f + sub(rng), a.cell.e2 * f + sub(rng)}};
        bool found = false;
        for (int i = 0; i < 2 && !found; ++i)
            for (int j = 0; j < 2 && !found; ++j) {
                const Element bd{1, {b.cell.patch, b.cell.e1 * f + i, b.cell.e2 * f + j}};
                if (element_distance(geo, k0, ad, bd) == target) found = true;
            }
        if (!found) out.require(false, "descendant equality witness missing");
        ++checked;
    }

    // exhaustive agreement with the physical BFS oracle on a 2-level 2-patch mesh
    MultiPatchGeometry s2 = builtin_geometry("square-2p", 3, 1, 3);
    BfsDistanceOracle oracle(s2, s2.space0());
    std::vector<Element> elems;
    for (int p = 0; p < 2; ++p)
        for (int e1 = 0; e1 < 4; ++e1)
            for (int e2 = 0; e2 < 4; ++e2) {
                elems.push_back({0, {p, e1, e2}});
                elems.push_back({1, {p, 2 * e1 + 1, 2 * e2}});
            }
    for (const Element& a : elems)
        for (const Element& b : elems) {
            if (!(element_distance(s2, 3, a, b) == oracle.dist(a.cell, a.level, b.cell, b.level)))
                out.require(false, "BFS oracle disagreement");
            ++checked;
        }

    // complexity ratio stays bounded over a 10-level single-point run
    {
        C1Levels levels(geo);
        HierarchicalMesh mesh(geo);
        ComplexityLedger ledger;
        ledger.initial_elements = mesh.num_active();
        std::vector<double> ratios;
        for (int it = 0; it < 10; ++it) {
            refine(levels, mesh, {{it, {0, 0, 0}}}, {2, AdmissibilityConfig::Variant::H});
            ledger.record(1, mesh.num_active());
            ratios.push_back(ledger.ratio());
        }
        const double tail = ratios.back();
        const double mid = ratios[static_cast<size_t>(ratios.size() / 2)];
        out.require(tail < 250.0, "complexity ratio unbounded: " + std::to_string(tail));
        out.require(tail <= mid * 1.25 + 1.0,
                    "complexity ratio grows with depth: " + std::to_string(mid) + " -> " +
                        std::to_string(tail));
    }
    out.note(std::to_string(checked) + " distance checks, 10-level complexity bounded");
    return out;
}

// ---------------------------------------------------------------- criterion 7

Outcome criterion7() {
    Outcome out;
    MultiPatchGeometry geo = builtin_geometry("threepatch-ev3", 3, 1, 3);
    const ModelProblem mp = poisson_vertex_singularity({0, 0});

    char buf[160];
    for (const BasisMode mode : {BasisMode::Plain, BasisMode::Truncated}) {
        AdaptiveConfig cfg;
        cfg.mode = mode;
        cfg.adm = {2, AdmissibilityConfig::Variant::H};
        cfg.theta = 0.8;
        cfg.max_iters = 19;
        cfg.max_levels = 25;
        cfg.max_ndof = 120000;
        const AdaptiveRun run = adaptive_loop(geo, mp, cfg);
        const double slope = loglog_slope(run.ledger, 5);
        std::snprintf(buf, sizeof buf, "%s slope %.3f",
                      mode == BasisMode::Plain ? "adaptive-H" : "adaptive-T", slope);
        out.note(buf);
        out.require(slope > -1.65 && slope < -1.35,
                    std::string(buf) + " outside [-1.65,-1.35]");
    }
    {
        AdaptiveConfig cfg;
        cfg.uniform = true;
        cfg.max_iters = 5;
        cfg.max_levels = 12;
        cfg.max_ndof = 80000;
        const AdaptiveRun run = adaptive_loop(geo, mp, cfg);
        const double slope = loglog_slope(run.ledger, 3);
        std::snprintf(buf, sizeof buf, "uniform slope %.3f", slope);
        out.note(buf);
        out.require(slope > -0.8 && slope < -0.55, std::string(buf) + " outside [-0.8,-0.55]");
    }
    return out;
}

// ---------------------------------------------------------------- criterion 8

Outcome criterion8() {
    Outcome out;
    MultiPatchGeometry geo = builtin_geometry("lshape-8p", 3, 1, 3);
    const ModelProblem mp = biharmonic_lshape_corner();
    char buf[160];

    AdaptiveConfig cfg;
    cfg.adm = {3, AdmissibilityConfig::Variant::H};
    cfg.theta = 0.8;
    cfg.max_iters = 16;
    cfg.max_levels = 25;
    cfg.max_ndof = 25000;
    const AdaptiveRun adaptive = adaptive_loop(geo, mp, cfg);
    const double slope = loglog_slope(adaptive.ledger, 5);
    std::snprintf(buf, sizeof buf, "adaptive H2 slope %.3f", slope);
    out.note(buf);
    out.require(slope <= -0.8, std::string(buf) + " > -0.8");

    AdaptiveConfig ucfg;
    ucfg.uniform = true;
    ucfg.max_iters = 4;
    ucfg.max_levels = 12;
    ucfg.max_ndof = 80000;
    const AdaptiveRun uniform = adaptive_loop(geo, mp, ucfg);

    // adaptive error below the uniform error at equal NDOF beyond 3000
    auto uniform_at = [&](double ndof) {
        const auto& lg = uniform.ledger;
        for (size_t i = 0; i + 1 < lg.size(); ++i) {
            const double x0 = std::log10(static_cast<double>(lg[i].ndof));
            const double x1 = std::log10(static_cast<double>(lg[i + 1].ndof));
            const double x = std::log10(ndof);
            if (x >= x0 && x <= x1) {
                const double y0 = std::log10(lg[i].error), y1 = std::log10(lg[i + 1].error);
                return std::pow(10.0, y0 + (y1 - y0) * (x - x0) / (x1 - x0));
            }
        }
        return std::pow(10.0, std::log10(lg.back().error));
    };
    int compared = 0;
    for (const LedgerRow& r : adaptive.ledger) {
        if (r.ndof < 3000 || r.ndof > uniform.ledger.back().ndof) continue;
        ++compared;
        if (!(r.error < uniform_at(static_cast<double>(r.ndof))))
            out.require(false, "adaptive error not below uniform at ndof " +
                                   std::to_string(r.ndof));
    }
    out.require(compared >= 2, "too few comparable points beyond 3000 DOF");
    std::snprintf(buf, sizeof buf, "%d adaptive points below uniform beyond 3000 DOF", compared);
    out.note(buf);
    return out;
}

// ---------------------------------------------------------------- criterion 9

Outcome criterion9() {
    Outcome out;
    char buf[96];
    for (const char* name : {"square-2p", "lshape-8p"}) {
        MultiPatchGeometry geo = builtin_geometry(name, 3, 1, 3);
        C1Levels levels(geo);
        HierarchicalMesh mesh(geo);
        HierarchicalSpace space(levels, mesh, BasisMode::Plain);
        const ModelProblem mp = poisson_bilinear();
        DiscreteSystem sys = assemble_poisson(space, mp);
        solve_system(sys);
        const ErrorNorms err = error_norms(space, sys.solution, mp.exact);
        std::snprintf(buf, sizeof buf, "%s H1 error %.2e", name, err.h1);
        out.note(buf);
        out.require(err.h1 < 1e-9, std::string(buf) + " >= 1e-9");
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i)
        if (!std::strcmp(argv[i], "--criterion") && i + 1 < argc) only = std::atoi(argv[i + 1]);

    struct Entry {
        int id;
        const char* name;
        Outcome (*run)();
        double budget_seconds;
    };
    const Entry entries[] = {
        {1, "counterexample reproduction", criterion1, 5},
        {2, "basis structure", criterion2, 120},
        {3, "smoothness suite", criterion3, 600},
        {4, "nestedness/mask suite", criterion4, 600},
        {5, "refinement correctness", criterion5, 120},
        {6, "distance/complexity suite", criterion6, 600},
        {7, "poisson convergence", criterion7, 300},
        {8, "biharmonic convergence", criterion8, 600},
        {9, "polynomial reproduction", criterion9, 120},
    };

    int failures = 0;
    for (const Entry& e : entries) {
        if (only && e.id != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = e.run();
        } catch (const std::exception& ex) {
            out.pass = false;
            out.detail = std::string("exception: ") + ex.what();
        }
        const double dt = seconds_since(t0);
        if (dt > e.budget_seconds) {
            out.pass = false;
            out.detail += (out.detail.empty() ? "" : "; ") + std::string("over time budget");
        }
        std::printf("[%s] criterion %d: %s (%s) [%.1f s]\n", out.pass ? "PASS" : "FAIL", e.id,
                    e.name, out.detail.c_str(), dt);
        std::fflush(stdout);
        if (!out.pass) ++failures;
    }
    return failures;
}
