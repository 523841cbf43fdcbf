#include <CLI11.hpp>

#include "c1mp/cli_io.hpp"
#include "c1mp/solver.hpp"
#include "c1mp/verify.hpp"

#include <iostream>
#include <random>

using namespace c1mp;

namespace {

void add_space_options(CLI::App* app, RunConfig& cfg) {
    app->add_option("--geometry", cfg.geometry, "builtin name or geometry file");
    app->add_option("--p", cfg.p, "spline degree (>= 3)");
    app->add_option("--r", cfg.r, "regularity (default p-2)");
    app->add_option("--k", cfg.k, "initial internal breaks per patch (>= 3)");
}

int run_solve(RunConfig& cfg, int threads) {
    cfg.validate();
    Eigen::setNbThreads(threads);
    MultiPatchGeometry geo = make_geometry(cfg);
    const ModelProblem problem = make_problem(cfg, geo);

    AdaptiveConfig acfg;
    acfg.mode = cfg.mode == "truncated" ? BasisMode::Truncated : BasisMode::Plain;
    acfg.adm.mu = cfg.mu;
    acfg.adm.variant = cfg.variant == "T" ? AdmissibilityConfig::Variant::T
                                          : AdmissibilityConfig::Variant::H;
    acfg.theta = cfg.theta;
    acfg.max_levels = cfg.max_levels;
    acfg.max_ndof = cfg.max_ndof;
    acfg.max_iters = cfg.max_iters;
    acfg.uniform = cfg.uniform;

    const AdaptiveRun run = adaptive_loop(geo, problem, acfg);
    const ProblemKind kind =
        cfg.problem == "poisson" ? ProblemKind::Poisson : ProblemKind::Biharmonic;
    const std::string csv = ledger_csv(run.ledger, kind);
    std::cout << csv;
    if (!cfg.csv_out.empty()) save_text(csv, cfg.csv_out);
    if (!cfg.svg_mesh_out.empty()) save_text(svg_mesh(geo, run.final_mesh), cfg.svg_mesh_out);
    if (!cfg.svg_plot_out.empty()) {
        PlotSeries ps{"error", {}};
        for (const LedgerRow& r : run.ledger)
            ps.points.push_back({static_cast<double>(r.ndof), std::max(r.error, 1e-300)});
        save_text(svg_loglog({ps}), cfg.svg_plot_out);
    }
    return 0;
}

int run_verify_basis(RunConfig& cfg) {
    const int reff = cfg.r < 0 ? cfg.p - 2 : cfg.r;
    MultiPatchGeometry geo = is_builtin_geometry(cfg.geometry)
                                 ? builtin_geometry(cfg.geometry, cfg.p, reff, cfg.k)
                                 : load_geometry_file(cfg.geometry);
    C1LevelSpace space(geo, 0);
    int failures = 0;
    auto report = [&](const std::string& name, bool pass, const std::string& detail) {
        std::cout << (pass ? "[PASS] " : "[FAIL] ") << name;
        if (!detail.empty()) std::cout << " (" << detail << ")";
        std::cout << "\n";
        if (!pass) ++failures;
    };

    // AS-G1 geometry check
    {
        const auto reports = geo.asg1_check(1e-10);
        bool pass = true;
        double worst = 0;
        for (const auto& r : reports) {
            pass = pass && r.pass;
            worst = std::max(worst, r.max_g1_residual);
        }
        report("asg1-gluing", pass, "max G1 residual " + std::to_string(worst));
    }

    // smoothness across every inner edge
    {
        double vj = 0, gj = 0;
        for (int e = 0; e < geo.num_edges(); ++e) {
            if (geo.edge(e).kind != EntityKind::Inner) continue;
            const EdgeFrame& fr = geo.edge_frame(e);
            const int p0 = geo.edge(e).sides[0].patch;
            const int p1 = geo.edge(e).sides[1].patch;
            for (const FuncKey& f : space.all_functions()) {
                const Extraction& ex = space.extraction(f);
                if (!ex.block_on(p0) && !ex.block_on(p1)) continue;
                for (int i = 0; i < 20; ++i) {
                    const double xi = (i + 0.5) / 20;
                    const PhysicalDerivs a = space.eval_phys(f, p0, fr.code0.apply({0, xi}), 1);
                    const PhysicalDerivs b = space.eval_phys(f, p1, fr.code1.apply({xi, 0}), 1);
                    vj = std::max(vj, std::abs(a.v - b.v));
                    gj = std::max(gj, (a.grad - b.grad).norm());
                }
            }
        }
        report("c1-smoothness", vj < 1e-9 && gj < 1e-6,
               "value jump " + std::to_string(vj) + ", gradient jump " + std::to_string(gj));
    }

    // C2 interpolation at vertices
    {
        double worst = 0;
        const auto jset = vertex_index_set();
        for (int v = 0; v < geo.num_vertices(); ++v) {
            const double sig = space.sigma(v);
            for (size_t jj = 0; jj < 6; ++jj) {
                const FuncKey f{FuncKey::Vertex, v, jset[jj].first, jset[jj].second};
                for (const auto& [pp, cc] : geo.vertex(v).fan) {
                    const PhysicalDerivs ph = space.eval_phys(f, pp, corner_point(cc), 2);
                    const std::array<double, 6> got{ph.v,       ph.grad[0], ph.hxx,
                                                    ph.grad[1], ph.hxy,     ph.hyy};
                    for (size_t zz = 0; zz < 6; ++zz) {
                        const double expect =
                            zz == jj ? std::pow(sig, jset[jj].first + jset[jj].second) : 0.0;
                        const double sc = std::pow(sig, jset[zz].first + jset[zz].second);
                        worst = std::max(worst, std::abs(got[zz] - expect) / sc);
                    }
                }
            }
        }
        report("c2-interpolation", worst < 1e-6, "max residual " + std::to_string(worst));
    }

    // dimension formula
    report("dimension", static_cast<long>(space.all_functions().size()) == space.dimension(),
           std::to_string(space.dimension()) + " functions");

    // local linear independence audit per element
    {
        const auto funcs = space.all_functions();
        const int nel = space.num_elements_1d();
        int dependent_cells = 0;
        long worst_excess = 0;
        size_t worst_live = 0;
        int worst_rank = 0;
        CellId worst_cell;
        for (int p = 0; p < geo.num_patches(); ++p)
            for (int e1 = 0; e1 < nel; ++e1)
                for (int e2 = 0; e2 < nel; ++e2) {
                    const CellId cell{p, e1, e2};
                    std::vector<FuncKey> live;
                    for (const FuncKey& f : funcs) {
                        const auto& sup = space.support_cells(f);
                        if (std::find(sup.begin(), sup.end(), cell) != sup.end())
                            live.push_back(f);
                    }
                    const std::vector<CellId> cells{cell};
                    const int rank = collocation_rank(space, live, cells);
                    if (rank < static_cast<int>(live.size())) {
                        ++dependent_cells;
                        if (static_cast<long>(live.size()) - rank > worst_excess ||
                            (static_cast<long>(live.size()) - rank == worst_excess &&
                             live.size() > worst_live)) {
                            worst_excess = static_cast<long>(live.size()) - rank;
                            worst_live = live.size();
                            worst_rank = rank;
                            worst_cell = cell;
                        }
                    }
                }
        std::cout << (dependent_cells ? "[INFO] " : "[PASS] ")
                  << "local-linear-independence: " << dependent_cells
                  << " locally dependent elements";
        if (dependent_cells)
            std::cout << "; worst on patch " << worst_cell.patch << " element (" << worst_cell.e1
                      << "," << worst_cell.e2 << "): " << worst_live
                      << " nonvanishing functions, rank " << worst_rank;
        std::cout << "\n";
    }
    return failures;
}

int run_refine_demo(RunConfig& cfg, int steps, int marks, unsigned seed) {
    cfg.validate();
    MultiPatchGeometry geo = make_geometry(cfg);
    C1Levels levels(geo);
    HierarchicalMesh mesh(geo);
    const AdmissibilityConfig adm{cfg.mu, cfg.variant == "T" ? AdmissibilityConfig::Variant::T
                                                             : AdmissibilityConfig::Variant::H};
    ComplexityLedger ledger;
    ledger.initial_elements = mesh.num_active();
    std::mt19937 rng(seed);
    std::cout << "step,marked,active,ratio\n";
    for (int s = 0; s < steps; ++s) {
        const auto all = mesh.all_active();
        std::uniform_int_distribution<size_t> pick(0, all.size() - 1);
        std::vector<Element> marked;
        for (int m = 0; m < marks; ++m) {
            const auto& [l, c] = all[pick(rng)];
            marked.push_back({l, c});
        }
        std::sort(marked.begin(), marked.end());
        marked.erase(std::unique(marked.begin(), marked.end()), marked.end());
        refine(levels, mesh, marked, adm);
        ledger.record(static_cast<long>(marked.size()), mesh.num_active());
        std::cout << s << "," << marked.size() << "," << mesh.num_active() << "," << ledger.ratio()
                  << "\n";
    }
    HierarchicalSpace space(levels, mesh,
                            adm.variant == AdmissibilityConfig::Variant::T ? BasisMode::Truncated
                                                                           : BasisMode::Plain);
    const bool p1 = space.check_P1();
    const int cls = admissibility_class(space);
    std::cout << "check_P1=" << (p1 ? "pass" : "FAIL") << " admissibility_class=" << cls << "\n";
    return p1 && (cfg.mu == 1 || cls <= cfg.mu) ? 0 : 1;
}

int run_export(RunConfig& cfg, int level, const std::string& out) {
    const int reff = cfg.r < 0 ? cfg.p - 2 : cfg.r;
    MultiPatchGeometry geo = is_builtin_geometry(cfg.geometry)
                                 ? builtin_geometry(cfg.geometry, cfg.p, reff, cfg.k)
                                 : load_geometry_file(cfg.geometry);
    C1LevelSpace space(geo, level);
    std::string s = "# extraction triplets: patch function j1 j2 coefficient\n";
    char buf[160];
    const auto funcs = space.all_functions();
    for (size_t fi = 0; fi < funcs.size(); ++fi) {
        for (const auto& [patch, j1, j2] : space.coeff_support(funcs[fi])) {
            const PatchBlock* blk = space.extraction(funcs[fi]).block_on(patch);
            const double c = blk->c(j1 - blk->i0, j2 - blk->j0);
            std::snprintf(buf, sizeof buf, "%d %zu %d %d %.17g\n", patch, fi, j1, j2, c);
            s += buf;
        }
    }
    if (out.empty())
        std::cout << s;
    else
        save_text(s, out);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"C1 hierarchical splines on multi-patch domains"};
    app.require_subcommand(1);

    RunConfig cfg;
    int threads = 1;
    int demo_steps = 8, demo_marks = 3;
    unsigned demo_seed = 1;
    int export_level = 0;
    std::string export_out;

    CLI::App* solve = app.add_subcommand("solve", "run the adaptive Galerkin loop");
    add_space_options(solve, cfg);
    solve->add_option("--problem", cfg.problem, "poisson | biharmonic");
    solve->add_option("--solution", cfg.solution,
                      "auto|singular|sine|bilinear|line|quadratic|corner");
    solve->add_option("--mode", cfg.mode, "plain | truncated");
    solve->add_option("--variant", cfg.variant, "admissibility variant H | T");
    solve->add_option("--mu", cfg.mu, "admissibility class (1 disables closure)");
    solve->add_option("--theta", cfg.theta, "Dorfler parameter");
    solve->add_option("--max-levels", cfg.max_levels, "stop at this many levels");
    solve->add_option("--max-ndof", cfg.max_ndof, "stop above this dimension");
    solve->add_option("--max-iters", cfg.max_iters, "iteration cap");
    solve->add_flag("--uniform", cfg.uniform, "refine uniformly instead of marking");
    solve->add_option("--out", cfg.csv_out, "write the ledger CSV here");
    solve->add_option("--svg-mesh", cfg.svg_mesh_out, "write the final mesh SVG here");
    solve->add_option("--svg-plot", cfg.svg_plot_out, "write the convergence SVG here");
    solve->add_option("--threads", threads, "linear algebra threads");

    CLI::App* verify = app.add_subcommand("verify-basis", "run the basis property suite");
    add_space_options(verify, cfg);

    CLI::App* demo = app.add_subcommand("refine-demo", "random-marking complexity sweep");
    add_space_options(demo, cfg);
    demo->add_option("--mu", cfg.mu, "admissibility class");
    demo->add_option("--variant", cfg.variant, "H | T");
    demo->add_option("--steps", demo_steps, "marking steps");
    demo->add_option("--marks", demo_marks, "marks per step");
    demo->add_option("--seed", demo_seed, "random seed");

    CLI::App* exp = app.add_subcommand("export-extraction", "dump extraction matrices");
    add_space_options(exp, cfg);
    exp->add_option("--level", export_level, "refinement level");
    exp->add_option("--out", export_out, "output path (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (solve->parsed()) return run_solve(cfg, threads);
        if (verify->parsed()) return run_verify_basis(cfg);
        if (demo->parsed()) return run_refine_demo(cfg, demo_steps, demo_marks, demo_seed);
        if (exp->parsed()) return run_export(cfg, export_level, export_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
