#include "c1mp/cli_io.hpp"

#include <json.hpp>

#include <algorithm>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace c1mp {

namespace {

Mat2 rot(double deg) {
    const double a = deg * M_PI / 180.0;
    Mat2 R;
    R << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    return R;
}

ControlNet linear_net(const UnivariateSpace& s, const Vec2& u, const Vec2& v) {
    return bilinear_net(s, {0, 0}, u, v, u + v);
}

ControlNet rect_net(const UnivariateSpace& s, double x0, double x1, double y0, double y1) {
    return bilinear_net(s, {x0, y0}, {x1, y0}, {x0, y1}, {x1, y1});
}

} // namespace

MultiPatchGeometry make_fan_geometry(int nu, int p, int r, int k) {
    C1MP_REQUIRE(nu >= 3 && nu <= 8, parameter_error, "fan valence must be in [3,8]");
    UnivariateSpace space(p, r, k);
    const Mat2 R = rot(360.0 / nu);
    Vec2 u{1.0, 0.0};
    std::vector<ControlNet> nets;
    for (int m = 0; m < nu; ++m) {
        const Vec2 w = R * u;
        nets.push_back(linear_net(space, u, w));
        u = w;
    }
    return build_multipatch(std::move(space), std::move(nets));
}

MultiPatchGeometry builtin_geometry(const std::string& name, int p, int r, int k) {
    UnivariateSpace space(p, r, k);
    std::vector<ControlNet> nets;
    if (name == "square-1p") {
        nets.push_back(rect_net(space, 0, 1, 0, 1));
    } else if (name == "square-2p") {
        nets.push_back(rect_net(space, 0, 1, 0, 1));
        nets.push_back(rect_net(space, -1, 0, 0, 1));
    } else if (name == "threepatch-ev3") {
        // Bilinearly parameterized three-patch fan around an interior vertex
        // of valence 3; d1F of the first patch is (2(sqrt3+1), -2(sqrt3-1)).
        const Vec2 u0{2.0 * (std::sqrt(3.0) + 1.0), -2.0 * (std::sqrt(3.0) - 1.0)};
        const Mat2 R = rot(120.0);
        Vec2 u = u0;
        for (int m = 0; m < 3; ++m) {
            const Vec2 v = R * u;
            nets.push_back(linear_net(space, u, v));
            u = v;
        }
    } else if (name == "lshape-8p") {
        // L over quadrants I, II, III of (-1,1)^2, re-entrant corner at 0.
        nets.push_back(rect_net(space, 0.0, 1.0, 0.0, 0.5));
        nets.push_back(rect_net(space, 0.0, 1.0, 0.5, 1.0));
        nets.push_back(rect_net(space, -0.5, 0.0, 0.0, 0.5));
        nets.push_back(rect_net(space, -0.5, 0.0, 0.5, 1.0));
        nets.push_back(rect_net(space, -1.0, -0.5, 0.0, 0.5));
        nets.push_back(rect_net(space, -1.0, -0.5, 0.5, 1.0));
        nets.push_back(rect_net(space, -0.5, 0.0, -1.0, 0.0));
        nets.push_back(rect_net(space, -1.0, -0.5, -1.0, 0.0));
    } else {
        throw parameter_error("unknown builtin geometry: " + name);
    }
    return build_multipatch(std::move(space), std::move(nets));
}

bool is_builtin_geometry(const std::string& name) {
    return name == "square-1p" || name == "square-2p" || name == "threepatch-ev3" ||
           name == "lshape-8p";
}

// ---------------------------------------------------------------- file format

namespace {

void fmt_double(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

} // namespace

std::string write_geometry(const MultiPatchGeometry& g) {
    std::string s;
    s += "{\n\"format_version\": 1,\n";
    s += "\"degree\": " + std::to_string(g.space0().p()) + ",\n";
    s += "\"regularity\": " + std::to_string(g.space0().r()) + ",\n";
    s += "\"internal_breaks\": " + std::to_string(g.space0().k()) + ",\n";
    s += "\"patches\": [\n";
    const int n = g.space0().n();
    for (int p = 0; p < g.num_patches(); ++p) {
        s += "  {\"points\": [";
        const ControlNet& net = g.patch(p).net;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (i + j > 0) s += ", ";
                s += "[";
                fmt_double(s, net.x(i, j));
                s += ", ";
                fmt_double(s, net.y(i, j));
                s += "]";
            }
        s += "]}";
        s += p + 1 < g.num_patches() ? ",\n" : "\n";
    }
    s += "],\n\"interfaces\": [\n";
    bool first = true;
    for (int e = 0; e < g.num_edges(); ++e) {
        if (g.edge(e).kind != EntityKind::Inner) continue;
        if (!first) s += ",\n";
        first = false;
        const EdgeTopo& et = g.edge(e);
        s += "  {\"id\": " + std::to_string(e) + ", \"sides\": [";
        for (size_t i = 0; i < et.sides.size(); ++i) {
            if (i) s += ", ";
            s += "{\"patch\": " + std::to_string(et.sides[i].patch) +
                 ", \"side\": " + std::to_string(et.sides[i].side) +
                 ", \"reversed\": " + (et.sides[i].reversed ? std::string("true") : std::string("false")) + "}";
        }
        s += "]}";
    }
    s += "\n],\n\"boundary_edges\": [\n";
    first = true;
    for (int e = 0; e < g.num_edges(); ++e) {
        if (g.edge(e).kind != EntityKind::Boundary) continue;
        if (!first) s += ",\n";
        first = false;
        const EdgeSideRef& sr = g.edge(e).sides[0];
        s += "  {\"id\": " + std::to_string(e) + ", \"side\": {\"patch\": " + std::to_string(sr.patch) +
             ", \"side\": " + std::to_string(sr.side) +
             ", \"reversed\": " + (sr.reversed ? std::string("true") : std::string("false")) + "}}";
    }
    s += "\n],\n\"vertices\": [\n";
    for (int v = 0; v < g.num_vertices(); ++v) {
        const VertexTopo& vt = g.vertex(v);
        s += "  {\"id\": " + std::to_string(v) + ", \"fan\": [";
        for (size_t m = 0; m < vt.fan.size(); ++m) {
            if (m) s += ", ";
            s += "{\"patch\": " + std::to_string(vt.fan[m].first) +
                 ", \"corner\": " + std::to_string(vt.fan[m].second) +
                 ", \"edge_sign\": " + (vt.edge_at_far_end[m] ? std::string("1") : std::string("0")) + "}";
        }
        s += "]}";
        s += v + 1 < g.num_vertices() ? ",\n" : "\n";
    }
    s += "]\n}\n";
    return s;
}

MultiPatchGeometry read_geometry(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    C1MP_REQUIRE(j.at("format_version").get<int>() == 1, parameter_error,
                 "unsupported geometry format version");
    const int p = j.at("degree").get<int>();
    const int r = j.at("regularity").get<int>();
    const int k = j.at("internal_breaks").get<int>();
    UnivariateSpace space(p, r, k);
    const int n = space.n();

    std::vector<Patch> patches;
    for (const auto& jp : j.at("patches")) {
        const auto& pts = jp.at("points");
        C1MP_REQUIRE(static_cast<int>(pts.size()) == n * n, parameter_error,
                     "patch control grid size mismatch");
        ControlNet net;
        net.x.resize(n, n);
        net.y.resize(n, n);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < n; ++c) {
                net.x(i, c) = pts[static_cast<size_t>(i * n + c)][0].get<double>();
                net.y(i, c) = pts[static_cast<size_t>(i * n + c)][1].get<double>();
            }
        patches.push_back({std::move(net)});
    }

    const size_t ne = j.at("interfaces").size() + j.at("boundary_edges").size();
    std::vector<EdgeTopo> edges(ne);
    auto side_ref = [](const nlohmann::json& js) {
        return EdgeSideRef{js.at("patch").get<int>(), js.at("side").get<int>(),
                           js.at("reversed").get<bool>()};
    };
    for (const auto& je : j.at("interfaces")) {
        const int id = je.at("id").get<int>();
        C1MP_REQUIRE(id >= 0 && id < static_cast<int>(ne), parameter_error, "bad edge id");
        edges[static_cast<size_t>(id)].kind = EntityKind::Inner;
        for (const auto& js : je.at("sides"))
            edges[static_cast<size_t>(id)].sides.push_back(side_ref(js));
    }
    for (const auto& je : j.at("boundary_edges")) {
        const int id = je.at("id").get<int>();
        C1MP_REQUIRE(id >= 0 && id < static_cast<int>(ne), parameter_error, "bad edge id");
        edges[static_cast<size_t>(id)].kind = EntityKind::Boundary;
        edges[static_cast<size_t>(id)].sides.push_back(side_ref(je.at("side")));
    }

    std::vector<VertexTopo> vertices(j.at("vertices").size());
    std::vector<std::vector<bool>> signs(vertices.size());
    for (const auto& jv : j.at("vertices")) {
        const int id = jv.at("id").get<int>();
        VertexTopo& v = vertices.at(static_cast<size_t>(id));
        for (const auto& jf : jv.at("fan")) {
            v.fan.emplace_back(jf.at("patch").get<int>(), jf.at("corner").get<int>());
            signs[static_cast<size_t>(id)].push_back(jf.at("edge_sign").get<int>() != 0);
        }
    }

    MultiPatchGeometry g(std::move(space), std::move(patches), std::move(edges),
                         std::move(vertices));
    // validate the stored edge-sign flags against the derived ones
    for (int v = 0; v < g.num_vertices(); ++v)
        for (size_t m = 0; m < signs[static_cast<size_t>(v)].size(); ++m)
            C1MP_REQUIRE(g.vertex(v).edge_at_far_end[m] == signs[static_cast<size_t>(v)][m],
                         topology_error, "vertex ", v, ": stored edge_sign disagrees with topology");
    return g;
}

std::string write_mesh(const HierarchicalMesh& mesh) {
    std::string s = "{\n\"format_version\": 1,\n\"levels\": [\n";
    for (int l = 0; l < mesh.num_levels(); ++l) {
        std::vector<CellId> cells(mesh.active(l).begin(), mesh.active(l).end());
        std::sort(cells.begin(), cells.end());
        s += "  {\"level\": " + std::to_string(l) + ", \"active\": [";
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) s += ", ";
            s += "[" + std::to_string(cells[i].patch) + "," + std::to_string(cells[i].e1) + "," +
                 std::to_string(cells[i].e2) + "]";
        }
        s += "]}";
        s += l + 1 < mesh.num_levels() ? ",\n" : "\n";
    }
    s += "]\n}\n";
    return s;
}

HierarchicalMesh read_mesh(const MultiPatchGeometry& geo, const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    C1MP_REQUIRE(j.at("format_version").get<int>() == 1, parameter_error,
                 "unsupported mesh format version");
    HierarchicalMesh mesh(geo);
    // replay: refine every cell that is not active at its recorded level but
    // covered by deeper actives
    std::vector<CellSet> want;
    for (const auto& jl : j.at("levels")) {
        const int l = jl.at("level").get<int>();
        if (static_cast<int>(want.size()) <= l) want.resize(static_cast<size_t>(l) + 1);
        for (const auto& jc : jl.at("active"))
            want[static_cast<size_t>(l)].insert(
                {jc[0].get<int>(), jc[1].get<int>(), jc[2].get<int>()});
    }
    for (int l = 0; l + 1 < static_cast<int>(want.size()); ++l) {
        std::vector<std::pair<int, CellId>> to_refine;
        for (const CellId& c : mesh.active(l))
            if (!want[static_cast<size_t>(l)].count(c)) to_refine.emplace_back(l, c);
        mesh.refine_cells(to_refine);
    }
    // consistency: the replayed mesh must match the snapshot
    for (int l = 0; l < static_cast<int>(want.size()); ++l)
        C1MP_REQUIRE(mesh.active(l) == want[static_cast<size_t>(l)], parameter_error,
                     "mesh snapshot is not a valid dyadic hierarchy");
    return mesh;
}

MultiPatchGeometry load_geometry_file(const std::string& path) {
    std::ifstream in(path);
    C1MP_REQUIRE(in.good(), parameter_error, "cannot open geometry file ", path);
    std::stringstream ss;
    ss << in.rdbuf();
    return read_geometry(ss.str());
}

void save_geometry_file(const MultiPatchGeometry& g, const std::string& path) {
    std::ofstream out(path);
    C1MP_REQUIRE(out.good(), parameter_error, "cannot open output file ", path);
    out << write_geometry(g);
}

} // namespace c1mp

namespace c1mp {

// ---------------------------------------------------------------- run config

void RunConfig::validate() const {
    C1MP_REQUIRE(problem == "poisson" || problem == "biharmonic", parameter_error,
                 "problem must be poisson or biharmonic");
    C1MP_REQUIRE(mode == "plain" || mode == "truncated", parameter_error,
                 "basis mode must be plain or truncated");
    C1MP_REQUIRE(variant == "H" || variant == "T", parameter_error,
                 "admissibility variant must be H or T");
    C1MP_REQUIRE(mu >= 1, parameter_error, "admissibility class must be >= 1");
    C1MP_REQUIRE(theta > 0 && theta <= 1, parameter_error, "Dorfler theta must be in (0,1]");
    C1MP_REQUIRE(p >= 3, parameter_error, "degree must be >= 3");
    const int reff = r < 0 ? p - 2 : r;
    C1MP_REQUIRE(reff >= 1 && reff <= p - 2, parameter_error, "regularity must be in [1, p-2]");
    C1MP_REQUIRE(k >= 3, parameter_error,
                 "initial internal breaks must be >= 3 (4x4 elements per patch)");
    C1MP_REQUIRE(max_levels >= 1 && max_iters >= 1 && max_ndof >= 1, parameter_error,
                 "stop criteria must be positive");
}

MultiPatchGeometry make_geometry(const RunConfig& cfg) {
    const int reff = cfg.r < 0 ? cfg.p - 2 : cfg.r;
    if (is_builtin_geometry(cfg.geometry)) return builtin_geometry(cfg.geometry, cfg.p, reff, cfg.k);
    return load_geometry_file(cfg.geometry);
}

ModelProblem make_problem(const RunConfig& cfg, const MultiPatchGeometry& geo) {
    std::string sol = cfg.solution;
    if (sol == "auto") {
        if (cfg.problem == "poisson") {
            // singular solution centered at an interior vertex when one exists
            sol = "sine";
            for (int v = 0; v < geo.num_vertices(); ++v)
                if (geo.vertex(v).kind == EntityKind::Inner) sol = "singular";
        } else {
            sol = cfg.geometry == "lshape-8p" ? "corner" : "quadratic";
        }
    }
    if (cfg.problem == "poisson") {
        if (sol == "singular") {
            Vec2 p0{0, 0};
            for (int v = 0; v < geo.num_vertices(); ++v)
                if (geo.vertex(v).kind == EntityKind::Inner) p0 = geo.vertex_point(v);
            return poisson_vertex_singularity(p0);
        }
        if (sol == "bilinear") return poisson_bilinear();
        if (sol == "line") return poisson_line_singularity();
        C1MP_REQUIRE(sol == "sine", parameter_error, "unknown poisson solution id: ", sol);
        return poisson_sine();
    }
    if (sol == "corner") return biharmonic_lshape_corner();
    C1MP_REQUIRE(sol == "quadratic", parameter_error, "unknown biharmonic solution id: ", sol);
    return biharmonic_quadratic();
}

// ---------------------------------------------------------------- CSV / SVG

std::string ledger_csv(const std::vector<LedgerRow>& rows, ProblemKind kind) {
    std::string s = "iter,ndof,levels,";
    s += kind == ProblemKind::Poisson ? "err_h1" : "err_h2";
    s += ",estimator,seconds\n";
    char buf[160];
    for (const LedgerRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%ld,%d,%.12e,%.12e,%.3f\n", r.iter, r.ndof, r.levels,
                      r.error, r.estimator, r.seconds);
        s += buf;
    }
    return s;
}

void save_text(const std::string& text, const std::string& path) {
    std::ofstream out(path);
    C1MP_REQUIRE(out.good(), parameter_error, "cannot open output file ", path);
    out << text;
}

namespace {

struct BBox {
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    void add(const Vec2& p) {
        x0 = std::min(x0, p[0]);
        x1 = std::max(x1, p[0]);
        y0 = std::min(y0, p[1]);
        y1 = std::max(y1, p[1]);
    }
};

const char* level_color(int l) {
    static const char* palette[] = {"#f2f0f7", "#dadaeb", "#bcbddc", "#9e9ac8",
                                    "#807dba", "#6a51a3", "#54278f", "#3f007d",
                                    "#2d004b", "#1a0033", "#10001f", "#080010"};
    return palette[std::min(l, 11)];
}

} // namespace

std::string svg_mesh(const MultiPatchGeometry& geo, const HierarchicalMesh& mesh) {
    BBox bb;
    for (int p = 0; p < geo.num_patches(); ++p)
        for (double a : {0.0, 0.5, 1.0})
            for (double b : {0.0, 0.5, 1.0}) bb.add(geo.eval_geometry(p, {a, b}, 0).point);
    const double w = 720, margin = 20;
    const double scale = (w - 2 * margin) / std::max(bb.x1 - bb.x0, bb.y1 - bb.y0);
    const double h = (bb.y1 - bb.y0) * scale + 2 * margin;
    auto tx = [&](const Vec2& p) {
        return std::pair{margin + (p[0] - bb.x0) * scale, h - margin - (p[1] - bb.y0) * scale};
    };
    std::string s;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\">\n", w,
                  h);
    s += buf;
    for (const auto& [l, c] : mesh.all_active()) {
        const int nel = mesh.elements_1d(l);
        const double a1 = static_cast<double>(c.e1) / nel, b1 = (c.e1 + 1.0) / nel;
        const double a2 = static_cast<double>(c.e2) / nel, b2 = (c.e2 + 1.0) / nel;
        s += "<polygon points=\"";
        for (const Vec2& xi : {Vec2{a1, a2}, Vec2{b1, a2}, Vec2{b1, b2}, Vec2{a1, b2}}) {
            const auto [px, py] = tx(geo.eval_geometry(c.patch, xi, 0).point);
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px, py);
            s += buf;
        }
        std::snprintf(buf, sizeof buf, "\" fill=\"%s\" stroke=\"#333\" stroke-width=\"0.5\"/>\n",
                      level_color(l));
        s += buf;
    }
    s += "</svg>\n";
    return s;
}

std::string svg_loglog(const std::vector<PlotSeries>& series) {
    double lx0 = 1e300, lx1 = -1e300, ly0 = 1e300, ly1 = -1e300;
    for (const PlotSeries& ps : series)
        for (const auto& [x, y] : ps.points) {
            lx0 = std::min(lx0, std::log10(x));
            lx1 = std::max(lx1, std::log10(x));
            ly0 = std::min(ly0, std::log10(y));
            ly1 = std::max(ly1, std::log10(y));
        }
    const double w = 640, h = 480, m = 50;
    auto tx = [&](double x, double y) {
        const double px = m + (std::log10(x) - lx0) / std::max(lx1 - lx0, 1e-12) * (w - 2 * m);
        const double py = h - m - (std::log10(y) - ly0) / std::max(ly1 - ly0, 1e-12) * (h - 2 * m);
        return std::pair{px, py};
    };
    static const char* colors[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"};
    std::string s;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\">\n", w, h);
    s += buf;
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.0f\" y=\"%.0f\" width=\"%.0f\" height=\"%.0f\" fill=\"none\" "
                  "stroke=\"#000\"/>\n",
                  m, m, w - 2 * m, h - 2 * m);
    s += buf;
    // decade ticks
    for (int d = static_cast<int>(std::ceil(lx0)); d <= static_cast<int>(std::floor(lx1)); ++d) {
        const auto [px, py] = tx(std::pow(10, d), std::pow(10, ly0));
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#aaa\"/>"
                      "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\">1e%d</text>\n",
                      px, m, px, h - m, px - 12, h - m + 16, d);
        s += buf;
    }
    for (int d = static_cast<int>(std::ceil(ly0)); d <= static_cast<int>(std::floor(ly1)); ++d) {
        const auto [px, py] = tx(std::pow(10, lx0), std::pow(10, d));
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#aaa\"/>"
                      "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\">1e%d</text>\n",
                      m, py, w - m, py, 4.0, py + 4, d);
        s += buf;
    }
    for (size_t si = 0; si < series.size(); ++si) {
        s += "<polyline fill=\"none\" stroke=\"";
        s += colors[si % 5];
        s += "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : series[si].points) {
            const auto [px, py] = tx(x, y);
            std::snprintf(buf, sizeof buf, "%.1f,%.1f ", px, py);
            s += buf;
        }
        s += "\"/>\n";
        std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" fill=\"%s\">%s</text>\n",
                      w - m - 150.0, m + 18.0 * (si + 1), colors[si % 5], series[si].label.c_str());
        s += buf;
    }
    s += "</svg>\n";
    return s;
}

} // namespace c1mp
