#include "c1mp/c1basis.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace c1mp {

namespace {

int level_breaks(const UnivariateSpace& s0, int level) {
    return (1 << level) * (s0.k() + 1) - 1;
}

std::pair<int, int> inverse_apply_index(const OrientationCode& c, int a, int b, int n) {
    if (c.reverse_u) a = n - 1 - a;
    if (c.reverse_v) b = n - 1 - b;
    return c.swap_axes ? std::pair{b, a} : std::pair{a, b};
}

// Accumulates "row profile x across-strip" products into a frame-local dense
// grid that is later pushed to the stored patch block.
struct FrameGrid {
    std::map<std::pair<int, int>, double> c;
    void add(int i, int j, double v) {
        if (v != 0.0) c[{i, j}] += v;
    }
};

} // namespace

std::array<std::pair<int, int>, 6> vertex_index_set() {
    return {std::pair{0, 0}, {1, 0}, {2, 0}, {0, 1}, {1, 1}, {0, 2}};
}

C1LevelSpace::C1LevelSpace(const MultiPatchGeometry& geo, int level)
    : geo_(&geo), level_(level),
      space_(geo.space0().p(), geo.space0().r(), level_breaks(geo.space0(), level)) {
    pk1_ = static_cast<double>(space_.p()) * (space_.k() + 1);
}

long C1LevelSpace::dimension() const {
    const long ni = static_cast<long>(n() - 4) * (n() - 4);
    long dim = ni * geo_->num_patches();
    dim += static_cast<long>(edge_function_count()) * geo_->num_edges();
    dim += 6L * geo_->num_vertices();
    return dim;
}

double C1LevelSpace::sigma(int vertex) const {
    const VertexFrame& f = geo_->vertex_frame(vertex);
    C1MP_REQUIRE(f.grad_norm_sum > 1e-14, geometry_error,
                 "vertex ", vertex, ": zero geometry gradient");
    return pk1_ * static_cast<double>(f.patches.size()) / f.grad_norm_sum;
}

std::vector<FuncKey> C1LevelSpace::all_functions() const {
    std::vector<FuncKey> out;
    out.reserve(static_cast<size_t>(dimension()));
    for (int p = 0; p < geo_->num_patches(); ++p)
        for (int j2 = interior_lo(); j2 <= interior_hi(); ++j2)
            for (int j1 = interior_lo(); j1 <= interior_hi(); ++j1)
                out.push_back({FuncKey::Interior, p, j1, j2});
    for (int e = 0; e < geo_->num_edges(); ++e) {
        for (int j1 = trace_lo(); j1 <= trace_hi(); ++j1) out.push_back({FuncKey::Edge, e, j1, 0});
        for (int j1 = deriv_lo(); j1 <= deriv_hi(); ++j1) out.push_back({FuncKey::Edge, e, j1, 1});
    }
    for (int v = 0; v < geo_->num_vertices(); ++v)
        for (const auto& [j1, j2] : vertex_index_set()) out.push_back({FuncKey::Vertex, v, j1, j2});
    return out;
}

void C1LevelSpace::functions_on_cell(const CellId& cell, std::vector<FuncKey>& out) const {
    const BsplineBasis& base = space_.base();
    const int nel = base.num_elements();

    // interior
    const int lo1 = std::max(base.first_on_element(cell.e1), interior_lo());
    const int hi1 = std::min(base.last_on_element(cell.e1), interior_hi());
    const int lo2 = std::max(base.first_on_element(cell.e2), interior_lo());
    const int hi2 = std::min(base.last_on_element(cell.e2), interior_hi());
    for (int j2 = lo2; j2 <= hi2; ++j2)
        for (int j1 = lo1; j1 <= hi1; ++j1)
            out.push_back({FuncKey::Interior, cell.patch, j1, j2});

    // edge functions of the four sides
    for (int side = 0; side < 4; ++side) {
        const bool at_side = (side == SIDE_XI1_LO && cell.e1 == 0) ||
                             (side == SIDE_XI1_HI && cell.e1 == nel - 1) ||
                             (side == SIDE_XI2_LO && cell.e2 == 0) ||
                             (side == SIDE_XI2_HI && cell.e2 == nel - 1);
        if (!at_side) continue;
        const int e = geo_->edge_at(cell.patch, side);
        const EdgeTopo& et = geo_->edge(e);
        int along = (side == SIDE_XI1_LO || side == SIDE_XI1_HI) ? cell.e2 : cell.e1;
        for (const EdgeSideRef& sr : et.sides)
            if (sr.patch == cell.patch && sr.side == side && sr.reversed) along = nel - 1 - along;
        const int t_lo = std::max(space_.sub0().first_on_element(along), trace_lo());
        const int t_hi = std::min(space_.sub0().last_on_element(along), trace_hi());
        for (int j1 = t_lo; j1 <= t_hi; ++j1) out.push_back({FuncKey::Edge, e, j1, 0});
        const int d_lo = std::max(space_.sub1().first_on_element(along), deriv_lo());
        const int d_hi = std::min(space_.sub1().last_on_element(along), deriv_hi());
        for (int j1 = d_lo; j1 <= d_hi; ++j1) out.push_back({FuncKey::Edge, e, j1, 1});
    }

    // vertex functions of the four corners
    const int ext = std::max(space_.sub0().support_elements(2).second,
                             space_.sub1().support_elements(1).second);
    for (int corner = 0; corner < 4; ++corner) {
        const int v = geo_->vertex_at(cell.patch, corner);
        const VertexFrame& f = geo_->vertex_frame(v);
        for (const auto& fp : f.patches) {
            if (fp.patch != cell.patch) continue;
            const auto [l1, l2] = inverse_apply_index(fp.code, cell.e1, cell.e2, nel);
            if ((l1 == 0 && l2 <= ext) || (l2 == 0 && l1 <= ext)) {
                for (const auto& [j1, j2] : vertex_index_set())
                    out.push_back({FuncKey::Vertex, v, j1, j2});
            }
            break;
        }
    }
}

// ------------------------------------------------------------ profile helpers

SparseRow C1LevelSpace::to_base(const BsplineBasis& src, int j, const Poly1* mult,
                                bool derivative) const {
    const auto [e0, e1] = src.support_elements(j);
    const double lo = src.break_at(e0);
    const double hi = src.break_at(e1 + 1);
    return convert_to_basis(space_.base(), lo, hi, [&](double x) {
        const SpanEval ev = src.eval(x, derivative ? 1 : 0);
        double v = 0;
        if (j >= ev.first && j < ev.first + ev.count)
            v = ev.deriv(derivative ? 1 : 0)[static_cast<size_t>(j - ev.first)];
        return mult ? (*mult)(x)*v : v;
    });
}

// ---------------------------------------------------------------- edge basis

Extraction C1LevelSpace::build_edge_fn(int edge, int j1, int type) const {
    const EdgeTopo& et = geo_->edge(edge);
    const GluingData& g = geo_->gluing(edge);
    const int nn = n();

    Extraction out;
    for (size_t sidx = 0; sidx < et.sides.size(); ++sidx) {
        const EdgeSideRef& sr = et.sides[sidx];
        const OrientationCode code = sidx == 0 ? geo_->edge_frame(edge).code0
                                               : geo_->edge_frame(edge).code1;
        FrameGrid fg;
        if (type == 0) {
            const Poly1 beta = sidx == 0 ? g.beta0 : g.beta1;
            const SparseRow u = to_base(space_.sub0(), j1, nullptr, false);
            const SparseRow w = to_base(space_.sub0(), j1, &beta, true);
            if (sidx == 0) {
                for (size_t i = 0; i < u.coef.size(); ++i) {
                    fg.add(0, u.first + static_cast<int>(i), u.coef[i]);
                    fg.add(1, u.first + static_cast<int>(i), u.coef[i]);
                }
                for (size_t i = 0; i < w.coef.size(); ++i)
                    fg.add(1, w.first + static_cast<int>(i), -w.coef[i] / pk1_);
            } else {
                for (size_t i = 0; i < u.coef.size(); ++i) {
                    fg.add(u.first + static_cast<int>(i), 0, u.coef[i]);
                    fg.add(u.first + static_cast<int>(i), 1, u.coef[i]);
                }
                for (size_t i = 0; i < w.coef.size(); ++i)
                    fg.add(w.first + static_cast<int>(i), 1, -w.coef[i] / pk1_);
            }
        } else {
            const Poly1 alpha = sidx == 0 ? g.alpha0 : g.alpha1;
            const SparseRow z = to_base(space_.sub1(), j1, &alpha, false);
            const double sign = sidx == 0 ? 1.0 : -1.0;
            for (size_t i = 0; i < z.coef.size(); ++i) {
                if (sidx == 0)
                    fg.add(1, z.first + static_cast<int>(i), sign * z.coef[i]);
                else
                    fg.add(z.first + static_cast<int>(i), 1, sign * z.coef[i]);
            }
        }

        // push to the stored index grid
        int alo = nn, ahi = -1, blo = nn, bhi = -1;
        for (const auto& [ij, val] : fg.c) {
            if (std::abs(val) < 1e-14) continue;
            const auto [a, b] = code.apply_index(ij.first, ij.second, nn);
            alo = std::min(alo, a);
            ahi = std::max(ahi, a);
            blo = std::min(blo, b);
            bhi = std::max(bhi, b);
        }
        if (ahi < alo) continue;
        PatchBlock blk;
        blk.patch = sr.patch;
        blk.i0 = alo;
        blk.j0 = blo;
        blk.c = Eigen::MatrixXd::Zero(ahi - alo + 1, bhi - blo + 1);
        for (const auto& [ij, val] : fg.c) {
            if (std::abs(val) < 1e-14) continue;
            const auto [a, b] = code.apply_index(ij.first, ij.second, nn);
            blk.c(a - alo, b - blo) += val;
        }
        out.blocks.push_back(std::move(blk));
    }
    return out;
}

// ---------------------------------------------------------------- vertex basis

C1LevelSpace::VertexBasisData C1LevelSpace::build_vertex_basis(int v) const {
    const VertexFrame& f = geo_->vertex_frame(v);
    const VertexTopo& vt = geo_->vertex(v);
    const int nu = static_cast<int>(f.patches.size());
    const bool boundary = vt.kind == EntityKind::Boundary;
    const double sig = sigma(v);
    const int nn = n();

    // make sure all fan-edge gluing data is valid
    for (const auto& fe : f.edges) (void)geo_->gluing(fe.edge_id);

    // profile coefficient tables, shared by the six functions
    struct Profiles {
        std::array<SparseRow, 3> F;  // M_{p,r+1,w} in S_p^r
        std::array<SparseRow, 3> G;  // beta * M'_{p,r+1,w}
        std::array<SparseRow, 2> H;  // alpha * M_{p-1,r,w}
    };
    const double hi0 = space_.sub0().break_at(
        std::min(space_.sub0().support_elements(2).second + 1, space_.sub0().num_elements()));
    const double hi1 = space_.sub1().break_at(
        std::min(space_.sub1().support_elements(1).second + 1, space_.sub1().num_elements()));
    auto make_profiles = [&](const Poly1& alpha, const Poly1& beta) {
        Profiles pr;
        for (int w = 0; w < 3; ++w) {
            pr.F[static_cast<size_t>(w)] = convert_to_basis(space_.base(), 0.0, hi0, [&](double x) {
                return space_.modified_basis(ModifiedFamily::MP_rp1, x, 0)[0][static_cast<size_t>(w)];
            });
            pr.G[static_cast<size_t>(w)] = convert_to_basis(space_.base(), 0.0, hi0, [&](double x) {
                return beta(x) *
                       space_.modified_basis(ModifiedFamily::MP_rp1, x, 1)[1][static_cast<size_t>(w)];
            });
        }
        for (int w = 0; w < 2; ++w)
            pr.H[static_cast<size_t>(w)] = convert_to_basis(space_.base(), 0.0, hi1, [&](double x) {
                return alpha(x) *
                       space_.modified_basis(ModifiedFamily::MPm1_r, x, 0)[0][static_cast<size_t>(w)];
            });
        return pr;
    };

    VertexBasisData out;
    const auto jset = vertex_index_set();

    for (int m = 0; m < nu; ++m) {
        const auto& fp = f.patches[static_cast<size_t>(m)];
        const int prec_slot = m;
        const int next_slot = boundary ? m + 1 : (m + 1) % nu;
        const auto& fe_prec = f.edges[static_cast<size_t>(prec_slot)];
        const auto& fe_next = f.edges[static_cast<size_t>(next_slot)];

        // g^next uses the side-0 data of the next edge, g^prec the side-1 data
        // of the preceding edge.
        const Profiles pr_next = make_profiles(fe_next.glue.alpha0, fe_next.glue.beta0);
        const Profiles pr_prec = make_profiles(fe_prec.glue.alpha1, fe_prec.glue.beta1);

        const GeomEval gcorner = eval_net(fp.net, geo_->space0().base(), {0, 0}, 2);
        // the geometry is level-0 but its mixed derivative is level-free
        const Vec2 mixed = gcorner.d12;

        for (size_t jj = 0; jj < 6; ++jj) {
            const auto [j1, j2] = jset[jj];
            Mat2 A = Mat2::Zero();
            A(0, 0) = (j1 == 2 && j2 == 0) ? 1.0 : 0.0;
            A(0, 1) = (j1 == 1 && j2 == 1) ? 1.0 : 0.0;
            A(1, 0) = A(0, 1);
            A(1, 1) = (j1 == 0 && j2 == 2) ? 1.0 : 0.0;
            const Vec2 b{(j1 == 1 && j2 == 0) ? 1.0 : 0.0, (j1 == 0 && j2 == 1) ? 1.0 : 0.0};

            auto coeffs = [&](const VertexFrame::FanEdge& fe) {
                std::array<double, 3> c{};
                std::array<double, 2> d{};
                c[0] = (j1 == 0 && j2 == 0) ? 1.0 : 0.0;
                c[1] = b.dot(fe.t0);
                c[2] = fe.t0.dot(A * fe.t0) + b.dot(fe.t0_d);
                d[0] = b.dot(fe.d0);
                d[1] = fe.t0.dot(A * fe.d0) + b.dot(fe.d0_d);
                return std::pair{c, d};
            };
            const auto [cn, dn] = coeffs(fe_next);
            const auto [cp, dp] = coeffs(fe_prec);

            FrameGrid fg;
            auto add_row = [&](int row, const SparseRow& r, double scale) {
                for (size_t i = 0; i < r.coef.size(); ++i)
                    fg.add(row, r.first + static_cast<int>(i), scale * r.coef[i]);
            };
            auto add_col = [&](int col, const SparseRow& r, double scale) {
                for (size_t i = 0; i < r.coef.size(); ++i)
                    fg.add(r.first + static_cast<int>(i), col, scale * r.coef[i]);
            };

            // g^next
            for (int w = 0; w < 3; ++w) {
                add_row(0, pr_next.F[static_cast<size_t>(w)], cn[static_cast<size_t>(w)]);
                add_row(1, pr_next.F[static_cast<size_t>(w)], cn[static_cast<size_t>(w)]);
                add_row(1, pr_next.G[static_cast<size_t>(w)], -cn[static_cast<size_t>(w)] / pk1_);
            }
            for (int w = 0; w < 2; ++w)
                add_row(1, pr_next.H[static_cast<size_t>(w)], dn[static_cast<size_t>(w)] / pk1_);

            // g^prec
            for (int w = 0; w < 3; ++w) {
                add_col(0, pr_prec.F[static_cast<size_t>(w)], cp[static_cast<size_t>(w)]);
                add_col(1, pr_prec.F[static_cast<size_t>(w)], cp[static_cast<size_t>(w)]);
                add_col(1, pr_prec.G[static_cast<size_t>(w)], -cp[static_cast<size_t>(w)] / pk1_);
            }
            for (int w = 0; w < 2; ++w)
                add_col(1, pr_prec.H[static_cast<size_t>(w)], -dp[static_cast<size_t>(w)] / pk1_);

            // h
            const double e00 = (j1 == 0 && j2 == 0) ? 1.0 : 0.0;
            const double e10 = cp[1];
            const double e01 = cn[1];
            const double e11 = fe_prec.t0.dot(A * fe_next.t0) + b.dot(mixed);
            fg.add(0, 0, -e00);
            fg.add(1, 0, -(e00 + e10 / pk1_));
            fg.add(0, 1, -(e00 + e01 / pk1_));
            fg.add(1, 1, -(e00 + (e10 + e01) / pk1_ + e11 / (pk1_ * pk1_)));

            // push scaled grid to the stored patch
            const double scale = std::pow(sig, j1 + j2);
            int alo = nn, ahi = -1, blo = nn, bhi = -1;
            for (const auto& [ij, val] : fg.c) {
                if (std::abs(val * scale) < 1e-15) continue;
                const auto [a, bdx] = fp.code.apply_index(ij.first, ij.second, nn);
                alo = std::min(alo, a);
                ahi = std::max(ahi, a);
                blo = std::min(blo, bdx);
                bhi = std::max(bhi, bdx);
            }
            if (ahi < alo) continue;
            PatchBlock blk;
            blk.patch = fp.patch;
            blk.i0 = alo;
            blk.j0 = blo;
            blk.c = Eigen::MatrixXd::Zero(ahi - alo + 1, bhi - blo + 1);
            for (const auto& [ij, val] : fg.c) {
                const auto [a, bdx] = fp.code.apply_index(ij.first, ij.second, nn);
                if (a < alo || a > ahi || bdx < blo || bdx > bhi) continue;
                blk.c(a - alo, bdx - blo) += scale * val;
            }
            out.fn[jj].blocks.push_back(std::move(blk));
        }
    }
    return out;
}

// ---------------------------------------------------------------- caches

const C1LevelSpace::VertexBasisData& C1LevelSpace::vertex_basis(int v) const {
    auto it = vertex_cache_.find(v);
    if (it == vertex_cache_.end()) it = vertex_cache_.emplace(v, build_vertex_basis(v)).first;
    return it->second;
}

const Extraction& C1LevelSpace::edge_fn(int edge, int j1, int type) const {
    const FuncKey key{FuncKey::Edge, edge, j1, type};
    auto it = fn_cache_.find(key);
    if (it == fn_cache_.end()) it = fn_cache_.emplace(key, build_edge_fn(edge, j1, type)).first;
    return it->second;
}

const Extraction& C1LevelSpace::extraction(const FuncKey& key) const {
    auto it = fn_cache_.find(key);
    if (it != fn_cache_.end()) return it->second;
    Extraction ex;
    switch (key.kind) {
    case FuncKey::Interior: {
        PatchBlock blk;
        blk.patch = key.entity;
        blk.i0 = key.j1;
        blk.j0 = key.j2;
        blk.c = Eigen::MatrixXd::Ones(1, 1);
        ex.blocks.push_back(std::move(blk));
        break;
    }
    case FuncKey::Edge:
        return edge_fn(key.entity, key.j1, key.j2);
    case FuncKey::Vertex: {
        const auto jset = vertex_index_set();
        const auto& vb = vertex_basis(key.entity);
        for (size_t i = 0; i < 6; ++i) {
            const FuncKey k{FuncKey::Vertex, key.entity, jset[i].first, jset[i].second};
            fn_cache_.emplace(k, vb.fn[i]);
        }
        return fn_cache_.at(key);
    }
    }
    return fn_cache_.emplace(key, std::move(ex)).first->second;
}

const std::vector<CellId>& C1LevelSpace::support_cells(const FuncKey& key) const {
    auto it = supp_cache_.find(key);
    if (it != supp_cache_.end()) return it->second;
    const Extraction& ex = extraction(key);
    const BsplineBasis& base = space_.base();
    std::set<CellId> cells;
    for (const PatchBlock& blk : ex.blocks) {
        for (int i = 0; i < blk.c.rows(); ++i)
            for (int j = 0; j < blk.c.cols(); ++j) {
                if (std::abs(blk.c(i, j)) < 1e-13) continue;
                const auto [a0, a1] = base.support_elements(blk.i0 + i);
                const auto [b0, b1] = base.support_elements(blk.j0 + j);
                for (int e1 = a0; e1 <= a1; ++e1)
                    for (int e2 = b0; e2 <= b1; ++e2) cells.insert({blk.patch, e1, e2});
            }
    }
    std::vector<CellId> out(cells.begin(), cells.end());
    return supp_cache_.emplace(key, std::move(out)).first->second;
}

// ---------------------------------------------------------------- evaluation

ParamDerivs C1LevelSpace::eval_param(const FuncKey& key, int patch, const Vec2& xi,
                                     int max_deriv) const {
    const Extraction& ex = extraction(key);
    const PatchBlock* blk = ex.block_on(patch);
    ParamDerivs out;
    if (!blk) return out;
    const BsplineBasis& base = space_.base();
    const SpanEval e1 = base.eval(xi[0], max_deriv);
    const SpanEval e2 = base.eval(xi[1], max_deriv);
    for (int a = 0; a < e1.count; ++a) {
        const int i = e1.first + a - blk->i0;
        if (i < 0 || i >= blk->c.rows()) continue;
        for (int b = 0; b < e2.count; ++b) {
            const int j = e2.first + b - blk->j0;
            if (j < 0 || j >= blk->c.cols()) continue;
            const double c = blk->c(i, j);
            if (c == 0.0) continue;
            out.v += c * e1.value[static_cast<size_t>(a)] * e2.value[static_cast<size_t>(b)];
            if (max_deriv >= 1) {
                out.d1 += c * e1.d1[static_cast<size_t>(a)] * e2.value[static_cast<size_t>(b)];
                out.d2 += c * e1.value[static_cast<size_t>(a)] * e2.d1[static_cast<size_t>(b)];
            }
            if (max_deriv >= 2) {
                out.d11 += c * e1.d2[static_cast<size_t>(a)] * e2.value[static_cast<size_t>(b)];
                out.d12 += c * e1.d1[static_cast<size_t>(a)] * e2.d1[static_cast<size_t>(b)];
                out.d22 += c * e1.value[static_cast<size_t>(a)] * e2.d2[static_cast<size_t>(b)];
            }
        }
    }
    return out;
}

PhysicalDerivs C1LevelSpace::eval_phys(const FuncKey& key, int patch, const Vec2& xi,
                                       int max_deriv) const {
    const ParamDerivs pd = eval_param(key, patch, xi, max_deriv);
    const GeomEval g = geo_->eval_geometry(patch, xi, max_deriv);
    return physical_derivs(pd.v, pd.d1, pd.d2, pd.d11, pd.d12, pd.d22, g, max_deriv);
}

std::vector<std::tuple<int, int, int>> C1LevelSpace::coeff_support(const FuncKey& key) const {
    const Extraction& ex = extraction(key);
    std::vector<std::tuple<int, int, int>> out;
    for (const PatchBlock& blk : ex.blocks)
        for (int i = 0; i < blk.c.rows(); ++i)
            for (int j = 0; j < blk.c.cols(); ++j)
                if (std::abs(blk.c(i, j)) > 1e-13)
                    out.emplace_back(blk.patch, blk.i0 + i, blk.j0 + j);
    return out;
}

ParamDerivs C1LevelSpace::eval_grid(const std::map<std::pair<int, int>, double>& grid, int,
                                    const Vec2& xi, int max_deriv) const {
    const BsplineBasis& base = space_.base();
    const SpanEval e1 = base.eval(xi[0], max_deriv);
    const SpanEval e2 = base.eval(xi[1], max_deriv);
    ParamDerivs out;
    for (int a = 0; a < e1.count; ++a)
        for (int b = 0; b < e2.count; ++b) {
            const auto it = grid.find({e1.first + a, e2.first + b});
            if (it == grid.end() || it->second == 0.0) continue;
            const double c = it->second;
            out.v += c * e1.value[static_cast<size_t>(a)] * e2.value[static_cast<size_t>(b)];
            if (max_deriv >= 1) {
                out.d1 += c * e1.d1[static_cast<size_t>(a)] * e2.value[static_cast<size_t>(b)];
                out.d2 += c * e1.value[static_cast<size_t>(a)] * e2.d1[static_cast<size_t>(b)];
            }
            if (max_deriv >= 2) {
                out.d11 += c * e1.d2[static_cast<size_t>(a)] * e2.value[static_cast<size_t>(b)];
                out.d12 += c * e1.d1[static_cast<size_t>(a)] * e2.d1[static_cast<size_t>(b)];
                out.d22 += c * e1.value[static_cast<size_t>(a)] * e2.d2[static_cast<size_t>(b)];
            }
        }
    return out;
}

// ---------------------------------------------------------------- analysis

std::vector<std::pair<FuncKey, double>> C1LevelSpace::analyze(CoefGrids grids, double tol) const {
    C1MP_REQUIRE(static_cast<int>(grids.size()) == geo_->num_patches(), parameter_error,
                 "analyze: one grid per patch required");
    const int nn = n();
    double scale = 1e-300;
    for (const auto& g : grids)
        for (const auto& [ij, v] : g) scale = std::max(scale, std::abs(v));
    if (scale < 1e-299) return {};
    const double drop = 1e-13 * scale;

    std::vector<std::pair<FuncKey, double>> out;

    auto subtract = [&](const Extraction& ex, double m) {
        for (const PatchBlock& blk : ex.blocks) {
            auto& g = grids[static_cast<size_t>(blk.patch)];
            for (int i = 0; i < blk.c.rows(); ++i)
                for (int j = 0; j < blk.c.cols(); ++j)
                    if (blk.c(i, j) != 0.0) g[{blk.i0 + i, blk.j0 + j}] -= m * blk.c(i, j);
        }
    };

    // 1. vertex functions from the C2 data at each vertex
    for (int v = 0; v < geo_->num_vertices(); ++v) {
        const VertexFrame& f = geo_->vertex_frame(v);
        const auto& fp = f.patches[0];
        // local corner window relevant?
        bool touched = false;
        for (const auto& p : f.patches) {
            const auto& g = grids[static_cast<size_t>(p.patch)];
            for (int i = 0; i <= 2 && !touched; ++i)
                for (int j = 0; j <= 2 && !touched; ++j) {
                    const auto [a, b] = p.code.apply_index(i, j, nn);
                    const auto it = g.find({a, b});
                    if (it != g.end() && std::abs(it->second) > drop) touched = true;
                }
            if (touched) break;
        }
        if (!touched) continue;

        // parametric derivatives of the local pullback at (0,0)
        std::map<std::pair<int, int>, double> local;
        const auto& gstored = grids[static_cast<size_t>(fp.patch)];
        for (int i = 0; i <= space_.p(); ++i)
            for (int j = 0; j <= space_.p(); ++j) {
                const auto [a, b] = fp.code.apply_index(i, j, nn);
                const auto it = gstored.find({a, b});
                if (it != gstored.end()) local[{i, j}] = it->second;
            }
        const ParamDerivs pd = eval_grid(local, 0, {0, 0}, 2);
        const GeomEval ge = eval_net(fp.net, geo_->space0().base(), {0, 0}, 2);
        const PhysicalDerivs ph = physical_derivs(pd.v, pd.d1, pd.d2, pd.d11, pd.d12, pd.d22, ge, 2);
        const double sig = sigma(v);
        const auto jset = vertex_index_set();
        for (size_t jj = 0; jj < 6; ++jj) {
            const auto [j1, j2] = jset[jj];
            double d = 0;
            if (j1 == 0 && j2 == 0) d = ph.v;
            else if (j1 == 1 && j2 == 0) d = ph.grad[0];
            else if (j1 == 2 && j2 == 0) d = ph.hxx;
            else if (j1 == 0 && j2 == 1) d = ph.grad[1];
            else if (j1 == 1 && j2 == 1) d = ph.hxy;
            else d = ph.hyy;
            const double m = d / std::pow(sig, j1 + j2);
            if (std::abs(m) < drop) continue;
            const FuncKey key{FuncKey::Vertex, v, j1, j2};
            subtract(extraction(key), m);
            out.emplace_back(key, m);
        }
    }

    // 2. edge functions from the f0/f1 traces; strips are collected by
    // scanning the sparse grid entries once per edge (grids stay local)
    const BsplineBasis& base = space_.base();
    const SpanEval at0 = base.eval(0.0, 1);
    const double n0p = at0.d1[0]; // N_0'(0)
    const double n1p = at0.d1[1]; // N_1'(0)
    for (int e = 0; e < geo_->num_edges(); ++e) {
        const EdgeSideRef& sr = geo_->edge(e).sides[0];
        const OrientationCode& code = geo_->edge_frame(e).code0;
        const auto& g = grids[static_cast<size_t>(sr.patch)];
        std::map<int, double> srow0, srow1;
        for (const auto& [ij, val] : g) {
            if (val == 0.0) continue;
            // local frame coords of this stored entry
            int a = ij.first, b = ij.second;
            if (code.reverse_u) a = nn - 1 - a;
            if (code.reverse_v) b = nn - 1 - b;
            const int l1 = code.swap_axes ? b : a;
            const int l2 = code.swap_axes ? a : b;
            if (l1 == 0) srow0[l2] += val;
            else if (l1 == 1) srow1[l2] += val;
        }
        bool touched = false;
        int jmin = nn, jmax = -1;
        for (const auto& [j, v] : srow0)
            if (std::abs(v) > drop) {
                touched = true;
                jmin = std::min(jmin, j);
                jmax = std::max(jmax, j);
            }
        for (const auto& [j, v] : srow1)
            if (std::abs(v) > drop) {
                touched = true;
                jmin = std::min(jmin, j);
                jmax = std::max(jmax, j);
            }
        if (!touched) continue;
        auto row0 = [&](int j) {
            const auto it = srow0.find(j);
            return it == srow0.end() ? 0.0 : it->second;
        };
        auto row1 = [&](int j) {
            const auto it = srow1.find(j);
            return it == srow1.end() ? 0.0 : it->second;
        };
        const double lo = base.break_at(base.support_elements(jmin).first);
        const double hi = base.break_at(base.support_elements(jmax).second + 1);

        const GluingData& gd = geo_->gluing(e);
        auto trace_eval = [&](double x, int der) {
            const SpanEval ev = base.eval(x, der);
            double v = 0;
            for (int a = 0; a < ev.count; ++a) v += row0(ev.first + a) * ev.deriv(der)[static_cast<size_t>(a)];
            return v;
        };
        auto drow_eval = [&](double x) {
            const SpanEval ev = base.eval(x, 0);
            double v = 0;
            for (int a = 0; a < ev.count; ++a)
                v += (row0(ev.first + a) * n0p + row1(ev.first + a) * n1p) *
                     ev.value[static_cast<size_t>(a)];
            return v;
        };

        const SparseRow f0 = convert_to_basis(space_.sub0(), lo, hi,
                                              [&](double x) { return trace_eval(x, 0); });
        const SparseRow f1 = convert_to_basis(space_.sub1(), lo, hi, [&](double x) {
            return (drow_eval(x) + gd.beta0(x) * trace_eval(x, 1)) / gd.alpha0(x);
        });
        for (size_t i = 0; i < f0.coef.size(); ++i) {
            const int j1 = f0.first + static_cast<int>(i);
            const double m = f0.coef[i];
            if (std::abs(m) < drop) continue;
            if (j1 < trace_lo() || j1 > trace_hi()) {
                C1MP_REQUIRE(std::abs(m) <= tol * scale, structure_error,
                             "analyze: trace coefficient outside the edge range, |c|=", std::abs(m));
                continue;
            }
            const FuncKey key{FuncKey::Edge, e, j1, 0};
            subtract(extraction(key), m);
            out.emplace_back(key, m);
        }
        for (size_t i = 0; i < f1.coef.size(); ++i) {
            const int j1 = f1.first + static_cast<int>(i);
            const double m = f1.coef[i] / pk1_;
            if (std::abs(m) < drop) continue;
            if (j1 < deriv_lo() || j1 > deriv_hi()) {
                C1MP_REQUIRE(std::abs(m) <= tol * scale, structure_error,
                             "analyze: derivative coefficient outside the edge range, |c|=",
                             std::abs(m));
                continue;
            }
            const FuncKey key{FuncKey::Edge, e, j1, 1};
            subtract(extraction(key), m);
            out.emplace_back(key, m);
        }
    }

    // 3. interior functions are the remainder
    for (int p = 0; p < geo_->num_patches(); ++p) {
        for (auto& [ij, val] : grids[static_cast<size_t>(p)]) {
            if (std::abs(val) <= tol * scale) continue;
            C1MP_REQUIRE(ij.first >= interior_lo() && ij.first <= interior_hi() &&
                             ij.second >= interior_lo() && ij.second <= interior_hi(),
                         structure_error,
                         "analyze: leftover boundary coefficient (input not in the space), |c|=",
                         std::abs(val));
            out.emplace_back(FuncKey{FuncKey::Interior, p, ij.first, ij.second}, val);
        }
    }
    return out;
}

// ---------------------------------------------------------------- C1Levels

const C1LevelSpace& C1Levels::level(int l) const {
    C1MP_REQUIRE(l >= 0 && l < 40, parameter_error, "level out of range");
    if (static_cast<int>(levels_.size()) <= l) levels_.resize(static_cast<size_t>(l) + 1);
    auto& slot = levels_[static_cast<size_t>(l)];
    if (!slot) slot = std::make_unique<C1LevelSpace>(*geo_, l);
    return *slot;
}

} // namespace c1mp
