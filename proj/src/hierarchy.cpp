#include "c1mp/hierarchy.hpp"

#include <functional>

#include <algorithm>

namespace c1mp {

// ---------------------------------------------------------------- mesh

HierarchicalMesh::HierarchicalMesh(const MultiPatchGeometry& geo)
    : geo_(&geo), k0_(geo.space0().k()) {
    active_.resize(1);
    refined_.resize(1);
    const int nel = k0_ + 1;
    for (int p = 0; p < geo.num_patches(); ++p)
        for (int e1 = 0; e1 < nel; ++e1)
            for (int e2 = 0; e2 < nel; ++e2) active_[0].insert({p, e1, e2});
}

const CellSet& HierarchicalMesh::active(int level) const {
    static const CellSet empty;
    if (level < 0 || level >= num_levels()) return empty;
    return active_[static_cast<size_t>(level)];
}

const CellSet& HierarchicalMesh::refined(int level) const {
    static const CellSet empty;
    if (level < 0 || level >= num_levels()) return empty;
    return refined_[static_cast<size_t>(level)];
}

bool HierarchicalMesh::exists(int level, const CellId& c) const {
    if (level == 0) return true;
    return is_refined(level - 1, parent(c));
}

std::array<CellId, 4> HierarchicalMesh::children(const CellId& c) {
    return {CellId{c.patch, 2 * c.e1, 2 * c.e2}, CellId{c.patch, 2 * c.e1 + 1, 2 * c.e2},
            CellId{c.patch, 2 * c.e1, 2 * c.e2 + 1}, CellId{c.patch, 2 * c.e1 + 1, 2 * c.e2 + 1}};
}

CellId HierarchicalMesh::ancestor(int from_level, const CellId& c, int to_level) const {
    C1MP_REQUIRE(to_level <= from_level, parameter_error, "ancestor level must be coarser");
    const int shift = from_level - to_level;
    return {c.patch, c.e1 >> shift, c.e2 >> shift};
}

void HierarchicalMesh::refine_cells(const std::vector<std::pair<int, CellId>>& cells) {
    for (const auto& [l, c] : cells) {
        C1MP_REQUIRE(l >= 0 && l < num_levels() && is_active(l, c), structure_error,
                     "refine_cells: cell is not active");
        if (static_cast<int>(active_.size()) <= l + 1) {
            active_.resize(static_cast<size_t>(l) + 2);
            refined_.resize(static_cast<size_t>(l) + 2);
        }
        active_[static_cast<size_t>(l)].erase(c);
        refined_[static_cast<size_t>(l)].insert(c);
        for (const CellId& ch : children(c)) active_[static_cast<size_t>(l) + 1].insert(ch);
    }
    while (num_levels() > 1 && active_.back().empty() && refined_.back().empty()) {
        active_.pop_back();
        refined_.pop_back();
    }
}

long HierarchicalMesh::num_active() const {
    long n = 0;
    for (const CellSet& s : active_) n += static_cast<long>(s.size());
    return n;
}

std::vector<std::pair<int, CellId>> HierarchicalMesh::all_active() const {
    std::vector<std::pair<int, CellId>> out;
    out.reserve(static_cast<size_t>(num_active()));
    for (int l = 0; l < num_levels(); ++l)
        for (const CellId& c : active_[static_cast<size_t>(l)]) out.emplace_back(l, c);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return std::tie(a.first, a.second.patch, a.second.e2, a.second.e1) <
               std::tie(b.first, b.second.patch, b.second.e2, b.second.e1);
    });
    return out;
}

// ---------------------------------------------------------------- masks

const SparseRow& TwoLevelMasks::refine_row(int level, int j) const {
    if (static_cast<int>(cache_.size()) <= level) cache_.resize(static_cast<size_t>(level) + 1);
    auto& rows = cache_[static_cast<size_t>(level)].refine_rows;
    auto it = rows.find(j);
    if (it == rows.end()) {
        // local collocation against the fine basis (cheap at any depth; the
        // Boehm route in dyadic_refine_matrix serves as the oracle for it)
        const BsplineBasis& coarse = levels_->level(level).space().base();
        const BsplineBasis& fine = levels_->level(level + 1).space().base();
        const auto [e0, e1] = coarse.support_elements(j);
        const SparseRow row = convert_to_basis(
            fine, coarse.break_at(e0), coarse.break_at(e1 + 1),
            [&](double x) { return coarse.value_of(j, x); });
        it = rows.emplace(j, row).first;
    }
    return it->second;
}

const std::vector<std::pair<FuncKey, double>>& TwoLevelMasks::mask(int level,
                                                                   const FuncKey& key) const {
    if (static_cast<int>(cache_.size()) <= level) cache_.resize(static_cast<size_t>(level) + 1);
    auto& masks = cache_[static_cast<size_t>(level)].masks;
    auto it = masks.find(key);
    if (it != masks.end()) return it->second;

    const C1LevelSpace& coarse = levels_->level(level);
    const C1LevelSpace& fine = levels_->level(level + 1);

    CoefGrids grids(static_cast<size_t>(levels_->geometry().num_patches()));
    for (const PatchBlock& blk : coarse.extraction(key).blocks) {
        auto& g = grids[static_cast<size_t>(blk.patch)];
        for (int i = 0; i < blk.c.rows(); ++i) {
            if (blk.c.row(i).cwiseAbs().maxCoeff() == 0.0) continue;
            const SparseRow& ri = refine_row(level, blk.i0 + i);
            for (int j = 0; j < blk.c.cols(); ++j) {
                const double c = blk.c(i, j);
                if (c == 0.0) continue;
                const SparseRow& rj = refine_row(level, blk.j0 + j);
                for (size_t a = 0; a < ri.coef.size(); ++a)
                    for (size_t b = 0; b < rj.coef.size(); ++b) {
                        const double v = c * ri.coef[a] * rj.coef[b];
                        if (v != 0.0)
                            g[{ri.first + static_cast<int>(a), rj.first + static_cast<int>(b)}] += v;
                    }
            }
        }
    }
    auto result = fine.analyze(std::move(grids), 1e-8);
    return masks.emplace(key, std::move(result)).first->second;
}

// ---------------------------------------------------------------- space

HierarchicalSpace::HierarchicalSpace(const C1Levels& levels, const HierarchicalMesh& mesh,
                                     BasisMode mode)
    : levels_(&levels), mesh_(&mesh), mode_(mode), masks_(levels) {
    select_active();
}

void HierarchicalSpace::select_active() {
    functions_.clear();
    for (int l = 0; l < mesh_->num_levels(); ++l) {
        const C1LevelSpace& space = levels_->level(l);
        // candidate functions touch cells of Omega^l
        std::unordered_set<FuncKey, FuncKeyHash> seen;
        std::vector<FuncKey> candidates;
        std::vector<FuncKey> on_cell;
        auto visit = [&](const CellId& c) {
            on_cell.clear();
            space.functions_on_cell(c, on_cell);
            for (const FuncKey& f : on_cell)
                if (seen.insert(f).second) candidates.push_back(f);
        };
        if (l == 0) {
            const int nel = mesh_->elements_1d(0);
            for (int p = 0; p < mesh_->geometry().num_patches(); ++p)
                for (int e1 = 0; e1 < nel; ++e1)
                    for (int e2 = 0; e2 < nel; ++e2) visit({p, e1, e2});
        } else {
            for (const CellId& cr : mesh_->refined(l - 1))
                for (const CellId& ch : HierarchicalMesh::children(cr)) visit(ch);
        }
        std::vector<FuncKey> level_active;
        for (const FuncKey& f : candidates) {
            bool inside = true, strictly_inside = true;
            for (const CellId& c : space.support_cells(f)) {
                if (!mesh_->exists(l, c)) {
                    inside = false;
                    break;
                }
                if (!mesh_->is_refined(l, c)) strictly_inside = false;
            }
            if (inside && !strictly_inside) level_active.push_back(f);
        }
        std::sort(level_active.begin(), level_active.end());
        C1MP_REQUIRE(l < 32, structure_error, "hierarchy depth limit exceeded");
        index_by_key_[l].clear();
        for (const FuncKey& f : level_active) {
            index_by_key_[l][f] = static_cast<int>(functions_.size());
            functions_.push_back({l, f});
        }
    }
    reverse_.clear();
    chains_.clear();
    chains_.resize(functions_.size());
}

int HierarchicalSpace::index_of(int level, const FuncKey& key) const {
    if (level < 0 || level >= 32) return -1;
    const auto it = index_by_key_[level].find(key);
    return it == index_by_key_[level].end() ? -1 : it->second;
}

void HierarchicalSpace::build_reverse_index() const {
    reverse_.assign(static_cast<size_t>(mesh_->num_levels()), {});
    for (size_t i = 0; i < functions_.size(); ++i) {
        const auto& [l, key] = functions_[i];
        for (const CellId& c : levels_->level(l).support_cells(key))
            if (mesh_->exists(l, c)) reverse_[static_cast<size_t>(l)][c].push_back(static_cast<int>(i));
    }
}

std::vector<int> HierarchicalSpace::acting_on(int level, const CellId& cell) const {
    if (reverse_.empty()) build_reverse_index();
    std::vector<int> buf;
    for (int l = 0; l <= level && l < mesh_->num_levels(); ++l) {
        const CellId a = mesh_->ancestor(level, cell, l);
        const auto it = reverse_[static_cast<size_t>(l)].find(a);
        if (it == reverse_[static_cast<size_t>(l)].end()) continue;
        for (int idx : it->second) buf.push_back(idx);
    }
    return buf;
}

const std::vector<std::vector<std::pair<FuncKey, double>>>&
HierarchicalSpace::chain(int idx) const {
    auto& slot = chains_[static_cast<size_t>(idx)];
    if (slot) return *slot;
    const auto& [l0, key0] = functions_[static_cast<size_t>(idx)];
    auto chain = std::make_unique<std::vector<std::vector<std::pair<FuncKey, double>>>>();
    chain->push_back({{key0, 1.0}});
    const int nl = mesh_->num_levels();
    for (int l = l0; l + 1 < nl; ++l) {
        std::unordered_map<FuncKey, double, FuncKeyHash> next;
        for (const auto& [key, coef] : chain->back())
            for (const auto& [fkey, m] : masks_.mask(l, key)) next[fkey] += coef * m;
        std::vector<std::pair<FuncKey, double>> kept;
        const C1LevelSpace& fs = levels_->level(l + 1);
        for (auto& [key, coef] : next) {
            if (std::abs(coef) < 1e-14) continue;
            bool touches_existing = false, inside = true;
            for (const CellId& c : fs.support_cells(key)) {
                if (mesh_->exists(l + 1, c))
                    touches_existing = true;
                else
                    inside = false;
            }
            if (!touches_existing) continue;
            if (mode_ == BasisMode::Truncated && inside) continue; // truncated away
            kept.emplace_back(key, coef);
        }
        std::sort(kept.begin(), kept.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        chain->push_back(std::move(kept));
    }
    slot = std::move(chain);
    return *slot;
}

Eigen::MatrixXd HierarchicalSpace::local_window(int idx, int cell_level, const CellId& cell) const {
    const auto& [fl, fkey] = functions_[static_cast<size_t>(idx)];
    const int p = levels_->geometry().space0().p();
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(p + 1, p + 1);

    auto accumulate = [&](const C1LevelSpace& space, const FuncKey& key, const CellId& c,
                          double coef) {
        const Extraction& ex = space.extraction(key);
        const PatchBlock* blk = ex.block_on(c.patch);
        if (!blk) return;
        const BsplineBasis& base = space.space().base();
        const int f1 = base.first_on_element(c.e1);
        const int f2 = base.first_on_element(c.e2);
        for (int a = 0; a <= p; ++a) {
            const int i = f1 + a - blk->i0;
            if (i < 0 || i >= blk->c.rows()) continue;
            for (int b = 0; b <= p; ++b) {
                const int j = f2 + b - blk->j0;
                if (j < 0 || j >= blk->c.cols()) continue;
                W(a, b) += coef * blk->c(i, j);
            }
        }
    };

    if (mode_ == BasisMode::Plain) {
        // represent the mother function directly at the cell's level by
        // refining its window through the two-level rows level by level —
        // equivalently, evaluate at its own level. Here we only need the
        // window at the function's own level for the cell's ancestor.
        const CellId anc = mesh_->ancestor(cell_level, cell, fl);
        accumulate(levels_->level(fl), fkey, anc, 1.0);
        // refine the window down to cell_level
        for (int l = fl; l < cell_level; ++l) {
            const C1LevelSpace& cs = levels_->level(l);
            const C1LevelSpace& fs = levels_->level(l + 1);
            const CellId ca = mesh_->ancestor(cell_level, cell, l);
            const CellId cb = mesh_->ancestor(cell_level, cell, l + 1);
            const BsplineBasis& cbase = cs.space().base();
            const BsplineBasis& fbase = fs.space().base();
            Eigen::MatrixXd Wf = Eigen::MatrixXd::Zero(p + 1, p + 1);
            const int cf1 = cbase.first_on_element(ca.e1), cf2 = cbase.first_on_element(ca.e2);
            const int ff1 = fbase.first_on_element(cb.e1), ff2 = fbase.first_on_element(cb.e2);
            for (int a = 0; a <= p; ++a) {
                const SparseRow ra = boehm_refine_row(cbase, fbase, cf1 + a);
                for (int b = 0; b <= p; ++b) {
                    if (W(a, b) == 0.0) continue;
                    const SparseRow rb = boehm_refine_row(cbase, fbase, cf2 + b);
                    for (size_t i = 0; i < ra.coef.size(); ++i) {
                        const int fi = ra.first + static_cast<int>(i) - ff1;
                        if (fi < 0 || fi > p) continue;
                        for (size_t j = 0; j < rb.coef.size(); ++j) {
                            const int fj = rb.first + static_cast<int>(j) - ff2;
                            if (fj < 0 || fj > p) continue;
                            Wf(fi, fj) += W(a, b) * ra.coef[i] * rb.coef[j];
                        }
                    }
                }
            }
            W = std::move(Wf);
        }
        return W;
    }

    // truncated: read the chain at the cell's level
    const auto& ch = chain(idx);
    const int pos = cell_level - fl;
    C1MP_REQUIRE(pos >= 0 && pos < static_cast<int>(ch.size()), structure_error,
                 "local_window: cell level outside the chain");
    const C1LevelSpace& space = levels_->level(cell_level);
    for (const auto& [key, coef] : ch[static_cast<size_t>(pos)])
        accumulate(space, key, cell, coef);
    return W;
}

ParamDerivs HierarchicalSpace::eval_param(int idx, int cell_level, const CellId& cell,
                                          const Vec2& xi, int max_deriv) const {
    const auto& [fl, fkey] = functions_[static_cast<size_t>(idx)];
    // a function of a finer level vanishes on coarser active cells: its
    // support is entirely covered by cells of its own level or deeper
    if (cell_level < fl) return {};
    if (mode_ == BasisMode::Plain) return levels_->level(fl).eval_param(fkey, cell.patch, xi, max_deriv);

    const Eigen::MatrixXd W = local_window(idx, cell_level, cell);
    const BsplineBasis& base = levels_->level(cell_level).space().base();
    const SpanEval e1 = base.eval(xi[0], max_deriv);
    const SpanEval e2 = base.eval(xi[1], max_deriv);
    // the window is anchored at the first functions of the cell's spans;
    // evaluation points must lie in the cell
    const int f1 = base.first_on_element(cell.e1);
    const int f2 = base.first_on_element(cell.e2);
    ParamDerivs out;
    for (int a = 0; a < e1.count; ++a) {
        const int i = e1.first + a - f1;
        if (i < 0 || i >= W.rows()) continue;
        for (int b = 0; b < e2.count; ++b) {
            const int j = e2.first + b - f2;
            if (j < 0 || j >= W.cols()) continue;
            const double c = W(i, j);
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

PhysicalDerivs HierarchicalSpace::eval_phys(int idx, int cell_level, const CellId& cell,
                                            const Vec2& xi, int max_deriv) const {
    const ParamDerivs pd = eval_param(idx, cell_level, cell, xi, max_deriv);
    const GeomEval g = levels_->geometry().eval_geometry(cell.patch, xi, max_deriv);
    return physical_derivs(pd.v, pd.d1, pd.d2, pd.d11, pd.d12, pd.d22, g, max_deriv);
}

std::pair<int, CellId> HierarchicalSpace::active_cell_at(int patch, const Vec2& xi) const {
    for (int l = mesh_->num_levels() - 1; l >= 0; --l) {
        const int nel = mesh_->elements_1d(l);
        const CellId c{patch,
                       std::min(static_cast<int>(xi[0] * nel), nel - 1),
                       std::min(static_cast<int>(xi[1] * nel), nel - 1)};
        if (mesh_->is_active(l, c)) return {l, c};
    }
    throw structure_error("no active cell contains the point (inconsistent mesh)");
}

PhysicalDerivs HierarchicalSpace::eval_phys_point(int idx, int patch, const Vec2& xi,
                                                  int max_deriv) const {
    const auto [l, c] = active_cell_at(patch, xi);
    return eval_phys(idx, l, c, xi, max_deriv);
}

bool HierarchicalSpace::acts_on(int idx, int cell_level, const CellId& cell) const {
    const auto& [fl, fkey] = functions_[static_cast<size_t>(idx)];
    const CellId anc = mesh_->ancestor(cell_level, cell, fl);
    const auto& sup = levels_->level(fl).support_cells(fkey);
    if (std::find(sup.begin(), sup.end(), anc) == sup.end()) return false;
    if (mode_ == BasisMode::Plain) return true;
    const Eigen::MatrixXd W = local_window(idx, cell_level, cell);
    return W.cwiseAbs().maxCoeff() > 1e-12;
}

namespace {

// Collocation Gram matrix over the given cells for a row-filler callback;
// full rank is decided by the LDLT pivots. Exact dependencies (the failure
// mode of (P1)) surface as vanishing pivots.
bool gram_full_rank(int nfun, long ncells,
                    const std::function<void(long cell, std::vector<int>&, std::vector<double>&,
                                             const Vec2&)>& fill,
                    const std::function<std::pair<Vec2, Vec2>(long cell)>& cell_rect, int q) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(nfun, nfun);
    std::vector<int> idx;
    std::vector<double> val;
    for (long c = 0; c < ncells; ++c) {
        const auto [lo, ext] = cell_rect(c);
        for (int i = 0; i < q; ++i)
            for (int j = 0; j < q; ++j) {
                const Vec2 xi{lo[0] + ext[0] * (i + 0.5) / q, lo[1] + ext[1] * (j + 0.5) / q};
                idx.clear();
                val.clear();
                fill(c, idx, val, xi);
                for (size_t a = 0; a < idx.size(); ++a)
                    for (size_t b = 0; b < idx.size(); ++b)
                        G(idx[a], idx[b]) += val[a] * val[b];
            }
    }
    // scale rows/cols to unit diagonal so small-support functions are not
    // drowned by the threshold
    Eigen::VectorXd d = G.diagonal().cwiseMax(1e-300).cwiseSqrt();
    for (int i = 0; i < nfun; ++i)
        for (int j = 0; j < nfun; ++j) G(i, j) /= d(i) * d(j);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    if (ldlt.info() != Eigen::Success) return false;
    const double dmax = ldlt.vectorD().maxCoeff();
    return ldlt.vectorD().minCoeff() > 1e-12 * dmax;
}

} // namespace

bool HierarchicalSpace::check_P1(std::vector<int>* witness_levels) const {
    // Linear independence of the active level-l functions restricted to the
    // unrefined region of their level. (The full level basis may legitimately
    // be dependent there: deactivated vertex functions acting on the region
    // need not have an active adjacent element.)
    bool ok = true;
    const int q = levels_->geometry().space0().p() + 2;
    for (int l = 0; l < mesh_->num_levels(); ++l) {
        const CellSet& act = mesh_->active(l);
        if (act.empty()) continue;
        const C1LevelSpace& space = levels_->level(l);
        std::vector<FuncKey> funcs;
        std::unordered_map<FuncKey, int, FuncKeyHash> pos;
        for (const ActiveFunction& f : functions_)
            if (f.level == l) {
                pos[f.key] = static_cast<int>(funcs.size());
                funcs.push_back(f.key);
            }
        std::vector<CellId> cells(act.begin(), act.end());
        std::sort(cells.begin(), cells.end());
        std::vector<FuncKey> on_cell;
        const BsplineBasis& base = space.space().base();
        const bool full = gram_full_rank(
            static_cast<int>(funcs.size()), static_cast<long>(cells.size()),
            [&](long c, std::vector<int>& idx, std::vector<double>& val, const Vec2& xi) {
                on_cell.clear();
                space.functions_on_cell(cells[static_cast<size_t>(c)], on_cell);
                for (const FuncKey& f : on_cell) {
                    const auto it = pos.find(f);
                    if (it == pos.end()) continue;
                    idx.push_back(it->second);
                    val.push_back(space.eval_param(f, cells[static_cast<size_t>(c)].patch, xi, 0).v);
                }
            },
            [&](long c) {
                const auto [a1, b1] = base.element(cells[static_cast<size_t>(c)].e1);
                const auto [a2, b2] = base.element(cells[static_cast<size_t>(c)].e2);
                return std::pair{Vec2{a1, a2}, Vec2{b1 - a1, b2 - a2}};
            },
            q);
        if (!full) {
            ok = false;
            if (witness_levels) witness_levels->push_back(l);
        }
    }
    return ok;
}

bool HierarchicalSpace::check_global_rank() const {
    const int q = levels_->geometry().space0().p() + 2;
    const auto cells = mesh_->all_active();
    return gram_full_rank(
        ndof(), static_cast<long>(cells.size()),
        [&](long c, std::vector<int>& idx, std::vector<double>& val, const Vec2& xi) {
            const auto& [l, cell] = cells[static_cast<size_t>(c)];
            for (int i : acting_on(l, cell)) {
                idx.push_back(i);
                val.push_back(eval_param(i, l, cell, xi, 0).v);
            }
        },
        [&](long c) {
            const auto& [l, cell] = cells[static_cast<size_t>(c)];
            const BsplineBasis& base = levels_->level(l).space().base();
            const auto [a1, b1] = base.element(cell.e1);
            const auto [a2, b2] = base.element(cell.e2);
            return std::pair{Vec2{a1, a2}, Vec2{b1 - a1, b2 - a2}};
        },
        q);
}


std::vector<ActiveFunction> HierarchicalSpace::audit_vertex_condition() const {
    std::vector<ActiveFunction> violations;
    for (const ActiveFunction& f : functions_) {
        if (f.key.kind != FuncKey::Vertex) continue;
        const int v = f.key.entity;
        const VertexFrame& fr = levels_->geometry().vertex_frame(v);
        const int nel = mesh_->elements_1d(f.level);
        bool found = false;
        for (const auto& fp : fr.patches) {
            const auto [a, b] = fp.code.apply_index(0, 0, nel);
            if (mesh_->is_active(f.level, {fp.patch, a, b})) {
                found = true;
                break;
            }
        }
        if (!found) violations.push_back(f);
    }
    return violations;
}

} // namespace c1mp
