#include "c1mp/verify.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <deque>

namespace c1mp {

int numeric_rank(const Eigen::MatrixXd& A, double threshold) {
    if (A.rows() == 0 || A.cols() == 0) return 0;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(A);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) <= 0) return 0;
    int r = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > threshold * sv(0)) ++r;
    return r;
}

Eigen::MatrixXd collocation_matrix(const C1LevelSpace& space, std::span<const FuncKey> funcs,
                                   std::span<const CellId> cells, int points_per_dir) {
    const int q = points_per_dir > 0 ? points_per_dir : space.space().p() + 2;
    const BsplineBasis& base = space.space().base();
    Eigen::MatrixXd A(static_cast<long>(cells.size()) * q * q, static_cast<long>(funcs.size()));
    long row = 0;
    for (const CellId& cell : cells) {
        const auto [a1, b1] = base.element(cell.e1);
        const auto [a2, b2] = base.element(cell.e2);
        for (int i = 0; i < q; ++i)
            for (int j = 0; j < q; ++j) {
                const Vec2 xi{a1 + (b1 - a1) * (i + 0.5) / q, a2 + (b2 - a2) * (j + 0.5) / q};
                for (size_t c = 0; c < funcs.size(); ++c)
                    A(row, static_cast<long>(c)) = space.eval_param(funcs[c], cell.patch, xi, 0).v;
                ++row;
            }
    }
    return A;
}

int collocation_rank(const C1LevelSpace& space, std::span<const FuncKey> funcs,
                     std::span<const CellId> cells, const RankProbe& probe) {
    return numeric_rank(collocation_matrix(space, funcs, cells, probe.points_per_dir),
                        probe.threshold);
}

SmoothnessReport fd_smoothness(const C1LevelSpace& space, const FuncKey& fn, int edge,
                               int samples, double step) {
    const MultiPatchGeometry& geo = space.geometry();
    const EdgeTopo& et = geo.edge(edge);
    C1MP_REQUIRE(et.kind == EntityKind::Inner, parameter_error,
                 "fd_smoothness needs an inner edge");
    const EdgeFrame& frame = geo.edge_frame(edge);
    const int p0 = et.sides[0].patch;
    const int p1 = et.sides[1].patch;
    const OrientationCode& c0 = frame.code0;
    const OrientationCode& c1 = frame.code1;

    SmoothnessReport rep;
    for (int s = 0; s < samples; ++s) {
        const double xi = (s + 0.5) / samples;
        const Vec2 q0 = c0.apply({0, xi});
        const Vec2 q1 = c1.apply({xi, 0});
        const GeomEval ge = eval_net(frame.net0, geo.space0().base(), {0, xi}, 1);
        const Vec2 x = ge.point;
        const Vec2 t = ge.jac.col(1);
        const Vec2 nrm = Vec2{-t[1], t[0]}.normalized(); // points into the side-1 patch

        const double v0 = space.eval_param(fn, p0, q0, 0).v;
        const double v1 = space.eval_param(fn, p1, q1, 0).v;
        rep.max_value_jump = std::max(rep.max_value_jump, std::abs(v0 - v1));

        // one-sided FD normal derivatives in physical space
        auto value_at = [&](int patch, const Vec2& xphys, const Vec2& guess) {
            const Vec2 par = geo.param_of_point(patch, xphys, guess);
            return space.eval_param(fn, patch, par, 0).v;
        };
        const double u1a = value_at(p1, x + step * nrm, c1.apply({xi, 0.01}));
        const double u1b = value_at(p1, x + 2 * step * nrm, c1.apply({xi, 0.02}));
        const double u0a = value_at(p0, x - step * nrm, c0.apply({0.01, xi}));
        const double u0b = value_at(p0, x - 2 * step * nrm, c0.apply({0.02, xi}));
        // second-order one-sided differences toward the interface
        const double dplus = (4 * u1a - u1b - 3 * v1) / (2 * step);
        const double dminus = (3 * v0 - 4 * u0a + u0b) / (2 * step);
        rep.max_normal_deriv_jump = std::max(rep.max_normal_deriv_jump, std::abs(dplus - dminus));
    }
    return rep;
}

// ---------------------------------------------------------------- BFS oracle

BfsDistanceOracle::BfsDistanceOracle(const MultiPatchGeometry& geo, const UnivariateSpace& space0)
    : geo_(&geo), k0_(space0.k()) {}

const BfsDistanceOracle::LevelGraph& BfsDistanceOracle::graph(int level) const {
    if (static_cast<int>(graphs_.size()) <= level) graphs_.resize(static_cast<size_t>(level) + 1);
    auto& slot = graphs_[static_cast<size_t>(level)];
    if (slot) return *slot;

    auto g = std::make_unique<LevelGraph>();
    g->nel = (1 << level) * (k0_ + 1);
    const int nel = g->nel;

    double scale = 1.0;
    for (int p = 0; p < geo_->num_patches(); ++p)
        scale = std::max(scale, geo_->patch(p).net.x.cwiseAbs().maxCoeff());
    const double snap = 1e-7 * scale;

    struct Key {
        long long x, y;
        bool operator==(const Key&) const = default;
    };
    struct KeyHash {
        size_t operator()(const Key& k) const {
            return std::hash<long long>()(k.x * 1000003LL ^ k.y);
        }
    };
    std::unordered_map<Key, std::vector<CellId>, KeyHash> corner_map;

    for (int p = 0; p < geo_->num_patches(); ++p)
        for (int e1 = 0; e1 < nel; ++e1)
            for (int e2 = 0; e2 < nel; ++e2)
                for (int dx = 0; dx <= 1; ++dx)
                    for (int dy = 0; dy <= 1; ++dy) {
                        const Vec2 xi{static_cast<double>(e1 + dx) / nel,
                                      static_cast<double>(e2 + dy) / nel};
                        const Vec2 x = geo_->eval_geometry(p, xi, 0).point;
                        const Key key{static_cast<long long>(std::llround(x[0] / snap)),
                                      static_cast<long long>(std::llround(x[1] / snap))};
                        corner_map[key].push_back({p, e1, e2});
                    }
    for (auto& [key, cells] : corner_map)
        for (const CellId& a : cells)
            for (const CellId& b : cells)
                if (!(a == b)) g->adj[a].push_back(b);

    slot = std::move(g);
    return *slot;
}

int BfsDistanceOracle::max_ring_to_block(int level, const CellId& from, int patch, int e1_lo,
                                         int e1_hi, int e2_lo, int e2_hi) const {
    const LevelGraph& g = graph(level);
    std::unordered_map<CellId, int, CellIdHash> ring;
    std::deque<CellId> queue;
    ring[from] = 0;
    queue.push_back(from);
    long remaining = static_cast<long>(e1_hi - e1_lo + 1) * (e2_hi - e2_lo + 1);
    auto in_block = [&](const CellId& c) {
        return c.patch == patch && c.e1 >= e1_lo && c.e1 <= e1_hi && c.e2 >= e2_lo && c.e2 <= e2_hi;
    };
    if (in_block(from)) --remaining;
    int max_ring = 0;
    while (!queue.empty() && remaining > 0) {
        const CellId cur = queue.front();
        queue.pop_front();
        const auto it = g.adj.find(cur);
        if (it == g.adj.end()) continue;
        for (const CellId& nb : it->second) {
            if (ring.count(nb)) continue;
            ring[nb] = ring[cur] + 1;
            if (in_block(nb)) {
                max_ring = std::max(max_ring, ring[nb]);
                --remaining;
            }
            queue.push_back(nb);
        }
    }
    C1MP_REQUIRE(remaining == 0, structure_error, "bfs_distance: target not reachable");
    return max_ring;
}

DyadicRational BfsDistanceOracle::dist(const CellId& a, int level_a, const CellId& b,
                                       int level_b) const {
    // descend the coarser element to the finer level and take the maximum
    const CellId* fine = &a;
    const CellId* coarse = &b;
    int lf = level_a, lc = level_b;
    if (level_a < level_b) {
        std::swap(fine, coarse);
        std::swap(lf, lc);
    }
    const int shift = lf - lc;
    const int f = 1 << shift;
    const int s = max_ring_to_block(lf, *fine, coarse->patch, coarse->e1 * f,
                                    coarse->e1 * f + f - 1, coarse->e2 * f,
                                    coarse->e2 * f + f - 1);
    return {s, lf};
}

} // namespace c1mp
