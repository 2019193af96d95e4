#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "bumps.hpp"
#include "config.hpp"
#include "geometry.hpp"

namespace platekit {

namespace detail {

// Runs body(i) for i in [0, n) on up to `jobs` threads, interleaved so the
// work split does not depend on timing.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& body) {
    const std::size_t nj = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)), std::max<std::size_t>(n, 1));
    if (nj <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < nj; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += nj) body(i);
        });
    for (auto& th : pool) th.join();
}

// phi(u) for even M by repeated multiplication.
template <int D>
inline double phi_fast(const Vec<D>& u, int M) {
    const double b = 1.0 / (1.0 + dot<D>(u, u));
    double r = 1.0;
    for (int k = 0; k < M / 2; ++k) r *= b;
    return r;
}

}  // namespace detail

// A union of delta-cells, stored by their centres.
template <int D>
struct PointSet {
    std::vector<Vec<D>> points;
    double cell_side = 0.0;

    double cell_volume() const { return std::pow(cell_side, D); }
    double measure() const { return cell_volume() * static_cast<double>(points.size()); }
    std::size_t size() const { return points.size(); }
};

// Centres of the cells of side `side` tiling [lo, hi)^D.
template <int D>
PointSet<D> cell_lattice(double side, double lo = 0.0, double hi = 1.0) {
    PointSet<D> W;
    W.cell_side = side;
    const long n = static_cast<long>(std::llround((hi - lo) / side));
    long total = 1;
    for (int i = 0; i < D; ++i) total *= n;
    W.points.reserve(static_cast<std::size_t>(total));
    for (long k = 0; k < total; ++k) {
        long r = k;
        Vec<D> x;
        for (int i = D - 1; i >= 0; --i) {
            x[i] = lo + (static_cast<double>(r % n) + 0.5) * side;
            r /= n;
        }
        W.points.push_back(x);
    }
    return W;
}

// A random fraction of the cells of [0,1)^D of side delta.
template <int D>
PointSet<D> random_cells(double delta, double fraction, std::uint64_t seed) {
    PointSet<D> all = cell_lattice<D>(delta);
    PointSet<D> W;
    W.cell_side = delta;
    Rng rng(seed);
    for (const auto& x : all.points)
        if (rng.uniform() < fraction) W.points.push_back(x);
    return W;
}

enum class RelationKind { single_scale, multiscale };

inline const char* relation_kind_name(RelationKind k) {
    return k == RelationKind::single_scale ? "single-scale" : "multiscale";
}

// Relation between boxes of a family and t-cubes.
template <int D>
struct IncidenceRelation {
    CubeGrid<D> grid;
    RelationKind kind = RelationKind::single_scale;
    std::vector<CubeIndex<D>> primary;                // Q(pi) of the single-scale construction
    std::vector<std::vector<CubeIndex<D>>> related;   // sorted, unique

    double t() const { return grid.side; }

    bool relates(std::size_t i, const CubeIndex<D>& Q) const {
        return std::binary_search(related[i].begin(), related[i].end(), Q);
    }

    std::size_t max_related() const {
        std::size_t m = 0;
        for (const auto& r : related) m = std::max(m, r.size());
        return m;
    }

    std::size_t total_related() const {
        std::size_t s = 0;
        for (const auto& r : related) s += r.size();
        return s;
    }

    void normalise() {
        for (auto& r : related) {
            std::sort(r.begin(), r.end());
            r.erase(std::unique(r.begin(), r.end()), r.end());
        }
    }
};

inline int pow3(int D) {
    int v = 1;
    for (int i = 0; i < D; ++i) v *= 3;
    return v;
}

// Indices of the points of W inside each box.
template <int D>
std::vector<std::vector<int>> incidence_lists(const std::vector<Plate<D>>& P, const PointSet<D>& W, int jobs = 1) {
    std::vector<std::vector<int>> out(P.size());
    detail::parallel_for(P.size(), jobs, [&](std::size_t i) {
        const auto& p = P[i];
        // Axis-aligned bounding box of p first.
        Vec<D> half{};
        for (int k = 0; k < D; ++k)
            for (int a = 0; a < D; ++a) half[k] += 0.5 * p.lengths[a] * std::abs(p.axes[a][k]);
        for (std::size_t j = 0; j < W.points.size(); ++j) {
            const auto& x = W.points[j];
            bool in = true;
            for (int k = 0; k < D && in; ++k) in = std::abs(x[k] - p.center[k]) <= half[k] * (1.0 + 1e-12) + 1e-15;
            if (in && contains<D>(p, x)) out[i].push_back(static_cast<int>(j));
        }
    });
    return out;
}

// Each box is related to the t-cube holding most of W inside it, and to
// that cube's neighbours. Ties go to the lexicographically smallest cube;
// a box meeting no point of W uses the cube containing its centre.
template <int D>
IncidenceRelation<D> build_relation(const std::vector<Plate<D>>& P, const PointSet<D>& W, double t, int jobs = 1,
                                    const std::vector<std::vector<int>>* lists = nullptr) {
    if (!(t > 0.0)) throw std::invalid_argument("build_relation: t must be positive");
    double lg = std::log2(t);
    if (std::abs(lg - std::round(lg)) > 1e-12) throw std::invalid_argument("build_relation: t must be dyadic");
    IncidenceRelation<D> rel;
    rel.grid.side = t;
    rel.primary.resize(P.size());
    rel.related.resize(P.size());
    std::vector<std::vector<int>> own;
    if (!lists) {
        own = incidence_lists<D>(P, W, jobs);
        lists = &own;
    }
    detail::parallel_for(P.size(), jobs, [&](std::size_t i) {
        std::map<CubeIndex<D>, long> counts;
        for (int j : (*lists)[i]) ++counts[rel.grid.index_of(W.points[j])];
        CubeIndex<D> best = rel.grid.index_of(P[i].center);
        long bc = 0;
        for (const auto& [Q, c] : counts)
            if (c > bc) {  // map order is lexicographic, so ties keep the smallest
                bc = c;
                best = Q;
            }
        rel.primary[i] = best;
        rel.related[i] = rel.grid.neighbourhood(best);
    });
    rel.normalise();
    return rel;
}

struct BadIncidence {
    double value = 0.0;             // I_b as a measure
    long cells = 0;                 // I_b in cells
    std::vector<long> per_plate;    // cells of W in pi whose cube is not related to pi
};

template <int D>
BadIncidence bad_incidence(const std::vector<Plate<D>>& P, const PointSet<D>& W, const IncidenceRelation<D>& rel,
                           int jobs = 1, const std::vector<std::vector<int>>* lists = nullptr) {
    if (rel.related.size() != P.size()) throw std::invalid_argument("bad_incidence: relation built for another family");
    std::vector<std::vector<int>> own;
    if (!lists) {
        own = incidence_lists<D>(P, W, jobs);
        lists = &own;
    }
    BadIncidence b;
    b.per_plate.assign(P.size(), 0);
    detail::parallel_for(P.size(), jobs, [&](std::size_t i) {
        long c = 0;
        for (int j : (*lists)[i])
            if (!rel.relates(i, rel.grid.index_of(W.points[j]))) ++c;
        b.per_plate[i] = c;
    });
    for (long c : b.per_plate) b.cells += c;
    b.value = static_cast<double>(b.cells) * W.cell_volume();
    return b;
}

// The same sum as a plain double loop over points and boxes.
template <int D>
long bad_incidence_brute(const std::vector<Plate<D>>& P, const PointSet<D>& W, const IncidenceRelation<D>& rel) {
    long c = 0;
    for (const auto& x : W.points) {
        CubeIndex<D> Q = rel.grid.index_of(x);
        for (std::size_t i = 0; i < P.size(); ++i)
            if (contains<D>(P[i], x) && !rel.relates(i, Q)) ++c;
    }
    return c;
}

// Right side of the bad incidence bound without its logarithmic factor.
inline double bad_incidence_bound(int d, double t, double W_measure, std::size_t plates) {
    return std::pow(t, -3.0 * d) * W_measure * std::sqrt(static_cast<double>(plates));
}

struct TwoPointCount {
    long count = 0;
    bool below_scale = false;   // |x - x'| < t, no bound is claimed
};

template <int D>
TwoPointCount two_point_count(const std::vector<Plate<D>>& P, const Vec<D>& x, const Vec<D>& y, double t) {
    TwoPointCount r;
    r.below_scale = norm<D>(x - y) < t;
    for (const auto& p : P)
        if (contains<D>(p, x) && contains<D>(p, y)) ++r.count;
    return r;
}

struct QuantityA {
    double value = 0.0;        // sum over boxes of |W cap Q cap pi| |W cap Q' cap pi|
    double brute = 0.0;        // the same as a double sum over point pairs
    double WQ = 0.0, WQp = 0.0;
    long max_pair_count = 0;   // largest number of boxes through a pair (x, x')
};

// Rejects cubes that are equal or adjacent. The brute-force pair sum is
// computed when `with_brute` is set.
template <int D>
QuantityA quantity_A(const std::vector<Plate<D>>& P, const PointSet<D>& W, const CubeGrid<D>& grid,
                     const CubeIndex<D>& Q, const CubeIndex<D>& Qp, bool with_brute = true) {
    if (adjacent_or_equal<D>(Q, Qp)) throw std::invalid_argument("quantity_A: the cubes must be at distance at least t");
    std::vector<int> inQ, inQp;
    for (std::size_t j = 0; j < W.points.size(); ++j) {
        auto k = grid.index_of(W.points[j]);
        if (k == Q) inQ.push_back(static_cast<int>(j));
        if (k == Qp) inQp.push_back(static_cast<int>(j));
    }
    const double v = W.cell_volume();
    QuantityA r;
    r.WQ = v * inQ.size();
    r.WQp = v * inQp.size();
    for (const auto& p : P) {
        long a = 0, b = 0;
        for (int j : inQ) a += contains<D>(p, W.points[j]);
        for (int j : inQp) b += contains<D>(p, W.points[j]);
        r.value += static_cast<double>(a * b) * v * v;
    }
    if (with_brute) {
        long total = 0;
        for (int i : inQ)
            for (int j : inQp) {
                long c = two_point_count<D>(P, W.points[i], W.points[j], 0.0).count;
                total += c;
                r.max_pair_count = std::max(r.max_pair_count, c);
            }
        r.brute = static_cast<double>(total) * v * v;
    }
    return r;
}

// ---------------------------------------------------------------------
// Relations with Schwartz tails.

// Smallest c with a inside the dilate c * b (same centre as b).
template <int D>
double containment_dilate(const Plate<D>& a, const Plate<D>& b) {
    double c = 0.0;
    for (const auto& v : vertices<D>(a)) {
        Vec<D> w = v - b.center;
        for (int m = 0; m < D; ++m) c = std::max(c, 2.0 * std::abs(dot<D>(b.axes[m], w)) / b.lengths[m]);
    }
    return c;
}

struct ScaleCount {
    double c0 = 0.0;              // dyadic constant with K in [c0 L, 2 c0 L], L = log(t / sqrt(delta))
    int K = 0;
    bool condition_met = false;   // 2^K sqrt(delta) <= t / 8
};

// K is the largest integer with 2^K sqrt(delta) <= t/8 and c0 the largest
// dyadic constant with c0 L <= K. When even K = 0 violates the condition
// (every desk-scale t with delta >= t^2/64) K = 0 is used and flagged.
// An explicit c0 picks the smallest K in its range and is rejected when
// that K breaks the condition.
inline ScaleCount choose_scale_count(double t, double delta, double c0 = -1.0) {
    ScaleCount s;
    const double L = std::log(t / std::sqrt(delta));
    const double room = std::log2(t / (8.0 * std::sqrt(delta)));
    const int Kmax = static_cast<int>(std::floor(room + 1e-12));
    if (c0 > 0.0) {
        if (!(L > 0.0)) throw std::invalid_argument("schwartz_relation: t must exceed sqrt(delta)");
        int K = static_cast<int>(std::ceil(c0 * L - 1e-12));
        if (K > 2.0 * c0 * L + 1e-12) throw std::invalid_argument("schwartz_relation: no integer K in [c0 L, 2 c0 L]");
        if (K > std::max(Kmax, 0) || (K > 0 && Kmax < 0)) {
            double admissible = Kmax > 0 ? std::pow(2.0, std::floor(std::log2(Kmax / L))) : 0.0;
            throw std::invalid_argument("schwartz_relation: c0 too large, 2^K sqrt(delta) exceeds t/8; max admissible c0 = " +
                                        std::to_string(admissible));
        }
        s.c0 = c0;
        s.K = K;
        s.condition_met = Kmax >= K;
        return s;
    }
    s.K = std::max(Kmax, 0);
    s.condition_met = Kmax >= 0;
    s.c0 = (s.K > 0 && L > 0.0) ? std::pow(2.0, std::floor(std::log2(s.K / L))) : 0.0;
    return s;
}

struct ScaleLevel {
    int k = 0;
    std::vector<int> representatives;   // P_k: boxes whose 2^k dilates form a maximal separated subfamily
    std::vector<int> rep_of;            // box -> index into representatives
    double dilate = 1.0;                // c with 2^k pi inside 2^k c pi_k for every pi
    BadIncidence bad;                   // of the family {2^k c pi_k} against its own relation
    double bound = 0.0;                 // t^{-3d} |W| |P_k|^{1/2}
};

template <int D>
struct SchwartzResult {
    IncidenceRelation<D> relation;
    ScaleCount scales;
    std::vector<ScaleLevel> levels;
    std::vector<double> bad_phi;        // Phi^b at each point of W
    double bad_integral = 0.0;          // integral over W of Phi^b
    double main_term = 0.0;             // t^{-3d} |P|^{1/2} |W|
    double tail_term = 0.0;             // delta^{M0} |W|
    std::size_t propR_budget = 0;       // 3^{d+1} (K + 1)

    double ratio() const {
        double rhs = main_term + tail_term;
        return rhs > 0.0 ? bad_integral / rhs : 0.0;
    }
};

// Greedy maximal subfamily whose dilates are separated, in input order.
template <int D>
std::vector<int> maximal_separated(const std::vector<Plate<D>>& B, int Csep, double Ccomp) {
    std::vector<int> chosen, counts;
    for (std::size_t i = 0; i < B.size(); ++i) {
        std::vector<int> hits;
        bool ok = true;
        for (std::size_t a = 0; a < chosen.size() && ok; ++a)
            if (comparable<D>(B[i], B[chosen[a]], Ccomp)) {
                hits.push_back(static_cast<int>(a));
                if (static_cast<int>(hits.size()) > Csep) ok = false;
            }
        for (int a : hits) ok = ok && counts[a] + 1 <= Csep;
        if (!ok) continue;
        for (int a : hits) ++counts[a];
        chosen.push_back(static_cast<int>(i));
        counts.push_back(static_cast<int>(hits.size()));
    }
    return chosen;
}

// Phi^b(x) = sum of phi over boxes not related to the cube of x.
template <int D>
std::vector<double> bad_phi_values(const std::vector<Plate<D>>& P, const PointSet<D>& W,
                                   const IncidenceRelation<D>& rel, int M, int jobs = 1) {
    std::vector<double> out(W.points.size(), 0.0);
    detail::parallel_for(W.points.size(), jobs, [&](std::size_t j) {
        const auto& x = W.points[j];
        CubeIndex<D> Q = rel.grid.index_of(x);
        double s = 0.0;
        for (std::size_t i = 0; i < P.size(); ++i)
            if (!rel.relates(i, Q)) s += detail::phi_fast<D>(unit_coords<D>(P[i], x), M);
        out[j] = s;
    });
    return out;
}

// Multiscale relation for a separated family of plates or tubes.
// For k <= K the 2^k dilates are thinned to a maximal separated
// subfamily P_k, each box is attached to a comparable representative,
// the single-scale relation is built for {2^k c pi_k}, lifted back to
// the family, and the levels are united.
template <int D>
SchwartzResult<D> schwartz_relation(const std::vector<Plate<D>>& P, const PointSet<D>& W, double t,
                                    const Config& cfg, int jobs = 1, double c0 = -1.0) {
    if (P.empty()) {
        SchwartzResult<D> r;
        r.relation.grid.side = t;
        r.relation.kind = RelationKind::multiscale;
        r.bad_phi.assign(W.points.size(), 0.0);
        return r;
    }
    const double scale = P.front().scale;
    for (const auto& p : P)
        if (p.kind != P.front().kind || std::abs(p.scale - scale) > 1e-12 * scale)
            throw std::invalid_argument("schwartz_relation: mixed box kinds or scales");
    // The thin side of a tube is sqrt(delta) in the family's delta.
    const double delta = P.front().kind == BoxKind::tube ? scale * scale : scale;
    const int d = D - 1;
    if (cfg.M <= 2 * cfg.M0) throw std::invalid_argument("schwartz_relation: M must exceed 2 M0");
    SchwartzResult<D> res;
    res.scales = choose_scale_count(t, delta, c0);
    res.relation.grid.side = t;
    res.relation.kind = RelationKind::multiscale;
    res.relation.related.assign(P.size(), {});
    res.relation.primary.resize(P.size());
    for (int k = 0; k <= res.scales.K; ++k) {
        ScaleLevel lv;
        lv.k = k;
        const double s = std::ldexp(1.0, k);
        std::vector<Plate<D>> dil;
        dil.reserve(P.size());
        for (const auto& p : P) dil.push_back(p.dilated(s));
        lv.representatives = maximal_separated<D>(dil, cfg.Csep, cfg.Ccomp);
        lv.rep_of.assign(P.size(), -1);
        for (std::size_t a = 0; a < lv.representatives.size(); ++a) lv.rep_of[lv.representatives[a]] = static_cast<int>(a);
        detail::parallel_for(P.size(), jobs, [&](std::size_t i) {
            if (lv.rep_of[i] >= 0) return;
            for (std::size_t a = 0; a < lv.representatives.size(); ++a)
                if (comparable<D>(dil[i], dil[lv.representatives[a]], cfg.Ccomp)) {
                    lv.rep_of[i] = static_cast<int>(a);
                    return;
                }
        });
        for (std::size_t i = 0; i < P.size(); ++i) {
            if (lv.rep_of[i] < 0) throw std::logic_error("schwartz_relation: subfamily is not maximal");
            lv.dilate = std::max(lv.dilate, containment_dilate<D>(dil[i], dil[lv.representatives[lv.rep_of[i]]]));
        }
        std::vector<Plate<D>> reps;
        for (int i : lv.representatives) reps.push_back(dil[i].dilated(lv.dilate));
        auto lists = incidence_lists<D>(reps, W, jobs);
        auto rel0 = build_relation<D>(reps, W, t, jobs, &lists);
        lv.bad = bad_incidence<D>(reps, W, rel0, jobs, &lists);
        lv.bound = bad_incidence_bound(d, t, W.measure(), reps.size());
        for (std::size_t i = 0; i < P.size(); ++i) {
            const auto& add = rel0.related[lv.rep_of[i]];
            auto& tgt = res.relation.related[i];
            tgt.insert(tgt.end(), add.begin(), add.end());
            if (k == 0) res.relation.primary[i] = rel0.primary[lv.rep_of[i]];
        }
        res.levels.push_back(std::move(lv));
    }
    res.relation.normalise();
    res.propR_budget = static_cast<std::size_t>(pow3(D)) * static_cast<std::size_t>(res.scales.K + 1);
    if (res.relation.max_related() > res.propR_budget)
        throw std::logic_error("schwartz_relation: a box is related to more cubes than 3^{d+1} (K+1)");
    res.bad_phi = bad_phi_values<D>(P, W, res.relation, cfg.M, jobs);
    double s = 0.0;
    for (double v : res.bad_phi) s += v;
    res.bad_integral = s * W.cell_volume();
    res.main_term = bad_incidence_bound(d, t, W.measure(), P.size());
    res.tail_term = std::pow(delta, cfg.M0) * W.measure();
    return res;
}

// ---------------------------------------------------------------------
// Mass of a type-r family against its tubes.

struct TypeMass {
    double lhs = 0.0;          // integral of Phi_P phi_Q
    double rhs = 0.0;          // integral of Phi_T phi_Q
    double ratio = 0.0;        // lhs / (delta^{1/2} r rhs)
    double tail_bound = 0.0;   // bound on the part of lhs outside the quadrature box
    long r = 0;
    std::size_t nodes = 0;
};

namespace detail {

// Integral of (1 + |u|^2)^{-M/2} over |u| > R in R^D.
inline double phi_radial_tail(int D, int M, double R) {
    const double area = 2.0 * std::pow(M_PI, 0.5 * D) / std::tgamma(0.5 * D);
    double s = 0.0;
    const double h = 1.0 / 64;
    for (double r = R + 0.5 * h; r < R + 4096.0; r += h) s += std::pow(r, D - 1) * std::pow(1.0 + r * r, -0.5 * M) * h;
    return area * s;
}

}  // namespace detail

// The tube family of the type-r check: every plate in 3 tau(pi), r is the
// dyadic member count shared by all tubes.
template <int D>
long verified_type(const TubeAssignment<D>& ta) {
    auto comps = ta.components();
    if (comps.size() != 1) throw std::invalid_argument("type_mass_check: family is not of a single type r");
    return comps.begin()->first;
}

// Midpoint quadrature of both integrals over the dilate 8Q with nodes at
// most half the thinnest plate side apart. Boxes whose phi cannot exceed
// 1e-16 of its peak on the quadrature box are skipped.
template <int D>
TypeMass type_mass_check(const std::vector<Plate<D>>& P, const Config& cfg, const Plate<D>& Q, int jobs = 1,
                         std::size_t max_nodes = 40000000) {
    if (P.empty()) throw std::invalid_argument("type_mass_check: empty family");
    TubeAssignment<D> ta = assign_tubes<D>(P, cfg);
    TypeMass out;
    out.r = verified_type<D>(ta);
    auto T = dilated_tubes<D>(ta);
    const double delta = P.front().scale;
    const double side = Q.lengths[0];
    const double half = 4.0 * side;
    double thin = P.front().lengths[D - 1];
    int n = static_cast<int>(std::ceil(2.0 * half / (0.5 * thin)));
    if (n % 2) ++n;
    double nodes = std::pow(static_cast<double>(n), D);
    if (nodes > static_cast<double>(max_nodes))
        throw std::invalid_argument("type_mass_check: quadrature needs " + std::to_string(nodes) + " nodes");
    const double h = 2.0 * half / n;
    auto relevant = [&](const std::vector<Plate<D>>& B) {
        std::vector<Plate<D>> keep;
        for (const auto& b : B) {
            double s2 = 0.0;
            for (int a = 0; a < D; ++a) {
                double reach = 0.0;
                for (int k = 0; k < D; ++k) reach += half * std::abs(b.axes[a][k]);
                double gap = std::max(0.0, std::abs(dot<D>(b.axes[a], Q.center - b.center)) - reach) / b.lengths[a];
                s2 += gap * gap;
            }
            if (std::pow(1.0 + s2, -0.5 * cfg.M) > 1e-16) keep.push_back(b);
        }
        return keep;
    };
    auto Pk = relevant(P);
    auto Tk = relevant(T);
    long total = 1;
    for (int i = 0; i < D; ++i) total *= n;
    out.nodes = static_cast<std::size_t>(total);
    const int nj = std::max(1, jobs);
    std::vector<double> L(nj, 0.0), R(nj, 0.0);
    detail::parallel_for(static_cast<std::size_t>(nj), nj, [&](std::size_t w) {
        for (long k = static_cast<long>(w); k < total; k += nj) {
            long rem = k;
            Vec<D> x;
            for (int i = D - 1; i >= 0; --i) {
                x[i] = Q.center[i] - half + (static_cast<double>(rem % n) + 0.5) * h;
                rem /= n;
            }
            double wq = detail::phi_fast<D>(unit_coords<D>(Q, x), cfg.M);
            double a = 0.0, b = 0.0;
            for (const auto& p : Pk) a += detail::phi_fast<D>(unit_coords<D>(p, x), cfg.M);
            for (const auto& tb : Tk) b += detail::phi_fast<D>(unit_coords<D>(tb, x), cfg.M);
            L[w] += a * wq;
            R[w] += b * wq;
        }
    });
    const double vol = std::pow(h, D);
    for (int w = 0; w < nj; ++w) {
        out.lhs += L[w] * vol;
        out.rhs += R[w] * vol;
    }
    out.tail_bound = static_cast<double>(P.size()) * Q.volume() * detail::phi_radial_tail(D, cfg.M, 4.0);
    out.ratio = out.rhs > 0.0 ? out.lhs / (std::sqrt(delta) * static_cast<double>(out.r) * out.rhs) : 0.0;
    return out;
}

// ---------------------------------------------------------------------
// Reports.

struct IncidenceRow {
    std::string instance;
    double t = 0.0;
    std::size_t plates = 0;
    double W = 0.0;
    double Ib = 0.0;
    double bound = 0.0;

    double ratio() const { return bound > 0.0 ? Ib / bound : 0.0; }
};

inline void write_incidence_csv(const std::string& path, const std::vector<IncidenceRow>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << std::setprecision(17) << "instance,t,plates,W,I_b,bound,ratio\n";
    for (const auto& r : rows)
        os << r.instance << ',' << r.t << ',' << r.plates << ',' << r.W << ',' << r.Ib << ',' << r.bound << ','
           << r.ratio() << '\n';
}

template <int D>
void write_pointset(std::ostream& os, const PointSet<D>& W) {
    os << std::setprecision(17) << "# cell_side " << W.cell_side << '\n';
    for (const auto& x : W.points) {
        for (int i = 0; i < D; ++i) os << (i ? " " : "") << x[i];
        os << '\n';
    }
}

}  // namespace platekit
