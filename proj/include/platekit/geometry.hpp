#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "config.hpp"
#include "rng.hpp"
#include "vec.hpp"

namespace platekit {

enum class BoxKind { plate, tube, cube };

inline const char* kind_name(BoxKind k) {
    switch (k) {
        case BoxKind::plate: return "plate";
        case BoxKind::tube: return "tube";
        case BoxKind::cube: return "cube";
    }
    return "?";
}

inline BoxKind parse_kind(const std::string& s) {
    if (s == "plate") return BoxKind::plate;
    if (s == "tube") return BoxKind::tube;
    if (s == "cube") return BoxKind::cube;
    throw std::invalid_argument("unknown box kind: " + s);
}

// A rectangle in R^D. Axis 0 is the long (light-ray) axis of plates and
// tubes, axes 1..D-2 are the medium axes, axis D-1 is the thin axis.
// `scale` is the delta of the family the box belongs to (0 for cubes).
template <int D>
struct Plate {
    Vec<D> center{};
    Frame<D> axes{};
    Vec<D> lengths{};
    BoxKind kind = BoxKind::plate;
    double scale = 0.0;

    Vec<D> local(const Vec<D>& x) const { return to_frame<D>(axes, x - center); }

    Vec<D> global(const Vec<D>& u) const { return center + from_frame<D>(axes, u); }

    double volume() const {
        double v = 1.0;
        for (double l : lengths) v *= l;
        return v;
    }

    Plate dilated(double c) const {
        Plate r = *this;
        for (auto& l : r.lengths) l *= c;
        return r;
    }

    Plate translated(const Vec<D>& v) const {
        Plate r = *this;
        r.center = r.center + v;
        return r;
    }

    // Spatial direction e of the long axis (e,1)/sqrt2.
    Vec<D - 1> direction() const {
        Vec<D - 1> e;
        for (int i = 0; i < D - 1; ++i) e[i] = axes[0][i] * std::sqrt(2.0);
        return e;
    }

    double half_diameter() const { return 0.5 * norm<D>(lengths); }
};

// Orthonormal completion of a unit vector e in R^K: K-1 unit vectors
// orthogonal to e and to each other. In the plane this is the quarter
// turn, which keeps rotated families exactly rotation-equivariant.
template <int K>
std::vector<Vec<K>> orthonormal_completion(const Vec<K>& e) {
    std::vector<Vec<K>> out;
    if constexpr (K == 1) {
        return out;
    } else if constexpr (K == 2) {
        out.push_back(Vec<K>{-e[1], e[0]});
        return out;
    } else {
        std::array<int, K> order;
        for (int i = 0; i < K; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return std::abs(e[a]) < std::abs(e[b]); });
        std::vector<Vec<K>> basis{e};
        for (int idx = 0; idx < K && static_cast<int>(basis.size()) < K; ++idx) {
            Vec<K> v = zero_vec<K>();
            v[order[idx]] = 1.0;
            for (const auto& b : basis) v = v - dot<K>(v, b) * b;
            double n = norm<K>(v);
            if (n < 1e-8) continue;
            basis.push_back((1.0 / n) * v);
        }
        out.assign(basis.begin() + 1, basis.end());
        return out;
    }
}

// Frame of a plate with spatial direction e: long (e,1)/sqrt2, medium
// (omega,0), thin (-e,1)/sqrt2.
template <int D>
Frame<D> plate_frame(const Vec<D - 1>& e_in) {
    Vec<D - 1> e = normalized<D - 1>(e_in);
    Frame<D> f;
    const double s = 1.0 / std::sqrt(2.0);
    f[0] = lift<D>(s * e, s);
    auto omegas = orthonormal_completion<D - 1>(e);
    for (int i = 0; i < D - 2; ++i) f[1 + i] = lift<D>(omegas[i], 0.0);
    f[D - 1] = lift<D>((-s) * e, s);
    return f;
}

template <int D>
Plate<D> make_plate(const Vec<D>& center, const Vec<D - 1>& e, const Config& cfg) {
    Plate<D> p;
    p.center = center;
    p.axes = plate_frame<D>(e);
    p.kind = BoxKind::plate;
    p.scale = cfg.delta();
    const double dl = cfg.delta();
    p.lengths[0] = cfg.C0;
    for (int i = 1; i < D - 1; ++i) p.lengths[i] = cfg.C0 * std::sqrt(dl);
    p.lengths[D - 1] = cfg.C0 * dl;
    return p;
}

// Tube at scale `tube_scale` (all cross axes of length C0 * tube_scale).
template <int D>
Plate<D> make_tube(const Vec<D>& center, const Vec<D - 1>& e, double tube_scale, const Config& cfg) {
    Plate<D> p;
    p.center = center;
    p.axes = plate_frame<D>(e);
    p.kind = BoxKind::tube;
    p.scale = tube_scale;
    p.lengths[0] = cfg.C0;
    for (int i = 1; i < D; ++i) p.lengths[i] = cfg.C0 * tube_scale;
    return p;
}

template <int D>
Plate<D> make_cube(const Vec<D>& center, double side, const Frame<D>& axes = identity_frame<D>()) {
    Plate<D> p;
    p.center = center;
    p.axes = axes;
    p.kind = BoxKind::cube;
    p.scale = 0.0;
    p.lengths = filled<D>(side);
    return p;
}

template <int D>
void validate_box(const Plate<D>& p) {
    for (double l : p.lengths)
        if (!(l > 0.0)) throw std::invalid_argument("degenerate box: non-positive side length");
    if (orthonormality_error<D>(p.axes) > 1e-10) throw std::invalid_argument("box axes are not orthonormal");
}

template <int D>
std::vector<Vec<D>> vertices(const Plate<D>& p) {
    std::vector<Vec<D>> out;
    out.reserve(1u << D);
    for (unsigned mask = 0; mask < (1u << D); ++mask) {
        Vec<D> u;
        for (int i = 0; i < D; ++i) u[i] = ((mask >> i) & 1u ? 0.5 : -0.5) * p.lengths[i];
        out.push_back(p.global(u));
    }
    return out;
}

// x in the dilate c * box (same center).
template <int D>
bool contains(const Plate<D>& p, const Vec<D>& x, double c = 1.0) {
    Vec<D> d = x - p.center;
    for (int i = 0; i < D; ++i) {
        double lim = 0.5 * c * p.lengths[i];
        if (std::abs(dot<D>(p.axes[i], d)) > lim * (1.0 + 1e-12) + 1e-15) return false;
    }
    return true;
}

// a inside c * b, by vertex containment.
template <int D>
bool box_inside(const Plate<D>& a, const Plate<D>& b, double c) {
    // Necessary condition on the long edge of a, checked first because it
    // rejects almost all pairs of differently oriented plates.
    for (int m = 0; m < D; ++m) {
        double span = 0.0;
        for (int i = 0; i < D; ++i) span += std::abs(dot<D>(a.axes[i], b.axes[m])) * a.lengths[i];
        if (span > c * b.lengths[m] * (1.0 + 1e-12) + 1e-15) return false;
    }
    for (const auto& v : vertices<D>(a))
        if (!contains<D>(b, v, c)) return false;
    return true;
}

template <int D>
void require_common_scale(const Plate<D>& a, const Plate<D>& b) {
    if (a.kind != b.kind) throw std::invalid_argument("boxes of different kinds cannot be compared");
    double sa = a.scale, sb = b.scale;
    if (std::abs(sa - sb) > 1e-12 * std::max(sa, sb)) throw std::invalid_argument("boxes at mixed scales");
}

template <int D>
bool comparable(const Plate<D>& a, const Plate<D>& b, double C) {
    require_common_scale<D>(a, b);
    if (norm<D>(a.center - b.center) > C * (a.half_diameter() + b.half_diameter())) return false;
    return box_inside<D>(a, b, C) || box_inside<D>(b, a, C);
}

// Axis directions fail to be C*scale separated.
template <int D>
bool parallel(const Plate<D>& a, const Plate<D>& b, double C) {
    require_common_scale<D>(a, b);
    return norm<D - 1>(a.direction() - b.direction()) <= C * a.scale * (1.0 + 1e-12);
}

// For each member, the number of other members comparable to it.
template <int D>
std::vector<int> comparable_counts(const std::vector<Plate<D>>& P, double C) {
    std::vector<int> cnt(P.size(), 0);
    for (std::size_t i = 0; i < P.size(); ++i)
        for (std::size_t j = i + 1; j < P.size(); ++j)
            if (comparable<D>(P[i], P[j], C)) {
                ++cnt[i];
                ++cnt[j];
            }
    return cnt;
}

template <int D>
bool is_separated(const std::vector<Plate<D>>& P, int Csep, double C) {
    for (int c : comparable_counts<D>(P, C))
        if (c > Csep) return false;
    return true;
}

// ---------------------------------------------------------------------
// Dual plates and the cone.

template <int D>
struct DualPlate {
    Vec<D> center{};
    Frame<D> axes{};
    Vec<D> lengths{};

    Vec<D> local(const Vec<D>& xi) const { return to_frame<D>(axes, xi - center); }

    bool contains(const Vec<D>& xi, double c = 1.0) const {
        Vec<D> u = local(xi);
        for (int i = 0; i < D; ++i)
            if (std::abs(u[i]) > 0.5 * c * lengths[i] * (1.0 + 1e-12)) return false;
        return true;
    }
};

template <int D>
DualPlate<D> dual_plate(const Plate<D>& p, double N, double C1) {
    if (p.kind != BoxKind::plate) throw std::invalid_argument("dual plates are only defined for plates");
    DualPlate<D> q;
    q.axes = p.axes;
    q.center = N * p.axes[D - 1];
    q.lengths[0] = C1;
    for (int i = 1; i < D - 1; ++i) q.lengths[i] = C1 * std::sqrt(N);
    q.lengths[D - 1] = C1 * N;
    return q;
}

// Euclidean distance from xi to the cone {tau = |xi'|}.
template <int D>
double cone_distance(const Vec<D>& xi) {
    double r = 0.0;
    for (int i = 0; i < D - 1; ++i) r += xi[i] * xi[i];
    r = std::sqrt(r);
    double tau = xi[D - 1];
    if (r + tau >= 0.0) return std::abs(tau - r) / std::sqrt(2.0);
    return std::sqrt(r * r + tau * tau);
}

// Distance from xi to the cone segment {xi on the cone : lo <= |xi| <= hi}.
template <int D>
double cone_segment_distance(const Vec<D>& xi, double lo, double hi) {
    double r = 0.0;
    for (int i = 0; i < D - 1; ++i) r += xi[i] * xi[i];
    r = std::sqrt(r);
    double tau = xi[D - 1];
    // In the (r, tau) half plane the segment is s (1,1)/sqrt2, s in [lo, hi].
    double s = (r + tau) / std::sqrt(2.0);
    s = std::clamp(s, lo, hi);
    double pr = s / std::sqrt(2.0), pt = s / std::sqrt(2.0);
    return std::hypot(r - pr, tau - pt);
}

// Membership in Gamma_N(C): the C-neighbourhood of the cone segment with
// 2^-C N <= |xi| <= 2^C N.
template <int D>
bool in_cone_neighbourhood(const Vec<D>& xi, double N, double C) {
    return cone_segment_distance<D>(xi, std::pow(2.0, -C) * N, std::pow(2.0, C) * N) <= C;
}

// Smallest C with xi in Gamma_N(C).
template <int D>
double cone_membership_constant(const Vec<D>& xi, double N) {
    double lo = 0.0, hi = 1.0;
    while (!in_cone_neighbourhood<D>(xi, N, hi)) {
        hi *= 2.0;
        if (hi > 1e9) return hi;
    }
    for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        if (in_cone_neighbourhood<D>(xi, N, mid))
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

// ---------------------------------------------------------------------
// Cube grids.

template <int D>
using CubeIndex = std::array<long, D>;

template <int D>
struct CubeGrid {
    double side = 1.0;
    Vec<D> origin{};

    // Points on a shared face go to the lexicographically smallest cube.
    CubeIndex<D> index_of(const Vec<D>& x) const {
        CubeIndex<D> k;
        for (int i = 0; i < D; ++i) k[i] = static_cast<long>(std::ceil((x[i] - origin[i]) / side)) - 1;
        return k;
    }

    Vec<D> center_of(const CubeIndex<D>& k) const {
        Vec<D> c;
        for (int i = 0; i < D; ++i) c[i] = origin[i] + (static_cast<double>(k[i]) + 0.5) * side;
        return c;
    }

    Plate<D> cube(const CubeIndex<D>& k) const { return make_cube<D>(center_of(k), side); }

    // The cube itself followed by its 3^D - 1 neighbours.
    std::vector<CubeIndex<D>> neighbourhood(const CubeIndex<D>& k) const {
        std::vector<CubeIndex<D>> out;
        out.push_back(k);
        int total = 1;
        for (int i = 0; i < D; ++i) total *= 3;
        for (int code = 0; code < total; ++code) {
            CubeIndex<D> n = k;
            int c = code;
            bool self = true;
            for (int i = 0; i < D; ++i) {
                int off = c % 3 - 1;
                c /= 3;
                n[i] += off;
                if (off != 0) self = false;
            }
            if (!self) out.push_back(n);
        }
        return out;
    }
};

template <int D>
bool adjacent_or_equal(const CubeIndex<D>& a, const CubeIndex<D>& b) {
    for (int i = 0; i < D; ++i)
        if (std::abs(a[i] - b[i]) > 1) return false;
    return true;
}

template <int D>
struct CubeIndexHash {
    std::size_t operator()(const CubeIndex<D>& k) const {
        std::uint64_t h = 1469598103934665603ull;
        for (long v : k) {
            h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
            h *= 1099511628211ull;
        }
        return static_cast<std::size_t>(h);
    }
};

// ---------------------------------------------------------------------
// Direction nets on S^{K-1}.

template <int K>
double angle_between(const Vec<K>& a, const Vec<K>& b) {
    double c = std::clamp(dot<K>(a, b), -1.0, 1.0);
    return std::acos(c);
}

template <int K>
struct DirectionNet {
    std::vector<Vec<K>> directions;
    double separation = 0.0;
    double covering_radius = 0.0;  // every point of the sphere is this close to the net
};

// Pairwise angular separation >= sep, covering radius <= 2 sep.
template <int K>
DirectionNet<K> direction_net(double sep, std::uint64_t seed = 1) {
    if (!(sep > 0.0 && sep < 1.0)) throw std::invalid_argument("direction_net: separation must lie in (0,1)");
    DirectionNet<K> net;
    net.separation = sep;
    if constexpr (K == 2) {
        int n = static_cast<int>(std::floor(2.0 * M_PI / sep));
        for (int i = 0; i < n; ++i) {
            double a = 2.0 * M_PI * i / n;
            net.directions.push_back(Vec<2>{std::cos(a), std::sin(a)});
        }
        net.covering_radius = M_PI / n;
        return net;
    } else {
        // Candidates: a grid on the faces of [-1,1]^K, projected radially.
        // The projection does not increase distances, so grid spacing
        // sep/sqrt(K-1) puts every sphere point within sep/2 of a candidate.
        double step = sep / std::sqrt(static_cast<double>(K - 1));
        int m = static_cast<int>(std::ceil(2.0 / step));
        std::vector<Vec<K>> cand;
        for (int face = 0; face < 2 * K; ++face) {
            int fixed = face / 2;
            double sign = (face % 2 == 0) ? 1.0 : -1.0;
            std::array<int, K - 1> idx{};
            while (true) {
                Vec<K> v;
                int q = 0;
                for (int i = 0; i < K; ++i) {
                    if (i == fixed)
                        v[i] = sign;
                    else
                        v[i] = -1.0 + (idx[q++] + 0.5) * 2.0 / m;
                }
                cand.push_back(normalized<K>(v));
                int pos = 0;
                while (pos < K - 1 && ++idx[pos] == m) idx[pos++] = 0;
                if (pos == K - 1) break;
            }
        }
        Rng rng(seed);
        rng.shuffle(cand);
        const double chord = 2.0 * std::sin(sep / 2.0);
        std::unordered_map<CubeIndex<K>, std::vector<int>, CubeIndexHash<K>> buckets;
        auto key = [&](const Vec<K>& v) {
            CubeIndex<K> k;
            for (int i = 0; i < K; ++i) k[i] = static_cast<long>(std::floor(v[i] / chord));
            return k;
        };
        for (const auto& c : cand) {
            CubeIndex<K> k = key(c);
            bool ok = true;
            int total = 1;
            for (int i = 0; i < K; ++i) total *= 3;
            for (int code = 0; code < total && ok; ++code) {
                CubeIndex<K> n = k;
                int cc = code;
                for (int i = 0; i < K; ++i) {
                    n[i] += cc % 3 - 1;
                    cc /= 3;
                }
                auto it = buckets.find(n);
                if (it == buckets.end()) continue;
                for (int j : it->second)
                    if (angle_between<K>(net.directions[j], c) < sep) {
                        ok = false;
                        break;
                    }
            }
            if (!ok) continue;
            buckets[k].push_back(static_cast<int>(net.directions.size()));
            net.directions.push_back(c);
        }
        net.covering_radius = 1.5 * sep;
        return net;
    }
}

// Index of the net direction closest to v (largest inner product).
template <int K>
int nearest_direction(const std::vector<Vec<K>>& dirs, const Vec<K>& v) {
    int best = -1;
    double bd = -2.0;
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        double c = dot<K>(dirs[i], v);
        if (c > bd) {
            bd = c;
            best = static_cast<int>(i);
        }
    }
    return best;
}

// ---------------------------------------------------------------------
// Tubes containing plates and type-r components.

template <int D>
struct TubeAssignment {
    std::vector<Plate<D>> tubes;       // sqrt(delta)-tubes, undilated
    double dilate = 3.0;               // every plate lies in dilate * tubes[plate_tube[i]]
    std::vector<int> plate_tube;       // plate index -> tube index
    std::vector<std::vector<int>> members;  // X_P(tau)

    std::map<long, std::vector<int>> components() const {
        std::map<long, std::vector<int>> out;
        for (const auto& m : members) {
            if (m.empty()) continue;
            long r = 1L << static_cast<int>(std::floor(std::log2(static_cast<double>(m.size()))));
            auto& v = out[r];
            v.insert(v.end(), m.begin(), m.end());
        }
        for (auto& kv : out) std::sort(kv.second.begin(), kv.second.end());
        return out;
    }
};

inline long dyadic_bucket(std::size_t count) {
    return 1L << static_cast<int>(std::floor(std::log2(static_cast<double>(count))));
}

template <int D>
TubeAssignment<D> assign_tubes(const std::vector<Plate<D>>& P, const Config& cfg, bool check_separated = true) {
    if (check_separated && !is_separated<D>(P, cfg.Csep, cfg.Ccomp))
        throw std::invalid_argument("assign_tubes: plate family is not separated");
    TubeAssignment<D> ta;
    ta.plate_tube.assign(P.size(), -1);
    for (std::size_t i = 0; i < P.size(); ++i) {
        const auto& p = P[i];
        if (p.kind != BoxKind::plate) throw std::invalid_argument("assign_tubes expects plates");
        const double dl = p.scale;
        int found = -1;
        for (std::size_t k = 0; k < ta.tubes.size() && found < 0; ++k) {
            const auto& tau = ta.tubes[k];
            if (norm<D - 1>(tau.direction() - p.direction()) > 0.5 * cfg.Ccomp * dl * (1.0 + 1e-12)) continue;
            if (box_inside<D>(p, tau, ta.dilate)) found = static_cast<int>(k);
        }
        if (found < 0) {
            Plate<D> tau = p;
            tau.kind = BoxKind::tube;
            tau.scale = std::sqrt(dl);
            for (int a = 1; a < D; ++a) tau.lengths[a] = cfg.C0 * std::sqrt(dl);
            tau.lengths[0] = cfg.C0;
            ta.tubes.push_back(tau);
            ta.members.emplace_back();
            found = static_cast<int>(ta.tubes.size()) - 1;
        }
        ta.plate_tube[i] = found;
        ta.members[found].push_back(static_cast<int>(i));
    }
    return ta;
}

template <int D>
std::map<long, std::vector<int>> type_components(const TubeAssignment<D>& ta) {
    return ta.components();
}

// Tubes of the assignment dilated so that each contains its plates.
template <int D>
std::vector<Plate<D>> dilated_tubes(const TubeAssignment<D>& ta) {
    std::vector<Plate<D>> out;
    for (const auto& t : ta.tubes) out.push_back(t.dilated(ta.dilate));
    return out;
}

// ---------------------------------------------------------------------
// Text serialization: one box per line, center axes lengths kind.

template <int D>
void write_boxes(std::ostream& os, const std::vector<Plate<D>>& P, const std::vector<std::string>& extra = {}) {
    os << std::setprecision(17);
    for (std::size_t i = 0; i < P.size(); ++i) {
        const auto& p = P[i];
        for (int k = 0; k < D; ++k) os << p.center[k] << ' ';
        for (int a = 0; a < D; ++a)
            for (int k = 0; k < D; ++k) os << p.axes[a][k] << ' ';
        for (int k = 0; k < D; ++k) os << p.lengths[k] << ' ';
        os << kind_name(p.kind);
        if (i < extra.size() && !extra[i].empty()) os << ' ' << extra[i];
        os << '\n';
    }
}

template <int D>
Plate<D> parse_box(std::istringstream& is) {
    Plate<D> p;
    for (int k = 0; k < D; ++k) is >> p.center[k];
    for (int a = 0; a < D; ++a)
        for (int k = 0; k < D; ++k) is >> p.axes[a][k];
    for (int k = 0; k < D; ++k) is >> p.lengths[k];
    std::string kind;
    is >> kind;
    if (!is) throw std::runtime_error("malformed box line");
    p.kind = parse_kind(kind);
    if (p.kind == BoxKind::plate)
        p.scale = p.lengths[D - 1] / p.lengths[0];
    else if (p.kind == BoxKind::tube)
        p.scale = p.lengths[D - 1] / p.lengths[0];
    else
        p.scale = 0.0;
    return p;
}

template <int D>
std::vector<Plate<D>> read_boxes(std::istream& in, std::vector<std::string>* extra = nullptr) {
    std::vector<Plate<D>> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        out.push_back(parse_box<D>(is));
        if (extra) {
            std::string rest;
            std::getline(is, rest);
            auto pos = rest.find_first_not_of(' ');
            extra->push_back(pos == std::string::npos ? std::string() : rest.substr(pos));
        }
    }
    return out;
}

}  // namespace platekit
