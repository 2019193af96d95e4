#pragma once

#include <algorithm>
#include <map>
#include <thread>
#include <unordered_map>
#include <utility>

#include "bumps.hpp"
#include "field.hpp"
#include "geometry.hpp"
#include "packets.hpp"
#include "rng.hpp"

namespace platekit {

// Smooth bump on (-1, 1) with value 1 at 0.
inline double smooth_bump(double x) {
    double a = x * x;
    if (a >= 1.0) return 0.0;
    return std::exp(1.0 - 1.0 / (1.0 - a));
}

// Position of a frequency relative to the cone: |xi'|, the coordinate
// along the cone generator (r + tau)/sqrt2, the distance to the cone and
// the spatial direction xi'/|xi'|.
template <int D>
struct ConeCoords {
    double radius = 0.0;
    double along = 0.0;
    double distance = 0.0;
    Vec<D - 1> direction{};
};

template <int D>
ConeCoords<D> cone_coords(const Vec<D>& xi) {
    ConeCoords<D> c;
    Vec<D - 1> s = spatial<D>(xi);
    c.radius = norm<D - 1>(s);
    c.along = (c.radius + xi[D - 1]) / std::sqrt(2.0);
    c.distance = cone_distance<D>(xi);
    if (c.radius > 0.0) c.direction = (1.0 / c.radius) * s;
    return c;
}

// ---------------------------------------------------------------------
// Multiplier banks: angular caps on the sphere of spatial frequency
// directions, with a smooth partition of unity y_cap.

template <int D>
class CapBank {
public:
    static constexpr int K = D - 1;

    CapBank(double N, double separation, std::uint64_t seed = 1) : N_(N) {
        auto net = direction_net<K>(separation, seed);
        caps_ = net.directions;
        sep_ = net.separation;
        // Every direction is within the covering radius of a cap, so the
        // bump sum is positive; at 1.5x a cap keeps a core where only its
        // own bump is positive (exactly so in the plane, where the net is
        // equally spaced).
        radius_ = 1.5 * net.covering_radius;
        cell_ = radius_;
        for (std::size_t c = 0; c < caps_.size(); ++c) buckets_[key(caps_[c])].push_back(static_cast<int>(c));
    }

    // Caps of angular size N^{-1/2}.
    static CapBank caps_for(double N, std::uint64_t seed = 1) { return CapBank(N, 1.0 / std::sqrt(N), seed); }
    // Sectors of angular size N^{-1/4}.
    static CapBank sectors_for(double N, std::uint64_t seed = 1) { return CapBank(N, std::pow(N, -0.25), seed); }

    double N() const { return N_; }
    std::size_t size() const { return caps_.size(); }
    const std::vector<Vec<K>>& caps() const { return caps_; }
    const Vec<K>& cap(int c) const { return caps_.at(c); }
    double separation() const { return sep_; }
    // Angular radius of each cap's bump.
    double bump_radius() const { return radius_; }

    // Unnormalised bump of cap c at spatial direction v.
    double bump(int c, const Vec<K>& v) const { return smooth_bump(angle_between<K>(caps_[c], v) / radius_); }

    // Caps whose bump may be positive at v.
    void candidates(const Vec<K>& v, std::vector<int>& out) const {
        out.clear();
        CubeIndex<K> k = key(v);
        int total = 1;
        for (int i = 0; i < K; ++i) total *= 3;
        for (int code = 0; code < total; ++code) {
            CubeIndex<K> n = k;
            int cc = code;
            for (int i = 0; i < K; ++i) {
                n[i] += cc % 3 - 1;
                cc /= 3;
            }
            auto it = buckets_.find(n);
            if (it != buckets_.end()) out.insert(out.end(), it->second.begin(), it->second.end());
        }
    }

    // Pairs (cap, y_cap(xi)) with y > 0; the y sum to 1. At xi' = 0 the
    // whole weight goes to cap 0.
    void weights(const Vec<D>& xi, std::vector<std::pair<int, double>>& out) const {
        out.clear();
        Vec<K> s = spatial<D>(xi);
        double r = norm<K>(s);
        if (r == 0.0) {
            out.push_back({0, 1.0});
            return;
        }
        Vec<K> v = (1.0 / r) * s;
        thread_local std::vector<int> cand;
        candidates(v, cand);
        double total = 0.0;
        for (int c : cand) {
            double b = bump(c, v);
            if (b > 0.0) {
                out.push_back({c, b});
                total += b;
            }
        }
        if (total == 0.0) {
            out.push_back({nearest_direction<K>(caps_, v), 1.0});
            return;
        }
        for (auto& w : out) w.second /= total;
    }

    double weight(int c, const Vec<D>& xi) const {
        std::vector<std::pair<int, double>> w;
        weights(xi, w);
        for (const auto& p : w)
            if (p.first == c) return p.second;
        return 0.0;
    }

private:
    CubeIndex<K> key(const Vec<K>& v) const {
        CubeIndex<K> k;
        for (int i = 0; i < K; ++i) k[i] = static_cast<long>(std::floor(v[i] / cell_));
        return k;
    }

    double N_ = 1.0, sep_ = 0.0, radius_ = 0.0, cell_ = 1.0;
    std::vector<Vec<K>> caps_;
    std::unordered_map<CubeIndex<K>, std::vector<int>, CubeIndexHash<K>> buckets_;
};

// Spectrum entries grouped by cap: for each cap the (index, y) pairs with
// y > 0 at points where the spectrum is not negligible. Entries with
// |fhat|^2 below floor * max |fhat|^2 are ignored.
template <int D>
struct CapSplit {
    std::vector<std::vector<std::pair<std::size_t, double>>> entries;
    std::size_t max_overlap = 0;
};

template <int D>
CapSplit<D> split_by_caps(const Spectrum<D>& s, const CapBank<D>& bank, double floor = 1e-32) {
    CapSplit<D> out;
    out.entries.resize(bank.size());
    double mx = 0.0;
    for (const auto& v : s.values) mx = std::max(mx, std::norm(v));
    if (mx == 0.0) return out;
    std::vector<std::pair<int, double>> w;
    for (std::size_t k = 0; k < s.values.size(); ++k) {
        if (std::norm(s.values[k]) <= floor * mx) continue;
        bank.weights(s.grid.frequency(k), w);
        out.max_overlap = std::max(out.max_overlap, w.size());
        for (const auto& p : w) out.entries[p.first].push_back({k, p.second});
    }
    return out;
}

template <int D>
SampledField<D> apply_cap(const Spectrum<D>& s, const std::vector<std::pair<std::size_t, double>>& entries) {
    Spectrum<D> t{s.grid, std::vector<cplx>(s.values.size(), cplx(0.0))};
    for (const auto& e : entries) t.values[e.first] = e.second * s.values[e.first];
    return inverse<D>(t);
}

// Xi_cap * f: inverse transform of y_cap fhat.
template <int D>
SampledField<D> cap_convolve(const SampledField<D>& f, const CapBank<D>& bank, int cap) {
    if (cap < 0 || cap >= static_cast<int>(bank.size())) throw std::invalid_argument("cap_convolve: no such cap");
    auto s = forward<D>(f);
    check_aliasing<D>(s);
    auto split = split_by_caps<D>(s, bank);
    return apply_cap<D>(s, split.entries[cap]);
}

template <int D>
struct MicNorm {
    double value = 0.0;
    std::size_t caps_used = 0;
    std::size_t max_overlap = 0;
};

// ||f||_{p,mic} = (sum_cap ||Xi_cap * f||_p^p)^{1/p}, the max over caps of
// the grid sup for p = infinity. p = 2 uses Parseval and needs no inverse
// transforms. Caps are processed by up to `jobs` threads.
template <int D>
MicNorm<D> mic_norm(const SampledField<D>& f, double p, const CapBank<D>& bank, int jobs = 1) {
    if (!(p >= 2.0)) throw std::invalid_argument("mic_norm: p must be at least 2");
    auto s = forward<D>(f);
    check_aliasing<D>(s);
    auto split = split_by_caps<D>(s, bank);
    MicNorm<D> out;
    out.max_overlap = split.max_overlap;
    std::vector<int> used;
    for (std::size_t c = 0; c < split.entries.size(); ++c)
        if (!split.entries[c].empty()) used.push_back(static_cast<int>(c));
    out.caps_used = used.size();
    if (p == 2.0) {
        double acc = 0.0;
        for (int c : used)
            for (const auto& e : split.entries[c]) acc += std::norm(e.second * s.values[e.first]);
        out.value = std::sqrt(acc * s.grid.frequency_cell());
        return out;
    }
    std::vector<double> per(used.size(), 0.0);
    auto work = [&](std::size_t lo, std::size_t step) {
        for (std::size_t i = lo; i < used.size(); i += step) {
            auto g = apply_cap<D>(s, split.entries[used[i]]);
            per[i] = std::isinf(p) ? g.sup_norm() : g.lp_power(p);
        }
    };
    const std::size_t nj = static_cast<std::size_t>(std::max(1, jobs));
    if (nj == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nj; ++t) pool.emplace_back(work, t, nj);
        for (auto& th : pool) th.join();
    }
    if (std::isinf(p)) {
        for (double v : per) out.value = std::max(out.value, v);
    } else {
        double acc = 0.0;
        for (double v : per) acc += v;
        out.value = std::pow(acc, 1.0 / p);
    }
    return out;
}

// ---------------------------------------------------------------------
// Cone-supported test fields.

// Smooth window on a piece of the cone: |xi| along the generator between
// lo*N and hi*N, within `thickness` of the cone and, if half_angle > 0,
// within half_angle of `direction`.
template <int D>
struct ConeWindow {
    double N = 16.0;
    double lo = 0.5, hi = 1.5;
    double thickness = 0.5;
    Vec<D - 1> direction{};
    double half_angle = 0.0;

    double operator()(const Vec<D>& xi) const {
        auto c = cone_coords<D>(xi);
        double mid = 0.5 * (lo + hi) * N, half = 0.5 * (hi - lo) * N;
        double w = smooth_bump((c.along - mid) / half);
        if (w == 0.0) return 0.0;
        w *= smooth_bump(c.distance / thickness);
        if (w == 0.0 || half_angle <= 0.0) return w;
        if (c.radius == 0.0) return 0.0;
        return w * smooth_bump(angle_between<D - 1>(c.direction, direction) / half_angle);
    }
};

// Complex Gaussian spectrum times the window, transformed back to the grid.
template <int D>
SampledField<D> random_cone_field(const GridSpec<D>& g, const ConeWindow<D>& win, Rng& rng) {
    g.validate();
    Spectrum<D> s{g, std::vector<cplx>(g.size(), cplx(0.0))};
    for (std::size_t k = 0; k < s.values.size(); ++k) {
        double w = win(g.frequency(k));
        if (w == 0.0) continue;
        double a = rng.normal(), b = rng.normal();
        s.values[k] = w * cplx(a, b) / std::sqrt(2.0);
    }
    return inverse<D>(s);
}

// A wave packet periodised over the torus of the grid, from its exact
// spectrum: the envelope transform is a product of B-splines, so the
// Fourier coefficients are samples of it.
template <int D>
SampledField<D> sampled_packet(const GridSpec<D>& g, const WavePacket<D>& w) {
    g.validate();
    const auto& P = w.plate;
    const double N = w.N();
    Spectrum<D> s{g, std::vector<cplx>(g.size(), cplx(0.0))};
    for (std::size_t k = 0; k < s.values.size(); ++k) {
        Vec<D> xi = g.frequency(k);
        Vec<D> eta = xi - N * P.axes[D - 1];
        double a = 1.0;
        for (int i = 0; i < D && a != 0.0; ++i)
            a *= P.lengths[i] * profile_spectrum(w.profile, P.lengths[i] * dot<D>(P.axes[i], eta));
        if (a == 0.0) continue;
        double ph = -2.0 * M_PI * dot<D>(P.center, xi);
        s.values[k] = w.coef * a * cplx(std::cos(ph), std::sin(ph));
    }
    return inverse<D>(s);
}

// Sum of periodised packets, one inverse transform. Each packet only
// touches the grid frequencies in the bounding box of its frequency box.
template <int D>
SampledField<D> sampled_nfunction(const GridSpec<D>& g, const NFunction<D>& f) {
    g.validate();
    Spectrum<D> s{g, std::vector<cplx>(g.size(), cplx(0.0))};
    for (const auto& w : f.packets) {
        const auto& P = w.plate;
        const double N = w.N();
        const double half = 0.5 * w.profile.kappa;
        Vec<D> centre = to_frame<D>(g.frame, N * P.axes[D - 1]);
        std::array<int, D> lo, hi;
        bool empty = false;
        for (int j = 0; j < D; ++j) {
            double reach = 0.0;
            for (int i = 0; i < D; ++i) reach += half / P.lengths[i] * std::abs(dot<D>(g.frame[j], P.axes[i]));
            lo[j] = std::max(static_cast<int>(std::ceil((centre[j] - reach) * g.extent[j])), -g.res[j] / 2);
            hi[j] = std::min(static_cast<int>(std::floor((centre[j] + reach) * g.extent[j])), g.res[j] / 2 - 1);
            empty = empty || lo[j] > hi[j];
        }
        if (empty) continue;
        std::array<int, D> m = lo;
        while (true) {
            std::array<int, D> n;
            for (int j = 0; j < D; ++j) n[j] = m[j] < 0 ? m[j] + g.res[j] : m[j];
            Vec<D> xi = g.frequency(g.ravel(n));
            Vec<D> eta = xi - N * P.axes[D - 1];
            double a = 1.0;
            for (int i = 0; i < D && a != 0.0; ++i)
                a *= P.lengths[i] * profile_spectrum(w.profile, P.lengths[i] * dot<D>(P.axes[i], eta));
            if (a != 0.0) {
                double ph = -2.0 * M_PI * dot<D>(P.center, xi);
                s.values[g.ravel(n)] += w.coef * a * cplx(std::cos(ph), std::sin(ph));
            }
            int j = D - 1;
            while (j >= 0 && m[j] == hi[j]) {
                m[j] = lo[j];
                --j;
            }
            if (j < 0) break;
            ++m[j];
        }
    }
    return inverse<D>(s);
}

// Fraction of spectral energy outside Gamma_N(C).
template <int D>
double energy_outside_cone(const Spectrum<D>& s, double N, double C) {
    double out = 0.0, total = 0.0;
    for (std::size_t k = 0; k < s.values.size(); ++k) {
        double e = std::norm(s.values[k]);
        if (e == 0.0) continue;
        total += e;
        if (!in_cone_neighbourhood<D>(s.grid.frequency(k), N, C)) out += e;
    }
    return total > 0.0 ? out / total : 0.0;
}

// ---------------------------------------------------------------------
// Decomposition of a single-cap field into N-function pieces over a
// periodic tiling by translates of a plate.

// The plate at the origin whose packets have spatial frequency direction
// `cap` (plate direction -cap).
template <int D>
Plate<D> cap_plate(const Vec<D - 1>& cap, const Config& cfg) {
    return make_plate<D>(zero_vec<D>(), (-1.0) * cap, cfg);
}

// Torus grid in the frame of `tile`, `tiles[i]` tiles per axis with the
// tile centred at grid point 0.
template <int D>
GridSpec<D> plate_torus_grid(const Plate<D>& tile, const std::array<int, D>& tiles, const std::array<int, D>& res) {
    GridSpec<D> g;
    g.frame = tile.axes;
    g.origin = to_frame<D>(tile.axes, tile.center);
    for (int i = 0; i < D; ++i) {
        g.extent[i] = tiles[i] * tile.lengths[i];
        g.res[i] = res[i];
    }
    g.validate();
    return g;
}

namespace detail {

// Applies a matrix along one axis of a row-major array: out[o][b][i] =
// op_a mat[a * nb + b] * in[o][a][i], with op = max or sum.
inline std::vector<double> apply_along_axis(const std::vector<double>& in, std::vector<std::size_t>& shape, int axis,
                                            const std::vector<double>& mat, std::size_t nb, bool use_max) {
    std::size_t na = shape[axis];
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    std::vector<double> out(outer * nb * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t a = 0; a < na; ++a) {
            const double* src = &in[(o * na + a) * inner];
            for (std::size_t b = 0; b < nb; ++b) {
                double m = mat[a * nb + b];
                if (m == 0.0) continue;
                double* dst = &out[(o * nb + b) * inner];
                if (use_max) {
                    for (std::size_t i = 0; i < inner; ++i) dst[i] = std::max(dst[i], m * src[i]);
                } else {
                    for (std::size_t i = 0; i < inner; ++i) dst[i] += m * src[i];
                }
            }
        }
    shape[axis] = nb;
    return out;
}

// Periodised psi1 weights on one axis: w[n * T + j] = sum_m psi1(s - j - m T)^power
// with s = n * h / L the grid position in tile units.
inline std::vector<double> periodic_tile_weights(int res, int T, double h_over_L, int power) {
    std::vector<double> w(static_cast<std::size_t>(res) * T, 0.0);
    const double range = default_eta().range();
    for (int n = 0; n < res; ++n)
        for (int j = 0; j < T; ++j) {
            double s = n * h_over_L - j;
            long mlo = static_cast<long>(std::ceil((s - range) / T));
            long mhi = static_cast<long>(std::floor((s + range) / T));
            double acc = 0.0;
            for (long m = mlo; m <= mhi; ++m) acc += std::pow(psi1(s - static_cast<double>(m) * T), power);
            w[static_cast<std::size_t>(n) * T + j] = acc;
        }
    return w;
}

inline std::vector<double> transpose(const std::vector<double>& m, std::size_t rows, std::size_t cols) {
    std::vector<double> t(m.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = m[r * cols + c];
    return t;
}

}  // namespace detail

template <int D>
struct DecompositionLevel {
    double lambda = 0.0;
    std::vector<std::size_t> tiles;  // linear tile indices
    SampledField<D> piece;           // f_lambda, when requested
};

template <int D>
struct Decomposition {
    Plate<D> tile;
    std::array<int, D> tiles{};
    std::vector<DecompositionLevel<D>> levels;  // decreasing lambda
    std::vector<double> tile_norms;              // ||psi_j f||_inf per tile
    std::size_t dropped = 0;                     // tiles below the lambda floor
    double identity_error = 0.0;  // relative L2 of sum lambda f_lambda - (sum psi_j^2) f
    double weight_min = 0.0, weight_max = 0.0;  // range of sum_j psi_j^2 on the grid
    double packet_constant = 0.0;  // max |psi_j^2 f| / (lambda_j phi_j) over checked tiles
    double support_leak = 0.0;     // max energy fraction of a checked piece outside its dual plate
    double effective_C1 = 0.0;     // smallest C1 leaving at most 1e-8 of each checked piece outside

    std::size_t kept() const {
        std::size_t n = 0;
        for (const auto& l : levels) n += l.tiles.size();
        return n;
    }
    double top_lambda() const { return levels.empty() ? 0.0 : levels.front().lambda; }

    // sum_lambda lambda^p delta^{(d+1)/2} |P_lambda|.
    double packing_sum(double p, double delta) const {
        double s = 0.0;
        for (const auto& l : levels) s += std::pow(l.lambda, p) * l.tiles.size();
        return s * std::pow(delta, 0.5 * D);
    }

    std::array<int, D> tile_index(std::size_t lin) const {
        std::array<int, D> j;
        for (int i = D - 1; i >= 0; --i) {
            j[i] = static_cast<int>(lin % static_cast<std::size_t>(tiles[i]));
            lin /= static_cast<std::size_t>(tiles[i]);
        }
        return j;
    }
    Plate<D> tile_plate(std::size_t lin) const {
        auto j = tile_index(lin);
        Vec<D> u;
        for (int i = 0; i < D; ++i) u[i] = j[i] * tile.lengths[i];
        return tile.translated(from_frame<D>(tile.axes, u));
    }
};

template <int D>
struct DecomposeOptions {
    double lambda_floor = 0.0;   // discard levels below this; default delta^K'
    bool keep_pieces = false;
    int checked_tiles = 4;       // tiles whose packet and support bounds are measured
    double single_cap_tolerance = 1e-8;
};

// Tiles per axis of a torus grid laid out in the tile's frame; errors if
// the grid is not an integer number of tiles along every axis.
template <int D>
std::array<int, D> torus_tile_counts(const GridSpec<D>& g, const Plate<D>& tile) {
    if (!same_frame<D>(g.frame, tile.axes, 1e-9))
        throw std::invalid_argument("decompose: the grid frame must be the plate frame of the cap");
    std::array<int, D> T;
    for (int i = 0; i < D; ++i) {
        double q = g.extent[i] / tile.lengths[i];
        T[i] = static_cast<int>(std::llround(q));
        if (T[i] < 1 || std::abs(q - T[i]) > 1e-9 * q)
            throw std::invalid_argument("decompose: grid extent is not a whole number of tiles");
    }
    return T;
}

// Energy fraction of the spectrum outside the dual plate with constant
// C1, and the smallest constant leaving at most `tol` outside.
template <int D>
std::pair<double, double> dual_plate_leak(const Spectrum<D>& s, const Plate<D>& tile, double N, double C0, double C1,
                                          double tol = 1e-8) {
    std::vector<std::pair<double, double>> need;
    need.reserve(s.values.size());
    double total = 0.0, outside = 0.0;
    for (std::size_t k = 0; k < s.values.size(); ++k) {
        double e = std::norm(s.values[k]);
        if (e == 0.0) continue;
        total += e;
        Vec<D> eta = s.grid.frame_frequency(s.grid.unravel(k));
        eta[D - 1] -= N;
        // Constant c such that eta lies on the boundary of the dual plate
        // with lengths c (1, sqrt N, ..., N): half widths c / (2 L_i / C0).
        double c = 0.0;
        for (int i = 0; i < D; ++i) c = std::max(c, 2.0 * std::abs(eta[i]) * tile.lengths[i] / C0);
        if (c > C1 * (1.0 + 1e-12)) outside += e;
        need.push_back({c, e});
    }
    if (total == 0.0) return {0.0, 0.0};
    std::sort(need.begin(), need.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    double acc = 0.0, eff = 0.0;
    for (const auto& [c, e] : need) {
        if (acc + e > tol * total) {
            eff = c;
            break;
        }
        acc += e;
    }
    return {outside / total, eff};
}

// f = sum over dyadic lambda of lambda f_lambda up to the weight sum_j psi_j^2:
// tiles j of the torus with lambda <= ||psi_j f||_inf < 2 lambda form P_lambda
// and f_lambda = sum_{j in P_lambda} lambda^{-1} psi_j^2 f. Requires the
// spectrum inside the dual plate shrunk by the band of psi^2.
template <int D>
Decomposition<D> nfunction_decompose(const SampledField<D>& f, const Vec<D - 1>& cap, const Config& cfg,
                                     DecomposeOptions<D> opt = {}) {
    const double N = cfg.N;
    const double delta = cfg.delta();
    if (opt.lambda_floor <= 0.0) opt.lambda_floor = std::pow(delta, cfg.Kprime);
    Decomposition<D> dec;
    dec.tile = cap_plate<D>(cap, cfg);
    dec.tile.center = from_frame<D>(f.grid.frame, f.grid.origin);
    dec.tiles = torus_tile_counts<D>(f.grid, dec.tile);
    const auto& g = f.grid;

    // The grid must resolve the dual plate, or pieces alias.
    for (int i = 0; i < D; ++i) {
        double reach = (i == D - 1 ? N : 0.0) + cfg.C1 * cfg.C0 / (2.0 * dec.tile.lengths[i]);
        double nyquist = 0.5 * g.res[i] / g.extent[i];
        if (nyquist < reach * (1.0 - 1e-12))
            throw std::invalid_argument("decompose: grid resolution on axis " + std::to_string(i) +
                                        " does not resolve the dual plate (Nyquist " + std::to_string(nyquist) +
                                        " < " + std::to_string(reach) + ")");
    }

    // Single-cap precondition: psi_j^2 widens the spectrum by 1/L_i per
    // axis, which must keep it inside the dual plate.
    auto spec = forward<D>(f);
    {
        double total = 0.0, outside = 0.0;
        for (std::size_t k = 0; k < spec.values.size(); ++k) {
            double e = std::norm(spec.values[k]);
            if (e == 0.0) continue;
            total += e;
            Vec<D> eta = g.frame_frequency(g.unravel(k));
            eta[D - 1] -= N;
            for (int i = 0; i < D; ++i) {
                double half = cfg.C1 * cfg.C0 / (2.0 * dec.tile.lengths[i]) - 1.0 / dec.tile.lengths[i];
                if (std::abs(eta[i]) > half * (1.0 + 1e-12)) {
                    outside += e;
                    break;
                }
            }
        }
        if (total > 0.0 && outside > opt.single_cap_tolerance * total)
            throw std::invalid_argument(
                "decompose: spectrum is not inside a single cap; split the field with cap_convolve first "
                "(energy fraction outside: " +
                std::to_string(outside / total) + ")");
        if (total == 0.0) return dec;
    }

    std::array<std::vector<double>, D> A, B;  // psi1 and psi1^2 weights, res_i x T_i
    for (int i = 0; i < D; ++i) {
        double hl = g.spacing(i) / dec.tile.lengths[i];
        A[i] = detail::periodic_tile_weights(g.res[i], dec.tiles[i], hl, 1);
        B[i] = detail::periodic_tile_weights(g.res[i], dec.tiles[i], hl, 2);
    }

    // ||psi_j f||_inf for every tile: psi_j is a product over axes, so the
    // max over the grid nests axis by axis.
    std::vector<double> absf(f.values.size());
    for (std::size_t k = 0; k < absf.size(); ++k) absf[k] = std::abs(f.values[k]);
    std::vector<std::size_t> shape(D);
    for (int i = 0; i < D; ++i) shape[i] = static_cast<std::size_t>(g.res[i]);
    std::vector<double> cur = absf;
    for (int i = D - 1; i >= 0; --i)
        cur = detail::apply_along_axis(cur, shape, i, A[i], static_cast<std::size_t>(dec.tiles[i]), true);
    dec.tile_norms = cur;

    // Dyadic levels.
    std::map<int, std::vector<std::size_t>, std::greater<int>> by_level;
    for (std::size_t j = 0; j < cur.size(); ++j) {
        double v = cur[j];
        if (!(v >= opt.lambda_floor) || v == 0.0) {
            ++dec.dropped;
            continue;
        }
        int e = static_cast<int>(std::floor(std::log2(v)));
        // Guard the floor against rounding at exact powers of two.
        if (std::ldexp(1.0, e + 1) <= v) ++e;
        if (std::ldexp(1.0, e) > v) --e;
        if (std::ldexp(1.0, e) < opt.lambda_floor) {
            ++dec.dropped;
            continue;
        }
        by_level[e].push_back(j);
    }

    // Level weights W_lambda(x) = sum_{j in P_lambda} psi_j(x)^2, by
    // contracting the tile mask with the transposed weights.
    std::array<std::vector<double>, D> Bt;
    for (int i = 0; i < D; ++i)
        Bt[i] = detail::transpose(B[i], static_cast<std::size_t>(g.res[i]), static_cast<std::size_t>(dec.tiles[i]));
    std::vector<double> sumW(f.values.size(), 0.0);
    for (const auto& [e, tiles] : by_level) {
        DecompositionLevel<D> lvl;
        lvl.lambda = std::ldexp(1.0, e);
        lvl.tiles = tiles;
        std::vector<double> mask(cur.size(), 0.0);
        for (auto j : tiles) mask[j] = 1.0;
        std::vector<std::size_t> sh(D);
        for (int i = 0; i < D; ++i) sh[i] = static_cast<std::size_t>(dec.tiles[i]);
        std::vector<double> W = mask;
        for (int i = D - 1; i >= 0; --i)
            W = detail::apply_along_axis(W, sh, i, Bt[i], static_cast<std::size_t>(g.res[i]), false);
        for (std::size_t k = 0; k < W.size(); ++k) sumW[k] += W[k];
        if (opt.keep_pieces) {
            lvl.piece = SampledField<D>(g);
            for (std::size_t k = 0; k < W.size(); ++k) lvl.piece.values[k] = W[k] * f.values[k] / lvl.lambda;
        }
        dec.levels.push_back(std::move(lvl));
    }

    // The full weight sum_j psi_j^2 is separable: a product of axis sums.
    std::array<std::vector<double>, D> axis_sum;
    for (int i = 0; i < D; ++i) {
        axis_sum[i].assign(g.res[i], 0.0);
        for (int n = 0; n < g.res[i]; ++n)
            for (int j = 0; j < dec.tiles[i]; ++j) axis_sum[i][n] += B[i][static_cast<std::size_t>(n) * dec.tiles[i] + j];
    }
    double num = 0.0, den = 0.0;
    dec.weight_min = std::numeric_limits<double>::infinity();
    dec.weight_max = 0.0;
    for (std::size_t k = 0; k < f.values.size(); ++k) {
        auto n = g.unravel(k);
        double w = 1.0;
        for (int i = 0; i < D; ++i) w *= axis_sum[i][n[i]];
        dec.weight_min = std::min(dec.weight_min, w);
        dec.weight_max = std::max(dec.weight_max, w);
        num += std::norm((sumW[k] - w) * f.values[k]);
        den += std::norm(f.values[k]);
    }
    dec.identity_error = den > 0.0 ? std::sqrt(num / den) : 0.0;

    // Packet and Fourier support bounds on the largest tiles.
    std::vector<std::pair<double, std::size_t>> order;
    for (const auto& l : dec.levels)
        for (auto j : l.tiles) order.push_back({dec.tile_norms[j], j});
    std::sort(order.begin(), order.end(), std::greater<>());
    const std::size_t checks = std::min<std::size_t>(order.size(), static_cast<std::size_t>(opt.checked_tiles));
    for (std::size_t c = 0; c < checks; ++c) {
        std::size_t j = order[c].second;
        double lam = 0.0;
        for (const auto& l : dec.levels)
            if (std::find(l.tiles.begin(), l.tiles.end(), j) != l.tiles.end()) lam = l.lambda;
        auto jj = dec.tile_index(j);
        SampledField<D> piece(g);
        for (std::size_t k = 0; k < f.values.size(); ++k) {
            auto n = g.unravel(k);
            double w = 1.0;
            Vec<D> u;
            for (int i = 0; i < D; ++i) {
                w *= B[i][static_cast<std::size_t>(n[i]) * dec.tiles[i] + jj[i]];
                // Periodic offset from the tile centre in tile units.
                double s = n[i] * g.spacing(i) / dec.tile.lengths[i] - jj[i];
                s -= dec.tiles[i] * std::round(s / dec.tiles[i]);
                u[i] = s;
            }
            piece.values[k] = w * f.values[k] / lam;
            double ph = phi<D>(u, cfg.M);
            dec.packet_constant = std::max(dec.packet_constant, std::abs(piece.values[k]) / ph);
        }
        auto ps = forward<D>(piece);
        auto [leak, eff] = dual_plate_leak<D>(ps, dec.tile, N, cfg.C0, cfg.C1);
        dec.support_leak = std::max(dec.support_leak, leak);
        dec.effective_C1 = std::max(dec.effective_C1, eff);
    }
    return dec;
}

// ---------------------------------------------------------------------
// The weak-type predicate: |{|f| > lambda}| against
// lambda^{-p} delta^{d - (d-1)p/2 - alpha} ||f||_2^2.

struct PredicateCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    double ratio = 0.0;
    double mic_inf = 0.0;
    bool tchebyshev_regime = false;  // lambda^{p-2} <= delta^{d - (d-1)p/2 - alpha}
};

template <int D>
PredicateCheck check_P_predicate(const SampledField<D>& f, double p, double alpha, double lambda, double delta,
                                 double mic_inf) {
    const int d = D - 1;
    if (mic_inf > 2.0)
        throw std::invalid_argument("check_P_predicate: ||f||_{inf,mic} = " + std::to_string(mic_inf) +
                                    " exceeds the normalisation by more than a factor 2");
    PredicateCheck r;
    r.mic_inf = mic_inf;
    std::size_t count = 0;
    for (const auto& v : f.values)
        if (std::abs(v) > lambda) ++count;
    r.lhs = f.grid.cell_volume() * static_cast<double>(count);
    const double expo = d - (d - 1) * p / 2.0 - alpha;
    double l2 = f.l2_norm();
    r.rhs = std::pow(lambda, -p) * std::pow(delta, expo) * l2 * l2;
    r.ratio = r.rhs > 0.0 ? r.lhs / r.rhs : 0.0;
    r.tchebyshev_regime = std::pow(lambda, p - 2.0) <= std::pow(delta, expo);
    return r;
}

template <int D>
PredicateCheck check_P_predicate(const SampledField<D>& f, double p, double alpha, double lambda, double delta,
                                 const CapBank<D>& bank) {
    return check_P_predicate<D>(f, p, alpha, lambda, delta, mic_norm<D>(f, INFINITY, bank).value);
}

// sum over dyadic lambda <= sup|f| of lambda^p |{|f| > lambda}|, down to lambda_min.
template <int D>
double strong_type_sum(const SampledField<D>& f, double p, double lambda_min) {
    double sup = f.sup_norm();
    if (sup == 0.0) return 0.0;
    std::vector<double> mags(f.values.size());
    for (std::size_t k = 0; k < mags.size(); ++k) mags[k] = std::abs(f.values[k]);
    std::sort(mags.begin(), mags.end());
    double s = 0.0;
    for (int e = static_cast<int>(std::floor(std::log2(sup))); std::ldexp(1.0, e) >= lambda_min; --e) {
        double lam = std::ldexp(1.0, e);
        std::size_t above = mags.end() - std::upper_bound(mags.begin(), mags.end(), lam);
        s += std::pow(lam, p) * f.grid.cell_volume() * static_cast<double>(above);
    }
    return s;
}

}  // namespace platekit
