#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "platekit/bumps.hpp"
#include "platekit/config.hpp"
#include "platekit/field.hpp"
#include "platekit/geometry.hpp"
#include "platekit/spectral.hpp"

namespace platekit {

// ---------------------------------------------------------------------
// Cone-constant fitting.

// Smallest C with at most `tol` of the spectral energy outside Gamma_N(C).
// The weakest entries, up to tol/2 of the energy, are counted as outside
// without locating them; the fit is therefore an upper bound.
template <int D>
double fit_cone_constant(const Spectrum<D>& s, double N, double tol = 1e-6) {
    std::vector<std::pair<double, std::size_t>> byE;
    byE.reserve(s.values.size());
    double total = 0.0;
    for (std::size_t k = 0; k < s.values.size(); ++k) {
        double e = std::norm(s.values[k]);
        if (e == 0.0) continue;
        total += e;
        byE.push_back({e, k});
    }
    if (total == 0.0) return 0.0;
    std::sort(byE.begin(), byE.end());
    double skipped = 0.0;
    std::size_t first = 0;
    while (first < byE.size() && skipped + byE[first].first <= 0.5 * tol * total) skipped += byE[first++].first;
    std::vector<std::pair<double, double>> need;  // (membership constant, energy)
    need.reserve(byE.size() - first);
    for (std::size_t i = first; i < byE.size(); ++i)
        need.push_back({cone_membership_constant<D>(s.grid.frequency(byE[i].second), N), byE[i].first});
    std::sort(need.begin(), need.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    double outside = skipped;
    for (const auto& [c, e] : need) {
        if (outside + e > tol * total) return c;
        outside += e;
    }
    return 0.0;
}

// ---------------------------------------------------------------------
// Cube rescaling T_Q f = psi . (f o a_Q), a_Q(u) = centre + side u.

// A cube aligned with a grid frame; the centre is in frame coordinates.
template <int D>
struct CubeRescale {
    Vec<D> center{};
    double side = 1.0;

    Vec<D> to_unit(const Vec<D>& y) const { return (1.0 / side) * (y - center); }
    Vec<D> from_unit(const Vec<D>& u) const { return center + side * u; }
};

namespace detail {

// sum_m psi1((x_n - c - m E) / side) along one grid axis.
inline std::vector<double> periodic_bump_axis(int res, double origin, double extent, double c, double side) {
    std::vector<double> w(static_cast<std::size_t>(res), 0.0);
    const double range = default_eta().range();
    const double h = extent / res;
    for (int n = 0; n < res; ++n) {
        double x = origin + n * h - c;
        long m0 = static_cast<long>(std::floor((x - range * side) / extent));
        long m1 = static_cast<long>(std::ceil((x + range * side) / extent));
        double acc = 0.0;
        for (long m = m0; m <= m1; ++m) acc += psi1((x - m * extent) / side);
        w[static_cast<std::size_t>(n)] = acc;
    }
    return w;
}

}  // namespace detail

// The periodised bump psi_Q sampled on the grid.
template <int D>
std::vector<double> cube_bump(const GridSpec<D>& g, const CubeRescale<D>& Q) {
    std::array<std::vector<double>, D> ax;
    for (int i = 0; i < D; ++i)
        ax[i] = detail::periodic_bump_axis(g.res[i], g.origin[i], g.extent[i], Q.center[i], Q.side);
    std::vector<double> w(g.size());
    for (std::size_t k = 0; k < w.size(); ++k) {
        auto n = g.unravel(k);
        double v = 1.0;
        for (int i = 0; i < D; ++i) v *= ax[i][static_cast<std::size_t>(n[i])];
        w[k] = v;
    }
    return w;
}

// T_Q f on the rescaled torus: the sample array of psi_Q f, with the grid
// pulled back through a_Q. The output grid shares the frame of f.
template <int D>
SampledField<D> cube_rescale(const SampledField<D>& f, const CubeRescale<D>& Q, const Config& cfg) {
    if (!(Q.side >= cfg.delta() * (1.0 - 1e-12) && Q.side <= 1.0 + 1e-12))
        throw std::invalid_argument("cube_rescale: side " + std::to_string(Q.side) + " outside [delta, 1]");
    auto w = cube_bump<D>(f.grid, Q);
    SampledField<D> out;
    out.grid = f.grid;
    out.grid.origin = Q.to_unit(f.grid.origin);
    for (int i = 0; i < D; ++i) out.grid.extent[i] = f.grid.extent[i] / Q.side;
    out.values.resize(f.values.size());
    for (std::size_t k = 0; k < w.size(); ++k) out.values[k] = w[k] * f.values[k];
    return out;
}

// Inverse transport: g o a_Q^{-1} on the original grid.
template <int D>
SampledField<D> cube_unrescale(const SampledField<D>& g, const CubeRescale<D>& Q) {
    SampledField<D> out;
    out.grid = g.grid;
    out.grid.origin = Q.from_unit(g.grid.origin);
    for (int i = 0; i < D; ++i) out.grid.extent[i] = g.grid.extent[i] * Q.side;
    out.values = g.values;
    return out;
}

// ---------------------------------------------------------------------
// Lorentz rescaling of a cone sector.

// Frame of the sector around e: (-(e,-1))/sqrt2, (omega,0), (e,1)/sqrt2,
// i.e. the plate frame of direction -e. Frequencies of the sector sit
// along the last axis.
template <int D>
Frame<D> sector_frame(const Vec<D - 1>& e) {
    return plate_frame<D>((-1.0) * normalized<D - 1>(e));
}

// L = N^{-1/2} P_(e,1) + P_(e,-1) + N^{-1/4} P_omega.
template <int D>
struct LorentzMap {
    Vec<D - 1> e{};
    double N = 1.0;
    Frame<D> frame{};
    Vec<D> scales{};  // eigenvalue per frame axis

    LorentzMap() = default;
    LorentzMap(const Vec<D - 1>& dir, double N_) : e(normalized<D - 1>(dir)), N(N_), frame(sector_frame<D>(dir)) {
        if (!(N_ >= 1.0)) throw std::invalid_argument("LorentzMap: N must be at least 1");
        scales[0] = 1.0;
        for (int i = 1; i < D - 1; ++i) scales[i] = std::pow(N, -0.25);
        scales[D - 1] = std::pow(N, -0.5);
    }

    Vec<D> apply(const Vec<D>& v) const {
        Vec<D> y = to_frame<D>(frame, v);
        for (int i = 0; i < D; ++i) y[i] *= scales[i];
        return from_frame<D>(frame, y);
    }
    Vec<D> apply_inverse(const Vec<D>& v) const {
        Vec<D> y = to_frame<D>(frame, v);
        for (int i = 0; i < D; ++i) y[i] /= scales[i];
        return from_frame<D>(frame, y);
    }
    double determinant() const {
        double v = 1.0;
        for (double s : scales) v *= s;
        return v;
    }
    std::array<std::array<double, D>, D> matrix() const {
        std::array<std::array<double, D>, D> m{};
        for (int c = 0; c < D; ++c) {
            Vec<D> b = zero_vec<D>();
            b[c] = 1.0;
            Vec<D> col = apply(b);
            for (int r = 0; r < D; ++r) m[r][c] = col[r];
        }
        return m;
    }
};

// Grid in the sector frame resolving a cone window centred on e. Spacing
// along the cone normal is half the window thickness; along the other axes
// it is a fixed fraction of a unit.
template <int D>
GridSpec<D> sector_grid(const ConeWindow<D>& win) {
    if (!(win.half_angle > 0.0 && win.half_angle < 1.5))
        throw std::invalid_argument("sector_grid: window needs a half angle in (0, 1.5)");
    const double smax = win.hi * win.N, t = win.thickness;
    const double a = win.half_angle;
    Vec<D> reach;
    reach[0] = 0.5 * smax * (1.0 - std::cos(a)) + t;
    for (int i = 1; i < D - 1; ++i) reach[i] = smax * std::sin(a) / std::sqrt(2.0) + t;
    reach[D - 1] = smax + t;
    Vec<D> extent;
    extent[0] = 1.0 / t;
    for (int i = 1; i < D - 1; ++i) extent[i] = 1.0;
    extent[D - 1] = 0.5;
    GridSpec<D> g;
    g.frame = sector_frame<D>(win.direction);
    for (int i = 0; i < D; ++i) {
        int r = 2;
        while (r < 2.0 * reach[i] * extent[i] * (1.0 + 1e-9)) r *= 2;
        g.res[i] = r;
        g.extent[i] = extent[i];
        g.origin[i] = -0.5 * extent[i];
    }
    g.validate();
    return g;
}

struct LorentzResult {
    double energy_fraction_in = 0.0;  // inside Gamma_sqrtN(C_fit)
    double fitted_C = 0.0;
    double sector_energy = 0.0;       // ||Xi_Psi * f||_2^2
};

// g = (Xi_Psi * f) o L, realised on the grid of f with every frame axis
// stretched by the inverse eigenvalue: the sample array is unchanged.
template <int D>
SampledField<D> lorentz_rescale(const SampledField<D>& f, const CapBank<D>& sectors, int sector) {
    if (sector < 0 || sector >= static_cast<int>(sectors.size()))
        throw std::invalid_argument("lorentz_rescale: sector " + std::to_string(sector) + " is not in the bank");
    const LorentzMap<D> L(sectors.cap(sector), sectors.N());
    if (!same_frame<D>(f.grid.frame, L.frame, 1e-9))
        throw std::invalid_argument("lorentz_rescale: the grid frame must be the sector frame");
    SampledField<D> g = cap_convolve<D>(f, sectors, sector);
    for (int i = 0; i < D; ++i) {
        g.grid.origin[i] /= L.scales[i];
        g.grid.extent[i] /= L.scales[i];
    }
    return g;
}

// Number of sectors whose multipliers overlap a given sector's, maximised.
template <int D>
std::size_t sector_overlap_count(const CapBank<D>& bank) {
    std::size_t worst = 0;
    for (std::size_t a = 0; a < bank.size(); ++a) {
        std::size_t n = 0;
        for (std::size_t b = 0; b < bank.size(); ++b)
            if (angle_between<D - 1>(bank.cap(static_cast<int>(a)), bank.cap(static_cast<int>(b))) <
                2.0 * bank.bump_radius())
                ++n;
        worst = std::max(worst, n);
    }
    return worst;
}

// ---------------------------------------------------------------------
// Tiling of a field on a grid not aligned with the cap: tile norms are
// maxima over grid points whose nearest tile lies within `radius` tiles,
// taken on a sub-lattice at most half a tile thickness apart.

template <int D>
struct SampledTiling {
    std::map<int, std::size_t, std::greater<int>> plates_per_level;  // dyadic exponent -> count
    // h g_h at the requested points, per dyadic exponent.
    std::map<int, std::vector<cplx>, std::greater<int>> pieces;
    double weight_min = 0.0;  // min over requested points of the truncated sum_j psi_j^2
    std::size_t caps_used = 0;
};

namespace detail {

template <int D>
struct TileBox {
    std::array<int, D> lo{}, size{};
    std::size_t total() const {
        std::size_t n = 1;
        for (int i = 0; i < D; ++i) n *= static_cast<std::size_t>(size[i]);
        return n;
    }
    bool index(const std::array<int, D>& j, std::size_t& out) const {
        std::size_t lin = 0;
        for (int i = 0; i < D; ++i) {
            int q = j[i] - lo[i];
            if (q < 0 || q >= size[i]) return false;
            lin = lin * static_cast<std::size_t>(size[i]) + static_cast<std::size_t>(q);
        }
        out = lin;
        return true;
    }
};

// Grid point in global coordinates, wrapped into the fundamental domain
// centred at the origin.
template <int D>
Vec<D> centred_point(const GridSpec<D>& g, std::size_t k) {
    auto n = g.unravel(k);
    Vec<D> y;
    for (int i = 0; i < D; ++i) {
        y[i] = g.origin[i] + n[i] * g.spacing(i);
        y[i] -= g.extent[i] * std::round(y[i] / g.extent[i]);
    }
    return from_frame<D>(g.frame, y);
}

inline int dyadic_exponent(double v) {
    int e = static_cast<int>(std::floor(std::log2(v)));
    if (std::ldexp(1.0, e + 1) <= v) ++e;
    if (std::ldexp(1.0, e) > v) --e;
    return e;
}

}  // namespace detail

// Splits g by the caps of `bank`, tiles each cap piece by the plates of
// its direction at the bank's scale and groups tiles by the dyadic level of
// ||psi_j g_Theta||_inf. Levels below `floor` are dropped; points where
// every cap piece is below floor / max psi cannot reach a kept level and
// are skipped, so the kept levels are exact for the truncated tiling.
// Cap weights for every frequency of a grid; reusable across fields
// sharing the grid shape.
template <int D>
CapSplit<D> full_cap_split(const GridSpec<D>& g, const CapBank<D>& bank) {
    Spectrum<D> ones{g, std::vector<cplx>(g.size(), cplx(1.0))};
    return split_by_caps<D>(ones, bank, 0.0);
}

// Smallest value of the truncated weight sum_j psi_j^2 over R^D when only
// tiles within `radius` of the nearest one are kept.
inline double truncated_weight_min(int radius, int D) {
    double worst = std::numeric_limits<double>::infinity();
    for (int n = 0; n <= 500; ++n) {
        double s = -0.5 + n / 500.0, acc = 0.0;
        for (int o = -radius; o <= radius; ++o) acc += psi1(s - o) * psi1(s - o);
        worst = std::min(worst, acc);
    }
    return std::pow(worst, D);
}

// Levels that can put |h g_h| above `target` anywhere are kept: a level h
// contributes at most 2h per cap, so tiles below target / (2 caps) are
// dropped, and points where every cap piece is below that floor / max psi
// are skipped. The kept levels are exact for the truncated tiling.
template <int D>
SampledTiling<D> sampled_tiling(const SampledField<D>& g, const CapBank<D>& bank, const Config& cfg, double target,
                                const std::vector<std::size_t>& points, int radius = 1,
                                const CapSplit<D>* shared = nullptr) {
    SampledTiling<D> out;
    out.weight_min = points.empty() ? 0.0 : std::numeric_limits<double>::infinity();
    auto spec = forward<D>(g);
    check_aliasing<D>(spec);
    CapSplit<D> own;
    if (!shared) own = split_by_caps<D>(spec, bank);
    const CapSplit<D>& split = shared ? *shared : own;
    const double psimax = std::pow(psi1(0.0), D);
    const int span = 2 * radius + 1;
    int offsets = 1;
    for (int i = 0; i < D; ++i) offsets *= span;

    // sup |g_Theta| <= sum |ghat_Theta| / volume, so caps whose spectral
    // mass cannot reach the floor are skipped before transforming.
    std::vector<double> mass(bank.size(), 0.0);
    std::size_t live = 0;
    for (std::size_t c = 0; c < bank.size(); ++c) {
        for (const auto& [k, w] : split.entries[c]) mass[c] += w * std::abs(spec.values[k]);
        mass[c] /= g.grid.volume();
        if (mass[c] > 0.0) ++live;
    }
    const double floor = target / (2.0 * std::max<std::size_t>(1, live));
    std::vector<std::pair<std::size_t, SampledField<D>>> pieces;
    for (std::size_t c = 0; c < bank.size(); ++c) {
        if (mass[c] * psimax < floor) continue;
        pieces.push_back({c, apply_cap<D>(spec, split.entries[c])});
    }
    for (auto& [c, piece] : pieces) {
        double mx = piece.sup_norm();
        if (mx * psimax < floor) continue;
        ++out.caps_used;
        Plate<D> tile = cap_plate<D>(bank.cap(static_cast<int>(c)), cfg);

        // Tile index range over the fundamental domain.
        detail::TileBox<D> box;
        for (int i = 0; i < D; ++i) {
            double reach = 0.0;
            for (int k = 0; k < D; ++k) reach += std::abs(dot<D>(tile.axes[i], g.grid.frame[k])) * 0.5 * g.grid.extent[k];
            int b = static_cast<int>(std::ceil(reach / tile.lengths[i])) + radius + 1;
            box.lo[i] = -b;
            box.size[i] = 2 * b + 1;
        }
        std::vector<double> norms(box.total(), 0.0);

        auto visit = [&](std::size_t k, auto&& fn) {
            Vec<D> x = detail::centred_point<D>(g.grid, k);
            std::array<int, D> j0;
            std::array<std::array<double, 16>, D> w1;
            for (int i = 0; i < D; ++i) {
                double u = dot<D>(tile.axes[i], x) / tile.lengths[i];
                j0[i] = static_cast<int>(std::lround(u));
                for (int o = -radius; o <= radius; ++o) w1[i][o + radius] = psi1(u - (j0[i] + o));
            }
            for (int m = 0; m < offsets; ++m) {
                int r = m;
                std::array<int, D> j;
                double w = 1.0;
                for (int i = D - 1; i >= 0; --i) {
                    int o = r % span;
                    r /= span;
                    j[i] = j0[i] + o - radius;
                    w *= w1[i][o];
                }
                std::size_t lin;
                if (box.index(j, lin)) fn(lin, w);
            }
        };

        // Tile norms from a sub-lattice of the grid whose spacing stays at
        // or below half the thinnest tile length.
        double hmax = 0.0;
        for (int i = 0; i < D; ++i) hmax = std::max(hmax, g.grid.spacing(i));
        double lmin = *std::min_element(tile.lengths.begin(), tile.lengths.end());
        int stride = 1;
        while (2 * stride * hmax <= 0.5 * lmin) stride *= 2;
        for (int i = 0; i < D; ++i) stride = std::min(stride, g.grid.res[i]);
        const double thr = floor / psimax;
        for (std::size_t k = 0; k < piece.values.size(); ++k) {
            if (stride > 1) {
                auto n = g.grid.unravel(k);
                bool on = true;
                for (int i = 0; i < D && on; ++i) on = n[i] % stride == 0;
                if (!on) continue;
            }
            double a = std::abs(piece.values[k]);
            if (a < thr) continue;
            visit(k, [&](std::size_t lin, double w) { norms[lin] = std::max(norms[lin], w * a); });
        }
        std::vector<int> level(norms.size(), 0);
        std::vector<char> kept(norms.size(), 0);
        for (std::size_t j = 0; j < norms.size(); ++j) {
            if (!(norms[j] >= floor) || norms[j] == 0.0) continue;
            int e = detail::dyadic_exponent(norms[j]);
            if (std::ldexp(1.0, e) < floor) continue;
            level[j] = e;
            kept[j] = 1;
            ++out.plates_per_level[e];
        }
        for (std::size_t q = 0; q < points.size(); ++q) {
            const cplx v = piece.values[points[q]];
            visit(points[q], [&](std::size_t lin, double w) {
                if (!kept[lin]) return;
                auto& vec = out.pieces[level[lin]];
                if (vec.empty()) vec.assign(points.size(), cplx(0.0));
                vec[q] += w * w * v;
            });
        }
    }
    // Truncated weight sum, independent of the cap.
    if (!points.empty()) {
        Plate<D> tile = cap_plate<D>(bank.cap(0), cfg);
        const int span1 = 2 * radius + 1;
        for (std::size_t q = 0; q < points.size(); ++q) {
            Vec<D> x = detail::centred_point<D>(g.grid, points[q]);
            double w = 1.0;
            for (int i = 0; i < D; ++i) {
                double u = dot<D>(tile.axes[i], x) / tile.lengths[i];
                long j0 = std::lround(u);
                double s = 0.0;
                for (int o = 0; o < span1; ++o) {
                    double p = psi1(u - (j0 + o - radius));
                    s += p * p;
                }
                w *= s;
            }
            out.weight_min = std::min(out.weight_min, w);
        }
    }
    return out;
}

// ---------------------------------------------------------------------
// One level of the scale change: cover the superlevel set by rescaled
// sqrt(delta)-cubes, decompose each at scale sqrt N and pigeonhole a
// single dyadic level h. Thresholds carry the explicit constants of psi,
// so lambda_* = c delta^{2 eps} lambda / h with c = piece_constant.

struct PipelineCube {
    std::vector<long> index;
    std::size_t plates = 0;       // |P(f_Delta)| at the chosen level
    double psi_f_l2sq = 0.0;      // ||psi_Delta f||_2^2
    double vp2_lhs = 0.0, vp2_rhs = 0.0;  // rhs without the delta^{-C eps} factor
    double fitted_C = 0.0;        // C with lhs = delta^{-C eps} rhs, floored at 0
    std::size_t hits = 0;         // superlevel points retained through this cube
};

struct PipelineOptions {
    int jobs = 1;
    int tiling_radius = 1;
    double eps = -1.0;  // default cfg.eps
};

struct PipelineResult {
    bool empty = true;
    double lambda = 0.0, lambda_star = 0.0, h = 0.0;
    int h_exponent = 0;
    double eps = 0.0;
    double superlevel_measure = 0.0;
    double covered_fraction = 0.0;   // part of {|f| >= lambda} in the cube cover
    double retained_fraction = 0.0;  // part recovered from {|h g_h| >= delta^{2 eps} lambda}
    double lambda_lower = 0.0, lambda_upper = 0.0;  // lambda delta^{(d-1)/4+eps}, delta^{-(d-1)/4}
    double vp2_C = 0.0;
    double vp3_lhs = 0.0, vp3_rhs = 0.0, vp3_C = 0.0;
    double weight_min = 0.0;
    double piece_constant = 0.0;  // c with pieces compared against c delta^{2 eps} lambda
    std::vector<PipelineCube> cubes;

    void write_csv(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot write " + path);
        os.precision(10);
        os << "cube,h,plates,psi_f_l2sq,vp2_lhs,vp2_rhs,fitted_C\n";
        for (const auto& c : cubes) {
            for (std::size_t i = 0; i < c.index.size(); ++i) os << (i ? ":" : "") << c.index[i];
            os << ',' << h << ',' << c.plates << ',' << c.psi_f_l2sq << ',' << c.vp2_lhs << ',' << c.vp2_rhs << ','
               << c.fitted_C << '\n';
        }
    }
};

template <int D>
PipelineResult scale_change_pipeline(const SampledField<D>& f, double lambda, double p, double alpha,
                                     const Config& cfg, PipelineOptions opt = {}) {
    const int d = D - 1;
    const double delta = cfg.delta();
    const double eps = opt.eps > 0.0 ? opt.eps : cfg.eps;
    if (!(lambda >= std::pow(delta, cfg.C9)))
        throw std::invalid_argument("scale_change_pipeline: lambda below delta^C9");
    const auto& g = f.grid;
    const double side = std::sqrt(delta);
    std::array<long, D> cubes_per_axis;
    for (int i = 0; i < D; ++i) {
        double q = g.extent[i] / side;
        cubes_per_axis[i] = std::lround(q);
        if (cubes_per_axis[i] < 1 || std::abs(q - cubes_per_axis[i]) > 1e-9 * q)
            throw std::invalid_argument("scale_change_pipeline: grid extent is not a whole number of sqrt(delta)-cubes");
    }
    double rootN = std::sqrt(cfg.N);
    Config sub = cfg;
    sub.N = rootN;
    sub.validate();

    PipelineResult res;
    res.lambda = lambda;
    res.eps = eps;
    res.lambda_upper = std::pow(delta, -(d - 1) / 4.0);

    std::vector<std::size_t> S;
    for (std::size_t k = 0; k < f.values.size(); ++k)
        if (std::abs(f.values[k]) >= lambda) S.push_back(k);
    res.superlevel_measure = g.cell_volume() * static_cast<double>(S.size());
    if (S.empty()) return res;
    res.empty = false;

    // Per-axis periodised cube bumps, indexed [cube][grid index].
    std::array<std::vector<std::vector<double>>, D> ax;
    for (int i = 0; i < D; ++i)
        for (long m = 0; m < cubes_per_axis[i]; ++m)
            ax[i].push_back(detail::periodic_bump_axis(g.res[i], g.origin[i], g.extent[i],
                                                       g.origin[i] + (m + 0.5) * side, side));
    // Explicit constants: psi_Delta >= psi1(1/2)^D on Delta, and the
    // truncated weight sum_j psi_j^2 is at least w_min.
    const double c_cover = std::pow(psi1(0.5), D);
    const double w_min = truncated_weight_min(opt.tiling_radius, D);
    const double cover_level = c_cover * std::pow(delta, eps) * lambda;
    const double piece_level = c_cover * w_min * std::pow(delta, 2.0 * eps) * lambda;
    res.piece_constant = c_cover * w_min;

    std::size_t ncubes = 1;
    for (int i = 0; i < D; ++i) ncubes *= static_cast<std::size_t>(cubes_per_axis[i]);
    auto cube_index = [&](std::size_t lin) {
        std::array<long, D> m;
        for (int i = D - 1; i >= 0; --i) {
            m[i] = static_cast<long>(lin % static_cast<std::size_t>(cubes_per_axis[i]));
            lin /= static_cast<std::size_t>(cubes_per_axis[i]);
        }
        return m;
    };
    auto bump_at = [&](const std::array<long, D>& m, std::size_t k) {
        auto n = g.unravel(k);
        double v = 1.0;
        for (int i = 0; i < D; ++i) v *= ax[i][static_cast<std::size_t>(m[i])][static_cast<std::size_t>(n[i])];
        return v;
    };

    // Cover: cubes Delta with |psi_Delta f| >= c delta^eps lambda somewhere on S.
    std::vector<char> covered(S.size(), 0);
    std::vector<std::size_t> active;
    for (std::size_t q = 0; q < ncubes; ++q) {
        auto m = cube_index(q);
        bool any = false;
        for (std::size_t s = 0; s < S.size(); ++s) {
            if (bump_at(m, S[s]) * std::abs(f.values[S[s]]) >= cover_level) {
                covered[s] = 1;
                any = true;
            }
        }
        if (any) active.push_back(q);
    }
    std::size_t ncov = 0;
    for (char c : covered) ncov += c;
    res.covered_fraction = static_cast<double>(ncov) / S.size();

    // Caps at scale sqrt N; the floor below which no level can reach
    // delta^{2 eps} lambda, given at most `overlap` caps per frequency.
    CapBank<D> bank = CapBank<D>::caps_for(rootN, cfg.seed);
    GridSpec<D> rescaled = g;
    for (int i = 0; i < D; ++i) rescaled.extent[i] = g.extent[i] / side;
    const CapSplit<D> split = full_cap_split<D>(rescaled, bank);
    struct CubeWork {
        std::map<int, std::size_t, std::greater<int>> plates;
        std::map<int, std::vector<char>, std::greater<int>> hit;  // over S
        double l2sq = 0.0;
        double weight_min = 1.0;
    };
    std::vector<CubeWork> work(active.size());
    auto run = [&](std::size_t a) {
        auto m = cube_index(active[a]);
        CubeRescale<D> Q;
        for (int i = 0; i < D; ++i) Q.center[i] = g.origin[i] + (m[i] + 0.5) * side;
        Q.side = side;
        SampledField<D> T = cube_rescale<D>(f, Q, cfg);
        double l2 = 0.0;
        for (const auto& v : T.values) l2 += std::norm(v);
        work[a].l2sq = l2 * g.cell_volume();  // ||psi_Delta f||_2^2 on the original grid
        auto tiling = sampled_tiling<D>(T, bank, sub, piece_level, S, opt.tiling_radius, &split);
        work[a].plates = tiling.plates_per_level;
        work[a].weight_min = tiling.weight_min;
        for (const auto& [e, vals] : tiling.pieces) {
            std::vector<char> h(S.size(), 0);
            for (std::size_t s = 0; s < S.size(); ++s) h[s] = std::abs(vals[s]) >= piece_level;
            work[a].hit[e] = std::move(h);
        }
    };
    const std::size_t nj = static_cast<std::size_t>(std::max(1, opt.jobs));
    if (nj == 1) {
        for (std::size_t a = 0; a < active.size(); ++a) run(a);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nj; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t a = t; a < active.size(); a += nj) run(a);
            });
        for (auto& th : pool) th.join();
    }

    // Pigeonhole: the level whose pieces retain the most of S; ties go to
    // the larger level.
    std::map<int, std::vector<char>, std::greater<int>> unions;
    for (const auto& w : work)
        for (const auto& [e, h] : w.hit) {
            auto& u = unions[e];
            if (u.empty()) u.assign(S.size(), 0);
            for (std::size_t s = 0; s < S.size(); ++s) u[s] |= h[s];
        }
    std::size_t best = 0;
    int best_e = 0;
    bool found = false;
    for (const auto& [e, u] : unions) {
        std::size_t n = 0;
        for (char c : u) n += c;
        if (!found || n > best) {
            best = n;
            best_e = e;
            found = true;
        }
    }
    if (!found) {
        for (const auto& w : work)
            if (!w.plates.empty()) {
                best_e = found ? std::max(best_e, w.plates.begin()->first) : w.plates.begin()->first;
                found = true;
            }
    }
    res.h_exponent = best_e;
    res.h = std::ldexp(1.0, best_e);
    res.retained_fraction = static_cast<double>(best) / S.size();
    res.lambda_star = piece_level / res.h;
    res.lambda_lower = lambda * std::pow(delta, (d - 1) / 4.0 + eps);

    const double ratio = res.lambda_star / lambda;
    const double logd = std::log(1.0 / delta);
    auto fit = [&](double lhs, double rhs) {
        if (lhs <= 0.0 || rhs <= 0.0 || lhs <= rhs) return 0.0;
        return std::log(lhs / rhs) / (eps * logd);
    };
    res.weight_min = 1.0;
    double l2f = f.l2_norm();
    for (std::size_t a = 0; a < active.size(); ++a) {
        const auto& w = work[a];
        PipelineCube c;
        auto m = cube_index(active[a]);
        c.index.assign(m.begin(), m.end());
        auto it = w.plates.find(best_e);
        c.plates = it == w.plates.end() ? 0 : it->second;
        c.psi_f_l2sq = w.l2sq;
        c.vp2_lhs = static_cast<double>(c.plates);
        c.vp2_rhs = ratio * ratio * std::pow(delta, -(3.0 * d + 3.0) / 4.0) * w.l2sq;
        c.fitted_C = fit(c.vp2_lhs, c.vp2_rhs);
        auto ht = w.hit.find(best_e);
        if (ht != w.hit.end())
            for (char v : ht->second) c.hits += v;
        res.vp2_C = std::max(res.vp2_C, c.fitted_C);
        res.vp3_lhs += c.vp2_lhs;
        res.weight_min = std::min(res.weight_min, w.weight_min);
        res.cubes.push_back(std::move(c));
    }
    res.vp3_rhs = std::pow(ratio, p) * std::pow(delta, -(3.0 * d + 3.0) / 4.0) *
                  std::pow(delta, d / 2.0 - (d - 1) * p / 4.0 - alpha / 2.0) * l2f * l2f;
    res.vp3_C = fit(res.vp3_lhs, res.vp3_rhs);
    return res;
}

}  // namespace platekit
