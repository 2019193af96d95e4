#pragma once

#include <algorithm>
#include <complex>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "bumps.hpp"
#include "geometry.hpp"
#include "rng.hpp"

namespace platekit {

using cplx = std::complex<double>;

// sinc(y)^M with sinc(y) = sin(pi y) / (pi y).
inline double sinc_power(double y, int M) {
    double s;
    if (std::abs(y) < 1e-8)
        s = 1.0 - (M_PI * y) * (M_PI * y) / 6.0;
    else
        s = std::sin(M_PI * y) / (M_PI * y);
    double r = 1.0;
    double b = s;
    int e = M;
    while (e > 0) {
        if (e & 1) r *= b;
        b *= b;
        e >>= 1;
    }
    return r;
}

// Separable packet envelope: per axis g(s) = sinc(kappa s / M)^M in unit
// coordinates s of the plate, whose Fourier transform is a B-spline of
// order M and total width kappa / L along an axis of length L.
struct PacketProfile {
    int M = 8;
    double kappa = 1.5;

    double g(double s) const { return sinc_power(kappa * s / M, M); }

    // |g(s)| <= eps outside |s| <= truncation_radius(eps).
    double truncation_radius(double eps) const {
        return (M / (M_PI * kappa)) * std::pow(eps, -1.0 / M);
    }
};

// Centred cardinal B-spline of order M (M-fold convolution of the unit box).
inline double centred_bspline(double x, int M) {
    double acc = 0.0, binom = 1.0, fact = 1.0;
    for (int k = 1; k < M; ++k) fact *= k;
    for (int k = 0; k <= M; ++k) {
        double y = x + 0.5 * M - k;
        if (y > 0.0) acc += ((k % 2) ? -1.0 : 1.0) * binom * std::pow(y, M - 1);
        binom = binom * (M - k) / (k + 1);
    }
    return std::max(0.0, acc / fact);
}

// Fourier transform of the profile g(s) = sinc(a s)^M, a = kappa / M:
// (1/a) B_M(omega / a), supported in |omega| <= kappa / 2.
inline double profile_spectrum(const PacketProfile& prof, double omega) {
    const double a = prof.kappa / prof.M;
    if (std::abs(omega) >= 0.5 * prof.kappa) return 0.0;
    return centred_bspline(omega / a, prof.M) / a;
}

// Integral over R of |sinc(y)|^q, by midpoint quadrature on [-Y, Y] plus
// the tail beyond Y with |sin|^q replaced by its mean.
inline double sinc_power_integral(double q) {
    const double Y = 64.0;
    const int n = 262144;
    const double h = 2.0 * Y / n;
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        double y = -Y + (i + 0.5) * h;
        double v = (std::abs(y) < 1e-8) ? 1.0 : std::abs(std::sin(M_PI * y) / (M_PI * y));
        s += std::pow(v, q);
    }
    double mean_sin = std::exp(std::lgamma(0.5 * (q + 1)) - std::lgamma(0.5 * q + 1)) / std::sqrt(M_PI);
    double tail = 2.0 * mean_sin * std::pow(M_PI, -q) * std::pow(Y, 1.0 - q) / (q - 1.0);
    return s * h + tail;
}

// Integral over R of |g(s)|^p.
inline double envelope_lp_integral(const PacketProfile& prof, double p) {
    static std::mutex mu;
    static std::map<std::pair<double, double>, double> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(prof.M * p, prof.kappa);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second * prof.M / prof.kappa;
    double J = sinc_power_integral(prof.M * p);
    cache[key] = J;
    return J * prof.M / prof.kappa;
}

// sup over u in R^D of prod_i |g(u_i)| / phi(u), by a symmetric grid
// search (the ratio is invariant under coordinate permutations and
// reflections).
template <int D>
double packet_domination_constant(const PacketProfile& prof) {
    static std::mutex mu;
    static std::map<std::pair<int, double>, double> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(prof.M, prof.kappa);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const double span = (D <= 3) ? 24.0 : 16.0;
    const double h = (D <= 3) ? 0.05 : 0.1;
    const int n = static_cast<int>(span / h) + 1;
    std::vector<double> G(n), S(n);
    for (int k = 0; k < n; ++k) {
        double s = k * h;
        G[k] = std::abs(prof.g(s));
        S[k] = s * s;
    }
    double best = 0.0;
    std::array<int, D> idx{};
    // Enumerate non-increasing index tuples.
    std::function<void(int, int, double, double)> rec = [&](int level, int maxk, double prod, double sq) {
        if (level == D) {
            double r = prod * std::pow(1.0 + sq, 0.5 * prof.M);
            best = std::max(best, r);
            return;
        }
        for (int k = 0; k <= maxk; ++k) {
            idx[level] = k;
            rec(level + 1, k, prod * G[k], sq + S[k]);
        }
    };
    rec(0, n - 1, 1.0, 0.0);
    cache[key] = best;
    return best;
}

template <int D>
struct WavePacket {
    Plate<D> plate;
    cplx coef{1.0, 0.0};
    PacketProfile profile;

    double N() const { return 1.0 / plate.scale; }

    // Modulation frequency: the centre of the dual plate.
    Vec<D> frequency() const { return N() * plate.axes[D - 1]; }

    double envelope(const Vec<D>& u) const {
        double v = 1.0;
        for (int i = 0; i < D; ++i) v *= profile.g(u[i]);
        return v;
    }

    // f(x) = coef * prod_i g(u_i) * exp(2 pi i xi . (x - c)); with xi = N a_thin
    // the phase is 2 pi C0 u_thin (thin length C0 delta).
    cplx eval_local(const Vec<D>& u) const {
        double env = envelope(u);
        double ph = 2.0 * M_PI * plate.lengths[D - 1] * N() * u[D - 1];
        return coef * env * cplx(std::cos(ph), std::sin(ph));
    }

    cplx operator()(const Vec<D>& x) const { return eval_local(unit_coords<D>(plate, x)); }

    // Frequency box of the packet: centre frequency(), frame of the plate,
    // full widths kappa / L_i.
    Vec<D> frequency_widths() const {
        Vec<D> w;
        for (int i = 0; i < D; ++i) w[i] = profile.kappa / plate.lengths[i];
        return w;
    }

    double lp_norm_p(double p) const {
        double I = envelope_lp_integral(profile, p);
        double v = std::pow(std::abs(coef), p);
        for (int i = 0; i < D; ++i) v *= plate.lengths[i] * I;
        return v;
    }
};

template <int D>
WavePacket<D> make_packet(const Plate<D>& plate, cplx coef, const Config& cfg,
                          const PacketProfile& prof = PacketProfile{}) {
    if (plate.kind != BoxKind::plate) throw std::invalid_argument("make_packet: wave packets live on plates");
    if (std::abs(coef) > 1.0 + 1e-12) throw std::invalid_argument("make_packet: |coefficient| must not exceed 1");
    WavePacket<D> w;
    w.plate = plate;
    w.coef = coef;
    w.profile = prof;
    w.profile.M = cfg.M;
    // Full frequency widths kappa/(C0 (1, sqrt(delta), delta)) against the
    // dual plate C1 (1, sqrt(N), N): the box fits iff kappa / C0 <= C1.
    double required = w.profile.kappa / cfg.C0;
    if (required > cfg.C1 * (1.0 + 1e-12))
        throw std::invalid_argument("make_packet: frequency box exceeds the dual plate; required C1 >= " +
                                    std::to_string(required));
    return w;
}

template <int D>
struct NFunction {
    std::vector<WavePacket<D>> packets;

    std::size_t size() const { return packets.size(); }

    std::vector<Plate<D>> plates() const {
        std::vector<Plate<D>> out;
        out.reserve(packets.size());
        for (const auto& w : packets) out.push_back(w.plate);
        return out;
    }

    double delta() const { return packets.empty() ? 0.0 : packets.front().plate.scale; }
};

template <int D>
NFunction<D> make_nfunction(const std::vector<Plate<D>>& P, const std::vector<cplx>& coefs, const Config& cfg,
                            bool check_separated = true) {
    if (P.size() != coefs.size()) throw std::invalid_argument("make_nfunction: one coefficient per plate");
    if (check_separated && !is_separated<D>(P, cfg.Csep, cfg.Ccomp))
        throw std::invalid_argument("make_nfunction: plate family is not separated");
    NFunction<D> f;
    for (std::size_t i = 0; i < P.size(); ++i) f.packets.push_back(make_packet<D>(P[i], coefs[i], cfg));
    return f;
}

// Packets with phi_pi(x) below this are skipped; each skipped packet
// contributes at most packet_domination_constant * threshold.
constexpr double kPacketCutoff = 1e-14;

template <int D>
struct EvalStats {
    std::size_t skipped = 0;
    double truncation_bound = 0.0;
};

// f_{subset}(x); an empty index list means the whole family.
template <int D>
cplx evaluate(const NFunction<D>& f, const Vec<D>& x, const std::vector<int>* subset = nullptr,
              EvalStats<D>* stats = nullptr) {
    cplx s = 0.0;
    auto one = [&](const WavePacket<D>& w) {
        Vec<D> u = unit_coords<D>(w.plate, x);
        double ph = phi<D>(u, w.profile.M);
        if (ph < kPacketCutoff) {
            if (stats) {
                ++stats->skipped;
                stats->truncation_bound += packet_domination_constant<D>(w.profile) * ph;
            }
            return;
        }
        s += w.eval_local(u);
    };
    if (subset) {
        for (int i : *subset) one(f.packets[i]);
    } else {
        for (const auto& w : f.packets) one(w);
    }
    return s;
}

template <int D>
std::vector<cplx> evaluate(const NFunction<D>& f, const std::vector<Vec<D>>& pts,
                           const std::vector<int>* subset = nullptr) {
    std::vector<cplx> out(pts.size());
    for (std::size_t k = 0; k < pts.size(); ++k) out[k] = evaluate<D>(f, pts[k], subset);
    return out;
}

// Sum of |f_pi(x)| over the family: an oscillation-free majorant of |f|.
template <int D>
double envelope_sum(const NFunction<D>& f, const Vec<D>& x) {
    double s = 0.0;
    for (const auto& w : f.packets) s += std::abs(w.coef) * std::abs(w.envelope(unit_coords<D>(w.plate, x)));
    return s;
}

template <int D>
struct Subfunction {
    const NFunction<D>* parent = nullptr;
    std::vector<int> members;

    cplx operator()(const Vec<D>& x) const { return evaluate<D>(*parent, x, &members); }
};

// ---------------------------------------------------------------------
// Family generators.

enum class FamilyMode { focusing, tiling, uniform };

inline FamilyMode parse_mode(const std::string& s) {
    if (s == "focusing") return FamilyMode::focusing;
    if (s == "tiling") return FamilyMode::tiling;
    if (s == "uniform") return FamilyMode::uniform;
    throw std::invalid_argument("unknown family mode: " + s);
}

// Adds plates one at a time while keeping the family separated.
template <int D>
class SeparatedBuilder {
public:
    SeparatedBuilder(const Config& cfg) : cfg_(cfg) {}

    bool try_add(const Plate<D>& p) {
        std::vector<int> hits;
        for (std::size_t i = 0; i < plates_.size(); ++i) {
            if (comparable<D>(p, plates_[i], cfg_.Ccomp)) {
                hits.push_back(static_cast<int>(i));
                if (static_cast<int>(hits.size()) > cfg_.Csep) return false;
            }
        }
        for (int i : hits)
            if (counts_[i] + 1 > cfg_.Csep) return false;
        for (int i : hits) ++counts_[i];
        counts_.push_back(static_cast<int>(hits.size()));
        plates_.push_back(p);
        return true;
    }

    const std::vector<Plate<D>>& plates() const { return plates_; }

private:
    Config cfg_;
    std::vector<Plate<D>> plates_;
    std::vector<int> counts_;
};

// Directions spaced by sep_factor * sqrt(delta), all plates centred at x0.
template <int D>
std::vector<Plate<D>> focusing_family(const Config& cfg, const Vec<D>& x0, double sep_factor = 1.5) {
    auto net = direction_net<D - 1>(std::min(0.99, sep_factor * std::sqrt(cfg.delta())), cfg.seed);
    std::vector<Plate<D>> P;
    for (const auto& e : net.directions) P.push_back(make_plate<D>(x0, e, cfg));
    return P;
}

struct GeneratorError : std::runtime_error {
    std::size_t achieved;
    GeneratorError(const std::string& m, std::size_t a) : std::runtime_error(m), achieved(a) {}
};

template <int D>
NFunction<D> random_nfunction(std::size_t count, FamilyMode mode, const Config& cfg) {
    Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(mode) + 17);
    SeparatedBuilder<D> builder(cfg);
    const double dl = cfg.delta();
    const Vec<D> mid = filled<D>(0.5);
    std::vector<cplx> coefs;
    auto phase = [&]() {
        double a = 2.0 * M_PI * rng.uniform();
        return cplx(std::cos(a), std::sin(a));
    };
    std::size_t attempts = 0;
    const std::size_t max_attempts = 100 * std::max<std::size_t>(count, 1);
    if (mode == FamilyMode::focusing) {
        auto P = focusing_family<D>(cfg, mid);
        // Evenly spread subset of the directions when fewer are requested.
        std::size_t n = P.size();
        std::size_t take = std::min(count, n);
        std::size_t offset = n ? rng.index(n) : 0;
        for (std::size_t k = 0; k < take; ++k) {
            std::size_t i = (offset + (k * n) / take) % n;
            if (builder.try_add(P[i])) coefs.push_back(1.0);
        }
        auto net = direction_net<D - 1>(std::sqrt(dl), cfg.seed);
        while (builder.plates().size() < count && attempts < max_attempts) {
            ++attempts;
            const auto& e = net.directions[rng.index(net.directions.size())];
            Plate<D> p = make_plate<D>(mid, e, cfg);
            Vec<D> u;
            for (int i = 0; i < D; ++i) u[i] = (rng.uniform() - 0.5) * 0.9 * p.lengths[i];
            p.center = mid - from_frame<D>(p.axes, u);
            if (builder.try_add(p)) coefs.push_back(1.0);
        }
    } else if (mode == FamilyMode::tiling) {
        auto net = direction_net<D - 1>(std::min(0.99, 2.0 * std::sqrt(dl)), cfg.seed);
        while (builder.plates().size() < count && attempts < max_attempts) {
            const auto& e = net.directions[rng.index(net.directions.size())];
            Plate<D> base = make_plate<D>(mid, e, cfg);
            // Lattice of translates with steps equal to the side lengths.
            std::vector<std::array<long, D>> sites;
            std::array<long, D> ext;
            for (int i = 0; i < D; ++i) ext[i] = static_cast<long>(std::floor(0.5 / base.lengths[i]));
            std::size_t per_class = std::min<std::size_t>(count - builder.plates().size(), 64);
            for (std::size_t k = 0; k < per_class && attempts < max_attempts; ++k) {
                ++attempts;
                Vec<D> u;
                for (int i = 0; i < D; ++i) {
                    long m = static_cast<long>(rng.index(2 * ext[i] + 1)) - ext[i];
                    u[i] = m * base.lengths[i];
                }
                Plate<D> p = base;
                p.center = mid + from_frame<D>(base.axes, u);
                bool inside = true;
                for (int i = 0; i < D; ++i) inside = inside && p.center[i] >= 0.0 && p.center[i] <= 1.0;
                if (!inside) continue;
                if (builder.try_add(p)) coefs.push_back(phase());
            }
        }
    } else {
        auto net = direction_net<D - 1>(std::min(0.99, std::sqrt(dl)), cfg.seed);
        while (builder.plates().size() < count && attempts < max_attempts) {
            ++attempts;
            Vec<D> c;
            for (int i = 0; i < D; ++i) c[i] = rng.uniform();
            const auto& e = net.directions[rng.index(net.directions.size())];
            if (builder.try_add(make_plate<D>(c, e, cfg))) coefs.push_back(phase());
        }
    }
    if (builder.plates().size() < count)
        throw GeneratorError("random_nfunction: reached only " + std::to_string(builder.plates().size()) + " of " +
                                 std::to_string(count) + " plates",
                             builder.plates().size());
    return make_nfunction<D>(builder.plates(), coefs, cfg, false);
}

// ---------------------------------------------------------------------
// Norms of N-functions.

// Packets bucketed by frequency cap: caps from a net of separation
// N^{-1/2} on the sphere of spatial frequency directions; the packet of
// a plate with direction e has frequency direction -e.
template <int D>
std::vector<std::vector<int>> bucket_by_cap(const NFunction<D>& f, const std::vector<Vec<D - 1>>& caps) {
    std::vector<std::vector<int>> out(caps.size());
    for (std::size_t k = 0; k < f.packets.size(); ++k) {
        Vec<D - 1> e = f.packets[k].plate.direction();
        int c = nearest_direction<D - 1>(caps, (-1.0) * e);
        out[c].push_back(static_cast<int>(k));
    }
    return out;
}

// Groups of packets whose dilated boxes overlap; packets in different
// groups interact only through envelope tails.
template <int D>
std::vector<std::vector<int>> overlap_clusters(const NFunction<D>& f, const std::vector<int>& members,
                                               double reach) {
    std::vector<int> parent(members.size());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); };
    for (std::size_t a = 0; a < members.size(); ++a)
        for (std::size_t b = a + 1; b < members.size(); ++b) {
            const auto& pa = f.packets[members[a]].plate;
            const auto& pb = f.packets[members[b]].plate;
            if (norm<D>(pa.center - pb.center) > reach * (pa.half_diameter() + pb.half_diameter())) continue;
            // Separating-axis test on the dilated boxes using both frames.
            bool apart = false;
            for (int side = 0; side < 2 && !apart; ++side) {
                const auto& ref = side == 0 ? pa : pb;
                for (int m = 0; m < D && !apart; ++m) {
                    double ca = dot<D>(ref.axes[m], pa.center), cb = dot<D>(ref.axes[m], pb.center);
                    double ra = 0.0, rb = 0.0;
                    for (int i = 0; i < D; ++i) {
                        ra += 0.5 * reach * pa.lengths[i] * std::abs(dot<D>(ref.axes[m], pa.axes[i]));
                        rb += 0.5 * reach * pb.lengths[i] * std::abs(dot<D>(ref.axes[m], pb.axes[i]));
                    }
                    if (std::abs(ca - cb) > ra + rb) apart = true;
                }
            }
            if (!apart) parent[find(static_cast<int>(a))] = find(static_cast<int>(b));
        }
    std::map<int, std::vector<int>> groups;
    for (std::size_t a = 0; a < members.size(); ++a) groups[find(static_cast<int>(a))].push_back(members[a]);
    std::vector<std::vector<int>> out;
    for (auto& kv : groups) out.push_back(kv.second);
    return out;
}

// Midpoint quadrature of |f_S|^p over the bounding box, in the frame of
// the first member, of the members' boxes dilated by `reach`. Steps
// L_i / (p kappa + 1) integrate the band-limited |f|^p exactly (even p)
// up to the truncation of the envelopes.
template <int D>
double cluster_lp_p(const NFunction<D>& f, const std::vector<int>& S, double p, double reach,
                    std::size_t max_points = 40000000) {
    const auto& ref = f.packets[S.front()].plate;
    Vec<D> lo = filled<D>(std::numeric_limits<double>::infinity());
    Vec<D> hi = filled<D>(-std::numeric_limits<double>::infinity());
    for (int i : S) {
        for (const auto& v : vertices<D>(f.packets[i].plate.dilated(reach))) {
            Vec<D> u = to_frame<D>(ref.axes, v - ref.center);
            for (int k = 0; k < D; ++k) {
                lo[k] = std::min(lo[k], u[k]);
                hi[k] = std::max(hi[k], u[k]);
            }
        }
    }
    const double kappa = f.packets[S.front()].profile.kappa;
    std::array<long, D> n;
    Vec<D> h;
    double total = 1.0;
    for (int k = 0; k < D; ++k) {
        double step = ref.lengths[k] / (p * kappa + 1.0);
        n[k] = std::max<long>(1, static_cast<long>(std::ceil((hi[k] - lo[k]) / step)));
        h[k] = (hi[k] - lo[k]) / n[k];
        total *= static_cast<double>(n[k]);
    }
    if (total > static_cast<double>(max_points))
        throw std::runtime_error("cluster_lp_p: quadrature grid too large (" + std::to_string(total) + " points)");
    double cell = 1.0;
    for (int k = 0; k < D; ++k) cell *= h[k];
    double acc = 0.0;
    std::array<long, D> idx{};
    while (true) {
        Vec<D> u;
        for (int k = 0; k < D; ++k) u[k] = lo[k] + (idx[k] + 0.5) * h[k];
        Vec<D> x = ref.center + from_frame<D>(ref.axes, u);
        cplx v = evaluate<D>(f, x, &S);
        acc += std::pow(std::abs(v), p);
        int pos = 0;
        while (pos < D && ++idx[pos] == n[pos]) idx[pos++] = 0;
        if (pos == D) break;
    }
    return acc * cell;
}

template <int D>
double cluster_sup(const NFunction<D>& f, const std::vector<int>& S) {
    // The envelope maximum of each packet sits at its centre; evaluate
    // there and refine around the best candidates.
    std::vector<std::pair<double, Vec<D>>> cand;
    for (int i : S) {
        Vec<D> c = f.packets[i].plate.center;
        cand.push_back({std::abs(evaluate<D>(f, c, &S)), c});
    }
    std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    double best = cand.empty() ? 0.0 : cand.front().first;
    const std::size_t keep = std::min<std::size_t>(cand.size(), 100);
    for (std::size_t c = 0; c < keep; ++c) {
        Vec<D> x = cand[c].second;
        double v = cand[c].first;
        const auto& pl = f.packets[S.front()].plate;
        for (double scale = 0.5; scale > 1e-3; scale *= 0.5) {
            bool improved = true;
            while (improved) {
                improved = false;
                for (int a = 0; a < D; ++a)
                    for (int sgn = -1; sgn <= 1; sgn += 2) {
                        Vec<D> y = x + (sgn * scale * pl.lengths[a]) * pl.axes[a];
                        double w = std::abs(evaluate<D>(f, y, &S));
                        if (w > v) {
                            v = w;
                            x = y;
                            improved = true;
                        }
                    }
            }
        }
        best = std::max(best, v);
    }
    return best;
}

template <int D>
struct MicNormReport {
    double value = 0.0;
    std::size_t caps_used = 0;
    std::size_t clusters = 0;
    std::size_t quadrature_clusters = 0;
};

// ||f||_{p,mic} for an N-function by bucketing packets into caps. Within
// a cap, packets whose envelopes do not overlap are treated separately;
// single packets use the closed form of the separable envelope.
template <int D>
MicNormReport<D> mic_norm_nfunction(const NFunction<D>& f, double p, double reach = 8.0) {
    if (p < 2.0) throw std::invalid_argument("mic_norm_nfunction: p must be at least 2");
    MicNormReport<D> rep;
    if (f.packets.empty()) return rep;
    double N = f.packets.front().N();
    auto caps = direction_net<D - 1>(std::min(0.99, 1.0 / std::sqrt(N))).directions;
    auto buckets = bucket_by_cap<D>(f, caps);
    const bool inf = std::isinf(p);
    double acc = 0.0;
    for (const auto& b : buckets) {
        if (b.empty()) continue;
        ++rep.caps_used;
        auto clusters = overlap_clusters<D>(f, b, reach);
        rep.clusters += clusters.size();
        if (inf) {
            double m = 0.0;
            for (const auto& c : clusters) {
                if (c.size() == 1)
                    m = std::max(m, std::abs(f.packets[c[0]].coef));
                else
                    m = std::max(m, cluster_sup<D>(f, c));
            }
            acc = std::max(acc, m);
        } else {
            for (const auto& c : clusters) {
                if (c.size() == 1) {
                    acc += f.packets[c[0]].lp_norm_p(p);
                } else {
                    ++rep.quadrature_clusters;
                    acc += cluster_lp_p<D>(f, c, p, reach);
                }
            }
        }
    }
    rep.value = inf ? acc : std::pow(acc, 1.0 / p);
    return rep;
}

// ---------------------------------------------------------------------
// Monte Carlo L^p norms with importance sampling from the packet
// envelopes (plus optional uniform boxes around known concentration
// points).

class EnvelopeSampler {
public:
    EnvelopeSampler(const PacketProfile& prof, double radius, int cells = 8192) : R_(radius), n_(cells) {
        h_ = 2.0 * R_ / n_;
        dens_.resize(n_);
        cdf_.resize(n_ + 1);
        cdf_[0] = 0.0;
        for (int i = 0; i < n_; ++i) {
            double s = -R_ + (i + 0.5) * h_;
            double g = prof.g(s);
            dens_[i] = g * g;
            cdf_[i + 1] = cdf_[i] + dens_[i] * h_;
        }
        double Z = cdf_[n_];
        for (auto& d : dens_) d /= Z;
        for (auto& c : cdf_) c /= Z;
    }

    double sample(Rng& rng) const {
        double u = rng.uniform();
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        int i = std::clamp(static_cast<int>(it - cdf_.begin()) - 1, 0, n_ - 1);
        double w = cdf_[i + 1] - cdf_[i];
        double frac = w > 0 ? (u - cdf_[i]) / w : 0.5;
        return -R_ + (i + std::clamp(frac, 0.0, 1.0)) * h_;
    }

    // Exact density of sample().
    double density(double s) const {
        if (s < -R_ || s >= R_) return 0.0;
        int i = std::clamp(static_cast<int>((s + R_) / h_), 0, n_ - 1);
        return dens_[i];
    }

private:
    double R_, h_;
    int n_;
    std::vector<double> dens_, cdf_;
};

struct MonteCarloEstimate {
    double value = 0.0;      // estimate of the integral of |f|^p
    double std_error = 0.0;  // standard error of the estimate
    std::size_t samples = 0;
};

template <int D>
MonteCarloEstimate lp_power_monte_carlo(const NFunction<D>& f, double p, std::size_t samples, std::uint64_t seed,
                                        const std::vector<Plate<D>>& hot_boxes = {}, double hot_weight = 0.5,
                                        double radius = 10.0) {
    MonteCarloEstimate est;
    est.samples = samples;
    if (f.packets.empty() || samples == 0) return est;
    EnvelopeSampler sampler(f.packets.front().profile, radius);
    std::vector<double> w(f.packets.size());
    for (std::size_t k = 0; k < f.packets.size(); ++k) w[k] = std::norm(f.packets[k].coef) * f.packets[k].plate.volume();
    double W = std::accumulate(w.begin(), w.end(), 0.0);
    if (W == 0.0) return est;
    std::vector<double> cum(w.size() + 1, 0.0);
    for (std::size_t k = 0; k < w.size(); ++k) cum[k + 1] = cum[k] + w[k] / W;
    const double hw = hot_boxes.empty() ? 0.0 : hot_weight;
    auto density = [&](const Vec<D>& x) {
        double q = 0.0;
        for (std::size_t k = 0; k < f.packets.size(); ++k) {
            if (w[k] == 0.0) continue;
            const auto& pl = f.packets[k].plate;
            Vec<D> u = unit_coords<D>(pl, x);
            double v = w[k] / W;
            for (int i = 0; i < D && v > 0.0; ++i) v *= sampler.density(u[i]) / pl.lengths[i];
            q += v;
        }
        q *= (1.0 - hw);
        for (const auto& b : hot_boxes)
            if (contains<D>(b, x)) q += hw / hot_boxes.size() / b.volume();
        return q;
    };
    Rng rng(seed);
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        Vec<D> x;
        if (hw > 0.0 && rng.uniform() < hw) {
            const auto& b = hot_boxes[rng.index(hot_boxes.size())];
            Vec<D> u;
            for (int i = 0; i < D; ++i) u[i] = (rng.uniform() - 0.5) * b.lengths[i];
            x = b.global(u);
        } else {
            double r = rng.uniform();
            std::size_t k = std::upper_bound(cum.begin(), cum.end(), r) - cum.begin() - 1;
            k = std::min(k, f.packets.size() - 1);
            const auto& pl = f.packets[k].plate;
            Vec<D> u;
            for (int i = 0; i < D; ++i) u[i] = sampler.sample(rng) * pl.lengths[i];
            x = pl.center + from_frame<D>(pl.axes, u);
        }
        double q = density(x);
        double val = q > 0.0 ? std::pow(std::abs(evaluate<D>(f, x)), p) / q : 0.0;
        sum += val;
        sum2 += val * val;
    }
    double n = static_cast<double>(samples);
    est.value = sum / n;
    est.std_error = std::sqrt(std::max(0.0, sum2 / n - est.value * est.value) / n);
    return est;
}

}  // namespace platekit
