#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bumps.hpp"
#include "config.hpp"
#include "geometry.hpp"
#include "incidence.hpp"
#include "packets.hpp"
#include "rng.hpp"

namespace platekit {

// ---------------------------------------------------------------------
// Superlevel sets of N-functions on a lattice.

template <int D>
struct Superlevel {
    PointSet<D> W;               // lattice points with |f| >= lambda
    std::vector<cplx> values;    // f at those points
    double outside_bound = 0.0;  // bound on |f| outside the sampled box
    std::size_t evaluated = 0;   // lattice points where f was evaluated
};

namespace detail {

// |g(s)| <= min(1, (M / (pi kappa |s|))^M) for g = sinc(kappa s / M)^M.
inline double envelope_majorant(const PacketProfile& prof, double s) {
    double a = std::abs(s);
    if (a <= 0.0) return 1.0;
    double q = prof.M / (M_PI * prof.kappa * a);
    return q >= 1.0 ? 1.0 : std::pow(q, prof.M);
}

// Majorant of |f_pi| over the axis-aligned box centre b, half-widths w.
template <int D>
double packet_majorant(const WavePacket<D>& wp, const Vec<D>& b, const Vec<D>& w) {
    const auto& p = wp.plate;
    double m = std::abs(wp.coef);
    Vec<D> off = b - p.center;
    for (int a = 0; a < D && m > 0.0; ++a) {
        double reach = 0.0;
        for (int k = 0; k < D; ++k) reach += std::abs(p.axes[a][k]) * w[k];
        double gap = std::max(0.0, std::abs(dot<D>(p.axes[a], off)) - reach) / p.lengths[a];
        m *= envelope_majorant(wp.profile, gap);
    }
    return m;
}

}  // namespace detail

// {|f| >= lambda} on the lattice (Z + 1/2) h, found by splitting boxes and
// discarding those where the sum of packet majorants stays below lambda.
// The sampled box is the bounding box of the 8-fold plate dilates; outside
// it every packet is below its majorant at |s| = 4.
template <int D>
Superlevel<D> superlevel_set(const NFunction<D>& f, double lambda, double h, int jobs = 1) {
    Superlevel<D> out;
    out.W.cell_side = h;
    if (f.packets.empty() || !(lambda > 0.0)) {
        if (!(lambda > 0.0)) throw std::invalid_argument("superlevel_set: lambda must be positive");
        return out;
    }
    Vec<D> lo = filled<D>(INFINITY), hi = filled<D>(-INFINITY);
    for (const auto& w : f.packets) {
        for (const auto& v : vertices<D>(w.plate.dilated(8.0)))
            for (int i = 0; i < D; ++i) {
                lo[i] = std::min(lo[i], v[i]);
                hi[i] = std::max(hi[i], v[i]);
            }
        out.outside_bound += std::abs(w.coef) * detail::envelope_majorant(w.profile, 4.0);
    }
    if (out.outside_bound >= lambda)
        throw std::invalid_argument("superlevel_set: lambda is below the bound outside the sampling box");
    std::array<long, D> i0, n;
    for (int i = 0; i < D; ++i) {
        i0[i] = static_cast<long>(std::floor(lo[i] / h));
        n[i] = static_cast<long>(std::ceil(hi[i] / h)) - i0[i];
    }
    struct Block {
        std::array<long, D> a, b;  // half-open index ranges
        std::vector<int> plates;
    };
    std::vector<Block> leaves;
    std::vector<Block> stack;
    Block root;
    root.a = i0;
    for (int i = 0; i < D; ++i) root.b[i] = i0[i] + n[i];
    root.plates.resize(f.packets.size());
    for (std::size_t k = 0; k < f.packets.size(); ++k) root.plates[k] = static_cast<int>(k);
    stack.push_back(std::move(root));
    while (!stack.empty()) {
        Block bl = std::move(stack.back());
        stack.pop_back();
        Vec<D> c, w;
        long count = 1, widest = 0;
        int axis = 0;
        for (int i = 0; i < D; ++i) {
            c[i] = 0.5 * (bl.a[i] + bl.b[i]) * h;
            w[i] = 0.5 * (bl.b[i] - bl.a[i] - 1) * h;
            long len = bl.b[i] - bl.a[i];
            count *= len;
            if (len > widest) {
                widest = len;
                axis = i;
            }
        }
        double total = 0.0;
        std::vector<int> keep;
        for (int k : bl.plates) {
            double m = detail::packet_majorant<D>(f.packets[k], c, w);
            if (m > 1e-16) {
                keep.push_back(k);
                total += m;
            }
        }
        if (total < lambda) continue;
        bl.plates = std::move(keep);
        if (count <= 64) {
            leaves.push_back(std::move(bl));
            continue;
        }
        long mid = (bl.a[axis] + bl.b[axis]) / 2;
        Block left = bl, right = std::move(bl);
        left.b[axis] = mid;
        right.a[axis] = mid;
        stack.push_back(std::move(right));
        stack.push_back(std::move(left));
    }
    std::vector<std::vector<std::pair<Vec<D>, cplx>>> found(leaves.size());
    std::vector<std::size_t> evals(leaves.size(), 0);
    detail::parallel_for(leaves.size(), jobs, [&](std::size_t L) {
        const auto& bl = leaves[L];
        std::array<long, D> idx = bl.a;
        while (true) {
            Vec<D> x;
            for (int i = 0; i < D; ++i) x[i] = (static_cast<double>(idx[i]) + 0.5) * h;
            cplx s = 0.0;
            for (int k : bl.plates) s += f.packets[k](x);
            ++evals[L];
            if (std::abs(s) >= lambda) found[L].emplace_back(x, s);
            int i = D - 1;
            while (i >= 0 && ++idx[i] == bl.b[i]) {
                idx[i] = bl.a[i];
                --i;
            }
            if (i < 0) break;
        }
    });
    std::vector<std::pair<Vec<D>, cplx>> all;
    for (std::size_t L = 0; L < leaves.size(); ++L) {
        all.insert(all.end(), found[L].begin(), found[L].end());
        out.evaluated += evals[L];
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [x, v] : all) {
        out.W.points.push_back(x);
        out.values.push_back(v);
    }
    return out;
}

// ---------------------------------------------------------------------
// Localization.

enum class LocalizationKind { localized, flat };

inline const char* localization_kind_name(LocalizationKind k) {
    return k == LocalizationKind::localized ? "localized" : "flat";
}

struct LocalizationOptions {
    int jobs = 1;
    double budget_C = 100.0;       // "logarithmic fraction" means >= 1 / (C log(1/delta)^kappa)
    double budget_kappa = 3.0;
    bool enforce_hypothesis = true;
    std::size_t mc_samples = 20000;
    std::size_t max_table_cubes = 64;
};

// One row of the energy table of a flat result.
struct CubeEnergy {
    std::array<long, 4> cube{};   // first D entries used
    long w_points = 0;            // superlevel points in the cube
    double energy = 0.0;          // ||psi_Delta f*||_2^2
    double energy_error = 0.0;    // Monte Carlo standard error
    double plate_mass = 0.0;      // integral of Phi_{P_r} phi_Delta
    double tube_mass = 0.0;       // integral of Phi_T phi_Delta
    double bound = 0.0;           // t^{5d} delta^{3(d+1)/4} lambda^2
};

template <int D>
struct LocalizationResult {
    LocalizationKind kind = LocalizationKind::localized;
    double lambda = 0.0, t = 0.0, delta = 0.0;
    std::size_t plates = 0;
    PointSet<D> W;                                   // superlevel set {|f| >= lambda}
    std::vector<int> considered;                     // indices into W used by the construction
    std::vector<char> retained;                      // W*: per considered point
    std::vector<CubeIndex<D>> point_cube;            // Q(x) per considered point
    IncidenceRelation<D> relation;                   // over plates (lifted from tubes in case 1 of the dichotomy)
    std::map<CubeIndex<D>, std::vector<int>> subfunctions;  // Q -> plates of f^Q
    std::size_t subfunction_plates = 0;              // sum over Q of |P(f^Q)|
    std::size_t propR_budget = 0;                    // 3^{d+1} (K + 1)
    int K = 0;
    bool scale_condition_met = false;
    double surviving_level = 0.0;
    double coverage = 0.0;          // fraction of W with |f^{Q(x)}(x)| >= surviving level
    double retained_fraction = 0.0; // |W*| / |W|
    double bad_integral = 0.0;      // integral of Phi^b over the considered set
    double domination_constant = 0.0;
    double worst_remainder = 0.0;   // max over considered x of |f - f^Q| / (C Phi^b), 0 when none
    double log_budget = 0.0;        // 1 / (C log(1/delta)^kappa)
    // Dichotomy.
    long r = 0;
    std::size_t k = 0;
    double case_threshold = 0.0;    // t^{-4d} (k / r)^{1/2}
    double type_fraction = 0.0;     // |W_r| / |W|
    std::map<long, std::size_t> type_counts;  // r -> |W_r|
    std::vector<int> flat_members;  // P_r
    std::vector<CubeEnergy> table;
    bool table_truncated = false;

    std::string summary() const {
        std::ostringstream os;
        os << std::setprecision(17);
        os << "kind = " << localization_kind_name(kind) << "\nlambda = " << lambda << "\nt = " << t
           << "\ndelta = " << delta << "\nplates = " << plates << "\nW = " << W.size()
           << "\nconsidered = " << considered.size() << "\ncoverage = " << coverage
           << "\nretained_fraction = " << retained_fraction << "\nsurviving_level = " << surviving_level
           << "\nsubfunction_plates = " << subfunction_plates << "\npropR_budget = " << propR_budget
           << "\nK = " << K << "\nscale_condition_met = " << scale_condition_met
           << "\nbad_integral = " << bad_integral << "\nlog_budget = " << log_budget << "\nr = " << r
           << "\ncase_threshold = " << case_threshold << "\ntype_fraction = " << type_fraction << '\n';
        return os.str();
    }

    void write(const std::string& stem) const {
        {
            std::ofstream os(stem + ".relation.csv");
            if (!os) throw std::runtime_error("cannot write " + stem + ".relation.csv");
            os << "plate,cube\n";
            for (std::size_t i = 0; i < relation.related.size(); ++i)
                for (const auto& Q : relation.related[i]) os << i << ',' << cube_name(Q) << '\n';
        }
        {
            std::ofstream os(stem + ".subfunctions.txt");
            if (!os) throw std::runtime_error("cannot write " + stem + ".subfunctions.txt");
            for (const auto& [Q, m] : subfunctions) {
                os << cube_name(Q);
                for (int i : m) os << ' ' << i;
                os << '\n';
            }
            if (kind == LocalizationKind::flat) {
                os << "flat";
                for (int i : flat_members) os << ' ' << i;
                os << '\n';
            }
        }
        {
            std::ofstream os(stem + ".summary.txt");
            if (!os) throw std::runtime_error("cannot write " + stem + ".summary.txt");
            os << summary();
        }
    }

    static std::string cube_name(const CubeIndex<D>& Q) {
        std::string s;
        for (int i = 0; i < D; ++i) s += (i ? ":" : "") + std::to_string(Q[i]);
        return s;
    }
};

namespace detail {

inline double log_budget(double delta, const LocalizationOptions& o) {
    return 1.0 / (o.budget_C * std::pow(std::log(1.0 / delta), o.budget_kappa));
}

// Fills relation-derived fields, coverage and the remainder check.
// `values` holds f_S(x) for the function being localized on each point,
// `members` the plate indices S, `rel` relates every plate of f.
template <int D>
void finish_localized(LocalizationResult<D>& res, const NFunction<D>& f, const std::vector<int>& members,
                      const std::vector<cplx>& values, const std::vector<double>& bad_phi, double level, int jobs) {
    const auto& rel = res.relation;
    for (int i : members)
        for (const auto& Q : rel.related[i]) res.subfunctions[Q].push_back(i);
    for (auto& [Q, v] : res.subfunctions) std::sort(v.begin(), v.end());
    res.subfunction_plates = 0;
    for (const auto& [Q, v] : res.subfunctions) res.subfunction_plates += v.size();
    const std::size_t n = res.considered.size();
    res.point_cube.resize(n);
    res.retained.assign(n, 0);
    std::vector<char> covered(n, 0);
    std::vector<double> worst(n, 0.0);
    const double C = res.domination_constant;
    parallel_for(n, jobs, [&](std::size_t j) {
        const auto& x = res.W.points[res.considered[j]];
        CubeIndex<D> Q = rel.grid.index_of(x);
        res.point_cube[j] = Q;
        cplx fq = 0.0;
        for (int i : members)
            if (rel.relates(i, Q)) fq += f.packets[i](x);
        covered[j] = std::abs(fq) >= level;
        double rem = std::abs(values[j] - fq);
        double cap = C * bad_phi[j];
        if (cap > 0.0)
            worst[j] = rem / cap;
        else if (rem > 1e-9 * std::max(1.0, std::abs(values[j])))
            worst[j] = INFINITY;
        res.retained[j] = C * bad_phi[j] <= 0.5 * res.t * res.lambda;
    });
    std::size_t cov = 0, ret = 0;
    for (std::size_t j = 0; j < n; ++j) {
        cov += covered[j];
        ret += res.retained[j];
        res.worst_remainder = std::max(res.worst_remainder, worst[j]);
    }
    const double Wn = static_cast<double>(res.W.size());
    res.coverage = Wn > 0 ? cov / Wn : 1.0;
    res.retained_fraction = Wn > 0 ? ret / Wn : 1.0;
    res.surviving_level = level;
}

// Sampler for a density on [-R, R] tabulated as piecewise constant; the
// density of the draws is known exactly.
class TabulatedSampler {
public:
    template <class F>
    TabulatedSampler(F&& weight, double R, int n) : R_(R), h_(2 * R / n), n_(n), dens_(n), cdf_(n + 1, 0.0) {
        for (int i = 0; i < n; ++i) {
            dens_[i] = weight(-R + (i + 0.5) * h_);
            cdf_[i + 1] = cdf_[i] + dens_[i] * h_;
        }
        for (auto& d : dens_) d /= cdf_[n];
        double Z = cdf_[n];
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

    double density(double s) const {
        if (s < -R_ || s >= R_) return 0.0;
        return dens_[std::clamp(static_cast<int>((s + R_) / h_), 0, n_ - 1)];
    }

private:
    double R_, h_;
    int n_;
    std::vector<double> dens_, cdf_;
};

inline const TabulatedSampler& psi_squared_sampler() {
    static const TabulatedSampler s([](double x) { return psi1(x) * psi1(x); }, 32.0, 8192);
    return s;
}

}  // namespace detail

// ||psi_Delta g||_2^2 by importance sampling from psi_Delta^2 (a product
// of one-dimensional laws) for g = f restricted to `members`.
template <int D>
std::pair<double, double> cube_energy(const NFunction<D>& f, const std::vector<int>& members, const Plate<D>& cube,
                                      std::size_t samples, std::uint64_t seed) {
    const auto& S = detail::psi_squared_sampler();
    Rng rng(seed);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t n = 0; n < samples; ++n) {
        Vec<D> u;
        double q = 1.0;
        for (int i = 0; i < D; ++i) {
            u[i] = S.sample(rng);
            q *= S.density(u[i]);
        }
        Vec<D> x;
        for (int i = 0; i < D; ++i) x[i] = cube.center[i] + u[i] * cube.lengths[i];
        double ps = psi<D>(u);
        double v = q > 0.0 ? ps * ps * std::norm(evaluate<D>(f, x, &members)) / q : 0.0;
        s1 += v;
        s2 += v * v;
    }
    const double vol = cube.volume();
    double m = s1 / samples;
    double se = std::sqrt(std::max(0.0, s2 / samples - m * m) / samples);
    return {m * vol, se * vol};
}

// Integral of Phi_B phi_cube by importance sampling from a product of
// Cauchy laws, whose weight phi / density is bounded for M >= 2D.
template <int D>
double phi_mass(const std::vector<Plate<D>>& B, const Plate<D>& cube, int M, std::size_t samples, std::uint64_t seed) {
    Rng rng(seed);
    double s = 0.0;
    for (std::size_t n = 0; n < samples; ++n) {
        Vec<D> u, x;
        double q = 1.0;
        for (int i = 0; i < D; ++i) {
            u[i] = std::tan(M_PI * (rng.uniform() - 0.5));
            q *= 1.0 / (M_PI * (1.0 + u[i] * u[i]));
            x[i] = cube.center[i] + u[i] * cube.lengths[i];
        }
        double acc = 0.0;
        for (const auto& b : B) acc += detail::phi_fast<D>(unit_coords<D>(b, x), M);
        s += acc * detail::phi_fast<D>(u, M) / q;
    }
    return s / samples * cube.volume();
}

// Localization under |P| <= t^{4d} lambda^2: relation with Schwartz tails
// on W = {|f| >= lambda}, f^Q = sum of the packets related to Q.
template <int D>
LocalizationResult<D> localize_small_family(const NFunction<D>& f, double lambda, double t, const Config& cfg,
                                            const LocalizationOptions& opt = {}) {
    const int d = D - 1;
    const double k = static_cast<double>(f.size());
    if (opt.enforce_hypothesis && k > std::pow(t, 4.0 * d) * lambda * lambda)
        throw std::invalid_argument("localize: |P| = " + std::to_string(f.size()) + " exceeds t^{4d} lambda^2 = " +
                                    std::to_string(std::pow(t, 4.0 * d) * lambda * lambda));
    LocalizationResult<D> res;
    res.kind = LocalizationKind::localized;
    res.lambda = lambda;
    res.t = t;
    res.delta = cfg.delta();
    res.plates = f.size();
    res.k = f.size();
    res.log_budget = detail::log_budget(cfg.delta(), opt);
    res.relation.grid.side = t;
    if (f.packets.empty()) {
        res.coverage = 1.0;
        res.retained_fraction = 1.0;
        return res;
    }
    auto sl = superlevel_set<D>(f, lambda, 0.5 * cfg.delta(), opt.jobs);
    res.W = sl.W;
    if (res.W.size() == 0) {
        res.relation.related.assign(f.size(), {});
        res.coverage = 1.0;
        res.retained_fraction = 1.0;
        res.surviving_level = 0.5 * lambda;
        return res;
    }
    auto P = f.plates();
    auto sr = schwartz_relation<D>(P, res.W, t, cfg, opt.jobs);
    res.relation = sr.relation;
    res.K = sr.scales.K;
    res.scale_condition_met = sr.scales.condition_met;
    res.propR_budget = sr.propR_budget;
    res.bad_integral = sr.bad_integral;
    res.domination_constant = packet_domination_constant<D>(f.packets.front().profile);
    res.considered.resize(res.W.size());
    for (std::size_t j = 0; j < res.W.size(); ++j) res.considered[j] = static_cast<int>(j);
    std::vector<int> all(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) all[i] = static_cast<int>(i);
    detail::finish_localized<D>(res, f, all, sl.values, sr.bad_phi, 0.5 * lambda, opt.jobs);
    return res;
}

// The dichotomy under |P| <= t^{20d} delta^{(3d-3)/4} lambda^4: pick the
// type r whose component is large on the biggest part of {|f| >= lambda};
// if lambda >= t^{-4d} (k/r)^{1/2} localize through the tube relation,
// otherwise return f_{P_r} with its table of energies on sqrt(delta)-cubes.
template <int D>
LocalizationResult<D> localize_or_flat(const NFunction<D>& f, double lambda, double t, const Config& cfg,
                                       const LocalizationOptions& opt = {}) {
    const int d = D - 1;
    const double delta = cfg.delta();
    const double k = static_cast<double>(f.size());
    const double cap = std::pow(t, 20.0 * d) * std::pow(delta, (3.0 * d - 3.0) / 4.0) * std::pow(lambda, 4.0);
    if (opt.enforce_hypothesis && k > cap)
        throw std::invalid_argument("localize_or_flat: |P| = " + std::to_string(f.size()) +
                                    " exceeds t^{20d} delta^{(3d-3)/4} lambda^4 = " + std::to_string(cap));
    LocalizationResult<D> res;
    res.lambda = lambda;
    res.t = t;
    res.delta = delta;
    res.plates = f.size();
    res.k = f.size();
    res.log_budget = detail::log_budget(delta, opt);
    res.relation.grid.side = t;
    res.relation.related.assign(f.size(), {});
    if (f.packets.empty()) {
        res.coverage = 1.0;
        return res;
    }
    auto sl = superlevel_set<D>(f, lambda, 0.5 * delta, opt.jobs);
    res.W = sl.W;
    if (res.W.size() == 0) {
        res.coverage = 1.0;
        res.surviving_level = 0.5 * lambda;
        return res;
    }
    auto P = f.plates();
    auto ta = assign_tubes<D>(P, cfg);
    auto comps = ta.components();
    const double level = lambda / static_cast<double>(comps.size());
    std::map<long, std::vector<int>> hits;
    std::map<long, std::vector<cplx>> hit_values;
    for (const auto& [r, members] : comps) {
        std::vector<cplx> v(res.W.size());
        detail::parallel_for(res.W.size(), opt.jobs,
                             [&](std::size_t j) { v[j] = evaluate<D>(f, res.W.points[j], &members); });
        for (std::size_t j = 0; j < v.size(); ++j)
            if (std::abs(v[j]) >= level) {
                hits[r].push_back(static_cast<int>(j));
                hit_values[r].push_back(v[j]);
            }
        res.type_counts[r] = hits[r].size();
    }
    long best = comps.begin()->first;
    for (const auto& [r, c] : res.type_counts)
        if (c > res.type_counts[best]) best = r;
    res.r = best;
    res.type_fraction = static_cast<double>(res.type_counts[best]) / static_cast<double>(res.W.size());
    if (res.type_fraction < res.log_budget) {
        std::ostringstream os;
        os << "localize_or_flat: no type captures a logarithmic fraction;";
        for (const auto& [r, c] : res.type_counts) os << " r=" << r << ":" << c;
        throw std::runtime_error(os.str());
    }
    const auto& members = comps.at(best);
    res.flat_members = members;
    res.considered = hits[best];
    res.case_threshold = std::pow(t, -4.0 * d) * std::sqrt(k / static_cast<double>(best));
    const bool case_one = lambda >= res.case_threshold;

    // Tubes of P_r; every plate of P_r lies in the 3-fold dilate of its tube.
    std::vector<Plate<D>> Pr;
    for (int i : members) Pr.push_back(P[i]);
    auto tr = assign_tubes<D>(Pr, cfg, false);
    auto T = dilated_tubes<D>(tr);
    PointSet<D> Wr;
    Wr.cell_side = res.W.cell_side;
    for (int j : res.considered) Wr.points.push_back(res.W.points[j]);

    if (case_one) {
        res.kind = LocalizationKind::localized;
        auto sr = schwartz_relation<D>(T, Wr, t, cfg, opt.jobs);
        res.K = sr.scales.K;
        res.scale_condition_met = sr.scales.condition_met;
        res.propR_budget = sr.propR_budget;
        res.bad_integral = sr.bad_integral;
        res.relation.grid = sr.relation.grid;
        res.relation.kind = RelationKind::multiscale;
        for (std::size_t a = 0; a < members.size(); ++a)
            res.relation.related[members[a]] = sr.relation.related[tr.plate_tube[a]];
        // |f_pi| <= C_pk phi_pi and the plates of one tube add up to at
        // most their count times phi of the 3-fold tube.
        long maxcount = 0;
        for (const auto& m : tr.members) maxcount = std::max<long>(maxcount, static_cast<long>(m.size()));
        res.domination_constant = packet_domination_constant<D>(f.packets.front().profile) * maxcount;
        detail::finish_localized<D>(res, f, members, hit_values[best], sr.bad_phi, 0.5 * level, opt.jobs);
        return res;
    }

    res.kind = LocalizationKind::flat;
    std::map<CubeIndex<D>, long> cubes;
    CubeGrid<D> g;
    g.side = std::sqrt(delta);
    for (int j : res.considered) ++cubes[g.index_of(res.W.points[j])];
    std::vector<std::pair<CubeIndex<D>, long>> order(cubes.begin(), cubes.end());
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (order.size() > opt.max_table_cubes) {
        order.resize(opt.max_table_cubes);
        res.table_truncated = true;
    }
    const double bound = std::pow(t, 5.0 * d) * std::pow(delta, 0.75 * (d + 1)) * lambda * lambda;
    res.table.resize(order.size());
    detail::parallel_for(order.size(), opt.jobs, [&](std::size_t a) {
        CubeEnergy row;
        for (int i = 0; i < D; ++i) row.cube[i] = order[a].first[i];
        row.w_points = order[a].second;
        Plate<D> cube = g.cube(order[a].first);
        std::uint64_t seed = cfg.seed * 1000003ull + a;
        auto [e, se] = cube_energy<D>(f, members, cube, opt.mc_samples, seed);
        row.energy = e;
        row.energy_error = se;
        row.plate_mass = phi_mass<D>(Pr, cube, cfg.M, opt.mc_samples, seed + 1);
        row.tube_mass = phi_mass<D>(T, cube, cfg.M, opt.mc_samples, seed + 2);
        row.bound = bound;
        res.table[a] = row;
    });
    res.coverage = static_cast<double>(res.considered.size()) / static_cast<double>(res.W.size());
    res.surviving_level = level;
    return res;
}

}  // namespace platekit
