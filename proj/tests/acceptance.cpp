// Acceptance suite: one PASS/FAIL line per criterion. Run with criterion
// numbers as arguments to select a subset.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "platekit/platekit.hpp"

using namespace platekit;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    return buf;
}

Experiment experiment(const std::string& name, int d, double N, std::size_t count, double eps0 = 0.1) {
    Experiment ex;
    ex.name = name;
    ex.cfg = make_config(d, N, 1);
    ex.cfg.eps0 = eps0;
    ex.cfg.eps = eps0 * eps0 / 2;
    ex.count = count;
    ex.out = "acceptance_out";
    return ex;
}

// Runs experiments, folds their assertions into one outcome and lists the
// failing assertions.
struct Runs {
    Outcome out;
    std::vector<Report> reports;

    const Report& run(const Experiment& ex) {
        reports.push_back(run_experiment(ex));
        const Report& r = reports.back();
        for (const auto& a : r.assertions)
            if (!a.holds()) {
                out.pass = false;
                out.detail += "[" + r.name + " N=" + fmt(ex.cfg.N) + ": " + a.name + " lhs " + fmt(a.lhs) +
                              " > bound " + fmt(a.bound()) + "] ";
            }
        return r;
    }
};

double note_value(const Report& r, const std::string& key) {
    for (const auto& [k, v] : r.summary)
        if (k == key) return std::stod(v);
    return std::nan("");
}

double assertion_ratio(const Report& r, const std::string& prefix) {
    for (const auto& a : r.assertions)
        if (a.name.rfind(prefix, 0) == 0) return a.bound() > 0 ? a.lhs / a.bound() : 0.0;
    return std::nan("");
}

// 1. Partition of unity of the psi translates.
Outcome partition_of_unity() {
    Rng rng(101);
    double worst3 = 0.0, worst4 = 0.0;
    for (int k = 0; k < 1000; ++k) {
        Vec<3> x{rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-8, 8)};
        worst3 = std::max(worst3, std::abs(partition_sum<3>(x) - 1.0));
        Vec<4> y{rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-8, 8)};
        worst4 = std::max(worst4, std::abs(partition_sum<4>(y) - 1.0));
    }
    Outcome o;
    o.pass = worst3 <= 1e-8 && worst4 <= 1e-8;
    o.detail = "max |sum - 1| d=2 " + fmt(worst3) + ", d=3 " + fmt(worst4);
    return o;
}

// Unit coordinates mixing wide uniform draws with draws near the axes, so
// that the neighbourhoods of the coordinate planes are sampled too.
Vec<3> mixed_unit_point(Rng& rng) {
    Vec<3> u;
    for (int i = 0; i < 3; ++i) u[i] = rng.uniform() < 0.5 ? rng.uniform(-30, 30) : 0.5 * rng.normal();
    return u;
}

// 2. Packets are dominated by their plate bump with an N-independent
// constant, and their spectrum sits inside the dual plate.
Outcome packet_validity() {
    const double Cpk = packet_domination_constant<3>(PacketProfile{});
    std::vector<double> sup;
    for (double N : {16.0, 64.0, 256.0}) {
        Config c = make_config(2, N);
        Rng rng(static_cast<std::uint64_t>(N) + 7);
        double worst = 0.0;
        for (int k = 0; k < 1000; ++k) {
            double th = rng.uniform(0, 2 * M_PI), ph = rng.uniform(0, 2 * M_PI);
            Plate<3> p = make_plate<3>(Vec<3>{rng.uniform(), rng.uniform(), rng.uniform()},
                                       Vec<2>{std::cos(th), std::sin(th)}, c);
            auto w = make_packet<3>(p, cplx(std::cos(ph), std::sin(ph)), c);
            for (int s = 0; s < 200; ++s) {
                Vec<3> u = mixed_unit_point(rng);
                Vec<3> x = p.global(Vec<3>{u[0] * p.lengths[0], u[1] * p.lengths[1], u[2] * p.lengths[2]});
                worst = std::max(worst, std::abs(w(x)) / eval_phi_R<3>(p, x, c.M));
            }
        }
        sup.push_back(worst);
    }
    double lo = *std::min_element(sup.begin(), sup.end()), hi = *std::max_element(sup.begin(), sup.end());

    // Periodised packet evaluated in space with explicit images, then FFT.
    Config c = make_config(2, 16);
    double leak = 0.0;
    for (double angle : {0.0, 0.7, 2.3}) {
        Vec<2> cap{std::cos(angle), std::sin(angle)};
        Plate<3> tile = cap_plate<3>(cap, c);
        auto g = plate_torus_grid<3>(tile, {4, 8, 16}, {32, 32, 128});
        auto w = make_packet<3>(tile, 1.0, c);
        std::array<std::vector<double>, 3> env;
        for (int i = 0; i < 3; ++i) {
            int T = static_cast<int>(std::lround(g.extent[i] / tile.lengths[i]));
            for (int n = 0; n < g.res[i]; ++n) {
                double s = n * g.spacing(i) / tile.lengths[i], acc = 0.0;
                for (int m = -400; m <= 400; ++m) acc += w.profile.g(s - m * T);
                env[i].push_back(acc);
            }
        }
        SampledField<3> f(g);
        for (std::size_t k = 0; k < f.values.size(); ++k) {
            auto n = g.unravel(k);
            double a = 2 * M_PI * n[2] * g.spacing(2) / tile.lengths[2];
            f.values[k] = env[0][n[0]] * env[1][n[1]] * env[2][n[2]] * cplx(std::cos(a), std::sin(a));
        }
        leak = std::max(leak, dual_plate_leak<3>(forward<3>(f), tile, c.N, c.C0, c.C1).first);
    }
    Outcome o;
    o.pass = hi <= Cpk * (1 + 1e-9) && hi <= 1.1 * lo && leak <= 1e-6;
    o.detail = "C_pk " + fmt(Cpk) + ", sampled sup N=16/64/256 " + fmt(sup[0]) + "/" + fmt(sup[1]) + "/" +
               fmt(sup[2]) + ", spread " + fmt(hi / lo - 1) + ", energy outside dual plate " + fmt(leak);
    return o;
}

// 3. Essential orthogonality of cap pieces.
Outcome essential_orthogonality() {
    Runs r;
    const auto& rep = r.run(experiment("micnorm", 2, 64, 20));
    double lo = 1e300, hi = 0.0;
    for (const auto& row : rep.rows) {
        double v = std::stod(row.back());
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    r.out.detail = "20 fields at 256^3, mic^2/L2^2 in [" + fmt(lo) + ", " + fmt(hi) + "] " + r.out.detail;
    return r.out;
}

// 4. Decomposition into N-function pieces.
Outcome decomposition() {
    Runs r;
    Experiment ex = experiment("decompose", 2, 16, 10);
    ex.ps = {2.0, 6.0};
    const auto& rep = r.run(ex);
    r.out.detail = "identity error " + fmt(rep.assertions[0].lhs) + ", packing/(16 log^3 mic^p) p=2 " +
                   fmt(assertion_ratio(rep, "packing sum against mic norm power at p = 2")) + ", p=6 " +
                   fmt(assertion_ratio(rep, "packing sum against mic norm power at p = 6")) + " " + r.out.detail;
    return r.out;
}

// 5. Bad incidence bound, brute-force equality and two-point counts.
Outcome incidence() {
    Runs r;
    std::size_t instances = 0, pairs = 0;
    double worst = 0.0, two = 0.0;
    for (double N : {16.0, 64.0})
        for (double eps0 : {0.1, 0.5}) {
            Experiment ex = experiment("incidence", 2, N, eps0 == 0.1 ? 13 : 12, eps0);
            ex.plates = 1000;
            const auto& rep = r.run(ex);
            instances += rep.rows.size();
            pairs += static_cast<std::size_t>(note_value(rep, "two_point_pairs"));
            worst = std::max(worst, assertion_ratio(rep, "bad incidence against"));
            two = std::max(two, assertion_ratio(rep, "two point count"));
        }
    r.out.detail = std::to_string(instances) + " instances (t = 1/2, 1/4, 1/8), I_b/bound max " + fmt(worst) + ", " +
                   std::to_string(pairs) + " pairs, two-point count/bound max " + fmt(two) + " " + r.out.detail;
    return r.out;
}

// 6. Relations with Schwartz tails, plates and tubes.
Outcome schwartz() {
    Runs r;
    std::size_t instances = 0;
    double worst = 0.0;
    for (double N : {16.0, 64.0})
        for (double eps0 : {0.1, 0.5}) {
            Experiment ex = experiment("schwartz", 2, N, 5, eps0);
            ex.plates = 500;
            const auto& rep = r.run(ex);
            instances += rep.rows.size();
            worst = std::max(worst, assertion_ratio(rep, "Schwartz bad incidence"));
        }
    r.out.detail = std::to_string(instances) + " instances, integral/bound max " + fmt(worst) + " " + r.out.detail;
    return r.out;
}

// 7. Type-r mass comparison with the tube family.
Outcome type_mass() {
    Runs r;
    std::string detail;
    for (auto [d, N, count] : {std::tuple{2, 64.0, std::size_t{10}}, std::tuple{3, 16.0, std::size_t{3}}}) {
        Experiment ex = experiment("typemass", d, N, count);
        ex.plates = d == 2 ? 300 : 100;
        const auto& rep = r.run(ex);
        detail += "d=" + std::to_string(d) + " stacked max " + fmt(rep.assertions[0].lhs / rep.assertions[0].rhs) +
                  ", random max " + fmt(rep.assertions[1].rhs > 0 ? rep.assertions[1].lhs / rep.assertions[1].rhs : 0.0) +
                  "; ";
    }
    r.out.detail = detail + r.out.detail;
    return r.out;
}

// 8. Localization of small families and the dichotomy.
Outcome localization() {
    Runs r;
    double coverage = 1.0;
    for (auto [N, count] : {std::pair{64.0, std::size_t{4}}, std::pair{16.0, std::size_t{2}}}) {
        const auto& rep = r.run(experiment("localize", 2, N, count));
        for (const auto& row : rep.rows) coverage = std::min(coverage, std::stod(row[6]));
    }
    const auto& dich = r.run(experiment("dichotomy", 2, 16, 20));
    r.out.detail = "min coverage " + fmt(coverage) + ", dichotomy " + std::to_string(dich.rows.size()) +
                   " instances (" + fmt(note_value(dich, "flat_instances")) + " flat), energy/(100 bound) max " +
                   fmt(assertion_ratio(dich, "flat energy table")) + " " + r.out.detail;
    return r.out;
}

// 9. Lorentz rescaling of sector fields.
Outcome lorentz() {
    Runs r;
    double fitted = 0.0, eig = 0.0, outside = 0.0;
    for (double N : {64.0, 256.0}) {
        const auto& rep = r.run(experiment("lorentz", 2, N, 4));
        eig = std::max(eig, rep.assertions[0].lhs);
        fitted = std::max(fitted, rep.assertions[1].lhs);
        outside = std::max(outside, rep.assertions[2].lhs);
    }
    r.out.detail = "eigen error " + fmt(eig) + ", fitted C' max " + fmt(fitted) + ", energy outside " + fmt(outside) +
                   " " + r.out.detail;
    return r.out;
}

// 10. Exponents, the predicate in the Tchebyshev regime and sharpness.
Outcome predicate_suite() {
    Runs r;
    bool exps = critical_exponent(3) == make_rational(18, 1) && critical_exponent(4) == make_rational(42, 5) &&
                critical_exponent(5) == make_rational(6, 1);
    if (!exps) {
        r.out.pass = false;
        r.out.detail += "[critical exponents] ";
    }
    double cheb = 0.0;
    for (auto [d, mode, count, p] : {std::tuple{2, FamilyMode::uniform, std::size_t{4}, 6.0},
                                     std::tuple{2, FamilyMode::focusing, std::size_t{2}, 6.0},
                                     std::tuple{3, FamilyMode::focusing, std::size_t{1}, 18.0}}) {
        Experiment ex = experiment("predicate", d, 16, count);
        ex.mode = mode;
        ex.ps = {p};
        const auto& rep = r.run(ex);
        cheb = std::max(cheb, assertion_ratio(rep, "weak-type ratio"));
    }
    Experiment sw = experiment("sweep", 2, 64, 1);
    sw.target = "sharpness";
    sw.ps = {6.0};
    sw.scales = {16, 64, 256};
    const auto& rep = r.run(sw);
    r.out.detail = "p_3, p_4, p_5 = " + critical_exponent(3).str() + ", " + critical_exponent(4).str() + ", " +
                   critical_exponent(5).str() + "; Tchebyshev ratio/4 max " + fmt(cheb) + "; sharpness slope " +
                   fmt(note_value(rep, "slope")) + " " + r.out.detail;
    return r.out;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"partition of unity", partition_of_unity},
        {"packet validity", packet_validity},
        {"essential orthogonality", essential_orthogonality},
        {"decomposition pipeline", decomposition},
        {"incidence", incidence},
        {"Schwartz tails and tubes", schwartz},
        {"type-r mass", type_mass},
        {"localization and dichotomy", localization},
        {"Lorentz rescaling", lorentz},
        {"predicate and exponents", predicate_suite},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!only.empty() && !only.count(id)) continue;
        auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failed += !o.pass;
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[k].first << " ("
                  << o.detail << ", " << fmt(secs, 3) << " s)" << std::endl;
    }
    return failed ? 1 : 0;
}
