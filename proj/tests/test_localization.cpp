#include <catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "platekit/localization.hpp"

using namespace platekit;

namespace {

// Focusing families at the given points; every packet peaks at its focus
// with value one, so the packets of a cluster add up coherently there.
template <int D>
NFunction<D> focus_clusters(const Config& c, const std::vector<Vec<D>>& foci, bool doubled = false) {
    std::vector<Plate<D>> P;
    for (const auto& x : foci) {
        auto F = focusing_family<D>(c, x);
        for (std::size_t i = 0; i < F.size(); ++i) {
            P.push_back(F[i]);
            if (doubled && i % 2 == 0) P.push_back(F[i].translated(F[i].lengths[D - 1] * F[i].axes[D - 1]));
        }
    }
    return make_nfunction<D>(P, std::vector<cplx>(P.size(), 1.0), c);
}

// Nearest point of the lattice (Z + 1/2) h used for superlevel sets.
template <int D>
Vec<D> on_lattice(const Vec<D>& x, double h) {
    Vec<D> y;
    for (int i = 0; i < D; ++i) y[i] = (std::floor(x[i] / h) + 0.5) * h;
    return y;
}

template <int D>
double peak(const NFunction<D>& f, const Vec<D>& x) {
    return std::abs(evaluate<D>(f, x));
}

}  // namespace

TEST_CASE("superlevel set matches direct evaluation", "[localization]") {
    Config c = make_config(2, 16);
    auto f = focus_clusters<3>(c, {Vec<3>{0.5, 0.5, 0.5}});
    const double lambda = 0.4 * peak<3>(f, Vec<3>{0.5, 0.5, 0.5});
    const double h = 0.5 * c.delta();
    auto sl = superlevel_set<3>(f, lambda, h);
    REQUIRE(sl.W.size() > 0);
    // Brute force over a box around the focus; the pruned search must
    // find exactly the same points there.
    std::size_t brute = 0, pruned = 0;
    const long lo = static_cast<long>(0.2 / h), hi = static_cast<long>(0.8 / h);
    for (long a = lo; a < hi; ++a)
        for (long b = lo; b < hi; ++b)
            for (long e = lo; e < hi; ++e) {
                Vec<3> x{(a + 0.5) * h, (b + 0.5) * h, (e + 0.5) * h};
                brute += std::abs(evaluate<3>(f, x)) >= lambda;
            }
    for (const auto& x : sl.W.points) {
        bool in = true;
        for (double v : x) in = in && v > lo * h && v < hi * h;
        pruned += in;
    }
    CHECK(pruned == brute);
    for (std::size_t j = 0; j < sl.W.size(); ++j)
        CHECK(std::abs(sl.values[j] - evaluate<3>(f, sl.W.points[j])) < 1e-9);
    CHECK(sl.outside_bound < lambda);
}

TEST_CASE("localization of a single packet", "[localization]") {
    Config c = make_config(2, 64);
    auto f = make_nfunction<3>({make_plate<3>(Vec<3>{0.5, 0.5, 0.5}, Vec<2>{0.6, 0.8}, c)}, {1.0}, c);
    // One plate never meets |P| <= t^{4d} lambda^2 below the maximum of |f|.
    CHECK_THROWS(localize_small_family<3>(f, 0.5, 1.0, c));
    LocalizationOptions o;
    o.enforce_hypothesis = false;
    // With t = 1/2 the superlevel set of a plate of length one crosses four
    // cubes along its diagonal, beyond the neighbours of the best cube.
    CHECK(localize_small_family<3>(f, 0.5, 0.5, c, o).coverage < 1.0);
    auto r = localize_small_family<3>(f, 0.5, 1.0, c, o);
    REQUIRE(r.W.size() > 0);
    CHECK(r.coverage == 1.0);
    CHECK(r.retained_fraction == 1.0);
    for (const auto& x : r.W.points) {
        auto it = r.subfunctions.find(r.relation.grid.index_of(x));
        REQUIRE(it != r.subfunctions.end());
        CHECK(it->second == std::vector<int>{0});
    }
    // Above the maximum: nothing to localize.
    auto e = localize_small_family<3>(f, 2.0, 1.0, c);
    CHECK(e.W.size() == 0);
    CHECK(e.coverage == 1.0);
}

TEST_CASE("localization of focusing clusters", "[localization]") {
    // At desk scale |P| <= t^{4d} lambda^2 / 2 is reachable only with t = 1.
    Config c = make_config(2, 64);
    const double t = 1.0;
    const double h = 0.5 * c.delta();
    std::vector<Vec<3>> foci;
    for (Vec<3> x : {Vec<3>{0.5, 0.5, 0.5}, Vec<3>{2.5, 0.5, 0.5}, Vec<3>{0.5, 2.5, 2.5}, Vec<3>{2.5, 2.5, 0.5}})
        foci.push_back(on_lattice<3>(x, h));
    auto f = focus_clusters<3>(c, foci);
    const double top = peak<3>(f, foci[0]);
    const double lambda = std::max(top / 2, std::sqrt(2.0 * f.size()));
    REQUIRE(f.size() <= std::pow(t, 8) * lambda * lambda / 2);
    LocalizationOptions o;
    o.jobs = 2;
    auto r = localize_small_family<3>(f, lambda, t, c, o);
    REQUIRE(r.W.size() > 0);
    const double L = std::log(1.0 / c.delta());
    CHECK(r.coverage >= 1.0 / (100 * L * L * L));
    CHECK(r.subfunction_plates <= 27u * (r.K + 1) * f.size());
    CHECK(r.worst_remainder <= 1.0);
    // Each subfunction only uses plates of f.
    for (const auto& [Q, m] : r.subfunctions)
        for (int i : m) CHECK((i >= 0 && i < static_cast<int>(f.size())));
    // Serialization.
    r.write("loc_test");
    std::ifstream s("loc_test.summary.txt");
    std::string first;
    std::getline(s, first);
    CHECK(first == "kind = localized");
    for (const char* ext : {".relation.csv", ".subfunctions.txt", ".summary.txt"})
        std::remove((std::string("loc_test") + ext).c_str());
}

TEST_CASE("dichotomy branches follow the case predicate", "[localization]") {
    Config c = make_config(2, 16);
    const double t = 1.0;
    Vec<3> x0 = on_lattice<3>(Vec<3>{0.5, 0.5, 0.5}, 0.5 * c.delta());
    int both[2] = {0, 0};
    for (bool doubled : {false, true}) {
        auto f = focus_clusters<3>(c, {x0}, doubled);
        const double k = static_cast<double>(f.size());
        const double floor = std::pow(k / std::pow(c.delta(), 0.75), 0.25);
        for (double scale : {1.01, 1.1, 1.25, 1.6, 2.5}) {
            const double lambda = scale * floor;
            auto r = localize_or_flat<3>(f, lambda, t, c);
            // Independent predicate: dyadic type counts by direct evaluation.
            auto comps = assign_tubes<3>(f.plates(), c).components();
            long best = 0;
            std::size_t bc = 0;
            for (const auto& [rr, mem] : comps) {
                std::size_t cnt = 0;
                for (const auto& x : r.W.points) {
                    cplx s = 0.0;
                    for (int i : mem) s += f.packets[i](x);
                    cnt += std::abs(s) >= lambda / comps.size();
                }
                if (cnt > bc || best == 0) {
                    if (cnt > bc) bc = cnt;
                    if (best == 0 || cnt >= bc) best = rr;
                }
            }
            const bool case_one = lambda >= std::pow(t, -8.0) * std::sqrt(k / best);
            CHECK(r.r == best);
            CHECK((r.kind == LocalizationKind::localized) == case_one);
            ++both[case_one ? 0 : 1];
            if (r.kind == LocalizationKind::flat) {
                REQUIRE(!r.table.empty());
                for (const auto& row : r.table) {
                    CHECK(row.energy <= 100.0 * row.bound);
                    CHECK(row.energy <= 8.0 * std::sqrt(c.delta()) * r.r * row.tube_mass);
                }
            } else {
                CHECK(r.subfunction_plates <= 27u * (r.K + 1) * f.size());
            }
        }
    }
    CHECK(both[0] > 0);
    CHECK(both[1] > 0);
}

TEST_CASE("hypothesis violations are rejected", "[localization]") {
    Config c = make_config(2, 16);
    auto f = focus_clusters<3>(c, {Vec<3>{0.5, 0.5, 0.5}});
    CHECK_THROWS_WITH(localize_small_family<3>(f, 2.0, 1.0, c), Catch::Matchers::ContainsSubstring("t^{4d}"));
    CHECK_THROWS_WITH(localize_or_flat<3>(f, 2.0, 1.0, c), Catch::Matchers::ContainsSubstring("t^{20d}"));
}
