#include <catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "platekit/incidence.hpp"
#include "platekit/packets.hpp"

using namespace platekit;

namespace {

// Cells of side delta on [0,1)^3 whose centres lie in the plate.
PointSet<3> cells_in(const Plate<3>& p, double delta) {
    PointSet<3> all = cell_lattice<3>(delta);
    PointSet<3> W;
    W.cell_side = delta;
    for (const auto& x : all.points)
        if (contains<3>(p, x)) W.points.push_back(x);
    return W;
}

PointSet<3> keep_in_cube(const PointSet<3>& W, const CubeGrid<3>& g, const CubeIndex<3>& Q, std::size_t limit) {
    PointSet<3> out;
    out.cell_side = W.cell_side;
    for (const auto& x : W.points)
        if (g.index_of(x) == Q && out.points.size() < limit) out.points.push_back(x);
    return out;
}

}  // namespace

TEST_CASE("relation picks the cube holding most of W", "[incidence]") {
    Config c = make_config(2, 64);
    Plate<3> p = make_plate<3>(Vec<3>{0.5, 0.5, 0.5}, Vec<2>{1.0, 0.0}, c);
    PointSet<3> inside = cells_in(p, c.delta());
    REQUIRE(inside.size() > 100);
    const double t = 0.125;
    CubeGrid<3> g;
    g.side = t;
    std::map<CubeIndex<3>, int> per;
    for (const auto& x : inside.points) ++per[g.index_of(x)];

    // W inside one cube.
    auto Q0 = per.begin()->first;
    PointSet<3> W = keep_in_cube(inside, g, Q0, 1000);
    auto rel = build_relation<3>({p}, W, t);
    CHECK(rel.primary[0] == Q0);
    CHECK(rel.related[0].size() == 27u);

    // 60/40 split between two non-adjacent cubes.
    std::vector<CubeIndex<3>> far;
    for (const auto& [Q, n] : per)
        if (n >= 6 && !adjacent_or_equal<3>(Q, Q0)) far.push_back(Q);
    REQUIRE(!far.empty());
    PointSet<3> A = keep_in_cube(inside, g, Q0, 4);
    PointSet<3> B = keep_in_cube(inside, g, far.front(), 6);
    REQUIRE(A.size() == 4u);
    PointSet<3> split = A;
    split.points.insert(split.points.end(), B.points.begin(), B.points.end());
    CHECK(build_relation<3>({p}, split, t).primary[0] == far.front());

    // Empty W: the cube containing the centre.
    PointSet<3> none;
    none.cell_side = c.delta();
    CHECK(build_relation<3>({p}, none, t).primary[0] == g.index_of(p.center));
    CHECK_THROWS(build_relation<3>({p}, W, 0.3));
}

TEST_CASE("bad incidence agrees with the double loop", "[incidence]") {
    Config c = make_config(2, 64, 7);
    auto f = random_nfunction<3>(500, FamilyMode::uniform, c);
    auto P = f.plates();
    PointSet<3> W = random_cells<3>(c.delta(), 0.05, 11);
    REQUIRE(W.size() * P.size() <= 10000000u);
    const double t = c.t();
    auto rel = build_relation<3>(P, W, t, 2);
    CHECK(rel.max_related() <= 27u);
    auto bad = bad_incidence<3>(P, W, rel, 2);
    CHECK(bad.cells == bad_incidence_brute<3>(P, W, rel));
    long per = 0;
    for (long v : bad.per_plate) per += v;
    CHECK(per == bad.cells);
    double bound = bad_incidence_bound(2, t, W.measure(), P.size());
    CHECK(bad.value <= 100.0 * bound);

    // Enlarging the relation never increases I_b.
    auto bigger = rel;
    for (auto& r : bigger.related) {
        auto extra = bigger.grid.neighbourhood(r.front());
        r.insert(r.end(), extra.begin(), extra.end());
    }
    bigger.normalise();
    CHECK(bad_incidence<3>(P, W, bigger).cells <= bad.cells);

    // Relating every box to every cube leaves nothing.
    auto all = rel;
    for (auto& r : all.related) {
        r.clear();
        for (long a = -2; a <= 3; ++a)
            for (long b = -2; b <= 3; ++b)
                for (long e = -2; e <= 3; ++e) r.push_back({a, b, e});
    }
    all.normalise();
    CHECK(bad_incidence<3>(P, W, all).cells == 0);
}

TEST_CASE("bad incidence of one plate by cube totals", "[incidence]") {
    Config c = make_config(2, 64);
    Plate<3> p = make_plate<3>(Vec<3>{0.5, 0.5, 0.5}, Vec<2>{1.0, 0.0}, c);
    PointSet<3> W = cells_in(p, c.delta());
    const double t = 0.125;
    auto rel = build_relation<3>({p}, W, t);
    std::map<CubeIndex<3>, long> per;
    for (const auto& x : W.points) ++per[rel.grid.index_of(x)];
    long total = static_cast<long>(W.size()), near = 0;
    for (const auto& [Q, n] : per)
        if (adjacent_or_equal<3>(Q, rel.primary[0])) near += n;
    CHECK(per.size() >= 8u);
    CHECK(bad_incidence<3>({p}, W, rel).cells == total - near);
    CHECK(total - near > 0);

    // W inside the related cubes only.
    PointSet<3> Wn;
    Wn.cell_side = W.cell_side;
    for (const auto& x : W.points)
        if (rel.relates(0, rel.grid.index_of(x))) Wn.points.push_back(x);
    CHECK(bad_incidence<3>({p}, Wn, build_relation<3>({p}, Wn, t)).cells == 0);
}

TEST_CASE("two point counts", "[incidence]") {
    Config c = make_config(2, 64);
    // Parallel stack along the thin axis: each point lies in one plate.
    std::vector<Plate<3>> stack;
    Plate<3> base = make_plate<3>(Vec<3>{0.5, 0.5, 0.5}, Vec<2>{0.0, 1.0}, c);
    for (int j = -3; j <= 3; ++j) stack.push_back(base.translated(j * base.lengths[2] * base.axes[2]));
    REQUIRE(is_separated<3>(stack, c.Csep, c.Ccomp));
    Vec<3> x = base.global(Vec<3>{-0.3, 0.1 * base.lengths[1], 0.0});
    Vec<3> y = base.global(Vec<3>{0.3, -0.1 * base.lengths[1], 0.1 * base.lengths[2]});
    auto r = two_point_count<3>(stack, x, y, 0.25);
    CHECK(r.count >= 1);
    CHECK(r.count <= c.Csep);
    CHECK(two_point_count<3>({}, x, y, 0.25).count == 0);
    CHECK(two_point_count<3>(stack, x, x, 0.25).below_scale);

    // Focusing family through x0; the second point is placed in a random
    // member at distance at least t.
    const double t = 0.25;
    Vec<3> x0{0.5, 0.5, 0.5};
    auto P = focusing_family<3>(c, x0);
    Rng rng(3);
    long worst = 0;
    for (int k = 0; k < 1000; ++k) {
        const auto& p = P[rng.index(P.size())];
        Vec<3> u{rng.uniform(-0.5, 0.5) * p.lengths[0], rng.uniform(-0.5, 0.5) * p.lengths[1],
                 rng.uniform(-0.5, 0.5) * p.lengths[2]};
        Vec<3> y2 = p.global(u);
        auto q = two_point_count<3>(P, x0, y2, t);
        if (q.below_scale) continue;
        CHECK(q.count >= 1);
        worst = std::max(worst, q.count);
    }
    CHECK(worst >= 1);
    CHECK(static_cast<double>(worst) <= 16.0 / t);
}

TEST_CASE("quantity A", "[incidence]") {
    Config c = make_config(2, 64);
    Plate<3> p = make_plate<3>(Vec<3>{0.5, 0.5, 0.5}, Vec<2>{1.0, 0.0}, c);
    PointSet<3> inside = cells_in(p, c.delta());
    CubeGrid<3> g;
    g.side = 0.125;
    std::map<CubeIndex<3>, int> per;
    for (const auto& x : inside.points) ++per[g.index_of(x)];
    auto Q = per.begin()->first;
    CubeIndex<3> Qp{};
    bool found = false;
    for (const auto& [k, n] : per)
        if (n >= 2 && !adjacent_or_equal<3>(k, Q)) {
            Qp = k;
            found = true;
            break;
        }
    REQUIRE(found);
    PointSet<3> W = keep_in_cube(inside, g, Q, 3);
    PointSet<3> B = keep_in_cube(inside, g, Qp, 2);
    W.points.insert(W.points.end(), B.points.begin(), B.points.end());
    const double v = W.cell_volume();
    auto A = quantity_A<3>({p}, W, g, Q, Qp);
    CHECK(A.value == Catch::Approx(6.0 * v * v).epsilon(1e-12));
    CHECK(A.brute == Catch::Approx(A.value).epsilon(1e-12));
    CHECK_THROWS(quantity_A<3>({p}, W, g, Q, Q));

    // A plate far from both cubes.
    Plate<3> off = p.translated(Vec<3>{0.0, 0.3, 0.0});
    CHECK(quantity_A<3>({off}, W, g, Q, Qp).value == 0.0);

    // Random family: the box sum equals the pair sum and obeys the
    // two-point bound.
    Config c2 = make_config(2, 16, 5);
    auto P = random_nfunction<3>(200, FamilyMode::uniform, c2).plates();
    PointSet<3> Wr = random_cells<3>(c2.delta(), 0.3, 2);
    CubeGrid<3> g2;
    g2.side = 0.25;
    auto Ar = quantity_A<3>(P, Wr, g2, CubeIndex<3>{0, 0, 0}, CubeIndex<3>{2, 1, 3});
    CHECK(Ar.value == Catch::Approx(Ar.brute).epsilon(1e-12));
    CHECK(Ar.value <= Ar.max_pair_count * Ar.WQ * Ar.WQp * (1 + 1e-12));
    CHECK(static_cast<double>(Ar.max_pair_count) <= 16.0 / 0.25);
}

TEST_CASE("scale count for the multiscale relation", "[incidence]") {
    // t/8 >= 2^K sqrt(delta).
    auto s = choose_scale_count(0.5, 1.0 / 4096);
    CHECK(s.K == 2);
    CHECK(s.condition_met);
    CHECK(s.c0 > 0.0);
    const double L = std::log(0.5 * 64);
    CHECK(s.K >= s.c0 * L - 1e-12);
    CHECK(s.K <= 2 * s.c0 * L + 1e-12);
    // Desk scale: no K satisfies the condition.
    auto z = choose_scale_count(0.5, 1.0 / 64);
    CHECK(z.K == 0);
    CHECK_FALSE(z.condition_met);
    CHECK_THROWS_WITH(choose_scale_count(0.5, 1.0 / 4096, 4.0), Catch::Matchers::ContainsSubstring("max admissible c0"));
}

TEST_CASE("Schwartz relation in the pure tail regime", "[incidence]") {
    Config c = make_config(2, 64, 3);
    std::vector<Plate<3>> P;
    for (int j = 0; j < 5; ++j)
        P.push_back(make_plate<3>(Vec<3>{0.5, 0.5, 0.5 + 4 * j * c.delta()}, Vec<2>{1.0, 0.0}, c));
    REQUIRE(is_separated<3>(P, c.Csep, c.Ccomp));
    // W a unit away along the thin axis of the plates.
    PointSet<3> W;
    W.cell_side = c.delta();
    Vec<3> n = P[0].axes[2];
    for (int k = 0; k < 200; ++k) W.points.push_back(P[0].center + (1.2 + k * c.delta()) * n);
    auto r = schwartz_relation<3>(P, W, c.t(), c);
    double direct = 0.0;
    for (const auto& x : W.points) direct += eval_Phi<3>(P, x, c.M) * W.cell_volume();
    CHECK(r.bad_integral <= direct * (1 + 1e-12));
    CHECK(r.bad_integral <= std::pow(c.delta(), c.M0) * W.measure());

    // Single plate, W inside its related cubes: no bad mass at all.
    PointSet<3> Wp = cells_in(P[0], c.delta());
    auto r1 = schwartz_relation<3>({P[0]}, Wp, c.t(), c);
    CHECK(r1.bad_integral <= std::pow(c.delta(), c.M0) * Wp.measure());
}

TEST_CASE("Schwartz relation on random families", "[incidence]") {
    for (int mode = 0; mode < 2; ++mode) {
        Config c = make_config(2, 64, 21 + mode);
        auto P = random_nfunction<3>(500, mode ? FamilyMode::tiling : FamilyMode::uniform, c).plates();
        PointSet<3> W = random_cells<3>(c.delta(), 0.05, 4 + mode);
        auto r = schwartz_relation<3>(P, W, c.t(), c, 2);
        const double L = std::log(1.0 / c.delta());
        CHECK(r.relation.max_related() <= r.propR_budget);
        CHECK(r.levels.size() == static_cast<std::size_t>(r.scales.K + 1));
        CHECK(r.levels[0].dilate >= 1.0);
        CHECK(r.bad_integral <= 100.0 * L * L * L * (r.main_term + r.tail_term));
        // Phi^b at a point is bounded by Phi.
        for (std::size_t j = 0; j < W.size(); j += 97)
            CHECK(r.bad_phi[j] <= eval_Phi<3>(P, W.points[j], c.M) * (1 + 1e-12));
    }
}

TEST_CASE("Schwartz relation with several scales", "[incidence]") {
    // At N = 4096 the condition admits K = 2.
    Config c = make_config(2, 4096, 9);
    auto P = random_nfunction<3>(150, FamilyMode::uniform, c).plates();
    PointSet<3> W;
    W.cell_side = c.delta();
    Rng rng(1);
    for (int k = 0; k < 3000; ++k) {
        const auto& p = P[rng.index(P.size())];
        Vec<3> u{rng.uniform(-1, 1) * p.lengths[0], rng.uniform(-2, 2) * p.lengths[1], rng.uniform(-8, 8) * p.lengths[2]};
        Vec<3> x = p.global(u);
        for (auto& v : x) v = (std::floor(v / c.delta()) + 0.5) * c.delta();
        W.points.push_back(x);
    }
    auto r = schwartz_relation<3>(P, W, c.t(), c, 2);
    CHECK(r.scales.condition_met);
    CHECK(r.scales.K >= 1);
    CHECK(r.relation.max_related() <= r.propR_budget);
    for (const auto& lv : r.levels) {
        CHECK(lv.dilate >= 1.0);
        CHECK(lv.dilate <= 2.0 * c.Ccomp);
    }
    const double L = std::log(1.0 / c.delta());
    CHECK(r.bad_integral <= 100.0 * L * L * L * (r.main_term + r.tail_term));
}

TEST_CASE("Schwartz relation for tubes", "[incidence]") {
    Config c = make_config(2, 64, 13);
    auto P = random_nfunction<3>(400, FamilyMode::uniform, c).plates();
    auto ta = assign_tubes<3>(P, c);
    auto T = dilated_tubes<3>(ta);
    PointSet<3> W = random_cells<3>(c.delta(), 0.05, 8);
    auto r = schwartz_relation<3>(T, W, c.t(), c, 2);
    const double L = std::log(1.0 / c.delta());
    CHECK(r.relation.max_related() <= r.propR_budget);
    CHECK(r.bad_integral <= 100.0 * L * L * L * (r.main_term + r.tail_term));
}

TEST_CASE("type r mass comparison", "[incidence]") {
    Config c = make_config(2, 64);
    Plate<3> base = make_plate<3>(Vec<3>{0.5, 0.5, 0.5}, Vec<2>{0.6, 0.8}, c);
    Plate<3> Q = make_cube<3>(base.center, std::sqrt(c.delta()));
    for (int r : {1, 2, 4, 8}) {
        std::vector<Plate<3>> P{base};
        for (int j = 1; j < r; ++j) P.push_back(base.translated(((j + 1) / 2) * (j % 2 ? 1.0 : -1.0) * base.lengths[2] * base.axes[2]));
        auto m = type_mass_check<3>(P, c, Q, 2);
        CHECK(m.r == r);
        CHECK(m.ratio <= 8.0);
        CHECK(m.ratio >= 1.0 / 8.0);
        // Away from the tube, off its long axis.
        Plate<3> far = make_cube<3>(base.center + 0.2 * base.axes[1], std::sqrt(c.delta()));
        CHECK(type_mass_check<3>(P, c, far, 2).ratio <= 8.0);
    }
    // Two tubes of different types.
    std::vector<Plate<3>> mixed{base, base.translated(base.lengths[2] * base.axes[2]),
                                make_plate<3>(Vec<3>{0.2, 0.2, 0.2}, Vec<2>{1.0, 0.0}, c),
                                make_plate<3>(Vec<3>{0.2, 0.2, 0.2}, Vec<2>{1.0, 0.0}, c).translated(Vec<3>{0, 0, 0.01}),
                                make_plate<3>(Vec<3>{0.8, 0.2, 0.2}, Vec<2>{0.0, 1.0}, c)};
    CHECK_THROWS(type_mass_check<3>(mixed, c, Q));
}

TEST_CASE("incidence csv rows", "[incidence]") {
    std::vector<IncidenceRow> rows{{"a", 0.5, 10, 0.25, 0.01, 2.0}};
    write_incidence_csv("incidence_rows.csv", rows);
    std::ifstream in("incidence_rows.csv");
    std::string head, line;
    std::getline(in, head);
    std::getline(in, line);
    CHECK(head == "instance,t,plates,W,I_b,bound,ratio");
    CHECK(line.rfind("a,0.5,10,0.25,0.01,2,0.005", 0) == 0);
    std::remove("incidence_rows.csv");
}
