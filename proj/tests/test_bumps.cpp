#include <catch_amalgamated.hpp>

#include <cstdio>

#include "platekit/bumps.hpp"
#include "platekit/packets.hpp"

using namespace platekit;
using Catch::Approx;

namespace {

// Lattice sum of psi1 with eta from direct quadrature of its Fourier
// integral (no table, no interpolation).
double direct_lattice_sum_1d(double s, int radius) {
    const auto& t = default_eta();
    double acc = 0.0;
    for (int j = -radius; j <= radius; ++j) {
        double e = t.eta_direct(s - j);
        acc += e * e;
    }
    return acc;
}

}  // namespace

TEST_CASE("phi values", "[bumps]") {
    CHECK(phi<3>(Vec<3>{0, 0, 0}, 8) == 1.0);
    CHECK(phi<3>(Vec<3>{1, 0, 0}, 8) == Approx(0.0625).epsilon(1e-15));
    Config c = make_config(2, 64);
    Plate<3> p = make_plate<3>(Vec<3>{0.2, 0.3, 0.4}, Vec<2>{0.0, 1.0}, c);
    CHECK(eval_phi_R<3>(p, p.center, 8) == 1.0);
    CHECK(eval_Phi<3>({p, p}, p.center, 8) == Approx(2.0));
    // phi_R(a_R(u)) = phi(u).
    Rng rng(4);
    for (int k = 0; k < 100; ++k) {
        Vec<3> u{rng.normal(), rng.normal(), rng.normal()};
        Vec<3> x = p.center + from_frame<3>(p.axes, Vec<3>{u[0] * p.lengths[0], u[1] * p.lengths[1], u[2] * p.lengths[2]});
        CHECK(eval_phi_R<3>(p, x, 8) == Approx(phi<3>(u, 8)).epsilon(1e-10));
        CHECK(eval_phi_R<3>(p, x, 8) <= 1.0);
        CHECK(eval_phi_R<3>(p, x, 8) > 0.0);
    }
}

TEST_CASE("eta table matches the direct Fourier integral", "[bumps]") {
    const auto& t = default_eta();
    Rng rng(5);
    double worst = 0.0;
    for (int k = 0; k < 500; ++k) {
        double x = rng.uniform(-40, 40);
        worst = std::max(worst, std::abs(t.eta(x) - t.eta_direct(x)));
    }
    CHECK(worst < 1e-10);
    // Normalisation: the integral of eta^2 is one.
    double s = 0.0;
    const double h = 1.0 / 64;
    for (double x = -64; x < 64; x += h) s += t.eta(x) * t.eta(x) * h;
    CHECK(s == Approx(1.0).epsilon(1e-9));
    CHECK(psi1(0.0) > 0.0);
}

TEST_CASE("psi translates form a partition of unity", "[bumps]") {
    CHECK(partition_sum<3>(Vec<3>{0, 0, 0}) == Approx(1.0).margin(1e-8));
    Rng rng(6);
    for (int k = 0; k < 100; ++k) {
        double s = rng.uniform();
        double oracle = direct_lattice_sum_1d(s, 64);
        CHECK(std::abs(oracle - 1.0) < 1e-9);
        CHECK(std::abs(lattice_sum_1d(s, 64, default_eta()) - oracle) < 1e-9);
    }
    for (int k = 0; k < 100; ++k) {
        Vec<4> x{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
        CHECK(std::abs(partition_sum<4>(x) - 1.0) < 1e-8);
    }
    CHECK(lattice_tail_1d(64, default_eta()) < 1e-9);
}

TEST_CASE("lattice radius six leaves a visible tail", "[bumps]") {
    // The seed decays slowly (Gevrey-type); truncating at |j| <= 6 misses
    // mass far above 1e-8.
    double s = 0.37;
    double short_sum = lattice_sum_1d(s, 6, default_eta());
    CHECK(std::abs(short_sum - 1.0) > 1e-6);
}

TEST_CASE("factored lattice sum equals the brute-force multi-index sum", "[bumps]") {
    Vec<3> x{0.21, 0.77, 0.5};
    const int R = 10;
    double brute = 0.0;
    for (int a = -R; a <= R; ++a)
        for (int b = -R; b <= R; ++b)
            for (int c = -R; c <= R; ++c) brute += psi<3>(Vec<3>{x[0] - a, x[1] - b, x[2] - c});
    double factored = 1.0;
    for (int i = 0; i < 3; ++i) factored *= lattice_sum_1d(x[i], R, default_eta());
    CHECK(brute == Approx(factored).epsilon(1e-13));
}

TEST_CASE("eta seed validation and cache round trip", "[bumps]") {
    CHECK_THROWS(EtaTable(0.5));
    EtaTable t(0.25, 1.0 / 16, 8.0, 256);
    std::string path = "eta_cache_test.txt";
    t.save(path);
    EtaTable u(0.25, 1.0 / 16, 8.0, 64);
    u.load(path);
    for (double x : {0.0, 0.3, 1.7, 5.2}) CHECK(u.eta(x) == Approx(t.eta(x)).epsilon(1e-15));
    std::remove(path.c_str());
}

TEST_CASE("Harnack ratio for a single plate", "[bumps]") {
    Config c = make_config(2, 64);
    Plate<3> p = make_plate<3>(Vec<3>{0.5, 0.5, 0.5}, Vec<2>{1.0, 0.0}, c);
    Plate<3> cube = make_cube<3>(p.center, c.delta());
    double r = check_harnack<3>({p}, cube, 8);
    // A delta-cube is as thick as the plate, so phi varies by a bounded
    // factor across it; the bound below is the per-term Harnack constant.
    CHECK(r >= 1.0);
    CHECK(r <= harnack_term_bound<3>(p, c.delta(), 8));
    CHECK(check_harnack<3>({}, cube, 8) == 1.0);
}

TEST_CASE("Harnack ratio bound is uniform in N", "[bumps]") {
    // The per-term bound depends only on side/L ratios, which are fixed
    // for delta-cubes against delta-plates.
    double prev = -1.0;
    for (double N : {16.0, 64.0, 256.0}) {
        Config c = make_config(2, N);
        Plate<3> p = make_plate<3>(Vec<3>{0, 0, 0}, Vec<2>{0.0, 1.0}, c);
        double b = harnack_term_bound<3>(p, c.delta(), 8);
        if (prev > 0) CHECK(b <= prev * (1 + 1e-9));
        prev = b;
        Rng rng(static_cast<std::uint64_t>(N));
        for (int k = 0; k < 20; ++k) {
            Vec<3> ctr{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
            double r = check_harnack<3>({p}, make_cube<3>(ctr, c.delta()), 8, 16, k);
            CHECK(r <= b);
        }
    }
}

TEST_CASE("Harnack ratio over random separated families", "[bumps]") {
    // The ratio of sums is at most the largest per-term ratio, and every
    // plate of the family has the same shape.
    for (double N : {16.0, 64.0}) {
        Config c = make_config(2, N, 3);
        auto f = random_nfunction<3>(1000, FamilyMode::uniform, c);
        auto P = f.plates();
        double bound = harnack_term_bound<3>(P.front(), c.delta(), c.M);
        Rng rng(1);
        for (int k = 0; k < 20; ++k) {
            Vec<3> x{rng.uniform(), rng.uniform(), rng.uniform()};
            double r = check_harnack<3>(P, make_cube<3>(x, c.delta()), c.M, 64, k);
            CHECK(r >= 1.0);
            CHECK(r <= bound);
        }
    }
}
