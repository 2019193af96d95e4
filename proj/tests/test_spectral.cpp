#include <catch_amalgamated.hpp>

#include <cstdio>

#include "platekit/packets.hpp"
#include "platekit/spectral.hpp"

using namespace platekit;
using Catch::Approx;

namespace {

SampledField<3> random_grid_field(const GridSpec<3>& g, std::uint64_t seed) {
    Rng rng(seed);
    SampledField<3> f(g);
    for (auto& v : f.values) v = cplx(rng.normal(), rng.normal());
    return f;
}

// Straight evaluation of the transform convention at one frequency.
cplx direct_transform(const SampledField<3>& f, const Vec<3>& xi) {
    cplx acc = 0.0;
    for (std::size_t k = 0; k < f.values.size(); ++k) {
        double a = -2.0 * M_PI * dot<3>(f.grid.point(k), xi);
        acc += f.values[k] * cplx(std::cos(a), std::sin(a));
    }
    return acc * f.grid.cell_volume();
}

// Single-cap test field on a torus of plate tiles.
SampledField<3> single_cap_field(const Config& c, const Vec<2>& cap, std::uint64_t seed) {
    Plate<3> tile = cap_plate<3>(cap, c);
    tile.center = Vec<3>{0.1, 0.2, 0.3};
    auto g = plate_torus_grid<3>(tile, {4, 8, 16}, {32, 32, 128});
    ConeWindow<3> w;
    w.N = c.N;
    w.direction = cap;
    w.half_angle = 0.5 / std::sqrt(c.N);
    Rng rng(seed);
    return random_cone_field<3>(g, w, rng);
}

}  // namespace

TEST_CASE("transform convention matches a direct sum", "[spectral]") {
    GridSpec<3> g;
    g.res = {8, 8, 4};
    g.extent = {2.0, 1.0, 0.5};
    g.origin = {0.3, -0.2, 0.1};
    g.frame = plate_frame<3>(Vec<2>{0.6, 0.8});
    auto f = random_grid_field(g, 3);
    auto s = forward<3>(f);
    for (std::size_t k : {0ul, 5ul, 77ul, 200ul, 255ul}) {
        cplx want = direct_transform(f, g.frequency(k));
        CHECK(std::abs(s.values[k] - want) < 1e-12 * (1 + std::abs(want)));
    }
    auto back = inverse<3>(s);
    double err = 0.0;
    for (std::size_t k = 0; k < f.values.size(); ++k) err = std::max(err, std::abs(back.values[k] - f.values[k]));
    CHECK(err < 1e-12);
}

TEST_CASE("Parseval holds on the grid", "[spectral]") {
    auto g = cube_grid<3>(32, 1.7);
    auto f = random_grid_field(g, 4);
    auto s = forward<3>(f);
    CHECK(std::abs(s.l2_norm() - f.l2_norm()) < 1e-10 * f.l2_norm());
}

TEST_CASE("field export round trip", "[spectral]") {
    GridSpec<3> g;
    g.res = {4, 8, 2};
    g.origin = {1, 2, 3};
    g.frame = plate_frame<3>(Vec<2>{0.0, 1.0});
    auto f = random_grid_field(g, 9);
    write_field<3>("field_io_test.raw", f);
    auto h = read_field<3>("field_io_test.raw");
    CHECK(h.values == f.values);
    CHECK(h.grid.origin == f.grid.origin);
    CHECK(h.grid.res == f.grid.res);
    CHECK(same_frame<3>(h.grid.frame, f.grid.frame, 0.0));
    CHECK_THROWS(read_field<4>("field_io_test.raw"));
    std::remove("field_io_test.raw");
    std::remove("field_io_test.raw.hdr");
}

TEST_CASE("aliasing is detected", "[spectral]") {
    auto g = cube_grid<3>(16);
    SampledField<3> f(g);
    for (std::size_t k = 0; k < f.values.size(); ++k) {
        auto n = g.unravel(k);
        f.values[k] = (n[0] % 2 == 0) ? 1.0 : -1.0;  // the Nyquist frequency
    }
    CapBank<3> bank = CapBank<3>::caps_for(16);
    CHECK_THROWS_WITH(mic_norm<3>(f, 2.0, bank), Catch::Matchers::ContainsSubstring("aliasing"));
}

TEST_CASE("cap multipliers form a partition of unity", "[spectral]") {
    for (double N : {16.0, 64.0}) {
        auto bank = CapBank<3>::caps_for(N);
        Rng rng(static_cast<std::uint64_t>(N));
        std::vector<std::pair<int, double>> w;
        std::size_t worst = 0;
        for (int k = 0; k < 2000; ++k) {
            double a = rng.uniform(0, 2 * M_PI);
            Vec<3> xi{N * std::cos(a), N * std::sin(a), N};
            bank.weights(xi, w);
            double s = 0.0;
            for (auto& p : w) {
                CHECK(p.second >= 0.0);
                CHECK(p.second <= 1.0);
                s += p.second;
            }
            CHECK(s == Approx(1.0).epsilon(1e-14));
            worst = std::max(worst, w.size());
            // Against a scan of every cap.
            double brute = 0.0;
            for (std::size_t c = 0; c < bank.size(); ++c) brute += bank.bump(static_cast<int>(c), Vec<2>{std::cos(a), std::sin(a)});
            double mine = 0.0;
            for (auto& p : w) mine += bank.bump(p.first, Vec<2>{std::cos(a), std::sin(a)});
            CHECK(mine == Approx(brute).epsilon(1e-14));
        }
        CHECK(worst <= 3);
    }
    auto bank4 = CapBank<4>::caps_for(16);
    Rng rng(2);
    std::vector<std::pair<int, double>> w;
    for (int k = 0; k < 500; ++k) {
        Vec<3> v = normalized<3>(Vec<3>{rng.normal(), rng.normal(), rng.normal()});
        bank4.weights(Vec<4>{16 * v[0], 16 * v[1], 16 * v[2], 16}, w);
        double s = 0.0, brute = 0.0, mine = 0.0;
        for (auto& p : w) {
            s += p.second;
            mine += bank4.bump(p.first, v);
        }
        for (std::size_t c = 0; c < bank4.size(); ++c) brute += bank4.bump(static_cast<int>(c), v);
        CHECK(s == Approx(1.0).epsilon(1e-14));
        CHECK(mine == Approx(brute).epsilon(1e-14));
    }
}

TEST_CASE("cap pieces reconstruct the field", "[spectral]") {
    const double N = 16;
    auto g = cube_grid<3>(64);
    ConeWindow<3> w;
    w.N = N;
    Rng rng(8);
    auto f = random_cone_field<3>(g, w, rng);
    auto s = forward<3>(f);
    CHECK(energy_outside_cone<3>(s, N, 1.0) < 1e-12);
    auto bank = CapBank<3>::caps_for(N);
    auto split = split_by_caps<3>(s, bank);
    SampledField<3> sum(g);
    for (const auto& e : split.entries) {
        if (e.empty()) continue;
        auto piece = apply_cap<3>(s, e);
        for (std::size_t k = 0; k < sum.values.size(); ++k) sum.values[k] += piece.values[k];
    }
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < sum.values.size(); ++k) {
        num += std::norm(sum.values[k] - f.values[k]);
        den += std::norm(f.values[k]);
    }
    CHECK(std::sqrt(num / den) < 1e-8);
}

TEST_CASE("mic norms of cone fields", "[spectral]") {
    const double N = 16;
    auto g = cube_grid<3>(64);
    auto bank = CapBank<3>::caps_for(N);
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        ConeWindow<3> w;
        w.N = N;
        Rng rng(seed);
        auto f = random_cone_field<3>(g, w, rng);
        double l2 = f.l2_norm();
        double m2 = mic_norm<3>(f, 2.0, bank).value;
        CHECK(m2 * m2 / (l2 * l2) >= 0.25);
        CHECK(m2 * m2 / (l2 * l2) <= 4.0);
        double minf = mic_norm<3>(f, INFINITY, bank).value;
        // Trivial sup bound and interpolation between 2 and infinity.
        CHECK(f.sup_norm() <= 4.0 * std::sqrt(N) * minf);
        double m6 = mic_norm<3>(f, 6.0, bank).value;
        CHECK(m6 <= 4.0 * std::pow(l2, 2.0 / 6) * std::pow(minf, 1 - 2.0 / 6));
    }
    CHECK_THROWS(mic_norm<3>(SampledField<3>(g), 1.0, bank));
}

TEST_CASE("single-cap field has mic norm equal to its norm", "[spectral]") {
    const double N = 16;
    auto bank = CapBank<3>::caps_for(N);
    auto g = cube_grid<3>(64);
    ConeWindow<3> w;
    w.N = N;
    w.direction = bank.cap(3);
    // Inside the core of cap 3: neighbours' bumps vanish there.
    w.half_angle = 0.5 * (bank.separation() - bank.bump_radius());
    Rng rng(5);
    auto f = random_cone_field<3>(g, w, rng);
    for (double p : {2.0, 4.0, static_cast<double>(INFINITY)}) CHECK(mic_norm<3>(f, p, bank).value == Approx(f.lp_norm(p)).epsilon(1e-10));
    auto c3 = cap_convolve<3>(f, bank, 3);
    auto c5 = cap_convolve<3>(f, bank, 5);
    CHECK(c5.sup_norm() < 1e-12 * f.sup_norm());
    double err = 0.0;
    for (std::size_t k = 0; k < f.values.size(); ++k) err = std::max(err, std::abs(c3.values[k] - f.values[k]));
    CHECK(err < 1e-12 * f.sup_norm());
}

TEST_CASE("decomposition into N-function pieces", "[spectral]") {
    Config c = make_config(2, 16);
    Vec<2> cap{std::cos(0.3), std::sin(0.3)};
    auto f = single_cap_field(c, cap, 11);
    DecomposeOptions<3> opt;
    opt.keep_pieces = true;
    auto dec = nfunction_decompose<3>(f, cap, c, opt);
    CHECK(dec.tiles == std::array<int, 3>{4, 8, 16});
    CHECK(dec.identity_error < 1e-8);
    CHECK(dec.weight_max <= 1.0 + 1e-9);
    // sum_j psi_j^2 >= (min_s sum_j psi1(s - j)^2)^3, about 0.27^3.
    CHECK(dec.weight_min > 0.015);
    CHECK(dec.support_leak <= 1e-8);
    CHECK(dec.effective_C1 <= c.C1);
    CHECK(dec.packet_constant < 1e3);
    // Pieces sum back to (sum psi_j^2) f level by level.
    SampledField<3> sum(f.grid);
    for (const auto& l : dec.levels)
        for (std::size_t k = 0; k < sum.values.size(); ++k) sum.values[k] += l.lambda * l.piece.values[k];
    // Direct oracle for a few tile norms: explicit periodic images.
    const auto& g = f.grid;
    for (std::size_t j : {0ul, 37ul, 300ul, 511ul}) {
        auto jj = dec.tile_index(j);
        double best = 0.0;
        for (std::size_t k = 0; k < f.values.size(); ++k) {
            auto n = g.unravel(k);
            double w = 1.0;
            for (int i = 0; i < 3; ++i) {
                double s = n[i] * g.spacing(i) / dec.tile.lengths[i] - jj[i];
                double acc = 0.0;
                for (int m = -40; m <= 40; ++m) acc += psi1(s - m * dec.tiles[i]);
                w *= acc;
            }
            best = std::max(best, w * std::abs(f.values[k]));
        }
        CHECK(dec.tile_norms[j] == Approx(best).epsilon(1e-9));
    }
    // Top level against the sup of the field: lambda_top <= ||psi_j f|| < 2 lambda_top.
    double top = *std::max_element(dec.tile_norms.begin(), dec.tile_norms.end());
    CHECK(dec.top_lambda() <= top);
    CHECK(top < 2 * dec.top_lambda());
}

TEST_CASE("decomposition of a single packet", "[spectral]") {
    Config c = make_config(2, 16);
    Vec<2> cap{1.0, 0.0};
    Plate<3> tile = cap_plate<3>(cap, c);
    auto g = plate_torus_grid<3>(tile, {4, 8, 16}, {32, 32, 128});
    auto w = make_packet<3>(tile, 1.0, c);
    SampledField<3> f(g);
    // Periodisation of the packet: the envelope is a product over axes and
    // the carrier is periodic on the torus, so the image sum factors.
    std::array<std::vector<double>, 3> env;
    for (int i = 0; i < 3; ++i) {
        int T = static_cast<int>(std::lround(g.extent[i] / tile.lengths[i]));
        for (int n = 0; n < g.res[i]; ++n) {
            double s = n * g.spacing(i) / tile.lengths[i], acc = 0.0;
            for (int m = -400; m <= 400; ++m) acc += w.profile.g(s - m * T);
            env[i].push_back(acc);
        }
    }
    for (std::size_t k = 0; k < f.values.size(); ++k) {
        auto n = g.unravel(k);
        double ph = 2 * M_PI * n[2] * g.spacing(2) / tile.lengths[2];
        f.values[k] = env[0][n[0]] * env[1][n[1]] * env[2][n[2]] * cplx(std::cos(ph), std::sin(ph));
    }
    // The spectral construction gives the same periodised packet.
    auto sp = sampled_packet<3>(g, w);
    double err = 0.0, mx = 0.0;
    for (std::size_t k = 0; k < f.values.size(); ++k) {
        err = std::max(err, std::abs(sp.values[k] - f.values[k]));
        mx = std::max(mx, std::abs(f.values[k]));
    }
    CHECK(err < 1e-9 * mx);
    auto dec = nfunction_decompose<3>(f, cap, c);
    double psimax = std::pow(psi1(0.0), 3);
    CHECK(dec.top_lambda() <= psimax);
    CHECK(dec.top_lambda() > psimax / 2);
    CHECK(dec.levels.front().tiles.size() <= 27);
    CHECK(dec.identity_error < 1e-8);

    SampledField<3> zero(g);
    auto none = nfunction_decompose<3>(zero, cap, c);
    CHECK(none.levels.empty());
}

TEST_CASE("decomposition rejects fields spread over several caps", "[spectral]") {
    Config c = make_config(2, 16);
    Vec<2> cap{1.0, 0.0};
    Plate<3> tile = cap_plate<3>(cap, c);
    auto g = plate_torus_grid<3>(tile, {4, 8, 16}, {32, 32, 128});
    ConeWindow<3> w;
    w.N = 16;
    w.direction = cap;
    w.half_angle = 1.2;
    Rng rng(1);
    auto f = random_cone_field<3>(g, w, rng);
    CHECK_THROWS_WITH(nfunction_decompose<3>(f, cap, c), Catch::Matchers::ContainsSubstring("cap_convolve"));
    GridSpec<3> cube = cube_grid<3>(32);
    CHECK_THROWS(nfunction_decompose<3>(SampledField<3>(cube), cap, c));
}

TEST_CASE("weak-type predicate", "[spectral]") {
    const double N = 16;
    auto g = cube_grid<3>(64);
    auto bank = CapBank<3>::caps_for(N);
    ConeWindow<3> w;
    w.N = N;
    Rng rng(2);
    auto f = random_cone_field<3>(g, w, rng);
    double minf = mic_norm<3>(f, INFINITY, bank).value;
    for (auto& v : f.values) v /= minf;
    auto above = check_P_predicate<3>(f, 6.0, 0.0, 2 * f.sup_norm(), 1.0 / N, 1.0);
    CHECK(above.lhs == 0.0);
    CHECK_THROWS(check_P_predicate<3>(f, 6.0, 0.0, 0.5, 1.0 / N, 3.0));
    for (double lam : {0.05, 0.1, 0.2}) {
        auto r = check_P_predicate<3>(f, 4.0, 0.0, lam, 1.0 / N, 1.0);
        if (r.tchebyshev_regime) CHECK(r.ratio <= 1.0);
    }
    double st = strong_type_sum<3>(f, 2.0, 1e-3);
    double l2 = f.l2_norm();
    CHECK(st <= 2.0 * l2 * l2);
}

TEST_CASE("sparse N-function sampling matches the packet-by-packet sum", "[spectral]") {
    Config c = make_config(2, 16);
    auto f = random_nfunction<3>(12, FamilyMode::uniform, c);
    for (const auto& g : {cube_grid<3>(64), plate_torus_grid<3>(cap_plate<3>(Vec<2>{0.6, 0.8}, c), {2, 4, 16}, {32, 32, 128})}) {
        auto fast = sampled_nfunction<3>(g, f);
        SampledField<3> slow(g);
        for (const auto& w : f.packets) {
            auto s = sampled_packet<3>(g, w);
            for (std::size_t k = 0; k < s.values.size(); ++k) slow.values[k] += s.values[k];
        }
        double err = 0.0;
        for (std::size_t k = 0; k < slow.values.size(); ++k) err = std::max(err, std::abs(fast.values[k] - slow.values[k]));
        CHECK(err <= 1e-12 * slow.sup_norm());
        CHECK(slow.sup_norm() > 0.0);
    }
}
