#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "geometry.hpp"

namespace platekit {

// phi(u) = (1 + |u|^2)^(-M/2).
template <int D>
inline double phi(const Vec<D>& u, int M) {
    return std::pow(1.0 + dot<D>(u, u), -0.5 * M);
}

// Coordinates of x in the unit cube model of the box: a_R^{-1}(x).
template <int D>
inline Vec<D> unit_coords(const Plate<D>& R, const Vec<D>& x) {
    Vec<D> d = x - R.center;
    Vec<D> u;
    for (int i = 0; i < D; ++i) u[i] = dot<D>(R.axes[i], d) / R.lengths[i];
    return u;
}

template <int D>
inline double eval_phi_R(const Plate<D>& R, const Vec<D>& x, int M) {
    return phi<D>(unit_coords<D>(R, x), M);
}

template <int D>
inline double eval_Phi(const std::vector<Plate<D>>& family, const Vec<D>& x, int M) {
    double s = 0.0;
    for (const auto& R : family) s += eval_phi_R<D>(R, x, M);
    return s;
}

// One-dimensional seed eta of the partition of unity: its Fourier
// transform is c exp(-1/(1-(xi/r)^2)) on |xi| < r, normalised so that
// the integral of eta^2 is 1. Stored on a grid with derivatives and
// evaluated by cubic Hermite interpolation; zero beyond the table range.
class EtaTable {
public:
    explicit EtaTable(double radius = 0.25, double step = 1.0 / 64, double range = 64.0, int nodes = 1024)
        : radius_(radius), step_(step), range_(range) {
        if (!(radius > 0.0 && radius < 0.5))
            throw std::invalid_argument("eta: Fourier support radius must lie in (0, 1/2)");
        build(nodes);
    }

    double radius() const { return radius_; }
    double step() const { return step_; }
    double range() const { return range_; }
    const std::vector<double>& values() const { return val_; }

    double eta(double x) const {
        double ax = std::abs(x);
        if (ax >= range_) return 0.0;
        double q = ax / step_;
        std::size_t k = static_cast<std::size_t>(q);
        if (k + 1 >= val_.size()) return 0.0;
        double t = q - static_cast<double>(k);
        double t2 = t * t, t3 = t2 * t;
        double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t, h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
        // eta is even: the derivative table is stored for x >= 0.
        return h00 * val_[k] + h10 * der_[k] * step_ + h01 * val_[k + 1] + h11 * der_[k + 1] * step_;
    }

    // Direct quadrature of the inverse Fourier integral (slow; used to
    // build the table and as an independent reference).
    double eta_direct(double x) const {
        double s = 0.0;
        for (std::size_t i = 0; i < xi_.size(); ++i) s += hat_[i] * std::cos(2.0 * M_PI * x * xi_[i]);
        return 2.0 * s * w_;
    }

    double fourier(double xi) const {
        double a = std::abs(xi) / radius_;
        if (a >= 1.0) return 0.0;
        return norm_ * std::exp(-1.0 / (1.0 - a * a));
    }

    void save(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot write eta cache: " + path);
        os << std::setprecision(17);
        os << "# eta radius " << radius_ << " step " << step_ << " range " << range_ << "\n";
        for (std::size_t k = 0; k < val_.size(); ++k) os << k * step_ << ' ' << val_[k] << ' ' << der_[k] << '\n';
    }

    // Replaces the table values by a cache written by save().
    void load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot read eta cache: " + path);
        std::string line;
        std::vector<double> v, d;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream is(line);
            double x, a, b;
            if (!(is >> x >> a >> b)) throw std::runtime_error("malformed eta cache line");
            v.push_back(a);
            d.push_back(b);
        }
        if (v.size() != val_.size()) throw std::runtime_error("eta cache has the wrong table size");
        val_ = std::move(v);
        der_ = std::move(d);
    }

private:
    void build(int nodes) {
        xi_.resize(nodes);
        hat_.resize(nodes);
        w_ = radius_ / nodes;
        double energy = 0.0;
        for (int i = 0; i < nodes; ++i) {
            xi_[i] = (i + 0.5) * w_;
            double a = xi_[i] / radius_;
            hat_[i] = std::exp(-1.0 / (1.0 - a * a));
            energy += hat_[i] * hat_[i];
        }
        energy *= 2.0 * w_;
        norm_ = 1.0 / std::sqrt(energy);
        for (auto& h : hat_) h *= norm_;
        std::size_t count = static_cast<std::size_t>(std::llround(range_ / step_)) + 1;
        val_.resize(count);
        der_.resize(count);
        for (std::size_t k = 0; k < count; ++k) {
            double x = k * step_;
            double s = 0.0, ds = 0.0;
            for (int i = 0; i < nodes; ++i) {
                double arg = 2.0 * M_PI * x * xi_[i];
                s += hat_[i] * std::cos(arg);
                ds -= hat_[i] * 2.0 * M_PI * xi_[i] * std::sin(arg);
            }
            val_[k] = 2.0 * s * w_;
            der_[k] = 2.0 * ds * w_;
        }
    }

    double radius_, step_, range_;
    double w_ = 0.0, norm_ = 1.0;
    std::vector<double> xi_, hat_, val_, der_;
};

inline const EtaTable& default_eta() {
    static const EtaTable table;
    return table;
}

// psi in one variable: eta^2. Its integer translates sum to one.
inline double psi1(double s) {
    double e = default_eta().eta(s);
    return e * e;
}

template <int D>
inline double psi(const Vec<D>& u) {
    double v = 1.0;
    for (int i = 0; i < D; ++i) {
        v *= psi1(u[i]);
        if (v == 0.0) break;
    }
    return v;
}

template <int D>
inline double eval_psi_R(const Plate<D>& R, const Vec<D>& x) {
    return psi<D>(unit_coords<D>(R, x));
}

// Sum over |j| <= radius of psi1(s - j).
inline double lattice_sum_1d(double s, int radius, const EtaTable& table) {
    double acc = 0.0;
    for (int j = -radius; j <= radius; ++j) {
        double e = table.eta(s - j);
        acc += e * e;
    }
    return acc;
}

// Sum over the lattice Z^D (cube of radius `radius`) of psi(x - j); psi
// is a tensor product, so the sum factors over coordinates.
template <int D>
inline double partition_sum(const Vec<D>& x, int radius = 64) {
    double v = 1.0;
    for (int i = 0; i < D; ++i) v *= lattice_sum_1d(x[i], radius, default_eta());
    return v;
}

// Bound on the part of the 1-D lattice sum lying outside |j| <= radius,
// from the tabulated values (the table is zero beyond its range).
inline double lattice_tail_1d(int radius, const EtaTable& table) {
    double tail = 0.0;
    const auto& v = table.values();
    double step = table.step();
    for (int j = radius; j < static_cast<int>(table.range()) + 1; ++j) {
        double m = 0.0;
        for (std::size_t k = static_cast<std::size_t>(j / step);
             k < v.size() && k * step <= j + 1.0; ++k)
            m = std::max(m, v[k] * v[k]);
        tail += 2.0 * m;
    }
    return tail;
}

// Ratio max/min of Phi over a sample of the cube: a 5^D lattice including
// the corners plus `random_points` uniform points.
template <int D>
double check_harnack(const std::vector<Plate<D>>& family, const Plate<D>& cube, int M, int random_points = 64,
                     std::uint64_t seed = 1) {
    if (family.empty()) return 1.0;
    double mx = 0.0, mn = std::numeric_limits<double>::infinity();
    auto visit = [&](const Vec<D>& u) {
        Vec<D> x = cube.global(u);
        double v = eval_Phi<D>(family, x, M);
        mx = std::max(mx, v);
        mn = std::min(mn, v);
    };
    int total = 1;
    for (int i = 0; i < D; ++i) total *= 5;
    for (int code = 0; code < total; ++code) {
        Vec<D> u;
        int c = code;
        for (int i = 0; i < D; ++i) {
            u[i] = (c % 5 / 4.0 - 0.5) * cube.lengths[i];
            c /= 5;
        }
        visit(u);
    }
    Rng rng(seed);
    for (int k = 0; k < random_points; ++k) {
        Vec<D> u;
        for (int i = 0; i < D; ++i) u[i] = (rng.uniform() - 0.5) * cube.lengths[i];
        visit(u);
    }
    return mx / mn;
}

// Bound on max/min of a single phi_R over a cube of the given side:
// 1 + |u + h|^2 <= (1 + |u|^2)(1 + |h|)^2 gives (1 + |h|)^M, with |h| the
// diameter of the cube in the unit coordinates of R.
template <int D>
double harnack_term_bound(const Plate<D>& R, double side, int M) {
    double h2 = 0.0;
    for (int i = 0; i < D; ++i) h2 += (side / R.lengths[i]) * (side / R.lengths[i]) * D;
    return std::pow(1.0 + std::sqrt(h2), static_cast<double>(M));
}

}  // namespace platekit
