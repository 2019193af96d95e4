#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace platekit {

struct Config {
    int d = 2;               // spatial dimension; ambient dimension is d + 1
    double N = 64;           // dyadic frequency scale, delta = 1 / N
    double eps0 = 0.1;
    double eps = 0.005;      // must stay below eps0^2
    double C0 = 1.0;         // plate length constant
    double C1 = 4.0;         // dual plate length constant
    int Csep = 4;            // separation budget
    double Ccomp = 2.0;      // comparability dilate
    int M = 8;               // decay order of phi
    int M0 = 2;              // tail exponent in the Schwartz relation bounds
    double C9 = 20.0;        // lambda >= delta^C9 in the scale-change pipeline
    int Kprime = 10;         // levels below delta^Kprime are discarded
    std::uint64_t seed = 1;

    double delta() const { return 1.0 / N; }

    // Largest dyadic number not exceeding delta^eps0.
    double t() const {
        double target = std::pow(delta(), eps0);
        return std::pow(2.0, std::floor(std::log2(target) + 1e-12));
    }

    void validate() const {
        if (d < 2) throw std::invalid_argument("d must be at least 2");
        if (N < 2) throw std::invalid_argument("N must be at least 2");
        double lg = std::log2(N);
        if (std::abs(lg - std::round(lg)) > 1e-12) throw std::invalid_argument("N must be a power of two");
        if (!(eps0 > 0 && eps0 < 1)) throw std::invalid_argument("eps0 must lie in (0,1)");
        if (!(eps > 0 && eps < eps0 * eps0)) throw std::invalid_argument("eps must lie in (0, eps0^2)");
        if (C0 <= 0 || C1 <= 0 || Ccomp <= 1) throw std::invalid_argument("plate constants must be positive, Ccomp > 1");
        if (Csep < 0) throw std::invalid_argument("Csep must be non-negative");
        if (M < 4 || M % 2 != 0) throw std::invalid_argument("M must be an even integer >= 4");
    }

    std::string canonical() const {
        std::ostringstream os;
        os.precision(17);
        os << "d=" << d << ";N=" << N << ";eps0=" << eps0 << ";eps=" << eps << ";C0=" << C0 << ";C1=" << C1
           << ";Csep=" << Csep << ";Ccomp=" << Ccomp << ";M=" << M << ";M0=" << M0 << ";C9=" << C9
           << ";Kprime=" << Kprime << ";seed=" << seed;
        return os.str();
    }
};

inline Config make_config(int d, double N, std::uint64_t seed = 1) {
    Config c;
    c.d = d;
    c.N = N;
    c.seed = seed;
    c.eps = c.eps0 * c.eps0 / 2;
    return c;
}

}  // namespace platekit
