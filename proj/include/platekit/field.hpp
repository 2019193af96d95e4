#pragma once

#include <fftw3.h>

#include <bit>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vec.hpp"

namespace platekit {

using cplx = std::complex<double>;

// Periodic sampling grid on a box spanned by the rows of `frame`. Point n
// sits at frame coordinates origin + n * spacing; frequency index k (in
// FFT order, k in [-res/2, res/2)) sits at frame frequency k / extent.
template <int D>
struct GridSpec {
    Frame<D> frame = identity_frame<D>();
    Vec<D> origin{};
    Vec<D> extent = filled<D>(1.0);
    std::array<int, D> res{};

    std::size_t size() const {
        std::size_t n = 1;
        for (int i = 0; i < D; ++i) n *= static_cast<std::size_t>(res[i]);
        return n;
    }
    double spacing(int i) const { return extent[i] / res[i]; }
    double cell_volume() const {
        double v = 1.0;
        for (int i = 0; i < D; ++i) v *= spacing(i);
        return v;
    }
    // Volume element of the dual grid.
    double frequency_cell() const {
        double v = 1.0;
        for (int i = 0; i < D; ++i) v /= extent[i];
        return v;
    }
    double volume() const {
        double v = 1.0;
        for (int i = 0; i < D; ++i) v *= extent[i];
        return v;
    }

    std::array<int, D> unravel(std::size_t lin) const {
        std::array<int, D> n;
        for (int i = D - 1; i >= 0; --i) {
            n[i] = static_cast<int>(lin % static_cast<std::size_t>(res[i]));
            lin /= static_cast<std::size_t>(res[i]);
        }
        return n;
    }
    std::size_t ravel(const std::array<int, D>& n) const {
        std::size_t lin = 0;
        for (int i = 0; i < D; ++i) lin = lin * static_cast<std::size_t>(res[i]) + static_cast<std::size_t>(n[i]);
        return lin;
    }

    Vec<D> frame_point(const std::array<int, D>& n) const {
        Vec<D> u;
        for (int i = 0; i < D; ++i) u[i] = origin[i] + n[i] * spacing(i);
        return u;
    }
    Vec<D> point(std::size_t lin) const { return from_frame<D>(frame, frame_point(unravel(lin))); }

    static int signed_index(int n, int r) { return n < r / 2 ? n : n - r; }

    Vec<D> frame_frequency(const std::array<int, D>& n) const {
        Vec<D> eta;
        for (int i = 0; i < D; ++i) eta[i] = signed_index(n[i], res[i]) / extent[i];
        return eta;
    }
    Vec<D> frequency(std::size_t lin) const { return from_frame<D>(frame, frame_frequency(unravel(lin))); }

    void validate() const {
        if (orthonormality_error<D>(frame) > 1e-10) throw std::invalid_argument("grid frame is not orthonormal");
        for (int i = 0; i < D; ++i) {
            if (res[i] < 2 || (res[i] & (res[i] - 1)) != 0)
                throw std::invalid_argument("grid resolution must be a power of two");
            if (!(extent[i] > 0.0)) throw std::invalid_argument("grid extent must be positive");
        }
    }
};

template <int D>
GridSpec<D> cube_grid(int res, double side = 1.0) {
    GridSpec<D> g;
    g.extent = filled<D>(side);
    g.res.fill(res);
    return g;
}

template <int D>
struct SampledField {
    GridSpec<D> grid;
    std::vector<cplx> values;

    SampledField() = default;
    explicit SampledField(const GridSpec<D>& g) : grid(g), values(g.size(), cplx(0.0)) { g.validate(); }

    double l2_norm() const {
        double s = 0.0;
        for (const auto& v : values) s += std::norm(v);
        return std::sqrt(grid.cell_volume() * s);
    }
    double lp_norm(double p) const {
        if (std::isinf(p)) return sup_norm();
        double s = 0.0;
        for (const auto& v : values) s += std::pow(std::abs(v), p);
        return std::pow(grid.cell_volume() * s, 1.0 / p);
    }
    double lp_power(double p) const {
        double s = 0.0;
        for (const auto& v : values) s += std::pow(std::abs(v), p);
        return grid.cell_volume() * s;
    }
    double sup_norm() const {
        double m = 0.0;
        for (const auto& v : values) m = std::max(m, std::abs(v));
        return m;
    }
};

// Transform values in FFT order on the dual grid of `grid`.
template <int D>
struct Spectrum {
    GridSpec<D> grid;
    std::vector<cplx> values;

    double l2_norm() const {
        double s = 0.0;
        for (const auto& v : values) s += std::norm(v);
        return std::sqrt(grid.frequency_cell() * s);
    }
    double energy() const {
        double s = 0.0;
        for (const auto& v : values) s += std::norm(v);
        return grid.frequency_cell() * s;
    }
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
    static std::mutex mu;
    return mu;
}

// In-place D-dimensional transform; sign -1 forward, +1 backward (unnormalised).
template <int D>
void fft_inplace(std::vector<cplx>& data, const std::array<int, D>& res, int sign) {
    static_assert(sizeof(cplx) == sizeof(fftw_complex));
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
        plan = fftw_plan_dft(D, res.data(), ptr, ptr, sign, FFTW_ESTIMATE);
    }
    if (!plan) throw std::runtime_error("fftw: plan creation failed");
    fftw_execute(plan);
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
}

template <int D>
cplx origin_phase(const GridSpec<D>& g, const std::array<int, D>& n, double sign) {
    double a = 0.0;
    for (int i = 0; i < D; ++i) a += g.origin[i] * GridSpec<D>::signed_index(n[i], g.res[i]) / g.extent[i];
    return cplx(std::cos(2.0 * M_PI * a), sign * std::sin(2.0 * M_PI * a));
}

// exp(sign 2 pi i origin . xi) over the whole dual grid, built from
// per-axis tables and applied in place.
template <int D>
void apply_origin_phase(const GridSpec<D>& g, std::vector<cplx>& v, double sign) {
    std::array<std::vector<cplx>, D> ax;
    for (int i = 0; i < D; ++i) {
        ax[i].resize(static_cast<std::size_t>(g.res[i]));
        for (int n = 0; n < g.res[i]; ++n) {
            double a = 2.0 * M_PI * g.origin[i] * GridSpec<D>::signed_index(n, g.res[i]) / g.extent[i];
            ax[i][static_cast<std::size_t>(n)] = cplx(std::cos(a), sign * std::sin(a));
        }
    }
    // Row-major with the last axis fastest: accumulate the phase of the
    // leading axes once per row.
    const std::size_t inner = static_cast<std::size_t>(g.res[D - 1]);
    const std::size_t rows = v.size() / inner;
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t rem = r;
        cplx lead(1.0, 0.0);
        for (int i = D - 2; i >= 0; --i) {
            lead *= ax[i][rem % static_cast<std::size_t>(g.res[i])];
            rem /= static_cast<std::size_t>(g.res[i]);
        }
        cplx* row = v.data() + r * inner;
        for (std::size_t n = 0; n < inner; ++n) row[n] *= lead * ax[D - 1][n];
    }
}

template <int D>
bool zero_origin(const GridSpec<D>& g) {
    for (int i = 0; i < D; ++i)
        if (g.origin[i] != 0.0) return false;
    return true;
}

}  // namespace detail

// fhat(xi) = cellVolume * sum_x f(x) exp(-2 pi i x . xi) on the dual grid.
template <int D>
Spectrum<D> forward(const SampledField<D>& f) {
    Spectrum<D> s{f.grid, f.values};
    detail::fft_inplace<D>(s.values, f.grid.res, FFTW_FORWARD);
    const double cv = f.grid.cell_volume();
    const bool plain = detail::zero_origin<D>(f.grid);
    for (auto& v : s.values) v *= cv;
    if (!plain) detail::apply_origin_phase<D>(f.grid, s.values, -1.0);
    return s;
}

template <int D>
SampledField<D> inverse(const Spectrum<D>& s) {
    SampledField<D> f;
    f.grid = s.grid;
    f.values = s.values;
    const bool plain = detail::zero_origin<D>(s.grid);
    if (!plain) detail::apply_origin_phase<D>(s.grid, f.values, 1.0);
    detail::fft_inplace<D>(f.values, s.grid.res, FFTW_BACKWARD);
    const double scale = 1.0 / s.grid.volume();
    for (auto& v : f.values) v *= scale;
    return f;
}

// Errors if the spectrum carries energy within `cells` grid cells of the
// Nyquist boundary on any axis (a sign that the field is under-resolved).
template <int D>
double nyquist_energy_fraction(const Spectrum<D>& s, int cells = 2) {
    double edge = 0.0, total = 0.0;
    for (std::size_t k = 0; k < s.values.size(); ++k) {
        double e = std::norm(s.values[k]);
        total += e;
        auto n = s.grid.unravel(k);
        for (int i = 0; i < D; ++i) {
            int m = GridSpec<D>::signed_index(n[i], s.grid.res[i]);
            if (std::abs(m) >= s.grid.res[i] / 2 - cells) {
                edge += e;
                break;
            }
        }
    }
    return total > 0.0 ? edge / total : 0.0;
}

template <int D>
void check_aliasing(const Spectrum<D>& s, double tolerance = 1e-10) {
    double frac = nyquist_energy_fraction<D>(s);
    if (frac > tolerance) {
        std::ostringstream os;
        os << "aliasing: " << frac << " of the spectral energy lies within 2 cells of the Nyquist boundary";
        throw std::runtime_error(os.str());
    }
}

// ---------------------------------------------------------------------
// Raw export: little-endian float64 (re, im) pairs in row-major order, with
// a text sidecar at path + ".hdr".

namespace detail {

inline void write_le_double(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

inline double read_le_double(std::istream& is) {
    std::uint64_t bits;
    is.read(reinterpret_cast<char*>(&bits), sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace detail

inline constexpr const char* kConventionTag = "fhat=cellvol*sum(f*exp(-2pi*i*x.xi))";

template <int D>
void write_field(const std::string& path, const SampledField<D>& f) {
    std::ofstream raw(path, std::ios::binary);
    if (!raw) throw std::runtime_error("cannot write field: " + path);
    for (const auto& v : f.values) {
        detail::write_le_double(raw, v.real());
        detail::write_le_double(raw, v.imag());
    }
    std::ofstream hdr(path + ".hdr");
    if (!hdr) throw std::runtime_error("cannot write field header: " + path + ".hdr");
    hdr << std::setprecision(17);
    hdr << "dim " << D << "\n";
    hdr << "dtype float64-le-complex\n";
    hdr << "convention " << kConventionTag << "\n";
    hdr << "res";
    for (int i = 0; i < D; ++i) hdr << ' ' << f.grid.res[i];
    hdr << "\norigin";
    for (int i = 0; i < D; ++i) hdr << ' ' << f.grid.origin[i];
    hdr << "\nextent";
    for (int i = 0; i < D; ++i) hdr << ' ' << f.grid.extent[i];
    hdr << "\n";
    for (int r = 0; r < D; ++r) {
        hdr << "axis";
        for (int i = 0; i < D; ++i) hdr << ' ' << f.grid.frame[r][i];
        hdr << "\n";
    }
}

template <int D>
SampledField<D> read_field(const std::string& path) {
    std::ifstream hdr(path + ".hdr");
    if (!hdr) throw std::runtime_error("cannot read field header: " + path + ".hdr");
    GridSpec<D> g;
    std::string line;
    int axis = 0;
    while (std::getline(hdr, line)) {
        std::istringstream is(line);
        std::string key;
        is >> key;
        if (key == "dim") {
            int d;
            is >> d;
            if (d != D) throw std::runtime_error("field header: dimension mismatch");
        } else if (key == "convention") {
            std::string tag;
            is >> tag;
            if (tag != kConventionTag) throw std::runtime_error("field header: unknown transform convention");
        } else if (key == "res") {
            for (int i = 0; i < D; ++i) is >> g.res[i];
        } else if (key == "origin") {
            for (int i = 0; i < D; ++i) is >> g.origin[i];
        } else if (key == "extent") {
            for (int i = 0; i < D; ++i) is >> g.extent[i];
        } else if (key == "axis") {
            if (axis >= D) throw std::runtime_error("field header: too many axes");
            for (int i = 0; i < D; ++i) is >> g.frame[axis][i];
            ++axis;
        }
        if (is.fail()) throw std::runtime_error("field header: malformed line: " + line);
    }
    g.validate();
    SampledField<D> f(g);
    std::ifstream raw(path, std::ios::binary);
    if (!raw) throw std::runtime_error("cannot read field: " + path);
    for (auto& v : f.values) {
        double re = detail::read_le_double(raw);
        double im = detail::read_le_double(raw);
        v = cplx(re, im);
    }
    if (!raw) throw std::runtime_error("field file is shorter than its header declares");
    return f;
}

}  // namespace platekit
