#include "cellpca/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cellpca/errors.hpp"

namespace cellpca {

RhoKernel RhoKernel::tanh_default() {
    RhoKernel k;
    k.kind = Kind::Tanh;
    k.d = k.b * k.b / 2.0 + (k.q1 / k.q2) * std::log(std::cosh(k.q2 * (k.c - k.b)));
    return k;
}

RhoKernel RhoKernel::biweight(double a) {
    if (a <= 0) throw ValidationError("biweight constant must be positive");
    RhoKernel k;
    k.kind = Kind::Biweight;
    k.a = a;
    return k;
}

RhoKernel RhoKernel::quadratic() {
    RhoKernel k;
    k.kind = Kind::Quadratic;
    return k;
}

double rho(const RhoKernel& k, double z) {
    double az = std::abs(z);
    switch (k.kind) {
        case RhoKernel::Kind::Tanh:
            if (az <= k.b) return 0.5 * z * z;
            if (az >= k.c) return k.d;
            return k.d - (k.q1 / k.q2) * std::log(std::cosh(k.q2 * (k.c - az)));
        case RhoKernel::Kind::Biweight: {
            if (az > k.a) return 1.0;
            double t = 1.0 - (z * z) / (k.a * k.a);
            return 1.0 - t * t * t;
        }
        case RhoKernel::Kind::Quadratic:
            return z * z;
    }
    return 0.0;
}

double psi(const RhoKernel& k, double z) {
    double az = std::abs(z);
    double sign = (z > 0) - (z < 0);
    switch (k.kind) {
        case RhoKernel::Kind::Tanh:
            if (az <= k.b) return z;
            if (az >= k.c) return 0.0;
            return k.q1 * std::tanh(k.q2 * (k.c - az)) * sign;
        case RhoKernel::Kind::Biweight: {
            if (az > k.a) return 0.0;
            double t = 1.0 - (z * z) / (k.a * k.a);
            return 6.0 * z * t * t / (k.a * k.a);
        }
        case RhoKernel::Kind::Quadratic:
            return 2.0 * z;
    }
    return 0.0;
}

double weight(const RhoKernel& k, double z) {
    switch (k.kind) {
        case RhoKernel::Kind::Tanh:
            if (std::abs(z) <= k.b) return 1.0;  // includes w(0) = 1
            return psi(k, z) / z;
        case RhoKernel::Kind::Biweight: {
            if (z == 0.0) return 6.0 / (k.a * k.a);
            return psi(k, z) / z;
        }
        case RhoKernel::Kind::Quadratic:
            return 1.0;
    }
    return 0.0;
}

namespace {

double mscale_lhs(const std::vector<double>& z, const RhoKernel& k, double sigma) {
    double sum = 0.0;
    for (double v : z) sum += rho(k, v / sigma);
    return sum / static_cast<double>(z.size());
}

}  // namespace

double mscale(const std::vector<double>& samples, const RhoKernel& kernel, double delta) {
    std::vector<double> z;
    z.reserve(samples.size());
    for (double v : samples)
        if (std::isfinite(v)) z.push_back(v);
    if (z.empty()) throw ValidationError("mscale needs at least one finite sample");

    std::size_t nonzero = 0;
    double min_nz = std::numeric_limits<double>::infinity();
    double max_abs = 0.0;
    for (double v : z) {
        double av = std::abs(v);
        if (av > 0) {
            ++nonzero;
            min_nz = std::min(min_nz, av);
            max_abs = std::max(max_abs, av);
        }
    }
    double n = static_cast<double>(z.size());
    if (static_cast<double>(nonzero) <= delta * n)
        throw AllZeroScale("mscale equation has no positive root: too many exact zeros");

    // The left-hand side is monotone nonincreasing in sigma, so a bracketed
    // bisection is safe even across the biweight plateau.
    double lo = min_nz / kernel.a * 1e-3;
    double hi = max_abs * 1e3;
    for (int it = 0; it < 2000; ++it) {
        double mid = 0.5 * (lo + hi);
        if (mscale_lhs(z, kernel, mid) > delta)
            lo = mid;
        else
            hi = mid;
        if ((hi - lo) <= 1e-10 * hi) break;
    }
    return 0.5 * (lo + hi);
}

MScaleResult mscale_or_floor(const std::vector<double>& samples, const RhoKernel& kernel,
                             double delta) {
    try {
        return {mscale(samples, kernel, delta), false};
    } catch (const AllZeroScale&) {
        double max_abs = 0.0;
        for (double v : samples)
            if (std::isfinite(v)) max_abs = std::max(max_abs, std::abs(v));
        if (max_abs == 0.0) max_abs = 1.0;
        return {1e-12 * max_abs, true};
    }
}

}  // namespace cellpca
